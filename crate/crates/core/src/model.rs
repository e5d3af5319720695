use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adaptive::LossKind;
use crate::data::{FitDomain, Scaler};
use crate::deeponet::{DeepOnet, DeepOnetConfig, QueryGrid, TrunkScaling};
use crate::donlstm::{set_trainable, DonLstm, LstmNet, Stage, TrainableBlocks};
use crate::error::{Error, Result};
use crate::metrics::Predictor;
use crate::nn::{Objective, ParameterSet, Tensor};
use crate::pde::TrajectorySet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    DeepOnet(DeepOnet),
    DonLstm(DonLstm),
    Lstm(LstmNet),
}

impl Architecture {
    /// Predictions as `[batch x n_queries]`, t-major for product grids.
    pub fn forward(&self, params: &[f64], u0: &Tensor, grid: &QueryGrid) -> Result<Tensor> {
        let out = match self {
            Architecture::DeepOnet(m) => return m.forward(params, u0, grid),
            Architecture::DonLstm(m) => m.forward(params, u0, grid)?,
            Architecture::Lstm(m) => m.forward(params, u0, grid)?,
        };
        let batch = out.rows();
        let cols = out.cols();
        out.reshape(vec![batch, cols])
    }

    /// Loss (from `loss`, which maps predictions to a value and its gradient)
    /// and the gradient with respect to every parameter. Sub-networks whose
    /// parameters are all frozen are skipped and keep zero gradient.
    pub fn loss_and_gradient(
        &self,
        params: &ParameterSet,
        values: &[f64],
        u0: &Tensor,
        grid: &QueryGrid,
        loss: &mut dyn FnMut(&Tensor) -> Result<(f64, Tensor)>,
    ) -> Result<(f64, Vec<f64>)> {
        match self {
            Architecture::DeepOnet(m) => {
                let blocks = TrainableBlocks::from_params(params);
                let (pred, cache) = m.forward_cached(values, u0, grid)?;
                let (value, d_pred) = loss(&pred)?;
                let mut grad = vec![0.0; values.len()];
                m.backward(values, &cache, &d_pred, &mut grad, blocks.branch, blocks.trunk);
                Ok((value, grad))
            }
            Architecture::DonLstm(m) => {
                let blocks = TrainableBlocks::from_params(params);
                m.loss_and_gradient(values, &blocks, u0, grid, loss)
            }
            Architecture::Lstm(m) => m.loss_and_gradient(values, u0, grid, loss),
        }
    }

    /// DeepONet outputs for every row of `u0` when this is a DON-LSTM whose
    /// DeepONet is entirely frozen; such outputs stay fixed for a whole stage.
    pub fn frozen_features(
        &self,
        params: &ParameterSet,
        u0: &Tensor,
        grid: &QueryGrid,
    ) -> Result<Option<Tensor>> {
        match self {
            Architecture::DonLstm(m) => {
                let blocks = TrainableBlocks::from_params(params);
                if blocks.branch || blocks.trunk {
                    return Ok(None);
                }
                m.deeponet.forward(params.values(), u0, grid).map(Some)
            }
            _ => Ok(None),
        }
    }

    /// [`Architecture::loss_and_gradient`] starting from precomputed
    /// [`Architecture::frozen_features`].
    pub fn loss_and_gradient_from_features(
        &self,
        values: &[f64],
        features: Tensor,
        grid: &QueryGrid,
        loss: &mut dyn FnMut(&Tensor) -> Result<(f64, Tensor)>,
    ) -> Result<(f64, Vec<f64>)> {
        match self {
            Architecture::DonLstm(m) => {
                let (value, grad, _) =
                    m.sequence_loss_and_gradient(values, features, grid, loss, false)?;
                Ok((value, grad))
            }
            _ => Err(Error::config(format!(
                "{} has no frozen feature stage",
                self.name()
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::DeepOnet(_) => "deeponet",
            Architecture::DonLstm(_) => "don_lstm",
            Architecture::Lstm(_) => "lstm",
        }
    }

    pub fn deeponet(&self) -> Option<&DeepOnet> {
        match self {
            Architecture::DeepOnet(m) => Some(m),
            Architecture::DonLstm(m) => Some(&m.deeponet),
            Architecture::Lstm(_) => None,
        }
    }
}

/// An architecture together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub arch: Architecture,
    pub params: ParameterSet,
}

impl Network {
    pub fn deeponet(
        config: DeepOnetConfig,
        trunk_scaling: TrunkScaling,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut params = ParameterSet::new();
        let don = DeepOnet::new(config, trunk_scaling, &mut params, rng)?;
        Ok(Network {
            arch: Architecture::DeepOnet(don),
            params,
        })
    }

    pub fn lstm(
        sensors: usize,
        n_t: usize,
        n_x: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut params = ParameterSet::new();
        let net = LstmNet::new(sensors, n_t, n_x, hidden, &mut params, rng);
        Network {
            arch: Architecture::Lstm(net),
            params,
        }
    }

    /// Attaches reshape, LSTM and dense head to a DeepONet. The DeepONet
    /// parameters keep their values and offsets; the new blocks are appended.
    pub fn extend_with_lstm(self, n_x: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        let Network { arch, mut params } = self;
        let don = match arch {
            Architecture::DeepOnet(d) => d,
            other => {
                return Err(Error::config(format!(
                    "only a bare deeponet can be extended, got {}",
                    other.name()
                )))
            }
        };
        let composite = DonLstm::extend(don, n_x, hidden, &mut params, rng);
        Ok(Network {
            arch: Architecture::DonLstm(composite),
            params,
        })
    }

    pub fn forward(&self, u0: &Tensor, grid: &QueryGrid) -> Result<Tensor> {
        self.arch.forward(self.params.values(), u0, grid)
    }

    pub fn set_stage(&mut self, stage: Stage) {
        set_trainable(&mut self.params, stage);
    }
}

/// Loss of a network on one batch as a function of the parameter vector.
pub struct BatchObjective<'a> {
    pub net: &'a Network,
    pub u0: &'a Tensor,
    pub grid: &'a QueryGrid,
    pub target: &'a Tensor,
    pub loss: LossKind<'a>,
}

impl Objective for BatchObjective<'_> {
    fn value(&self, params: &[f64]) -> Result<f64> {
        let pred = self.net.arch.forward(params, self.u0, self.grid)?;
        self.loss.value(&pred, self.target)
    }

    fn value_and_gradient(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let loss = self.loss;
        let target = self.target;
        self.net.arch.loss_and_gradient(
            &self.net.params,
            params,
            self.u0,
            self.grid,
            &mut |pred| loss.value_and_grad(pred, target),
        )
    }
}

/// A trained network with the scalers of its inputs and outputs, predicting
/// in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    pub variant: String,
    pub network: Network,
    pub branch_scaler: Scaler,
    pub target_scaler: Scaler,
}

/// Samples per forward pass during prediction.
const PREDICT_CHUNK: usize = 50;

impl Surrogate {
    /// Scaled branch input: the initial state of every sample.
    pub fn branch_input(scaler: &Scaler, set: &TrajectorySet, indices: &[usize]) -> Result<Tensor> {
        let n_x = set.n_x();
        let mut data = Vec::with_capacity(indices.len() * n_x);
        for &s in indices {
            data.extend(set.initial(s).iter().map(|&v| scaler.apply(v)));
        }
        Tensor::new(vec![indices.len(), n_x], data)
    }
}

impl Predictor for Surrogate {
    fn predict(&self, set: &TrajectorySet) -> Result<Vec<f64>> {
        self.branch_scaler.expect_domain(FitDomain::BranchInput)?;
        self.target_scaler.expect_domain(FitDomain::Target)?;
        let grid = QueryGrid::product(&set.xs, &set.ts);
        let mut out = Vec::with_capacity(set.u.len());
        let all: Vec<usize> = (0..set.len()).collect();
        for chunk in all.chunks(PREDICT_CHUNK) {
            let u0 = Self::branch_input(&self.branch_scaler, set, chunk)?;
            let pred = self.network.forward(&u0, &grid)?;
            out.extend(pred.data().iter().map(|&v| self.target_scaler.invert(v)));
        }
        Ok(out)
    }
}
