//! Branch/trunk operator network.
//!
//! The branch net encodes the initial condition sampled at `m` sensors, the
//! trunk net encodes a query coordinate `(x, t)`, and the prediction is the
//! inner product of the two `p`-dimensional embeddings. The trunk is evaluated
//! once per query and shared by every sample of a batch.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FitDomain, Scaler, ScalerKind};
use crate::error::{Error, Result};
use crate::nn::{gemm, Activation, DenseStack, ParameterSet, StackCache, Tensor};

/// Query coordinates, ordered t-major then x when built from a product grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGrid {
    coords: Vec<[f64; 2]>,
    product: Option<(Vec<f64>, usize)>,
}

impl QueryGrid {
    /// Every `(x, t)` with `t` in `ts` (outer) and `x` in `xs` (inner).
    pub fn product(xs: &[f64], ts: &[f64]) -> Self {
        let coords = ts
            .iter()
            .flat_map(|&t| xs.iter().map(move |&x| [x, t]))
            .collect();
        QueryGrid {
            coords,
            product: Some((ts.to_vec(), xs.len())),
        }
    }

    /// Free-form list of `(x, t)` pairs.
    pub fn from_coords(coords: Vec<[f64; 2]>) -> Self {
        QueryGrid {
            coords,
            product: None,
        }
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// `(n_t, n_x)` for product grids.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.product.as_ref().map(|(ts, nx)| (ts.len(), *nx))
    }

    pub fn times(&self) -> Option<&[f64]> {
        self.product.as_ref().map(|(ts, _)| ts.as_slice())
    }

    /// `(n_t, n_x)` of a product grid whose times are uniformly spaced.
    pub fn uniform_dims(&self) -> Result<(usize, usize)> {
        let (ts, n_x) = self
            .product
            .as_ref()
            .ok_or_else(|| Error::config("sequence models need a product (t, x) grid"))?;
        if ts.len() >= 3 {
            let dt = ts[1] - ts[0];
            for w in ts.windows(2) {
                if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1.0) {
                    return Err(Error::config(format!(
                        "non-uniform time spacing: {} then {}",
                        dt,
                        w[1] - w[0]
                    )));
                }
            }
        }
        Ok((ts.len(), *n_x))
    }
}

/// `(cos(2 pi x / P), sin(2 pi x / P))`.
pub fn periodic_feature_expand(x: f64, period: f64) -> Result<(f64, f64)> {
    if !(period > 0.0) {
        return Err(Error::config(format!("period must be positive, got {period}")));
    }
    let phase = 2.0 * PI * x / period;
    Ok((phase.cos(), phase.sin()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepOnetConfig {
    /// Number of spatial sensors feeding the branch net.
    pub sensors: usize,
    pub branch_widths: Vec<usize>,
    pub branch_activations: Vec<Activation>,
    pub trunk_widths: Vec<usize>,
    pub trunk_activations: Vec<Activation>,
    /// Fourier expansion of `x` with this period, when set.
    pub periodic: Option<f64>,
}

impl DeepOnetConfig {
    /// Full-size branch and trunk widths.
    pub fn full(sensors: usize) -> Self {
        use Activation::{Linear, Swish};
        DeepOnetConfig {
            sensors,
            branch_widths: vec![150, 250, 450, 380, 320, 300],
            branch_activations: vec![Swish, Swish, Swish, Swish, Swish, Linear],
            trunk_widths: vec![200, 220, 240, 250, 260, 280, 300],
            trunk_activations: vec![Swish, Swish, Swish, Swish, Swish, Linear, Linear],
            periodic: None,
        }
    }

    /// Every width divided by 10 (`p = 30`).
    pub fn desk(sensors: usize) -> Self {
        let mut c = Self::full(sensors);
        c.branch_widths.iter_mut().for_each(|w| *w /= 10);
        c.trunk_widths.iter_mut().for_each(|w| *w /= 10);
        c
    }

    /// Shared embedding width.
    pub fn p(&self) -> usize {
        *self.branch_widths.last().unwrap_or(&0)
    }

    pub fn trunk_input_width(&self) -> usize {
        if self.periodic.is_some() {
            3
        } else {
            2
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sensors == 0 {
            return Err(Error::config("deeponet needs at least one sensor"));
        }
        if self.branch_widths.last() != self.trunk_widths.last() || self.p() == 0 {
            return Err(Error::config(format!(
                "branch output {:?} and trunk output {:?} must match",
                self.branch_widths.last(),
                self.trunk_widths.last()
            )));
        }
        if let Some(p) = self.periodic {
            periodic_feature_expand(0.0, p)?;
        }
        Ok(())
    }
}

/// Min-max scalers for the trunk coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrunkScaling {
    pub x: Scaler,
    pub t: Scaler,
}

impl TrunkScaling {
    pub fn fit(xs: &[f64], ts: &[f64]) -> Result<Self> {
        Ok(TrunkScaling {
            x: Scaler::fit(ScalerKind::MinMax, FitDomain::TrunkX, xs)?,
            t: Scaler::fit(ScalerKind::MinMax, FitDomain::TrunkT, ts)?,
        })
    }

    pub fn identity() -> Self {
        TrunkScaling {
            x: Scaler::identity(FitDomain::TrunkX),
            t: Scaler::identity(FitDomain::TrunkT),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepOnet {
    pub config: DeepOnetConfig,
    pub branch: DenseStack,
    pub trunk: DenseStack,
    pub trunk_scaling: TrunkScaling,
}

/// Parameter-name prefix of every DeepONet block.
pub const DON_PREFIX: &str = "don.";

pub struct DeepOnetCache {
    branch: StackCache,
    trunk: StackCache,
}

impl DeepOnet {
    pub fn new(
        config: DeepOnetConfig,
        trunk_scaling: TrunkScaling,
        params: &mut ParameterSet,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let branch = DenseStack::new(
            params,
            "don.branch",
            config.sensors,
            &config.branch_widths,
            &config.branch_activations,
            rng,
        )?;
        let trunk = DenseStack::new(
            params,
            "don.trunk",
            config.trunk_input_width(),
            &config.trunk_widths,
            &config.trunk_activations,
            rng,
        )?;
        Ok(DeepOnet {
            config,
            branch,
            trunk,
            trunk_scaling,
        })
    }

    pub fn p(&self) -> usize {
        self.config.p()
    }

    /// Trunk input rows for every query.
    pub fn trunk_inputs(&self, grid: &QueryGrid) -> Result<Tensor> {
        let w = self.config.trunk_input_width();
        let mut data = Vec::with_capacity(grid.len() * w);
        for &[x, t] in grid.coords() {
            match self.config.periodic {
                Some(p) => {
                    let (c, s) = periodic_feature_expand(x, p)?;
                    data.extend_from_slice(&[s, c]);
                }
                None => data.push(self.trunk_scaling.x.apply(x)),
            }
            data.push(self.trunk_scaling.t.apply(t));
        }
        Tensor::new(vec![grid.len(), w], data)
    }

    fn check(&self, u0: &Tensor, grid: &QueryGrid) -> Result<()> {
        if u0.shape().len() != 2 || u0.cols() != self.config.sensors {
            return Err(Error::dim(format!(
                "branch expects [batch, {}] input, got {:?}",
                self.config.sensors,
                u0.shape()
            )));
        }
        if grid.is_empty() {
            return Err(Error::config("empty query grid"));
        }
        Ok(())
    }

    /// `[batch x n_queries]` predictions.
    pub fn forward(&self, params: &[f64], u0: &Tensor, grid: &QueryGrid) -> Result<Tensor> {
        self.check(u0, grid)?;
        let b = self.branch.forward(params, u0)?;
        let t = self.trunk.forward(params, &self.trunk_inputs(grid)?)?;
        Ok(merge(&b, &t))
    }

    pub fn forward_cached(
        &self,
        params: &[f64],
        u0: &Tensor,
        grid: &QueryGrid,
    ) -> Result<(Tensor, DeepOnetCache)> {
        self.check(u0, grid)?;
        let branch = self.branch.forward_cached(params, u0.clone())?;
        let trunk = self.trunk.forward_cached(params, self.trunk_inputs(grid)?)?;
        let out = merge(branch.output(), trunk.output());
        Ok((out, DeepOnetCache { branch, trunk }))
    }

    /// Accumulates gradients for the branch and/or trunk nets.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &DeepOnetCache,
        d_out: &Tensor,
        grad: &mut [f64],
        branch_grad: bool,
        trunk_grad: bool,
    ) {
        let b = cache.branch.output();
        let t = cache.trunk.output();
        let (batch, p, q) = (b.rows(), b.cols(), t.rows());
        if branch_grad {
            let mut db = vec![0.0; batch * p];
            gemm(batch, q, p, 1.0, d_out.data(), false, t.data(), false, 0.0, &mut db);
            let db = Tensor::new(vec![batch, p], db).expect("shape");
            self.branch.backward(params, &cache.branch, db, grad, false);
        }
        if trunk_grad {
            let mut dt = vec![0.0; q * p];
            gemm(q, batch, p, 1.0, d_out.data(), true, b.data(), false, 0.0, &mut dt);
            let dt = Tensor::new(vec![q, p], dt).expect("shape");
            self.trunk.backward(params, &cache.trunk, dt, grad, false);
        }
    }
}

/// `out[s, q] = sum_k branch[s, k] * trunk[q, k]`.
pub fn merge(branch: &Tensor, trunk: &Tensor) -> Tensor {
    let (batch, p, q) = (branch.rows(), branch.cols(), trunk.rows());
    debug_assert_eq!(trunk.cols(), p);
    let mut out = vec![0.0; batch * q];
    gemm(batch, p, q, 1.0, branch.data(), false, trunk.data(), true, 0.0, &mut out);
    Tensor::new(vec![batch, q], out).expect("shape")
}
