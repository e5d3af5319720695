//! DeepONet followed by a reshape to `(t, x)` frames, an LSTM returning every
//! hidden state and a dense head shared across timesteps. Also holds the
//! dense-lift LSTM baseline and the stage-wise freezing rules.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::deeponet::{DeepOnet, QueryGrid, DON_PREFIX};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, LstmLayer, ParameterSet, Tensor};

/// Default LSTM width.
pub const LSTM_HIDDEN: usize = 200;

/// `[batch x (n_t * n_x)]` (t-major) to `[batch x n_t x n_x]`.
pub fn reshape_to_sequence(flat: Tensor, n_t: usize, n_x: usize) -> Result<Tensor> {
    if flat.shape().len() != 2 || flat.cols() != n_t * n_x {
        return Err(Error::dim(format!(
            "cannot view {:?} as [batch, {n_t}, {n_x}]",
            flat.shape()
        )));
    }
    let batch = flat.rows();
    flat.reshape(vec![batch, n_t, n_x])
}

/// `[batch x n_t x n_x]` back to `[batch x (n_t * n_x)]`.
pub fn flatten_sequence(seq: Tensor) -> Result<Tensor> {
    let batch = seq.rows();
    let cols = seq.cols();
    seq.reshape(vec![batch, cols])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonLstm {
    pub deeponet: DeepOnet,
    pub lstm: LstmLayer,
    pub head: DenseLayer,
}

impl DonLstm {
    /// Appends LSTM and head blocks after the existing DeepONet parameters.
    pub fn extend(
        deeponet: DeepOnet,
        n_x: usize,
        hidden: usize,
        params: &mut ParameterSet,
        rng: &mut impl Rng,
    ) -> Self {
        let lstm = LstmLayer::new(params, "lstm", n_x, hidden, rng);
        let head = DenseLayer::new(params, "head", hidden, n_x, Activation::Linear, rng);
        DonLstm {
            deeponet,
            lstm,
            head,
        }
    }

    pub fn n_x(&self) -> usize {
        self.head.out_dim
    }

    fn dims(&self, grid: &QueryGrid) -> Result<(usize, usize)> {
        let (n_t, n_x) = grid.uniform_dims()?;
        if n_x != self.n_x() {
            return Err(Error::dim(format!(
                "grid has {n_x} spatial points, model expects {}",
                self.n_x()
            )));
        }
        Ok((n_t, n_x))
    }

    /// `[batch x n_t x n_x]` predictions.
    pub fn forward(&self, params: &[f64], u0: &Tensor, grid: &QueryGrid) -> Result<Tensor> {
        let (n_t, n_x) = self.dims(grid)?;
        let flat = self.deeponet.forward(params, u0, grid)?;
        let seq = reshape_to_sequence(flat, n_t, n_x)?;
        let hs = self.lstm.forward(params, &seq)?;
        let batch = hs.rows();
        let hs = hs.reshape(vec![batch * n_t, self.lstm.hidden_size])?;
        self.head.forward(params, &hs)?.reshape(vec![batch, n_t, n_x])
    }

    pub(crate) fn loss_and_gradient(
        &self,
        params: &[f64],
        trainable: &TrainableBlocks,
        u0: &Tensor,
        grid: &QueryGrid,
        loss: &mut dyn FnMut(&Tensor) -> Result<(f64, Tensor)>,
    ) -> Result<(f64, Vec<f64>)> {
        let (flat, don_cache) = self.deeponet.forward_cached(params, u0, grid)?;
        let don_live = trainable.branch || trainable.trunk;
        let (value, mut grad, d_flat) =
            self.sequence_loss_and_gradient(params, flat, grid, loss, don_live)?;
        if let Some(d_flat) = d_flat {
            self.deeponet.backward(
                params,
                &don_cache,
                &d_flat,
                &mut grad,
                trainable.branch,
                trainable.trunk,
            );
        }
        Ok((value, grad))
    }

    /// Loss and gradient of the LSTM and head given the DeepONet output
    /// `flat` (`[batch x n_t * n_x]`). Also returns the gradient with respect
    /// to `flat` when `want_input` is set.
    pub(crate) fn sequence_loss_and_gradient(
        &self,
        params: &[f64],
        flat: Tensor,
        grid: &QueryGrid,
        loss: &mut dyn FnMut(&Tensor) -> Result<(f64, Tensor)>,
        want_input: bool,
    ) -> Result<(f64, Vec<f64>, Option<Tensor>)> {
        let (n_t, n_x) = self.dims(grid)?;
        let h = self.lstm.hidden_size;
        let batch = flat.rows();
        let seq = reshape_to_sequence(flat, n_t, n_x)?;
        let (hs, lstm_cache) = self.lstm.forward_cached(params, &seq)?;
        let hs = hs.reshape(vec![batch * n_t, h])?;
        let out = self.head.forward(params, &hs)?;
        let pred = out.reshape(vec![batch, n_t * n_x])?;
        let (value, d_pred) = loss(&pred)?;

        let mut grad = vec![0.0; params.len()];
        let d_hs = self
            .head
            .backward(params, &hs, &[], d_pred.into_data(), &mut grad, true)
            .expect("requested");
        let d_hs = d_hs.reshape(vec![batch, n_t, h])?;
        let d_seq = self
            .lstm
            .backward(params, &seq, &lstm_cache, &d_hs, &mut grad, want_input);
        let d_flat = d_seq.map(flatten_sequence).transpose()?;
        Ok((value, grad, d_flat))
    }
}

/// Vanilla sequence baseline: dense lift of the initial condition to
/// `n_t * n_x` values, reshape to frames, LSTM, time-distributed dense head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmNet {
    pub n_t: usize,
    pub lift: DenseLayer,
    pub lstm: LstmLayer,
    pub head: DenseLayer,
}

impl LstmNet {
    pub fn new(
        sensors: usize,
        n_t: usize,
        n_x: usize,
        hidden: usize,
        params: &mut ParameterSet,
        rng: &mut impl Rng,
    ) -> Self {
        let lift = DenseLayer::new(params, "lift", sensors, n_t * n_x, Activation::Linear, rng);
        let lstm = LstmLayer::new(params, "lstm", n_x, hidden, rng);
        let head = DenseLayer::new(params, "head", hidden, n_x, Activation::Linear, rng);
        LstmNet {
            n_t,
            lift,
            lstm,
            head,
        }
    }

    fn dims(&self, grid: &QueryGrid) -> Result<(usize, usize)> {
        let (n_t, n_x) = grid.uniform_dims()?;
        if n_t != self.n_t || n_x != self.head.out_dim {
            return Err(Error::dim(format!(
                "lstm baseline is fixed to a {} x {} grid, got {n_t} x {n_x}",
                self.n_t, self.head.out_dim
            )));
        }
        Ok((n_t, n_x))
    }

    pub fn forward(&self, params: &[f64], u0: &Tensor, grid: &QueryGrid) -> Result<Tensor> {
        let (n_t, n_x) = self.dims(grid)?;
        let lifted = self.lift.forward(params, u0)?;
        let seq = reshape_to_sequence(lifted, n_t, n_x)?;
        let hs = self.lstm.forward(params, &seq)?;
        let batch = hs.rows();
        let hs = hs.reshape(vec![batch * n_t, self.lstm.hidden_size])?;
        self.head.forward(params, &hs)?.reshape(vec![batch, n_t, n_x])
    }

    pub(crate) fn loss_and_gradient(
        &self,
        params: &[f64],
        u0: &Tensor,
        grid: &QueryGrid,
        loss: &mut dyn FnMut(&Tensor) -> Result<(f64, Tensor)>,
    ) -> Result<(f64, Vec<f64>)> {
        let (n_t, n_x) = self.dims(grid)?;
        let h = self.lstm.hidden_size;
        let lifted = self.lift.forward(params, u0)?;
        let batch = lifted.rows();
        let seq = reshape_to_sequence(lifted, n_t, n_x)?;
        let (hs, lstm_cache) = self.lstm.forward_cached(params, &seq)?;
        let hs = hs.reshape(vec![batch * n_t, h])?;
        let out = self.head.forward(params, &hs)?;
        let pred = out.reshape(vec![batch, n_t * n_x])?;
        let (value, d_pred) = loss(&pred)?;

        let mut grad = vec![0.0; params.len()];
        let d_hs = self
            .head
            .backward(params, &hs, &[], d_pred.into_data(), &mut grad, true)
            .expect("requested")
            .reshape(vec![batch, n_t, h])?;
        let d_seq = self
            .lstm
            .backward(params, &seq, &lstm_cache, &d_hs, &mut grad, true)
            .expect("requested");
        let d_lift = flatten_sequence(d_seq)?;
        self.lift
            .backward(params, u0, &[], d_lift.into_data(), &mut grad, false);
        Ok((value, grad))
    }
}

/// Training stage of the three-step procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    DonPretrain,
    LstmOnly,
    JointFinetune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::DonPretrain => "don_pretrain",
            Stage::LstmOnly => "lstm_only",
            Stage::JointFinetune => "joint_finetune",
        }
    }
}

/// Applies the stage's freezing rule to the trainable mask: `lstm_only`
/// freezes every DeepONet block, the other stages unfreeze everything.
pub fn set_trainable(params: &mut ParameterSet, stage: Stage) {
    params.set_all_trainable(true);
    if stage == Stage::LstmOnly {
        params.set_trainable_prefix(DON_PREFIX, false);
    }
}

/// Which DeepONet sub-networks need gradients.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TrainableBlocks {
    pub branch: bool,
    pub trunk: bool,
}

impl TrainableBlocks {
    pub fn from_params(params: &ParameterSet) -> Self {
        TrainableBlocks {
            branch: params.any_trainable("don.branch."),
            trunk: params.any_trainable("don.trunk."),
        }
    }
}
