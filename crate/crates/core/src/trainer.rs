//! Minibatch training, checkpoint selection and the three-stage procedure.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adaptive::{adaptive_loss_grad, mse_grad, AdaptiveWeights, ETA_LAMBDA};
use crate::data::Scaler;
use crate::deeponet::QueryGrid;
use crate::donlstm::Stage;
use crate::error::{Error, Result};
use crate::model::{Network, Surrogate};
use crate::nn::{AdamState, Tensor};
use crate::pde::TrajectorySet;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageEpochs {
    pub don_pretrain: usize,
    pub lstm_only: usize,
    pub joint_finetune: usize,
}

impl StageEpochs {
    pub fn uniform(n: usize) -> Self {
        StageEpochs {
            don_pretrain: n,
            lstm_only: n,
            joint_finetune: n,
        }
    }

    pub fn get(&self, stage: Stage) -> usize {
        match stage {
            Stage::DonPretrain => self.don_pretrain,
            Stage::LstmOnly => self.lstm_only,
            Stage::JointFinetune => self.joint_finetune,
        }
    }
}

impl Default for StageEpochs {
    fn default() -> Self {
        StageEpochs::uniform(500)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: StageEpochs,
    pub batch_size: usize,
    pub lr1: f64,
    pub lr2: f64,
    /// Checkpoint interval in epochs.
    pub n_freq: usize,
    pub seed: u64,
    pub val_fraction: f64,
    /// Self-adaptive loss instead of plain MSE for gradient steps.
    pub adaptive: bool,
    pub eta_lambda: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: StageEpochs::default(),
            batch_size: 50,
            lr1: 1e-4,
            lr2: 1e-5,
            n_freq: 100,
            seed: 0,
            val_fraction: 0.1,
            adaptive: true,
            eta_lambda: ETA_LAMBDA,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("training.batch_size must be at least 1"));
        }
        if self.n_freq == 0 {
            return Err(Error::config("training.n_freq must be at least 1"));
        }
        if !(self.lr1 >= 0.0) || !(self.lr2 >= 0.0) {
            return Err(Error::config("learning rates must be non-negative"));
        }
        if !(self.lr2 < self.lr1) {
            return Err(Error::config(format!(
                "training.lr2 ({}) must be smaller than training.lr1 ({})",
                self.lr2, self.lr1
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("training.val_fraction must be in [0, 1)"));
        }
        if !(self.eta_lambda >= 0.0) {
            return Err(Error::config("training.eta_lambda must be non-negative"));
        }
        Ok(())
    }

    pub fn learning_rate(&self, stage: Stage) -> f64 {
        match stage {
            Stage::DonPretrain | Stage::LstmOnly => self.lr1,
            Stage::JointFinetune => self.lr2,
        }
    }
}

/// Scaled samples on one query grid.
#[derive(Debug, Clone)]
pub struct GridData {
    pub grid: QueryGrid,
    /// `[N x sensors]` branch inputs.
    pub u0: Tensor,
    /// `[N x queries]` targets, t-major.
    pub target: Tensor,
}

impl GridData {
    pub fn from_set(
        set: &TrajectorySet,
        indices: &[usize],
        branch: &Scaler,
        target: &Scaler,
    ) -> Result<Self> {
        let u0 = Surrogate::branch_input(branch, set, indices)?;
        let frame = set.frame_len();
        let mut t = Vec::with_capacity(indices.len() * frame);
        for &s in indices {
            t.extend(set.sample(s).iter().map(|&v| target.apply(v)));
        }
        Ok(GridData {
            grid: QueryGrid::product(&set.xs, &set.ts),
            u0,
            target: Tensor::new(vec![indices.len(), frame], t)?,
        })
    }

    pub fn len(&self) -> usize {
        self.u0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor, Tensor) {
        (self.u0.select_rows(indices), self.target.select_rows(indices))
    }
}

/// What one stage trains on and how.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageSpec {
    pub stage: Stage,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adaptive: bool,
}

/// One row per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub stage: Stage,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: Option<f64>,
    pub checkpointed: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

pub const LOG_HEADER: &str = "stage,epoch,train_loss,val_mse,checkpointed";

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for r in &self.rows {
            let val = r.val_mse.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.stage.name(),
                r.epoch,
                r.train_loss,
                val,
                r.checkpointed
            );
        }
        s
    }

    pub fn stages(&self) -> Vec<Stage> {
        let mut out: Vec<Stage> = Vec::new();
        for r in &self.rows {
            if out.last() != Some(&r.stage) {
                out.push(r.stage);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub epoch: usize,
    pub val_mse: f64,
    pub params: Vec<f64>,
}

/// Index of the smallest value; the earliest one wins ties.
pub fn select_checkpoint(val_mse: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in val_mse.iter().enumerate() {
        match best {
            Some(b) if !(v < val_mse[b]) => {}
            _ if v.is_nan() => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Plain MSE over every validation entry, pooled across grids.
pub fn validation_mse(net: &Network, val: &[GridData]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for data in val {
        let rows: Vec<usize> = (0..data.len()).collect();
        for chunk in rows.chunks(50) {
            let (u0, target) = data.batch(chunk);
            let pred = net.forward(&u0, &data.grid)?;
            sum += pred
                .data()
                .iter()
                .zip(target.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            count += target.len();
        }
    }
    if count == 0 {
        return Err(Error::config("validation set is empty"));
    }
    Ok(sum / count as f64)
}

fn stage_index(stage: Stage) -> u64 {
    match stage {
        Stage::DonPretrain => 0,
        Stage::LstmOnly => 1,
        Stage::JointFinetune => 2,
    }
}

/// One pass over every training sample. Batches never mix grids; batches of
/// all grids are visited in one shuffled order. `features[g]`, when present,
/// holds the frozen DeepONet outputs of grid `g` (see
/// [`crate::model::Architecture::frozen_features`]). Returns the mean batch loss.
#[allow(clippy::too_many_arguments)]
pub fn run_epoch(
    net: &mut Network,
    train: &[GridData],
    features: &[Option<Tensor>],
    adam: &mut AdamState,
    weights: &mut [AdaptiveWeights],
    batch_size: usize,
    rng: &mut rng::Rng,
    epoch: usize,
) -> Result<f64> {
    let adaptive = !weights.is_empty();
    if adaptive && weights.len() != train.len() {
        return Err(Error::config("one self-adaptive weight vector per grid is required"));
    }
    let mut batches: Vec<(usize, Vec<usize>)> = Vec::new();
    for (g, data) in train.iter().enumerate() {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng);
        for chunk in order.chunks(batch_size.max(1)) {
            batches.push((g, chunk.to_vec()));
        }
    }
    batches.shuffle(rng);
    let mut total = 0.0;
    for (b, (g, idx)) in batches.iter().enumerate() {
        let data = &train[*g];
        let (u0, target) = data.batch(idx);
        let mut lambda_grad = None;
        let (loss, mut grad) = {
            let w = weights.get(*g).filter(|_| adaptive);
            let mut loss_fn = |pred: &Tensor| match w {
                Some(w) => {
                    lambda_grad = Some(w.lambda_gradient(pred, &target)?);
                    adaptive_loss_grad(pred, &target, w)
                }
                None => mse_grad(pred, &target),
            };
            match features.get(*g).and_then(Option::as_ref) {
                Some(f) => net.arch.loss_and_gradient_from_features(
                    net.params.values(),
                    f.select_rows(idx),
                    &data.grid,
                    &mut loss_fn,
                )?,
                None => net.arch.loss_and_gradient(
                    &net.params,
                    net.params.values(),
                    &u0,
                    &data.grid,
                    &mut loss_fn,
                )?,
            }
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                value: loss,
                context: format!("epoch {epoch}, batch {b}"),
            });
        }
        for (g, &t) in grad.iter_mut().zip(net.params.trainable()) {
            if !t {
                *g = 0.0;
            }
        }
        adam.step(&mut net.params, &grad)?;
        if let (Some(w), Some(lg)) = (weights.get_mut(*g), lambda_grad) {
            w.ascend(&lg);
        }
        total += loss;
    }
    for w in weights.iter_mut() {
        w.normalize()?;
    }
    Ok(if batches.is_empty() {
        0.0
    } else {
        total / batches.len() as f64
    })
}

/// Trains one stage, checkpointing every `n_freq` epochs (and at the end if
/// no checkpoint fell inside the stage), then restores the checkpoint with
/// the lowest validation MSE.
pub fn train_stage(
    net: &mut Network,
    spec: &StageSpec,
    config: &TrainingConfig,
    train: &[GridData],
    val: &[GridData],
    log: &mut TrainingLog,
) -> Result<CheckpointRecord> {
    if train.iter().all(|d| d.is_empty()) {
        return Err(Error::config("training set is empty"));
    }
    net.set_stage(spec.stage);
    let mut adam = AdamState::new(net.params.len(), spec.learning_rate);
    let mut weights: Vec<AdaptiveWeights> = if spec.adaptive {
        train
            .iter()
            .map(|d| AdaptiveWeights::uniform(d.grid.len(), config.eta_lambda))
            .collect()
    } else {
        Vec::new()
    };
    let features = train
        .iter()
        .map(|d| net.arch.frozen_features(&net.params, &d.u0, &d.grid))
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<CheckpointRecord> = None;
    let mut history: Vec<f64> = Vec::new();
    let mut consider = |net: &Network, epoch: usize, history: &mut Vec<f64>| -> Result<(f64, bool)> {
        let mse = validation_mse(net, val)?;
        history.push(mse);
        let improved = select_checkpoint(history) == Some(history.len() - 1);
        if improved {
            best = Some(CheckpointRecord {
                epoch,
                val_mse: mse,
                params: net.params.values().to_vec(),
            });
        }
        Ok((mse, improved))
    };
    if spec.epochs == 0 {
        let (mse, _) = consider(net, 0, &mut history)?;
        log.rows.push(LogRow {
            stage: spec.stage,
            epoch: 0,
            train_loss: f64::NAN,
            val_mse: Some(mse),
            checkpointed: true,
        });
    }
    for epoch in 1..=spec.epochs {
        let mut rng = rng::stream(
            config.seed,
            Stream::Shuffle,
            (stage_index(spec.stage) << 32) | epoch as u64,
        );
        let loss = run_epoch(
            net,
            train,
            &features,
            &mut adam,
            &mut weights,
            config.batch_size,
            &mut rng,
            epoch,
        )?;
        let due = epoch % config.n_freq == 0 || (epoch == spec.epochs && history.is_empty());
        let (val_mse, checkpointed) = if due {
            let (m, c) = consider(net, epoch, &mut history)?;
            (Some(m), c)
        } else {
            (None, false)
        };
        log.rows.push(LogRow {
            stage: spec.stage,
            epoch,
            train_loss: loss,
            val_mse,
            checkpointed,
        });
    }
    let best = best.expect("at least one checkpoint is recorded");
    net.params.set_values(&best.params)?;
    Ok(best)
}

/// Training and validation data of the low- and high-resolution sets.
#[derive(Debug, Clone)]
pub struct DataSplits {
    pub low_train: Option<GridData>,
    pub low_val: Option<GridData>,
    pub high_train: Option<GridData>,
    pub high_val: Option<GridData>,
}

impl DataSplits {
    fn pick(&self, low: bool, high: bool) -> Result<(Vec<GridData>, Vec<GridData>)> {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (want, t, v, name) in [
            (low, &self.low_train, &self.low_val, "low"),
            (high, &self.high_train, &self.high_val, "high"),
        ] {
            if want {
                let t = t
                    .clone()
                    .ok_or_else(|| Error::config(format!("{name}-resolution data is required")))?;
                train.push(t);
                if let Some(v) = v.clone().filter(|v| !v.is_empty()) {
                    val.push(v);
                }
            }
        }
        if val.is_empty() {
            return Err(Error::config("validation split is empty"));
        }
        Ok((train, val))
    }
}

/// Which sets feed a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSelector {
    Low,
    High,
    Both,
}

impl DataSelector {
    fn flags(self) -> (bool, bool) {
        match self {
            DataSelector::Low => (true, false),
            DataSelector::High => (false, true),
            DataSelector::Both => (true, true),
        }
    }
}

/// Trains a stage on the selected sets.
pub fn train_on(
    net: &mut Network,
    stage: Stage,
    data: DataSelector,
    splits: &DataSplits,
    config: &TrainingConfig,
    log: &mut TrainingLog,
) -> Result<CheckpointRecord> {
    let (low, high) = data.flags();
    let (train, val) = splits.pick(low, high)?;
    let spec = StageSpec {
        stage,
        epochs: config.epochs.get(stage),
        learning_rate: config.learning_rate(stage),
        adaptive: config.adaptive,
    };
    train_stage(net, &spec, config, &train, &val, log)
}

/// Result of [`run_three_stage`]: the final network and the checkpoint each
/// stage restored, in stage order.
#[derive(Debug, Clone)]
pub struct ThreeStageRun {
    pub network: Network,
    pub checkpoints: Vec<(Stage, CheckpointRecord)>,
}

/// Step 1 on `step1_data`, then extension with LSTM and head, Step 2 with the
/// DeepONet frozen and Step 3 with everything trainable, both on the
/// high-resolution set.
pub fn run_three_stage(
    net: Network,
    step1_data: DataSelector,
    splits: &DataSplits,
    config: &TrainingConfig,
    lstm_hidden: usize,
    log: &mut TrainingLog,
) -> Result<ThreeStageRun> {
    config.validate()?;
    let (_, high) = splits.pick(false, true)?;
    let (n_t, n_x) = high[0].grid.uniform_dims()?;
    if let Some(low) = &splits.low_train {
        let (n_t_low, n_x_low) = low.grid.uniform_dims()?;
        if n_x_low != n_x || n_t_low == 0 || n_t_low > n_t {
            return Err(Error::config(format!(
                "low-resolution grid {n_t_low} x {n_x_low} is incompatible with {n_t} x {n_x}"
            )));
        }
    }
    let mut net = net;
    let mut checkpoints = Vec::with_capacity(3);
    let best = train_on(&mut net, Stage::DonPretrain, step1_data, splits, config, log)?;
    checkpoints.push((Stage::DonPretrain, best));
    let mut init = rng::stream(config.seed, Stream::Init, 1);
    let mut net = net.extend_with_lstm(n_x, lstm_hidden, &mut init)?;
    for stage in [Stage::LstmOnly, Stage::JointFinetune] {
        let best = train_on(&mut net, stage, DataSelector::High, splits, config, log)?;
        checkpoints.push((stage, best));
    }
    net.set_stage(Stage::JointFinetune);
    Ok(ThreeStageRun {
        network: net,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmin_with_earliest_ties() {
        assert_eq!(select_checkpoint(&[0.5, 0.3, 0.4]), Some(1));
        assert_eq!(select_checkpoint(&[0.3, 0.3]), Some(0));
        assert_eq!(select_checkpoint(&[]), None);
        assert_eq!(select_checkpoint(&[f64::NAN, 0.2, 0.2, 0.1]), Some(3));
    }

    #[test]
    fn lr_order_enforced() {
        let mut c = TrainingConfig::default();
        c.validate().unwrap();
        c.lr2 = c.lr1;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c = TrainingConfig {
            batch_size: 0,
            ..TrainingConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn log_csv_layout() {
        let log = TrainingLog {
            rows: vec![
                LogRow {
                    stage: Stage::DonPretrain,
                    epoch: 1,
                    train_loss: 0.5,
                    val_mse: None,
                    checkpointed: false,
                },
                LogRow {
                    stage: Stage::LstmOnly,
                    epoch: 2,
                    train_loss: 0.25,
                    val_mse: Some(0.125),
                    checkpointed: true,
                },
            ],
        };
        assert_eq!(
            log.to_csv(),
            "stage,epoch,train_loss,val_mse,checkpointed\n\
             don_pretrain,1,0.5,,false\n\
             lstm_only,2,0.25,0.125,true\n"
        );
        assert_eq!(log.stages(), vec![Stage::DonPretrain, Stage::LstmOnly]);
    }
}
