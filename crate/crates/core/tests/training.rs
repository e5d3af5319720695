use proptest::prelude::*;
use rand::Rng;

use operon::adaptive::AdaptiveWeights;
use operon::deeponet::{DeepOnetConfig, QueryGrid, TrunkScaling};
use operon::donlstm::Stage;
use operon::metrics::{mae, rmse, rse};
use operon::model::Network;
use operon::nn::{Activation, Tensor};
use operon::rng::{self, Stream};
use operon::trainer::{
    run_three_stage, train_stage, validation_mse, DataSelector, DataSplits, GridData, StageEpochs,
    StageSpec, TrainingConfig, TrainingLog,
};

const N_X: usize = 8;

fn config() -> DeepOnetConfig {
    DeepOnetConfig {
        sensors: N_X,
        branch_widths: vec![10, 6],
        branch_activations: vec![Activation::Swish, Activation::Linear],
        trunk_widths: vec![10, 6],
        trunk_activations: vec![Activation::Swish, Activation::Swish],
        periodic: None,
    }
}

/// Travelling sine waves with random amplitude and phase.
fn waves(count: usize, n_t: usize, seed: u64) -> GridData {
    let xs: Vec<f64> = (0..N_X).map(|j| j as f64 / N_X as f64).collect();
    let ts: Vec<f64> = (0..n_t).map(|i| 0.5 * i as f64 / (n_t - 1).max(1) as f64).collect();
    let mut rng = rng::seeded(seed);
    let mut u0 = Vec::new();
    let mut target = Vec::new();
    for _ in 0..count {
        let a = rng.gen_range(0.5..1.5);
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        let f = |x: f64, t: f64| a * (std::f64::consts::TAU * (x - t) + phi).sin();
        u0.extend(xs.iter().map(|&x| f(x, 0.0)));
        for &t in &ts {
            target.extend(xs.iter().map(|&x| f(x, t)));
        }
    }
    GridData {
        grid: QueryGrid::product(&xs, &ts),
        u0: Tensor::new(vec![count, N_X], u0).unwrap(),
        target: Tensor::new(vec![count, n_t * N_X], target).unwrap(),
    }
}

fn fresh(seed: u64) -> Network {
    let xs: Vec<f64> = (0..N_X).map(|j| j as f64 / N_X as f64).collect();
    let mut rng = rng::stream(seed, Stream::Init, 0);
    Network::deeponet(config(), TrunkScaling::fit(&xs, &[0.0, 0.5]).unwrap(), &mut rng).unwrap()
}

fn training(epochs: usize, seed: u64) -> TrainingConfig {
    TrainingConfig {
        epochs: StageEpochs::uniform(epochs),
        batch_size: 4,
        lr1: 1e-2,
        lr2: 1e-3,
        n_freq: 5,
        seed,
        ..TrainingConfig::default()
    }
}

fn splits() -> DataSplits {
    DataSplits {
        low_train: Some(waves(16, 3, 1)),
        low_val: Some(waves(4, 3, 2)),
        high_train: Some(waves(8, 9, 3)),
        high_val: Some(waves(4, 9, 4)),
    }
}

#[test]
fn zero_epochs_keep_parameters_and_still_checkpoint() {
    let mut net = fresh(1);
    let before = net.params.values().to_vec();
    let spec = StageSpec {
        stage: Stage::DonPretrain,
        epochs: 0,
        learning_rate: 1e-2,
        adaptive: true,
    };
    let data = [waves(6, 3, 5)];
    let mut log = TrainingLog::default();
    let best = train_stage(&mut net, &spec, &training(0, 1), &data, &data, &mut log).unwrap();
    assert_eq!(net.params.values(), &before[..]);
    assert_eq!(best.params, before);
    assert_eq!(best.val_mse, validation_mse(&net, &data).unwrap());
}

#[test]
fn zero_learning_rate_is_a_null_step() {
    let mut net = fresh(2);
    let before: Vec<u64> = net.params.values().iter().map(|v| v.to_bits()).collect();
    let spec = StageSpec {
        stage: Stage::DonPretrain,
        epochs: 3,
        learning_rate: 0.0,
        adaptive: true,
    };
    let data = [waves(6, 3, 6)];
    let mut log = TrainingLog::default();
    train_stage(&mut net, &spec, &training(3, 2), &data, &data, &mut log).unwrap();
    let after: Vec<u64> = net.params.values().iter().map(|v| v.to_bits()).collect();
    assert_eq!(before, after);
    assert_eq!(log.rows.len(), 3);
    assert!(log.rows.iter().all(|r| r.train_loss.is_finite() && r.train_loss > 0.0));
}

#[test]
fn short_training_improves_validation() {
    let mut net = fresh(3);
    let data = [waves(16, 3, 7)];
    let val = [waves(6, 3, 8)];
    let initial = validation_mse(&net, &val).unwrap();
    let spec = StageSpec {
        stage: Stage::DonPretrain,
        epochs: 40,
        learning_rate: 1e-2,
        adaptive: false,
    };
    let mut log = TrainingLog::default();
    let best = train_stage(&mut net, &spec, &training(40, 3), &data, &val, &mut log).unwrap();
    assert!(best.val_mse < 0.5 * initial, "{} vs {initial}", best.val_mse);
    assert_eq!(net.params.values(), &best.params[..]);
}

#[test]
fn zero_epoch_pipeline_equals_a_fresh_composite() {
    let config = training(0, 9);
    let mut log = TrainingLog::default();
    let run = run_three_stage(fresh(9), DataSelector::Both, &splits(), &config, 5, &mut log).unwrap();
    let mut init = rng::stream(9, Stream::Init, 1);
    let mut expected = fresh(9).extend_with_lstm(N_X, 5, &mut init).unwrap();
    expected.set_stage(Stage::JointFinetune);
    assert_eq!(run.network, expected);
    // each stage still records the untouched weights as its only checkpoint
    assert_eq!(log.rows.len(), 3);
    assert!(log.rows.iter().all(|r| r.epoch == 0 && r.checkpointed && r.train_loss.is_nan()));
}

#[test]
fn pipeline_log_has_all_stages_and_csv_header() {
    let config = training(6, 4);
    let mut log = TrainingLog::default();
    run_three_stage(fresh(4), DataSelector::Low, &splits(), &config, 4, &mut log).unwrap();
    assert_eq!(log.stages(), vec![Stage::DonPretrain, Stage::LstmOnly, Stage::JointFinetune]);
    let csv = log.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("stage,epoch,train_loss,val_mse,checkpointed"));
    assert_eq!(lines.count(), 18);
}

#[test]
fn missing_high_resolution_data_is_a_config_error() {
    let mut s = splits();
    s.high_train = None;
    let mut log = TrainingLog::default();
    let err = run_three_stage(fresh(5), DataSelector::Low, &s, &training(1, 5), 4, &mut log).unwrap_err();
    assert!(matches!(err, operon::Error::Config(_)), "{err}");
}

proptest! {
    #[test]
    fn rmse_never_below_mae(v in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..200)) {
        let (y, y_hat): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        prop_assert!(rmse(&y, &y_hat).unwrap() >= mae(&y, &y_hat).unwrap() * (1.0 - 1e-12));
    }

    #[test]
    fn rse_is_invariant_under_affine_maps(
        v in prop::collection::vec((-10f64..10.0, -10f64..10.0), 3..100),
        scale in prop_oneof![-100f64..-0.01, 0.01f64..100.0],
        shift in -100f64..100.0,
    ) {
        let (y, y_hat): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        prop_assume!(y.iter().any(|&a| (a - y[0]).abs() > 1e-3));
        let base = rse(&y, &y_hat).unwrap();
        let map = |s: &[f64]| s.iter().map(|a| scale * a + shift).collect::<Vec<_>>();
        let moved = rse(&map(&y), &map(&y_hat)).unwrap();
        prop_assert!((moved - base).abs() <= 1e-8 * base.max(1.0), "{base} vs {moved}");
    }

    #[test]
    fn ascent_focuses_on_the_larger_residual(
        r in prop::collection::vec(0.01f64..5.0, 2..20),
        eta in 1e-4f64..1e-1,
    ) {
        let n = r.len();
        let mut w = AdaptiveWeights::uniform(n, eta);
        let pred = Tensor::new(vec![1, n], r.clone()).unwrap();
        let target = Tensor::zeros(&[1, n]);
        w.update(&pred, &target).unwrap();
        w.normalize().unwrap();
        for i in 0..n {
            for j in 0..n {
                if r[i] > r[j] * (1.0 + 1e-9) {
                    prop_assert!(w.lambdas()[i] > w.lambdas()[j]);
                }
            }
        }
        prop_assert!((w.mask_sum() - 1.0).abs() <= 1e-12);
    }
}
