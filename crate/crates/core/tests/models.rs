use proptest::prelude::*;
use rand::Rng;

use operon::adaptive::{AdaptiveWeights, LossKind};
use operon::deeponet::{DeepOnetConfig, QueryGrid, TrunkScaling};
use operon::donlstm::Stage;
use operon::model::{Architecture, BatchObjective, Network};
use operon::nn::{finite_difference_check, Activation, Tensor};
use operon::rng;

const SENSORS: usize = 12;

fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn small_config() -> DeepOnetConfig {
    DeepOnetConfig {
        sensors: SENSORS,
        branch_widths: vec![9, 7],
        branch_activations: vec![Activation::Swish, Activation::Linear],
        trunk_widths: vec![8, 7],
        trunk_activations: vec![Activation::Swish, Activation::Swish],
        periodic: None,
    }
}

fn grid(n_t: usize) -> (Vec<f64>, QueryGrid) {
    let xs: Vec<f64> = (0..SENSORS).map(|j| j as f64 / SENSORS as f64).collect();
    let ts: Vec<f64> = (0..n_t).map(|i| 0.1 * i as f64).collect();
    let grid = QueryGrid::product(&xs, &ts);
    (xs, grid)
}

fn composite(seed: u64, hidden: usize) -> Network {
    let mut rng = rng::seeded(seed);
    let (xs, _) = grid(1);
    let don = Network::deeponet(small_config(), TrunkScaling::fit(&xs, &[0.0, 1.0]).unwrap(), &mut rng).unwrap();
    don.extend_with_lstm(SENSORS, hidden, &mut rng).unwrap()
}

fn parts(net: &Network) -> &operon::donlstm::DonLstm {
    match &net.arch {
        Architecture::DonLstm(d) => d,
        _ => panic!("expected a don-lstm"),
    }
}

#[test]
fn zero_recurrent_blocks_leave_only_the_head_bias() {
    let mut net = composite(1, 5);
    let names: Vec<String> = net
        .params
        .layout()
        .iter()
        .map(|e| e.name.clone())
        .filter(|n| n.starts_with("lstm") || n.starts_with("head"))
        .collect();
    for name in names {
        let entry = net.params.entry(&name).unwrap().clone();
        net.params.values_mut()[entry.offset..entry.offset + entry.len()].fill(0.0);
    }
    let head = parts(&net).head.clone();
    for (k, v) in head.bias.slice_mut(net.params.values_mut()).iter_mut().enumerate() {
        *v = 0.25 * k as f64 - 1.0;
    }
    let mut rng = rng::seeded(2);
    let (_, g) = grid(4);
    let out = net.forward(&random_tensor(&[3, SENSORS], &mut rng), &g).unwrap();
    assert_eq!(out.shape(), &[3, 4 * SENSORS]);
    for (i, v) in out.data().iter().enumerate() {
        assert_eq!(*v, 0.25 * (i % SENSORS) as f64 - 1.0);
    }
}

#[test]
fn single_time_step_is_one_lstm_step_then_head() {
    let net = composite(3, 6);
    let d = parts(&net);
    let mut rng = rng::seeded(4);
    let u0 = random_tensor(&[2, SENSORS], &mut rng);
    let (_, g) = grid(1);
    let params = net.params.values();
    let flat = d.deeponet.forward(params, &u0, &g).unwrap();
    let zeros = Tensor::zeros(&[2, 6]);
    let (h, _) = d.lstm.step(params, &flat, &zeros, &zeros).unwrap();
    let expected = d.head.forward(params, &h).unwrap();
    let out = net.forward(&u0, &g).unwrap();
    assert_eq!(out.data(), expected.data());
}

#[test]
fn sequence_matches_step_by_step_evaluation() {
    let net = composite(5, 7);
    let d = parts(&net);
    let mut rng = rng::seeded(6);
    let u0 = random_tensor(&[2, SENSORS], &mut rng);
    let n_t = 5;
    let (_, g) = grid(n_t);
    let params = net.params.values();
    let flat = d.deeponet.forward(params, &u0, &g).unwrap();
    let mut h = Tensor::zeros(&[2, 7]);
    let mut c = Tensor::zeros(&[2, 7]);
    let out = net.forward(&u0, &g).unwrap();
    for t in 0..n_t {
        let rows: Vec<Vec<f64>> = (0..2)
            .map(|s| flat.row(s)[t * SENSORS..(t + 1) * SENSORS].to_vec())
            .collect();
        let x_t = Tensor::from_rows(&rows).unwrap();
        (h, c) = d.lstm.step(params, &x_t, &h, &c).unwrap();
        let y = d.head.forward(params, &h).unwrap();
        for s in 0..2 {
            let got = &out.data()[(s * n_t + t) * SENSORS..(s * n_t + t + 1) * SENSORS];
            for (a, b) in got.iter().zip(y.row(s)) {
                assert!((a - b).abs() <= 1e-12, "t={t} s={s}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn stages_set_the_expected_trainable_masks() {
    let mut net = composite(7, 4);
    let don_len = net
        .params
        .layout()
        .iter()
        .filter(|e| e.name.starts_with("don."))
        .map(|e| e.len())
        .sum::<usize>();
    net.set_stage(Stage::LstmOnly);
    assert_eq!(net.params.frozen_count(), don_len);
    assert!(net.params.trainable()[don_len..].iter().all(|&t| t));
    net.set_stage(Stage::JointFinetune);
    assert_eq!(net.params.frozen_count(), 0);
}

#[test]
fn frozen_entries_get_zero_gradient() {
    let mut net = composite(8, 4);
    net.set_stage(Stage::LstmOnly);
    let mut rng = rng::seeded(9);
    let (_, g) = grid(3);
    let u0 = random_tensor(&[2, SENSORS], &mut rng);
    let target = random_tensor(&[2, g.len()], &mut rng);
    let obj = BatchObjective {
        net: &net,
        u0: &u0,
        grid: &g,
        target: &target,
        loss: LossKind::Mse,
    };
    let (_, grad) = operon::nn::compute_gradients(&obj, &net.params, 0).unwrap();
    for (gv, t) in grad.iter().zip(net.params.trainable()) {
        if !t {
            assert_eq!(*gv, 0.0);
        }
    }
    assert!(grad.iter().any(|v| *v != 0.0));
}

#[test]
fn extending_a_composite_is_refused() {
    let net = composite(10, 3);
    let mut rng = rng::seeded(11);
    let err = net.extend_with_lstm(SENSORS, 3, &mut rng).unwrap_err();
    assert!(err.to_string().contains("bare deeponet"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gradients_match_finite_differences_for_random_shapes(
        seed in 0u64..1000,
        hidden in 1usize..6,
        n_t in 1usize..5,
        batch in 1usize..4,
        adaptive in any::<bool>(),
        joint in any::<bool>(),
    ) {
        let mut net = composite(seed, hidden);
        net.set_stage(if joint { Stage::JointFinetune } else { Stage::LstmOnly });
        let mut rng = rng::seeded(seed + 1);
        let (_, g) = grid(n_t);
        let u0 = random_tensor(&[batch, SENSORS], &mut rng);
        let target = random_tensor(&[batch, g.len()], &mut rng);
        let lambdas: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(0.1..1.0)).collect();
        let weights = AdaptiveWeights::from_lambdas(lambdas, 1e-3).unwrap();
        let obj = BatchObjective {
            net: &net,
            u0: &u0,
            grid: &g,
            target: &target,
            loss: if adaptive { LossKind::Adaptive(&weights) } else { LossKind::Mse },
        };
        let report = finite_difference_check(&obj, &net.params, 40, 1e-5, &mut rng).unwrap();
        prop_assert!(report.passed(), "{}", report);
    }
}
