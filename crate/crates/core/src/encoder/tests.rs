use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::sync::Arc;

use super::*;
use crate::numerics::{CustomOp, Tensor};

fn small_cfg(layers: usize) -> EncoderConfig {
    EncoderConfig {
        d_model: 8,
        heads: 2,
        ff_size: 12,
        layers,
        dropout_in: 0.1,
        dropout_layer: 0.15,
    }
}

fn run(
    enc: &ContextEncoder,
    store: &ParamStore<f64>,
    inputs: &Tensor<f64>,
    lens: &[usize],
) -> Tensor<f64> {
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.constant(inputs.clone());
    let out = enc
        .encode(&mut g, &p, x, &Packing::from_lens(lens), &mut Dropout::Off)
        .unwrap();
    g.value(out).clone()
}

fn random_inputs(rows: usize, d: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_shape_fn((rows, d), |_| rng.random_range(-1.0..1.0))
}

fn max_row_diff(a: &Tensor<f64>, b: &Tensor<f64>, row: usize) -> f64 {
    a.row(row)
        .iter()
        .zip(b.row(row))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn output_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for variant in [EncoderVariant::Masked, EncoderVariant::Directional, EncoderVariant::Recurrent] {
        let mut store = ParamStore::new();
        let enc = ContextEncoder::new(&small_cfg(1), variant, 3, &mut store, &mut rng);
        let out = run(&enc, &store, &random_inputs(5, 8, &mut rng), &[5]);
        assert_eq!(out.dim(), (5, 8));
        let out = run(&enc, &store, &random_inputs(9, 8, &mut rng), &[5, 4]);
        assert_eq!(out.dim(), (9, 8));
    }
}

#[test]
fn masked_encoder_does_not_leak() {
    let k = 3;
    for layers in 1..=3 {
        let mut rng = ChaCha8Rng::seed_from_u64(layers as u64);
        let mut store = ParamStore::new();
        let enc = ContextEncoder::new(&small_cfg(layers), EncoderVariant::Masked, k, &mut store, &mut rng);
        let n = 9; // prefixed length
        let base = random_inputs(n, 8, &mut rng);
        let out = run(&enc, &store, &base, &[n]);
        for t in 0..n {
            // original positions t..t+k-1 sit at prefixed rows t+1..=t+k
            let mut perturbed = base.clone();
            for row in t + 1..(t + k + 1).min(n) {
                for c in 0..8 {
                    perturbed[[row, c]] += rng.random_range(-3.0..3.0);
                }
            }
            let out2 = run(&enc, &store, &perturbed, &[n]);
            assert!(max_row_diff(&out, &out2, t) <= 1e-12, "layers {layers} t {t}");
        }
        // sanity: the perturbation is visible somewhere
        let mut perturbed = base.clone();
        perturbed[[1, 0]] += 1.0;
        let out2 = run(&enc, &store, &perturbed, &[n]);
        assert!(max_row_diff(&out, &out2, 1) > 1e-6);
    }
}

#[test]
fn causal_encoders_ignore_the_future() {
    for variant in [EncoderVariant::Directional, EncoderVariant::Recurrent] {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut store = ParamStore::new();
        let enc = ContextEncoder::new(&small_cfg(2), variant, 3, &mut store, &mut rng);
        let lens = [7, 4];
        let base = random_inputs(11, 8, &mut rng);
        let out = run(&enc, &store, &base, &lens);
        for t in 0..7 {
            let mut perturbed = base.clone();
            for row in t + 1..7 {
                for c in 0..8 {
                    perturbed[[row, c]] += rng.random_range(-3.0..3.0);
                }
            }
            let out2 = run(&enc, &store, &perturbed, &lens);
            assert!(max_row_diff(&out, &out2, t) <= 1e-12, "{variant:?} t {t}");
            // the other sequence is untouched entirely
            for r in 7..11 {
                assert!(max_row_diff(&out, &out2, r) <= 1e-12);
            }
        }
    }
}

#[test]
fn zero_lstm_gives_zero_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f64>::new();
    let enc = ContextEncoder::new(&small_cfg(1), EncoderVariant::Recurrent, 3, &mut store, &mut rng);
    for v in store.values_mut() {
        v.fill(0.0);
    }
    let out = run(&enc, &store, &random_inputs(6, 8, &mut rng), &[6]);
    assert!(out.iter().all(|&v| v == 0.0));
}

#[test]
fn mask_count_and_size_are_checked() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f64>::new();
    let enc = TransformerEncoder::new(&small_cfg(1), EncoderVariant::Masked, 2, &mut store, &mut rng);
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.constant(random_inputs(4, 8, &mut rng));
    let packing = Packing::from_lens(&[4]);
    let wrong = vec![build_segmental_mask(5, 2)];
    assert!(enc.encode(&mut g, &p, x, &packing, &wrong, &mut Dropout::Off).is_err());
    assert!(enc.encode(&mut g, &p, x, &packing, &[], &mut Dropout::Off).is_err());
}

#[test]
fn dropout_only_in_training() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let enc = ContextEncoder::new(&small_cfg(1), EncoderVariant::Masked, 2, &mut store, &mut rng);
    let inputs = random_inputs(5, 8, &mut rng);
    let a = run(&enc, &store, &inputs, &[5]);
    let b = run(&enc, &store, &inputs, &[5]);
    assert_eq!(a, b);
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.constant(inputs.clone());
    let mut drng = ChaCha8Rng::seed_from_u64(9);
    let out = enc
        .encode(&mut g, &p, x, &Packing::from_lens(&[5]), &mut Dropout::On(&mut drng))
        .unwrap();
    assert_ne!(g.value(out), &a);
}

#[test]
fn default_parameter_budget() {
    let cfg = EncoderConfig::default();
    let transformer = encoder_parameter_count(&cfg, EncoderVariant::Masked, 5);
    let directional = encoder_parameter_count(&cfg, EncoderVariant::Directional, 5);
    let recurrent = encoder_parameter_count(&cfg, EncoderVariant::Recurrent, 5);
    assert_eq!(transformer, 592_381);
    assert_eq!(directional, transformer);
    assert_eq!(recurrent, 592_640);
    assert!(transformer <= recurrent);
}

#[test]
fn config_validation() {
    let mut cfg = EncoderConfig::default();
    assert!(cfg.validate(EncoderVariant::Masked).is_empty());
    cfg.heads = 3;
    cfg.dropout_in = 1.5;
    let errs = cfg.validate(EncoderVariant::Masked);
    assert_eq!(errs.len(), 2, "{errs:?}");
    assert!(cfg.validate(EncoderVariant::Recurrent).len() == 1);
}

#[test]
fn fused_lstm_gates_match_the_textbook_cell() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (m, d) = (3, 4);
    let zx = random_inputs(m, 4 * d, &mut rng);
    let zh = random_inputs(m, 4 * d, &mut rng);
    let bi = random_inputs(1, 4 * d, &mut rng);
    let bh = random_inputs(1, 4 * d, &mut rng);
    let c = random_inputs(m, d, &mut rng);
    let op = LstmGates { hidden: d };
    let out = CustomOp::<f64>::forward(&op, &[&zx, &zh, &bi, &bh, &c]).unwrap();
    assert_eq!(out.dim(), (m, LSTM_STATE_WIDTH * d));
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    for r in 0..m {
        for j in 0..d {
            let z = |k: usize| zx[[r, k * d + j]] + zh[[r, k * d + j]] + bi[[0, k * d + j]] + bh[[0, k * d + j]];
            let cn = sig(z(1)) * c[[r, j]] + sig(z(0)) * z(2).tanh();
            let h = sig(z(3)) * cn.tanh();
            assert!((out[[r, d + j]] - cn).abs() < 1e-12);
            assert!((out[[r, j]] - h).abs() < 1e-12);
        }
    }
}

#[test]
fn fused_lstm_gates_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (m, d) = (2, 3);
    let inputs = vec![
        random_inputs(m, 4 * d, &mut rng),
        random_inputs(m, 4 * d, &mut rng),
        random_inputs(1, 4 * d, &mut rng),
        random_inputs(1, 4 * d, &mut rng),
        random_inputs(m, d, &mut rng),
        random_inputs(m, 4 * d, &mut rng),
        random_inputs(m, 4 * d, &mut rng),
    ];
    // only the h and c columns carry gradient; the rest is bookkeeping
    let mut weights = random_inputs(m, LSTM_STATE_WIDTH * d, &mut rng);
    weights.slice_mut(ndarray::s![.., 2 * d..]).fill(0.0);
    let err = crate::numerics::grad_check_many(
        |g, v| {
            let op: Arc<dyn CustomOp<f64>> = Arc::new(LstmGates { hidden: d });
            // two chained steps: a bare cell state first, then a full state
            let s1 = g.custom(op.clone(), &[v[0], v[1], v[2], v[3], v[4]])?;
            let s2 = g.custom(op, &[v[5], v[6], v[2], v[3], s1])?;
            let w = g.constant(weights.clone());
            let h1 = g.slice_cols(s1, 0, 2 * d)?;
            let weighted = g.mul(s2, w)?;
            let a = g.sum(weighted)?;
            let b = g.sum(h1)?;
            g.add(a, b)
        },
        &inputs,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}
