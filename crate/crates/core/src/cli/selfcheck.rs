//! Oracle checks runnable from an installed binary.
//!
//! Each check compares a fast code path with an independent slow one and
//! reports the worst discrepancy against a tolerance that depends on the
//! float mode (see [`Tolerances`]).

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::encoder::{
    build_directional_mask, build_segmental_mask, ContextEncoder, EncoderConfig, EncoderVariant, Packing,
};
use crate::eval::{boundary_stats, mcc, parse_pairs, word_prf};
use crate::lattice::{brute_force_best, brute_force_marginal, segmentation_score, viterbi, ForwardMarginal, SegmentLattice};
use crate::model::{ModelConfig, SegmentalModel};
use crate::numerics::{grad_check_many, BoundParams, Dropout, FloatMode, Graph, NumericsError, ParamStore, Scalar, Tensor};

/// Tolerances per float mode. The float32 column was calibrated on the fixed
/// seeds used here: worst marginal error 2.9e-6, worst relative gradient
/// error 1.2e-2 at a step of 1e-2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// |forward marginal - enumeration|, log domain.
    pub marginal: f64,
    /// Change of a context vector under a perturbation it must not see.
    pub leakage: f64,
    /// Relative gradient error against central differences.
    pub gradient: f64,
    /// Finite-difference step for the gradient check.
    pub grad_eps: f64,
}

impl Tolerances {
    pub fn for_mode(mode: FloatMode) -> Self {
        match mode {
            FloatMode::F64 => Tolerances {
                marginal: 1e-4,
                leakage: 1e-6,
                gradient: 1e-4,
                grad_eps: 1e-6,
            },
            FloatMode::F32 => Tolerances {
                marginal: 1e-3,
                leakage: 1e-4,
                gradient: 5e-2,
                grad_eps: 1e-2,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} worst {:.3e} (tolerance {:.1e}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.detail
        )
    }
}

fn result(name: &str, worst: f64, tolerance: f64, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed: worst <= tolerance,
        worst,
        tolerance,
        detail,
    }
}

fn failure(name: &str, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed: false,
        worst: f64::INFINITY,
        tolerance: 0.0,
        detail,
    }
}

/// Every check in the given precision.
pub fn run_all(mode: FloatMode, corrupt_mask: bool) -> Vec<CheckResult> {
    match mode {
        FloatMode::F32 => run_in::<f32>(corrupt_mask),
        FloatMode::F64 => run_in::<f64>(corrupt_mask),
    }
}

fn run_in<F: Scalar>(corrupt_mask: bool) -> Vec<CheckResult> {
    let tol = Tolerances::for_mode(F::MODE);
    vec![
        marginal_check::<F>(200, tol.marginal),
        viterbi_check(200),
        mask_check(),
        leakage_check::<F>(corrupt_mask, tol.leakage),
        causality_check::<F>(tol.leakage),
        gradient_check::<F>(tol),
        metric_check(),
    ]
}

/// A lattice with entries drawn uniformly from `[-6, 0)`.
pub fn random_lattice(rng: &mut impl Rng, n: usize, k: usize) -> SegmentLattice {
    SegmentLattice::from_fn(n, k, |_, _| rng.random_range(-6.0..0.0)).expect("finite entries")
}

/// Forward marginal, computed in precision `F` by the differentiable op.
fn marginal_in<F: Scalar>(lat: &SegmentLattice) -> Result<f64, NumericsError> {
    let (n, k) = (lat.n(), lat.k());
    let x = Tensor::from_shape_fn((n, k), |(i, c)| F::of(lat.get(i, c + 1).unwrap_or(0.0)));
    let op = ForwardMarginal::new(Packing::from_lens(&[n]), k);
    let mut g = Graph::<F>::new();
    let v = g.constant(x);
    let out = g.custom(Arc::new(op), &[v])?;
    Ok(g.scalar(out).as_f64())
}

pub fn marginal_check<F: Scalar>(count: usize, tolerance: f64) -> CheckResult {
    let name = "forward marginal vs enum";
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let n = rng.random_range(1..=12);
        let k = rng.random_range(1..=5);
        let lat = random_lattice(&mut rng, n, k);
        // round the entries to F first so both sides see the same lattice
        let lat = SegmentLattice::from_fn(n, k, |i, l| F::of(lat.get(i, l).unwrap_or(0.0)).as_f64()).expect("finite");
        let fast = match marginal_in::<F>(&lat) {
            Ok(v) => v,
            Err(e) => return failure(name, e.to_string()),
        };
        let slow = match brute_force_marginal(&lat) {
            Ok(v) => v,
            Err(e) => return failure(name, e.to_string()),
        };
        worst = worst.max((fast - slow).abs());
    }
    result(name, worst, tolerance, format!("{count} lattices, n <= 12, K <= 5"))
}

/// Viterbi must agree with enumeration exactly on score, and on the path
/// whenever the best score is unique.
pub fn viterbi_check(count: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0usize;
    let mut worst = 0.0f64;
    for _ in 0..count {
        let n = rng.random_range(1..=12);
        let k = rng.random_range(1..=5);
        let lat = random_lattice(&mut rng, n, k);
        let (seg, score) = viterbi(&lat);
        let Ok((best, best_score)) = brute_force_best(&lat) else {
            return failure("viterbi vs enum", "enumeration refused".into());
        };
        worst = worst.max((score - best_score).abs());
        if segmentation_score(&lat, seg.lengths()) != Some(score) {
            mismatches += 1;
        }
        if seg != best && score != best_score {
            mismatches += 1;
        }
    }
    let mut r = result("viterbi vs enum", worst, 0.0, format!("{count} lattices, {mismatches} path mismatches"));
    r.passed &= mismatches == 0;
    r
}

/// Exhaustive comparison of both masks with their closed forms.
pub fn mask_check() -> CheckResult {
    let mut wrong = 0usize;
    for n in 1..=20 {
        let dir = build_directional_mask(n);
        for i in 0..n {
            for j in 0..n {
                if dir.is_blocked(i, j) != (j > i) {
                    wrong += 1;
                }
            }
        }
        for k in 1..=8 {
            let m = build_segmental_mask(n, k);
            for i in 0..n {
                for j in 0..n {
                    let want = j > i && j - i <= k;
                    if m.is_blocked(i, j) != want {
                        wrong += 1;
                    }
                }
            }
        }
    }
    result("mask construction", wrong as f64, 0.0, "n <= 20, K <= 8".into())
}

fn small_encoder_cfg(layers: usize) -> EncoderConfig {
    EncoderConfig {
        d_model: 8,
        heads: 2,
        ff_size: 12,
        layers,
        dropout_in: 0.1,
        dropout_layer: 0.15,
    }
}

fn random_tensor<F: Scalar>(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor<F> {
    Tensor::from_shape_fn((rows, cols), |_| F::of(rng.random_range(-1.0..1.0)))
}

fn max_row_diff<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, row: usize) -> f64 {
    a.row(row)
        .iter()
        .zip(b.row(row))
        .map(|(x, y)| (*x - *y).abs().as_f64())
        .fold(0.0, f64::max)
}

/// Span-masked encoder outputs must not depend on the masked span, for one
/// to three layers. With `corrupt_mask` one blocked entry is opened, so the
/// check is expected to fail.
pub fn leakage_check<F: Scalar>(corrupt_mask: bool, tolerance: f64) -> CheckResult {
    let name = if corrupt_mask { "mslm leakage (corrupted)" } else { "mslm leakage" };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for layers in 1..=3 {
        for _ in 0..5 {
            let k = rng.random_range(1..=5);
            let n = rng.random_range(2..=16) + 1;
            let mut store = ParamStore::<F>::new();
            let enc = ContextEncoder::new(&small_encoder_cfg(layers), EncoderVariant::Masked, k, &mut store, &mut rng);
            let ContextEncoder::Transformer(t) = &enc else {
                return failure(name, "masked variant built a recurrent encoder".into());
            };
            let packing = Packing::from_lens(&[n]);
            let mut masks = t.masks_for(&packing);
            if corrupt_mask {
                masks[0].set_blocked(0, 1, false);
            }
            let run = |x: &Tensor<F>| -> Result<Tensor<F>, NumericsError> {
                let mut g = Graph::new();
                let p = store.bind(&mut g);
                let v = g.constant(x.clone());
                let out = t.encode(&mut g, &p, v, &packing, &masks, &mut Dropout::Off)?;
                Ok(g.value(out).clone())
            };
            let base = random_tensor::<F>(&mut rng, n, 8);
            let Ok(out) = run(&base) else {
                return failure(name, "encoder failed".into());
            };
            for t_pos in 0..n {
                let mut perturbed = base.clone();
                for row in t_pos + 1..(t_pos + k + 1).min(n) {
                    for c in 0..8 {
                        perturbed[[row, c]] += F::of(rng.random_range(-3.0..3.0));
                    }
                }
                let Ok(out2) = run(&perturbed) else {
                    return failure(name, "encoder failed".into());
                };
                worst = worst.max(max_row_diff(&out, &out2, t_pos));
                cases += 1;
            }
        }
    }
    result(name, worst, tolerance, format!("{cases} perturbations, 1-3 layers"))
}

/// Directional and recurrent encoders must ignore positions after `t`.
pub fn causality_check<F: Scalar>(tolerance: f64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for variant in [EncoderVariant::Directional, EncoderVariant::Recurrent] {
        for layers in 1..=2 {
            let mut store = ParamStore::<F>::new();
            let enc = ContextEncoder::new(&small_encoder_cfg(layers), variant, 3, &mut store, &mut rng);
            let n = 10;
            let packing = Packing::from_lens(&[n]);
            let run = |x: &Tensor<F>| -> Result<Tensor<F>, NumericsError> {
                let mut g = Graph::new();
                let p = store.bind(&mut g);
                let v = g.constant(x.clone());
                let out = enc.encode(&mut g, &p, v, &packing, &mut Dropout::Off)?;
                Ok(g.value(out).clone())
            };
            let base = random_tensor::<F>(&mut rng, n, 8);
            let Ok(out) = run(&base) else {
                return failure("causal encoders", "encoder failed".into());
            };
            for t in 0..n - 1 {
                let mut perturbed = base.clone();
                for row in t + 1..n {
                    for c in 0..8 {
                        perturbed[[row, c]] += F::of(rng.random_range(-3.0..3.0));
                    }
                }
                let Ok(out2) = run(&perturbed) else {
                    return failure("causal encoders", "encoder failed".into());
                };
                worst = worst.max(max_row_diff(&out, &out2, t));
            }
        }
    }
    result("causal encoders", worst, tolerance, "dmslm and rslm".into())
}

/// End-to-end loss gradients of a tiny model of each variant.
pub fn gradient_check<F: Scalar>(tol: Tolerances) -> CheckResult {
    let name = "end-to-end gradients";
    let mut worst = 0.0f64;
    for variant in [EncoderVariant::Masked, EncoderVariant::Directional, EncoderVariant::Recurrent] {
        let cfg = ModelConfig::new(variant, 3, small_encoder_cfg(1));
        let model = SegmentalModel::<F>::new(&cfg, 10, 4);
        let seqs: Vec<&[usize]> = vec![&[5, 6, 7, 5, 8, 9]];
        let err = grad_check_many(
            |g, vars| {
                let p = BoundParams::from_vars(vars.to_vec());
                model
                    .sequence_loss(g, &p, &seqs, &mut Dropout::Off)
                    .map(|(loss, _)| loss)
                    .map_err(|e| NumericsError::Invalid(e.to_string()))
            },
            model.params().values(),
            F::of(tol.grad_eps),
        );
        match err {
            Ok(e) => worst = worst.max(e.as_f64()),
            Err(e) => return failure(name, e.to_string()),
        }
    }
    result(name, worst, tol.gradient, "d=8, K=3, n=6, all variants".into())
}

/// Metric values on hand-counted examples.
pub fn metric_check() -> CheckResult {
    let mut worst = 0.0f64;
    let cases: [(&str, &str, [f64; 3]); 3] = [
        ("ab c de", "ab c de", [100.0, 100.0, 100.0]),
        ("a b c", "ab c", [100.0 / 3.0, 50.0, 40.0]),
        ("abc", "ab c", [0.0, 0.0, 0.0]),
    ];
    for (hyp, reference, want) in cases {
        let Ok((h, r)) = parse_pairs(&[hyp], &[reference]) else {
            return failure("metric oracles", format!("cannot parse {hyp:?}"));
        };
        let Ok(w) = word_prf(&h, &r) else {
            return failure("metric oracles", "word_prf failed".into());
        };
        for (got, want) in [w.precision, w.recall, w.f1].into_iter().zip(want) {
            worst = worst.max((got - want).abs());
        }
    }
    // one FP, one FN, one TN: (0*1 - 1*1) / sqrt(1*1*2*2) = -0.5
    match parse_pairs(&["a bcd"], &["ab cd"]).map(|(h, r)| boundary_stats(&h, &r)) {
        Ok(Ok(b)) => worst = worst.max((b.mcc - -0.5).abs()).max((mcc(0, 1, 1, 1) - -0.5).abs()),
        _ => return failure("metric oracles", "boundary_stats failed".into()),
    }
    result("metric oracles", worst, 1e-12, "word P/R/F1 and MCC".into())
}
