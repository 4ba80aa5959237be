use std::sync::Arc;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::EOSEG;
use crate::encoder::Packing;
use crate::numerics::{grad_check, Dropout, Graph, ParamStore, Tensor};

fn random_lattice(n: usize, k: usize, rng: &mut ChaCha8Rng) -> SegmentLattice {
    SegmentLattice::from_fn(n, k, |_, _| rng.random_range(-6.0..0.0)).unwrap()
}

#[test]
fn single_character() {
    let lat = SegmentLattice::from_fn(1, 3, |_, _| -0.7).unwrap();
    assert_eq!(forward_marginal(&lat), -0.7);
    let (seg, score) = viterbi(&lat);
    assert_eq!(seg.lengths(), &[1]);
    assert_eq!(score, -0.7);
}

#[test]
fn four_segmentations_of_three() {
    assert_eq!(enumerate_segmentations(3, 3).unwrap().len(), 4);
    // every segment scored log 0.5: 1/8 + 1/4 + 1/4 + 1/2
    let lat = SegmentLattice::from_fn(3, 3, |_, _| 0.5f64.ln()).unwrap();
    assert!((forward_marginal(&lat) - 1.125f64.ln()).abs() < 1e-12);
    assert!((brute_force_marginal(&lat).unwrap() - 1.125f64.ln()).abs() < 1e-12);
    // log 0.5 per character: each of the four segmentations has mass 1/8
    let lat = SegmentLattice::from_fn(3, 3, |_, l| l as f64 * 0.5f64.ln()).unwrap();
    assert!((forward_marginal(&lat) - 0.5f64.ln()).abs() < 1e-12);
}

#[test]
fn enumeration_counts() {
    for n in 1..=12 {
        assert_eq!(enumerate_segmentations(n, n).unwrap().len(), 1 << (n - 1));
        assert_eq!(enumerate_segmentations(n, 1).unwrap().len(), 1);
    }
    assert!(matches!(
        enumerate_segmentations(17, 3),
        Err(LatticeError::TooLong { n: 17, .. })
    ));
    let lat = SegmentLattice::from_fn(17, 2, |_, _| -1.0).unwrap();
    assert!(brute_force_marginal(&lat).is_err());
}

#[test]
fn absent_entries() {
    let lat = SegmentLattice::from_fn(3, 5, |_, _| -1.0).unwrap();
    assert_eq!(lat.get(0, 3), Some(-1.0));
    assert_eq!(lat.get(0, 4), None);
    assert_eq!(lat.get(2, 2), None);
    assert_eq!(lat.get(1, 0), None);
    assert!(SegmentLattice::from_fn(2, 2, |_, _| f64::NAN).is_err());
    assert!(SegmentLattice::from_fn(0, 2, |_, _| 0.0).is_err());
}

#[test]
fn dominant_first_segment() {
    let lat = SegmentLattice::from_fn(4, 3, |i, l| if (i, l) == (0, 2) { -0.01 } else { -5.0 }).unwrap();
    assert_eq!(viterbi(&lat).0.lengths()[0], 2);
}

#[test]
fn ties_prefer_shorter_final_segment() {
    // every path through n=2 scores -2 when (0,2) is -2 and singles are -1
    let lat = SegmentLattice::from_fn(2, 2, |_, l| -(l as f64)).unwrap();
    let (seg, score) = viterbi(&lat);
    assert_eq!(seg.lengths(), &[1, 1]);
    assert_eq!(score, -2.0);
}

#[test]
fn oracle_agreement_many_seeds() {
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=12);
        let k = rng.random_range(1..=5);
        let lat = random_lattice(n, k, &mut rng);
        let fm = forward_marginal(&lat);
        let bm = brute_force_marginal(&lat).unwrap();
        assert!((fm - bm).abs() <= 1e-4, "seed {seed}: {fm} vs {bm}");
        let (seg, score) = viterbi(&lat);
        let (best, best_score) = brute_force_best(&lat).unwrap();
        assert_eq!(score, best_score, "seed {seed}");
        assert_eq!(seg, best, "seed {seed}");
        assert!(score <= fm + 1e-12);
        assert!(seg.lengths().iter().all(|&l| l <= k));
        assert_eq!(seg.total(), n);
    }
}

#[test]
fn viterbi_equals_marginal_with_one_live_path() {
    let lat = SegmentLattice::from_fn(5, 3, |i, l| match (i, l) {
        (0, 2) | (2, 3) => -0.3,
        _ => f64::NEG_INFINITY,
    })
    .unwrap();
    let (seg, score) = viterbi(&lat);
    assert_eq!(seg.lengths(), &[2, 3]);
    assert_eq!(score, forward_marginal(&lat));
}

#[test]
fn ties_keep_the_brute_force_score() {
    // integer-valued entries make exact ties common
    for seed in 0..300u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=10);
        let k = rng.random_range(1..=4);
        let lat = SegmentLattice::from_fn(n, k, |_, _| -(rng.random_range(0..3) as f64)).unwrap();
        assert_eq!(viterbi(&lat).1, brute_force_best(&lat).unwrap().1);
    }
}

proptest! {
    #[test]
    fn marginal_bounds(seed in any::<u64>(), n in 1usize..10, k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lat = random_lattice(n, k, &mut rng);
        let alphas = lat.alphas();
        let betas = lat.betas();
        prop_assert!((alphas[n] - betas[0]).abs() < 1e-9);
        prop_assert!(viterbi(&lat).1 <= alphas[n] + 1e-12);
    }
}

fn packed(lats: &[SegmentLattice], k: usize) -> (Tensor<f64>, Packing) {
    let lens: Vec<usize> = lats.iter().map(|l| l.n()).collect();
    let packing = Packing::from_lens(&lens);
    let mut x = Array2::from_elem((packing.total(), k), -1e3);
    for (lat, &off) in lats.iter().zip(&packing.offsets) {
        for i in 0..lat.n() {
            for l in 1..=k {
                if let Some(v) = lat.get(i, l) {
                    x[[off + i, l - 1]] = v;
                }
            }
        }
    }
    (x, packing)
}

#[test]
fn marginal_op_matches_plain_lattice() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let k = 3;
    let lats: Vec<_> = [4, 1, 6].iter().map(|&n| random_lattice(n, k, &mut rng)).collect();
    let (x, packing) = packed(&lats, k);
    let mut g = Graph::new();
    let xv = g.constant(x);
    let out = g.custom(Arc::new(ForwardMarginal::new(packing, k)), &[xv]).unwrap();
    for (s, lat) in lats.iter().enumerate() {
        assert_eq!(g.value(out)[[s, 0]], forward_marginal(lat));
    }
}

#[test]
fn marginal_op_gradient() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(1..=4);
        let lats: Vec<_> = (0..3)
            .map(|_| {
                let n = rng.random_range(1..=7);
                random_lattice(n, k, &mut rng)
            })
            .collect();
        let (x, packing) = packed(&lats, k);
        let weights = Array2::from_shape_fn((3, 1), |_| rng.random_range(-1.0..1.0));
        let err = grad_check(
            |g, v| {
                let m = g.custom(Arc::new(ForwardMarginal::new(packing.clone(), k)), &[v])?;
                let w = g.constant(weights.clone());
                let m = g.mul(m, w)?;
                g.sum(m)
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn marginal_op_posteriors_sum_to_segment_count() {
    // each character is covered by exactly one segment, so the posteriors of
    // segments covering any fixed position sum to one
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let lat = random_lattice(8, 4, &mut rng);
    let (x, packing) = packed(std::slice::from_ref(&lat), 4);
    let mut g = Graph::new();
    let xv = g.param(x);
    let out = g.custom(Arc::new(ForwardMarginal::new(packing, 4)), &[xv]).unwrap();
    let s = g.sum(out).unwrap();
    let grads = g.backward(s);
    let post = grads.get(xv).unwrap();
    for pos in 0..8 {
        let mut covered = 0.0;
        for i in 0..=pos {
            for l in 1..=4 {
                if i + l > pos && lat.get(i, l).is_some() {
                    covered += post[[i, l - 1]];
                }
            }
        }
        assert!((covered - 1.0).abs() < 1e-12, "position {pos}: {covered}");
    }
}

struct DecoderFixture {
    store: ParamStore<f64>,
    decoder: SegmentDecoder,
    embedding: crate::numerics::ParamId,
    contexts: Tensor<f64>,
    seqs: Vec<Vec<usize>>,
    d: usize,
    vocab: usize,
    k: usize,
}

fn decoder_fixture(seed: u64) -> DecoderFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, vocab, k) = (6, 9, 3);
    let mut store = ParamStore::new();
    let embedding = store.normal("embedding", vocab, d, 0.5, &mut rng);
    let decoder = SegmentDecoder::new(d, vocab, k, 0.1, &mut store, &mut rng);
    let seqs: Vec<Vec<usize>> = vec![vec![5, 6, 7, 5], vec![8], vec![6, 6, 5, 8, 7]];
    let rows: usize = seqs.iter().map(|s| s.len() + 1).sum();
    let contexts = Array2::from_shape_fn((rows, d), |_| rng.random_range(-1.0..1.0));
    DecoderFixture {
        store,
        decoder,
        embedding,
        contexts,
        seqs,
        d,
        vocab,
        k,
    }
}

fn run_decoder(f: &DecoderFixture) -> (Vec<SegmentLattice>, Tensor<f64>) {
    let mut g = Graph::new();
    let p = f.store.bind(&mut g);
    let ctx = g.constant(f.contexts.clone());
    let refs: Vec<&[usize]> = f.seqs.iter().map(|s| s.as_slice()).collect();
    let lens: Vec<usize> = refs.iter().map(|s| s.len() + 1).collect();
    let (lat, layout) = f
        .decoder
        .segment_logprobs(&mut g, &p, ctx, &Packing::from_lens(&lens), &refs, p.var(f.embedding), &mut Dropout::Off)
        .unwrap();
    (layout.lattices(g.value(lat)).unwrap(), g.value(lat).clone())
}

#[test]
fn uniform_decoder() {
    let mut f = decoder_fixture(1);
    for name in ["decoder.out.w", "decoder.out.b"] {
        let id = f.store.id(name).unwrap();
        f.store.get_mut(id).fill(0.0);
    }
    let (lats, _) = run_decoder(&f);
    let unit = (1.0 / f.vocab as f64).ln();
    for lat in &lats {
        for i in 0..lat.n() {
            for l in 1..=f.k.min(lat.n() - i) {
                let want = (l + 1) as f64 * unit;
                assert!((lat.get(i, l).unwrap() - want).abs() < 1e-12);
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn log_softmax(z: &Array1<f64>) -> Array1<f64> {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + z.mapv(|v| (v - m).exp()).sum().ln();
    z.mapv(|v| v - lse)
}

/// Scores a single segment with a from-scratch LSTM, independent of the tape.
fn redecode(f: &DecoderFixture, ctx: &Array1<f64>, chars: &[usize]) -> f64 {
    let w = |n: &str| f.store.by_name(n).unwrap().clone();
    let row = |n: &str| w(n).row(0).to_owned();
    let d = f.d;
    let mut h = ctx.dot(&w("decoder.g_h.w")) + row("decoder.g_h.b");
    let mut c = Array1::<f64>::zeros(d);
    let mut input = ctx.dot(&w("decoder.g_start.w")) + row("decoder.g_start.b");
    let emb = w("embedding");
    let mut total = 0.0;
    for step in 0..=chars.len() {
        let z = input.dot(&w("decoder.lstm.w_ih"))
            + h.dot(&w("decoder.lstm.w_hh"))
            + row("decoder.lstm.b_ih")
            + row("decoder.lstm.b_hh");
        let gate = |q: usize| z.slice(ndarray::s![q * d..(q + 1) * d]).to_owned();
        let i = gate(0).mapv(sigmoid);
        let fg = gate(1).mapv(sigmoid);
        let cand = gate(2).mapv(f64::tanh);
        let o = gate(3).mapv(sigmoid);
        c = &fg * &c + &i * &cand;
        h = &o * &c.mapv(f64::tanh);
        let logp = log_softmax(&(h.dot(&w("decoder.out.w")) + row("decoder.out.b")));
        if step < chars.len() {
            total += logp[chars[step]];
            input = emb.row(chars[step]).to_owned();
        } else {
            total += logp[EOSEG];
        }
    }
    total
}

#[test]
fn lattice_matches_independent_redecoding() {
    for seed in 0..3 {
        let f = decoder_fixture(seed);
        let (lats, _) = run_decoder(&f);
        let mut ctx_row = 0;
        for (seq, lat) in f.seqs.iter().zip(&lats) {
            for i in 0..seq.len() {
                let ctx = f.contexts.row(ctx_row + i).to_owned();
                for l in 1..=f.k.min(seq.len() - i) {
                    let want = redecode(&f, &ctx, &seq[i..i + l]);
                    let got = lat.get(i, l).unwrap();
                    assert!((want - got).abs() <= 1e-6, "seed {seed} ({i},{l}): {got} vs {want}");
                    assert!(got <= 0.0);
                }
            }
            ctx_row += seq.len() + 1;
        }
    }
}

#[test]
fn telescoping_entries() {
    let f = decoder_fixture(4);
    let (lats, _) = run_decoder(&f);
    let seq = &f.seqs[2];
    let i = 1;
    // sequence 2 starts at context row 7 (rows 0..5 and 5..7 belong to the others)
    let ctx = f.contexts.row(7 + i).to_owned();
    for l in 1..f.k.min(seq.len() - i) {
        let diff = lats[2].get(i, l + 1).unwrap() - lats[2].get(i, l).unwrap();
        let want = redecode(&f, &ctx, &seq[i..i + l + 1]) - redecode(&f, &ctx, &seq[i..i + l]);
        assert!((diff - want).abs() < 1e-9);
    }
}

#[test]
fn decoder_rejects_mismatched_packing() {
    let f = decoder_fixture(0);
    let mut g = Graph::new();
    let p = f.store.bind(&mut g);
    let ctx = g.constant(f.contexts.clone());
    let refs: Vec<&[usize]> = f.seqs.iter().map(|s| s.as_slice()).collect();
    let wrong = Packing::from_lens(&[5, 2, 5]);
    assert!(f
        .decoder
        .segment_logprobs(&mut g, &p, ctx, &wrong, &refs, p.var(f.embedding), &mut Dropout::Off)
        .is_err());
}
