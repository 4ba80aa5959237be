use proptest::prelude::*;

use super::*;
use crate::corpus::CharSequence;
use crate::encoder::{EncoderConfig, EncoderVariant};
use crate::model::{ModelConfig, SegmentalModel};

fn pair(hyp: &str, reference: &str) -> (Vec<Segmentation>, Vec<Segmentation>) {
    parse_pairs(&[hyp], &[reference]).unwrap()
}

#[test]
fn identical_segmentations() {
    let (h, r) = pair("ab c de", "ab c de");
    let w = word_prf(&h, &r).unwrap();
    assert_eq!((w.precision, w.recall, w.f1), (100.0, 100.0, 100.0));
    let b = boundary_stats(&h, &r).unwrap();
    assert_eq!((b.precision, b.recall, b.mcc), (100.0, 100.0, 1.0));
}

#[test]
fn crafted_word_scores() {
    let (h, r) = pair("a b c", "ab c");
    let w = word_prf(&h, &r).unwrap();
    assert_eq!((w.correct, w.hyp_words, w.ref_words), (1, 3, 2));
    assert_eq!(w.precision, 100.0 / 3.0);
    assert_eq!(w.recall, 50.0);
    assert!((w.f1 - 40.0).abs() < 1e-12);

    let (h, r) = pair("abc", "ab c");
    let w = word_prf(&h, &r).unwrap();
    assert_eq!((w.precision, w.recall, w.f1), (0.0, 0.0, 0.0));
}

#[test]
fn crafted_boundary_scores() {
    let (h, r) = pair("a bcd", "ab cd");
    let b = boundary_stats(&h, &r).unwrap();
    assert_eq!((b.tp, b.fp, b.fn_, b.tn), (0, 1, 1, 1));
    // (0*1 - 1*1) / sqrt(1 * 1 * 2 * 2)
    assert_eq!(b.mcc, -0.5);
}

#[test]
fn over_segmentation() {
    let (h, r) = pair("a b c d e", "ab cde");
    let b = boundary_stats(&h, &r).unwrap();
    assert_eq!(b.recall, 100.0);
    assert_eq!(b.precision, 25.0);
}

#[test]
fn mcc_degenerate_marginals() {
    assert_eq!(mcc(0, 0, 3, 4), 0.0);
    assert_eq!(mcc(3, 0, 0, 0), 0.0);
}

#[test]
fn different_text_is_rejected() {
    let err = parse_pairs(&["ab c"], &["ab d"]).unwrap_err();
    assert!(err.to_string().contains("segmentation of different text"));
    let h = vec![Segmentation::new(vec![2], 2).unwrap()];
    let r = vec![Segmentation::new(vec![1, 2], 3).unwrap()];
    assert!(matches!(word_prf(&h, &r), Err(EvalError::DifferentText { line: 0 })));
    assert!(matches!(
        boundary_stats(&h, &[]),
        Err(EvalError::LineCount { .. })
    ));
}

#[test]
fn average_length() {
    let segs = vec![Segmentation::singletons(4), Segmentation::singletons(2)];
    assert_eq!(avg_word_length(&segs).unwrap(), 1.0);
    let (_, r) = pair("ab c", "ab c");
    assert_eq!(avg_word_length(&r).unwrap(), 1.5);
    assert!(avg_word_length(&[]).is_err());
}

fn uniform_model(vocab: usize, k: usize) -> SegmentalModel<f64> {
    let cfg = ModelConfig::new(
        EncoderVariant::Masked,
        k,
        EncoderConfig {
            d_model: 8,
            heads: 2,
            ff_size: 8,
            layers: 1,
            dropout_in: 0.1,
            dropout_layer: 0.15,
        },
    );
    let mut model = SegmentalModel::new(&cfg, vocab, 0);
    for name in ["decoder.out.w", "decoder.out.b"] {
        let id = model.params().id(name).unwrap();
        model.params_mut().get_mut(id).fill(0.0);
    }
    model
}

#[test]
fn uniform_model_bpc() {
    let vocab = 11;
    let model = uniform_model(vocab, 1);
    let seqs: Vec<&[usize]> = vec![&[5], &[7], &[10], &[5]];
    let got = bpc(&model, &seqs, 2).unwrap();
    let want = 2.0 * (vocab as f64).log2();
    assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
    let doubled: Vec<&[usize]> = seqs.iter().chain(&seqs).copied().collect();
    assert!((bpc(&model, &doubled, 3).unwrap() - got).abs() < 1e-12);
}

#[test]
fn bpc_tracks_likelihood() {
    assert!(bpc_from_loglik(&[-3.0], 2).unwrap() > bpc_from_loglik(&[-2.0], 2).unwrap());
    assert!(bpc_from_loglik(&[], 0).is_err());
}

#[test]
fn evaluate_reports_everything() {
    let model = uniform_model(9, 2);
    let seqs = vec![
        CharSequence {
            ids: vec![5, 6, 7],
            gold: Some(vec![2]),
        },
        CharSequence {
            ids: vec![8],
            gold: Some(vec![]),
        },
    ];
    let (report, hyp) = evaluate(&model, &seqs, 16).unwrap();
    assert_eq!(hyp.len(), 2);
    assert!(report.bpc > 0.0);
    assert!((0.0..=100.0).contains(&report.word_f1));
    assert!(format!("{report}").contains("boundary MCC"));
}

fn segmentation_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (2usize..20).prop_flat_map(|n| {
        let cuts = proptest::collection::vec(any::<bool>(), n - 1);
        (Just(n), cuts.clone(), cuts)
    })
    .prop_map(|(n, a, b)| {
        let pick = |c: Vec<bool>| (1..n).filter(|&i| c[i - 1]).collect::<Vec<_>>();
        let mut a = pick(a);
        a.push(n);
        let mut b = pick(b);
        b.push(n);
        (a, b)
    })
}

fn from_cuts(cuts: &[usize]) -> Segmentation {
    let n = *cuts.last().unwrap();
    Segmentation::from_boundaries(&cuts[..cuts.len() - 1], n).unwrap()
}

proptest! {
    #[test]
    fn precision_recall_swap((a, b) in segmentation_strategy()) {
        let (h, r) = (vec![from_cuts(&a)], vec![from_cuts(&b)]);
        let fwd = word_prf(&h, &r).unwrap();
        let back = word_prf(&r, &h).unwrap();
        prop_assert_eq!(fwd.precision, back.recall);
        prop_assert_eq!(fwd.recall, back.precision);
        if fwd.precision + fwd.recall > 0.0 {
            let hm = 2.0 * fwd.precision * fwd.recall / (fwd.precision + fwd.recall);
            prop_assert!((fwd.f1 - hm).abs() <= 1e-12);
        }
        prop_assert!((0.0..=100.0).contains(&fwd.f1));
    }

    #[test]
    fn confusion_covers_internal_positions((a, b) in segmentation_strategy()) {
        let (h, r) = (vec![from_cuts(&a)], vec![from_cuts(&b)]);
        let s = boundary_stats(&h, &r).unwrap();
        prop_assert_eq!(s.tp + s.fp + s.fn_ + s.tn, a.last().unwrap() - 1);
        prop_assert!((-1.0..=1.0).contains(&s.mcc));
    }

    #[test]
    fn merging_never_raises_recall((a, b) in segmentation_strategy(), which in any::<prop::sample::Index>()) {
        let (h, r) = (vec![from_cuts(&a)], vec![from_cuts(&b)]);
        let before = boundary_stats(&h, &r).unwrap().recall;
        if a.len() > 1 {
            let mut merged = a.clone();
            merged.remove(which.index(a.len() - 1));
            let after = boundary_stats(&[from_cuts(&merged)], &r).unwrap().recall;
            prop_assert!(after <= before);
        }
    }
}
