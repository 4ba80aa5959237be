use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::run::{train, MetricRecord, RunOptions, RunOutcome, TrainData};
use super::{TrainConfig, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// Highest validation boundary MCC (light supervision).
    Mcc,
    /// Lowest validation bits per character (no supervision).
    Bpc,
}

impl std::str::FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mcc" => Ok(Criterion::Mcc),
            "bpc" => Ok(Criterion::Bpc),
            other => Err(format!("unknown criterion {other:?} (expected mcc or bpc)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub lr: f64,
    pub seed: u64,
    pub records: Vec<MetricRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub lr: f64,
    pub seed: u64,
    pub step: usize,
    pub value: f64,
}

fn score(r: &MetricRecord, criterion: Criterion) -> Option<f64> {
    match criterion {
        Criterion::Mcc => r.val_mcc.filter(|v| v.is_finite()),
        Criterion::Bpc => Some(r.val_bpc).filter(|v| v.is_finite()).map(|v| -v),
    }
}

/// Best checkpoint across every run by `criterion`. Ties go to the lower
/// learning rate, then the lower seed, then the earlier step.
pub fn select(sweep: &SweepResult, criterion: Criterion) -> Option<Selection> {
    let mut best: Option<(f64, Selection)> = None;
    for run in &sweep.runs {
        for r in &run.records {
            let Some(s) = score(r, criterion) else { continue };
            let cand = Selection {
                lr: run.lr,
                seed: run.seed,
                step: r.step,
                value: if criterion == Criterion::Bpc { r.val_bpc } else { s },
            };
            let better = match &best {
                None => true,
                Some((b, sel)) => {
                    s > *b
                        || (s == *b
                            && (cand.lr, cand.seed, cand.step)
                                .partial_cmp(&(sel.lr, sel.seed, sel.step))
                                .is_some_and(|o| o.is_lt()))
                }
            };
            if better {
                best = Some((s, cand));
            }
        }
    }
    best.map(|(_, s)| s)
}

/// Runs every `(lr, seed)` pair on `base`, each in its own subdirectory of
/// `out_dir`.
pub fn sweep(
    base: &TrainConfig,
    data: &TrainData,
    lrs: &[f64],
    seeds: &[u64],
    out_dir: Option<&Path>,
    embeddings: Option<&Array2<f64>>,
) -> Result<(SweepResult, Vec<RunOutcome>), TrainError> {
    let mut result = SweepResult::default();
    let mut outcomes = Vec::new();
    for &seed in seeds {
        for &lr in lrs {
            let mut cfg = base.clone();
            cfg.lr = lr;
            cfg.seed = seed;
            let opts = RunOptions {
                out_dir: out_dir.map(|d| d.join(cfg.run_id())),
                init_embeddings: embeddings.cloned(),
                ..RunOptions::default()
            };
            let outcome = train(&cfg, data, opts)?;
            result.runs.push(RunSummary {
                lr,
                seed,
                records: outcome.records.clone(),
            });
            outcomes.push(outcome);
        }
    }
    Ok((result, outcomes))
}

/// Learning rates tuned on the first seed, then both finalists rerun on the
/// remaining seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub tuning: SweepResult,
    pub mcc_choice: Option<Selection>,
    pub bpc_choice: Option<Selection>,
    pub finals: SweepResult,
}

pub fn two_stage_sweep(
    base: &TrainConfig,
    data: &TrainData,
    out_dir: Option<&Path>,
    embeddings: Option<&Array2<f64>>,
) -> Result<SweepReport, TrainError> {
    let seeds = &base.sweep.seeds;
    let first = seeds.first().copied().unwrap_or(base.seed);
    let (tuning, _) = sweep(base, data, &base.sweep.lrs, &[first], out_dir, embeddings)?;
    let mcc_choice = select(&tuning, Criterion::Mcc);
    let bpc_choice = select(&tuning, Criterion::Bpc);
    let mut finalists: Vec<f64> = mcc_choice.iter().chain(&bpc_choice).map(|s| s.lr).collect();
    finalists.sort_by(f64::total_cmp);
    finalists.dedup();
    let rest: Vec<u64> = seeds.iter().skip(1).copied().collect();
    let (finals, _) = if rest.is_empty() || finalists.is_empty() {
        (SweepResult::default(), Vec::new())
    } else {
        sweep(base, data, &finalists, &rest, out_dir, embeddings)?
    };
    Ok(SweepReport {
        tuning,
        mcc_choice,
        bpc_choice,
        finals,
    })
}
