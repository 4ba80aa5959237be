use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{make_batches, Batch, CharSequence};
use crate::eval::{bpc, evaluate};
use crate::model::SegmentalModel;
use crate::numerics::{Dropout, FloatMode, Graph, Scalar, Tensor};

use super::checkpoint::{BestSoFar, Checkpoint, CheckpointMeta};
use super::optim::{clip_global_norm, Adam};
use super::schedule::lr_at;
use super::{TrainConfig, TrainError};

const DROPOUT_SALT: u64 = 0xD1B5_4A32_D192_ED03;
const SHUFFLE_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Encoded training and validation data sharing one vocabulary.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<CharSequence>,
    pub valid: Vec<CharSequence>,
    pub vocab_size: usize,
}

/// One line of the metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run_id: String,
    pub step: usize,
    pub lr: f64,
    /// Mean training loss (nats per character) since the previous record.
    pub train_loss: f64,
    pub val_bpc: f64,
    pub val_mcc: Option<f64>,
    pub val_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: usize,
    pub value: f64,
    pub checkpoint: Checkpoint,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Where logs and checkpoints go; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    pub resume: Option<Checkpoint>,
    /// Initial embedding table (ignored on resume).
    pub init_embeddings: Option<Array2<f64>>,
    /// Stop after this step even if `steps` is larger.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_id: String,
    pub records: Vec<MetricRecord>,
    /// `(step, loss)` for every update taken in this invocation.
    pub step_losses: Vec<(usize, f64)>,
    pub best_mcc: Option<Snapshot>,
    pub best_bpc: Option<Snapshot>,
    pub last: Checkpoint,
}

/// Batches in training order. Epoch `e` is shuffled with a seed derived
/// from the run seed and `e`, so the batch for any step can be recomputed.
struct BatchStream {
    lengths: Vec<usize>,
    budget: usize,
    seed: u64,
    epoch: u64,
    batches: Vec<Batch>,
    next: usize,
}

impl BatchStream {
    fn new(data: &[CharSequence], budget: usize, seed: u64) -> Self {
        let lengths: Vec<usize> = data.iter().map(|s| s.len()).collect();
        let batches = make_batches(&lengths, budget, Some(Self::epoch_seed(seed, 0)));
        BatchStream {
            lengths,
            budget,
            seed,
            epoch: 0,
            batches,
            next: 0,
        }
    }

    fn epoch_seed(seed: u64, epoch: u64) -> u64 {
        seed ^ (epoch + 1).wrapping_mul(SHUFFLE_SALT)
    }

    /// `(epoch, index within epoch, batch)`.
    fn next_batch(&mut self) -> (u64, usize, Batch) {
        if self.next == self.batches.len() {
            self.epoch += 1;
            self.batches = make_batches(&self.lengths, self.budget, Some(Self::epoch_seed(self.seed, self.epoch)));
            self.next = 0;
        }
        let i = self.next;
        self.next += 1;
        (self.epoch, i, self.batches[i].clone())
    }
}

/// Dropout generator for update `step`, independent of every other step.
fn dropout_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ DROPOUT_SALT);
    rng.set_stream(step as u64);
    rng
}

fn log_line(out_dir: &Option<PathBuf>, record: &MetricRecord) -> Result<(), TrainError> {
    if let Some(dir) = out_dir {
        let path = dir.join("metrics.jsonl");
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| TrainError::io(&path, e))?;
        writeln!(f, "{}", serde_json::to_string(record).expect("record serializes")).map_err(|e| TrainError::io(&path, e))?;
    }
    Ok(())
}

/// Trains one configuration, evaluating on the validation set and
/// checkpointing every `checkpoint_every` updates and after the last one.
pub fn train_run<F: Scalar>(cfg: &TrainConfig, data: &TrainData, opts: RunOptions) -> Result<RunOutcome, TrainError> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(TrainError::Config(super::ConfigError::Invalid(errs)));
    }
    if cfg.float != F::MODE {
        return Err(TrainError::Invalid(format!(
            "config asks for {} but the run was started in {}",
            cfg.float,
            F::MODE
        )));
    }
    if data.train.is_empty() || data.train.iter().any(|s| s.is_empty()) {
        return Err(TrainError::Invalid("training data must be non-empty sequences".into()));
    }
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
    }
    let run_id = cfg.run_id();
    let mut model = SegmentalModel::<F>::new(&cfg.model(), data.vocab_size, cfg.seed);
    let mut adam = Adam::new(model.params().values().iter().map(|t| t.dim()));
    let mut start = 0;
    let mut best_mcc_val: Option<BestSoFar> = None;
    let mut best_bpc_val: Option<BestSoFar> = None;
    if let Some(ckpt) = &opts.resume {
        if ckpt.meta.vocab_size != data.vocab_size {
            return Err(TrainError::Invalid(format!(
                "checkpoint vocabulary has {} entries, data has {}",
                ckpt.meta.vocab_size, data.vocab_size
            )));
        }
        model.load_values(ckpt.params_as::<F>()?)?;
        adam = ckpt.adam_as::<F>()?;
        start = ckpt.meta.step;
        best_mcc_val = ckpt.meta.best_mcc;
        best_bpc_val = ckpt.meta.best_bpc;
    } else if let Some(table) = &opts.init_embeddings {
        model.set_embeddings(table)?;
    }

    let mut stream = BatchStream::new(&data.train, cfg.char_budget, cfg.seed);
    for _ in 0..start {
        stream.next_batch();
    }
    let valid_refs: Vec<&[usize]> = data.valid.iter().map(|s| s.ids.as_slice()).collect();
    let valid_has_gold = !data.valid.is_empty() && data.valid.iter().all(|s| s.gold.is_some());

    let end = opts.stop_after.map_or(cfg.steps, |s| s.min(cfg.steps));
    let mut records = Vec::new();
    let mut step_losses = Vec::new();
    let mut since_record = Vec::new();
    let mut best_mcc = None;
    let mut best_bpc = None;
    let mut last = None;

    let meta = |step: usize, best_mcc: Option<BestSoFar>, best_bpc: Option<BestSoFar>| CheckpointMeta {
        run_id: run_id.clone(),
        step,
        seed: cfg.seed,
        vocab_size: data.vocab_size,
        config: cfg.clone(),
        adam_t: 0,
        best_mcc,
        best_bpc,
        tensors: Vec::new(),
    };

    for step in start + 1..=end {
        let (epoch, index, batch) = stream.next_batch();
        let seqs: Vec<&[usize]> = batch.indices.iter().map(|&i| data.train[i].ids.as_slice()).collect();
        let mut g = Graph::<F>::new();
        let p = model.params().bind(&mut g);
        let mut rng = dropout_rng(cfg.seed, step);
        let (loss, _) = model.sequence_loss(&mut g, &p, &seqs, &mut Dropout::On(&mut rng))?;
        let value = g.scalar(loss).as_f64();
        if !value.is_finite() {
            return Err(TrainError::NonFinite { step, epoch, batch: index });
        }
        let mut grads = g.backward(loss);
        let mut flat: Vec<Tensor<F>> = p
            .vars()
            .iter()
            .zip(model.params().values())
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.dim())))
            .collect();
        drop(g);
        clip_global_norm(&mut flat, cfg.clip_norm);
        let lr = lr_at(step, cfg);
        adam.step(model.params_mut().values_mut(), &flat, lr);
        step_losses.push((step, value));
        since_record.push(value);

        if step % cfg.checkpoint_every == 0 || step == cfg.steps {
            let train_loss = since_record.iter().sum::<f64>() / since_record.len() as f64;
            since_record.clear();
            let (val_bpc, val_mcc, val_f1) = if data.valid.is_empty() {
                (f64::NAN, None, None)
            } else if valid_has_gold {
                let (report, _) = evaluate(&model, &data.valid, cfg.char_budget)?;
                (report.bpc, Some(report.boundary_mcc), Some(report.word_f1))
            } else {
                (bpc(&model, &valid_refs, cfg.char_budget)?, None, None)
            };
            let record = MetricRecord {
                run_id: run_id.clone(),
                step,
                lr,
                train_loss,
                val_bpc,
                val_mcc,
                val_f1,
            };
            log::info!(
                "{run_id} step {step} loss {train_loss:.4} val bpc {val_bpc:.4} mcc {val_mcc:?} f1 {val_f1:?}"
            );
            log_line(&opts.out_dir, &record)?;
            records.push(record);

            let mcc_improved = val_mcc.is_some_and(|m| best_mcc_val.is_none_or(|b| m > b.value));
            if mcc_improved {
                best_mcc_val = val_mcc.map(|value| BestSoFar { step, value });
            }
            let bpc_improved = val_bpc.is_finite() && best_bpc_val.is_none_or(|b| val_bpc < b.value);
            if bpc_improved {
                best_bpc_val = Some(BestSoFar { step, value: val_bpc });
            }
            let ckpt = Checkpoint::capture(
                meta(step, best_mcc_val, best_bpc_val),
                model.params().names(),
                model.params().values(),
                &adam,
            );
            if let Some(dir) = &opts.out_dir {
                ckpt.save(&dir.join("last.ckpt"))?;
                if mcc_improved {
                    ckpt.save(&dir.join("best-mcc.ckpt"))?;
                }
                if bpc_improved {
                    ckpt.save(&dir.join("best-bpc.ckpt"))?;
                }
            }
            if mcc_improved {
                best_mcc = Some(Snapshot {
                    step,
                    value: val_mcc.unwrap_or(f64::NAN),
                    checkpoint: ckpt.clone(),
                });
            }
            if bpc_improved {
                best_bpc = Some(Snapshot {
                    step,
                    value: val_bpc,
                    checkpoint: ckpt.clone(),
                });
            }
            last = Some(ckpt);
        }
    }
    let last = match last {
        Some(c) => c,
        None => Checkpoint::capture(
            meta(end.max(start), best_mcc_val, best_bpc_val),
            model.params().names(),
            model.params().values(),
            &adam,
        ),
    };
    Ok(RunOutcome {
        run_id,
        records,
        step_losses,
        best_mcc,
        best_bpc,
        last,
    })
}

/// [`train_run`] in the precision named by the config.
pub fn train(cfg: &TrainConfig, data: &TrainData, opts: RunOptions) -> Result<RunOutcome, TrainError> {
    match cfg.float {
        FloatMode::F32 => train_run::<f32>(cfg, data, opts),
        FloatMode::F64 => train_run::<f64>(cfg, data, opts),
    }
}

/// Rebuilds a model from a checkpoint in its stored precision.
pub fn model_from_checkpoint<F: Scalar>(ckpt: &Checkpoint) -> Result<SegmentalModel<F>, TrainError> {
    let cfg = &ckpt.meta.config;
    let mut model = SegmentalModel::<F>::new(&cfg.model(), ckpt.meta.vocab_size, cfg.seed);
    let names: Vec<&str> = ckpt.meta.tensors.iter().map(|t| t.name.as_str()).collect();
    if names != model.params().names().iter().map(|s| s.as_str()).collect::<Vec<_>>() {
        return Err(TrainError::Invalid("checkpoint parameters do not match the configured model".into()));
    }
    model.load_values(ckpt.params_as::<F>()?)?;
    Ok(model)
}
