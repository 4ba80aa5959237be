//! Single-file checkpoints.
//!
//! Layout: a text header line `slm-checkpoint v1 <f32|f64>`, a line holding
//! the byte length of the JSON metadata, the metadata itself, then every
//! parameter followed by Adam's first and second moments, as little-endian
//! floats in the header's precision, in the order listed by the metadata.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{FloatMode, Scalar, Tensor};

use super::optim::Adam;
use super::TrainConfig;

const MAGIC: &str = "slm-checkpoint";
const VERSION: u32 = 1;
const MAX_META_BYTES: usize = 1 << 24;
const MAX_DIM: usize = 1 << 28;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: {0}")]
    Format(String),
    #[error("checkpoint stores {stored} values, run expects {wanted}")]
    FloatMode { stored: FloatMode, wanted: FloatMode },
    #[error("checkpoint I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// Best value of a validation metric so far and the step it was seen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestSoFar {
    pub step: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub run_id: String,
    pub step: usize,
    pub seed: u64,
    pub vocab_size: usize,
    pub config: TrainConfig,
    pub adam_t: u64,
    pub best_mcc: Option<BestSoFar>,
    pub best_bpc: Option<BestSoFar>,
    pub tensors: Vec<TensorInfo>,
}

/// Parameters and optimizer state. Values are held as `f64`, which
/// represents `f32` runs exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub float: FloatMode,
    pub meta: CheckpointMeta,
    pub params: Vec<Array2<f64>>,
    pub adam_m: Vec<Array2<f64>>,
    pub adam_v: Vec<Array2<f64>>,
}

impl Checkpoint {
    pub fn capture<F: Scalar>(
        meta: CheckpointMeta,
        names: &[String],
        params: &[Tensor<F>],
        adam: &Adam<F>,
    ) -> Self {
        let widen = |ts: &[Tensor<F>]| ts.iter().map(|t| t.mapv(|x| x.as_f64())).collect::<Vec<_>>();
        let mut meta = meta;
        meta.adam_t = adam.t;
        meta.tensors = names
            .iter()
            .zip(params)
            .map(|(n, t)| TensorInfo {
                name: n.clone(),
                rows: t.nrows(),
                cols: t.ncols(),
            })
            .collect();
        Checkpoint {
            float: F::MODE,
            meta,
            params: widen(params),
            adam_m: widen(&adam.m),
            adam_v: widen(&adam.v),
        }
    }

    pub fn params_as<F: Scalar>(&self) -> Result<Vec<Tensor<F>>, CheckpointError> {
        self.check_mode::<F>()?;
        Ok(self.params.iter().map(|t| t.mapv(F::of)).collect())
    }

    pub fn adam_as<F: Scalar>(&self) -> Result<Adam<F>, CheckpointError> {
        self.check_mode::<F>()?;
        let narrow = |ts: &[Array2<f64>]| ts.iter().map(|t| t.mapv(F::of)).collect();
        Ok(Adam {
            t: self.meta.adam_t,
            m: narrow(&self.adam_m),
            v: narrow(&self.adam_v),
        })
    }

    fn check_mode<F: Scalar>(&self) -> Result<(), CheckpointError> {
        if self.float != F::MODE {
            return Err(CheckpointError::FloatMode {
                stored: self.float,
                wanted: F::MODE,
            });
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        let mut out = format!("{MAGIC} v{VERSION} {}\n{}\n", self.float.name(), meta.len()).into_bytes();
        out.extend_from_slice(&meta);
        for t in self.params.iter().chain(&self.adam_m).chain(&self.adam_v) {
            for &x in t.iter() {
                match self.float {
                    FloatMode::F32 => (x as f32).write_le(&mut out),
                    FloatMode::F64 => x.write_le(&mut out),
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let bad = |m: &str| CheckpointError::Format(m.to_string());
        let (header, rest) = split_line(bytes).ok_or_else(|| bad("missing header line"))?;
        let header = std::str::from_utf8(header).map_err(|_| bad("header is not UTF-8"))?;
        let mut fields = header.split(' ');
        if fields.next() != Some(MAGIC) {
            return Err(bad("bad magic"));
        }
        if fields.next() != Some(&format!("v{VERSION}")) {
            return Err(bad("unsupported version"));
        }
        let float = match fields.next() {
            Some("f32") => FloatMode::F32,
            Some("f64") => FloatMode::F64,
            _ => return Err(bad("unknown float mode")),
        };
        if fields.next().is_some() {
            return Err(bad("trailing header fields"));
        }
        let (len_line, rest) = split_line(rest).ok_or_else(|| bad("missing metadata length"))?;
        let meta_len: usize = std::str::from_utf8(len_line)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("metadata length is not a number"))?;
        if meta_len > MAX_META_BYTES || meta_len > rest.len() {
            return Err(bad("metadata length out of range"));
        }
        let (meta_bytes, mut payload) = rest.split_at(meta_len);
        let meta: CheckpointMeta =
            serde_json::from_slice(meta_bytes).map_err(|e| CheckpointError::Format(format!("metadata: {e}")))?;

        let width = float.bits() as usize / 8;
        let mut total: usize = 0;
        for t in &meta.tensors {
            if t.rows == 0 || t.cols == 0 || t.rows > MAX_DIM || t.cols > MAX_DIM {
                return Err(CheckpointError::Format(format!("tensor {} has shape {}x{}", t.name, t.rows, t.cols)));
            }
            let n = t.rows.checked_mul(t.cols).ok_or_else(|| bad("tensor size overflows"))?;
            total = total.checked_add(n).ok_or_else(|| bad("tensor size overflows"))?;
        }
        let needed = total
            .checked_mul(3)
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| bad("tensor size overflows"))?;
        if needed != payload.len() {
            return Err(CheckpointError::Format(format!(
                "payload has {} bytes, metadata describes {needed}",
                payload.len()
            )));
        }
        let read_group = |payload: &mut &[u8]| -> Vec<Array2<f64>> {
            meta.tensors
                .iter()
                .map(|t| {
                    Array2::from_shape_fn((t.rows, t.cols), |_| {
                        let x = match float {
                            FloatMode::F32 => f32::read_le(payload) as f64,
                            FloatMode::F64 => f64::read_le(payload),
                        };
                        *payload = &payload[width..];
                        x
                    })
                })
                .collect()
        };
        let params = read_group(&mut payload);
        let adam_m = read_group(&mut payload);
        let adam_v = read_group(&mut payload);
        Ok(Checkpoint {
            float,
            meta,
            params,
            adam_m,
            adam_v,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        // write-then-rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("ckpt.tmp");
        let io = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        std::fs::write(&tmp, self.encode()).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::decode(&bytes)
    }
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let at = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..at], &bytes[at + 1..]))
}
