//! Per-epoch training log, written as one CSV line per epoch.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// One completed epoch. For GAN runs `loss` is the generator objective,
/// `adv_loss` the discriminator loss, and `recon_loss` the L1 (paired) or
/// cycle (unpaired) term. Classifier runs put the weighted cross-entropy in
/// `loss`, zero in the other two, and the training accuracy in `accuracy`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub epoch: u32,
    pub loss: f64,
    pub adv_loss: f64,
    pub recon_loss: f64,
    pub accuracy: Option<f64>,
    pub wall_clock_s: f64,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainingTrace {
    pub fn push(&mut self, record: TraceRecord) -> Result<()> {
        if !(record.loss.is_finite()
            && record.adv_loss.is_finite()
            && record.recon_loss.is_finite())
        {
            return Err(Error::NonFiniteLoss {
                epoch: record.epoch,
                step: 0,
                value: record.loss,
            });
        }
        if let Some(last) = self.records.last() {
            if record.epoch <= last.epoch {
                return Err(Error::Precondition(format!(
                    "trace epochs must increase: {} after {}",
                    record.epoch, last.epoch
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    /// Loss triples in epoch order; wall clock excluded so determinism
    /// comparisons are meaningful.
    pub fn loss_sequences(&self) -> Vec<(f64, f64, f64)> {
        self.records
            .iter()
            .map(|r| (r.loss, r.adv_loss, r.recon_loss))
            .collect()
    }

    /// Epochs that saved a checkpoint, with the stored file names.
    pub fn checkpoints(&self) -> Vec<(u32, String)> {
        self.records
            .iter()
            .filter_map(|r| r.checkpoint.clone().map(|c| (r.epoch, c)))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "epoch,loss,adv_loss,recon_loss,accuracy,wall_clock_s,checkpoint")?;
        for r in &self.records {
            writeln!(
                f,
                "{},{:.9e},{:.9e},{:.9e},{},{:.3},{}",
                r.epoch,
                r.loss,
                r.adv_loss,
                r.recon_loss,
                r.accuracy.map_or(String::new(), |a| format!("{a:.6}")),
                r.wall_clock_s,
                r.checkpoint.as_deref().unwrap_or("")
            )?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::Unreadable {
            path: path.as_ref().to_path_buf(),
            source: e,
        })?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 7 {
                return Err(Error::Manifest(format!("trace line {i} malformed")));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|e| Error::Manifest(format!("trace line {i}: {e}")))
            };
            records.push(TraceRecord {
                epoch: parts[0]
                    .parse()
                    .map_err(|e| Error::Manifest(format!("trace line {i}: {e}")))?,
                loss: parse(parts[1])?,
                adv_loss: parse(parts[2])?,
                recon_loss: parse(parts[3])?,
                accuracy: if parts[4].is_empty() {
                    None
                } else {
                    Some(parse(parts[4])?)
                },
                wall_clock_s: parse(parts[5])?,
                checkpoint: if parts[6].is_empty() {
                    None
                } else {
                    Some(parts[6].to_string())
                },
            });
        }
        Ok(TrainingTrace { records })
    }
}
