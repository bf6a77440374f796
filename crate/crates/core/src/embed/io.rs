//! Model and loss-history persistence.

use super::train::TrainRecord;
use super::{EmbeddingModel, Layer};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    dims: Vec<usize>,
    layers: Vec<Layer>,
}

pub fn save_model(model: &EmbeddingModel, path: &Path) -> Result<()> {
    let file = ModelFile {
        version: MODEL_FORMAT_VERSION,
        dims: model.layer_dims(),
        layers: model.layers().to_vec(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &file)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<EmbeddingModel> {
    let file: ModelFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if file.version != MODEL_FORMAT_VERSION {
        return Err(Error::FormatVersion {
            what: "model file",
            got: file.version,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    for layer in &file.layers {
        if layer.w.len() != layer.rows * layer.cols || layer.b.len() != layer.rows {
            return Err(Error::Malformed {
                what: "model file",
                msg: "layer shape mismatch".into(),
            });
        }
    }
    Ok(EmbeddingModel {
        layers: file.layers,
    })
}

/// Loss history as CSV: step, lr, momentum, loss.
pub fn write_history_csv(history: &[TrainRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "step,lr,momentum,loss")?;
    for r in history {
        writeln!(w, "{},{},{},{}", r.step, r.lr, r.momentum, r.loss)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history_csv(path: &Path) -> Result<Vec<TrainRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Malformed {
                what: "history csv",
                msg: format!("line {}: expected 4 fields", i + 1),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Malformed {
                what: "history csv",
                msg: format!("bad number {s}"),
            })
        };
        out.push(TrainRecord {
            step: parts[0].parse().map_err(|_| Error::Malformed {
                what: "history csv",
                msg: format!("bad step {}", parts[0]),
            })?,
            lr: parse(parts[1])?,
            momentum: parse(parts[2])?,
            loss: parse(parts[3])?,
        });
    }
    Ok(out)
}
