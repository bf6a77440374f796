//! World and frame persistence.
//!
//! The world file stores only (version, seed, config); cells and signatures
//! are regenerated on load, which is bit-identical by construction. Frames
//! are line-delimited JSON, one frame per line, with the raw feature vector
//! hex-encoded as little-endian f64 so reload is lossless.

use super::{FrameRecord, GpsNoiseModel, NoisyFix, World, WorldConfig};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const WORLD_FORMAT_VERSION: u32 = 1;
pub const FRAMES_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct WorldFile {
    version: u32,
    seed: u64,
    config: WorldConfig,
    /// Captured alongside the world so downstream stages agree on it.
    gps_model: GpsNoiseModel,
}

pub fn save_world(world: &World, gps_model: &GpsNoiseModel, path: &Path) -> Result<()> {
    let file = WorldFile {
        version: WORLD_FORMAT_VERSION,
        seed: world.seed(),
        config: world.config().clone(),
        gps_model: gps_model.clone(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &file)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_world(path: &Path) -> Result<(World, GpsNoiseModel)> {
    let file: WorldFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if file.version != WORLD_FORMAT_VERSION {
        return Err(Error::FormatVersion {
            what: "world file",
            got: file.version,
            supported: WORLD_FORMAT_VERSION,
        });
    }
    Ok((World::generate(file.config, file.seed)?, file.gps_model))
}

#[derive(Serialize, Deserialize)]
struct FrameLine {
    v: u32,
    frame_id: u64,
    ride_id: u64,
    t: f64,
    pose: crate::geo::GeoPose,
    fix: NoisyFix,
    nuisance_seed: u64,
    feature_hex: String,
}

fn encode_feature(feature: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(feature.len() * 8);
    for v in feature {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    hex::encode(bytes)
}

fn decode_feature(s: &str) -> Result<Vec<f64>> {
    let bytes = hex::decode(s).map_err(|e| Error::Malformed {
        what: "frame feature",
        msg: e.to_string(),
    })?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Malformed {
            what: "frame feature",
            msg: format!("length {} not a multiple of 8", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Append-writes all (frame, fix) pairs of the given rides, one per line.
pub fn write_frames<'a>(
    pairs: impl Iterator<Item = (&'a FrameRecord, &'a NoisyFix)>,
    path: &Path,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (frame, fix) in pairs {
        let line = FrameLine {
            v: FRAMES_FORMAT_VERSION,
            frame_id: frame.frame_id,
            ride_id: frame.ride_id,
            t: frame.t,
            pose: frame.pose,
            fix: fix.clone(),
            nuisance_seed: frame.nuisance_seed,
            feature_hex: encode_feature(&frame.raw_feature),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Read a frames file back into (frame, fix) pairs in file order.
pub fn read_frames(path: &Path) -> Result<Vec<(FrameRecord, NoisyFix)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: FrameLine = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            what: "frames file",
            msg: format!("line {}: {e}", i + 1),
        })?;
        if parsed.v != FRAMES_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                what: "frames file",
                got: parsed.v,
                supported: FRAMES_FORMAT_VERSION,
            });
        }
        let frame = FrameRecord {
            frame_id: parsed.frame_id,
            ride_id: parsed.ride_id,
            t: parsed.t,
            pose: parsed.pose,
            raw_feature: decode_feature(&parsed.feature_hex)?,
            nuisance_seed: parsed.nuisance_seed,
        };
        out.push((frame, parsed.fix));
    }
    Ok(out)
}
