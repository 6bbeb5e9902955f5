//! Binary field snapshots and solver checkpoints.
//!
//! Layout (little-endian): `b"KGF1"`, `u32 dim`, `u32 n`, `f64 L`,
//! `u32 mass` (0 or 1), `u32 field_count`, then `field_count` fields of
//! `n^dim` physical samples as `f64`, row-major.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{KgError, Result};
use crate::solver::{evolve_from, Clock, SolveConfig};
use crate::spectral::{Grid, RealField, StateVec};
use crate::trajectory::Trajectory;

pub const MAGIC: &[u8; 4] = b"KGF1";
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 4 + 4;

pub fn write_fields(mut w: impl Write, fields: &[&RealField]) -> Result<()> {
    let grid = fields
        .first()
        .ok_or_else(|| KgError::InvalidArgument("snapshot needs at least one field".into()))?
        .grid;
    for f in fields {
        grid.check_same(&f.grid)?;
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * grid.len() * fields.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(grid.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(grid.n() as u32).to_le_bytes());
    buf.extend_from_slice(&grid.length().to_le_bytes());
    buf.extend_from_slice(&(grid.mass() as u32).to_le_bytes());
    buf.extend_from_slice(&(fields.len() as u32).to_le_bytes());
    for f in fields {
        for v in &f.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_fields(mut r: impl Read) -> Result<Vec<RealField>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<Vec<RealField>> {
    if bytes.len() < HEADER_LEN {
        return Err(KgError::Format(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(KgError::Format("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let dim = u32_at(4) as usize;
    let n = u32_at(8) as usize;
    let length = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let mass = u32_at(20);
    let count = u32_at(24) as usize;
    if mass > 1 {
        return Err(KgError::Format(format!("mass flag {mass}")));
    }
    let grid = Grid::new(dim, n, length, mass as f64).map_err(|e| KgError::Format(e.to_string()))?;
    let expected = HEADER_LEN + 8 * grid.len() * count;
    if bytes.len() != expected {
        return Err(KgError::Format(format!(
            "expected {expected} bytes for {count} fields, found {}",
            bytes.len()
        )));
    }
    let mut values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    (0..count)
        .map(|_| RealField::from_vec(grid, values.by_ref().take(grid.len()).collect()))
        .collect()
}

pub fn save_state(path: &Path, state: &StateVec) -> Result<()> {
    write_fields(fs::File::create(path)?, &[&state.u, &state.udot])
}

pub fn load_state(path: &Path) -> Result<StateVec> {
    let mut fields = decode(&fs::read(path)?)?;
    if fields.len() != 2 {
        return Err(KgError::Format(format!("state snapshot has {} fields, need 2", fields.len())));
    }
    let udot = fields.pop().unwrap();
    let u = fields.pop().unwrap();
    StateVec::new(u, udot)
}

/// JSON sidecar stored next to a checkpoint snapshot.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub time: f64,
    pub step: u64,
    pub t_base: f64,
    pub k_base: u64,
    pub cfg: SolveConfig,
    /// Cumulative diagnostics at the checkpoint (energy, Morawetz, ...).
    #[serde(default)]
    pub diagnostics: serde_json::Map<String, serde_json::Value>,
}

impl CheckpointMeta {
    /// Metadata for the state at global `step`, reached with `clock`'s
    /// anchoring; `time` off the `dt` lattice re-anchors the stored clock.
    pub fn new(
        time: f64,
        step: u64,
        clock: Clock,
        cfg: &SolveConfig,
        diagnostics: serde_json::Map<String, serde_json::Value>,
    ) -> Self {
        let c = Clock { step, ..clock };
        let (t_base, k_base) = if c.now(cfg.dt) == time {
            (clock.t_base, clock.k_base)
        } else {
            (time, step)
        };
        Self {
            time,
            step,
            t_base,
            k_base,
            cfg: cfg.clone(),
            diagnostics,
        }
    }

    pub fn clock(&self) -> Clock {
        Clock {
            t_base: self.t_base,
            k_base: self.k_base,
            step: self.step,
        }
    }
}

/// Paths `<stem>.kgf` and `<stem>.json`.
pub fn checkpoint_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("kgf"), stem.with_extension("json"))
}

pub fn write_checkpoint(stem: &Path, state: &StateVec, meta: &CheckpointMeta) -> Result<()> {
    let (bin, json) = checkpoint_paths(stem);
    save_state(&bin, state)?;
    fs::write(json, serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

/// Checkpoints the last sample of `traj`.
pub fn checkpoint_trajectory(
    stem: &Path,
    traj: &Trajectory,
    clock: Clock,
    cfg: &SolveConfig,
    diagnostics: serde_json::Map<String, serde_json::Value>,
) -> Result<CheckpointMeta> {
    let state = traj
        .final_state()
        .ok_or_else(|| KgError::InvalidArgument("empty trajectory".into()))?;
    let meta = CheckpointMeta::new(traj.last_time(), *traj.steps.last().unwrap(), clock, cfg, diagnostics);
    write_checkpoint(stem, state, &meta)?;
    Ok(meta)
}

pub fn read_checkpoint(stem: &Path) -> Result<(StateVec, CheckpointMeta)> {
    let (bin, json) = checkpoint_paths(stem);
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(json)?)?;
    Ok((load_state(&bin)?, meta))
}

/// Continues a checkpointed run for `duration` more time units.
pub fn resume(stem: &Path, duration: f64) -> Result<Trajectory> {
    let (state, meta) = read_checkpoint(stem)?;
    let mut cfg = meta.cfg.clone();
    cfg.t_final = duration;
    evolve_from(&state, meta.clock(), &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bitwise() {
        let g = Grid::new(2, 8, 3.5, 0.0).unwrap();
        let a = RealField::from_fn(g, |x| x[0].sin() * x[1] + 1e-300);
        let b = RealField::from_fn(g, |x| -x[1].exp());
        let mut buf = Vec::new();
        write_fields(&mut buf, &[&a, &b]).unwrap();
        assert_eq!(buf.len(), HEADER_LEN + 2 * 64 * 8);
        assert_eq!(&buf[..4], b"KGF1");
        let back = read_fields(buf.as_slice()).unwrap();
        assert_eq!(back[0].grid, g);
        assert_eq!(back[0].data, a.data);
        assert_eq!(back[1].data, b.data);
    }

    #[test]
    fn rejects_truncation_and_magic() {
        let g = Grid::new(1, 8, 1.0, 1.0).unwrap();
        let mut buf = Vec::new();
        write_fields(&mut buf, &[&RealField::zeros(g)]).unwrap();
        assert!(matches!(read_fields(&buf[..buf.len() - 1]), Err(KgError::Format(_))));
        buf[0] = b'X';
        assert!(matches!(read_fields(buf.as_slice()), Err(KgError::Format(_))));
    }
}
