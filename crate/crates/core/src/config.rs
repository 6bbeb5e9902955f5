//! Run configuration: a TOML file layered over per-scenario presets, plus
//! `key.path=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{KgError, Result};
use crate::random;
use crate::snapshot;
use crate::solver::{default_dt, SolveConfig};
use crate::spectral::{Grid, RealField, StateVec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    #[default]
    Evolve,
    SmallDataSweep,
    StabilityLadder,
    MorawetzSuite,
    ProfileRoundtrip,
    InequalityHarness,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Evolve,
        Scenario::SmallDataSweep,
        Scenario::StabilityLadder,
        Scenario::MorawetzSuite,
        Scenario::ProfileRoundtrip,
        Scenario::InequalityHarness,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Evolve => "evolve",
            Scenario::SmallDataSweep => "small_data_sweep",
            Scenario::StabilityLadder => "stability_ladder",
            Scenario::MorawetzSuite => "morawetz_suite",
            Scenario::ProfileRoundtrip => "profile_roundtrip",
            Scenario::InequalityHarness => "inequality_harness",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub dim: usize,
    pub n: usize,
    pub length: f64,
    pub mass: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            dim: 1,
            n: 128,
            length: 40.0,
            mass: 1.0,
        }
    }
}

impl GridSection {
    pub fn build(&self) -> Result<Grid> {
        Grid::new(self.dim, self.n, self.length, self.mass).map_err(|e| KgError::Config {
            path: "grid".into(),
            message: e.to_string(),
        })
    }
}

/// Solver settings; `dt` falls back to the grid's default step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub blowup_norm_cap: f64,
    pub dealias: bool,
    pub sample_every: usize,
    pub residual_tol: f64,
    pub focusing: bool,
}

impl Default for SolveSection {
    fn default() -> Self {
        let base = SolveConfig::new(1.0, 10.0);
        Self {
            dt: None,
            t_final: base.t_final,
            picard_tol: base.picard_tol,
            picard_max_iter: base.picard_max_iter,
            blowup_norm_cap: base.blowup_norm_cap,
            dealias: base.dealias,
            sample_every: base.sample_every,
            residual_tol: base.residual_tol,
            focusing: base.focusing,
        }
    }
}

impl SolveSection {
    pub fn build(&self, grid: Grid) -> SolveConfig {
        SolveConfig {
            dt: self.dt.unwrap_or_else(|| default_dt(grid, self.dealias)),
            t_final: self.t_final,
            picard_tol: self.picard_tol,
            picard_max_iter: self.picard_max_iter,
            blowup_norm_cap: self.blowup_norm_cap,
            dealias: self.dealias,
            sample_every: self.sample_every,
            residual_tol: self.residual_tol,
            focusing: self.focusing,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    #[default]
    GaussianBump,
    SingleMode,
    TwoBump,
    FromFile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub kind: DataKind,
    pub amplitude: f64,
    pub width: f64,
    /// Bump centers; empty means the origin (or `±L/8` on the first axis for
    /// `two_bump`).
    pub positions: Vec<Vec<f64>>,
    /// Integer wave vector for `single_mode`.
    pub mode: Vec<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            kind: DataKind::GaussianBump,
            amplitude: 0.25,
            width: 1.0,
            positions: Vec::new(),
            mode: vec![1],
            path: None,
        }
    }
}

impl DataSection {
    pub fn build(&self, grid: Grid) -> Result<StateVec> {
        self.build_with_amplitude(grid, self.amplitude)
    }

    pub fn build_with_amplitude(&self, grid: Grid, amplitude: f64) -> Result<StateVec> {
        let bad = |what: &str, message: String| KgError::Config {
            path: format!("data.{what}"),
            message,
        };
        let d = grid.dim();
        let centers = |defaults: Vec<Vec<f64>>| -> Result<Vec<Vec<f64>>> {
            let list = if self.positions.is_empty() { defaults } else { self.positions.clone() };
            for p in &list {
                if p.len() != d {
                    return Err(bad("positions", format!("position {p:?} is not {d}-dimensional")));
                }
            }
            Ok(list)
        };
        let bumps = |list: Vec<Vec<f64>>| {
            let mut u = RealField::zeros(grid);
            for c in &list {
                u = &u + &random::gaussian(grid, amplitude, self.width, c);
            }
            u
        };
        let u = match self.kind {
            DataKind::GaussianBump => bumps(centers(vec![vec![0.0; d]])?),
            DataKind::TwoBump => {
                let mut a = vec![0.0; d];
                let mut b = vec![0.0; d];
                a[0] = -grid.length() / 8.0;
                b[0] = grid.length() / 8.0;
                let list = centers(vec![a, b])?;
                if list.len() != 2 {
                    return Err(bad("positions", format!("two_bump needs 2 positions, got {}", list.len())));
                }
                bumps(list)
            }
            DataKind::SingleMode => {
                if self.mode.len() > d {
                    return Err(bad("mode", format!("{} components for dimension {d}", self.mode.len())));
                }
                let k0 = 2.0 * std::f64::consts::PI / grid.length();
                let k: Vec<f64> = (0..d)
                    .map(|a| self.mode.get(a).copied().unwrap_or(0) as f64 * k0)
                    .collect();
                RealField::from_fn(grid, |x| {
                    amplitude * x.iter().zip(&k).map(|(x, k)| x * k).sum::<f64>().cos()
                })
            }
            DataKind::FromFile => {
                let path = self.path.as_ref().ok_or_else(|| bad("path", "from_file needs a path".into()))?;
                let mut fields = snapshot::read_fields(std::fs::File::open(path)?)?;
                if fields[0].grid != grid {
                    return Err(bad("path", format!("snapshot grid {:?} differs from {grid:?}", fields[0].grid)));
                }
                return match fields.len() {
                    1 => StateVec::new(fields.pop().unwrap(), RealField::zeros(grid)),
                    2 => {
                        let udot = fields.pop().unwrap();
                        StateVec::new(fields.pop().unwrap(), udot)
                    }
                    k => Err(bad("path", format!("snapshot holds {k} fields"))),
                };
            }
        };
        StateVec::new(u, RealField::zeros(grid))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveSection {
    /// Checkpoint interval in time units; 0 writes only the final state.
    pub checkpoint_every: f64,
    /// Allowed relative energy drift (defocusing runs only).
    pub energy_tol: f64,
    /// Checkpoint stem to continue from instead of building `data`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
}

impl Default for EvolveSection {
    fn default() -> Self {
        Self {
            checkpoint_every: 0.0,
            energy_tol: 1e-6,
            resume: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub amplitudes: Vec<f64>,
    pub horizon: f64,
    pub scatter_tol: f64,
    /// Log-midpoint bisection steps between the last scattering and the
    /// first non-scattering amplitude.
    pub bisect_steps: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            amplitudes: vec![1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0],
            horizon: 12.0,
            scatter_tol: 1e-4,
            bisect_steps: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilitySection {
    pub epsilons: Vec<f64>,
    /// Base amplitude of the nonlinear ladder (`data.amplitude` is unused).
    pub amplitude: f64,
    /// Base amplitude of the linear-regime ladder.
    pub linear_amplitude: f64,
    /// Allowed band for linear-regime ratios.
    pub linear_band: [f64; 2],
    /// Allowed max/min spread of the ratios within one ladder.
    pub max_spread: f64,
}

impl Default for StabilitySection {
    fn default() -> Self {
        Self {
            epsilons: vec![1e-2, 1e-3, 1e-4],
            amplitude: 1.0,
            linear_amplitude: 1e-3,
            linear_band: [0.5, 2.0],
            max_spread: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MorawetzSection {
    pub amplitudes: Vec<f64>,
    pub widths: Vec<f64>,
    /// Recorded `sup M(T)/E`; when set the suite fails on a relative drift
    /// above `max_drift`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<f64>,
    pub max_drift: f64,
}

impl Default for MorawetzSection {
    fn default() -> Self {
        Self {
            amplitudes: vec![0.5, 1.0, 1.5, 1.0, 2.0],
            widths: vec![1.0, 1.0, 1.0, 1.5, 0.75],
            baseline: None,
            max_drift: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfilesSection {
    pub ns: Vec<u64>,
    /// Gaussian width of the unit-scale profile.
    pub sigma: f64,
    /// Width of the Mexican-hat profile.
    pub hat_width: f64,
    pub noise: f64,
    pub k_max: usize,
    pub threshold: f64,
    pub max_defect: f64,
}

impl Default for ProfilesSection {
    fn default() -> Self {
        Self {
            ns: vec![4, 16, 64],
            sigma: 0.7,
            hat_width: 1.0,
            noise: 0.0,
            k_max: 2,
            threshold: 0.05,
            max_defect: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessSection {
    pub samples: usize,
    /// Samples per seed for dispersive decay; each one evolves a 128^3 field
    /// to six times and fits the exponent.
    pub decay_samples: usize,
    pub seeds: usize,
    pub kinds: Vec<crate::lpbesov::HarnessKind>,
}

impl Default for HarnessSection {
    fn default() -> Self {
        use crate::lpbesov::HarnessKind::*;
        Self {
            samples: 200,
            decay_samples: 2,
            seeds: 3,
            kinds: vec![ProductRule, NonlinearEstimate, DispersiveDecay],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub output: PathBuf,
    pub grid: GridSection,
    pub solve: SolveSection,
    pub data: DataSection,
    pub evolve: EvolveSection,
    pub sweep: SweepSection,
    pub stability: StabilitySection,
    pub morawetz: MorawetzSection,
    pub profiles: ProfilesSection,
    pub harness: HarnessSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Scenario::Evolve)
    }
}

impl RunConfig {
    /// Defaults tuned per scenario so each runs in well under a minute.
    pub fn preset(scenario: Scenario) -> Self {
        let mut cfg = Self {
            scenario,
            seed: 0,
            output: PathBuf::from("kgflow-out"),
            grid: GridSection::default(),
            solve: SolveSection::default(),
            data: DataSection::default(),
            evolve: EvolveSection::default(),
            sweep: SweepSection::default(),
            stability: StabilitySection::default(),
            morawetz: MorawetzSection::default(),
            profiles: ProfilesSection::default(),
            harness: HarnessSection::default(),
        };
        let d3 = GridSection {
            dim: 3,
            n: 32,
            length: 16.0,
            mass: 1.0,
        };
        match scenario {
            Scenario::Evolve | Scenario::InequalityHarness => {}
            Scenario::SmallDataSweep => {
                cfg.grid = d3;
                cfg.solve.sample_every = 16;
            }
            Scenario::StabilityLadder => {
                cfg.grid = d3;
                cfg.solve.t_final = 4.0;
                cfg.solve.sample_every = 8;
            }
            Scenario::MorawetzSuite => {
                cfg.grid = d3;
                cfg.solve.t_final = 8.0;
                cfg.solve.sample_every = 4;
            }
            Scenario::ProfileRoundtrip => {
                cfg.grid = GridSection {
                    dim: 1,
                    n: 512,
                    length: 64.0,
                    mass: 1.0,
                };
            }
        }
        cfg
    }

    /// Reads `path` (if any) over the preset of its scenario, then applies
    /// `key.path=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| KgError::Config {
                path: p.display().to_string(),
                message: e.to_string(),
            })?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut user: toml::Table = toml::from_str(text).map_err(|e| KgError::Config {
            path: "<file>".into(),
            message: e.to_string(),
        })?;
        for o in overrides {
            apply_override(&mut user, o)?;
        }
        let scenario = match user.get("scenario") {
            None => Scenario::default(),
            Some(v) => Scenario::deserialize(v.clone()).map_err(|e| KgError::Config {
                path: "scenario".into(),
                message: e.to_string(),
            })?,
        };
        let mut merged = toml::Table::try_from(Self::preset(scenario)).map_err(|e| KgError::Config {
            path: "<preset>".into(),
            message: e.to_string(),
        })?;
        merge(&mut merged, user);
        let cfg: Self = serde_path_to_error::deserialize(toml::Value::Table(merged)).map_err(|e| {
            KgError::Config {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid.build()?;
        self.solve.build(grid).validate(grid).map_err(|e| KgError::Config {
            path: "solve".into(),
            message: e.to_string(),
        })?;
        let check = |ok: bool, path: &str, message: &str| {
            if ok {
                Ok(())
            } else {
                Err(KgError::Config {
                    path: path.into(),
                    message: message.into(),
                })
            }
        };
        check(self.seed <= i64::MAX as u64, "seed", "must fit a TOML integer (at most 2^63 - 1)")?;
        check(self.data.width > 0.0, "data.width", "must be positive")?;
        check(self.data.amplitude.is_finite(), "data.amplitude", "must be finite")?;
        check(self.evolve.checkpoint_every >= 0.0, "evolve.checkpoint_every", "must be non-negative")?;
        check(!self.sweep.amplitudes.is_empty(), "sweep.amplitudes", "must not be empty")?;
        check(
            self.sweep.amplitudes.windows(2).all(|w| w[0] < w[1]) && self.sweep.amplitudes[0] > 0.0,
            "sweep.amplitudes",
            "must be positive and increasing",
        )?;
        check(!self.stability.epsilons.is_empty(), "stability.epsilons", "must not be empty")?;
        check(
            self.morawetz.amplitudes.len() == self.morawetz.widths.len(),
            "morawetz.widths",
            "must match morawetz.amplitudes in length",
        )?;
        check(self.profiles.ns.len() >= 2, "profiles.ns", "needs at least two elements")?;
        check(self.harness.samples > 0, "harness.samples", "must be positive")?;
        check(self.harness.decay_samples > 0, "harness.decay_samples", "must be positive")?;
        check(self.harness.seeds > 0, "harness.seeds", "must be positive")?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the resolved config without its output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_grid(&self) -> Result<Grid> {
        self.grid.build()
    }

    pub fn build_solve(&self) -> Result<SolveConfig> {
        Ok(self.solve.build(self.grid.build()?))
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets `a.b.c=value`; the value is parsed as TOML and taken as a bare
/// string when that fails.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| KgError::Config {
        path: spec.into(),
        message: "override must look like key.path=value".into(),
    })?;
    let key = key.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(KgError::Config {
            path: key.into(),
            message: "empty path segment".into(),
        });
    }
    let mut cur = table;
    for (i, p) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| KgError::Config {
            path: parts[..=i].join("."),
            message: "not a table".into(),
        })?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
