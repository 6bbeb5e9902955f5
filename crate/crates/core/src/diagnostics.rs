//! Scalar functionals of solutions: energy, Morawetz integral, potential
//! energy concentration, spatial center, compactness modulus and the
//! scattering detector.

use std::io::Write;
use std::sync::OnceLock;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KgError, Result};
use crate::lpbesov::time_lq_norm;
use crate::spectral::{
    bessel_symbol, free_propagate_spectral, Grid, RealField, SpectralState, StateVec,
    ZeroModePolicy, MAX_DIM,
};
use crate::trajectory::{RunStatus, Trajectory};

/// Energy and its four parts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyParts {
    pub energy: f64,
    pub kinetic: f64,
    pub gradient: f64,
    pub mass: f64,
    pub potential: f64,
}

/// Defocusing energy `1/2 int (u_t^2 + |grad u|^2 + m u^2) + 1/4 int u^4`.
pub fn energy(state: &StateVec) -> EnergyParts {
    energy_signed(state, false)
}

/// Energy with the quartic term negated when `focusing`.
pub fn energy_signed(state: &StateVec, focusing: bool) -> EnergyParts {
    energy_from_parts(&state.to_spectral(), &state.u, focusing)
}

/// Quadratic terms by Parseval from `spec`, quartic term by quadrature of `u`.
pub(crate) fn energy_from_parts(spec: &SpectralState, u: &RealField, focusing: bool) -> EnergyParts {
    let g = spec.grid();
    let vol = g.volume();
    let mut kin = 0.0;
    let mut grad = 0.0;
    let mut mass = 0.0;
    g.for_each_frequency(|flat, xi| {
        let r2: f64 = xi.iter().map(|x| x * x).sum();
        let a = spec.u.coeffs[flat].norm_sqr();
        kin += spec.udot.coeffs[flat].norm_sqr();
        grad += r2 * a;
        mass += a;
    });
    let kinetic = 0.5 * vol * kin;
    let gradient = 0.5 * vol * grad;
    let mass = 0.5 * g.mass() * vol * mass;
    let sign = if focusing { -1.0 } else { 1.0 };
    let potential = sign * 0.25 * g.cell_volume() * u.data.iter().map(|v| v.powi(4)).sum::<f64>();
    EnergyParts {
        energy: kinetic + gradient + mass + potential,
        kinetic,
        gradient,
        mass,
        potential,
    }
}

// ---------------------------------------------------------------------------
// Periodic geometry

/// Minimal-image displacement `x - c` along one axis, in `[-L/2, L/2)`.
pub fn wrap(delta: f64, length: f64) -> f64 {
    let w = delta - length * (delta / length).round();
    if w >= 0.5 * length {
        w - length
    } else {
        w
    }
}

/// Euclidean torus distance between two points.
pub fn periodic_distance(a: &[f64], b: &[f64], length: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| wrap(x - y, length).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn distances_from(grid: Grid, center: &[f64]) -> Vec<f64> {
    let l = grid.length();
    let mut out = vec![0.0; grid.len()];
    grid.for_each_point(|flat, x| out[flat] = periodic_distance(x, center, l));
    out
}

fn nearest_point(grid: Grid, center: &[f64]) -> usize {
    let mut idx = [0usize; MAX_DIM];
    for a in 0..grid.dim() {
        let i = ((center[a] + 0.5 * grid.length()) / grid.cell()).round() as i64;
        idx[a] = i.rem_euclid(grid.n() as i64) as usize;
    }
    grid.ravel(&idx)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                let (mut q0, mut q1) = (1.0, x);
                for k in 2..=n {
                    let q2 = ((2 * k - 1) as f64 * x * q1 - (k - 1) as f64 * q0) / k as f64;
                    q0 = q1;
                    q1 = q2;
                }
                let dq = n as f64 * (x * q1 - q0) / (x * x - 1.0);
                weights[i] = 2.0 / ((1.0 - x * x) * dq * dq);
                break;
            }
        }
        nodes[i] = x;
    }
    (nodes, weights)
}

/// `int_{[-1,1]^d} |x|^{-1} dx` for `d >= 2`, via the face-pyramid
/// decomposition `2d/(d-1) int_{[-1,1]^{d-1}} (1+|y|^2)^{-1/2} dy`.
pub fn unit_cube_inverse_distance(dim: usize) -> f64 {
    static CACHE: OnceLock<[f64; MAX_DIM + 1]> = OnceLock::new();
    CACHE.get_or_init(|| {
        let (x, w) = gauss_legendre(24);
        let mut out = [f64::INFINITY; MAX_DIM + 1];
        for d in 2..=MAX_DIM {
            let m = d - 1;
            let total = x.len().pow(m as u32);
            let mut acc = 0.0;
            for flat in 0..total {
                let mut rest = flat;
                let mut r2 = 0.0;
                let mut weight = 1.0;
                for _ in 0..m {
                    let i = rest % x.len();
                    rest /= x.len();
                    r2 += x[i] * x[i];
                    weight *= w[i];
                }
                acc += weight / (1.0 + r2).sqrt();
            }
            out[d] = 2.0 * d as f64 / (d - 1) as f64 * acc;
        }
        out
    })[dim]
}

/// Average of `1/|x|` over one grid cell centered at the origin.
pub fn cell_average_inverse_distance(grid: Grid) -> Result<f64> {
    let d = grid.dim();
    if d < 2 {
        return Err(KgError::InvalidDimension {
            dim: d,
            what: "Morawetz weight 1/|x|",
        });
    }
    let a = 0.5 * grid.cell();
    Ok(unit_cube_inverse_distance(d) / (2f64.powi(d as i32) * a))
}

// ---------------------------------------------------------------------------
// Morawetz

/// Spatial Morawetz density `int_{|x-c| <= L/2} u^4 / |x - c| dx` at one time.
pub fn morawetz_density(u: &RealField, center: &[f64]) -> Result<f64> {
    let g = u.grid;
    let singular = cell_average_inverse_distance(g)?;
    let own = nearest_point(g, center);
    let dist = distances_from(g, center);
    let half = 0.5 * g.length();
    let mut acc = 0.0;
    for (flat, (&v, &r)) in u.data.iter().zip(&dist).enumerate() {
        if r > half {
            continue;
        }
        let w = if flat == own { singular } else { 1.0 / r };
        acc += v.powi(4) * w;
    }
    Ok(acc * g.cell_volume())
}

/// `int_window int u^4 / |x - center|` with trapezoid quadrature in time.
pub fn morawetz_integral(traj: &Trajectory, window: (f64, f64), center: &[f64]) -> Result<f64> {
    traj.check_covers(window.0, window.1)?;
    let dens: Vec<f64> = traj
        .states
        .par_iter()
        .map(|s| morawetz_density(&s.u, center))
        .collect::<Result<_>>()?;
    time_lq_norm(&traj.times, &dens, 1.0, window.0, window.1)
}

/// Running Morawetz integral from the first sample to each sample.
pub fn morawetz_cumulative(traj: &Trajectory, center: &[f64]) -> Result<Vec<f64>> {
    morawetz_cumulative_from(traj, center, 0.0)
}

/// As [`morawetz_cumulative`], continuing a sum that stood at `offset` at the
/// first sample (bitwise equal to an uninterrupted run).
pub fn morawetz_cumulative_from(traj: &Trajectory, center: &[f64], offset: f64) -> Result<Vec<f64>> {
    let dens: Vec<f64> = traj
        .states
        .par_iter()
        .map(|s| morawetz_density(&s.u, center))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(dens.len());
    let mut acc = offset;
    for i in 0..dens.len() {
        if i > 0 {
            acc += 0.5 * (traj.times[i] - traj.times[i - 1]) * (dens[i] + dens[i - 1]);
        }
        out.push(acc);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Center and concentration

/// Periodic `|u|^4` centroid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Center {
    pub position: Vec<f64>,
    /// Resultant length per axis; 1 for a point mass, 0 for a balanced split.
    pub resultant: Vec<f64>,
    pub degenerate: bool,
}

/// Resultant length below which the centroid is flagged degenerate.
pub const CENTER_DEGENERACY: f64 = 0.1;

pub fn spatial_center(state: &StateVec) -> Center {
    center_of(&state.u)
}

pub fn center_of(u: &RealField) -> Center {
    let g = u.grid;
    let d = g.dim();
    let k = 2.0 * std::f64::consts::PI / g.length();
    let mut sums = vec![Complex64::new(0.0, 0.0); d];
    let mut total = 0.0;
    g.for_each_point(|flat, x| {
        let rho = u.data[flat].powi(4);
        if rho == 0.0 {
            return;
        }
        total += rho;
        for a in 0..d {
            sums[a] += rho * Complex64::from_polar(1.0, k * x[a]);
        }
    });
    if total == 0.0 {
        return Center {
            position: vec![0.0; d],
            resultant: vec![0.0; d],
            degenerate: true,
        };
    }
    let mut position = Vec::with_capacity(d);
    let mut resultant = Vec::with_capacity(d);
    for z in sums {
        let z = z / total;
        position.push(z.arg() / k);
        resultant.push(z.norm());
    }
    let degenerate = resultant.iter().any(|&r| r < CENTER_DEGENERACY);
    Center {
        position,
        resultant,
        degenerate,
    }
}

/// `int_{t0}^{t0+tau} int_{|x - x(t)| <= radius} u^4`; `radius = None` integrates
/// over the whole box.
pub fn potential_concentration(
    traj: &Trajectory,
    t0: f64,
    tau: f64,
    radius: Option<f64>,
) -> Result<f64> {
    traj.check_covers(t0, t0 + tau)?;
    let dens: Vec<f64> = traj
        .states
        .par_iter()
        .map(|s| {
            let g = s.grid();
            let quartic = s.u.data.iter().map(|v| v.powi(4));
            let sum: f64 = match radius {
                None => quartic.sum(),
                Some(r) => {
                    let c = spatial_center(s).position;
                    quartic
                        .zip(distances_from(g, &c))
                        .filter(|(_, dist)| *dist <= r)
                        .map(|(v, _)| v)
                        .sum()
                }
            };
            sum * g.cell_volume()
        })
        .collect();
    time_lq_norm(&traj.times, &dens, 1.0, t0, t0 + tau)
}

/// Ratio of the unlocalized window integral to `tau * sup_t ||u||_{H^{s_c}}^4`.
pub fn potential_sobolev_ratio(traj: &Trajectory, t0: f64, tau: f64) -> Result<f64> {
    let value = potential_concentration(traj, t0, tau, None)?;
    let sc = traj.grid.critical_regularity();
    let sup = traj
        .states
        .iter()
        .zip(&traj.times)
        .filter(|(_, t)| **t >= t0 && **t <= t0 + tau)
        .map(|(s, _)| s.u.to_spectral().sobolev_norm(sc))
        .fold(0.0, f64::max);
    if sup == 0.0 {
        return Ok(0.0);
    }
    Ok(value / (tau * sup.powi(4)))
}

// ---------------------------------------------------------------------------
// Drift of the center

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DriftReport {
    /// `max(0, max_{pairs} |x(t1) - x(t2)| - |t1 - t2|)`.
    pub implied_2cu: f64,
    /// Net displacement of the center divided by elapsed time.
    pub drift_speed: f64,
    pub centers: Vec<Vec<f64>>,
}

pub fn drift_check(traj: &Trajectory) -> Result<DriftReport> {
    if traj.len() < 2 {
        return Err(KgError::InvalidArgument("drift_check needs >= 2 samples".into()));
    }
    let l = traj.grid.length();
    let centers: Vec<Vec<f64>> = traj
        .states
        .par_iter()
        .map(|s| spatial_center(s).position)
        .collect();
    let mut worst = 0.0f64;
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            let dx = periodic_distance(&centers[i], &centers[j], l);
            let dt = (traj.times[j] - traj.times[i]).abs();
            worst = worst.max(dx - dt);
        }
    }
    let span = traj.last_time() - traj.first_time();
    let drift_speed = periodic_distance(&centers[0], centers.last().unwrap(), l) / span;
    Ok(DriftReport {
        implied_2cu: worst.max(0.0),
        drift_speed,
        centers,
    })
}

// ---------------------------------------------------------------------------
// Compactness modulus

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompactnessModulus {
    /// Smallest ladder radius meeting the tail bound, or infinity.
    pub radius: f64,
    pub ladder: Vec<f64>,
    /// `sup_t` tail integral for each ladder radius.
    pub tails: Vec<f64>,
}

/// Radii `h 2^k < L/2` followed by `L/2`.
pub fn radius_ladder(grid: Grid) -> Vec<f64> {
    let half = 0.5 * grid.length();
    let mut out = Vec::new();
    let mut r = grid.cell();
    while r < half {
        out.push(r);
        r *= 2.0;
    }
    out.push(half);
    out
}

fn critical_density(state: &StateVec) -> Result<Vec<f64>> {
    let sc = state.grid().critical_regularity();
    let a = state
        .u
        .to_spectral()
        .apply_multiplier(bessel_symbol(sc), ZeroModePolicy::Error)?
        .to_complex_samples();
    let b = state
        .udot
        .to_spectral()
        .apply_multiplier(bessel_symbol(sc - 1.0), ZeroModePolicy::Error)?
        .to_complex_samples();
    Ok(a.iter().zip(&b).map(|(x, y)| x.norm_sqr() + y.norm_sqr()).collect())
}

pub fn compactness_modulus(traj: &Trajectory, eta: f64) -> Result<CompactnessModulus> {
    if !(eta > 0.0) {
        return Err(KgError::InvalidArgument("eta must be positive".into()));
    }
    let g = traj.grid;
    let ladder = radius_ladder(g);
    let per_sample: Vec<Vec<f64>> = traj
        .states
        .par_iter()
        .map(|s| {
            let dens = critical_density(s)?;
            let c = spatial_center(s).position;
            let dist = distances_from(g, &c);
            Ok(ladder
                .iter()
                .map(|&r| {
                    dens.iter()
                        .zip(&dist)
                        .filter(|(_, d)| **d >= r)
                        .map(|(v, _)| *v)
                        .sum::<f64>()
                        * g.cell_volume()
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let tails: Vec<f64> = (0..ladder.len())
        .map(|k| per_sample.iter().map(|t| t[k]).fold(0.0, f64::max))
        .collect();
    let radius = ladder
        .iter()
        .zip(&tails)
        .find(|(_, t)| **t <= eta)
        .map(|(r, _)| *r)
        .unwrap_or(f64::INFINITY);
    Ok(CompactnessModulus {
        radius,
        ladder,
        tails,
    })
}

// ---------------------------------------------------------------------------
// Scattering

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScatterVerdict {
    Scatters,
    Inconclusive,
}

/// Minimum run length before a scattering verdict can be issued.
pub const SCATTER_MIN_HORIZON: f64 = 10.0;

#[derive(Clone, Debug)]
pub struct ScatterReport {
    pub limit_state: StateVec,
    /// `(t, ||V_0(-t)(u, u_t)(t) - limit||)` in `H^{s_c} x H^{s_c-1}`.
    pub cauchy_residuals: Vec<(f64, f64)>,
    pub verdict: ScatterVerdict,
}

/// Pullbacks `V_0(-t)(u, u_t)(t)` at every sample.
pub fn pullbacks(traj: &Trajectory) -> Vec<SpectralState> {
    traj.states
        .par_iter()
        .zip(traj.times.par_iter())
        .map(|(s, &t)| free_propagate_spectral(&s.to_spectral(), -t))
        .collect()
}

fn pullback_residuals(traj: &Trajectory) -> (SpectralState, Vec<f64>) {
    let pulled = pullbacks(traj);
    let limit = pulled.last().cloned().unwrap_or_else(|| {
        StateVec::zeros(traj.grid).to_spectral()
    });
    let residuals = pulled
        .iter()
        .map(|w| {
            SpectralState {
                u: &w.u - &limit.u,
                udot: &w.udot - &limit.udot,
            }
            .critical_norm()
        })
        .collect();
    (limit, residuals)
}

/// The pullback settles when every residual over the final third of samples is
/// below `tol` and the residuals do not increase there.
pub fn scattering_detect(traj: &Trajectory, tol: f64) -> Result<ScatterReport> {
    if traj.status != RunStatus::Complete {
        return Err(KgError::InvalidStatus(format!(
            "scattering needs a complete trajectory, got {:?}",
            traj.status
        )));
    }
    if traj.is_empty() {
        return Err(KgError::InvalidArgument("empty trajectory".into()));
    }
    let (limit, residuals) = pullback_residuals(traj);
    let cauchy_residuals: Vec<(f64, f64)> =
        traj.times.iter().copied().zip(residuals.iter().copied()).collect();
    let horizon = traj.last_time() - traj.first_time();
    let start = (2 * (residuals.len() - 1)) / 3;
    let tail = &residuals[start..];
    let slack = 1e-12 * limit.critical_norm().max(f64::MIN_POSITIVE);
    let settled = tail.iter().all(|&r| r < tol);
    let monotone = tail.windows(2).all(|w| w[1] <= w[0] + slack);
    let verdict = if horizon >= SCATTER_MIN_HORIZON && settled && monotone {
        ScatterVerdict::Scatters
    } else {
        ScatterVerdict::Inconclusive
    };
    Ok(ScatterReport {
        limit_state: limit.to_physical(),
        cauchy_residuals,
        verdict,
    })
}

// ---------------------------------------------------------------------------
// Per-sample table

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub time: f64,
    pub energy: f64,
    pub kinetic: f64,
    pub gradient: f64,
    pub mass: f64,
    pub potential: f64,
    pub h_sc_norm: f64,
    pub morawetz_cum: f64,
    pub center: Vec<f64>,
    pub scatter_residual: f64,
}

/// One record per sample. The Morawetz column is relative to `morawetz_center`
/// and is NaN in one dimension, where `1/|x|` is not integrable.
pub fn diagnostics_table(
    traj: &Trajectory,
    morawetz_center: &[f64],
    focusing: bool,
) -> Result<Vec<DiagnosticsRecord>> {
    diagnostics_table_from(traj, morawetz_center, focusing, 0.0)
}

/// [`diagnostics_table`] for a run resumed with Morawetz sum `morawetz_offset`.
/// The scatter residual is always relative to this trajectory's last sample.
pub fn diagnostics_table_from(
    traj: &Trajectory,
    morawetz_center: &[f64],
    focusing: bool,
    morawetz_offset: f64,
) -> Result<Vec<DiagnosticsRecord>> {
    let morawetz = if traj.grid.dim() >= 2 {
        morawetz_cumulative_from(traj, morawetz_center, morawetz_offset)?
    } else {
        vec![f64::NAN; traj.len()]
    };
    let (_, residuals) = pullback_residuals(traj);
    let records = traj
        .states
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let e = energy_signed(s, focusing);
            DiagnosticsRecord {
                time: traj.times[i],
                energy: e.energy,
                kinetic: e.kinetic,
                gradient: e.gradient,
                mass: e.mass,
                potential: e.potential,
                h_sc_norm: s.critical_norm(),
                morawetz_cum: morawetz[i],
                center: spatial_center(s).position,
                scatter_residual: residuals[i],
            }
        })
        .collect();
    Ok(records)
}

pub fn csv_header(dim: usize) -> String {
    let mut cols = vec![
        "time".to_string(),
        "energy".into(),
        "kinetic".into(),
        "gradient".into(),
        "mass".into(),
        "potential".into(),
        "h_sc_norm".into(),
        "morawetz_cum".into(),
    ];
    cols.extend((1..=dim).map(|a| format!("center_{a}")));
    cols.push("scatter_residual".into());
    cols.join(",")
}

pub fn write_csv(records: &[DiagnosticsRecord], dim: usize, mut w: impl Write) -> Result<()> {
    writeln!(w, "{}", csv_header(dim))?;
    for r in records {
        let mut fields = vec![
            r.time,
            r.energy,
            r.kinetic,
            r.gradient,
            r.mass,
            r.potential,
            r.h_sc_norm,
            r.morawetz_cum,
        ];
        fields.extend(&r.center);
        fields.push(r.scatter_residual);
        let line: Vec<String> = fields.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}
