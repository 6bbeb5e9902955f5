//! Time integration: the exponential trapezoid (Strang) integrator, the Picard
//! iteration for the Duhamel map, maximal continuation and the two-solution
//! stability experiment.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::energy_from_parts;
use crate::error::{KgError, Result};
use crate::lpbesov::{LpBank, NormSpec};
use crate::spectral::{
    free_propagate_spectral, propagate_in_place, Grid, SpectralField, SpectralState, StateVec,
};
use crate::trajectory::{time_eps, RunStatus, Trajectory};

/// Largest allowed `dt * omega_max`.
pub const CFL_LIMIT: f64 = 0.5;
/// `dt * omega_max` targeted by [`default_dt`].
pub const DEFAULT_CFL: f64 = 0.1;

fn default_picard_tol() -> f64 {
    1e-10
}
fn default_picard_max_iter() -> usize {
    50
}
fn default_blowup_cap() -> f64 {
    1e6
}
fn default_true() -> bool {
    true
}
fn default_sample_every() -> usize {
    1
}
fn default_residual_tol() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub dt: f64,
    /// Run length.
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_picard_max_iter")]
    pub picard_max_iter: usize,
    #[serde(default = "default_blowup_cap")]
    pub blowup_norm_cap: f64,
    #[serde(default = "default_true")]
    pub dealias: bool,
    /// Store every k-th step (the final step is always stored).
    #[serde(default = "default_sample_every")]
    pub sample_every: usize,
    /// Relative Duhamel residual allowed per quadrature segment.
    #[serde(default = "default_residual_tol")]
    pub residual_tol: f64,
    /// Flips the sign of the nonlinearity. Only meant for exercising the
    /// blowup detector.
    #[serde(default)]
    pub focusing: bool,
}

impl SolveConfig {
    pub fn new(dt: f64, t_final: f64) -> Self {
        Self {
            dt,
            t_final,
            picard_tol: default_picard_tol(),
            picard_max_iter: default_picard_max_iter(),
            blowup_norm_cap: default_blowup_cap(),
            dealias: true,
            sample_every: 1,
            residual_tol: default_residual_tol(),
            focusing: false,
        }
    }

    /// Config with the default step for `grid`.
    pub fn for_grid(grid: Grid, t_final: f64) -> Self {
        Self::new(default_dt(grid, true), t_final)
    }

    pub fn with_sample_every(mut self, k: usize) -> Self {
        self.sample_every = k;
        self
    }

    pub fn validate(&self, grid: Grid) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(KgError::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final >= 0.0) || !self.t_final.is_finite() {
            return Err(KgError::InvalidArgument(format!(
                "T must be nonnegative, got {}",
                self.t_final
            )));
        }
        if self.sample_every == 0 {
            return Err(KgError::InvalidArgument("sample_every must be >= 1".into()));
        }
        let w = max_retained_omega(grid, self.dealias);
        if self.dt * w > CFL_LIMIT * (1.0 + 1e-12) {
            return Err(KgError::InvalidArgument(format!(
                "dt = {} violates dt * omega_max <= {CFL_LIMIT} (omega_max = {w:.4})",
                self.dt
            )));
        }
        Ok(())
    }
}

/// Largest `omega` among modes the nonlinearity can excite.
pub fn max_retained_omega(grid: Grid, dealias: bool) -> f64 {
    let n = grid.n() as f64;
    let kmax = if dealias { (n / 3.0).floor() } else { n / 2.0 - 1.0 };
    let xi = 2.0 * std::f64::consts::PI * kmax / grid.length();
    grid.omega(xi * (grid.dim() as f64).sqrt())
}

/// Largest power of two with `dt * omega_max <= DEFAULT_CFL`. Power-of-two
/// steps keep sample times exact in binary floating point.
pub fn default_dt(grid: Grid, dealias: bool) -> f64 {
    let limit = DEFAULT_CFL / max_retained_omega(grid, dealias);
    limit.log2().floor().exp2()
}

/// Step-index bookkeeping. The time of global step `k` is
/// `t_base + (k - k_base) dt`, so a restart reproduces the same time stamps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Clock {
    pub t_base: f64,
    pub k_base: u64,
    pub step: u64,
}

impl Clock {
    pub fn time(&self, dt: f64, step: u64) -> f64 {
        self.t_base + (step - self.k_base) as f64 * dt
    }

    pub fn now(&self, dt: f64) -> f64 {
        self.time(dt, self.step)
    }

    /// Clock positioned at the last sample of `traj`, re-anchored when that
    /// sample came from a shortened step.
    pub fn after(&self, traj: &Trajectory, dt: f64) -> Clock {
        let Some(&step) = traj.steps.last() else {
            return *self;
        };
        let t_last = traj.last_time();
        let moved = Clock { step, ..*self };
        if moved.now(dt) == t_last {
            moved
        } else {
            Clock {
                t_base: t_last,
                k_base: step,
                step,
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Nonlinearity

/// Evaluates `f(u) = u^3` pseudospectrally, dealiased with the 2/3 rule.
pub(crate) struct Nonlinearity {
    grid: Grid,
    keep: Vec<bool>,
    sign: f64,
}

impl Nonlinearity {
    pub(crate) fn new(grid: Grid, dealias: bool, focusing: bool) -> Self {
        let n = grid.n() as i64;
        let keep = (0..grid.len())
            .map(|flat| {
                let idx = grid.unravel(flat);
                (0..grid.dim()).all(|a| {
                    let k = grid.wavenumber(idx[a]);
                    k != -n / 2 && (!dealias || 3 * k.abs() <= n)
                })
            })
            .collect();
        Self {
            grid,
            keep,
            sign: if focusing { -1.0 } else { 1.0 },
        }
    }

    fn project(&self, c: &mut [Complex64]) {
        for (v, &k) in c.iter_mut().zip(&self.keep) {
            if !k {
                *v = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Coefficients of `sign * P((P u)^3)`.
    pub(crate) fn eval(&self, u: &SpectralField) -> SpectralField {
        let mut c = u.coeffs.clone();
        self.project(&mut c);
        crate::spectral::inverse_transform(&self.grid, &mut c);
        for v in c.iter_mut() {
            let x = v.re;
            *v = Complex64::new(self.sign * x * x * x, 0.0);
        }
        crate::spectral::forward_transform(&self.grid, &mut c);
        self.project(&mut c);
        SpectralField {
            grid: self.grid,
            coeffs: c,
        }
    }
}

/// Physical samples to the spectral state the integrator works with. Used at
/// entry and at every stored sample, so restarting from stored samples is
/// bit-identical to not stopping.
fn canonical(state: &StateVec) -> SpectralState {
    let mut s = state.to_spectral();
    s.u.zero_nyquist();
    s.udot.zero_nyquist();
    s
}

fn kick(udot: &mut SpectralField, f: &SpectralField, h: f64) {
    for (v, c) in udot.coeffs.iter_mut().zip(&f.coeffs) {
        *v -= h * c;
    }
}

// ---------------------------------------------------------------------------
// Integrator

/// Integrates `cfg.t_final` time units from the origin.
pub fn evolve(state0: &StateVec, cfg: &SolveConfig) -> Result<Trajectory> {
    evolve_from(state0, Clock::default(), cfg)
}

/// Precomputed `V_0(h)` multipliers and critical-norm weights.
struct Flow {
    grid: Grid,
    norms: Vec<f64>,
    h: f64,
    table: Vec<[f64; 3]>,
    weights: Vec<[f64; 2]>,
}

impl Flow {
    fn new(grid: Grid, h: f64) -> Self {
        let norms = grid.frequency_norms();
        let sc = grid.critical_regularity();
        let table = norms
            .iter()
            .map(|&r| {
                let w = grid.omega(r);
                if w == 0.0 {
                    return [1.0, h, 0.0];
                }
                let (s, c) = (h * w).sin_cos();
                [c, s / w, -w * s]
            })
            .collect();
        let weights = norms
            .iter()
            .map(|&r| {
                let b = 1.0 + r * r;
                [b.powf(sc), b.powf(sc - 1.0)]
            })
            .collect();
        Self {
            grid,
            norms,
            h,
            table,
            weights,
        }
    }

    fn apply(&self, s: &mut SpectralState, h: f64) {
        if h != self.h {
            propagate_in_place(&self.grid, &self.norms, &mut s.u.coeffs, &mut s.udot.coeffs, h);
            return;
        }
        for ((u, v), m) in s.u.coeffs.iter_mut().zip(s.udot.coeffs.iter_mut()).zip(&self.table) {
            let (u0, v0) = (*u, *v);
            *u = m[0] * u0 + m[1] * v0;
            *v = m[2] * u0 + m[0] * v0;
        }
    }

    fn critical_norm(&self, s: &SpectralState) -> f64 {
        let acc: f64 = s
            .u
            .coeffs
            .iter()
            .zip(&s.udot.coeffs)
            .zip(&self.weights)
            .map(|((u, v), w)| w[0] * u.norm_sqr() + w[1] * v.norm_sqr())
            .sum();
        (self.grid.volume() * acc).sqrt()
    }
}

/// In-run Duhamel check: the last three step states, their forcing and the
/// step lengths leading to them.
struct ResidualWindow {
    states: Vec<(SpectralState, SpectralField, f64)>,
}

impl ResidualWindow {
    fn push(&mut self, state: &SpectralState, f: &SpectralField, h: f64) {
        if self.states.len() == 3 {
            self.states.remove(0);
        }
        self.states.push((state.clone(), f.clone(), h));
    }

    /// Simpson-type quadrature of the Duhamel integral over the last two steps.
    fn residual(&self, flow: &Flow) -> f64 {
        let [(a, fa, _), (_, fb, h0), (c, fc, h1)] = &self.states[..] else {
            return 0.0;
        };
        let w = three_point_weights(*h0, *h1);
        let mut x = a.clone();
        kick(&mut x.udot, fa, w[0]);
        flow.apply(&mut x, *h0);
        kick(&mut x.udot, fb, w[1]);
        flow.apply(&mut x, *h1);
        kick(&mut x.udot, fc, w[2]);
        let defect = SpectralState {
            u: &c.u - &x.u,
            udot: &c.udot - &x.udot,
        };
        let scale = flow.critical_norm(a).max(flow.critical_norm(c));
        if scale == 0.0 {
            0.0
        } else {
            flow.critical_norm(&defect) / scale
        }
    }
}

/// Integrates `cfg.t_final` time units starting at `clock`.
///
/// Each step is kick / exact free flow / kick, which is the trapezoidal rule
/// for the Duhamel integral. Every second step the Duhamel formula is
/// re-checked with the three-point rule over the last two steps.
pub fn evolve_from(state0: &StateVec, clock: Clock, cfg: &SolveConfig) -> Result<Trajectory> {
    let grid = state0.grid();
    cfg.validate(grid)?;
    let dt = cfg.dt;
    let t0 = clock.now(dt);
    let t_end = t0 + cfg.t_final;
    let ratio = cfg.t_final / dt;
    let shortened = (ratio - ratio.round()).abs() >= 1e-9 * ratio.max(1.0);
    let steps = if shortened {
        ratio.ceil() as u64
    } else {
        ratio.round() as u64
    };

    let nl = Nonlinearity::new(grid, cfg.dealias, cfg.focusing);
    let flow = Flow::new(grid, dt);
    let mut traj = Trajectory::new(grid);
    let mut window = ResidualWindow { states: Vec::new() };

    // The first sample keeps the given samples so a restart from a stored
    // sample reproduces that row exactly.
    let mut spec = canonical(state0);
    let mut phys = state0.clone();
    let mut f = nl.eval(&spec.u);
    let record = |traj: &mut Trajectory, time, step, spec: &SpectralState, phys: StateVec| {
        let e = energy_from_parts(spec, &phys.u, cfg.focusing).energy;
        traj.push(time, step, phys, e);
    };
    record(&mut traj, t0, clock.step, &spec, phys);
    window.push(&spec, &f, 0.0);

    for local in 1..=steps {
        let step = clock.step + local;
        let last = local == steps;
        let h = if last && shortened {
            t_end - clock.time(dt, step - 1)
        } else {
            dt
        };
        kick(&mut spec.udot, &f, 0.5 * h);
        flow.apply(&mut spec, h);
        f = nl.eval(&spec.u);
        kick(&mut spec.udot, &f, 0.5 * h);

        let norm = flow.critical_norm(&spec);
        if !norm.is_finite() || norm > cfg.blowup_norm_cap {
            traj.status = RunStatus::BlowupSuspected;
            break;
        }
        if last || local % cfg.sample_every as u64 == 0 {
            phys = spec.to_physical();
            spec = canonical(&phys);
            f = nl.eval(&spec.u);
            let time = if last && shortened { t_end } else { clock.time(dt, step) };
            record(&mut traj, time, step, &spec, phys);
        }
        window.push(&spec, &f, h);
        // Pairs of steps; an odd final step overlaps the previous pair.
        if local >= 2 && (local % 2 == 0 || last) {
            traj.duhamel_residual.push(window.residual(&flow));
        }
    }

    if traj.status == RunStatus::Complete
        && traj.duhamel_residual.iter().any(|r| !(*r <= cfg.residual_tol))
    {
        traj.status = RunStatus::ToleranceFail;
    }
    Ok(traj)
}

// ---------------------------------------------------------------------------
// Duhamel residual

/// Weights of the quadratic interpolant on nodes `0, h0, h0 + h1`.
fn three_point_weights(h0: f64, h1: f64) -> [f64; 3] {
    let s = h0 + h1;
    [
        s / 6.0 * (2.0 - h1 / h0),
        s * s * s / (6.0 * h0 * h1),
        s / 6.0 * (2.0 - h0 / h1),
    ]
}

/// Relative defect of the Duhamel formula on consecutive pairs of sample
/// intervals (a lone trailing interval uses the trapezoid rule), measured in
/// `H^{s_c} x H^{s_c-1}`.
pub fn duhamel_residuals(traj: &Trajectory, dealias: bool, focusing: bool) -> Vec<f64> {
    let m = traj.len();
    if m < 2 {
        return Vec::new();
    }
    let nl = Nonlinearity::new(traj.grid, dealias, focusing);
    let mut segments = Vec::new();
    let mut i = 0;
    while i + 1 < m {
        let len = if i + 2 < m { 2 } else { 1 };
        segments.push((i, len));
        i += len;
    }
    segments
        .par_iter()
        .map(|&(i, len)| {
            let t = &traj.times[i..=i + len];
            let states: Vec<SpectralState> =
                traj.states[i..=i + len].iter().map(canonical).collect();
            let t_end = t[len];
            let weights: Vec<f64> = if len == 2 {
                three_point_weights(t[1] - t[0], t[2] - t[1]).to_vec()
            } else {
                vec![0.5 * (t[1] - t[0]); 2]
            };
            let mut predicted = free_propagate_spectral(&states[0], t_end - t[0]);
            for (k, w) in weights.iter().enumerate() {
                let f = nl.eval(&states[k].u);
                let pushed = free_propagate_spectral(
                    &SpectralState {
                        u: SpectralField::zeros(traj.grid),
                        udot: f,
                    },
                    t_end - t[k],
                );
                kick(&mut predicted.u, &pushed.u, *w);
                kick(&mut predicted.udot, &pushed.udot, *w);
            }
            let end = &states[len];
            let defect = SpectralState {
                u: &end.u - &predicted.u,
                udot: &end.udot - &predicted.udot,
            }
            .critical_norm();
            let scale = end.critical_norm().max(states[0].critical_norm());
            if scale == 0.0 {
                0.0
            } else {
                defect / scale
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Picard iteration

#[derive(Clone, Debug)]
pub struct PicardSolution {
    pub trajectory: Trajectory,
    pub iterations: usize,
    /// `L^inf_t H^{s_c}` distance between successive iterates.
    pub distances: Vec<f64>,
    /// Ratios of successive distances.
    pub factors: Vec<f64>,
    /// Scattering-size norm of the fixed point on the interval.
    pub w_norm: f64,
}

/// Fixed-point iteration of the Duhamel map on the samples `0, dt, 2 dt, ...`,
/// with the time integral done by the composite trapezoid rule.
pub fn picard_local_solve(
    state0: &StateVec,
    interval_length: f64,
    cfg: &SolveConfig,
) -> Result<PicardSolution> {
    let grid = state0.grid();
    cfg.validate(grid)?;
    if !(interval_length > 0.0) {
        return Err(KgError::InvalidArgument("interval length must be positive".into()));
    }
    let dt = cfg.dt;
    let full = (interval_length / dt * (1.0 + 1e-12)).floor() as usize;
    let mut times: Vec<f64> = (0..=full).map(|k| k as f64 * dt).collect();
    if interval_length - times[full] > time_eps(&[0.0, interval_length]) {
        times.push(interval_length);
    }
    let sc = grid.critical_regularity();
    let nl = Nonlinearity::new(grid, cfg.dealias, cfg.focusing);
    let start = canonical(state0);
    let free: Vec<SpectralState> = times
        .par_iter()
        .map(|&t| free_propagate_spectral(&start, t))
        .collect();

    let mut current = free.clone();
    let mut distances = Vec::new();
    let mut factors = Vec::new();
    let mut increases = 0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.picard_max_iter {
        iterations += 1;
        let forcing: Vec<SpectralField> = current.par_iter().map(|s| nl.eval(&s.u)).collect();
        let norms = grid.frequency_norms();
        let mut next = Vec::with_capacity(times.len());
        let mut acc = SpectralState {
            u: SpectralField::zeros(grid),
            udot: SpectralField::zeros(grid),
        };
        next.push(free[0].clone());
        for i in 1..times.len() {
            let h = times[i] - times[i - 1];
            kick(&mut acc.udot, &forcing[i - 1], 0.5 * h);
            propagate_in_place(&grid, &norms, &mut acc.u.coeffs, &mut acc.udot.coeffs, h);
            let mut here = acc.clone();
            kick(&mut here.udot, &forcing[i], 0.5 * h);
            kick(&mut acc.udot, &forcing[i], 0.5 * h);
            next.push(SpectralState {
                u: &free[i].u + &here.u,
                udot: &free[i].udot + &here.udot,
            });
        }
        let dist = next
            .par_iter()
            .zip(current.par_iter())
            .map(|(a, b)| (&a.u - &b.u).sobolev_norm(sc))
            .reduce(|| 0.0, f64::max);
        if let Some(&prev) = distances.last() {
            factors.push(if prev > 0.0 { dist / prev } else { 0.0 });
            if dist > prev {
                increases += 1;
            } else {
                increases = 0;
            }
        }
        distances.push(dist);
        current = next;
        if dist < cfg.picard_tol {
            converged = true;
            break;
        }
        if increases >= 3 || !dist.is_finite() {
            return Err(KgError::ContractionFailure { factors });
        }
    }

    let mut traj = Trajectory::new(grid);
    for (k, (t, s)) in times.iter().zip(&current).enumerate() {
        let phys = s.to_physical();
        let e = energy_from_parts(s, &phys.u, cfg.focusing).energy;
        traj.push(*t, k as u64, phys, e);
    }
    if !converged {
        traj.status = RunStatus::ToleranceFail;
    }
    let bank = LpBank::new(grid);
    let spec = NormSpec::scattering(grid.dim()).annihilating();
    let fields: Vec<SpectralField> = current.into_iter().map(|s| s.u).collect();
    let w_norm = bank.strichartz_norm_fields(&traj.times, &fields, &spec)?;
    Ok(PicardSolution {
        trajectory: traj,
        iterations,
        distances,
        factors,
        w_norm,
    })
}

// ---------------------------------------------------------------------------
// Continuation

/// Evolves to `horizon` in segments of length `cfg.t_final`. A segment that
/// trips the blowup detector is retried once with half the step; the halved
/// step is kept for the rest of the run.
pub fn continue_maximal(state0: &StateVec, cfg: &SolveConfig, horizon: f64) -> Result<Trajectory> {
    let grid = state0.grid();
    cfg.validate(grid)?;
    if !(horizon >= 0.0) {
        return Err(KgError::InvalidArgument("horizon must be nonnegative".into()));
    }
    let segment = if cfg.t_final > 0.0 { cfg.t_final } else { horizon };
    let mut cfg = cfg.clone();
    let mut clock = Clock::default();
    let mut state = state0.clone();
    let mut out = Trajectory::new(grid);
    let mut retried = false;
    loop {
        let now = clock.now(cfg.dt);
        let remaining = horizon - now;
        let mut seg_cfg = cfg.clone();
        seg_cfg.t_final = if remaining <= segment * (1.0 + 1e-9) {
            remaining.max(0.0)
        } else {
            segment
        };
        let mut piece = evolve_from(&state, clock, &seg_cfg)?;
        if piece.status == RunStatus::BlowupSuspected && !retried {
            retried = true;
            cfg.dt *= 0.5;
            seg_cfg.dt = cfg.dt;
            clock = Clock {
                t_base: now,
                k_base: clock.step,
                step: clock.step,
            };
            piece = evolve_from(&state, clock, &seg_cfg)?;
        }
        let status = piece.status;
        let Some(last_state) = piece.final_state().cloned() else {
            break;
        };
        let done = remaining <= segment * (1.0 + 1e-9);
        out.extend(piece)?;
        if status != RunStatus::Complete || done {
            break;
        }
        state = last_state;
        clock = clock.after(&out, cfg.dt);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Stability

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityReport {
    pub window: (f64, f64),
    /// Scattering-size norm of the free evolution of the initial difference.
    pub epsilon: f64,
    /// Scattering-size norm of `u - w` on the window.
    pub difference: f64,
    pub ratio: f64,
}

/// Compares two trajectories sampled at the same times on `window`.
pub fn stability_compare(
    u_traj: &Trajectory,
    w_traj: &Trajectory,
    window: (f64, f64),
) -> Result<StabilityReport> {
    u_traj.grid.check_same(&w_traj.grid)?;
    let u = u_traj.window(window.0, window.1)?;
    let w = w_traj.window(window.0, window.1)?;
    let eps = time_eps(&u.times);
    if u.len() != w.len() || u.times.iter().zip(&w.times).any(|(a, b)| (a - b).abs() > eps) {
        return Err(KgError::InvalidArgument(
            "trajectories are sampled at different times on the window".into(),
        ));
    }
    let grid = u.grid;
    let bank = LpBank::new(grid);
    let spec = NormSpec::scattering(grid.dim()).annihilating().on(window.0, window.1);
    let diff: Vec<SpectralField> = u
        .states
        .par_iter()
        .zip(w.states.par_iter())
        .map(|(a, b)| (&a.u - &b.u).to_spectral())
        .collect();
    let d0 = u.states[0].sub(&w.states[0]).to_spectral();
    let t0 = u.times[0];
    let free: Vec<SpectralField> = u
        .times
        .par_iter()
        .map(|&t| free_propagate_spectral(&d0, t - t0).u)
        .collect();
    let epsilon = bank.strichartz_norm_fields(&u.times, &free, &spec)?;
    let difference = bank.strichartz_norm_fields(&u.times, &diff, &spec)?;
    let ratio = if epsilon > 0.0 {
        difference / epsilon
    } else if difference == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(StabilityReport {
        window,
        epsilon,
        difference,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random;
    use crate::spectral::RealField;

    fn grid1() -> Grid {
        Grid::new(1, 64, 20.0, 1.0).unwrap()
    }

    #[test]
    fn zero_data_stays_zero() {
        let g = grid1();
        let cfg = SolveConfig::for_grid(g, 2.0);
        let traj = evolve(&StateVec::zeros(g), &cfg).unwrap();
        assert_eq!(traj.status, RunStatus::Complete);
        assert!(traj.states.iter().all(|s| s.is_zero()));
        assert!(traj.duhamel_residual.iter().all(|r| *r == 0.0));
        let p = picard_local_solve(&StateVec::zeros(g), 0.5, &cfg).unwrap();
        assert_eq!(p.iterations, 1);
        assert!(p.trajectory.states.iter().all(|s| s.is_zero()));
    }

    #[test]
    fn cfl_is_enforced() {
        let g = grid1();
        let dt = default_dt(g, true);
        let w = max_retained_omega(g, true);
        assert!(dt * w <= DEFAULT_CFL && 2.0 * dt * w > DEFAULT_CFL);
        assert!(SolveConfig::new(CFL_LIMIT / w, 1.0).validate(g).is_ok());
        assert!(SolveConfig::new(1.01 * CFL_LIMIT / w, 1.0).validate(g).is_err());
    }

    #[test]
    fn sample_times_are_step_multiples() {
        let g = grid1();
        let cfg = SolveConfig::new(0.0625, 1.0).with_sample_every(4);
        let u0 = random::gaussian(g, 0.5, 1.0, &[0.0]);
        let traj = evolve(&StateVec::new(u0, RealField::zeros(g)).unwrap(), &cfg).unwrap();
        assert_eq!(traj.times, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(traj.steps, vec![0, 4, 8, 12, 16]);
    }

    #[test]
    fn shortened_final_step_lands_on_t() {
        let g = grid1();
        let cfg = SolveConfig::new(0.0625, 0.3);
        let u0 = random::gaussian(g, 0.5, 1.0, &[0.0]);
        let traj = evolve(&StateVec::new(u0, RealField::zeros(g)).unwrap(), &cfg).unwrap();
        assert_eq!(traj.last_time(), 0.3);
        assert_eq!(traj.len(), 6);
    }

    #[test]
    fn picard_matches_integrator() {
        let g = grid1();
        let cfg = SolveConfig::new(0.0625, 1.0);
        let u0 = random::gaussian(g, 0.3, 1.0, &[0.0]);
        let s0 = StateVec::new(u0, RealField::zeros(g)).unwrap();
        let p = picard_local_solve(&s0, 1.0, &cfg).unwrap();
        let e = evolve(&s0, &cfg).unwrap();
        let a = p.trajectory.final_state().unwrap();
        let b = e.final_state().unwrap();
        assert!((&a.u - &b.u).l2_norm() < 1e-12);
        assert!(p.factors.iter().all(|f| *f < 1.0));
    }

    #[test]
    fn three_point_weights_integrate_quadratics() {
        let w = three_point_weights(0.3, 0.7);
        let nodes = [0.0, 0.3, 1.0];
        for p in 0..3 {
            let q: f64 = w.iter().zip(nodes).map(|(w, x)| w * f64::powi(x, p)).sum();
            assert!((q - 1.0 / (p + 1) as f64).abs() < 1e-14);
        }
    }

    #[test]
    fn stability_of_identical_runs_is_zero() {
        let g = Grid::new(3, 16, 12.0, 1.0).unwrap();
        let cfg = SolveConfig::for_grid(g, 1.0);
        let u0 = random::gaussian(g, 0.2, 1.5, &[0.0; 3]);
        let traj = evolve(&StateVec::new(u0, RealField::zeros(g)).unwrap(), &cfg).unwrap();
        let r = stability_compare(&traj, &traj, (0.0, 1.0)).unwrap();
        assert_eq!(r.difference, 0.0);
        assert_eq!(r.epsilon, 0.0);
        assert!(stability_compare(&traj, &traj, (0.0, 2.0)).is_err());
    }
}
