//! Scenario runner: builds data from a [`RunConfig`], runs the solver and
//! analysis pipelines, and writes CSV / JSON artifacts plus checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::config::{RunConfig, Scenario};
use crate::diagnostics::{self, diagnostics_table_from, scattering_detect, ScatterVerdict};
use crate::error::{KgError, Result};
use crate::lpbesov::{inequality_harness, HarnessConfig, HarnessKind};
use crate::profiles::{self, ParamTrack, ProfileParams};
use crate::random;
use crate::snapshot::{self, CheckpointMeta};
use crate::solver::{continue_maximal, evolve, evolve_from, stability_compare, Clock, SolveConfig};
use crate::spectral::{Grid, RealField, SpectralField};
use crate::trajectory::{RunStatus, Trajectory};

pub const SUMMARY_SCHEMA: u32 = 1;
pub const SUMMARY_FILE: &str = "summary.json";
pub const CSV_FILE: &str = "diagnostics.csv";

/// Result of one scenario; `pass` decides the exit status.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub pass: bool,
    pub summary: Value,
}

/// Named PASS/FAIL checks collected by a scenario.
#[derive(Default)]
struct Checks(Vec<(String, bool, Value)>);

impl Checks {
    fn add(&mut self, name: &str, pass: bool, detail: Value) {
        self.0.push((name.to_string(), pass, detail));
    }

    fn pass(&self) -> bool {
        self.0.iter().all(|c| c.1)
    }

    fn to_json(&self) -> (Value, Value) {
        let criteria = self
            .0
            .iter()
            .map(|(n, p, d)| json!({"name": n, "pass": p, "detail": d}))
            .collect::<Vec<_>>();
        let failing = self.0.iter().filter(|c| !c.1).map(|c| c.0.clone()).collect::<Vec<_>>();
        (Value::Array(criteria), json!(failing))
    }
}

/// Upper bound on concurrent runs from `KGFLOW_THREADS` (unset: rayon default).
pub fn thread_cap() -> Option<usize> {
    std::env::var("KGFLOW_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs `cfg.scenario`, writing every artifact under `cfg.output`.
pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let out = cfg.output.clone();
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| KgError::InvalidArgument(format!("thread pool: {e}")))?;
    let (checks, constants, details) = pool.install(|| match cfg.scenario {
        Scenario::Evolve => run_evolve(cfg, &out),
        Scenario::SmallDataSweep => run_sweep(cfg, &out),
        Scenario::StabilityLadder => run_stability(cfg, &out),
        Scenario::MorawetzSuite => run_morawetz(cfg, &out),
        Scenario::ProfileRoundtrip => run_profiles(cfg, &out),
        Scenario::InequalityHarness => run_harness(cfg, &out),
    })?;
    let (criteria, failing) = checks.to_json();
    let pass = checks.pass();
    let summary = json!({
        "schema": SUMMARY_SCHEMA,
        "scenario": cfg.scenario.name(),
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "pass": pass,
        "failing": failing,
        "criteria": criteria,
        "constants": constants,
        "details": details,
    });
    fs::write(out.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(Outcome { pass, summary })
}

type Parts = (Checks, Map<String, Value>, Value);

fn write_table(path: &Path, traj: &Trajectory, focusing: bool, morawetz_offset: f64) -> Result<Vec<diagnostics::DiagnosticsRecord>> {
    let origin = vec![0.0; traj.grid.dim()];
    let records = diagnostics_table_from(traj, &origin, focusing, morawetz_offset)?;
    let mut buf = Vec::new();
    diagnostics::write_csv(&records, traj.grid.dim(), &mut buf)?;
    fs::write(path, buf)?;
    Ok(records)
}

fn max_drift(energies: &[f64], e0: f64) -> f64 {
    let scale = if e0.abs() > 0.0 { e0.abs() } else { 1.0 };
    energies.iter().map(|e| (e - e0).abs() / scale).fold(0.0, f64::max)
}

fn status_name(s: RunStatus) -> Value {
    serde_json::to_value(s).unwrap_or(Value::Null)
}

fn run_dir(out: &Path, name: &str) -> Result<PathBuf> {
    let d = out.join("runs").join(name);
    fs::create_dir_all(&d)?;
    Ok(d)
}

// ---------------------------------------------------------------------------
// evolve

fn run_evolve(cfg: &RunConfig, out: &Path) -> Result<Parts> {
    let grid = cfg.build_grid()?;
    let mut solve = cfg.build_solve()?;
    let ckdir = out.join("checkpoints");
    fs::create_dir_all(&ckdir)?;

    let (state0, clock0, morawetz0, energy0) = match &cfg.evolve.resume {
        Some(stem) => {
            let (state, meta) = snapshot::read_checkpoint(stem)?;
            grid.check_same(&state.grid()).map_err(|_| KgError::Config {
                path: "evolve.resume".into(),
                message: "checkpoint grid differs from [grid]".into(),
            })?;
            let t_final = solve.t_final;
            solve = meta.cfg.clone();
            solve.t_final = t_final;
            let get = |k: &str| meta.diagnostics.get(k).and_then(Value::as_f64);
            let e0 = get("energy0").unwrap_or_else(|| diagnostics::energy_signed(&state, solve.focusing).energy);
            (state, meta.clock(), get("morawetz_cum").unwrap_or(0.0), e0)
        }
        None => {
            let s = cfg.data.build(grid)?;
            let e0 = diagnostics::energy_signed(&s, solve.focusing).energy;
            (s, Clock::default(), 0.0, e0)
        }
    };

    // Segments end on checkpoints; each starts from the previous end state,
    // exactly as a resumed run would.
    let seg = if cfg.evolve.checkpoint_every > 0.0 {
        cfg.evolve.checkpoint_every.min(solve.t_final)
    } else {
        solve.t_final
    };
    let t_start = clock0.now(solve.dt);
    let t_end = t_start + solve.t_final;
    let mut traj = Trajectory::new(grid);
    let mut clock = clock0;
    let mut state = state0;
    let mut ends: Vec<(usize, Clock)> = Vec::new();
    loop {
        let now = traj.times.last().copied().unwrap_or(t_start);
        let remaining = t_end - now;
        let mut c = solve.clone();
        c.t_final = if remaining <= seg * (1.0 + 1e-9) { remaining.max(0.0) } else { seg };
        let piece = evolve_from(&state, clock, &c)?;
        let done = c.t_final == remaining.max(0.0) || piece.status != RunStatus::Complete;
        let seg_clock = clock;
        traj.extend(piece)?;
        ends.push((traj.len() - 1, seg_clock));
        if done {
            break;
        }
        state = traj.final_state().cloned().expect("non-empty trajectory");
        clock = clock.after(&traj, solve.dt);
    }

    let records = write_table(&out.join(CSV_FILE), &traj, solve.focusing, morawetz0)?;
    for (k, (idx, seg_clock)) in ends.iter().enumerate() {
        let r = &records[*idx];
        let mut diag = Map::new();
        diag.insert("energy0".into(), json!(energy0));
        diag.insert("energy".into(), json!(r.energy));
        diag.insert("morawetz_cum".into(), json!(if r.morawetz_cum.is_nan() { 0.0 } else { r.morawetz_cum }));
        let meta = CheckpointMeta::new(traj.times[*idx], traj.steps[*idx], *seg_clock, &solve, diag);
        let name = if k + 1 == ends.len() { "final".to_string() } else { format!("ckpt_{k:04}") };
        snapshot::write_checkpoint(&ckdir.join(name), &traj.states[*idx], &meta)?;
    }

    let drift = max_drift(&traj.energies, energy0);
    let mut checks = Checks::default();
    checks.add("status_complete", traj.status == RunStatus::Complete, status_name(traj.status));
    if !solve.focusing {
        checks.add(
            "energy_drift",
            drift <= cfg.evolve.energy_tol,
            json!({"value": drift, "limit": cfg.evolve.energy_tol}),
        );
    }
    let mut constants = Map::new();
    constants.insert("energy_drift".into(), json!(drift));
    let details = json!({
        "dt": solve.dt,
        "samples": traj.len(),
        "t_start": t_start,
        "t_end": traj.last_time(),
        "energy0": energy0,
        "max_duhamel_residual": traj.duhamel_residual.iter().copied().fold(0.0, f64::max),
        "checkpoints": ends.len(),
    });
    Ok((checks, constants, details))
}

// ---------------------------------------------------------------------------
// small_data_sweep

struct SweepRun {
    amplitude: f64,
    status: RunStatus,
    scatters: bool,
    final_residual: Option<f64>,
    traj: Option<Trajectory>,
}

fn sweep_one(cfg: &RunConfig, solve: &SolveConfig, grid: Grid, amplitude: f64, keep: bool) -> Result<SweepRun> {
    let s = cfg.data.build_with_amplitude(grid, amplitude)?;
    let traj = continue_maximal(&s, solve, cfg.sweep.horizon)?;
    let (scatters, final_residual) = if traj.status == RunStatus::Complete {
        let r = scattering_detect(&traj, cfg.sweep.scatter_tol)?;
        // Residual at the start of the final third, where the verdict is read.
        let third = r.cauchy_residuals.len() * 2 / 3;
        (
            r.verdict == ScatterVerdict::Scatters,
            r.cauchy_residuals.get(third).map(|c| c.1),
        )
    } else {
        (false, None)
    };
    Ok(SweepRun {
        amplitude,
        status: traj.status,
        scatters,
        final_residual,
        traj: keep.then_some(traj),
    })
}

fn run_sweep(cfg: &RunConfig, out: &Path) -> Result<Parts> {
    let grid = cfg.build_grid()?;
    let solve = cfg.build_solve()?;
    let amps = &cfg.sweep.amplitudes;
    let runs: Vec<SweepRun> = amps
        .par_iter()
        .map(|&a| sweep_one(cfg, &solve, grid, a, true))
        .collect::<Result<_>>()?;
    for (i, r) in runs.iter().enumerate() {
        if let Some(t) = &r.traj {
            write_table(&run_dir(out, &format!("amp_{i:02}"))?.join(CSV_FILE), t, solve.focusing, 0.0)?;
        }
    }

    let first_fail = runs.iter().position(|r| !r.scatters);
    let monotone = match first_fail {
        Some(k) => runs[k..].iter().all(|r| !r.scatters),
        None => true,
    };
    let mut bisection = Vec::new();
    let threshold = match first_fail {
        Some(0) | None => None,
        Some(k) => {
            let (mut lo, mut hi) = (amps[k - 1], amps[k]);
            for _ in 0..cfg.sweep.bisect_steps {
                let mid = (lo * hi).sqrt();
                let r = sweep_one(cfg, &solve, grid, mid, false)?;
                bisection.push(json!({"amplitude": mid, "scatters": r.scatters, "status": status_name(r.status)}));
                if r.scatters {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Some((lo, hi))
        }
    };

    let mut rows = String::from("amplitude,status,scatters,final_third_residual\n");
    for r in &runs {
        rows += &format!(
            "{:e},{},{},{:e}\n",
            r.amplitude,
            status_name(r.status).as_str().unwrap_or("?"),
            r.scatters,
            r.final_residual.unwrap_or(f64::NAN)
        );
    }
    fs::write(out.join("sweep.csv"), rows)?;

    let mut checks = Checks::default();
    checks.add("smallest_amplitude_scatters", runs[0].scatters, json!(runs[0].amplitude));
    checks.add("verdict_monotone_in_amplitude", monotone, json!(first_fail.map(|k| amps[k])));
    let below_complete = runs
        .iter()
        .take(first_fail.unwrap_or(runs.len()))
        .all(|r| r.status == RunStatus::Complete);
    checks.add("runs_below_threshold_complete", below_complete, Value::Null);

    let mut constants = Map::new();
    if let Some((lo, _)) = threshold {
        constants.insert("smallness_threshold".into(), json!(lo));
    }
    let per_amp: Vec<Value> = runs
        .iter()
        .map(|r| {
            json!({
                "amplitude": r.amplitude,
                "status": status_name(r.status),
                "verdict": if r.scatters { "scatters" } else { "inconclusive" },
                "final_third_residual": r.final_residual,
            })
        })
        .collect();
    let details = json!({
        "horizon": cfg.sweep.horizon,
        "scatter_tol": cfg.sweep.scatter_tol,
        "runs": per_amp,
        "threshold_bracket": threshold.map(|(lo, hi)| vec![lo, hi]),
        "threshold_above_all": first_fail.is_none(),
        "bisection": bisection,
    });
    Ok((checks, constants, details))
}

// ---------------------------------------------------------------------------
// stability_ladder

fn run_stability(cfg: &RunConfig, out: &Path) -> Result<Parts> {
    let grid = cfg.build_grid()?;
    let solve = cfg.build_solve()?;
    let st = &cfg.stability;
    let mut rng = random::rng(cfg.seed);
    let p = random::smooth_state(grid, &mut rng, 2.0, 1.0);
    let p = p.scaled(1.0 / p.critical_norm().max(f64::MIN_POSITIVE));
    let window = (0.0, solve.t_final);

    let ladders = [("linear", st.linear_amplitude), ("nonlinear", st.amplitude)];
    let mut jobs: Vec<(usize, Option<f64>)> = Vec::new();
    for l in 0..ladders.len() {
        jobs.push((l, None));
        for &e in &st.epsilons {
            jobs.push((l, Some(e)));
        }
    }
    let trajs: Vec<Trajectory> = jobs
        .par_iter()
        .map(|&(l, eps)| {
            let base = cfg.data.build_with_amplitude(grid, ladders[l].1)?;
            let s = match eps {
                None => base,
                Some(e) => base.add(&p.scaled(e)),
            };
            evolve(&s, &solve)
        })
        .collect::<Result<_>>()?;

    let mut rows = String::from("ladder,base_amplitude,epsilon,epsilon_w,difference_w,ratio\n");
    let mut checks = Checks::default();
    let mut constants = Map::new();
    let mut details = Map::new();
    let mut overall = 0.0f64;
    for (l, (name, amp)) in ladders.iter().enumerate() {
        let base_idx = jobs.iter().position(|j| *j == (l, None)).unwrap();
        let u = &trajs[base_idx];
        if l == 1 {
            write_table(&out.join(CSV_FILE), u, solve.focusing, 0.0)?;
        }
        let mut ratios = Vec::new();
        let mut complete = u.status == RunStatus::Complete;
        for &e in &st.epsilons {
            let wi = jobs.iter().position(|j| *j == (l, Some(e))).unwrap();
            complete &= trajs[wi].status == RunStatus::Complete;
            let rep = stability_compare(u, &trajs[wi], window)?;
            rows += &format!("{name},{amp:e},{e:e},{:e},{:e},{:e}\n", rep.epsilon, rep.difference, rep.ratio);
            ratios.push(rep.ratio);
        }
        let max = ratios.iter().copied().fold(0.0, f64::max);
        let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let finite = ratios.iter().all(|r| r.is_finite() && *r > 0.0);
        overall = overall.max(max);
        checks.add(&format!("{name}_runs_complete"), complete, Value::Null);
        checks.add(
            &format!("{name}_ratio_spread"),
            finite && max / min <= st.max_spread,
            json!({"value": max / min, "limit": st.max_spread}),
        );
        if l == 0 {
            checks.add(
                "linear_ratio_band",
                finite && ratios.iter().all(|r| (st.linear_band[0]..=st.linear_band[1]).contains(r)),
                json!({"ratios": ratios, "band": st.linear_band}),
            );
        }
        constants.insert(format!("stability_{name}_max_ratio"), json!(max));
        details.insert(name.to_string(), json!({"base_amplitude": amp, "epsilons": st.epsilons, "ratios": ratios}));
    }
    constants.insert("stability_constant".into(), json!(overall));
    fs::write(out.join("stability.csv"), rows)?;
    Ok((checks, constants, Value::Object(details)))
}

// ---------------------------------------------------------------------------
// morawetz_suite

fn run_morawetz(cfg: &RunConfig, out: &Path) -> Result<Parts> {
    let grid = cfg.build_grid()?;
    if grid.dim() < 2 {
        return Err(KgError::Config {
            path: "grid.dim".into(),
            message: "the Morawetz weight 1/|x| needs dim >= 2".into(),
        });
    }
    let mut solve = cfg.build_solve()?;
    solve.focusing = false;
    let m = &cfg.morawetz;
    let results: Vec<(Trajectory, Vec<diagnostics::DiagnosticsRecord>)> = m
        .amplitudes
        .par_iter()
        .zip(m.widths.par_iter())
        .enumerate()
        .map(|(i, (&a, &w))| {
            let mut data = cfg.data.clone();
            data.width = w;
            let traj = evolve(&data.build_with_amplitude(grid, a)?, &solve)?;
            let records = write_table(&run_dir(out, &format!("run_{i:02}"))?.join(CSV_FILE), &traj, false, 0.0)?;
            Ok((traj, records))
        })
        .collect::<Result<_>>()?;

    let mut rows = String::from("run,time,morawetz_cum,energy,ratio\n");
    let mut constant = 0.0f64;
    let mut per_run = Vec::new();
    let mut complete = true;
    let mut finite = true;
    for (i, (traj, recs)) in results.iter().enumerate() {
        complete &= traj.status == RunStatus::Complete;
        let e0 = recs[0].energy;
        let mut run_max = 0.0f64;
        for r in recs {
            let ratio = r.morawetz_cum / e0;
            finite &= ratio.is_finite();
            run_max = run_max.max(ratio);
            rows += &format!("{i},{:e},{:e},{:e},{:e}\n", r.time, r.morawetz_cum, e0, ratio);
        }
        constant = constant.max(run_max);
        per_run.push(json!({
            "amplitude": m.amplitudes[i],
            "width": m.widths[i],
            "energy": e0,
            "status": status_name(traj.status),
            "max_ratio": run_max,
            "energy_drift": max_drift(&traj.energies, e0),
        }));
    }
    fs::write(out.join("morawetz.csv"), rows)?;

    let mut checks = Checks::default();
    checks.add("runs_complete", complete, Value::Null);
    checks.add("ratios_finite", finite && constant > 0.0, json!(constant));
    if let Some(b) = m.baseline {
        let drift = (constant / b - 1.0).abs();
        checks.add(
            "baseline_drift",
            drift <= m.max_drift,
            json!({"value": drift, "limit": m.max_drift, "baseline": b}),
        );
    }
    let mut constants = Map::new();
    constants.insert("morawetz_constant".into(), json!(constant));
    Ok((checks, constants, json!({"runs": per_run, "horizon": solve.t_final})))
}

// ---------------------------------------------------------------------------
// profile_roundtrip

/// Gaussian and Mexican-hat profiles with two diverging parameter tracks:
/// the first stays at unit scale, the second concentrates like `2/sqrt(n)`;
/// their centers separate linearly in `n` and reach `L/4` at the last `n`.
pub fn two_bubble_fixture(
    grid: Grid,
    ns: &[u64],
    sigma: f64,
    hat_width: f64,
) -> Result<(Vec<SpectralField>, Vec<ParamTrack>)> {
    let d = grid.dim();
    let phi_a = random::gaussian(grid, 1.0, sigma, &vec![0.0; d]).to_spectral();
    let s2 = hat_width * hat_width;
    let phi_b = RealField::from_fn(grid, |x| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        (1.0 - r2 / s2) * (-r2 / (2.0 * s2)).exp()
    })
    .to_spectral();
    let n_last = *ns.last().ok_or_else(|| KgError::InvalidArgument("empty ns".into()))? as f64;
    // Off-lattice centers so the recovered shift is a genuine estimate.
    let offset = 2.4 * grid.cell();
    let mut ta = Vec::new();
    let mut tb = Vec::new();
    for &n in ns {
        let sep = grid.length() / 4.0 * n as f64 / n_last;
        let mut xa = vec![0.0; d];
        let mut xb = vec![0.0; d];
        xa[0] = -0.5 * sep + offset;
        xb[0] = 0.5 * sep + offset;
        ta.push(ProfileParams::new(0.0, xa, 1.0)?);
        tb.push(ProfileParams::new(0.0, xb, (2.0 / (n as f64).sqrt()).min(1.0))?);
    }
    Ok((
        vec![phi_a, phi_b],
        vec![ParamTrack::new(ns.to_vec(), ta)?, ParamTrack::new(ns.to_vec(), tb)?],
    ))
}

/// `(1 + |xi|^2)^{-1/2}`, the smooth bounded multiplier used for the
/// commutation check.
pub fn bessel_multiplier(xi: &[f64]) -> Complex64 {
    Complex64::new((1.0 + xi.iter().map(|x| x * x).sum::<f64>()).powf(-0.5), 0.0)
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn run_profiles(cfg: &RunConfig, out: &Path) -> Result<Parts> {
    let grid = cfg.build_grid()?;
    let pc = &cfg.profiles;
    let (truth, tracks) = two_bubble_fixture(grid, &pc.ns, pc.sigma, pc.hat_width)?;
    let seq = profiles::synth_complex(&truth, &tracks, pc.noise, cfg.seed, grid)?;
    let dec = profiles::extract_profiles_complex(&seq, pc.k_max, pc.threshold)?;
    let report = dec.report();
    fs::write(out.join("decomposition.json"), serde_json::to_string_pretty(&report)? + "\n")?;

    let defects = dec.defects();
    let defects_mu = dec.defects_with(bessel_multiplier);
    let last = pc.ns.len() - 1;

    // Match each true bubble with the extracted bubble closest to it at the
    // last element.
    let mut matches = Vec::new();
    for (phi, track) in truth.iter().zip(&tracks) {
        let want = profiles::bubble(phi, &track.params[last])?;
        let best = dec
            .profiles
            .iter()
            .map(|p| (&p.bubbles[last] - &want).l2_norm() / want.l2_norm())
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1));
        matches.push(best.map(|(k, err)| {
            let got = &dec.profiles[k].params[last];
            let tp = &track.params[last];
            let scale_steps = (got.scale / tp.scale).log2().abs();
            let shift = diagnostics::periodic_distance(&got.x_shift, &tp.x_shift, grid.length());
            (k, err, scale_steps, shift)
        }));
    }

    let mut rows = String::from("n,defect,defect_mu\n");
    for (i, n) in pc.ns.iter().enumerate() {
        rows += &format!("{n},{:e},{:e}\n", defects[i], defects_mu[i]);
    }
    fs::write(out.join("profiles.csv"), rows)?;

    let mut checks = Checks::default();
    checks.add("profile_count", dec.k() == truth.len(), json!(dec.k()));
    let distinct = matches.iter().flatten().map(|m| m.0).collect::<std::collections::BTreeSet<_>>().len();
    checks.add("distinct_matches", distinct == truth.len(), json!(distinct));
    for (j, m) in matches.iter().enumerate() {
        let (scale_ok, shift_ok, l2_ok, detail) = match m {
            Some((k, err, steps, shift)) => (
                *steps <= 1.0,
                *shift <= grid.cell(),
                *err <= 0.05,
                json!({"extracted": k, "l2_error": err, "scale_steps": steps, "shift_error": shift}),
            ),
            None => (false, false, false, Value::Null),
        };
        checks.add(&format!("bubble_{j}_scale"), scale_ok, detail.clone());
        checks.add(&format!("bubble_{j}_shift"), shift_ok, detail.clone());
        checks.add(&format!("bubble_{j}_profile_l2"), l2_ok, detail);
    }
    checks.add(
        "defect_last",
        defects[last] < pc.max_defect,
        json!({"value": defects[last], "limit": pc.max_defect}),
    );
    checks.add("defect_monotone", strictly_decreasing(&defects), json!(defects));
    checks.add("defect_mu_monotone", strictly_decreasing(&defects_mu), json!(defects_mu));

    let mut constants = Map::new();
    constants.insert("defect_last".into(), json!(defects[last]));
    let details = json!({"ns": pc.ns, "defects": defects, "defects_mu": defects_mu, "decomposition": report});
    Ok((checks, constants, details))
}

// ---------------------------------------------------------------------------
// inequality_harness

fn run_harness(cfg: &RunConfig, out: &Path) -> Result<Parts> {
    let hs = &cfg.harness;
    let reports = hs
        .kinds
        .par_iter()
        .map(|&kind| {
            let samples = if kind == HarnessKind::DispersiveDecay { hs.decay_samples } else { hs.samples };
            let mut h = HarnessConfig::new(kind, samples, cfg.seed);
            h.seeds = hs.seeds;
            inequality_harness(&h).map(|r| (h, r))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut checks = Checks::default();
    let mut constants = Map::new();
    let mut details = Map::new();
    for (h, r) in &reports {
        let name = h.kind.name();
        let mut buf = Vec::new();
        r.write_csv(&mut buf)?;
        fs::write(out.join(format!("harness_{name}.csv")), buf)?;
        checks.add(&format!("{name}_finite_and_seed_stable"), r.pass, json!(r.seed_max_ratios));
        constants.insert(format!("{name}_constant"), json!(r.max_ratio));
        if h.kind == HarnessKind::DispersiveDecay {
            let target = -(h.dim as f64 - 1.0) / 2.0;
            let got = r.decay_exponent.unwrap_or(f64::NAN);
            checks.add(
                "dispersive_exponent",
                (got - target).abs() <= 0.3,
                json!({"value": got, "target": target, "tolerance": 0.3}),
            );
        }
        details.insert(name.to_string(), r.summary_json());
    }
    Ok((checks, constants, Value::Object(details)))
}

// ---------------------------------------------------------------------------
// report

/// Merged view of the summaries found under a directory.
#[derive(Clone, Debug)]
pub struct ReportOutcome {
    pub summary: Value,
    pub drift_flagged: bool,
    pub found: usize,
}

pub const DRIFT_LIMIT: f64 = 0.5;

fn find_summaries(dir: &Path, depth: usize, out: &mut Vec<PathBuf>) {
    let Ok(entries) = fs::read_dir(dir) else { return };
    let mut entries: Vec<_> = entries.flatten().map(|e| e.path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() && depth > 0 {
            find_summaries(&p, depth - 1, out);
        } else if p.file_name().is_some_and(|n| n == SUMMARY_FILE) {
            out.push(p);
        }
    }
}

/// Merges every `summary.json` under `dir` (without recomputing anything) and
/// flags empirical constants that moved by more than 50% against `baseline`
/// (default: the first summary found).
pub fn report(dir: &Path, baseline: Option<&Path>) -> Result<ReportOutcome> {
    let mut paths = Vec::new();
    find_summaries(dir, 4, &mut paths);
    let mut runs = Vec::new();
    let mut problems = Vec::new();
    for p in &paths {
        match fs::read_to_string(p).map_err(KgError::from).and_then(|t| Ok(serde_json::from_str::<Value>(&t)?)) {
            Ok(v) if v.get("schema").and_then(Value::as_u64) == Some(SUMMARY_SCHEMA as u64) => runs.push((p.clone(), v)),
            Ok(_) => problems.push(json!({"path": p, "error": "unsupported schema"})),
            Err(e) => problems.push(json!({"path": p, "error": e.to_string()})),
        }
    }
    let base: Option<Value> = match baseline {
        Some(b) => match fs::read_to_string(b).map_err(KgError::from).and_then(|t| Ok(serde_json::from_str::<Value>(&t)?)) {
            Ok(v) => Some(v),
            Err(e) => {
                problems.push(json!({"path": b, "error": e.to_string()}));
                None
            }
        },
        None => runs.first().map(|r| r.1.clone()),
    };
    let base_constants = base
        .as_ref()
        .and_then(|b| b.get("constants"))
        .and_then(Value::as_object)
        .cloned()
        .unwrap_or_default();

    let mut flagged = false;
    let mut merged = Vec::new();
    for (p, v) in &runs {
        let mut drift = Map::new();
        if let Some(cs) = v.get("constants").and_then(Value::as_object) {
            for (k, b) in &base_constants {
                if let (Some(b), Some(x)) = (b.as_f64(), cs.get(k).and_then(Value::as_f64)) {
                    let rel = if b != 0.0 { (x / b - 1.0).abs() } else if x == 0.0 { 0.0 } else { f64::INFINITY };
                    let flag = !(rel <= DRIFT_LIMIT);
                    flagged |= flag;
                    drift.insert(k.clone(), json!({"baseline": b, "value": x, "relative": rel, "flag": flag}));
                }
            }
        }
        merged.push(json!({
            "path": p,
            "scenario": v.get("scenario"),
            "config_hash": v.get("config_hash"),
            "seed": v.get("seed"),
            "pass": v.get("pass"),
            "failing": v.get("failing"),
            "constants": v.get("constants"),
            "drift": drift,
        }));
    }
    let hashes: std::collections::BTreeSet<String> = runs
        .iter()
        .filter_map(|r| r.1.get("config_hash").and_then(Value::as_str).map(String::from))
        .collect();
    let summary = json!({
        "schema": SUMMARY_SCHEMA,
        "runs": merged,
        "distinct_config_hashes": hashes.len(),
        "drift_limit": DRIFT_LIMIT,
        "drift_flagged": flagged,
        "problems": problems,
    });
    Ok(ReportOutcome {
        summary,
        drift_flagged: flagged,
        found: runs.len(),
    })
}
