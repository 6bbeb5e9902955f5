//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use kgflow::config::{RunConfig, Scenario};
use kgflow::diagnostics::{energy_signed, scattering_detect, ScatterVerdict};
use kgflow::lpbesov::{LpBank, NormSpec};
use kgflow::random;
use kgflow::scenarios;
use kgflow::solver::{continue_maximal, evolve, picard_local_solve, SolveConfig};
use kgflow::{Grid, RealField, RunStatus, SpectralField, StateVec};
use serde_json::Value;

type Verdict = (bool, String);

fn bump(g: Grid, amp: f64, width: f64) -> StateVec {
    StateVec::new(random::gaussian(g, amp, width, &vec![0.0; g.dim()]), RealField::zeros(g)).unwrap()
}

fn free_flow_exactness() -> Verdict {
    let mut worst = 0.0f64;
    for (d, n, l) in [(1, 32, 10.0), (2, 16, 7.0), (3, 16, 5.0)] {
        for m in [1.0, 0.0] {
            worst = worst.max(common::single_mode_error(d, n, l, m));
        }
    }
    let dense = common::matrix_exponential_error(1.0).max(common::matrix_exponential_error(0.0));
    (
        worst <= 1e-12 && dense <= 1e-10,
        format!("plane waves {worst:.1e} (<= 1e-12), dense exponential {dense:.1e} (<= 1e-10)"),
    )
}

fn max_drift(state: &StateVec, cfg: &SolveConfig) -> (f64, RunStatus) {
    let e0 = energy_signed(state, false).energy;
    let t = evolve(state, cfg).unwrap();
    let drift = t.energies.iter().map(|e| (e - e0).abs() / e0.abs()).fold(0.0, f64::max);
    (drift, t.status)
}

fn energy_conservation() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (d, n, l) in [(1, 128, 40.0), (2, 64, 24.0), (3, 32, 16.0)] {
        let g = Grid::new(d, n, l, 1.0).unwrap();
        let cfg = SolveConfig::for_grid(g, 10.0).with_sample_every(4);
        let (drift, status) = max_drift(&bump(g, 0.25, 1.0), &cfg);
        ok &= drift <= 1e-6 && status == RunStatus::Complete;
        parts.push(format!("d={d} {drift:.1e}"));
    }
    let g = Grid::new(5, 16, 12.0, 1.0).unwrap();
    let cfg = SolveConfig::new(1.0 / 32.0, 1.0).with_sample_every(8);
    let (drift, status) = max_drift(&bump(g, 0.5, 1.5), &cfg);
    ok &= drift <= 1e-4 && status == RunStatus::Complete;
    (ok, format!("{} (<= 1e-6); d=5 {drift:.1e} (<= 1e-4)", parts.join(", ")))
}

fn littlewood_paley() -> Verdict {
    let g = Grid::new(2, 64, 20.0, 1.0).unwrap();
    let bank = LpBank::new(g);
    let spec = NormSpec::besov(1.0, 2.0);
    let mut recon = 0.0f64;
    let mut ratios = Vec::new();
    for seed in 0..100u64 {
        let mut r = random::rng(seed);
        let f = random::smooth_field(g, &mut r, 0.5 + 2.5 * (seed as f64 / 100.0)).to_spectral();
        let mut sum = SpectralField::zeros(g);
        for b in bank.blocks(false) {
            sum = &sum + &bank.project(&f, b).unwrap();
        }
        recon = recon.max((&sum - &f).l2_norm() / f.l2_norm());
        ratios.push(f.sobolev_norm(1.0) / bank.besov_norm(&f, &spec).unwrap());
    }
    let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(a, b), r| (a.min(*r), b.max(*r)));
    let c = (lo * hi).sqrt();
    let spread = (hi / c).max(c / lo) - 1.0;
    (
        recon <= 1e-12 && spread <= 0.2,
        format!("reconstruction {recon:.1e} (<= 1e-12), H^1 / B^1_22 within {:.1}% of {c:.3}", 100.0 * spread),
    )
}

/// The box is wide enough that outgoing waves do not re-enter before the
/// horizon; on a periodic box that recirculation would stop the increments
/// from shrinking.
fn small_data_scatters() -> Verdict {
    let g = Grid::new(3, 48, 64.0, 1.0).unwrap();
    let cfg = SolveConfig::for_grid(g, 10.0).with_sample_every(16);
    let t = continue_maximal(&bump(g, 1e-2, 2.0), &cfg, 40.0).unwrap();
    if t.status != RunStatus::Complete || t.last_time() != 40.0 {
        return (false, format!("status {:?} at t = {}", t.status, t.last_time()));
    }
    let rep = scattering_detect(&t, 1e-4).unwrap();
    let bank = LpBank::new(g);
    let w: Vec<f64> = (0..=8)
        .map(|k| {
            let end = 5.0 * k as f64;
            if k == 0 {
                0.0
            } else {
                bank.strichartz_norm(&t, &NormSpec::scattering(3).annihilating().on(0.0, end)).unwrap()
            }
        })
        .collect();
    let inc: Vec<f64> = w.windows(2).map(|p| p[1] - p[0]).collect();
    let decreasing = inc.windows(2).all(|p| p[1] < p[0]);
    let res: Vec<f64> = rep.cauchy_residuals.iter().map(|r| r.1).collect();
    let settling = res.windows(2).all(|p| p[1] < p[0]);
    (
        rep.verdict == ScatterVerdict::Scatters && decreasing && settling,
        format!(
            "verdict {:?}, [W] increments over 5-unit windows {:.1e} -> {:.1e} decreasing {decreasing}, \
             pull-back residuals decreasing {settling}",
            rep.verdict,
            inc[0],
            inc[inc.len() - 1]
        ),
    )
}

fn picard() -> Verdict {
    let g = Grid::new(1, 64, 8.0 * std::f64::consts::PI, 1.0).unwrap();
    let u0 = RealField::from_fn(g, |x| 1e-3 * (x[0] / 4.0).cos());
    let s = StateVec::new(u0, RealField::zeros(g)).unwrap();
    let cfg = SolveConfig::for_grid(g, 1.0);
    let p = picard_local_solve(&s, 1.0, &cfg).unwrap();
    let e = evolve(&s, &cfg).unwrap();
    let (a, b) = (p.trajectory.final_state().unwrap(), e.final_state().unwrap());
    let agree = (&a.u - &b.u).l2_norm() / b.u.l2_norm();

    let g = Grid::new(1, 64, 20.0, 1.0).unwrap();
    let cfg = SolveConfig::for_grid(g, 0.5);
    let factors: Vec<f64> = [0.05, 0.1, 0.2, 0.4, 0.8]
        .iter()
        .map(|&amp| {
            let p = picard_local_solve(&bump(g, amp, 1.5), 0.5, &cfg).unwrap();
            p.factors.iter().cloned().fold(0.0, f64::max)
        })
        .collect();
    let below = factors.iter().all(|f| *f < 1.0);
    let monotone = factors.windows(2).all(|w| w[1] > w[0]);
    (
        agree <= 1e-8 && p.iterations <= 5 && below && monotone,
        format!(
            "agreement {agree:.1e} in {} iterations, factors {:.2e}..{:.2e} monotone {monotone}",
            p.iterations,
            factors[0],
            factors[4]
        ),
    )
}

fn scenario(s: Scenario, root: &Path, edit: impl FnOnce(&mut RunConfig)) -> (bool, Value, PathBuf) {
    let mut cfg = RunConfig::preset(s);
    cfg.output = root.join(s.name());
    edit(&mut cfg);
    let out = cfg.output.clone();
    let o = scenarios::run(&cfg).unwrap();
    (o.pass, o.summary, out)
}

fn failing(summary: &Value) -> String {
    let f: Vec<&str> = summary["failing"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(Value::as_str)
        .collect();
    if f.is_empty() { String::new() } else { format!(", failing {}", f.join(" ")) }
}

fn morawetz(root: &Path) -> Verdict {
    let (pass, summary, out) = scenario(Scenario::MorawetzSuite, root, |c| {
        c.morawetz.baseline = Some(0.4536);
    });
    let csv = fs::read_to_string(out.join("morawetz.csv")).unwrap();
    let mut last: Option<(String, f64)> = None;
    let mut nondecreasing = true;
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let m: f64 = cols[2].parse().unwrap();
        if let Some((run, prev)) = &last {
            if run == cols[0] && m < *prev {
                nondecreasing = false;
            }
        }
        last = Some((cols[0].to_string(), m));
    }
    let c = summary["constants"]["morawetz_constant"].as_f64().unwrap_or(f64::NAN);
    (
        pass && nondecreasing,
        format!("constant {c:.4} vs baseline 0.4536, cumulative nondecreasing {nondecreasing}{}", failing(&summary)),
    )
}

fn preset_scenario(s: Scenario, root: &Path, key: &str) -> Verdict {
    let start = Instant::now();
    let (pass, summary, _) = scenario(s, root, |_| {});
    let secs = start.elapsed().as_secs_f64();
    let c = summary["constants"][key].as_f64().unwrap_or(f64::NAN);
    let ok = pass && (s != Scenario::ProfileRoundtrip || secs < 60.0);
    (ok, format!("{key} {c:.3e}, {secs:.1} s{}", failing(&summary)))
}

fn cli(args: &[&str]) -> (bool, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_kgflow"))
        .args(args)
        .output()
        .expect("binary runs");
    (o.status.success(), String::from_utf8_lossy(&o.stderr).into_owned())
}

fn csv_files(dir: &Path, out: &mut Vec<PathBuf>) {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir).unwrap().flatten().map(|e| e.path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            csv_files(&p, out);
        } else if p.extension().is_some_and(|e| e == "csv" || e == "kgf") {
            out.push(p);
        }
    }
}

fn reduced(s: Scenario) -> Vec<&'static str> {
    match s {
        Scenario::Evolve => vec!["solve.T=2", "evolve.checkpoint_every=1"],
        Scenario::SmallDataSweep => vec!["grid.n=16", "sweep.amplitudes=[1e-3, 1e-1]"],
        Scenario::StabilityLadder => vec!["grid.n=16", "solve.T=2", "stability.epsilons=[1e-2]"],
        Scenario::MorawetzSuite => vec!["grid.n=16", "solve.T=2", "morawetz.amplitudes=[0.5]", "morawetz.widths=[1.0]"],
        Scenario::ProfileRoundtrip => vec![],
        Scenario::InequalityHarness => vec!["harness.samples=20", "harness.decay_samples=1", "harness.seeds=2"],
    }
}

fn reproducibility(root: &Path) -> Verdict {
    let mut problems = Vec::new();
    for s in Scenario::ALL {
        let mut hashes = Vec::new();
        let mut files: Vec<Vec<Vec<u8>>> = Vec::new();
        for rep in ["a", "b"] {
            let out = root.join(rep).join(s.name());
            let mut args = vec!["run".to_string(), "--out".into(), out.display().to_string()];
            args.extend(["--override".into(), format!("scenario=\"{}\"", s.name())]);
            for o in reduced(s) {
                args.extend(["--override".into(), o.to_string()]);
            }
            let argv: Vec<&str> = args.iter().map(String::as_str).collect();
            let (ok, err) = cli(&argv);
            if !ok {
                problems.push(format!("{} run failed: {}", s.name(), err.trim()));
            }
            let summary: Value = fs::read_to_string(out.join("summary.json"))
                .ok()
                .and_then(|t| serde_json::from_str(&t).ok())
                .unwrap_or(Value::Null);
            hashes.push(summary["config_hash"].clone());
            let mut paths = Vec::new();
            csv_files(&out, &mut paths);
            files.push(paths.iter().map(|p| fs::read(p).unwrap()).collect());
        }
        if hashes[0] != hashes[1] || hashes[0].is_null() {
            problems.push(format!("{} config hashes differ", s.name()));
        }
        if files[0].is_empty() || files[0] != files[1] {
            problems.push(format!("{} outputs differ", s.name()));
        }
    }

    // Resume from the mid-run checkpoint and compare the final snapshot.
    let full = root.join("a").join("evolve");
    let resumed = root.join("resumed");
    let stem = full.join("checkpoints").join("ckpt_0000");
    let (ok, err) = cli(&[
        "run",
        "--out",
        resumed.to_str().unwrap(),
        "--override",
        "solve.T=1",
        "--override",
        &format!("evolve.resume=\"{}\"", stem.display()),
    ]);
    let same = ok
        && fs::read(full.join("checkpoints/final.kgf")).ok()
            == fs::read(resumed.join("checkpoints/final.kgf")).ok();
    if !same {
        problems.push(format!("resumed evolve differs {}", err.trim()));
    }

    let (ok, err) = cli(&["report", root.join("a").to_str().unwrap(), "--out", root.join("report_a.json").to_str().unwrap()]);
    let (ok2, _) = cli(&["report", root.to_str().unwrap(), "--out", root.join("report_all.json").to_str().unwrap()]);
    if !ok || !ok2 {
        problems.push(format!("report flagged drift {}", err.trim()));
    }
    let detail = if problems.is_empty() {
        "6 scenarios byte-identical across reruns, resume matches, report shows no drift".to_string()
    } else {
        problems.join("; ")
    };
    (problems.is_empty(), detail)
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("free flow exactness", Box::new(free_flow_exactness)),
        ("energy conservation", Box::new(energy_conservation)),
        ("littlewood-paley", Box::new(littlewood_paley)),
        ("small data scattering", Box::new(small_data_scatters)),
        ("picard iteration", Box::new(picard)),
        ("morawetz suite", Box::new(|| morawetz(root))),
        ("stability ladder", Box::new(|| preset_scenario(Scenario::StabilityLadder, root, "stability_constant"))),
        ("inequality harness", Box::new(|| preset_scenario(Scenario::InequalityHarness, root, "product_rule_constant"))),
        ("profile roundtrip", Box::new(|| preset_scenario(Scenario::ProfileRoundtrip, root, "defect_last"))),
        ("reproducibility", Box::new(|| reproducibility(&root.join("repro")))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = check();
        if !ok {
            failed += 1;
        }
        println!(
            "{} criterion {:>2} {name}: {detail} [{:.1} s]",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
