//! Invariants checked over randomized inputs.

use kgflow::config::{RunConfig, Scenario};
use kgflow::diagnostics::energy;
use kgflow::lpbesov::LpBank;
use kgflow::profiles::{apply_group_action, orthogonality_score, ProfileParams};
use kgflow::random;
use kgflow::snapshot::{read_fields, write_fields};
use kgflow::solver::{evolve, evolve_from, Clock, SolveConfig};
use kgflow::spectral::free_propagate;
use kgflow::{Grid, RealField, SpectralField, StateVec};
use proptest::prelude::*;

fn grid_for(dim: usize) -> Grid {
    match dim {
        1 => Grid::new(1, 64, 20.0, 1.0).unwrap(),
        2 => Grid::new(2, 16, 10.0, 1.0).unwrap(),
        _ => Grid::new(3, 8, 6.0, 1.0).unwrap(),
    }
}

fn quadratic(s: &StateVec) -> f64 {
    let e = energy(s);
    e.kinetic + e.gradient + e.mass
}

fn max_diff(a: &RealField, b: &RealField) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fft_roundtrip(dim in 1usize..=3, seed in any::<u64>()) {
        let g = grid_for(dim);
        let mut r = random::rng(seed);
        let u = RealField::from_fn(g, |x| x.iter().sum::<f64>().sin())
            .scaled(0.5);
        let f = &u + &random::smooth_field(g, &mut r, 0.0);
        let back = f.to_spectral().to_real();
        prop_assert!(max_diff(&f, &back) <= 1e-12 * f.max_abs().max(1.0));
    }

    #[test]
    fn littlewood_paley_blocks_sum_to_identity(dim in 1usize..=3, seed in any::<u64>(), homogeneous in any::<bool>()) {
        let g = grid_for(dim);
        let mut r = random::rng(seed);
        let mut f = random::smooth_field(g, &mut r, 1.0).to_spectral();
        if homogeneous {
            f.coeffs[0] = 0.0.into();
        }
        let bank = LpBank::new(g);
        let mut sum = SpectralField::zeros(g);
        for b in bank.blocks(homogeneous) {
            sum = &sum + &bank.project(&f, b).unwrap();
        }
        prop_assert!((&sum - &f).l2_norm() <= 1e-12 * f.l2_norm());
    }

    #[test]
    fn free_flow_is_a_group_and_conserves_energy(
        dim in 1usize..=3,
        seed in any::<u64>(),
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
    ) {
        let g = grid_for(dim);
        let mut r = random::rng(seed);
        let s = random::smooth_state(g, &mut r, 1.5, 1.0);
        let two = free_propagate(&free_propagate(&s, a), b);
        let one = free_propagate(&s, a + b);
        prop_assert!(max_diff(&two.u, &one.u) <= 1e-11);
        prop_assert!(max_diff(&two.udot, &one.udot) <= 1e-11);
        let (e0, e1) = (quadratic(&s), quadratic(&one));
        prop_assert!((e0 - e1).abs() <= 1e-12 * e0);
    }

    #[test]
    fn energy_is_the_sum_of_its_parts(dim in 1usize..=3, seed in any::<u64>(), amp in 0.0f64..3.0) {
        let g = grid_for(dim);
        let mut r = random::rng(seed);
        let e = energy(&random::smooth_state(g, &mut r, 1.0, amp));
        let parts = e.kinetic + e.gradient + e.mass + e.potential;
        prop_assert!((e.energy - parts).abs() <= 1e-14 * e.energy.max(1.0));
        prop_assert!(e.kinetic >= 0.0 && e.gradient >= 0.0 && e.mass >= 0.0 && e.potential >= 0.0);
    }

    #[test]
    fn group_action_is_an_isometry_with_exact_inverse(
        scale in 0.5f64..=1.0,
        shift in -10.0f64..10.0,
        width in 1.5f64..2.5,
    ) {
        let g = Grid::new(1, 256, 64.0, 1.0).unwrap();
        let phi = random::gaussian(g, 1.0, width, &[0.0]).to_spectral();
        let p = ProfileParams::new(0.0, vec![shift], scale).unwrap();
        let img = apply_group_action(&phi, &p, false).unwrap();
        prop_assert!((img.l2_norm() - phi.l2_norm()).abs() <= 1e-8 * phi.l2_norm());
        let back = apply_group_action(&img, &p, true).unwrap();
        prop_assert!((&back - &phi).l2_norm() <= 1e-8 * phi.l2_norm());
    }

    #[test]
    fn orthogonality_score_is_symmetric(
        h1 in 0.01f64..1.0, h2 in 0.01f64..1.0,
        x1 in -20.0f64..20.0, x2 in -20.0f64..20.0,
        t1 in -3.0f64..3.0, t2 in -3.0f64..3.0,
    ) {
        let a = ProfileParams::new(t1, vec![x1, -x2], h1).unwrap();
        let b = ProfileParams::new(t2, vec![x2, x1], h2).unwrap();
        let (ab, ba) = (orthogonality_score(&a, &b, 40.0), orthogonality_score(&b, &a, 40.0));
        prop_assert!((ab - ba).abs() <= 1e-12 * ab);
        prop_assert!(ab >= 2.0 - 1e-12);
        prop_assert!((orthogonality_score(&a, &a, 40.0) - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn snapshot_roundtrip_is_bitwise(dim in 1usize..=3, seed in any::<u64>()) {
        let g = grid_for(dim);
        let mut r = random::rng(seed);
        let s = random::smooth_state(g, &mut r, 0.5, 1e3);
        let mut buf = Vec::new();
        write_fields(&mut buf, &[&s.u, &s.udot]).unwrap();
        let back = read_fields(buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), 2);
        prop_assert!(back[0].data.iter().zip(&s.u.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert!(back[1].data.iter().zip(&s.udot.data).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn config_roundtrips_through_toml(
        which in 0usize..6,
        seed in 0..=i64::MAX as u64,
        amplitude in 1e-6f64..10.0,
        energy_tol in 1e-12f64..1.0,
    ) {
        let mut cfg = RunConfig::preset(Scenario::ALL[which]);
        cfg.seed = seed;
        cfg.data.amplitude = amplitude;
        cfg.evolve.energy_tol = energy_tol;
        let back = RunConfig::from_toml_str(&cfg.to_toml(), &[]).unwrap();
        prop_assert_eq!(back.hash(), cfg.hash());
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn seeds_beyond_toml_integers_are_rejected(seed in (i64::MAX as u64 + 1)..=u64::MAX) {
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        let err = cfg.validate().unwrap_err().to_string();
        prop_assert!(err.contains("seed"), "{}", err);
    }

    /// With `m = 0`, `u(t, x) -> 2 u(2t, 2x)` maps solutions to solutions; the
    /// discrete flow on the halved box with the halved step is the exact image.
    #[test]
    fn massless_scaling_invariance(dim in 1usize..=2, seed in any::<u64>()) {
        let n = if dim == 1 { 64 } else { 16 };
        let g = Grid::new(dim, n, 16.0, 0.0).unwrap();
        let gs = g.with_length(8.0).unwrap();
        let mut r = random::rng(seed);
        let u0 = random::localized_field(g, &mut r, 2, 2.0, (1.0, 1.8));
        let u1 = random::localized_field(g, &mut r, 2, 2.0, (1.0, 1.8)).scaled(0.3);
        let s = StateVec::new(u0.clone(), u1.clone()).unwrap();
        // Same samples, reinterpreted on the smaller box and rescaled.
        let ss = StateVec::new(
            RealField::from_vec(gs, u0.scaled(2.0).data).unwrap(),
            RealField::from_vec(gs, u1.scaled(4.0).data).unwrap(),
        ).unwrap();
        let dt = kgflow::solver::default_dt(g, true);
        let a = evolve(&s, &SolveConfig::new(dt, 2.0).with_sample_every(1 << 20)).unwrap();
        let b = evolve(&ss, &SolveConfig::new(dt / 2.0, 1.0).with_sample_every(1 << 20)).unwrap();
        let (fa, fb) = (a.final_state().unwrap(), b.final_state().unwrap());
        let scale = fa.u.max_abs().max(1e-3);
        prop_assert!(max_diff(&fa.u.scaled(2.0), &RealField::from_vec(g, fb.u.data.clone()).unwrap()) <= 1e-10 * 2.0 * scale);
        prop_assert!(max_diff(&fa.udot.scaled(4.0), &RealField::from_vec(g, fb.udot.data.clone()).unwrap()) <= 1e-10 * 4.0 * fa.udot.max_abs().max(1e-3));
    }

    #[test]
    fn split_run_matches_single_run_bitwise(dim in 1usize..=2, seed in any::<u64>(), amp in 0.05f64..1.0) {
        let g = grid_for(dim);
        let mut r = random::rng(seed);
        let s = random::smooth_state(g, &mut r, 2.0, amp);
        let cfg = SolveConfig::for_grid(g, 2.0).with_sample_every(8);
        let whole = evolve(&s, &cfg).unwrap();
        let mut half = cfg.clone();
        half.t_final = 1.0;
        let first = evolve(&s, &half).unwrap();
        let clock = Clock::default().after(&first, cfg.dt);
        let second = evolve_from(first.final_state().unwrap(), clock, &half).unwrap();
        let (a, b) = (whole.final_state().unwrap(), second.final_state().unwrap());
        prop_assert_eq!(whole.last_time(), second.last_time());
        prop_assert!(a.u.data.iter().zip(&b.u.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert!(a.udot.data.iter().zip(&b.udot.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
