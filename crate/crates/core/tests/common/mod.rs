//! Shared reference computations.
#![allow(dead_code)]

use std::f64::consts::PI;

use kgflow::spectral::free_propagate;
use kgflow::{Grid, RealField, StateVec};
use nalgebra::{DMatrix, DVector};

pub fn rel_err(a: &RealField, b: &RealField) -> f64 {
    (a - b).l2_norm() / b.l2_norm().max(1e-300)
}

/// Worst relative error of the free flow on ten plane waves
/// `cos(k.x) , sin(k.x)` per grid, against `cos(wt) cos(k.x) + sin(wt)/w sin(k.x)`.
pub fn single_mode_error(d: usize, n: usize, l: f64, m: f64) -> f64 {
    let g = Grid::new(d, n, l, m).unwrap();
    let k0 = 2.0 * PI / l;
    let mut worst = 0.0f64;
    for i in 1..=10i64 {
        let k: Vec<f64> = (0..d).map(|a| ((i + a as i64) % 7 - 3) as f64 * k0).collect();
        let k = if k.iter().all(|v| *v == 0.0) { vec![k0; d] } else { k };
        let w = (m + k.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let phase = |x: &[f64]| x.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>();
        let u0 = RealField::from_fn(g, |x| phase(x).cos());
        let u1 = RealField::from_fn(g, |x| phase(x).sin());
        let t = 0.37 * i as f64;
        let out = free_propagate(&StateVec::new(u0, u1).unwrap(), t);
        let want = RealField::from_fn(g, |x| {
            (w * t).cos() * phase(x).cos() + (w * t).sin() / w * phase(x).sin()
        });
        worst = worst.max(rel_err(&out.u, &want));
    }
    worst
}

/// Worst relative error of the free flow against a dense `exp(tA)` with
/// `A = [[0, I], [D2 - m, 0]]` on an 8-point line, `D2` built from the DFT
/// sum over the non-Nyquist wavenumbers (inputs are projected the same way).
pub fn matrix_exponential_error(m: f64) -> f64 {
    let n = 8usize;
    let l = 3.0;
    let g = Grid::new(1, n, l, m).unwrap();
    let h = l / n as f64;
    let ks: Vec<f64> = (-(n as i64) / 2 + 1..(n as i64) / 2)
        .map(|k| 2.0 * PI * k as f64 / l)
        .collect();
    let kernel = |j: usize, p: usize, f: &dyn Fn(f64) -> f64| {
        let dx = (j as f64 - p as f64) * h;
        ks.iter().map(|k| f(*k) * (k * dx).cos()).sum::<f64>() / n as f64
    };
    let proj = DMatrix::from_fn(n, n, |j, p| kernel(j, p, &|_| 1.0));
    let lap = DMatrix::from_fn(n, n, |j, p| kernel(j, p, &|k| -k * k));
    let mut a = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for j in 0..n {
        a[(j, n + j)] = 1.0;
        for p in 0..n {
            a[(n + j, p)] = lap[(j, p)] - if j == p { m } else { 0.0 };
        }
    }
    let raw_u: Vec<f64> = (0..n).map(|j| ((j * j) as f64 * 0.7).sin() + 0.3).collect();
    let raw_v: Vec<f64> = (0..n).map(|j| (j as f64 * 1.3).cos() - 0.1 * j as f64).collect();
    let u0 = &proj * DVector::from_vec(raw_u.clone());
    let v0 = &proj * DVector::from_vec(raw_v.clone());
    let state = StateVec::new(
        RealField::from_vec(g, raw_u).unwrap(),
        RealField::from_vec(g, raw_v).unwrap(),
    )
    .unwrap();
    let y0 = DVector::from_iterator(2 * n, u0.iter().chain(v0.iter()).copied());
    let mut worst = 0.0f64;
    for t in [0.1, 1.0, 4.2] {
        let y = (&a * t).exp() * &y0;
        let out = free_propagate(&state, t);
        let got = DVector::from_iterator(2 * n, out.u.data.iter().chain(&out.udot.data).copied());
        worst = worst.max((got - &y).norm() / y.norm());
    }
    worst
}

/// Blowup time of `u'' = -u + u^3`, `u(0) = a`, `u'(0) = 0`, from
/// `T = int_a^inf du / sqrt(2E - u^2 + u^4/2)` with `u = a / sin(theta)`,
/// which removes the endpoint singularity; midpoint rule in `theta`.
pub fn ode_blowup_time(a: f64) -> f64 {
    let e = 0.5 * a * a - 0.25 * a.powi(4);
    let steps = 200_000;
    let mut total = 0.0;
    for i in 0..steps {
        let th = (i as f64 + 0.5) / steps as f64 * PI / 2.0;
        let s = th.sin();
        let ds = th.cos() * PI / 2.0 / steps as f64;
        let u = a / s;
        let du = a / (s * s) * ds;
        total += du / (2.0 * e - u * u + 0.5 * u.powi(4)).sqrt();
    }
    total
}
