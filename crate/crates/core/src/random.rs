//! Seeded random test fields.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::spectral::{Grid, RealField, SpectralField, StateVec};

pub type FieldRng = ChaCha8Rng;

pub fn rng(seed: u64) -> FieldRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Real field with Gaussian random coefficients damped by `(1+|xi|^2)^{-decay/2}`.
///
/// The Nyquist modes are zero and the coefficients are conjugate-symmetric.
pub fn smooth_field(grid: Grid, rng: &mut FieldRng, decay: f64) -> RealField {
    let raw = SpectralField::from_symbol(grid, |xi| {
        let r2: f64 = xi.iter().map(|x| x * x).sum();
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        Complex64::new(a, b) * (1.0 + r2).powf(-0.5 * decay)
    });
    let mut sym = raw.real_part();
    sym.zero_nyquist();
    sym.to_real()
}

/// Same as [`smooth_field`] but with unit `L^2` norm.
pub fn unit_smooth_field(grid: Grid, rng: &mut FieldRng, decay: f64) -> RealField {
    let f = smooth_field(grid, rng, decay);
    let norm = f.l2_norm();
    f.scaled(1.0 / norm)
}

/// A few Gaussian bumps near the origin with random centers, widths and signs.
///
/// Centers stay within `spread` of the origin and widths lie in `widths`.
pub fn localized_field(
    grid: Grid,
    rng: &mut FieldRng,
    bumps: usize,
    spread: f64,
    widths: (f64, f64),
) -> RealField {
    let d = grid.dim();
    let params: Vec<(Vec<f64>, f64, f64)> = (0..bumps)
        .map(|_| {
            let c: Vec<f64> = (0..d).map(|_| rng.random_range(-spread..=spread)).collect();
            let w = rng.random_range(widths.0..=widths.1);
            let a: f64 = rng.sample(StandardNormal);
            (c, w, a)
        })
        .collect();
    RealField::from_fn(grid, |x| {
        params
            .iter()
            .map(|(c, w, a)| {
                let r2: f64 = x.iter().zip(c).map(|(xi, ci)| (xi - ci).powi(2)).sum();
                a * (-r2 / (2.0 * w * w)).exp()
            })
            .sum()
    })
}

/// Isotropic Gaussian `amplitude * exp(-|x - center|^2 / (2 width^2))`, periodized
/// to the nearest image.
pub fn gaussian(grid: Grid, amplitude: f64, width: f64, center: &[f64]) -> RealField {
    let l = grid.length();
    RealField::from_fn(grid, |x| {
        let r2: f64 = x
            .iter()
            .enumerate()
            .map(|(a, xi)| {
                let c = center.get(a).copied().unwrap_or(0.0);
                let dx = xi - c;
                let dx = dx - l * (dx / l).round();
                dx * dx
            })
            .sum();
        amplitude * (-r2 / (2.0 * width * width)).exp()
    })
}

/// Random state with smooth position and velocity parts.
pub fn smooth_state(grid: Grid, rng: &mut FieldRng, decay: f64, amplitude: f64) -> StateVec {
    let u = unit_smooth_field(grid, rng, decay).scaled(amplitude);
    let udot = unit_smooth_field(grid, rng, decay).scaled(amplitude);
    StateVec { u, udot }
}
