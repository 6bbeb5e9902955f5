//! Periodic grids, Fourier transforms, multipliers and the free Klein-Gordon flow.
//!
//! Fourier coefficients are normalized so that a field on the box
//! `[-L/2, L/2)^d` is `u(x) = sum_k c(k) exp(i xi_k . x)` with `xi_k = 2 pi k / L`
//! and `k` ranging over `[-n/2, n/2)^d`. Phases are taken relative to the box
//! center, so dilations and translations about the origin act on the
//! coefficients without extra bookkeeping.

use std::collections::HashMap;
use std::ops::{Add, Mul, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{KgError, Result};

pub const MAX_DIM: usize = 5;
/// Upper bound on `n^d`, roughly 256 MiB per complex field.
pub const MAX_POINTS: usize = 1 << 24;
/// Zero-mode coefficients below this (relative to the field norm) count as zero.
pub const ZERO_MODE_TOL: f64 = 1e-10;

/// Uniform periodic discretization of `[-L/2, L/2)^d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    n: usize,
    length: f64,
    mass: f64,
}

impl Grid {
    pub fn new(dim: usize, n: usize, length: f64, mass: f64) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(KgError::InvalidGrid(format!("dim {dim} not in 1..=5")));
        }
        if n < 8 || n % 2 != 0 {
            return Err(KgError::InvalidGrid(format!(
                "n_per_axis {n} must be even and >= 8"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(KgError::InvalidGrid(format!("box length {length} must be positive")));
        }
        if mass != 0.0 && mass != 1.0 {
            return Err(KgError::InvalidGrid(format!("mass {mass} must be 0 or 1")));
        }
        let total = (n as u128).checked_pow(dim as u32).unwrap_or(u128::MAX);
        if total > MAX_POINTS as u128 {
            return Err(KgError::InvalidGrid(format!(
                "{n}^{dim} points exceed the memory budget of {MAX_POINTS}"
            )));
        }
        Ok(Self {
            dim,
            n,
            length,
            mass,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Same lattice with a different box length (used for rescaling).
    pub fn with_length(&self, length: f64) -> Result<Self> {
        Self::new(self.dim, self.n, length, self.mass)
    }

    pub fn with_mass(&self, mass: f64) -> Result<Self> {
        Self::new(self.dim, self.n, self.length, mass)
    }

    /// Total number of lattice points `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell().powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        self.length.powi(self.dim as i32)
    }

    /// Critical regularity `d/2 - 1`.
    pub fn critical_regularity(&self) -> f64 {
        self.dim as f64 / 2.0 - 1.0
    }

    /// Signed wavenumber for axis index `i`.
    pub fn wavenumber(&self, i: usize) -> i64 {
        if i < self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    /// Axis index of signed wavenumber `k` (taken modulo `n`).
    pub fn index_of_wavenumber(&self, k: i64) -> usize {
        k.rem_euclid(self.n as i64) as usize
    }

    pub fn frequency(&self, i: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.wavenumber(i) as f64 / self.length
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        -0.5 * self.length + i as f64 * self.cell()
    }

    /// Largest `|xi|` on the lattice.
    pub fn max_frequency(&self) -> f64 {
        let k = (self.n / 2) as f64;
        2.0 * std::f64::consts::PI * k / self.length * (self.dim as f64).sqrt()
    }

    /// Smallest nonzero `|xi|`.
    pub fn min_frequency(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.length
    }

    /// Row-major multi-index of a flat position (last axis fastest).
    pub fn unravel(&self, mut flat: usize) -> [usize; MAX_DIM] {
        let mut idx = [0; MAX_DIM];
        for a in (0..self.dim).rev() {
            idx[a] = flat % self.n;
            flat /= self.n;
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx[..self.dim]
            .iter()
            .fold(0, |acc, &i| acc * self.n + (i % self.n))
    }

    /// Calls `f(flat, xi)` for every lattice frequency in storage order.
    pub fn for_each_frequency(&self, mut f: impl FnMut(usize, &[f64])) {
        let freqs: Vec<f64> = (0..self.n).map(|i| self.frequency(i)).collect();
        self.walk(&freqs, |flat, v| f(flat, v));
    }

    /// Calls `f(flat, x)` for every grid point in storage order.
    pub fn for_each_point(&self, mut f: impl FnMut(usize, &[f64])) {
        let coords: Vec<f64> = (0..self.n).map(|i| self.coordinate(i)).collect();
        self.walk(&coords, |flat, v| f(flat, v));
    }

    fn walk(&self, axis_values: &[f64], mut f: impl FnMut(usize, &[f64])) {
        let d = self.dim;
        let mut idx = [0usize; MAX_DIM];
        let mut v = [0.0; MAX_DIM];
        for a in 0..d {
            v[a] = axis_values[0];
        }
        for flat in 0..self.len() {
            f(flat, &v[..d]);
            let mut a = d;
            while a > 0 {
                a -= 1;
                idx[a] += 1;
                if idx[a] < self.n {
                    v[a] = axis_values[idx[a]];
                    break;
                }
                idx[a] = 0;
                v[a] = axis_values[0];
            }
        }
    }

    /// `|xi|` at every lattice point.
    pub fn frequency_norms(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.for_each_frequency(|flat, xi| {
            out[flat] = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        });
        out
    }

    /// Dispersion relation `omega = sqrt(mass + |xi|^2)`.
    pub fn omega(&self, xi_norm: f64) -> f64 {
        (self.mass + xi_norm * xi_norm).sqrt()
    }

    /// True if any axis sits at wavenumber `-n/2`.
    pub fn is_nyquist(&self, flat: usize) -> bool {
        let idx = self.unravel(flat);
        idx[..self.dim].iter().any(|&i| i == self.n / 2)
    }

    /// Flat index of the mode `-k` for the mode at `flat`.
    pub fn negate_index(&self, flat: usize) -> usize {
        let idx = self.unravel(flat);
        let mut neg = [0usize; MAX_DIM];
        for a in 0..self.dim {
            neg[a] = (self.n - idx[a]) % self.n;
        }
        self.ravel(&neg)
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(KgError::GridMismatch)
        }
    }
}

// ---------------------------------------------------------------------------
// Transforms

fn planner() -> &'static Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> {
    static PLANS: OnceLock<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> = OnceLock::new();
    PLANS.get_or_init(|| Mutex::new(HashMap::new()))
}

fn plan(n: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    let mut cache = planner().lock().expect("fft plan cache poisoned");
    cache
        .entry((n, forward))
        .or_insert_with(|| {
            let dir = if forward {
                FftDirection::Forward
            } else {
                FftDirection::Inverse
            };
            FftPlanner::new().plan_fft(n, dir)
        })
        .clone()
}

/// Columns gathered per batch when transforming a strided axis.
const FFT_BLOCK: usize = 64;

/// Unnormalized in-place d-dimensional DFT along every axis.
fn fft_nd(grid: &Grid, data: &mut [Complex64], forward: bool) {
    let n = grid.n;
    let d = grid.dim;
    let fft = plan(n, forward);
    let scratch_len = fft.get_inplace_scratch_len();
    // last axis is contiguous
    let lines_per_task = (4096 / n).max(1) * n;
    data.par_chunks_mut(lines_per_task).for_each_init(
        || vec![Complex64::new(0.0, 0.0); scratch_len],
        |scratch, chunk| fft.process_with_scratch(chunk, scratch),
    );
    for a in (0..d.saturating_sub(1)).rev() {
        let stride = n.pow((d - 1 - a) as u32);
        data.par_chunks_mut(n * stride).for_each_init(
            || {
                (
                    vec![Complex64::new(0.0, 0.0); FFT_BLOCK * n],
                    vec![Complex64::new(0.0, 0.0); scratch_len],
                )
            },
            |(buf, scratch), slab| {
                let mut col = 0;
                while col < stride {
                    let width = FFT_BLOCK.min(stride - col);
                    for i in 0..n {
                        let row = &slab[i * stride + col..i * stride + col + width];
                        for (b, v) in row.iter().enumerate() {
                            buf[b * n + i] = *v;
                        }
                    }
                    fft.process_with_scratch(&mut buf[..width * n], scratch);
                    for i in 0..n {
                        let row = &mut slab[i * stride + col..i * stride + col + width];
                        for (b, v) in row.iter_mut().enumerate() {
                            *v = buf[b * n + i];
                        }
                    }
                    col += width;
                }
            },
        );
    }
}

fn center_phase_sign(grid: &Grid, flat: usize) -> f64 {
    let idx = grid.unravel(flat);
    let parity: usize = idx[..grid.dim].iter().sum();
    if parity % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Physical samples to centered Fourier coefficients.
pub fn forward_transform(grid: &Grid, data: &mut [Complex64]) {
    fft_nd(grid, data, true);
    let scale = 1.0 / grid.len() as f64;
    for (flat, c) in data.iter_mut().enumerate() {
        *c *= scale * center_phase_sign(grid, flat);
    }
}

/// Centered Fourier coefficients to physical samples.
pub fn inverse_transform(grid: &Grid, data: &mut [Complex64]) {
    for (flat, c) in data.iter_mut().enumerate() {
        *c *= center_phase_sign(grid, flat);
    }
    fft_nd(grid, data, false);
}

// ---------------------------------------------------------------------------
// Fields

/// Real scalar field sampled at the grid points.
#[derive(Clone, Debug, PartialEq)]
pub struct RealField {
    pub grid: Grid,
    pub data: Vec<f64>,
}

impl RealField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            data: vec![0.0; grid.len()],
        }
    }

    pub fn from_vec(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(KgError::InvalidArgument(format!(
                "expected {} samples, got {}",
                grid.len(),
                data.len()
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut data = vec![0.0; grid.len()];
        grid.for_each_point(|flat, x| data[flat] = f(x));
        Self { grid, data }
    }

    pub fn to_spectral(&self) -> SpectralField {
        SpectralField::from_real(self)
    }

    /// Quadrature `(h^d sum |u|^p)^(1/p)`; `p = inf` gives the max norm.
    pub fn lp_norm(&self, p: f64) -> f64 {
        lp_norm_of(self.data.iter().map(|v| v.abs()), p, self.grid.cell_volume())
    }

    pub fn l2_norm(&self) -> f64 {
        self.lp_norm(2.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn integral(&self) -> f64 {
        self.data.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// Circular shift by whole cells along each axis.
    pub fn roll(&self, shift: &[i64]) -> Self {
        let g = self.grid;
        let mut out = vec![0.0; g.len()];
        for (flat, &v) in self.data.iter().enumerate() {
            let idx = g.unravel(flat);
            let mut dst = [0usize; MAX_DIM];
            for a in 0..g.dim {
                let s = shift.get(a).copied().unwrap_or(0);
                dst[a] = (idx[a] as i64 + s).rem_euclid(g.n as i64) as usize;
            }
            out[g.ravel(&dst)] = v;
        }
        Self { grid: g, data: out }
    }
}

impl Add for &RealField {
    type Output = RealField;
    fn add(self, rhs: &RealField) -> RealField {
        assert_eq!(self.grid, rhs.grid, "grid mismatch");
        RealField {
            grid: self.grid,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &RealField {
    type Output = RealField;
    fn sub(self, rhs: &RealField) -> RealField {
        assert_eq!(self.grid, rhs.grid, "grid mismatch");
        RealField {
            grid: self.grid,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

pub(crate) fn lp_norm_of(values: impl Iterator<Item = f64>, p: f64, cell_volume: f64) -> f64 {
    if p.is_infinite() {
        return values.fold(0.0, f64::max);
    }
    let sum: f64 = values.map(|v| v.powf(p)).sum();
    (sum * cell_volume).powf(1.0 / p)
}

/// How to treat a symbol that is singular at `xi = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ZeroModePolicy {
    /// Fail unless the zero mode already vanishes.
    #[default]
    Error,
    /// Drop the zero mode (homogeneous operators on mean-zero data).
    Annihilate,
}

/// Fourier coefficients of a (possibly complex) field.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    pub grid: Grid,
    pub coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            coeffs: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_real(field: &RealField) -> Self {
        let mut coeffs: Vec<Complex64> = field
            .data
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        forward_transform(&field.grid, &mut coeffs);
        Self {
            grid: field.grid,
            coeffs,
        }
    }

    pub fn from_complex_samples(grid: Grid, mut samples: Vec<Complex64>) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(KgError::InvalidArgument(format!(
                "expected {} samples, got {}",
                grid.len(),
                samples.len()
            )));
        }
        forward_transform(&grid, &mut samples);
        Ok(Self {
            grid,
            coeffs: samples,
        })
    }

    /// Builds coefficients mode by mode from `f(xi)`.
    pub fn from_symbol(grid: Grid, mut f: impl FnMut(&[f64]) -> Complex64) -> Self {
        let mut coeffs = vec![Complex64::new(0.0, 0.0); grid.len()];
        grid.for_each_frequency(|flat, xi| coeffs[flat] = f(xi));
        Self { grid, coeffs }
    }

    /// Complex physical samples.
    pub fn to_complex_samples(&self) -> Vec<Complex64> {
        let mut data = self.coeffs.clone();
        inverse_transform(&self.grid, &mut data);
        data
    }

    /// Real part of the physical field.
    pub fn to_real(&self) -> RealField {
        RealField {
            grid: self.grid,
            data: self.to_complex_samples().into_iter().map(|c| c.re).collect(),
        }
    }

    /// `L^2` norm via Parseval: `sqrt(L^d sum |c|^2)`.
    pub fn l2_norm(&self) -> f64 {
        (self.grid.volume() * self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// Weighted norm `sqrt(L^d sum w(|xi|)^2 |c|^2)`.
    pub fn weighted_norm(&self, weight: impl Fn(f64) -> f64) -> f64 {
        let mut acc = 0.0;
        self.grid.for_each_frequency(|flat, xi| {
            let r = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
            acc += weight(r).powi(2) * self.coeffs[flat].norm_sqr();
        });
        (self.grid.volume() * acc).sqrt()
    }

    /// Inhomogeneous Sobolev norm `||(1+|xi|^2)^{s/2} c||`.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        self.weighted_norm(|r| (1.0 + r * r).powf(0.5 * s))
    }

    /// Homogeneous Sobolev norm; the zero mode is dropped.
    pub fn homogeneous_sobolev_norm(&self, s: f64) -> f64 {
        self.weighted_norm(|r| if r == 0.0 { 0.0 } else { r.powf(s) })
    }

    pub fn zero_mode(&self) -> Complex64 {
        self.coeffs[0]
    }

    pub fn zero_nyquist(&mut self) {
        if self.grid.dim == 1 {
            self.coeffs[self.grid.n / 2] = Complex64::new(0.0, 0.0);
            return;
        }
        for flat in 0..self.coeffs.len() {
            if self.grid.is_nyquist(flat) {
                self.coeffs[flat] = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Max relative violation of `c(-k) = conj(c(k))` over non-Nyquist modes.
    pub fn conjugate_symmetry_defect(&self) -> f64 {
        let scale = self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.norm()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for flat in 0..self.coeffs.len() {
            if self.grid.is_nyquist(flat) {
                continue;
            }
            let neg = self.grid.negate_index(flat);
            worst = worst.max((self.coeffs[neg] - self.coeffs[flat].conj()).norm());
        }
        worst / scale
    }

    /// Coefficients of the real part `(c(k) + conj(c(-k)))/2`.
    pub fn real_part(&self) -> SpectralField {
        self.combine_with_conjugate(|c, cn| 0.5 * (c + cn.conj()))
    }

    /// Coefficients of the imaginary part `(c(k) - conj(c(-k)))/(2i)`.
    pub fn imag_part(&self) -> SpectralField {
        let i2 = Complex64::new(0.0, 2.0);
        self.combine_with_conjugate(|c, cn| (c - cn.conj()) / i2)
    }

    fn combine_with_conjugate(&self, f: impl Fn(Complex64, Complex64) -> Complex64) -> SpectralField {
        let mut out = vec![Complex64::new(0.0, 0.0); self.coeffs.len()];
        for (flat, slot) in out.iter_mut().enumerate() {
            if self.grid.is_nyquist(flat) {
                continue;
            }
            *slot = f(self.coeffs[flat], self.coeffs[self.grid.negate_index(flat)]);
        }
        SpectralField {
            grid: self.grid,
            coeffs: out,
        }
    }

    /// Multiplies every coefficient by `symbol(xi)`; Nyquist modes are zeroed.
    ///
    /// A non-finite symbol value at `xi = 0` is resolved by `policy`; a
    /// non-finite value anywhere else is an error.
    pub fn apply_multiplier(
        &self,
        symbol: impl Fn(&[f64]) -> Complex64,
        policy: ZeroModePolicy,
    ) -> Result<SpectralField> {
        let mut out = self.clone();
        let norm = self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let mut failure = None;
        self.grid.for_each_frequency(|flat, xi| {
            if failure.is_some() {
                return;
            }
            let m = symbol(xi);
            if m.re.is_finite() && m.im.is_finite() {
                out.coeffs[flat] *= m;
            } else if flat == 0 {
                let c0 = self.coeffs[0].norm();
                if policy == ZeroModePolicy::Error && c0 > ZERO_MODE_TOL * norm.max(f64::MIN_POSITIVE) {
                    failure = Some(KgError::ZeroModeSingularity { magnitude: c0 });
                }
                out.coeffs[0] = Complex64::new(0.0, 0.0);
            } else {
                failure = Some(KgError::InvalidArgument(format!(
                    "symbol not finite at xi = {xi:?}"
                )));
            }
        });
        if let Some(err) = failure {
            return Err(err);
        }
        out.zero_nyquist();
        Ok(out)
    }

    /// Radial multiplier `m(|xi|)`.
    pub fn apply_radial(&self, m: impl Fn(f64) -> f64, policy: ZeroModePolicy) -> Result<SpectralField> {
        self.apply_multiplier(
            |xi| Complex64::new(m(xi.iter().map(|x| x * x).sum::<f64>().sqrt()), 0.0),
            policy,
        )
    }

    pub fn scaled(&self, c: Complex64) -> SpectralField {
        SpectralField {
            grid: self.grid,
            coeffs: self.coeffs.iter().map(|v| v * c).collect(),
        }
    }

    /// `L^2` inner product `<self, other>` (conjugate-linear in `other`).
    pub fn inner(&self, other: &SpectralField) -> Complex64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b.conj())
            .sum::<Complex64>()
            * self.grid.volume()
    }
}

impl Add for &SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: &SpectralField) -> SpectralField {
        assert_eq!(self.grid, rhs.grid, "grid mismatch");
        SpectralField {
            grid: self.grid,
            coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: &SpectralField) -> SpectralField {
        assert_eq!(self.grid, rhs.grid, "grid mismatch");
        SpectralField {
            grid: self.grid,
            coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul<f64> for &SpectralField {
    type Output = SpectralField;
    fn mul(self, rhs: f64) -> SpectralField {
        self.scaled(Complex64::new(rhs, 0.0))
    }
}

/// `(1 + |xi|^2)^{s/2}`.
pub fn bessel_symbol(s: f64) -> impl Fn(&[f64]) -> Complex64 {
    move |xi| {
        let r2: f64 = xi.iter().map(|x| x * x).sum();
        Complex64::new((1.0 + r2).powf(0.5 * s), 0.0)
    }
}

/// `|xi|^s`; infinite at the origin when `s < 0`.
pub fn riesz_symbol(s: f64) -> impl Fn(&[f64]) -> Complex64 {
    move |xi| {
        let r: f64 = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        let v = if r == 0.0 {
            if s > 0.0 {
                0.0
            } else if s == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            r.powf(s)
        };
        Complex64::new(v, 0.0)
    }
}

// ---------------------------------------------------------------------------
// State and propagators

/// Position and velocity `(u, u_t)` on a common grid.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVec {
    pub u: RealField,
    pub udot: RealField,
}

impl StateVec {
    pub fn new(u: RealField, udot: RealField) -> Result<Self> {
        u.grid.check_same(&udot.grid)?;
        Ok(Self { u, udot })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            u: RealField::zeros(grid),
            udot: RealField::zeros(grid),
        }
    }

    pub fn grid(&self) -> Grid {
        self.u.grid
    }

    pub fn is_zero(&self) -> bool {
        self.u.is_zero() && self.udot.is_zero()
    }

    pub fn to_spectral(&self) -> SpectralState {
        SpectralState {
            u: self.u.to_spectral(),
            udot: self.udot.to_spectral(),
        }
    }

    /// `||u||_{H^{s_c}} + ||u_t||_{H^{s_c-1}}` in the Hilbert (root-sum-square) form.
    pub fn critical_norm(&self) -> f64 {
        self.to_spectral().critical_norm()
    }

    /// Complex first-order form `<D>^{s_c-1} (<D> u - i u_t)` with `<D> = omega`.
    pub fn to_complex(&self) -> Result<SpectralField> {
        self.to_spectral().to_complex()
    }

    /// Inverse of [`StateVec::to_complex`].
    pub fn from_complex(field: &SpectralField) -> Result<Self> {
        Ok(SpectralState::from_complex(field)?.to_physical())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            u: self.u.scaled(c),
            udot: self.udot.scaled(c),
        }
    }

    pub fn sub(&self, other: &StateVec) -> StateVec {
        StateVec {
            u: &self.u - &other.u,
            udot: &self.udot - &other.udot,
        }
    }

    pub fn add(&self, other: &StateVec) -> StateVec {
        StateVec {
            u: &self.u + &other.u,
            udot: &self.udot + &other.udot,
        }
    }
}

/// Spectral coefficients of `(u, u_t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState {
    pub u: SpectralField,
    pub udot: SpectralField,
}

impl SpectralState {
    pub fn grid(&self) -> Grid {
        self.u.grid
    }

    pub fn to_physical(&self) -> StateVec {
        StateVec {
            u: self.u.to_real(),
            udot: self.udot.to_real(),
        }
    }

    pub fn critical_norm(&self) -> f64 {
        let sc = self.grid().critical_regularity();
        self.u.sobolev_norm(sc).hypot(self.udot.sobolev_norm(sc - 1.0))
    }

    pub fn to_complex(&self) -> Result<SpectralField> {
        let g = self.grid();
        let sc = g.critical_regularity();
        let norms = g.frequency_norms();
        let mut out = SpectralField::zeros(g);
        let scale = self
            .u
            .coeffs
            .iter()
            .chain(&self.udot.coeffs)
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt();
        for (flat, slot) in out.coeffs.iter_mut().enumerate() {
            let w = g.omega(norms[flat]);
            let (u, v) = (self.u.coeffs[flat], self.udot.coeffs[flat]);
            if w == 0.0 {
                let mag = u.norm().max(v.norm());
                if mag > ZERO_MODE_TOL * scale.max(f64::MIN_POSITIVE) {
                    return Err(KgError::ZeroModeSingularity { magnitude: mag });
                }
                continue;
            }
            *slot = w.powf(sc - 1.0) * (w * u - Complex64::i() * v);
        }
        out.zero_nyquist();
        Ok(out)
    }

    pub fn from_complex(field: &SpectralField) -> Result<Self> {
        let g = field.grid;
        let sc = g.critical_regularity();
        let norms = g.frequency_norms();
        let re = field.real_part();
        let im = field.imag_part();
        let mut u = SpectralField::zeros(g);
        let mut udot = SpectralField::zeros(g);
        for flat in 0..g.len() {
            let w = g.omega(norms[flat]);
            if w == 0.0 {
                continue;
            }
            u.coeffs[flat] = w.powf(-sc) * re.coeffs[flat];
            udot.coeffs[flat] = -w.powf(1.0 - sc) * im.coeffs[flat];
        }
        Ok(Self { u, udot })
    }
}

/// Applies `V_0(t)` to spectral coefficients in place.
pub(crate) fn propagate_in_place(
    grid: &Grid,
    norms: &[f64],
    u: &mut [Complex64],
    udot: &mut [Complex64],
    t: f64,
) {
    for flat in 0..u.len() {
        let w = grid.omega(norms[flat]);
        let (u0, u1) = (u[flat], udot[flat]);
        if w == 0.0 {
            u[flat] = u0 + t * u1;
            udot[flat] = u1;
            continue;
        }
        let (s, c) = (t * w).sin_cos();
        u[flat] = c * u0 + (s / w) * u1;
        udot[flat] = -w * s * u0 + c * u1;
    }
}

/// Free Klein-Gordon flow `V_0(t)` applied to `(u, u_t)`.
pub fn free_propagate(state: &StateVec, t: f64) -> StateVec {
    free_propagate_spectral(&state.to_spectral(), t).to_physical()
}

pub fn free_propagate_spectral(state: &SpectralState, t: f64) -> SpectralState {
    let g = state.grid();
    let norms = g.frequency_norms();
    let mut out = state.clone();
    propagate_in_place(&g, &norms, &mut out.u.coeffs, &mut out.udot.coeffs, t);
    out.u.zero_nyquist();
    out.udot.zero_nyquist();
    out
}

/// Half-wave group `exp(i t omega)` on the complex form.
pub fn half_wave(field: &SpectralField, t: f64) -> SpectralField {
    let g = field.grid;
    let mut out = field.clone();
    g.for_each_frequency(|flat, xi| {
        let r = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        out.coeffs[flat] *= Complex64::from_polar(1.0, t * g.omega(r));
    });
    out.zero_nyquist();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn grid1() -> Grid {
        Grid::new(1, 32, 2.0 * PI, 1.0).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(0, 16, 1.0, 1.0).is_err());
        assert!(Grid::new(6, 8, 1.0, 1.0).is_err());
        assert!(Grid::new(1, 7, 1.0, 1.0).is_err());
        assert!(Grid::new(1, 6, 1.0, 1.0).is_err());
        assert!(Grid::new(1, 16, -1.0, 1.0).is_err());
        assert!(Grid::new(1, 16, 1.0, 0.5).is_err());
        assert!(Grid::new(5, 1024, 1.0, 1.0).is_err());
        assert!(Grid::new(5, 16, 1.0, 0.0).is_ok());
    }

    #[test]
    fn lattice_frequencies_cover_half_open_range() {
        let g = Grid::new(1, 8, 2.0 * PI, 1.0).unwrap();
        let ks: Vec<i64> = (0..8).map(|i| g.wavenumber(i)).collect();
        assert_eq!(ks, vec![0, 1, 2, 3, -4, -3, -2, -1]);
        assert_relative_eq!(g.frequency(1), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn single_mode_coefficient_sits_at_its_wavenumber() {
        let g = grid1();
        let f = SpectralField::from_complex_samples(
            g,
            (0..g.n())
                .map(|i| Complex64::from_polar(1.0, 3.0 * g.coordinate(i)))
                .collect(),
        )
        .unwrap();
        assert!((f.coeffs[3] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        let rest: f64 = f.coeffs.iter().enumerate().filter(|(i, _)| *i != 3).map(|(_, c)| c.norm()).sum();
        assert!(rest < 1e-13);
    }

    #[test]
    fn identity_symbol_is_identity() {
        let g = Grid::new(2, 16, 7.0, 1.0).unwrap();
        let f = RealField::from_fn(g, |x| (x[0]).sin() * (0.5 * x[1]).cos() + 0.3).to_spectral();
        let out = f.apply_multiplier(|_| Complex64::new(1.0, 0.0), ZeroModePolicy::Error).unwrap();
        let mut expected = f.clone();
        expected.zero_nyquist();
        for (a, b) in expected.coeffs.iter().zip(&out.coeffs) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn bessel_symbol_on_unit_mode() {
        let g = grid1();
        let f = SpectralField::from_complex_samples(
            g,
            (0..g.n()).map(|i| Complex64::from_polar(1.0, g.coordinate(i))).collect(),
        )
        .unwrap();
        let out = f.apply_multiplier(bessel_symbol(1.0), ZeroModePolicy::Error).unwrap();
        assert!((out.coeffs[1] - f.coeffs[1] * 2f64.sqrt()).norm() < 1e-14);
    }

    #[test]
    fn singular_symbol_policies() {
        let g = grid1();
        let f = RealField::from_fn(g, |x| 1.0 + x[0].cos()).to_spectral();
        let err = f.apply_multiplier(riesz_symbol(-1.0), ZeroModePolicy::Error);
        assert!(matches!(err, Err(KgError::ZeroModeSingularity { .. })));
        let ok = f.apply_multiplier(riesz_symbol(-1.0), ZeroModePolicy::Annihilate).unwrap();
        assert_eq!(ok.coeffs[0], Complex64::new(0.0, 0.0));
        // mean-zero data passes even under the error policy
        let g0 = RealField::from_fn(g, |x| x[0].cos()).to_spectral();
        assert!(g0.apply_multiplier(riesz_symbol(-1.0), ZeroModePolicy::Error).is_ok());
    }

    #[test]
    fn nyquist_is_zeroed_by_multipliers() {
        let g = Grid::new(1, 8, 2.0 * PI, 1.0).unwrap();
        let f = RealField::from_fn(g, |x| (4.0 * x[0]).cos()).to_spectral();
        assert!(f.coeffs[4].norm() > 0.5);
        let out = f.apply_multiplier(|_| Complex64::new(1.0, 0.0), ZeroModePolicy::Error).unwrap();
        assert_eq!(out.coeffs[4], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn free_propagate_constant_mode() {
        let g = grid1();
        let s = StateVec::new(RealField::from_fn(g, |_| 1.0), RealField::zeros(g)).unwrap();
        let out = free_propagate(&s, PI);
        for v in &out.u.data {
            assert_relative_eq!(*v, -1.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn massless_zero_mode_moves_linearly() {
        let g = Grid::new(1, 16, 2.0 * PI, 0.0).unwrap();
        let s = StateVec::new(RealField::from_fn(g, |_| 0.5), RealField::from_fn(g, |_| 2.0)).unwrap();
        let out = free_propagate(&s, 3.0);
        for (u, v) in out.u.data.iter().zip(&out.udot.data) {
            assert_relative_eq!(*u, 6.5, epsilon = 1e-12);
            assert_relative_eq!(*v, 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn massless_complex_form_rejects_mean() {
        let g = Grid::new(1, 16, 2.0 * PI, 0.0).unwrap();
        let s = StateVec::new(RealField::from_fn(g, |_| 0.5), RealField::zeros(g)).unwrap();
        assert!(matches!(s.to_complex(), Err(KgError::ZeroModeSingularity { .. })));
    }

    #[test]
    fn roll_matches_coordinate_shift() {
        let g = Grid::new(2, 8, 8.0, 1.0).unwrap();
        let f = RealField::from_fn(g, |x| (-(x[0] * x[0] + x[1] * x[1])).exp());
        let r = f.roll(&[2, -1]);
        let expect = RealField::from_fn(g, |x| {
            let a = x[0] - 2.0;
            let b = x[1] + 1.0;
            // periodic image nearest the origin
            let wrap = |v: f64| v - 8.0 * (v / 8.0).round();
            (-(wrap(a).powi(2) + wrap(b).powi(2))).exp()
        });
        for (a, b) in r.data.iter().zip(&expect.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
