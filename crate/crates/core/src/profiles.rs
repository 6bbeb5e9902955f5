//! Concentration sequences: the translate-and-rescale group action, synthetic
//! multi-bubble sequences, greedy bubble extraction and the orthogonality /
//! decoupling checks.
//!
//! Profiles live in the complex first-order form (see
//! [`StateVec::to_complex`]), where the `L^2` norm is the critical energy norm.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::periodic_distance;
use crate::error::{KgError, Result};
use crate::lpbesov::{smooth_step, Block, LpBank};
use crate::random;
use crate::spectral::{half_wave, Grid, SpectralField, StateVec};

/// Relative `L^2` mismatch above which a rescaled field is declared aliased.
pub const ISOMETRY_TOL: f64 = 1e-8;
/// Slope of `log score` against `log n` above which two tracks count as
/// asymptotically orthogonal.
pub const ORTHOGONALITY_SLOPE: f64 = 0.5;
/// Pulled-back estimates from other sequence elements enter the profile
/// average only when they correlate at least this well with the reference.
pub const MATCH_CORRELATION: f64 = 0.9;
/// Candidate points tried per dyadic block when matching across the sequence.
const CANDIDATES_PER_BLOCK: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileParams {
    pub t_shift: f64,
    pub x_shift: Vec<f64>,
    pub scale: f64,
    /// `-t_shift / scale`.
    pub tau: f64,
}

impl ProfileParams {
    pub fn new(t_shift: f64, x_shift: Vec<f64>, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(KgError::InvalidArgument(format!("scale {scale} outside (0, 1]")));
        }
        Ok(Self {
            t_shift,
            x_shift,
            scale,
            tau: -t_shift / scale,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            t_shift: 0.0,
            x_shift: vec![0.0; dim],
            scale: 1.0,
            tau: 0.0,
        }
    }

    /// Parameters of `T(self) T(inner)`.
    pub fn compose(&self, inner: &ProfileParams) -> Result<Self> {
        let x = self
            .x_shift
            .iter()
            .zip(&inner.x_shift)
            .map(|(a, b)| a + self.scale * b)
            .collect();
        Self::new(self.t_shift + inner.t_shift, x, self.scale * inner.scale)
    }

    fn check(&self, dim: usize) -> Result<()> {
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(KgError::InvalidArgument(format!(
                "scale {} outside (0, 1]",
                self.scale
            )));
        }
        if self.x_shift.len() != dim {
            return Err(KgError::InvalidArgument(format!(
                "shift has {} components on a {dim}-dimensional grid",
                self.x_shift.len()
            )));
        }
        if (self.tau + self.t_shift / self.scale).abs() > 1e-12 * self.tau.abs().max(1.0) {
            return Err(KgError::InvalidArgument("tau inconsistent with t_shift / scale".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Group action

fn sinc(z: f64) -> f64 {
    if z == 0.0 {
        1.0
    } else {
        let p = std::f64::consts::PI * z;
        p.sin() / p
    }
}

/// Contracts axis `a` of `data` with the `n x n` matrix `mat` (row-major,
/// `out[m] = sum_k mat[m][k] in[k]`).
fn contract_axis(grid: &Grid, data: &mut [Complex64], a: usize, mat: &[f64]) {
    let n = grid.n();
    let stride = n.pow((grid.dim() - 1 - a) as u32);
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for slab in data.chunks_mut(n * stride) {
        for col in 0..stride {
            for (i, v) in line.iter_mut().enumerate() {
                *v = slab[i * stride + col];
            }
            for (m, o) in out.iter_mut().enumerate() {
                let row = &mat[m * n..(m + 1) * n];
                *o = row.iter().zip(&line).map(|(w, v)| *w * v).sum();
            }
            for (i, v) in out.iter().enumerate() {
                slab[i * stride + col] = *v;
            }
        }
    }
}

/// Smallest scale the lattice can represent.
pub fn min_scale(grid: Grid) -> f64 {
    2.0 * grid.cell() / grid.length()
}

/// `T phi(x) = h^{-d/2} phi((x - x0)/h)`, or its inverse.
///
/// `phi` is read as a function on the box, extended by zero, so for `h <= 1`
/// the image fits in the box and its Fourier coefficients are exact sinc
/// sums; the shift is an exact modulation. The inverse is the adjoint, which
/// also undoes the action exactly on fields localized within `h L / 2` of
/// `x0`. The time shift is not applied here (see [`bubble`]).
pub fn apply_group_action(
    field: &SpectralField,
    params: &ProfileParams,
    inverse: bool,
) -> Result<SpectralField> {
    let out = group_action_unchecked(field, params, inverse)?;
    if !inverse {
        let (a, b) = (field.l2_norm(), out.l2_norm());
        if (a - b).abs() > ISOMETRY_TOL * a.max(f64::MIN_POSITIVE) {
            return Err(KgError::Alias(format!(
                "rescaled field loses L2 mass ({a:.6e} -> {b:.6e})"
            )));
        }
    }
    Ok(out)
}

/// The action without the isometry check. Extraction applies it to
/// data-derived estimates whose content above the rescaled band is dropped.
fn group_action_unchecked(
    field: &SpectralField,
    params: &ProfileParams,
    inverse: bool,
) -> Result<SpectralField> {
    let g = field.grid;
    let d = g.dim();
    params.check(d)?;
    let h = params.scale;
    if h < min_scale(g) {
        return Err(KgError::Alias(format!(
            "scale {h} below the lattice limit {}",
            min_scale(g)
        )));
    }
    let n = g.n();
    let mut mat = vec![0.0; n * n];
    for m in 0..n {
        for k in 0..n {
            let (km, kk) = (g.wavenumber(m) as f64, g.wavenumber(k) as f64);
            mat[m * n + k] = if inverse {
                sinc(km - h * kk)
            } else {
                sinc(kk - h * km)
            };
        }
    }
    let phase = |xi: &[f64], sign: f64| {
        let arg: f64 = xi.iter().zip(&params.x_shift).map(|(a, b)| a * b).sum();
        Complex64::from_polar(h.powf(0.5 * d as f64), sign * arg)
    };
    let mut data = field.clone();
    data.zero_nyquist();
    if inverse {
        g.for_each_frequency(|flat, xi| data.coeffs[flat] *= phase(xi, 1.0));
    }
    for a in 0..d {
        contract_axis(&g, &mut data.coeffs, a, &mat);
    }
    if !inverse {
        g.for_each_frequency(|flat, xi| data.coeffs[flat] *= phase(xi, -1.0));
    }
    data.zero_nyquist();
    Ok(data)
}

/// `e^{-i t <D>} T phi`: the bubble a profile contributes at one sequence index.
pub fn bubble(profile: &SpectralField, params: &ProfileParams) -> Result<SpectralField> {
    let b = apply_group_action(profile, params, false)?;
    Ok(if params.t_shift == 0.0 {
        b
    } else {
        half_wave(&b, -params.t_shift)
    })
}

// ---------------------------------------------------------------------------
// Orthogonality

/// `h/h' + h'/h + (|t - t'| + |x - x'|) / min(h, h')` with the torus distance.
pub fn orthogonality_score(a: &ProfileParams, b: &ProfileParams, length: f64) -> f64 {
    let h = a.scale.min(b.scale);
    let dx = periodic_distance(&a.x_shift, &b.x_shift, length);
    a.scale / b.scale + b.scale / a.scale + ((a.t_shift - b.t_shift).abs() + dx) / h
}

/// Parameters of one profile along the sequence, labelled by `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTrack {
    pub n: Vec<u64>,
    pub params: Vec<ProfileParams>,
}

impl ParamTrack {
    pub fn new(n: Vec<u64>, params: Vec<ProfileParams>) -> Result<Self> {
        if n.len() != params.len() || n.is_empty() {
            return Err(KgError::InvalidArgument("track labels and params differ".into()));
        }
        if n.windows(2).any(|w| w[1] <= w[0]) || n[0] == 0 {
            return Err(KgError::InvalidArgument("track labels must increase from 1".into()));
        }
        Ok(Self { n, params })
    }

    pub fn len(&self) -> usize {
        self.n.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n.is_empty()
    }
}

/// Least-squares slope of `log score` against `log n`.
pub fn orthogonality_slope(a: &ParamTrack, b: &ParamTrack, length: f64) -> f64 {
    let x: Vec<f64> = a.n.iter().map(|&n| n as f64).collect();
    let y: Vec<f64> = a
        .params
        .iter()
        .zip(&b.params)
        .map(|(p, q)| orthogonality_score(p, q, length))
        .collect();
    crate::lpbesov::loglog_slope(&x, &y)
}

/// Slope test; tracks shorter than two entries cannot be judged and pass.
pub fn tracks_orthogonal(a: &ParamTrack, b: &ParamTrack, length: f64) -> bool {
    a.len() < 2 || orthogonality_slope(a, b, length) > ORTHOGONALITY_SLOPE
}

// ---------------------------------------------------------------------------
// Synthesis

/// Sequence `sum_j e^{-i t_n^j <D>} T_n^j phi^j + noise`, one state per track
/// entry. The noise is complex white noise with `E|z|^2 = noise_amp^2` at each
/// grid point.
pub fn synth_sequence(
    profiles: &[SpectralField],
    tracks: &[ParamTrack],
    noise_amp: f64,
    seed: u64,
    grid: Grid,
) -> Result<Vec<StateVec>> {
    Ok(synth_complex(profiles, tracks, noise_amp, seed, grid)?
        .iter()
        .map(StateVec::from_complex)
        .collect::<Result<_>>()?)
}

/// [`synth_sequence`] in complex form.
pub fn synth_complex(
    profiles: &[SpectralField],
    tracks: &[ParamTrack],
    noise_amp: f64,
    seed: u64,
    grid: Grid,
) -> Result<Vec<SpectralField>> {
    if profiles.len() != tracks.len() {
        return Err(KgError::InvalidArgument("one track per profile".into()));
    }
    for p in profiles {
        grid.check_same(&p.grid)?;
    }
    let len = tracks.first().map_or(1, |t| t.len());
    if tracks.iter().any(|t| t.n != tracks[0].n) {
        return Err(KgError::InvalidArgument("tracks carry different labels".into()));
    }
    for i in 0..tracks.len() {
        for j in i + 1..tracks.len() {
            if !tracks_orthogonal(&tracks[i], &tracks[j], grid.length()) {
                return Err(KgError::Orthogonality(format!(
                    "tracks {i} and {j}: log-score slope {:.3} <= {ORTHOGONALITY_SLOPE}",
                    orthogonality_slope(&tracks[i], &tracks[j], grid.length())
                )));
            }
        }
    }
    let mut rng = random::rng(seed);
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let mut v = SpectralField::zeros(grid);
        for (phi, track) in profiles.iter().zip(tracks) {
            v = &v + &bubble(phi, &track.params[i])?;
        }
        if noise_amp > 0.0 {
            let s = noise_amp / 2f64.sqrt();
            let samples: Vec<Complex64> = (0..grid.len())
                .map(|_| {
                    let a: f64 = rng.sample(StandardNormal);
                    let b: f64 = rng.sample(StandardNormal);
                    Complex64::new(s * a, s * b)
                })
                .collect();
            let mut noise = SpectralField::from_complex_samples(grid, samples)?;
            noise.zero_nyquist();
            v = &v + &noise;
        }
        out.push(v);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Extraction

/// One extracted profile.
#[derive(Clone, Debug)]
pub struct ExtractedProfile {
    /// Averaged pulled-back estimate.
    pub field: SpectralField,
    pub params: Vec<ProfileParams>,
    /// Dyadic ladder index `j` with `scale = 2^{-j}`, per sequence element.
    pub ladder: Vec<i32>,
    /// Correlation of each element's pulled-back estimate with the reference.
    pub correlation: Vec<f64>,
    /// `T_n phi` at each element.
    pub bubbles: Vec<SpectralField>,
    /// Witness value that triggered this stage.
    pub witness: f64,
    /// Relative L² distance between the estimate and the average of all
    /// well-correlated pull-backs.
    pub spread: f64,
}

#[derive(Clone, Debug)]
pub struct Decomposition {
    pub inputs: Vec<SpectralField>,
    pub profiles: Vec<ExtractedProfile>,
    pub remainders: Vec<SpectralField>,
    pub saturated: bool,
    /// Witness of the last remainder when extraction stopped.
    pub final_witness: f64,
}

impl Decomposition {
    pub fn k(&self) -> usize {
        self.profiles.len()
    }

    /// `|‖v‖² - Σ‖bubble‖² - ‖rem‖²| / ‖v‖²` per sequence element.
    pub fn defects(&self) -> Vec<f64> {
        self.defects_with(|_| Complex64::new(1.0, 0.0))
    }

    /// Decoupling defect after applying the Fourier multiplier `symbol` to
    /// every piece.
    pub fn defects_with(&self, symbol: impl Fn(&[f64]) -> Complex64 + Copy) -> Vec<f64> {
        let norm2 = |f: &SpectralField| {
            let mut acc = 0.0;
            f.grid.for_each_frequency(|flat, xi| {
                acc += (symbol(xi) * f.coeffs[flat]).norm_sqr();
            });
            acc * f.grid.volume()
        };
        (0..self.inputs.len())
            .map(|i| {
                let total = norm2(&self.inputs[i]);
                if total == 0.0 {
                    return 0.0;
                }
                let parts: f64 = self.profiles.iter().map(|p| norm2(&p.bubbles[i])).sum::<f64>()
                    + norm2(&self.remainders[i]);
                (total - parts).abs() / total
            })
            .collect()
    }

    /// `sum_j bubble_j + remainder` at element `i`.
    pub fn reconstruct(&self, i: usize) -> SpectralField {
        self.profiles
            .iter()
            .fold(self.remainders[i].clone(), |acc, p| &acc + &p.bubbles[i])
    }

    pub fn report(&self) -> serde_json::Value {
        let profiles: Vec<serde_json::Value> = self
            .profiles
            .iter()
            .map(|p| {
                serde_json::json!({
                    "ladder": p.ladder,
                    "scale": p.params.iter().map(|q| q.scale).collect::<Vec<_>>(),
                    "shift": p.params.iter().map(|q| q.x_shift.clone()).collect::<Vec<_>>(),
                    "l2_mass": p.field.l2_norm(),
                    "bubble_l2": p.bubbles.iter().map(|b| b.l2_norm()).collect::<Vec<_>>(),
                    "correlation": p.correlation,
                    "witness": p.witness,
                    "average_spread": p.spread,
                })
            })
            .collect();
        serde_json::json!({
            "k": self.k(),
            "profiles": profiles,
            "decoupling_defect": self.defects(),
            "remainder_l2": self.remainders.iter().map(|r| r.l2_norm()).collect::<Vec<_>>(),
            "final_witness": self.final_witness,
            "saturated": self.saturated,
        })
    }
}

/// `2^{-jd/2} |Delta_j w(x)|` at every grid point for block `j`.
fn witness_block(bank: &LpBank, w: &SpectralField, j: i32) -> Result<Vec<f64>> {
    let d = bank.grid().dim() as f64;
    let weight = (-0.5 * d * j as f64).exp2();
    Ok(bank
        .project(w, Block::Dyadic(j))?
        .to_complex_samples()
        .iter()
        .map(|c| weight * c.norm())
        .collect())
}

/// Largest discrete `B^{-d/2}_{inf,inf}` witness: `(value, j, flat index)`.
pub fn witness_max(bank: &LpBank, w: &SpectralField) -> Result<(f64, i32, usize)> {
    let blocks: Vec<i32> = (bank.j_min()..=bank.j_max()).collect();
    let per_block: Vec<(f64, i32, usize)> = blocks
        .par_iter()
        .map(|&j| {
            let v = witness_block(bank, w, j)?;
            let (flat, val) = v
                .iter()
                .enumerate()
                .fold((0, 0.0), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc });
            Ok((val, j, flat))
        })
        .collect::<Result<_>>()?;
    Ok(per_block
        .into_iter()
        .fold((0.0, bank.j_min(), 0), |acc, c| if c.0 > acc.0 { c } else { acc }))
}

fn grid_point(grid: Grid, flat: usize) -> Vec<f64> {
    let idx = grid.unravel(flat);
    (0..grid.dim()).map(|a| grid.coordinate(idx[a])).collect()
}

/// Largest ladder index whose scale the lattice resolves.
fn max_ladder(grid: Grid) -> i32 {
    (1.0 / min_scale(grid)).log2().floor() as i32
}

/// Smooth cutoff around `center`: 1 within `h L / 8`, 0 beyond `h L / 4`.
fn window(w: &SpectralField, center: &[f64], scale: f64) -> Result<SpectralField> {
    let g = w.grid;
    let inner = scale * g.length() / 8.0;
    let outer = scale * g.length() / 4.0;
    let mut samples = w.to_complex_samples();
    g.for_each_point(|flat, x| {
        let r = periodic_distance(x, center, g.length());
        samples[flat] *= smooth_step((outer - r) / (outer - inner));
    });
    SpectralField::from_complex_samples(g, samples)
}

fn pull_back(w: &SpectralField, params: &ProfileParams) -> Result<SpectralField> {
    group_action_unchecked(&window(w, &params.x_shift, params.scale)?, params, true)
}

fn correlation(a: &SpectralField, b: &SpectralField) -> f64 {
    let na = a.l2_norm();
    let nb = b.l2_norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.inner(b).norm() / (na * nb)
}

/// Translation `delta` (in the box) with `est(y) ~ reference(y - delta)`:
/// the grid peak of the cross-correlation, polished by Newton sweeps on
/// `|c(delta)|^2` with `c(delta) = sum_k est_k conj(ref_k) e^{i xi_k delta}`.
fn relative_shift(est: &SpectralField, reference: &SpectralField) -> Vec<f64> {
    let g = est.grid;
    let d = g.dim();
    let mut cross = est.clone();
    for (c, r) in cross.coeffs.iter_mut().zip(&reference.coeffs) {
        *c *= r.conj();
    }
    let mag: Vec<f64> = cross.to_complex_samples().iter().map(|c| c.norm()).collect();
    let peak = mag
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
        .0;
    let idx = g.unravel(peak);
    let mut delta: Vec<f64> = (0..d).map(|a| g.coordinate(idx[a])).collect();
    for _ in 0..6 {
        for a in 0..d {
            let (mut c0, mut c1, mut c2) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            g.for_each_frequency(|flat, xi| {
                let arg: f64 = xi.iter().zip(&delta).map(|(x, y)| x * y).sum();
                let term = cross.coeffs[flat] * Complex64::from_polar(1.0, arg);
                let i_xi = Complex64::new(0.0, xi[a]);
                c0 += term;
                c1 += term * i_xi;
                c2 += term * i_xi * i_xi;
            });
            let grad = 2.0 * (c0.conj() * c1).re;
            let curv = 2.0 * (c1.norm_sqr() + (c0.conj() * c2).re);
            if curv < 0.0 {
                delta[a] -= (grad / curv).clamp(-g.cell(), g.cell());
            }
        }
    }
    delta
}

/// Moves `params` so its pull-back lines up with `reference`; returns the
/// new params, the aligned estimate and its correlation with `reference`.
fn align(
    w: &SpectralField,
    params: ProfileParams,
    reference: &SpectralField,
) -> Result<(ProfileParams, SpectralField, f64)> {
    let est = pull_back(w, &params)?;
    let delta = relative_shift(&est, reference);
    let x = params
        .x_shift
        .iter()
        .zip(&delta)
        .map(|(x, d)| x + params.scale * d)
        .collect();
    let moved = ProfileParams::new(params.t_shift, x, params.scale)?;
    let est2 = pull_back(w, &moved)?;
    let (c1, c2) = (correlation(&est, reference), correlation(&est2, reference));
    Ok(if c2 >= c1 {
        (moved, est2, c2)
    } else {
        (params, est, c1)
    })
}

/// Local maxima of the witness in block `j`, strongest first, kept apart by
/// the block's window radius.
fn candidates(bank: &LpBank, w: &SpectralField, j: i32) -> Result<Vec<usize>> {
    let g = bank.grid();
    let v = witness_block(bank, w, j)?;
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|a, b| v[*b].total_cmp(&v[*a]));
    let sep = ((-j as f64).exp2() * g.length() / 8.0).max(g.cell());
    let mut picked: Vec<(usize, Vec<f64>)> = Vec::new();
    for flat in order {
        if picked.len() == CANDIDATES_PER_BLOCK || v[flat] == 0.0 {
            break;
        }
        let x = grid_point(g, flat);
        if picked.iter().all(|(_, y)| periodic_distance(&x, y, g.length()) >= sep) {
            picked.push((flat, x));
        }
    }
    Ok(picked.into_iter().map(|(f, _)| f).collect())
}

/// Greedy extraction on states; see [`extract_profiles_complex`].
pub fn extract_profiles(sequence: &[StateVec], k_max: usize, threshold: f64) -> Result<Decomposition> {
    let fields: Vec<SpectralField> = sequence
        .iter()
        .map(|s| s.to_complex())
        .collect::<Result<_>>()?;
    extract_profiles_complex(&fields, k_max, threshold)
}

/// Greedy bubble extraction.
///
/// Each stage finds the largest `2^{-jd/2} |Delta_j w(x)|` on the last
/// element's remainder, takes scale `2^{-max(j, 0)}` and shift `x`, and pulls
/// the windowed remainder back to a profile estimate. Every other element is
/// matched by trying the strongest witness points of each block and keeping
/// the pull-back that correlates best with that estimate. The profile is the
/// last element's pull-back; its bubbles are subtracted from every remainder.
pub fn extract_profiles_complex(
    sequence: &[SpectralField],
    k_max: usize,
    threshold: f64,
) -> Result<Decomposition> {
    let first = sequence
        .first()
        .ok_or_else(|| KgError::InvalidArgument("empty sequence".into()))?;
    let g = first.grid;
    for s in sequence {
        g.check_same(&s.grid)?;
    }
    if !(threshold > 0.0) {
        return Err(KgError::InvalidArgument("threshold must be positive".into()));
    }
    let bank = LpBank::new(g);
    let top = max_ladder(g);
    let last = sequence.len() - 1;
    let mut remainders: Vec<SpectralField> = sequence.to_vec();
    let mut profiles = Vec::new();
    let mut saturated = false;
    let mut final_witness;
    loop {
        let (wit, j_star, flat) = witness_max(&bank, &remainders[last])?;
        final_witness = wit;
        if wit < threshold {
            break;
        }
        if profiles.len() == k_max {
            saturated = true;
            break;
        }
        let j = j_star.clamp(0, top);
        let reference_params = ProfileParams::new(0.0, grid_point(g, flat), (-j as f64).exp2())?;
        let reference = pull_back(&remainders[last], &reference_params)?;

        let matched: Vec<(ProfileParams, i32, SpectralField, f64)> = (0..sequence.len())
            .into_par_iter()
            .map(|i| {
                if i == last {
                    return Ok((reference_params.clone(), j, reference.clone(), 1.0));
                }
                let mut best: Option<(ProfileParams, i32, SpectralField, f64)> = None;
                for jj in 0.max(bank.j_min())..=top.min(bank.j_max()) {
                    for cand in candidates(&bank, &remainders[i], jj)? {
                        let p = ProfileParams::new(0.0, grid_point(g, cand), (-jj as f64).exp2())?;
                        let (p, est, c) = align(&remainders[i], p, &reference)?;
                        if best.as_ref().is_none_or(|b| c > b.3) {
                            best = Some((p, jj, est, c));
                        }
                    }
                }
                Ok(best.unwrap_or_else(|| {
                    (reference_params.clone(), j, SpectralField::zeros(g), 0.0)
                }))
            })
            .collect::<Result<_>>()?;

        // The last element is the closest proxy for the weak limit; earlier
        // elements still carry interaction with the other bubbles, so they
        // only enter through the consistency check below.
        let field = reference.clone();
        let mut average = SpectralField::zeros(g);
        let mut used = 0usize;
        for m in matched.iter().filter(|m| m.3 >= MATCH_CORRELATION) {
            average = &average + &m.2;
            used += 1;
        }
        average = &average * (1.0 / used as f64);
        let spread = (&average - &field).l2_norm() / field.l2_norm().max(f64::MIN_POSITIVE);

        let bubbles: Vec<SpectralField> = matched
            .par_iter()
            .map(|m| group_action_unchecked(&field, &m.0, false))
            .collect::<Result<_>>()?;
        for (r, b) in remainders.iter_mut().zip(&bubbles) {
            *r = &*r - b;
        }
        profiles.push(ExtractedProfile {
            field,
            params: matched.iter().map(|m| m.0.clone()).collect(),
            ladder: matched.iter().map(|m| m.1).collect(),
            correlation: matched.iter().map(|m| m.3).collect(),
            bubbles,
            witness: wit,
            spread,
        });
    }
    Ok(Decomposition {
        inputs: sequence.to_vec(),
        profiles,
        remainders,
        saturated,
        final_witness,
    })
}
