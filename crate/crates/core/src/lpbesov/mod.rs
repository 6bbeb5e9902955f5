//! Littlewood-Paley blocks, Besov and Sobolev norms, and space-time
//! Strichartz norms over sampled trajectories.

mod harness;

pub use harness::{
    inequality_harness, loglog_slope, HarnessConfig, HarnessKind, HarnessReport, HarnessSample,
};

use rayon::prelude::*;

use crate::error::{KgError, Result};
use crate::spectral::{lp_norm_of, Grid, RealField, SpectralField, ZeroModePolicy};
use crate::trajectory::{check_coverage, Trajectory};

/// C-infinity transition from 0 (at `x <= 0`) to 1 (at `x >= 1`) built from `exp(-1/x)`.
pub fn smooth_step(x: f64) -> f64 {
    fn h(x: f64) -> f64 {
        if x > 0.0 {
            (-1.0 / x).exp()
        } else {
            0.0
        }
    }
    let a = h(x);
    let b = h(1.0 - x);
    a / (a + b)
}

/// Low-frequency cutoff: 1 on `|xi| <= 1`, 0 on `|xi| >= 2`.
pub fn low_cutoff(r: f64) -> f64 {
    smooth_step(2.0 - r)
}

/// Annular bump supported in `1/2 <= |xi| <= 2`; its dyadic dilates telescope to 1.
pub fn annulus(r: f64) -> f64 {
    low_cutoff(r) - low_cutoff(2.0 * r)
}

/// A Littlewood-Paley block: the low-frequency piece or the dyadic annulus `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Block {
    Low,
    Dyadic(i32),
}

/// Dyadic projection bank resolved by one grid.
#[derive(Clone, Debug)]
pub struct LpBank {
    grid: Grid,
    j_min: i32,
    j_max: i32,
    norms: Vec<f64>,
}

impl LpBank {
    pub fn new(grid: Grid) -> Self {
        let j_min = grid.min_frequency().log2().floor() as i32;
        let j_max = (grid.max_frequency().log2().ceil() as i32).max(j_min);
        Self {
            grid,
            j_min,
            j_max,
            norms: grid.frequency_norms(),
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn j_min(&self) -> i32 {
        self.j_min
    }

    pub fn j_max(&self) -> i32 {
        self.j_max
    }

    /// Blocks of the inhomogeneous (`Low`, `1..=j_max`) or homogeneous
    /// (`j_min..=j_max`) decomposition.
    pub fn blocks(&self, homogeneous: bool) -> Vec<Block> {
        if homogeneous {
            (self.j_min..=self.j_max).map(Block::Dyadic).collect()
        } else {
            std::iter::once(Block::Low)
                .chain((1..=self.j_max).map(Block::Dyadic))
                .collect()
        }
    }

    /// Symbol value of `block` at `|xi| = r`.
    pub fn symbol(&self, block: Block, r: f64) -> f64 {
        match block {
            Block::Low => low_cutoff(r),
            Block::Dyadic(j) => annulus(r * (-j as f64).exp2()),
        }
    }

    fn check_block(&self, block: Block) -> Result<()> {
        match block {
            Block::Dyadic(j) if j < self.j_min || j > self.j_max => Err(KgError::Range {
                j,
                min: self.j_min,
                max: self.j_max,
            }),
            _ => Ok(()),
        }
    }

    /// `Delta_j` (or `P_0` for [`Block::Low`]) applied to `field`.
    pub fn project(&self, field: &SpectralField, block: Block) -> Result<SpectralField> {
        self.grid.check_same(&field.grid)?;
        self.check_block(block)?;
        let mut out = field.clone();
        for (c, &r) in out.coeffs.iter_mut().zip(&self.norms) {
            *c *= self.symbol(block, r);
        }
        out.zero_nyquist();
        Ok(out)
    }

    /// `||block(field)||_{L^r}` by grid quadrature.
    pub fn block_lp_norm(&self, field: &SpectralField, block: Block, r: f64) -> Result<f64> {
        let piece = self.project(field, block)?;
        let samples = piece.to_complex_samples();
        Ok(lp_norm_of(
            samples.iter().map(|c| c.norm()),
            r,
            self.grid.cell_volume(),
        ))
    }

    /// Besov norm `B^s_{r,2}` (or the homogeneous version) at a fixed time.
    pub fn besov_norm(&self, field: &SpectralField, spec: &NormSpec) -> Result<f64> {
        if spec.q.is_some() {
            return Err(KgError::InvalidArgument(
                "besov_norm takes a spatial norm; use strichartz_norm for q".into(),
            ));
        }
        self.spatial_norm(field, spec)
    }

    pub fn besov_norm_real(&self, field: &RealField, spec: &NormSpec) -> Result<f64> {
        self.besov_norm(&field.to_spectral(), spec)
    }

    fn spatial_norm(&self, field: &SpectralField, spec: &NormSpec) -> Result<f64> {
        self.grid.check_same(&field.grid)?;
        if spec.homogeneous && spec.zero_mode == ZeroModePolicy::Error {
            let c0 = field.zero_mode().norm();
            let scale = field.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            if c0 > crate::spectral::ZERO_MODE_TOL * scale.max(f64::MIN_POSITIVE) {
                return Err(KgError::ZeroModeSingularity { magnitude: c0 });
            }
        }
        let mut acc = 0.0;
        for block in self.blocks(spec.homogeneous) {
            let weight = match block {
                Block::Low => 1.0,
                Block::Dyadic(j) => (j as f64 * spec.s).exp2(),
            };
            acc += (weight * self.block_lp_norm(field, block, spec.r)?).powi(2);
        }
        Ok(acc.sqrt())
    }

    /// Discrete `L^q_t B^s_{r,2}` norm of the position component of `traj`.
    pub fn strichartz_norm(&self, traj: &Trajectory, spec: &NormSpec) -> Result<f64> {
        let fields: Vec<SpectralField> = traj.states.par_iter().map(|s| s.u.to_spectral()).collect();
        self.strichartz_norm_fields(&traj.times, &fields, spec)
    }

    /// Discrete `L^q_t B^s_{r,2}` norm of a sampled family of fields.
    pub fn strichartz_norm_fields(
        &self,
        times: &[f64],
        fields: &[SpectralField],
        spec: &NormSpec,
    ) -> Result<f64> {
        let q = spec.q.ok_or_else(|| {
            KgError::InvalidArgument("strichartz_norm needs a time exponent q".into())
        })?;
        if times.len() != fields.len() {
            return Err(KgError::InvalidArgument("times and fields differ in length".into()));
        }
        let (start, end) = spec.interval.unwrap_or((
            times.first().copied().unwrap_or(0.0),
            times.last().copied().unwrap_or(0.0),
        ));
        check_coverage(times, start, end)?;
        let spatial: Vec<f64> = fields
            .par_iter()
            .map(|f| self.spatial_norm(f, spec))
            .collect::<Result<_>>()?;
        time_lq_norm(times, &spatial, q, start, end)
    }
}

/// Exponents of a Besov or space-time norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormSpec {
    pub s: f64,
    pub r: f64,
    pub homogeneous: bool,
    pub q: Option<f64>,
    pub interval: Option<(f64, f64)>,
    pub zero_mode: ZeroModePolicy,
}

impl NormSpec {
    pub fn besov(s: f64, r: f64) -> Self {
        Self {
            s,
            r,
            homogeneous: false,
            q: None,
            interval: None,
            zero_mode: ZeroModePolicy::Error,
        }
    }

    pub fn homogeneous_besov(s: f64, r: f64) -> Self {
        Self {
            homogeneous: true,
            ..Self::besov(s, r)
        }
    }

    /// `L^q_t B^s_{r,2}`.
    pub fn space_time(q: f64, s: f64, r: f64) -> Self {
        Self {
            q: Some(q),
            ..Self::besov(s, r)
        }
    }

    /// Scattering-size norm `L^p_t B^{(d-3)/2}_{p,2}` with `p = 2(d+1)/(d-1)`.
    pub fn scattering(dim: usize) -> Self {
        let d = dim as f64;
        let p = if dim == 1 {
            f64::INFINITY
        } else {
            2.0 * (d + 1.0) / (d - 1.0)
        };
        Self::space_time(p, (d - 3.0) / 2.0, p)
    }

    /// Dual norm `L^{p'}_t B^{(d-3)/2}_{p',2}` with `p' = 2(d+1)/(d+3)`.
    pub fn dual_scattering(dim: usize) -> Self {
        let d = dim as f64;
        let p = 2.0 * (d + 1.0) / (d + 3.0);
        Self::space_time(p, (d - 3.0) / 2.0, p)
    }

    pub fn on(mut self, start: f64, end: f64) -> Self {
        self.interval = Some((start, end));
        self
    }

    pub fn annihilating(mut self) -> Self {
        self.zero_mode = ZeroModePolicy::Annihilate;
        self
    }
}

/// `L^q` norm in time of nonnegative samples: composite trapezoid on `v^q`
/// with linear interpolation at interval endpoints; `q = inf` takes the max.
pub fn time_lq_norm(times: &[f64], values: &[f64], q: f64, start: f64, end: f64) -> Result<f64> {
    check_coverage(times, start, end)?;
    let interp = |t: f64, g: &dyn Fn(usize) -> f64| -> f64 {
        let i = match times.iter().position(|&s| s >= t) {
            Some(0) | None => {
                return if t <= times[0] {
                    g(0)
                } else {
                    g(times.len() - 1)
                }
            }
            Some(i) => i,
        };
        let (t0, t1) = (times[i - 1], times[i]);
        let w = (t - t0) / (t1 - t0);
        (1.0 - w) * g(i - 1) + w * g(i)
    };
    if q.is_infinite() {
        let mut m = interp(start, &|i| values[i]).max(interp(end, &|i| values[i]));
        for (t, v) in times.iter().zip(values) {
            if *t > start && *t < end {
                m = m.max(*v);
            }
        }
        return Ok(m);
    }
    if end <= start {
        return Ok(0.0);
    }
    let pow = |i: usize| values[i].powf(q);
    let mut knots = vec![(start, interp(start, &pow))];
    for (i, &t) in times.iter().enumerate() {
        if t > start && t < end {
            knots.push((t, pow(i)));
        }
    }
    knots.push((end, interp(end, &pow)));
    let integral: f64 = knots
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum();
    Ok(integral.powf(1.0 / q))
}

/// `||u||_{H^s}` computed directly from the Fourier weights `(1+|xi|^2)^{s/2}`.
pub fn sobolev_norm(field: &RealField, s: f64) -> f64 {
    field.to_spectral().sobolev_norm(s)
}
