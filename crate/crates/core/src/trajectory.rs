use serde::{Deserialize, Serialize};

use crate::error::{KgError, Result};
use crate::spectral::{Grid, StateVec};

/// Outcome of a time integration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    BlowupSuspected,
    ToleranceFail,
}

/// Time-stamped samples of a solution on a fixed grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub grid: Grid,
    pub times: Vec<f64>,
    pub states: Vec<StateVec>,
    /// Global integrator step index of each sample.
    pub steps: Vec<u64>,
    /// Energy at each sample.
    pub energies: Vec<f64>,
    pub status: RunStatus,
    /// Relative Duhamel residual per quadrature segment.
    pub duhamel_residual: Vec<f64>,
}

impl Trajectory {
    pub fn new(grid: Grid) -> Self {
        Self {
            grid,
            times: Vec::new(),
            states: Vec::new(),
            steps: Vec::new(),
            energies: Vec::new(),
            status: RunStatus::Complete,
            duhamel_residual: Vec::new(),
        }
    }

    /// Builds a trajectory from samples without diagnostics (energies are
    /// computed on demand).
    pub fn from_samples(grid: Grid, times: Vec<f64>, states: Vec<StateVec>) -> Result<Self> {
        if times.len() != states.len() {
            return Err(KgError::InvalidArgument(
                "times and states differ in length".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(KgError::InvalidArgument(
                "sample times must be strictly increasing".into(),
            ));
        }
        for s in &states {
            grid.check_same(&s.grid())?;
        }
        let energies = states
            .iter()
            .map(|s| crate::diagnostics::energy(s).energy)
            .collect();
        let steps = (0..times.len() as u64).collect();
        Ok(Self {
            grid,
            times,
            states,
            steps,
            energies,
            status: RunStatus::Complete,
            duhamel_residual: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first_time(&self) -> f64 {
        self.times.first().copied().unwrap_or(0.0)
    }

    pub fn last_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn final_state(&self) -> Option<&StateVec> {
        self.states.last()
    }

    pub fn push(&mut self, time: f64, step: u64, state: StateVec, energy: f64) {
        self.times.push(time);
        self.steps.push(step);
        self.states.push(state);
        self.energies.push(energy);
    }

    /// Fails with a coverage error unless `[start, end]` lies within the samples.
    pub fn check_covers(&self, start: f64, end: f64) -> Result<()> {
        check_coverage(&self.times, start, end)
    }

    /// Samples with times in `[start, end]`.
    pub fn window(&self, start: f64, end: f64) -> Result<Trajectory> {
        self.check_covers(start, end)?;
        let eps = time_eps(&self.times);
        let mut out = Trajectory::new(self.grid);
        out.status = self.status;
        for i in 0..self.len() {
            let t = self.times[i];
            if t >= start - eps && t <= end + eps {
                out.push(t, self.steps[i], self.states[i].clone(), self.energies[i]);
            }
        }
        Ok(out)
    }

    /// Appends `next`, dropping its first sample when it repeats our last time.
    pub fn extend(&mut self, next: Trajectory) -> Result<()> {
        self.grid.check_same(&next.grid)?;
        let skip = usize::from(
            !self.is_empty()
                && !next.is_empty()
                && (next.first_time() - self.last_time()).abs() <= time_eps(&self.times),
        );
        for i in skip..next.len() {
            self.push(
                next.times[i],
                next.steps[i],
                next.states[i].clone(),
                next.energies[i],
            );
        }
        self.duhamel_residual.extend(next.duhamel_residual);
        self.status = next.status;
        Ok(())
    }

    /// Every sample multiplied by `c` (used for homogeneity checks).
    pub fn scaled(&self, c: f64) -> Trajectory {
        let mut out = self.clone();
        for s in &mut out.states {
            *s = s.scaled(c);
        }
        out
    }
}

pub(crate) fn time_eps(times: &[f64]) -> f64 {
    let span = match (times.first(), times.last()) {
        (Some(a), Some(b)) => (b - a).abs().max(a.abs()).max(b.abs()),
        _ => 0.0,
    };
    1e-9 * span.max(1.0)
}

pub(crate) fn check_coverage(times: &[f64], start: f64, end: f64) -> Result<()> {
    let (first, last) = match (times.first(), times.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => (f64::NAN, f64::NAN),
    };
    let eps = time_eps(times);
    if times.is_empty() || !(start <= end) || start < first - eps || end > last + eps {
        return Err(KgError::Coverage {
            start,
            end,
            first,
            last,
        });
    }
    Ok(())
}
