use crate::error::{Error, Result};
use crate::rates::QueueModel;

use super::{integrate, Characteristic, ProbabilityState, Trajectory};

/// Largest allowed `|x(t) - x(t - 1)|` over a limiting window.
pub const PERIODICITY_TOL: f64 = 1e-5;
/// Refinement stops once characteristics move by less than this.
pub const REFINE_TOL: f64 = 1e-6;
/// Largest dimension tried by [`truncation_refine`].
pub const REFINE_BUDGET: usize = 1 << 14;

/// Trajectory from the empty state together with its last period.
#[derive(Debug, Clone)]
pub struct LimitCycle {
    pub full: Trajectory,
    pub window: Trajectory,
    /// Largest one-period change over the window, across characteristics.
    pub defect: f64,
}

/// Largest `|x(t) - x(t - 1)|` for `t` in `[t_a, t_b]`.
fn periodicity_defect(traj: &Trajectory, t_a: f64, t_b: f64) -> Result<f64> {
    let dt = traj.times[1] - traj.times[0];
    let lag = (1.0 / dt).round() as usize;
    let mut defect: f64 = 0.0;
    for i in 0..traj.len() {
        let t = traj.times[i];
        if t < t_a - 1e-9 || t > t_b + 1e-9 {
            continue;
        }
        let j = i.checked_sub(lag).filter(|&j| (traj.times[j] - (t - 1.0)).abs() < 1e-9).ok_or_else(|| {
            Error::IntegrationFailure { t, reason: "output grid has no point one period earlier".into() }
        })?;
        for c in Characteristic::ALL {
            defect = defect.max((traj.characteristic(c, i) - traj.characteristic(c, j)).abs());
        }
    }
    Ok(defect)
}

/// Integrates from the empty queue to `t_b` and returns the one-period
/// window `[t_a, t_b]`, checking that the solution has become periodic.
pub fn limiting_cycle(model: &QueueModel, n: usize, step: f64, window: (f64, f64)) -> Result<LimitCycle> {
    let (t_a, t_b) = window;
    if (t_b - t_a - 1.0).abs() > 1e-9 || t_a < 1.0 {
        return Err(Error::IntegrationFailure { t: t_a, reason: format!("window [{t_a}, {t_b}] must be one period past t = 1") });
    }
    let full = integrate(model, &ProbabilityState::unit_queue(0, n), t_b, n, step)?;
    let defect = periodicity_defect(&full, t_a, t_b)?;
    if !(defect < PERIODICITY_TOL) {
        return Err(Error::NotConverged { defect, tolerance: PERIODICITY_TOL });
    }
    let window = full.window(t_a, t_b);
    Ok(LimitCycle { full, window, defect })
}

/// Outcome of [`truncation_refine`].
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub n: usize,
    /// Change of the window characteristics between `n` and `2n`.
    pub change: f64,
    /// `(n, change against 2n)` for every level tried.
    pub history: Vec<(usize, f64)>,
}

fn window_characteristics(model: &QueueModel, n: usize, t_end: f64, step: f64) -> Result<Vec<[f64; 2]>> {
    let traj = integrate(model, &ProbabilityState::unit_queue(0, n), t_end, n, step)?.window(t_end - 1.0, t_end);
    Ok((0..traj.len()).map(|i| [traj.empty_prob(i), traj.mean(i)]).collect())
}

/// Doubles the truncation from `n_start` until the empty-queue probability
/// and mean over `[t_end - 1, t_end]` move by less than [`REFINE_TOL`];
/// returns the smaller dimension of the accepted pair.
pub fn truncation_refine(model: &QueueModel, t_end: f64, n_start: usize, step: f64) -> Result<Refinement> {
    let min = model.k + 3;
    if n_start < min {
        return Err(Error::DimensionTooSmall { n: n_start, min });
    }
    let mut n = n_start;
    let mut current = window_characteristics(model, n, t_end, step)?;
    let mut history = Vec::new();
    loop {
        let next_n = 2 * n;
        if next_n > REFINE_BUDGET {
            return Err(Error::BudgetExceeded { budget: REFINE_BUDGET });
        }
        let next = window_characteristics(model, next_n, t_end, step)?;
        let change = current
            .iter()
            .zip(&next)
            .flat_map(|(a, b)| [(a[0] - b[0]).abs(), (a[1] - b[1]).abs()])
            .fold(0.0, f64::max);
        history.push((n, change));
        if change < REFINE_TOL {
            return Ok(Refinement { n, change, history });
        }
        n = next_n;
        current = next;
    }
}
