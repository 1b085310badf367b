//! Fixed-step integration of the truncated forward Kolmogorov systems.
//!
//! The classical four-stage Runge-Kutta scheme is used throughout. The
//! generator is reassembled at each stage time; with the banded layout a
//! stage costs `O(n)`.

mod limit;
mod oracle;

pub use limit::{limiting_cycle, truncation_refine, LimitCycle, Refinement, PERIODICITY_TOL, REFINE_BUDGET, REFINE_TOL};
pub use oracle::{repair_prob_closed_form, stationary_oracle, RepairTable};

use rayon::prelude::*;

use crate::csvfmt;
use crate::error::{Error, Result};
use crate::generator::{assemble_full, shift_to_reduced, BandedMatrix, BMode, Forcing, TruncatedSystem, Variant};
use crate::rates::QueueModel;

/// Spacing of stored output points.
pub const OUTPUT_DT: f64 = 0.01;
/// Default integration step.
pub const DEFAULT_STEP: f64 = 1e-3;

const SIMPLEX_TOL: f64 = 1e-8;
const NEGATIVE_TOL: f64 = -1e-10;

/// Distribution over `(r, p_0, p_1, ...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityState {
    /// Probability that the server is under repair.
    pub r: f64,
    pub p: Vec<f64>,
}

impl ProbabilityState {
    /// Unit mass at queue length `k` with the server up, in a system of total
    /// dimension `n` (repair state included).
    pub fn unit_queue(k: usize, n: usize) -> Self {
        let mut p = vec![0.0; n - 1];
        p[k] = 1.0;
        ProbabilityState { r: 0.0, p }
    }

    pub fn from_vector(v: &[f64]) -> Self {
        ProbabilityState { r: v[0], p: v[1..].to_vec() }
    }

    pub fn to_vector(&self) -> Vec<f64> {
        std::iter::once(self.r).chain(self.p.iter().copied()).collect()
    }

    /// Total dimension including the repair state.
    pub fn dim(&self) -> usize {
        self.p.len() + 1
    }

    pub fn total(&self) -> f64 {
        self.r + self.p.iter().sum::<f64>()
    }

    pub fn min_coordinate(&self) -> f64 {
        self.p.iter().copied().fold(self.r, f64::min)
    }
}

/// `sum_i i p_i`; the repair state counts as an empty system.
pub fn mean_of(state: &ProbabilityState) -> f64 {
    state.p.iter().enumerate().map(|(i, x)| i as f64 * x).sum()
}

/// `sum_i d_i |x_i|`.
pub fn weighted_l1(x: &[f64], d: &[f64]) -> f64 {
    x.iter().zip(d).map(|(a, w)| w * a.abs()).sum()
}

/// Norm induced by the cumulative weight matrix: `sum_i d_i |sum_{j >= i} x_j|`.
pub fn cumulative_weighted_l1(x: &[f64], d: &[f64]) -> f64 {
    let mut tail = 0.0;
    let mut acc = 0.0;
    for i in (0..x.len()).rev() {
        tail += x[i];
        acc += d[i] * tail.abs();
    }
    acc
}

/// States on an increasing time grid, in full coordinates `(r, p_0, ...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> ProbabilityState {
        ProbabilityState::from_vector(&self.states[i])
    }

    pub fn last(&self) -> ProbabilityState {
        self.state(self.len() - 1)
    }

    pub fn repair_prob(&self, i: usize) -> f64 {
        self.states[i][0]
    }

    /// Probability of an empty queue with the server up, floored at zero.
    pub fn empty_prob(&self, i: usize) -> f64 {
        self.states[i][1].max(0.0)
    }

    /// Mean queue length with negative round-off floored at zero.
    pub fn mean(&self, i: usize) -> f64 {
        self.states[i][1..].iter().enumerate().map(|(k, x)| k as f64 * x.max(0.0)).sum()
    }

    pub fn characteristic(&self, c: Characteristic, i: usize) -> f64 {
        match c {
            Characteristic::EmptyProb => self.empty_prob(i),
            Characteristic::Mean => self.mean(i),
            Characteristic::Repair => self.repair_prob(i),
        }
    }

    /// Restriction to `[t_a, t_b]`, with a small slack for grid round-off.
    pub fn window(&self, t_a: f64, t_b: f64) -> Trajectory {
        let eps = 1e-9;
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.times[i] >= t_a - eps && self.times[i] <= t_b + eps)
            .collect();
        Trajectory {
            times: idx.iter().map(|&i| self.times[i]).collect(),
            states: idx.iter().map(|&i| self.states[i].clone()).collect(),
        }
    }

    /// CSV with header `t,r,p0,...,p{cut},empty_prob,mean`. Queue columns
    /// above `cutoff` are left out; `None` keeps all of them.
    pub fn to_csv(&self, cutoff: Option<usize>) -> String {
        let n_p = self.states.first().map_or(0, |s| s.len() - 1);
        let keep = cutoff.map_or(n_p, |c| (c + 1).min(n_p));
        let mut out = String::from("t,r");
        for k in 0..keep {
            out.push_str(&format!(",p{k}"));
        }
        out.push_str(",empty_prob,mean\n");
        for i in 0..self.len() {
            let s = &self.states[i];
            let row = std::iter::once(self.times[i])
                .chain(s[..=keep].iter().copied())
                .chain([self.empty_prob(i), self.mean(i)]);
            out.push_str(&csvfmt::record(row));
        }
        out
    }

    /// Two-column CSV `t,<name>` for one characteristic.
    pub fn characteristic_csv(&self, c: Characteristic) -> String {
        let mut out = format!("t,{}\n", c.name());
        for i in 0..self.len() {
            out.push_str(&csvfmt::record([self.times[i], self.characteristic(c, i)]));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Characteristic {
    EmptyProb,
    Mean,
    Repair,
}

impl Characteristic {
    pub const ALL: [Characteristic; 3] = [Characteristic::EmptyProb, Characteristic::Mean, Characteristic::Repair];

    pub fn name(self) -> &'static str {
        match self {
            Characteristic::EmptyProb => "empty_prob",
            Characteristic::Mean => "mean",
            Characteristic::Repair => "r",
        }
    }
}

/// Number of steps and output stride for a horizon.
fn schedule(t_end: f64, step: f64) -> Result<(usize, usize)> {
    if !(step > 0.0) || !(t_end >= 0.0) {
        return Err(Error::IntegrationFailure { t: 0.0, reason: format!("bad step {step} or horizon {t_end}") });
    }
    let steps = (t_end / step).round() as usize;
    let stride = ((OUTPUT_DT / step).round() as usize).max(1);
    Ok((steps, stride))
}

/// Classical RK4 with fixed step. `rhs(t, x, dx)` evaluates the vector field;
/// `check(t, x)` runs after each step.
fn rk4<F, C>(x0: &[f64], t_end: f64, step: f64, mut rhs: F, mut check: C) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    C: FnMut(f64, &[f64]) -> Result<()>,
{
    let (steps, stride) = schedule(t_end, step)?;
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut times = vec![0.0];
    let mut states = vec![x.clone()];
    for s in 0..steps {
        let t = s as f64 * step;
        rhs(t, &x, &mut k1)?;
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * step * k1[i];
        }
        rhs(t + 0.5 * step, &tmp, &mut k2)?;
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * step * k2[i];
        }
        rhs(t + 0.5 * step, &tmp, &mut k3)?;
        for i in 0..n {
            tmp[i] = x[i] + step * k3[i];
        }
        rhs(t + step, &tmp, &mut k4)?;
        for i in 0..n {
            x[i] += step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let t_next = (s + 1) as f64 * step;
        check(t_next, &x)?;
        if (s + 1) % stride == 0 || s + 1 == steps {
            times.push(t_next);
            states.push(x.clone());
        }
    }
    Ok(Trajectory { times, states })
}

fn check_negativity(t: f64, x: &[f64]) -> Result<()> {
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    if min < NEGATIVE_TOL {
        return Err(Error::IntegrationFailure { t, reason: format!("coordinate {min:.3e} below zero") });
    }
    Ok(())
}

fn check_step(model: &QueueModel, step: f64) -> Result<()> {
    let limit = 1.0 / (4.0 * model.rate_bound_l());
    if step > limit {
        return Err(Error::StepTooLarge { step, limit });
    }
    Ok(())
}

fn check_dim(model: &QueueModel, n: usize) -> Result<()> {
    let min = model.k + 3;
    if n < min {
        return Err(Error::DimensionTooSmall { n, min });
    }
    Ok(())
}

fn check_initial(x: &[f64]) -> Result<()> {
    let total: f64 = x.iter().sum();
    if (total - 1.0).abs() > 1e-12 || x.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidInitialState(format!("not a distribution (sum {total})")));
    }
    Ok(())
}

/// Integrates `dp/dt = A(t) p` on `[0, t_end]` in dimension `n`.
pub fn integrate(model: &QueueModel, initial: &ProbabilityState, t_end: f64, n: usize, step: f64) -> Result<Trajectory> {
    check_dim(model, n)?;
    check_step(model, step)?;
    if initial.dim() != n {
        return Err(Error::InvalidInitialState(format!("dimension {} != {n}", initial.dim())));
    }
    let x0 = initial.to_vector();
    check_initial(&x0)?;
    let mut m = BandedMatrix::zeros(n);
    let traj = rk4(
        &x0,
        t_end,
        step,
        |t, x, dx| {
            assemble_full(model, t, &mut m);
            m.mul_vec(x, dx);
            Ok(())
        },
        check_negativity,
    )?;
    let total = traj.last().total();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::IntegrationFailure { t: t_end, reason: format!("mass drifted to {total}") });
    }
    Ok(traj)
}

/// Runs [`integrate`] for several initial states in parallel; results keep
/// the input order.
pub fn integrate_many(
    model: &QueueModel,
    initials: &[ProbabilityState],
    t_end: f64,
    n: usize,
    step: f64,
) -> Result<Vec<Trajectory>> {
    initials.par_iter().map(|p0| integrate(model, p0, t_end, n, step)).collect()
}

/// Integrates `dz/dt = M(t) z + f(t)` for systems produced by `builder`.
///
/// Output is mapped back to full coordinates: first-approach systems already
/// carry `r`; for the general second-approach system `r = 1 - sum z`; for the
/// equal-rate system `r` comes from `repair`, which also scales the forcing.
pub fn integrate_inhomogeneous<B>(
    builder: B,
    z0: &[f64],
    t_end: f64,
    step: f64,
    repair: Option<&(dyn Fn(f64) -> f64 + Sync)>,
) -> Result<Trajectory>
where
    B: Fn(f64) -> Result<TruncatedSystem>,
{
    let mut variant = None;
    let raw = rk4(
        z0,
        t_end,
        step,
        |t, x, dx| {
            let sys = builder(t)?;
            let dmax = (0..sys.dim()).map(|i| sys.matrix.get(i, i).abs()).fold(0.0, f64::max);
            if step * 4.0 * dmax > 1.0 {
                return Err(Error::StepTooLarge { step, limit: 1.0 / (4.0 * dmax) });
            }
            sys.matrix.mul_vec(x, dx);
            match &sys.forcing {
                Forcing::None => {}
                Forcing::Fixed(f) => dx.iter_mut().zip(f).for_each(|(d, f)| *d += f),
                Forcing::RepairScaled(f) => {
                    let r = repair.ok_or(Error::MissingRepairCurve)?(t);
                    dx.iter_mut().zip(f).for_each(|(d, f)| *d += f * r);
                }
            }
            variant = Some(sys.variant);
            Ok(())
        },
        check_negativity,
    )?;
    let variant = match variant {
        Some(v) => v,
        None => builder(0.0)?.variant,
    };
    if variant.has_repair_coordinate() {
        return Ok(raw);
    }
    let states = raw
        .times
        .iter()
        .zip(&raw.states)
        .map(|(&t, z)| {
            let r = match variant {
                Variant::BEqual => repair.ok_or(Error::MissingRepairCurve).map(|f| f(t)),
                _ => Ok(1.0 - z.iter().sum::<f64>()),
            }?;
            Ok(std::iter::once(r).chain(z.iter().copied()).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(Trajectory { times: raw.times, states })
}

/// First-approach reduced system `dp/dt = A*(t) p + g(t)` in dimension `n`.
pub fn integrate_reduced(model: &QueueModel, initial: &ProbabilityState, t_end: f64, n: usize, step: f64) -> Result<Trajectory> {
    check_dim(model, n)?;
    check_step(model, step)?;
    let x0 = initial.to_vector();
    check_initial(&x0)?;
    let mut m = BandedMatrix::zeros(n);
    rk4(
        &x0,
        t_end,
        step,
        |t, x, dx| {
            assemble_full(model, t, &mut m);
            let gs = model.gamma_star(t);
            shift_to_reduced(&mut m, gs);
            m.mul_vec(x, dx);
            dx[0] += gs;
            Ok(())
        },
        check_negativity,
    )
}

/// Second-approach system on `(p_0, ..., p_{n-2})`, returned in full
/// coordinates of dimension `n`. The equal-rate mode needs equal
/// catastrophe rates and uses the closed-form repair probability.
pub fn integrate_second_approach(
    model: &QueueModel,
    initial: &ProbabilityState,
    t_end: f64,
    n: usize,
    step: f64,
    mode: BMode,
) -> Result<Trajectory> {
    check_dim(model, n)?;
    check_step(model, step)?;
    let x0 = initial.to_vector();
    check_initial(&x0)?;
    if initial.r != 0.0 {
        return Err(Error::InvalidInitialState("second approach starts with r(0) = 0".into()));
    }
    let builder = |t: f64| crate::generator::build_b(model, t, n - 1, mode);
    match mode {
        BMode::General => integrate_inhomogeneous(builder, &initial.p, t_end, step, None),
        BMode::Equal => {
            let table = RepairTable::new(model, t_end, step)?;
            let f = |t: f64| table.at(t);
            integrate_inhomogeneous(builder, &initial.p, t_end, step, Some(&f))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::build_b;
    use crate::rates::{example1, example2, CatastropheFamily, RateFunction};
    use approx::assert_abs_diff_eq;

    #[test]
    fn mean_examples() {
        assert_eq!(mean_of(&ProbabilityState::unit_queue(0, 20)), 0.0);
        assert_eq!(mean_of(&ProbabilityState::unit_queue(7, 20)), 7.0);
        let s = ProbabilityState { r: 0.0, p: vec![0.5, 0.5, 0.0] };
        assert_eq!(mean_of(&s), 0.5);
    }

    #[test]
    fn weighted_norms() {
        assert_eq!(weighted_l1(&[1.0, -2.0], &[1.0, 3.0]), 7.0);
        // D x = (d0 (x0 + x1), d1 x1)
        assert_eq!(cumulative_weighted_l1(&[1.0, -2.0], &[1.0, 3.0]), 1.0 + 6.0);
    }

    #[test]
    fn zero_rates_constant_trajectory() {
        let z = RateFunction::zero();
        let model = QueueModel::new(z.clone(), z.clone(), z.clone(), z.clone(), CatastropheFamily::uniform(z), 2).unwrap();
        let p0 = ProbabilityState::unit_queue(1, 6);
        let traj = integrate(&model, &p0, 1.0, 6, 1e-2).unwrap();
        assert!(traj.states.iter().all(|s| *s == p0.to_vector()));
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = example1();
        let p0 = ProbabilityState::unit_queue(0, 200);
        assert!(matches!(integrate(&m, &p0, 1.0, 200, 0.05), Err(Error::StepTooLarge { .. })));
        let small = ProbabilityState::unit_queue(0, 50);
        assert!(matches!(integrate(&m, &small, 1.0, 50, 1e-3), Err(Error::DimensionTooSmall { .. })));
        let mut bad = ProbabilityState::unit_queue(0, 200);
        bad.p[1] = 0.5;
        assert!(matches!(integrate(&m, &bad, 1.0, 200, 1e-3), Err(Error::InvalidInitialState(_))));
    }

    #[test]
    fn output_grid_and_conservation() {
        let traj = integrate(&example1(), &ProbabilityState::unit_queue(0, 110), 2.0, 110, 1e-3).unwrap();
        assert_eq!(traj.len(), 201);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
        assert_abs_diff_eq!(traj.times[200], 2.0);
        for i in 0..traj.len() {
            let s = traj.state(i);
            assert!((s.total() - 1.0).abs() < 1e-8);
            assert!(s.min_coordinate() > -1e-10);
        }
    }

    #[test]
    fn reduced_and_second_approach_agree_with_full() {
        let n = 110;
        let p0 = ProbabilityState::unit_queue(0, n);
        let full = integrate(&example1(), &p0, 3.0, n, 1e-3).unwrap();
        let red = integrate_reduced(&example1(), &p0, 3.0, n, 1e-3).unwrap();
        let eq = integrate_second_approach(&example1(), &p0, 3.0, n, 1e-3, BMode::Equal).unwrap();
        for i in 0..full.len() {
            for j in 0..n {
                assert_abs_diff_eq!(full.states[i][j], red.states[i][j], epsilon = 1e-7);
                assert_abs_diff_eq!(full.states[i][j], eq.states[i][j], epsilon = 1e-7);
            }
        }
        let full2 = integrate(&example2(), &p0, 3.0, n, 1e-3).unwrap();
        let gen = integrate_second_approach(&example2(), &p0, 3.0, n, 1e-3, BMode::General).unwrap();
        for i in 0..full2.len() {
            assert_abs_diff_eq!(full2.repair_prob(i), gen.repair_prob(i), epsilon = 1e-7);
        }
    }

    #[test]
    fn zero_system_keeps_state() {
        let builder = |t: f64| {
            let mut sys = build_b(&example2(), t, 4, BMode::General)?;
            sys.matrix = crate::generator::SystemMatrix::Dense(nalgebra::DMatrix::zeros(4, 4));
            sys.forcing = Forcing::None;
            Ok(sys)
        };
        let z0 = [0.1, 0.2, 0.3, 0.4];
        let traj = integrate_inhomogeneous(builder, &z0, 0.5, 1e-2, None).unwrap();
        assert_eq!(&traj.last().p, &z0);
    }

    #[test]
    fn repair_scaled_forcing_needs_curve() {
        let builder = |t: f64| build_b(&example1(), t, 5, BMode::Equal);
        let err = integrate_inhomogeneous(builder, &[1.0, 0.0, 0.0, 0.0, 0.0], 0.1, 1e-3, None);
        assert_eq!(err, Err(Error::MissingRepairCurve));
    }

    #[test]
    fn csv_layout() {
        let traj = integrate(&example2(), &ProbabilityState::unit_queue(0, 103), 0.02, 103, 1e-3).unwrap();
        let csv = traj.to_csv(Some(2));
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,r,p0,p1,p2,empty_prob,mean");
        assert_eq!(lines.next().unwrap().split(',').count(), 7);
        assert_eq!(csv.lines().count(), 4);
        assert!(traj.characteristic_csv(Characteristic::Mean).starts_with("t,mean\n"));
    }
}
