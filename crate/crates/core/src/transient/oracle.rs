use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::generator::build_a;
use crate::rates::{QueueModel, RateFunction};

use super::ProbabilityState;

const CLOSED_FORM_CELLS_PER_UNIT: usize = 2048;
const STATIONARY_RESIDUAL: f64 = 1e-10;

fn equal_rate(model: &QueueModel) -> Result<&RateFunction> {
    model.gamma_star_function().ok_or(Error::UnequalCatastrophes)
}

/// Exact antiderivative `Phi(t) = int_0^t (eta + gamma*)`.
fn outflow_integral(model: &QueueModel, gamma: &RateFunction, t: f64) -> f64 {
    model.eta.integral(0.0, t) + gamma.integral(0.0, t)
}

/// Repair probability for equal catastrophe rates started from `r(0) = 0`.
///
/// Solves `r' = -eta r + gamma* (1 - r)`:
/// `r(t) = int_0^t exp(-int_tau^t (eta + gamma*)) gamma*(tau) dtau`.
/// The inner integral is exact; the outer one is composite Simpson.
pub fn repair_prob_closed_form(model: &QueueModel, t: f64) -> Result<f64> {
    let gamma = equal_rate(model)?;
    if t <= 0.0 {
        return Ok(0.0);
    }
    let cells = 2 * ((t * CLOSED_FORM_CELLS_PER_UNIT as f64 / 2.0).ceil() as usize).max(1);
    let h = t / cells as f64;
    let phi_t = outflow_integral(model, gamma, t);
    let f = |tau: f64| (outflow_integral(model, gamma, tau) - phi_t).exp() * gamma.eval(tau);
    let mut acc = f(0.0) + f(t);
    for i in 1..cells {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    Ok(acc * h / 3.0)
}

/// Repair probability tabulated at every half step, for use as the
/// forcing scale of the equal-rate second-approach system.
#[derive(Debug, Clone)]
pub struct RepairTable {
    half_step: f64,
    values: Vec<f64>,
}

impl RepairTable {
    pub fn new(model: &QueueModel, t_end: f64, step: f64) -> Result<Self> {
        let gamma = equal_rate(model)?;
        let half_step = 0.5 * step;
        let cells = (t_end / half_step).round() as usize + 2;
        let mut values = Vec::with_capacity(cells + 1);
        let mut r = 0.0;
        values.push(r);
        for i in 0..cells {
            let a = i as f64 * half_step;
            let b = a + half_step;
            let m = 0.5 * (a + b);
            let phi_b = outflow_integral(model, gamma, b);
            let g = |tau: f64| (outflow_integral(model, gamma, tau) - phi_b).exp() * gamma.eval(tau);
            let decay = (outflow_integral(model, gamma, a) - phi_b).exp();
            r = decay * r + half_step / 6.0 * (g(a) + 4.0 * g(m) + g(b));
            values.push(r);
        }
        Ok(RepairTable { half_step, values })
    }

    /// Value at the nearest tabulated half step.
    pub fn at(&self, t: f64) -> f64 {
        let i = (t / self.half_step).round() as usize;
        self.values[i.min(self.values.len() - 1)]
    }
}

/// Stationary distribution of the truncated closed generator of a
/// time-homogeneous model, by a dense solve with the normalisation
/// replacing the last balance equation.
pub fn stationary_oracle(model: &QueueModel, n: usize) -> Result<ProbabilityState> {
    if !model.is_time_homogeneous() {
        return Err(Error::NotConstant);
    }
    let a = build_a(model, 0.0, n)?.matrix.to_dense();
    let mut m = a.clone();
    m.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let p = m.lu().solve(&rhs).ok_or(Error::SingularSystem)?;
    let residual = (&a * &p).amax();
    if !(residual < STATIONARY_RESIDUAL) {
        return Err(Error::SingularSystem);
    }
    Ok(ProbabilityState::from_vector(p.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::{example1, example2, CatastropheFamily};
    use crate::transient::{integrate, DEFAULT_STEP};
    use approx::assert_abs_diff_eq;

    fn constant_model(lambda: f64, mu: f64, beta: f64, eta: f64, gamma: f64, k: usize) -> QueueModel {
        let c = |x| RateFunction::constant(x).unwrap();
        QueueModel::new(c(lambda), c(mu), c(beta), c(eta), CatastropheFamily::uniform(c(gamma)), k).unwrap()
    }

    #[test]
    fn closed_form_starts_at_zero() {
        assert_eq!(repair_prob_closed_form(&example1(), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_constant_rates() {
        // r' = -2 r + (1 - r)  =>  r = (1 - e^{-3t}) / 3
        let m = constant_model(1.0, 1.0, 1.0, 2.0, 1.0, 3);
        for t in [0.3f64, 1.0, 4.0] {
            let expected = (1.0 - (-3.0 * t).exp()) / 3.0;
            assert_abs_diff_eq!(repair_prob_closed_form(&m, t).unwrap(), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn closed_form_needs_equal_rates() {
        assert_eq!(repair_prob_closed_form(&example2(), 1.0), Err(Error::UnequalCatastrophes));
        assert!(RepairTable::new(&example2(), 1.0, 1e-3).is_err());
    }

    #[test]
    fn closed_form_matches_ode() {
        let n = 110;
        let traj = integrate(&example1(), &ProbabilityState::unit_queue(0, n), 5.0, n, DEFAULT_STEP).unwrap();
        let r_ode = traj.last().r;
        assert_abs_diff_eq!(repair_prob_closed_form(&example1(), 5.0).unwrap(), r_ode, epsilon = 1e-6);
        let table = RepairTable::new(&example1(), 5.0, DEFAULT_STEP).unwrap();
        assert_abs_diff_eq!(table.at(5.0), r_ode, epsilon = 1e-6);
    }

    #[test]
    fn stationary_absorbing_empty_state() {
        let s = stationary_oracle(&constant_model(0.0, 1.0, 1.0, 1.0, 0.0, 2), 8).unwrap();
        assert_abs_diff_eq!(s.p[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.total(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn stationary_geometric_profile() {
        let n = 40;
        let s = stationary_oracle(&constant_model(1.0, 2.0, 1.0, 0.7, 0.0, 5), n).unwrap();
        let norm: f64 = (0..n - 1).map(|i| 0.5f64.powi(i as i32)).sum();
        assert_abs_diff_eq!(s.r, 0.0, epsilon = 1e-12);
        for (i, p) in s.p.iter().enumerate() {
            assert_abs_diff_eq!(*p, 0.5f64.powi(i as i32) / norm, epsilon = 1e-8);
        }
    }

    #[test]
    fn stationary_rejects_time_dependence() {
        assert_eq!(stationary_oracle(&example1(), 10), Err(Error::NotConstant));
    }

    #[test]
    fn long_run_matches_stationary() {
        let m = constant_model(10.0, 2.0, 0.7, 3.0, 2.0, 100);
        let n = 110;
        let oracle = stationary_oracle(&m, n).unwrap();
        // relaxation rate is at least gamma = 2
        let traj = integrate(&m, &ProbabilityState::unit_queue(0, n), 25.0, n, DEFAULT_STEP).unwrap();
        let end = traj.last().to_vector();
        for (a, b) in end.iter().zip(oracle.to_vector()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-6);
        }
    }
}
