use crate::csvfmt;
use crate::generator::WeightSequence;
use crate::lognorm::{Envelope, RateCurve};
use crate::transient::{cumulative_weighted_l1, weighted_l1, Trajectory};

/// Additive slack for integration and quadrature error in time-series checks.
pub const CHECK_TOL: f64 = 1e-6;

/// Outcome of one checked inequality `lhs <= rhs`, reported at the point
/// of smallest margin.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

pub const SUMMARY_HEADER: &str = "check,lhs,rhs,pass\n";

impl Check {
    pub fn scalar(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        Check { name: name.into(), lhs, rhs, pass: lhs <= rhs }
    }

    /// Worst pair of a series; passes when every `lhs <= rhs`.
    pub fn series(name: impl Into<String>, pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut worst = (f64::NEG_INFINITY, f64::INFINITY);
        let mut pass = true;
        for (l, r) in pairs {
            pass &= l <= r;
            if r - l < worst.1 - worst.0 {
                worst = (l, r);
            }
        }
        Check { name: name.into(), lhs: worst.0, rhs: worst.1, pass }
    }

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}\n", self.name, csvfmt::num(self.lhs), csvfmt::num(self.rhs), self.pass)
    }
}

pub fn summary_csv(checks: &[Check]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    checks.iter().for_each(|c| out.push_str(&c.csv_row()));
    out
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `||p1(t) - p2(t)||_1 <= 2 exp(-int_0^t gamma*)`.
pub fn l1_contraction(a: &Trajectory, b: &Trajectory, rate: &RateCurve) -> Check {
    Check::series(
        "contraction_l1",
        (0..a.len()).map(|i| {
            let lhs: f64 = diff(&a.states[i], &b.states[i]).iter().map(|x| x.abs()).sum();
            (lhs, 2.0 * (-rate.integral_from_zero(a.times[i])).exp() + CHECK_TOL)
        }),
    )
}

/// Weighted contraction in `sum d_i |x_i|` over `(r, p_0, ...)` at the
/// rate `gamma**`.
pub fn weighted_contraction(a: &Trajectory, b: &Trajectory, w: &WeightSequence, rate: &RateCurve) -> Check {
    let d = w.take(a.states[0].len());
    let start = weighted_l1(&diff(&a.states[0], &b.states[0]), &d);
    Check::series(
        "contraction_weighted",
        (0..a.len()).map(|i| {
            let lhs = weighted_l1(&diff(&a.states[i], &b.states[i]), &d);
            (lhs, (-rate.integral_from_zero(a.times[i])).exp() * start + CHECK_TOL)
        }),
    )
}

/// Contraction of the queue part in the cumulative weighted norm, with the
/// decay `exp(-int gamma_B)` or an envelope.
pub fn cumulative_contraction(
    name: &str,
    a: &Trajectory,
    b: &Trajectory,
    w: &WeightSequence,
    decay: impl Fn(f64) -> f64,
) -> Check {
    let d = w.take(a.states[0].len() - 1);
    let norm = |i: usize| cumulative_weighted_l1(&diff(&a.states[i][1..], &b.states[i][1..]), &d);
    let start = norm(0);
    Check::series(name, (0..a.len()).map(|i| (norm(i), decay(a.times[i]) * start + CHECK_TOL)))
}

/// `|E(t, j) - E(t, 0)| <= coef * decay(t)`.
pub fn mean_convergence(name: &str, base: &Trajectory, other: &Trajectory, coef: f64, decay: impl Fn(f64) -> f64) -> Check {
    Check::series(
        name,
        (0..base.len()).map(|i| ((other.mean(i) - base.mean(i)).abs(), coef * decay(base.times[i]) + CHECK_TOL)),
    )
}

/// Decay of an envelope from time zero.
pub fn envelope_decay(env: Envelope) -> impl Fn(f64) -> f64 {
    move |t| env.decay(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_reports_tightest_point() {
        let c = Check::series("x", [(1.0, 3.0), (2.0, 2.5), (0.0, 9.0)]);
        assert!(c.pass);
        assert_eq!((c.lhs, c.rhs), (2.0, 2.5));
        assert!(!Check::series("y", [(1.0, 0.5)]).pass);
        assert_eq!(c.csv_row(), "x,2.00000000000e0,2.50000000000e0,true\n");
    }
}
