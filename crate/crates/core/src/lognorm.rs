//! Logarithmic norms, ergodicity rate functions and the constants that feed
//! the perturbation bounds.
//!
//! Infima over the (infinite) state index are evaluated over the columns up
//! to the point where rates and weights become homogeneous, plus one tail
//! representative. A second tail column is computed as well and must agree
//! with the first.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::generator::{
    assemble_b, assemble_full, shift_to_reduced, weight_transform, BMode, BandedMatrix, Forcing,
    SystemMatrix, TruncatedSystem, Variant, WeightSequence,
};
use crate::rates::{QueueModel, RateFunction};

/// Subintervals per period for every period quadrature.
pub const PERIOD_POINTS: usize = 2048;

const TAIL_TOL: f64 = 1e-9;

/// `sup_i (m_ii + sum_{j != i} |m_ji|)`, the matrix measure induced by the
/// l1 norm.
pub fn log_norm_l1(m: &DMatrix<f64>) -> f64 {
    log_norm_weighted(m, &vec![1.0; m.nrows()])
}

/// Matrix measure in the norm `||x|| = sum d_i |x_i|`.
pub fn log_norm_weighted(m: &DMatrix<f64>, d: &[f64]) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    (0..n)
        .map(|i| {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| d[j] / d[i] * m[(j, i)].abs()).sum();
            m[(i, i)] + off
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Entries `(row, value)` of column `c` of a banded matrix.
fn column(m: &BandedMatrix, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
    let n = m.dim();
    let up = (c >= 1).then(|| (c - 1, m.upper[c - 1]));
    let first = (c >= 2).then(|| (0, m.row0[c]));
    let down = (c + 1 < n).then(|| (c + 1, m.lower[c]));
    up.into_iter().chain(first).chain(down)
}

fn infimum_with_tail_check(exprs: &[f64]) -> Result<f64> {
    let (a, b) = (exprs[exprs.len() - 2], exprs[exprs.len() - 1]);
    if (a - b).abs() > TAIL_TOL * (1.0 + a.abs()) {
        return Err(Error::TailNotHomogeneous { first: a, second: b });
    }
    Ok(exprs[..exprs.len() - 1].iter().copied().fold(f64::INFINITY, f64::min))
}

/// Column expressions `|a*_ii| - sum_{j != i} (d_j/d_i) a*_ji` of the
/// reduced first-approach matrix, for coordinates `0..=last`.
pub fn weighted_column_expressions(model: &QueueModel, w: &WeightSequence, t: f64) -> Vec<f64> {
    let last = model.tail_start().max(w.tail_start() + 1) + 2;
    let n = last + 2;
    let mut m = BandedMatrix::zeros(n);
    assemble_full(model, t, &mut m);
    shift_to_reduced(&mut m, model.gamma_star(t));
    let d = w.take(n);
    (0..=last)
        .map(|c| m.diag[c].abs() - column(&m, c).map(|(j, v)| d[j] / d[c] * v).sum::<f64>())
        .collect()
}

/// Weighted first-approach rate `gamma**(t)` for diagonal weights `w`.
pub fn gamma_double_star(model: &QueueModel, w: &WeightSequence, t: f64) -> Result<f64> {
    infimum_with_tail_check(&weighted_column_expressions(model, w, t))
}

/// Off-diagonal treatment in the second-approach rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffDiagonal {
    /// `b*_ji` enter with their sign.
    Signed,
    /// `|b*_ji|`, the matrix-measure form.
    Absolute,
}

/// Transformed second-approach matrix sized to cover the tail columns.
fn weighted_b(model: &QueueModel, w: &WeightSequence, t: f64) -> (DMatrix<f64>, usize) {
    let last = model.tail_start().max(w.tail_start() + 1) + 2;
    let n = last + 2;
    let mut m = BandedMatrix::zeros(n);
    assemble_b(model, t, BMode::General, &mut m);
    let sys = TruncatedSystem {
        variant: Variant::BGeneral,
        t,
        matrix: SystemMatrix::Banded(m),
        forcing: Forcing::None,
    };
    let bs = weight_transform(&sys, w).expect("variant is B_GENERAL").matrix.to_dense();
    (bs, last)
}

/// Column expressions `|b*_ii| - sum_{j != i} b*_ji` for columns `0..=last`.
pub fn b_column_expressions(model: &QueueModel, w: &WeightSequence, t: f64, off: OffDiagonal) -> Vec<f64> {
    let (bs, last) = weighted_b(model, w, t);
    let n = bs.nrows();
    (0..=last)
        .map(|c| {
            let s: f64 = (0..n)
                .filter(|&j| j != c)
                .map(|j| match off {
                    OffDiagonal::Signed => bs[(j, c)],
                    OffDiagonal::Absolute => bs[(j, c)].abs(),
                })
                .sum();
            bs[(c, c)].abs() - s
        })
        .collect()
}

/// Second-approach rate `gamma_B(t)`.
pub fn gamma_b_rate(model: &QueueModel, w: &WeightSequence, t: f64, off: OffDiagonal) -> Result<f64> {
    infimum_with_tail_check(&b_column_expressions(model, w, t, off))
}

/// Integrand `gamma*(t) - eps * max(eta(t), lambda(t))`.
pub fn proposition_rate(model: &QueueModel, eps: f64, t: f64) -> f64 {
    model.gamma_star(t) - eps * model.eta.eval(t).max(model.lambda.eval(t))
}

#[derive(Clone)]
enum CurveKind {
    Trig(RateFunction),
    Sampled(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

/// A 1-periodic rate with its period mean and a tabulated antiderivative.
#[derive(Clone)]
pub struct RateCurve {
    label: String,
    kind: CurveKind,
    /// `cumulative[i] = int_0^{i/PERIOD_POINTS} rate`.
    cumulative: Vec<f64>,
}

impl fmt::Debug for RateCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RateCurve")
            .field("label", &self.label)
            .field("mean", &self.mean_over_period())
            .finish()
    }
}

impl RateCurve {
    pub fn from_trig(label: impl Into<String>, rate: RateFunction) -> Self {
        let cumulative = (0..=PERIOD_POINTS)
            .map(|i| rate.integral(0.0, i as f64 / PERIOD_POINTS as f64))
            .collect();
        RateCurve { label: label.into(), kind: CurveKind::Trig(rate), cumulative }
    }

    /// Wraps a 1-periodic function; the antiderivative uses Simpson's rule
    /// on each grid cell.
    pub fn from_fn(label: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        let h = 1.0 / PERIOD_POINTS as f64;
        let mut cumulative = Vec::with_capacity(PERIOD_POINTS + 1);
        cumulative.push(0.0);
        let mut acc = 0.0;
        let mut left = f(0.0);
        for i in 0..PERIOD_POINTS {
            let a = i as f64 * h;
            let right = f(a + h);
            acc += h / 6.0 * (left + 4.0 * f(a + 0.5 * h) + right);
            cumulative.push(acc);
            left = right;
        }
        RateCurve { label: label.into(), kind: CurveKind::Sampled(Arc::new(f)), cumulative }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, t: f64) -> f64 {
        match &self.kind {
            CurveKind::Trig(r) => r.eval(t),
            CurveKind::Sampled(f) => f(t),
        }
    }

    pub fn mean_over_period(&self) -> f64 {
        match &self.kind {
            CurveKind::Trig(r) => r.mean(),
            CurveKind::Sampled(_) => self.cumulative[PERIOD_POINTS],
        }
    }

    /// `int_0^t rate`.
    pub fn integral_from_zero(&self, t: f64) -> f64 {
        match &self.kind {
            CurveKind::Trig(r) => r.integral(0.0, t),
            CurveKind::Sampled(f) => {
                let periods = t.floor();
                let frac = t - periods;
                let h = 1.0 / PERIOD_POINTS as f64;
                let cell = ((frac / h).floor() as usize).min(PERIOD_POINTS - 1);
                let a = cell as f64 * h;
                let b = frac;
                let partial = (b - a) / 6.0 * (f(periods + a) + 4.0 * f(periods + 0.5 * (a + b)) + f(periods + b));
                periods * self.cumulative[PERIOD_POINTS] + self.cumulative[cell] + partial
            }
        }
    }

    /// `int_s^t rate`.
    pub fn integral(&self, s: f64, t: f64) -> f64 {
        self.integral_from_zero(t) - self.integral_from_zero(s)
    }

    /// Samples `(t, value)` on `[0, 1]` for CSV export.
    pub fn samples(&self, points: usize) -> Vec<(f64, f64)> {
        (0..=points)
            .map(|i| {
                let t = i as f64 / points as f64;
                (t, self.eval(t))
            })
            .collect()
    }
}

/// `gamma*` as a curve; exact when the catastrophe rates coincide.
pub fn gamma_star_curve(model: &QueueModel) -> RateCurve {
    match model.gamma_star_function() {
        Some(r) => RateCurve::from_trig("gamma_star", r.clone()),
        None => {
            let m = model.clone();
            RateCurve::from_fn("gamma_star", move |t| m.gamma_star(t))
        }
    }
}

pub fn gamma_double_star_curve(model: &QueueModel, w: &WeightSequence) -> Result<RateCurve> {
    gamma_double_star(model, w, 0.0)?;
    let (m, w) = (model.clone(), w.clone());
    Ok(RateCurve::from_fn("gamma_double_star", move |t| {
        infimum_with_tail_check(&weighted_column_expressions(&m, &w, t)).unwrap_or(f64::NAN)
    }))
}

pub fn gamma_b_curve(model: &QueueModel, w: &WeightSequence, off: OffDiagonal) -> Result<RateCurve> {
    gamma_b_rate(model, w, 0.0, off)?;
    let (m, w) = (model.clone(), w.clone());
    Ok(RateCurve::from_fn("gamma_b", move |t| {
        infimum_with_tail_check(&b_column_expressions(&m, &w, t, off)).unwrap_or(f64::NAN)
    }))
}

pub fn proposition_curve(model: &QueueModel, eps: f64) -> RateCurve {
    let m = model.clone();
    RateCurve::from_fn("gamma_star_minus_eps_upsilon", move |t| proposition_rate(&m, eps, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Diverges,
    Fails,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Diverges => "DIVERGES",
            Verdict::Fails => "FAILS",
        })
    }
}

/// For a periodic rate, `int_0^inf rate = inf` iff the period mean is
/// positive.
pub fn check_divergence(rate: &RateCurve) -> Verdict {
    if rate.mean_over_period() > 1e-10 {
        Verdict::Diverges
    } else {
        Verdict::Fails
    }
}

/// Constants with `exp(-int_s^t rate) <= n * exp(-gamma0 (t - s))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub n: f64,
    pub gamma0: f64,
}

impl Envelope {
    /// Envelope `(1, floor)` for a rate known to satisfy `rate >= floor`.
    pub fn from_floor(floor: f64) -> Self {
        Envelope { n: 1.0, gamma0: floor }
    }

    pub fn decay(&self, dt: f64) -> f64 {
        self.n * (-self.gamma0 * dt).exp()
    }

    /// Largest violation of the envelope inequality over an `m x m` grid of
    /// `0 <= s <= t <= span`. Nonpositive means the envelope holds.
    pub fn max_violation(&self, rate: &RateCurve, span: f64, m: usize) -> f64 {
        let pts: Vec<f64> = (0..m).map(|i| span * i as f64 / (m - 1) as f64).collect();
        let cum: Vec<f64> = pts.iter().map(|&t| rate.integral_from_zero(t)).collect();
        let mut worst = f64::NEG_INFINITY;
        for (i, s) in pts.iter().enumerate() {
            for (j, t) in pts.iter().enumerate().skip(i) {
                let lhs = (-(cum[j] - cum[i])).exp();
                worst = worst.max(lhs - self.decay(t - s));
            }
        }
        worst
    }
}

/// Tight envelope from the periodic antiderivative: `gamma0` is the period
/// mean and `ln N = max Phi - min Phi` with `Phi(t) = int_0^t (rate - gamma0)`.
pub fn fit_envelope(rate: &RateCurve) -> Result<Envelope> {
    let mean = rate.mean_over_period();
    if check_divergence(rate) == Verdict::Fails {
        return Err(Error::NotErgodic { mean });
    }
    let h = 1.0 / PERIOD_POINTS as f64;
    let mut hi = f64::NEG_INFINITY;
    let mut lo = f64::INFINITY;
    let mut slope = 0.0f64;
    for (i, c) in rate.cumulative.iter().enumerate() {
        let t = i as f64 * h;
        let phi = c - mean * t;
        hi = hi.max(phi);
        lo = lo.min(phi);
        slope = slope.max((rate.eval(t) - mean).abs());
    }
    // Phi may peak between grid nodes; its slope bounds the overshoot.
    let spread = hi - lo + slope * h;
    Ok(Envelope { n: spread.exp(), gamma0: mean })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WConvention {
    /// `inf_{k >= 1} d_{k+1} / k`, paired with the first approach.
    Shifted,
    /// `inf_{k >= 1} d_k / k`, paired with the second approach.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WConstant {
    pub value: f64,
    /// False when the infimum is zero.
    pub positive: bool,
}

/// `W` constant bounding the mean by the weighted norm.
pub fn w_constant(w: &WeightSequence, convention: WConvention) -> WConstant {
    let q = w.tail_ratio();
    if q <= 1.0 {
        return WConstant { value: 0.0, positive: false };
    }
    // In the tail the ratio of successive terms is q k / (k + 1) >= 1
    // once k >= 1/(q - 1).
    let last = (w.tail_start() + 2).max((1.0 / (q - 1.0)).ceil() as usize + 2);
    let value = (1..=last)
        .map(|k| match convention {
            WConvention::Shifted => w.d(k + 1) / k as f64,
            WConvention::Plain => w.d(k) / k as f64,
        })
        .fold(f64::INFINITY, f64::min);
    WConstant { value, positive: value > 0.0 }
}

/// `H = sup_{|i-j| = 1} d_i / d_j`.
pub fn h_constant(w: &WeightSequence) -> f64 {
    (0..=w.tail_start() + 1)
        .map(|i| {
            let (a, b) = (w.d(i), w.d(i + 1));
            (a / b).max(b / a)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{build_a, build_a_star};
    use crate::rates::{example1, example2, CatastropheFamily};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::TAU;

    #[test]
    fn log_norm_basics() {
        assert_eq!(log_norm_l1(&DMatrix::zeros(4, 4)), 0.0);
        assert_eq!(log_norm_l1(&DMatrix::identity(4, 4)), 1.0);
        let a = build_a(&example1(), 0.0, 200).unwrap().matrix.to_dense();
        assert_abs_diff_eq!(log_norm_l1(&a), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn reduced_log_norm_is_minus_gamma_star() {
        for t in [0.0, 0.1, 0.55, 0.9] {
            let a = build_a_star(&example1(), t, 60).unwrap().matrix.to_dense();
            assert_abs_diff_eq!(log_norm_l1(&a), -example1().gamma_star(t), epsilon = 1e-12);
        }
    }

    #[test]
    fn gamma_double_star_example1() {
        let w = WeightSequence::geometric(0.05).unwrap();
        assert_abs_diff_eq!(gamma_double_star(&example1(), &w, 0.0).unwrap(), 2.0, epsilon = 1e-9);
        for i in 0..64 {
            let t = i as f64 / 64.0 + 0.013;
            let g = gamma_double_star(&example1(), &w, t).unwrap();
            // infimum is attained by the repair column or the empty-queue column
            assert_abs_diff_eq!(g, proposition_rate(&example1(), 0.05, t), epsilon = 1e-12);
            let closed = 1.5 + 0.5 * (TAU * t).cos() - 0.5 * (TAU * t).sin();
            if (TAU * t).sin() >= -7.0 / 9.0 {
                assert_abs_diff_eq!(g, closed, epsilon = 1e-9);
            } else {
                assert!(g < closed);
            }
        }
    }

    #[test]
    fn unit_weights_recover_gamma_star() {
        for t in [0.0, 0.3, 0.8] {
            let g = gamma_double_star(&example1(), &WeightSequence::unit(), t).unwrap();
            assert_abs_diff_eq!(g, example1().gamma_star(t), epsilon = 1e-12);
        }
    }

    #[test]
    fn proposition_lower_bound() {
        for eps in [0.01, 0.05, 0.1] {
            let w = WeightSequence::geometric(eps).unwrap();
            for i in 0..64 {
                let t = i as f64 / 64.0;
                let g = gamma_double_star(&example1(), &w, t).unwrap();
                assert!(g >= proposition_rate(&example1(), eps, t) - 1e-9);
            }
        }
    }

    #[test]
    fn gamma_b_example2_columns() {
        let w = WeightSequence::explicit_prefix(vec![1.0, 2.5], 1.5).unwrap();
        let model = example2();
        for i in 0..64 {
            let t = i as f64 / 64.0;
            let e = b_column_expressions(&model, &w, t, OffDiagonal::Signed);
            let r = model.rates_at(t);
            let g0 = model.gammas.rate(0).eval(t);
            assert_abs_diff_eq!(e[0], r.eta + g0 - 2.5 * r.lambda, epsilon = 1e-12);
            assert_abs_diff_eq!(e[1], r.mu - 0.5 * r.lambda - 0.4 * g0, epsilon = 1e-12);
            assert_abs_diff_eq!(e[5], r.mu / 3.0 - 0.5 * r.lambda, epsilon = 1e-12);
            assert!(e[0] >= 0.5 && e[1] >= 2.0);
            assert!(gamma_b_rate(&model, &w, t, OffDiagonal::Signed).unwrap() >= 1.0 / 3.0);
            // every off-diagonal is nonnegative here, so both forms agree
            assert_abs_diff_eq!(
                gamma_b_rate(&model, &w, t, OffDiagonal::Signed).unwrap(),
                gamma_b_rate(&model, &w, t, OffDiagonal::Absolute).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn tail_inhomogeneity_detected() {
        let exprs = [1.0, 2.0, 3.0];
        assert!(matches!(infimum_with_tail_check(&exprs), Err(Error::TailNotHomogeneous { .. })));
    }

    #[test]
    fn divergence_verdicts() {
        assert_eq!(check_divergence(&gamma_star_curve(&example1())), Verdict::Diverges);
        assert_eq!(check_divergence(&gamma_star_curve(&example2())), Verdict::Fails);
        let c = RateCurve::from_trig("c", RateFunction::constant(0.001).unwrap());
        assert_eq!(check_divergence(&c), Verdict::Diverges);
    }

    #[test]
    fn envelopes() {
        let env = fit_envelope(&gamma_star_curve(&example1())).unwrap();
        assert_eq!(env.gamma0, 2.0);
        assert!(env.n <= 2.0);
        assert_abs_diff_eq!(env.n, (1.0 / TAU).exp(), epsilon = 1e-3);

        let w = WeightSequence::geometric(0.05).unwrap();
        let gds = gamma_double_star_curve(&example1(), &w).unwrap();
        let env2 = fit_envelope(&gds).unwrap();
        let mean = (0..100_000)
            .map(|i| proposition_rate(&example1(), 0.05, (i as f64 + 0.5) / 100_000.0))
            .sum::<f64>()
            / 100_000.0;
        // the infimum has kinks, so cell-wise Simpson is only O(h^2) there
        assert_abs_diff_eq!(env2.gamma0, mean, epsilon = 1e-7);
        assert!(env2.gamma0 < 1.5);
        assert!(env2.n <= 2.0);
        assert!(env2.max_violation(&gds, 2.0, 200) <= 0.0);
        assert!(env.max_violation(&gamma_star_curve(&example1()), 2.0, 200) <= 0.0);

        let c = RateCurve::from_trig("c", RateFunction::constant(1.7).unwrap());
        assert_eq!(fit_envelope(&c).unwrap(), Envelope { n: 1.0, gamma0: 1.7 });
        assert!(matches!(fit_envelope(&gamma_star_curve(&example2())), Err(Error::NotErgodic { .. })));
    }

    #[test]
    fn sampled_curve_integrals() {
        let r = RateFunction::first_harmonic(2.0, 0.3, 0.5).unwrap();
        let exact = RateCurve::from_trig("x", r.clone());
        let sampled = RateCurve::from_fn("y", move |t| r.eval(t));
        assert_abs_diff_eq!(sampled.mean_over_period(), 2.0, epsilon = 1e-12);
        for t in [0.0, 0.37, 1.0, 5.81, 19.999] {
            assert_abs_diff_eq!(sampled.integral_from_zero(t), exact.integral_from_zero(t), epsilon = 1e-10);
        }
    }

    #[test]
    fn w_constants() {
        let w = w_constant(&WeightSequence::geometric(0.05).unwrap(), WConvention::Shifted);
        let brute = (1..2000).map(|k| 1.05f64.powi(k + 1) / k as f64).fold(f64::INFINITY, f64::min);
        assert_eq!(w.value, brute);
        assert_abs_diff_eq!(w.value, 0.1393, epsilon = 1e-4);
        assert!(w.positive);

        let unit = w_constant(&WeightSequence::unit(), WConvention::Shifted);
        assert_eq!(unit, WConstant { value: 0.0, positive: false });

        let e = WeightSequence::explicit_prefix(vec![1.0, 2.5], 1.5).unwrap();
        let brute = (1..200).map(|k| e.d(k) / k as f64).fold(f64::INFINITY, f64::min);
        assert_eq!(w_constant(&e, WConvention::Plain).value, brute);
        assert_abs_diff_eq!(brute, 1.875);
    }

    #[test]
    fn h_constants() {
        assert_abs_diff_eq!(h_constant(&WeightSequence::geometric(0.05).unwrap()), 1.05, epsilon = 1e-15);
        assert_abs_diff_eq!(h_constant(&WeightSequence::geometric_gap(0.05).unwrap()), 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h_constant(&WeightSequence::explicit_prefix(vec![1.0, 2.5], 1.5).unwrap()), 2.5);
    }

    #[test]
    fn unequal_family_curve_is_sampled() {
        let model = QueueModel::new(
            RateFunction::constant(1.0).unwrap(),
            RateFunction::constant(1.0).unwrap(),
            RateFunction::constant(1.0).unwrap(),
            RateFunction::constant(1.0).unwrap(),
            CatastropheFamily {
                explicit: vec![RateFunction::first_harmonic(2.0, 1.0, 0.0).unwrap()],
                tail: RateFunction::constant(1.5).unwrap(),
            },
            2,
        )
        .unwrap();
        let c = gamma_star_curve(&model);
        assert_abs_diff_eq!(c.eval(0.25), 1.5);
        assert_abs_diff_eq!(c.eval(0.75), 1.0, epsilon = 1e-12);
    }
}
