//! Time-varying intensities of the queue.
//!
//! Every intensity is a 1-periodic trigonometric polynomial
//! `a0 + sum_j (b_j sin(2 pi j t) + c_j cos(2 pi j t))`. That class is closed
//! under sums and products, which lets the diagonal bound `L` be certified
//! from coefficients alone and makes period integrals exact.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points per period used for numerical sign and range checks.
pub const GRID_POINTS: usize = 10_000;

const NONNEG_TOL: f64 = -1e-12;

/// One harmonic `sin * sin(2 pi j t) + cos * cos(2 pi j t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub j: u32,
    pub sin: f64,
    pub cos: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RateSpec {
    a0: f64,
    #[serde(default)]
    harmonics: Vec<Harmonic>,
}

/// Nonnegative 1-periodic trigonometric polynomial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RateSpec", into = "RateSpec")]
pub struct RateFunction {
    a0: f64,
    harmonics: Vec<Harmonic>,
}

impl From<RateFunction> for RateSpec {
    fn from(r: RateFunction) -> Self {
        RateSpec {
            a0: r.a0,
            harmonics: r.harmonics,
        }
    }
}

impl TryFrom<RateSpec> for RateFunction {
    type Error = Error;

    fn try_from(spec: RateSpec) -> Result<Self> {
        RateFunction::new(spec.a0, spec.harmonics)
    }
}

impl RateFunction {
    /// Builds a rate and checks that it is nonnegative over one period.
    pub fn new(a0: f64, harmonics: Vec<Harmonic>) -> Result<Self> {
        if !a0.is_finite() || harmonics.iter().any(|h| !h.sin.is_finite() || !h.cos.is_finite()) {
            return Err(Error::InvalidRate("non-finite coefficient".into()));
        }
        if harmonics.iter().any(|h| h.j == 0) {
            return Err(Error::InvalidRate("harmonic index must be positive".into()));
        }
        let rate = Self::polynomial(a0, harmonics);
        rate.check_nonnegative()?;
        Ok(rate)
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::new(value, Vec::new())
    }

    /// `a0 + amp_sin sin(2 pi t) + amp_cos cos(2 pi t)`.
    pub fn first_harmonic(a0: f64, amp_sin: f64, amp_cos: f64) -> Result<Self> {
        Self::new(
            a0,
            vec![Harmonic {
                j: 1,
                sin: amp_sin,
                cos: amp_cos,
            }],
        )
    }

    pub fn zero() -> Self {
        Self::polynomial(0.0, Vec::new())
    }

    /// Canonical form without a sign check: harmonics merged by index,
    /// sorted, exact zeros dropped. Used for intermediate algebra
    /// (differences of rates can be negative).
    pub(crate) fn polynomial(a0: f64, harmonics: Vec<Harmonic>) -> Self {
        let mut merged: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
        for h in harmonics {
            let e = merged.entry(h.j).or_insert((0.0, 0.0));
            e.0 += h.sin;
            e.1 += h.cos;
        }
        let harmonics = merged
            .into_iter()
            .filter(|(_, (s, c))| *s != 0.0 || *c != 0.0)
            .map(|(j, (sin, cos))| Harmonic { j, sin, cos })
            .collect();
        RateFunction { a0, harmonics }
    }

    fn check_nonnegative(&self) -> Result<()> {
        if self.coefficient_floor() >= 0.0 {
            return Ok(());
        }
        let (min, at) = self.grid_min();
        if min < NONNEG_TOL {
            return Err(Error::NegativeRate { min, at });
        }
        Ok(())
    }

    pub fn a0(&self) -> f64 {
        self.a0
    }

    pub fn harmonics(&self) -> &[Harmonic] {
        &self.harmonics
    }

    pub fn is_constant(&self) -> bool {
        self.harmonics.is_empty()
    }

    /// Value at time `t`.
    pub fn eval(&self, t: f64) -> f64 {
        self.harmonics.iter().fold(self.a0, |acc, h| {
            let x = TAU * f64::from(h.j) * t;
            acc + h.sin * x.sin() + h.cos * x.cos()
        })
    }

    /// Exact integral over `[a, b]`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.harmonics.iter().fold(self.a0 * (b - a), |acc, h| {
            let w = TAU * f64::from(h.j);
            acc + h.sin * ((w * a).cos() - (w * b).cos()) / w + h.cos * ((w * b).sin() - (w * a).sin()) / w
        })
    }

    /// Mean over one period.
    pub fn mean(&self) -> f64 {
        self.a0
    }

    /// `a0 + sum(|b_j| + |c_j|)`, an upper bound on the value.
    pub fn coefficient_bound(&self) -> f64 {
        self.a0 + self.amplitude_sum()
    }

    /// `a0 - sum(|b_j| + |c_j|)`, a lower bound on the value.
    pub fn coefficient_floor(&self) -> f64 {
        self.a0 - self.amplitude_sum()
    }

    fn amplitude_sum(&self) -> f64 {
        self.harmonics.iter().map(|h| h.sin.abs() + h.cos.abs()).sum()
    }

    /// Minimum over the check grid and where it occurs.
    pub fn grid_min(&self) -> (f64, f64) {
        grid(GRID_POINTS)
            .map(|t| (self.eval(t), t))
            .fold((f64::INFINITY, 0.0), |best, cur| if cur.0 < best.0 { cur } else { best })
    }

    /// Maximum over the check grid.
    pub fn grid_max(&self) -> f64 {
        grid(GRID_POINTS).map(|t| self.eval(t)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn add(&self, other: &RateFunction) -> RateFunction {
        let mut h = self.harmonics.clone();
        h.extend_from_slice(&other.harmonics);
        Self::polynomial(self.a0 + other.a0, h)
    }

    pub fn sub(&self, other: &RateFunction) -> RateFunction {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, factor: f64) -> RateFunction {
        Self::polynomial(
            self.a0 * factor,
            self.harmonics
                .iter()
                .map(|h| Harmonic {
                    j: h.j,
                    sin: h.sin * factor,
                    cos: h.cos * factor,
                })
                .collect(),
        )
    }

    /// Pointwise product, expanded with the product-to-sum identities.
    pub fn mul(&self, other: &RateFunction) -> RateFunction {
        let mut a0 = self.a0 * other.a0;
        let mut out: Vec<Harmonic> = Vec::new();
        for h in &other.harmonics {
            out.push(Harmonic { j: h.j, sin: self.a0 * h.sin, cos: self.a0 * h.cos });
        }
        for h in &self.harmonics {
            out.push(Harmonic { j: h.j, sin: other.a0 * h.sin, cos: other.a0 * h.cos });
        }
        for p in &self.harmonics {
            for q in &other.harmonics {
                let (jp, jq) = (i64::from(p.j), i64::from(q.j));
                let sum = (jp + jq) as u32;
                // sin a sin b = (cos(a-b) - cos(a+b))/2
                // cos a cos b = (cos(a-b) + cos(a+b))/2
                // sin a cos b = (sin(a+b) + sin(a-b))/2
                let cos_diff = 0.5 * (p.sin * q.sin + p.cos * q.cos);
                let cos_sum = 0.5 * (p.cos * q.cos - p.sin * q.sin);
                let sin_sum = 0.5 * (p.sin * q.cos + p.cos * q.sin);
                // sin(a-b) terms: p.sin*q.cos*sin(a-b)/2 - p.cos*q.sin*sin(a-b)/2
                let sin_diff = 0.5 * (p.sin * q.cos - p.cos * q.sin);
                out.push(Harmonic { j: sum, sin: sin_sum, cos: cos_sum });
                let d = jp - jq;
                match d.cmp(&0) {
                    std::cmp::Ordering::Equal => a0 += cos_diff,
                    std::cmp::Ordering::Greater => out.push(Harmonic {
                        j: d as u32,
                        sin: sin_diff,
                        cos: cos_diff,
                    }),
                    std::cmp::Ordering::Less => out.push(Harmonic {
                        j: (-d) as u32,
                        sin: -sin_diff,
                        cos: cos_diff,
                    }),
                }
            }
        }
        Self::polynomial(a0, out)
    }
}

/// `n` equally spaced points covering `[0, 1)`.
pub fn grid(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| i as f64 / n as f64)
}

/// Catastrophe rates `gamma_0, gamma_1, ...`: an explicit prefix followed by
/// one rate shared by every later index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatastropheFamily {
    #[serde(default)]
    pub explicit: Vec<RateFunction>,
    pub tail: RateFunction,
}

impl CatastropheFamily {
    pub fn uniform(rate: RateFunction) -> Self {
        CatastropheFamily { explicit: Vec::new(), tail: rate }
    }

    pub fn rate(&self, n: usize) -> &RateFunction {
        self.explicit.get(n).unwrap_or(&self.tail)
    }

    /// Number of explicitly listed rates.
    pub fn prefix_len(&self) -> usize {
        self.explicit.len()
    }

    /// True when every member equals the tail as a function.
    pub fn is_equal(&self) -> bool {
        self.explicit.iter().all(|r| *r == self.tail)
    }

    /// `inf_n gamma_n(t)`.
    pub fn infimum(&self, t: f64) -> f64 {
        self.explicit
            .iter()
            .map(|r| r.eval(t))
            .fold(self.tail.eval(t), f64::min)
    }

    /// Fills `out[n] = gamma_n(t)` for `n < out.len()`.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let tail = self.tail.eval(t);
        for (n, slot) in out.iter_mut().enumerate() {
            *slot = match self.explicit.get(n) {
                Some(r) => r.eval(t),
                None => tail,
            };
        }
    }
}

/// Full parameterisation of the queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpec", into = "ModelSpec")]
pub struct QueueModel {
    pub lambda: RateFunction,
    pub mu: RateFunction,
    /// Probability of joining once the queue holds at least `k` customers.
    pub beta: RateFunction,
    /// Repair rate.
    pub eta: RateFunction,
    pub gammas: CatastropheFamily,
    /// Balking threshold.
    pub k: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelSpec {
    k: usize,
    lambda: RateFunction,
    mu: RateFunction,
    beta: RateFunction,
    eta: RateFunction,
    gammas: CatastropheFamily,
}

impl From<QueueModel> for ModelSpec {
    fn from(m: QueueModel) -> Self {
        ModelSpec { k: m.k, lambda: m.lambda, mu: m.mu, beta: m.beta, eta: m.eta, gammas: m.gammas }
    }
}

impl TryFrom<ModelSpec> for QueueModel {
    type Error = Error;

    fn try_from(s: ModelSpec) -> Result<Self> {
        QueueModel::new(s.lambda, s.mu, s.beta, s.eta, s.gammas, s.k)
    }
}

/// Rates of a model evaluated at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatesAt {
    pub lambda: f64,
    pub mu: f64,
    pub beta: f64,
    pub eta: f64,
}

impl QueueModel {
    pub fn new(
        lambda: RateFunction,
        mu: RateFunction,
        beta: RateFunction,
        eta: RateFunction,
        gammas: CatastropheFamily,
        k: usize,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidRate("balking threshold k must be positive".into()));
        }
        if beta.coefficient_bound() > 1.0 {
            let (value, at) = grid(GRID_POINTS)
                .map(|t| (beta.eval(t), t))
                .fold((f64::NEG_INFINITY, 0.0), |b, c| if c.0 > b.0 { c } else { b });
            if value > 1.0 + 1e-12 {
                return Err(Error::BalkingOutOfRange { value, at });
            }
        }
        Ok(QueueModel { lambda, mu, beta, eta, gammas, k })
    }

    pub fn rates_at(&self, t: f64) -> RatesAt {
        RatesAt {
            lambda: self.lambda.eval(t),
            mu: self.mu.eval(t),
            beta: self.beta.eval(t),
            eta: self.eta.eval(t),
        }
    }

    /// `gamma*(t) = inf_n gamma_n(t)`.
    pub fn gamma_star(&self, t: f64) -> f64 {
        self.gammas.infimum(t)
    }

    /// Trigonometric form of `gamma*` when all catastrophe rates coincide.
    pub fn gamma_star_function(&self) -> Option<&RateFunction> {
        self.gammas.is_equal().then_some(&self.gammas.tail)
    }

    /// True when every rate is constant in time.
    pub fn is_time_homogeneous(&self) -> bool {
        [&self.lambda, &self.mu, &self.beta, &self.eta, &self.gammas.tail]
            .into_iter()
            .chain(self.gammas.explicit.iter())
            .all(RateFunction::is_constant)
    }

    /// Index past which every column of the generator has the same shape.
    pub fn tail_start(&self) -> usize {
        self.k.max(self.gammas.prefix_len()) + 1
    }

    /// Absolute diagonal entries of the generator as trigonometric
    /// polynomials, one per distinct row family.
    pub fn diagonal_families(&self) -> Vec<RateFunction> {
        let lambda_beta = self.lambda.mul(&self.beta);
        let mut out = vec![self.eta.clone(), self.lambda.add(self.gammas.rate(0))];
        for n in 1..=self.tail_start() {
            let arrival = if n < self.k { &self.lambda } else { &lambda_beta };
            let f = arrival.add(self.gammas.rate(n)).add(&self.mu);
            if !out.contains(&f) {
                out.push(f);
            }
        }
        out
    }

    /// Certified bound `L >= sup_t sup_i |a_ii(t)|` from coefficient sums.
    pub fn rate_bound_l(&self) -> f64 {
        self.diagonal_families()
            .iter()
            .map(RateFunction::coefficient_bound)
            .fold(0.0, f64::max)
    }

    /// Grid estimate of `sup |a_ii(t)|`; never exceeds [`Self::rate_bound_l`].
    pub fn rate_bound_l_grid(&self) -> f64 {
        self.diagonal_families()
            .iter()
            .map(RateFunction::grid_max)
            .fold(0.0, f64::max)
    }
}

/// Model of the first numerical example: equal catastrophe rates.
pub fn example1() -> QueueModel {
    let m = || -> Result<QueueModel> {
        QueueModel::new(
            RateFunction::first_harmonic(10.0, 10.0, 0.0)?,
            RateFunction::first_harmonic(2.0, 0.0, 1.0)?,
            RateFunction::constant(0.7)?,
            RateFunction::first_harmonic(3.0, 1.0, 0.0)?,
            CatastropheFamily::uniform(RateFunction::first_harmonic(2.0, 0.0, 0.5)?),
            100,
        )
    };
    m().expect("example 1 model is valid")
}

/// Model of the second numerical example: catastrophes only from the empty
/// queue.
pub fn example2() -> QueueModel {
    let m = || -> Result<QueueModel> {
        QueueModel::new(
            RateFunction::first_harmonic(1.0, 1.0, 0.0)?,
            RateFunction::first_harmonic(5.0, 0.0, 1.0)?,
            RateFunction::constant(0.7)?,
            RateFunction::first_harmonic(3.0, 1.0, 0.0)?,
            CatastropheFamily {
                explicit: vec![RateFunction::first_harmonic(2.0, 0.0, 0.5)?],
                tail: RateFunction::zero(),
            },
            100,
        )
    };
    m().expect("example 2 model is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn constant_model(lambda: f64, mu: f64, gamma: f64, eta: f64, beta: f64) -> QueueModel {
        QueueModel::new(
            RateFunction::constant(lambda).unwrap(),
            RateFunction::constant(mu).unwrap(),
            RateFunction::constant(beta).unwrap(),
            RateFunction::constant(eta).unwrap(),
            CatastropheFamily::uniform(RateFunction::constant(gamma).unwrap()),
            3,
        )
        .unwrap()
    }

    #[test]
    fn eval_examples() {
        assert_eq!(RateFunction::constant(0.7).unwrap().eval(13.2), 0.7);
        assert_eq!(RateFunction::first_harmonic(3.0, 1.0, 0.0).unwrap().eval(0.0), 3.0);
        let r = RateFunction::first_harmonic(2.0, 0.0, 0.5).unwrap();
        assert_abs_diff_eq!(r.eval(0.5), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn negative_rates_rejected() {
        assert!(matches!(
            RateFunction::first_harmonic(1.0, 2.0, 0.0),
            Err(Error::NegativeRate { .. })
        ));
        assert!(RateFunction::constant(-0.1).is_err());
        // touches zero: accepted by the grid check
        assert!(RateFunction::first_harmonic(1.0, 1.0, 0.0).is_ok());
    }

    #[test]
    fn beta_must_stay_in_unit_interval() {
        let r = |v| RateFunction::constant(v).unwrap();
        let err = QueueModel::new(r(1.0), r(1.0), r(1.2), r(1.0), CatastropheFamily::uniform(r(1.0)), 2);
        assert!(matches!(err, Err(Error::BalkingOutOfRange { .. })));
    }

    #[test]
    fn gamma_star_examples() {
        assert_abs_diff_eq!(example1().gamma_star(0.0), 2.5, epsilon = 1e-15);
        for t in [0.0, 0.3, 7.77] {
            assert_eq!(example2().gamma_star(t), 0.0);
        }
        let fam = CatastropheFamily {
            explicit: vec![RateFunction::constant(5.0).unwrap()],
            tail: RateFunction::constant(3.0).unwrap(),
        };
        assert_eq!(fam.infimum(1.0), 3.0);
        assert_eq!(fam.rate(0).eval(0.0), 5.0);
        assert_eq!(fam.rate(17).eval(0.0), 3.0);
    }

    #[test]
    fn rate_bound_examples() {
        let l1 = example1().rate_bound_l();
        assert_abs_diff_eq!(l1, 25.5, epsilon = 1e-12);
        assert!(example1().rate_bound_l_grid() <= l1);
        assert_abs_diff_eq!(example2().rate_bound_l(), 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(constant_model(1.0, 1.0, 1.0, 1.0, 1.0).rate_bound_l(), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn integral_matches_quadrature() {
        let r = RateFunction::new(
            2.0,
            vec![Harmonic { j: 1, sin: 0.3, cos: -0.4 }, Harmonic { j: 3, sin: 0.1, cos: 0.2 }],
        )
        .unwrap();
        let (a, b) = (0.13, 2.71);
        let n = 20_000;
        let h = (b - a) / n as f64;
        let trap: f64 = (0..n)
            .map(|i| 0.5 * h * (r.eval(a + i as f64 * h) + r.eval(a + (i + 1) as f64 * h)))
            .sum();
        assert_abs_diff_eq!(r.integral(a, b), trap, epsilon = 1e-8);
    }

    #[test]
    fn serde_rejects_negative_rate() {
        let bad: std::result::Result<RateFunction, _> = toml::from_str("a0 = 1.0\nharmonics = [{ j = 1, sin = 3.0, cos = 0.0 }]");
        assert!(bad.is_err());
    }

    fn poly() -> impl Strategy<Value = RateFunction> {
        (
            -3.0..3.0f64,
            proptest::collection::vec((1u32..4, -1.0..1.0f64, -1.0..1.0f64), 0..3),
        )
            .prop_map(|(a0, hs)| {
                RateFunction::polynomial(
                    a0,
                    hs.into_iter().map(|(j, sin, cos)| Harmonic { j, sin, cos }).collect(),
                )
            })
    }

    proptest! {
        #[test]
        fn product_is_pointwise(p in poly(), q in poly(), t in 0.0..3.0f64) {
            let prod = p.mul(&q);
            prop_assert!((prod.eval(t) - p.eval(t) * q.eval(t)).abs() < 1e-12);
        }

        #[test]
        fn coefficient_bounds_enclose_values(p in poly(), t in 0.0..1.0f64) {
            let v = p.eval(t);
            prop_assert!(v <= p.coefficient_bound() + 1e-12);
            prop_assert!(v >= p.coefficient_floor() - 1e-12);
        }

        #[test]
        fn accepted_rates_are_nonnegative_on_grid(p in poly()) {
            if let Ok(r) = RateFunction::new(p.a0(), p.harmonics().to_vec()) {
                prop_assert!(r.grid_min().0 >= NONNEG_TOL);
            }
        }
    }
}
