//! Truncated generators of the forward Kolmogorov system.
//!
//! Coordinates of the full system are `(r, p_0, p_1, ...)`; the reduced
//! second-approach systems drop `r` and work on `(p_0, p_1, ...)`. All
//! builders return the leading `n x n` section at a fixed time.

mod weights;

pub use weights::WeightSequence;

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::csvfmt;
use crate::error::{Error, Result};
use crate::rates::QueueModel;

/// Smallest accepted dimension for the full and first-approach matrices.
pub const MIN_FULL_DIM: usize = 3;
/// Smallest accepted dimension for the second-approach matrices.
pub const MIN_REDUCED_DIM: usize = 2;

/// Tridiagonal matrix plus a dense first row.
///
/// `upper[i]` is entry `(i, i+1)` and `lower[i]` is entry `(i+1, i)`.
/// `row0[j]` holds entry `(0, j)` for `j >= 2`; entries `(0,0)` and `(0,1)`
/// live in `diag` and `upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    pub row0: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize) -> Self {
        BandedMatrix {
            diag: vec![0.0; n],
            upper: vec![0.0; n.saturating_sub(1)],
            lower: vec![0.0; n.saturating_sub(1)],
            row0: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else if j == i + 1 {
            self.upper[i]
        } else if i == j + 1 {
            self.lower[j]
        } else if i == 0 {
            self.row0[j]
        } else {
            0.0
        }
    }

    /// `y = M x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        let n = self.dim();
        debug_assert!(x.len() == n && y.len() == n);
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i + 1 < n {
                acc += self.upper[i] * x[i + 1];
            }
            if i > 0 {
                acc += self.lower[i - 1] * x[i - 1];
            }
            y[i] = acc;
        }
        y[0] += self.row0[2..].iter().zip(&x[2..]).map(|(a, b)| a * b).sum::<f64>();
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.get(i, j))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    FullA,
    ReducedAStar,
    BEqual,
    BGeneral,
    BWeighted,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::FullA => "FULL_A",
            Variant::ReducedAStar => "REDUCED_A_STAR",
            Variant::BEqual => "B_EQUAL",
            Variant::BGeneral => "B_GENERAL",
            Variant::BWeighted => "B_WEIGHTED",
        }
    }

    /// Whether coordinate 0 is the repair state `r`.
    pub fn has_repair_coordinate(self) -> bool {
        matches!(self, Variant::FullA | Variant::ReducedAStar)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SystemMatrix {
    Banded(BandedMatrix),
    Dense(DMatrix<f64>),
}

impl SystemMatrix {
    pub fn dim(&self) -> usize {
        match self {
            SystemMatrix::Banded(b) => b.dim(),
            SystemMatrix::Dense(d) => d.nrows(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            SystemMatrix::Banded(b) => b.get(i, j),
            SystemMatrix::Dense(d) => d[(i, j)],
        }
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        match self {
            SystemMatrix::Banded(b) => b.mul_vec(x, y),
            SystemMatrix::Dense(d) => {
                let out = d * DVector::from_column_slice(x);
                y.copy_from_slice(out.as_slice());
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            SystemMatrix::Banded(b) => b.to_dense(),
            SystemMatrix::Dense(d) => d.clone(),
        }
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let d = self.to_dense();
        d.column_iter().map(|c| c.sum()).collect()
    }
}

/// Inhomogeneous term of a reduced system.
#[derive(Debug, Clone, PartialEq)]
pub enum Forcing {
    None,
    Fixed(Vec<f64>),
    /// Multiplied by the repair probability `r(t)` at integration time.
    RepairScaled(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSystem {
    pub variant: Variant,
    pub t: f64,
    pub matrix: SystemMatrix,
    pub forcing: Forcing,
}

impl TruncatedSystem {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// Dense CSV dump, row-major, preceded by a `# variant,t,n` comment line.
    pub fn to_csv(&self) -> String {
        let n = self.dim();
        let mut out = format!("# {},{},{}\n", self.variant, csvfmt::num(self.t), n);
        let d = self.matrix.to_dense();
        for i in 0..n {
            out.push_str(&csvfmt::record((0..n).map(|j| d[(i, j)])));
        }
        out
    }
}

fn check_dim(n: usize, min: usize) -> Result<()> {
    if n < min {
        return Err(Error::DimensionTooSmall { n, min });
    }
    Ok(())
}

/// Writes the conservatively closed full generator at `t` into `m`.
///
/// The arrival flux out of the last retained queue state is dropped from
/// its diagonal, so every column sums to zero.
pub fn assemble_full(model: &QueueModel, t: f64, m: &mut BandedMatrix) {
    let n = m.dim();
    let rates = model.rates_at(t);
    let lambda_beta = rates.lambda * rates.beta;
    let mut gammas = vec![0.0; n - 1];
    model.gammas.eval_into(t, &mut gammas);

    m.row0.iter_mut().for_each(|x| *x = 0.0);
    m.diag[0] = -rates.eta;
    m.lower[0] = rates.eta;
    for j in 1..n {
        let i = j - 1;
        let gamma = gammas[i];
        if j == 1 {
            m.upper[0] = gamma;
        } else {
            m.row0[j] = gamma;
            m.upper[j - 1] = rates.mu;
        }
        let mut out = gamma;
        if i >= 1 {
            out += rates.mu;
        }
        if j + 1 < n {
            let arrival = if i < model.k { rates.lambda } else { lambda_beta };
            m.lower[j] = arrival;
            out += arrival;
        }
        m.diag[j] = -out;
    }
}

/// Full transposed intensity matrix `A(t)` on `(r, p_0, ..., p_{n-2})`.
pub fn build_a(model: &QueueModel, t: f64, n: usize) -> Result<TruncatedSystem> {
    check_dim(n, MIN_FULL_DIM)?;
    let mut m = BandedMatrix::zeros(n);
    assemble_full(model, t, &mut m);
    Ok(TruncatedSystem {
        variant: Variant::FullA,
        t,
        matrix: SystemMatrix::Banded(m),
        forcing: Forcing::None,
    })
}

/// Subtracts `gamma*` from the whole first row of an assembled full matrix.
pub fn shift_to_reduced(m: &mut BandedMatrix, gamma_star: f64) {
    m.diag[0] -= gamma_star;
    m.upper[0] -= gamma_star;
    m.row0.iter_mut().skip(2).for_each(|x| *x -= gamma_star);
}

/// `A*(t)` with forcing `g(t) = (gamma*(t), 0, ...)`.
pub fn build_a_star(model: &QueueModel, t: f64, n: usize) -> Result<TruncatedSystem> {
    check_dim(n, MIN_FULL_DIM)?;
    let mut m = BandedMatrix::zeros(n);
    assemble_full(model, t, &mut m);
    let gs = model.gamma_star(t);
    shift_to_reduced(&mut m, gs);
    let mut g = vec![0.0; n];
    g[0] = gs;
    Ok(TruncatedSystem {
        variant: Variant::ReducedAStar,
        t,
        matrix: SystemMatrix::Banded(m),
        forcing: Forcing::Fixed(g),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BMode {
    /// All catastrophe rates equal; the repair state is eliminated through
    /// its closed form and enters as `eta(t) r(t)` forcing.
    Equal,
    /// General rates; `r = 1 - sum p_i` is substituted into the first row.
    General,
}

/// Writes the second-approach matrix `B(t)` on `(p_0, ..., p_{n-1})`.
///
/// This is the plain leading section of the infinite matrix: the last
/// column keeps its full outflow.
pub fn assemble_b(model: &QueueModel, t: f64, mode: BMode, m: &mut BandedMatrix) {
    let n = m.dim();
    let rates = model.rates_at(t);
    let lambda_beta = rates.lambda * rates.beta;
    let mut gammas = vec![0.0; n];
    match mode {
        BMode::General => model.gammas.eval_into(t, &mut gammas),
        BMode::Equal => gammas.fill(model.gamma_star(t)),
    }
    let eta_row = match mode {
        BMode::General => rates.eta,
        BMode::Equal => 0.0,
    };

    m.row0.iter_mut().for_each(|x| *x = 0.0);
    for i in 0..n {
        let arrival = if i < model.k { rates.lambda } else { lambda_beta };
        let mut out = arrival + gammas[i];
        if i >= 1 {
            out += rates.mu;
            if i == 1 {
                m.upper[0] = rates.mu - eta_row;
            } else {
                m.upper[i - 1] = rates.mu;
                m.row0[i] = -eta_row;
            }
        }
        if i + 1 < n {
            m.lower[i] = arrival;
        }
        m.diag[i] = -out;
    }
    m.diag[0] -= eta_row;
}

/// Second-approach matrix `B(t)` and its forcing term.
pub fn build_b(model: &QueueModel, t: f64, n: usize, mode: BMode) -> Result<TruncatedSystem> {
    check_dim(n, MIN_REDUCED_DIM)?;
    if mode == BMode::Equal && !model.gammas.is_equal() {
        return Err(Error::UnequalCatastrophes);
    }
    let mut m = BandedMatrix::zeros(n);
    assemble_b(model, t, mode, &mut m);
    let mut f = vec![0.0; n];
    f[0] = model.eta.eval(t);
    let (variant, forcing) = match mode {
        BMode::Equal => (Variant::BEqual, Forcing::RepairScaled(f)),
        BMode::General => (Variant::BGeneral, Forcing::Fixed(f)),
    };
    Ok(TruncatedSystem {
        variant,
        t,
        matrix: SystemMatrix::Banded(m),
        forcing,
    })
}

/// Upper-triangular cumulative weight matrix: row `i` equals `d_i` from
/// column `i` rightward.
pub fn cumulative_weight_matrix(w: &WeightSequence, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if j >= i { w.d(i) } else { 0.0 })
}

/// Closed-form inverse of [`cumulative_weight_matrix`]: bidiagonal with
/// `1/d_i` on the diagonal and `-1/d_{i+1}` just above it.
pub fn cumulative_weight_inverse(w: &WeightSequence, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0 / w.d(i)
        } else if j == i + 1 {
            -1.0 / w.d(j)
        } else {
            0.0
        }
    })
}

/// Similarity transform with the cumulative weight matrix.
///
/// Entry `(i, j)` of the result is
/// `(d_i / d_j) * sum_{k >= i} (b_{kj} - b_{k,j-1})`, evaluated from column
/// suffix sums in `O(n^2)`.
pub fn weight_transform(sys: &TruncatedSystem, w: &WeightSequence) -> Result<TruncatedSystem> {
    if sys.variant != Variant::BGeneral {
        return Err(Error::VariantMismatch {
            expected: Variant::BGeneral.name(),
            actual: sys.variant.name(),
        });
    }
    let b = sys.matrix.to_dense();
    let n = b.nrows();
    let d = w.take(n);
    // suffix[i] for the current and previous column
    let mut prev = vec![0.0; n + 1];
    let mut cur = vec![0.0; n + 1];
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        cur[n] = 0.0;
        for i in (0..n).rev() {
            cur[i] = cur[i + 1] + b[(i, j)];
        }
        for i in 0..n {
            let diff = if j == 0 { cur[i] } else { cur[i] - prev[i] };
            out[(i, j)] = d[i] / d[j] * diff;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(TruncatedSystem {
        variant: Variant::BWeighted,
        t: sys.t,
        matrix: SystemMatrix::Dense(out),
        forcing: sys.forcing.clone(),
    })
}

/// Column-sum operator norm `sup_j sum_i |m_ij|`.
pub fn norm_l1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
