//! Noise matrices over a finite alphabet.
//!
//! A [`NoiseMatrix`] is a validated row-stochastic matrix: entry `(σ, σ′)` is
//! the probability that a displayed `σ` is observed as `σ′`. Besides sampling
//! observations, this module classifies matrices against a noise level `δ`,
//! inverts δ-upper-bounded matrices and builds the artificial-noise matrix `P`
//! for which `N · P` is exactly uniform.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for stochasticity, classification and composition checks.
pub const STOCH_TOL: f64 = 1e-9;
/// Tolerance for the inversion residual and the inverse-norm bound.
pub const INVERSION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseError {
    #[error("alphabet size must be at least 2, got {0}")]
    AlphabetTooSmall(usize),
    #[error("expected {expected} rows, got {got}")]
    RowCount { expected: usize, got: usize },
    #[error("row {row} has {len} entries, expected {expected}")]
    RaggedRow { row: usize, len: usize, expected: usize },
    #[error("entry ({row}, {col}) = {value} is not a probability")]
    BadEntry { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum}, expected 1")]
    RowSum { row: usize, sum: f64 },
    #[error("noise level {delta} outside the admissible range for alphabet size {d}")]
    DeltaOutOfRange { delta: f64, d: usize },
    #[error("matrix is not {delta}-upper bounded")]
    NotUpperBounded { delta: f64 },
    #[error("matrix is numerically singular")]
    Singular,
    #[error("ill-conditioned inversion: residual {residual:e} exceeds tolerance")]
    IllConditioned { residual: f64 },
    #[error("artificial noise entry ({row}, {col}) = {value:e} is negative")]
    NegativeArtificialNoise { row: usize, col: usize, value: f64 },
}

/// Dense real square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NoiseError> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(NoiseError::RaggedRow { row, len: r.len(), expected: dim });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.dim + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn mul(&self, other: &SquareMatrix) -> SquareMatrix {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        let d = self.dim;
        let mut out = SquareMatrix::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..d {
                    out.data[i * d + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    /// Largest entrywise absolute difference.
    pub fn max_abs_diff(&self, other: &SquareMatrix) -> f64 {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn infinity_norm(&self) -> f64 {
        infinity_norm(self)
    }
}

/// Operator ∞-norm: maximum absolute row sum.
pub fn infinity_norm(a: &SquareMatrix) -> f64 {
    (0..a.dim()).map(|i| a.row(i).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Classification of a noise matrix against a level `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseClass {
    pub lower_bounded: bool,
    pub upper_bounded: bool,
    pub uniform: bool,
}

/// A validated row-stochastic noise matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NoiseMatrixRepr", into = "NoiseMatrixRepr")]
pub struct NoiseMatrix {
    matrix: SquareMatrix,
    // Per-row running sums used for inverse-CDF sampling.
    cumulative: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseMatrixRepr {
    d: usize,
    entries: Vec<Vec<f64>>,
}

impl TryFrom<NoiseMatrixRepr> for NoiseMatrix {
    type Error = NoiseError;

    fn try_from(repr: NoiseMatrixRepr) -> Result<Self, Self::Error> {
        if repr.entries.len() != repr.d {
            return Err(NoiseError::RowCount { expected: repr.d, got: repr.entries.len() });
        }
        NoiseMatrix::from_rows(&repr.entries)
    }
}

impl From<NoiseMatrix> for NoiseMatrixRepr {
    fn from(m: NoiseMatrix) -> Self {
        NoiseMatrixRepr { d: m.d(), entries: m.matrix.to_rows() }
    }
}

impl NoiseMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NoiseError> {
        Self::new(SquareMatrix::from_rows(rows)?)
    }

    pub fn new(matrix: SquareMatrix) -> Result<Self, NoiseError> {
        let d = matrix.dim();
        if d < 2 {
            return Err(NoiseError::AlphabetTooSmall(d));
        }
        for row in 0..d {
            let mut sum = 0.0;
            for col in 0..d {
                let value = matrix.get(row, col);
                if !(-STOCH_TOL..=1.0 + STOCH_TOL).contains(&value) {
                    return Err(NoiseError::BadEntry { row, col, value });
                }
                sum += value;
            }
            if (sum - 1.0).abs() > STOCH_TOL {
                return Err(NoiseError::RowSum { row, sum });
            }
        }
        let mut cumulative = Vec::with_capacity(d * d);
        for row in 0..d {
            let mut acc = 0.0;
            for col in 0..d {
                acc += matrix.get(row, col).max(0.0);
                cumulative.push(acc);
            }
        }
        Ok(Self { matrix, cumulative })
    }

    pub fn identity(d: usize) -> Result<Self, NoiseError> {
        Self::new(SquareMatrix::identity(d))
    }

    /// The δ-uniform matrix: `1 − (d−1)δ` on the diagonal, `δ` elsewhere.
    pub fn uniform(d: usize, delta: f64) -> Result<Self, NoiseError> {
        if d < 2 {
            return Err(NoiseError::AlphabetTooSmall(d));
        }
        check_delta_closed(delta, d)?;
        let mut m = SquareMatrix::zeros(d);
        for i in 0..d {
            for j in 0..d {
                let v = if i == j { 1.0 - (d as f64 - 1.0) * delta } else { delta };
                m.set(i, j, v);
            }
        }
        Self::new(m)
    }

    /// Random δ-upper-bounded matrix: off-diagonal entries uniform in
    /// `[0, δ]`, diagonal set to the row remainder.
    pub fn random_upper_bounded<R: Rng + ?Sized>(d: usize, delta: f64, rng: &mut R) -> Result<Self, NoiseError> {
        if d < 2 {
            return Err(NoiseError::AlphabetTooSmall(d));
        }
        check_delta_closed(delta, d)?;
        let mut m = SquareMatrix::zeros(d);
        for i in 0..d {
            let mut off = 0.0;
            for j in 0..d {
                if i != j {
                    let v = rng.random::<f64>() * delta;
                    m.set(i, j, v);
                    off += v;
                }
            }
            m.set(i, i, 1.0 - off);
        }
        Self::new(m)
    }

    pub fn d(&self) -> usize {
        self.matrix.dim()
    }

    #[inline]
    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.matrix.get(from, to)
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.matrix
    }

    pub fn is_identity(&self) -> bool {
        self.matrix == SquareMatrix::identity(self.d())
    }

    /// Smallest `δ` for which the matrix is δ-upper bounded on its
    /// off-diagonal entries (the largest off-diagonal entry).
    pub fn max_off_diagonal(&self) -> f64 {
        let d = self.d();
        let mut best: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    best = best.max(self.get(i, j));
                }
            }
        }
        best
    }

    pub fn classify(&self, delta: f64) -> Result<NoiseClass, NoiseError> {
        let d = self.d();
        check_delta_closed(delta, d)?;
        let diag_floor = 1.0 - (d as f64 - 1.0) * delta;
        let mut class = NoiseClass { lower_bounded: true, upper_bounded: true, uniform: true };
        for i in 0..d {
            for j in 0..d {
                let v = self.get(i, j);
                if v < delta - STOCH_TOL {
                    class.lower_bounded = false;
                }
                if i == j {
                    if v < diag_floor - STOCH_TOL {
                        class.upper_bounded = false;
                    }
                    if (v - diag_floor).abs() > STOCH_TOL {
                        class.uniform = false;
                    }
                } else {
                    if v > delta + STOCH_TOL {
                        class.upper_bounded = false;
                    }
                    if (v - delta).abs() > STOCH_TOL {
                        class.uniform = false;
                    }
                }
            }
        }
        Ok(class)
    }

    /// Maps a displayed symbol and a uniform draw `u ∈ [0, 1)` to the
    /// observed symbol by inverse-CDF lookup on the symbol's row.
    #[inline]
    pub fn transition(&self, symbol: usize, u: f64) -> usize {
        let d = self.d();
        let row = &self.cumulative[symbol * d..(symbol + 1) * d];
        for (j, &c) in row.iter().enumerate() {
            if u < c {
                return j;
            }
        }
        // Row mass fell short of 1 by rounding: last symbol with positive mass.
        (0..d).rev().find(|&j| self.get(symbol, j) > 0.0).unwrap_or(symbol)
    }

    /// Samples the observation of `symbol`. Draws exactly one value from `rng`.
    #[inline]
    pub fn apply_noise<R: Rng + ?Sized>(&self, symbol: usize, rng: &mut R) -> usize {
        debug_assert!(symbol < self.d(), "symbol {symbol} outside alphabet");
        let u: f64 = rng.random();
        self.transition(symbol, u)
    }
}

fn check_delta_closed(delta: f64, d: usize) -> Result<(), NoiseError> {
    if !(delta >= 0.0 && delta <= 1.0 / d as f64 + f64::EPSILON) {
        return Err(NoiseError::DeltaOutOfRange { delta, d });
    }
    Ok(())
}

fn check_delta_open(delta: f64, d: usize) -> Result<(), NoiseError> {
    if d < 2 {
        return Err(NoiseError::AlphabetTooSmall(d));
    }
    if !(delta >= 0.0 && delta < 1.0 / d as f64) {
        return Err(NoiseError::DeltaOutOfRange { delta, d });
    }
    Ok(())
}

/// Effective uniform noise level reachable from a δ-upper-bounded matrix:
/// `f(0) = 0`, otherwise `(d + (1−dδ) / (2(d−1)²δ))⁻¹`.
pub fn f_delta(delta: f64, d: usize) -> Result<f64, NoiseError> {
    check_delta_open(delta, d)?;
    if delta == 0.0 {
        return Ok(0.0);
    }
    let d = d as f64;
    let dm1 = d - 1.0;
    Ok(1.0 / (d + 0.5 / (dm1 * dm1) * (1.0 - d * delta) / delta))
}

/// Upper bound on `‖N⁻¹‖∞` for a δ-upper-bounded `N`.
pub fn inverse_norm_bound(delta: f64, d: usize) -> f64 {
    (d as f64 - 1.0) / (1.0 - d as f64 * delta)
}

fn gauss_jordan_inverse(a: &SquareMatrix) -> Result<SquareMatrix, NoiseError> {
    let d = a.dim();
    let mut work = a.clone();
    let mut inv = SquareMatrix::identity(d);
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&x, &y| work.get(x, col).abs().total_cmp(&work.get(y, col).abs()))
            .expect("non-empty pivot range");
        let p = work.get(pivot, col);
        if p.abs() < f64::MIN_POSITIVE {
            return Err(NoiseError::Singular);
        }
        if pivot != col {
            for j in 0..d {
                let (x, y) = (work.get(col, j), work.get(pivot, j));
                work.set(col, j, y);
                work.set(pivot, j, x);
                let (x, y) = (inv.get(col, j), inv.get(pivot, j));
                inv.set(col, j, y);
                inv.set(pivot, j, x);
            }
        }
        for j in 0..d {
            work.set(col, j, work.get(col, j) / p);
            inv.set(col, j, inv.get(col, j) / p);
        }
        for r in 0..d {
            if r == col {
                continue;
            }
            let factor = work.get(r, col);
            if factor == 0.0 {
                continue;
            }
            for j in 0..d {
                work.set(r, j, work.get(r, j) - factor * work.get(col, j));
                inv.set(r, j, inv.get(r, j) - factor * inv.get(col, j));
            }
        }
    }
    Ok(inv)
}

/// Inverse together with its residual `‖N·N⁻¹ − I‖∞`.
fn invert_checked(n: &NoiseMatrix, delta: f64) -> Result<(SquareMatrix, f64), NoiseError> {
    let d = n.d();
    check_delta_open(delta, d)?;
    if !n.classify(delta)?.upper_bounded {
        return Err(NoiseError::NotUpperBounded { delta });
    }
    let inv = gauss_jordan_inverse(n.matrix())?;
    let mut r = n.matrix().mul(&inv);
    for i in 0..d {
        r.set(i, i, r.get(i, i) - 1.0);
    }
    let residual = infinity_norm(&r);
    if residual.is_nan() || residual > INVERSION_TOL {
        return Err(NoiseError::IllConditioned { residual });
    }
    Ok((inv, residual))
}

/// Inverts a δ-upper-bounded noise matrix (`δ < 1/d`), by Gauss-Jordan
/// elimination with partial pivoting. The residual is checked against
/// [`INVERSION_TOL`].
pub fn invert(n: &NoiseMatrix, delta: f64) -> Result<SquareMatrix, NoiseError> {
    invert_checked(n, delta).map(|(inv, _)| inv)
}

/// Artificial noise `P` and the uniform target `T = N · P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Uniformization {
    pub delta_prime: f64,
    pub artificial_noise: NoiseMatrix,
    pub target_uniform: NoiseMatrix,
    /// `‖N⁻¹‖∞`; 1 on the `δ = 0` shortcut.
    pub inverse_norm: f64,
    /// `‖N·N⁻¹ − I‖∞`.
    pub inversion_residual: f64,
    /// `‖N‖∞ · ‖N⁻¹‖∞`.
    pub condition: f64,
    /// Largest entrywise deviation of `N · P` from `T`.
    pub composition_error: f64,
}

pub fn uniformize(n: &NoiseMatrix, delta: f64) -> Result<Uniformization, NoiseError> {
    let d = n.d();
    check_delta_open(delta, d)?;
    if delta == 0.0 {
        if !n.classify(0.0)?.upper_bounded {
            return Err(NoiseError::NotUpperBounded { delta });
        }
        let id = NoiseMatrix::identity(d)?;
        let composition_error = n.matrix().max_abs_diff(id.matrix());
        return Ok(Uniformization {
            delta_prime: 0.0,
            artificial_noise: id.clone(),
            target_uniform: id,
            inverse_norm: 1.0,
            inversion_residual: 0.0,
            condition: 1.0,
            composition_error,
        });
    }

    let delta_prime = f_delta(delta, d)?;
    let target = NoiseMatrix::uniform(d, delta_prime)?;
    let (inv, inversion_residual) = invert_checked(n, delta)?;
    let mut p = inv.mul(target.matrix());
    for i in 0..d {
        let mut clamped = false;
        for j in 0..d {
            let v = p.get(i, j);
            if v <= -STOCH_TOL {
                return Err(NoiseError::NegativeArtificialNoise { row: i, col: j, value: v });
            }
            if v < 0.0 {
                p.set(i, j, 0.0);
                clamped = true;
            }
        }
        if clamped {
            let sum: f64 = p.row(i).iter().sum();
            for j in 0..d {
                p.set(i, j, p.get(i, j) / sum);
            }
        }
    }
    let artificial_noise = NoiseMatrix::new(p)?;
    let composition_error = n.matrix().mul(artificial_noise.matrix()).max_abs_diff(target.matrix());
    if composition_error.is_nan() || composition_error > STOCH_TOL {
        return Err(NoiseError::IllConditioned { residual: composition_error });
    }
    let inverse_norm = infinity_norm(&inv);
    Ok(Uniformization {
        delta_prime,
        artificial_noise,
        target_uniform: target,
        inverse_norm,
        inversion_residual,
        condition: infinity_norm(n.matrix()) * inverse_norm,
        composition_error,
    })
}
