//! Small dense matrix services for the certification pipeline: chain/output
//! matrices, companion characteristic polynomials, Routh stability test,
//! pole placement, Lyapunov solves and symmetric eigenvalues.
//!
//! Everything here targets matrices of single-digit to low-double-digit
//! dimension, so the solvers favour verifiability over asymptotics: the
//! Lyapunov equation is solved by vectorizing the `n(n+1)/2` symmetric
//! unknowns into one dense linear system with partially pivoted Gaussian
//! elimination, and eigenvalues come from cyclic Jacobi sweeps.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum LinalgError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: max |a_ij - a_ji| = {defect:e}")]
    NotSymmetric { defect: f64 },
    #[error("linear system is singular (pivot {pivot:e} at column {col})")]
    Singular { col: usize, pivot: f64 },
    #[error("Lyapunov solution is not positive definite (lambda_min = {lambda_min:e})")]
    NotPositiveDefinite { lambda_min: f64 },
    #[error("Jacobi iteration did not reach the target off-diagonal norm ({off:e})")]
    JacobiStalled { off: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> DenseMatrix {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> DenseMatrix {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        DenseMatrix {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|i| self.data[i * self.cols..(i + 1) * self.cols].to_vec())
            .collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| {
                (0..self.cols)
                    .map(|j| self.get(i, j) * v[j])
                    .sum()
            })
            .collect()
    }

    pub fn add(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a + b)
            .collect();
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a - b)
            .collect();
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&self, factor: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * factor).collect(),
        }
    }

    /// Largest absolute entry.
    pub fn max_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Largest absolute symmetry defect `|a_ij - a_ji|`.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// The two orientations of the Lyapunov identity. `AsWritten` solves
/// `A^T P + P A = -I`; `Transposed` solves `A P + P A^T = -I`. Both produce
/// the same spectrum for the companion structures used here, but different
/// matrices; `Transposed` reproduces third-party solver output that reports
/// the controllability-style orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LyapunovConvention {
    AsWritten,
    Transposed,
}

/// Symmetric positive definite solution of the chosen Lyapunov equation.
#[derive(Debug, Clone)]
pub struct LyapunovSolution {
    pub p: DenseMatrix,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub convention: LyapunovConvention,
    /// Max-norm residual of the chosen equation, `|| lhs + I ||_max`.
    pub residual: f64,
}

/// Shift matrix `A` (ones on the superdiagonal) and output row `C = [1 0 .. 0]`.
pub fn chain_matrices(n: usize) -> (DenseMatrix, DenseMatrix) {
    assert!(n >= 1, "dimension must be at least 1");
    let mut a = DenseMatrix::zeros(n, n);
    for i in 0..n - 1 {
        a.set(i, i + 1, 1.0);
    }
    let mut c = DenseMatrix::zeros(1, n);
    c.set(0, 0, 1.0);
    (a, c)
}

/// Monic characteristic polynomial of `A + L C` for the chain structure:
/// `det(sI - A - LC) = s^n - l_1 s^{n-1} - ... - l_n`, returned as
/// `[1, -l_1, ..., -l_n]`.
pub fn companion_char_poly(gain: &[f64]) -> Vec<f64> {
    let mut coeffs = Vec::with_capacity(gain.len() + 1);
    coeffs.push(1.0);
    coeffs.extend(gain.iter().map(|l| -l));
    coeffs
}

/// Gain whose companion characteristic polynomial equals `desired`
/// (`l_i = -c_i`); inverse of [`companion_char_poly`].
pub fn place_poles(desired: &[f64]) -> Vec<f64> {
    assert!(
        !desired.is_empty() && desired[0] == 1.0,
        "polynomial must be monic"
    );
    desired[1..].iter().map(|c| -c).collect()
}

/// `A + L C` assembled explicitly: `L` in the first column plus the shift.
pub fn companion_from_gain(gain: &[f64]) -> DenseMatrix {
    let n = gain.len();
    let (mut a, _) = chain_matrices(n);
    for (i, l) in gain.iter().enumerate() {
        a.set(i, 0, a.get(i, 0) + l);
    }
    a
}

/// Routh test on a monic polynomial: true iff every root has strictly
/// negative real part. A zero or sign-flipped pivot is classified unstable;
/// boundary cases never certify.
pub fn is_hurwitz(poly: &[f64]) -> bool {
    assert!(
        !poly.is_empty() && poly[0] == 1.0,
        "polynomial must be monic"
    );
    if poly.iter().any(|c| !c.is_finite()) {
        return false;
    }
    let degree = poly.len() - 1;
    if degree == 0 {
        return true;
    }
    // First two rows interleave the coefficients.
    let width = degree / 2 + 1;
    let mut row0: Vec<f64> = (0..width)
        .map(|j| poly.get(2 * j).copied().unwrap_or(0.0))
        .collect();
    let mut row1: Vec<f64> = (0..width)
        .map(|j| poly.get(2 * j + 1).copied().unwrap_or(0.0))
        .collect();
    if row1[0] <= 0.0 {
        return false;
    }
    for _ in 2..=degree {
        let pivot = row1[0];
        if pivot <= 0.0 || !pivot.is_finite() {
            return false;
        }
        let mut next = vec![0.0; width];
        for j in 0..width - 1 {
            next[j] = (pivot * row0[j + 1] - row0[0] * row1[j + 1]) / pivot;
        }
        row0 = std::mem::take(&mut row1);
        row1 = next;
        if row1[0] <= 0.0 || !row1[0].is_finite() {
            return false;
        }
    }
    true
}

/// Solves the chosen Lyapunov equation for `A_L` (assumed Hurwitz) by stacking
/// the symmetric unknowns into one dense system. Fails if the stacked system
/// is singular or the recovered matrix is not positive definite.
pub fn solve_lyapunov(
    a_l: &DenseMatrix,
    convention: LyapunovConvention,
) -> Result<LyapunovSolution, LinalgError> {
    if !a_l.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a_l.rows(),
            cols: a_l.cols(),
        });
    }
    let n = a_l.rows();
    let unknowns = n * (n + 1) / 2;
    // Packed index of the symmetric pair (i, j), i <= j.
    let idx = |i: usize, j: usize| -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * n - (i * i - i) / 2 + (j - i)
    };

    let mut system = DenseMatrix::zeros(unknowns, unknowns);
    let mut rhs = vec![0.0; unknowns];
    for i in 0..n {
        for j in i..n {
            let row = idx(i, j);
            rhs[row] = if i == j { -1.0 } else { 0.0 };
            for k in 0..n {
                match convention {
                    LyapunovConvention::AsWritten => {
                        // (A^T P)_ij = sum_k a_ki p_kj ; (P A)_ij = sum_k p_ik a_kj
                        let col1 = idx(k, j);
                        system.set(row, col1, system.get(row, col1) + a_l.get(k, i));
                        let col2 = idx(i, k);
                        system.set(row, col2, system.get(row, col2) + a_l.get(k, j));
                    }
                    LyapunovConvention::Transposed => {
                        // (A P)_ij = sum_k a_ik p_kj ; (P A^T)_ij = sum_k p_ik a_jk
                        let col1 = idx(k, j);
                        system.set(row, col1, system.get(row, col1) + a_l.get(i, k));
                        let col2 = idx(i, k);
                        system.set(row, col2, system.get(row, col2) + a_l.get(j, k));
                    }
                }
            }
        }
    }

    gaussian_solve(&mut system, &mut rhs)?;

    let mut p = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rhs[idx(i, j)];
            p.set(i, j, v);
            p.set(j, i, v);
        }
    }

    let residual = {
        let lhs = match convention {
            LyapunovConvention::AsWritten => a_l.transpose().matmul(&p).add(&p.matmul(a_l)),
            LyapunovConvention::Transposed => {
                a_l.matmul(&p).add(&p.matmul(&a_l.transpose()))
            }
        };
        lhs.add(&DenseMatrix::identity(n)).max_norm()
    };

    let eigs = symmetric_eigenvalues(&p)?;
    let lambda_min = eigs[0];
    let lambda_max = eigs[n - 1];
    if lambda_min <= 0.0 {
        return Err(LinalgError::NotPositiveDefinite { lambda_min });
    }

    Ok(LyapunovSolution {
        p,
        lambda_min,
        lambda_max,
        convention,
        residual,
    })
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
/// The input must be symmetric to within `1e-10`; sweeps stop once the
/// off-diagonal Frobenius norm falls below `1e-13` (relative floor for large
/// norms), capped at 100 sweeps.
pub fn symmetric_eigenvalues(m: &DenseMatrix) -> Result<Vec<f64>, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let defect = m.symmetry_defect();
    if defect > 1e-10 {
        return Err(LinalgError::NotSymmetric { defect });
    }
    let n = m.rows();
    if n == 1 {
        return Ok(vec![m.get(0, 0)]);
    }

    let mut a = m.clone();
    // symmetrize exactly so rotations preserve symmetry bit-for-bit
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a.get(i, j) + a.get(j, i));
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }

    let fro: f64 = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| a.get(i, j) * a.get(i, j))
        .sum::<f64>()
        .sqrt();
    let target = 1e-13_f64.max(1e-15 * fro);

    let off = |a: &DenseMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a.get(i, j) * a.get(i, j);
                }
            }
        }
        s.sqrt()
    };

    let mut final_off = off(&a);
    for _sweep in 0..100 {
        if final_off <= target {
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // apply the rotation on rows/columns p and q
                a.set(p, p, app - t * apq);
                a.set(q, q, aqq + t * apq);
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for i in 0..n {
                    if i == p || i == q {
                        continue;
                    }
                    let aip = a.get(i, p);
                    let aiq = a.get(i, q);
                    let new_p = c * aip - s * aiq;
                    let new_q = s * aip + c * aiq;
                    a.set(i, p, new_p);
                    a.set(p, i, new_p);
                    a.set(i, q, new_q);
                    a.set(q, i, new_q);
                }
            }
        }
        final_off = off(&a);
    }
    if final_off > target.max(1e-11 * fro.max(1.0)) {
        return Err(LinalgError::JacobiStalled { off: final_off });
    }

    let mut eigs: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(eigs)
}

/// High-gain scaling matrix `diag(1, eps, ..., eps^{n-1})`.
pub fn scaling_matrix(n: usize, eps: f64) -> DenseMatrix {
    assert!(eps > 0.0, "eps must be positive");
    let mut d = DenseMatrix::zeros(n, n);
    for i in 0..n {
        d.set(i, i, eps.powi(i as i32));
    }
    d
}

/// Gaussian elimination with partial pivoting; `b` is overwritten with the
/// solution.
fn gaussian_solve(a: &mut DenseMatrix, b: &mut [f64]) -> Result<(), LinalgError> {
    let n = a.rows();
    assert!(a.is_square() && b.len() == n);
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = a.get(col, col).abs();
        for r in (col + 1)..n {
            let v = a.get(r, col).abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = r;
            }
        }
        if pivot_val < 1e-300 {
            return Err(LinalgError::Singular {
                col,
                pivot: pivot_val,
            });
        }
        if pivot_row != col {
            for j in 0..n {
                let tmp = a.get(col, j);
                a.set(col, j, a.get(pivot_row, j));
                a.set(pivot_row, j, tmp);
            }
            b.swap(col, pivot_row);
        }
        let pivot = a.get(col, col);
        for r in (col + 1)..n {
            let factor = a.get(r, col) / pivot;
            if factor == 0.0 {
                continue;
            }
            a.set(r, col, 0.0);
            for j in (col + 1)..n {
                a.set(r, j, a.get(r, j) - factor * a.get(col, j));
            }
            b[r] -= factor * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for j in (col + 1)..n {
            acc -= a.get(col, j) * b[j];
        }
        b[col] = acc / a.get(col, col);
    }
    Ok(())
}
