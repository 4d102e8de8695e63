//! Dense real linear-algebra kernels: cyclic Jacobi symmetric eigensolver,
//! Kronecker products and column-stacking vectorization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Off-diagonal Frobenius threshold, relative to the Frobenius norm of the input.
pub const JACOBI_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Symmetry tolerance accepted by [`eig_sym`].
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Entries below this magnitude are skipped by the sign convention.
pub const SIGN_EPS: f64 = 1e-8;

/// Eigendecomposition `A = U diag(values) Uᵀ` of a real symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Non-decreasing eigenvalues.
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns.
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    /// Largest eigenvalue magnitude.
    pub fn spectral_radius(&self) -> f64 {
        self.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.vectors * DMatrix::from_diagonal(&self.values) * self.vectors.transpose()
    }
}

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Eigenvalues are returned in ascending order. Each eigenvector is
/// sign-normalized so that its first entry of magnitude above [`SIGN_EPS`] is
/// positive; eigenvectors sharing a (numerically) equal eigenvalue are ordered
/// lexicographically after normalization.
pub fn eig_sym(a: &DMatrix<f64>) -> Result<SymEigen> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "eig_sym (square)",
            expected: n,
            got: a.ncols(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidParameter("empty matrix".into()));
    }
    let asym = max_asymmetry(a);
    if asym > SYMMETRY_TOL * a.amax().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }

    // Row-major working copies, symmetrized.
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = 0.5 * (a[(i, j)] + a[(j, i)]);
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let fro = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let threshold = JACOBI_TOL * fro;
    let off_norm = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[i * n + j] * m[i * n + j];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    loop {
        let off = off_norm(&m);
        if off <= threshold {
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps, off });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                // Symmetric Schur rotation annihilating (p, q).
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;

                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|j| {
            let mut col: Vec<f64> = (0..n).map(|i| v[i * n + j]).collect();
            normalize_sign(&mut col);
            (m[j * n + j], col)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Lexicographic order inside clusters of tied eigenvalues.
    let scale = pairs.iter().fold(1.0f64, |acc, p| acc.max(p.0.abs()));
    let tie = 1e-9 * scale;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && pairs[end].0 - pairs[end - 1].0 <= tie {
            end += 1;
        }
        if end - start > 1 {
            pairs[start..end].sort_by(|a, b| lex_cmp(&a.1, &b.1));
        }
        start = end;
    }

    let values = DVector::from_iterator(n, pairs.iter().map(|p| p.0));
    let vectors = DMatrix::from_fn(n, n, |i, j| pairs[j].1[i]);
    Ok(SymEigen { values, vectors })
}

fn normalize_sign(col: &mut [f64]) {
    if let Some(first) = col.iter().find(|x| x.abs() > SIGN_EPS) {
        if *first < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            ord => return ord,
        }
    }
    std::cmp::Ordering::Equal
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Stacks the columns of `m` on top of each other.
pub fn vec_cols(m: &DMatrix<f64>) -> DVector<f64> {
    // nalgebra storage is column-major
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_cols`].
pub fn unvec_cols(v: &DVector<f64>, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            context: "unvec_cols",
            expected: rows * cols,
            got: v.len(),
        });
    }
    Ok(DMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Largest eigenvalue magnitude of a symmetric matrix by power iteration.
///
/// Iterates on `a` and reports `‖a v‖` for the normalized iterate, which
/// converges to the spectral radius even when `±ρ` are both eigenvalues.
pub fn power_spectral_radius(a: &DMatrix<f64>, tol: f64, max_iter: usize) -> f64 {
    let n = a.nrows();
    // deterministic start with no special alignment
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_7).fract());
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..max_iter {
        let w = a * &v;
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        let done = (nw - est).abs() <= tol * nw.max(1.0);
        est = nw;
        v = w / nw;
        if done {
            break;
        }
    }
    est
}
