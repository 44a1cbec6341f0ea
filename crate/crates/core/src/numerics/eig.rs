use super::{Mat, NumericError, Real};

/// Tolerances for the cyclic Jacobi eigensolver.
#[derive(Debug, Clone, Copy)]
pub struct EigConfig {
    /// Accepted asymmetry, relative to `max(1, max|a_ij|)`.
    pub symmetry_tol: f64,
    /// Stop once the off-diagonal Frobenius norm drops below this fraction of ‖A‖_F.
    pub off_diagonal_tol: f64,
    pub max_sweeps: usize,
}

impl Default for EigConfig {
    fn default() -> Self {
        Self { symmetry_tol: 1e-12, off_diagonal_tol: 1e-13, max_sweeps: 100 }
    }
}

impl EigConfig {
    /// Default tolerances, loosened to a few ulps when `T` is coarser than `f64`.
    pub fn for_scalar<T: Real>() -> Self {
        let ulp = T::epsilon().to_f64_lossy();
        let d = Self::default();
        Self { symmetry_tol: d.symmetry_tol.max(64.0 * ulp), off_diagonal_tol: d.off_diagonal_tol.max(4.0 * ulp), ..d }
    }
}

#[derive(Debug, Clone)]
pub struct SymEigResult<T> {
    /// Ascending.
    pub eigenvalues: Vec<T>,
    /// Orthonormal eigenvectors stored as columns, in the order of `eigenvalues`.
    pub eigenvectors: Mat<T>,
    pub sweeps: usize,
}

impl<T: Real> SymEigResult<T> {
    pub fn min(&self) -> T {
        self.eigenvalues[0]
    }

    pub fn max(&self) -> T {
        *self.eigenvalues.last().expect("non-empty spectrum")
    }

    /// Q Λ Qᵀ.
    pub fn reconstruct(&self) -> Mat<T> {
        let q = &self.eigenvectors;
        let lambda = Mat::from_diag(&self.eigenvalues);
        &(q * &lambda) * &q.transpose()
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn sym_eig<T: Real>(a: &Mat<T>) -> Result<SymEigResult<T>, NumericError> {
    sym_eig_with(a, &EigConfig::for_scalar::<T>())
}

pub fn sym_eig_with<T: Real>(a: &Mat<T>, cfg: &EigConfig) -> Result<SymEigResult<T>, NumericError> {
    if !a.is_square() {
        return Err(NumericError::Dimension(format!(
            "eigenproblem needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.all_finite() {
        return Err(NumericError::NonFinite("matrix entry".into()));
    }
    let n = a.rows();
    let scale = T::one().max(a.max_abs());
    let asym = a.asymmetry();
    if asym > T::c(cfg.symmetry_tol) * scale {
        return Err(NumericError::Asymmetric { asym: asym.to_f64_lossy() });
    }
    let mut m = a.symmetrize();
    let mut v = Mat::identity(n);
    let stop = T::c(cfg.off_diagonal_tol) * m.frobenius();
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        if off_diagonal_norm(&m) <= stop {
            break;
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (T::c(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
                m[(p, q)] = T::zero();
                m[(q, p)] = T::zero();
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).expect("finite eigenvalues"));
    let eigenvalues = order.iter().map(|&i| m[(i, i)]).collect();
    let mut eigenvectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            eigenvectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok(SymEigResult { eigenvalues, eigenvectors, sweeps })
}

fn off_diagonal_norm<T: Real>(m: &Mat<T>) -> T {
    let mut s = T::zero();
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if i != j {
                s += m[(i, j)] * m[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Definiteness test: returns `(min eigenvalue > margin, min eigenvalue)`.
pub fn is_pd<T: Real>(a: &Mat<T>, margin: T) -> Result<(bool, T), NumericError> {
    let e = sym_eig(a)?;
    Ok((e.min() > margin, e.min()))
}
