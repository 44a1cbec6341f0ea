use super::{Mat, NumericError, Real};

/// Lower Cholesky factor L with A = L Lᵀ.
pub fn cholesky<T: Real>(a: &Mat<T>) -> Result<Mat<T>, NumericError> {
    if !a.is_square() {
        return Err(NumericError::Dimension(format!("Cholesky needs a square matrix, got {}x{}", a.rows(), a.cols())));
    }
    let n = a.rows();
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > T::zero()) {
            return Err(NumericError::NotPositiveDefinite { index: j, pivot: d.to_f64_lossy() });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves A X = B for symmetric positive definite A.
pub fn solve_spd<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Result<Mat<T>, NumericError> {
    if b.rows() != a.rows() {
        return Err(NumericError::Dimension(format!("rhs has {} rows, matrix is {}x{}", b.rows(), a.rows(), a.cols())));
    }
    let l = cholesky(a)?;
    let n = a.rows();
    let mut x = b.clone();
    for c in 0..b.cols() {
        // L y = b
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        // Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(x)
}
