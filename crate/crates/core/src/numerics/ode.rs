//! Dormand–Prince 5(4) embedded Runge–Kutta pair.
//!
//! Only single steps and the error-control arithmetic live here; the hybrid
//! simulator drives the step loop itself because it interleaves event checks.

use super::Real;

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// 5th-order weights equal the last row of A (FSAL); E = b5 - b4.
const E: [f64; 7] =
    [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

/// Result of one trial step.
#[derive(Debug, Clone)]
pub struct Step<T> {
    pub y: Vec<T>,
    /// Scaled RMS error estimate; the step is acceptable when ≤ 1.
    pub error: T,
}

/// Performs one Dormand–Prince step of size `h` from `(t, y)`.
pub fn dopri5_step<T: Real, E>(
    mut f: impl FnMut(T, &[T]) -> Result<Vec<T>, E>,
    t: T,
    y: &[T],
    h: T,
    tol: Tolerances,
) -> Result<Step<T>, E> {
    let n = y.len();
    let mut k: Vec<Vec<T>> = Vec::with_capacity(7);
    let mut stage = vec![T::zero(); n];
    for s in 0..7 {
        for i in 0..n {
            let mut acc = y[i];
            for (j, kj) in k.iter().enumerate() {
                acc += h * T::c(A[s][j]) * kj[i];
            }
            stage[i] = acc;
        }
        k.push(f(t + T::c(C[s]) * h, &stage)?);
    }
    // stage 7 was evaluated at y_{n+1}
    let y_new = stage;
    let mut sq = T::zero();
    for i in 0..n {
        let mut err = T::zero();
        for (s, ks) in k.iter().enumerate() {
            err += T::c(E[s]) * ks[i];
        }
        err *= h;
        let scale = T::c(tol.atol) + T::c(tol.rtol) * y[i].abs().max(y_new[i].abs());
        let r = err / scale;
        sq += r * r;
    }
    let error = if n == 0 { T::zero() } else { (sq / T::count(n)).sqrt() };
    Ok(Step { y: y_new, error })
}

/// Standard step-size update for an order-5 pair, clamped to `[0.2, 5]`.
pub fn next_step_size<T: Real>(h: T, error: T) -> T {
    let factor =
        if error == T::zero() { T::c(5.0) } else { (T::c(0.9) * error.powf(T::c(-0.2))).max(T::c(0.2)).min(T::c(5.0)) };
    h * factor
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_accuracy() {
        let tol = Tolerances { rtol: 1e-10, atol: 1e-12 };
        let mut t = 0.0f64;
        let mut y = vec![1.0f64];
        let mut h = 0.01f64;
        while t < 1.0 {
            h = h.min(1.0 - t);
            let step = dopri5_step(|_, y: &[f64]| Ok::<_, ()>(vec![-y[0]]), t, &y, h, tol).unwrap();
            if step.error <= 1.0 {
                t += h;
                y = step.y;
            }
            h = next_step_size(h, step.error);
        }
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn fifth_order_convergence_on_single_step() {
        let tol = Tolerances { rtol: 1.0, atol: 1.0 };
        let f = |_t: f64, y: &[f64]| Ok::<_, ()>(vec![y[1], -y[0]]);
        let err = |h: f64| {
            let s = dopri5_step(f, 0.0, &[1.0, 0.0], h, tol).unwrap();
            (s.y[0] - h.cos()).abs()
        };
        let ratio = err(0.2) / err(0.1);
        // local error is O(h^6)
        assert!(ratio > 40.0, "ratio {ratio}");
    }
}
