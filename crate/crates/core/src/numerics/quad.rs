use super::{NumericError, Real};

/// Composite Simpson rule for ∫₀¹ f(s) ds on `2·panels` subintervals.
pub fn quad01<T: Real>(f: impl Fn(T) -> T, panels: usize) -> Result<T, NumericError> {
    if panels == 0 {
        return Err(NumericError::Invalid("quad01 needs at least one panel".into()));
    }
    let m = 2 * panels;
    let h = T::one() / T::count(m);
    let mut acc = T::zero();
    for i in 0..=m {
        let s = if i == m { T::one() } else { T::count(i) * h };
        let v = f(s);
        if !v.is_finite() {
            return Err(NumericError::NonFinite(format!("integrand at s = {s}")));
        }
        let w = if i == 0 || i == m {
            T::one()
        } else if i % 2 == 1 {
            T::c(4.0)
        } else {
            T::c(2.0)
        };
        acc += w * v;
    }
    Ok(acc * h / T::c(3.0))
}
