use super::{NumericError, Real};

/// Default safety inflation applied by callers that need outer bounds: 2% of the range.
pub const DEFAULT_INFLATION: f64 = 0.02;

/// `count` equispaced points on `[lo, hi]`, endpoints included exactly.
pub fn grid_points<T: Real>(lo: T, hi: T, count: usize) -> Vec<T> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let last = count - 1;
            let step = (hi - lo) / T::count(last);
            (0..count).map(|i| if i == last { hi } else { lo + T::count(i) * step }).collect()
        }
    }
}

fn validate<T: Real>(bounds: &[(T, T)], resolution: &[usize]) -> Result<(), NumericError> {
    if bounds.len() != resolution.len() {
        return Err(NumericError::Dimension(format!("{} axes but {} resolutions", bounds.len(), resolution.len())));
    }
    if bounds.is_empty() {
        return Err(NumericError::Invalid("grid needs at least one axis".into()));
    }
    if let Some(r) = resolution.iter().find(|&&r| r < 2) {
        return Err(NumericError::Invalid(format!("resolution {r} < 2")));
    }
    if bounds.iter().any(|&(lo, hi)| !(lo <= hi)) {
        return Err(NumericError::Invalid("axis with lo > hi".into()));
    }
    Ok(())
}

/// Visits every point of the tensor grid in lexicographic order (last axis fastest).
fn for_each_point<T: Real>(
    bounds: &[(T, T)],
    resolution: &[usize],
    mut visit: impl FnMut(&[T]) -> Result<(), NumericError>,
) -> Result<(), NumericError> {
    let axes: Vec<Vec<T>> = bounds.iter().zip(resolution).map(|(&(lo, hi), &r)| grid_points(lo, hi, r)).collect();
    let dim = axes.len();
    let mut idx = vec![0usize; dim];
    let mut point: Vec<T> = axes.iter().map(|a| a[0]).collect();
    loop {
        visit(&point)?;
        let mut axis = dim;
        loop {
            if axis == 0 {
                return Ok(());
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < axes[axis].len() {
                point[axis] = axes[axis][idx[axis]];
                break;
            }
            idx[axis] = 0;
            point[axis] = axes[axis][0];
        }
    }
}

/// Exact minimum and maximum of `f` over the tensor grid (endpoints included).
pub fn grid_extrema<T: Real>(
    f: impl Fn(&[T]) -> T,
    bounds: &[(T, T)],
    resolution: &[usize],
) -> Result<(T, T), NumericError> {
    let out = grid_extrema_many(|x, out: &mut [T]| out[0] = f(x), 1, bounds, resolution)?;
    Ok(out[0])
}

/// Like [`grid_extrema`] for a vector-valued `f` writing `outputs` values per point;
/// one pass over the grid, per-component extrema.
pub fn grid_extrema_many<T: Real>(
    mut f: impl FnMut(&[T], &mut [T]),
    outputs: usize,
    bounds: &[(T, T)],
    resolution: &[usize],
) -> Result<Vec<(T, T)>, NumericError> {
    validate(bounds, resolution)?;
    let mut ext = vec![(T::infinity(), T::neg_infinity()); outputs];
    let mut buf = vec![T::zero(); outputs];
    for_each_point(bounds, resolution, |x| {
        f(x, &mut buf);
        for (k, (&v, e)) in buf.iter().zip(ext.iter_mut()).enumerate() {
            if !v.is_finite() {
                return Err(NumericError::NonFinite(format!("output {k} at {x:?}")));
            }
            e.0 = e.0.min(v);
            e.1 = e.1.max(v);
        }
        Ok(())
    })?;
    Ok(ext)
}

/// Minimum of `f` over the tensor grid together with the first point attaining it.
pub fn grid_argmin<T: Real>(
    f: impl Fn(&[T]) -> T,
    bounds: &[(T, T)],
    resolution: &[usize],
) -> Result<(T, Vec<T>), NumericError> {
    validate(bounds, resolution)?;
    let mut best = (T::infinity(), Vec::new());
    for_each_point(bounds, resolution, |x| {
        let v = f(x);
        if !v.is_finite() {
            return Err(NumericError::NonFinite(format!("sample at {x:?}")));
        }
        if v < best.0 {
            best = (v, x.to_vec());
        }
        Ok(())
    })?;
    Ok(best)
}

/// Widens `[lo, hi]` by `fraction` of its range, split evenly between both ends.
pub fn inflate<T: Real>(lo: T, hi: T, fraction: T) -> (T, T) {
    let pad = fraction * (hi - lo) / T::c(2.0);
    (lo - pad, hi + pad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn identity_on_interval() {
        assert_eq!(grid_extrema(|x: &[f64]| x[0], &[(-1.0, 1.0)], &[3]).unwrap(), (-1.0, 1.0));
    }

    #[test]
    fn ldi_entry_matches_analytic_extremum() {
        let (lo, hi) =
            grid_extrema(|x: &[f64]| 0.2 * x[0] + 0.1 * x[1].sin(), &[(-1.0, 1.0), (-2.0 * PI, 2.0 * PI)], &[41, 201])
                .unwrap();
        assert!((lo + 0.3).abs() < 1e-9 && (hi - 0.3).abs() < 1e-9, "{lo} {hi}");
    }

    #[test]
    fn constant_function() {
        assert_eq!(grid_extrema(|_: &[f64]| 2.5, &[(0.0, 1.0), (0.0, 3.0)], &[2, 5]).unwrap(), (2.5, 2.5));
    }

    #[test]
    fn errors() {
        assert!(grid_extrema(|x: &[f64]| x[0], &[(0.0, 1.0)], &[1]).is_err());
        assert!(grid_extrema(|x: &[f64]| 1.0 / x[0], &[(0.0, 1.0)], &[3]).is_err());
        assert!(grid_extrema(|x: &[f64]| x[0], &[(0.0, 1.0)], &[3, 3]).is_err());
    }

    #[test]
    fn inflation_is_symmetric() {
        assert_eq!(inflate(-1.0, 1.0, 0.02), (-1.02, 1.02));
        assert_eq!(inflate(3.0, 3.0, 0.02), (3.0, 3.0));
    }
}
