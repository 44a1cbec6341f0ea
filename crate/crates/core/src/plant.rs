//! Control-affine plants with unstructured perturbations and the bounds
//! certificate that describes the target attractor.
//!
//! The state is laid out as `x = (x1, x2)` with `x1 ∈ ℝⁿ⁻¹` first and the
//! actuated scalar `x2` last:
//!
//! ```text
//! ẋ1 = f1(x1, x2) + h1(x1, x2, u)
//! ẋ2 = f2(x1, x2)·u + h2(x1, x2, u)
//! ```

use std::sync::Arc;

use crate::numerics::{grid_argmin, grid_points, norm2, Mat};
use crate::{Error, Result};

/// Central-difference step used wherever closed-form partials are missing.
pub fn fd_step(arg: f64) -> f64 {
    1e-6 * (1.0 + arg.abs())
}

fn central(mut g: impl FnMut(f64) -> f64, at: f64) -> f64 {
    let h = fd_step(at);
    (g(at + h) - g(at - h)) / (2.0 * h)
}

/// Splits a full state into `(x1, x2)`.
pub fn split(x: &[f64]) -> (&[f64], f64) {
    let (x1, x2) = x.split_at(x.len() - 1);
    (x1, x2[0])
}

pub fn join(x1: &[f64], x2: f64) -> Vec<f64> {
    let mut x = x1.to_vec();
    x.push(x2);
    x
}

/// The controlled plant. Only `f1, f2, h1, h2` are mandatory; partial
/// derivatives fall back to central differences.
pub trait Plant: Send + Sync {
    /// State dimension n (so `x1` has n − 1 entries).
    fn dim(&self) -> usize;
    fn f1(&self, x1: &[f64], x2: f64) -> Vec<f64>;
    fn f2(&self, x1: &[f64], x2: f64) -> f64;
    fn h1(&self, x1: &[f64], x2: f64, u: f64) -> Vec<f64>;
    fn h2(&self, x1: &[f64], x2: f64, u: f64) -> f64;

    /// Whether `f1` is affine in `x2`, which makes ∫₀¹ ∂_{x2} f1 ds a point evaluation.
    fn f1_affine_in_x2(&self) -> bool {
        false
    }

    fn d_f1_d_x2(&self, x1: &[f64], x2: f64) -> Vec<f64> {
        let h = fd_step(x2);
        let (p, m) = (self.f1(x1, x2 + h), self.f1(x1, x2 - h));
        p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    }

    fn d_h1_d_x2(&self, x1: &[f64], x2: f64, u: f64) -> Vec<f64> {
        let h = fd_step(x2);
        let (p, m) = (self.h1(x1, x2 + h, u), self.h1(x1, x2 - h, u));
        p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    }

    /// ∂_x f_h(x, u).
    fn jacobian_x(&self, x: &[f64], u: f64) -> Mat<f64> {
        let n = self.dim();
        let mut jac = Mat::zeros(n, n);
        let mut xp = x.to_vec();
        for j in 0..n {
            let h = fd_step(x[j]);
            xp[j] = x[j] + h;
            let fp = vector_field(self, &xp, u);
            xp[j] = x[j] - h;
            let fm = vector_field(self, &xp, u);
            xp[j] = x[j];
            for i in 0..n {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        jac
    }

    /// ∂_u f_h(x, u).
    fn jacobian_u(&self, x: &[f64], u: f64) -> Vec<f64> {
        let h = fd_step(u);
        let (p, m) = (vector_field(self, x, u + h), vector_field(self, x, u - h));
        p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    }
}

/// f_h(x, u) without the structural check on f2.
pub fn vector_field<P: Plant + ?Sized>(plant: &P, x: &[f64], u: f64) -> Vec<f64> {
    let (x1, x2) = split(x);
    let mut out: Vec<f64> = plant.f1(x1, x2).iter().zip(plant.h1(x1, x2, u)).map(|(a, b)| a + b).collect();
    out.push(plant.f2(x1, x2) * u + plant.h2(x1, x2, u));
    out
}

/// Stacked `(f1 + h1, f2·u + h2)`; fails if f2 vanishes at `x`.
pub fn eval_dynamics<P: Plant + ?Sized>(plant: &P, x: &[f64], u: f64) -> Result<Vec<f64>> {
    if x.len() != plant.dim() || x.len() < 2 {
        return Err(Error::Dimension(format!("state has {} entries, plant dimension {}", x.len(), plant.dim())));
    }
    let (x1, x2) = split(x);
    if plant.f2(x1, x2) == 0.0 {
        return Err(Error::Structural { what: "f2 vanishes".into(), at: x.to_vec() });
    }
    Ok(vector_field(plant, x, u))
}

/// Checks the origin conditions f1(0,0) = 0, h1(0,0,0) = 0, h2(0,0,0) = 0 and f2(0,0) ≠ 0.
pub fn validate_plant<P: Plant + ?Sized>(plant: &P) -> Result<()> {
    let n = plant.dim();
    if n < 2 {
        return Err(Error::Dimension("plant needs n ≥ 2".into()));
    }
    let z = vec![0.0; n - 1];
    let tol = 1e-12;
    if norm2(&plant.f1(&z, 0.0)) > tol {
        return Err(Error::Validation {
            what: "f1(0,0) ≠ 0".into(),
            value: norm2(&plant.f1(&z, 0.0)),
            sample: vec![0.0; n],
        });
    }
    if norm2(&plant.h1(&z, 0.0, 0.0)) > tol {
        return Err(Error::Validation {
            what: "h1(0,0,0) ≠ 0".into(),
            value: norm2(&plant.h1(&z, 0.0, 0.0)),
            sample: vec![0.0; n],
        });
    }
    if plant.h2(&z, 0.0, 0.0).abs() > tol {
        return Err(Error::Validation {
            what: "h2(0,0,0) ≠ 0".into(),
            value: plant.h2(&z, 0.0, 0.0),
            sample: vec![0.0; n],
        });
    }
    if plant.f2(&z, 0.0) == 0.0 {
        return Err(Error::Structural { what: "f2 vanishes".into(), at: vec![0.0; n] });
    }
    Ok(())
}

/// Data realizing the bounds assumption: V1, ψ1, α, Ψ, ε and M.
pub trait BoundsCertificate: Send + Sync {
    /// Dimension of `x1`.
    fn x1_dim(&self) -> usize;
    fn v1(&self, x1: &[f64]) -> f64;
    fn psi1(&self, x1: &[f64]) -> f64;
    /// Class-K∞ rate.
    fn alpha(&self, s: f64) -> f64;
    /// Perturbation bound Ψ(x1, x2).
    fn big_psi(&self, x1: &[f64], x2: f64) -> f64;
    fn eps(&self) -> f64;
    fn m(&self) -> f64;

    fn grad_v1(&self, x1: &[f64]) -> Vec<f64> {
        fd_gradient(|z| self.v1(z), x1)
    }

    fn grad_psi1(&self, x1: &[f64]) -> Vec<f64> {
        fd_gradient(|z| self.psi1(z), x1)
    }

    /// Lipschitz constant of α on `[lo, hi]`: largest finite-difference slope over 10⁴ points.
    fn alpha_lipschitz(&self, lo: f64, hi: f64) -> f64 {
        let pts = grid_points(lo, hi, 10_001);
        pts.windows(2).map(|w| ((self.alpha(w[1]) - self.alpha(w[0])) / (w[1] - w[0])).abs()).fold(0.0, f64::max)
    }
}

pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, at: &[f64]) -> Vec<f64> {
    let mut z = at.to_vec();
    (0..at.len())
        .map(|i| {
            let g = central(
                |v| {
                    z[i] = v;
                    f(&z)
                },
                at[i],
            );
            z[i] = at[i];
            g
        })
        .collect()
}

/// Checks the sampled invariants of a certificate: V1(0) = 0 and V1 > 0 elsewhere,
/// α(0) = 0 and α strictly increasing, ε ∈ (0, 1), M > 0.
pub fn validate_certificate<C: BoundsCertificate + ?Sized>(cert: &C, radius: f64, resolution: usize) -> Result<()> {
    let eps = cert.eps();
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("ε = {eps} must lie in (0, 1)")));
    }
    if !(cert.m() > 0.0) {
        return Err(Error::Domain(format!("M = {} must be positive", cert.m())));
    }
    let d = cert.x1_dim();
    let origin = vec![0.0; d];
    if cert.v1(&origin).abs() > 1e-12 {
        return Err(Error::Validation { what: "V1(0) ≠ 0".into(), value: cert.v1(&origin), sample: origin });
    }
    if cert.alpha(0.0).abs() > 1e-12 {
        return Err(Error::Validation { what: "α(0) ≠ 0".into(), value: cert.alpha(0.0), sample: vec![0.0] });
    }
    let bounds = vec![(-radius, radius); d];
    let res = vec![resolution; d];
    let (min_v1, at) = grid_argmin(|x1| if norm2(x1) < 1e-12 { f64::MAX } else { cert.v1(x1) }, &bounds, &res)?;
    if !(min_v1 > 0.0) {
        return Err(Error::Validation { what: "V1 not positive away from 0".into(), value: min_v1, sample: at });
    }
    let s = grid_points(0.0, radius.max(1.0), resolution.max(2));
    for w in s.windows(2) {
        if !(cert.alpha(w[1]) > cert.alpha(w[0])) {
            return Err(Error::Validation {
                what: "α not strictly increasing".into(),
                value: cert.alpha(w[1]),
                sample: vec![w[1]],
            });
        }
    }
    Ok(())
}

/// One item of the bounds report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ItemReport {
    pub item: &'static str,
    /// Smallest slack found; negative means violated.
    pub min_slack: f64,
    /// Grid point where the smallest slack occurs, as (x…, u) or (x1…, u).
    pub worst_point: Vec<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct BoundsReport {
    pub items: Vec<ItemReport>,
    /// Sampled box: n state axes followed by the input axis.
    pub sample_box: Vec<(f64, f64)>,
    pub resolution: Vec<usize>,
    pub tolerance: f64,
    /// Item b split: slack of ‖h1‖ ≤ Ψ and of the Lie-derivative bound on x2 = ψ1(x1).
    pub b_norm_slack: f64,
    pub b_lie_slack: f64,
}

impl BoundsReport {
    pub fn pass(&self) -> bool {
        self.items.iter().all(|i| i.pass)
    }

    pub fn item(&self, name: &str) -> Option<&ItemReport> {
        self.items.iter().find(|i| i.item == name)
    }
}

/// Samples the four inequalities of the bounds assumption on a grid.
///
/// `sample_box` and `resolution` list the n state axes followed by the input
/// axis. Item b's Lie-derivative bound is evaluated on the manifold
/// `x2 = ψ1(x1)`, which is how the decrease argument consumes it.
pub fn check_bounds_certificate<P, C>(
    plant: &P,
    cert: &C,
    sample_box: &[(f64, f64)],
    resolution: &[usize],
) -> Result<BoundsReport>
where
    P: Plant + ?Sized,
    C: BoundsCertificate + ?Sized,
{
    let n = plant.dim();
    if sample_box.len() != n + 1 || resolution.len() != n + 1 || cert.x1_dim() != n - 1 {
        return Err(Error::Dimension(format!("need {} box axes (state then input)", n + 1)));
    }
    let tol = 1e-9;
    let x1_axes: Vec<(f64, f64)> = sample_box[..n - 1].to_vec();
    let mut x1u_axes = x1_axes.clone();
    x1u_axes.push(sample_box[n]);
    let mut x1u_res = resolution[..n - 1].to_vec();
    x1u_res.push(resolution[n]);

    let eps = cert.eps();
    let alpha_m = cert.alpha(cert.m());

    let (a_slack, a_at) = grid_argmin(
        |x1| {
            let psi = cert.psi1(x1);
            let lie = crate::numerics::dot(&cert.grad_v1(x1), &plant.f1(x1, psi));
            -(lie + cert.alpha(cert.v1(x1)))
        },
        &x1_axes,
        &resolution[..n - 1],
    )?;

    let (b_norm_slack, b_norm_at) = grid_argmin(
        |p| {
            let (x, u) = p.split_at(n);
            let (x1, x2) = split(x);
            cert.big_psi(x1, x2) - norm2(&plant.h1(x1, x2, u[0]))
        },
        sample_box,
        resolution,
    )?;
    let (b_lie_slack, b_lie_at) = grid_argmin(
        |p| {
            let (x1, u) = p.split_at(n - 1);
            let psi = cert.psi1(x1);
            let lie = crate::numerics::dot(&cert.grad_v1(x1), &plant.h1(x1, psi, u[0]));
            (1.0 - eps) * cert.alpha(cert.v1(x1)) + eps * alpha_m - lie
        },
        &x1u_axes,
        &x1u_res,
    )?;
    let (b_slack, b_at) = if b_norm_slack <= b_lie_slack { (b_norm_slack, b_norm_at) } else { (b_lie_slack, b_lie_at) };

    let (c_slack, c_at) = grid_argmin(
        |p| {
            let (x, u) = p.split_at(n);
            let (x1, x2) = split(x);
            cert.big_psi(x1, x2) - norm2(&plant.d_h1_d_x2(x1, x2, u[0]))
        },
        sample_box,
        resolution,
    )?;
    let (d_slack, d_at) = grid_argmin(
        |p| {
            let (x, u) = p.split_at(n);
            let (x1, x2) = split(x);
            cert.big_psi(x1, x2) - plant.h2(x1, x2, u[0]).abs()
        },
        sample_box,
        resolution,
    )?;

    let item = |item, min_slack: f64, worst_point| ItemReport { item, min_slack, worst_point, pass: min_slack >= -tol };
    Ok(BoundsReport {
        items: vec![
            item("a", a_slack, a_at),
            item("b", b_slack, b_at),
            item("c", c_slack, c_at),
            item("d", d_slack, d_at),
        ],
        sample_box: sample_box.to_vec(),
        resolution: resolution.to_vec(),
        tolerance: tol,
        b_norm_slack,
        b_lie_slack,
    })
}

/// The compact set 𝐀 = {V1(x1) ≤ M, x2 = ψ1(x1)} with a sampled representation.
#[derive(Clone)]
pub struct Attractor {
    cert: Arc<dyn BoundsCertificate>,
    /// Sampled x1 points of {V1 ≤ M}.
    x1_samples: Vec<Vec<f64>>,
    spacing: f64,
}

impl std::fmt::Debug for Attractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Attractor").field("samples", &self.x1_samples.len()).field("spacing", &self.spacing).finish()
    }
}

/// Smallest r > 0 such that V1 exceeds `level` on the boundary of [−r, r]^d.
pub fn sublevel_radius<C: BoundsCertificate + ?Sized>(cert: &C, level: f64) -> Result<f64> {
    let d = cert.x1_dim();
    let exceeds_on_boundary = |r: f64| -> bool {
        if d == 1 {
            return cert.v1(&[r]) > level && cert.v1(&[-r]) > level;
        }
        let pts = grid_points(-r, r, 21);
        let mut idx = vec![0usize; d];
        loop {
            let on_face = idx.iter().any(|&i| i == 0 || i == 20);
            if on_face {
                let x1: Vec<f64> = idx.iter().map(|&i| pts[i]).collect();
                if cert.v1(&x1) <= level {
                    return false;
                }
            }
            let mut a = 0;
            loop {
                if a == d {
                    return true;
                }
                idx[a] += 1;
                if idx[a] < 21 {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
        }
    };
    let mut hi = 1.0;
    let mut tries = 0;
    while !exceeds_on_boundary(hi) {
        hi *= 2.0;
        tries += 1;
        if tries > 60 {
            return Err(Error::Domain("V1 does not appear proper: sublevel set unbounded".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if exceeds_on_boundary(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(hi)
}

impl Attractor {
    /// Samples {V1 ≤ M} with `resolution` points per x1 axis.
    pub fn new(cert: Arc<dyn BoundsCertificate>, resolution: usize) -> Result<Self> {
        let d = cert.x1_dim();
        let m = cert.m();
        let r = sublevel_radius(cert.as_ref(), m)?;
        let res = resolution.max(3);
        let x1_samples: Vec<Vec<f64>> = if d == 1 {
            // exact endpoints where V1 = M on each side
            let lo = -bisect_level(|s| cert.v1(&[-s]), m, r);
            let hi = bisect_level(|s| cert.v1(&[s]), m, r);
            grid_points(lo, hi, res).into_iter().map(|v| vec![v]).collect()
        } else {
            let axis = grid_points(-r, r, res);
            let mut out = Vec::new();
            let mut idx = vec![0usize; d];
            'outer: loop {
                let x1: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
                if cert.v1(&x1) <= m {
                    out.push(x1);
                }
                for i in idx.iter_mut() {
                    *i += 1;
                    if *i < res {
                        continue 'outer;
                    }
                    *i = 0;
                }
                break;
            }
            out
        };
        let spacing = 2.0 * r / (res - 1) as f64;
        Ok(Self { cert, x1_samples, spacing })
    }

    pub fn certificate(&self) -> &Arc<dyn BoundsCertificate> {
        &self.cert
    }

    /// Points of 𝐀 on the sampling grid.
    pub fn points(&self) -> Vec<Vec<f64>> {
        self.x1_samples.iter().map(|x1| join(x1, self.cert.psi1(x1))).collect()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        attractor_contains(self.cert.as_ref(), x, tol)
    }

    /// Euclidean distance from `x` to 𝐀: nearest sample, then local pattern
    /// search on x1 restricted to {V1 ≤ M}.
    pub fn distance(&self, x: &[f64]) -> f64 {
        let m = self.cert.m();
        let dist = |x1: &[f64]| -> f64 {
            let p = join(x1, self.cert.psi1(x1));
            norm2(&p.iter().zip(x).map(|(a, b)| a - b).collect::<Vec<_>>())
        };
        let (mut best, mut best_x1) = self
            .x1_samples
            .iter()
            .map(|x1| (dist(x1), x1.clone()))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("attractor has samples");
        let mut step = self.spacing;
        while step > 1e-12 {
            let mut improved = false;
            for i in 0..best_x1.len() {
                for sgn in [-1.0, 1.0] {
                    let mut cand = best_x1.clone();
                    cand[i] += sgn * step;
                    if self.cert.v1(&cand) <= m {
                        let dc = dist(&cand);
                        if dc < best {
                            best = dc;
                            best_x1 = cand;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        best
    }
}

/// Largest s ∈ [0, r] with g(s) ≤ level, assuming g increasing along the ray.
fn bisect_level(g: impl Fn(f64) -> f64, level: f64, r: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, r);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) <= level {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    lo
}

/// Membership in 𝐀 with tolerance: V1(x1) ≤ M + tol and |x2 − ψ1(x1)| ≤ tol.
pub fn attractor_contains<C: BoundsCertificate + ?Sized>(cert: &C, x: &[f64], tol: f64) -> bool {
    let (x1, x2) = split(x);
    cert.v1(x1) <= cert.m() + tol && (x2 - cert.psi1(x1)).abs() <= tol
}

pub type VecFn2 = Box<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>;
pub type ScalarFn2 = Box<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
pub type VecFn3 = Box<dyn Fn(&[f64], f64, f64) -> Vec<f64> + Send + Sync>;
pub type ScalarFn3 = Box<dyn Fn(&[f64], f64, f64) -> f64 + Send + Sync>;
pub type ScalarFn1 = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Plant given by closures, for quick experiments and tests.
pub struct FnPlant {
    pub dim: usize,
    pub f1: VecFn2,
    pub f2: ScalarFn2,
    pub h1: VecFn3,
    pub h2: ScalarFn3,
    pub f1_affine_in_x2: bool,
}

impl Plant for FnPlant {
    fn dim(&self) -> usize {
        self.dim
    }
    fn f1(&self, x1: &[f64], x2: f64) -> Vec<f64> {
        (self.f1)(x1, x2)
    }
    fn f2(&self, x1: &[f64], x2: f64) -> f64 {
        (self.f2)(x1, x2)
    }
    fn h1(&self, x1: &[f64], x2: f64, u: f64) -> Vec<f64> {
        (self.h1)(x1, x2, u)
    }
    fn h2(&self, x1: &[f64], x2: f64, u: f64) -> f64 {
        (self.h2)(x1, x2, u)
    }
    fn f1_affine_in_x2(&self) -> bool {
        self.f1_affine_in_x2
    }
}

/// Linear plant ẋ = F x + G u in the control-affine split (needs G_n ≠ 0).
#[derive(Debug, Clone)]
pub struct LinearPlant {
    pub f: Mat<f64>,
    pub g: Vec<f64>,
}

impl Plant for LinearPlant {
    fn dim(&self) -> usize {
        self.g.len()
    }
    fn f1(&self, x1: &[f64], x2: f64) -> Vec<f64> {
        let x = join(x1, x2);
        let fx = self.f.mul_vec(&x);
        fx[..x1.len()].to_vec()
    }
    fn f2(&self, _x1: &[f64], _x2: f64) -> f64 {
        *self.g.last().expect("non-empty input matrix")
    }
    fn h1(&self, _x1: &[f64], _x2: f64, u: f64) -> Vec<f64> {
        self.g[..self.g.len() - 1].iter().map(|g| g * u).collect()
    }
    fn h2(&self, x1: &[f64], x2: f64, _u: f64) -> f64 {
        let x = join(x1, x2);
        *self.f.mul_vec(&x).last().expect("non-empty state")
    }
    fn f1_affine_in_x2(&self) -> bool {
        true
    }
    fn jacobian_x(&self, _x: &[f64], _u: f64) -> Mat<f64> {
        self.f.clone()
    }
    fn jacobian_u(&self, _x: &[f64], _u: f64) -> Vec<f64> {
        self.g.clone()
    }
}

/// Certificate given by closures (gradients by finite differences).
pub struct FnCertificate {
    pub x1_dim: usize,
    pub v1: ScalarFn1,
    pub psi1: ScalarFn1,
    pub alpha: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub big_psi: ScalarFn2,
    pub eps: f64,
    pub m: f64,
}

impl BoundsCertificate for FnCertificate {
    fn x1_dim(&self) -> usize {
        self.x1_dim
    }
    fn v1(&self, x1: &[f64]) -> f64 {
        (self.v1)(x1)
    }
    fn psi1(&self, x1: &[f64]) -> f64 {
        (self.psi1)(x1)
    }
    fn alpha(&self, s: f64) -> f64 {
        (self.alpha)(s)
    }
    fn big_psi(&self, x1: &[f64], x2: f64) -> f64 {
        (self.big_psi)(x1, x2)
    }
    fn eps(&self) -> f64 {
        self.eps
    }
    fn m(&self) -> f64 {
        self.m
    }
}
