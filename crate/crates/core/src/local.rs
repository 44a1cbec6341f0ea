//! Local controller synthesis: polytopic over-approximation of the plant near
//! the origin, the four LMI families for a quadratic basin certificate, a
//! verifier, and a small projected-subgradient solver.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hybrid::LocalHybridController;
use crate::numerics::{grid_extrema_many, grid_points, inflate, solve_spd, sym_eig, Mat, Real, DEFAULT_INFLATION};
use crate::plant::{BoundsCertificate, Plant};
use crate::{Error, Result};

/// 𝐕_μ = {|x_i| ≤ μ_i} together with the input bound |u| ≤ μ_u.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoxNeighborhood {
    pub mu: Vec<f64>,
    pub mu_u: f64,
}

impl BoxNeighborhood {
    pub fn new(mu: Vec<f64>, mu_u: f64) -> Result<Self> {
        if mu.is_empty() || mu.iter().chain([&mu_u]).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!("box bounds must be positive, got μ = {mu:?}, μ_u = {mu_u}")));
        }
        Ok(Self { mu, mu_u })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Axes of 𝐕_μ × [−μ_u, μ_u].
    pub fn axes(&self) -> Vec<(f64, f64)> {
        self.mu.iter().map(|m| (-m, *m)).chain([(-self.mu_u, self.mu_u)]).collect()
    }
}

/// Linearization (F, G) of f_h at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationPair {
    pub f: Mat<f64>,
    pub g: Vec<f64>,
}

pub fn linearize<P: Plant + ?Sized>(plant: &P) -> Result<LinearizationPair> {
    let n = plant.dim();
    let zero = vec![0.0; n];
    let f = plant.jacobian_x(&zero, 0.0);
    let g = plant.jacobian_u(&zero, 0.0);
    if !f.all_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(crate::numerics::NumericError::NonFinite("linearization at the origin".into()).into());
    }
    Ok(LinearizationPair { f, g })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_degenerate(&self, tol: f64) -> bool {
        self.width() < tol
    }

    fn ends(&self, tol: f64) -> Vec<f64> {
        if self.is_degenerate(tol) {
            vec![0.5 * (self.lo + self.hi)]
        } else {
            vec![self.lo, self.hi]
        }
    }
}

#[derive(Debug, Clone)]
pub struct VertexConfig {
    /// Grid points per axis of 𝐕_μ × [−μ_u, μ_u] (state axes, then input).
    pub resolution: Vec<usize>,
    /// Fraction of each interval's width added as outer padding.
    pub inflation: f64,
    pub degenerate_tol: f64,
    /// Largest admissible |𝓛|·|𝓜|.
    pub max_blocks: usize,
}

impl VertexConfig {
    pub fn uniform(n: usize, resolution: usize) -> Self {
        Self {
            resolution: vec![resolution; n + 1],
            inflation: DEFAULT_INFLATION,
            degenerate_tol: 1e-12,
            max_blocks: 4096,
        }
    }
}

/// Vertex matrices C_l and D_m bounding the Jacobians of f̃_h = f_h − Fx − Gu.
#[derive(Debug, Clone)]
pub struct VertexFamily {
    pub c_list: Vec<Mat<f64>>,
    pub d_list: Vec<Vec<f64>>,
    /// Inflated per-entry intervals used for the vertices.
    pub c_intervals: Vec<Vec<Interval>>,
    pub d_intervals: Vec<Interval>,
    /// Exact grid extrema before inflation.
    pub c_raw: Vec<Vec<Interval>>,
    pub d_raw: Vec<Interval>,
    /// Which reading of the input-perturbation matrices this family encodes.
    pub d_label: String,
}

impl VertexFamily {
    /// C = {0}, D = {0}.
    pub fn empty(n: usize) -> Self {
        let zero = Interval { lo: 0.0, hi: 0.0 };
        Self {
            c_list: vec![Mat::zeros(n, n)],
            d_list: vec![vec![0.0; n]],
            c_intervals: vec![vec![zero; n]; n],
            d_intervals: vec![zero; n],
            c_raw: vec![vec![zero; n]; n],
            d_raw: vec![zero; n],
            d_label: "empty".into(),
        }
    }

    /// Family from explicit vertex lists (intervals recomputed as entrywise hulls).
    pub fn from_lists(c_list: Vec<Mat<f64>>, d_list: Vec<Vec<f64>>, d_label: &str) -> Result<Self> {
        let n = d_list.first().map(Vec::len).ok_or_else(|| Error::Dimension("empty D list".into()))?;
        if c_list.is_empty()
            || c_list.iter().any(|c| c.rows() != n || c.cols() != n)
            || d_list.iter().any(|d| d.len() != n)
        {
            return Err(Error::Dimension("inconsistent vertex shapes".into()));
        }
        let hull = |vals: Vec<f64>| Interval {
            lo: vals.iter().copied().fold(f64::INFINITY, f64::min),
            hi: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        let c_intervals: Vec<Vec<Interval>> =
            (0..n).map(|i| (0..n).map(|j| hull(c_list.iter().map(|c| c[(i, j)]).collect())).collect()).collect();
        let d_intervals: Vec<Interval> = (0..n).map(|i| hull(d_list.iter().map(|d| d[i]).collect())).collect();
        Ok(Self {
            c_list,
            d_list,
            c_raw: c_intervals.clone(),
            d_raw: d_intervals.clone(),
            c_intervals,
            d_intervals,
            d_label: d_label.into(),
        })
    }

    pub fn block_count(&self) -> usize {
        self.c_list.len() * self.d_list.len()
    }
}

/// Grid extrema of every entry of ∂_x f̃_h and ∂_u f̃_h over the box, inflated
/// and enumerated into vertex matrices.
pub fn vertex_matrices<P: Plant + ?Sized>(plant: &P, bx: &BoxNeighborhood, cfg: &VertexConfig) -> Result<VertexFamily> {
    let n = plant.dim();
    if bx.dim() != n || cfg.resolution.len() != n + 1 {
        return Err(Error::Dimension(format!(
            "box has {} axes and {} resolutions for n = {n}",
            bx.dim(),
            cfg.resolution.len()
        )));
    }
    let pair = linearize(plant)?;
    let ext = grid_extrema_many(
        |p: &[f64], out: &mut [f64]| {
            let (x, u) = p.split_at(n);
            let jx = plant.jacobian_x(x, u[0]);
            let ju = plant.jacobian_u(x, u[0]);
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] = jx[(i, j)] - pair.f[(i, j)];
                }
                out[n * n + i] = ju[i] - pair.g[i];
            }
        },
        n * n + n,
        &bx.axes(),
        &cfg.resolution,
    )?;
    let raw: Vec<Interval> = ext.iter().map(|&(lo, hi)| Interval { lo, hi }).collect();
    let widen = |iv: &Interval| {
        let (lo, hi) = inflate(iv.lo, iv.hi, cfg.inflation);
        Interval { lo, hi }
    };
    let c_raw: Vec<Vec<Interval>> = (0..n).map(|i| raw[i * n..(i + 1) * n].to_vec()).collect();
    let d_raw: Vec<Interval> = raw[n * n..].to_vec();
    let c_intervals: Vec<Vec<Interval>> = c_raw.iter().map(|r| r.iter().map(widen).collect()).collect();
    let d_intervals: Vec<Interval> = d_raw.iter().map(widen).collect();

    let tol = cfg.degenerate_tol;
    let branching = |ivs: &[Interval]| ivs.iter().filter(|iv| !iv.is_degenerate(tol)).count();
    let c_branch = branching(&c_intervals.concat());
    let d_branch = branching(&d_intervals);
    let total = 1u128 << (c_branch + d_branch).min(127);
    if total > cfg.max_blocks as u128 {
        return Err(Error::Unsupported(format!(
            "{c_branch} + {d_branch} non-degenerate entries give {total} decrease blocks, above the cap {}",
            cfg.max_blocks
        )));
    }
    let c_choices: Vec<Vec<f64>> = c_intervals.concat().iter().map(|iv| iv.ends(tol)).collect();
    let c_list = cartesian(&c_choices).into_iter().map(|v| Mat::from_vec(n, n, v)).collect();
    let d_choices: Vec<Vec<f64>> = d_intervals.iter().map(|iv| iv.ends(tol)).collect();
    let d_list = cartesian(&d_choices);
    Ok(VertexFamily { c_list, d_list, c_intervals, d_intervals, c_raw, d_raw, d_label: "derived".into() })
}

/// All combinations, the first coordinate varying slowest.
fn cartesian(choices: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(choices.len())];
    for opts in choices {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                opts.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

/// Finite vertex set {x_p} whose convex hull contains 𝐀.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PolytopeHull {
    pub vertices: Vec<Vec<f64>>,
}

impl PolytopeHull {
    /// Deduplicates (to 1e−12) and keeps the given order otherwise.
    pub fn new(vertices: Vec<Vec<f64>>) -> Result<Self> {
        let n = vertices.first().map(Vec::len).ok_or_else(|| Error::Domain("hull needs a vertex".into()))?;
        if vertices.iter().any(|v| v.len() != n) {
            return Err(Error::Dimension("hull vertices of mixed dimension".into()));
        }
        let mut kept: Vec<Vec<f64>> = Vec::new();
        for v in vertices {
            if !kept.iter().any(|k| k.iter().zip(&v).all(|(a, b)| (a - b).abs() <= 1e-12)) {
                kept.push(v);
            }
        }
        Ok(Self { vertices: kept })
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    /// Counter-clockwise convex hull of the vertices (planar only).
    pub fn boundary_2d(&self) -> Result<Vec<[f64; 2]>> {
        if self.dim() != 2 {
            return Err(Error::Unsupported("hull boundary is only built for n = 2".into()));
        }
        let mut pts: Vec<[f64; 2]> = self.vertices.iter().map(|v| [v[0], v[1]]).collect();
        pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        if pts.len() < 3 {
            return Ok(pts);
        }
        let cross =
            |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
        let mut lower: Vec<[f64; 2]> = Vec::new();
        for &p in &pts {
            while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
                lower.pop();
            }
            lower.push(p);
        }
        let mut upper: Vec<[f64; 2]> = Vec::new();
        for &p in pts.iter().rev() {
            while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
                upper.pop();
            }
            upper.push(p);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        Ok(lower)
    }

    /// Planar membership by edge sign tests; `tol` is a distance slack.
    pub fn contains_2d(&self, x: &[f64], tol: f64) -> Result<bool> {
        let ring = self.boundary_2d()?;
        let p = [x[0], x[1]];
        match ring.len() {
            1 => Ok(((p[0] - ring[0][0]).powi(2) + (p[1] - ring[0][1]).powi(2)).sqrt() <= tol),
            2 => Ok(segment_distance(p, ring[0], ring[1]) <= tol),
            _ => Ok((0..ring.len()).all(|i| {
                let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
                let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
                let len = (ex * ex + ey * ey).sqrt();
                (ex * (p[1] - a[1]) - ey * (p[0] - a[0])) / len >= -tol
            })),
        }
    }
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
    let len2 = ex * ex + ey * ey;
    let t = if len2 == 0.0 { 0.0 } else { (((p[0] - a[0]) * ex + (p[1] - a[1]) * ey) / len2).clamp(0.0, 1.0) };
    ((p[0] - a[0] - t * ex).powi(2) + (p[1] - a[1] - t * ey).powi(2)).sqrt()
}

/// Slopes a⁻ ≤ a⁺ bounding ∂ψ1 on {V1 ≤ M}, and the x1 extent [−r_l, r_r].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct HullSlopes {
    pub a_minus: f64,
    pub a_plus: f64,
    pub r_left: f64,
    pub r_right: f64,
}

pub fn attractor_slopes<C: BoundsCertificate + ?Sized>(cert: &C) -> Result<HullSlopes> {
    if cert.x1_dim() != 1 {
        return Err(Error::Unsupported("built-in hull construction needs n = 2; supply vertices instead".into()));
    }
    let m = cert.m();
    let r = crate::plant::sublevel_radius(cert, m)?;
    let edge = |sign: f64| {
        let (mut lo, mut hi) = (0.0, r);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cert.v1(&[sign * mid]) <= m {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let (r_left, r_right) = (edge(-1.0), edge(1.0));
    let slopes: Vec<f64> = grid_points(-r_left, r_right, 4001).iter().map(|&s| cert.grad_psi1(&[s])[0]).collect();
    let a_minus = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    let a_plus = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(HullSlopes { a_minus, a_plus, r_left, r_right })
}

/// Four-vertex hull of 𝐀 from the mean value theorem: ψ1(x1) − ψ1(0) ∈ x1·[a⁻, a⁺].
pub fn hull_of_attractor<C: BoundsCertificate + ?Sized>(cert: &C) -> Result<PolytopeHull> {
    let s = attractor_slopes(cert)?;
    let base = cert.psi1(&[0.0]);
    PolytopeHull::new(vec![
        vec![s.r_right, base + s.a_plus * s.r_right],
        vec![s.r_right, base + s.a_minus * s.r_right],
        vec![-s.r_left, base - s.a_plus * s.r_left],
        vec![-s.r_left, base - s.a_minus * s.r_left],
    ])
}

/// All data the LMIs depend on besides the unknowns (W, H).
#[derive(Debug, Clone)]
pub struct LmiSystem<T> {
    pub f: Mat<T>,
    pub g: Vec<T>,
    pub c_list: Vec<Mat<T>>,
    pub d_list: Vec<Vec<T>>,
    pub mu: Vec<T>,
    pub mu_u: T,
    pub vertices: Vec<Vec<T>>,
    pub d_label: String,
}

impl LmiSystem<f64> {
    pub fn new(
        pair: &LinearizationPair,
        family: &VertexFamily,
        bx: &BoxNeighborhood,
        hull: &PolytopeHull,
    ) -> Result<Self> {
        let n = pair.g.len();
        if pair.f.rows() != n || pair.f.cols() != n || bx.dim() != n || hull.dim() != n {
            return Err(Error::Dimension("linearization, box and hull disagree on n".into()));
        }
        if family.c_list.iter().any(|c| c.rows() != n || c.cols() != n) || family.d_list.iter().any(|d| d.len() != n) {
            return Err(Error::Dimension("vertex matrices do not match n".into()));
        }
        Ok(Self {
            f: pair.f.clone(),
            g: pair.g.clone(),
            c_list: family.c_list.clone(),
            d_list: family.d_list.clone(),
            mu: bx.mu.clone(),
            mu_u: bx.mu_u,
            vertices: hull.vertices.clone(),
            d_label: family.d_label.clone(),
        })
    }
}

impl<T: Real> LmiSystem<T> {
    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn cast<U: Real>(&self) -> LmiSystem<U> {
        let cv = |v: &[T]| v.iter().map(|&x| U::c(x.to_f64_lossy())).collect::<Vec<U>>();
        let cm = |m: &Mat<T>| m.map(|x| U::c(x.to_f64_lossy()));
        LmiSystem {
            f: cm(&self.f),
            g: cv(&self.g),
            c_list: self.c_list.iter().map(cm).collect(),
            d_list: self.d_list.iter().map(|d| cv(d)).collect(),
            mu: cv(&self.mu),
            mu_u: U::c(self.mu_u.to_f64_lossy()),
            vertices: self.vertices.iter().map(|v| cv(v)).collect(),
            d_label: self.d_label.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LmiFamily {
    /// Must be negative definite.
    Decrease,
    /// ⪰ 0: sublevel set inside 𝐕_μ.
    StateBound,
    /// ⪰ 0: hull vertices inside the sublevel set.
    HullInclusion,
    /// ⪰ 0: |Kx| ≤ μ_u on the sublevel set.
    InputBound,
}

#[derive(Debug, Clone)]
pub struct LmiBlock<T> {
    pub family: LmiFamily,
    /// (l, m) for decrease blocks, s or p otherwise.
    pub index: (usize, usize),
    pub matrix: Mat<T>,
}

/// Evaluates every LMI block at (W, H).
pub fn assemble_lmis<T: Real>(sys: &LmiSystem<T>, w: &Mat<T>, h: &[T]) -> Result<Vec<LmiBlock<T>>> {
    let n = sys.dim();
    if w.rows() != n || w.cols() != n || h.len() != n {
        return Err(Error::Dimension(format!("W is {}x{}, H has {} entries, n = {n}", w.rows(), w.cols(), h.len())));
    }
    let hcol = Mat::column(h);
    let one = Mat::from_vec(1, 1, vec![T::one()]);
    let mut out = Vec::new();
    for (l, c) in sys.c_list.iter().enumerate() {
        let fc = &sys.f + c;
        let fcw = fc.matmul(w)?;
        for (m, d) in sys.d_list.iter().enumerate() {
            let gd: Vec<T> = sys.g.iter().zip(d).map(|(&a, &b)| a + b).collect();
            let gdh = Mat::column(&gd).matmul(&hcol.transpose())?;
            let half = &fcw + &gdh;
            let block = &half + &half.transpose();
            out.push(LmiBlock { family: LmiFamily::Decrease, index: (l, m), matrix: block });
        }
    }
    for (s, &mu_s) in sys.mu.iter().enumerate() {
        let we = Mat::column(&w.col_vec(s));
        let scaled = w.scale(mu_s * mu_s);
        let block = Mat::from_blocks(&[vec![&scaled, &we], vec![&we.transpose(), &one]])?;
        out.push(LmiBlock { family: LmiFamily::StateBound, index: (s, 0), matrix: block });
    }
    for (p, xp) in sys.vertices.iter().enumerate() {
        let xr = Mat::row(xp);
        let block = Mat::from_blocks(&[vec![&one, &xr], vec![&xr.transpose(), w]])?;
        out.push(LmiBlock { family: LmiFamily::HullInclusion, index: (p, 0), matrix: block });
    }
    let scaled = w.scale(sys.mu_u * sys.mu_u);
    let block = Mat::from_blocks(&[vec![&scaled, &hcol], vec![&hcol.transpose(), &one]])?;
    out.push(LmiBlock { family: LmiFamily::InputBound, index: (0, 0), matrix: block });
    Ok(out)
}

/// A quadratic basin certificate: V^ℓ(x) = xᵀPx with P = W⁻¹, u = Kx with K = HᵀP, c_ℓ = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiCertificate<T> {
    pub w: Mat<T>,
    pub h: Vec<T>,
}

impl<T: Real> LmiCertificate<T> {
    pub const LEVEL: f64 = 1.0;

    pub fn new(w: Mat<T>, h: Vec<T>) -> Result<Self> {
        if !w.is_square() || w.rows() != h.len() {
            return Err(Error::Dimension("W must be n×n and H of length n".into()));
        }
        let asym = w.asymmetry();
        if asym > T::c(1e-12) * (T::one() + w.max_abs()) {
            return Err(crate::numerics::NumericError::Asymmetric { asym: asym.to_f64_lossy() }.into());
        }
        Ok(Self { w: w.symmetrize(), h })
    }

    /// From (P, K): W = P⁻¹, H = W Kᵀ.
    pub fn from_pk(p: &Mat<T>, k: &[T]) -> Result<Self> {
        let w = solve_spd(p, &Mat::identity(p.rows()))?.symmetrize();
        let h = w.mul_vec(k);
        Self::new(w, h)
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }

    pub fn p(&self) -> Result<Mat<T>> {
        Ok(solve_spd(&self.w, &Mat::identity(self.dim()))?.symmetrize())
    }

    pub fn k(&self) -> Result<Vec<T>> {
        Ok(self.p()?.mul_vec(&self.h))
    }

    pub fn cast<U: Real>(&self) -> LmiCertificate<U> {
        LmiCertificate {
            w: self.w.map(|x| U::c(x.to_f64_lossy())),
            h: self.h.iter().map(|&x| U::c(x.to_f64_lossy())).collect(),
        }
    }
}

/// Reduced scalar forms of families 2–4.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SchurChecks {
    /// W_ss against μ_s².
    pub w_diag: Vec<f64>,
    pub mu_sq: Vec<f64>,
    /// x_pᵀ P x_p per hull vertex, against 1.
    pub hull_levels: Vec<f64>,
    /// K W Kᵀ against μ_u².
    pub kwk: f64,
    pub mu_u_sq: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MarginReport {
    /// Largest eigenvalue of each decrease block (must be < 0).
    pub decrease_max_eig: Vec<f64>,
    /// Smallest eigenvalues of the ⪰ 0 blocks.
    pub state_bound_min_eig: Vec<f64>,
    pub hull_min_eig: Vec<f64>,
    pub input_min_eig: f64,
    pub schur: SchurChecks,
    pub psd_tolerance: f64,
    /// Which input-perturbation reading the decrease blocks used.
    pub d_interpretation: String,
    pub pass: bool,
}

impl MarginReport {
    pub fn decrease_margin(&self) -> f64 {
        -self.decrease_max_eig.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn psd_margin(&self) -> f64 {
        self.state_bound_min_eig.iter().chain(&self.hull_min_eig).copied().fold(self.input_min_eig, f64::min)
    }
}

pub const PSD_TOLERANCE: f64 = 1e-9;

pub fn verify_certificate<T: Real>(cert: &LmiCertificate<T>, sys: &LmiSystem<T>) -> Result<MarginReport> {
    let blocks = assemble_lmis(sys, &cert.w, &cert.h)?;
    let mut report = MarginReport {
        decrease_max_eig: vec![],
        state_bound_min_eig: vec![],
        hull_min_eig: vec![],
        input_min_eig: f64::NAN,
        schur: schur_checks(cert, sys),
        psd_tolerance: PSD_TOLERANCE,
        d_interpretation: sys.d_label.clone(),
        pass: false,
    };
    for b in &blocks {
        let e = sym_eig(&b.matrix.symmetrize())?;
        match b.family {
            LmiFamily::Decrease => report.decrease_max_eig.push(e.max().to_f64_lossy()),
            LmiFamily::StateBound => report.state_bound_min_eig.push(e.min().to_f64_lossy()),
            LmiFamily::HullInclusion => report.hull_min_eig.push(e.min().to_f64_lossy()),
            LmiFamily::InputBound => report.input_min_eig = e.min().to_f64_lossy(),
        }
    }
    report.pass = report.decrease_margin() > 0.0 && report.psd_margin() >= -PSD_TOLERANCE;
    Ok(report)
}

fn schur_checks<T: Real>(cert: &LmiCertificate<T>, sys: &LmiSystem<T>) -> SchurChecks {
    let f = |v: T| v.to_f64_lossy();
    let n = cert.dim();
    let w_diag: Vec<f64> = (0..n).map(|s| f(cert.w[(s, s)])).collect();
    let mu_sq: Vec<f64> = sys.mu.iter().map(|&m| f(m * m)).collect();
    let (hull_levels, kwk) = match (cert.p(), cert.k()) {
        (Ok(p), Ok(k)) => (sys.vertices.iter().map(|x| f(p.quad_form(x))).collect(), f(cert.w.quad_form(&k))),
        _ => (vec![f64::INFINITY; sys.vertices.len()], f64::INFINITY),
    };
    let mu_u_sq = f(sys.mu_u * sys.mu_u);
    let tol = 1e-9;
    let pass = w_diag.iter().zip(&mu_sq).all(|(w, m)| *w <= m + tol)
        && hull_levels.iter().all(|v| *v <= 1.0 + tol)
        && kwk <= mu_u_sq + tol;
    SchurChecks { w_diag, mu_sq, hull_levels, kwk, mu_u_sq, pass }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub iterations: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Required negativity of the decrease blocks while searching.
    pub decrease_target: f64,
    /// Required positivity of the ⪰ 0 blocks while searching.
    pub psd_target: f64,
    /// Eigenvalue floor for the projection of W onto the SPD cone.
    pub eig_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { iterations: 20_000, restarts: 16, seed: 0, decrease_target: 1e-4, psd_target: 1e-7, eig_floor: 1e-6 }
    }
}

struct AffineBlocks<T> {
    base: Vec<LmiBlock<T>>,
    /// basis[i][b] = ∂ block_b / ∂θ_i.
    basis: Vec<Vec<Mat<T>>>,
}

fn unpack<T: Real>(theta: &[T], n: usize) -> (Mat<T>, Vec<T>) {
    let mut w = Mat::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            w[(i, j)] = theta[k];
            w[(j, i)] = theta[k];
            k += 1;
        }
    }
    (w, theta[k..].to_vec())
}

fn pack<T: Real>(w: &Mat<T>, h: &[T]) -> Vec<T> {
    let n = h.len();
    let mut theta = Vec::with_capacity(n * (n + 1) / 2 + n);
    for i in 0..n {
        for j in i..n {
            theta.push(w[(i, j)]);
        }
    }
    theta.extend_from_slice(h);
    theta
}

fn affine_blocks<T: Real>(sys: &LmiSystem<T>) -> Result<AffineBlocks<T>> {
    let n = sys.dim();
    let dim = n * (n + 1) / 2 + n;
    let zero = vec![T::zero(); dim];
    let (w0, h0) = unpack(&zero, n);
    let base = assemble_lmis(sys, &w0, &h0)?;
    let mut basis = Vec::with_capacity(dim);
    for i in 0..dim {
        let mut e = zero.clone();
        e[i] = T::one();
        let (w, h) = unpack(&e, n);
        let blocks = assemble_lmis(sys, &w, &h)?;
        basis.push(blocks.iter().zip(&base).map(|(b, b0)| &b.matrix - &b0.matrix).collect());
    }
    Ok(AffineBlocks { base, basis })
}

/// Largest violation over all blocks and a subgradient of it.
fn violation<T: Real>(ab: &AffineBlocks<T>, theta: &[T], cfg: &SolverConfig) -> Result<(T, Vec<T>)> {
    let mut worst = (T::neg_infinity(), 0usize, Vec::new());
    for (b, b0) in ab.base.iter().enumerate() {
        let mut m = b0.matrix.clone();
        for (i, &t) in theta.iter().enumerate() {
            if t != T::zero() {
                m = &m + &ab.basis[i][b].scale(t);
            }
        }
        let e = sym_eig(&m.symmetrize())?;
        let last = e.eigenvalues.len() - 1;
        let (viol, col) = match b0.family {
            LmiFamily::Decrease => (e.eigenvalues[last] + T::c(cfg.decrease_target), last),
            _ => (T::c(cfg.psd_target) - e.eigenvalues[0], 0),
        };
        if viol > worst.0 {
            worst = (viol, b, e.eigenvectors.col_vec(col));
        }
    }
    let (viol, b, v) = worst;
    let sign = if ab.base[b].family == LmiFamily::Decrease { T::one() } else { -T::one() };
    let grad = ab.basis.iter().map(|bi| sign * bi[b].quad_form(&v)).collect();
    Ok((viol, grad))
}

fn project_spd<T: Real>(theta: &mut [T], n: usize, floor: T) -> Result<()> {
    let (w, h) = unpack(theta, n);
    let e = sym_eig(&w)?;
    if e.min() >= floor {
        return Ok(());
    }
    let clipped: Vec<T> = e.eigenvalues.iter().map(|&l| l.max(floor)).collect();
    let q = &e.eigenvectors;
    let w = q.matmul(&Mat::from_diag(&clipped))?.matmul(&q.transpose())?.symmetrize();
    theta.copy_from_slice(&pack(&w, &h));
    Ok(())
}

/// Searches for (W, H) passing [`verify_certificate`].
///
/// Polyak-step projected subgradient descent on the largest block violation,
/// restarted from seeded random points.
pub fn synthesize<T: Real>(sys: &LmiSystem<T>, cfg: &SolverConfig) -> Result<LmiCertificate<T>> {
    let n = sys.dim();
    let ab = affine_blocks(sys)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best = f64::INFINITY;
    let mut total = 0;
    let floor = T::c(cfg.eig_floor);
    let scale = sys.mu.iter().map(|m| m.to_f64_lossy()).fold(f64::INFINITY, f64::min).powi(2);
    for restart in 0..cfg.restarts.max(1) {
        let mut w = Mat::identity(n).scale(T::c(0.1 * scale));
        if restart > 0 {
            let s = rng.gen_range(0.01..1.0) * scale;
            for i in 0..n {
                w[(i, i)] = T::c(s * rng.gen_range(0.2..1.0));
            }
        }
        let h: Vec<T> =
            (0..n).map(|_| if restart > 0 { T::c(rng.gen_range(-1.0..1.0) * scale) } else { T::zero() }).collect();
        let mut theta = pack(&w, &h);
        for _ in 0..cfg.iterations {
            total += 1;
            let (viol, grad) = violation(&ab, &theta, cfg)?;
            best = best.min(viol.to_f64_lossy());
            if viol <= T::zero() {
                let (w, h) = unpack(&theta, n);
                let cert = LmiCertificate::new(w, h)?;
                if verify_certificate(&cert, sys)?.pass {
                    return Ok(cert);
                }
            }
            let g2: T = grad.iter().map(|&g| g * g).sum();
            if !(g2 > T::zero()) {
                break;
            }
            // aim slightly past the feasibility boundary
            let step = (viol.max(T::zero()) + T::c(cfg.decrease_target.min(cfg.psd_target).max(1e-12))) / g2;
            for (t, g) in theta.iter_mut().zip(&grad) {
                *t -= step * *g;
            }
            project_spd(&mut theta, n, floor)?;
        }
    }
    Err(Error::InfeasibilitySuspected { best_violation: best, iterations: total })
}

/// Quadratic local controller: one mode, u = Kx, V^ℓ = xᵀPx, c_ℓ = 1.
#[derive(Debug, Clone)]
pub struct QuadraticLocalController {
    pub p: Mat<f64>,
    pub k: Vec<f64>,
}

impl QuadraticLocalController {
    pub fn new(p: Mat<f64>, k: Vec<f64>) -> Self {
        Self { p, k }
    }

    /// ∇V^ℓ(x)·f_h(x, Kx).
    pub fn lyapunov_rate<P: Plant + ?Sized>(&self, plant: &P, x: &[f64]) -> f64 {
        let u = crate::numerics::dot(&self.k, x);
        let fx = crate::plant::vector_field(plant, x, u);
        2.0 * crate::numerics::dot(&self.p.mul_vec(x), &fx)
    }
}

impl LocalHybridController for QuadraticLocalController {
    fn modes(&self) -> Vec<usize> {
        vec![1]
    }
    fn level(&self) -> f64 {
        1.0
    }
    fn feedback(&self, _q: usize, x: &[f64]) -> f64 {
        crate::numerics::dot(&self.k, x)
    }
    fn lyapunov(&self, _q: usize, x: &[f64]) -> f64 {
        self.p.quad_form(x)
    }
    fn flow_indicator(&self, q: usize, x: &[f64]) -> f64 {
        self.lyapunov(q, x) - 1.0
    }
    fn jump_indicator(&self, q: usize, x: &[f64]) -> f64 {
        1.0 - self.lyapunov(q, x)
    }
    fn jump_map(&self, _q: usize, _x: &[f64]) -> Vec<usize> {
        vec![1]
    }
}

/// Packages a verified certificate as a local hybrid controller.
pub fn certificate_to_local_controller<T: Real>(
    cert: &LmiCertificate<T>,
    sys: &LmiSystem<T>,
) -> Result<QuadraticLocalController> {
    let report = verify_certificate(cert, sys)?;
    if !report.pass {
        return Err(Error::Precondition(format!(
            "certificate does not verify (decrease margin {:e}, psd margin {:e})",
            report.decrease_margin(),
            report.psd_margin()
        )));
    }
    let c = cert.cast::<f64>();
    Ok(QuadraticLocalController::new(c.p()?, c.k()?))
}

/// `count` points on {xᵀPx = level} for a 2×2 SPD P.
pub fn sublevel_boundary_2d(p: &Mat<f64>, level: f64, count: usize) -> Result<Vec<[f64; 2]>> {
    if p.rows() != 2 || p.cols() != 2 {
        return Err(Error::Unsupported("ellipse sampling needs n = 2".into()));
    }
    let e = sym_eig(p)?;
    if e.min() <= 0.0 {
        return Err(crate::numerics::NumericError::NotPositiveDefinite { index: 0, pivot: e.min() }.into());
    }
    let q = &e.eigenvectors;
    let radii = [(level / e.eigenvalues[0]).sqrt(), (level / e.eigenvalues[1]).sqrt()];
    let angles = grid_points(0.0, std::f64::consts::TAU, count + 1);
    Ok(angles[..count]
        .iter()
        .map(|a| {
            let (y0, y1) = (radii[0] * a.cos(), radii[1] * a.sin());
            [q[(0, 0)] * y0 + q[(0, 1)] * y1, q[(1, 0)] * y0 + q[(1, 1)] * y1]
        })
        .collect())
}

/// Certificate document: `{"W": [[...]], "H": [...], "margins": {...}}`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateDocument {
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<f64>,
    #[serde(default)]
    pub margins: BTreeMap<String, serde_json::Value>,
}

pub fn certificate_to_json<T: Real>(cert: &LmiCertificate<T>, report: Option<&MarginReport>) -> Result<String> {
    let c = cert.cast::<f64>();
    let margins = match report {
        Some(r) => match serde_json::to_value(r)? {
            serde_json::Value::Object(map) => map.into_iter().collect(),
            _ => BTreeMap::new(),
        },
        None => BTreeMap::new(),
    };
    let doc = CertificateDocument { w: c.w.to_rows(), h: c.h, margins };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn certificate_from_json(text: &str) -> Result<LmiCertificate<f64>> {
    let doc: CertificateDocument = serde_json::from_str(text)?;
    let w = Mat::from_rows(&doc.w)?;
    LmiCertificate::new(w, doc.h)
}
