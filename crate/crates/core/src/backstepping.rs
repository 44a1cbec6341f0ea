//! Practical backstepping: the composite Lyapunov function V = V1 + K_V·w²
//! with w = x2 − ψ1(x1), the constants K_V, a′, ζ, K_α, c_g, and the global
//! feedback φ_g.

use std::sync::Arc;

use crate::hybrid::Feedback;
use crate::numerics::{dot, grid_points, norm2, quad01};
use crate::plant::{join, split, sublevel_radius, vector_field, Attractor, BoundsCertificate, Plant};
use crate::{Error, Result};

/// η(s) = s·x2 + (1 − s)·ψ1(x1).
pub fn eta<C: BoundsCertificate + ?Sized>(cert: &C, x1: &[f64], x2: f64, s: f64) -> f64 {
    s * x2 + (1.0 - s) * cert.psi1(x1)
}

/// Whether c must clear the certified bound c_g or only exceed 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainPolicy {
    /// c > c_g + 1e−6.
    Certified,
    /// c > 1 + 1e−6; decrease is then checked by sampling rather than implied.
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct BacksteppingParams {
    pub k_v: f64,
    pub a: f64,
    pub a_prime: f64,
    pub c: f64,
}

/// Constants derived from a parameter set.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GainBound {
    pub zeta: f64,
    pub k_alpha: f64,
    pub c_g: f64,
}

/// φ_g together with everything needed to evaluate V and V̇.
#[derive(Clone)]
pub struct BacksteppingController {
    plant: Arc<dyn Plant>,
    cert: Arc<dyn BoundsCertificate>,
    pub params: BacksteppingParams,
    pub bound: GainBound,
    pub policy: GainPolicy,
    pub panels: usize,
}

impl std::fmt::Debug for BacksteppingController {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BacksteppingController")
            .field("params", &self.params)
            .field("bound", &self.bound)
            .field("policy", &self.policy)
            .finish()
    }
}

const GAIN_MARGIN: f64 = 1e-6;

impl BacksteppingController {
    pub fn new(
        plant: Arc<dyn Plant>,
        cert: Arc<dyn BoundsCertificate>,
        params: BacksteppingParams,
        policy: GainPolicy,
    ) -> Result<Self> {
        if plant.dim() != cert.x1_dim() + 1 {
            return Err(Error::Dimension("plant and certificate disagree on n".into()));
        }
        if !(params.k_v > 0.0 && params.a > 0.0) {
            return Err(Error::Domain(format!("K_V = {} and a = {} must be positive", params.k_v, params.a)));
        }
        let bound = find_c_g(cert.as_ref(), params.k_v, params.a_prime, 201)?;
        let floor = match policy {
            GainPolicy::Certified => bound.c_g,
            GainPolicy::Empirical => 1.0,
        };
        if !(params.c > floor + GAIN_MARGIN) {
            return Err(Error::Precondition(format!(
                "c = {} must exceed {floor} ({policy:?} policy; c_g = {})",
                params.c, bound.c_g
            )));
        }
        Ok(Self { plant, cert, params, bound, policy, panels: 16 })
    }

    pub fn plant(&self) -> &Arc<dyn Plant> {
        &self.plant
    }

    pub fn certificate(&self) -> &Arc<dyn BoundsCertificate> {
        &self.cert
    }

    /// Whether c clears c_g, so decrease outside Ω_{a′}(V) is guaranteed.
    pub fn is_certified(&self) -> bool {
        self.params.c > self.bound.c_g + GAIN_MARGIN
    }

    fn integral(&self, f: impl Fn(f64) -> f64) -> Result<f64> {
        Ok(quad01(f, self.panels)?)
    }

    /// Δ(x1, x2).
    pub fn delta(&self, x: &[f64]) -> Result<f64> {
        let (x1, x2) = split(x);
        let cert = self.cert.as_ref();
        let psi_int = self.integral(|s| cert.big_psi(x1, eta(cert, x1, x2, s)))?;
        Ok(norm2(&cert.grad_v1(x1)) * psi_int
            + self.params.k_v * cert.big_psi(x1, x2) * (1.0 + norm2(&cert.grad_psi1(x1))))
    }

    /// ∫₀¹ ∂_{x2} f1(x1, η(s)) ds, one entry per x1 component.
    fn df1_integral(&self, x1: &[f64], x2: f64) -> Result<Vec<f64>> {
        let cert = self.cert.as_ref();
        if self.plant.f1_affine_in_x2() {
            return Ok(self.plant.d_f1_d_x2(x1, eta(cert, x1, x2, 0.5)));
        }
        (0..x1.len()).map(|i| self.integral(|s| self.plant.d_f1_d_x2(x1, eta(cert, x1, x2, s))[i])).collect()
    }

    /// φ_g(x).
    pub fn phi_g(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.plant.dim() {
            return Err(Error::Dimension(format!("state has {} entries", x.len())));
        }
        let (x1, x2) = split(x);
        let f2 = self.plant.f2(x1, x2);
        if f2 == 0.0 {
            return Err(Error::Structural { what: "f2 vanishes".into(), at: x.to_vec() });
        }
        let cert = self.cert.as_ref();
        let BacksteppingParams { k_v, c, .. } = self.params;
        let w = x2 - cert.psi1(x1);
        let lie_psi = dot(&cert.grad_psi1(x1), &self.plant.f1(x1, x2));
        let cross = dot(&cert.grad_v1(x1), &self.df1_integral(x1, x2)?);
        let delta = self.delta(x)?;
        Ok((k_v * lie_psi - cross - w * (c + 0.25 * c * delta * delta)) / (k_v * f2))
    }

    /// V(x) = V1(x1) + K_V·(x2 − ψ1(x1))².
    pub fn composite_v(&self, x: &[f64]) -> f64 {
        composite_v(self.cert.as_ref(), self.params.k_v, x)
    }

    /// ∇V(x)·f_h(x, u).
    pub fn composite_v_dot(&self, x: &[f64], u: f64) -> f64 {
        let (x1, x2) = split(x);
        let cert = self.cert.as_ref();
        let w = x2 - cert.psi1(x1);
        let k_v = self.params.k_v;
        let mut grad: Vec<f64> =
            cert.grad_v1(x1).iter().zip(cert.grad_psi1(x1)).map(|(gv, gp)| gv - 2.0 * k_v * w * gp).collect();
        grad.push(2.0 * k_v * w);
        dot(&grad, &vector_field(self.plant.as_ref(), x, u))
    }
}

impl Feedback for BacksteppingController {
    fn control(&self, x: &[f64]) -> Result<f64> {
        self.phi_g(x)
    }
}

pub fn composite_v<C: BoundsCertificate + ?Sized>(cert: &C, k_v: f64, x: &[f64]) -> f64 {
    let (x1, x2) = split(x);
    let w = x2 - cert.psi1(x1);
    cert.v1(x1) + k_v * w * w
}

/// Sampling of ∂Ω_{a′}(V) used for the inclusion Ω_{a′}(V) ⊂ 𝐀 + a𝐁₁.
#[derive(Debug, Clone)]
pub struct InclusionSearch {
    /// Samples of x1 per axis inside {V1 ≤ a′}; each yields two boundary points.
    pub resolution: usize,
    pub k_v_initial: f64,
    pub k_v_ratio: f64,
    pub k_v_max: f64,
    pub bisection_steps: usize,
    /// Samples of 𝐀 used by the distance estimator.
    pub attractor_resolution: usize,
}

impl Default for InclusionSearch {
    fn default() -> Self {
        Self {
            resolution: 1001,
            k_v_initial: 1.0,
            k_v_ratio: 4.0,
            k_v_max: 1e8,
            bisection_steps: 40,
            attractor_resolution: 401,
        }
    }
}

/// Points of {V = a′} for a given K_V.
pub fn level_boundary_samples<C: BoundsCertificate + ?Sized>(
    cert: &C,
    k_v: f64,
    level: f64,
    resolution: usize,
) -> Result<Vec<Vec<f64>>> {
    let d = cert.x1_dim();
    let r = sublevel_radius(cert, level)?;
    let axis = grid_points(-r, r, resolution.max(3));
    let mut x1_points: Vec<Vec<f64>> = Vec::new();
    if d == 1 {
        // include the exact ends where V1 = level
        let edge = |sign: f64| {
            let (mut lo, mut hi) = (0.0, r);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if cert.v1(&[sign * mid]) <= level {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            sign * lo
        };
        x1_points = grid_points(edge(-1.0), edge(1.0), resolution.max(3)).into_iter().map(|v| vec![v]).collect();
    } else {
        let mut idx = vec![0usize; d];
        'outer: loop {
            let x1: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
            if cert.v1(&x1) <= level {
                x1_points.push(x1);
            }
            for i in idx.iter_mut() {
                *i += 1;
                if *i < axis.len() {
                    continue 'outer;
                }
                *i = 0;
            }
            break;
        }
    }
    let mut out = Vec::with_capacity(2 * x1_points.len());
    for x1 in x1_points {
        let w = ((level - cert.v1(&x1)).max(0.0) / k_v).sqrt();
        let psi = cert.psi1(&x1);
        out.push(join(&x1, psi + w));
        out.push(join(&x1, psi - w));
    }
    Ok(out)
}

/// First sampled boundary point of Ω_{a′}(V) farther than `a` from 𝐀, if any.
pub fn inclusion_counterexample(
    attractor: &Attractor,
    k_v: f64,
    a_prime: f64,
    a: f64,
    resolution: usize,
) -> Result<Option<Vec<f64>>> {
    let cert = attractor.certificate().as_ref();
    let m = cert.m();
    for x in level_boundary_samples(cert, k_v, a_prime, resolution)? {
        let (x1, x2) = split(&x);
        // points above 𝐀 are within |w| of it
        if cert.v1(x1) <= m && (x2 - cert.psi1(x1)).abs() <= a {
            continue;
        }
        if attractor.distance(&x) > a {
            return Ok(Some(x));
        }
    }
    Ok(None)
}

/// Largest δ ∈ (0, M] (to bisection precision) such that Ω_{M+δ}(V) passes the inclusion.
pub fn largest_delta(
    attractor: &Attractor,
    k_v: f64,
    a: f64,
    cfg: &InclusionSearch,
) -> Result<std::result::Result<f64, Vec<f64>>> {
    let m = attractor.certificate().m();
    let mut last_bad = match inclusion_counterexample(attractor, k_v, 2.0 * m, a, cfg.resolution)? {
        None => return Ok(Ok(m)),
        Some(x) => x,
    };
    let (mut lo, mut hi) = (0.0, m);
    for _ in 0..cfg.bisection_steps {
        let mid = 0.5 * (lo + hi);
        match inclusion_counterexample(attractor, k_v, m + mid, a, cfg.resolution)? {
            None => lo = mid,
            Some(x) => {
                hi = mid;
                last_bad = x;
            }
        }
    }
    if lo > 0.0 {
        Ok(Ok(lo))
    } else {
        Ok(Err(last_bad))
    }
}

/// Searches K_V on a geometric schedule and returns the first (K_V, a′) passing the inclusion.
pub fn find_kv_aprime(cert: Arc<dyn BoundsCertificate>, a: f64, cfg: &InclusionSearch) -> Result<(f64, f64)> {
    if !(a > 0.0) {
        return Err(Error::Domain(format!("a = {a} must be positive")));
    }
    let attractor = Attractor::new(cert.clone(), cfg.attractor_resolution)?;
    let m = cert.m();
    let mut k_v = cfg.k_v_initial;
    let mut counterexample = Vec::new();
    while k_v <= cfg.k_v_max {
        match largest_delta(&attractor, k_v, a, cfg)? {
            Ok(delta) => return Ok((k_v, m + delta)),
            Err(x) => counterexample = x,
        }
        k_v *= cfg.k_v_ratio;
    }
    Err(Error::SearchFailed {
        reason: format!("no K_V ≤ {:e} satisfies the inclusion for a = {a}", cfg.k_v_max),
        counterexample,
    })
}

/// ζ = max of V over 𝐀_{≥0} = {ε·α(V1) + w² ≤ ε·α(M) + 1}, by grid search in (x1, w).
pub fn zeta<C: BoundsCertificate + ?Sized>(cert: &C, k_v: f64, resolution: usize) -> Result<f64> {
    let eps = cert.eps();
    let bound = eps * cert.alpha(cert.m()) + 1.0;
    // grow the x1 box until the constraint excludes its boundary
    let mut r = 1.0;
    let d = cert.x1_dim();
    let excluded = |r: f64| -> bool {
        let corners = grid_points(-r, r, 21);
        if d == 1 {
            return eps * cert.alpha(cert.v1(&[r])) > bound && eps * cert.alpha(cert.v1(&[-r])) > bound;
        }
        corners.iter().all(|&v| {
            (0..d).all(|i| {
                let mut x1 = vec![0.0; d];
                x1[i] = v;
                (v.abs() < r) || eps * cert.alpha(cert.v1(&x1)) > bound
            })
        })
    };
    let mut tries = 0;
    while !excluded(r) {
        r *= 2.0;
        tries += 1;
        if tries > 60 {
            return Err(Error::Domain("𝐀_{≥0} appears unbounded".into()));
        }
    }
    let w_max = bound.sqrt();
    let res = if d <= 2 { resolution } else { resolution.min(41) };
    let axis = grid_points(-r, r, res);
    let w_axis = grid_points(-w_max, w_max, res);
    let mut best = f64::NEG_INFINITY;
    let mut idx = vec![0usize; d];
    'outer: loop {
        let x1: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
        let v1 = cert.v1(&x1);
        let head = eps * cert.alpha(v1);
        for &w in &w_axis {
            if head + w * w <= bound * (1.0 + 1e-12) {
                best = best.max(v1 + k_v * w * w);
            }
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
    Ok(best)
}

/// c_g = max{1/(ε[α(a′) − α(M)]), ε·K_V·K_α/2, 1}.
pub fn find_c_g<C: BoundsCertificate + ?Sized>(
    cert: &C,
    k_v: f64,
    a_prime: f64,
    resolution: usize,
) -> Result<GainBound> {
    let m = cert.m();
    if !(a_prime > m) {
        return Err(Error::Domain(format!("a′ = {a_prime} must exceed M = {m}")));
    }
    let z = zeta(cert, k_v, resolution)?;
    let k_alpha = cert.alpha_lipschitz(0.0, z);
    let eps = cert.eps();
    let c_g = (1.0 / (eps * (cert.alpha(a_prime) - cert.alpha(m)))).max(eps * k_v * k_alpha / 2.0).max(1.0);
    Ok(GainBound { zeta: z, k_alpha, c_g })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::example::{ExampleCertificate, ExampleInstance, ExamplePlant};
    use crate::plant::{FnCertificate, FnPlant};

    fn reference_controller() -> BacksteppingController {
        let inst = ExampleInstance::reference();
        let params = BacksteppingParams { k_v: inst.k_v, a: inst.a, a_prime: inst.m * 1.5, c: inst.c };
        BacksteppingController::new(Arc::new(inst.plant()), Arc::new(inst.certificate()), params, GainPolicy::Empirical)
            .unwrap()
    }

    #[test]
    fn eta_examples() {
        let c = ExampleCertificate::reference(0.1);
        assert_eq!(eta(&c, &[0.3], 2.0, 1.0), 2.0);
        assert_eq!(eta(&c, &[0.3], 2.0, 0.0), c.psi1(&[0.3]));
        assert!((eta(&c, &[1.0], 0.0, 0.5) + 0.8).abs() < 1e-15);
    }

    #[test]
    fn delta_examples() {
        let ctl = reference_controller();
        assert!((ctl.delta(&[0.0, 0.0]).unwrap() - 407.15).abs() < 1e-9);
        assert!((ctl.delta(&[1.0, 0.0]).unwrap() - 879.644).abs() < 1e-9);
    }

    #[test]
    fn phi_g_examples() {
        let ctl = reference_controller();
        assert_eq!(ctl.phi_g(&[0.0, 0.0]).unwrap(), 0.0);
        let u = ctl.phi_g(&[1.0, -1.6]).unwrap();
        assert!((u - (0.85 - 1.0 / 1628.6)).abs() < 1e-12, "{u}");
    }

    #[test]
    fn reduces_to_classical_backstepping_for_linear_plant() {
        // ẋ1 = x2, ẋ2 = u, ψ1 = −x1, V1 = x1²/2: φ = −x2 − x1/K_V − w·c/K_V
        let plant = FnPlant {
            dim: 2,
            f1: Box::new(|_, x2| vec![x2]),
            f2: Box::new(|_, _| 1.0),
            h1: Box::new(|_, _, _| vec![0.0]),
            h2: Box::new(|_, _, _| 0.0),
            f1_affine_in_x2: false,
        };
        let cert = FnCertificate {
            x1_dim: 1,
            v1: Box::new(|x| 0.5 * x[0] * x[0]),
            psi1: Box::new(|x| -x[0]),
            alpha: Box::new(|s| 2.0 * s),
            big_psi: Box::new(|_, _| 0.0),
            eps: 0.5,
            m: 0.1,
        };
        let params = BacksteppingParams { k_v: 2.0, a: 1.0, a_prime: 0.2, c: 3.0 };
        let ctl = BacksteppingController::new(Arc::new(plant), Arc::new(cert), params, GainPolicy::Empirical).unwrap();
        let (x1, x2) = (0.7, -0.2);
        let w = x2 + x1;
        let expect = -x2 - x1 / 2.0 - w * 3.0 / 2.0;
        assert!((ctl.phi_g(&[x1, x2]).unwrap() - expect).abs() < 1e-8);
        assert_eq!(ctl.delta(&[x1, x2]).unwrap(), 0.0);
    }

    #[test]
    fn composite_v_examples() {
        let ctl = reference_controller();
        assert_eq!(ctl.composite_v(&[0.0, 0.0]), 0.0);
        let r = 0.37789;
        let c = ExampleCertificate::reference(0.1);
        assert!((ctl.composite_v(&[r, c.psi1(&[r])]) - 0.0714).abs() < 1e-5);
    }

    #[test]
    fn structural_error_when_f2_vanishes() {
        let plant = FnPlant {
            dim: 2,
            f1: Box::new(|_, x2| vec![x2]),
            f2: Box::new(|x1, _| x1[0]),
            h1: Box::new(|_, _, _| vec![0.0]),
            h2: Box::new(|_, _, _| 0.0),
            f1_affine_in_x2: true,
        };
        let params = BacksteppingParams { k_v: 2.0, a: 1.0, a_prime: 0.2, c: 3.0 };
        let ctl = BacksteppingController::new(
            Arc::new(plant),
            Arc::new(ExampleCertificate::reference(0.1)),
            params,
            GainPolicy::Empirical,
        )
        .unwrap();
        assert!(matches!(ctl.phi_g(&[0.0, 1.0]), Err(Error::Structural { .. })));
    }

    #[test]
    fn c_g_examples() {
        let lin = FnCertificate {
            x1_dim: 1,
            v1: Box::new(|x| 0.5 * x[0] * x[0]),
            psi1: Box::new(|_| 0.0),
            alpha: Box::new(|s| s),
            big_psi: Box::new(|_, _| 0.0),
            eps: 0.5,
            m: 0.1,
        };
        let g = find_c_g(&lin, 1e-3, 2.1, 51).unwrap();
        assert!((g.c_g - 1.0).abs() < 1e-12, "{g:?}");
        let c = ExampleCertificate::reference(0.1);
        let g = find_c_g(&c, 1.0, c.m + 0.1, 51).unwrap();
        assert!(g.c_g >= 1.0 / (0.7 * 0.1) - 1e-9);
        assert!(matches!(find_c_g(&c, 1.0, c.m, 51), Err(Error::Domain(_))));
    }

    #[test]
    fn zeta_of_example() {
        // 𝐀_{≥0} = {0.7·x1²/2 + w² ≤ 0.7·M + 1}; V is largest at x1 = 0 for large K_V
        let c = ExampleCertificate::reference(0.1);
        let z = zeta(&c, 1628.6, 201).unwrap();
        assert!((z - 1628.6 * (0.7 * c.m + 1.0)).abs() < 1e-6 * z, "{z}");
    }

    #[test]
    fn gain_policy() {
        let inst = ExampleInstance::reference();
        let params = BacksteppingParams { k_v: inst.k_v, a: inst.a, a_prime: inst.m * 1.5, c: inst.c };
        let plant: Arc<dyn Plant> = Arc::new(ExamplePlant::new(0.1));
        let cert: Arc<dyn BoundsCertificate> = Arc::new(inst.certificate());
        let err = BacksteppingController::new(plant.clone(), cert.clone(), params, GainPolicy::Certified);
        assert!(matches!(err, Err(Error::Precondition(_))));
        let ok = BacksteppingController::new(plant.clone(), cert.clone(), params, GainPolicy::Empirical).unwrap();
        assert!(!ok.is_certified());
        let big = BacksteppingParams { c: ok.bound.c_g + 1.0, ..params };
        assert!(BacksteppingController::new(plant, cert, big, GainPolicy::Certified).unwrap().is_certified());
    }

    #[test]
    fn loose_radius_passes_first_k_v() {
        let cert = FnCertificate {
            x1_dim: 1,
            v1: Box::new(|x| 0.5 * x[0] * x[0]),
            psi1: Box::new(|_| 0.0),
            alpha: Box::new(|s| s),
            big_psi: Box::new(|_, _| 0.0),
            eps: 0.5,
            m: 1.0,
        };
        let (k_v, a_prime) = find_kv_aprime(Arc::new(cert), 10.0, &InclusionSearch::default()).unwrap();
        assert_eq!(k_v, 1.0);
        assert!(a_prime > 1.0);
    }

    #[test]
    fn tiny_radius_exhausts_schedule() {
        let cfg =
            InclusionSearch { resolution: 101, bisection_steps: 8, attractor_resolution: 51, ..Default::default() };
        let err = find_kv_aprime(Arc::new(ExampleCertificate::reference(0.1)), 1e-9, &cfg);
        match err {
            Err(Error::SearchFailed { counterexample, .. }) => assert_eq!(counterexample.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reference_k_v_passes_inclusion() {
        let cert: Arc<dyn BoundsCertificate> = Arc::new(ExampleCertificate::reference(0.1));
        let att = Attractor::new(cert.clone(), 401).unwrap();
        let delta = largest_delta(&att, 1628.6, 0.01, &InclusionSearch::default()).unwrap().unwrap();
        assert!(delta > 0.0);
        // post-hoc check at ten times the resolution
        assert!(inclusion_counterexample(&att, 1628.6, cert.m() + delta, 0.01, 10_010).unwrap().is_none());
    }
}
