//! Hybrid feedback laws, the hysteresis supervisor that blends a local hybrid
//! controller with a global practical stabilizer, and a simulator producing
//! hybrid arcs.
//!
//! Sets are described by scalar indicators: a set is `{x : indicator(x) ≤ 0}`.
//! Intersections take the max of indicators, unions the min. Membership tests
//! accept a small tolerance so that points localized on a boundary belong to
//! the closed set on either side.

mod sim;

pub use sim::{
    arc_metrics, simulate, write_arc_csv, ArcMetrics, FailureKind, HybridArc, JumpRecord, ModeDuration, Sample,
    SimConfig, SimulationFailure, Termination,
};

use std::fmt;
use std::sync::Arc;

use crate::numerics::grid_points;
use crate::plant::Attractor;
use crate::{Error, Result};

/// Discrete state `(stage, q̂)`: stage 1 runs the local controller q̂, stage 2 the global one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct Mode {
    pub stage: u8,
    pub local: usize,
}

impl Mode {
    pub const fn new(stage: u8, local: usize) -> Self {
        Self { stage, local }
    }

    pub const fn local_stage(q: usize) -> Self {
        Self { stage: 1, local: q }
    }

    pub const fn global_stage(q: usize) -> Self {
        Self { stage: 2, local: q }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.stage, self.local)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().trim_matches(|c| c == '(' || c == ')').split(',').collect();
        let bad = || Error::Config(format!("mode `{s}` is not of the form stage,local"));
        if parts.len() != 2 {
            return Err(bad());
        }
        let stage: u8 = parts[0].trim().parse().map_err(|_| bad())?;
        let local: usize = parts[1].trim().parse().map_err(|_| bad())?;
        if stage != 1 && stage != 2 {
            return Err(bad());
        }
        Ok(Self { stage, local })
    }
}

/// A continuous state feedback u = φ(x).
pub trait Feedback: Send + Sync {
    fn control(&self, x: &[f64]) -> Result<f64>;
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> Feedback for F {
    fn control(&self, x: &[f64]) -> Result<f64> {
        Ok(self(x))
    }
}

/// A local hybrid controller: per mode q̂ a flow set, jump set, feedback,
/// jump map and Lyapunov function, with a common level c_ℓ.
pub trait LocalHybridController: Send + Sync {
    fn modes(&self) -> Vec<usize>;
    /// c_ℓ.
    fn level(&self) -> f64;
    fn feedback(&self, q: usize, x: &[f64]) -> f64;
    fn lyapunov(&self, q: usize, x: &[f64]) -> f64;
    /// ≤ 0 on the flow set C^ℓ_q.
    fn flow_indicator(&self, q: usize, x: &[f64]) -> f64;
    /// ≤ 0 on the jump set D^ℓ_q.
    fn jump_indicator(&self, q: usize, x: &[f64]) -> f64;
    fn jump_map(&self, q: usize, x: &[f64]) -> Vec<usize>;
}

/// Sampled checks of a local controller: flow ∪ jump covers every sample,
/// V(0) = 0 and V > 0 at the nonzero samples.
pub fn validate_local_controller(local: &dyn LocalHybridController, samples: &[Vec<f64>]) -> Result<()> {
    for q in local.modes() {
        if let Some(x) = samples.first() {
            let zero = vec![0.0; x.len()];
            if local.lyapunov(q, &zero).abs() > 1e-12 {
                return Err(Error::Validation {
                    what: format!("V_{q}(0) ≠ 0"),
                    value: local.lyapunov(q, &zero),
                    sample: zero,
                });
            }
        }
        for x in samples {
            let cover = local.flow_indicator(q, x).min(local.jump_indicator(q, x));
            if cover > 0.0 {
                return Err(Error::Validation {
                    what: format!("C ∪ D misses x in mode {q}"),
                    value: cover,
                    sample: x.clone(),
                });
            }
            if x.iter().any(|v| *v != 0.0) && !(local.lyapunov(q, x) > 0.0) {
                return Err(Error::Validation {
                    what: format!("V_{q} not positive"),
                    value: local.lyapunov(q, x),
                    sample: x.clone(),
                });
            }
        }
    }
    Ok(())
}

/// What the simulator needs from a hybrid closed loop.
pub trait HybridFeedback: Send + Sync {
    /// |Q|.
    fn mode_count(&self) -> usize;
    fn control(&self, q: Mode, x: &[f64]) -> Result<f64>;
    /// ≤ 0 on C_q.
    fn flow_indicator(&self, q: Mode, x: &[f64]) -> f64;
    /// ≤ 0 on D_q.
    fn jump_indicator(&self, q: Mode, x: &[f64]) -> f64;
    /// Set-valued jump map, listed in order of preference.
    fn jump_map(&self, q: Mode, x: &[f64]) -> Result<Vec<Mode>>;
    /// Membership tolerance used for the indicators above.
    fn membership_tol(&self) -> f64 {
        1e-9
    }
}

/// A continuous feedback seen as a one-mode hybrid system that never jumps.
pub struct ContinuousLoop<F> {
    pub feedback: F,
    pub mode: Mode,
}

impl<F: Feedback> HybridFeedback for ContinuousLoop<F> {
    fn mode_count(&self) -> usize {
        1
    }
    fn control(&self, _q: Mode, x: &[f64]) -> Result<f64> {
        self.feedback.control(x)
    }
    fn flow_indicator(&self, _q: Mode, _x: &[f64]) -> f64 {
        -1.0
    }
    fn jump_indicator(&self, _q: Mode, _x: &[f64]) -> f64 {
        f64::INFINITY
    }
    fn jump_map(&self, q: Mode, _x: &[f64]) -> Result<Vec<Mode>> {
        Err(Error::Contract(format!("continuous loop has no jumps (mode {q})")))
    }
}

/// Hysteresis supervisor over Q = {1, 2} × Q̂.
#[derive(Clone)]
pub struct SupervisorController {
    local: Arc<dyn LocalHybridController>,
    global: Arc<dyn Feedback>,
    c_l: f64,
    c_tilde: f64,
    tol: f64,
}

impl fmt::Debug for SupervisorController {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SupervisorController")
            .field("c_l", &self.c_l)
            .field("c_tilde", &self.c_tilde)
            .field("modes", &self.local.modes())
            .finish()
    }
}

/// How 𝐀 + a𝐁₁ is sampled when validating c̃_ℓ.
#[derive(Debug, Clone, Copy)]
pub struct InflationSampling {
    /// Radius a of the ball added to 𝐀.
    pub radius: f64,
    /// Directions per point (n = 2: angles on the circle).
    pub directions: usize,
    /// Radial layers in (0, a], the outermost at a.
    pub layers: usize,
}

impl Default for InflationSampling {
    fn default() -> Self {
        Self { radius: 0.01, directions: 16, layers: 2 }
    }
}

/// Points of 𝐀 + a𝐁₁: every attractor sample plus offsets on spheres of radius ≤ a.
pub fn sample_inflated_attractor(attractor: &Attractor, sampling: &InflationSampling) -> Vec<Vec<f64>> {
    let base = attractor.points();
    let n = base.first().map_or(0, Vec::len);
    let dirs = unit_directions(n, sampling.directions);
    let radii: Vec<f64> = (1..=sampling.layers).map(|k| sampling.radius * k as f64 / sampling.layers as f64).collect();
    let mut out = Vec::with_capacity(base.len() * (1 + dirs.len() * radii.len()));
    for p in &base {
        out.push(p.clone());
        for r in &radii {
            for d in &dirs {
                out.push(p.iter().zip(d).map(|(a, b)| a + r * b).collect());
            }
        }
    }
    out
}

fn unit_directions(n: usize, count: usize) -> Vec<Vec<f64>> {
    if n == 2 {
        let angles = grid_points(0.0, std::f64::consts::TAU, count + 1);
        return angles[..count].iter().map(|a| vec![a.cos(), a.sin()]).collect();
    }
    // ±e_i and normalized ±e_i ± e_j
    let mut dirs = Vec::new();
    for i in 0..n {
        for s in [-1.0, 1.0] {
            let mut d = vec![0.0; n];
            d[i] = s;
            dirs.push(d);
        }
        for j in (i + 1)..n {
            for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let mut d = vec![0.0; n];
                d[i] = si * std::f64::consts::FRAC_1_SQRT_2;
                d[j] = sj * std::f64::consts::FRAC_1_SQRT_2;
                dirs.push(d);
            }
        }
    }
    dirs
}

/// Builds the supervisor and validates c̃_ℓ: every sample of 𝐀 + a𝐁₁ must satisfy
/// V_q̂(x) < c̃_ℓ for every local mode.
pub fn build_supervisor(
    local: Arc<dyn LocalHybridController>,
    global: Arc<dyn Feedback>,
    c_tilde: f64,
    attractor: &Attractor,
    sampling: &InflationSampling,
) -> Result<SupervisorController> {
    let c_l = local.level();
    if !(c_tilde > 0.0 && c_tilde < c_l) {
        return Err(Error::Precondition(format!("need 0 < c̃_ℓ < c_ℓ, got c̃_ℓ = {c_tilde}, c_ℓ = {c_l}")));
    }
    let samples = sample_inflated_attractor(attractor, sampling);
    for q in local.modes() {
        let (worst, at) = samples
            .iter()
            .map(|x| (local.lyapunov(q, x), x))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .ok_or_else(|| Error::Precondition("no attractor samples".into()))?;
        if worst >= c_tilde {
            return Err(Error::Validation {
                what: format!("max of V_{q} over 𝐀 + a𝐁₁ reaches c̃_ℓ = {c_tilde}"),
                value: worst,
                sample: at.clone(),
            });
        }
    }
    Ok(SupervisorController { local, global, c_l, c_tilde, tol: 1e-9 })
}

/// Test hook: builds the supervisor without checking c̃_ℓ (allows c̃_ℓ = c_ℓ).
#[doc(hidden)]
pub fn build_supervisor_unchecked(
    local: Arc<dyn LocalHybridController>,
    global: Arc<dyn Feedback>,
    c_tilde: f64,
) -> SupervisorController {
    let c_l = local.level();
    SupervisorController { local, global, c_l, c_tilde, tol: 1e-9 }
}

impl SupervisorController {
    pub fn c_l(&self) -> f64 {
        self.c_l
    }

    pub fn c_tilde(&self) -> f64 {
        self.c_tilde
    }

    pub fn local(&self) -> &Arc<dyn LocalHybridController> {
        &self.local
    }

    pub fn lyapunov(&self, q: Mode, x: &[f64]) -> f64 {
        self.local.lyapunov(q.local, x)
    }

    fn check_mode(&self, q: Mode) -> Result<()> {
        if (q.stage == 1 || q.stage == 2) && self.local.modes().contains(&q.local) {
            Ok(())
        } else {
            Err(Error::Contract(format!("unknown mode {q}")))
        }
    }
}

impl HybridFeedback for SupervisorController {
    fn mode_count(&self) -> usize {
        2 * self.local.modes().len()
    }

    fn control(&self, q: Mode, x: &[f64]) -> Result<f64> {
        self.check_mode(q)?;
        match q.stage {
            1 => Ok(self.local.feedback(q.local, x)),
            _ => self.global.control(x),
        }
    }

    fn flow_indicator(&self, q: Mode, x: &[f64]) -> f64 {
        let v = self.local.lyapunov(q.local, x);
        match q.stage {
            // cl Ω_{c_ℓ} ∩ C^ℓ
            1 => (v - self.c_l).max(self.local.flow_indicator(q.local, x)),
            // cl(ℝⁿ \ Ω_{c̃_ℓ})
            _ => self.c_tilde - v,
        }
    }

    fn jump_indicator(&self, q: Mode, x: &[f64]) -> f64 {
        let v = self.local.lyapunov(q.local, x);
        match q.stage {
            // (cl Ω_{c_ℓ} ∩ D^ℓ) ∪ cl(ℝⁿ \ Ω_{c_ℓ})
            1 => (v - self.c_l).max(self.local.jump_indicator(q.local, x)).min(self.c_l - v),
            // cl Ω_{c̃_ℓ}
            _ => v - self.c_tilde,
        }
    }

    fn jump_map(&self, q: Mode, x: &[f64]) -> Result<Vec<Mode>> {
        self.check_mode(q)?;
        if self.jump_indicator(q, x) > self.tol {
            return Err(Error::Contract(format!("x = {x:?} is not in the jump set of mode {q}")));
        }
        if q.stage == 2 {
            return Ok(vec![Mode::local_stage(q.local)]);
        }
        let v = self.local.lyapunov(q.local, x);
        let to_global = Mode::global_stage(q.local);
        if v > self.c_l + self.tol {
            return Ok(vec![to_global]);
        }
        let in_local_jump = self.local.jump_indicator(q.local, x) <= self.tol;
        let local_targets = || self.local.jump_map(q.local, x).into_iter().map(Mode::local_stage);
        if (v - self.c_l).abs() <= self.tol {
            // boundary of Ω_{c_ℓ}
            if in_local_jump {
                let mut out: Vec<Mode> = local_targets().collect();
                out.push(to_global);
                return Ok(out);
            }
            return Ok(vec![to_global]);
        }
        Ok(local_targets().collect())
    }

    fn membership_tol(&self) -> f64 {
        self.tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local::QuadraticLocalController;
    use crate::numerics::Mat;

    fn quad_local() -> Arc<dyn LocalHybridController> {
        Arc::new(QuadraticLocalController::new(Mat::identity(2), vec![-1.0, -1.0]))
    }

    fn sup(c_tilde: f64) -> SupervisorController {
        build_supervisor_unchecked(quad_local(), Arc::new(|_: &[f64]| 0.0), c_tilde)
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("2,1".parse::<Mode>().unwrap(), Mode::global_stage(1));
        assert_eq!("(1,1)".parse::<Mode>().unwrap(), Mode::local_stage(1));
        assert!("3,1".parse::<Mode>().is_err());
        assert!("1".parse::<Mode>().is_err());
    }

    #[test]
    fn jump_map_branches() {
        let s = sup(0.75);
        // V = 0.5 ≤ c̃ in mode (2,1)
        assert_eq!(s.jump_map(Mode::global_stage(1), &[0.5, 0.5]).unwrap(), vec![Mode::local_stage(1)]);
        // V = 2 > c_ℓ in mode (1,1)
        assert_eq!(s.jump_map(Mode::local_stage(1), &[1.0, 1.0]).unwrap(), vec![Mode::global_stage(1)]);
        // exactly on ∂Ω_{c_ℓ}: both branches, local first
        let on = [1.0, 0.0];
        assert_eq!(s.jump_map(Mode::local_stage(1), &on).unwrap(), vec![Mode::local_stage(1), Mode::global_stage(1)]);
    }

    #[test]
    fn jump_map_outside_jump_set_is_contract_error() {
        let s = sup(0.75);
        assert!(matches!(s.jump_map(Mode::global_stage(1), &[1.0, 1.0]), Err(Error::Contract(_))));
        assert!(matches!(s.jump_map(Mode::local_stage(1), &[0.1, 0.1]), Err(Error::Contract(_))));
        assert!(s.jump_map(Mode::new(1, 7), &[0.0, 0.0]).is_err());
    }

    #[test]
    fn sets_cover_state_space() {
        let s = sup(0.75);
        for &x in &[[0.0, 0.0], [0.8, 0.0], [1.0, 0.0], [3.0, -2.0]] {
            for q in [Mode::local_stage(1), Mode::global_stage(1)] {
                assert!(s.flow_indicator(q, &x).min(s.jump_indicator(q, &x)) <= 0.0);
            }
        }
    }

    #[test]
    fn precondition_on_levels() {
        let c: Arc<dyn crate::plant::BoundsCertificate> = Arc::new(crate::example::ExampleCertificate::reference(0.1));
        let att = Attractor::new(c, 51).unwrap();
        let err = build_supervisor(quad_local(), Arc::new(|_: &[f64]| 0.0), 1.0, &att, &InflationSampling::default());
        assert!(matches!(err, Err(Error::Precondition(_))));
        let err = build_supervisor(quad_local(), Arc::new(|_: &[f64]| 0.0), 0.0, &att, &InflationSampling::default());
        assert!(matches!(err, Err(Error::Precondition(_))));
    }

    #[test]
    fn inflated_sampling_size() {
        let c: Arc<dyn crate::plant::BoundsCertificate> = Arc::new(crate::example::ExampleCertificate::reference(0.1));
        let att = Attractor::new(c, 101).unwrap();
        let pts = sample_inflated_attractor(&att, &InflationSampling::default());
        assert!(pts.len() >= 1000);
        let worst = pts.iter().map(|p| att.distance(p)).fold(0.0, f64::max);
        assert!(worst <= 0.01 + 1e-9);
    }
}
