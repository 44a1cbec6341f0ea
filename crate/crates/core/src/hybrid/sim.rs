use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use super::{HybridFeedback, Mode};
use crate::numerics::norm2;
use crate::numerics::ode::{dopri5_step, next_step_size, Tolerances};
use crate::plant::{eval_dynamics, Plant};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub jump_budget: usize,
    pub rtol: f64,
    pub atol: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub h_init: f64,
    /// Bisection target on the jump-set indicator when localizing a crossing.
    pub event_tol: f64,
    /// ‖x‖ at or below which the run stops as converged.
    pub converge_tol: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 10.0,
            jump_budget: 1000,
            rtol: 1e-8,
            atol: 1e-10,
            h_min: 1e-12,
            h_max: 0.1,
            h_init: 1e-4,
            event_tol: 1e-10,
            converge_tol: 1e-9,
        }
    }
}

impl SimConfig {
    /// Settings for the stiff backstepping loop of the benchmark.
    pub fn benchmark(horizon: f64) -> Self {
        Self { horizon, h_max: 1e-3, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Sample {
    pub t: f64,
    pub j: usize,
    pub x: Vec<f64>,
    pub q: Mode,
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct JumpRecord {
    pub t: f64,
    /// Jump counter before the jump.
    pub j: usize,
    pub from: Mode,
    pub to: Mode,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Horizon,
    JumpBudget,
    Converged,
    Zeno,
    Stiffness,
    Error(String),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct HybridArc {
    pub samples: Vec<Sample>,
    pub jumps: Vec<JumpRecord>,
    pub termination: Termination,
}

impl HybridArc {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("arcs start with the initial sample")
    }

    /// Checks t nondecreasing, unit jump increments, x unchanged across jumps,
    /// and j constant along flows.
    pub fn check_time_domain(&self) -> std::result::Result<(), String> {
        for w in self.samples.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.t < a.t {
                return Err(format!("time decreases at t = {}", a.t));
            }
            match b.j - a.j {
                0 => {}
                1 => {
                    if b.t != a.t {
                        return Err(format!("jump at t = {} changes time", a.t));
                    }
                    let dx: Vec<f64> = a.x.iter().zip(&b.x).map(|(p, q)| p - q).collect();
                    if norm2(&dx) > 1e-12 {
                        return Err(format!("state moves across the jump at t = {}", a.t));
                    }
                }
                _ => return Err(format!("j skips from {} to {}", a.j, b.j)),
            }
            if b.j == a.j && b.q != a.q {
                return Err(format!("mode changes without a jump at t = {}", b.t));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Zeno { t: f64, jumps_at_t: usize },
    Stiffness { t: f64, x: Vec<f64>, h: f64 },
    Evaluation(String),
}

/// A failed run together with the arc computed up to the failure.
#[derive(Debug, Clone)]
pub struct SimulationFailure {
    pub kind: FailureKind,
    pub arc: HybridArc,
}

impl fmt::Display for SimulationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            FailureKind::Zeno { t, jumps_at_t } => write!(f, "Zeno guard: {jumps_at_t} jumps at t = {t}"),
            FailureKind::Stiffness { t, x, h } => write!(f, "step size {h:e} below minimum at t = {t}, x = {x:?}"),
            FailureKind::Evaluation(msg) => write!(f, "evaluation failed: {msg}"),
        }
    }
}

impl std::error::Error for SimulationFailure {}

struct Run<'a, P: ?Sized, S: ?Sized> {
    plant: &'a P,
    system: &'a S,
    samples: Vec<Sample>,
    jumps: Vec<JumpRecord>,
}

impl<P: Plant + ?Sized, S: HybridFeedback + ?Sized> Run<'_, P, S> {
    fn rhs(&self, q: Mode, x: &[f64]) -> Result<Vec<f64>> {
        let u = self.system.control(q, x)?;
        eval_dynamics(self.plant, x, u)
    }

    fn record(&mut self, t: f64, j: usize, x: &[f64], q: Mode) -> Result<()> {
        let u = self.system.control(q, x)?;
        self.samples.push(Sample { t, j, x: x.to_vec(), q, u });
        Ok(())
    }

    fn finish(self, termination: Termination) -> HybridArc {
        HybridArc { samples: self.samples, jumps: self.jumps, termination }
    }

    fn fail(self, kind: FailureKind) -> SimulationFailure {
        let term = match &kind {
            FailureKind::Zeno { .. } => Termination::Zeno,
            FailureKind::Stiffness { .. } => Termination::Stiffness,
            FailureKind::Evaluation(m) => Termination::Error(m.clone()),
        };
        SimulationFailure { kind, arc: self.finish(term) }
    }

    /// First non-identity target if x is in the jump set.
    fn jump_target(&self, q: Mode, x: &[f64]) -> Result<Option<Mode>> {
        if self.system.jump_indicator(q, x) > self.system.membership_tol() {
            return Ok(None);
        }
        Ok(self.system.jump_map(q, x)?.into_iter().find(|m| *m != q))
    }
}

/// Simulates the hybrid closed loop from (x0, q0).
///
/// Flows with Dormand–Prince 5(4), checks the jump set after every accepted
/// step, and localizes first entries by bisection on the step. When a jump is
/// enabled it is taken; jumps that leave q unchanged are skipped.
pub fn simulate<P, S>(
    plant: &P,
    system: &S,
    x0: &[f64],
    q0: Mode,
    cfg: &SimConfig,
) -> std::result::Result<HybridArc, SimulationFailure>
where
    P: Plant + ?Sized,
    S: HybridFeedback + ?Sized,
{
    let mut run = Run { plant, system, samples: Vec::new(), jumps: Vec::new() };
    let tol = system.membership_tol();
    macro_rules! attempt {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(err) => return Err(run.fail(FailureKind::Evaluation(err.to_string()))),
            }
        };
    }
    if x0.len() != plant.dim() {
        return Err(run.fail(FailureKind::Evaluation(format!(
            "x0 has {} entries, plant dimension {}",
            x0.len(),
            plant.dim()
        ))));
    }
    if system.flow_indicator(q0, x0).min(system.jump_indicator(q0, x0)) > tol {
        return Err(run.fail(FailureKind::Evaluation(format!("x0 is in neither the flow nor the jump set of {q0}"))));
    }
    let odetol = Tolerances { rtol: cfg.rtol, atol: cfg.atol };
    let zeno_limit = 2 * system.mode_count();
    let (mut t, mut j, mut x, mut q) = (0.0f64, 0usize, x0.to_vec(), q0);
    let mut h = cfg.h_init.min(cfg.h_max);
    let mut same_instant = 0usize;
    let mut last_jump_t = f64::NAN;
    attempt!(run.record(t, j, &x, q));

    loop {
        if let Some(target) = attempt!(run.jump_target(q, &x)) {
            if run.jumps.len() >= cfg.jump_budget {
                return Ok(run.finish(Termination::JumpBudget));
            }
            same_instant = if t == last_jump_t { same_instant + 1 } else { 1 };
            last_jump_t = t;
            if same_instant > zeno_limit {
                return Err(run.fail(FailureKind::Zeno { t, jumps_at_t: same_instant }));
            }
            run.jumps.push(JumpRecord { t, j, from: q, to: target });
            j += 1;
            q = target;
            attempt!(run.record(t, j, &x, q));
            continue;
        }
        if norm2(&x) <= cfg.converge_tol {
            return Ok(run.finish(Termination::Converged));
        }
        if t >= cfg.horizon {
            return Ok(run.finish(Termination::Horizon));
        }

        h = h.min(cfg.h_max).min(cfg.horizon - t);
        let step = attempt!(dopri5_step(|_, y: &[f64]| run.rhs(q, y), t, &x, h, odetol));
        let finite = step.error.is_finite() && step.y.iter().all(|v| v.is_finite());
        if !finite || step.error > 1.0 {
            let shrink = if finite { next_step_size(h, step.error) } else { 0.2 * h };
            h = shrink.min(0.9 * h);
            if h < cfg.h_min {
                return Err(run.fail(FailureKind::Stiffness { t, x: x.clone(), h }));
            }
            continue;
        }

        let before = system.jump_indicator(q, &x);
        let after = system.jump_indicator(q, &step.y);
        if before > tol && after <= tol {
            // localize the first entry into the jump set
            let (frac, y) = if after > 0.0 {
                (1.0, step.y.clone())
            } else {
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                let mut y_hi = step.y.clone();
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    let trial = attempt!(dopri5_step(|_, y: &[f64]| run.rhs(q, y), t, &x, mid * h, odetol));
                    let d = system.jump_indicator(q, &trial.y);
                    if d > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                        y_hi = trial.y;
                        if d >= -cfg.event_tol {
                            break;
                        }
                    }
                    if hi - lo <= f64::EPSILON {
                        break;
                    }
                }
                (hi, y_hi)
            };
            t = if frac == 1.0 { t + h } else { t + frac * h };
            x = y;
            attempt!(run.record(t, j, &x, q));
            continue;
        }

        t += h;
        x = step.y;
        attempt!(run.record(t, j, &x, q));
        h = next_step_size(h, step.error);
        if h < cfg.h_min {
            return Err(run.fail(FailureKind::Stiffness { t, x: x.clone(), h }));
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ModeDuration {
    pub q1: u8,
    pub q2: usize,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ArcMetrics {
    pub first_switch_time: Option<f64>,
    pub total_jumps: usize,
    pub final_time: f64,
    pub final_norm: f64,
    pub per_mode: Vec<ModeDuration>,
    pub termination: Termination,
}

pub fn arc_metrics(arc: &HybridArc) -> Result<ArcMetrics> {
    let last = arc.samples.last().ok_or_else(|| Error::Precondition("empty arc".into()))?;
    let mut per: BTreeMap<Mode, f64> = BTreeMap::new();
    for w in arc.samples.windows(2) {
        if w[0].j == w[1].j {
            *per.entry(w[0].q).or_default() += w[1].t - w[0].t;
        }
    }
    per.entry(last.q).or_default();
    Ok(ArcMetrics {
        first_switch_time: arc.jumps.first().map(|r| r.t),
        total_jumps: arc.jumps.len(),
        final_time: last.t,
        final_norm: norm2(&last.x),
        per_mode: per.into_iter().map(|(m, d)| ModeDuration { q1: m.stage, q2: m.local, duration: d }).collect(),
        termination: arc.termination.clone(),
    })
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `t,j,x1,...,xn,q1,q2,u`, one row per sample, floats at 17 significant digits.
pub fn write_arc_csv<W: Write>(arc: &HybridArc, mut out: W) -> Result<()> {
    let n = arc.samples.first().map_or(0, |s| s.x.len());
    let mut header = vec!["t".to_string(), "j".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend(["q1".to_string(), "q2".to_string(), "u".to_string()]);
    writeln!(out, "{}", header.join(","))?;
    for s in &arc.samples {
        let mut row = vec![fmt17(s.t), s.j.to_string()];
        row.extend(s.x.iter().map(|&v| fmt17(v)));
        row.extend([s.q.stage.to_string(), s.q.local.to_string(), fmt17(s.u)]);
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
