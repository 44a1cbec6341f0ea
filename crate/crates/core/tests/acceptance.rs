//! End-to-end acceptance run on the benchmark instance. Prints one PASS/FAIL
//! line per criterion and exits nonzero if any criterion fails.

use std::sync::Arc;
use std::time::Instant;

use hystab::backstepping::GainPolicy;
use hystab::example::{derived_constants, golden_certificate, k1_window, listed_d_family, ExampleInstance, ListedD};
use hystab::hybrid::{
    build_supervisor_unchecked, simulate, write_arc_csv, ContinuousLoop, FailureKind, HybridArc, Mode, SimConfig,
};
use hystab::local::{
    attractor_slopes, certificate_to_local_controller, hull_of_attractor, linearize, synthesize, verify_certificate,
    vertex_matrices, LmiSystem, QuadraticLocalController, SolverConfig,
};
use hystab::pipeline::{example_attractor, example_backstepping, example_lmi_system, example_supervisor};
use hystab::plant::Attractor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

fn near(v: f64, target: f64, tol: f64) -> bool {
    (v - target).abs() <= tol
}

fn golden_verification() -> Check {
    let inst = ExampleInstance::reference();
    let start = Instant::now();
    let sys = example_lmi_system(&inst).map_err(|e| e.to_string())?;
    let report = verify_certificate(&golden_certificate(), &sys).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    let s = &report.schur;
    for (i, v) in s.hull_levels.iter().enumerate() {
        ensure(near(*v, 0.5388, 0.01) || near(*v, 0.5185, 0.01), format!("hull vertex {i}: x'Px = {v:.5}"))?;
    }
    ensure(near(s.kwk, 9.02, 0.05) && s.kwk <= s.mu_u_sq, format!("KWK' = {:.4}", s.kwk))?;
    ensure(near(s.w_diag[0], 0.2755, 1e-3) && s.w_diag[0] <= 1.0, format!("W11 = {:.5}", s.w_diag[0]))?;
    ensure(near(s.w_diag[1], 0.9039, 1e-3) && s.w_diag[1] <= 4.0, format!("W22 = {:.5}", s.w_diag[1]))?;
    ensure(
        report.decrease_max_eig.iter().all(|e| *e < 0.0),
        format!("decrease block maxima {:?}", report.decrease_max_eig),
    )?;
    ensure(report.pass, format!("report FAIL under `{}`", report.d_interpretation))?;
    ensure(elapsed < 1.0, format!("runtime {elapsed:.3} s"))?;
    Ok(format!(
        "x'Px at hull vertices {:.4?}, KWK' = {:.4}, W11 = {:.4}, W22 = {:.4}, decrease margin {:.3e}, D family `{}`, {:.3} s",
        s.hull_levels,
        s.kwk,
        s.w_diag[0],
        s.w_diag[1],
        report.decrease_margin(),
        report.d_interpretation,
        elapsed
    ))
}

fn listed_d_readings() -> Check {
    let inst = ExampleInstance::reference();
    let pair = linearize(&inst.plant()).map_err(|e| e.to_string())?;
    let hull = hull_of_attractor(&inst.certificate()).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for reading in [ListedD::AsD, ListedD::AsGPlusD] {
        let fam = listed_d_family(inst.theta, reading);
        let sys = LmiSystem::new(&pair, &fam, &inst.box_neighborhood(), &hull).map_err(|e| e.to_string())?;
        let r = verify_certificate(&golden_certificate(), &sys).map_err(|e| e.to_string())?;
        parts.push(format!("{} {}", r.d_interpretation, if r.pass { "PASS" } else { "FAIL" }));
    }
    Ok(parts.join(", "))
}

fn constants() -> Check {
    let (eps, m) = derived_constants(0.1, 0.5).map_err(|e| e.to_string())?;
    let w = k1_window(0.1, [1.0, 2.0]);
    let s = attractor_slopes(&ExampleInstance::reference().certificate()).map_err(|e| e.to_string())?;
    ensure(eps == 0.7, format!("eps_max = {eps:.17}"))?;
    ensure(near(m, 0.071429, 1e-6), format!("M_min = {m}"))?;
    ensure(near(w.lower, 0.2, 1e-12) && near(w.upper, 0.8, 1e-12) && !w.empty, format!("K1 window {w:?}"))?;
    ensure(
        near(s.a_plus, -1.42442, 1e-4) && near(s.a_minus, -1.57558, 1e-4),
        format!("a+ = {}, a- = {}", s.a_plus, s.a_minus),
    )?;
    Ok(format!(
        "eps_max = {eps}, M_min = {m:.7}, window = ({:.3}, {:.3}), a+ = {:.5}, a- = {:.5}",
        w.lower, w.upper, s.a_plus, s.a_minus
    ))
}

fn synthesis() -> Check {
    let inst = ExampleInstance::reference();
    let start = Instant::now();
    let sys = example_lmi_system(&inst).map_err(|e| e.to_string())?;
    let cert = synthesize(&sys, &SolverConfig::default()).map_err(|e| e.to_string())?;
    let report = verify_certificate(&cert, &sys).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    ensure(report.pass, "synthesized certificate does not verify".into())?;
    ensure(elapsed < 30.0, format!("runtime {elapsed:.2} s"))?;
    Ok(format!(
        "decrease margin {:.3e}, psd margin {:.3e}, {:.2} s",
        report.decrease_margin(),
        report.psd_margin(),
        elapsed
    ))
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn state_at(arc: &HybridArc, t: f64) -> Option<&[f64]> {
    arc.samples.iter().find(|s| s.t >= t).map(|s| s.x.as_slice())
}

fn closed_loop(arcs: &mut Vec<HybridArc>) -> Check {
    let inst = ExampleInstance::reference();
    let start = Instant::now();
    let global = example_backstepping(&inst, GainPolicy::Empirical).map_err(|e| e.to_string())?;
    let sup = example_supervisor(&inst, &golden_certificate(), global, inst.c_tilde).map_err(|e| e.to_string())?;
    let arc = simulate(&inst.plant(), &sup, &[2.0, 0.0], Mode::global_stage(1), &SimConfig::benchmark(15.0))
        .map_err(|f| f.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    ensure(arc.jumps.len() == 1, format!("{} jumps", arc.jumps.len()))?;
    let jump = &arc.jumps[0];
    ensure(
        jump.from == Mode::global_stage(1) && jump.to == Mode::local_stage(1),
        format!("jump {} -> {}", jump.from, jump.to),
    )?;
    ensure((2.9..=4.9).contains(&jump.t), format!("first switch at {:.4}", jump.t))?;
    let later = state_at(&arc, jump.t + 10.0).ok_or("arc ends before t_switch + 10")?;
    ensure(norm(later) <= 1e-2, format!("|x(t_switch + 10)| = {:.3e}", norm(later)))?;
    ensure(elapsed < 10.0, format!("runtime {elapsed:.2} s"))?;
    let msg = format!(
        "jump {} -> {} at t = {:.4}, |x(t_switch + 10)| = {:.3e}, {:.2} s",
        jump.from,
        jump.to,
        jump.t,
        norm(later),
        elapsed
    );
    arcs.push(arc);
    Ok(msg)
}

fn practical_stability() -> Check {
    let inst = ExampleInstance::reference();
    let ctrl = example_backstepping(&inst, GainPolicy::Empirical).map_err(|e| e.to_string())?;
    let a_prime = ctrl.params.a_prime;
    let attractor: Attractor = example_attractor(&inst).map_err(|e| e.to_string())?;
    let plant = inst.plant();
    let looped = ContinuousLoop { feedback: ctrl.clone(), mode: Mode::global_stage(1) };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_entry = 0.0f64;
    let mut worst_rise = f64::NEG_INFINITY;
    for run in 0..50 {
        let mut x: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x_init = x.clone();
        let mut t0 = 0.0;
        let mut entered = None;
        while t0 < 30.0 && entered.is_none() {
            let arc = simulate(&plant, &looped, &x, Mode::global_stage(1), &SimConfig::benchmark(1.0))
                .map_err(|f| format!("run {run} from {x_init:?}: {f}"))?;
            let mut prev: Option<f64> = None;
            for s in &arc.samples {
                let v = ctrl.composite_v(&s.x);
                if let Some(p) = prev {
                    if p > a_prime {
                        worst_rise = worst_rise.max(v - p);
                        ensure(v <= p + 1e-6, format!("run {run}: V rises {p:.6} -> {v:.6} at t = {:.4}", t0 + s.t))?;
                    }
                }
                prev = Some(v);
                if entered.is_none() && attractor.distance(&s.x) <= 0.05 {
                    entered = Some(t0 + s.t);
                }
            }
            x = arc.last().x.clone();
            t0 += 1.0;
        }
        let t = entered.ok_or(format!("run {run} from {x_init:?} misses A + 0.05B within 30 s"))?;
        worst_entry = worst_entry.max(t);
    }
    Ok(format!(
        "50/50 runs enter A + 0.05B, latest at t = {worst_entry:.3} s; largest V step above a' = {worst_rise:.3e}"
    ))
}

fn local_decrease() -> Check {
    let inst = ExampleInstance::reference();
    let g = golden_certificate();
    let sys = example_lmi_system(&inst).map_err(|e| e.to_string())?;
    let ctrl: QuadraticLocalController = certificate_to_local_controller(&g, &sys).map_err(|e| e.to_string())?;
    let plant = inst.plant();
    let half = [g.w[(0, 0)].sqrt(), g.w[(1, 1)].sqrt()];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut count, mut worst) = (0usize, f64::NEG_INFINITY);
    while count < 10_000 {
        let x = [rng.gen_range(-half[0]..half[0]), rng.gen_range(-half[1]..half[1])];
        if ctrl.p.quad_form(&x) > 1.0 || norm(&x) <= 1e-4 {
            continue;
        }
        count += 1;
        let rate = ctrl.lyapunov_rate(&plant, &x);
        ensure(rate < 0.0, format!("dV/dt = {rate:e} at {x:?}"))?;
        worst = worst.max(rate / ctrl.p.quad_form(&x));
    }
    Ok(format!("10000 samples, largest dV/dt / V = {worst:.4}"))
}

fn ldi_bounds() -> Check {
    let inst = ExampleInstance::reference();
    let fam =
        vertex_matrices(&inst.plant(), &inst.box_neighborhood(), &inst.vertex_config()).map_err(|e| e.to_string())?;
    let mut expected_c = [[(0.0, 0.0); 2]; 2];
    expected_c[0][0] = (-0.3, 0.3);
    let expected_d = [(-0.3, 0.1), (0.0, 0.0)];
    let mut worst = 0.0f64;
    let raw = fam.c_raw.iter().flatten().chain(&fam.d_raw);
    let expected = expected_c.iter().flatten().chain(&expected_d);
    for (r, e) in raw.zip(expected) {
        worst = worst.max((r.lo - e.0).abs()).max((r.hi - e.1).abs());
    }
    ensure(worst <= 1e-3, format!("largest deviation {worst:e}"))?;
    Ok(format!(
        "c11 = [{:.6}, {:.6}], d1 = [{:.6}, {:.6}], largest deviation {worst:.2e}",
        fam.c_raw[0][0].lo, fam.c_raw[0][0].hi, fam.d_raw[0].lo, fam.d_raw[0].hi
    ))
}

fn well_formed(arcs: &mut Vec<HybridArc>) -> Check {
    let inst = ExampleInstance::reference();
    let global = example_backstepping(&inst, GainPolicy::Empirical).map_err(|e| e.to_string())?;
    let sup = example_supervisor(&inst, &golden_certificate(), global, inst.c_tilde).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let x0 = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let arc = simulate(&inst.plant(), &sup, &x0, Mode::global_stage(1), &SimConfig::benchmark(8.0))
            .map_err(|f| f.to_string())?;
        arcs.push(arc);
    }
    for (i, arc) in arcs.iter().enumerate() {
        arc.check_time_domain().map_err(|e| format!("arc {i}: {e}"))?;
    }
    let csv = |arc: &HybridArc| {
        let mut buf = Vec::new();
        write_arc_csv(arc, &mut buf).map(|_| buf)
    };
    let run = || simulate(&inst.plant(), &sup, &[2.0, 0.0], Mode::global_stage(1), &SimConfig::benchmark(15.0));
    let a = csv(&run().map_err(|f| f.to_string())?).map_err(|e| e.to_string())?;
    let b = csv(&run().map_err(|f| f.to_string())?).map_err(|e| e.to_string())?;
    ensure(a == b, "repeated runs differ".into())?;
    Ok(format!("{} arcs well formed, repeated CSV byte-identical ({} bytes)", arcs.len(), a.len()))
}

fn zeno_guard() -> Check {
    let inst = ExampleInstance::reference();
    let start = Instant::now();
    let sys = example_lmi_system(&inst).map_err(|e| e.to_string())?;
    let local = certificate_to_local_controller(&golden_certificate(), &sys).map_err(|e| e.to_string())?;
    let global = example_backstepping(&inst, GainPolicy::Empirical).map_err(|e| e.to_string())?;
    let sup = build_supervisor_unchecked(Arc::new(local), Arc::new(global), 1.0);
    let out = simulate(&inst.plant(), &sup, &[2.0, 0.0], Mode::global_stage(1), &SimConfig::benchmark(15.0));
    let elapsed = start.elapsed().as_secs_f64();
    let failure = match out {
        Ok(arc) => return Err(format!("no error, terminated with {:?}", arc.termination)),
        Err(f) => f,
    };
    let FailureKind::Zeno { t, jumps_at_t } = failure.kind else {
        return Err(format!("wrong failure: {failure}"));
    };
    ensure(elapsed < 5.0, format!("runtime {elapsed:.2} s"))?;
    Ok(format!("Zeno at t = {t:.4} after {jumps_at_t} jumps at that instant, {elapsed:.2} s"))
}

fn main() {
    let mut arcs = Vec::new();
    let results: Vec<(&str, Check)> = vec![
        ("1 golden certificate verification", golden_verification()),
        ("1 alternative D readings (informational)", listed_d_readings()),
        ("2 constant reproduction", constants()),
        ("3 synthesis feasibility", synthesis()),
        ("4 closed-loop switch and convergence", closed_loop(&mut arcs)),
        ("5 practical stability of the backstepping loop", practical_stability()),
        ("6 local Lyapunov decrease", local_decrease()),
        ("7 LDI bound oracle", ldi_bounds()),
        ("8 hybrid arc well-formedness and determinism", well_formed(&mut arcs)),
        ("9 degenerate hysteresis guard", zeno_guard()),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(msg) => println!("PASS criterion {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name}: {msg}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
