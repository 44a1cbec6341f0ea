//! End-to-end assembly for the benchmark instance.

use std::sync::Arc;

use crate::backstepping::{largest_delta, BacksteppingController, BacksteppingParams, GainPolicy, InclusionSearch};
use crate::example::{golden_certificate, ExampleInstance};
use crate::hybrid::{build_supervisor, simulate, HybridArc, InflationSampling, Mode, SimConfig, SupervisorController};
use crate::local::{
    certificate_to_local_controller, hull_of_attractor, linearize, vertex_matrices, LmiCertificate, LmiSystem,
};
use crate::plant::{Attractor, BoundsCertificate, Plant};
use crate::{Error, Result};

/// Linearization, vertex family and hull assembled into an LMI system.
pub fn example_lmi_system(inst: &ExampleInstance) -> Result<LmiSystem<f64>> {
    let plant = inst.plant();
    let pair = linearize(&plant)?;
    let family = vertex_matrices(&plant, &inst.box_neighborhood(), &inst.vertex_config())?;
    let hull = hull_of_attractor(&inst.certificate())?;
    LmiSystem::new(&pair, &family, &inst.box_neighborhood(), &hull)
}

pub fn example_attractor(inst: &ExampleInstance) -> Result<Attractor> {
    Attractor::new(Arc::new(inst.certificate()), 401)
}

/// φ_g with the instance's K_V, a, c and the largest a′ passing the inclusion check.
pub fn example_backstepping(inst: &ExampleInstance, policy: GainPolicy) -> Result<BacksteppingController> {
    let attractor = example_attractor(inst)?;
    let delta =
        largest_delta(&attractor, inst.k_v, inst.a, &InclusionSearch::default())?.map_err(|x| Error::SearchFailed {
            reason: format!("K_V = {} admits no a′ > M for a = {}", inst.k_v, inst.a),
            counterexample: x,
        })?;
    let params = BacksteppingParams { k_v: inst.k_v, a: inst.a, a_prime: inst.m + delta, c: inst.c };
    let plant: Arc<dyn Plant> = Arc::new(inst.plant());
    let cert: Arc<dyn BoundsCertificate> = Arc::new(inst.certificate());
    BacksteppingController::new(plant, cert, params, policy)
}

/// Supervisor combining φ_g with the given local certificate at level c̃_ℓ.
pub fn example_supervisor(
    inst: &ExampleInstance,
    local: &LmiCertificate<f64>,
    global: BacksteppingController,
    c_tilde: f64,
) -> Result<SupervisorController> {
    let sys = example_lmi_system(inst)?;
    let local = certificate_to_local_controller(local, &sys)?;
    let attractor = example_attractor(inst)?;
    let sampling = InflationSampling { radius: inst.a, ..Default::default() };
    build_supervisor(Arc::new(local), Arc::new(global), c_tilde, &attractor, &sampling)
}

/// Runs the hybrid closed loop of the instance with the reference local certificate.
pub fn simulate_example(inst: &ExampleInstance, x0: &[f64], q0: Mode, horizon: f64) -> Result<HybridArc> {
    let global = example_backstepping(inst, GainPolicy::Empirical)?;
    let sup = example_supervisor(inst, &golden_certificate(), global, inst.c_tilde)?;
    simulate(&inst.plant(), &sup, x0, q0, &SimConfig::benchmark(horizon)).map_err(|f| Error::Simulation(Box::new(f)))
}
