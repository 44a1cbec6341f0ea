//! Command-line front end.
//!
//! Every command accepts `--config FILE` (a JSON object with the same keys as
//! the flags, kebab-case); flags override file values. Each run writes a
//! `manifest.json` next to its outputs.
//!
//! Exit codes: 0 success, 1 other failure, 2 infeasible or failed verification,
//! 3 configuration error, 4 simulation runtime error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::backstepping::GainPolicy;
use crate::example::{golden_certificate, listed_d_family, ExampleInstance, ListedD};
use crate::hybrid::{arc_metrics, simulate, write_arc_csv, ArcMetrics, Mode, SimConfig};
use crate::local::{
    certificate_from_json, certificate_to_json, hull_of_attractor, linearize, sublevel_boundary_2d, synthesize,
    verify_certificate, LmiCertificate, LmiSystem, SolverConfig,
};
use crate::pipeline::{example_backstepping, example_lmi_system, example_supervisor};
use crate::plant::{BoundsCertificate, Plant};
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_SIMULATION: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "hystab", version, about = "Hybrid stabilization: synthesis, verification and simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize (or verify) a local LMI certificate.
    Synth(SynthArgs),
    /// Simulate the hybrid closed loop.
    Simulate(SimulateArgs),
    /// Write boundary samples of the sets involved (n = 2 only).
    ExportSets(ExportArgs),
    /// Write the benchmark instance and the reference certificate as JSON.
    ExportInstance(InstanceArgs),
}

#[derive(Debug, Args, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
pub struct CommonArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Plant name from the registry (`example`).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plant: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SynthArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// Only verify the certificate given by --cert.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub verify_only: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cert: Option<PathBuf>,
    /// Input-perturbation family: derived, listed-as-d or listed-as-g+d.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_reading: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// Initial state, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Initial mode as `stage,local`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q0: Option<String>,
    /// Horizon in seconds.
    #[arg(long = "T", alias = "horizon")]
    #[serde(rename = "horizon", skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Number of random initial states; overrides --x0.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<usize>,
    /// Sampling interval for every coordinate in a sweep, `lo,hi`.
    #[arg(long = "box", value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(rename = "box", skip_serializing_if = "Option::is_none")]
    pub sample_box: Option<Vec<f64>>,
    /// Local certificate JSON; the reference one by default.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cert: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_tilde: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExportArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cert: Option<PathBuf>,
    /// Points per curve.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct InstanceArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct SynthConfig {
    plant: String,
    theta: f64,
    out_dir: PathBuf,
    seed: u64,
    verify_only: bool,
    cert: Option<PathBuf>,
    d_reading: String,
    iterations: usize,
    restarts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            plant: "example".into(),
            theta: 0.1,
            out_dir: "out".into(),
            seed: 0,
            verify_only: false,
            cert: None,
            d_reading: "derived".into(),
            iterations: s.iterations,
            restarts: s.restarts,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct SimulateConfig {
    plant: String,
    theta: f64,
    out_dir: PathBuf,
    seed: u64,
    x0: Vec<f64>,
    q0: String,
    horizon: f64,
    sweep: Option<usize>,
    #[serde(rename = "box")]
    sample_box: Vec<f64>,
    cert: Option<PathBuf>,
    c_tilde: Option<f64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            plant: "example".into(),
            theta: 0.1,
            out_dir: "out".into(),
            seed: 0,
            x0: vec![2.0, 0.0],
            q0: "2,1".into(),
            horizon: 15.0,
            sweep: None,
            sample_box: vec![-3.0, 3.0],
            cert: None,
            c_tilde: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct ExportConfig {
    plant: String,
    theta: f64,
    out_dir: PathBuf,
    seed: u64,
    cert: Option<PathBuf>,
    samples: usize,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self { plant: "example".into(), theta: 0.1, out_dir: "out".into(), seed: 0, cert: None, samples: 721 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct InstanceConfig {
    plant: String,
    theta: f64,
    out_dir: PathBuf,
    seed: u64,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self { plant: "example".into(), theta: 0.1, out_dir: "out".into(), seed: 0 }
    }
}

/// Failure carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InfeasibilitySuspected { .. } => EXIT_INFEASIBLE,
            Error::Config(_) | Error::Json(_) => EXIT_CONFIG,
            Error::Simulation(_) => EXIT_SIMULATION,
            _ => EXIT_OTHER,
        };
        Failure { code, message: e.to_string() }
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure { code: EXIT_CONFIG, message: msg.into() }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: EXIT_OTHER, message: format!("{}: {e}", path.display()) }
}

/// Defaults, then the config file, then the flags.
fn resolve<C: Serialize + DeserializeOwned + Default>(
    file: Option<&Path>,
    flags: &impl Serialize,
) -> Result<C, Failure> {
    let mut merged = match serde_json::to_value(C::default()) {
        Ok(Value::Object(m)) => m,
        _ => Map::new(),
    };
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let Value::Object(m) = v else {
            return Err(config_error(format!("{}: config must be a JSON object", path.display())));
        };
        merged.extend(m);
    }
    if let Ok(Value::Object(m)) = serde_json::to_value(flags) {
        merged.extend(m);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| config_error(format!("invalid configuration: {e}")))
}

fn instance_for(plant: &str, theta: f64) -> Result<ExampleInstance, Failure> {
    match plant {
        "example" => ExampleInstance::with_theta(theta).map_err(|e| config_error(e.to_string())),
        other => Err(config_error(format!("unknown plant `{other}` (registered: example)"))),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    config: &'a C,
    versions: Versions,
    seed: u64,
    outputs: Vec<String>,
    status: &'a str,
}

#[derive(Serialize)]
struct Versions {
    hystab: &'static str,
    config_schema: u32,
}

fn write_manifest<C: Serialize>(
    dir: &Path,
    command: &str,
    config: &C,
    seed: u64,
    outputs: &[String],
    status: &str,
) -> Result<(), Failure> {
    let m = Manifest {
        command,
        config,
        versions: Versions { hystab: env!("CARGO_PKG_VERSION"), config_schema: 1 },
        seed,
        outputs: outputs.to_vec(),
        status,
    };
    write(&dir.join("manifest.json"), to_json(&m)? + "\n")
}

fn to_json<T: Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(v).map_err(|e| Failure::from(Error::from(e)))
}

fn load_certificate(path: Option<&Path>) -> Result<LmiCertificate<f64>, Failure> {
    match path {
        None => Ok(golden_certificate()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| config_error(format!("{}: {e}", p.display())))?;
            certificate_from_json(&text).map_err(|e| config_error(format!("{}: {e}", p.display())))
        }
    }
}

fn lmi_system(inst: &ExampleInstance, d_reading: &str) -> Result<LmiSystem<f64>, Failure> {
    let derived = example_lmi_system(inst)?;
    let reading = match d_reading {
        "derived" => return Ok(derived),
        "listed-as-d" => ListedD::AsD,
        "listed-as-g+d" => ListedD::AsGPlusD,
        other => return Err(config_error(format!("unknown d-reading `{other}`"))),
    };
    let pair = linearize(&inst.plant())?;
    let family = listed_d_family(inst.theta, reading);
    let hull = hull_of_attractor(&inst.certificate())?;
    Ok(LmiSystem::new(&pair, &family, &inst.box_neighborhood(), &hull)?)
}

fn cmd_synth(args: &SynthArgs) -> Result<i32, Failure> {
    let cfg: SynthConfig = resolve(args.common.config.as_deref(), args)?;
    let inst = instance_for(&cfg.plant, cfg.theta)?;
    let sys = lmi_system(&inst, &cfg.d_reading)?;
    let dir = cfg.out_dir.clone();
    let (cert, status) = if cfg.verify_only {
        let path = cfg.cert.as_deref().ok_or_else(|| config_error("--verify-only needs --cert"))?;
        (load_certificate(Some(path))?, "verified")
    } else {
        let solver =
            SolverConfig { iterations: cfg.iterations, restarts: cfg.restarts, seed: cfg.seed, ..Default::default() };
        match synthesize(&sys, &solver) {
            Ok(c) => (c, "synthesized"),
            Err(e) => {
                let f = Failure::from(e);
                write_manifest(&dir, "synth", &cfg, cfg.seed, &[], "infeasible")?;
                return Err(f);
            }
        }
    };
    let report = verify_certificate(&cert, &sys)?;
    let mut outputs = vec!["margins.json".to_string()];
    write(&dir.join("margins.json"), to_json(&report)? + "\n")?;
    if !cfg.verify_only {
        write(&dir.join("certificate.json"), certificate_to_json(&cert, Some(&report))? + "\n")?;
        outputs.push("certificate.json".into());
    }
    let status = if report.pass { status } else { "failed" };
    write_manifest(&dir, "synth", &cfg, cfg.seed, &outputs, status)?;
    println!(
        "{}: decrease margin {:.6e}, psd margin {:.6e}, D family {} -> {}",
        status,
        report.decrease_margin(),
        report.psd_margin(),
        report.d_interpretation,
        if report.pass { "PASS" } else { "FAIL" }
    );
    Ok(if report.pass { EXIT_OK } else { EXIT_INFEASIBLE })
}

#[derive(Serialize)]
struct SweepEntry {
    index: usize,
    x0: Vec<f64>,
    file: String,
    settled: bool,
    metrics: Option<ArcMetrics>,
    error: Option<String>,
}

/// An arc counts as settled when it ends in a local mode within this norm.
pub const SETTLED_NORM: f64 = 1e-2;

fn cmd_simulate(args: &SimulateArgs) -> Result<i32, Failure> {
    let cfg: SimulateConfig = resolve(args.common.config.as_deref(), args)?;
    let inst = instance_for(&cfg.plant, cfg.theta)?;
    let q0: Mode = cfg.q0.parse().map_err(|e: Error| config_error(e.to_string()))?;
    if q0.local != 1 {
        return Err(config_error(format!("mode {q0} does not exist (local modes: 1)")));
    }
    if !(cfg.horizon > 0.0 && cfg.horizon.is_finite()) {
        return Err(config_error("horizon must be positive"));
    }
    if cfg.sample_box.len() != 2 || !(cfg.sample_box[0] < cfg.sample_box[1]) {
        return Err(config_error("box must be `lo,hi` with lo < hi"));
    }
    let n = inst.plant().dim();
    let local = load_certificate(cfg.cert.as_deref())?;
    let global = example_backstepping(&inst, GainPolicy::Empirical)?;
    let sup = example_supervisor(&inst, &local, global, cfg.c_tilde.unwrap_or(inst.c_tilde))?;
    let sim = SimConfig::benchmark(cfg.horizon);
    let dir = cfg.out_dir.clone();

    let starts: Vec<Vec<f64>> = match cfg.sweep {
        Some(count) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let (lo, hi) = (cfg.sample_box[0], cfg.sample_box[1]);
            (0..count).map(|_| (0..n).map(|_| rng.gen_range(lo..hi)).collect()).collect()
        }
        None => {
            if cfg.x0.len() != n {
                return Err(config_error(format!("x0 needs {n} entries")));
            }
            vec![cfg.x0.clone()]
        }
    };
    let plant = inst.plant();
    let runs: Vec<_> = starts.par_iter().map(|x0| simulate(&plant, &sup, x0, q0, &sim)).collect();

    let mut outputs = Vec::new();
    let mut entries = Vec::new();
    let mut failed = false;
    for (i, (x0, run)) in starts.iter().zip(runs).enumerate() {
        let file = if cfg.sweep.is_some() { format!("arcs/arc_{i:04}.csv") } else { "arc.csv".to_string() };
        let (arc, error) = match run {
            Ok(arc) => (arc, None),
            Err(f) => {
                failed = true;
                let msg = f.to_string();
                (f.arc, Some(msg))
            }
        };
        let mut buf = Vec::new();
        write_arc_csv(&arc, &mut buf)?;
        write(&dir.join(&file), buf)?;
        outputs.push(file.clone());
        let metrics = arc_metrics(&arc).ok();
        let settled = error.is_none() && {
            let s = arc.last();
            s.q.stage == 1 && s.x.iter().map(|v| v * v).sum::<f64>().sqrt() <= SETTLED_NORM
        };
        entries.push(SweepEntry { index: i, x0: x0.clone(), file, settled, metrics, error });
    }
    let summary_name = if cfg.sweep.is_some() { "sweep.json" } else { "metrics.json" };
    let summary = if cfg.sweep.is_some() {
        let settled = entries.iter().filter(|e| e.settled).count();
        to_json(&serde_json::json!({ "runs": entries.len(), "settled": settled, "arcs": entries }))?
    } else {
        let e = &entries[0];
        to_json(&serde_json::json!({ "metrics": e.metrics, "error": e.error }))?
    };
    write(&dir.join(summary_name), summary + "\n")?;
    outputs.push(summary_name.into());
    write_manifest(&dir, "simulate", &cfg, cfg.seed, &outputs, if failed { "simulation-error" } else { "ok" })?;

    for e in &entries {
        match (&e.metrics, &e.error) {
            (_, Some(err)) => eprintln!("run {}: {err}", e.index),
            (Some(m), None) => println!(
                "run {}: {:?}, {} jumps, first switch {}, final |x| {:.3e}",
                e.index,
                m.termination,
                m.total_jumps,
                m.first_switch_time.map_or("none".to_string(), |t| format!("{t:.4}")),
                m.final_norm
            ),
            (None, None) => {}
        }
    }
    Ok(if failed { EXIT_SIMULATION } else { EXIT_OK })
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn xy_csv(points: &[[f64; 2]]) -> String {
    let mut s = String::from("x1,x2\n");
    for p in points {
        s.push_str(&format!("{},{}\n", fmt17(p[0]), fmt17(p[1])));
    }
    s
}

fn cmd_export_sets(args: &ExportArgs) -> Result<i32, Failure> {
    let cfg: ExportConfig = resolve(args.common.config.as_deref(), args)?;
    let inst = instance_for(&cfg.plant, cfg.theta)?;
    if inst.plant().dim() != 2 {
        return Err(config_error("export-sets supports n = 2 only"));
    }
    if cfg.samples < 3 {
        return Err(config_error("samples must be at least 3"));
    }
    let cert = load_certificate(cfg.cert.as_deref())?;
    if cert.dim() != 2 {
        return Err(config_error("export-sets supports n = 2 only"));
    }
    let dir = cfg.out_dir.clone();
    let p = cert.p()?;
    let ellipse = sublevel_boundary_2d(&p, LmiCertificate::<f64>::LEVEL, cfg.samples)?;
    let mu = inst.mu;
    let box_ring = [[-mu[0], -mu[1]], [mu[0], -mu[1]], [mu[0], mu[1]], [-mu[0], mu[1]], [-mu[0], -mu[1]]];
    let bc = inst.certificate();
    let r = (2.0 * bc.m()).sqrt();
    let curve: Vec<[f64; 2]> =
        crate::numerics::grid_points(-r, r, cfg.samples).iter().map(|&x1| [x1, bc.psi1(&[x1])]).collect();
    let hull = hull_of_attractor(&bc)?.boundary_2d()?;
    let files = [
        ("ellipse.csv", xy_csv(&ellipse)),
        ("box.csv", xy_csv(&box_ring)),
        ("attractor.csv", xy_csv(&curve)),
        ("hull.csv", xy_csv(&hull)),
    ];
    let mut outputs = Vec::new();
    for (name, body) in files {
        write(&dir.join(name), body)?;
        outputs.push(name.to_string());
    }
    write_manifest(&dir, "export-sets", &cfg, cfg.seed, &outputs, "ok")?;
    println!("wrote {} set files to {}", outputs.len(), dir.display());
    Ok(EXIT_OK)
}

fn cmd_export_instance(args: &InstanceArgs) -> Result<i32, Failure> {
    let cfg: InstanceConfig = resolve(args.common.config.as_deref(), args)?;
    let inst = instance_for(&cfg.plant, cfg.theta)?;
    let dir = cfg.out_dir.clone();
    write(&dir.join("instance.json"), inst.to_json()? + "\n")?;
    let mut outputs = vec!["instance.json".to_string()];
    if cfg.theta == 0.1 {
        let sys = example_lmi_system(&inst)?;
        let g = golden_certificate();
        let report = verify_certificate(&g, &sys)?;
        write(&dir.join("golden.json"), certificate_to_json(&g, Some(&report))? + "\n")?;
        outputs.push("golden.json".into());
    }
    write_manifest(&dir, "export-instance", &cfg, cfg.seed, &outputs, "ok")?;
    println!("wrote {}", outputs.join(", "));
    Ok(EXIT_OK)
}

/// Runs the CLI on the given arguments and returns the exit code.
pub fn run_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::ExportSets(a) => cmd_export_sets(a),
        Command::ExportInstance(a) => cmd_export_instance(a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn run() -> i32 {
    run_with(std::env::args_os())
}
