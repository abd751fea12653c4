//! Batch front-end: reads a run configuration, dispatches one mode and
//! writes its artifacts plus a `summary.json` that lists every emitted
//! file with its SHA-256.

pub mod config;
pub mod plot;

use std::fs;
use std::path::{Path, PathBuf};

use beamloop::analysis::{bare_fundamental_frequency, frequency_convergence, projected_operator, skew_defect};
use beamloop::integrator::format_value;
use beamloop::{
    assemble, assemble_linear_matrix, build_mesh, certify_block, certify_spring_damper, decay_metrics,
    first_mode_state, simulate, skew_check, spectrum, CertReport, ClosedLoop, ClosedLoopConfig, DiscreteSystem,
};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub use config::{ConfigError, Mode, RunConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_CERTIFICATION: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: u8,
    /// One line for the terminal.
    pub message: String,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Numerical { operation: &'static str, message: String },
    Io(String),
}

fn numerical(operation: &'static str) -> impl Fn(beamloop::Error) -> Failure {
    move |e| Failure::Numerical { operation, message: e.to_string() }
}

fn io_failure(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Serialize)]
struct FileEntry {
    name: String,
    sha256: String,
    bytes: usize,
}

/// Writes artifacts into one directory and remembers their hashes.
struct Artifacts {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Artifacts {
    fn new(dir: PathBuf) -> Result<Self, Failure> {
        fs::create_dir_all(&dir).map_err(io_failure(&dir))?;
        Ok(Self { dir, files: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(io_failure(&path))?;
        self.files.push(FileEntry { name: name.to_string(), sha256: hex::encode(Sha256::digest(bytes)), bytes: bytes.len() });
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

/// Loads `config_path`, runs `mode` and writes the artifacts.
pub fn run(mode: Mode, config_path: &Path, overrides: &Overrides) -> RunOutcome {
    let cfg = match load(mode, config_path, overrides) {
        Ok(cfg) => cfg,
        Err(e) => {
            return RunOutcome {
                exit_code: EXIT_CONFIG,
                message: format!("config error in {}: {e}", config_path.display()),
                output_dir: None,
            }
        }
    };
    let dir = cfg.output_dir.clone();
    let mut artifacts = match Artifacts::new(dir.clone()) {
        Ok(a) => a,
        Err(f) => return failure_outcome(f, None),
    };
    let result = dispatch(mode, &cfg, &mut artifacts);
    let (status, exit_code, results, message) = match result {
        Ok((results, certified)) => {
            if certified {
                ("ok", EXIT_OK, results, format!("{mode}: ok"))
            } else {
                ("certification_failed", EXIT_CERTIFICATION, results, format!("{mode}: certification failed"))
            }
        }
        Err(Failure::Numerical { operation, message }) => (
            "numerical_failure",
            EXIT_NUMERICAL,
            json!({ "operation": operation, "error": message }),
            format!("{mode}: numerical failure in {operation}: {message}"),
        ),
        Err(f) => return failure_outcome(f, Some(dir)),
    };
    let summary = json!({
        "schema_version": config::SCHEMA_VERSION,
        "mode": mode.as_str(),
        "status": status,
        "exit_code": exit_code,
        "seed": cfg.seed,
        "config": cfg,
        "results": results,
        "files": artifacts.files,
    });
    if let Err(f) = artifacts.write_json("summary.json", &summary) {
        return failure_outcome(f, Some(dir));
    }
    RunOutcome { exit_code, message, output_dir: Some(dir) }
}

fn failure_outcome(f: Failure, dir: Option<PathBuf>) -> RunOutcome {
    let (exit_code, message) = match f {
        Failure::Config(m) => (EXIT_CONFIG, format!("config error: {m}")),
        Failure::Numerical { operation, message } => (EXIT_NUMERICAL, format!("numerical failure in {operation}: {message}")),
        // output problems are reported like numerical ones: the run did not complete
        Failure::Io(m) => (EXIT_NUMERICAL, format!("cannot write output: {m}")),
    };
    RunOutcome { exit_code, message, output_dir: dir }
}

fn load(mode: Mode, path: &Path, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError { message: e.to_string(), line: None, column: None })?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(m) = cfg.mode {
        if m != mode {
            return Err(ConfigError {
                message: format!("config declares mode `{m}` but `{mode}` was requested"),
                line: None,
                column: None,
            });
        }
    }
    cfg.mode = Some(mode);
    if let Some(out) = &overrides.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn config_of(cfg: &RunConfig) -> Result<ClosedLoopConfig<f64>, Failure> {
    cfg.loop_config().map_err(|e| Failure::Config(e.to_string()))
}

fn system(cfg: &RunConfig, loop_cfg: &ClosedLoopConfig<f64>) -> Result<DiscreteSystem<f64>, Failure> {
    let mesh = build_mesh(&loop_cfg.beam, cfg.mesh.elements).map_err(numerical("build_mesh"))?;
    Ok(assemble(&loop_cfg.beam, &mesh, true))
}

fn closed_loop(cfg: &RunConfig) -> Result<ClosedLoop<f64>, Failure> {
    let loop_cfg = config_of(cfg)?;
    let sys = system(cfg, &loop_cfg)?;
    ClosedLoop::new(sys, loop_cfg).map_err(numerical("closed_loop"))
}

/// Mode-specific results and whether every certification (if any) passed.
fn dispatch(mode: Mode, cfg: &RunConfig, artifacts: &mut Artifacts) -> Result<(Value, bool), Failure> {
    match mode {
        Mode::Certify => certify(cfg, artifacts),
        Mode::Simulate => run_simulation(cfg, artifacts),
        Mode::Spectrum => run_spectrum(cfg, artifacts),
        Mode::Skew => run_skew(cfg),
        Mode::Convergence => run_convergence(cfg, artifacts),
    }
}

#[derive(Serialize)]
struct ComponentReport<'a> {
    component: &'static str,
    name: &'a str,
    report: CertReport,
}

fn certify(cfg: &RunConfig, artifacts: &mut Artifacts) -> Result<(Value, bool), Failure> {
    let loop_cfg = config_of(cfg)?;
    let threshold = match cfg.certify.storage_threshold {
        Some(h) => h,
        // energy of the configured initial data, when the loop can be built
        None => match closed_loop(cfg) {
            Ok(cl) => {
                let y0 = first_mode_state(&cl, cfg.integrator.tip_fraction);
                cl.eval_h(&y0).map_err(numerical("eval_h"))?.total
            }
            Err(_) => 0.0,
        },
    };
    let c = &cfg.certify;
    let law = |law: &beamloop::SpringDamperLaw<f64>| {
        certify_spring_damper(law, c.radius, c.samples, cfg.seed).map_err(|e| Failure::Config(format!("certify: {e}")))
    };
    let block = |b: &beamloop::PassiveBlock<f64>| {
        let samples = c.samples.max(100 * b.dim());
        certify_block(b, c.radius, samples, threshold, cfg.seed).map_err(|e| Failure::Config(format!("certify: {e}")))
    };
    let rot_name = format!("{} / {}", cfg.rotational.damper.law, cfg.rotational.spring.law);
    let tr_name = format!("{} / {}", cfg.translational.damper.law, cfg.translational.spring.law);
    let reports = vec![
        ComponentReport { component: "rotational.spring_damper", name: &rot_name, report: law(&loop_cfg.sd_rotational)? },
        ComponentReport { component: "translational.spring_damper", name: &tr_name, report: law(&loop_cfg.sd_translational)? },
        ComponentReport {
            component: "rotational.block",
            name: &cfg.rotational.block.kind,
            report: block(&loop_cfg.block_rotational)?,
        },
        ComponentReport {
            component: "translational.block",
            name: &cfg.translational.block.kind,
            report: block(&loop_cfg.block_translational)?,
        },
    ];
    let passed = reports.iter().all(|r| r.report.passed);
    let failures: Vec<Value> = reports
        .iter()
        .flat_map(|r| {
            r.report.failed().map(|c| json!({ "component": r.component, "check": c.name, "witness": c.witness, "measured": c.measured }))
        })
        .collect();
    artifacts.write_json(
        "certification.json",
        &json!({ "passed": passed, "seed": cfg.seed, "storage_threshold": threshold, "components": reports }),
    )?;
    Ok((json!({ "certified": passed, "storage_threshold": threshold, "failures": failures }), passed))
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| Failure::Io(e.to_string()))?;
    Ok(buf)
}

fn run_simulation(cfg: &RunConfig, artifacts: &mut Artifacts) -> Result<(Value, bool), Failure> {
    // the certification report accompanies every simulation but does not gate it
    let (cert, certified) = certify(cfg, artifacts)?;
    let cl = closed_loop(cfg)?;
    let settings = cfg.settings().map_err(|e| Failure::Config(e.to_string()))?;
    let y0 = first_mode_state(&cl, cfg.integrator.tip_fraction);
    let traj = simulate(&cl, &y0, &settings).map_err(numerical("simulate"))?;
    artifacts.write("energy.csv", &csv_bytes(|w| traj.write_energy_csv(w))?)?;
    artifacts.write("trajectory.csv", &csv_bytes(|w| traj.write_state_csv(w))?)?;
    let h = traj.total_energy();
    let norms: Vec<f64> = traj.states.iter().map(|s| cl.q_norm(s)).collect();
    let svg = plot::log_plot(
        "energy and state norm",
        &traj.times,
        &[plot::Series { label: "H(t)", values: &h }, plot::Series { label: "||y(t)||_Q", values: &norms }],
    );
    artifacts.write("energy.svg", svg.as_bytes())?;
    let decay = decay_metrics(&traj).map_err(numerical("decay_metrics"))?;
    Ok((
        json!({
            "steps": traj.steps,
            "recorded_rows": traj.len(),
            "newton_iterations": traj.newton_iterations,
            "max_energy_increase": traj.max_energy_increase,
            "energy_increase_flagged": traj.flagged,
            "decay": decay,
            "certified": certified,
            "certification": cert,
        }),
        true,
    ))
}

fn run_spectrum(cfg: &RunConfig, artifacts: &mut Artifacts) -> Result<(Value, bool), Failure> {
    let cl = closed_loop(cfg)?;
    let g = assemble_linear_matrix(&cl);
    let report = spectrum(&g, cl.gram()).map_err(numerical("spectrum"))?;
    artifacts.write("spectrum.csv", &csv_bytes(|w| report.write_csv(w))?)?;
    Ok((
        json!({
            "dimension": cl.dim(),
            "max_real_part": report.max_real_part,
            "n_unstable": report.n_unstable,
            "spectral_radius": report.spectral_radius(),
        }),
        true,
    ))
}

fn run_skew(cfg: &RunConfig) -> Result<(Value, bool), Failure> {
    let loop_cfg = config_of(cfg)?;
    let sys = system(cfg, &loop_cfg)?;
    let springs = (loop_cfg.sd_rotational.spring_slope, loop_cfg.sd_translational.spring_slope);
    let dampers = (loop_cfg.sd_rotational.damper_slope, loop_cfg.sd_translational.damper_slope);
    let defect = skew_check(&sys, springs).map_err(numerical("skew_check"))?;
    let (g, q) = projected_operator(&sys, springs, dampers).map_err(numerical("projected_operator"))?;
    Ok((
        json!({
            "elements": cfg.mesh.elements,
            "spring_slopes": [springs.0, springs.1],
            "skew_defect": defect,
            "damper_slopes": [dampers.0, dampers.1],
            "skew_defect_with_dampers": skew_defect(&g, &q),
        }),
        true,
    ))
}

fn run_convergence(cfg: &RunConfig, artifacts: &mut Artifacts) -> Result<(Value, bool), Failure> {
    let beam = cfg.beam_params().map_err(|e| Failure::Config(e.to_string()))?;
    let conv = frequency_convergence(&beam, &cfg.convergence.elements).map_err(numerical("frequency_convergence"))?;
    let mut csv = String::from("elements,frequency,relative_error\n");
    for ((n, w), e) in conv.elements.iter().zip(&conv.frequencies).zip(&conv.relative_errors) {
        csv.push_str(&format!("{n},{},{}\n", format_value(*w), format_value(*e)));
    }
    artifacts.write("convergence.csv", csv.as_bytes())?;
    // configured mesh, for reference
    let sys = system(cfg, &config_of(cfg)?)?;
    let w = bare_fundamental_frequency(&sys).map_err(numerical("bare_fundamental_frequency"))?;
    Ok((json!({ "convergence": conv, "configured_mesh_frequency": w }), true))
}
