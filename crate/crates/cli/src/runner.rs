//! Experiment execution: job expansion, parallel runs, artifacts and manifest.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde_json::{json, Map, Value};
use superatom::master::Method;
use superatom::model::PulseShape;
use superatom::trajectories::write_jump_log;
use superatom::{
    average_records, integrate, run_trajectories, DensityMatrix, Error, InteractionSpec, Model, ModelConfig, StateVector,
};

use crate::config::{Engine, Experiment, ExperimentConfig, RateProfile};
use crate::output::{self, num, SUMMARY_HEADER};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Capacity(String),
    Integration(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Capacity(_) => 3,
            CliError::Integration(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Capacity(m) => write!(f, "capacity error: {m}"),
            CliError::Integration(m) => write!(f, "integration failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunEngine {
    Me,
    Mcwf,
}

impl RunEngine {
    fn name(self) -> &'static str {
        match self {
            RunEngine::Me => "me",
            RunEngine::Mcwf => "mcwf",
        }
    }
}

/// One simulation and the files it owns.
#[derive(Debug, Clone)]
pub struct Job {
    pub n_atoms: usize,
    pub profile: RateProfile,
    pub engine: RunEngine,
    pub model: ModelConfig,
    pub stem: String,
}

impl Job {
    pub fn csv_name(&self) -> String {
        match self.engine {
            RunEngine::Me => format!("{}.csv", self.stem),
            RunEngine::Mcwf => format!("{}_mcwf.csv", self.stem),
        }
    }

    pub fn jump_log_name(&self) -> Option<String> {
        (self.engine == RunEngine::Mcwf).then(|| format!("{}_mcwf_jumps.csv", self.stem))
    }
}

fn stem(experiment: Experiment, n_atoms: usize, profile: RateProfile) -> String {
    match experiment {
        Experiment::Fig1c => format!("fig1c_N{n_atoms}_{}", profile.label()),
        Experiment::Fig2 => format!("fig2_N{n_atoms}"),
        Experiment::Custom => format!("custom_N{n_atoms}"),
    }
}

fn engines(engine: Engine) -> Vec<RunEngine> {
    let mut out = Vec::new();
    if engine.runs_me() {
        out.push(RunEngine::Me);
    }
    if engine.runs_mcwf() {
        out.push(RunEngine::Mcwf);
    }
    out
}

/// Jobs in output order, after capacity and parameter checks.
pub fn plan(cfg: &ExperimentConfig) -> Result<Vec<Job>, CliError> {
    if let Some(n) = cfg.capacity_violation() {
        return Err(CliError::Capacity(format!(
            "{n} atoms requested; at most {} are supported",
            superatom::MAX_ATOMS
        )));
    }
    let mut jobs = Vec::new();
    for &n in &cfg.n_atoms_list {
        for profile in cfg.profiles() {
            let model = cfg.model_config(n, profile).map_err(|e| CliError::Config(e.to_string()))?;
            model.validate().map_err(|e| CliError::Config(e.to_string()))?;
            for engine in engines(cfg.engine) {
                jobs.push(Job {
                    n_atoms: n,
                    profile,
                    engine,
                    model: model.clone(),
                    stem: stem(cfg.experiment, n, profile),
                });
            }
        }
    }
    let model = Model::new(jobs[0].model.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.integrator_settings()
        .validate(&model)
        .map_err(|e| CliError::Config(e.to_string()))?;
    if cfg.engine.runs_mcwf() {
        cfg.trajectory_settings().validate().map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(jobs)
}

#[derive(Debug, Clone)]
pub struct JobResult {
    pub files: Vec<(String, String)>,
    pub wall_clock_s: f64,
    pub pr1_t_end: f64,
    pub stderr_pr1_t_end: Option<f64>,
    pub steps: Option<usize>,
    pub jumps: Option<usize>,
}

fn failure(job: &Job, e: Error) -> CliError {
    let detail = match e {
        Error::TooManyAtoms { .. } => return CliError::Capacity(e.to_string()),
        Error::InvalidParameter { .. } => return CliError::Config(e.to_string()),
        other => other.to_string(),
    };
    CliError::Integration(format!("{} ({}): {detail}", job.stem, job.engine.name()))
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(String, String), CliError> {
    let path = dir.join(name);
    output::write_atomic(&path, bytes).map_err(|e| io_err(&path, e))?;
    Ok((name.to_string(), output::sha256_hex(bytes)))
}

pub fn execute(job: &Job, cfg: &ExperimentConfig, dir: &Path) -> Result<JobResult, CliError> {
    let start = Instant::now();
    let n = job.n_atoms;
    let model = Model::new(job.model.clone()).map_err(|e| failure(job, e))?;
    let mut files = Vec::new();
    let (pr1, se, steps, jumps) = match job.engine {
        RunEngine::Me => {
            let rho0 = DensityMatrix::ground(n).map_err(|e| failure(job, e))?;
            let run = integrate(&rho0, &model, &cfg.integrator_settings()).map_err(|e| failure(job, e))?;
            let csv = output::series_csv(&run.series, None);
            files.push(write_file(dir, &job.csv_name(), csv.as_bytes())?);
            (run.series.final_pr(1), None, Some(run.stats.accepted), None)
        }
        RunEngine::Mcwf => {
            let psi0 = StateVector::ground(n).map_err(|e| failure(job, e))?;
            let records = run_trajectories(&psi0, &model, &cfg.trajectory_settings()).map_err(|e| failure(job, e))?;
            let avg = average_records(&records).map_err(|e| failure(job, e))?;
            let se: Vec<f64> = avg.stderr_pr.iter().map(|s| s[1]).collect();
            let csv = output::series_csv(&avg.mean, Some(&se));
            files.push(write_file(dir, &job.csv_name(), csv.as_bytes())?);
            let mut log = Vec::new();
            write_jump_log(&records, &mut log).map_err(|e| CliError::Io(e.to_string()))?;
            let name = job.jump_log_name().expect("mcwf jobs keep a jump log");
            files.push(write_file(dir, &name, &log)?);
            let total_jumps = records.iter().map(|r| r.jumps.len()).sum();
            (avg.mean.final_pr(1), se.last().copied(), None, Some(total_jumps))
        }
    };
    Ok(JobResult {
        files,
        wall_clock_s: start.elapsed().as_secs_f64(),
        pr1_t_end: pr1,
        stderr_pr1_t_end: se,
        steps,
        jumps,
    })
}

fn summary_csv(jobs: &[Job], results: &[JobResult]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for (job, r) in jobs.iter().zip(results) {
        let se = r.stderr_pr1_t_end.map(num).unwrap_or_default();
        out.push_str(&format!("{},{},{},{se}\n", job.n_atoms, job.engine.name(), num(r.pr1_t_end)));
    }
    out
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Adaptive => "adaptive",
        Method::FixedRk4 => "rk4",
    }
}

/// Model parameters after defaults.
pub fn model_parameters(m: &ModelConfig) -> Value {
    let mut v = Map::new();
    v.insert("n_atoms".into(), json!(m.n_atoms));
    v.insert("t_end".into(), json!(m.pulses.t_end));
    match m.pulses.shape {
        PulseShape::Gaussian => {
            v.insert("pulse_shape".into(), json!("gaussian"));
            v.insert("omega0".into(), json!(m.pulses.omega0));
            v.insert("sigma_t".into(), json!(m.pulses.sigma_t));
        }
        PulseShape::Constant { omega_ge, omega_er } => {
            v.insert("pulse_shape".into(), json!("constant"));
            v.insert("omega_ge".into(), json!(omega_ge));
            v.insert("omega_er".into(), json!(omega_er));
        }
    }
    v.insert("gamma_eg".into(), json!(m.rates.gamma_eg));
    v.insert("gamma_re".into(), json!(m.rates.gamma_re));
    v.insert("gamma_r".into(), json!(m.rates.gamma_r_deph));
    match &m.interaction {
        InteractionSpec::Uniform { shift } => v.insert("delta".into(), json!(shift)),
        InteractionSpec::PerfectBlockade => v.insert("delta".into(), json!("perfect_blockade")),
        InteractionSpec::Geometry { .. } => v.insert("delta".into(), json!("geometry")),
    };
    Value::Object(v)
}

pub fn settings_parameters(cfg: &ExperimentConfig) -> Value {
    let s = cfg.integrator_settings();
    let mut v = json!({
        "engine": cfg.engine.name(),
        "integrator": {
            "method": method_name(s.method),
            "rtol": s.rtol,
            "atol": s.atol,
            "fixed_dt": s.fixed_dt,
            "samples": s.sample_count,
            "check_positivity": s.check_positivity,
        },
    });
    if cfg.engine.runs_mcwf() {
        let t = cfg.trajectory_settings();
        v["trajectories"] = json!({
            "n_traj": t.n_traj,
            "seed": t.seed_base,
            "rtol": t.rtol,
            "atol": t.atol,
            "samples": t.sample_count,
        });
    }
    v
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest_path: PathBuf,
    pub files: Vec<String>,
}

pub fn run(cfg: &ExperimentConfig, config_path: &Path) -> Result<RunOutcome, CliError> {
    let start = Instant::now();
    let jobs = plan(cfg)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let results: Vec<JobResult> = jobs
        .par_iter()
        .map(|job| {
            let r = execute(job, cfg, dir);
            if let Ok(r) = &r {
                eprintln!("{} [{}]: {:.1} s", job.stem, job.engine.name(), r.wall_clock_s);
            }
            r
        })
        .collect::<Result<_, _>>()?;

    let mut runs = Vec::new();
    let mut written = Vec::new();
    for (job, r) in jobs.iter().zip(&results) {
        let hashes: Map<String, Value> = r.files.iter().map(|(f, h)| (f.clone(), json!(h))).collect();
        written.extend(r.files.iter().map(|(f, _)| f.clone()));
        runs.push(json!({
            "label": job.stem,
            "n_atoms": job.n_atoms,
            "rates": job.profile.label(),
            "engine": job.engine.name(),
            "parameters": model_parameters(&job.model),
            "files": r.files.iter().map(|(f, _)| f.clone()).collect::<Vec<_>>(),
            "sha256": hashes,
            "wall_clock_s": r.wall_clock_s,
            "pr1_t_end": r.pr1_t_end,
            "stderr_pr1_t_end": r.stderr_pr1_t_end,
            "accepted_steps": r.steps,
            "jumps": r.jumps,
        }));
    }
    let mut manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config_file": config_path.display().to_string(),
        "config": cfg.echo.iter().map(|(k, v)| (k.clone(), json!(v))).collect::<Map<_, _>>(),
        "experiment": cfg.experiment.name(),
        "settings": settings_parameters(cfg),
        "runs": runs,
    });
    if cfg.experiment == Experiment::Fig2 {
        let (name, hash) = write_file(dir, "fig2_summary.csv", summary_csv(&jobs, &results).as_bytes())?;
        manifest["summary"] = json!({ "file": name, "sha256": hash });
        written.push(name);
    }
    manifest["wall_clock_s"] = json!(start.elapsed().as_secs_f64());
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    let manifest_path = dir.join("manifest.json");
    output::write_atomic(&manifest_path, text.as_bytes()).map_err(|e| io_err(&manifest_path, e))?;
    Ok(RunOutcome {
        manifest_path,
        files: written,
    })
}

/// Effective parameters and the blockade diagnostic, without running.
pub fn validate_report(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let jobs = plan(cfg)?;
    let mut out = String::new();
    out.push_str(&format!("experiment: {}\n", cfg.experiment.name()));
    out.push_str(&format!("n_atoms_list: {:?}\n", cfg.n_atoms_list));
    out.push_str(&format!("output_dir: {}\n", cfg.output_dir.display()));
    let settings = serde_json::to_string_pretty(&settings_parameters(cfg)).expect("settings serialize");
    out.push_str(&format!("settings: {settings}\n"));
    for profile in cfg.profiles() {
        let model = cfg.model_config(cfg.n_atoms_list[0], profile).map_err(|e| CliError::Config(e.to_string()))?;
        let params = model_parameters(&model);
        let mut fields: Vec<String> = Vec::new();
        if let Value::Object(map) = params {
            for (k, v) in map.iter().filter(|(k, _)| k.as_str() != "n_atoms") {
                fields.push(format!("{k} = {v}"));
            }
        }
        out.push_str(&format!("{} runs: {}\n", profile.label(), fields.join(", ")));
    }
    out.push_str(&format!("runs planned: {}\n", jobs.len()));
    let largest = *cfg.n_atoms_list.iter().max().expect("non-empty atom list");
    let diag = cfg
        .model_config(largest, RateProfile::Dissipative)
        .and_then(|m| m.blockade_diagnostic())
        .map_err(|e| CliError::Config(e.to_string()))?;
    out.push_str(&format!("w_0 = {:.6} rad/us\n", diag.w0));
    out.push_str(&format!("{diag}\n"));
    Ok(out)
}
