use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use mfoffload::finite::{estimate_coop_deviation, estimate_exploitability_n, FiniteEvalResult};
use mfoffload::mfc::{lattice_axis, solve_mfc, MfcOptions, DEFAULT_EVALUATION_CAP};
use mfoffload::mfg::{fictitious_play, FictitiousPlayOptions};
use mfoffload::model::{CostModel, OneShotScenario, Policy, Scenario, StationaryScenario};
use mfoffload::queue::{self, run_ensemble, simulate_trajectory, PoolSharing, SimOptions};
use mfoffload::seed;

use crate::error::CliError;
use crate::manifest::{sibling, RunManifest};
use crate::scenario::parse_scenario;

/// Version tag written in the first line of every CSV output.
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "mfoffload", version, about = "Mean-field offloading solvers and simulators")]
pub struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Competitive equilibrium by fictitious play.
    SolveMfg(SolveMfgArgs),
    /// Cooperative optimum by lattice search and local refinement.
    SolveMfc(SolveMfcArgs),
    /// Discrete-event simulation of the finite stationary system.
    Simulate(SimulateArgs),
    /// Monte Carlo checks of a policy in the finite one-shot system.
    FiniteEval(FiniteEvalArgs),
    /// Repeat a run from its manifest.
    Rerun { manifest: PathBuf },
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolveMfgArgs {
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 5000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolveMfcArgs {
    pub scenario: PathBuf,
    /// Lattice spacing (default 0.01 up to three types, 0.05 up to six).
    #[arg(long)]
    pub resolution: Option<f64>,
    #[arg(long)]
    pub no_refine: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Dump every lattice point and its objective (at most two types).
    #[arg(long)]
    pub lattice_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SharingArg {
    AllOffloaded,
    InPoolOnly,
}

impl From<SharingArg> for PoolSharing {
    fn from(s: SharingArg) -> Self {
        match s {
            SharingArg::AllOffloaded => PoolSharing::AllOffloaded,
            SharingArg::InPoolOnly => PoolSharing::InPoolOnly,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    pub scenario: PathBuf,
    /// Comma-separated probabilities, or a solver summary JSON.
    #[arg(long)]
    pub policy: String,
    #[arg(short = 'N', long = "users", value_delimiter = ',', required = true)]
    pub users: Vec<usize>,
    #[arg(long, default_value_t = queue::DEFAULT_TRAJECTORIES)]
    pub trajectories: usize,
    /// Seconds (default 40 / lambda).
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SharingArg::AllOffloaded)]
    pub sharing: SharingArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the event log of the first trajectory at the first N.
    #[arg(long)]
    pub event_log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FiniteMode {
    Exploitability,
    CoopDeviation,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FiniteEvalArgs {
    pub scenario: PathBuf,
    #[arg(long)]
    pub policy: String,
    #[arg(short = 'N', long = "users", value_delimiter = ',', required = true)]
    pub users: Vec<usize>,
    /// Default 100000 for exploitability, 20000 for coop-deviation.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: FiniteMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `--policy`: comma-separated decimals, or a JSON file with a
/// `policy` array (the summaries written by `solve-mfg` and `solve-mfc`).
pub fn parse_policy(arg: &str, k: usize) -> Result<Policy, CliError> {
    let values: Result<Vec<f64>, _> = arg.split(',').map(|v| v.trim().parse::<f64>()).collect();
    let values = match values {
        Ok(v) => v,
        Err(_) => {
            let path = Path::new(arg);
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let doc: serde_json::Value = serde_json::from_str(&text)?;
            let arr = doc
                .get("policy")
                .and_then(|p| p.as_array())
                .ok_or_else(|| CliError::Validation(format!("{arg}: no `policy` array")))?;
            arr.iter()
                .map(|v| v.as_f64().ok_or_else(|| CliError::Validation(format!("{arg}: non-numeric policy entry"))))
                .collect::<Result<_, _>>()?
        }
    };
    if values.len() != k {
        return Err(CliError::Validation(format!(
            "policy has {} entries but the scenario has {k} types",
            values.len()
        )));
    }
    Ok(Policy::new(values)?)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn csv_writer(path: &Path, command: &str) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    let mut file = create(path)?;
    writeln!(file, "#schema=mfoffload.{command}/{CSV_SCHEMA_VERSION}").map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn policy_columns(k: usize) -> impl Iterator<Item = String> {
    (1..=k).map(|j| format!("pi_{j}"))
}

fn fmt(x: f64) -> String {
    x.to_string()
}

struct RunContext {
    command: &'static str,
    args: Vec<String>,
    scenario_path: PathBuf,
    scenario_text: String,
    started: Instant,
}

impl RunContext {
    fn finish(
        self,
        out: &Path,
        parameters: serde_json::Value,
        seed: Option<u64>,
        outputs: Vec<PathBuf>,
    ) -> Result<(), CliError> {
        RunManifest {
            command: self.command.to_string(),
            args: self.args,
            parameters,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            scenario_path: self.scenario_path,
            scenario_text: self.scenario_text,
            outputs,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
        }
        .write(out)?;
        Ok(())
    }
}

fn load(command: &'static str, args: &[String], path: &Path) -> Result<(Scenario, RunContext), CliError> {
    let started = Instant::now();
    let scenario = parse_scenario(path)?;
    let scenario_text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok((
        scenario,
        RunContext { command, args: args.to_vec(), scenario_path: path.to_path_buf(), scenario_text, started },
    ))
}

fn require_stationary(s: Scenario, command: &str) -> Result<StationaryScenario, CliError> {
    match s {
        Scenario::Stationary(s) => Ok(s),
        Scenario::OneShot(_) => Err(CliError::Validation(format!("{command} needs a stationary scenario"))),
    }
}

fn require_oneshot(s: Scenario, command: &str) -> Result<OneShotScenario, CliError> {
    match s {
        Scenario::OneShot(s) => Ok(s),
        Scenario::Stationary(_) => Err(CliError::Validation(format!("{command} needs a one-shot scenario"))),
    }
}

fn solve_mfg_cmd(a: &SolveMfgArgs, argv: &[String]) -> Result<(), CliError> {
    let (scenario, ctx) = load("solve-mfg", argv, &a.scenario)?;
    let opts = FictitiousPlayOptions { max_iters: a.iters, tol: a.tol };
    let report = fictitious_play(&scenario, opts)?;
    let k = scenario.distribution().len();

    let mut w = csv_writer(&a.out, "solve-mfg")?;
    w.write_record(["iteration".to_string(), "exploitability".to_string()].into_iter().chain(policy_columns(k)))?;
    for rec in &report.history {
        w.write_record(
            [rec.iteration.to_string(), fmt(rec.exploitability)].into_iter().chain(rec.policy.iter().map(fmt)),
        )?;
    }
    w.flush().map_err(|e| CliError::io(&a.out, e))?;

    let final_gap = report.final_exploitability().unwrap_or(f64::INFINITY);
    let converged = final_gap < a.tol;
    let summary_path = sibling(&a.out, "summary.json");
    write_json(
        &summary_path,
        &json!({
            "mode": scenario.mode(),
            "policy": report.final_policy,
            "exploitability": final_gap,
            "iterations_run": report.iterations_run,
            "tol": a.tol,
            "converged": converged,
        }),
    )?;
    ctx.finish(
        &a.out,
        json!({ "scenario": a.scenario, "iters": a.iters, "tol": a.tol }),
        None,
        vec![a.out.clone(), summary_path],
    )?;
    if converged {
        Ok(())
    } else {
        Err(CliError::NotConverged { tol: a.tol, achieved: final_gap })
    }
}

fn solve_mfc_cmd(a: &SolveMfcArgs, argv: &[String]) -> Result<(), CliError> {
    let (scenario, ctx) = load("solve-mfc", argv, &a.scenario)?;
    let k = scenario.distribution().len();
    let resolution = a.resolution.unwrap_or_else(|| mfoffload::mfc::default_resolution(k));
    let opts = MfcOptions { resolution: Some(resolution), refine: !a.no_refine, ..Default::default() };
    let res = solve_mfc(&scenario, opts)?;

    let mut w = csv_writer(&a.out, "solve-mfc")?;
    w.write_record(policy_columns(k).chain(["value", "evaluations", "refined"].map(String::from)))?;
    w.write_record(res.argmin.iter().map(fmt).chain([
        fmt(res.value),
        res.evaluations.to_string(),
        res.refined.to_string(),
    ]))?;
    w.flush().map_err(|e| CliError::io(&a.out, e))?;

    let summary_path = sibling(&a.out, "summary.json");
    write_json(
        &summary_path,
        &json!({
            "mode": scenario.mode(),
            "policy": res.argmin,
            "value": res.value,
            "evaluations": res.evaluations,
            "refined": res.refined,
            "resolution": resolution,
        }),
    )?;
    let mut outputs = vec![a.out.clone(), summary_path];

    if let Some(path) = &a.lattice_out {
        if k > 2 {
            return Err(CliError::Validation("--lattice-out supports at most two types".into()));
        }
        let axis = lattice_axis(resolution)?;
        let mut w = csv_writer(path, "solve-mfc-lattice")?;
        w.write_record(policy_columns(k).chain(["value".to_string()]))?;
        let mut point = vec![0.0; k];
        let total = axis.len().pow(k as u32);
        for idx in 0..total {
            let mut rest = idx;
            for slot in point.iter_mut().rev() {
                *slot = axis[rest % axis.len()];
                rest /= axis.len();
            }
            let value = Policy::new(point.clone()).and_then(|pi| scenario.objective(&pi)).unwrap_or(f64::INFINITY);
            w.write_record(point.iter().map(|&x| fmt(x)).chain([fmt(value)]))?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
        outputs.push(path.clone());
    }
    ctx.finish(
        &a.out,
        json!({
            "scenario": a.scenario,
            "resolution": resolution,
            "refine": !a.no_refine,
            "evaluation_cap": DEFAULT_EVALUATION_CAP,
            "lattice_out": a.lattice_out,
        }),
        None,
        outputs,
    )
}

fn simulate_cmd(a: &SimulateArgs, argv: &[String]) -> Result<(), CliError> {
    let (scenario, ctx) = load("simulate", argv, &a.scenario)?;
    let s = require_stationary(scenario, "simulate")?;
    let pi = parse_policy(&a.policy, s.distribution().len())?;
    let prediction = queue::stationary_prediction(&s, &pi)?;
    let horizon = a.horizon.unwrap_or(40.0 / s.lambda());

    let mut w = csv_writer(&a.out, "simulate")?;
    w.write_record(["n_users", "time", "mean_ntot_over_n", "ci68_halfwidth", "prediction"])?;
    let mut tails = Vec::new();
    for &n in &a.users {
        let opts = SimOptions {
            n_users: n,
            horizon,
            grid_points: a.grid_points,
            sharing: a.sharing.into(),
            record_events: false,
        };
        let ens = run_ensemble(&s, &pi, &opts, a.trajectories, a.seed)?;
        for ((t, m), ci) in ens.time_grid.iter().zip(&ens.mean_ntot_over_n).zip(&ens.ci68_halfwidth) {
            w.write_record([n.to_string(), fmt(*t), fmt(*m), fmt(*ci), fmt(prediction)])?;
        }
        tails.push(json!({ "n_users": n, "tail_mean": ens.tail_mean, "tail_ci68": ens.tail_ci68 }));
    }
    w.flush().map_err(|e| CliError::io(&a.out, e))?;

    let summary_path = sibling(&a.out, "summary.json");
    write_json(&summary_path, &json!({ "prediction": prediction, "second_half_means": tails }))?;
    let mut outputs = vec![a.out.clone(), summary_path];

    if let (Some(path), Some(&n)) = (&a.event_log, a.users.first()) {
        let opts = SimOptions {
            n_users: n,
            horizon,
            grid_points: a.grid_points,
            sharing: a.sharing.into(),
            record_events: true,
        };
        let mut rng = seed::stream(a.seed, seed::QUEUE_TRAJECTORY, 0);
        let traj = simulate_trajectory(&s, &pi, &opts, &mut rng)?;
        let mut file = create(path)?;
        queue::write_event_log(traj.events.as_deref().unwrap_or_default(), &mut file)
            .and_then(|_| file.flush())
            .map_err(|e| CliError::io(path, e))?;
        outputs.push(path.clone());
    }

    ctx.finish(
        &a.out,
        json!({
            "scenario": a.scenario,
            "policy": pi,
            "users": a.users,
            "trajectories": a.trajectories,
            "horizon": horizon,
            "grid_points": a.grid_points,
            "sharing": a.sharing,
            "event_log": a.event_log,
        }),
        Some(a.seed),
        outputs,
    )
}

fn finite_eval_cmd(a: &FiniteEvalArgs, argv: &[String]) -> Result<(), CliError> {
    let (scenario, ctx) = load("finite-eval", argv, &a.scenario)?;
    let s = require_oneshot(scenario, "finite-eval")?;
    let pi = parse_policy(&a.policy, s.distribution().len())?;
    let samples = a.samples.unwrap_or(match a.mode {
        FiniteMode::Exploitability => 100_000,
        FiniteMode::CoopDeviation => 20_000,
    });

    let mut w = csv_writer(&a.out, "finite-eval")?;
    w.write_record(["n_users", "estimate", "standard_error", "samples", "seed"])?;
    for &n in &a.users {
        let r: FiniteEvalResult = match a.mode {
            FiniteMode::Exploitability => estimate_exploitability_n(&s, &pi, n, samples, a.seed)?,
            FiniteMode::CoopDeviation => estimate_coop_deviation(&s, &pi, n, samples, a.seed)?,
        };
        w.write_record([
            r.n_users.to_string(),
            fmt(r.estimate),
            fmt(r.standard_error),
            r.samples.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(&a.out, e))?;
    ctx.finish(
        &a.out,
        json!({
            "scenario": a.scenario,
            "policy": pi,
            "users": a.users,
            "samples": samples,
            "mode": a.mode,
        }),
        Some(a.seed),
        vec![a.out.clone()],
    )
}

fn rerun(path: &Path) -> Result<(), CliError> {
    let manifest = RunManifest::read(path)?;
    let current =
        std::fs::read_to_string(&manifest.scenario_path).map_err(|e| CliError::io(&manifest.scenario_path, e))?;
    if current != manifest.scenario_text {
        return Err(CliError::Validation(format!(
            "{} changed since the run recorded in {}",
            manifest.scenario_path.display(),
            path.display()
        )));
    }
    let cli = Cli::try_parse_from(std::iter::once("mfoffload".to_string()).chain(manifest.args.iter().cloned()))
        .map_err(|e| CliError::Validation(format!("manifest arguments: {e}")))?;
    if matches!(cli.command, Command::Rerun { .. }) {
        return Err(CliError::Validation("manifest records another rerun".into()));
    }
    dispatch(&cli, &manifest.args)
}

fn dispatch(cli: &Cli, argv: &[String]) -> Result<(), CliError> {
    match &cli.command {
        Command::SolveMfg(a) => solve_mfg_cmd(a, argv),
        Command::SolveMfc(a) => solve_mfc_cmd(a, argv),
        Command::Simulate(a) => simulate_cmd(a, argv),
        Command::FiniteEval(a) => finite_eval_cmd(a, argv),
        Command::Rerun { manifest } => rerun(manifest),
    }
}

/// Runs a parsed command line. `argv` excludes the program name and is
/// recorded in the manifest.
pub fn run(cli: &Cli, argv: &[String]) -> Result<(), CliError> {
    match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Validation(e.to_string()))?
            .install(|| dispatch(cli, argv)),
        None => dispatch(cli, argv),
    }
}
