//! Pipeline driver: sample plant transitions, train the dynamics model,
//! run the gradient planner, distill the imitation policy, and evaluate
//! both controllers. Every artifact is CSV or JSON for external plotting.
//!
//! All randomness flows from the seeds in the configuration file (or the
//! `--seed` override); nothing is seeded from the clock, so rerunning a
//! subcommand with the same inputs reproduces its outputs byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use finpilot::fdm::{read_transitions_csv, train_fdm, write_transitions_csv};
use finpilot::gmpc::write_trajectory_csv;
use finpilot::ilc::{generate_ilc_dataset, read_ilc_csv, train_ilc, write_ilc_csv};
use finpilot::sim::{collect_transitions, run_scenario, uniform_sampler, write_report_json};
use finpilot::{
    ControllerKind, Error, FdmModel, FdmTrainConfig, GmpcConfig, IlcGrid, IlcModel, IlcTrainConfig,
    PathSpec, Result, RunReport, ScenarioConfig, SurrogateParams, TankBounds, WorldState,
};

#[derive(Parser)]
#[command(
    name = "finpilot",
    version,
    about = "Data-driven path following: collect data, train models, run controllers"
)]
struct Cli {
    /// JSON pipeline configuration; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override the seed the invoked subcommand consumes.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory artifacts are read from and written to.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample surrogate-plant transitions and write the training CSV.
    Collect,
    /// Train the forward dynamics model from the transition CSV.
    TrainFdm,
    /// Run the gradient-based planner on the configured scenario.
    RunMpc,
    /// Roll the expert out over the start grid and write the imitation dataset.
    GenIlcData,
    /// Train the imitation policy from the dataset CSV.
    TrainIlc,
    /// Run the distilled policy on the configured scenario.
    RunIlc,
    /// Run the expert from every evaluation start and write the summary table.
    Eval,
}

/// Per-stage seeds; every stochastic step names the seed it consumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct Seeds {
    collect: u64,
    fdm_train: u64,
    ilc_train: u64,
    scenario: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            collect: 42,
            fdm_train: 42,
            ilc_train: 7,
            scenario: 0,
        }
    }
}

/// Artifact file names inside the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct FileNames {
    transitions: String,
    fdm_model: String,
    fdm_report: String,
    mpc_trajectory: String,
    mpc_report: String,
    ilc_dataset: String,
    ilc_model: String,
    ilc_report: String,
    ilc_trajectory: String,
    ilc_run_report: String,
    eval_summary: String,
}

impl Default for FileNames {
    fn default() -> Self {
        Self {
            transitions: "transitions.csv".into(),
            fdm_model: "fdm_model.json".into(),
            fdm_report: "fdm_train_report.json".into(),
            mpc_trajectory: "mpc_trajectory.csv".into(),
            mpc_report: "mpc_report.json".into(),
            ilc_dataset: "ilc_dataset.csv".into(),
            ilc_model: "ilc_model.json".into(),
            ilc_report: "ilc_train_report.json".into(),
            ilc_trajectory: "ilc_trajectory.csv".into(),
            ilc_run_report: "ilc_run_report.json".into(),
            eval_summary: "eval_summary.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EvalStart {
    label: String,
    x_mm: f64,
    y_mm: f64,
    theta_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct PipelineConfig {
    out_dir: String,
    files: FileNames,
    seeds: Seeds,
    /// Number of transitions `collect` samples.
    transitions: usize,
    /// Step budget for single-scenario runs and `eval`.
    max_steps: usize,
    /// Step budget per start while generating the imitation dataset.
    ilc_max_steps: usize,
    /// Start pose for `run-mpc` and `run-ilc`.
    start_x_mm: f64,
    start_y_mm: f64,
    start_theta_rad: f64,
    eval_starts: Vec<EvalStart>,
    surrogate: SurrogateParams,
    fdm_train: FdmTrainConfig,
    gmpc: GmpcConfig,
    ilc_train: IlcTrainConfig,
    grid: IlcGrid,
    path: PathSpec,
    tank: TankBounds,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            out_dir: "artifacts".into(),
            files: FileNames::default(),
            seeds: Seeds::default(),
            transitions: 300,
            max_steps: 120,
            ilc_max_steps: 120,
            start_x_mm: 100.0,
            start_y_mm: 400.0,
            start_theta_rad: 0.0,
            eval_starts: vec![
                EvalStart {
                    label: "above".into(),
                    x_mm: 100.0,
                    y_mm: 450.0,
                    theta_rad: 0.0,
                },
                EvalStart {
                    label: "on".into(),
                    x_mm: 100.0,
                    y_mm: 400.0,
                    theta_rad: 0.0,
                },
                EvalStart {
                    label: "below".into(),
                    x_mm: 100.0,
                    y_mm: 350.0,
                    theta_rad: 0.0,
                },
            ],
            surrogate: SurrogateParams::default(),
            fdm_train: FdmTrainConfig::default(),
            gmpc: GmpcConfig::default(),
            ilc_train: IlcTrainConfig::default(),
            grid: IlcGrid::default(),
            path: PathSpec::default(),
            tank: TankBounds::default(),
        }
    }
}

impl PipelineConfig {
    fn validate(&self) -> Result<()> {
        if self.transitions == 0 {
            return Err(Error::Config("transitions must be at least 1".into()));
        }
        if self.eval_starts.is_empty() {
            return Err(Error::Config("need at least one evaluation start".into()));
        }
        if self.fdm_train.bounds != self.gmpc.bounds || self.gmpc.bounds != self.ilc_train.bounds {
            return Err(Error::Config(
                "action bounds must agree across fdm_train, gmpc, and ilc_train".into(),
            ));
        }
        self.surrogate.validate()?;
        self.fdm_train.validate()?;
        self.gmpc.validate()?;
        self.ilc_train.validate()?;
        self.grid.validate()?;
        self.path.build().map(|_| ())
    }

    fn artifact(&self, name: &str) -> PathBuf {
        Path::new(&self.out_dir).join(name)
    }

    fn scenario(&self, start: WorldState, controller: ControllerKind, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            start,
            path: self.path,
            controller,
            max_steps: self.max_steps,
            seed,
            tank: self.tank,
            gmpc: self.gmpc,
            surrogate: self.surrogate,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EvalRow {
    label: String,
    x_mm: f64,
    y_mm: f64,
    theta_rad: f64,
    rmse_mm: f64,
    steps: usize,
    total_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EvalSummary {
    rows: Vec<EvalRow>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg: PipelineConfig = match &cli.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.display().to_string();
    }
    cfg.validate()?;

    match cli.cmd {
        Cmd::Collect => cmd_collect(&cfg, cli.seed.unwrap_or(cfg.seeds.collect)),
        Cmd::TrainFdm => cmd_train_fdm(&cfg, cli.seed.unwrap_or(cfg.seeds.fdm_train)),
        Cmd::RunMpc => cmd_run_mpc(&cfg, cli.seed.unwrap_or(cfg.seeds.scenario)),
        Cmd::GenIlcData => cmd_gen_ilc_data(&cfg),
        Cmd::TrainIlc => cmd_train_ilc(&cfg, cli.seed.unwrap_or(cfg.seeds.ilc_train)),
        Cmd::RunIlc => cmd_run_ilc(&cfg, cli.seed.unwrap_or(cfg.seeds.scenario)),
        Cmd::Eval => cmd_eval(&cfg, cli.seed.unwrap_or(cfg.seeds.scenario)),
    }
}

fn ensure_out_dir(cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    Ok(())
}

fn input_context<T>(what: &str, path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Config(format!("cannot read {what} from {}: {e}", path.display())))
}

fn cmd_collect(cfg: &PipelineConfig, seed: u64) -> Result<()> {
    let bounds = cfg.fdm_train.bounds;
    let samples = collect_transitions(
        &cfg.surrogate,
        &bounds,
        cfg.transitions,
        uniform_sampler(bounds),
        seed,
    )?;
    ensure_out_dir(cfg)?;
    let out = cfg.artifact(&cfg.files.transitions);
    write_transitions_csv(&out, &samples)?;
    println!("wrote {} transitions to {}", samples.len(), out.display());
    Ok(())
}

fn cmd_train_fdm(cfg: &PipelineConfig, seed: u64) -> Result<()> {
    let src = cfg.artifact(&cfg.files.transitions);
    let samples = input_context("transitions", &src, read_transitions_csv(&src))?;
    let (model, report) = train_fdm(&samples, &cfg.fdm_train, seed)?;
    ensure_out_dir(cfg)?;
    let model_path = cfg.artifact(&cfg.files.fdm_model);
    model.save_json(&model_path)?;
    fs::write(
        cfg.artifact(&cfg.files.fdm_report),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "trained dynamics model on {} samples: loss {:.6} -> {:.6}, wrote {}",
        report.train_count,
        report.loss_history.first().copied().unwrap_or(f64::NAN),
        report.loss_history.last().copied().unwrap_or(f64::NAN),
        model_path.display()
    );
    Ok(())
}

fn single_start(cfg: &PipelineConfig) -> WorldState {
    WorldState::at_pose(cfg.start_x_mm, cfg.start_y_mm, cfg.start_theta_rad)
}

fn write_run_artifacts(
    cfg: &PipelineConfig,
    scenario: &ScenarioConfig,
    report: &RunReport,
    trajectory_name: &str,
    report_name: &str,
) -> Result<()> {
    ensure_out_dir(cfg)?;
    let traj = cfg.artifact(trajectory_name);
    write_trajectory_csv(&traj, &report.log)?;
    write_report_json(cfg.artifact(report_name), &report.summary(scenario))?;
    println!(
        "ran {} steps, RMSE {:.3} mm, wrote {}",
        report.log.steps.len(),
        report.rmse_mm,
        traj.display()
    );
    Ok(())
}

fn cmd_run_mpc(cfg: &PipelineConfig, seed: u64) -> Result<()> {
    let src = cfg.artifact(&cfg.files.fdm_model);
    let model = input_context("dynamics model", &src, FdmModel::load_json(&src))?;
    let scenario = cfg.scenario(single_start(cfg), ControllerKind::Expert, seed);
    let report = run_scenario(&scenario, Some(&model), None)?;
    write_run_artifacts(
        cfg,
        &scenario,
        &report,
        &cfg.files.mpc_trajectory,
        &cfg.files.mpc_report,
    )
}

fn cmd_gen_ilc_data(cfg: &PipelineConfig) -> Result<()> {
    let src = cfg.artifact(&cfg.files.fdm_model);
    let model = input_context("dynamics model", &src, FdmModel::load_json(&src))?;
    let path = cfg.path.build()?;
    let dataset = generate_ilc_dataset(&model, &cfg.gmpc, &path, &cfg.grid, cfg.ilc_max_steps)?;
    ensure_out_dir(cfg)?;
    let out = cfg.artifact(&cfg.files.ilc_dataset);
    write_ilc_csv(&out, &dataset)?;
    println!(
        "generated {} expert samples from {} starts, wrote {}",
        dataset.len(),
        cfg.grid.starts().len(),
        out.display()
    );
    Ok(())
}

fn cmd_train_ilc(cfg: &PipelineConfig, seed: u64) -> Result<()> {
    let src = cfg.artifact(&cfg.files.ilc_dataset);
    let dataset = input_context("imitation dataset", &src, read_ilc_csv(&src))?;
    let (policy, report) = train_ilc(&dataset, &cfg.ilc_train, seed)?;
    ensure_out_dir(cfg)?;
    let model_path = cfg.artifact(&cfg.files.ilc_model);
    policy.save_json(&model_path)?;
    fs::write(
        cfg.artifact(&cfg.files.ilc_report),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "trained policy on {} samples: loss {:.6} -> {:.6}, wrote {}",
        report.sample_count,
        report.loss_history.first().copied().unwrap_or(f64::NAN),
        report.loss_history.last().copied().unwrap_or(f64::NAN),
        model_path.display()
    );
    Ok(())
}

fn cmd_run_ilc(cfg: &PipelineConfig, seed: u64) -> Result<()> {
    let src = cfg.artifact(&cfg.files.ilc_model);
    let policy = input_context("policy model", &src, IlcModel::load_json(&src))?;
    let scenario = cfg.scenario(single_start(cfg), ControllerKind::Distilled, seed);
    let report = run_scenario(&scenario, None, Some(&policy))?;
    write_run_artifacts(
        cfg,
        &scenario,
        &report,
        &cfg.files.ilc_trajectory,
        &cfg.files.ilc_run_report,
    )
}

fn cmd_eval(cfg: &PipelineConfig, seed: u64) -> Result<()> {
    let src = cfg.artifact(&cfg.files.fdm_model);
    let model = input_context("dynamics model", &src, FdmModel::load_json(&src))?;
    // Run every start before writing anything so a failing scenario
    // leaves no partial artifacts behind.
    let mut results = Vec::with_capacity(cfg.eval_starts.len());
    for start in &cfg.eval_starts {
        let scenario = cfg.scenario(
            WorldState::at_pose(start.x_mm, start.y_mm, start.theta_rad),
            ControllerKind::Expert,
            seed,
        );
        let report = run_scenario(&scenario, Some(&model), None)?;
        results.push((start.clone(), report));
    }

    ensure_out_dir(cfg)?;
    let mut rows = Vec::with_capacity(results.len());
    println!(
        "{:<8} {:>8} {:>8} {:>10} {:>6} {:>9}",
        "start", "x_mm", "y_mm", "rmse_mm", "steps", "time_s"
    );
    for (start, report) in &results {
        write_trajectory_csv(
            cfg.artifact(&format!("eval_{}.csv", start.label)),
            &report.log,
        )?;
        println!(
            "{:<8} {:>8.1} {:>8.1} {:>10.3} {:>6} {:>9.2}",
            start.label,
            start.x_mm,
            start.y_mm,
            report.rmse_mm,
            report.log.steps.len(),
            report.total_time_s
        );
        rows.push(EvalRow {
            label: start.label.clone(),
            x_mm: start.x_mm,
            y_mm: start.y_mm,
            theta_rad: start.theta_rad,
            rmse_mm: report.rmse_mm,
            steps: report.log.steps.len(),
            total_time_s: report.total_time_s,
        });
    }
    let summary_path = cfg.artifact(&cfg.files.eval_summary);
    fs::write(
        &summary_path,
        serde_json::to_string_pretty(&EvalSummary { rows })?,
    )?;
    println!("wrote {}", summary_path.display());
    Ok(())
}
