//! Synthetic ground-truth plant standing in for the physical robot, plus
//! transition-data collection, closed-loop scenario execution, and RMSE
//! reporting.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path as FsPath;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdm::{Action, ActionBounds, FdmModel, Plant, TransitionSample};
use crate::gmpc::{receding_horizon, GmpcConfig, TrajectoryLog};
use crate::ilc::{ilc_control_loop, IlcModel};
use crate::path::{PathPoint, TargetPath};
use crate::se2::{rebase, LocalNextState, LocalState, WorldState};

/// Closed-form plant gains. Noise is off by default; positive standard
/// deviations enable seeded Gaussian perturbation of each step inside
/// [`Surrogate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateParams {
    /// Forward displacement per unit mean normalized on-time, mm.
    pub k_fwd_mm: f64,
    /// Yaw increment per unit normalized on-time differential, rad.
    pub k_turn_rad: f64,
    /// Lateral coupling displacement, mm.
    pub k_lat_mm: f64,
    /// Carry-over of the incoming velocity into the displacement, in [0, 1).
    pub momentum: f64,
    pub noise_pos_mm: f64,
    pub noise_yaw_rad: f64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self {
            k_fwd_mm: 40.0,
            k_turn_rad: 0.6,
            k_lat_mm: 5.0,
            momentum: 0.3,
            noise_pos_mm: 0.0,
            noise_yaw_rad: 0.0,
        }
    }
}

impl SurrogateParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_fwd_mm > 0.0 && self.k_fwd_mm.is_finite()) {
            return Err(Error::Config(format!(
                "k_fwd must be positive, got {}",
                self.k_fwd_mm
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.k_turn_rad.is_finite() && self.k_lat_mm.is_finite()) {
            return Err(Error::Config("turn/lateral gains must be finite".into()));
        }
        if self.noise_pos_mm < 0.0 || self.noise_yaw_rad < 0.0 {
            return Err(Error::Config(
                "noise standard deviations must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Deterministic closed-form step of the synthetic plant. With normalized
/// on-times (b_n, d_n) and dt = (b + d) / 1000 s:
///
/// dθ = k_turn (d_n − b_n)
/// dx = k_fwd (b_n + d_n) / 2 + momentum · vx · dt
/// dy = k_lat (d_n − b_n) / 2 + momentum · vy · dt
///
/// Exit velocities are (dx/dt, dy/dt) in the pre-step frame, ω = dθ/dt.
pub fn surrogate_step(
    params: &SurrogateParams,
    bounds: &ActionBounds,
    s: &LocalState,
    a: &Action,
) -> Result<LocalNextState> {
    params.validate()?;
    bounds.validate()?;
    if !bounds.contains(a) {
        return Err(Error::Domain(format!(
            "action ({}, {}) outside bounds [{}, {}]",
            a.b_ms, a.d_ms, bounds.min_ms, bounds.max_ms
        )));
    }
    let (b_n, d_n) = bounds.normalize(a);
    let dt = a.duration_s();
    let dtheta = params.k_turn_rad * (d_n - b_n);
    let dx = params.k_fwd_mm * 0.5 * (b_n + d_n) + params.momentum * s.vx_mm_s * dt;
    let dy = params.k_lat_mm * 0.5 * (d_n - b_n) + params.momentum * s.vy_mm_s * dt;
    Ok(LocalNextState {
        dx_mm: dx,
        dy_mm: dy,
        dtheta_rad: dtheta,
        vx_mm_s: dx / dt,
        vy_mm_s: dy / dt,
        omega_rad_s: dtheta / dt,
    })
}

/// Stateful plant wrapper that optionally perturbs each step with seeded
/// Gaussian noise on the displacement and yaw increment; exit velocities
/// are recomputed from the noisy displacement so steps stay physically
/// consistent.
#[derive(Debug, Clone)]
pub struct Surrogate {
    pub params: SurrogateParams,
    pub bounds: ActionBounds,
    rng: ChaCha8Rng,
}

impl Surrogate {
    pub fn new(params: SurrogateParams, bounds: ActionBounds, seed: u64) -> Result<Self> {
        params.validate()?;
        bounds.validate()?;
        Ok(Self {
            params,
            bounds,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

impl Plant for Surrogate {
    fn plant_step(&mut self, s: &LocalState, a: &Action) -> Result<LocalNextState> {
        let mut next = surrogate_step(&self.params, &self.bounds, s, a)?;
        if self.params.noise_pos_mm > 0.0 || self.params.noise_yaw_rad > 0.0 {
            let dt = a.duration_s();
            if self.params.noise_pos_mm > 0.0 {
                let pos = Normal::new(0.0, self.params.noise_pos_mm)
                    .map_err(|e| Error::Config(format!("bad noise distribution: {e}")))?;
                next.dx_mm += pos.sample(&mut self.rng);
                next.dy_mm += pos.sample(&mut self.rng);
            }
            if self.params.noise_yaw_rad > 0.0 {
                let yaw = Normal::new(0.0, self.params.noise_yaw_rad)
                    .map_err(|e| Error::Config(format!("bad noise distribution: {e}")))?;
                next.dtheta_rad += yaw.sample(&mut self.rng);
            }
            next.vx_mm_s = next.dx_mm / dt;
            next.vy_mm_s = next.dy_mm / dt;
            next.omega_rad_s = next.dtheta_rad / dt;
        }
        Ok(next)
    }
}

/// Uniform in-bounds action sampler for data collection.
pub fn uniform_sampler(bounds: ActionBounds) -> impl FnMut(&mut ChaCha8Rng) -> Action {
    move |rng| {
        Action::new(
            rng.random_range(bounds.min_ms..=bounds.max_ms),
            rng.random_range(bounds.min_ms..=bounds.max_ms),
        )
    }
}

/// Chain `n` surrogate steps from rest, sampling an action per step and
/// rebasing the state between steps. Deterministic per seed.
pub fn collect_transitions<F>(
    params: &SurrogateParams,
    bounds: &ActionBounds,
    n: usize,
    mut sampler: F,
    seed: u64,
) -> Result<Vec<TransitionSample>>
where
    F: FnMut(&mut ChaCha8Rng) -> Action,
{
    if n == 0 {
        return Err(Error::Config("need at least one transition".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = LocalState::ZERO;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let action = sampler(&mut rng);
        let next = surrogate_step(params, bounds, &state, &action)?;
        out.push(TransitionSample {
            state,
            action,
            next,
        });
        state = rebase(&next);
    }
    Ok(out)
}

/// Root-mean-square of the per-step reference deviations of a run.
pub fn rmse(log: &TrajectoryLog) -> Result<f64> {
    rmse_of_deviations(&log.deviations())
}

pub fn rmse_of_deviations(deviations: &[f64]) -> Result<f64> {
    if deviations.is_empty() {
        return Err(Error::Empty("no steps to compute RMSE over".into()));
    }
    Ok((deviations.iter().map(|d| d * d).sum::<f64>() / deviations.len() as f64).sqrt())
}

/// Square tank the experiments run in; recorded in reports but not
/// enforced as a hard wall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TankBounds {
    pub width_mm: f64,
    pub height_mm: f64,
}

impl Default for TankBounds {
    fn default() -> Self {
        Self {
            width_mm: 600.0,
            height_mm: 600.0,
        }
    }
}

impl TankBounds {
    pub fn contains(&self, x_mm: f64, y_mm: f64) -> bool {
        (0.0..=self.width_mm).contains(&x_mm) && (0.0..=self.height_mm).contains(&y_mm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Expert,
    Distilled,
}

/// Right-turn path recipe: where the turn starts, how wide it is, and how
/// finely it is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathSpec {
    pub start_x_mm: f64,
    pub start_y_mm: f64,
    pub start_theta_rad: f64,
    pub radius_scale_mm: f64,
    pub points: usize,
}

impl Default for PathSpec {
    fn default() -> Self {
        Self {
            start_x_mm: 100.0,
            start_y_mm: 400.0,
            start_theta_rad: 0.0,
            radius_scale_mm: 150.0,
            points: 200,
        }
    }
}

impl PathSpec {
    pub fn build(&self) -> Result<TargetPath> {
        crate::path::make_right_turn_path(
            PathPoint::new(self.start_x_mm, self.start_y_mm, self.start_theta_rad),
            self.radius_scale_mm,
            self.points,
        )
    }
}

/// One closed-loop experiment: a start pose, a path, a controller, and
/// the plant it runs against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub start: WorldState,
    pub path: PathSpec,
    pub controller: ControllerKind,
    pub max_steps: usize,
    pub seed: u64,
    pub tank: TankBounds,
    pub gmpc: GmpcConfig,
    pub surrogate: SurrogateParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            start: WorldState::at_pose(100.0, 400.0, 0.0),
            path: PathSpec::default(),
            controller: ControllerKind::Expert,
            max_steps: 120,
            seed: 0,
            tank: TankBounds::default(),
            gmpc: GmpcConfig::default(),
            surrogate: SurrogateParams::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.tank.contains(self.start.x_mm, self.start.y_mm) {
            return Err(Error::Domain(format!(
                "start ({}, {}) outside tank {} x {} mm",
                self.start.x_mm, self.start.y_mm, self.tank.width_mm, self.tank.height_mm
            )));
        }
        if !self.start.is_finite() {
            return Err(Error::NonFinite("start state must be finite".into()));
        }
        self.gmpc.validate()?;
        self.surrogate.validate()?;
        self.path.build().map(|_| ())
    }
}

/// Trajectory, deviations, and summary statistics of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub log: TrajectoryLog,
    pub rmse_mm: f64,
    pub deviations_mm: Vec<f64>,
    /// Total simulated time, exactly the sum of the per-step durations.
    pub total_time_s: f64,
}

impl RunReport {
    pub fn summary(&self, cfg: &ScenarioConfig) -> ReportSummary {
        ReportSummary {
            rmse_mm: self.rmse_mm,
            steps: self.log.steps.len(),
            total_time_s: self.total_time_s,
            config: cfg.clone(),
        }
    }
}

/// JSON-facing summary: statistics plus an echo of the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub rmse_mm: f64,
    pub steps: usize,
    pub total_time_s: f64,
    pub config: ScenarioConfig,
}

pub fn write_report_json<P: AsRef<FsPath>>(path: P, summary: &ReportSummary) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, summary)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Wire plant, controller, and path together and execute the scenario
/// against the surrogate plant. Only the model the chosen controller
/// needs has to be present.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    fdm: Option<&FdmModel>,
    ilc: Option<&IlcModel>,
) -> Result<RunReport> {
    cfg.validate()?;
    let path = cfg.path.build()?;
    let mut plant = Surrogate::new(cfg.surrogate, cfg.gmpc.bounds, cfg.seed)?;
    let log = match cfg.controller {
        ControllerKind::Expert => {
            let model = fdm.ok_or_else(|| {
                Error::Config("expert controller requires a trained dynamics model".into())
            })?;
            receding_horizon(
                model,
                &mut plant,
                &cfg.start,
                &path,
                &cfg.gmpc,
                cfg.max_steps,
            )?
        }
        ControllerKind::Distilled => {
            let policy = ilc.ok_or_else(|| {
                Error::Config("distilled controller requires a trained policy model".into())
            })?;
            ilc_control_loop(
                policy,
                &mut plant,
                &cfg.start,
                &path,
                &cfg.gmpc,
                cfg.max_steps,
            )?
            .log
        }
    };
    let rmse_mm = rmse(&log)?;
    let deviations_mm = log.deviations();
    let total_time_s = log.steps.iter().map(|s| s.dt_s).sum();
    Ok(RunReport {
        log,
        rmse_mm,
        deviations_mm,
        total_time_s,
    })
}
