//! Imitation-learning controller: generate an expert dataset from G-MPC
//! runs over a grid of initial conditions, distill it into a one-shot
//! policy network, and run that policy closed-loop.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path as FsPath;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdm::{Action, ActionBounds, FdmModel, Plant, Standardizer};
use crate::gmpc::{get_ref, receding_horizon, step_cost, GmpcConfig, StepRecord, TrajectoryLog};
use crate::nn::{train_regression, Mlp, RegressionDataset, TrainConfig};
use crate::path::{PathPoint, TargetPath};
use crate::se2::{compose_world, world_to_local, wrap, LocalState, WorldState};

/// A path point expressed in the robot's frame: planar offset plus the
/// wrapped heading difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeRef {
    pub dx_mm: f64,
    pub dy_mm: f64,
    pub dtheta_rad: f64,
}

/// Express a world-frame reference point relative to the robot.
pub fn world_ref_to_relative(pose: &WorldState, p: &PathPoint) -> RelativeRef {
    let dxw = p.x_mm - pose.x_mm;
    let dyw = p.y_mm - pose.y_mm;
    let (sin_t, cos_t) = pose.theta_rad.sin_cos();
    RelativeRef {
        dx_mm: cos_t * dxw + sin_t * dyw,
        dy_mm: -sin_t * dxw + cos_t * dyw,
        dtheta_rad: wrap(p.theta_rad - pose.theta_rad),
    }
}

/// One expert demonstration: robot-frame state, reference relative to the
/// robot, and the expert's first optimized (in-bounds) action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IlcSample {
    pub state: LocalState,
    pub ref_rel: RelativeRef,
    pub action: Action,
}

impl IlcSample {
    fn input_vector(&self) -> Vec<f64> {
        vec![
            self.state.vx_mm_s,
            self.state.vy_mm_s,
            self.state.omega_rad_s,
            self.ref_rel.dx_mm,
            self.ref_rel.dy_mm,
            self.ref_rel.dtheta_rad,
        ]
    }

    fn is_finite(&self) -> bool {
        self.input_vector().iter().all(|x| x.is_finite()) && self.action.is_finite()
    }
}

/// Grid of initial conditions the expert is run from, combined as the
/// cartesian product in (x, y, yaw) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IlcGrid {
    pub xs_mm: Vec<f64>,
    pub ys_mm: Vec<f64>,
    pub yaws_rad: Vec<f64>,
}

impl Default for IlcGrid {
    fn default() -> Self {
        let tilt = std::f64::consts::PI / 18.0;
        Self {
            xs_mm: vec![50.0, 100.0, 150.0],
            ys_mm: vec![350.0, 400.0, 450.0],
            yaws_rad: vec![-tilt, 0.0, tilt],
        }
    }
}

impl IlcGrid {
    pub fn starts(&self) -> Vec<WorldState> {
        let mut out = Vec::with_capacity(self.xs_mm.len() * self.ys_mm.len() * self.yaws_rad.len());
        for &x in &self.xs_mm {
            for &y in &self.ys_mm {
                for &yaw in &self.yaws_rad {
                    out.push(WorldState::at_pose(x, y, yaw));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.xs_mm.is_empty() || self.ys_mm.is_empty() || self.yaws_rad.is_empty() {
            return Err(Error::Config("imitation grid has an empty axis".into()));
        }
        Ok(())
    }
}

/// Run the expert controller from every grid start (the trained dynamics
/// model doubles as the plant) and record one sample per control step,
/// in fixed grid order.
pub fn generate_ilc_dataset(
    model: &FdmModel,
    cfg: &GmpcConfig,
    path: &TargetPath,
    grid: &IlcGrid,
    max_steps: usize,
) -> Result<Vec<IlcSample>> {
    grid.validate()?;
    let mut samples = Vec::new();
    for start in grid.starts() {
        let mut plant = model.clone();
        let log = receding_horizon(model, &mut plant, &start, path, cfg, max_steps)?;
        for rec in &log.steps {
            samples.push(IlcSample {
                state: rec.pre_local,
                ref_rel: world_ref_to_relative(&rec.pre_pose, &rec.reference),
                action: rec.action,
            });
        }
    }
    Ok(samples)
}

pub const ILC_INPUT_DIM: usize = 6;
pub const ILC_OUTPUT_DIM: usize = 2;

/// Distilled one-shot policy with its input standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlcModel {
    pub net: Mlp,
    pub input_norm: Standardizer,
    pub bounds: ActionBounds,
}

impl IlcModel {
    pub fn new(net: Mlp, input_norm: Standardizer, bounds: ActionBounds) -> Result<Self> {
        let m = Self {
            net,
            input_norm,
            bounds,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.net.input_dim() != ILC_INPUT_DIM || self.net.output_dim() != ILC_OUTPUT_DIM {
            return Err(Error::Dim(format!(
                "policy net must map {ILC_INPUT_DIM} -> {ILC_OUTPUT_DIM}, got {} -> {}",
                self.net.input_dim(),
                self.net.output_dim()
            )));
        }
        if !self.net.params_finite() {
            return Err(Error::NonFinite("policy parameters are not finite".into()));
        }
        self.input_norm.validate(ILC_INPUT_DIM)?;
        self.bounds.validate()
    }

    pub fn save_json<P: AsRef<FsPath>>(&self, path: P) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_json<P: AsRef<FsPath>>(path: P) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let model: IlcModel = serde_json::from_reader(r)?;
        model.validate()?;
        Ok(model)
    }
}

/// One forward pass: standardized (state, relative reference) in,
/// normalized on-times out, denormalized and clamped to the bounds.
pub fn ilc_act(model: &IlcModel, s: &LocalState, ref_rel: &RelativeRef) -> Result<Action> {
    let sample = IlcSample {
        state: *s,
        ref_rel: *ref_rel,
        action: Action::new(model.bounds.min_ms, model.bounds.min_ms),
    };
    if !sample.is_finite() {
        return Err(Error::NonFinite("policy inputs must be finite".into()));
    }
    let x = model.input_norm.apply(&sample.input_vector());
    let y = model.net.forward(&x)?;
    Ok(model.bounds.clamp(&model.bounds.denormalize(y[0], y[1])))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IlcTrainConfig {
    pub hidden_dims: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Decoupled decay. Defaults to zero: at the cloning learning rate
    /// even a mild 0.01 drags the policy away from the expert actions.
    pub weight_decay: f64,
    pub bounds: ActionBounds,
}

impl Default for IlcTrainConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![8],
            epochs: 1000,
            batch_size: 32,
            lr: 0.1,
            weight_decay: 0.0,
            bounds: ActionBounds::default(),
        }
    }
}

impl IlcTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("zero-width hidden layer".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        self.bounds.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlcTrainReport {
    pub loss_history: Vec<f64>,
    pub sample_count: usize,
}

/// Behavior cloning: MSE regression from standardized (state, relative
/// reference) inputs to the expert's normalized actions.
pub fn train_ilc(
    samples: &[IlcSample],
    cfg: &IlcTrainConfig,
    seed: u64,
) -> Result<(IlcModel, IlcTrainReport)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("no imitation samples".into()));
    }
    if samples.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "{} samples is fewer than batch size {}",
            samples.len(),
            cfg.batch_size
        )));
    }
    for (i, s) in samples.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::NonFinite(format!(
                "sample {i} contains non-finite values"
            )));
        }
        if !cfg.bounds.contains(&s.action) {
            return Err(Error::Domain(format!(
                "sample {i} action ({}, {}) outside bounds [{}, {}]",
                s.action.b_ms, s.action.d_ms, cfg.bounds.min_ms, cfg.bounds.max_ms
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init_seed = rng.next_u64();
    let train_seed = rng.next_u64();

    let raw_inputs: Vec<Vec<f64>> = samples.iter().map(|s| s.input_vector()).collect();
    let input_norm = Standardizer::fit(&raw_inputs)?;
    let inputs: Vec<Vec<f64>> = raw_inputs.iter().map(|x| input_norm.apply(x)).collect();
    let targets: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            let (b_n, d_n) = cfg.bounds.normalize(&s.action);
            vec![b_n, d_n]
        })
        .collect();
    let data = RegressionDataset::new(inputs, targets)?;

    let mut dims = vec![ILC_INPUT_DIM];
    dims.extend_from_slice(&cfg.hidden_dims);
    dims.push(ILC_OUTPUT_DIM);
    let mut net = Mlp::init(&dims, init_seed)?;
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
    };
    let loss_history = train_regression(&mut net, &data, &train_cfg, train_seed)?;

    let model = IlcModel::new(net, input_norm, cfg.bounds)?;
    let report = IlcTrainReport {
        loss_history,
        sample_count: samples.len(),
    };
    Ok((model, report))
}

/// Closed-loop result of the distilled policy.
#[derive(Debug, Clone, PartialEq)]
pub struct IlcRunResult {
    pub log: TrajectoryLog,
    /// Root-mean-square reference deviation; None for an empty run.
    pub rmse_mm: Option<f64>,
}

/// Run the policy closed-loop: select the reference exactly like the
/// expert (same look-ahead and heading weight), express it in the robot
/// frame, infer one action, apply it to the plant. The logged objective
/// is the realized step cost.
pub fn ilc_control_loop(
    model: &IlcModel,
    plant: &mut dyn Plant,
    s0: &WorldState,
    path: &TargetPath,
    cfg: &GmpcConfig,
    max_steps: usize,
) -> Result<IlcRunResult> {
    cfg.validate()?;
    let mut pose = *s0;
    let mut steps = Vec::new();
    for step in 0..max_steps {
        let pick = get_ref(&pose, path, cfg.lookahead_mm, cfg.heading_weight)?;
        if pick.nearest_index + 1 >= path.len() {
            break;
        }
        let local = world_to_local(&pose);
        let ref_rel = world_ref_to_relative(&pose, &pick.point);
        let action = ilc_act(model, &local, &ref_rel)?;
        let next = plant.plant_step(&local, &action)?;
        let new_pose = compose_world(&pose, &next);
        steps.push(StepRecord {
            step,
            pre_pose: pose,
            pre_local: local,
            pose: new_pose,
            action,
            reference: pick.point,
            dt_s: action.duration_s(),
            objective: step_cost(&new_pose, &pick.point, cfg.cost_weights),
        });
        pose = new_pose;
    }
    let log = TrajectoryLog {
        initial_pose: *s0,
        steps,
    };
    let rmse_mm = if log.steps.is_empty() {
        None
    } else {
        let dev = log.deviations();
        Some((dev.iter().map(|d| d * d).sum::<f64>() / dev.len() as f64).sqrt())
    };
    Ok(IlcRunResult { log, rmse_mm })
}

const ILC_HEADER: [&str; 8] = [
    "vx",
    "vy",
    "omega",
    "ref_dx",
    "ref_dy",
    "ref_dtheta",
    "b_ms",
    "d_ms",
];

/// Write imitation samples as CSV with the header
/// `vx,vy,omega,ref_dx,ref_dy,ref_dtheta,b_ms,d_ms`.
pub fn write_ilc_csv<P: AsRef<FsPath>>(path: P, samples: &[IlcSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ILC_HEADER)?;
    for s in samples {
        w.write_record(&[
            s.state.vx_mm_s.to_string(),
            s.state.vy_mm_s.to_string(),
            s.state.omega_rad_s.to_string(),
            s.ref_rel.dx_mm.to_string(),
            s.ref_rel.dy_mm.to_string(),
            s.ref_rel.dtheta_rad.to_string(),
            s.action.b_ms.to_string(),
            s.action.d_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ilc_csv<P: AsRef<FsPath>>(path: P) -> Result<Vec<IlcSample>> {
    let mut r = csv::Reader::from_path(path)?;
    {
        let headers = r.headers()?;
        if headers.len() != ILC_HEADER.len() {
            return Err(Error::Dim(format!(
                "imitation CSV has {} columns, expected {}",
                headers.len(),
                ILC_HEADER.len()
            )));
        }
    }
    let mut samples = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|e| {
                Error::Domain(format!("bad float {:?} in imitation CSV: {e}", &rec[i]))
            })
        };
        samples.push(IlcSample {
            state: LocalState {
                vx_mm_s: field(0)?,
                vy_mm_s: field(1)?,
                omega_rad_s: field(2)?,
            },
            ref_rel: RelativeRef {
                dx_mm: field(3)?,
                dy_mm: field(4)?,
                dtheta_rad: field(5)?,
            },
            action: Action::new(field(6)?, field(7)?),
        });
    }
    Ok(samples)
}
