//! Learned forward dynamics model: encode (state, action) pairs, train on
//! transition tuples, predict the next local state, and roll out
//! multi-step world trajectories by frame chaining.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{train_regression, Mlp, RegressionDataset, TrainConfig};
use crate::se2::{
    compose_world, rebase, world_to_local, wrap, LocalNextState, LocalState, WorldState,
};

/// On-times for the left (`b_ms`) and right (`d_ms`) actuation coils.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub b_ms: f64,
    pub d_ms: f64,
}

impl Action {
    pub fn new(b_ms: f64, d_ms: f64) -> Self {
        Self { b_ms, d_ms }
    }

    /// Physical duration of the step: both coil on-times run back to
    /// back, so dt = (b + d) / 1000 seconds.
    pub fn duration_s(&self) -> f64 {
        (self.b_ms + self.d_ms) / 1000.0
    }

    pub fn is_finite(&self) -> bool {
        self.b_ms.is_finite() && self.d_ms.is_finite()
    }
}

/// Inclusive on-time range used for normalization, clamping, and the
/// optimizer's box constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub min_ms: f64,
    pub max_ms: f64,
}

impl Default for ActionBounds {
    fn default() -> Self {
        Self {
            min_ms: 200.0,
            max_ms: 900.0,
        }
    }
}

impl ActionBounds {
    pub fn new(min_ms: f64, max_ms: f64) -> Result<Self> {
        let b = Self { min_ms, max_ms };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.min_ms.is_finite() || !self.max_ms.is_finite() || self.max_ms <= self.min_ms {
            return Err(Error::Config(format!(
                "action bounds need finite max > min, got [{}, {}]",
                self.min_ms, self.max_ms
            )));
        }
        Ok(())
    }

    pub fn span(&self) -> f64 {
        self.max_ms - self.min_ms
    }

    /// Linear map ms -> unitless; values outside the bounds map outside
    /// [0, 1] (no clamping here).
    pub fn normalize(&self, a: &Action) -> (f64, f64) {
        (
            (a.b_ms - self.min_ms) / self.span(),
            (a.d_ms - self.min_ms) / self.span(),
        )
    }

    pub fn denormalize(&self, b_n: f64, d_n: f64) -> Action {
        Action::new(
            self.min_ms + b_n * self.span(),
            self.min_ms + d_n * self.span(),
        )
    }

    pub fn clamp(&self, a: &Action) -> Action {
        Action::new(
            a.b_ms.clamp(self.min_ms, self.max_ms),
            a.d_ms.clamp(self.min_ms, self.max_ms),
        )
    }

    pub fn contains(&self, a: &Action) -> bool {
        (self.min_ms..=self.max_ms).contains(&a.b_ms)
            && (self.min_ms..=self.max_ms).contains(&a.d_ms)
    }
}

/// Per-dimension affine standardization fitted on training data.
/// Near-constant dimensions get scale 1 so the map stays invertible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Empty("no rows to standardize".into()))?;
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var
            .iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s < 1e-9 {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.mean.len() != dim || self.scale.len() != dim {
            return Err(Error::Dim(format!(
                "standardizer dims {}/{} vs expected {dim}",
                self.mean.len(),
                self.scale.len()
            )));
        }
        if self.scale.iter().any(|&s| !s.is_finite() || s <= 0.0) {
            return Err(Error::Config("standardizer scale must be positive".into()));
        }
        Ok(())
    }
}

/// Normalization statistics stored with a trained model: velocity
/// standardization for the input side, per-dimension standardization of
/// the 6-d targets on the output side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdmNorm {
    pub vel: Standardizer,
    pub out: Standardizer,
}

/// One recorded transition of the plant in the robot frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionSample {
    pub state: LocalState,
    pub action: Action,
    pub next: LocalNextState,
}

impl TransitionSample {
    pub fn is_finite(&self) -> bool {
        let s = &self.state;
        let n = &self.next;
        s.vx_mm_s.is_finite()
            && s.vy_mm_s.is_finite()
            && s.omega_rad_s.is_finite()
            && self.action.is_finite()
            && n.dx_mm.is_finite()
            && n.dy_mm.is_finite()
            && n.dtheta_rad.is_finite()
            && n.vx_mm_s.is_finite()
            && n.vy_mm_s.is_finite()
            && n.omega_rad_s.is_finite()
    }
}

/// Anything that maps (local state, action) to the next local state:
/// the synthetic plant during data collection and evaluation, or a
/// trained [`FdmModel`] during imitation-data generation.
pub trait Plant {
    fn plant_step(&mut self, s: &LocalState, a: &Action) -> Result<LocalNextState>;
}

pub const FDM_INPUT_DIM: usize = 5;
pub const FDM_OUTPUT_DIM: usize = 6;

/// Trained dynamics model with its normalization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdmModel {
    pub net: Mlp,
    pub norm: FdmNorm,
    pub bounds: ActionBounds,
}

impl FdmModel {
    pub fn new(net: Mlp, norm: FdmNorm, bounds: ActionBounds) -> Result<Self> {
        let m = Self { net, norm, bounds };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.net.input_dim() != FDM_INPUT_DIM || self.net.output_dim() != FDM_OUTPUT_DIM {
            return Err(Error::Dim(format!(
                "dynamics net must map {FDM_INPUT_DIM} -> {FDM_OUTPUT_DIM}, got {} -> {}",
                self.net.input_dim(),
                self.net.output_dim()
            )));
        }
        if !self.net.params_finite() {
            return Err(Error::NonFinite("model parameters are not finite".into()));
        }
        self.norm.vel.validate(3)?;
        self.norm.out.validate(FDM_OUTPUT_DIM)?;
        self.bounds.validate()
    }

    /// Build the 5-d network input: standardized local velocities
    /// followed by the normalized on-times.
    pub fn encode_input(&self, s: &LocalState, a: &Action) -> Vec<f64> {
        let z = self.norm.vel.apply(&[s.vx_mm_s, s.vy_mm_s, s.omega_rad_s]);
        let (b_n, d_n) = self.bounds.normalize(a);
        vec![z[0], z[1], z[2], b_n, d_n]
    }

    /// Inverse of target standardization, with the heading increment
    /// wrapped.
    pub fn decode_output(&self, z: &[f64]) -> LocalNextState {
        let raw = self.norm.out.invert(z);
        LocalNextState {
            dx_mm: raw[0],
            dy_mm: raw[1],
            dtheta_rad: wrap(raw[2]),
            vx_mm_s: raw[3],
            vy_mm_s: raw[4],
            omega_rad_s: raw[5],
        }
    }

    pub fn predict(&self, s: &LocalState, a: &Action) -> Result<LocalNextState> {
        if !(s.vx_mm_s.is_finite()
            && s.vy_mm_s.is_finite()
            && s.omega_rad_s.is_finite()
            && a.is_finite())
        {
            return Err(Error::NonFinite("prediction inputs must be finite".into()));
        }
        let z = self.net.forward(&self.encode_input(s, a))?;
        Ok(self.decode_output(&z))
    }

    /// Chain predictions from `start`, composing each local step into the
    /// world frame and rebasing velocities into the new robot frame.
    pub fn rollout(&self, start: &WorldState, actions: &[Action]) -> Result<Rollout> {
        let mut poses = Vec::with_capacity(actions.len() + 1);
        let mut dt_s = Vec::with_capacity(actions.len());
        poses.push(*start);
        let mut pose = *start;
        let mut local = world_to_local(start);
        for a in actions {
            let next = self.predict(&local, a)?;
            pose = compose_world(&pose, &next);
            local = rebase(&next);
            poses.push(pose);
            dt_s.push(a.duration_s());
        }
        Ok(Rollout { poses, dt_s })
    }

    pub fn save_json<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_json<P: AsRef<Path>>(path: P) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let model: FdmModel = serde_json::from_reader(r)?;
        model.validate()?;
        Ok(model)
    }
}

impl Plant for FdmModel {
    fn plant_step(&mut self, s: &LocalState, a: &Action) -> Result<LocalNextState> {
        self.predict(s, a)
    }
}

/// World poses visited by a rollout plus the physical duration of each
/// step, dt_k = (b_k + d_k) / 1000 s.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub poses: Vec<WorldState>,
    pub dt_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdmTrainConfig {
    pub hidden_dims: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub val_fraction: f64,
    pub bounds: ActionBounds,
}

impl Default for FdmTrainConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![8, 8],
            epochs: 100,
            batch_size: 8,
            lr: 0.001,
            weight_decay: 0.01,
            val_fraction: 0.1,
            bounds: ActionBounds::default(),
        }
    }
}

impl FdmTrainConfig {
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
        if !(0.0..=0.5).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction must lie in [0, 0.5], got {}",
                self.val_fraction
            )));
        }
        self.bounds.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdmTrainReport {
    pub loss_history: Vec<f64>,
    pub val_mse: Option<f64>,
    pub train_count: usize,
    pub val_count: usize,
}

fn target_vector(next: &LocalNextState) -> Vec<f64> {
    vec![
        next.dx_mm,
        next.dy_mm,
        next.dtheta_rad,
        next.vx_mm_s,
        next.vy_mm_s,
        next.omega_rad_s,
    ]
}

/// Fit normalization on a seeded 90/10 train/validation split, train the
/// network on standardized targets, and report per-epoch training loss
/// plus final validation MSE. Validation is for reporting only.
pub fn train_fdm(
    samples: &[TransitionSample],
    cfg: &FdmTrainConfig,
    seed: u64,
) -> Result<(FdmModel, FdmTrainReport)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("no transition samples".into()));
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
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let init_seed = rng.next_u64();
    let train_seed = rng.next_u64();

    let val_count = ((samples.len() as f64) * cfg.val_fraction).round() as usize;
    let train_count = samples.len() - val_count;
    if train_count < cfg.batch_size {
        return Err(Error::Config(format!(
            "training split of {train_count} is smaller than batch size {}",
            cfg.batch_size
        )));
    }
    let (train_idx, val_idx) = order.split_at(train_count);

    let vel_rows: Vec<Vec<f64>> = train_idx
        .iter()
        .map(|&i| {
            let s = &samples[i].state;
            vec![s.vx_mm_s, s.vy_mm_s, s.omega_rad_s]
        })
        .collect();
    let out_rows: Vec<Vec<f64>> = train_idx
        .iter()
        .map(|&i| target_vector(&samples[i].next))
        .collect();
    let norm = FdmNorm {
        vel: Standardizer::fit(&vel_rows)?,
        out: Standardizer::fit(&out_rows)?,
    };

    let mut dims = vec![FDM_INPUT_DIM];
    dims.extend_from_slice(&cfg.hidden_dims);
    dims.push(FDM_OUTPUT_DIM);
    let net = Mlp::init(&dims, init_seed)?;
    let mut model = FdmModel::new(net, norm, cfg.bounds)?;

    let encode = |model: &FdmModel, i: usize| -> (Vec<f64>, Vec<f64>) {
        let s = &samples[i];
        (
            model.encode_input(&s.state, &s.action),
            model.norm.out.apply(&target_vector(&s.next)),
        )
    };
    let (inputs, targets): (Vec<_>, Vec<_>) = train_idx.iter().map(|&i| encode(&model, i)).unzip();
    let data = RegressionDataset::new(inputs, targets)?;
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
    };
    let loss_history = train_regression(&mut model.net, &data, &train_cfg, train_seed)?;

    let val_mse = if val_idx.is_empty() {
        None
    } else {
        let mut total = 0.0;
        for &i in val_idx {
            let (x, t) = encode(&model, i);
            let y = model.net.forward(&x)?;
            total += y
                .iter()
                .zip(&t)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / FDM_OUTPUT_DIM as f64;
        }
        Some(total / val_idx.len() as f64)
    };

    let report = FdmTrainReport {
        loss_history,
        val_mse,
        train_count,
        val_count,
    };
    Ok((model, report))
}

const TRANSITION_HEADER: [&str; 11] = [
    "vx",
    "vy",
    "omega",
    "b_ms",
    "d_ms",
    "dx",
    "dy",
    "dtheta",
    "vx_next",
    "vy_next",
    "omega_next",
];

/// Write transitions as CSV with the header
/// `vx,vy,omega,b_ms,d_ms,dx,dy,dtheta,vx_next,vy_next,omega_next`.
pub fn write_transitions_csv<P: AsRef<Path>>(path: P, samples: &[TransitionSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRANSITION_HEADER)?;
    for s in samples {
        w.write_record(&[
            s.state.vx_mm_s.to_string(),
            s.state.vy_mm_s.to_string(),
            s.state.omega_rad_s.to_string(),
            s.action.b_ms.to_string(),
            s.action.d_ms.to_string(),
            s.next.dx_mm.to_string(),
            s.next.dy_mm.to_string(),
            s.next.dtheta_rad.to_string(),
            s.next.vx_mm_s.to_string(),
            s.next.vy_mm_s.to_string(),
            s.next.omega_rad_s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_transitions_csv<P: AsRef<Path>>(path: P) -> Result<Vec<TransitionSample>> {
    let mut r = csv::Reader::from_path(path)?;
    {
        let headers = r.headers()?;
        if headers.len() != TRANSITION_HEADER.len() {
            return Err(Error::Dim(format!(
                "transition CSV has {} columns, expected {}",
                headers.len(),
                TRANSITION_HEADER.len()
            )));
        }
    }
    let mut samples = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|e| {
                Error::Domain(format!("bad float {:?} in transition CSV: {e}", &rec[i]))
            })
        };
        samples.push(TransitionSample {
            state: LocalState {
                vx_mm_s: field(0)?,
                vy_mm_s: field(1)?,
                omega_rad_s: field(2)?,
            },
            action: Action::new(field(3)?, field(4)?),
            next: LocalNextState {
                dx_mm: field(5)?,
                dy_mm: field(6)?,
                dtheta_rad: field(7)?,
                vx_mm_s: field(8)?,
                vy_mm_s: field(9)?,
                omega_rad_s: field(10)?,
            },
        });
    }
    Ok(samples)
}
