//! Gradient-based model predictive control: reference selection along the
//! target path, quadratic horizon cost, action-sequence optimization by
//! backpropagation through the learned dynamics model, and the
//! receding-horizon control loop.

use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdm::{Action, ActionBounds, FdmModel, Plant};
use crate::nn::{adamw_step, AdamWState};
use crate::path::{PathPoint, TargetPath};
use crate::se2::{compose_world, rebase, world_to_local, wrap, LocalState, WorldState};

/// Horizon length, optimizer budget, look-ahead, and cost weights for the
/// controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmpcConfig {
    /// Prediction horizon H in control steps.
    pub horizon: usize,
    /// Optimization iterations N per control step.
    pub iterations: usize,
    /// Look-ahead distance L along the path, mm.
    pub lookahead_mm: f64,
    /// Adam learning rate on normalized actions.
    pub lr: f64,
    /// Diagonal of W: (w_x, w_y, w_yaw) in (1/mm², 1/mm², 1/rad²) scale.
    pub cost_weights: (f64, f64, f64),
    /// Weight w_h (mm²/rad²) trading heading against position error in
    /// nearest-point selection.
    pub heading_weight: f64,
    pub bounds: ActionBounds,
}

impl Default for GmpcConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            iterations: 1000,
            lookahead_mm: 50.0,
            lr: 0.005,
            cost_weights: (5.0, 5.0, 1.0),
            heading_weight: 100.0,
            bounds: ActionBounds::default(),
        }
    }
}

impl GmpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.iterations == 0 {
            return Err(Error::Config(
                "horizon and iterations must be at least 1".into(),
            ));
        }
        if !(self.lookahead_mm > 0.0 && self.lookahead_mm.is_finite()) {
            return Err(Error::Config(format!(
                "lookahead must be positive, got {}",
                self.lookahead_mm
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        let (wx, wy, wyaw) = self.cost_weights;
        if !(wx >= 0.0 && wy >= 0.0 && wyaw >= 0.0 && self.heading_weight >= 0.0) {
            return Err(Error::Config("cost weights must be non-negative".into()));
        }
        self.bounds.validate()
    }
}

/// A fixed-length plan of coil on-times, one [`Action`] per horizon step.
pub type ActionSequence = Vec<Action>;

/// Position-plus-heading error metric used for nearest-point selection:
/// squared planar distance plus `heading_weight` times the squared
/// wrapped heading difference, in mm².
pub fn ref_error(pose: &WorldState, p: &PathPoint, heading_weight: f64) -> f64 {
    let dx = p.x_mm - pose.x_mm;
    let dy = p.y_mm - pose.y_mm;
    let dt = wrap(p.theta_rad - pose.theta_rad);
    dx * dx + dy * dy + heading_weight * dt * dt
}

/// Reference point chosen for one control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefPick {
    /// Index of the nearest path point by [`ref_error`].
    pub nearest_index: usize,
    /// Index of the selected reference at look-ahead distance.
    pub index: usize,
    pub point: PathPoint,
}

/// Find the nearest path point by the weighted error metric, then scan
/// forward from it for the point whose distance to the robot is closest
/// to the look-ahead. Ties break toward the smaller index.
pub fn get_ref(
    pose: &WorldState,
    path: &TargetPath,
    lookahead_mm: f64,
    heading_weight: f64,
) -> Result<RefPick> {
    if !lookahead_mm.is_finite() || lookahead_mm <= 0.0 {
        return Err(Error::Config(format!(
            "lookahead must be positive, got {lookahead_mm}"
        )));
    }
    let pts = path.points();
    let mut nearest = 0;
    let mut best = f64::INFINITY;
    for (i, p) in pts.iter().enumerate() {
        let e = ref_error(pose, p, heading_weight);
        if e < best {
            best = e;
            nearest = i;
        }
    }
    let mut index = nearest;
    let mut best_d = f64::INFINITY;
    for (i, p) in pts.iter().enumerate().skip(nearest) {
        let d = (p.distance_to(pose.x_mm, pose.y_mm) - lookahead_mm).abs();
        if d < best_d {
            best_d = d;
            index = i;
        }
    }
    Ok(RefPick {
        nearest_index: nearest,
        index,
        point: pts[index],
    })
}

/// Quadratic tracking cost (s_xyθ − p_ref)ᵀ W (s_xyθ − p_ref) with a
/// wrapped heading residual.
pub fn step_cost(pose: &WorldState, reference: &PathPoint, cost_weights: (f64, f64, f64)) -> f64 {
    let (wx, wy, wyaw) = cost_weights;
    let rx = pose.x_mm - reference.x_mm;
    let ry = pose.y_mm - reference.y_mm;
    let rt = wrap(pose.theta_rad - reference.theta_rad);
    wx * rx * rx + wy * ry * ry + wyaw * rt * rt
}

/// Predicted poses, per-step references, and the summed cost of one
/// horizon evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonEval {
    pub objective: f64,
    /// Reference for step j, selected from the predicted state before
    /// applying action j.
    pub refs: Vec<PathPoint>,
    /// Predicted poses including the start, length H + 1.
    pub poses: Vec<WorldState>,
}

/// Roll the model out over the action sequence and sum the step costs.
/// Each step's reference is selected from the pre-step predicted state;
/// its cost is evaluated at the post-step state.
pub fn horizon_objective(
    model: &FdmModel,
    s0: &WorldState,
    actions: &[Action],
    path: &TargetPath,
    cfg: &GmpcConfig,
) -> Result<HorizonEval> {
    cfg.validate()?;
    let mut pose = *s0;
    let mut local = world_to_local(s0);
    let mut poses = Vec::with_capacity(actions.len() + 1);
    let mut refs = Vec::with_capacity(actions.len());
    poses.push(pose);
    let mut objective = 0.0;
    for a in actions {
        let pick = get_ref(&pose, path, cfg.lookahead_mm, cfg.heading_weight)?;
        let next = model.predict(&local, a)?;
        pose = compose_world(&pose, &next);
        local = rebase(&next);
        objective += step_cost(&pose, &pick.point, cfg.cost_weights);
        refs.push(pick.point);
        poses.push(pose);
    }
    Ok(HorizonEval {
        objective,
        refs,
        poses,
    })
}

struct StepCache {
    /// Pre-step world heading.
    theta: f64,
    dxr: f64,
    dyr: f64,
    dtheta: f64,
    local_next: LocalState,
    net_cache: crate::nn::ForwardCache,
    pose_next: WorldState,
    reference: PathPoint,
}

/// Objective and its exact gradient with respect to the normalized
/// actions. `active` masks which step costs contribute; the public entry
/// point enables all of them.
fn eval_gradient(
    model: &FdmModel,
    s0: &WorldState,
    actions: &[Action],
    path: &TargetPath,
    cfg: &GmpcConfig,
    active: &dyn Fn(usize) -> bool,
) -> Result<(f64, Vec<f64>)> {
    let mut pose = *s0;
    let mut local = world_to_local(s0);
    let mut objective = 0.0;
    let mut caches = Vec::with_capacity(actions.len());

    for (j, a) in actions.iter().enumerate() {
        let pick = get_ref(&pose, path, cfg.lookahead_mm, cfg.heading_weight)?;
        let x = model.encode_input(&local, a);
        let net_cache = model.net.forward_cached(&x)?;
        let next = model.decode_output(net_cache.output());
        let pose_next = compose_world(&pose, &next);
        let local_next = rebase(&next);
        if !pose_next.is_finite() {
            return Err(Error::NonFinite(format!(
                "non-finite predicted state at horizon step {j}"
            )));
        }
        if active(j) {
            objective += step_cost(&pose_next, &pick.point, cfg.cost_weights);
        }
        caches.push(StepCache {
            theta: pose.theta_rad,
            dxr: next.dx_mm,
            dyr: next.dy_mm,
            dtheta: next.dtheta_rad,
            local_next,
            net_cache,
            pose_next,
            reference: pick.point,
        });
        pose = pose_next;
        local = local_next;
    }

    let (wx, wy, wyaw) = cfg.cost_weights;
    let in_scale = &model.norm.vel.scale;
    let out_scale = &model.norm.out.scale;
    let mut grad = vec![0.0; actions.len() * 2];
    let (mut gx, mut gy, mut gtheta) = (0.0, 0.0, 0.0);
    let (mut gvx, mut gvy, mut gomega) = (0.0, 0.0, 0.0);

    for j in (0..actions.len()).rev() {
        let c = &caches[j];
        if active(j) {
            gx += 2.0 * wx * (c.pose_next.x_mm - c.reference.x_mm);
            gy += 2.0 * wy * (c.pose_next.y_mm - c.reference.y_mm);
            gtheta += 2.0 * wyaw * wrap(c.pose_next.theta_rad - c.reference.theta_rad);
        }

        // Rebase: exit velocities rotate by -dtheta into the new frame.
        let (sin_d, cos_d) = c.dtheta.sin_cos();
        let g_vxn = gvx * cos_d - gvy * sin_d;
        let g_vyn = gvx * sin_d + gvy * cos_d;
        let mut g_dtheta = gtheta;
        g_dtheta += gvx * c.local_next.vy_mm_s - gvy * c.local_next.vx_mm_s;

        // Compose: local displacement rotates by the pre-step heading.
        let (sin_t, cos_t) = c.theta.sin_cos();
        let g_dxr = gx * cos_t + gy * sin_t;
        let g_dyr = -gx * sin_t + gy * cos_t;
        let g_theta_prev =
            gtheta + gx * (-sin_t * c.dxr - cos_t * c.dyr) + gy * (cos_t * c.dxr - sin_t * c.dyr);

        let dz = [
            g_dxr * out_scale[0],
            g_dyr * out_scale[1],
            g_dtheta * out_scale[2],
            g_vxn * out_scale[3],
            g_vyn * out_scale[4],
            gomega * out_scale[5],
        ];
        let (_, dx_in) = model.net.backward(&c.net_cache, &dz)?;

        grad[2 * j] = dx_in[3];
        grad[2 * j + 1] = dx_in[4];
        gtheta = g_theta_prev;
        gvx = dx_in[0] / in_scale[0];
        gvy = dx_in[1] / in_scale[1];
        gomega = dx_in[2] / in_scale[2];
    }
    Ok((objective, grad))
}

/// Exact reverse-mode gradient of the horizon objective with respect to
/// the normalized action sequence (2H values, b then d per step).
/// Reference selection is treated as constant: no gradient flows through
/// GetRef.
pub fn objective_gradient(
    model: &FdmModel,
    s0: &WorldState,
    actions: &[Action],
    path: &TargetPath,
    cfg: &GmpcConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    Ok(eval_gradient(model, s0, actions, path, cfg, &|_| true)?.1)
}

fn normalize_sequence(actions: &[Action], bounds: &ActionBounds) -> Vec<f64> {
    let mut u = Vec::with_capacity(actions.len() * 2);
    for a in actions {
        let (b_n, d_n) = bounds.normalize(a);
        u.push(b_n.clamp(0.0, 1.0));
        u.push(d_n.clamp(0.0, 1.0));
    }
    u
}

fn denormalize_sequence(u: &[f64], bounds: &ActionBounds) -> Vec<Action> {
    u.chunks_exact(2)
        .map(|c| bounds.denormalize(c[0], c[1]))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub actions: ActionSequence,
    /// Objective before any update, then after each of the N updates.
    pub objective_history: Vec<f64>,
}

/// All-midpoint initial plan for the first control step.
pub fn default_init_sequence(cfg: &GmpcConfig) -> ActionSequence {
    let mid = 0.5 * (cfg.bounds.min_ms + cfg.bounds.max_ms);
    vec![Action::new(mid, mid); cfg.horizon]
}

/// N iterations of gradient descent with Adam on the normalized action
/// sequence, projecting back into [0, 1] after every update. References
/// are re-selected at every iteration from the current predicted
/// trajectory.
pub fn optimize_actions(
    model: &FdmModel,
    s0: &WorldState,
    path: &TargetPath,
    init: &[Action],
    cfg: &GmpcConfig,
) -> Result<OptimizeResult> {
    optimize_actions_traced(model, s0, path, init, cfg, &mut |_, _| {})
}

/// [`optimize_actions`] with an observer called after every projected
/// update with the iteration index and the current action sequence.
pub fn optimize_actions_traced(
    model: &FdmModel,
    s0: &WorldState,
    path: &TargetPath,
    init: &[Action],
    cfg: &GmpcConfig,
    trace: &mut dyn FnMut(usize, &[Action]),
) -> Result<OptimizeResult> {
    cfg.validate()?;
    if init.len() != cfg.horizon {
        return Err(Error::Config(format!(
            "initial sequence has {} actions, horizon is {}",
            init.len(),
            cfg.horizon
        )));
    }
    let mut u = normalize_sequence(init, &cfg.bounds);
    let mut state = AdamWState::with_weight_decay(u.len(), 0.0);
    let mut history = Vec::with_capacity(cfg.iterations + 1);

    for iter in 0..cfg.iterations {
        let actions = denormalize_sequence(&u, &cfg.bounds);
        let (objective, grad) = eval_gradient(model, s0, &actions, path, cfg, &|_| true)?;
        history.push(objective);
        adamw_step(&mut u, &grad, &mut state, cfg.lr)?;
        for v in &mut u {
            if !v.is_finite() {
                return Err(Error::NonFinite(
                    "optimizer produced a non-finite action".into(),
                ));
            }
            *v = v.clamp(0.0, 1.0);
        }
        trace(iter, &denormalize_sequence(&u, &cfg.bounds));
    }
    let actions = denormalize_sequence(&u, &cfg.bounds);
    for a in &actions {
        assert!(
            cfg.bounds.contains(a),
            "projection must keep actions in bounds"
        );
    }
    history.push(horizon_objective(model, s0, &actions, path, cfg)?.objective);
    Ok(OptimizeResult {
        actions,
        objective_history: history,
    })
}

/// One executed control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// State the controller planned from.
    pub pre_pose: WorldState,
    pub pre_local: LocalState,
    /// State after applying the action to the plant.
    pub pose: WorldState,
    pub action: Action,
    /// Reference selected from the pre-step state; tracking deviation is
    /// measured between this point and `pose`.
    pub reference: PathPoint,
    pub dt_s: f64,
    /// Final controller objective for this step (realized step cost for
    /// non-optimizing controllers).
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub initial_pose: WorldState,
    pub steps: Vec<StepRecord>,
}

impl TrajectoryLog {
    /// Per-step Euclidean deviation between the realized position and
    /// that step's selected reference.
    pub fn deviations(&self) -> Vec<f64> {
        self.steps
            .iter()
            .map(|s| s.reference.distance_to(s.pose.x_mm, s.pose.y_mm))
            .collect()
    }
}

/// Closed-loop G-MPC: optimize the plan, apply only its first action to
/// the plant, advance, and warm-start the next step by shifting the plan
/// left and repeating its final action. Stops when the robot's nearest
/// path point is the final one, or after `max_steps`.
pub fn receding_horizon(
    model: &FdmModel,
    plant: &mut dyn Plant,
    s0: &WorldState,
    path: &TargetPath,
    cfg: &GmpcConfig,
    max_steps: usize,
) -> Result<TrajectoryLog> {
    cfg.validate()?;
    let mut pose = *s0;
    let mut warm = default_init_sequence(cfg);
    let mut steps = Vec::new();

    for step in 0..max_steps {
        let pick = get_ref(&pose, path, cfg.lookahead_mm, cfg.heading_weight)?;
        if pick.nearest_index + 1 >= path.len() {
            break;
        }
        let result = optimize_actions(model, &pose, path, &warm, cfg)?;
        let action = result.actions[0];
        // The robot-frame state is always re-derived from the pose so the
        // plant sees exactly what the optimizer planned from.
        let local = world_to_local(&pose);
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
            objective: *result.objective_history.last().expect("history non-empty"),
        });
        pose = new_pose;

        warm.clear();
        warm.extend_from_slice(&result.actions[1..]);
        warm.push(*result.actions.last().expect("horizon >= 1"));
    }
    Ok(TrajectoryLog {
        initial_pose: *s0,
        steps,
    })
}

const TRAJECTORY_HEADER: [&str; 11] = [
    "step",
    "x_mm",
    "y_mm",
    "theta_rad",
    "b_ms",
    "d_ms",
    "ref_x",
    "ref_y",
    "ref_theta",
    "dt_s",
    "J_final",
];

/// Write a trajectory log as CSV with the header
/// `step,x_mm,y_mm,theta_rad,b_ms,d_ms,ref_x,ref_y,ref_theta,dt_s,J_final`.
pub fn write_trajectory_csv<P: AsRef<FsPath>>(path: P, log: &TrajectoryLog) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRAJECTORY_HEADER)?;
    for s in &log.steps {
        w.write_record(&[
            s.step.to_string(),
            s.pose.x_mm.to_string(),
            s.pose.y_mm.to_string(),
            s.pose.theta_rad.to_string(),
            s.action.b_ms.to_string(),
            s.action.d_ms.to_string(),
            s.reference.x_mm.to_string(),
            s.reference.y_mm.to_string(),
            s.reference.theta_rad.to_string(),
            s.dt_s.to_string(),
            s.objective.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
