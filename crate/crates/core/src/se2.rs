//! Planar rigid-frame math for the robot-oriented coordinate convention.
//!
//! The robot frame at step k has its x-axis along the world heading
//! `theta` and its origin at the body center. Dynamics predictions are
//! expressed in the frame of the step they start from, so chaining them
//! over a horizon needs two pieces: composing a predicted displacement
//! onto a world pose ([`compose_world`]) and re-expressing the predicted
//! exit velocities in the next step's frame ([`rebase`]).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Robot state in the tank (world) frame. Units: mm, rad, mm/s, rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub x_mm: f64,
    pub y_mm: f64,
    /// Heading, wrapped to (-pi, pi].
    pub theta_rad: f64,
    pub vx_mm_s: f64,
    pub vy_mm_s: f64,
    pub omega_rad_s: f64,
}

impl WorldState {
    /// Build a state with the heading wrapped into (-pi, pi].
    pub fn new(
        x_mm: f64,
        y_mm: f64,
        theta_rad: f64,
        vx_mm_s: f64,
        vy_mm_s: f64,
        omega_rad_s: f64,
    ) -> Self {
        Self {
            x_mm,
            y_mm,
            theta_rad: wrap(theta_rad),
            vx_mm_s,
            vy_mm_s,
            omega_rad_s,
        }
    }

    /// Pose at rest: zero velocities.
    pub fn at_pose(x_mm: f64, y_mm: f64, theta_rad: f64) -> Self {
        Self::new(x_mm, y_mm, theta_rad, 0.0, 0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x_mm.is_finite()
            && self.y_mm.is_finite()
            && self.theta_rad.is_finite()
            && self.vx_mm_s.is_finite()
            && self.vy_mm_s.is_finite()
            && self.omega_rad_s.is_finite()
    }
}

/// Velocities expressed in the robot frame of the current step.
///
/// The position/heading components of the state are zero by construction
/// (the frame origin sits on the robot) and are never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalState {
    pub vx_mm_s: f64,
    pub vy_mm_s: f64,
    pub omega_rad_s: f64,
}

impl LocalState {
    pub const ZERO: LocalState = LocalState {
        vx_mm_s: 0.0,
        vy_mm_s: 0.0,
        omega_rad_s: 0.0,
    };

    pub fn is_finite(&self) -> bool {
        self.vx_mm_s.is_finite() && self.vy_mm_s.is_finite() && self.omega_rad_s.is_finite()
    }
}

/// Full predicted next state, expressed in the robot frame of step k.
///
/// Displacement (dx, dy), heading change dtheta, and the exit velocities
/// are all measured in the frame that was fixed at the start of the step;
/// [`rebase`] rotates the velocities into the frame of step k+1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalNextState {
    pub dx_mm: f64,
    pub dy_mm: f64,
    pub dtheta_rad: f64,
    pub vx_mm_s: f64,
    pub vy_mm_s: f64,
    pub omega_rad_s: f64,
}

impl LocalNextState {
    pub fn is_finite(&self) -> bool {
        self.dx_mm.is_finite()
            && self.dy_mm.is_finite()
            && self.dtheta_rad.is_finite()
            && self.vx_mm_s.is_finite()
            && self.vy_mm_s.is_finite()
            && self.omega_rad_s.is_finite()
    }
}

/// Wrap an angle into (-pi, pi], assuming it is finite.
pub(crate) fn wrap(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Wrap an angle into (-pi, pi].
///
/// Errors on non-finite input; every finite angle has a unique
/// representative congruent mod 2*pi.
pub fn wrap_angle(theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::Domain(format!(
            "cannot wrap non-finite angle {theta}"
        )));
    }
    Ok(wrap(theta))
}

/// Express the world-frame velocities of `s` in the robot frame at `s`.
///
/// Rotates the velocity vector by -theta; position and heading drop out
/// because the robot frame is centered on the robot.
pub fn world_to_local(s: &WorldState) -> LocalState {
    let (sin_t, cos_t) = s.theta_rad.sin_cos();
    LocalState {
        vx_mm_s: cos_t * s.vx_mm_s + sin_t * s.vy_mm_s,
        vy_mm_s: -sin_t * s.vx_mm_s + cos_t * s.vy_mm_s,
        omega_rad_s: s.omega_rad_s,
    }
}

/// Rotate robot-frame velocities back into the world frame of a robot
/// whose heading is `theta_rad`. Inverse of [`world_to_local`] on the
/// velocity components.
pub fn local_to_world_velocity(theta_rad: f64, s: &LocalState) -> (f64, f64) {
    let (sin_t, cos_t) = theta_rad.sin_cos();
    (
        cos_t * s.vx_mm_s - sin_t * s.vy_mm_s,
        sin_t * s.vx_mm_s + cos_t * s.vy_mm_s,
    )
}

/// Apply a predicted step to a world pose.
///
/// The displacement and exit velocities of `next` are measured in the
/// robot frame of `pose_k`, so both are rotated by the pose heading;
/// the new heading is wrapped after adding dtheta.
pub fn compose_world(pose_k: &WorldState, next: &LocalNextState) -> WorldState {
    let (sin_t, cos_t) = pose_k.theta_rad.sin_cos();
    WorldState {
        x_mm: pose_k.x_mm + cos_t * next.dx_mm - sin_t * next.dy_mm,
        y_mm: pose_k.y_mm + sin_t * next.dx_mm + cos_t * next.dy_mm,
        theta_rad: wrap(pose_k.theta_rad + next.dtheta_rad),
        vx_mm_s: cos_t * next.vx_mm_s - sin_t * next.vy_mm_s,
        vy_mm_s: sin_t * next.vx_mm_s + cos_t * next.vy_mm_s,
        omega_rad_s: next.omega_rad_s,
    }
}

/// Re-express the exit velocities of a predicted step in the frame of
/// step k+1 (rotate by -dtheta), so the prediction can feed the next
/// dynamics-model call.
pub fn rebase(next: &LocalNextState) -> LocalState {
    let (sin_d, cos_d) = next.dtheta_rad.sin_cos();
    LocalState {
        vx_mm_s: cos_d * next.vx_mm_s + sin_d * next.vy_mm_s,
        vy_mm_s: -sin_d * next.vx_mm_s + cos_d * next.vy_mm_s,
        omega_rad_s: next.omega_rad_s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn wrap_angle_periodicity() {
        assert_abs_diff_eq!(
            wrap_angle(3.0 * PI / 2.0).unwrap(),
            -PI / 2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn wrap_angle_boundary_is_pi() {
        assert_eq!(wrap_angle(PI).unwrap(), PI);
        // -pi is congruent to pi and maps to the closed end of the interval.
        assert_eq!(wrap_angle(-PI).unwrap(), PI);
    }

    #[test]
    fn wrap_angle_identity_at_zero() {
        assert_eq!(wrap_angle(0.0).unwrap(), 0.0);
    }

    #[test]
    fn wrap_angle_rejects_non_finite() {
        assert!(wrap_angle(f64::NAN).is_err());
        assert!(wrap_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn world_to_local_identity_rotation() {
        let s = WorldState::new(0.0, 0.0, 0.0, 10.0, 5.0, 0.2);
        let l = world_to_local(&s);
        assert_abs_diff_eq!(l.vx_mm_s, 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.vy_mm_s, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.omega_rad_s, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn world_to_local_quarter_rotation() {
        let s = WorldState::new(0.0, 0.0, PI / 2.0, 0.0, 10.0, 0.0);
        let l = world_to_local(&s);
        assert_abs_diff_eq!(l.vx_mm_s, 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.vy_mm_s, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn compose_world_zero_step_keeps_pose() {
        let pose = WorldState::new(100.0, 400.0, 0.7, 3.0, -2.0, 0.1);
        let next = LocalNextState {
            dx_mm: 0.0,
            dy_mm: 0.0,
            dtheta_rad: 0.0,
            vx_mm_s: 0.0,
            vy_mm_s: 0.0,
            omega_rad_s: 0.0,
        };
        let out = compose_world(&pose, &next);
        assert_abs_diff_eq!(out.x_mm, pose.x_mm, epsilon = 1e-12);
        assert_abs_diff_eq!(out.y_mm, pose.y_mm, epsilon = 1e-12);
        assert_abs_diff_eq!(out.theta_rad, pose.theta_rad, epsilon = 1e-12);
    }

    #[test]
    fn compose_world_axis_aligned() {
        let pose = WorldState::at_pose(100.0, 400.0, 0.0);
        let next = LocalNextState {
            dx_mm: 30.0,
            dy_mm: 0.0,
            dtheta_rad: 0.0,
            vx_mm_s: 0.0,
            vy_mm_s: 0.0,
            omega_rad_s: 0.0,
        };
        let out = compose_world(&pose, &next);
        assert_abs_diff_eq!(out.x_mm, 130.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.y_mm, 400.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.theta_rad, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn compose_world_rotated_axis() {
        let pose = WorldState::at_pose(50.0, 60.0, PI / 2.0);
        let next = LocalNextState {
            dx_mm: 30.0,
            dy_mm: 0.0,
            dtheta_rad: 0.0,
            vx_mm_s: 0.0,
            vy_mm_s: 0.0,
            omega_rad_s: 0.0,
        };
        let out = compose_world(&pose, &next);
        assert_abs_diff_eq!(out.x_mm, 50.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.y_mm, 90.0, epsilon = 1e-12);
    }

    #[test]
    fn rebase_zero_rotation_is_identity() {
        let next = LocalNextState {
            dx_mm: 1.0,
            dy_mm: 2.0,
            dtheta_rad: 0.0,
            vx_mm_s: 7.0,
            vy_mm_s: -3.0,
            omega_rad_s: 0.4,
        };
        let l = rebase(&next);
        assert_abs_diff_eq!(l.vx_mm_s, 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.vy_mm_s, -3.0, epsilon = 1e-12);
    }

    #[test]
    fn rebase_quarter_turn() {
        let next = LocalNextState {
            dx_mm: 0.0,
            dy_mm: 0.0,
            dtheta_rad: PI / 2.0,
            vx_mm_s: 0.0,
            vy_mm_s: 10.0,
            omega_rad_s: 0.0,
        };
        let l = rebase(&next);
        assert_abs_diff_eq!(l.vx_mm_s, 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.vy_mm_s, 0.0, epsilon = 1e-12);
    }

    fn arb_angle() -> impl Strategy<Value = f64> {
        -30.0..30.0f64
    }

    proptest! {
        #[test]
        fn velocity_round_trip(theta in arb_angle(), vx in -100.0..100.0f64, vy in -100.0..100.0f64) {
            let s = WorldState::new(0.0, 0.0, theta, vx, vy, 0.0);
            let l = world_to_local(&s);
            let (wx, wy) = local_to_world_velocity(s.theta_rad, &l);
            prop_assert!((wx - vx).abs() <= 1e-12 * vx.abs().max(1.0));
            prop_assert!((wy - vy).abs() <= 1e-12 * vy.abs().max(1.0));
        }

        #[test]
        fn wrap_is_idempotent(theta in arb_angle()) {
            let once = wrap_angle(theta).unwrap();
            let twice = wrap_angle(once).unwrap();
            prop_assert_eq!(once, twice);
            prop_assert!(once > -PI && once <= PI);
            // Congruence mod 2*pi.
            let k = ((theta - once) / (2.0 * PI)).round();
            prop_assert!((theta - once - k * 2.0 * PI).abs() < 1e-9);
        }

        #[test]
        fn wrap_is_odd_away_from_boundary(theta in -3.0..3.0f64) {
            prop_assume!((theta.abs() - PI).abs() > 1e-9);
            let a = wrap_angle(theta).unwrap();
            let b = wrap_angle(-theta).unwrap();
            prop_assert!((a + b).abs() < 1e-12);
        }

        /// compose_world followed by world_to_local must agree with rebase:
        /// the two routes express the same exit velocities in frame k+1.
        #[test]
        fn rebase_matches_compose_then_world_to_local(
            x in -500.0..500.0f64,
            y in -500.0..500.0f64,
            theta in arb_angle(),
            dx in -50.0..50.0f64,
            dy in -50.0..50.0f64,
            dtheta in -3.0..3.0f64,
            vx in -100.0..100.0f64,
            vy in -100.0..100.0f64,
            omega in -2.0..2.0f64,
        ) {
            let pose = WorldState::at_pose(x, y, theta);
            let next = LocalNextState { dx_mm: dx, dy_mm: dy, dtheta_rad: dtheta, vx_mm_s: vx, vy_mm_s: vy, omega_rad_s: omega };
            let via_world = world_to_local(&compose_world(&pose, &next));
            let direct = rebase(&next);
            prop_assert!((via_world.vx_mm_s - direct.vx_mm_s).abs() < 1e-9);
            prop_assert!((via_world.vy_mm_s - direct.vy_mm_s).abs() < 1e-9);
            prop_assert_eq!(via_world.omega_rad_s, direct.omega_rad_s);
        }
    }
}
