//! Data-driven path following for a planar millirobot driven by two-phase
//! actuation pulses.
//!
//! The crate covers the full pipeline: SE(2) frame bookkeeping, cubic
//! Bezier reference paths, a small from-scratch MLP with exact gradients,
//! a learned forward dynamics model, a gradient-based receding-horizon
//! planner that differentiates through that model, a distilled imitation
//! policy, and a synthetic surrogate plant with a scenario harness for
//! closed-loop evaluation.

pub mod error;
pub mod fdm;
pub mod gmpc;
pub mod ilc;
pub mod nn;
pub mod path;
pub mod se2;
pub mod sim;

pub use error::{Error, Result};
pub use fdm::{Action, ActionBounds, FdmModel, FdmTrainConfig, Plant, TransitionSample};
pub use gmpc::{GmpcConfig, TrajectoryLog};
pub use ilc::{IlcGrid, IlcModel, IlcTrainConfig};
pub use path::{CubicBezier, PathPoint, TargetPath};
pub use se2::{LocalNextState, LocalState, WorldState};
pub use sim::{
    ControllerKind, PathSpec, ReportSummary, RunReport, ScenarioConfig, SurrogateParams, TankBounds,
};
