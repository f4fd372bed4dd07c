//! Constraint-augmented imitation-learning motion planner.
//!
//! The pipeline encodes a scene as ego-frame polylines, proposes candidate
//! trajectories through a kinematic bicycle model, and scores them with a
//! learned reward combined multiplicatively with a learned constraint
//! probability. Constraint labels (collision, out-of-map, stuck) are derived
//! automatically from expert demonstrations.

pub mod error;
pub mod geometry;
pub mod kinematics;
pub mod par;
pub mod nn;
pub mod encoder;
pub mod path;
pub mod scene;
pub mod labeling;
pub mod planner;
pub mod training;
pub mod eval;

pub use error::{Error, Result};
