//! Motion-capture fusion toolkit.
//!
//! Synchronizes IMU and optical streams, chains rig calibrations into a common
//! world frame, triangulates multi-view 2D keypoints, and fits a parametric body
//! model to the result. A synthetic capture rig ([`rig_sim`]) generates every
//! input stream together with ground truth so the whole chain can be checked.

pub mod align;
pub mod body_model;
pub mod fitting;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod rig_sim;
pub mod sync;
pub mod triangulate;
