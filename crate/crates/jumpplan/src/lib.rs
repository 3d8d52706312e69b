//! Trajectory optimization for omnidirectional jumps of legged robots.
//!
//! A jump is planned in the vertical plane through the CoM and the target.
//! Waypoints of the CoM are searched by differential evolution, mapped to
//! piecewise-polynomial ground reactions and checked against kinematic and
//! dynamic limits. Solved jumps can be stored in a pre-motion library and used
//! to warm-start later searches.

pub mod constraints;
pub mod de;
pub mod grf_profile;
pub mod jump_plane;
pub mod jump_sim;
pub mod leg_kinematics;
pub mod planner;
pub mod premotion;
pub mod robot_model;
