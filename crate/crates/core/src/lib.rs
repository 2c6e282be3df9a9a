//! Locomotion through shape change on SE(2).
//!
//! Every model here reduces to the momentum-free reconstruction equation
//! `g⁻¹ġ = A(r)ṙ`: a body frame `g` driven by shape velocity through a local
//! connection `A(r)`. The crate covers holonomic pose maps, legged models
//! with contact switching, viscous swimmers and slipping feet, together with
//! a geometric integrator, shape-space field tools and a gait optimizer.

pub mod analysis;
pub mod cli;
pub mod connection;
pub mod error;
pub mod integrator;
pub mod liegroup;
pub mod models;
pub mod optimizer;
pub mod shapespace;

pub use connection::{ConnectionMatrix, ConnectionProvider, ConstraintSystem, PoseMap};
pub use error::{Error, Result};
pub use liegroup::{Pose, Twist};
pub use models::ContactSet;
pub use shapespace::{Gait, Shape, ShapeVelocity};
