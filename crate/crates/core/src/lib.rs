//! Swarm engagement simulation and scaling analysis.

pub mod analysis;
pub mod attrition;
pub mod battle;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod numeric;
pub mod params;
pub mod planner;
pub mod pursuit;
pub mod scaling;
pub mod search;
pub mod spatial;
pub mod sweep;

pub use error::{Error, Result};
pub use geometry::Vec2;
