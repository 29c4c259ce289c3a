//! Simulation and learning toolkit for estimating multirotor ground-effect
//! turbulence from onboard depth images.

pub mod dynamics;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod groundfx;
pub mod nn;
pub mod planner;
pub mod scenes;
pub mod sysid;
pub mod world;

pub use dynamics::{DroneParams, Mixer, RotorCommand, State, WrenchInput, GRAVITY};
pub use error::{Error, Result};
pub use groundfx::{GroundEffectParams, IdentifiedGroundEffect};
