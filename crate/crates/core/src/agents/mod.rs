//! Policies: scripted fixtures and the learning agent.

pub mod adam;
pub mod checkpoint;
pub mod features;
pub mod learner;
pub mod loss;
pub mod net;
pub mod popart;
pub mod scripted;

pub use learner::{Algorithm, Learner, LearnerConfig, Policy, Segment, Trajectory, UpdateStats};
pub use net::{LstmState, Net, NetConfig, NetShape};
pub use scripted::{ScriptedKind, ScriptedPolicy};
