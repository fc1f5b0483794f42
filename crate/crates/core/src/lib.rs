//! Fruit Market: a gridworld barter economy.

pub mod agents;
pub mod bench;
pub mod economy;
pub mod env;
pub mod exchange;
pub mod experiment;
pub mod metrics;
pub mod rng;
pub mod trainer;
pub mod world;
