//! Route-anchored storytelling and prompting engine for a child passenger.

pub mod formats;
pub mod geo;
pub mod journal;
pub mod orchestrator;
pub mod poi;
pub mod providers;
pub mod replay;
pub mod runtime;
pub mod session;
pub mod simulator;
pub mod story;
pub mod strategy;
