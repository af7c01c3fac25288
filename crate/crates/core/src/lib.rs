//! Electromagnetic-transient models of PFC-boost mining power supplies,
//! their ride-through behavior under voltage sags, and their interaction
//! with a small transmission network.

pub mod converter;
pub mod engine;
pub mod error;
pub mod lvrt;
pub mod network;
pub mod signals;
pub mod trace;
pub mod validation;

pub use error::{Error, Result};
