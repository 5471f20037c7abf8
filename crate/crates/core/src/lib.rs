//! Collaborative road-profile estimation for a fleet of heterogeneous
//! active-suspension vehicles.
//!
//! Each vehicle runs a PID baseline controller with a disturbance observer
//! that estimates the road-induced equivalent disturbance. Successive
//! vehicles on the same road share their tracking error and learning signal,
//! and a pair of learning filters turns the predecessor's record into a
//! feed-forward correction that shrinks the estimation error from vehicle to
//! vehicle.

pub mod lti;

pub mod cli;
pub mod error;
pub mod fleet;
pub mod ilc;
pub mod observer;
pub mod report;
pub mod roads;
pub mod vehicle;

pub use error::{Error, Result};
