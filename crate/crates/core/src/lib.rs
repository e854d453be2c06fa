//! Security as a service for simulated mobile devices.
//!
//! Device agents offload resource-access events to a cloud service that
//! evaluates versioned access policies, detects threats, and pushes
//! mitigations back. See the crate's `examples/` directory for one runnable
//! program per capability.

pub mod agent;
pub mod clock;
pub mod detection;
pub mod harness;
pub mod policy;
pub mod protocol;
pub mod resource;
pub mod service;
