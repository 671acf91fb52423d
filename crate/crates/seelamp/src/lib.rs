//! SEELAMP: a location-aware shared-tree multicast protocol for mobile ad-hoc
//! networks, together with two baseline multicast protocols and a deterministic
//! discrete-event simulator for comparing them.
//!
//! The crate is organized around the life of a packet:
//!
//! - [`geometry`]: planar coordinate math (distances, bearings, the angular
//!   cone test used by directional forwarding).
//! - [`wire`]: every control and data packet with a bit-exact binary codec.
//! - [`tables`]: the three per-node soft-state tables (zone neighbors,
//!   multicast tree, request cache).
//! - [`protocol`]: the per-node state machine. Consumes timestamped inputs,
//!   emits actions. Pure with respect to state + input, so runs replay exactly.
//! - [`baselines`]: a plain shared-tree variant and a flooding-mesh protocol
//!   sharing the same kernel and wire layer.
//! - [`simkernel`]: the discrete-event engine with unit-disk radio,
//!   random-waypoint mobility and a linear energy model.
//! - [`metrics`]: post-processing of trace logs into comparable summaries.
//! - [`scenario`] / [`trace`]: the batch interface — config files in,
//!   line-oriented trace logs out.
//! - [`sweep`]: matched-seed batch runs across protocols, parallel via rayon
//!   when the `parallel` feature is enabled (it is by default).

pub mod baselines;
pub mod geometry;
pub mod metrics;
pub mod protocol;
pub mod scenario;
pub mod simkernel;
pub mod sweep;
pub mod tables;
pub mod trace;
pub mod wire;

/// Simulated time in milliseconds.
pub type Millis = u64;
