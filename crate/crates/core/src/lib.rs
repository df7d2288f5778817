//! Planning toolkit for out-of-core neural-network training iterations.
//!
//! Given a profiled computation graph (per-layer compute times, feature-map
//! sizes, link bandwidths) and a device memory budget, this crate predicts the
//! runtime of one training iteration under a *placement* — a classification of
//! every feature map into `keep`, `swap`, or `recompute` — and searches for the
//! placement with the smallest predicted iteration time that never exceeds the
//! memory capacity.
//!
//! The crate is organised around five modules:
//!
//! * [`model`] — the profile/placement data model and its validation.
//! * [`simulator`] — a deterministic discrete-event simulation of one
//!   iteration over three resource lanes (compute, device-to-host copy,
//!   host-to-device copy) with full memory accounting.
//! * [`optimizer`] — the two-step classification search plus the comparison
//!   strategies (in-core, swap-all, swap-opt, a SuperNeurons-style static
//!   rule).
//! * [`oracle`] — an independent reference simulator and an exhaustive
//!   placement search for small graphs, used for differential testing.
//! * [`synth`] — synthetic profile generators (chains, ResNet-like block
//!   graphs, AlexNet-like compute-heavy chains, 3D-ResNext-like graphs).
//!
//! Everything is integer microseconds and bytes; identical inputs produce
//! bit-identical outputs. The crate is `no_std`-compatible (`alloc` required);
//! disable the default `std` feature for embedded use. The `parallel` feature
//! adds multi-threaded search via rayon without changing any result.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod model;
pub mod optimizer;
pub mod oracle;
pub mod simulator;
pub mod synth;

pub use model::{
    ClassCounts, Environment, LayerId, LayerKind, LayerNode, Placement, PlacementClass, PlanReport,
    Profile, Scale, SearchStats, ValidationError,
};
pub use optimizer::{optimize, SearchConfig, SearchOutcome, Strategy};
pub use simulator::{simulate, MemoryTrace, SchedPolicy, Timeline};
