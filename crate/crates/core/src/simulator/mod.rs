//! Deterministic discrete-event simulation of one training iteration.
//!
//! A simulated iteration runs on three serially-occupied resource lanes: the
//! compute engine, one device-to-host copy engine, and one host-to-device copy
//! engine. [`build_tasks`] turns a profile and a placement into a task DAG;
//! [`simulate`] executes it under a swap-in scheduling policy and returns the
//! full [`Timeline`] plus a [`MemoryTrace`] of every allocation and free.
//!
//! Ordering rules (all ties broken deterministically):
//!
//! * The compute lane issues strictly in order: all forwards in topological
//!   order, then, per backward in reverse topological order, that backward's
//!   recompute chain immediately before it. The head of the queue blocks the
//!   lane until its dependencies are met and its allocation fits.
//! * The device-to-host lane issues swap-outs as soon as their dependencies
//!   allow, earliest-ready first, ties by layer id.
//! * The host-to-device lane issues swap-ins strictly in the order their
//!   tensors will first be needed again, gated by the scheduling policy and
//!   by free memory (memory is reserved when the transfer starts).
//!
//! A run that cannot make progress because an allocation never fits reports
//! an [`OomRecord`] in the timeline instead of completing; that is the signal
//! that a placement is infeasible.

mod build;
mod engine;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;

use crate::model::{LayerId, Placement, Profile};

pub use build::{build_tasks, Task, TaskGraph, TaskId};

/// A simulated resource lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Lane {
    Compute = 0,
    D2h = 1,
    H2d = 2,
}

/// What a task does and which layer it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskKind {
    Forward(LayerId),
    Backward(LayerId),
    /// Replays `layer`'s forward computation to regenerate its discarded
    /// output; `needed_by` is the backward whose needs triggered the replay.
    Recompute {
        layer: LayerId,
        needed_by: LayerId,
    },
    SwapOut(LayerId),
    SwapIn(LayerId),
}

impl TaskKind {
    pub fn lane(&self) -> Lane {
        match self {
            TaskKind::Forward(_) | TaskKind::Backward(_) | TaskKind::Recompute { .. } => {
                Lane::Compute
            }
            TaskKind::SwapOut(_) => Lane::D2h,
            TaskKind::SwapIn(_) => Lane::H2d,
        }
    }

    pub fn layer(&self) -> LayerId {
        match *self {
            TaskKind::Forward(i)
            | TaskKind::Backward(i)
            | TaskKind::Recompute { layer: i, .. }
            | TaskKind::SwapOut(i)
            | TaskKind::SwapIn(i) => i,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Forward(i) => write!(f, "forward {i}"),
            TaskKind::Backward(i) => write!(f, "backward {i}"),
            TaskKind::Recompute { layer, needed_by } => {
                write!(f, "recompute {layer} for {needed_by}")
            }
            TaskKind::SwapOut(i) => write!(f, "swap_out {i}"),
            TaskKind::SwapIn(i) => write!(f, "swap_in {i}"),
        }
    }
}

/// Swap-in issue policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SchedPolicy {
    /// Each swap-in may start only once the backward one layer above its
    /// first-requiring backward has started, overlapping the transfer with
    /// exactly that one computation.
    Naive,
    /// Swap-ins start as early as the copy lane and the memory budget allow,
    /// in the order the tensors will be needed.
    Eager,
    /// Naive variant anchored to the nearest convolution layer above the
    /// first-requiring backward; the issue rule of the SuperNeurons-style
    /// baseline.
    NaiveConvAnchored,
}

impl fmt::Display for SchedPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchedPolicy::Naive => "naive",
            SchedPolicy::Eager => "eager",
            SchedPolicy::NaiveConvAnchored => "naive_conv_anchored",
        })
    }
}

/// One executed task occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimelineEvent {
    pub kind: TaskKind,
    pub lane: Lane,
    pub start_us: u64,
    pub end_us: u64,
}

/// Where and when a run stopped because an allocation could never fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OomRecord {
    pub time_us: u64,
    pub layer: LayerId,
    pub requested_bytes: u64,
}

/// The ordered set of executed tasks plus derived quantities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Timeline {
    /// Executed tasks in completion order.
    pub events: Vec<TimelineEvent>,
    /// Completion time of the last task (0 for an immediately-stuck run).
    pub makespan_us: u64,
    /// For each swapped tensor whose arrival delayed its first requiring
    /// compute task: the positive delay beyond that task's other
    /// (non-swap-in) dependencies. Empty for runs that hit out-of-memory.
    pub stalls: BTreeMap<LayerId, u64>,
    pub oom: Option<OomRecord>,
    /// Policy the run used; recorded so downstream analyses can check their
    /// preconditions.
    pub sched: SchedPolicy,
}

impl Timeline {
    pub fn is_feasible(&self) -> bool {
        self.oom.is_none()
    }

    /// The event for `kind`, if it executed.
    pub fn event(&self, kind: TaskKind) -> Option<&TimelineEvent> {
        self.events.iter().find(|e| e.kind == kind)
    }
}

/// Reason codes of the memory ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemReason {
    FwdAlloc,
    SwapOutFree,
    SwapInAlloc,
    RecomputeAlloc,
    BwdFree,
    DiscardFree,
}

impl fmt::Display for MemReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MemReason::FwdAlloc => "fwd_alloc",
            MemReason::SwapOutFree => "swap_out_free",
            MemReason::SwapInAlloc => "swap_in_alloc",
            MemReason::RecomputeAlloc => "recompute_alloc",
            MemReason::BwdFree => "bwd_free",
            MemReason::DiscardFree => "discard_free",
        })
    }
}

/// One allocation or free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryEvent {
    pub time_us: u64,
    pub delta_bytes: i64,
    /// Running total after this event, including the resident base.
    pub total_bytes: u64,
    pub layer: LayerId,
    pub reason: MemReason,
}

/// Time-ordered allocation/free ledger of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryTrace {
    pub entries: Vec<MemoryEvent>,
    /// Maximum of the running total, including the resident base.
    pub peak_bytes: u64,
}

/// Internal evaluator hooks used by the optimizer.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    /// Treat this layer as resident at zero transfer and zero memory cost:
    /// no swap or recompute tasks are generated for it and its output is
    /// never charged against the budget. Used to compute overhead baselines.
    pub idealized: Option<LayerId>,
}

/// Simulates one training iteration of `profile` under `placement`.
///
/// Pure function of its inputs; identical inputs produce bit-identical
/// output. The profile and placement must already be validated.
pub fn simulate(
    profile: &Profile,
    placement: &Placement,
    sched: SchedPolicy,
) -> (Timeline, MemoryTrace) {
    simulate_with(profile, placement, sched, &SimOptions::default())
}

/// [`simulate`] with evaluator hooks.
pub fn simulate_with(
    profile: &Profile,
    placement: &Placement,
    sched: SchedPolicy,
    options: &SimOptions,
) -> (Timeline, MemoryTrace) {
    let graph = build::build_tasks_with(profile, placement, options);
    engine::run(profile, &graph, sched)
}

/// Why [`extract_stall_sets`] rejected a timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum StallSetError {
    #[error("stall sets are defined on the all-swap baseline timeline")]
    NotAllSwap,
    #[error("stall sets are defined on an eager-scheduled timeline")]
    NotEager,
    #[error("timeline ended in out-of-memory")]
    Oom,
}

/// Extracts the un-hidden transfer sets from the all-swap eager baseline.
///
/// `L_O` holds the layers whose swap-out completed after the last forward
/// computation; `L_I` holds the layers whose swap-in made a backward wait.
pub fn extract_stall_sets(
    timeline: &Timeline,
    profile: &Profile,
) -> Result<(BTreeSet<LayerId>, BTreeSet<LayerId>), StallSetError> {
    if timeline.oom.is_some() {
        return Err(StallSetError::Oom);
    }
    if timeline.sched != SchedPolicy::Eager {
        return Err(StallSetError::NotEager);
    }
    let n = profile.n();
    let mut out_end = alloc::vec![None; n];
    let mut in_seen = alloc::vec![false; n];
    let mut last_fwd_end = 0u64;
    for event in &timeline.events {
        match event.kind {
            TaskKind::Forward(i) => {
                let _ = i;
                last_fwd_end = last_fwd_end.max(event.end_us);
            }
            TaskKind::SwapOut(i) => out_end[i] = Some(event.end_us),
            TaskKind::SwapIn(i) => in_seen[i] = true,
            TaskKind::Recompute { .. } => return Err(StallSetError::NotAllSwap),
            TaskKind::Backward(_) => {}
        }
    }
    if out_end.iter().any(Option::is_none) || in_seen.iter().any(|&s| !s) {
        return Err(StallSetError::NotAllSwap);
    }
    let l_o = (0..n)
        .filter(|&i| out_end[i].expect("checked above") > last_fwd_end)
        .collect();
    let l_i = timeline.stalls.keys().copied().collect();
    Ok((l_o, l_i))
}

#[cfg(test)]
mod tests;
