//! Event-driven execution of a task graph.
//!
//! The engine advances from completion to completion. At each instant it
//! first processes completions, then issues whatever the lane rules allow,
//! looping until no lane can issue. Completions and issue attempts are both
//! processed in lane order (compute, device-to-host, host-to-device), which
//! pins the order of same-instant memory events.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec::Vec;

use super::build::{EffClass, TaskGraph, TaskId};
use super::{
    Lane, MemReason, MemoryEvent, MemoryTrace, OomRecord, SchedPolicy, TaskKind, Timeline,
    TimelineEvent,
};
use crate::model::{LayerKind, Profile};

#[derive(Debug, Clone, Copy)]
enum Gate {
    Open,
    /// The gating task must have started.
    Started(TaskId),
    /// Every forward must have completed.
    ForwardsDone,
}

const LANES: [Lane; 3] = [Lane::Compute, Lane::D2h, Lane::H2d];

pub(crate) fn run(
    profile: &Profile,
    graph: &TaskGraph,
    sched: SchedPolicy,
) -> (Timeline, MemoryTrace) {
    let nt = graph.tasks.len();
    let budget = profile.env.capacity_bytes - profile.env.resident_base_bytes;

    let mut dep_remaining: Vec<usize> = graph.tasks.iter().map(|t| t.deps.len()).collect();
    let mut dependents: Vec<Vec<TaskId>> = alloc::vec![Vec::new(); nt];
    for (id, task) in graph.tasks.iter().enumerate() {
        for &d in &task.deps {
            dependents[d].push(id);
        }
    }

    // Swap-in gates per position in the host-to-device issue order.
    let gates: Vec<Gate> = graph
        .swap_in_order
        .iter()
        .map(|&t| {
            let tensor = graph.tasks[t].kind.layer();
            let first_group = graph.first_need_group[&tensor];
            match sched {
                SchedPolicy::Eager => Gate::Open,
                SchedPolicy::Naive => {
                    if first_group + 1 < graph.n {
                        Gate::Started(graph.bwd_task[first_group + 1])
                    } else {
                        Gate::ForwardsDone
                    }
                }
                SchedPolicy::NaiveConvAnchored => (first_group + 1..graph.n)
                    .find(|&k| profile.layers[k].kind == LayerKind::Convolution)
                    .map(|k| Gate::Started(graph.bwd_task[k]))
                    .unwrap_or(Gate::ForwardsDone),
            }
        })
        .collect();

    let mut started = alloc::vec![false; nt];
    let mut start_us = alloc::vec![0u64; nt];
    let mut end_us = alloc::vec![0u64; nt];
    let mut finished = alloc::vec![false; nt];
    let mut finished_count = 0usize;
    let mut forwards_remaining = graph.n;

    let mut compute_ptr = 0usize;
    let mut h2d_ptr = 0usize;
    let mut d2h_ready: VecDeque<TaskId> = VecDeque::new();
    let mut running: [Option<(TaskId, u64)>; 3] = [None, None, None];

    let mut mem_used = 0u64;
    let mut peak = profile.env.resident_base_bytes;
    let mut entries: Vec<MemoryEvent> = Vec::new();
    let mut events: Vec<TimelineEvent> = Vec::with_capacity(nt);
    let mut time = 0u64;
    let mut oom: Option<OomRecord> = None;

    // Bytes a task must allocate when it is issued.
    let alloc_of = |t: TaskId| -> Option<(usize, u64, MemReason)> {
        let layer = graph.tasks[t].kind.layer();
        match graph.tasks[t].kind {
            TaskKind::Forward(_) if graph.eff[layer] != EffClass::Ideal => Some((
                layer,
                profile.layers[layer].output_bytes,
                MemReason::FwdAlloc,
            )),
            TaskKind::Recompute { .. } => Some((
                layer,
                profile.layers[layer].output_bytes,
                MemReason::RecomputeAlloc,
            )),
            TaskKind::SwapIn(_) => Some((
                layer,
                profile.layers[layer].output_bytes,
                MemReason::SwapInAlloc,
            )),
            _ => None,
        }
    };

    loop {
        // Issue everything the lane rules allow at the current instant.
        loop {
            let mut progressed = false;
            for lane in LANES {
                let li = lane as usize;
                if running[li].is_some() {
                    continue;
                }
                let candidate: Option<TaskId> = match lane {
                    Lane::Compute => {
                        let t = graph.compute_order.get(compute_ptr).copied();
                        t.filter(|&t| {
                            dep_remaining[t] == 0
                                && alloc_of(t).is_none_or(|(_, b, _)| mem_used + b <= budget)
                        })
                    }
                    Lane::D2h => d2h_ready.front().copied(),
                    Lane::H2d => {
                        let t = graph.swap_in_order.get(h2d_ptr).copied();
                        t.filter(|&t| {
                            let gate_open = match gates[h2d_ptr] {
                                Gate::Open => true,
                                Gate::Started(g) => started[g],
                                Gate::ForwardsDone => forwards_remaining == 0,
                            };
                            dep_remaining[t] == 0
                                && gate_open
                                && mem_used
                                    + profile.layers[graph.tasks[t].kind.layer()].output_bytes
                                    <= budget
                        })
                    }
                };
                let Some(t) = candidate else { continue };
                match lane {
                    Lane::Compute => compute_ptr += 1,
                    Lane::D2h => {
                        d2h_ready.pop_front();
                    }
                    Lane::H2d => h2d_ptr += 1,
                }
                started[t] = true;
                start_us[t] = time;
                end_us[t] = time + graph.tasks[t].duration_us;
                running[li] = Some((t, end_us[t]));
                if let Some((layer, bytes, reason)) = alloc_of(t) {
                    mem_used += bytes;
                    peak = peak.max(mem_used + profile.env.resident_base_bytes);
                    entries.push(MemoryEvent {
                        time_us: time,
                        delta_bytes: bytes as i64,
                        total_bytes: mem_used + profile.env.resident_base_bytes,
                        layer,
                        reason,
                    });
                }
                progressed = true;
            }
            if !progressed {
                break;
            }
        }

        if finished_count == nt {
            break;
        }

        let Some(next_time) = running.iter().flatten().map(|&(_, end)| end).min() else {
            // Nothing is running and tasks remain: the run is stuck. Report
            // the first memory-blocked lane head as the out-of-memory point.
            oom = Some(find_blocked_head(
                profile,
                graph,
                &dep_remaining,
                &started,
                &gates,
                compute_ptr,
                h2d_ptr,
                forwards_remaining,
                time,
            ));
            break;
        };

        time = next_time;
        for lane in LANES {
            let li = lane as usize;
            let Some((t, end)) = running[li] else {
                continue;
            };
            if end != time {
                continue;
            }
            running[li] = None;
            finished[t] = true;
            finished_count += 1;
            events.push(TimelineEvent {
                kind: graph.tasks[t].kind,
                lane,
                start_us: start_us[t],
                end_us: end_us[t],
            });
            // Frees attached to this completion.
            match graph.tasks[t].kind {
                TaskKind::SwapOut(i) => {
                    free(
                        profile,
                        &mut mem_used,
                        &mut entries,
                        time,
                        i,
                        MemReason::SwapOutFree,
                    );
                }
                TaskKind::Forward(_) => {
                    forwards_remaining -= 1;
                    if let Some(tensors) = graph.discard_at.get(&t) {
                        for &i in tensors {
                            free(
                                profile,
                                &mut mem_used,
                                &mut entries,
                                time,
                                i,
                                MemReason::DiscardFree,
                            );
                        }
                    }
                }
                TaskKind::Backward(i) if graph.eff[i] != EffClass::Ideal => {
                    free(
                        profile,
                        &mut mem_used,
                        &mut entries,
                        time,
                        i,
                        MemReason::BwdFree,
                    );
                }
                _ => {}
            }
            // Wake dependents; newly-ready swap-outs enter the copy queue in
            // layer order.
            let mut ready_outs: Vec<TaskId> = Vec::new();
            for &d in &dependents[t] {
                dep_remaining[d] -= 1;
                if dep_remaining[d] == 0 && matches!(graph.tasks[d].kind, TaskKind::SwapOut(_)) {
                    ready_outs.push(d);
                }
            }
            ready_outs.sort_unstable_by_key(|&d| graph.tasks[d].kind.layer());
            d2h_ready.extend(ready_outs);
        }
    }

    let makespan_us = events.iter().map(|e| e.end_us).max().unwrap_or(0);
    let stalls = if oom.is_none() {
        compute_stalls(graph, &end_us)
    } else {
        BTreeMap::new()
    };
    (
        Timeline {
            events,
            makespan_us,
            stalls,
            oom,
            sched,
        },
        MemoryTrace {
            entries,
            peak_bytes: peak,
        },
    )
}

fn free(
    profile: &Profile,
    mem_used: &mut u64,
    entries: &mut Vec<MemoryEvent>,
    time: u64,
    layer: usize,
    reason: MemReason,
) {
    let bytes = profile.layers[layer].output_bytes;
    debug_assert!(*mem_used >= bytes, "freeing more than allocated");
    *mem_used -= bytes;
    entries.push(MemoryEvent {
        time_us: time,
        delta_bytes: -(bytes as i64),
        total_bytes: *mem_used + profile.env.resident_base_bytes,
        layer,
        reason,
    });
}

/// Delay each swapped tensor's arrival imposed on its first requiring task,
/// measured against that task's non-swap-in dependencies.
fn compute_stalls(graph: &TaskGraph, end_us: &[u64]) -> BTreeMap<usize, u64> {
    let mut stalls = BTreeMap::new();
    for (&tensor, &req) in &graph.first_req_task {
        let bound = graph.tasks[req]
            .deps
            .iter()
            .filter(|&&d| !matches!(graph.tasks[d].kind, TaskKind::SwapIn(_)))
            .map(|&d| end_us[d])
            .max()
            .unwrap_or(0);
        let arrival = end_us[graph.swap_in_task[&tensor]];
        if arrival > bound {
            stalls.insert(tensor, arrival - bound);
        }
    }
    stalls
}

#[allow(clippy::too_many_arguments)]
fn find_blocked_head(
    profile: &Profile,
    graph: &TaskGraph,
    dep_remaining: &[usize],
    started: &[bool],
    gates: &[Gate],
    compute_ptr: usize,
    h2d_ptr: usize,
    forwards_remaining: usize,
    time: u64,
) -> OomRecord {
    if let Some(&t) = graph.compute_order.get(compute_ptr) {
        if dep_remaining[t] == 0 {
            let layer = graph.tasks[t].kind.layer();
            return OomRecord {
                time_us: time,
                layer,
                requested_bytes: profile.layers[layer].output_bytes,
            };
        }
    }
    if let Some(&t) = graph.swap_in_order.get(h2d_ptr) {
        let gate_open = match gates[h2d_ptr] {
            Gate::Open => true,
            Gate::Started(g) => started[g],
            Gate::ForwardsDone => forwards_remaining == 0,
        };
        if dep_remaining[t] == 0 && gate_open {
            let layer = graph.tasks[t].kind.layer();
            return OomRecord {
                time_us: time,
                layer,
                requested_bytes: profile.layers[layer].output_bytes,
            };
        }
    }
    unreachable!("task graph stalled without a memory-blocked head");
}
