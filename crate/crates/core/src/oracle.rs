//! Independent correctness oracles.
//!
//! [`reference_simulate`] re-implements the simulation contract with none of
//! the main simulator's machinery: the task set is derived from a
//! layer-level schedule plan, readiness is tested against precomputed
//! transitive dependency closures, and time advances in unit steps instead
//! of jumping between events. On every input it must produce the same
//! timeline, memory trace, and makespan as [`crate::simulator::simulate`] —
//! a divergence means one of the two broke a rule. Only the data vocabulary
//! (profiles, placements, timelines) is shared.
//!
//! [`exhaustive_search`] enumerates every placement of a small graph and
//! returns the feasible optimum, the bound no heuristic may beat.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::model::{LayerId, LayerKind, Placement, PlacementClass, Profile};
use crate::simulator::{
    Lane, MemReason, MemoryEvent, MemoryTrace, OomRecord, SchedPolicy, TaskKind, Timeline,
    TimelineEvent,
};

/// Result of [`exhaustive_search`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleResult {
    pub best_placement: Placement,
    pub best_makespan_us: u64,
    /// Placements enumerated (the sink layer is never recompute, so this is
    /// `2 * 3^(n-1)`).
    pub evaluated: u64,
    /// Placements rejected for running out of memory.
    pub infeasible: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("exhaustive search is limited to {limit} layers, profile has {n}")]
    TooLarge { n: usize, limit: usize },
    #[error("no feasible placement exists")]
    NoFeasiblePlacement,
}

/// Largest graph [`exhaustive_search`] accepts.
pub const EXHAUSTIVE_LIMIT: usize = 10;

/// Simulates one iteration with an implementation kept deliberately separate
/// from the main simulator. Same contract as [`crate::simulator::simulate`].
///
/// Runs in time proportional to the simulated horizon, so it is only suited
/// to test-sized inputs.
pub fn reference_simulate(
    profile: &Profile,
    placement: &Placement,
    sched: SchedPolicy,
) -> (Timeline, MemoryTrace) {
    let plan = SchedulePlan::derive(profile, placement);
    let tasks = plan.into_tasks(profile);
    tick_engine(profile, &tasks, sched)
}

/// Enumerates all placements (sink restricted to keep/swap), simulates each,
/// and returns the feasible optimum under the tie-breaking order
/// (makespan, fewer keeps, lexicographically smallest class vector).
pub fn exhaustive_search(
    profile: &Profile,
    sched: SchedPolicy,
) -> Result<OracleResult, OracleError> {
    let n = profile.n();
    if n > EXHAUSTIVE_LIMIT {
        return Err(OracleError::TooLarge {
            n,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let sink = profile.sink();
    let classes = [
        PlacementClass::Keep,
        PlacementClass::Swap,
        PlacementClass::Recompute,
    ];
    let mut current = Placement::all_keep(n);
    let mut evaluated = 0u64;
    let mut infeasible = 0u64;
    let mut best: Option<(u64, usize, Placement)> = None;

    let mut digits = alloc::vec![0usize; n];
    'enumerate: loop {
        if digits[sink] != 2 {
            for i in 0..n {
                current.set(i, classes[digits[i]]);
            }
            evaluated += 1;
            let (timeline, _) = crate::simulator::simulate(profile, &current, sched);
            if timeline.is_feasible() {
                let keeps = current.counts().keep;
                let better = match &best {
                    None => true,
                    Some((mk, k, pl)) => (timeline.makespan_us, keeps, &current) < (*mk, *k, pl),
                };
                if better {
                    best = Some((timeline.makespan_us, keeps, current.clone()));
                }
            } else {
                infeasible += 1;
            }
        }
        // Base-3 counter, least-significant digit at layer 0.
        let mut pos = 0;
        loop {
            if pos == n {
                break 'enumerate;
            }
            digits[pos] += 1;
            if digits[pos] < 3 {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
    }
    let (best_makespan_us, _, best_placement) = best.ok_or(OracleError::NoFeasiblePlacement)?;
    Ok(OracleResult {
        best_placement,
        best_makespan_us,
        evaluated,
        infeasible,
    })
}

// ───────────────────────── reference implementation ─────────────────────────

/// Layer-level plan of one iteration: which tensors each backward group
/// replays, and which backward group first needs each swapped tensor.
struct SchedulePlan {
    /// Per backward layer, descending: the new replay chain, ascending.
    chains: Vec<(LayerId, Vec<LayerId>)>,
    consumers: Vec<Vec<LayerId>>,
    /// Swapped tensor -> backward layer whose group first requires it.
    first_group: BTreeMap<LayerId, LayerId>,
}

impl SchedulePlan {
    fn derive(profile: &Profile, placement: &Placement) -> SchedulePlan {
        let n = profile.n();
        let consumers = profile.consumers();
        let mut regenerated = alloc::vec![false; n];
        let mut first_group = BTreeMap::new();
        let mut chains = Vec::with_capacity(n);
        for j in (0..n).rev() {
            let mut needed: Vec<LayerId> = profile.layers[j].inputs.clone();
            needed.push(j);
            needed.sort_unstable();
            // Expand recompute requirements with an explicit worklist: every
            // discarded tensor reachable through discarded ancestors joins
            // the replay chain exactly once, globally.
            let mut chain: Vec<LayerId> = Vec::new();
            let mut stack: Vec<LayerId> = needed.clone();
            while let Some(t) = stack.pop() {
                if placement.class(t) == PlacementClass::Recompute && !regenerated[t] {
                    regenerated[t] = true;
                    chain.push(t);
                    stack.extend(profile.layers[t].inputs.iter().copied());
                }
            }
            chain.sort_unstable();
            // Swapped tensors this group reads: replay inputs plus the
            // backward's own reads. Earliest group wins.
            for &c in &chain {
                for &s in &profile.layers[c].inputs {
                    if placement.class(s) == PlacementClass::Swap {
                        first_group.entry(s).or_insert(j);
                    }
                }
            }
            for &t in &needed {
                if placement.class(t) == PlacementClass::Swap {
                    first_group.entry(t).or_insert(j);
                }
            }
            chains.push((j, chain));
        }
        SchedulePlan {
            chains,
            consumers,
            first_group,
        }
    }

    fn into_tasks(self, profile: &Profile) -> RefTasks {
        let n = profile.n();
        let mut tasks: Vec<RefTask> = Vec::new();
        fn push(tasks: &mut Vec<RefTask>, kind: TaskKind, dur: u64, deps: Vec<usize>) -> usize {
            tasks.push(RefTask {
                kind,
                duration_us: dur,
                deps,
            });
            tasks.len() - 1
        }

        let fwd: Vec<usize> = (0..n)
            .map(|i| {
                push(
                    &mut tasks,
                    TaskKind::Forward(i),
                    profile.layers[i].fwd_time_us,
                    profile.layers[i].inputs.clone(),
                )
            })
            .collect();

        let mut swap_in: BTreeMap<LayerId, usize> = BTreeMap::new();
        let mut swap_out: BTreeMap<LayerId, usize> = BTreeMap::new();
        for &i in self.first_group.keys() {
            let mut deps = alloc::vec![fwd[i]];
            deps.extend(self.consumers[i].iter().map(|&c| fwd[c]));
            let out = push(
                &mut tasks,
                TaskKind::SwapOut(i),
                profile.swap_out_time(i),
                deps,
            );
            swap_out.insert(i, out);
            let inn = push(
                &mut tasks,
                TaskKind::SwapIn(i),
                profile.swap_in_time(i),
                alloc::vec![out],
            );
            swap_in.insert(i, inn);
        }

        // Residency provider per tensor, updated as replays appear.
        let mut provider: Vec<usize> = fwd.clone();
        for (&i, &inn) in &swap_in {
            provider[i] = inn;
        }

        let mut compute_order: Vec<usize> = fwd.clone();
        let mut bwd: Vec<usize> = alloc::vec![usize::MAX; n];
        let mut first_req: BTreeMap<LayerId, usize> = BTreeMap::new();

        for (j, chain) in &self.chains {
            let j = *j;
            for &c in chain {
                let mut inputs = profile.layers[c].inputs.clone();
                inputs.sort_unstable();
                let deps: Vec<usize> = inputs.iter().map(|&s| provider[s]).collect();
                let id = push(
                    &mut tasks,
                    TaskKind::Recompute {
                        layer: c,
                        needed_by: j,
                    },
                    profile.layers[c].fwd_time_us,
                    deps,
                );
                for &s in &inputs {
                    if swap_in.contains_key(&s) {
                        first_req.entry(s).or_insert(id);
                    }
                }
                provider[c] = id;
                compute_order.push(id);
            }
            let mut reads: Vec<LayerId> = profile.layers[j].inputs.clone();
            reads.sort_unstable();
            reads.push(j);
            let mut deps: Vec<usize> = self.consumers[j].iter().map(|&c| bwd[c]).collect();
            deps.extend(reads.iter().map(|&t| provider[t]));
            let id = push(
                &mut tasks,
                TaskKind::Backward(j),
                profile.layers[j].bwd_time_us,
                deps,
            );
            for &t in &reads {
                if swap_in.contains_key(&t) {
                    first_req.entry(t).or_insert(id);
                }
            }
            bwd[j] = id;
            compute_order.push(id);
        }

        // Discard points: a discarded tensor leaves memory when the later of
        // its own forward and its last forward consumer completes.
        let mut discard_at: BTreeMap<usize, Vec<LayerId>> = BTreeMap::new();
        for (_, chain) in &self.chains {
            for &c in chain {
                let anchor = self.consumers[c].last().map(|&k| fwd[k]).unwrap_or(fwd[c]);
                discard_at.entry(anchor).or_default().push(c);
            }
        }
        for list in discard_at.values_mut() {
            list.sort_unstable();
        }

        let mut h2d_order: Vec<usize> = swap_in.values().copied().collect();
        h2d_order.sort_unstable_by_key(|&t| {
            let i = tasks[t].kind.layer();
            (n - 1 - self.first_group[&i], i)
        });

        // Transitive dependency closures as bitsets; ids are topological.
        let words = tasks.len().div_ceil(64);
        let mut closure: Vec<Vec<u64>> = alloc::vec![alloc::vec![0u64; words]; tasks.len()];
        for t in 0..tasks.len() {
            for di in 0..tasks[t].deps.len() {
                let d = tasks[t].deps[di];
                debug_assert!(d < t, "reference graph must be id-topological");
                closure[t][d / 64] |= 1 << (d % 64);
                let (head, tail) = closure.split_at_mut(t);
                for (w, bits) in head[d].iter().enumerate() {
                    tail[0][w] |= bits;
                }
            }
        }

        RefTasks {
            tasks,
            compute_order,
            h2d_order,
            bwd,
            first_group: self.first_group,
            first_req,
            swap_out,
            swap_in,
            discard_at,
            closure,
        }
    }
}

struct RefTask {
    kind: TaskKind,
    duration_us: u64,
    deps: Vec<usize>,
}

struct RefTasks {
    tasks: Vec<RefTask>,
    compute_order: Vec<usize>,
    h2d_order: Vec<usize>,
    bwd: Vec<usize>,
    first_group: BTreeMap<LayerId, LayerId>,
    first_req: BTreeMap<LayerId, usize>,
    swap_out: BTreeMap<LayerId, usize>,
    swap_in: BTreeMap<LayerId, usize>,
    discard_at: BTreeMap<usize, Vec<LayerId>>,
    closure: Vec<Vec<u64>>,
}

fn tick_engine(profile: &Profile, rt: &RefTasks, sched: SchedPolicy) -> (Timeline, MemoryTrace) {
    let nt = rt.tasks.len();
    let n = profile.n();
    let base = profile.env.resident_base_bytes;
    let budget = profile.env.capacity_bytes - base;

    let mut finished_bits = alloc::vec![0u64; nt.div_ceil(64)];
    let closure_done = |bits: &[u64], t: usize| -> bool {
        rt.closure[t]
            .iter()
            .zip(bits.iter())
            .all(|(need, have)| need & !have == 0)
    };

    let mut started = alloc::vec![false; nt];
    let mut start_us = alloc::vec![0u64; nt];
    let mut end_us = alloc::vec![0u64; nt];
    let mut finished_count = 0usize;
    let mut forwards_left = n;
    let mut compute_ptr = 0usize;
    let mut h2d_ptr = 0usize;
    // (ready tick, layer, task) of dependency-satisfied unstarted swap-outs.
    let mut d2h_pool: Vec<(u64, LayerId, usize)> = Vec::new();
    let mut d2h_queued = alloc::vec![false; nt];
    let mut running: [Option<(usize, u64)>; 3] = [None, None, None];
    let mut mem_used = 0u64;
    let mut peak = base;
    let mut entries: Vec<MemoryEvent> = Vec::new();
    let mut events: Vec<TimelineEvent> = Vec::new();
    let mut oom: Option<OomRecord> = None;

    let record = |entries: &mut Vec<MemoryEvent>,
                  mem_used: &mut u64,
                  peak: &mut u64,
                  t: u64,
                  layer: LayerId,
                  delta: i64,
                  reason: MemReason| {
        if delta >= 0 {
            *mem_used += delta as u64;
        } else {
            *mem_used -= (-delta) as u64;
        }
        *peak = (*peak).max(*mem_used + base);
        entries.push(MemoryEvent {
            time_us: t,
            delta_bytes: delta,
            total_bytes: *mem_used + base,
            layer,
            reason,
        });
    };

    // Any run completes within the sum of all durations; the loop bound is a
    // defensive guard, not a scheduling rule.
    let horizon: u64 = rt
        .tasks
        .iter()
        .map(|t| t.duration_us)
        .fold(4u64, |a, b| a.saturating_add(b))
        .saturating_mul(2);

    let mut t = 0u64;
    loop {
        // Completions first, lane order.
        for lane in [Lane::Compute, Lane::D2h, Lane::H2d] {
            let li = lane as usize;
            let Some((task, end)) = running[li] else {
                continue;
            };
            if end != t {
                continue;
            }
            running[li] = None;
            finished_bits[task / 64] |= 1 << (task % 64);
            finished_count += 1;
            events.push(TimelineEvent {
                kind: rt.tasks[task].kind,
                lane,
                start_us: start_us[task],
                end_us: end_us[task],
            });
            match rt.tasks[task].kind {
                TaskKind::SwapOut(i) => {
                    let b = profile.layers[i].output_bytes as i64;
                    record(
                        &mut entries,
                        &mut mem_used,
                        &mut peak,
                        t,
                        i,
                        -b,
                        MemReason::SwapOutFree,
                    );
                }
                TaskKind::Forward(_) => {
                    forwards_left -= 1;
                    if let Some(list) = rt.discard_at.get(&task) {
                        for &i in list {
                            let b = profile.layers[i].output_bytes as i64;
                            record(
                                &mut entries,
                                &mut mem_used,
                                &mut peak,
                                t,
                                i,
                                -b,
                                MemReason::DiscardFree,
                            );
                        }
                    }
                }
                TaskKind::Backward(i) => {
                    let b = profile.layers[i].output_bytes as i64;
                    record(
                        &mut entries,
                        &mut mem_used,
                        &mut peak,
                        t,
                        i,
                        -b,
                        MemReason::BwdFree,
                    );
                }
                _ => {}
            }
        }

        if finished_count == nt {
            break;
        }

        // Swap-outs whose dependencies were satisfied by this tick's
        // completions join the copy pool, layer order.
        let mut newly: Vec<(LayerId, usize)> = Vec::new();
        for (&i, &out) in &rt.swap_out {
            if !d2h_queued[out] && !started[out] && closure_done(&finished_bits, out) {
                d2h_queued[out] = true;
                newly.push((i, out));
            }
        }
        newly.sort_unstable();
        for (i, task) in newly {
            d2h_pool.push((t, i, task));
        }

        // Issue fixpoint at this tick, lane order.
        loop {
            let mut progressed = false;
            if running[Lane::Compute as usize].is_none() {
                if let Some(&task) = rt.compute_order.get(compute_ptr) {
                    if closure_done(&finished_bits, task) {
                        let alloc_req = match rt.tasks[task].kind {
                            TaskKind::Forward(i) => Some((i, MemReason::FwdAlloc)),
                            TaskKind::Recompute { layer, .. } => {
                                Some((layer, MemReason::RecomputeAlloc))
                            }
                            _ => None,
                        };
                        let fits = alloc_req.is_none_or(|(i, _)| {
                            mem_used + profile.layers[i].output_bytes <= budget
                        });
                        if fits {
                            if let Some((i, reason)) = alloc_req {
                                let b = profile.layers[i].output_bytes as i64;
                                record(&mut entries, &mut mem_used, &mut peak, t, i, b, reason);
                            }
                            started[task] = true;
                            start_us[task] = t;
                            end_us[task] = t + rt.tasks[task].duration_us;
                            running[Lane::Compute as usize] = Some((task, end_us[task]));
                            compute_ptr += 1;
                            progressed = true;
                        }
                    }
                }
            }
            if running[Lane::D2h as usize].is_none() && !d2h_pool.is_empty() {
                let mut pick = 0usize;
                for k in 1..d2h_pool.len() {
                    if (d2h_pool[k].0, d2h_pool[k].1) < (d2h_pool[pick].0, d2h_pool[pick].1) {
                        pick = k;
                    }
                }
                let (_, _, task) = d2h_pool.remove(pick);
                started[task] = true;
                start_us[task] = t;
                end_us[task] = t + rt.tasks[task].duration_us;
                running[Lane::D2h as usize] = Some((task, end_us[task]));
                progressed = true;
            }
            if running[Lane::H2d as usize].is_none() {
                if let Some(&task) = rt.h2d_order.get(h2d_ptr) {
                    let i = rt.tasks[task].kind.layer();
                    let group = rt.first_group[&i];
                    let gate_open = match sched {
                        SchedPolicy::Eager => true,
                        SchedPolicy::Naive => {
                            if group + 1 < n {
                                started[rt.bwd[group + 1]]
                            } else {
                                forwards_left == 0
                            }
                        }
                        SchedPolicy::NaiveConvAnchored => (group + 1..n)
                            .find(|&k| profile.layers[k].kind == LayerKind::Convolution)
                            .map(|k| started[rt.bwd[k]])
                            .unwrap_or(forwards_left == 0),
                    };
                    let bytes = profile.layers[i].output_bytes;
                    if closure_done(&finished_bits, task) && gate_open && mem_used + bytes <= budget
                    {
                        record(
                            &mut entries,
                            &mut mem_used,
                            &mut peak,
                            t,
                            i,
                            bytes as i64,
                            MemReason::SwapInAlloc,
                        );
                        started[task] = true;
                        start_us[task] = t;
                        end_us[task] = t + rt.tasks[task].duration_us;
                        running[Lane::H2d as usize] = Some((task, end_us[task]));
                        h2d_ptr += 1;
                        progressed = true;
                    }
                }
            }
            if !progressed {
                break;
            }
        }

        if running.iter().all(Option::is_none) {
            // Stuck: report the memory-blocked head, compute lane first.
            let blocked = rt
                .compute_order
                .get(compute_ptr)
                .copied()
                .filter(|&task| closure_done(&finished_bits, task))
                .or_else(|| {
                    rt.h2d_order
                        .get(h2d_ptr)
                        .copied()
                        .filter(|&task| closure_done(&finished_bits, task))
                })
                .expect("reference run stuck without a memory-blocked head");
            let layer = rt.tasks[blocked].kind.layer();
            oom = Some(OomRecord {
                time_us: t,
                layer,
                requested_bytes: profile.layers[layer].output_bytes,
            });
            break;
        }

        t += 1;
        assert!(t <= horizon, "reference run exceeded its horizon");
    }

    let makespan_us = events.iter().map(|e| e.end_us).max().unwrap_or(0);
    let stalls = if oom.is_none() {
        let mut stalls = BTreeMap::new();
        for (&tensor, &req) in &rt.first_req {
            let bound = rt.tasks[req]
                .deps
                .iter()
                .filter(|&&d| !matches!(rt.tasks[d].kind, TaskKind::SwapIn(_)))
                .map(|&d| end_us[d])
                .max()
                .unwrap_or(0);
            let arrival = end_us[rt.swap_in[&tensor]];
            if arrival > bound {
                stalls.insert(tensor, arrival - bound);
            }
        }
        stalls
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
