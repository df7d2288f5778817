//! Task-graph construction.
//!
//! Dependency rules:
//!
//! * `forward(i)` waits for the forwards producing its inputs.
//! * `swap_out(i)` waits for `forward(i)` and for every forward that consumes
//!   tensor `i` (the tensor must stay resident until its last forward use).
//! * `backward(j)` waits for the backwards of all forward-consumers of `j`'s
//!   output (gradient flow) and for the residency of every tensor it reads:
//!   its input feature maps and its own output feature map.
//! * Residency of a kept tensor is established by its forward; of a swapped
//!   tensor by its swap-in; of a discarded tensor by a recompute task.
//!   Recompute tasks form the minimal replay chain from the nearest resident
//!   or swapped ancestors (a swapped ancestor contributes a swap-in
//!   dependency). A chain is built once, at the first backward that needs it,
//!   and shared by every later consumer: a regenerated tensor stays resident
//!   until its own backward completes, exactly like a kept one.
//!
//! Task ids are created in dependency order, so every dependency points at a
//! smaller id; the graph is acyclic by construction.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::{SimOptions, TaskKind};
use crate::model::{LayerId, Placement, PlacementClass, Profile};

pub type TaskId = usize;

/// A schedulable unit with its duration and prerequisite tasks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub kind: TaskKind,
    pub duration_us: u64,
    pub deps: Vec<TaskId>,
}

/// Effective per-layer class after applying evaluator hooks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum EffClass {
    Keep,
    Swap,
    Recompute,
    /// Resident at zero transfer and zero memory cost (overhead baselines).
    Ideal,
}

/// The task DAG plus the per-lane issue orders derived from it.
#[derive(Debug, Clone)]
pub struct TaskGraph {
    pub tasks: Vec<Task>,
    pub(crate) n: usize,
    pub(crate) eff: Vec<EffClass>,
    pub(crate) bwd_task: Vec<TaskId>,
    pub(crate) swap_in_task: BTreeMap<LayerId, TaskId>,
    /// Strict issue order on the compute lane.
    pub(crate) compute_order: Vec<TaskId>,
    /// Strict issue order on the host-to-device lane: tensors sorted by the
    /// backward group that first needs them, ties by layer id.
    pub(crate) swap_in_order: Vec<TaskId>,
    /// Swapped tensor -> backward layer whose group first requires it.
    pub(crate) first_need_group: BTreeMap<LayerId, LayerId>,
    /// Swapped tensor -> the compute task that first requires it resident.
    pub(crate) first_req_task: BTreeMap<LayerId, TaskId>,
    /// Forward task -> recompute-class tensors discarded when it completes
    /// (the later of the tensor's own forward and its last forward use).
    pub(crate) discard_at: BTreeMap<TaskId, Vec<LayerId>>,
}

/// Builds the task DAG for one iteration of `profile` under `placement`.
pub fn build_tasks(profile: &Profile, placement: &Placement) -> TaskGraph {
    build_tasks_with(profile, placement, &SimOptions::default())
}

pub(crate) fn build_tasks_with(
    profile: &Profile,
    placement: &Placement,
    options: &SimOptions,
) -> TaskGraph {
    let n = profile.n();
    debug_assert_eq!(placement.classes.len(), n);
    let consumers = profile.consumers();
    let eff: Vec<EffClass> = (0..n)
        .map(|i| {
            if options.idealized == Some(i) {
                EffClass::Ideal
            } else {
                match placement.class(i) {
                    PlacementClass::Keep => EffClass::Keep,
                    PlacementClass::Swap => EffClass::Swap,
                    PlacementClass::Recompute => EffClass::Recompute,
                }
            }
        })
        .collect();

    let mut b = Builder {
        profile,
        eff: &eff,
        tasks: Vec::with_capacity(4 * n),
        fwd_task: Vec::with_capacity(n),
        bwd_task: alloc::vec![usize::MAX; n],
        swap_in_task: BTreeMap::new(),
        regenerated: BTreeMap::new(),
        first_need_group: BTreeMap::new(),
        first_req_task: BTreeMap::new(),
        discard_at: BTreeMap::new(),
        compute_order: Vec::with_capacity(2 * n),
    };

    // Forward pass, topological order.
    for i in 0..n {
        let deps: Vec<TaskId> = profile.layers[i]
            .inputs
            .iter()
            .map(|&p| b.fwd_task[p])
            .collect();
        let id = b.push(TaskKind::Forward(i), profile.layers[i].fwd_time_us, deps);
        b.fwd_task.push(id);
        b.compute_order.push(id);
    }

    // Swap transfers. The swap-out waits for the last forward use; the
    // swap-in waits for the swap-out.
    for i in 0..n {
        if eff[i] != EffClass::Swap {
            continue;
        }
        let mut deps = alloc::vec![b.fwd_task[i]];
        deps.extend(consumers[i].iter().map(|&c| b.fwd_task[c]));
        let out = b.push(TaskKind::SwapOut(i), profile.swap_out_time(i), deps);
        let inn = b.push(
            TaskKind::SwapIn(i),
            profile.swap_in_time(i),
            alloc::vec![out],
        );
        b.swap_in_task.insert(i, inn);
    }

    // Discard points for recompute-class tensors.
    for i in 0..n {
        if eff[i] != EffClass::Recompute {
            continue;
        }
        let anchor = consumers[i]
            .last()
            .map(|&c| b.fwd_task[c])
            .unwrap_or(b.fwd_task[i]);
        b.discard_at.entry(anchor).or_default().push(i);
    }

    // Backward pass, reverse topological order, recompute chains built at
    // first need and shared afterwards.
    for j in (0..n).rev() {
        let mut chain: Vec<TaskId> = Vec::new();
        let mut deps: Vec<TaskId> = consumers[j].iter().map(|&c| b.bwd_task[c]).collect();
        let mut needed: Vec<LayerId> = profile.layers[j].inputs.clone();
        needed.sort_unstable();
        needed.push(j);
        for t in needed {
            deps.push(b.residency_dep(t, j, &mut chain));
        }
        let id = b.push(TaskKind::Backward(j), profile.layers[j].bwd_time_us, deps);
        b.bwd_task[j] = id;
        // Replay chains issue in ascending layer order (their unique sorted
        // topological order); dependencies only ever point down the ids.
        chain.sort_unstable_by_key(|&t| b.tasks[t].kind.layer());
        // First-requirement bookkeeping follows issue order.
        for &t in chain.iter().chain([id].iter()) {
            b.note_swap_requirements(t, j);
        }
        b.compute_order.append(&mut chain);
        b.compute_order.push(id);
    }

    // Host-to-device issue order: first-needed first, ties by layer id.
    let mut swap_layers: Vec<LayerId> = b.swap_in_task.keys().copied().collect();
    swap_layers.sort_unstable_by_key(|&i| {
        let group = b.first_need_group[&i];
        (n - 1 - group, i)
    });
    let swap_in_order = swap_layers.iter().map(|i| b.swap_in_task[i]).collect();

    let Builder {
        tasks,
        bwd_task,
        swap_in_task,
        first_need_group,
        first_req_task,
        discard_at,
        compute_order,
        ..
    } = b;
    TaskGraph {
        tasks,
        n,
        eff,
        bwd_task,
        swap_in_task,
        compute_order,
        swap_in_order,
        first_need_group,
        first_req_task,
        discard_at,
    }
}

struct Builder<'a> {
    profile: &'a Profile,
    eff: &'a [EffClass],
    tasks: Vec<Task>,
    fwd_task: Vec<TaskId>,
    bwd_task: Vec<TaskId>,
    swap_in_task: BTreeMap<LayerId, TaskId>,
    regenerated: BTreeMap<LayerId, TaskId>,
    first_need_group: BTreeMap<LayerId, LayerId>,
    first_req_task: BTreeMap<LayerId, TaskId>,
    discard_at: BTreeMap<TaskId, Vec<LayerId>>,
    compute_order: Vec<TaskId>,
}

impl Builder<'_> {
    fn push(&mut self, kind: TaskKind, duration_us: u64, deps: Vec<TaskId>) -> TaskId {
        let id = self.tasks.len();
        debug_assert!(deps.iter().all(|&d| d < id), "dependency on a later task");
        self.tasks.push(Task {
            kind,
            duration_us,
            deps,
        });
        id
    }

    /// The task whose completion makes tensor `t` resident for the backward
    /// group of layer `group`. Builds the recompute chain on first demand.
    fn residency_dep(&mut self, t: LayerId, group: LayerId, chain: &mut Vec<TaskId>) -> TaskId {
        match self.eff[t] {
            EffClass::Keep | EffClass::Ideal => self.fwd_task[t],
            EffClass::Swap => self.swap_in_task[&t],
            EffClass::Recompute => {
                if let Some(&r) = self.regenerated.get(&t) {
                    r
                } else {
                    let mut inputs = self.profile.layers[t].inputs.clone();
                    inputs.sort_unstable();
                    let mut deps = Vec::with_capacity(inputs.len());
                    for s in inputs {
                        deps.push(self.residency_dep(s, group, chain));
                    }
                    let id = self.push(
                        TaskKind::Recompute {
                            layer: t,
                            needed_by: group,
                        },
                        self.profile.layers[t].fwd_time_us,
                        deps,
                    );
                    self.regenerated.insert(t, id);
                    chain.push(id);
                    id
                }
            }
        }
    }

    /// Records, for every swap-in this task depends on, the first compute
    /// task and backward group that require the tensor. Tasks are created in
    /// requirement order, so `or_insert` keeps the earliest.
    fn note_swap_requirements(&mut self, task: TaskId, group: LayerId) {
        for di in 0..self.tasks[task].deps.len() {
            let dep = self.tasks[task].deps[di];
            if let TaskKind::SwapIn(t) = self.tasks[dep].kind {
                self.first_need_group.entry(t).or_insert(group);
                self.first_req_task.entry(t).or_insert(task);
            }
        }
    }
}
