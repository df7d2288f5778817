use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::model::{Environment, LayerKind, LayerNode, Placement, PlacementClass, Profile};

fn chain(n: usize, fwd: u64, bwd: u64, bytes: u64, capacity: u64) -> Profile {
    Profile {
        layers: (0..n)
            .map(|i| LayerNode {
                id: i,
                name: alloc::format!("l{i}"),
                kind: LayerKind::Other,
                fwd_time_us: fwd,
                bwd_time_us: bwd,
                output_bytes: bytes,
                inputs: if i == 0 { vec![] } else { vec![i - 1] },
            })
            .collect(),
        env: Environment {
            capacity_bytes: capacity,
            d2h_bandwidth: Some(1_000_000),
            h2d_bandwidth: Some(1_000_000),
            resident_base_bytes: 1,
        },
        swap_out_time_us: None,
        swap_in_time_us: None,
    }
}

fn with_transfers(mut p: Profile, out: Vec<u64>, inn: Vec<u64>) -> Profile {
    p.swap_out_time_us = Some(out);
    p.swap_in_time_us = Some(inn);
    p
}

#[test]
fn one_layer_keep_is_serial() {
    let p = chain(1, 4, 4, 8, 64);
    let pl = Placement::all_keep(1);
    let (t, m) = simulate(&p, &pl, SchedPolicy::Eager);
    assert!(t.is_feasible());
    assert_eq!(t.makespan_us, 8);
    assert_eq!(
        t.events,
        vec![
            TimelineEvent {
                kind: TaskKind::Forward(0),
                lane: Lane::Compute,
                start_us: 0,
                end_us: 4
            },
            TimelineEvent {
                kind: TaskKind::Backward(0),
                lane: Lane::Compute,
                start_us: 4,
                end_us: 8
            },
        ]
    );
    assert_eq!(m.peak_bytes, 1 + 8);
}

#[test]
fn one_layer_swap_round_trips_through_host() {
    let p = with_transfers(chain(1, 4, 4, 8, 1_000), vec![6], vec![6]);
    let pl = Placement::all_swap(1);
    let (t, m) = simulate(&p, &pl, SchedPolicy::Eager);
    let ev = |k| t.event(k).copied().unwrap();
    assert_eq!(
        (
            ev(TaskKind::Forward(0)).start_us,
            ev(TaskKind::Forward(0)).end_us
        ),
        (0, 4)
    );
    assert_eq!(
        (
            ev(TaskKind::SwapOut(0)).start_us,
            ev(TaskKind::SwapOut(0)).end_us
        ),
        (4, 10)
    );
    assert_eq!(
        (
            ev(TaskKind::SwapIn(0)).start_us,
            ev(TaskKind::SwapIn(0)).end_us
        ),
        (10, 16)
    );
    assert_eq!(
        (
            ev(TaskKind::Backward(0)).start_us,
            ev(TaskKind::Backward(0)).end_us
        ),
        (16, 20)
    );
    assert_eq!(t.makespan_us, 20);
    // The tensor leaves memory during the host round trip.
    assert_eq!(m.peak_bytes, 1 + 8);
}

#[test]
fn build_one_layer_keep() {
    let p = chain(1, 4, 4, 8, 64);
    let g = build_tasks(&p, &Placement::all_keep(1));
    let kinds: Vec<TaskKind> = g.tasks.iter().map(|t| t.kind).collect();
    assert_eq!(kinds, vec![TaskKind::Forward(0), TaskKind::Backward(0)]);
    assert_eq!(g.tasks[1].deps, vec![0]);
}

#[test]
fn build_recompute_feeds_from_network_input() {
    // A -> B, A recomputed, B kept: regenerating A needs only the network
    // input, which is always resident.
    let p = chain(2, 4, 4, 8, 1_000);
    let mut pl = Placement::all_keep(2);
    pl.set(0, PlacementClass::Recompute);
    let g = build_tasks(&p, &pl);
    let rec = g
        .tasks
        .iter()
        .position(|t| {
            matches!(
                t.kind,
                TaskKind::Recompute {
                    layer: 0,
                    needed_by: 1
                }
            )
        })
        .expect("replay task for A");
    assert!(g.tasks[rec].deps.is_empty());
    // backward(B) waits for the replay.
    let b1 = g
        .tasks
        .iter()
        .position(|t| t.kind == TaskKind::Backward(1))
        .unwrap();
    assert!(g.tasks[b1].deps.contains(&rec));
}

#[test]
fn build_recursive_chain_in_topological_order() {
    // A and B recomputed, C kept: backward(C) is preceded by replays of A
    // then B, shared by the later backwards.
    let p = chain(3, 4, 4, 8, 1_000);
    let mut pl = Placement::all_keep(3);
    pl.set(0, PlacementClass::Recompute);
    pl.set(1, PlacementClass::Recompute);
    let g = build_tasks(&p, &pl);
    let order: Vec<TaskKind> = g.compute_order.iter().map(|&t| g.tasks[t].kind).collect();
    assert_eq!(
        order,
        vec![
            TaskKind::Forward(0),
            TaskKind::Forward(1),
            TaskKind::Forward(2),
            TaskKind::Recompute {
                layer: 0,
                needed_by: 2
            },
            TaskKind::Recompute {
                layer: 1,
                needed_by: 2
            },
            TaskKind::Backward(2),
            TaskKind::Backward(1),
            TaskKind::Backward(0),
        ]
    );
    let (t, _) = simulate(&p, &pl, SchedPolicy::Eager);
    // Serial compute: three forwards, two replays, three backwards.
    assert_eq!(t.makespan_us, 8 * 4);
}

#[test]
fn replay_chain_pulls_its_swapped_ancestor_through_the_copy_lane() {
    // l0 swapped, l1 discarded, l2 kept: regenerating l1 for backward(2)
    // needs l0 back first, so the replay depends on swap_in(0) and tensor 0
    // is first needed by the backward group of layer 2.
    let p = with_transfers(chain(3, 4, 4, 8, 1_000), vec![6; 3], vec![6; 3]);
    let mut pl = Placement::all_keep(3);
    pl.set(0, PlacementClass::Swap);
    pl.set(1, PlacementClass::Recompute);
    let g = build_tasks(&p, &pl);
    let rec = g
        .tasks
        .iter()
        .position(|t| {
            matches!(
                t.kind,
                TaskKind::Recompute {
                    layer: 1,
                    needed_by: 2
                }
            )
        })
        .expect("replay of l1");
    let swap_in = g
        .tasks
        .iter()
        .position(|t| t.kind == TaskKind::SwapIn(0))
        .unwrap();
    assert!(g.tasks[rec].deps.contains(&swap_in));
    // Timeline: f0..f2 end at 12; out0 waits for its consumer f1 (ends 8),
    // runs [8,14]; in0 [14,20]; the replay waits for it, then serial compute.
    let (t, m) = simulate(&p, &pl, SchedPolicy::Eager);
    let ev = |k| t.event(k).copied().unwrap();
    assert_eq!(ev(TaskKind::SwapOut(0)).start_us, 8);
    assert_eq!(ev(TaskKind::SwapIn(0)).end_us, 20);
    assert_eq!(
        ev(TaskKind::Recompute {
            layer: 1,
            needed_by: 2
        })
        .start_us,
        20
    );
    assert_eq!(t.makespan_us, 20 + 4 + 12);
    assert_timeline_sound(&p, &pl, &t, &m);
}

#[test]
fn three_layer_all_swap_eager_and_naive() {
    let p = with_transfers(chain(3, 4, 4, 8, 1_000), vec![6; 3], vec![6; 3]);
    let pl = Placement::all_swap(3);
    let (eager, _) = simulate(&p, &pl, SchedPolicy::Eager);
    let (naive, _) = simulate(&p, &pl, SchedPolicy::Naive);
    assert_eq!(eager.makespan_us, 46);
    assert_eq!(naive.makespan_us, 46);
    assert!(eager.makespan_us <= naive.makespan_us);
}

#[test]
fn eager_beats_naive_when_anchors_delay_transfers() {
    let p = with_transfers(
        chain(4, 4, 4, 8, 1_000),
        vec![20, 3, 20, 20],
        vec![20, 3, 20, 20],
    );
    let pl = Placement::all_swap(4);
    let (eager, _) = simulate(&p, &pl, SchedPolicy::Eager);
    let (naive, _) = simulate(&p, &pl, SchedPolicy::Naive);
    assert_eq!(eager.makespan_us, 122);
    assert_eq!(naive.makespan_us, 123);
}

#[test]
fn stall_sets_match_late_transfer_geometry() {
    // Eight-layer chain whose late swap-outs outlive the forward pass and
    // whose swap-ins stall three backwards.
    let p = with_transfers(
        chain(8, 10, 10, 8, 1_000_000_000),
        vec![5, 5, 5, 5, 5, 18, 18, 18],
        vec![5, 5, 5, 5, 16, 5, 15, 15],
    );
    let pl = Placement::all_swap(8);
    let (t, _) = simulate(&p, &pl, SchedPolicy::Eager);
    assert_eq!(t.makespan_us, 220);
    let (l_o, l_i) = extract_stall_sets(&t, &p).unwrap();
    assert_eq!(l_o.into_iter().collect::<Vec<_>>(), vec![5, 6, 7]);
    assert_eq!(l_i.into_iter().collect::<Vec<_>>(), vec![4, 6, 7]);
}

#[test]
fn stall_sets_reject_wrong_inputs() {
    let p = chain(2, 4, 4, 8, 1_000);
    let (keep_run, _) = simulate(&p, &Placement::all_keep(2), SchedPolicy::Eager);
    assert_eq!(
        extract_stall_sets(&keep_run, &p),
        Err(StallSetError::NotAllSwap)
    );
    let (naive_run, _) = simulate(&p, &Placement::all_swap(2), SchedPolicy::Naive);
    assert_eq!(
        extract_stall_sets(&naive_run, &p),
        Err(StallSetError::NotEager)
    );
}

#[test]
fn stall_sets_empty_on_fully_hidden_timeline() {
    // extract operates on the timeline alone; a hand-built one where every
    // swap-out lands before the last forward and nothing stalls yields two
    // empty sets.
    let p = chain(2, 10, 10, 8, 1_000);
    let mk = |kind: TaskKind, start: u64, end: u64| TimelineEvent {
        lane: kind.lane(),
        kind,
        start_us: start,
        end_us: end,
    };
    let t = Timeline {
        events: vec![
            mk(TaskKind::Forward(0), 0, 10),
            mk(TaskKind::SwapOut(0), 10, 11),
            mk(TaskKind::Forward(1), 10, 20),
            mk(TaskKind::SwapOut(1), 11, 12),
            mk(TaskKind::SwapIn(0), 12, 13),
            mk(TaskKind::SwapIn(1), 13, 14),
            mk(TaskKind::Backward(1), 20, 30),
            mk(TaskKind::Backward(0), 30, 40),
        ],
        makespan_us: 40,
        stalls: BTreeMap::new(),
        oom: None,
        sched: SchedPolicy::Eager,
    };
    let (l_o, l_i) = extract_stall_sets(&t, &p).unwrap();
    assert!(l_o.is_empty());
    assert!(l_i.is_empty());
}

#[test]
fn stall_sets_shrink_to_the_boundary_when_transfers_are_short() {
    // Transfers much shorter than every compute task hide everywhere except
    // at the forward/backward boundary, where the sink tensor's round trip
    // is unavoidable under all-swap.
    let p = with_transfers(chain(8, 10, 10, 8, 1_000_000_000), vec![1; 8], vec![1; 8]);
    let (t, _) = simulate(&p, &Placement::all_swap(8), SchedPolicy::Eager);
    let (l_o, l_i) = extract_stall_sets(&t, &p).unwrap();
    assert!(l_o.iter().all(|&i| i >= 6), "l_o = {l_o:?}");
    assert!(l_i.iter().all(|&i| i >= 6), "l_i = {l_i:?}");
    assert!(!l_o.is_empty());
}

#[test]
fn all_keep_chain_is_sum_of_compute() {
    let p = chain(5, 7, 9, 8, 1_000);
    let (t, m) = simulate(&p, &Placement::all_keep(5), SchedPolicy::Eager);
    assert_eq!(t.makespan_us, 5 * (7 + 9));
    assert_eq!(m.peak_bytes, 1 + 5 * 8);
    assert!(t.stalls.is_empty());
}

#[test]
fn oom_when_one_tensor_never_fits() {
    let mut p = chain(1, 4, 4, 100, 64);
    p.env.resident_base_bytes = 10;
    let (t, _) = simulate(&p, &Placement::all_keep(1), SchedPolicy::Eager);
    assert_eq!(
        t.oom,
        Some(OomRecord {
            time_us: 0,
            layer: 0,
            requested_bytes: 100
        })
    );
    assert!(t.events.is_empty());
}

#[test]
fn oom_mid_run_reports_blocked_layer() {
    // Three kept 30-byte tensors against a 74-byte budget: the third forward
    // can never allocate while the first two are resident.
    let p = with_transfers(chain(3, 4, 4, 30, 75), vec![6; 3], vec![6; 3]);
    let (t, _) = simulate(&p, &Placement::all_keep(3), SchedPolicy::Eager);
    let oom = t.oom.expect("must not fit");
    assert_eq!(oom.layer, 2);
    assert_eq!(oom.time_us, 8);
    // Swapping the first tensor out instead makes the same profile runnable.
    let mut pl = Placement::all_keep(3);
    pl.set(0, PlacementClass::Swap);
    let (t2, m2) = simulate(&p, &pl, SchedPolicy::Eager);
    assert!(t2.is_feasible(), "oom: {:?}", t2.oom);
    assert!(m2.peak_bytes <= 75);
}

#[test]
fn swap_out_waits_for_all_forward_consumers() {
    // Diamond: 0 feeds 1 and 2, 3 joins. Tensor 0's swap-out must wait for
    // forward(2), the last forward consumer.
    let mut p = chain(4, 4, 4, 8, 1_000);
    p.layers[1].inputs = vec![0];
    p.layers[2].inputs = vec![0];
    p.layers[3].inputs = vec![1, 2];
    p.swap_out_time_us = Some(vec![6; 4]);
    p.swap_in_time_us = Some(vec![6; 4]);
    p.validate().unwrap();
    let mut pl = Placement::all_keep(4);
    pl.set(0, PlacementClass::Swap);
    let (t, _) = simulate(&p, &pl, SchedPolicy::Eager);
    let out = t.event(TaskKind::SwapOut(0)).unwrap();
    let f2 = t.event(TaskKind::Forward(2)).unwrap();
    assert_eq!(out.start_us, f2.end_us);
}

#[test]
fn identical_inputs_identical_output() {
    let p = with_transfers(chain(6, 5, 7, 16, 80), vec![9; 6], vec![9; 6]);
    let mut pl = Placement::all_swap(6);
    pl.set(2, PlacementClass::Recompute);
    pl.set(4, PlacementClass::Keep);
    let a = simulate(&p, &pl, SchedPolicy::Eager);
    let b = simulate(&p, &pl, SchedPolicy::Eager);
    assert_eq!(a, b);
}

#[test]
fn timeline_respects_lane_exclusivity_and_durations() {
    let p = with_transfers(chain(6, 3, 5, 10, 45), vec![4; 6], vec![4; 6]);
    let pl = Placement::all_swap(6);
    for sched in [
        SchedPolicy::Eager,
        SchedPolicy::Naive,
        SchedPolicy::NaiveConvAnchored,
    ] {
        let (t, m) = simulate(&p, &pl, sched);
        assert!(t.is_feasible());
        assert_timeline_sound(&p, &pl, &t, &m);
    }
}

/// Scans a timeline and memory trace against the structural invariants:
/// per-lane non-overlap, duration exactness, dependency respect, makespan,
/// and the memory ledger (non-negative running total, peak within capacity,
/// consumed tensors resident while their consumer runs).
pub(crate) fn assert_timeline_sound(
    profile: &Profile,
    placement: &Placement,
    t: &Timeline,
    m: &MemoryTrace,
) {
    let graph = build_tasks(profile, placement);
    assert_eq!(
        t.events.len(),
        graph.tasks.len(),
        "every task executed once"
    );
    // Durations and per-lane exclusivity.
    let mut by_lane: BTreeMap<u8, Vec<(u64, u64)>> = BTreeMap::new();
    for e in &t.events {
        let dur = match e.kind {
            TaskKind::Forward(i) | TaskKind::Recompute { layer: i, .. } => {
                profile.layers[i].fwd_time_us
            }
            TaskKind::Backward(i) => profile.layers[i].bwd_time_us,
            TaskKind::SwapOut(i) => profile.swap_out_time(i),
            TaskKind::SwapIn(i) => profile.swap_in_time(i),
        };
        assert_eq!(e.end_us - e.start_us, dur, "duration exact for {}", e.kind);
        by_lane
            .entry(e.lane as u8)
            .or_default()
            .push((e.start_us, e.end_us));
    }
    for intervals in by_lane.values_mut() {
        intervals.sort_unstable();
        for w in intervals.windows(2) {
            assert!(w[0].1 <= w[1].0, "lane intervals overlap");
        }
    }
    // Dependencies respected.
    let find = |kind: TaskKind| t.event(kind).copied().expect("event exists");
    for task in &graph.tasks {
        let me = find(task.kind);
        for &d in &task.deps {
            let dep = find(graph.tasks[d].kind);
            assert!(
                dep.end_us <= me.start_us,
                "{} started before its dependency {}",
                task.kind,
                graph.tasks[d].kind
            );
        }
    }
    assert_eq!(
        t.makespan_us,
        t.events.iter().map(|e| e.end_us).max().unwrap_or(0)
    );
    // Memory ledger.
    let base = profile.env.resident_base_bytes;
    let mut running = 0i64;
    let mut peak = base;
    for entry in &m.entries {
        running += entry.delta_bytes;
        assert!(running >= 0, "running feature-map total went negative");
        assert_eq!(entry.total_bytes, running as u64 + base);
        peak = peak.max(entry.total_bytes);
    }
    assert_eq!(running, 0, "every allocation is eventually freed");
    assert_eq!(m.peak_bytes, peak);
    assert!(m.peak_bytes <= profile.env.capacity_bytes);
}

#[test]
fn recompute_conservation_under_pressure() {
    // Tight budget with a mixed placement: every consumed tensor must be
    // resident while its consumer runs (checked inside the soundness scan),
    // and replays must re-allocate exactly once.
    let p = with_transfers(chain(5, 6, 6, 12, 40), vec![5; 5], vec![5; 5]);
    let mut pl = Placement::all_swap(5);
    pl.set(1, PlacementClass::Recompute);
    pl.set(3, PlacementClass::Recompute);
    let (t, m) = simulate(&p, &pl, SchedPolicy::Eager);
    assert!(t.is_feasible(), "oom: {:?}", t.oom);
    assert_timeline_sound(&p, &pl, &t, &m);
    let recomputes = t
        .events
        .iter()
        .filter(|e| matches!(e.kind, TaskKind::Recompute { .. }))
        .count();
    assert_eq!(recomputes, 2);
}
