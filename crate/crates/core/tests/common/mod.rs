//! Shared generators for the integration suites: seeded random profiles
//! (chains and two-branch DAGs), random placements, and capacity tightening
//! against the simulated all-swap peak.

#![allow(dead_code)]

use pooch_core::model::{
    Environment, LayerId, LayerKind, LayerNode, Placement, PlacementClass, Profile,
};
use pooch_core::simulator::{simulate, MemoryTrace, SchedPolicy, TaskKind, Timeline};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub const KINDS: [LayerKind; 7] = [
    LayerKind::Convolution,
    LayerKind::BatchNorm,
    LayerKind::Pooling,
    LayerKind::FullyConnected,
    LayerKind::Activation,
    LayerKind::Elementwise,
    LayerKind::Other,
];

fn random_layer(rng: &mut StdRng, id: LayerId, inputs: Vec<LayerId>) -> LayerNode {
    LayerNode {
        id,
        name: format!("l{id}"),
        kind: KINDS[rng.gen_range(0..KINDS.len())],
        fwd_time_us: rng.gen_range(1..=30),
        bwd_time_us: rng.gen_range(1..=30),
        output_bytes: rng.gen_range(1..=64),
        inputs,
    }
}

/// A chain of `n` layers with random times, sizes, and transfer overrides.
pub fn random_chain(rng: &mut StdRng, n: usize) -> Profile {
    let layers = (0..n)
        .map(|i| random_layer(rng, i, if i == 0 { vec![] } else { vec![i - 1] }))
        .collect();
    finish_profile(rng, layers)
}

/// A two-branch DAG: a source, two parallel chains, and a joining sink.
/// Falls back to a chain when `n < 4`.
pub fn random_two_branch(rng: &mut StdRng, n: usize) -> Profile {
    if n < 4 {
        return random_chain(rng, n);
    }
    let inner = n - 2;
    let left = rng.gen_range(1..inner);
    let mut layers = vec![random_layer(rng, 0, vec![])];
    for i in 1..=left {
        layers.push(random_layer(rng, i, vec![if i == 1 { 0 } else { i - 1 }]));
    }
    for i in left + 1..=inner {
        layers.push(random_layer(
            rng,
            i,
            vec![if i == left + 1 { 0 } else { i - 1 }],
        ));
    }
    layers.push(random_layer(rng, n - 1, vec![left, inner]));
    finish_profile(rng, layers)
}

fn finish_profile(rng: &mut StdRng, layers: Vec<LayerNode>) -> Profile {
    let n = layers.len();
    let profile = Profile {
        layers,
        env: Environment {
            capacity_bytes: 1 << 40,
            d2h_bandwidth: None,
            h2d_bandwidth: None,
            resident_base_bytes: rng.gen_range(1..=8),
        },
        swap_out_time_us: Some((0..n).map(|_| rng.gen_range(1..=40)).collect()),
        swap_in_time_us: Some((0..n).map(|_| rng.gen_range(1..=40)).collect()),
    };
    profile
        .validate()
        .expect("generator produces valid profiles");
    profile
}

/// Random total placement with the sink restricted to keep or swap.
pub fn random_placement(rng: &mut StdRng, profile: &Profile) -> Placement {
    let sink = profile.sink();
    let classes = (0..profile.n())
        .map(|i| {
            let limit = if i == sink { 2 } else { 3 };
            match rng.gen_range(0..limit) {
                0 => PlacementClass::Keep,
                1 => PlacementClass::Swap,
                _ => PlacementClass::Recompute,
            }
        })
        .collect();
    let placement = Placement { classes };
    placement.validate_for(profile).expect("sink restricted");
    placement
}

/// The all-swap eager peak of `profile` with capacity out of the way.
pub fn unconstrained_peak(profile: &Profile) -> u64 {
    let mut roomy = profile.clone();
    roomy.env.capacity_bytes = 1 << 40;
    let (t, m) = simulate(
        &roomy,
        &Placement::all_swap(profile.n()),
        SchedPolicy::Eager,
    );
    assert!(t.is_feasible());
    m.peak_bytes
}

/// Clamps the capacity to exactly the all-swap eager peak: the tightest
/// budget under which the search precondition still holds.
pub fn tighten_to_all_swap_peak(profile: &mut Profile) {
    profile.env.capacity_bytes = unconstrained_peak(profile);
}

/// Clamps the capacity to a random fraction (3/4 ..= 5/4) of the all-swap
/// peak, mixing feasible and infeasible cases.
pub fn tighten_randomly(rng: &mut StdRng, profile: &mut Profile) {
    let peak = unconstrained_peak(profile);
    let lo = (peak * 3 / 4).max(profile.env.resident_base_bytes + 1);
    let hi = (peak * 5 / 4).max(lo);
    profile.env.capacity_bytes = rng.gen_range(lo..=hi);
}

/// Structural invariants of one completed run: per-lane exclusivity, exact
/// durations, makespan, and a balanced memory ledger within capacity.
pub fn assert_run_sound(profile: &Profile, t: &Timeline, m: &MemoryTrace) {
    let mut lanes: std::collections::BTreeMap<u8, Vec<(u64, u64)>> = Default::default();
    for e in &t.events {
        let dur = match e.kind {
            TaskKind::Forward(i) | TaskKind::Recompute { layer: i, .. } => {
                profile.layers[i].fwd_time_us
            }
            TaskKind::Backward(i) => profile.layers[i].bwd_time_us,
            TaskKind::SwapOut(i) => profile.swap_out_time(i),
            TaskKind::SwapIn(i) => profile.swap_in_time(i),
        };
        assert_eq!(e.end_us - e.start_us, dur);
        lanes
            .entry(e.lane as u8)
            .or_default()
            .push((e.start_us, e.end_us));
    }
    for intervals in lanes.values_mut() {
        intervals.sort_unstable();
        for w in intervals.windows(2) {
            assert!(w[0].1 <= w[1].0, "lane overlap");
        }
    }
    assert_eq!(
        t.makespan_us,
        t.events.iter().map(|e| e.end_us).max().unwrap_or(0)
    );
    let base = profile.env.resident_base_bytes;
    let mut running = 0i64;
    let mut peak = base;
    for e in &m.entries {
        running += e.delta_bytes;
        assert!(running >= 0);
        assert_eq!(e.total_bytes, running as u64 + base);
        peak = peak.max(e.total_bytes);
    }
    assert_eq!(m.peak_bytes, peak);
    if t.is_feasible() {
        assert_eq!(running, 0, "allocations must balance on completed runs");
        assert!(m.peak_bytes <= profile.env.capacity_bytes);
        assert_consumed_tensors_resident(profile, t, m);
    }
}

/// Replays the memory ledger against the timeline: every tensor a backward
/// or replay task reads must be resident (allocated, not yet freed) when
/// that task starts.
pub fn assert_consumed_tensors_resident(profile: &Profile, t: &Timeline, m: &MemoryTrace) {
    let n = profile.n();
    // Residency intervals per layer, half-open [alloc, free).
    let mut open: Vec<Option<u64>> = vec![None; n];
    let mut intervals: Vec<Vec<(u64, u64)>> = vec![Vec::new(); n];
    for e in &m.entries {
        if e.delta_bytes >= 0 {
            assert!(
                open[e.layer].is_none(),
                "double allocation of layer {}",
                e.layer
            );
            open[e.layer] = Some(e.time_us);
        } else {
            let start = open[e.layer].take().expect("free without allocation");
            intervals[e.layer].push((start, e.time_us));
        }
    }
    let resident_at =
        |layer: usize, when: u64| intervals[layer].iter().any(|&(a, f)| a <= when && when < f);
    for e in &t.events {
        let reads: Vec<usize> = match e.kind {
            TaskKind::Backward(i) => {
                let mut r = profile.layers[i].inputs.clone();
                r.push(i);
                r
            }
            TaskKind::Forward(i) => profile.layers[i].inputs.clone(),
            TaskKind::Recompute { layer, .. } => profile.layers[layer].inputs.clone(),
            _ => continue,
        };
        for tensor in reads {
            assert!(
                resident_at(tensor, e.start_us),
                "{} started at {} without tensor {} resident",
                e.kind,
                e.start_us,
                tensor
            );
        }
    }
}
