//! Two-step placement search with the simulator as its cost evaluator.
//!
//! Step 1 starts from the all-swap baseline, extracts the tensors whose
//! transfers are not hidden by computation, and resolves them to keep or
//! swap: a binary tree enumerates the swap-in stall set while the un-hidden
//! swap-outs are reduced greedily from the output layer. Step 2 walks the
//! remaining swapped tensors and flips one at a time to recompute whenever
//! the replay overhead undercuts the swap overhead, re-simulating before
//! every commit. Both steps only commit a change that keeps the plan
//! feasible and does not increase the predicted makespan, so the chain
//! `pooch ≤ swap-opt ≤ swap-all` holds by construction.
//!
//! Every tie is broken deterministically: candidate plans compare by
//! (makespan, fewer keeps, lexicographically smallest class vector), the
//! step-2 pick by (smallest ratio, larger output, smaller id). With the
//! `parallel` feature, independent evaluations run on a bounded worker pool
//! and are reduced in a fixed order, so the outcome is identical to the
//! sequential run.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::model::{
    LayerId, LayerKind, Placement, PlacementClass, PlanReport, Profile, SearchStats,
    ValidationError,
};
use crate::simulator::{extract_stall_sets, simulate, simulate_with, SchedPolicy, SimOptions};

/// Knobs of the classification search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchConfig {
    /// Maximum number of stall-set members enumerated exhaustively in step 1;
    /// members beyond the cap (ranked by stall time) fall back to the linear
    /// scan. Clamped to 62 so the leaf count fits a shift.
    pub li_cap: usize,
    /// Optional wall-clock limit. When exceeded, the search stops exploring
    /// and returns the best plan found so far; results then depend on machine
    /// speed, so leave unset for reproducible runs. Inert without the `std`
    /// feature.
    pub time_budget: Option<core::time::Duration>,
    /// Maximum concurrent simulations (effective with the `parallel`
    /// feature; 1 means sequential).
    pub parallel_width: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            li_cap: 18,
            time_budget: None,
            parallel_width: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OptimizeError {
    #[error("profile invalid: {0}")]
    Validation(#[from] ValidationError),
    #[error(
        "problem exceeds plannable size: the all-swap baseline runs out of memory \
         at layer {layer} ({requested_bytes} bytes, t={time_us} us)"
    )]
    InfeasibleAllSwap {
        time_us: u64,
        layer: LayerId,
        requested_bytes: u64,
    },
}

/// Swap-vs-recompute overheads of one tensor against the shared idealized
/// baseline (the plan re-simulated with the tensor resident at zero transfer
/// and zero memory cost).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverheadEval {
    pub layer: LayerId,
    pub swap_overhead_us: u64,
    /// `None` when the recompute variant runs out of memory or is forbidden
    /// (ratio = ∞).
    pub recompute_overhead_us: Option<u64>,
}

impl OverheadEval {
    /// `r >= 1`: swapping is at least as good as recomputing.
    pub fn ratio_at_least_one(&self) -> bool {
        match self.recompute_overhead_us {
            None => true,
            Some(rec) => self.swap_overhead_us == 0 || rec >= self.swap_overhead_us,
        }
    }

    /// The ratio as a float, for display; decisions use exact integers.
    pub fn ratio_f64(&self) -> f64 {
        match (self.recompute_overhead_us, self.swap_overhead_us) {
            (Some(rec), swap) if swap > 0 => rec as f64 / swap as f64,
            _ => f64::INFINITY,
        }
    }

    /// Exact `rec_a/swap_a < rec_b/swap_b`; `None` ratios are infinite.
    fn ratio_less_than(&self, other: &OverheadEval) -> bool {
        match (self.recompute_overhead_us, other.recompute_overhead_us) {
            (Some(ra), Some(rb)) => {
                (ra as u128) * (other.swap_overhead_us as u128)
                    < (rb as u128) * (self.swap_overhead_us as u128)
            }
            (Some(_), None) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum OverheadError {
    #[error("layer {0} is not classified swap in this placement")]
    NotSwap(LayerId),
    #[error("placement is infeasible, overheads are undefined")]
    InfeasiblePlacement,
}

/// One line of the search's decision log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecisionEntry {
    Step1Sets {
        l_o: Vec<LayerId>,
        l_i: Vec<LayerId>,
        tree: Vec<LayerId>,
        scan: Vec<LayerId>,
    },
    Step1Result {
        makespan_us: u64,
        keeps: Vec<LayerId>,
    },
    /// Overheads are re-evaluated against the current plan every round and
    /// the `r >= 1` removal re-applied, so ratios never go stale.
    Step2Policy,
    /// `r >= 1` (or the flip is forbidden): the tensor stays swapped.
    Step2Fix {
        round: u32,
        layer: LayerId,
        swap_overhead_us: u64,
        recompute_overhead_us: Option<u64>,
    },
    Step2Commit {
        round: u32,
        layer: LayerId,
        swap_overhead_us: u64,
        recompute_overhead_us: u64,
        makespan_before_us: u64,
        makespan_after_us: u64,
    },
    /// The commit re-check failed; the tensor stays swapped.
    Step2Reject {
        round: u32,
        layer: LayerId,
        swap_overhead_us: u64,
        recompute_overhead_us: u64,
        makespan_before_us: u64,
        makespan_candidate_us: u64,
    },
}

struct Ratio {
    swap: u64,
    rec: Option<u64>,
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.rec, self.swap) {
            (Some(rec), swap) if swap > 0 => write!(f, "{:.4}", rec as f64 / swap as f64),
            _ => f.write_str("inf"),
        }
    }
}

impl fmt::Display for DecisionEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecisionEntry::Step1Sets {
                l_o,
                l_i,
                tree,
                scan,
            } => {
                write!(
                    f,
                    "step1 l_o={l_o:?} l_i={l_i:?} tree={tree:?} scan={scan:?}"
                )
            }
            DecisionEntry::Step1Result { makespan_us, keeps } => {
                write!(f, "step1 result makespan_us={makespan_us} keeps={keeps:?}")
            }
            DecisionEntry::Step2Policy => f.write_str(
                "step2 policy: overheads re-evaluated each round, r>=1 removals re-applied",
            ),
            DecisionEntry::Step2Fix {
                round,
                layer,
                swap_overhead_us,
                recompute_overhead_us,
            } => {
                let rec = match recompute_overhead_us {
                    Some(v) => alloc::format!("{v}"),
                    None => String::from("inf"),
                };
                write!(
                    f,
                    "step2 round={round} layer={layer} swap_overhead_us={swap_overhead_us} \
                     recompute_overhead_us={rec} r={} action=fix_swap",
                    Ratio {
                        swap: *swap_overhead_us,
                        rec: *recompute_overhead_us
                    },
                )
            }
            DecisionEntry::Step2Commit {
                round,
                layer,
                swap_overhead_us,
                recompute_overhead_us,
                makespan_before_us,
                makespan_after_us,
            } => write!(
                f,
                "step2 round={round} layer={layer} swap_overhead_us={swap_overhead_us} \
                 recompute_overhead_us={recompute_overhead_us} r={} \
                 makespan_before_us={makespan_before_us} makespan_after_us={makespan_after_us} \
                 action=recompute",
                Ratio {
                    swap: *swap_overhead_us,
                    rec: Some(*recompute_overhead_us)
                },
            ),
            DecisionEntry::Step2Reject {
                round,
                layer,
                swap_overhead_us,
                recompute_overhead_us,
                makespan_before_us,
                makespan_candidate_us,
            } => write!(
                f,
                "step2 round={round} layer={layer} swap_overhead_us={swap_overhead_us} \
                 recompute_overhead_us={recompute_overhead_us} r={} \
                 makespan_before_us={makespan_before_us} \
                 makespan_candidate_us={makespan_candidate_us} action=reject_swap",
                Ratio {
                    swap: *swap_overhead_us,
                    rec: Some(*recompute_overhead_us)
                },
            ),
        }
    }
}

/// Bookkeeping of step 1 for bound checks and debugging.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step1Summary {
    pub l_o: Vec<LayerId>,
    pub l_i: Vec<LayerId>,
    pub tree: Vec<LayerId>,
    pub scan: Vec<LayerId>,
    pub all_swap_eager_makespan_us: u64,
    pub makespan_us: u64,
    /// Leaf and scan simulations (the all-swap baseline is not included).
    pub simulations: u64,
}

/// Bookkeeping of step 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step2Summary {
    /// Size of the swap set handed over by step 1.
    pub initial_swap_count: usize,
    pub makespan_us: u64,
    pub simulations: u64,
}

/// Everything [`optimize`] produces: the report plus the decision log and
/// per-step summaries (absent when the profile fits in-core and no search
/// ran).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchOutcome {
    pub report: PlanReport,
    pub decisions: Vec<DecisionEntry>,
    pub step1: Option<Step1Summary>,
    pub step2: Option<Step2Summary>,
}

impl SearchOutcome {
    /// The decision log as line-oriented text.
    pub fn decision_log(&self) -> String {
        use fmt::Write;
        let mut out = String::new();
        for entry in &self.decisions {
            let _ = writeln!(out, "{entry}");
        }
        out
    }
}

/// Comparison strategies reported next to the searched plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    InCore,
    SwapAllNaive,
    SwapAllEager,
    SwapOpt,
    SuperNeurons,
    Pooch,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::InCore,
        Strategy::SwapAllNaive,
        Strategy::SwapAllEager,
        Strategy::SwapOpt,
        Strategy::SuperNeurons,
        Strategy::Pooch,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::InCore => "in-core",
            Strategy::SwapAllNaive => "swap-all-naive",
            Strategy::SwapAllEager => "swap-all-eager",
            Strategy::SwapOpt => "swap-opt",
            Strategy::SuperNeurons => "superneurons",
            Strategy::Pooch => "pooch",
        }
    }

    /// Accepts the canonical names plus the `swap-all` shorthand for the
    /// eager variant.
    pub fn parse(s: &str) -> Option<Strategy> {
        Some(match s {
            "in-core" | "incore" => Strategy::InCore,
            "swap-all-naive" => Strategy::SwapAllNaive,
            "swap-all" | "swap-all-eager" => Strategy::SwapAllEager,
            "swap-opt" => Strategy::SwapOpt,
            "superneurons" => Strategy::SuperNeurons,
            "pooch" => Strategy::Pooch,
            _ => return None,
        })
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One strategy fully evaluated on a profile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyEval {
    pub strategy: Strategy,
    pub placement: Placement,
    pub sched: SchedPolicy,
    pub feasible: bool,
    /// Partial-run values when `feasible` is false.
    pub makespan_us: u64,
    pub peak_bytes: u64,
}

// ─────────────────────────── evaluation context ───────────────────────────

#[derive(Debug, Clone, Copy)]
struct SimResult {
    feasible: bool,
    makespan_us: u64,
    peak_bytes: u64,
}

struct Evaluator<'a> {
    profile: &'a Profile,
    simulations: AtomicU64,
}

impl<'a> Evaluator<'a> {
    fn new(profile: &'a Profile) -> Self {
        Evaluator {
            profile,
            simulations: AtomicU64::new(0),
        }
    }

    fn run(&self, placement: &Placement, sched: SchedPolicy) -> SimResult {
        self.simulations.fetch_add(1, Ordering::Relaxed);
        let (timeline, trace) = simulate(self.profile, placement, sched);
        SimResult {
            feasible: timeline.is_feasible(),
            makespan_us: timeline.makespan_us,
            peak_bytes: trace.peak_bytes,
        }
    }

    /// The idealized lower-bound run: `layer` resident at zero transfer and
    /// zero memory cost.
    fn run_idealized(&self, placement: &Placement, layer: LayerId) -> SimResult {
        self.simulations.fetch_add(1, Ordering::Relaxed);
        let (timeline, trace) = simulate_with(
            self.profile,
            placement,
            SchedPolicy::Eager,
            &SimOptions {
                idealized: Some(layer),
            },
        );
        SimResult {
            feasible: timeline.is_feasible(),
            makespan_us: timeline.makespan_us,
            peak_bytes: trace.peak_bytes,
        }
    }

    fn count(&self) -> u64 {
        self.simulations.load(Ordering::Relaxed)
    }
}

/// Wall-clock deadline; inert without `std`.
struct Deadline {
    #[cfg(feature = "std")]
    at: Option<std::time::Instant>,
}

impl Deadline {
    fn new(budget: Option<core::time::Duration>) -> Deadline {
        #[cfg(feature = "std")]
        {
            Deadline {
                at: budget.map(|b| std::time::Instant::now() + b),
            }
        }
        #[cfg(not(feature = "std"))]
        {
            let _ = budget;
            Deadline {}
        }
    }

    fn exceeded(&self) -> bool {
        #[cfg(feature = "std")]
        {
            self.at.is_some_and(|at| std::time::Instant::now() >= at)
        }
        #[cfg(not(feature = "std"))]
        {
            false
        }
    }
}

/// Bounded worker pool; sequential unless the `parallel` feature is enabled
/// and the width exceeds 1. Results always come back in input order.
struct Workers {
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl Workers {
    fn new(width: usize) -> Workers {
        #[cfg(feature = "parallel")]
        {
            let pool = (width > 1)
                .then(|| {
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(width)
                        .build()
                        .ok()
                })
                .flatten();
            Workers { pool }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = width;
            Workers {}
        }
    }

    fn map_range<T, F>(&self, count: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| (0..count).into_par_iter().map(&f).collect());
        }
        (0..count).map(f).collect()
    }

    fn map_slice<'x, X, T, F>(&self, xs: &'x [X], f: F) -> Vec<T>
    where
        X: Sync,
        T: Send,
        F: Fn(&'x X) -> T + Sync,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| xs.par_iter().map(&f).collect());
        }
        xs.iter().map(f).collect()
    }
}

// ─────────────────────────────── public ops ───────────────────────────────

/// Step 1: resolve every feature map to keep or swap.
///
/// Requires the all-swap placement to be feasible under eager scheduling.
/// The result is feasible and its makespan never exceeds the all-swap eager
/// makespan.
pub fn step1_keep_swap(profile: &Profile, cfg: &SearchConfig) -> Result<Placement, OptimizeError> {
    let ev = Evaluator::new(profile);
    let workers = Workers::new(cfg.parallel_width);
    let deadline = Deadline::new(cfg.time_budget);
    let (outcome, _) = run_step1(&ev, &workers, &deadline, cfg)?;
    Ok(outcome.placement)
}

/// Step 2: re-classify swapped maps to recompute where the replay overhead
/// undercuts the swap overhead. Degenerates to the identity when the
/// placement swaps nothing (or is not a feasible starting point).
pub fn step2_recompute(profile: &Profile, placement: &Placement, cfg: &SearchConfig) -> Placement {
    let ev = Evaluator::new(profile);
    let workers = Workers::new(cfg.parallel_width);
    let deadline = Deadline::new(cfg.time_budget);
    let start = ev.run(placement, SchedPolicy::Eager);
    if !start.feasible {
        return placement.clone();
    }
    let (placement, _) = run_step2(
        &ev,
        &workers,
        &deadline,
        placement.clone(),
        start.makespan_us,
    );
    placement
}

/// Overheads of swapping layer `x` under `placement`, both measured against
/// the idealized run with `x` resident for free.
pub fn overhead_of(
    profile: &Profile,
    placement: &Placement,
    x: LayerId,
) -> Result<OverheadEval, OverheadError> {
    if placement.class(x) != PlacementClass::Swap {
        return Err(OverheadError::NotSwap(x));
    }
    let ev = Evaluator::new(profile);
    let current = ev.run(placement, SchedPolicy::Eager);
    if !current.feasible {
        return Err(OverheadError::InfeasiblePlacement);
    }
    if x == profile.sink() {
        // The sink's output can never be recomputed.
        let baseline = ev.run_idealized(placement, x);
        return Ok(OverheadEval {
            layer: x,
            swap_overhead_us: current.makespan_us.saturating_sub(baseline.makespan_us),
            recompute_overhead_us: None,
        });
    }
    Ok(evaluate_overhead(&ev, placement, current.makespan_us, x).0)
}

/// The SuperNeurons-style static classification: keep greedily from the
/// output layer while capacity allows, swap the remaining convolution
/// outputs, recompute everything else. Swap-ins are scheduled with the
/// convolution-anchored naive policy, so the placement is returned together
/// with its scheduling tag.
pub fn superneurons_plan(profile: &Profile) -> (Placement, SchedPolicy) {
    let n = profile.n();
    let budget = profile.env.capacity_bytes - profile.env.resident_base_bytes;
    let mut placement = Placement::all_keep(n);
    let mut kept = 0u64;
    let mut first_unkept = None;
    for i in (0..n).rev() {
        let bytes = profile.layers[i].output_bytes;
        if kept + bytes <= budget {
            kept += bytes;
        } else {
            first_unkept = Some(i);
            break;
        }
    }
    if let Some(stop) = first_unkept {
        let sink = profile.sink();
        for i in 0..=stop {
            if profile.layers[i].kind == LayerKind::Convolution || i == sink {
                placement.set(i, PlacementClass::Swap);
            } else {
                placement.set(i, PlacementClass::Recompute);
            }
        }
    }
    (placement, SchedPolicy::NaiveConvAnchored)
}

/// Evaluates one comparison strategy end to end.
pub fn evaluate_strategy(
    profile: &Profile,
    strategy: Strategy,
    cfg: &SearchConfig,
) -> Result<StrategyEval, OptimizeError> {
    profile.validate()?;
    let n = profile.n();
    let (placement, sched) = match strategy {
        Strategy::InCore => (Placement::all_keep(n), SchedPolicy::Eager),
        Strategy::SwapAllNaive => (Placement::all_swap(n), SchedPolicy::Naive),
        Strategy::SwapAllEager => (Placement::all_swap(n), SchedPolicy::Eager),
        Strategy::SwapOpt => (step1_keep_swap(profile, cfg)?, SchedPolicy::Eager),
        Strategy::SuperNeurons => superneurons_plan(profile),
        Strategy::Pooch => (optimize(profile, cfg)?.report.placement, SchedPolicy::Eager),
    };
    let (timeline, trace) = simulate(profile, &placement, sched);
    Ok(StrategyEval {
        strategy,
        placement,
        sched,
        feasible: timeline.is_feasible(),
        makespan_us: timeline.makespan_us,
        peak_bytes: trace.peak_bytes,
    })
}

/// Full optimization: in-core short-circuit, step 1, step 2, baselines.
pub fn optimize(profile: &Profile, cfg: &SearchConfig) -> Result<SearchOutcome, OptimizeError> {
    profile.validate()?;
    #[cfg(feature = "std")]
    let wall_start = std::time::Instant::now();
    let ev = Evaluator::new(profile);
    let workers = Workers::new(cfg.parallel_width);
    let deadline = Deadline::new(cfg.time_budget);
    let n = profile.n();
    let mut baselines = BTreeMap::<String, u64>::new();

    // In-core short-circuit: with every map kept, the peak is exactly the
    // sum of all outputs plus the resident base.
    let in_core_feasible = profile.total_output_bytes() + profile.env.resident_base_bytes
        <= profile.env.capacity_bytes;

    let (placement, decisions, step1, mut step2) = if in_core_feasible {
        (Placement::all_keep(n), Vec::new(), None, None)
    } else {
        let (s1, mut decisions) = run_step1(&ev, &workers, &deadline, cfg)?;
        baselines.insert(
            String::from(Strategy::SwapAllEager.name()),
            s1.all_swap_makespan_us,
        );
        baselines.insert(String::from(Strategy::SwapOpt.name()), s1.makespan_us);
        let initial_swap_count = s1.placement.counts().swap;
        let before_step2 = ev.count();
        let (final_placement, mut step2_log) = run_step2(
            &ev,
            &workers,
            &deadline,
            s1.placement.clone(),
            s1.makespan_us,
        );
        decisions.append(&mut step2_log);
        let step2 = Step2Summary {
            initial_swap_count,
            makespan_us: 0, // patched below from the final run
            simulations: ev.count() - before_step2,
        };
        let step1 = Step1Summary {
            l_o: s1.l_o.iter().copied().collect(),
            l_i: s1.l_i.iter().copied().collect(),
            tree: s1.tree,
            scan: s1.scan,
            all_swap_eager_makespan_us: s1.all_swap_makespan_us,
            makespan_us: s1.makespan_us,
            simulations: s1.simulations,
        };
        (final_placement, decisions, Some(step1), Some(step2))
    };

    // Final run of the chosen plan; also the "pooch" baseline row.
    let final_run = ev.run(&placement, SchedPolicy::Eager);
    debug_assert!(final_run.feasible);
    if let Some(s) = step2.as_mut() {
        s.makespan_us = final_run.makespan_us;
    }
    baselines.insert(String::from(Strategy::Pooch.name()), final_run.makespan_us);

    // Comparison strategies.
    if in_core_feasible {
        baselines.insert(String::from(Strategy::InCore.name()), final_run.makespan_us);
        let eager_run = ev.run(&Placement::all_swap(n), SchedPolicy::Eager);
        insert_if_feasible(&mut baselines, Strategy::SwapAllEager, &eager_run);
    } else {
        let in_core_run = ev.run(&Placement::all_keep(n), SchedPolicy::Eager);
        insert_if_feasible(&mut baselines, Strategy::InCore, &in_core_run);
    }
    let naive_run = ev.run(&Placement::all_swap(n), SchedPolicy::Naive);
    insert_if_feasible(&mut baselines, Strategy::SwapAllNaive, &naive_run);
    let (sn_placement, sn_sched) = superneurons_plan(profile);
    let sn_run = ev.run(&sn_placement, sn_sched);
    insert_if_feasible(&mut baselines, Strategy::SuperNeurons, &sn_run);

    #[cfg(feature = "std")]
    let wall_clock_us = wall_start.elapsed().as_micros() as u64;
    #[cfg(not(feature = "std"))]
    let wall_clock_us = 0;

    let counts = placement.counts();
    debug_assert_eq!(counts.total(), n);
    Ok(SearchOutcome {
        report: PlanReport {
            placement,
            makespan_us: final_run.makespan_us,
            peak_memory_bytes: final_run.peak_bytes,
            counts,
            baseline_makespans_us: baselines,
            search_stats: SearchStats {
                simulations: ev.count(),
                wall_clock_us,
            },
        },
        decisions,
        step1,
        step2,
    })
}

fn insert_if_feasible(map: &mut BTreeMap<String, u64>, strategy: Strategy, run: &SimResult) {
    if run.feasible {
        map.insert(String::from(strategy.name()), run.makespan_us);
    }
}

// ─────────────────────────────── step 1 ───────────────────────────────────

struct Step1Outcome {
    placement: Placement,
    makespan_us: u64,
    all_swap_makespan_us: u64,
    l_o: BTreeSet<LayerId>,
    l_i: BTreeSet<LayerId>,
    tree: Vec<LayerId>,
    scan: Vec<LayerId>,
    simulations: u64,
}

fn run_step1(
    ev: &Evaluator<'_>,
    workers: &Workers,
    deadline: &Deadline,
    cfg: &SearchConfig,
) -> Result<(Step1Outcome, Vec<DecisionEntry>), OptimizeError> {
    let profile = ev.profile;
    let n = profile.n();
    let all_swap = Placement::all_swap(n);
    ev.simulations.fetch_add(1, Ordering::Relaxed);
    let (timeline, _) = simulate(profile, &all_swap, SchedPolicy::Eager);
    if let Some(oom) = timeline.oom {
        return Err(OptimizeError::InfeasibleAllSwap {
            time_us: oom.time_us,
            layer: oom.layer,
            requested_bytes: oom.requested_bytes,
        });
    }
    let all_swap_makespan_us = timeline.makespan_us;
    let (l_o, l_i) = extract_stall_sets(&timeline, profile).expect("all-swap eager, no oom");

    // Tree members: the swap-in stall set, capped by stall magnitude.
    let cap = cfg.li_cap.min(62);
    let mut tree: Vec<LayerId> = l_i.iter().copied().collect();
    let mut overflow: Vec<LayerId> = Vec::new();
    if tree.len() > cap {
        tree.sort_unstable_by_key(|&i| {
            (
                core::cmp::Reverse(timeline.stalls.get(&i).copied().unwrap_or(0)),
                i,
            )
        });
        overflow = tree.split_off(cap);
        tree.sort_unstable();
        overflow.sort_unstable();
    }
    // Scan set: un-hidden swap-outs outside the tree plus the overflow,
    // reduced in order from the output layer.
    let mut scan: Vec<LayerId> = l_o.difference(&l_i).copied().collect();
    scan.extend(overflow.iter().copied());
    scan.sort_unstable_by(|a, b| b.cmp(a));

    let sims_before = ev.count();
    let leaves: u64 = 1u64 << tree.len();
    let leaf_results = workers.map_range(leaves, |mask| {
        if deadline.exceeded() && mask != 0 {
            return None;
        }
        let mut plan = all_swap.clone();
        for (bit, &layer) in tree.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                plan.set(layer, PlacementClass::Keep);
            }
        }
        let base = ev.run(&plan, SchedPolicy::Eager);
        if !base.feasible {
            return None;
        }
        let mut best_ms = base.makespan_us;
        for &x in &scan {
            let mut candidate = plan.clone();
            candidate.set(x, PlacementClass::Keep);
            let run = ev.run(&candidate, SchedPolicy::Eager);
            if run.feasible && run.makespan_us <= best_ms {
                plan = candidate;
                best_ms = run.makespan_us;
            }
        }
        Some((best_ms, plan))
    });

    let mut best: Option<(u64, usize, Placement)> = None;
    for (ms, plan) in leaf_results.into_iter().flatten() {
        let keeps = plan.counts().keep;
        let better = match &best {
            None => true,
            Some((bms, bkeeps, bplan)) => (ms, keeps, &plan) < (*bms, *bkeeps, bplan),
        };
        if better {
            best = Some((ms, keeps, plan));
        }
    }
    let (makespan_us, _, placement) = best.expect("the all-swap leaf is always feasible");
    debug_assert!(makespan_us <= all_swap_makespan_us);

    let decisions = alloc::vec![
        DecisionEntry::Step1Sets {
            l_o: l_o.iter().copied().collect(),
            l_i: l_i.iter().copied().collect(),
            tree: tree.clone(),
            scan: scan.clone(),
        },
        DecisionEntry::Step1Result {
            makespan_us,
            keeps: (0..n)
                .filter(|&i| placement.class(i) == PlacementClass::Keep)
                .collect(),
        },
    ];
    Ok((
        Step1Outcome {
            placement,
            makespan_us,
            all_swap_makespan_us,
            l_o,
            l_i,
            tree,
            scan,
            simulations: ev.count() - sims_before,
        },
        decisions,
    ))
}

// ─────────────────────────────── step 2 ───────────────────────────────────

/// The overhead evaluation of `x` plus the already-simulated recompute
/// candidate, reused for the commit check.
fn evaluate_overhead(
    ev: &Evaluator<'_>,
    placement: &Placement,
    current_makespan_us: u64,
    x: LayerId,
) -> (OverheadEval, SimResult) {
    let baseline = ev.run_idealized(placement, x);
    // Idealizing a tensor only relaxes the run; a failure here would leave a
    // partial makespan, which still degrades into conservative overheads.
    let baseline_ms = if baseline.feasible {
        baseline.makespan_us
    } else {
        0
    };
    let mut candidate_plan = placement.clone();
    candidate_plan.set(x, PlacementClass::Recompute);
    let candidate = ev.run(&candidate_plan, SchedPolicy::Eager);
    let eval = OverheadEval {
        layer: x,
        swap_overhead_us: current_makespan_us.saturating_sub(baseline_ms),
        recompute_overhead_us: candidate
            .feasible
            .then(|| candidate.makespan_us.saturating_sub(baseline_ms)),
    };
    (eval, candidate)
}

fn run_step2(
    ev: &Evaluator<'_>,
    workers: &Workers,
    deadline: &Deadline,
    start: Placement,
    start_makespan_us: u64,
) -> (Placement, Vec<DecisionEntry>) {
    let profile = ev.profile;
    let sink = profile.sink();
    let mut log = alloc::vec![DecisionEntry::Step2Policy];
    let mut current = start;
    let mut current_ms = start_makespan_us;
    let mut pool: Vec<LayerId> = (0..profile.n())
        .filter(|&i| current.class(i) == PlacementClass::Swap)
        .collect();
    // The sink's backward is the first: there is no later point at which
    // replaying its forward could pay off, so its ratio is infinite.
    if let Some(pos) = pool.iter().position(|&i| i == sink) {
        pool.remove(pos);
        log.push(DecisionEntry::Step2Fix {
            round: 0,
            layer: sink,
            swap_overhead_us: 0,
            recompute_overhead_us: None,
        });
    }
    let mut round: u32 = 0;

    while !pool.is_empty() {
        round += 1;
        if deadline.exceeded() {
            break;
        }
        let evals: Vec<(OverheadEval, SimResult)> =
            workers.map_slice(&pool, |&x| evaluate_overhead(ev, &current, current_ms, x));

        // Remove everything with r >= 1, fixing those tensors as swap.
        let mut remaining: Vec<(LayerId, OverheadEval, SimResult)> = Vec::new();
        for (&x, (eval, candidate)) in pool.iter().zip(evals) {
            if eval.ratio_at_least_one() {
                log.push(DecisionEntry::Step2Fix {
                    round,
                    layer: x,
                    swap_overhead_us: eval.swap_overhead_us,
                    recompute_overhead_us: eval.recompute_overhead_us,
                });
            } else {
                remaining.push((x, eval, candidate));
            }
        }
        if remaining.is_empty() {
            break;
        }

        // Pick the smallest ratio; ties prefer the larger tensor, then the
        // smaller id.
        let mut pick = 0usize;
        for k in 1..remaining.len() {
            let (xa, ea, _) = &remaining[pick];
            let (xb, eb, _) = &remaining[k];
            if eb.ratio_less_than(ea) {
                pick = k;
            } else if !ea.ratio_less_than(eb) {
                let (ba, bb) = (
                    profile.layers[*xa].output_bytes,
                    profile.layers[*xb].output_bytes,
                );
                if bb > ba || (bb == ba && xb < xa) {
                    pick = k;
                }
            }
        }
        let (x, eval, candidate) = remaining.remove(pick);
        let rec = eval.recompute_overhead_us.expect("finite ratio below one");
        // The candidate was simulated against the exact plan being
        // committed, so this re-validates feasibility and monotonicity.
        if candidate.feasible && candidate.makespan_us <= current_ms {
            log.push(DecisionEntry::Step2Commit {
                round,
                layer: x,
                swap_overhead_us: eval.swap_overhead_us,
                recompute_overhead_us: rec,
                makespan_before_us: current_ms,
                makespan_after_us: candidate.makespan_us,
            });
            current.set(x, PlacementClass::Recompute);
            current_ms = candidate.makespan_us;
        } else {
            log.push(DecisionEntry::Step2Reject {
                round,
                layer: x,
                swap_overhead_us: eval.swap_overhead_us,
                recompute_overhead_us: rec,
                makespan_before_us: current_ms,
                makespan_candidate_us: candidate.makespan_us,
            });
        }
        let still_open: BTreeSet<LayerId> = remaining.iter().map(|(l, _, _)| *l).collect();
        pool.retain(|i| still_open.contains(i));
    }
    (current, log)
}
