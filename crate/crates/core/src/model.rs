//! Computation-graph, profile, and plan data model.
//!
//! A [`Profile`] is the measured description of one training iteration: the
//! layer DAG with per-layer forward/backward times and output feature-map
//! sizes, plus the execution environment (memory capacity, link bandwidths).
//! A [`Placement`] assigns every layer's output feature map one of the three
//! classes in [`PlacementClass`]. Both are plain value types: once
//! constructed and validated they are never mutated, so they can be shared
//! freely across concurrent search workers.
//!
//! All times are integer microseconds and all sizes integer bytes. Transfer
//! durations derived from bandwidth are rounded up, which keeps every
//! downstream computation bit-deterministic.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

/// Dense layer index. Layer ids are `0..n` in topological order.
pub type LayerId = usize;

/// Layer category recorded by the profiler.
///
/// Informative metadata for most of the toolkit; only the SuperNeurons-style
/// baseline keys its decision on `Convolution` vs everything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LayerKind {
    Convolution,
    BatchNorm,
    Pooling,
    FullyConnected,
    Activation,
    Elementwise,
    Other,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerKind::Convolution => "convolution",
            LayerKind::BatchNorm => "batch_norm",
            LayerKind::Pooling => "pooling",
            LayerKind::FullyConnected => "fully_connected",
            LayerKind::Activation => "activation",
            LayerKind::Elementwise => "elementwise",
            LayerKind::Other => "other",
        };
        f.write_str(s)
    }
}

/// One layer of the profiled network.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerNode {
    /// Dense topological index; must equal the layer's position in the list.
    pub id: LayerId,
    /// Free-form label, e.g. `"res2a_branch2b"`.
    pub name: String,
    pub kind: LayerKind,
    /// Measured forward computation time in microseconds.
    pub fwd_time_us: u64,
    /// Measured backward computation time in microseconds.
    pub bwd_time_us: u64,
    /// Size of this layer's output feature map in bytes.
    pub output_bytes: u64,
    /// Ids of the layers whose output feature maps this layer's forward
    /// consumes. Empty for the source layer (it reads the network input).
    pub inputs: Vec<LayerId>,
}

/// The execution environment a profile was captured on.
///
/// The bandwidths may be omitted when the profile carries explicit per-layer
/// transfer-time overrides.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Environment {
    /// Device memory capacity in bytes.
    pub capacity_bytes: u64,
    /// Device-to-host bandwidth in bytes per second (swap-out direction).
    #[cfg_attr(
        feature = "serde",
        serde(
            rename = "d2h_bw_bytes_per_s",
            default,
            skip_serializing_if = "Option::is_none"
        )
    )]
    pub d2h_bandwidth: Option<u64>,
    /// Host-to-device bandwidth in bytes per second (swap-in direction).
    #[cfg_attr(
        feature = "serde",
        serde(
            rename = "h2d_bw_bytes_per_s",
            default,
            skip_serializing_if = "Option::is_none"
        )
    )]
    pub h2d_bandwidth: Option<u64>,
    /// Constant device memory held for weights, gradients, and workspace
    /// throughout the iteration. Feature maps are tracked on top of this.
    pub resident_base_bytes: u64,
}

/// The profiled description of one training iteration: the layer DAG, the
/// environment, and optional per-layer transfer-time overrides that supersede
/// the bandwidth-derived durations.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Profile {
    pub layers: Vec<LayerNode>,
    pub env: Environment,
    /// Per-layer swap-out durations in microseconds, length `n` when present.
    #[cfg_attr(
        feature = "serde",
        serde(default, skip_serializing_if = "Option::is_none")
    )]
    pub swap_out_time_us: Option<Vec<u64>>,
    /// Per-layer swap-in durations in microseconds, length `n` when present.
    #[cfg_attr(
        feature = "serde",
        serde(default, skip_serializing_if = "Option::is_none")
    )]
    pub swap_in_time_us: Option<Vec<u64>>,
}

/// First violated invariant of a [`Profile`] or [`Placement`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValidationError {
    #[error("profile has no layers")]
    Empty,
    #[error("layer at position {index} has id {id}, expected dense ids 0..n")]
    IdMismatch { index: usize, id: LayerId },
    #[error("layer {layer} input {input} not topological")]
    InputNotTopological { layer: LayerId, input: LayerId },
    #[error("layer {layer} lists input {input} twice")]
    DuplicateInput { layer: LayerId, input: LayerId },
    #[error("layer {layer} field {field} must be > 0")]
    NonPositiveLayerField { layer: LayerId, field: &'static str },
    #[error("environment field {field} must be > 0")]
    NonPositiveEnvField { field: &'static str },
    #[error(
        "resident_base_bytes {resident_base_bytes} must be below capacity_bytes {capacity_bytes}"
    )]
    ResidentBaseTooLarge {
        resident_base_bytes: u64,
        capacity_bytes: u64,
    },
    #[error("expected exactly one source layer (empty inputs), found {0}")]
    SourceCount(usize),
    #[error("expected exactly one sink layer (output unconsumed), found {0}")]
    SinkCount(usize),
    #[error("{which} override has length {got}, expected {expected}")]
    OverrideLength {
        which: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{which} override entry {index} must be > 0")]
    OverrideNonPositive { which: &'static str, index: usize },
    #[error("{which} bandwidth missing and no matching transfer-time override present")]
    MissingBandwidth { which: &'static str },
    #[error("placement has {got} classes, profile has {expected} layers")]
    PlacementLength { expected: usize, got: usize },
    #[error("sink layer {layer} must not be classified recompute")]
    SinkRecompute { layer: LayerId },
}

impl Profile {
    /// Number of layers.
    pub fn n(&self) -> usize {
        self.layers.len()
    }

    /// Checks every structural invariant and reports the first violation.
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.layers.is_empty() {
            return Err(ValidationError::Empty);
        }
        let n = self.layers.len();
        let mut consumed = alloc::vec![false; n];
        for (index, layer) in self.layers.iter().enumerate() {
            if layer.id != index {
                return Err(ValidationError::IdMismatch {
                    index,
                    id: layer.id,
                });
            }
            let mut seen: Vec<LayerId> = Vec::with_capacity(layer.inputs.len());
            for &input in &layer.inputs {
                if input >= layer.id {
                    return Err(ValidationError::InputNotTopological {
                        layer: layer.id,
                        input,
                    });
                }
                if seen.contains(&input) {
                    return Err(ValidationError::DuplicateInput {
                        layer: layer.id,
                        input,
                    });
                }
                seen.push(input);
                consumed[input] = true;
            }
            if layer.fwd_time_us == 0 {
                return Err(ValidationError::NonPositiveLayerField {
                    layer: layer.id,
                    field: "fwd_time_us",
                });
            }
            if layer.bwd_time_us == 0 {
                return Err(ValidationError::NonPositiveLayerField {
                    layer: layer.id,
                    field: "bwd_time_us",
                });
            }
            if layer.output_bytes == 0 {
                return Err(ValidationError::NonPositiveLayerField {
                    layer: layer.id,
                    field: "output_bytes",
                });
            }
        }
        if self.env.capacity_bytes == 0 {
            return Err(ValidationError::NonPositiveEnvField {
                field: "capacity_bytes",
            });
        }
        if self.env.resident_base_bytes == 0 {
            return Err(ValidationError::NonPositiveEnvField {
                field: "resident_base_bytes",
            });
        }
        if self.env.d2h_bandwidth == Some(0) {
            return Err(ValidationError::NonPositiveEnvField {
                field: "d2h_bw_bytes_per_s",
            });
        }
        if self.env.h2d_bandwidth == Some(0) {
            return Err(ValidationError::NonPositiveEnvField {
                field: "h2d_bw_bytes_per_s",
            });
        }
        if self.env.resident_base_bytes >= self.env.capacity_bytes {
            return Err(ValidationError::ResidentBaseTooLarge {
                resident_base_bytes: self.env.resident_base_bytes,
                capacity_bytes: self.env.capacity_bytes,
            });
        }
        let sources = self.layers.iter().filter(|l| l.inputs.is_empty()).count();
        if sources != 1 {
            return Err(ValidationError::SourceCount(sources));
        }
        let sinks = consumed.iter().filter(|&&c| !c).count();
        if sinks != 1 {
            return Err(ValidationError::SinkCount(sinks));
        }
        for (which, list) in [
            ("swap_out_time_us", &self.swap_out_time_us),
            ("swap_in_time_us", &self.swap_in_time_us),
        ] {
            if let Some(list) = list {
                if list.len() != n {
                    return Err(ValidationError::OverrideLength {
                        which,
                        expected: n,
                        got: list.len(),
                    });
                }
                if let Some(index) = list.iter().position(|&t| t == 0) {
                    return Err(ValidationError::OverrideNonPositive { which, index });
                }
            }
        }
        if self.env.d2h_bandwidth.is_none() && self.swap_out_time_us.is_none() {
            return Err(ValidationError::MissingBandwidth { which: "d2h" });
        }
        if self.env.h2d_bandwidth.is_none() && self.swap_in_time_us.is_none() {
            return Err(ValidationError::MissingBandwidth { which: "h2d" });
        }
        Ok(())
    }

    /// Forward consumers of every layer's output, ascending per layer.
    pub fn consumers(&self) -> Vec<Vec<LayerId>> {
        let mut consumers = alloc::vec![Vec::new(); self.layers.len()];
        for layer in &self.layers {
            for &input in &layer.inputs {
                consumers[input].push(layer.id);
            }
        }
        consumers
    }

    /// The unique layer whose output no forward consumes.
    pub fn sink(&self) -> LayerId {
        let consumers = self.consumers();
        self.layers
            .iter()
            .position(|l| consumers[l.id].is_empty())
            .expect("validated profile has a sink")
    }

    /// Swap-out duration of layer `i` in microseconds: the override when
    /// present, otherwise `output_bytes / d2h_bandwidth` rounded up.
    pub fn swap_out_time(&self, i: LayerId) -> u64 {
        match &self.swap_out_time_us {
            Some(list) => list[i],
            None => transfer_us(
                self.layers[i].output_bytes,
                self.env.d2h_bandwidth.expect("validated: d2h bandwidth"),
            ),
        }
    }

    /// Swap-in duration of layer `i` in microseconds (see [`Self::swap_out_time`]).
    pub fn swap_in_time(&self, i: LayerId) -> u64 {
        match &self.swap_in_time_us {
            Some(list) => list[i],
            None => transfer_us(
                self.layers[i].output_bytes,
                self.env.h2d_bandwidth.expect("validated: h2d bandwidth"),
            ),
        }
    }

    /// Sum of all output feature-map sizes.
    pub fn total_output_bytes(&self) -> u64 {
        self.layers.iter().map(|l| l.output_bytes).sum()
    }

    /// Sum of all forward and backward compute times.
    pub fn total_compute_us(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| l.fwd_time_us + l.bwd_time_us)
            .sum()
    }

    /// Scales feature-map sizes, compute times, and transfer overrides by a
    /// rational batch factor. The environment is unchanged. Results are
    /// rounded up, so scaling is exact whenever the denominator divides every
    /// scaled value.
    pub fn scale(&self, factor: Scale) -> Profile {
        let mut scaled = self.clone();
        for layer in &mut scaled.layers {
            layer.fwd_time_us = factor.apply(layer.fwd_time_us);
            layer.bwd_time_us = factor.apply(layer.bwd_time_us);
            layer.output_bytes = factor.apply(layer.output_bytes);
        }
        for list in [&mut scaled.swap_out_time_us, &mut scaled.swap_in_time_us]
            .into_iter()
            .flatten()
        {
            for t in list.iter_mut() {
                *t = factor.apply(*t);
            }
        }
        scaled
    }
}

/// `ceil(bytes * 1e6 / bandwidth)` microseconds; always at least 1.
pub fn transfer_us(bytes: u64, bandwidth_bytes_per_s: u64) -> u64 {
    let num = bytes as u128 * 1_000_000;
    let den = bandwidth_bytes_per_s as u128;
    num.div_ceil(den) as u64
}

/// A positive rational scale factor, e.g. a batch-size multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scale {
    num: u64,
    den: u64,
}

impl Scale {
    pub fn new(num: u64, den: u64) -> Option<Scale> {
        if num == 0 || den == 0 {
            return None;
        }
        let g = gcd(num, den);
        Some(Scale {
            num: num / g,
            den: den / g,
        })
    }

    pub fn integer(num: u64) -> Scale {
        Scale::new(num, 1).expect("nonzero integer scale")
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    /// Composition: `a.compose(b)` scales by `a * b` exactly.
    pub fn compose(&self, other: Scale) -> Scale {
        // Cross-reduce before multiplying to avoid overflow.
        let g1 = gcd(self.num, other.den);
        let g2 = gcd(other.num, self.den);
        Scale::new(
            (self.num / g1) * (other.num / g2),
            (self.den / g2) * (other.den / g1),
        )
        .expect("nonzero components")
    }

    /// `ceil(v * num / den)`, saturating at `u64::MAX`.
    pub fn apply(&self, v: u64) -> u64 {
        let scaled = (v as u128 * self.num as u128).div_ceil(self.den as u128);
        u64::try_from(scaled).unwrap_or(u64::MAX)
    }
}

impl FromStr for Scale {
    type Err = &'static str;

    /// Parses `"4"` or `"3/2"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (num, den) = match s.split_once('/') {
            Some((a, b)) => (
                a.trim().parse().map_err(|_| "invalid numerator")?,
                b.trim().parse().map_err(|_| "invalid denominator")?,
            ),
            None => (s.trim().parse().map_err(|_| "invalid integer")?, 1),
        };
        Scale::new(num, den).ok_or("scale must be positive")
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Placement class of one feature map.
///
/// The derived order (`Keep < Swap < Recompute`) is the tie-breaking order
/// used whenever two placements are otherwise equivalent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PlacementClass {
    /// The feature map stays resident on the device.
    Keep,
    /// Evicted to host memory after its last forward use, prefetched back
    /// before its first backward use.
    Swap,
    /// Discarded after its last forward use, regenerated by replaying forward
    /// computations when backward needs it.
    Recompute,
}

impl fmt::Display for PlacementClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlacementClass::Keep => "keep",
            PlacementClass::Swap => "swap",
            PlacementClass::Recompute => "recompute",
        })
    }
}

/// A total map from layer id to placement class.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Placement {
    pub classes: Vec<PlacementClass>,
}

impl Placement {
    pub fn all_keep(n: usize) -> Placement {
        Placement {
            classes: alloc::vec![PlacementClass::Keep; n],
        }
    }

    pub fn all_swap(n: usize) -> Placement {
        Placement {
            classes: alloc::vec![PlacementClass::Swap; n],
        }
    }

    pub fn class(&self, i: LayerId) -> PlacementClass {
        self.classes[i]
    }

    pub fn set(&mut self, i: LayerId, class: PlacementClass) {
        self.classes[i] = class;
    }

    /// Totality over the profile's layers plus the sink rule: the sink
    /// layer's backward is the first backward, so there is no later point at
    /// which replaying its forward could pay off; it must be keep or swap.
    pub fn validate_for(&self, profile: &Profile) -> Result<(), ValidationError> {
        if self.classes.len() != profile.n() {
            return Err(ValidationError::PlacementLength {
                expected: profile.n(),
                got: self.classes.len(),
            });
        }
        let sink = profile.sink();
        if self.classes[sink] == PlacementClass::Recompute {
            return Err(ValidationError::SinkRecompute { layer: sink });
        }
        Ok(())
    }

    pub fn counts(&self) -> ClassCounts {
        let mut counts = ClassCounts::default();
        for class in &self.classes {
            match class {
                PlacementClass::Keep => counts.keep += 1,
                PlacementClass::Swap => counts.swap += 1,
                PlacementClass::Recompute => counts.recompute += 1,
            }
        }
        counts
    }
}

/// Number of feature maps per class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassCounts {
    pub keep: usize,
    pub swap: usize,
    pub recompute: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.keep + self.swap + self.recompute
    }
}

/// Search effort bookkeeping for a [`PlanReport`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SearchStats {
    /// Number of timeline simulations the search ran.
    pub simulations: u64,
    /// Wall-clock time of the search in microseconds (0 without `std`).
    pub wall_clock_us: u64,
}

/// The optimizer's result: the chosen placement, its predicted cost, and the
/// makespans of the comparison strategies on the same profile. Infeasible
/// strategies (out-of-memory) are omitted from `baseline_makespans_us`.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlanReport {
    pub placement: Placement,
    pub makespan_us: u64,
    pub peak_memory_bytes: u64,
    pub counts: ClassCounts,
    pub baseline_makespans_us: BTreeMap<String, u64>,
    pub search_stats: SearchStats,
}
