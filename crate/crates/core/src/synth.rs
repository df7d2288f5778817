//! Synthetic profile generators.
//!
//! The generators reproduce workload *shapes*: plain chains, ResNet-like
//! block graphs whose interleaved normalization layers move more bytes than
//! they compute, AlexNet-like chains whose compute dominates every transfer,
//! and 3D-ResNext-like block graphs that are both huge and compute-heavy.
//! Per-layer times carry a deterministic ±10% jitter derived from the seed.
//! No fidelity to real kernel times is claimed; only the qualitative ratios
//! matter, and they hold for every seed by construction.
//!
//! Bytes and times are generated at batch 1 and scaled linearly through
//! [`Profile::scale`], so doubling `batch` doubles every feature map.

use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Environment, LayerKind, LayerNode, Profile, Scale, ValidationError};

/// Canonical execution environments.
///
/// Both presets model a 16 GiB device with a 1 GiB resident base; they
/// differ only in link bandwidth (16 GB/s PCIe-class vs 75 GB/s NVLink-class,
/// symmetric in both directions).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EnvPreset {
    PcieX86,
    NvlinkPower9,
    Custom(Environment),
}

pub const GIB: u64 = 1 << 30;

impl EnvPreset {
    pub fn environment(&self) -> Environment {
        match self {
            EnvPreset::PcieX86 => Environment {
                capacity_bytes: 16 * GIB,
                d2h_bandwidth: Some(16_000_000_000),
                h2d_bandwidth: Some(16_000_000_000),
                resident_base_bytes: GIB,
            },
            EnvPreset::NvlinkPower9 => Environment {
                capacity_bytes: 16 * GIB,
                d2h_bandwidth: Some(75_000_000_000),
                h2d_bandwidth: Some(75_000_000_000),
                resident_base_bytes: GIB,
            },
            EnvPreset::Custom(env) => env.clone(),
        }
    }
}

/// Graph family to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// Plain chain of `size` layers with mixed compute weight.
    Chain,
    /// Block graph with skip connections; `size` counts blocks of five
    /// layers spread over four stages with halving feature-map sizes.
    ResnetLike,
    /// Compute-heavy chain of `size` layers.
    AlexnetLike,
    /// ResNet-like topology at 3D-data scale: tens of gigabytes of feature
    /// maps at batch 1, compute-heavy throughout.
    Resnext3dLike,
}

/// Deterministic generator specification: identical fields produce an
/// identical profile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenSpec {
    pub shape: Shape,
    /// Layer count for chains, block count for block graphs.
    pub size: usize,
    /// Linear batch multiplier applied to sizes and times.
    pub batch: u64,
    /// Seed of the ±10% per-layer time jitter.
    pub seed: u64,
    pub env: EnvPreset,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynthError {
    #[error("size must be at least 1")]
    EmptySize,
    #[error("batch must be at least 1")]
    EmptyBatch,
    #[error("generated profile failed validation: {0}")]
    Invalid(#[from] ValidationError),
}

/// Generates the profile described by `spec`.
pub fn generate(spec: &GenSpec) -> Result<Profile, SynthError> {
    if spec.size == 0 {
        return Err(SynthError::EmptySize);
    }
    if spec.batch == 0 {
        return Err(SynthError::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let layers = match spec.shape {
        Shape::Chain => chain_layers(spec.size, &mut rng),
        Shape::ResnetLike => block_layers(spec.size, &mut rng, &BLOCK_RESNET),
        Shape::AlexnetLike => alexnet_layers(spec.size, &mut rng),
        Shape::Resnext3dLike => block_layers(spec.size, &mut rng, &BLOCK_RESNEXT3D),
    };
    let profile = Profile {
        layers,
        env: spec.env.environment(),
        swap_out_time_us: None,
        swap_in_time_us: None,
    }
    .scale(Scale::integer(spec.batch));
    profile.validate()?;
    Ok(profile)
}

/// Per-layer jitter factor in percent, 90..=110.
fn jitter(rng: &mut ChaCha8Rng) -> u64 {
    90 + rng.next_u64() % 21
}

/// `ceil(bytes * jitter% / divisor)`, at least 1. The divisor is the modeled
/// compute speed in bytes produced per microsecond.
fn time_us(bytes: u64, divisor: u64, jitter_pct: u64) -> u64 {
    let num = bytes as u128 * jitter_pct as u128;
    let den = divisor as u128 * 100;
    (num.div_ceil(den) as u64).max(1)
}

struct BlockParams {
    /// Stage feature-map bytes at batch 1, halving per stage.
    stage_bytes: [u64; 4],
    /// Compute divisor of convolution layers (smaller = slower layer).
    conv_div: u64,
    /// Compute divisor of normalization/elementwise/pooling layers.
    light_div: u64,
    head_pool_bytes: u64,
    head_fc_bytes: u64,
}

/// ResNet-like: every layer produces bytes faster than the slow link moves
/// them and slower than the fast one, so the 16 GB/s preset hides almost
/// nothing while the 75 GB/s preset hides almost everything. Convolutions
/// still compute more per byte than the interleaved normalization and
/// elementwise layers, which is what makes their replays expensive.
const BLOCK_RESNET: BlockParams = BlockParams {
    stage_bytes: [2_400_000, 1_200_000, 600_000, 300_000],
    conv_div: 45_000,
    light_div: 65_000,
    head_pool_bytes: 8_192,
    head_fc_bytes: 4_000,
};

/// 3D-ResNext-like: roughly 50 GB of feature maps at batch 1, and even the
/// light layers compute slower than the slow link transfers.
const BLOCK_RESNEXT3D: BlockParams = BlockParams {
    stage_bytes: [500_000_000, 250_000_000, 125_000_000, 62_500_000],
    conv_div: 4_000,
    light_div: 12_000,
    head_pool_bytes: 400_000,
    head_fc_bytes: 40_000,
};

fn node(
    id: usize,
    name: String,
    kind: LayerKind,
    bytes: u64,
    divisor: u64,
    inputs: Vec<usize>,
    rng: &mut ChaCha8Rng,
) -> LayerNode {
    let fwd = time_us(bytes, divisor, jitter(rng));
    LayerNode {
        id,
        name,
        kind,
        fwd_time_us: fwd,
        bwd_time_us: 2 * fwd,
        output_bytes: bytes,
        inputs,
    }
}

fn block_layers(blocks: usize, rng: &mut ChaCha8Rng, p: &BlockParams) -> Vec<LayerNode> {
    let mut layers: Vec<LayerNode> = Vec::with_capacity(3 + 5 * blocks + 2);
    let s0 = p.stage_bytes[0];
    let push = |layers: &mut Vec<LayerNode>,
                name: String,
                kind: LayerKind,
                bytes: u64,
                divisor: u64,
                inputs: Vec<usize>,
                rng: &mut ChaCha8Rng| {
        let id = layers.len();
        layers.push(node(id, name, kind, bytes, divisor, inputs, rng));
        id
    };
    // Stem.
    let stem_conv = push(
        &mut layers,
        String::from("stem_conv"),
        LayerKind::Convolution,
        s0,
        p.conv_div,
        alloc::vec![],
        rng,
    );
    let stem_bn = push(
        &mut layers,
        String::from("stem_bn"),
        LayerKind::BatchNorm,
        s0,
        p.light_div,
        alloc::vec![stem_conv],
        rng,
    );
    let mut prev = push(
        &mut layers,
        String::from("stem_pool"),
        LayerKind::Pooling,
        s0 / 4,
        p.light_div,
        alloc::vec![stem_bn],
        rng,
    );
    // Four stages; earlier stages take the remainder blocks.
    let per_stage = blocks / 4;
    let extra = blocks % 4;
    let mut block_index = 0usize;
    for (stage, &bytes) in p.stage_bytes.iter().enumerate() {
        let count = per_stage + usize::from(stage < extra);
        for _ in 0..count {
            let b = block_index;
            block_index += 1;
            let narrow = (bytes / 4).max(1);
            let c1 = push(
                &mut layers,
                alloc::format!("b{b}_conv1"),
                LayerKind::Convolution,
                narrow,
                p.conv_div,
                alloc::vec![prev],
                rng,
            );
            let n1 = push(
                &mut layers,
                alloc::format!("b{b}_bn1"),
                LayerKind::BatchNorm,
                narrow,
                p.light_div,
                alloc::vec![c1],
                rng,
            );
            let c2 = push(
                &mut layers,
                alloc::format!("b{b}_conv2"),
                LayerKind::Convolution,
                bytes,
                p.conv_div,
                alloc::vec![n1],
                rng,
            );
            let n2 = push(
                &mut layers,
                alloc::format!("b{b}_bn2"),
                LayerKind::BatchNorm,
                bytes,
                p.light_div,
                alloc::vec![c2],
                rng,
            );
            // Skip connection joins the block input with the block body.
            prev = push(
                &mut layers,
                alloc::format!("b{b}_add"),
                LayerKind::Elementwise,
                bytes,
                p.light_div,
                alloc::vec![n2, prev],
                rng,
            );
        }
    }
    // Head.
    let head_pool = push(
        &mut layers,
        String::from("head_pool"),
        LayerKind::Pooling,
        p.head_pool_bytes,
        p.light_div,
        alloc::vec![prev],
        rng,
    );
    push(
        &mut layers,
        String::from("head_fc"),
        LayerKind::FullyConnected,
        p.head_fc_bytes,
        p.light_div,
        alloc::vec![head_pool],
        rng,
    );
    layers
}

fn chain_layers(n: usize, rng: &mut ChaCha8Rng) -> Vec<LayerNode> {
    (0..n)
        .map(|i| {
            let kind = match i % 3 {
                0 => LayerKind::Convolution,
                1 => LayerKind::Activation,
                _ => LayerKind::BatchNorm,
            };
            let divisor = if kind == LayerKind::Convolution {
                8_000
            } else {
                40_000
            };
            let bytes = 4_000_000;
            node(
                i,
                alloc::format!("l{i}"),
                kind,
                bytes,
                divisor,
                if i == 0 {
                    alloc::vec![]
                } else {
                    alloc::vec![i - 1]
                },
                rng,
            )
        })
        .collect()
}

fn alexnet_layers(n: usize, rng: &mut ChaCha8Rng) -> Vec<LayerNode> {
    let mut bytes = 1_200_000u64;
    (0..n)
        .map(|i| {
            let kind = if n > 4 && i >= n - 3 {
                LayerKind::FullyConnected
            } else if i % 3 == 2 {
                LayerKind::Pooling
            } else {
                LayerKind::Convolution
            };
            let out = bytes.max(50_000);
            bytes = bytes * 7 / 10;
            node(
                i,
                alloc::format!("l{i}"),
                kind,
                out,
                8_000,
                if i == 0 {
                    alloc::vec![]
                } else {
                    alloc::vec![i - 1]
                },
                rng,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PlacementClass;

    fn spec(shape: Shape, size: usize, batch: u64, seed: u64, env: EnvPreset) -> GenSpec {
        GenSpec {
            shape,
            size,
            batch,
            seed,
            env,
        }
    }

    #[test]
    fn all_shapes_validate_across_seeds() {
        for seed in 0..50 {
            for (shape, size) in [
                (Shape::Chain, 6),
                (Shape::ResnetLike, 16),
                (Shape::AlexnetLike, 13),
                (Shape::Resnext3dLike, 8),
            ] {
                let p = generate(&spec(shape, size, 4, seed, EnvPreset::PcieX86)).unwrap();
                p.validate().unwrap();
            }
        }
    }

    #[test]
    fn deterministic_per_spec() {
        let s = spec(Shape::ResnetLike, 16, 32, 7, EnvPreset::PcieX86);
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
    }

    #[test]
    fn env_preset_does_not_change_layers() {
        let a = generate(&spec(Shape::ResnetLike, 16, 32, 7, EnvPreset::PcieX86)).unwrap();
        let b = generate(&spec(Shape::ResnetLike, 16, 32, 7, EnvPreset::NvlinkPower9)).unwrap();
        assert_eq!(a.layers, b.layers);
        assert_ne!(a.env, b.env);
    }

    #[test]
    fn batch_scales_linearly() {
        let one = generate(&spec(Shape::ResnetLike, 16, 1, 3, EnvPreset::PcieX86)).unwrap();
        let eight = generate(&spec(Shape::ResnetLike, 16, 8, 3, EnvPreset::PcieX86)).unwrap();
        for (a, b) in one.layers.iter().zip(&eight.layers) {
            assert_eq!(b.output_bytes, 8 * a.output_bytes);
            assert_eq!(b.fwd_time_us, 8 * a.fwd_time_us);
            assert_eq!(b.bwd_time_us, 8 * a.bwd_time_us);
        }
    }

    /// Transfer-vs-compute calibration holds for every seed.
    #[test]
    fn calibration_ratios() {
        for seed in 0..50 {
            let resnet_pcie =
                generate(&spec(Shape::ResnetLike, 20, 1, seed, EnvPreset::PcieX86)).unwrap();
            let resnet_nvlink = generate(&spec(
                Shape::ResnetLike,
                20,
                1,
                seed,
                EnvPreset::NvlinkPower9,
            ))
            .unwrap();
            let n = resnet_pcie.n();
            let unhidden_pcie = (0..n)
                .filter(|&i| resnet_pcie.swap_out_time(i) > resnet_pcie.layers[i].fwd_time_us)
                .count();
            assert!(unhidden_pcie * 2 >= n, "{unhidden_pcie}/{n} at seed {seed}");
            let hidden_nvlink = (0..n)
                .filter(|&i| resnet_nvlink.swap_out_time(i) < resnet_nvlink.layers[i].fwd_time_us)
                .count();
            assert!(hidden_nvlink * 2 >= n, "{hidden_nvlink}/{n} at seed {seed}");

            for env in [EnvPreset::PcieX86, EnvPreset::NvlinkPower9] {
                let alex = generate(&spec(Shape::AlexnetLike, 13, 1, seed, env)).unwrap();
                let hidden = (0..alex.n())
                    .filter(|&i| alex.layers[i].fwd_time_us > alex.swap_out_time(i))
                    .count();
                assert!(hidden * 10 >= alex.n() * 9, "{hidden}/{}", alex.n());
            }
        }
    }

    #[test]
    fn resnet_memory_exceeds_capacity_at_large_batch() {
        // Around fifty gigabytes of feature maps against a 16 GiB device.
        let p = generate(&spec(Shape::ResnetLike, 20, 640, 0, EnvPreset::PcieX86)).unwrap();
        assert!(p.total_output_bytes() > 50_000_000_000);
        assert!(p.total_output_bytes() + p.env.resident_base_bytes > p.env.capacity_bytes);
    }

    #[test]
    fn resnext3d_is_out_of_core_at_batch_one() {
        let p = generate(&spec(Shape::Resnext3dLike, 59, 1, 0, EnvPreset::PcieX86)).unwrap();
        assert_eq!(p.n(), 3 + 5 * 59 + 2);
        assert!(p.total_output_bytes() + p.env.resident_base_bytes > p.env.capacity_bytes);
        assert!(p.total_output_bytes() > 40_000_000_000);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(matches!(
            generate(&spec(Shape::Chain, 0, 1, 0, EnvPreset::PcieX86)),
            Err(SynthError::EmptySize)
        ));
        assert!(matches!(
            generate(&spec(Shape::Chain, 3, 0, 0, EnvPreset::PcieX86)),
            Err(SynthError::EmptyBatch)
        ));
    }

    #[test]
    fn sink_is_never_recompute_constrained_by_shape() {
        // Block graphs end in a fully-connected sink; placements built by
        // the optimizer must be able to keep or swap it.
        let p = generate(&spec(Shape::ResnetLike, 8, 1, 1, EnvPreset::PcieX86)).unwrap();
        assert_eq!(p.sink(), p.n() - 1);
        let mut pl = crate::model::Placement::all_swap(p.n());
        pl.set(p.n() - 1, PlacementClass::Recompute);
        assert!(pl.validate_for(&p).is_err());
    }
}
