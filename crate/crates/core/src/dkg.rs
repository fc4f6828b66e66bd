//! Dynamic kernel generator block.
//!
//! The input channels are split in half. The second half goes through a
//! shared static convolution; the first half is average-pooled, a dense
//! layer turns the pooled vector into one depthwise `k×k` filter per channel
//! for *that* sample, and the first half is filtered with it. Both results
//! are concatenated (static first) and mixed by a 1×1 convolution + ReLU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::params::BoundParams;
use crate::numcore::{ParamId, ParamStore, Rng, Tape, Tensor, Var};

pub const KERNEL_SIZE: usize = 3;

/// Which DKG branches are live.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    /// Dynamic branch output forced to zero.
    StaticOnly,
    /// Static branch output forced to zero.
    DynamicOnly,
    #[default]
    Both,
}

#[derive(Clone, Debug)]
pub struct DkgParams {
    pub channels: usize,
    pub k: usize,
    pub static_w: ParamId,
    pub static_b: ParamId,
    pub gen_w: ParamId,
    pub gen_b: ParamId,
    pub fuse_w: ParamId,
    pub fuse_b: ParamId,
}

impl DkgParams {
    /// Registers a block operating on `channels` channels. The generator is
    /// zero-initialized so the block starts out purely static.
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, rng: &mut Rng) -> Result<Self> {
        if channels < 2 || channels % 2 != 0 {
            return Err(Error::Config(format!("DKG needs an even channel count, got {channels}")));
        }
        let half = channels / 2;
        let k = KERNEL_SIZE;
        let static_w = store.register_uniform(format!("{prefix}.static.w"), &[half, half, k, k], half * k * k, rng);
        let static_b = store.register(format!("{prefix}.static.b"), Tensor::zeros(&[half]));
        let gen_w = store.register(format!("{prefix}.gen.w"), Tensor::zeros(&[half * k * k, half]));
        let gen_b = store.register(format!("{prefix}.gen.b"), Tensor::zeros(&[half * k * k]));
        let fuse_w = store.register_uniform(format!("{prefix}.fuse.w"), &[channels, channels, 1, 1], channels, rng);
        let fuse_b = store.register(format!("{prefix}.fuse.b"), Tensor::zeros(&[channels]));
        Ok(Self {
            channels,
            k,
            static_w,
            static_b,
            gen_w,
            gen_b,
            fuse_w,
            fuse_b,
        })
    }

    pub fn half(&self) -> usize {
        self.channels / 2
    }
}

/// Splits `N×C×H×W` into the first and last `C/2` channels.
pub fn split_channels(tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
    let (_, c, _, _) = tape.value(x).dims4()?;
    if c % 2 != 0 {
        return Err(Error::shape("split_channels", format!("channel count {c} is odd")));
    }
    let first = tape.slice_channels(x, 0, c / 2)?;
    let second = tape.slice_channels(x, c / 2, c / 2)?;
    Ok((first, second))
}

/// Instance-conditioned depthwise kernels `N×C/2×k×k` from the pooled first half.
pub fn generate_kernels(tape: &mut Tape, x_hat: Var, p: &DkgParams, bound: &BoundParams) -> Result<Var> {
    let (n, c, _, _) = tape.value(x_hat).dims4()?;
    if c != p.half() {
        return Err(Error::shape(
            "generate_kernels",
            format!("generator expects {} channels, got {c}", p.half()),
        ));
    }
    let pooled = tape.global_avg_pool(x_hat)?;
    let flat = tape.linear(pooled, bound[p.gen_w], bound[p.gen_b])?;
    tape.reshape(flat, &[n, c, p.k, p.k])
}

/// Full block forward pass.
pub fn dkg_forward(tape: &mut Tape, x: Var, p: &DkgParams, bound: &BoundParams, mode: KernelMode) -> Result<Var> {
    let (n, c, h, w) = tape.value(x).dims4()?;
    if c != p.channels {
        return Err(Error::shape(
            "dkg_forward",
            format!("block built for {} channels, input has {c}", p.channels),
        ));
    }
    let pad = p.k / 2;
    let (x_hat, x_tilde) = split_channels(tape, x)?;
    let half_shape = [n, p.half(), h, w];

    let z_static = if mode == KernelMode::DynamicOnly {
        tape.constant(Tensor::zeros(&half_shape))
    } else {
        tape.conv2d(x_tilde, bound[p.static_w], bound[p.static_b], 1, pad)?
    };
    let z_dynamic = if mode == KernelMode::StaticOnly {
        tape.constant(Tensor::zeros(&half_shape))
    } else {
        let kernels = generate_kernels(tape, x_hat, p, bound)?;
        tape.depthwise_conv(x_hat, kernels, pad)?
    };
    let joined = tape.concat_channels(z_static, z_dynamic)?;
    let fused = tape.conv2d(joined, bound[p.fuse_w], bound[p.fuse_b], 1, 0)?;
    Ok(tape.relu(fused))
}
