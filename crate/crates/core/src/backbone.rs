//! Three-stage feature extractor. Each stage is
//! `conv3×3 → IN → ReLU`, one DKG block, then a stride-2 `conv3×3 → ReLU`
//! downsample. Style reassembly hooks in after stage one; whitening and the
//! heads consume the output of the last stage.

use serde::{Deserialize, Serialize};

use crate::dkg::{dkg_forward, DkgParams, KernelMode};
use crate::error::{Error, Result};
use crate::numcore::params::BoundParams;
use crate::numcore::{ParamId, ParamStore, Rng, Tape, Tensor, Var, NORM_EPS};
use crate::style::{reassemble_on_tape, StyleTargets};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Input side length `S`; must be divisible by 8.
    pub image_size: usize,
    /// Input channels followed by the output width of each stage.
    pub channels: Vec<usize>,
    pub kernel_mode: KernelMode,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            channels: vec![3, 8, 16, 64],
            kernel_mode: KernelMode::Both,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 8 != 0 {
            return Err(Error::Config(format!(
                "image size {} is not divisible by 8",
                self.image_size
            )));
        }
        if self.channels.len() != 4 {
            return Err(Error::Config("channel plan needs an input width and three stage widths".into()));
        }
        if self.channels[1..].iter().any(|c| c % 2 != 0 || *c == 0) {
            return Err(Error::Config(format!("stage widths must be even: {:?}", self.channels)));
        }
        Ok(())
    }

    pub fn final_channels(&self) -> usize {
        self.channels[3]
    }

    pub fn final_size(&self) -> usize {
        self.image_size / 8
    }

    pub fn stage1_channels(&self) -> usize {
        self.channels[1]
    }
}

#[derive(Clone, Debug)]
pub struct StageParams {
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub dkg: DkgParams,
    pub down_w: ParamId,
    pub down_b: ParamId,
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub stages: Vec<StageParams>,
}

/// Features at the two hook points of one branch.
#[derive(Clone, Copy, Debug)]
pub struct BranchOutputs {
    pub stage1_feat: Var,
    pub final_feat: Var,
    /// Instance-normalized map inside the last stage, where whitening applies.
    pub whiten_feat: Var,
}

impl Backbone {
    pub fn new(store: &mut ParamStore, config: BackboneConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut stages = Vec::new();
        for (i, pair) in config.channels.windows(2).enumerate() {
            let (cin, cout) = (pair[0], pair[1]);
            let prefix = format!("stage{}", i + 1);
            let conv_w = store.register_uniform(format!("{prefix}.conv.w"), &[cout, cin, 3, 3], cin * 9, rng);
            let conv_b = store.register(format!("{prefix}.conv.b"), Tensor::zeros(&[cout]));
            let dkg = DkgParams::new(store, &format!("{prefix}.dkg"), cout, rng)?;
            let down_w = store.register_uniform(format!("{prefix}.down.w"), &[cout, cout, 3, 3], cout * 9, rng);
            let down_b = store.register(format!("{prefix}.down.b"), Tensor::zeros(&[cout]));
            stages.push(StageParams {
                conv_w,
                conv_b,
                dkg,
                down_w,
                down_b,
            });
        }
        Ok(Self { config, stages })
    }

    /// Number of DKG blocks in each stage (always one).
    pub fn dkg_blocks_per_stage(&self) -> Vec<usize> {
        self.stages.iter().map(|_| 1).collect()
    }

    pub fn stage(&self, tape: &mut Tape, bound: &BoundParams, index: usize, x: Var) -> Result<Var> {
        Ok(self.stage_with_norm(tape, bound, index, x)?.0)
    }

    /// Stage output together with the stage's instance-normalized map.
    fn stage_with_norm(&self, tape: &mut Tape, bound: &BoundParams, index: usize, x: Var) -> Result<(Var, Var)> {
        let s = &self.stages[index];
        let h = tape.conv2d(x, bound[s.conv_w], bound[s.conv_b], 1, 1)?;
        let normed = tape.instance_norm(h, NORM_EPS)?;
        let h = tape.relu(normed);
        let h = dkg_forward(tape, h, &s.dkg, bound, self.config.kernel_mode)?;
        let h = tape.conv2d(h, bound[s.down_w], bound[s.down_b], 2, 1)?;
        Ok((tape.relu(h), normed))
    }

    /// Stages two and three applied to a stage-one feature map; returns the
    /// output and the last stage's instance-normalized map.
    pub fn tail_with_norm(&self, tape: &mut Tape, bound: &BoundParams, stage1: Var) -> Result<(Var, Var)> {
        let h = self.stage(tape, bound, 1, stage1)?;
        self.stage_with_norm(tape, bound, 2, h)
    }

    /// Stages two and three applied to a stage-one feature map.
    pub fn tail(&self, tape: &mut Tape, bound: &BoundParams, stage1: Var) -> Result<Var> {
        Ok(self.tail_with_norm(tape, bound, stage1)?.0)
    }

    fn check_input(&self, tape: &Tape, images: Var) -> Result<()> {
        let (_, c, h, w) = tape.value(images).dims4()?;
        if h != w || h % 8 != 0 {
            return Err(Error::shape("extract", format!("image side {h}×{w} must be square and divisible by 8")));
        }
        if c != self.config.channels[0] {
            return Err(Error::shape("extract", format!("expected {} input channels, got {c}", self.config.channels[0])));
        }
        Ok(())
    }

    pub fn stage1(&self, tape: &mut Tape, bound: &BoundParams, images: Var) -> Result<Var> {
        self.check_input(tape, images)?;
        self.stage(tape, bound, 0, images)
    }

    pub fn extract(&self, tape: &mut Tape, bound: &BoundParams, images: Var) -> Result<BranchOutputs> {
        let stage1_feat = self.stage1(tape, bound, images)?;
        let (final_feat, whiten_feat) = self.tail_with_norm(tape, bound, stage1_feat)?;
        Ok(BranchOutputs {
            stage1_feat,
            final_feat,
            whiten_feat,
        })
    }
}

impl Backbone {
    /// Final features of every branch grown from one stage-one map: the
    /// original branch, plus a style-reassembled branch when `targets` is set.
    pub fn branches_from_stage1(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        stage1: Var,
        targets: Option<&StyleTargets>,
    ) -> Result<Vec<BranchOutputs>> {
        let (final_feat, whiten_feat) = self.tail_with_norm(tape, bound, stage1)?;
        let mut out = vec![BranchOutputs {
            stage1_feat: stage1,
            final_feat,
            whiten_feat,
        }];
        if let Some(t) = targets {
            let restyled = reassemble_on_tape(tape, stage1, t, NORM_EPS)?;
            let (final_feat, whiten_feat) = self.tail_with_norm(tape, bound, restyled)?;
            out.push(BranchOutputs {
                stage1_feat: restyled,
                final_feat,
                whiten_feat,
            });
        }
        Ok(out)
    }

    /// Original and style-reassembled branches. Stage one runs once; its
    /// output feeds the original tail directly and the augmented tail after
    /// reassembly to `targets`.
    pub fn forward_dual(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        images: Var,
        targets: &StyleTargets,
    ) -> Result<(BranchOutputs, BranchOutputs)> {
        let stage1 = self.stage1(tape, bound, images)?;
        let mut b = self.branches_from_stage1(tape, bound, stage1, Some(targets))?;
        let aug = b.pop().expect("two branches");
        Ok((b.pop().expect("two branches"), aug))
    }
}
