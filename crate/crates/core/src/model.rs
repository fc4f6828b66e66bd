//! Backbone plus heads, with the parameters they own.

use crate::backbone::{Backbone, BackboneConfig, BranchOutputs};
use crate::error::{Error, Result};
use crate::heads::Heads;
use crate::label::Class;
use crate::numcore::params::BoundParams;
use crate::numcore::{ParamStore, Rng, Tape, Tensor, Var, NORM_EPS};
use crate::style::{compute_style_stats, StyleStats, StyleTargets};
use crate::synthdata::{stack_images, SyntheticSample};

#[derive(Clone, Debug)]
pub struct Model {
    pub config: BackboneConfig,
    pub store: ParamStore,
    pub backbone: Backbone,
    pub heads: Heads,
}

/// Per-branch outputs of one training forward pass. Index 0 is the original
/// branch; index 1, when present, the style-reassembled one.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub branches: Vec<BranchOutputs>,
    pub logits: Vec<Var>,
    pub depths: Vec<Var>,
}

impl Model {
    pub fn new(config: BackboneConfig, rng: &mut Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let backbone = Backbone::new(&mut store, config.clone(), rng)?;
        let heads = Heads::new(&mut store, config.final_channels(), rng);
        Ok(Self {
            config,
            store,
            backbone,
            heads,
        })
    }

    /// Runs both heads on every branch. `augment` sees the stage-one feature
    /// values and may return style targets, which adds the reassembled branch.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        images: Var,
        augment: impl FnOnce(&Tensor) -> Result<Option<StyleTargets>>,
    ) -> Result<ForwardPass> {
        let stage1 = self.backbone.stage1(tape, bound, images)?;
        let targets = augment(tape.value(stage1))?;
        let branches = self.backbone.branches_from_stage1(tape, bound, stage1, targets.as_ref())?;
        let mut logits = Vec::with_capacity(branches.len());
        let mut depths = Vec::with_capacity(branches.len());
        for b in &branches {
            logits.push(self.heads.classify(tape, bound, b.final_feat)?);
            depths.push(self.heads.depth(tape, bound, b.final_feat)?);
        }
        Ok(ForwardPass { branches, logits, depths })
    }

    /// Liveness scores `sigmoid(logit)` from the original branch.
    pub fn predict(&self, images: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.store.bind_frozen(&mut tape);
        let x = tape.constant(images.clone());
        let out = self.backbone.extract(&mut tape, &bound, x)?;
        let logit = self.heads.classify(&mut tape, &bound, out.final_feat)?;
        let p = tape.sigmoid(logit);
        Ok(tape.value(p).data().to_vec())
    }

    pub fn predict_samples(&self, samples: &[SyntheticSample], chunk: usize) -> Result<Vec<f64>> {
        let mut scores = Vec::with_capacity(samples.len());
        for part in chunks(samples, chunk)? {
            scores.extend(self.predict(&stack_images(&part)?)?);
        }
        Ok(scores)
    }

    /// Style statistics of the stage-one features of `samples`, evaluated
    /// with frozen parameters.
    pub fn stage1_style_stats(&self, samples: &[SyntheticSample], chunk: usize) -> Result<Vec<StyleStats>> {
        let mut stats = Vec::with_capacity(samples.len());
        for part in chunks(samples, chunk)? {
            let mut tape = Tape::new();
            let bound = self.store.bind_frozen(&mut tape);
            let x = tape.constant(stack_images(&part)?);
            let f = self.backbone.stage1(&mut tape, &bound, x)?;
            let labels: Vec<Class> = part.iter().map(|s| s.class).collect();
            stats.extend(compute_style_stats(tape.value(f), &labels, NORM_EPS)?);
        }
        Ok(stats)
    }
}

pub(crate) fn chunks(samples: &[SyntheticSample], chunk: usize) -> Result<Vec<Vec<&SyntheticSample>>> {
    if chunk == 0 {
        return Err(Error::InvalidArgument("chunk size must be positive".into()));
    }
    Ok(samples.chunks(chunk).map(|c| c.iter().collect()).collect())
}
