//! Liveness classifier, depth estimator, and the supervised objectives.

use crate::error::{Error, Result};
use crate::label::Class;
use crate::numcore::params::BoundParams;
use crate::numcore::{ParamId, ParamStore, Rng, Tape, Tensor, Var};

pub const DEPTH_HIDDEN: usize = 16;

#[derive(Clone, Debug)]
pub struct Heads {
    pub cls_w: ParamId,
    pub cls_b: ParamId,
    pub dep1_w: ParamId,
    pub dep1_b: ParamId,
    pub dep2_w: ParamId,
    pub dep2_b: ParamId,
}

impl Heads {
    pub fn new(store: &mut ParamStore, channels: usize, rng: &mut Rng) -> Self {
        let cls_w = store.register_uniform("cls.w", &[1, channels], channels, rng);
        let cls_b = store.register("cls.b", Tensor::zeros(&[1]));
        let dep1_w = store.register_uniform("dep1.w", &[DEPTH_HIDDEN, channels, 3, 3], channels * 9, rng);
        let dep1_b = store.register("dep1.b", Tensor::zeros(&[DEPTH_HIDDEN]));
        let dep2_w = store.register_uniform("dep2.w", &[1, DEPTH_HIDDEN, 3, 3], DEPTH_HIDDEN * 9, rng);
        let dep2_b = store.register("dep2.b", Tensor::zeros(&[1]));
        Self {
            cls_w,
            cls_b,
            dep1_w,
            dep1_b,
            dep2_w,
            dep2_b,
        }
    }

    /// One liveness logit per instance, shape `N`.
    pub fn classify(&self, tape: &mut Tape, bound: &BoundParams, features: Var) -> Result<Var> {
        let n = tape.shape(features)[0];
        let pooled = tape.global_avg_pool(features)?;
        let logit = tape.linear(pooled, bound[self.cls_w], bound[self.cls_b])?;
        tape.reshape(logit, &[n])
    }

    /// Depth map `N×1×D×D` at the feature resolution.
    pub fn depth(&self, tape: &mut Tape, bound: &BoundParams, features: Var) -> Result<Var> {
        let h = tape.conv2d(features, bound[self.dep1_w], bound[self.dep1_b], 1, 1)?;
        let h = tape.relu(h);
        tape.conv2d(h, bound[self.dep2_w], bound[self.dep2_b], 1, 1)
    }
}

/// Batch mean of the per-instance BCE summed over the supplied branches.
pub fn cls_loss(tape: &mut Tape, logits: &[Var], labels: &[Class]) -> Result<Var> {
    let targets: Vec<f64> = labels.iter().map(|c| c.target()).collect();
    let mut total: Option<Var> = None;
    for &l in logits {
        let per = tape.bce_with_logits(l, &targets)?;
        let m = tape.mean(per);
        total = Some(match total {
            Some(t) => tape.add(t, m)?,
            None => m,
        });
    }
    total.ok_or_else(|| Error::InvalidArgument("classification loss needs at least one branch".into()))
}

/// Squared error against the depth labels, averaged over batch and pixels,
/// summed over branches.
pub fn depth_loss(tape: &mut Tape, predictions: &[Var], labels: &Tensor) -> Result<Var> {
    let target = tape.constant(labels.clone());
    let mut total: Option<Var> = None;
    for &p in predictions {
        if tape.shape(p) != labels.shape() {
            return Err(Error::shape(
                "depth_loss",
                format!("prediction {:?} vs label {:?}", tape.shape(p), labels.shape()),
            ));
        }
        let diff = tape.sub(p, target)?;
        let sq = tape.mul(diff, diff)?;
        let m = tape.mean(sq);
        total = Some(match total {
            Some(t) => tape.add(t, m)?,
            None => m,
        });
    }
    total.ok_or_else(|| Error::InvalidArgument("depth loss needs at least one branch".into()))
}

/// `L_cls + λ·L_dep (+ L_whitening)`.
pub fn total_loss(tape: &mut Tape, cls: Var, dep: Var, whitening: Option<Var>, lambda: f64) -> Result<Var> {
    if lambda < 0.0 {
        return Err(Error::Config(format!("depth weight {lambda} is negative")));
    }
    let weighted = tape.scale(dep, lambda);
    let sup = tape.add(cls, weighted)?;
    match whitening {
        Some(w) => tape.add(sup, w),
        None => Ok(sup),
    }
}
