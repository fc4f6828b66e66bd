//! Training loop, Adam, and checkpoints.
//!
//! # Checkpoint format
//!
//! ```text
//! "IADGCKPT" | version: u16 LE | manifest_len: u32 LE | manifest: JSON | data
//! ```
//!
//! The manifest carries the config and its hash, the epoch counter, Adam's
//! step count, the RNG state, the style bank, the epoch logs, and one entry
//! per tensor (name, group, shape, byte offset). `data` holds raw `f64` LE
//! values, so a round trip is bit-exact.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::BackboneConfig;
use crate::dkg::KernelMode;
use crate::error::{Error, Result};
use crate::heads::{cls_loss, depth_loss, total_loss};
use crate::label::Class;
use crate::metrics::{auc, eer_hter, ScoreSet};
use crate::model::{chunks, Model};
use crate::numcore::{ParamStore, Rng, RngState, Tape, Tensor, NORM_EPS};
use crate::style::{compute_style_stats, draw_targets, refresh_bank, StyleAugment, StyleBank};
use crate::synthdata::{read_preamble_and_header, stack_depths, stack_images, write_container, SyntheticSample};
use crate::whitening::{covariance_on_tape, masked_abs_means, CovarianceMatrix, WhiteningLoss, WhiteningMode};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"IADGCKPT";
pub const CHECKPOINT_VERSION: u16 = 1;

const INIT_STREAM: u64 = 1;
const EPOCH_STREAM: u64 = 2;
const MONITOR_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps_adam: f64,
    /// Weight of the depth loss.
    pub lambda_depth: f64,
    /// Basis styles kept per class.
    pub bank_size: usize,
    pub k_real: f64,
    pub k_spoof: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub style: StyleAugment,
    pub whitening: WhiteningMode,
    pub model: BackboneConfig,
    /// Samples per forward pass in no-gradient passes.
    pub eval_chunk: usize,
    /// The held-out masked covariance statistic is logged after the first
    /// and last epochs and every `monitor_every` epochs (0: never between).
    pub monitor_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            betas: (0.9, 0.999),
            eps_adam: 1e-8,
            lambda_depth: 0.1,
            bank_size: 16,
            k_real: 0.003,
            k_spoof: 0.0006,
            epochs: 30,
            batch_size: 16,
            seed: 0,
            style: StyleAugment::Csa,
            whitening: WhiteningMode::Asymmetric,
            model: BackboneConfig::default(),
            eval_chunk: 32,
            monitor_every: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::Config(format!("Adam betas {:?} outside [0, 1)", self.betas)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if self.bank_size == 0 || self.eval_chunk == 0 {
            return Err(Error::Config("bank size and eval chunk must be positive".into()));
        }
        if self.k_real < self.k_spoof {
            return Err(Error::Config(format!(
                "real selective ratio {} must be at least the spoof ratio {}",
                self.k_real, self.k_spoof
            )));
        }
        WhiteningLoss::new(self.whitening, self.k_real, self.k_spoof)?;
        if matches!(self.whitening, WhiteningMode::Symmetric | WhiteningMode::Asymmetric) && self.style == StyleAugment::Off {
            return Err(Error::Config("adaptive whitening needs a style augmentation branch".into()));
        }
        Ok(())
    }

    /// SHA-256 of the config with `epochs` cleared, so a run can be resumed
    /// with a larger epoch budget.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.epochs = 0;
        let json = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn kernel_mode(&self) -> KernelMode {
        self.model.kernel_mode
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            lr: c.lr,
            beta1: c.betas.0,
            beta2: c.betas.1,
            eps: c.eps_adam,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient is
/// non-finite or mis-shaped.
pub fn adam_step(store: &mut ParamStore, grads: &[Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} parameters, {} gradients, {} moments", store.len(), grads.len(), state.m.len()),
        ));
    }
    for (id, g) in store.ids().zip(grads) {
        if g.shape() != store.get(id).shape() {
            return Err(Error::shape("adam_step", format!("gradient shape mismatch for {}", store.name(id))));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", store.name(id))));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for ((id, g), (m, v)) in store.ids().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let p = store.get_mut(id).data_mut();
        for (((pv, &gv), mv), vv) in p.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            let mhat = *mv / c1;
            let vhat = *vv / c2;
            *pv -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Held-out statistics recorded after an epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldoutStats {
    pub auc: f64,
    pub hter: f64,
    /// Median over held-out samples of the mean `|Σ|` at the class mask.
    pub masked_sigma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// One-based epoch number.
    pub epoch: usize,
    pub steps: usize,
    pub loss_total: f64,
    pub loss_cls: f64,
    pub loss_dep: f64,
    pub loss_whitening: f64,
    pub bank_stamp: Option<usize>,
    pub heldout: Option<HeldoutStats>,
}

#[derive(Clone, Copy, Debug, Default)]
struct StepLosses {
    total: f64,
    cls: f64,
    dep: f64,
    whitening: f64,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub bank: Option<StyleBank>,
    pub logs: Vec<EpochLog>,
    /// Wall time of each epoch run by this instance.
    pub epoch_seconds: Vec<f64>,
    rng: Rng,
    whitening: WhiteningLoss,
}

fn epoch_rng(seed: u64, epoch: usize) -> Rng {
    Rng::new(seed).split_path(&[EPOCH_STREAM, epoch as u64])
}

/// Class-balanced batches: each holds `batch/2` real and `batch − batch/2`
/// spoof samples, cycling through the smaller class. Every sample of the
/// larger class appears once per epoch.
pub fn balanced_batches(labels: &[Class], batch: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    let mut real: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_real()).collect();
    let mut spoof: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i].is_real()).collect();
    if real.is_empty() || spoof.is_empty() {
        return Err(Error::InvalidArgument("training data needs both classes".into()));
    }
    rng.shuffle(&mut real);
    rng.shuffle(&mut spoof);
    let (hr, hs) = (batch / 2, batch - batch / 2);
    let steps = real.len().div_ceil(hr).max(spoof.len().div_ceil(hs));
    Ok((0..steps)
        .map(|s| {
            let mut b: Vec<usize> = (0..hr).map(|j| real[(s * hr + j) % real.len()]).collect();
            b.extend((0..hs).map(|j| spoof[(s * hs + j) % spoof.len()]));
            b
        })
        .collect())
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut init = Rng::new(config.seed).split(INIT_STREAM);
        let model = Model::new(config.model.clone(), &mut init)?;
        let adam = AdamState::new(&model.store);
        let whitening = WhiteningLoss::new(config.whitening, config.k_real, config.k_spoof)?;
        Ok(Self {
            rng: epoch_rng(config.seed, 0),
            config,
            model,
            adam,
            epoch: 0,
            bank: None,
            logs: Vec::new(),
            epoch_seconds: Vec::new(),
            whitening,
        })
    }

    fn step(&mut self, batch: &[&SyntheticSample], rng: &mut Rng) -> Result<StepLosses> {
        let labels: Vec<Class> = batch.iter().map(|s| s.class).collect();
        let mut tape = Tape::new();
        let bound = self.model.store.bind(&mut tape);
        let x = tape.constant(stack_images(batch)?);
        let (style, bank) = (self.config.style, self.bank.as_ref());
        let fp = self.model.forward(&mut tape, &bound, x, |f| {
            let stats = compute_style_stats(f, &labels, NORM_EPS)?;
            draw_targets(&stats, bank, style, rng)
        })?;
        let cls = cls_loss(&mut tape, &fp.logits, &labels)?;
        let dep = depth_loss(&mut tape, &fp.depths, &stack_depths(batch)?)?;
        let white = if self.config.whitening == WhiteningMode::Off {
            None
        } else {
            let cov_org = covariance_on_tape(&mut tape, fp.branches[0].whiten_feat)?;
            let cov_aug = match fp.branches.get(1) {
                Some(b) => Some(covariance_on_tape(&mut tape, b.whiten_feat)?),
                None => None,
            };
            self.whitening.evaluate(&mut tape, cov_org, cov_aug, &labels)?.map(|t| t.loss)
        };
        let total = total_loss(&mut tape, cls, dep, white, self.config.lambda_depth)?;
        let losses = StepLosses {
            total: tape.value(total).item(),
            cls: tape.value(cls).item(),
            dep: tape.value(dep).item(),
            whitening: white.map_or(0.0, |w| tape.value(w).item()),
        };
        if !losses.total.is_finite() {
            return Err(Error::NonFinite(format!("loss {}", losses.total)));
        }
        let mut grads = tape.backward(total)?;
        let grads: Vec<Tensor> = bound
            .vars()
            .iter()
            .map(|&v| grads.take(v).unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
            .collect();
        adam_step(&mut self.model.store, &grads, &mut self.adam, &AdamConfig::from(&self.config))?;
        Ok(losses)
    }

    /// One pass over `train`, followed by held-out statistics when `heldout`
    /// is given.
    pub fn run_epoch(&mut self, train: &[SyntheticSample], heldout: Option<&[SyntheticSample]>) -> Result<EpochLog> {
        let start = Instant::now();
        let epoch = self.epoch;
        if self.config.style == StyleAugment::Csa {
            self.bank = Some(refresh_bank(&self.model, train, self.config.bank_size, epoch, self.config.eval_chunk)?);
        }
        let mut rng = self.rng.clone();
        let labels: Vec<Class> = train.iter().map(|s| s.class).collect();
        let batches = balanced_batches(&labels, self.config.batch_size, &mut rng)?;
        let mut sum = StepLosses::default();
        for (step, idx) in batches.iter().enumerate() {
            let batch: Vec<&SyntheticSample> = idx.iter().map(|&i| &train[i]).collect();
            let l = self.step(&batch, &mut rng).map_err(|e| match e {
                Error::NonFinite(detail) => Error::Divergence { epoch, step, detail },
                other => other,
            })?;
            sum.total += l.total;
            sum.cls += l.cls;
            sum.dep += l.dep;
            sum.whitening += l.whitening;
        }
        let last = epoch + 1 == self.config.epochs;
        let with_sigma = epoch == 0 || last || (self.config.monitor_every > 0 && (epoch + 1) % self.config.monitor_every == 0);
        let heldout = match heldout {
            Some(h) => Some(self.heldout_stats(train, h, with_sigma)?),
            None => None,
        };
        let n = batches.len() as f64;
        let log = EpochLog {
            epoch: epoch + 1,
            steps: batches.len(),
            loss_total: sum.total / n,
            loss_cls: sum.cls / n,
            loss_dep: sum.dep / n,
            loss_whitening: sum.whitening / n,
            bank_stamp: self.bank.as_ref().map(|b| b.epoch_stamp),
            heldout,
        };
        self.epoch_seconds.push(start.elapsed().as_secs_f64());
        self.epoch += 1;
        self.rng = epoch_rng(self.config.seed, self.epoch);
        self.logs.push(log.clone());
        Ok(log)
    }

    /// AUC/HTER and, with `with_sigma`, the masked covariance statistic on
    /// `heldout`. The
    /// augmented branch for the statistic uses the current style bank (or one
    /// built from `train` when the run has none) with a fixed draw stream, so
    /// epochs are compared on identical augmentations.
    pub fn heldout_stats(&self, train: &[SyntheticSample], heldout: &[SyntheticSample], with_sigma: bool) -> Result<HeldoutStats> {
        let scores = self.model.predict_samples(heldout, self.config.eval_chunk)?;
        let set = ScoreSet::new(scores, heldout.iter().map(|s| s.class).collect())?;
        let (auc, hter) = (auc(&set)?, eer_hter(&set)?.hter);
        if !with_sigma {
            return Ok(HeldoutStats {
                auc,
                hter,
                masked_sigma: None,
            });
        }
        let built;
        let bank = match &self.bank {
            Some(b) => b,
            None => {
                built = refresh_bank(&self.model, train, self.config.bank_size, self.epoch, self.config.eval_chunk)?;
                &built
            }
        };
        let mut rng = Rng::new(self.config.seed).split(MONITOR_STREAM);
        let (org, aug, labels) = branch_covariances(&self.model, heldout, bank, &mut rng, self.config.eval_chunk)?;
        let masks = WhiteningLoss::new(WhiteningMode::Asymmetric, self.config.k_real, self.config.k_spoof)?;
        let real_mask = masks.class_mask(&org, Some(&aug), &labels, Class::Real)?;
        let spoof_mask = masks.class_mask(&org, Some(&aug), &labels, Class::Spoof)?;
        let values = masked_abs_means(&org, &labels, &real_mask, &spoof_mask);
        Ok(HeldoutStats {
            auc,
            hter,
            masked_sigma: median(values),
        })
    }

    /// Trains until `config.epochs` epochs are complete. With `dir`, the
    /// state is saved to `dir/last.ckpt` after every epoch and to
    /// `dir/final.ckpt` at the end; a diverging step leaves `last.ckpt` at the
    /// last good epoch.
    pub fn fit(&mut self, train: &[SyntheticSample], heldout: Option<&[SyntheticSample]>, dir: Option<&Path>) -> Result<()> {
        while self.epoch < self.config.epochs {
            self.run_epoch(train, heldout)?;
            if let Some(d) = dir {
                save_checkpoint(&d.join("last.ckpt"), &self.checkpoint())?;
            }
        }
        if let Some(d) = dir {
            save_checkpoint(&d.join("final.ckpt"), &self.checkpoint())?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            config_hash: self.config.hash(),
            epoch: self.epoch,
            params: self.model.store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
            adam_m: self.adam.m.clone(),
            adam_v: self.adam.v.clone(),
            adam_t: self.adam.t,
            bank: self.bank.clone(),
            rng: self.rng.state(),
            logs: self.logs.clone(),
        }
    }

    /// Restores a trainer; `config` may differ from the saved one only in
    /// `epochs`.
    pub fn from_checkpoint(ckpt: Checkpoint, config: Option<TrainConfig>) -> Result<Self> {
        let config = config.unwrap_or_else(|| ckpt.config.clone());
        if config.hash() != ckpt.config_hash {
            return Err(Error::Config("checkpoint was written by a different configuration".into()));
        }
        let mut t = Trainer::new(config)?;
        if ckpt.params.len() != t.model.store.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, model needs {}",
                ckpt.params.len(),
                t.model.store.len()
            )));
        }
        for (name, tensor) in ckpt.params {
            let id = t
                .model
                .store
                .find(&name)
                .ok_or_else(|| Error::Config(format!("unknown parameter {name} in checkpoint")))?;
            if t.model.store.get(id).shape() != tensor.shape() {
                return Err(Error::Config(format!("shape mismatch for {name}")));
            }
            *t.model.store.get_mut(id) = tensor;
        }
        t.adam = AdamState {
            m: ckpt.adam_m,
            v: ckpt.adam_v,
            t: ckpt.adam_t,
        };
        t.epoch = ckpt.epoch;
        t.bank = ckpt.bank;
        t.rng = Rng::from_state(ckpt.rng);
        t.logs = ckpt.logs;
        Ok(t)
    }
}

/// Original and augmented whitening-feature covariances of `samples`, evaluated
/// with frozen parameters and bank-assembled styles.
pub fn branch_covariances(
    model: &Model,
    samples: &[SyntheticSample],
    bank: &StyleBank,
    rng: &mut Rng,
    chunk: usize,
) -> Result<(Vec<CovarianceMatrix>, Vec<CovarianceMatrix>, Vec<Class>)> {
    let (mut org, mut aug, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for part in chunks(samples, chunk)? {
        let l: Vec<Class> = part.iter().map(|s| s.class).collect();
        let mut tape = Tape::new();
        let bound = model.store.bind_frozen(&mut tape);
        let x = tape.constant(stack_images(&part)?);
        let stage1 = model.backbone.stage1(&mut tape, &bound, x)?;
        let stats = compute_style_stats(tape.value(stage1), &l, NORM_EPS)?;
        let targets = draw_targets(&stats, Some(bank), StyleAugment::Csa, rng)?;
        let branches = model.backbone.branches_from_stage1(&mut tape, &bound, stage1, targets.as_ref())?;
        let co = covariance_on_tape(&mut tape, branches[0].whiten_feat)?;
        let ca = covariance_on_tape(&mut tape, branches[1].whiten_feat)?;
        org.extend(CovarianceMatrix::split_batch(tape.value(co))?);
        aug.extend(CovarianceMatrix::split_batch(tape.value(ca))?);
        labels.extend(l);
    }
    Ok((org, aug, labels))
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// Trains a fresh model on `train` for `config.epochs` epochs.
pub fn train(config: TrainConfig, train: &[SyntheticSample], heldout: Option<&[SyntheticSample]>) -> Result<Trainer> {
    let mut t = Trainer::new(config)?;
    t.fit(train, heldout, None)?;
    Ok(t)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub config_hash: String,
    pub epoch: usize,
    pub params: Vec<(String, Tensor)>,
    pub adam_m: Vec<Tensor>,
    pub adam_v: Vec<Tensor>,
    pub adam_t: u64,
    pub bank: Option<StyleBank>,
    pub rng: RngState,
    pub logs: Vec<EpochLog>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    group: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    config: TrainConfig,
    config_hash: String,
    epoch: usize,
    adam_t: u64,
    rng: RngState,
    bank: Option<StyleBank>,
    logs: Vec<EpochLog>,
    tensors: Vec<TensorEntry>,
    data_bytes: u64,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut data = Vec::new();
    let mut tensors = Vec::new();
    let groups = [
        ("param", ckpt.params.iter().map(|(n, t)| (n.clone(), t)).collect::<Vec<_>>()),
        ("adam_m", ckpt.params.iter().map(|(n, _)| n.clone()).zip(&ckpt.adam_m).collect()),
        ("adam_v", ckpt.params.iter().map(|(n, _)| n.clone()).zip(&ckpt.adam_v).collect()),
    ];
    for (group, items) in groups {
        for (name, t) in items {
            tensors.push(TensorEntry {
                name,
                group: group.to_string(),
                shape: t.shape().to_vec(),
                offset: data.len() as u64,
            });
            for v in t.data() {
                data.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let manifest = Manifest {
        config: ckpt.config.clone(),
        config_hash: ckpt.config_hash.clone(),
        epoch: ckpt.epoch,
        adam_t: ckpt.adam_t,
        rng: ckpt.rng.clone(),
        bank: ckpt.bank.clone(),
        logs: ckpt.logs.clone(),
        tensors,
        data_bytes: data.len() as u64,
    };
    write_container(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &serde_json::to_vec(&manifest)?, &data)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let (manifest, start): (Manifest, usize) =
        read_preamble_and_header(&mut &bytes[..], CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let data = &bytes[start..];
    if data.len() as u64 != manifest.data_bytes {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            detail: format!("expected {} tensor bytes, found {}", manifest.data_bytes, data.len()),
        });
    }
    let mut params = Vec::new();
    let (mut adam_m, mut adam_v) = (Vec::new(), Vec::new());
    for e in &manifest.tensors {
        let count: usize = e.shape.iter().product();
        let from = e.offset as usize;
        let to = from + count * 8;
        if to > data.len() {
            return Err(Error::Format {
                offset: (start + from) as u64,
                detail: format!("tensor {} runs past end of data", e.name),
            });
        }
        let values = data[from..to]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();
        let t = Tensor::new(&e.shape, values)?;
        match e.group.as_str() {
            "param" => params.push((e.name.clone(), t)),
            "adam_m" => adam_m.push(t),
            "adam_v" => adam_v.push(t),
            other => {
                return Err(Error::Format {
                    offset: start as u64,
                    detail: format!("unknown tensor group {other}"),
                })
            }
        }
    }
    if adam_m.len() != params.len() || adam_v.len() != params.len() {
        return Err(Error::Format {
            offset: start as u64,
            detail: "optimizer moments do not match parameters".into(),
        });
    }
    Ok(Checkpoint {
        config: manifest.config,
        config_hash: manifest.config_hash,
        epoch: manifest.epoch,
        params,
        adam_m,
        adam_v,
        adam_t: manifest.adam_t,
        bank: manifest.bank,
        rng: manifest.rng,
        logs: manifest.logs,
    })
}
