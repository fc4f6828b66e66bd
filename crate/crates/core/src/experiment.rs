//! Leave-one-domain-out and ablation drivers.

use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dkg::KernelMode;
use crate::error::{Error, Result};
use crate::label::Class;
use crate::metrics::{auc, eer_hter, roc_points, ScoreSet};
use crate::style::StyleAugment;
use crate::synthdata::{Dataset, SyntheticSample};
use crate::trainer::{EpochLog, TrainConfig, Trainer};
use crate::whitening::WhiteningMode;

/// Overrides applied to a base config to form one arm.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigDelta {
    pub kernel_mode: Option<KernelMode>,
    pub style: Option<StyleAugment>,
    pub whitening: Option<WhiteningMode>,
    pub k_real: Option<f64>,
    pub k_spoof: Option<f64>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
}

impl ConfigDelta {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        if let Some(v) = self.kernel_mode {
            c.model.kernel_mode = v;
        }
        if let Some(v) = self.style {
            c.style = v;
        }
        if let Some(v) = self.whitening {
            c.whitening = v;
        }
        if let Some(v) = self.k_real {
            c.k_real = v;
        }
        if let Some(v) = self.k_spoof {
            c.k_spoof = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub delta: ConfigDelta,
}

impl Arm {
    pub fn new(name: &str, delta: ConfigDelta) -> Self {
        Self {
            name: name.to_string(),
            delta,
        }
    }
}

fn full_delta() -> ConfigDelta {
    ConfigDelta {
        kernel_mode: Some(KernelMode::Both),
        style: Some(StyleAugment::Csa),
        whitening: Some(WhiteningMode::Asymmetric),
        ..Default::default()
    }
}

/// Component ablation: baseline, +DKG, +DKG+CSA, full.
pub fn component_arms() -> Vec<Arm> {
    let off = ConfigDelta {
        kernel_mode: Some(KernelMode::StaticOnly),
        style: Some(StyleAugment::Off),
        whitening: Some(WhiteningMode::Off),
        ..Default::default()
    };
    vec![
        Arm::new("baseline", off.clone()),
        Arm::new(
            "dkg",
            ConfigDelta {
                kernel_mode: Some(KernelMode::Both),
                ..off.clone()
            },
        ),
        Arm::new(
            "dkg_csa",
            ConfigDelta {
                kernel_mode: Some(KernelMode::Both),
                style: Some(StyleAugment::Csa),
                ..off
            },
        ),
        Arm::new("full", full_delta()),
    ]
}

/// Ratios `k_spoof / k_real` compared for the asymmetric loss.
pub const SPOOF_RATIO_STEPS: [f64; 5] = [1.0, 0.8, 0.5, 0.2, 0.1];

/// Whitening variants inside the full framework: full instance whitening,
/// symmetric, and asymmetric at each ratio in [`SPOOF_RATIO_STEPS`].
pub fn whitening_arms(k_real: f64) -> Vec<Arm> {
    let mut arms = vec![
        Arm::new(
            "full_iw",
            ConfigDelta {
                whitening: Some(WhiteningMode::FullIw),
                ..full_delta()
            },
        ),
        Arm::new(
            "symmetric",
            ConfigDelta {
                whitening: Some(WhiteningMode::Symmetric),
                k_real: Some(k_real),
                k_spoof: Some(k_real),
                ..full_delta()
            },
        ),
    ];
    for r in SPOOF_RATIO_STEPS {
        arms.push(Arm::new(
            &format!("asym_1to{r}"),
            ConfigDelta {
                k_real: Some(k_real),
                k_spoof: Some(k_real * r),
                ..full_delta()
            },
        ));
    }
    arms
}

/// Kernel designs inside the full framework.
pub fn kernel_arms() -> Vec<Arm> {
    [("static_only", KernelMode::StaticOnly), ("dynamic_only", KernelMode::DynamicOnly), ("dkg", KernelMode::Both)]
        .into_iter()
        .map(|(n, m)| {
            Arm::new(
                n,
                ConfigDelta {
                    kernel_mode: Some(m),
                    ..full_delta()
                },
            )
        })
        .collect()
}

/// Style augmentation variants inside the full framework.
pub fn augment_arms() -> Vec<Arm> {
    [("random_mix", StyleAugment::RandomMix), ("csa", StyleAugment::Csa)]
        .into_iter()
        .map(|(n, s)| {
            Arm::new(
                n,
                ConfigDelta {
                    style: Some(s),
                    ..full_delta()
                },
            )
        })
        .collect()
}

/// Named arm lists accepted by the ablation runner.
pub fn preset(name: &str, k_real: f64) -> Result<Vec<Arm>> {
    Ok(match name {
        "components" => component_arms(),
        "whitening" => whitening_arms(k_real),
        "kernels" => kernel_arms(),
        "augment" => augment_arms(),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown arm preset {other:?}; expected components, whitening, kernels or augment"
            )))
        }
    })
}

/// Outcome of one training run evaluated on one target domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub arm: String,
    pub target: String,
    pub sources: Vec<String>,
    pub seed: u64,
    pub auc: f64,
    pub hter: f64,
    pub threshold: f64,
    pub roc: Vec<(f64, f64)>,
    pub logs: Vec<EpochLog>,
    #[serde(skip)]
    pub seconds: f64,
}

impl RunResult {
    /// Held-out masked covariance statistic after the first and last epoch.
    pub fn masked_sigma_trend(&self) -> Option<(f64, f64)> {
        let first = self.logs.first()?.heldout.as_ref()?.masked_sigma?;
        let last = self.logs.last()?.heldout.as_ref()?.masked_sigma?;
        Some((first, last))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub runs: usize,
    pub mean_auc: f64,
    pub mean_hter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub runs: Vec<RunResult>,
    pub summary: Vec<ArmSummary>,
}

impl Report {
    pub fn from_runs(runs: Vec<RunResult>) -> Self {
        let mut names: Vec<String> = Vec::new();
        for r in &runs {
            if !names.contains(&r.arm) {
                names.push(r.arm.clone());
            }
        }
        let summary = names
            .into_iter()
            .map(|arm| {
                let rs: Vec<&RunResult> = runs.iter().filter(|r| r.arm == arm).collect();
                let n = rs.len() as f64;
                ArmSummary {
                    runs: rs.len(),
                    mean_auc: rs.iter().map(|r| r.auc).sum::<f64>() / n,
                    mean_hter: rs.iter().map(|r| r.hter).sum::<f64>() / n,
                    arm,
                }
            })
            .collect();
        Self { runs, summary }
    }

    pub fn arm(&self, name: &str) -> Option<&ArmSummary> {
        self.summary.iter().find(|s| s.arm == name)
    }
}

/// One unit of work: an arm trained on `sources` and scored on `target`.
#[derive(Clone, Debug)]
pub struct Job {
    pub arm: Arm,
    pub config: TrainConfig,
    pub sources: Vec<String>,
    pub target: String,
}

/// Trains on the sources (monitoring the target) and scores the target.
pub fn run_job(job: &Job, dataset: &Dataset) -> Result<RunResult> {
    let start = Instant::now();
    let sources: Vec<&str> = job.sources.iter().map(String::as_str).collect();
    let (train, test) = dataset.split_sources(&sources, &job.target)?;
    let mut trainer = Trainer::new(job.config.clone())?;
    trainer.fit(&train, Some(&test), None)?;
    let (auc_v, rates, roc) = score(&trainer, &test)?;
    Ok(RunResult {
        arm: job.arm.name.clone(),
        target: job.target.clone(),
        sources: job.sources.clone(),
        seed: job.config.seed,
        auc: auc_v,
        hter: rates.hter,
        threshold: rates.threshold,
        roc,
        logs: trainer.logs.clone(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// AUC, error rates and ROC of a trained model on `test`.
pub fn score(trainer: &Trainer, test: &[SyntheticSample]) -> Result<(f64, crate::metrics::ErrorRates, Vec<(f64, f64)>)> {
    let scores = trainer.model.predict_samples(test, trainer.config.eval_chunk)?;
    let set = ScoreSet::new(scores, test.iter().map(|s| s.class).collect::<Vec<Class>>())?;
    Ok((auc(&set)?, eer_hter(&set)?, roc_points(&set)?))
}

/// Worker count from `IADG_THREADS`, else the available parallelism.
pub fn thread_budget() -> usize {
    std::env::var("IADG_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `jobs` on up to `threads` workers; results keep job order.
/// `progress` is called after each finished job.
pub fn run_jobs(
    jobs: &[Job],
    dataset: &Dataset,
    threads: usize,
    progress: &(dyn Fn(&RunResult) + Sync),
) -> Result<Vec<RunResult>> {
    let next = Mutex::new(0usize);
    let slots: Vec<Mutex<Option<Result<RunResult>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("job counter");
                    let i = *n;
                    *n += 1;
                    i
                };
                if i >= jobs.len() {
                    break;
                }
                let r = run_job(&jobs[i], dataset);
                if let Ok(res) = &r {
                    progress(res);
                }
                *slots[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("result slot").expect("every job ran"))
        .collect()
}

fn holdout_jobs(arm: &Arm, base: &TrainConfig, dataset: &Dataset, holdouts: &[String], seeds: &[u64]) -> Result<Vec<Job>> {
    let ids = dataset.domain_ids();
    if ids.len() < 2 {
        return Err(Error::InvalidArgument("leave-one-out needs at least two domains".into()));
    }
    let mut jobs = Vec::new();
    for h in holdouts {
        if !ids.contains(h) {
            return Err(Error::InvalidArgument(format!("unknown holdout domain {h:?}; have {ids:?}")));
        }
        for &seed in seeds {
            let mut config = arm.delta.apply(base);
            config.seed = seed;
            config.validate()?;
            jobs.push(Job {
                arm: arm.clone(),
                config,
                sources: ids.iter().filter(|d| *d != h).cloned().collect(),
                target: h.clone(),
            });
        }
    }
    Ok(jobs)
}

/// Leave-one-domain-out evaluation of `config` for each holdout and seed.
pub fn run_loo(
    config: &TrainConfig,
    dataset: &Dataset,
    holdouts: &[String],
    seeds: &[u64],
    threads: usize,
    progress: &(dyn Fn(&RunResult) + Sync),
) -> Result<Report> {
    let arm = Arm::new("loo", ConfigDelta::default());
    let jobs = holdout_jobs(&arm, config, dataset, holdouts, seeds)?;
    Ok(Report::from_runs(run_jobs(&jobs, dataset, threads, progress)?))
}

/// Limited-source protocol: train on `sources`, test on every other domain.
pub fn run_limited_source(
    config: &TrainConfig,
    dataset: &Dataset,
    sources: &[String],
    seeds: &[u64],
    threads: usize,
    progress: &(dyn Fn(&RunResult) + Sync),
) -> Result<Report> {
    let ids = dataset.domain_ids();
    for s in sources {
        if !ids.contains(s) {
            return Err(Error::InvalidArgument(format!("unknown source domain {s:?}; have {ids:?}")));
        }
    }
    let arm = Arm::new("limited", ConfigDelta::default());
    let mut jobs = Vec::new();
    for target in ids.iter().filter(|d| !sources.contains(d)) {
        for &seed in seeds {
            let mut c = config.clone();
            c.seed = seed;
            c.validate()?;
            jobs.push(Job {
                arm: arm.clone(),
                config: c,
                sources: sources.to_vec(),
                target: target.clone(),
            });
        }
    }
    if jobs.is_empty() {
        return Err(Error::InvalidArgument("no target domain left outside the sources".into()));
    }
    Ok(Report::from_runs(run_jobs(&jobs, dataset, threads, progress)?))
}

/// Every arm under the leave-one-out protocol with shared seeds.
pub fn run_ablation(
    base: &TrainConfig,
    arms: &[Arm],
    dataset: &Dataset,
    holdouts: &[String],
    seeds: &[u64],
    threads: usize,
    progress: &(dyn Fn(&RunResult) + Sync),
) -> Result<Report> {
    let mut jobs = Vec::new();
    for arm in arms {
        jobs.extend(holdout_jobs(arm, base, dataset, holdouts, seeds)?);
    }
    Ok(Report::from_runs(run_jobs(&jobs, dataset, threads, progress)?))
}
