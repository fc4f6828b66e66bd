use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use iadg_core::diagnostics::grad_check_suite;
use iadg_core::experiment::{self, Arm, Report, RunResult};
use iadg_core::report::{emit_outputs, loss_svg, roc_svg, summary_table};
use iadg_core::synthdata::{read_dataset, write_dataset, Dataset, DomainSpec};
use iadg_core::trainer::{load_checkpoint, save_checkpoint, EpochLog, TrainConfig, Trainer};

/// File name used when `--data` points at a directory.
const DATASET_FILE: &str = "dataset.iadg";

#[derive(Parser)]
#[command(name = "iadg", version, about = "Instance-aware domain generalization for face anti-spoofing on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-domain dataset.
    GenData {
        #[arg(long, default_value_t = 4)]
        domains: usize,
        #[arg(long, default_value_t = 32)]
        per_class: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on every domain except the holdout.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        holdout: String,
        #[arg(long)]
        out: PathBuf,
        /// Continue from `<out>/last.ckpt` when it exists.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on a domain.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        holdout: String,
        /// Also write metrics.json and roc.svg here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leave-one-out evaluation, or the limited-source protocol with `--sources`.
    Loo {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Holdout domains (default: all).
        #[arg(long, value_delimiter = ',')]
        holdouts: Vec<String>,
        /// Train on these domains and test on each remaining one.
        #[arg(long, value_delimiter = ',')]
        sources: Vec<String>,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every arm of an ablation matrix under leave-one-out.
    Ablate {
        /// JSON list of `{"name": ..., "delta": {...}}` arms.
        #[arg(long, conflicts_with = "preset")]
        matrix: Option<PathBuf>,
        /// components | whitening | kernels | augment
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        holdouts: Vec<String>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks of every layer and loss.
    GradCheck {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Re-render plots from a run or report directory.
    Plot {
        #[arg(long)]
        run: PathBuf,
    },
}

fn dataset_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(DATASET_FILE)
    } else {
        p.to_path_buf()
    }
}

fn load_data(p: &Path) -> Result<Dataset> {
    let path = dataset_path(p);
    read_dataset(&path).with_context(|| format!("reading dataset {}", path.display()))
}

fn load_config(p: Option<&Path>) -> Result<TrainConfig> {
    let config = match p {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

fn check_image_size(config: &TrainConfig, data: &Dataset) -> Result<()> {
    if config.model.image_size != data.size {
        bail!(
            "config expects {}px images but the dataset has {}px; set model.image_size",
            config.model.image_size,
            data.size
        );
    }
    Ok(())
}

fn print_progress(r: &RunResult) {
    eprintln!(
        "{} target={} seed={} auc={:.4} hter={:.4} ({:.1}s)",
        r.arm, r.target, r.seed, r.auc, r.hter, r.seconds
    );
}

fn finish_report(report: &Report, out: &Path) -> Result<()> {
    for p in emit_outputs(report, out)? {
        eprintln!("wrote {}", p.display());
    }
    print!("{}", summary_table(report));
    Ok(())
}

fn seed_list(n: u64) -> Vec<u64> {
    (0..n).collect()
}

fn print_log(l: &EpochLog) {
    let held = l
        .heldout
        .as_ref()
        .map(|h| {
            let sigma = h.masked_sigma.map_or(String::new(), |s| format!(" masked|Σ| {s:.4}"));
            format!(" | held-out auc {:.4} hter {:.4}{sigma}", h.auc, h.hter)
        })
        .unwrap_or_default();
    eprintln!(
        "epoch {:3} loss {:.4} (cls {:.4} dep {:.4} aiaw {:.4}){held}",
        l.epoch, l.loss_total, l.loss_cls, l.loss_dep, l.loss_whitening
    );
}

fn train(config: Option<&Path>, data: &Path, holdout: &str, out: &Path, resume: bool) -> Result<()> {
    let config = load_config(config)?;
    let dataset = load_data(data)?;
    check_image_size(&config, &dataset)?;
    let (train, test) = dataset.split_holdout(holdout)?;
    fs::create_dir_all(out)?;
    let last = out.join("last.ckpt");
    let mut trainer = if resume && last.exists() {
        let t = Trainer::from_checkpoint(load_checkpoint(&last)?, Some(config))?;
        eprintln!("resuming after epoch {}", t.epoch);
        t
    } else {
        Trainer::new(config)?
    };
    while trainer.epoch < trainer.config.epochs {
        let log = trainer.run_epoch(&train, Some(&test))?;
        print_log(&log);
        save_checkpoint(&last, &trainer.checkpoint())?;
    }
    save_checkpoint(&out.join("final.ckpt"), &trainer.checkpoint())?;
    fs::write(out.join("log.json"), serde_json::to_string_pretty(&trainer.logs)? + "\n")?;
    fs::write(out.join("loss.svg"), loss_svg("Training loss", &[(holdout.to_string(), &trainer.logs)]))?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn eval(ckpt: &Path, data: &Path, holdout: &str, out: Option<&Path>) -> Result<()> {
    let trainer = Trainer::from_checkpoint(load_checkpoint(ckpt)?, None)?;
    let dataset = load_data(data)?;
    let test = dataset.in_domains(&[holdout]);
    if test.is_empty() {
        bail!("domain {holdout:?} not in dataset; have {:?}", dataset.domain_ids());
    }
    let (auc, rates, roc) = experiment::score(&trainer, &test)?;
    let summary = serde_json::json!({
        "target": holdout,
        "samples": test.len(),
        "auc": auc,
        "eer": rates.eer,
        "hter": rates.hter,
        "threshold": rates.threshold,
        "far": rates.far,
        "frr": rates.frr,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut full = summary;
        full["roc"] = serde_json::to_value(&roc)?;
        fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&full)? + "\n")?;
        fs::write(dir.join("roc.svg"), roc_svg(&format!("ROC: {holdout}"), &[(holdout.to_string(), roc)]))?;
    }
    Ok(())
}

fn all_holdouts(given: Vec<String>, dataset: &Dataset) -> Vec<String> {
    if given.is_empty() {
        dataset.domain_ids()
    } else {
        given
    }
}

fn load_arms(matrix: Option<&Path>, preset: Option<&str>, k_real: f64) -> Result<Vec<Arm>> {
    match (matrix, preset) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading matrix {}", p.display()))?;
            let arms: Vec<Arm> = serde_json::from_str(&text).with_context(|| format!("parsing matrix {}", p.display()))?;
            if arms.is_empty() {
                bail!("ablation matrix is empty");
            }
            Ok(arms)
        }
        (None, Some(name)) => Ok(experiment::preset(name, k_real)?),
        (None, None) => bail!("give --matrix or --preset"),
    }
}

fn plot(run: &Path) -> Result<()> {
    let metrics = run.join("metrics.json");
    if metrics.exists() {
        let text = fs::read_to_string(&metrics)?;
        if let Ok(report) = serde_json::from_str::<Report>(&text) {
            return finish_report(&report, run);
        }
    }
    let ckpt = ["final.ckpt", "last.ckpt"].iter().map(|n| run.join(n)).find(|p| p.exists());
    let Some(ckpt) = ckpt else {
        bail!("{} holds neither a report metrics.json nor a checkpoint", run.display());
    };
    let c = load_checkpoint(&ckpt)?;
    let path = run.join("loss.svg");
    fs::write(&path, loss_svg("Training loss", &[("run".to_string(), &c.logs)]))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData {
            domains,
            per_class,
            size,
            seed,
            out,
        } => {
            let dataset = Dataset::generate(&DomainSpec::defaults(domains), per_class, size, seed)?;
            fs::create_dir_all(&out)?;
            let path = out.join(DATASET_FILE);
            write_dataset(&path, &dataset)?;
            eprintln!("wrote {} samples to {}", dataset.samples.len(), path.display());
        }
        Command::Train {
            config,
            data,
            holdout,
            out,
            resume,
        } => train(config.as_deref(), &data, &holdout, &out, resume)?,
        Command::Eval { ckpt, data, holdout, out } => eval(&ckpt, &data, &holdout, out.as_deref())?,
        Command::Loo {
            config,
            data,
            holdouts,
            sources,
            seeds,
            out,
        } => {
            let config = load_config(config.as_deref())?;
            let dataset = load_data(&data)?;
            check_image_size(&config, &dataset)?;
            let threads = experiment::thread_budget();
            let report = if sources.is_empty() {
                let holdouts = all_holdouts(holdouts, &dataset);
                experiment::run_loo(&config, &dataset, &holdouts, &seed_list(seeds), threads, &print_progress)?
            } else {
                if !holdouts.is_empty() {
                    bail!("--holdouts and --sources are exclusive");
                }
                experiment::run_limited_source(&config, &dataset, &sources, &seed_list(seeds), threads, &print_progress)?
            };
            finish_report(&report, &out)?;
        }
        Command::Ablate {
            matrix,
            preset,
            config,
            data,
            holdouts,
            seeds,
            out,
        } => {
            let config = load_config(config.as_deref())?;
            let arms = load_arms(matrix.as_deref(), preset.as_deref(), config.k_real)?;
            let dataset = load_data(&data)?;
            check_image_size(&config, &dataset)?;
            let holdouts = all_holdouts(holdouts, &dataset);
            let threads = experiment::thread_budget();
            let report = experiment::run_ablation(&config, &arms, &dataset, &holdouts, &seed_list(seeds), threads, &print_progress)?;
            finish_report(&report, &out)?;
        }
        Command::GradCheck { seeds, tolerance } => {
            let records = grad_check_suite(&seed_list(seeds))?;
            let mut failed = 0;
            for r in &records {
                let ok = r.max_rel_err < tolerance;
                if !ok {
                    failed += 1;
                }
                println!("{:<24} seed {} max_rel_err {:.3e} {}", r.name, r.seed, r.max_rel_err, if ok { "ok" } else { "FAIL" });
            }
            if failed > 0 {
                bail!("{failed} of {} gradient checks exceeded {tolerance:e}", records.len());
            }
        }
        Command::Plot { run } => plot(&run)?,
    }
    Ok(())
}
