use iadg_core::backbone::BackboneConfig;
use iadg_core::dkg::KernelMode;
use iadg_core::experiment::{component_arms, preset, run_ablation, run_limited_source, run_loo, whitening_arms, Arm, ConfigDelta, Report};
use iadg_core::report::{emit_outputs, metrics_csv, CSV_HEADER};
use iadg_core::style::StyleAugment;
use iadg_core::synthdata::{Dataset, DomainSpec};
use iadg_core::trainer::{train, TrainConfig};
use iadg_core::whitening::WhiteningMode;

fn tiny() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        batch_size: 4,
        bank_size: 3,
        model: BackboneConfig {
            image_size: 16,
            channels: vec![3, 4, 8, 8],
            kernel_mode: KernelMode::Both,
        },
        ..Default::default()
    }
}

fn data(domains: usize) -> Dataset {
    Dataset::generate(&DomainSpec::defaults(domains), 3, 16, 5).unwrap()
}

fn quiet(_: &iadg_core::experiment::RunResult) {}

fn ids(d: &Dataset) -> Vec<String> {
    d.domain_ids()
}

#[test]
fn loo_over_four_domains_gives_four_rows_and_a_mean() {
    let d = data(4);
    let report = run_loo(&tiny(), &d, &ids(&d), &[0], 2, &quiet).unwrap();
    assert_eq!(report.runs.len(), 4);
    let targets: Vec<&str> = report.runs.iter().map(|r| r.target.as_str()).collect();
    assert_eq!(targets, ["D1", "D2", "D3", "D4"]);
    for r in &report.runs {
        assert_eq!(r.sources.len(), 3);
        assert!(!r.sources.contains(&r.target));
    }
    let csv = metrics_csv(&report);
    assert_eq!(csv.lines().count(), 1 + 4 + 1);
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
}

#[test]
fn limited_source_trains_on_two_and_tests_each_remaining() {
    let d = data(4);
    let sources = vec!["D1".to_string(), "D3".to_string()];
    let report = run_limited_source(&tiny(), &d, &sources, &[0], 1, &quiet).unwrap();
    let targets: Vec<&str> = report.runs.iter().map(|r| r.target.as_str()).collect();
    assert_eq!(targets, ["D2", "D4"]);
    assert!(report.runs.iter().all(|r| r.sources == sources));
    assert!(run_limited_source(&tiny(), &d, &["D9".to_string()], &[0], 1, &quiet).is_err());
}

#[test]
fn missing_holdout_is_rejected() {
    let d = data(3);
    assert!(run_loo(&tiny(), &d, &["D7".to_string()], &[0], 1, &quiet).is_err());
    assert!(run_loo(&tiny(), &data(1), &["D1".to_string()], &[0], 1, &quiet).is_err());
}

#[test]
fn rerun_gives_identical_report_bytes_regardless_of_threads() {
    let d = data(3);
    let a = run_loo(&tiny(), &d, &ids(&d), &[0, 1], 1, &quiet).unwrap();
    let b = run_loo(&tiny(), &d, &ids(&d), &[0, 1], 3, &quiet).unwrap();
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fa = emit_outputs(&a, da.path()).unwrap();
    let fb = emit_outputs(&b, db.path()).unwrap();
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{x:?}");
    }
}

#[test]
fn ablation_outputs_have_expected_rows_and_valid_svg() {
    let d = data(3);
    let arms = component_arms();
    let holdouts = vec!["D1".to_string(), "D2".to_string()];
    let report = run_ablation(&tiny(), &arms, &d, &holdouts, &[0, 1], 2, &quiet).unwrap();
    assert_eq!(report.runs.len(), 4 * 2 * 2);
    let dir = tempfile::tempdir().unwrap();
    let files = emit_outputs(&report, dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 2 * 2 + 4);
    let json: Report = serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(json.summary, report.summary);
    let svgs: Vec<_> = files.iter().filter(|p| p.extension().map_or(false, |e| e == "svg")).collect();
    assert_eq!(svgs.len(), 8);
    for p in svgs {
        let text = std::fs::read_to_string(p).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{p:?}: {e}"));
        assert_eq!(doc.root_element().tag_name().name(), "svg");
    }
    for r in &report.runs {
        assert_eq!(r.roc.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.roc.last(), Some(&(1.0, 1.0)));
    }
}

#[test]
fn baseline_arm_equals_plain_baseline_training() {
    let d = data(3);
    let baseline = component_arms().remove(0);
    let report = run_ablation(&tiny(), &[baseline], &d, &["D2".to_string()], &[4], 1, &quiet).unwrap();
    let plain = TrainConfig {
        seed: 4,
        style: StyleAugment::Off,
        whitening: WhiteningMode::Off,
        model: BackboneConfig {
            kernel_mode: KernelMode::StaticOnly,
            ..tiny().model
        },
        ..tiny()
    };
    let (tr, te) = d.split_holdout("D2").unwrap();
    let t = train(plain, &tr, Some(&te)).unwrap();
    let (auc, rates, _) = iadg_core::experiment::score(&t, &te).unwrap();
    assert_eq!(report.runs[0].auc, auc);
    assert_eq!(report.runs[0].hter, rates.hter);
    assert_eq!(report.runs[0].logs, t.logs);
}

#[test]
fn arm_lists_match_the_documented_tables() {
    let names = |arms: Vec<Arm>| arms.into_iter().map(|a| a.name).collect::<Vec<_>>();
    assert_eq!(names(component_arms()), ["baseline", "dkg", "dkg_csa", "full"]);
    let w = whitening_arms(0.003);
    let ratios: Vec<f64> = w.iter().filter_map(|a| a.delta.k_spoof.map(|s| s / a.delta.k_real.unwrap_or(0.003))).collect();
    for (got, want) in ratios.iter().skip(ratios.len() - 5).zip([1.0, 0.8, 0.5, 0.2, 0.1]) {
        assert!((got - want).abs() < 1e-12);
    }
    assert_eq!(names(preset("kernels", 0.003).unwrap()), names(iadg_core::experiment::kernel_arms()));
    assert_eq!(preset("augment", 0.003).unwrap().len(), 2);
}

#[test]
fn matrix_json_round_trips() {
    let arms = vec![Arm::new(
        "custom",
        ConfigDelta {
            whitening: Some(WhiteningMode::Symmetric),
            epochs: Some(2),
            ..Default::default()
        },
    )];
    let text = serde_json::to_string(&arms).unwrap();
    assert_eq!(serde_json::from_str::<Vec<Arm>>(&text).unwrap(), arms);
    assert!(serde_json::from_str::<Vec<Arm>>(r#"[{"name":"x","delta":{"bogus":1}}]"#).is_err());
}
