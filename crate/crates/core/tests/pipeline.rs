use std::path::{Path, PathBuf};

use causal_mediation::pipeline::{build_report, run_pipeline, Analysis, AnalysisConfig, RunOptions, Stage};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn config() -> AnalysisConfig {
    AnalysisConfig::from_file(&fixtures().join("synthetic_analysis.toml")).unwrap()
}

fn opts(threads: usize) -> RunOptions {
    RunOptions {
        threads: Some(threads),
        base_dir: fixtures(),
    }
}

#[test]
fn report_has_table2_shape() {
    let bundle = build_report(&config(), &opts(4)).unwrap();
    let r = &bundle.report;
    assert_eq!(r.report_version, 1);
    assert_eq!(r.effects_for(Analysis::CompleteCase).len(), 12);
    assert_eq!(r.effects_for(Analysis::MultipleImputation).len(), 12);
    for e in &r.effects {
        assert!(e.ci_lo <= e.or && e.or <= e.ci_hi, "{e:?}");
        assert!(e.evalue.evalue_point >= 1.0);
    }
    let names: Vec<&str> = bundle.files.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        ["report.json", "forest_complete_case.csv", "forest_multiple_imputation.csv", "table1.csv", "overlap.csv", "smd.csv"]
    );
    let json = r.to_json();
    assert!(!json.contains(env!("CARGO_MANIFEST_DIR")));
}

#[test]
fn writes_outputs_and_cleans_up_on_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config();
    cfg.output_dir = dir.path().join("out");
    run_pipeline(&cfg, &opts(2)).unwrap();
    assert!(cfg.output_dir.join("report.json").exists());
    assert!(cfg.output_dir.join("smd.csv").exists());

    let mut bad = config();
    bad.output_dir = dir.path().join("bad");
    bad.input = PathBuf::from("does_not_exist.csv");
    let err = run_pipeline(&bad, &opts(2)).unwrap_err();
    assert_eq!(err.stage, Stage::Ingest);
    assert!(!bad.output_dir.exists());
}
