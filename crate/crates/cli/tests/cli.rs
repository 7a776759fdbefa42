//! End-to-end CLI tests: subcommand flows, exit codes, and byte-level
//! determinism of outputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_perfusion")
}

fn tmp_root(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("perfusion-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn assert_code(out: &Output, expected: i32) {
    let code = out.status.code().unwrap_or(-1);
    assert_eq!(
        code,
        expected,
        "exit code {code}, expected {expected}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Small deterministic cohort shared by the flow tests.
fn synth_cohort(dir: &Path) {
    let out = run(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        "11",
        "--n-per-group",
        "4",
        "--effect-clusters",
        "1,3",
        "--effect-size",
        "0.15",
        "--noise-sigma",
        "1.5",
        "--dim",
        "16",
        "--set",
        "k=8",
        "--set",
        "age_bins=20-60",
    ]);
    assert_code(&out, 0);
}

#[test]
fn synth_writes_volumes_and_manifest() {
    let root = tmp_root("synth");
    synth_cohort(&root.join("data"));
    assert!(root.join("data/manifest.csv").exists());
    let count = std::fs::read_dir(root.join("data"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().to_string_lossy().ends_with(".nii.gz"))
        .count();
    assert_eq!(count, 8);
}

#[test]
fn segment_produces_labels_and_sidecar_with_partition() {
    let root = tmp_root("segment");
    synth_cohort(&root.join("data"));
    let vol = root.join("data/sub-001.nii.gz");
    let out_dir = root.join("seg");
    let out = run(&[
        "segment",
        vol.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--set",
        "k=8",
        "--seed",
        "11",
    ]);
    assert_code(&out, 0);
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("sub-001_labels.json")).unwrap())
            .unwrap();
    let sizes: Vec<u64> = sidecar["sizes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(sizes.len(), 8);
    let masked = sidecar["masked_voxels"].as_u64().unwrap();
    assert_eq!(sizes.iter().sum::<u64>(), masked);

    // Same inputs twice: byte-identical outputs.
    let out_dir2 = root.join("seg2");
    let out = run(&[
        "segment",
        vol.to_str().unwrap(),
        "--out",
        out_dir2.to_str().unwrap(),
        "--set",
        "k=8",
        "--seed",
        "11",
    ]);
    assert_code(&out, 0);
    assert_eq!(
        std::fs::read(out_dir.join("sub-001_labels.nii.gz")).unwrap(),
        std::fs::read(out_dir2.join("sub-001_labels.nii.gz")).unwrap()
    );
}

#[test]
fn invalid_k_exits_with_validation_code_naming_the_key() {
    let root = tmp_root("badk");
    synth_cohort(&root.join("data"));
    let out = run(&[
        "segment",
        root.join("data/sub-001.nii.gz").to_str().unwrap(),
        "--out",
        root.join("seg").to_str().unwrap(),
        "--set",
        "k=0",
    ]);
    assert_code(&out, 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains('k'), "stderr should name the key: {stderr}");
}

#[test]
fn missing_volume_aborts_with_path_and_runtime_code() {
    let root = tmp_root("missing");
    std::fs::create_dir_all(root.join("data")).unwrap();
    std::fs::write(
        root.join("data/manifest.csv"),
        "id,age,sex,path\nsub-1,30,F,not_there.nii.gz\nsub-2,40,M,also_missing.nii.gz\n",
    )
    .unwrap();
    let out_dir = root.join("run");
    let out = run(&[
        "pipeline",
        root.join("data/manifest.csv").to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("not_there.nii.gz"), "stderr: {stderr}");
    assert!(out_dir.join("FAILED").exists(), "FAILED marker missing");
}

#[test]
fn bad_manifest_sex_token_is_a_validation_error() {
    let root = tmp_root("badsex");
    std::fs::write(
        root.join("manifest.csv"),
        "id,age,sex,path\nsub-1,30,female,x.nii.gz\n",
    )
    .unwrap();
    let out = run(&[
        "features",
        root.join("manifest.csv").to_str().unwrap(),
        "--out",
        root.join("f").to_str().unwrap(),
    ]);
    assert_code(&out, 2);
}

#[test]
fn full_flow_features_stats_classify_normfit_score_plot() {
    let root = tmp_root("flow");
    let data = root.join("data");
    synth_cohort(&data);

    let feat = root.join("features");
    let out = run(&[
        "features",
        data.join("manifest.csv").to_str().unwrap(),
        "--out",
        feat.to_str().unwrap(),
        "--set",
        "k=8",
        "--seed",
        "11",
    ]);
    assert_code(&out, 0);
    assert!(feat.join("features.csv").exists());
    assert!(feat.join("feature_schema.json").exists());
    assert!(feat.join("diagnostics.json").exists());

    let stats_dir = root.join("stats");
    let out = run(&[
        "stats",
        feat.join("features.csv").to_str().unwrap(),
        "--out",
        stats_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let stats_csv = std::fs::read_to_string(stats_dir.join("stats.csv")).unwrap();
    assert!(stats_csv.starts_with("cluster_id,F,p_raw,p_bonf,significant"));
    assert_eq!(stats_csv.lines().count(), 9); // header + 8 clusters
    assert!(stats_dir.join("stats_summary.json").exists());
    assert!(stats_dir.join("stats_diagnostics.csv").exists());

    let clf = root.join("clf");
    let out = run(&[
        "classify",
        feat.join("features.csv").to_str().unwrap(),
        "--logistic",
        "--compare-reference",
        "--out",
        clf.to_str().unwrap(),
        "--set",
        "folds=2",
        "--seed",
        "11",
    ]);
    assert_code(&out, 0);
    assert!(clf.join("cv_report.json").exists());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("reference"), "reference comparison missing: {stdout}");

    let norm = root.join("norm");
    let out = run(&[
        "normfit",
        feat.to_str().unwrap(),
        "--out",
        norm.to_str().unwrap(),
        "--set",
        "age_bins=20-60",
    ]);
    assert_code(&out, 0);
    assert!(norm.join("normative.json").exists());
    assert!(norm.join("trend.csv").exists());

    let score = root.join("score");
    let out = run(&[
        "score",
        feat.to_str().unwrap(),
        "--out",
        score.to_str().unwrap(),
        "--set",
        "age_bins=20-60",
    ]);
    assert_code(&out, 0);
    let vrs = std::fs::read_to_string(score.join("vrs.csv")).unwrap();
    assert!(vrs.starts_with("id,age,sex,cbf,lower_bound,status,deficit,vrs"));
    assert_eq!(vrs.lines().count(), 9);

    let plots = root.join("plots");
    let out = run(&[
        "plot",
        norm.join("trend.csv").to_str().unwrap(),
        "--out",
        plots.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let svg = std::fs::read_to_string(plots.join("trend.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn plot_rejects_empty_trend_file() {
    let root = tmp_root("emptyplot");
    std::fs::write(root.join("trend.csv"), "bin_lo,bin_hi,sex,mean,std,n\n").unwrap();
    let out = run(&[
        "plot",
        root.join("trend.csv").to_str().unwrap(),
        "--out",
        root.join("p").to_str().unwrap(),
    ]);
    assert_code(&out, 2);
}

#[test]
fn pipeline_artifacts_are_byte_identical_across_jobs_settings() {
    let root = tmp_root("pipedet");
    let data = root.join("data");
    synth_cohort(&data);
    let common = [
        "--seed",
        "11",
        "--set",
        "k=8",
        "--set",
        "epochs=3",
        "--set",
        "folds=2",
        "--set",
        "age_bins=20-60",
    ];
    let manifest = data.join("manifest.csv");
    for (dir, jobs) in [("run1", "1"), ("run8", "8")] {
        let out_dir = root.join(dir);
        let mut args = vec![
            "pipeline",
            manifest.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ];
        args.extend_from_slice(&common);
        args.extend_from_slice(&["--jobs", jobs]);
        let out = run(&args);
        assert_code(&out, 0);
    }
    for name in ["features.csv", "stats.csv", "cv_report.json", "vrs.csv", "trend.svg"] {
        assert_eq!(
            std::fs::read(root.join("run1").join(name)).unwrap(),
            std::fs::read(root.join("run8").join(name)).unwrap(),
            "{name} differs between --jobs 1 and --jobs 8"
        );
    }
}

#[test]
fn config_file_drives_the_run() {
    let root = tmp_root("config");
    let data = root.join("data");
    synth_cohort(&data);
    std::fs::write(
        root.join("run.conf"),
        "k = 8\nfolds = 2\nepochs = 2\nage_bins = 20-60\nseed = 11\n",
    )
    .unwrap();
    let out = run(&[
        "pipeline",
        data.join("manifest.csv").to_str().unwrap(),
        "--config",
        root.join("run.conf").to_str().unwrap(),
        "--out",
        root.join("run").to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(root.join("run/run_manifest.json").exists());

    // Unknown config keys are validation failures.
    std::fs::write(root.join("bad.conf"), "kk = 8\n").unwrap();
    let out = run(&[
        "pipeline",
        data.join("manifest.csv").to_str().unwrap(),
        "--config",
        root.join("bad.conf").to_str().unwrap(),
        "--out",
        root.join("run2").to_str().unwrap(),
    ]);
    assert_code(&out, 2);
}
