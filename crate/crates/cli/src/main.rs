//! Command line interface for the perfusion analytics toolkit.
//!
//! Subcommands mirror the pipeline stages (`synth`, `segment`, `features`,
//! `stats`, `classify`, `normfit`, `score`, `pipeline`, `plot`). Exit codes:
//! 0 on success, 2 for validation/configuration problems, 1 for runtime
//! failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use perfusion::classify::{self, ClassifierKind};
use perfusion::error::Error;
use perfusion::features;
use perfusion::manifest::{load_manifest, Sex};
use perfusion::nifti;
use perfusion::pipeline::{
    self, apply_config_key, parse_config, ParticipantDiagnostics, RunConfig, REFERENCE_BENCHMARKS,
};
use perfusion::slic;
use perfusion::stats;
use perfusion::synth::{self, CohortSpec, PhantomSpec};
use perfusion::volume::{auto_mask, normalize_intensity};
use perfusion::vrs::{self, MeanWeighting};

#[derive(Parser)]
#[command(
    name = "perfusion",
    version,
    about = "Supervoxel-based CBF analytics: segmentation, regional features, group statistics, sex classification, and vascular risk scoring"
)]
struct Cli {
    /// Config file with `key = value` lines (see README for the key list).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Random seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for per-participant parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Override one config key, e.g. --set k=50 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort of phantom volumes plus manifest.
    Synth(SynthArgs),
    /// Segment one volume into supervoxels.
    Segment(SegmentArgs),
    /// Extract the feature matrix for a cohort.
    Features(ManifestArgs),
    /// Per-cluster sex ANOVA with Bonferroni correction.
    Stats(StatsArgs),
    /// Stratified cross-validated sex classification.
    Classify(ClassifyArgs),
    /// Fit the age/sex normative table.
    Normfit(FeaturesDirArgs),
    /// Compute vascular risk scores against the normative table.
    Score(FeaturesDirArgs),
    /// Run the whole pipeline.
    Pipeline(ManifestArgs),
    /// Render an age-trend CSV as an SVG chart.
    Plot(PlotArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Participants per (sex, age-bin) cell.
    #[arg(long, default_value_t = 5)]
    n_per_group: usize,
    /// Male/female totals instead of per-cell counts, e.g. 89,97.
    #[arg(long, value_name = "M,F")]
    totals: Option<String>,
    /// Comma-separated effect cluster indices.
    #[arg(long, default_value = "")]
    effect_clusters: String,
    /// Fractional female CBF uplift inside the effect clusters.
    #[arg(long, default_value_t = 0.0)]
    effect_size: f64,
    /// Fractional CBF decline per year of age.
    #[arg(long, default_value_t = 0.0)]
    age_slope: f64,
    /// Phantom edge length in voxels.
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 60.0)]
    base_mean: f64,
    #[arg(long, default_value_t = 2.5)]
    radial_decay: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
}

#[derive(Args)]
struct SegmentArgs {
    /// Input volume (.nii or .nii.gz).
    volume: PathBuf,
    /// Optional brain mask volume (nonzero = inside).
    #[arg(long)]
    mask: Option<PathBuf>,
}

#[derive(Args)]
struct ManifestArgs {
    /// Cohort manifest CSV (id,age,sex,path).
    manifest: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    /// Feature CSV produced by `features` or `pipeline`.
    features: PathBuf,
    /// Atlas label volume (int NIfTI) for ROI reporting.
    #[arg(long)]
    atlas: Option<PathBuf>,
    /// Lookup table CSV (roi_id,name) for the atlas.
    #[arg(long)]
    atlas_labels: Option<PathBuf>,
    /// Label volume from `segment` matching the atlas grid.
    #[arg(long)]
    labeling: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Feature CSV produced by `features` or `pipeline`.
    features: PathBuf,
    /// Train the logistic baseline instead of the conv net.
    #[arg(long)]
    logistic: bool,
    /// Print published reference benchmarks beside our metrics.
    #[arg(long)]
    compare_reference: bool,
}

#[derive(Args)]
struct FeaturesDirArgs {
    /// Directory holding features.csv and diagnostics.json from a prior run.
    features_dir: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Age-trend CSV (bin_lo,bin_hi,sex,mean,std,n).
    trend: PathBuf,
    #[arg(long, default_value = "Mean CBF by age group")]
    title: String,
}

fn load_run_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    for entry in &cli.overrides {
        let (key, value) = entry
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("--set '{entry}' is not KEY=VALUE")))?;
        apply_config_key(&mut cfg, key.trim(), value.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn is_validation_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_)
            | Error::Parse(_)
            | Error::InvalidK(_)
            | Error::BinCoverage(_)
            | Error::DegenerateInput(_)
            | Error::LengthMismatch { .. }
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_run_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot build thread pool: {e}");
            return ExitCode::from(1);
        }
    };

    match pool.install(|| run(&cli, &cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if is_validation_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: &Cli, cfg: &RunConfig) -> Result<(), Error> {
    match &cli.command {
        Command::Synth(args) => cmd_synth(args, cfg, &cli.out),
        Command::Segment(args) => cmd_segment(args, cfg, &cli.out),
        Command::Features(args) => cmd_features(args, cfg, &cli.out),
        Command::Stats(args) => cmd_stats(args, cfg, &cli.out),
        Command::Classify(args) => cmd_classify(args, cfg, &cli.out),
        Command::Normfit(args) => cmd_normfit(args, cfg, &cli.out),
        Command::Score(args) => cmd_score(args, cfg, &cli.out),
        Command::Pipeline(args) => cmd_pipeline(args, cfg, &cli.out),
        Command::Plot(args) => cmd_plot(args, &cli.out),
    }
}

fn parse_cluster_list(text: &str) -> Result<Vec<usize>, Error> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("'{t}' is not a cluster index")))
        })
        .collect()
}

fn cmd_synth(args: &SynthArgs, cfg: &RunConfig, out: &Path) -> Result<(), Error> {
    let phantom = PhantomSpec {
        dims: (args.dim, args.dim, args.dim),
        spacing: (1.0, 1.0, 1.0),
        base_mean: args.base_mean,
        radial_decay: args.radial_decay,
        noise_sigma: args.noise_sigma,
        seed: cfg.seed,
    };
    let effect = parse_cluster_list(&args.effect_clusters)?;
    let spec = match &args.totals {
        Some(totals) => {
            let (m, f) = totals
                .split_once(',')
                .ok_or_else(|| Error::Parse("--totals expects 'M,F'".into()))?;
            let m: usize = m.trim().parse().map_err(|_| Error::Parse("bad male total".into()))?;
            let f: usize = f.trim().parse().map_err(|_| Error::Parse("bad female total".into()))?;
            CohortSpec::with_totals(m, f, cfg.age_bins.clone(), effect, args.effect_size, args.age_slope, cfg.seed)
        }
        None => CohortSpec::balanced(
            args.n_per_group,
            cfg.age_bins.clone(),
            effect,
            args.effect_size,
            args.age_slope,
            cfg.seed,
        ),
    };
    let cohort = synth::generate_cohort(&spec, &phantom, &cfg.slic)?;
    let manifest_path = synth::write_cohort(&cohort, out)?;
    println!("wrote {} volumes and {}", cohort.manifest.len(), manifest_path.display());
    Ok(())
}

fn cmd_segment(args: &SegmentArgs, cfg: &RunConfig, out: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(out)?;
    let (volume, report) = nifti::load_nifti_with_report(&args.volume)?;
    if report.nan_replaced > 0 {
        println!("replaced {} non-finite voxels with 0", report.nan_replaced);
    }
    let mask = match &args.mask {
        Some(path) => {
            let mv = nifti::load_nifti(path)?;
            if mv.dims != volume.dims {
                return Err(Error::ShapeMismatch(format!(
                    "mask dims {:?} vs volume dims {:?}",
                    mv.dims, volume.dims
                )));
            }
            perfusion::volume::BrainMask::new(mv.dims, mv.data.iter().map(|&x| x != 0.0).collect())?
        }
        None => auto_mask(&volume, cfg.mask_fraction)?,
    };
    let input = if cfg.slic_on_raw {
        volume.clone()
    } else {
        normalize_intensity(&volume, &mask, cfg.normalize)?
    };
    let labeling = slic::run_slic(&input, &mask, &cfg.slic)?;
    let stem = args
        .volume
        .file_stem()
        .map(|s| s.to_string_lossy().replace(".nii", ""))
        .unwrap_or_else(|| "volume".into());
    pipeline::save_labeling(
        &labeling,
        volume.spacing,
        &cfg.slic,
        &out.join(format!("{stem}_labels.nii.gz")),
        &out.join(format!("{stem}_labels.json")),
    )?;
    println!(
        "segmented {} voxels into {} clusters ({} empty)",
        labeling.labeled_count(),
        labeling.k(),
        labeling.sizes.iter().filter(|&&s| s == 0).count()
    );
    Ok(())
}

/// Shared front half of `features`: load, mask, normalize, segment, extract.
fn build_features(
    manifest_path: &Path,
    cfg: &RunConfig,
) -> Result<
    (
        perfusion::manifest::CohortManifest,
        features::FeatureMatrix,
        Vec<pipeline::ParticipantArtifacts>,
    ),
    Error,
> {
    let manifest = load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut artifacts = Vec::with_capacity(manifest.len());
    for row in &manifest.rows {
        let path = pipeline::resolve_volume_path(base, &row.volume_path);
        if !path.exists() {
            return Err(Error::MissingVolume(format!(
                "{} (looked for {})",
                row.id,
                path.display()
            )));
        }
        artifacts.push(pipeline::process_participant(&row.id, &path, cfg)?);
    }
    let labelings: Vec<_> = artifacts.iter().map(|a| a.labeling.clone()).collect();
    let volumes: Vec<_> = artifacts.iter().map(|a| a.raw.clone()).collect();
    let masks: Vec<_> = artifacts.iter().map(|a| a.mask.clone()).collect();
    let fm = features::build_feature_matrix(&manifest, &labelings, &volumes, &masks, &cfg.margins_mm)?;
    Ok((manifest, fm, artifacts))
}

fn write_diagnostics(
    out: &Path,
    manifest: &perfusion::manifest::CohortManifest,
    fm: &features::FeatureMatrix,
    artifacts: &[pipeline::ParticipantArtifacts],
) -> Result<(), Error> {
    let diagnostics: Vec<ParticipantDiagnostics> = artifacts
        .iter()
        .zip(&fm.rows)
        .zip(&manifest.rows)
        .map(|((art, row), meta)| ParticipantDiagnostics {
            id: art.id.clone(),
            age: meta.age,
            sex: meta.sex,
            mask_voxels: art.mask.count(),
            nan_replaced: art.nan_replaced,
            mean_cbf_voxel_weighted: art.raw_mean_voxel_weighted,
            mean_cbf_cluster_mean: art.raw_mean_cluster_mean,
            cluster_sizes: art.labeling.sizes.clone(),
            empty_shell_count: row.shell_empty.iter().flatten().filter(|&&e| e).count(),
        })
        .collect();
    std::fs::write(
        out.join("diagnostics.json"),
        serde_json::to_string_pretty(&diagnostics).map_err(|e| Error::Parse(e.to_string()))?,
    )?;
    Ok(())
}

fn cmd_features(args: &ManifestArgs, cfg: &RunConfig, out: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(out)?;
    let (manifest, fm, artifacts) = build_features(&args.manifest, cfg)?;
    features::save_feature_csv(&fm, &out.join("features.csv"))?;
    let schema = serde_json::json!({
        "k": fm.k,
        "margins_mm": fm.margins_mm,
        "slic": cfg.slic,
        "normalize": cfg.normalize,
    });
    std::fs::write(
        out.join("feature_schema.json"),
        serde_json::to_string_pretty(&schema).map_err(|e| Error::Parse(e.to_string()))?,
    )?;
    write_diagnostics(out, &manifest, &fm, &artifacts)?;
    let total_nan: usize = artifacts.iter().map(|a| a.nan_replaced).sum();
    if total_nan > 0 {
        println!("replaced {total_nan} non-finite voxels with 0 across the cohort");
    }
    println!(
        "wrote feature matrix: {} participants x ({} clusters + {} shell columns)",
        fm.rows.len(),
        fm.k,
        fm.k * fm.margins_mm.len()
    );
    Ok(())
}

fn cmd_stats(args: &StatsArgs, cfg: &RunConfig, out: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(out)?;
    let fm = features::load_feature_csv(&args.features)?;
    let mut male = vec![Vec::new(); fm.k];
    let mut female = vec![Vec::new(); fm.k];
    for (row, &sex) in fm.rows.iter().zip(&fm.sexes) {
        for c in 0..fm.k {
            match sex {
                Sex::M => male[c].push(row.cluster_means[c]),
                Sex::F => female[c].push(row.cluster_means[c]),
            }
        }
    }
    let results = stats::cluster_sex_anova(&male, &female, cfg.alpha)?;
    std::fs::write(out.join("stats.csv"), stats::anova_report_csv(&results))?;
    std::fs::write(
        out.join("stats_diagnostics.csv"),
        stats::cluster_diagnostics_csv(&male, &female, &results),
    )?;
    let significant: Vec<usize> = results
        .iter()
        .filter(|r| r.significant && !r.degenerate)
        .map(|r| r.cluster_id)
        .collect();
    let summary = serde_json::json!({
        "alpha": cfg.alpha,
        "n_clusters": fm.k,
        "n_significant": significant.len(),
        "significant_clusters": significant,
    });
    std::fs::write(
        out.join("stats_summary.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Parse(e.to_string()))?,
    )?;
    println!(
        "{} of {} clusters significant after Bonferroni at alpha {}",
        significant.len(),
        fm.k,
        cfg.alpha
    );

    if let (Some(atlas_path), Some(labels_path), Some(labeling_path)) =
        (&args.atlas, &args.atlas_labels, &args.labeling)
    {
        let atlas_vol = nifti::load_nifti(atlas_path)?;
        let names = perfusion::atlas::load_lookup(labels_path)?;
        let atlas = perfusion::atlas::AtlasVolume::new(atlas_vol, names)?;
        let label_vol = nifti::load_nifti(labeling_path)?;
        let labels: Vec<i32> = label_vol.data.iter().map(|&x| x as i32).collect();
        let k = labels
            .iter()
            .max()
            .map(|&m| (m + 1).max(0) as usize)
            .unwrap_or(0)
            .max(fm.k);
        let labeling = perfusion::slic::SupervoxelLabeling {
            dims: label_vol.dims,
            labels,
            centroids: vec![perfusion::slic::Centroid { x: 0.0, y: 0.0, z: 0.0, intensity: 0.0 }; k],
            sizes: vec![0; k],
            grid_step: 1.0,
            seed_cells: (0..k).map(|i| (i, 0, 0, 0)).collect(),
        };
        let assignments = perfusion::atlas::majority_label(&labeling, &atlas)?;
        std::fs::write(
            out.join("roi_assignments.csv"),
            perfusion::atlas::assignment_report_csv(&assignments),
        )?;
        if !significant.is_empty() {
            let comparisons = perfusion::atlas::roi_sex_compare(&fm, &assignments, &significant)?;
            let mut csv = String::from("roi_id,roi_name,clusters,t,df,p\n");
            for c in &comparisons {
                let cluster_list: Vec<String> = c.clusters.iter().map(|c| c.to_string()).collect();
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    c.roi_id,
                    c.roi_name,
                    cluster_list.join(";"),
                    c.ttest.t,
                    c.ttest.df,
                    c.ttest.p_two_sided
                ));
            }
            std::fs::write(out.join("roi_ttests.csv"), csv)?;
        }
    }
    Ok(())
}

fn cmd_classify(args: &ClassifyArgs, cfg: &RunConfig, out: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(out)?;
    let fm = features::load_feature_csv(&args.features)?;
    let rows = fm.cluster_matrix();
    let kind = if args.logistic {
        ClassifierKind::Logistic { l2: cfg.l2 }
    } else {
        ClassifierKind::ConvNet(cfg.net_config(fm.k))
    };
    let report = classify::cross_validate(&kind, &rows, &fm.sexes, cfg.folds, cfg.seed)?;
    let json = serde_json::json!({
        "classifier": if args.logistic { "logistic" } else { "conv_net" },
        "report": report,
        "reference": REFERENCE_BENCHMARKS,
    });
    std::fs::write(
        out.join("cv_report.json"),
        serde_json::to_string_pretty(&json).map_err(|e| Error::Parse(e.to_string()))?,
    )?;
    let m = &report.aggregate;
    println!(
        "accuracy {:.3}  precision_F {:.3}  recall_F {:.3}  precision_M {:.3}  recall_M {:.3}",
        m.accuracy, m.precision_f, m.recall_f, m.precision_m, m.recall_m
    );
    if args.compare_reference {
        let r = &REFERENCE_BENCHMARKS;
        println!("reference ({}):", r.source);
        println!(
            "  cnn accuracy {:.2}  precision_F {:.2}  recall_F {:.2}  precision_M {:.2}  recall_M {:.2}",
            r.cnn_accuracy, r.cnn_precision_f, r.cnn_recall_f, r.cnn_precision_m, r.cnn_recall_m
        );
        println!("  logistic accuracy {:.2}", r.logistic_accuracy);
    }
    Ok(())
}

fn load_diagnostics(dir: &Path) -> Result<Vec<ParticipantDiagnostics>, Error> {
    let path = dir.join("diagnostics.json");
    let text = std::fs::read_to_string(&path).map_err(|_| {
        Error::Parse(format!("{} not found; run features or pipeline first", path.display()))
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("diagnostics parse failed: {e}")))
}

fn diag_means(diags: &[ParticipantDiagnostics], weighting: MeanWeighting) -> Vec<f64> {
    diags
        .iter()
        .map(|d| match weighting {
            MeanWeighting::VoxelWeighted => d.mean_cbf_voxel_weighted,
            MeanWeighting::ClusterMean => d.mean_cbf_cluster_mean,
        })
        .collect()
}

fn cmd_normfit(args: &FeaturesDirArgs, cfg: &RunConfig, out: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(out)?;
    let diags = load_diagnostics(&args.features_dir)?;
    let means = diag_means(&diags, cfg.weighting);
    let ages: Vec<u32> = diags.iter().map(|d| d.age).collect();
    let sexes: Vec<Sex> = diags.iter().map(|d| d.sex).collect();
    let table = vrs::fit_normative(&means, &ages, &sexes, &cfg.age_bins)?;
    std::fs::write(
        out.join("normative.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "bins": table.bins.bins,
            "cells": table.cells,
            "weighting": cfg.weighting,
        }))
        .map_err(|e| Error::Parse(e.to_string()))?,
    )?;
    let trend = vrs::age_trend(&means, &ages, &sexes, &cfg.age_bins)?;
    std::fs::write(out.join("trend.csv"), vrs::trend_to_csv(&trend))?;
    let usable = table.cells.iter().filter(|c| c.usable).count();
    println!("fit normative table: {} of {} cells usable", usable, table.cells.len());
    Ok(())
}

fn cmd_score(args: &FeaturesDirArgs, cfg: &RunConfig, out: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(out)?;
    let diags = load_diagnostics(&args.features_dir)?;
    let means = diag_means(&diags, cfg.weighting);
    let ages: Vec<u32> = diags.iter().map(|d| d.age).collect();
    let sexes: Vec<Sex> = diags.iter().map(|d| d.sex).collect();
    let ids: Vec<String> = diags.iter().map(|d| d.id.clone()).collect();
    let scored = vrs::score_cohort(&ids, &means, &ages, &sexes, &cfg.age_bins, cfg.vrs_k, cfg.loocv)?;
    std::fs::write(out.join("vrs.csv"), vrs::vrs_report_csv(&scored, &ages))?;
    let at_risk = scored.iter().filter(|r| r.status == vrs::RiskStatus::AtRisk).count();
    println!("scored {} participants; {} at risk", scored.len(), at_risk);
    Ok(())
}

fn cmd_pipeline(args: &ManifestArgs, cfg: &RunConfig, out: &Path) -> Result<(), Error> {
    match pipeline::run_pipeline(&args.manifest, cfg, out) {
        Ok(outputs) => {
            let s = &outputs.summary;
            println!(
                "pipeline complete: {} participants, {} significant clusters, cnn accuracy {:.3}, logistic {:.3}, {} at risk",
                s.participants,
                s.significant_clusters.len(),
                s.cnn_accuracy,
                s.logistic_accuracy,
                s.at_risk
            );
            for t in &s.timings {
                println!("  {}: {:.2}s", t.stage, t.seconds);
            }
            Ok(())
        }
        Err(e) => {
            pipeline::write_failed_marker(out, &e);
            Err(e)
        }
    }
}

fn cmd_plot(args: &PlotArgs, out: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(out)?;
    let text = std::fs::read_to_string(&args.trend)?;
    let cells = vrs::trend_from_csv(&text)?;
    let svg = perfusion::plot::trend_svg(&cells, &args.title, "mean CBF")?;
    let stem = args
        .trend
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "trend".into());
    let path = out.join(format!("{stem}.svg"));
    std::fs::write(&path, svg)?;
    println!("wrote {}", path.display());
    Ok(())
}
