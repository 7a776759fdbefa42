//! End-to-end orchestration shared by the CLI: configuration, per-participant
//! processing, and the full segment -> features -> stats -> classify ->
//! normfit -> score run with all artifacts written to an output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{self, ClassifierKind, CvReport, NetConfig};
use crate::error::{Error, Result};
use crate::features::{self, FeatureMatrix};
use crate::manifest::{CohortManifest, Sex};
use crate::nifti;
use crate::slic::{self, SlicParams, SupervoxelLabeling};
use crate::stats::{self, AnovaResult};
use crate::volume::{auto_mask, normalize_intensity, BrainMask, NormalizeMode, Volume3D};
use crate::vrs::{self, AgeBins, MeanWeighting, TrendCell, VrsResult};

/// Everything a run needs, with defaults mirroring the validated protocol:
/// 100 supervoxels, compactness 10, 1 mm smoothing, shell margins
/// 0.2/0.5/1/5 mm, stratified 5-fold CV, alpha 0.05.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub slic: SlicParams,
    pub margins_mm: Vec<f64>,
    pub age_bins: AgeBins,
    pub conv: Vec<(usize, usize)>,
    pub dense: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub folds: usize,
    pub alpha: f64,
    pub normalize: NormalizeMode,
    /// Run SLIC on raw intensities instead of the normalized volume.
    pub slic_on_raw: bool,
    pub mask_fraction: f64,
    pub vrs_k: f64,
    pub weighting: MeanWeighting,
    pub loocv: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            slic: SlicParams::default(),
            margins_mm: features::DEFAULT_MARGINS_MM.to_vec(),
            age_bins: AgeBins::standard(),
            conv: vec![(5, 8), (5, 16)],
            dense: vec![32],
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 16,
            l2: 1e-4,
            folds: 5,
            alpha: 0.05,
            normalize: NormalizeMode::Zscore,
            slic_on_raw: false,
            mask_fraction: 0.05,
            vrs_k: 1.0,
            weighting: MeanWeighting::VoxelWeighted,
            loocv: false,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn net_config(&self, input_len: usize) -> NetConfig {
        NetConfig {
            input_len,
            conv: self.conv.clone(),
            dense: self.dense.clone(),
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            l2: self.l2,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.slic.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.slic.compactness > 0.0) {
            return Err(Error::Config("compactness must be > 0".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be >= 2".into()));
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 1.0) {
            return Err(Error::Config("mask_fraction must lie in (0,1)".into()));
        }
        if !(self.vrs_k > 0.0) {
            return Err(Error::InvalidK(self.vrs_k));
        }
        for pair in self.margins_mm.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::Config("margins must be positive ascending".into()));
            }
        }
        if self.margins_mm.first().map_or(false, |&m| m <= 0.0) {
            return Err(Error::Config("margins must be positive".into()));
        }
        self.net_config(self.slic.k.max(1)).validate()?;
        Ok(())
    }
}

/// Parse the flat `key = value` config format. Lines starting with `#` and
/// blank lines are ignored; keys are listed in the README. Unknown keys are
/// rejected so typos surface as validation errors.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("config line {}: expected 'key = value'", ln + 1)))?;
        let key = key.trim();
        let value = value.trim();
        apply_config_key(&mut cfg, key, value)
            .map_err(|e| Error::Parse(format!("config line {}: {e}", ln + 1)))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Apply one key (shared by the config file parser and CLI overrides).
pub fn apply_config_key(cfg: &mut RunConfig, key: &str, value: &str) -> Result<()> {
    let parse_f64 = |v: &str| -> Result<f64> {
        v.parse().map_err(|_| Error::Parse(format!("'{v}' is not a number")))
    };
    let parse_usize = |v: &str| -> Result<usize> {
        v.parse().map_err(|_| Error::Parse(format!("'{v}' is not a count")))
    };
    let parse_bool = |v: &str| -> Result<bool> {
        match v {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(Error::Parse(format!("'{other}' is not a boolean"))),
        }
    };
    match key {
        "k" => cfg.slic.k = parse_usize(value)?,
        "compactness" => cfg.slic.compactness = parse_f64(value)?,
        "smoothing_sigma_mm" => cfg.slic.smoothing_sigma_mm = parse_f64(value)?,
        "max_iters" => cfg.slic.max_iters = parse_usize(value)?,
        "tol" => cfg.slic.tol = parse_f64(value)?,
        "connectivity" => cfg.slic.connectivity = value.parse()?,
        "perturb_seeds" => cfg.slic.perturb_seeds = parse_bool(value)?,
        "margins" => {
            cfg.margins_mm = value
                .split(',')
                .map(|m| parse_f64(m.trim()))
                .collect::<Result<Vec<f64>>>()?;
        }
        "age_bins" => {
            cfg.age_bins = match value {
                "standard" => AgeBins::standard(),
                "coarse" => AgeBins::coarse(),
                spec => AgeBins::parse(spec)?,
            };
        }
        "conv" => {
            cfg.conv = value
                .split(',')
                .map(|part| {
                    let (k, ch) = part
                        .trim()
                        .split_once('x')
                        .ok_or_else(|| Error::Parse(format!("conv layer '{part}' is not 'KxC'")))?;
                    Ok((parse_usize(k.trim())?, parse_usize(ch.trim())?))
                })
                .collect::<Result<Vec<_>>>()?;
        }
        "dense" => {
            cfg.dense = if value.is_empty() {
                Vec::new()
            } else {
                value
                    .split(',')
                    .map(|w| parse_usize(w.trim()))
                    .collect::<Result<Vec<_>>>()?
            };
        }
        "learning_rate" => cfg.learning_rate = parse_f64(value)?,
        "epochs" => cfg.epochs = parse_usize(value)?,
        "batch_size" => cfg.batch_size = parse_usize(value)?,
        "l2" => cfg.l2 = parse_f64(value)?,
        "folds" => cfg.folds = parse_usize(value)?,
        "alpha" => cfg.alpha = parse_f64(value)?,
        "normalize" => cfg.normalize = value.parse()?,
        "slic_on_raw" => cfg.slic_on_raw = parse_bool(value)?,
        "mask_fraction" => cfg.mask_fraction = parse_f64(value)?,
        "vrs_k" => cfg.vrs_k = parse_f64(value)?,
        "weighting" => cfg.weighting = value.parse()?,
        "loocv" => cfg.loocv = parse_bool(value)?,
        "seed" => {
            cfg.seed = value
                .parse()
                .map_err(|_| Error::Parse(format!("'{value}' is not a seed")))?;
        }
        other => return Err(Error::Parse(format!("unknown config key '{other}'"))),
    }
    Ok(())
}

/// Per-participant products of the segmentation stage.
///
/// Segmentation runs on the normalized volume by default (see
/// `slic_on_raw`); features and downstream statistics use the raw
/// physical-unit intensities, whose group contrasts are not distorted by
/// per-participant rescaling. The classifier applies its own per-column
/// standardization fitted on training folds.
#[derive(Debug, Clone)]
pub struct ParticipantArtifacts {
    pub id: String,
    pub raw: Volume3D,
    pub mask: BrainMask,
    pub labeling: SupervoxelLabeling,
    pub nan_replaced: usize,
    /// Raw (physical-unit) masked-volume mean.
    pub raw_mean_voxel_weighted: f64,
    /// Raw unweighted mean over nonempty clusters.
    pub raw_mean_cluster_mean: f64,
}

/// Load, mask, normalize, and segment one participant volume.
pub fn process_participant(id: &str, path: &Path, cfg: &RunConfig) -> Result<ParticipantArtifacts> {
    let (raw, report) = nifti::load_nifti_with_report(path)?;
    process_participant_volume(id, raw, report.nan_replaced, cfg)
}

/// Same as [`process_participant`] for an already-loaded volume.
pub fn process_participant_volume(
    id: &str,
    raw: Volume3D,
    nan_replaced: usize,
    cfg: &RunConfig,
) -> Result<ParticipantArtifacts> {
    let mask = auto_mask(&raw, cfg.mask_fraction)?;
    let labeling = if cfg.slic_on_raw {
        slic::run_slic(&raw, &mask, &cfg.slic)?
    } else {
        let normalized = normalize_intensity(&raw, &mask, cfg.normalize)?;
        slic::run_slic(&normalized, &mask, &cfg.slic)?
    };

    let masked_sum: f64 = raw.data.iter().zip(&mask.data).filter(|(_, &m)| m).map(|(&x, _)| x).sum();
    let raw_mean_voxel_weighted = masked_sum / mask.count() as f64;
    let raw_cluster_means = features::supervoxel_means(&raw, &labeling)?;
    let nonempty: Vec<f64> = raw_cluster_means
        .iter()
        .zip(&labeling.sizes)
        .filter(|(_, &s)| s > 0)
        .map(|(&m, _)| m)
        .collect();
    if nonempty.is_empty() {
        return Err(Error::DegenerateInput(format!("participant {id} has no nonempty clusters")));
    }
    let raw_mean_cluster_mean = nonempty.iter().sum::<f64>() / nonempty.len() as f64;

    Ok(ParticipantArtifacts {
        id: id.to_string(),
        raw,
        mask,
        labeling,
        nan_replaced,
        raw_mean_voxel_weighted,
        raw_mean_cluster_mean,
    })
}

/// Sidecar for a saved labeling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelingSidecar {
    pub params: SlicParams,
    pub grid_step: f64,
    pub sizes: Vec<usize>,
    pub centroids: Vec<crate::slic::Centroid>,
    pub seed_cells: Vec<(usize, usize, usize, usize)>,
    pub masked_voxels: usize,
}

/// Write a labeling as an int32 NIfTI plus its JSON sidecar.
pub fn save_labeling(
    labeling: &SupervoxelLabeling,
    spacing: (f64, f64, f64),
    params: &SlicParams,
    nii_path: &Path,
    json_path: &Path,
) -> Result<()> {
    let vol = labeling.to_volume(spacing);
    nifti::save_nifti_as(&vol, nii_path, nifti::Datatype::Int32)?;
    let sidecar = LabelingSidecar {
        params: params.clone(),
        grid_step: labeling.grid_step,
        sizes: labeling.sizes.clone(),
        centroids: labeling.centroids.clone(),
        seed_cells: labeling.seed_cells.clone(),
        masked_voxels: labeling.labeled_count(),
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::Parse(format!("sidecar serialization failed: {e}")))?;
    std::fs::write(json_path, json)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParticipantDiagnostics {
    pub id: String,
    pub age: u32,
    pub sex: Sex,
    pub mask_voxels: usize,
    pub nan_replaced: usize,
    pub mean_cbf_voxel_weighted: f64,
    pub mean_cbf_cluster_mean: f64,
    pub cluster_sizes: Vec<usize>,
    pub empty_shell_count: usize,
}

/// Published benchmark metrics for the public OpenNeuro DP-pCASL cohort
/// (n = 186). The repro harness prints these beside our numbers when a user
/// supplies that dataset; they never gate anything.
#[derive(Debug, Clone, Serialize)]
pub struct ReferenceBenchmarks {
    pub source: &'static str,
    pub cnn_accuracy: f64,
    pub cnn_precision_f: f64,
    pub cnn_recall_f: f64,
    pub cnn_f1_f: f64,
    pub cnn_precision_m: f64,
    pub cnn_recall_m: f64,
    pub cnn_f1_m: f64,
    pub logistic_accuracy: f64,
}

pub const REFERENCE_BENCHMARKS: ReferenceBenchmarks = ReferenceBenchmarks {
    source: "OpenNeuro DP-pCASL cohort, n=186 (89 M / 97 F)",
    cnn_accuracy: 0.95,
    cnn_precision_f: 0.94,
    cnn_recall_f: 0.97,
    cnn_f1_f: 0.95,
    cnn_precision_m: 0.97,
    cnn_recall_m: 0.93,
    cnn_f1_m: 0.95,
    logistic_accuracy: 0.79,
};

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineSummary {
    pub participants: usize,
    pub k: usize,
    pub significant_clusters: Vec<usize>,
    pub cnn_accuracy: f64,
    pub logistic_accuracy: f64,
    pub at_risk: usize,
    pub timings: Vec<StageTiming>,
}

/// Artifacts of a full pipeline run, kept in memory for callers that want
/// to assert on them directly.
#[derive(Debug, Clone)]
pub struct PipelineOutputs {
    pub feature_matrix: FeatureMatrix,
    pub anova: Vec<AnovaResult>,
    pub cnn_report: CvReport,
    pub logistic_report: CvReport,
    pub trend: Vec<TrendCell>,
    pub vrs: Vec<VrsResult>,
    pub summary: PipelineSummary,
}

fn stage<T>(timings: &mut Vec<StageTiming>, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f()?;
    timings.push(StageTiming { stage: name.to_string(), seconds: start.elapsed().as_secs_f64() });
    Ok(out)
}

/// Run the full pipeline on volumes already in memory (manifest order).
pub fn run_pipeline_in_memory(
    manifest: &CohortManifest,
    volumes: Vec<Volume3D>,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<PipelineOutputs> {
    cfg.validate()?;
    if manifest.len() != volumes.len() {
        return Err(Error::LengthMismatch { left: manifest.len(), right: volumes.len() });
    }
    std::fs::create_dir_all(out_dir)?;
    let mut timings = Vec::new();

    // Stage 1: segment.
    let artifacts: Vec<ParticipantArtifacts> = stage(&mut timings, "segment", || {
        manifest
            .rows
            .par_iter()
            .zip(volumes.into_par_iter())
            .map(|(meta, vol)| process_participant_volume(&meta.id, vol, 0, cfg))
            .collect()
    })?;
    let labels_dir = out_dir.join("labels");
    std::fs::create_dir_all(&labels_dir)?;
    for art in &artifacts {
        save_labeling(
            &art.labeling,
            art.raw.spacing,
            &cfg.slic,
            &labels_dir.join(format!("{}_labels.nii.gz", art.id)),
            &labels_dir.join(format!("{}_labels.json", art.id)),
        )?;
    }

    // Stage 2: features (physical-unit intensities).
    let fm = stage(&mut timings, "features", || {
        let labelings: Vec<SupervoxelLabeling> = artifacts.iter().map(|a| a.labeling.clone()).collect();
        let vols: Vec<Volume3D> = artifacts.iter().map(|a| a.raw.clone()).collect();
        let masks: Vec<BrainMask> = artifacts.iter().map(|a| a.mask.clone()).collect();
        features::build_feature_matrix(manifest, &labelings, &vols, &masks, &cfg.margins_mm)
    })?;
    features::save_feature_csv(&fm, &out_dir.join("features.csv"))?;
    let schema = serde_json::json!({
        "k": fm.k,
        "margins_mm": fm.margins_mm,
        "slic": cfg.slic,
        "normalize": cfg.normalize,
    });
    std::fs::write(
        out_dir.join("feature_schema.json"),
        serde_json::to_string_pretty(&schema).map_err(|e| Error::Parse(e.to_string()))?,
    )?;
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
        out_dir.join("diagnostics.json"),
        serde_json::to_string_pretty(&diagnostics).map_err(|e| Error::Parse(e.to_string()))?,
    )?;

    // Stage 3: stats.
    let anova = stage(&mut timings, "stats", || {
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
        stats::cluster_sex_anova(&male, &female, cfg.alpha)
    })?;
    std::fs::write(out_dir.join("stats.csv"), stats::anova_report_csv(&anova))?;
    {
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
        std::fs::write(
            out_dir.join("stats_diagnostics.csv"),
            stats::cluster_diagnostics_csv(&male, &female, &anova),
        )?;
    }
    let significant: Vec<usize> =
        anova.iter().filter(|r| r.significant && !r.degenerate).map(|r| r.cluster_id).collect();
    let stats_summary = serde_json::json!({
        "alpha": cfg.alpha,
        "n_clusters": fm.k,
        "n_significant": significant.len(),
        "significant_clusters": significant,
    });
    std::fs::write(
        out_dir.join("stats_summary.json"),
        serde_json::to_string_pretty(&stats_summary).map_err(|e| Error::Parse(e.to_string()))?,
    )?;

    // Stage 4: classify.
    let rows = fm.cluster_matrix();
    let cnn_report = stage(&mut timings, "classify_cnn", || {
        classify::cross_validate(
            &ClassifierKind::ConvNet(cfg.net_config(fm.k)),
            &rows,
            &fm.sexes,
            cfg.folds,
            cfg.seed,
        )
    })?;
    let logistic_report = stage(&mut timings, "classify_logistic", || {
        classify::cross_validate(
            &ClassifierKind::Logistic { l2: cfg.l2 },
            &rows,
            &fm.sexes,
            cfg.folds,
            cfg.seed,
        )
    })?;
    let cv_json = serde_json::json!({
        "conv_net": cnn_report,
        "logistic": logistic_report,
        "reference": REFERENCE_BENCHMARKS,
    });
    std::fs::write(
        out_dir.join("cv_report.json"),
        serde_json::to_string_pretty(&cv_json).map_err(|e| Error::Parse(e.to_string()))?,
    )?;
    let labels: Vec<f64> = fm.sexes.iter().map(|&s| classify::sex_to_label(s)).collect();
    let final_model = classify::train(&cfg.net_config(fm.k), &rows, &labels)?;
    classify::save_model(&final_model, out_dir.join("model"))?;

    // Stage 5: normfit (raw physical-unit means).
    let raw_means: Vec<f64> = artifacts
        .iter()
        .map(|a| match cfg.weighting {
            MeanWeighting::VoxelWeighted => a.raw_mean_voxel_weighted,
            MeanWeighting::ClusterMean => a.raw_mean_cluster_mean,
        })
        .collect();
    let ages = manifest.ages();
    let sexes = manifest.sexes();
    let table = stage(&mut timings, "normfit", || {
        vrs::fit_normative(&raw_means, &ages, &sexes, &cfg.age_bins)
    })?;
    std::fs::write(
        out_dir.join("normative.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "bins": table.bins.bins,
            "cells": table.cells,
            "weighting": cfg.weighting,
        }))
        .map_err(|e| Error::Parse(e.to_string()))?,
    )?;

    // Stage 6: score.
    let ids: Vec<String> = manifest.rows.iter().map(|r| r.id.clone()).collect();
    let scored = stage(&mut timings, "score", || {
        vrs::score_cohort(&ids, &raw_means, &ages, &sexes, &cfg.age_bins, cfg.vrs_k, cfg.loocv)
    })?;
    std::fs::write(out_dir.join("vrs.csv"), vrs::vrs_report_csv(&scored, &ages))?;

    // Age trend artifacts.
    let trend = vrs::age_trend(&raw_means, &ages, &sexes, &cfg.age_bins)?;
    std::fs::write(out_dir.join("trend.csv"), vrs::trend_to_csv(&trend))?;
    std::fs::write(
        out_dir.join("trend.svg"),
        crate::plot::trend_svg(&trend, "Mean CBF by age group", "mean CBF")?,
    )?;

    let at_risk = scored.iter().filter(|r| r.status == vrs::RiskStatus::AtRisk).count();
    let summary = PipelineSummary {
        participants: manifest.len(),
        k: fm.k,
        significant_clusters: significant,
        cnn_accuracy: cnn_report.aggregate.accuracy,
        logistic_accuracy: logistic_report.aggregate.accuracy,
        at_risk,
        timings,
    };
    write_run_manifest(out_dir, cfg, &summary)?;

    Ok(PipelineOutputs {
        feature_matrix: fm,
        anova,
        cnn_report,
        logistic_report,
        trend,
        vrs: scored,
        summary,
    })
}

/// Load the manifest's volumes (paths resolved against the manifest's
/// directory) and run the pipeline.
pub fn run_pipeline(manifest_path: &Path, cfg: &RunConfig, out_dir: &Path) -> Result<PipelineOutputs> {
    let manifest = crate::manifest::load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut volumes = Vec::with_capacity(manifest.len());
    for row in &manifest.rows {
        let path = resolve_volume_path(base, &row.volume_path);
        if !path.exists() {
            return Err(Error::MissingVolume(format!("{} (looked for {})", row.id, path.display())));
        }
        volumes.push(nifti::load_nifti(&path)?);
    }
    run_pipeline_in_memory(&manifest, volumes, cfg, out_dir)
}

pub fn resolve_volume_path(base: &Path, volume_path: &str) -> PathBuf {
    let p = Path::new(volume_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// The run manifest records the config echo, tool version, seed, and wall
/// times. It is the only artifact that varies between identical runs.
fn write_run_manifest(out_dir: &Path, cfg: &RunConfig, summary: &PipelineSummary) -> Result<()> {
    let manifest = serde_json::json!({
        "tool": "perfusion",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config": cfg,
        "participants": summary.participants,
        "timings": summary.timings,
    });
    std::fs::write(
        out_dir.join("run_manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?,
    )?;
    Ok(())
}

/// Marker written when a pipeline aborts partway; partial outputs stay put.
pub fn write_failed_marker(out_dir: &Path, error: &Error) {
    let _ = std::fs::create_dir_all(out_dir);
    let _ = std::fs::write(out_dir.join("FAILED"), format!("{error}\n"));
}
