//! Majority-vote anatomical labeling of supervoxels against a co-registered
//! atlas volume, plus per-ROI sex comparisons.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::manifest::Sex;
use crate::slic::SupervoxelLabeling;
use crate::stats::{ttest_two_sample, TTestResult, TTestVariant};
use crate::volume::Volume3D;

/// Labeled atlas: integer ROI ids (0 = unlabeled) plus an id -> name table.
#[derive(Debug, Clone)]
pub struct AtlasVolume {
    pub volume: Volume3D,
    pub names: BTreeMap<u32, String>,
}

impl AtlasVolume {
    pub fn new(volume: Volume3D, names: BTreeMap<u32, String>) -> Result<Self> {
        for &v in &volume.data {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Parse(format!("atlas intensity {v} is not a nonnegative integer id")));
            }
            let id = v as u32;
            if id != 0 && !names.contains_key(&id) {
                return Err(Error::Parse(format!("atlas id {id} missing from the lookup table")));
            }
        }
        Ok(Self { volume, names })
    }

    pub fn name(&self, id: u32) -> &str {
        if id == 0 {
            return "unassigned";
        }
        self.names.get(&id).map(String::as_str).unwrap_or("unknown")
    }
}

/// Parse a lookup table CSV with header `roi_id,name`.
pub fn load_lookup(path: impl AsRef<Path>) -> Result<BTreeMap<u32, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty lookup table".into()))?;
    if header.trim() != "roi_id,name" {
        return Err(Error::Parse(format!("lookup header must be 'roi_id,name', got '{header}'")));
    }
    let mut names = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, name) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("lookup row {} lacks a comma", i + 2)))?;
        let id: u32 = id
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad roi_id '{id}' on row {}", i + 2)))?;
        names.insert(id, name.trim().to_string());
    }
    Ok(names)
}

/// Fraction of labeled voxels below which an assignment is flagged.
pub const LOW_CONFIDENCE_LABELED_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiAssignment {
    pub cluster_id: usize,
    pub roi_id: u32,
    pub roi_name: String,
    /// Plurality count over the cluster's nonzero-labeled voxels; 0 for
    /// clusters with no labeled voxels.
    pub vote_fraction: f64,
    /// Set when fewer than 10% of the cluster's voxels carry an atlas label.
    pub low_confidence: bool,
}

/// Assign each supervoxel the plurality nonzero atlas id among its voxels.
/// Ties break to the lowest id; clusters with no labeled voxels (or no
/// voxels at all) map to id 0.
pub fn majority_label(l: &SupervoxelLabeling, atlas: &AtlasVolume) -> Result<Vec<RoiAssignment>> {
    if atlas.volume.dims != l.dims {
        return Err(Error::ShapeMismatch(format!(
            "atlas dims {:?} do not match labeling dims {:?}; resample the atlas to the participant grid first",
            atlas.volume.dims, l.dims
        )));
    }
    let k = l.k();
    let mut counts: Vec<BTreeMap<u32, usize>> = vec![BTreeMap::new(); k];
    let mut voxels = vec![0usize; k];
    for (&lab, &atlas_val) in l.labels.iter().zip(&atlas.volume.data) {
        if lab < 0 {
            continue;
        }
        voxels[lab as usize] += 1;
        let id = atlas_val as u32;
        if id != 0 {
            *counts[lab as usize].entry(id).or_insert(0) += 1;
        }
    }
    let mut out = Vec::with_capacity(k);
    for c in 0..k {
        let labeled: usize = counts[c].values().sum();
        // BTreeMap iterates ids ascending; strict > keeps the lowest id on
        // ties.
        let mut winner: Option<(u32, usize)> = None;
        for (&id, &n) in &counts[c] {
            if winner.map_or(true, |(_, bn)| n > bn) {
                winner = Some((id, n));
            }
        }
        let (roi_id, vote_fraction) = match winner {
            Some((id, n)) => (id, n as f64 / labeled as f64),
            None => (0, 0.0),
        };
        let low_confidence =
            voxels[c] == 0 || (labeled as f64) < LOW_CONFIDENCE_LABELED_FRACTION * voxels[c] as f64;
        out.push(RoiAssignment {
            cluster_id: c,
            roi_id,
            roi_name: atlas.name(roi_id).to_string(),
            vote_fraction,
            low_confidence,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiComparison {
    pub roi_id: u32,
    pub roi_name: String,
    pub clusters: Vec<usize>,
    pub ttest: TTestResult,
}

/// Group the significant clusters by assigned ROI and compare male vs
/// female participant-level means per ROI, sorted ascending by p.
pub fn roi_sex_compare(
    fm: &FeatureMatrix,
    assignments: &[RoiAssignment],
    significant_clusters: &[usize],
) -> Result<Vec<RoiComparison>> {
    if significant_clusters.is_empty() {
        return Err(Error::EmptySelection("no significant clusters to group into ROIs".into()));
    }
    for &c in significant_clusters {
        if c >= fm.k {
            return Err(Error::ShapeMismatch(format!("cluster id {c} out of range for k = {}", fm.k)));
        }
    }
    let mut by_roi: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &c in significant_clusters {
        by_roi.entry(assignments[c].roi_id).or_default().push(c);
    }
    let mut out = Vec::new();
    for (roi_id, clusters) in by_roi {
        let mut male = Vec::new();
        let mut female = Vec::new();
        for (row, &sex) in fm.rows.iter().zip(&fm.sexes) {
            let mean: f64 =
                clusters.iter().map(|&c| row.cluster_means[c]).sum::<f64>() / clusters.len() as f64;
            match sex {
                Sex::M => male.push(mean),
                Sex::F => female.push(mean),
            }
        }
        let ttest = ttest_two_sample(&male, &female, TTestVariant::Pooled)?;
        let roi_name = assignments[clusters[0]].roi_name.clone();
        out.push(RoiComparison { roi_id, roi_name, clusters, ttest });
    }
    out.sort_by(|a, b| {
        a.ttest
            .p_two_sided
            .partial_cmp(&b.ttest.p_two_sided)
            .expect("finite p-values")
            .then(a.roi_id.cmp(&b.roi_id))
    });
    Ok(out)
}

/// Assignment report CSV: `cluster_id,roi_id,roi_name,vote_fraction,flag`.
pub fn assignment_report_csv(assignments: &[RoiAssignment]) -> String {
    let mut out = String::from("cluster_id,roi_id,roi_name,vote_fraction,flag\n");
    for a in assignments {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            a.cluster_id,
            a.roi_id,
            a.roi_name,
            a.vote_fraction,
            if a.low_confidence { "low_confidence" } else { "" }
        ));
    }
    out
}
