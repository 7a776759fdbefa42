//! Regional feature extraction: per-supervoxel means and concentric shell
//! means at multiple margins.
//!
//! Shells are built by expanding each cluster's axis-aligned bounding box by
//! `ceil(margin_mm / spacing_axis)` voxels per axis, intersecting with the
//! brain mask, and removing the cluster's own voxels. Margins below the
//! smallest spacing therefore still expand by one voxel; margins that round
//! to the same voxel expansion produce identical columns by construction.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{CohortManifest, Sex};
use crate::slic::SupervoxelLabeling;
use crate::volume::{BrainMask, Volume3D};

pub const DEFAULT_MARGINS_MM: [f64; 4] = [0.2, 0.5, 1.0, 5.0];

/// Per-participant regional perfusion profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub participant_id: String,
    /// Mean intensity per cluster; empty clusters contribute 0.
    pub cluster_means: Vec<f64>,
    /// `K x |margins|` shell means, cluster-major.
    pub shell_means: Vec<Vec<f64>>,
    /// Diagnostic flags marking shells that were empty (mean reported as 0).
    pub shell_empty: Vec<Vec<bool>>,
    pub margins_mm: Vec<f64>,
    pub cluster_sizes: Vec<usize>,
}

/// Mean intensity of `v` within each cluster of `l`; empty clusters give 0.
pub fn supervoxel_means(v: &Volume3D, l: &SupervoxelLabeling) -> Result<Vec<f64>> {
    if v.dims != l.dims {
        return Err(Error::ShapeMismatch(format!(
            "volume dims {:?} vs labeling dims {:?}",
            v.dims, l.dims
        )));
    }
    let k = l.k();
    let mut sums = vec![0.0f64; k];
    let mut counts = vec![0usize; k];
    for (&val, &lab) in v.data.iter().zip(&l.labels) {
        if lab >= 0 {
            sums[lab as usize] += val;
            counts[lab as usize] += 1;
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect())
}

/// Shell means per cluster and margin, plus empty-shell flags.
pub fn shell_means(
    v: &Volume3D,
    l: &SupervoxelLabeling,
    mask: &BrainMask,
    margins_mm: &[f64],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<bool>>)> {
    if v.dims != l.dims {
        return Err(Error::ShapeMismatch(format!(
            "volume dims {:?} vs labeling dims {:?}",
            v.dims, l.dims
        )));
    }
    mask.check_dims(v)?;
    if margins_mm.is_empty() {
        return Ok((vec![Vec::new(); l.k()], vec![Vec::new(); l.k()]));
    }
    for pair in margins_mm.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::Config(format!(
                "margins must be positive ascending, got {margins_mm:?}"
            )));
        }
    }
    if margins_mm[0] <= 0.0 {
        return Err(Error::Config("margins must be positive".into()));
    }

    let (nx, ny, nz) = v.dims;
    let k = l.k();

    // Bounding boxes per cluster.
    let mut boxes: Vec<Option<(usize, usize, usize, usize, usize, usize)>> = vec![None; k];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let lab = l.labels[x + nx * (y + ny * z)];
                if lab < 0 {
                    continue;
                }
                let b = &mut boxes[lab as usize];
                match b {
                    None => *b = Some((x, x, y, y, z, z)),
                    Some(bb) => {
                        bb.0 = bb.0.min(x);
                        bb.1 = bb.1.max(x);
                        bb.2 = bb.2.min(y);
                        bb.3 = bb.3.max(y);
                        bb.4 = bb.4.min(z);
                        bb.5 = bb.5.max(z);
                    }
                }
            }
        }
    }

    let spacing = [v.spacing.0, v.spacing.1, v.spacing.2];
    let mut values = vec![vec![0.0; margins_mm.len()]; k];
    let mut empty = vec![vec![true; margins_mm.len()]; k];

    for cluster in 0..k {
        let Some((x0, x1, y0, y1, z0, z1)) = boxes[cluster] else {
            continue; // empty clusters keep zero shells, flagged empty
        };
        for (mi, &margin) in margins_mm.iter().enumerate() {
            let ex = (margin / spacing[0]).ceil() as usize;
            let ey = (margin / spacing[1]).ceil() as usize;
            let ez = (margin / spacing[2]).ceil() as usize;
            let gx0 = x0.saturating_sub(ex);
            let gx1 = (x1 + ex).min(nx - 1);
            let gy0 = y0.saturating_sub(ey);
            let gy1 = (y1 + ey).min(ny - 1);
            let gz0 = z0.saturating_sub(ez);
            let gz1 = (z1 + ez).min(nz - 1);
            let mut sum = 0.0;
            let mut count = 0usize;
            for z in gz0..=gz1 {
                for y in gy0..=gy1 {
                    for x in gx0..=gx1 {
                        let idx = x + nx * (y + ny * z);
                        if !mask.data[idx] || l.labels[idx] == cluster as i32 {
                            continue;
                        }
                        sum += v.data[idx];
                        count += 1;
                    }
                }
            }
            if count > 0 {
                values[cluster][mi] = sum / count as f64;
                empty[cluster][mi] = false;
            }
        }
    }
    Ok((values, empty))
}

/// Extract the full feature vector for one participant.
pub fn extract_features(
    id: &str,
    v: &Volume3D,
    l: &SupervoxelLabeling,
    mask: &BrainMask,
    margins_mm: &[f64],
) -> Result<FeatureVector> {
    let cluster_means = supervoxel_means(v, l)?;
    let (shell_means, shell_empty) = self::shell_means(v, l, mask, margins_mm)?;
    Ok(FeatureVector {
        participant_id: id.to_string(),
        cluster_means,
        shell_means,
        shell_empty,
        margins_mm: margins_mm.to_vec(),
        cluster_sizes: l.sizes.clone(),
    })
}

/// Participants-by-features matrix with cohort metadata joined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub rows: Vec<FeatureVector>,
    pub ages: Vec<u32>,
    pub sexes: Vec<Sex>,
    pub k: usize,
    pub margins_mm: Vec<f64>,
}

impl FeatureMatrix {
    /// Column of cluster means across participants.
    pub fn cluster_column(&self, cluster: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.cluster_means[cluster]).collect()
    }

    /// Cluster-mean rows as dense vectors (classifier input).
    pub fn cluster_matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.cluster_means.clone()).collect()
    }

    pub fn split_by_sex(&self, cluster: usize) -> (Vec<f64>, Vec<f64>) {
        let mut male = Vec::new();
        let mut female = Vec::new();
        for (row, &sex) in self.rows.iter().zip(&self.sexes) {
            match sex {
                Sex::M => male.push(row.cluster_means[cluster]),
                Sex::F => female.push(row.cluster_means[cluster]),
            }
        }
        (male, female)
    }
}

fn format_margin(m: f64) -> String {
    format!("{m}")
}

/// Assemble the matrix in manifest order.
pub fn build_feature_matrix(
    manifest: &CohortManifest,
    labelings: &[SupervoxelLabeling],
    volumes: &[Volume3D],
    masks: &[BrainMask],
    margins_mm: &[f64],
) -> Result<FeatureMatrix> {
    if manifest.len() != labelings.len() || manifest.len() != volumes.len() {
        return Err(Error::LengthMismatch {
            left: manifest.len(),
            right: labelings.len().min(volumes.len()),
        });
    }
    let k = labelings.first().map(|l| l.k()).unwrap_or(0);
    let mut rows = Vec::with_capacity(manifest.len());
    for (((meta, l), v), mask) in manifest.rows.iter().zip(labelings).zip(volumes).zip(masks) {
        if l.k() != k {
            return Err(Error::ShapeMismatch(format!(
                "participant {} has {} clusters, expected {k}",
                meta.id,
                l.k()
            )));
        }
        rows.push(extract_features(&meta.id, v, l, mask, margins_mm)?);
    }
    Ok(FeatureMatrix {
        rows,
        ages: manifest.ages(),
        sexes: manifest.sexes(),
        k,
        margins_mm: margins_mm.to_vec(),
    })
}

/// CSV header: `id,age,sex,c0..c{K-1},s{cluster}_{margin}...` (cluster-major).
pub fn feature_csv_header(k: usize, margins_mm: &[f64]) -> String {
    let mut cols = vec!["id".to_string(), "age".to_string(), "sex".to_string()];
    for c in 0..k {
        cols.push(format!("c{c}"));
    }
    for c in 0..k {
        for m in margins_mm {
            cols.push(format!("s{c}_{}", format_margin(*m)));
        }
    }
    cols.join(",")
}

pub fn save_feature_csv(fm: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    out.push_str(&feature_csv_header(fm.k, &fm.margins_mm));
    out.push('\n');
    for ((row, &age), &sex) in fm.rows.iter().zip(&fm.ages).zip(&fm.sexes) {
        out.push_str(&row.participant_id);
        out.push_str(&format!(",{age},{sex}"));
        for v in &row.cluster_means {
            out.push_str(&format!(",{v}"));
        }
        for shell_row in &row.shell_means {
            for v in shell_row {
                out.push_str(&format!(",{v}"));
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_feature_csv(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty feature file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0] != "id" || cols[1] != "age" || cols[2] != "sex" {
        return Err(Error::Parse("feature header must start with id,age,sex".into()));
    }
    let k = cols.iter().filter(|c| c.starts_with('c') && c[1..].parse::<usize>().is_ok()).count();
    let mut margins_mm: Vec<f64> = Vec::new();
    for c in &cols[3 + k..] {
        if let Some(rest) = c.strip_prefix("s0_") {
            margins_mm.push(
                rest.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad shell column '{c}'")))?,
            );
        }
    }
    let expected_cols = 3 + k + k * margins_mm.len();
    if cols.len() != expected_cols {
        return Err(Error::Parse(format!(
            "feature header has {} columns, expected {expected_cols} for k={k}, {} margins",
            cols.len(),
            margins_mm.len()
        )));
    }

    let mut rows = Vec::new();
    let mut ages = Vec::new();
    let mut sexes = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected_cols {
            return Err(Error::Parse(format!(
                "feature row {} has {} fields, expected {expected_cols}",
                i + 2,
                fields.len()
            )));
        }
        let age: u32 = fields[1]
            .parse()
            .map_err(|_| Error::Parse(format!("bad age '{}'", fields[1])))?;
        let sex = Sex::parse(fields[2])?;
        let mut cluster_means = Vec::with_capacity(k);
        for f in &fields[3..3 + k] {
            cluster_means.push(f.parse::<f64>().map_err(|_| Error::Parse(format!("bad value '{f}'")))?);
        }
        let mut shell_means = vec![vec![0.0; margins_mm.len()]; k];
        for c in 0..k {
            for m in 0..margins_mm.len() {
                let f = fields[3 + k + c * margins_mm.len() + m];
                shell_means[c][m] =
                    f.parse::<f64>().map_err(|_| Error::Parse(format!("bad value '{f}'")))?;
            }
        }
        rows.push(FeatureVector {
            participant_id: fields[0].to_string(),
            cluster_means,
            shell_means,
            shell_empty: vec![vec![false; margins_mm.len()]; k],
            margins_mm: margins_mm.clone(),
            cluster_sizes: vec![1; k], // sizes live in the diagnostics sidecar
        });
        ages.push(age);
        sexes.push(sex);
    }
    Ok(FeatureMatrix { rows, ages, sexes, k, margins_mm })
}
