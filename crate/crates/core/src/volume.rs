//! Volumetric scalar fields, brain masks, and intensity normalization.

use crate::error::{Error, Result};

/// A 3D scalar field with voxel spacing in millimetres.
///
/// Data is stored in NIfTI order (x fastest, then y, then z) as `f64`,
/// regardless of the on-disk datatype. Indexing: `data[x + nx*(y + ny*z)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    pub dims: (usize, usize, usize),
    pub spacing: (f64, f64, f64),
    pub data: Vec<f64>,
    /// Optional voxel-to-world transform, row major.
    pub affine: Option<[[f64; 4]; 4]>,
}

impl Volume3D {
    pub fn new(dims: (usize, usize, usize), spacing: (f64, f64, f64), data: Vec<f64>) -> Result<Self> {
        let (nx, ny, nz) = dims;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::ShapeMismatch(format!("dims must be positive, got {dims:?}")));
        }
        if data.len() != nx * ny * nz {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match dims {:?} ({} voxels)",
                data.len(),
                dims,
                nx * ny * nz
            )));
        }
        for s in [spacing.0, spacing.1, spacing.2] {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::ShapeMismatch(format!("spacing must be positive and finite, got {spacing:?}")));
            }
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("volume intensity {bad}")));
        }
        Ok(Self { dims, spacing, data, affine: None })
    }

    /// Uniform-valued volume, mostly for tests and phantoms.
    pub fn constant(dims: (usize, usize, usize), spacing: (f64, f64, f64), value: f64) -> Self {
        let n = dims.0 * dims.1 * dims.2;
        Self { dims, spacing, data: vec![value; n], affine: None }
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims.0 * (y + self.dims.1 * z)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }
}

/// Per-voxel boolean mask paired with the dims of the volume it masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrainMask {
    pub dims: (usize, usize, usize),
    pub data: Vec<bool>,
}

impl BrainMask {
    pub fn new(dims: (usize, usize, usize), data: Vec<bool>) -> Result<Self> {
        if data.len() != dims.0 * dims.1 * dims.2 {
            return Err(Error::ShapeMismatch(format!(
                "mask length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        if !data.iter().any(|&b| b) {
            return Err(Error::DegenerateInput("mask contains no voxels".into()));
        }
        Ok(Self { dims, data })
    }

    /// Mask covering the whole volume.
    pub fn full(dims: (usize, usize, usize)) -> Self {
        Self { dims, data: vec![true; dims.0 * dims.1 * dims.2] }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    #[inline]
    pub fn contains(&self, idx: usize) -> bool {
        self.data[idx]
    }

    pub fn check_dims(&self, v: &Volume3D) -> Result<()> {
        if self.dims != v.dims {
            return Err(Error::ShapeMismatch(format!(
                "mask dims {:?} vs volume dims {:?}",
                self.dims, v.dims
            )));
        }
        Ok(())
    }
}

/// Intensity normalization applied within the brain mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizeMode {
    /// Masked voxels get mean 0 and unit standard deviation; outside set to 0.
    Zscore,
    /// Masked voxels are scaled so their mean equals 1.
    Mean1,
}

impl std::str::FromStr for NormalizeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zscore" => Ok(Self::Zscore),
            "mean1" => Ok(Self::Mean1),
            other => Err(Error::Parse(format!("unknown normalization mode '{other}'"))),
        }
    }
}

/// Standardize intensities within the mask.
///
/// `Zscore` leaves masked voxels with mean 0 and standard deviation 1
/// (population std, matching the definition of a z-score over the masked
/// set); voxels outside the mask are set to 0. `Mean1` divides by the
/// masked mean.
pub fn normalize_intensity(v: &Volume3D, mask: &BrainMask, mode: NormalizeMode) -> Result<Volume3D> {
    mask.check_dims(v)?;
    let n = mask.count();
    if n < 2 {
        return Err(Error::DegenerateInput(format!("mask has {n} voxels; need at least 2")));
    }
    let mut sum = 0.0;
    for (val, &inside) in v.data.iter().zip(&mask.data) {
        if inside {
            sum += val;
        }
    }
    let mean = sum / n as f64;

    let mut out = v.clone();
    match mode {
        NormalizeMode::Zscore => {
            let mut ss = 0.0;
            for (val, &inside) in v.data.iter().zip(&mask.data) {
                if inside {
                    let d = val - mean;
                    ss += d * d;
                }
            }
            let var = ss / n as f64;
            if var <= 0.0 {
                return Err(Error::DegenerateInput("masked intensities are constant; z-score undefined".into()));
            }
            let std = var.sqrt();
            for (o, &inside) in out.data.iter_mut().zip(&mask.data) {
                *o = if inside { (*o - mean) / std } else { 0.0 };
            }
        }
        NormalizeMode::Mean1 => {
            if mean == 0.0 {
                return Err(Error::DegenerateInput("masked mean is zero; mean-1 scaling undefined".into()));
            }
            for (o, &inside) in out.data.iter_mut().zip(&mask.data) {
                if inside {
                    *o /= mean;
                }
            }
        }
    }
    Ok(out)
}

/// Threshold mask: voxel kept iff intensity > fraction * max intensity.
pub fn auto_mask(v: &Volume3D, threshold_fraction: f64) -> Result<BrainMask> {
    if !(threshold_fraction > 0.0 && threshold_fraction < 1.0) {
        return Err(Error::Config(format!(
            "threshold fraction must lie in (0, 1), got {threshold_fraction}"
        )));
    }
    let max = v.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::DegenerateInput("volume has no positive intensities to threshold".into()));
    }
    let cutoff = threshold_fraction * max;
    let data: Vec<bool> = v.data.iter().map(|&x| x > cutoff).collect();
    BrainMask::new(v.dims, data)
}
