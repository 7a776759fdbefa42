//! 3D SLIC supervoxel segmentation.
//!
//! Clusters masked voxels in the joint (x, y, z, intensity) space with a
//! localized k-means: each centroid only competes for voxels inside a
//! (2S)^3 window, where S is the seed grid step in voxels. The combined
//! distance is
//!
//! ```text
//! D = sqrt(d_c^2 + (d_s / S)^2 * m^2)
//! ```
//!
//! with `d_c` the intensity difference, `d_s` the spatial distance, and `m`
//! the compactness weight. Anisotropic voxels are handled by scaling each
//! axis of `d_s` by `spacing_axis / min(spacing)` before the Euclidean norm,
//! so clusters stay roughly isotropic in millimetres.
//!
//! A connectivity pass afterwards guarantees that every nonempty cluster is
//! a single connected component. Empty clusters are retained (size 0, mean
//! intensity 0) so the label set is always exactly `0..k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BrainMask, Volume3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbors only.
    Six,
    /// Face, edge, and corner neighbors.
    TwentySix,
}

impl Connectivity {
    fn offsets(self) -> &'static [(i64, i64, i64)] {
        const SIX: [(i64, i64, i64); 6] = [
            (-1, 0, 0),
            (1, 0, 0),
            (0, -1, 0),
            (0, 1, 0),
            (0, 0, -1),
            (0, 0, 1),
        ];
        const TWENTY_SIX: [(i64, i64, i64); 26] = [
            (-1, -1, -1), (0, -1, -1), (1, -1, -1),
            (-1, 0, -1), (0, 0, -1), (1, 0, -1),
            (-1, 1, -1), (0, 1, -1), (1, 1, -1),
            (-1, -1, 0), (0, -1, 0), (1, -1, 0),
            (-1, 0, 0), (1, 0, 0),
            (-1, 1, 0), (0, 1, 0), (1, 1, 0),
            (-1, -1, 1), (0, -1, 1), (1, -1, 1),
            (-1, 0, 1), (0, 0, 1), (1, 0, 1),
            (-1, 1, 1), (0, 1, 1), (1, 1, 1),
        ];
        match self {
            Connectivity::Six => &SIX,
            Connectivity::TwentySix => &TWENTY_SIX,
        }
    }
}

impl std::str::FromStr for Connectivity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "6" => Ok(Connectivity::Six),
            "26" => Ok(Connectivity::TwentySix),
            other => Err(Error::Parse(format!("connectivity must be 6 or 26, got '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlicParams {
    /// Requested cluster count.
    pub k: usize,
    /// Compactness weight m; larger values favor spatial regularity.
    pub compactness: f64,
    /// Pre-clustering Gaussian blur in millimetres (0 disables).
    pub smoothing_sigma_mm: f64,
    pub max_iters: usize,
    /// Mean centroid movement (voxels) below which iteration stops.
    pub tol: f64,
    pub connectivity: Connectivity,
    /// Move each seed to the lowest-gradient voxel in its 3^3 neighborhood.
    pub perturb_seeds: bool,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            k: 100,
            compactness: 10.0,
            smoothing_sigma_mm: 1.0,
            max_iters: 10,
            tol: 1e-3,
            connectivity: Connectivity::Six,
            perturb_seeds: true,
        }
    }
}

impl SlicParams {
    pub fn validate(&self, masked_count: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.k > masked_count {
            return Err(Error::DegenerateInput(format!(
                "k = {} exceeds the {} masked voxels",
                self.k, masked_count
            )));
        }
        if !(self.compactness > 0.0) {
            return Err(Error::Config(format!("compactness must be > 0, got {}", self.compactness)));
        }
        if self.smoothing_sigma_mm < 0.0 {
            return Err(Error::Config("smoothing sigma must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

/// Result of a SLIC run: per-voxel labels plus the cluster table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupervoxelLabeling {
    pub dims: (usize, usize, usize),
    /// Per-voxel label in `0..k`, or -1 for background.
    pub labels: Vec<i32>,
    pub centroids: Vec<Centroid>,
    pub sizes: Vec<usize>,
    /// Seed grid step S in voxels.
    pub grid_step: f64,
    /// Per label: the seed grid cell (x, y, z) it originated from, plus a
    /// creation counter that keeps split seeds ordered within a cell.
    pub seed_cells: Vec<(usize, usize, usize, usize)>,
}

impl SupervoxelLabeling {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l >= 0).count()
    }

    /// Member voxel indices per cluster, in raster order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k()];
        for (idx, &lab) in self.labels.iter().enumerate() {
            if lab >= 0 {
                out[lab as usize].push(idx);
            }
        }
        out
    }

    /// Render labels as a volume (background voxels take -1).
    pub fn to_volume(&self, spacing: (f64, f64, f64)) -> Volume3D {
        let data: Vec<f64> = self.labels.iter().map(|&l| l as f64).collect();
        Volume3D { dims: self.dims, spacing, data, affine: None }
    }

    /// Rebuild a labeling from a label volume plus its sidecar table.
    pub fn from_volume(v: &Volume3D, sidecar: &SupervoxelLabeling) -> Result<Self> {
        if v.dims != sidecar.dims {
            return Err(Error::ShapeMismatch(format!(
                "label volume dims {:?} vs sidecar dims {:?}",
                v.dims, sidecar.dims
            )));
        }
        let labels: Vec<i32> = v.data.iter().map(|&x| x as i32).collect();
        let mut out = sidecar.clone();
        out.labels = labels;
        Ok(out)
    }
}

#[inline]
fn linear(dims: (usize, usize, usize), x: usize, y: usize, z: usize) -> usize {
    x + dims.0 * (y + dims.1 * z)
}

/// Masked Gaussian blur: convolve `v * mask` and `mask` with the same
/// truncated separable kernel, then divide inside the mask. Voxels outside
/// the mask pass through unchanged. Constants are preserved exactly up to
/// floating point because the weights renormalize at boundaries.
pub fn gaussian_smooth(v: &Volume3D, sigma_mm: f64, mask: &BrainMask) -> Result<Volume3D> {
    mask.check_dims(v)?;
    if sigma_mm < 0.0 {
        return Err(Error::Config("sigma must be >= 0".into()));
    }
    if sigma_mm == 0.0 {
        return Ok(v.clone());
    }

    let (nx, ny, nz) = v.dims;
    let spacings = [v.spacing.0, v.spacing.1, v.spacing.2];
    let kernels: Vec<Vec<f64>> = spacings
        .iter()
        .map(|&sp| {
            let sigma_vox = sigma_mm / sp;
            let radius = (3.0 * sigma_vox).ceil() as i64;
            let mut w: Vec<f64> = (-radius..=radius)
                .map(|d| (-(d as f64).powi(2) / (2.0 * sigma_vox * sigma_vox)).exp())
                .collect();
            let total: f64 = w.iter().sum();
            for x in &mut w {
                *x /= total;
            }
            w
        })
        .collect();

    let mut num: Vec<f64> = v
        .data
        .iter()
        .zip(&mask.data)
        .map(|(&x, &m)| if m { x } else { 0.0 })
        .collect();
    let mut den: Vec<f64> = mask.data.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();

    // Separable passes along x, y, z. The volume boundary is handled by
    // clamping sample positions to the edge, which preserves both constants
    // and total mass exactly; mask boundaries are handled by the num/den
    // renormalization.
    let dims = [nx as i64, ny as i64, nz as i64];
    let strides = [1i64, nx as i64, (nx * ny) as i64];
    for axis in 0..3 {
        let kernel = &kernels[axis];
        let radius = (kernel.len() / 2) as i64;
        let stride = strides[axis];
        let extent = dims[axis];
        let mut next_num = vec![0.0; num.len()];
        let mut next_den = vec![0.0; den.len()];
        for z in 0..nz as i64 {
            for y in 0..ny as i64 {
                for x in 0..nx as i64 {
                    let coords = [x, y, z];
                    let pos = coords[axis];
                    let idx = (x + nx as i64 * (y + ny as i64 * z)) as usize;
                    let mut acc_n = 0.0;
                    let mut acc_d = 0.0;
                    for d in -radius..=radius {
                        let w = kernel[(d + radius) as usize];
                        let sample = (pos + d).clamp(0, extent - 1);
                        let j = (idx as i64 + (sample - pos) * stride) as usize;
                        acc_n += w * num[j];
                        acc_d += w * den[j];
                    }
                    next_num[idx] = acc_n;
                    next_den[idx] = acc_d;
                }
            }
        }
        num = next_num;
        den = next_den;
    }

    let mut out = v.clone();
    for i in 0..out.data.len() {
        if mask.data[i] && den[i] > 0.0 {
            out.data[i] = num[i] / den[i];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Seed {
    /// Voxel coordinates of the snapped seed.
    pub voxel: (usize, usize, usize),
    /// Grid cell the seed belongs to.
    pub cell: (usize, usize, usize),
    /// Creation index within the cell (0 = original grid seed).
    pub order: usize,
}

/// Place exactly `k` seeds on a regular grid of step `S = cbrt(masked/k)`.
///
/// Each grid cell containing masked voxels contributes one seed snapped to
/// the masked voxel nearest the cell center. When that yields too many
/// seeds, surplus seeds are dropped from the lowest grid index upward; when
/// too few, the cells with the most masked voxels per seed are split by
/// farthest-point sampling until the count is exact.
pub fn init_centroids(v: &Volume3D, mask: &BrainMask, k: usize) -> Result<(Vec<Seed>, f64)> {
    mask.check_dims(v)?;
    let masked = mask.count();
    if k == 0 || k > masked {
        return Err(Error::DegenerateInput(format!(
            "k = {k} must lie in [1, {masked}] for this mask"
        )));
    }
    let (nx, ny, nz) = v.dims;
    let step = (masked as f64 / k as f64).cbrt();

    // Bucket masked voxels by grid cell.
    let ncx = (nx as f64 / step).ceil() as usize;
    let ncy = (ny as f64 / step).ceil() as usize;
    let ncz = (nz as f64 / step).ceil() as usize;
    let cell_of = |x: usize, y: usize, z: usize| {
        let gx = ((x as f64 / step).floor() as usize).min(ncx - 1);
        let gy = ((y as f64 / step).floor() as usize).min(ncy - 1);
        let gz = ((z as f64 / step).floor() as usize).min(ncz - 1);
        (gx, gy, gz)
    };
    let mut buckets: std::collections::BTreeMap<(usize, usize, usize), Vec<(usize, usize, usize)>> =
        std::collections::BTreeMap::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if mask.data[linear(v.dims, x, y, z)] {
                    let (gx, gy, gz) = cell_of(x, y, z);
                    // Key ordered z-major so iteration order matches the
                    // label ordering convention.
                    buckets.entry((gz, gy, gx)).or_default().push((x, y, z));
                }
            }
        }
    }

    let snap = |cands: &[(usize, usize, usize)], px: f64, py: f64, pz: f64| {
        let mut best: Option<((usize, usize, usize), f64, usize)> = None;
        for &(x, y, z) in cands {
            let d2 = (x as f64 - px).powi(2) + (y as f64 - py).powi(2) + (z as f64 - pz).powi(2);
            let lin = linear((nx, ny, nz), x, y, z);
            let better = match &best {
                None => true,
                Some((_, bd, blin)) => d2 < *bd || (d2 == *bd && lin < *blin),
            };
            if better {
                best = Some(((x, y, z), d2, lin));
            }
        }
        best.expect("non-empty candidate list").0
    };

    let mut seeds: Vec<Seed> = Vec::new();
    for (&(gz, gy, gx), cands) in &buckets {
        let px = (gx as f64 + 0.5) * step - 0.5;
        let py = (gy as f64 + 0.5) * step - 0.5;
        let pz = (gz as f64 + 0.5) * step - 0.5;
        seeds.push(Seed { voxel: snap(cands, px, py, pz), cell: (gx, gy, gz), order: 0 });
    }

    // Drop surplus seeds, lowest grid index first.
    while seeds.len() > k {
        seeds.remove(0);
    }

    // Split the fullest cells until the count is exact.
    while seeds.len() < k {
        let mut best_cell: Option<((usize, usize, usize), f64)> = None;
        for (&(gz, gy, gx), cands) in &buckets {
            let in_cell: Vec<&Seed> =
                seeds.iter().filter(|s| s.cell == (gx, gy, gz)).collect();
            if in_cell.is_empty() || in_cell.len() >= cands.len() {
                continue;
            }
            let ratio = cands.len() as f64 / in_cell.len() as f64;
            let better = match &best_cell {
                None => true,
                Some((_, br)) => ratio > *br,
            };
            if better {
                best_cell = Some(((gz, gy, gx), ratio));
            }
        }
        let (cell_key, _) = best_cell.ok_or_else(|| {
            Error::DegenerateInput("cannot split any grid cell to reach k seeds".into())
        })?;
        let (gz, gy, gx) = cell_key;
        let cands = &buckets[&cell_key];
        let existing: Vec<(usize, usize, usize)> = seeds
            .iter()
            .filter(|s| s.cell == (gx, gy, gz))
            .map(|s| s.voxel)
            .collect();
        let order = existing.len();
        // Farthest-point sample: masked voxel maximizing the distance to the
        // nearest existing seed in the cell, ties to the lowest index.
        let mut best: Option<((usize, usize, usize), f64, usize)> = None;
        for &(x, y, z) in cands {
            if existing.contains(&(x, y, z)) {
                continue;
            }
            let dmin = existing
                .iter()
                .map(|&(sx, sy, sz)| {
                    (x as f64 - sx as f64).powi(2)
                        + (y as f64 - sy as f64).powi(2)
                        + (z as f64 - sz as f64).powi(2)
                })
                .fold(f64::INFINITY, f64::min);
            let lin = linear((nx, ny, nz), x, y, z);
            let better = match &best {
                None => true,
                Some((_, bd, blin)) => dmin > *bd || (dmin == *bd && lin < *blin),
            };
            if better {
                best = Some(((x, y, z), dmin, lin));
            }
        }
        let (voxel, _, _) = best.expect("splittable cell has a free voxel");
        // Insert keeping z-major cell order, after existing seeds of the cell.
        let insert_at = seeds
            .iter()
            .position(|s| (s.cell.2, s.cell.1, s.cell.0) > (gz, gy, gx))
            .unwrap_or(seeds.len());
        seeds.insert(insert_at, Seed { voxel, cell: (gx, gy, gz), order });
    }

    Ok((seeds, step))
}

/// Squared intensity gradient at a voxel: central differences per axis with
/// unavailable (out-of-bounds or unmasked) neighbors replaced by the center
/// value.
fn gradient_sq(v: &Volume3D, mask: &BrainMask, x: usize, y: usize, z: usize) -> f64 {
    let (nx, ny, nz) = v.dims;
    let center = v.at(x, y, z);
    let sample = |xx: i64, yy: i64, zz: i64| -> f64 {
        if xx < 0 || yy < 0 || zz < 0 || xx >= nx as i64 || yy >= ny as i64 || zz >= nz as i64 {
            return center;
        }
        let idx = linear(v.dims, xx as usize, yy as usize, zz as usize);
        if mask.data[idx] {
            v.data[idx]
        } else {
            center
        }
    };
    let (xi, yi, zi) = (x as i64, y as i64, z as i64);
    let gx = sample(xi + 1, yi, zi) - sample(xi - 1, yi, zi);
    let gy = sample(xi, yi + 1, zi) - sample(xi, yi - 1, zi);
    let gz = sample(xi, yi, zi + 1) - sample(xi, yi, zi - 1);
    gx * gx + gy * gy + gz * gz
}

fn perturb_seeds(v: &Volume3D, mask: &BrainMask, seeds: &mut [Seed]) {
    let (nx, ny, nz) = v.dims;
    for seed in seeds.iter_mut() {
        let (sx, sy, sz) = seed.voxel;
        let current = gradient_sq(v, mask, sx, sy, sz);
        let mut best: Option<((usize, usize, usize), f64, usize)> = None;
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 && dz == 0 {
                        continue;
                    }
                    let (x, y, z) = (sx as i64 + dx, sy as i64 + dy, sz as i64 + dz);
                    if x < 0 || y < 0 || z < 0 || x >= nx as i64 || y >= ny as i64 || z >= nz as i64 {
                        continue;
                    }
                    let (x, y, z) = (x as usize, y as usize, z as usize);
                    let idx = linear(v.dims, x, y, z);
                    if !mask.data[idx] {
                        continue;
                    }
                    let g = gradient_sq(v, mask, x, y, z);
                    if g >= current {
                        continue; // only strict improvements move the seed
                    }
                    let better = match &best {
                        None => true,
                        Some((_, bg, blin)) => g < *bg || (g == *bg && idx < *blin),
                    };
                    if better {
                        best = Some(((x, y, z), g, idx));
                    }
                }
            }
        }
        if let Some((voxel, _, _)) = best {
            seed.voxel = voxel;
        }
    }
}

/// Everything recorded while iterating, useful for invariant checks.
#[derive(Debug, Clone)]
pub struct SlicTrace {
    /// Total assignment cost (sum of squared D) after each assignment pass.
    pub costs: Vec<f64>,
    pub iterations: usize,
}

pub fn run_slic(v: &Volume3D, mask: &BrainMask, params: &SlicParams) -> Result<SupervoxelLabeling> {
    run_slic_traced(v, mask, params).map(|(l, _)| l)
}

pub fn run_slic_traced(
    v: &Volume3D,
    mask: &BrainMask,
    params: &SlicParams,
) -> Result<(SupervoxelLabeling, SlicTrace)> {
    mask.check_dims(v)?;
    params.validate(mask.count())?;

    let smoothed = gaussian_smooth(v, params.smoothing_sigma_mm, mask)?;
    let (mut seeds, step) = init_centroids(&smoothed, mask, params.k)?;
    if params.perturb_seeds {
        perturb_seeds(&smoothed, mask, &mut seeds);
    }

    let (nx, ny, nz) = v.dims;
    let dims = v.dims;
    let k = params.k;
    let min_spacing = v.spacing.0.min(v.spacing.1).min(v.spacing.2);
    let scale = (
        v.spacing.0 / min_spacing,
        v.spacing.1 / min_spacing,
        v.spacing.2 / min_spacing,
    );
    let weight = (params.compactness / step) * (params.compactness / step);

    let mut centroids: Vec<Centroid> = seeds
        .iter()
        .map(|s| Centroid {
            x: s.voxel.0 as f64,
            y: s.voxel.1 as f64,
            z: s.voxel.2 as f64,
            intensity: smoothed.at(s.voxel.0, s.voxel.1, s.voxel.2),
        })
        .collect();

    let dist2 = |c: &Centroid, x: usize, y: usize, z: usize, intensity: f64| -> f64 {
        let dc = intensity - c.intensity;
        let dx = (x as f64 - c.x) * scale.0;
        let dy = (y as f64 - c.y) * scale.1;
        let dz = (z as f64 - c.z) * scale.2;
        dc * dc + weight * (dx * dx + dy * dy + dz * dz)
    };

    let mut labels: Vec<i32> = vec![-1; v.voxel_count()];
    let mut costs = Vec::new();
    let mut iterations = 0;

    for _iter in 0..params.max_iters.max(1) {
        iterations += 1;

        // Assignment: each voxel keeps its current centroid as the candidate
        // to beat, which makes the total cost monotone even when centroids
        // drift out of window range.
        let mut best_d2: Vec<f64> = vec![f64::INFINITY; labels.len()];
        for (idx, &lab) in labels.iter().enumerate() {
            if lab >= 0 {
                let z = idx / (nx * ny);
                let y = (idx / nx) % ny;
                let x = idx % nx;
                best_d2[idx] = dist2(&centroids[lab as usize], x, y, z, smoothed.data[idx]);
            }
        }
        let window = step.ceil() as i64;
        for (c_idx, c) in centroids.iter().enumerate() {
            let x0 = ((c.x.round() as i64) - window).max(0) as usize;
            let x1 = ((c.x.round() as i64) + window).min(nx as i64 - 1) as usize;
            let y0 = ((c.y.round() as i64) - window).max(0) as usize;
            let y1 = ((c.y.round() as i64) + window).min(ny as i64 - 1) as usize;
            let z0 = ((c.z.round() as i64) - window).max(0) as usize;
            let z1 = ((c.z.round() as i64) + window).min(nz as i64 - 1) as usize;
            for z in z0..=z1 {
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let idx = linear(dims, x, y, z);
                        if !mask.data[idx] {
                            continue;
                        }
                        let d2 = dist2(c, x, y, z, smoothed.data[idx]);
                        let lab = labels[idx];
                        if d2 < best_d2[idx] || (d2 == best_d2[idx] && (lab < 0 || (c_idx as i32) < lab)) {
                            best_d2[idx] = d2;
                            labels[idx] = c_idx as i32;
                        }
                    }
                }
            }
        }
        // Repair pass: masked voxels outside every window fall back to a
        // global nearest-centroid scan.
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let idx = linear(dims, x, y, z);
                    if !mask.data[idx] || labels[idx] >= 0 {
                        continue;
                    }
                    let mut best = (f64::INFINITY, -1i32);
                    for (c_idx, c) in centroids.iter().enumerate() {
                        let d2 = dist2(c, x, y, z, smoothed.data[idx]);
                        if d2 < best.0 {
                            best = (d2, c_idx as i32);
                        }
                    }
                    labels[idx] = best.1;
                    best_d2[idx] = best.0;
                }
            }
        }

        let cost: f64 = best_d2
            .iter()
            .zip(&mask.data)
            .filter(|(_, &m)| m)
            .map(|(&d, _)| d)
            .sum();
        costs.push(cost);

        // Update: centroids move to the mean of their members.
        let mut sum = vec![(0.0f64, 0.0f64, 0.0f64, 0.0f64, 0usize); k];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let idx = linear(dims, x, y, z);
                    let lab = labels[idx];
                    if lab >= 0 {
                        let s = &mut sum[lab as usize];
                        s.0 += x as f64;
                        s.1 += y as f64;
                        s.2 += z as f64;
                        s.3 += smoothed.data[idx];
                        s.4 += 1;
                    }
                }
            }
        }
        let mut movement = 0.0;
        for (c, s) in centroids.iter_mut().zip(&sum) {
            if s.4 == 0 {
                continue; // empty clusters are never re-seeded
            }
            let n = s.4 as f64;
            let (new_x, new_y, new_z) = (s.0 / n, s.1 / n, s.2 / n);
            movement += ((new_x - c.x).powi(2) + (new_y - c.y).powi(2) + (new_z - c.z).powi(2)).sqrt();
            c.x = new_x;
            c.y = new_y;
            c.z = new_z;
            c.intensity = s.3 / n;
        }
        if movement / (k as f64) < params.tol {
            break;
        }
    }

    let interim = SupervoxelLabeling {
        dims,
        labels,
        centroids,
        sizes: vec![0; k],
        grid_step: step,
        seed_cells: seeds.iter().map(|s| (s.cell.0, s.cell.1, s.cell.2, s.order)).collect(),
    };
    let connected = enforce_connectivity(&interim, mask, params.connectivity)?;
    let ordered = apply_ordering(&connected, &cluster_ordering(&connected));
    let finalized = recompute_table(&ordered, &smoothed);
    debug_assert_eq!(finalized.sizes.iter().sum::<usize>(), mask.count());
    Ok((finalized, SlicTrace { costs, iterations }))
}

/// Recompute centroid positions, intensities, and sizes from the labels.
/// Empty clusters keep their recorded position with mean intensity 0.
fn recompute_table(l: &SupervoxelLabeling, v: &Volume3D) -> SupervoxelLabeling {
    let (nx, ny, nz) = l.dims;
    let k = l.k();
    let mut sum = vec![(0.0f64, 0.0f64, 0.0f64, 0.0f64, 0usize); k];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let idx = linear(l.dims, x, y, z);
                let lab = l.labels[idx];
                if lab >= 0 {
                    let s = &mut sum[lab as usize];
                    s.0 += x as f64;
                    s.1 += y as f64;
                    s.2 += z as f64;
                    s.3 += v.data[idx];
                    s.4 += 1;
                }
            }
        }
    }
    let mut out = l.clone();
    for (i, s) in sum.iter().enumerate() {
        if s.4 == 0 {
            out.centroids[i].intensity = 0.0;
            out.sizes[i] = 0;
        } else {
            let n = s.4 as f64;
            out.centroids[i] = Centroid { x: s.0 / n, y: s.1 / n, z: s.2 / n, intensity: s.3 / n };
            out.sizes[i] = s.4;
        }
    }
    out
}

/// Connected components of equal-label voxels, in raster order of their
/// first voxel.
fn label_components(
    labels: &[i32],
    mask: &BrainMask,
    dims: (usize, usize, usize),
    conn: Connectivity,
) -> Vec<(i32, Vec<usize>)> {
    let (nx, ny, nz) = dims;
    let mut visited = vec![false; labels.len()];
    let mut comps = Vec::new();
    for start in 0..labels.len() {
        if visited[start] || !mask.data[start] || labels[start] < 0 {
            continue;
        }
        let lab = labels[start];
        let mut stack = vec![start];
        let mut voxels = Vec::new();
        visited[start] = true;
        while let Some(idx) = stack.pop() {
            voxels.push(idx);
            let z = idx / (nx * ny);
            let y = (idx / nx) % ny;
            let x = idx % nx;
            for &(dx, dy, dz) in conn.offsets() {
                let (xx, yy, zz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                if xx < 0 || yy < 0 || zz < 0 || xx >= nx as i64 || yy >= ny as i64 || zz >= nz as i64 {
                    continue;
                }
                let j = linear(dims, xx as usize, yy as usize, zz as usize);
                if !visited[j] && mask.data[j] && labels[j] == lab {
                    visited[j] = true;
                    stack.push(j);
                }
            }
        }
        voxels.sort_unstable();
        comps.push((lab, voxels));
    }
    comps
}

/// Make every nonempty label a single connected component.
///
/// The largest component of each label keeps it; every smaller fragment is
/// merged whole into the most frequent label among its finalized neighbors,
/// ties to the lowest label id. Fragments in mask islands that touch no
/// finalized region take over an empty label id when one exists, otherwise
/// the smallest finalized component is vacated for them.
pub fn enforce_connectivity(
    l: &SupervoxelLabeling,
    mask: &BrainMask,
    conn: Connectivity,
) -> Result<SupervoxelLabeling> {
    if l.labels.len() != mask.data.len() {
        return Err(Error::ShapeMismatch(format!(
            "labeling has {} voxels, mask has {}",
            l.labels.len(),
            mask.data.len()
        )));
    }
    let dims = l.dims;
    let (nx, ny, nz) = dims;
    let k = l.k();
    let mut labels = l.labels.clone();

    let comps = label_components(&labels, mask, dims, conn);

    // Pick the kept (largest, tie: earliest) component per label.
    let mut kept_comp: Vec<Option<usize>> = vec![None; k];
    for (ci, (lab, voxels)) in comps.iter().enumerate() {
        let lab = *lab as usize;
        match kept_comp[lab] {
            None => kept_comp[lab] = Some(ci),
            Some(prev) => {
                if voxels.len() > comps[prev].1.len() {
                    kept_comp[lab] = Some(ci);
                }
            }
        }
    }
    let mut finalized = vec![false; labels.len()];
    for kc in kept_comp.iter().flatten() {
        for &idx in &comps[*kc].1 {
            finalized[idx] = true;
        }
    }
    let mut fragments: Vec<usize> = (0..comps.len())
        .filter(|ci| kept_comp[comps[*ci].0 as usize] != Some(*ci))
        .collect();

    let neighbor_indices = |idx: usize, out: &mut Vec<usize>| {
        out.clear();
        let z = idx / (nx * ny);
        let y = (idx / nx) % ny;
        let x = idx % nx;
        for &(dx, dy, dz) in conn.offsets() {
            let (xx, yy, zz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
            if xx < 0 || yy < 0 || zz < 0 || xx >= nx as i64 || yy >= ny as i64 || zz >= nz as i64 {
                continue;
            }
            out.push(linear(dims, xx as usize, yy as usize, zz as usize));
        }
    };

    // Merge fragments that touch finalized territory, rescanning until no
    // further fragment is reachable. Counting finalized neighbors of the
    // fragment's own label as well lets a fragment that became connected
    // through an earlier merge simply keep its label.
    let mut scratch = Vec::with_capacity(26);
    loop {
        let mut progressed = false;
        let mut remaining = Vec::new();
        for &ci in &fragments {
            let voxels = &comps[ci].1;
            let mut counts: std::collections::BTreeMap<i32, usize> = std::collections::BTreeMap::new();
            for &idx in voxels {
                neighbor_indices(idx, &mut scratch);
                for &j in &scratch {
                    if mask.data[j] && finalized[j] {
                        *counts.entry(labels[j]).or_insert(0) += 1;
                    }
                }
            }
            // Plurality label, ties to the lowest id (BTreeMap iterates
            // ascending, strict > keeps the first maximum).
            let mut winner: Option<(i32, usize)> = None;
            for (&lab, &n) in &counts {
                if winner.map_or(true, |(_, bn)| n > bn) {
                    winner = Some((lab, n));
                }
            }
            if let Some((lab, _)) = winner {
                for &idx in voxels {
                    labels[idx] = lab;
                    finalized[idx] = true;
                }
                progressed = true;
            } else {
                remaining.push(ci);
            }
        }
        fragments = remaining;
        if !progressed || fragments.is_empty() {
            break;
        }
    }

    // Anything left lives in mask islands with no finalized voxels. Give
    // each island one label: an empty label id when available, otherwise
    // vacate the smallest finalized component.
    if !fragments.is_empty() {
        let mut island_of = vec![usize::MAX; labels.len()];
        let mut islands: Vec<Vec<usize>> = Vec::new();
        let frag_voxels: Vec<usize> = fragments.iter().flat_map(|&ci| comps[ci].1.iter().copied()).collect();
        let in_frag: std::collections::HashSet<usize> = frag_voxels.iter().copied().collect();
        for &start in &frag_voxels {
            if island_of[start] != usize::MAX {
                continue;
            }
            let id = islands.len();
            let mut stack = vec![start];
            island_of[start] = id;
            let mut voxels = Vec::new();
            while let Some(idx) = stack.pop() {
                voxels.push(idx);
                neighbor_indices(idx, &mut scratch);
                for &j in &scratch {
                    if in_frag.contains(&j) && island_of[j] == usize::MAX {
                        island_of[j] = id;
                        stack.push(j);
                    }
                }
            }
            voxels.sort_unstable();
            islands.push(voxels);
        }

        let mut label_counts = vec![0usize; k];
        for (&lab, &fin) in labels.iter().zip(&finalized) {
            if fin && lab >= 0 {
                label_counts[lab as usize] += 1;
            }
        }

        // Vacate candidates: finalized single-component labels that have a
        // finalized foreign neighbor to absorb them. Computed once and
        // maintained incrementally; recomputing components per island is
        // quadratic when a noisy mask sheds thousands of speckle islands.
        let comps_now = label_components(&labels, mask, dims, conn);
        let mut candidates: Vec<(usize, i32, Vec<usize>)> = Vec::new(); // (size, label, voxels)
        for (lab, voxels) in &comps_now {
            if voxels.iter().any(|&idx| !finalized[idx]) {
                continue;
            }
            if label_counts[*lab as usize] != voxels.len() {
                continue; // label spans more than this component
            }
            let has_foreign = voxels.iter().any(|&idx| {
                neighbor_indices(idx, &mut scratch);
                scratch
                    .iter()
                    .any(|&j| mask.data[j] && finalized[j] && labels[j] != *lab)
            });
            if has_foreign {
                candidates.push((voxels.len(), *lab, voxels.clone()));
            }
        }
        candidates.sort_by_key(|(size, lab, _)| (*size, *lab));

        for island in islands {
            let spare = label_counts.iter().position(|&n| n == 0);
            let target = match spare {
                Some(lab) => lab as i32,
                None => {
                    if candidates.is_empty() {
                        // Nothing can be vacated (e.g. k = 1 over a
                        // disconnected mask): the island keeps its labels.
                        for &idx in &island {
                            finalized[idx] = true;
                        }
                        continue;
                    }
                    let (_, lab, voxels) = candidates.remove(0);
                    let mut counts: std::collections::BTreeMap<i32, usize> =
                        std::collections::BTreeMap::new();
                    for &idx in &voxels {
                        neighbor_indices(idx, &mut scratch);
                        for &j in &scratch {
                            if mask.data[j] && finalized[j] && labels[j] != lab {
                                *counts.entry(labels[j]).or_insert(0) += 1;
                            }
                        }
                    }
                    let mut winner: Option<(i32, usize)> = None;
                    for (&wl, &n) in &counts {
                        if winner.map_or(true, |(_, bn)| n > bn) {
                            winner = Some((wl, n));
                        }
                    }
                    let absorb = winner.expect("candidate has a foreign neighbor").0;
                    for &idx in &voxels {
                        labels[idx] = absorb;
                    }
                    label_counts[absorb as usize] += voxels.len();
                    label_counts[lab as usize] = 0;
                    // The absorbing label now spans two former components;
                    // it can no longer be vacated safely.
                    candidates.retain(|(_, l, _)| *l != absorb);
                    lab
                }
            };
            for &idx in &island {
                labels[idx] = target;
                finalized[idx] = true;
            }
            label_counts[target as usize] += island.len();
        }
    }

    let mut out = l.clone();
    out.labels = labels;
    // Refresh sizes and positions; intensity means stay as recorded (they
    // are recomputed against a volume by the callers that need them).
    let mut sizes = vec![0usize; k];
    let mut pos = vec![(0.0f64, 0.0f64, 0.0f64); k];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let idx = linear(dims, x, y, z);
                let lab = out.labels[idx];
                if lab >= 0 {
                    sizes[lab as usize] += 1;
                    pos[lab as usize].0 += x as f64;
                    pos[lab as usize].1 += y as f64;
                    pos[lab as usize].2 += z as f64;
                }
            }
        }
    }
    for i in 0..k {
        if sizes[i] > 0 {
            let n = sizes[i] as f64;
            out.centroids[i].x = pos[i].0 / n;
            out.centroids[i].y = pos[i].1 / n;
            out.centroids[i].z = pos[i].2 / n;
        } else {
            out.centroids[i].intensity = 0.0;
        }
    }
    out.sizes = sizes;
    Ok(out)
}

/// Permutation that renumbers labels by their seed grid cell, z-major then
/// y then x, with split seeds kept in creation order. `perm[new] = old`.
pub fn cluster_ordering(l: &SupervoxelLabeling) -> Vec<usize> {
    let mut order: Vec<usize> = (0..l.k()).collect();
    order.sort_by_key(|&i| {
        let (cx, cy, cz, ord) = l.seed_cells[i];
        (cz, cy, cx, ord)
    });
    order
}

/// Relabel according to a permutation from [`cluster_ordering`].
pub fn apply_ordering(l: &SupervoxelLabeling, perm: &[usize]) -> SupervoxelLabeling {
    let mut inverse = vec![0usize; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inverse[old] = new;
    }
    let labels: Vec<i32> = l
        .labels
        .iter()
        .map(|&lab| if lab < 0 { -1 } else { inverse[lab as usize] as i32 })
        .collect();
    SupervoxelLabeling {
        dims: l.dims,
        labels,
        centroids: perm.iter().map(|&old| l.centroids[old]).collect(),
        sizes: perm.iter().map(|&old| l.sizes[old]).collect(),
        grid_step: l.grid_step,
        seed_cells: perm.iter().map(|&old| l.seed_cells[old]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn radial_phantom(n: usize, base: f64, decay: f64) -> Volume3D {
        let dims = (n, n, n);
        let c = (n as f64 - 1.0) / 2.0;
        let mut data = vec![0.0; n * n * n];
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let r = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2)).sqrt();
                    data[x + n * (y + n * z)] = (base - decay * r).max(0.0);
                }
            }
        }
        Volume3D::new(dims, (1.0, 1.0, 1.0), data).unwrap()
    }

    // ----- gaussian_smooth -----

    #[test]
    fn smooth_sigma_zero_is_identity() {
        let v = radial_phantom(9, 50.0, 2.0);
        let mask = BrainMask::full(v.dims);
        let out = gaussian_smooth(&v, 0.0, &mask).unwrap();
        assert_eq!(out.data, v.data);
    }

    #[test]
    fn smooth_preserves_constants() {
        let v = Volume3D::constant((7, 6, 5), (1.0, 2.0, 3.0), 42.0);
        let mask = BrainMask::full(v.dims);
        let out = gaussian_smooth(&v, 2.5, &mask).unwrap();
        for val in &out.data {
            assert!((val - 42.0).abs() < 1e-12, "constant drifted to {val}");
        }
    }

    /// Dense 3D masked convolution oracle with the same truncation,
    /// clamp-to-edge border handling, and mask renormalization, written
    /// independently of the separable path.
    fn dense_smooth_oracle(v: &Volume3D, sigma_mm: f64, mask: &BrainMask) -> Vec<f64> {
        let (nx, ny, nz) = v.dims;
        let spacings = [v.spacing.0, v.spacing.1, v.spacing.2];
        let sig: Vec<f64> = spacings.iter().map(|&s| sigma_mm / s).collect();
        let rad: Vec<i64> = sig.iter().map(|&s| (3.0 * s).ceil() as i64).collect();
        let mut out = v.data.clone();
        for z in 0..nz as i64 {
            for y in 0..ny as i64 {
                for x in 0..nx as i64 {
                    let idx = (x + nx as i64 * (y + ny as i64 * z)) as usize;
                    if !mask.data[idx] {
                        continue;
                    }
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for dz in -rad[2]..=rad[2] {
                        for dy in -rad[1]..=rad[1] {
                            for dx in -rad[0]..=rad[0] {
                                let xx = (x + dx).clamp(0, nx as i64 - 1);
                                let yy = (y + dy).clamp(0, ny as i64 - 1);
                                let zz = (z + dz).clamp(0, nz as i64 - 1);
                                let j = (xx + nx as i64 * (yy + ny as i64 * zz)) as usize;
                                if !mask.data[j] {
                                    continue;
                                }
                                let w = (-((dx as f64).powi(2) / (2.0 * sig[0] * sig[0])
                                    + (dy as f64).powi(2) / (2.0 * sig[1] * sig[1])
                                    + (dz as f64).powi(2) / (2.0 * sig[2] * sig[2])))
                                    .exp();
                                num += w * v.data[j];
                                den += w;
                            }
                        }
                    }
                    out[idx] = num / den;
                }
            }
        }
        out
    }

    #[test]
    fn smooth_impulse_matches_dense_oracle() {
        let dims = (9, 9, 9);
        let mut data = vec![0.0; 9 * 9 * 9];
        data[4 + 9 * (4 + 9 * 4)] = 1.0;
        let v = Volume3D::new(dims, (1.0, 1.0, 1.0), data).unwrap();
        let mask = BrainMask::full(dims);
        let out = gaussian_smooth(&v, 1.0, &mask).unwrap();
        let oracle = dense_smooth_oracle(&v, 1.0, &mask);
        for (a, b) in out.data.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "{a} vs oracle {b}");
        }
        // Center value is the product of the three 1D kernel centers.
        let radius = 3i64;
        let w: Vec<f64> = (-radius..=radius).map(|d| (-(d as f64).powi(2) / 2.0).exp()).collect();
        let total: f64 = w.iter().sum();
        let center_1d = 1.0 / total;
        let center = out.at(4, 4, 4);
        assert!((center - center_1d.powi(3)).abs() < 1e-12, "center {center}");
        // Clamp-to-edge border handling preserves total mass exactly.
        let mass: f64 = out.data.iter().sum();
        let oracle_mass: f64 = oracle.iter().sum();
        assert!((mass - oracle_mass).abs() < 1e-12);
        assert!((mass - 1.0).abs() < 1e-6, "mass {mass}");
    }

    #[test]
    fn smooth_respects_anisotropic_spacing_and_mask() {
        let mut rng = SplitMix64::new(21);
        let dims = (10, 9, 8);
        let data: Vec<f64> = (0..10 * 9 * 8).map(|_| rng.next_f64() * 10.0).collect();
        let v = Volume3D::new(dims, (1.0, 2.0, 4.0), data).unwrap();
        let mask_data: Vec<bool> = (0..10 * 9 * 8).map(|i| i % 7 != 0).collect();
        let mask = BrainMask::new(dims, mask_data).unwrap();
        let out = gaussian_smooth(&v, 2.0, &mask).unwrap();
        let oracle = dense_smooth_oracle(&v, 2.0, &mask);
        for i in 0..out.data.len() {
            if mask.data[i] {
                assert!((out.data[i] - oracle[i]).abs() < 1e-10, "voxel {i}");
            } else {
                assert_eq!(out.data[i], v.data[i], "unmasked voxels pass through");
            }
        }
    }

    // ----- init_centroids -----

    #[test]
    fn full_cube_k8_places_seeds_at_cell_centers() {
        let v = Volume3D::constant((8, 8, 8), (1.0, 1.0, 1.0), 1.0);
        let mask = BrainMask::full(v.dims);
        let (seeds, step) = init_centroids(&v, &mask, 8).unwrap();
        assert!((step - 4.0).abs() < 1e-12);
        assert_eq!(seeds.len(), 8);
        // Cell centers are at 1.5 and 5.5 per axis; snapping breaks the tie
        // toward the lowest linear index, so coordinates land on {1, 5}.
        for seed in &seeds {
            for c in [seed.voxel.0, seed.voxel.1, seed.voxel.2] {
                assert!(c == 1 || c == 5, "unexpected coordinate {c}");
            }
        }
        // z-major ordering: first seed in cell (0,0,0), second in (1,0,0).
        assert_eq!(seeds[0].cell, (0, 0, 0));
        assert_eq!(seeds[1].cell, (1, 0, 0));
    }

    #[test]
    fn full_cube_k1_places_single_seed_near_center() {
        let v = Volume3D::constant((8, 8, 8), (1.0, 1.0, 1.0), 1.0);
        let mask = BrainMask::full(v.dims);
        let (seeds, step) = init_centroids(&v, &mask, 1).unwrap();
        assert!((step - 8.0).abs() < 1e-12);
        assert_eq!(seeds.len(), 1);
        let (x, y, z) = seeds[0].voxel;
        for c in [x, y, z] {
            assert!(c == 3 || c == 4, "seed should sit near the center, got {c}");
        }
    }

    #[test]
    fn spherical_mask_k27_yields_exactly_27_masked_seeds() {
        let v = radial_phantom(16, 100.0, 10.0);
        let mask = crate::volume::auto_mask(&v, 0.1).unwrap();
        let (seeds, _) = init_centroids(&v, &mask, 27).unwrap();
        assert_eq!(seeds.len(), 27);
        for seed in &seeds {
            let idx = seed.voxel.0 + 16 * (seed.voxel.1 + 16 * seed.voxel.2);
            assert!(mask.data[idx], "seed outside the mask at {:?}", seed.voxel);
        }
    }

    #[test]
    fn init_rejects_k_above_masked_count() {
        let v = Volume3D::constant((3, 3, 3), (1.0, 1.0, 1.0), 1.0);
        let mask = BrainMask::full(v.dims);
        assert!(matches!(init_centroids(&v, &mask, 28), Err(Error::DegenerateInput(_))));
    }

    // ----- run_slic -----

    #[test]
    fn constant_cube_k8_gives_octant_partition() {
        let v = Volume3D::constant((8, 8, 8), (1.0, 1.0, 1.0), 5.0);
        let mask = BrainMask::full(v.dims);
        let params = SlicParams {
            k: 8,
            compactness: 10.0,
            smoothing_sigma_mm: 0.0,
            ..SlicParams::default()
        };
        let l = run_slic(&v, &mask, &params).unwrap();
        assert_eq!(l.sizes, vec![64; 8]);
        for z in 0..8usize {
            for y in 0..8usize {
                for x in 0..8usize {
                    let octant = (x / 4) + 2 * (y / 4) + 4 * (z / 4);
                    let lab = l.labels[x + 8 * (y + 8 * z)];
                    assert_eq!(lab as usize, octant, "voxel ({x},{y},{z})");
                }
            }
        }
    }

    /// Unwindowed Lloyd iteration in the same feature space, as an
    /// independent oracle for the two-slab case.
    fn two_means_oracle(v: &Volume3D, seeds: [(f64, f64, f64, f64); 2], m: f64, s: f64) -> Vec<i32> {
        let (nx, ny, nz) = v.dims;
        let w = (m / s) * (m / s);
        let mut cents = seeds;
        let mut labels = vec![0i32; v.voxel_count()];
        for _ in 0..20 {
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let idx = x + nx * (y + ny * z);
                        let i = v.data[idx];
                        let d = |c: &(f64, f64, f64, f64)| {
                            (i - c.3).powi(2)
                                + w * ((x as f64 - c.0).powi(2)
                                    + (y as f64 - c.1).powi(2)
                                    + (z as f64 - c.2).powi(2))
                        };
                        labels[idx] = if d(&cents[0]) <= d(&cents[1]) { 0 } else { 1 };
                    }
                }
            }
            for c in 0..2 {
                let mut acc = (0.0, 0.0, 0.0, 0.0, 0.0);
                for z in 0..nz {
                    for y in 0..ny {
                        for x in 0..nx {
                            let idx = x + nx * (y + ny * z);
                            if labels[idx] == c as i32 {
                                acc.0 += x as f64;
                                acc.1 += y as f64;
                                acc.2 += z as f64;
                                acc.3 += v.data[idx];
                                acc.4 += 1.0;
                            }
                        }
                    }
                }
                if acc.4 > 0.0 {
                    cents[c] = (acc.0 / acc.4, acc.1 / acc.4, acc.2 / acc.4, acc.3 / acc.4);
                }
            }
        }
        labels
    }

    #[test]
    fn two_slab_volume_recovers_slabs() {
        let dims = (8, 8, 8);
        let mut data = vec![0.0; 512];
        for z in 0..8 {
            for y in 0..8 {
                for x in 4..8 {
                    data[x + 8 * (y + 8 * z)] = 1.0;
                }
            }
        }
        let v = Volume3D::new(dims, (1.0, 1.0, 1.0), data).unwrap();
        let mask = BrainMask::full(dims);
        let params = SlicParams {
            k: 2,
            compactness: 0.1,
            smoothing_sigma_mm: 0.0,
            perturb_seeds: false,
            ..SlicParams::default()
        };
        let l = run_slic(&v, &mask, &params).unwrap();
        // Each slab must be uniformly labeled.
        let left = l.labels[0];
        let right = l.labels[7];
        assert_ne!(left, right);
        for z in 0..8usize {
            for y in 0..8usize {
                for x in 0..8usize {
                    let expect = if x < 4 { left } else { right };
                    assert_eq!(l.labels[x + 8 * (y + 8 * z)], expect, "voxel ({x},{y},{z})");
                }
            }
        }
        // Cross-check with the unwindowed 2-means oracle started from the
        // converged centroids: the fixed point is the same slab split.
        let oracle = two_means_oracle(
            &v,
            [
                (l.centroids[0].x, l.centroids[0].y, l.centroids[0].z, l.centroids[0].intensity),
                (l.centroids[1].x, l.centroids[1].y, l.centroids[1].z, l.centroids[1].intensity),
            ],
            params.compactness,
            l.grid_step,
        );
        assert_eq!(oracle, l.labels);
    }

    #[test]
    fn partition_invariant_holds_on_noisy_phantom() {
        let mut v = radial_phantom(16, 100.0, 8.0);
        let mut rng = SplitMix64::new(9);
        for x in &mut v.data {
            *x += rng.next_gaussian() * 3.0;
            *x = x.max(0.0);
        }
        let mask = crate::volume::auto_mask(&v, 0.05).unwrap();
        let l = run_slic(&v, &mask, &SlicParams { k: 20, ..SlicParams::default() }).unwrap();
        assert_eq!(l.sizes.iter().sum::<usize>(), mask.count());
        for (idx, &lab) in l.labels.iter().enumerate() {
            if mask.data[idx] {
                assert!((0..20).contains(&(lab as usize)));
            } else {
                assert_eq!(lab, -1);
            }
        }
    }

    #[test]
    fn assignment_cost_never_increases() {
        let mut v = radial_phantom(14, 80.0, 6.0);
        let mut rng = SplitMix64::new(31);
        for x in &mut v.data {
            *x += rng.next_gaussian() * 2.0;
        }
        let mask = BrainMask::full(v.dims);
        let (_, trace) = run_slic_traced(&v, &mask, &SlicParams { k: 12, ..SlicParams::default() }).unwrap();
        for w in trace.costs.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-9 * w[0].abs(),
                "cost rose from {} to {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn raising_compactness_reduces_spatial_variance() {
        let mut v = radial_phantom(14, 80.0, 6.0);
        let mut rng = SplitMix64::new(77);
        for x in &mut v.data {
            *x += rng.next_gaussian() * 4.0;
        }
        let mask = BrainMask::full(v.dims);
        let spatial_variance = |l: &SupervoxelLabeling| {
            let members = l.members();
            let mut total = 0.0;
            let mut count = 0usize;
            for (c, mem) in members.iter().enumerate() {
                if mem.is_empty() {
                    continue;
                }
                let cen = &l.centroids[c];
                for &idx in mem {
                    let z = idx / (14 * 14);
                    let y = (idx / 14) % 14;
                    let x = idx % 14;
                    total += (x as f64 - cen.x).powi(2)
                        + (y as f64 - cen.y).powi(2)
                        + (z as f64 - cen.z).powi(2);
                }
                count += mem.len();
            }
            total / count as f64
        };
        let loose = run_slic(&v, &mask, &SlicParams { k: 10, compactness: 1.0, ..SlicParams::default() }).unwrap();
        let tight = run_slic(&v, &mask, &SlicParams { k: 10, compactness: 100.0, ..SlicParams::default() }).unwrap();
        assert!(
            spatial_variance(&tight) <= spatial_variance(&loose) + 1e-9,
            "m=100 gave variance {} vs m=1 {}",
            spatial_variance(&tight),
            spatial_variance(&loose)
        );
    }

    #[test]
    fn slic_is_deterministic() {
        let mut v = radial_phantom(12, 60.0, 5.0);
        let mut rng = SplitMix64::new(13);
        for x in &mut v.data {
            *x += rng.next_gaussian();
        }
        let mask = crate::volume::auto_mask(&v, 0.05).unwrap();
        let params = SlicParams { k: 9, ..SlicParams::default() };
        let a = run_slic(&v, &mask, &params).unwrap();
        let b = run_slic(&v, &mask, &params).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.sizes, b.sizes);
    }

    // ----- enforce_connectivity -----

    /// Independent flood-fill component counter.
    fn component_count(l: &SupervoxelLabeling, mask: &BrainMask, conn: Connectivity, label: i32) -> usize {
        label_components(&l.labels, mask, l.dims, conn)
            .into_iter()
            .filter(|(lab, _)| *lab == label)
            .count()
    }

    fn toy_labeling(dims: (usize, usize, usize), labels: Vec<i32>, k: usize) -> SupervoxelLabeling {
        SupervoxelLabeling {
            dims,
            labels,
            centroids: vec![Centroid { x: 0.0, y: 0.0, z: 0.0, intensity: 0.0 }; k],
            sizes: vec![0; k],
            grid_step: 1.0,
            seed_cells: (0..k).map(|i| (i, 0, 0, 0)).collect(),
        }
    }

    #[test]
    fn connected_labeling_is_unchanged() {
        let dims = (4, 1, 1);
        let l = toy_labeling(dims, vec![0, 0, 1, 1], 2);
        let mask = BrainMask::full(dims);
        let out = enforce_connectivity(&l, &mask, Connectivity::Six).unwrap();
        assert_eq!(out.labels, vec![0, 0, 1, 1]);
    }

    #[test]
    fn fragment_moves_to_its_only_neighbor() {
        // Label 0 split: a big run and a lone voxel, separated by label 1.
        // The lone fragment touches only label 1.
        let dims = (7, 1, 1);
        let l = toy_labeling(dims, vec![0, 0, 0, 1, 1, 0, 1], 2);
        let mask = BrainMask::full(dims);
        let out = enforce_connectivity(&l, &mask, Connectivity::Six).unwrap();
        assert_eq!(out.labels, vec![0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(component_count(&out, &mask, Connectivity::Six, 0), 1);
        assert_eq!(component_count(&out, &mask, Connectivity::Six, 1), 1);
    }

    #[test]
    fn random_labelings_end_up_connected() {
        let dims = (12, 12, 12);
        let mask = BrainMask::full(dims);
        for seed in 0..5u64 {
            let mut rng = SplitMix64::new(seed);
            let k = 6;
            let labels: Vec<i32> = (0..12 * 12 * 12).map(|_| rng.next_below(k as u64) as i32).collect();
            let l = toy_labeling(dims, labels, k);
            let out = enforce_connectivity(&l, &mask, Connectivity::Six).unwrap();
            assert_eq!(out.sizes.iter().sum::<usize>(), mask.count());
            for lab in 0..k as i32 {
                let n = component_count(&out, &mask, Connectivity::Six, lab);
                assert!(n <= 1, "label {lab} has {n} components (seed {seed})");
            }
        }
    }

    #[test]
    fn disconnected_mask_islands_get_their_own_label() {
        // Two mask islands; all voxels initially labeled 0, with label 1
        // empty. The far island must take over label 1.
        let dims = (7, 1, 1);
        let mut mask_data = vec![true; 7];
        mask_data[3] = false;
        let mask = BrainMask::new(dims, mask_data).unwrap();
        let mut labels = vec![0i32; 7];
        labels[3] = -1;
        let l = toy_labeling(dims, labels, 2);
        let out = enforce_connectivity(&l, &mask, Connectivity::Six).unwrap();
        assert_eq!(component_count(&out, &mask, Connectivity::Six, 0), 1);
        assert_eq!(component_count(&out, &mask, Connectivity::Six, 1), 1);
        assert_eq!(out.sizes.iter().sum::<usize>(), 6);
    }

    #[test]
    fn twenty_six_connectivity_accepts_diagonal_components() {
        // Diagonal pair: two components under 6-connectivity, one under 26.
        let dims = (2, 2, 1);
        let l = toy_labeling(dims, vec![0, 1, 1, 0], 2);
        let mask = BrainMask::full(dims);
        let out = enforce_connectivity(&l, &mask, Connectivity::TwentySix).unwrap();
        assert_eq!(out.labels, vec![0, 1, 1, 0]);
    }

    // ----- cluster_ordering -----

    #[test]
    fn octant_cube_orders_origin_first() {
        let v = Volume3D::constant((8, 8, 8), (1.0, 1.0, 1.0), 5.0);
        let mask = BrainMask::full(v.dims);
        let params = SlicParams { k: 8, smoothing_sigma_mm: 0.0, ..SlicParams::default() };
        let l = run_slic(&v, &mask, &params).unwrap();
        // Cluster 0 must be the (0,0,0) octant.
        assert_eq!(l.labels[0], 0);
        assert_eq!(l.seed_cells[0], (0, 0, 0, 0));
        // x varies fastest in the ordering.
        assert_eq!(l.seed_cells[1], (1, 0, 0, 0));
        assert_eq!(l.seed_cells[2], (0, 1, 0, 0));
        assert_eq!(l.seed_cells[4], (0, 0, 1, 0));
    }

    #[test]
    fn ordering_is_invariant_to_label_permutation() {
        let v = radial_phantom(12, 60.0, 5.0);
        let mask = BrainMask::full(v.dims);
        let l = run_slic(&v, &mask, &SlicParams { k: 6, ..SlicParams::default() }).unwrap();
        // Scramble labels with an arbitrary permutation, then reorder.
        let perm = vec![3usize, 0, 5, 1, 4, 2];
        let scrambled = apply_ordering(&l, &perm);
        let restored = apply_ordering(&scrambled, &cluster_ordering(&scrambled));
        assert_eq!(restored.labels, l.labels);
        assert_eq!(restored.sizes, l.sizes);
    }

    #[test]
    fn matching_grids_align_centroids_across_volumes() {
        // Two phantoms with the same mask and grid: cluster i should land in
        // the same neighborhood (within S voxels of each other).
        let a = radial_phantom(16, 100.0, 6.0);
        let mut b = radial_phantom(16, 100.0, 6.0);
        let mut rng = SplitMix64::new(4);
        for x in &mut b.data {
            *x += rng.next_gaussian() * 2.0;
        }
        let mask = BrainMask::full((16, 16, 16));
        let params = SlicParams { k: 16, ..SlicParams::default() };
        let la = run_slic(&a, &mask, &params).unwrap();
        let lb = run_slic(&b, &mask, &params).unwrap();
        for i in 0..16 {
            if la.sizes[i] == 0 || lb.sizes[i] == 0 {
                continue;
            }
            let (ca, cb) = (&la.centroids[i], &lb.centroids[i]);
            let d = ((ca.x - cb.x).powi(2) + (ca.y - cb.y).powi(2) + (ca.z - cb.z).powi(2)).sqrt();
            assert!(d <= la.grid_step + 1e-9, "cluster {i} drifted {d} voxels");
        }
    }
}
