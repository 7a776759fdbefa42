//! Deterministic synthetic volumes and cohorts.
//!
//! Phantoms follow `intensity = max(0, base - decay * r_mm) + N(0, sigma)`
//! with `r_mm` the distance from the volume center in millimetres. Cohorts
//! scale the phantom by an age factor and give female participants a
//! multiplicative uplift inside the spatial footprint of chosen supervoxels
//! from a reference segmentation of the noise-free phantom. Every stochastic
//! draw comes from a per-participant SplitMix64 substream, so cohorts are
//! bit-reproducible for a fixed seed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{CohortManifest, ParticipantMeta, Sex};
use crate::rng::SplitMix64;
use crate::slic::{run_slic, SlicParams, SupervoxelLabeling};
use crate::volume::{auto_mask, normalize_intensity, BrainMask, NormalizeMode, Volume3D};
use crate::vrs::AgeBins;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: (usize, usize, usize),
    pub spacing: (f64, f64, f64),
    pub base_mean: f64,
    /// Intensity drop per millimetre from the volume center.
    pub radial_decay: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: (32, 32, 32),
            spacing: (1.0, 1.0, 1.0),
            base_mean: 60.0,
            radial_decay: 2.5,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    fn validate(&self) -> Result<()> {
        let (nx, ny, nz) = self.dims;
        if nx < 4 || ny < 4 || nz < 4 {
            return Err(Error::Config(format!("phantom dims must each be >= 4, got {:?}", self.dims)));
        }
        if !(self.base_mean > 0.0) {
            return Err(Error::Config("base_mean must be positive".into()));
        }
        if self.radial_decay < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::Config("radial_decay and noise_sigma must be >= 0".into()));
        }
        Ok(())
    }

    /// Noise-free intensity at a voxel.
    fn clean_intensity(&self, x: usize, y: usize, z: usize) -> f64 {
        let (nx, ny, nz) = self.dims;
        let cx = (nx as f64 - 1.0) / 2.0 * self.spacing.0;
        let cy = (ny as f64 - 1.0) / 2.0 * self.spacing.1;
        let cz = (nz as f64 - 1.0) / 2.0 * self.spacing.2;
        let dx = x as f64 * self.spacing.0 - cx;
        let dy = y as f64 * self.spacing.1 - cy;
        let dz = z as f64 * self.spacing.2 - cz;
        let r = (dx * dx + dy * dy + dz * dz).sqrt();
        (self.base_mean - self.radial_decay * r).max(0.0)
    }
}

/// Generate one phantom volume; reproducible per seed.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Volume3D> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    generate_phantom_with_rng(spec, &mut rng)
}

fn generate_phantom_with_rng(spec: &PhantomSpec, rng: &mut SplitMix64) -> Result<Volume3D> {
    let (nx, ny, nz) = spec.dims;
    let mut data = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let mut val = spec.clean_intensity(x, y, z);
                if spec.noise_sigma > 0.0 {
                    val += spec.noise_sigma * rng.next_gaussian();
                }
                data.push(val);
            }
        }
    }
    Volume3D::new(spec.dims, spec.spacing, data)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortSpec {
    pub bins: AgeBins,
    /// Per bin: (male count, female count).
    pub per_bin: Vec<(usize, usize)>,
    /// Supervoxel indices (in the reference labeling) receiving the effect.
    pub effect_clusters: Vec<usize>,
    /// Fractional CBF uplift for females inside the effect footprint.
    pub effect_size: f64,
    /// Fractional CBF decline per year relative to the youngest bin edge.
    pub age_slope: f64,
    pub seed: u64,
}

impl CohortSpec {
    /// Equal participant counts per (sex, bin) cell.
    pub fn balanced(
        n_per_group: usize,
        bins: AgeBins,
        effect_clusters: Vec<usize>,
        effect_size: f64,
        age_slope: f64,
        seed: u64,
    ) -> Self {
        let per_bin = vec![(n_per_group, n_per_group); bins.len()];
        Self { bins, per_bin, effect_clusters, effect_size, age_slope, seed }
    }

    /// Distribute sex totals across bins, remainders to the earliest bins.
    pub fn with_totals(
        n_male: usize,
        n_female: usize,
        bins: AgeBins,
        effect_clusters: Vec<usize>,
        effect_size: f64,
        age_slope: f64,
        seed: u64,
    ) -> Self {
        let b = bins.len();
        let mut per_bin = Vec::with_capacity(b);
        for i in 0..b {
            let m = n_male / b + usize::from(i < n_male % b);
            let f = n_female / b + usize::from(i < n_female % b);
            per_bin.push((m, f));
        }
        Self { bins, per_bin, effect_clusters, effect_size, age_slope, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.per_bin.len() != self.bins.len() {
            return Err(Error::Config(format!(
                "per_bin has {} entries for {} bins",
                self.per_bin.len(),
                self.bins.len()
            )));
        }
        if self.per_bin.iter().all(|&(m, f)| m == 0 && f == 0) {
            return Err(Error::Config("cohort has no participants".into()));
        }
        if self.effect_size < 0.0 {
            return Err(Error::Config("effect_size must be >= 0".into()));
        }
        if self.age_slope < 0.0 {
            return Err(Error::Config("age_slope must be >= 0".into()));
        }
        let min_age = self.bins.bins.first().map(|b| b.0).unwrap_or(0);
        let max_age = self.bins.bins.last().map(|b| b.1).unwrap_or(0);
        if self.age_slope * (max_age - min_age) as f64 >= 1.0 {
            return Err(Error::Config(format!(
                "age_slope {} drives CBF negative over ages {min_age}-{max_age}",
                self.age_slope
            )));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.per_bin.iter().map(|&(m, f)| m + f).sum()
    }
}

/// A generated cohort: manifest, volumes (manifest order), the reference
/// labeling that defined the effect footprint, and the footprint itself.
#[derive(Debug, Clone)]
pub struct GeneratedCohort {
    pub manifest: CohortManifest,
    pub volumes: Vec<Volume3D>,
    pub reference: SupervoxelLabeling,
    pub effect_footprint: Vec<bool>,
}

/// Reference segmentation of the noise-free phantom, processed the same way
/// the analysis pipeline does (auto mask, z-score, SLIC).
pub fn reference_labeling(
    phantom: &PhantomSpec,
    slic: &SlicParams,
) -> Result<(SupervoxelLabeling, BrainMask)> {
    let clean = PhantomSpec { noise_sigma: 0.0, ..phantom.clone() };
    let volume = generate_phantom(&clean)?;
    let mask = auto_mask(&volume, 0.05)?;
    let normalized = normalize_intensity(&volume, &mask, NormalizeMode::Zscore)?;
    let labeling = run_slic(&normalized, &mask, slic)?;
    Ok((labeling, mask))
}

/// Generate a full cohort of phantoms with sex and age effects.
pub fn generate_cohort(
    spec: &CohortSpec,
    phantom: &PhantomSpec,
    slic: &SlicParams,
) -> Result<GeneratedCohort> {
    spec.validate()?;
    phantom.validate()?;
    let (reference, _mask) = reference_labeling(phantom, slic)?;
    for &c in &spec.effect_clusters {
        if c >= reference.k() {
            return Err(Error::Config(format!(
                "effect cluster {c} is out of range for k = {}",
                reference.k()
            )));
        }
    }
    let footprint: Vec<bool> = reference
        .labels
        .iter()
        .map(|&lab| lab >= 0 && spec.effect_clusters.contains(&(lab as usize)))
        .collect();

    let min_age = spec.bins.bins.first().map(|b| b.0).unwrap_or(0);
    let total = spec.total();
    let width = total.to_string().len().max(3);

    let mut rows = Vec::with_capacity(total);
    let mut volumes = Vec::with_capacity(total);
    let mut index = 0u64;
    for (bin_idx, &(n_m, n_f)) in spec.per_bin.iter().enumerate() {
        let (lo, hi) = spec.bins.bins[bin_idx];
        for sex in [Sex::M, Sex::F] {
            let n = match sex {
                Sex::M => n_m,
                Sex::F => n_f,
            };
            for _ in 0..n {
                let mut rng = SplitMix64::substream(spec.seed, index);
                let age = rng.next_range_inclusive(lo as u64, hi as u64) as u32;
                let mut volume = generate_phantom_with_rng(phantom, &mut rng)?;
                let age_factor = 1.0 - spec.age_slope * (age - min_age) as f64;
                let uplift = 1.0 + spec.effect_size;
                for (i, val) in volume.data.iter_mut().enumerate() {
                    *val *= age_factor;
                    if sex == Sex::F && footprint[i] {
                        *val *= uplift;
                    }
                }
                let id = format!("sub-{:0width$}", index + 1, width = width);
                rows.push(ParticipantMeta {
                    id: id.clone(),
                    age,
                    sex,
                    volume_path: format!("{id}.nii.gz"),
                });
                volumes.push(volume);
                index += 1;
            }
        }
    }

    Ok(GeneratedCohort {
        manifest: CohortManifest::new(rows)?,
        volumes,
        reference,
        effect_footprint: footprint,
    })
}

/// Write a generated cohort to disk: one `.nii.gz` per participant plus
/// `manifest.csv`. Returns the manifest path.
pub fn write_cohort(cohort: &GeneratedCohort, dir: &std::path::Path) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir)?;
    for (meta, volume) in cohort.manifest.rows.iter().zip(&cohort.volumes) {
        crate::nifti::save_nifti(volume, dir.join(&meta.volume_path))?;
    }
    let manifest_path = dir.join("manifest.csv");
    crate::manifest::save_manifest(&cohort.manifest, &manifest_path)?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::supervoxel_means;
    use crate::stats::ttest_two_sample;

    #[test]
    fn zero_decay_zero_noise_is_constant() {
        let spec = PhantomSpec {
            dims: (6, 6, 6),
            base_mean: 50.0,
            radial_decay: 0.0,
            noise_sigma: 0.0,
            ..PhantomSpec::default()
        };
        let v = generate_phantom(&spec).unwrap();
        assert!(v.data.iter().all(|&x| x == 50.0));
    }

    #[test]
    fn radial_decay_formula_at_known_distances() {
        // Odd dims put the center on a voxel; 5 mm along an axis drops
        // decay * 5.
        let spec = PhantomSpec {
            dims: (11, 11, 11),
            spacing: (1.0, 1.0, 1.0),
            base_mean: 50.0,
            radial_decay: 1.0,
            noise_sigma: 0.0,
            seed: 0,
        };
        let v = generate_phantom(&spec).unwrap();
        assert_eq!(v.at(5, 5, 5), 50.0);
        assert_eq!(v.at(0, 5, 5), 45.0);
        assert_eq!(v.at(5, 10, 5), 45.0);
    }

    #[test]
    fn phantom_generation_is_bit_deterministic() {
        let spec = PhantomSpec { noise_sigma: 4.0, seed: 99, ..PhantomSpec::default() };
        let a = generate_phantom(&spec).unwrap();
        let b = generate_phantom(&spec).unwrap();
        assert_eq!(a.data, b.data);
    }

    fn small_phantom() -> PhantomSpec {
        PhantomSpec {
            dims: (16, 16, 16),
            spacing: (1.0, 1.0, 1.0),
            base_mean: 60.0,
            radial_decay: 3.0,
            noise_sigma: 3.0,
            seed: 1,
        }
    }

    #[test]
    fn null_cohort_groups_are_statistically_equal() {
        let bins = AgeBins::new(vec![(30, 40)]).unwrap();
        let spec = CohortSpec::balanced(20, bins, vec![], 0.0, 0.0, 5);
        let cohort = generate_cohort(&spec, &small_phantom(), &SlicParams { k: 12, ..SlicParams::default() }).unwrap();
        let mut male = Vec::new();
        let mut female = Vec::new();
        for (meta, v) in cohort.manifest.rows.iter().zip(&cohort.volumes) {
            let mean = v.data.iter().sum::<f64>() / v.data.len() as f64;
            match meta.sex {
                Sex::M => male.push(mean),
                Sex::F => female.push(mean),
            }
        }
        let t = ttest_two_sample(&male, &female, crate::stats::TTestVariant::Pooled).unwrap();
        assert!(t.p_two_sided > 0.01, "null cohort separated: p = {}", t.p_two_sided);
    }

    #[test]
    fn effect_clusters_carry_the_injected_gap() {
        let bins = AgeBins::new(vec![(30, 40)]).unwrap();
        let effect = vec![0, 3, 5];
        let spec = CohortSpec::balanced(15, bins, effect.clone(), 0.10, 0.0, 6);
        let slic = SlicParams { k: 12, ..SlicParams::default() };
        let cohort = generate_cohort(&spec, &small_phantom(), &slic).unwrap();
        let k = cohort.reference.k();
        let mut male = vec![Vec::new(); k];
        let mut female = vec![Vec::new(); k];
        for (meta, v) in cohort.manifest.rows.iter().zip(&cohort.volumes) {
            let means = supervoxel_means(v, &cohort.reference).unwrap();
            for c in 0..k {
                match meta.sex {
                    Sex::M => male[c].push(means[c]),
                    Sex::F => female[c].push(means[c]),
                }
            }
        }
        for c in 0..k {
            if cohort.reference.sizes[c] == 0 {
                continue;
            }
            let m: f64 = male[c].iter().sum::<f64>() / male[c].len() as f64;
            let f: f64 = female[c].iter().sum::<f64>() / female[c].len() as f64;
            let gap = f / m - 1.0;
            if effect.contains(&c) {
                assert!((gap - 0.10).abs() < 0.03, "cluster {c} gap {gap}");
            } else {
                assert!(gap.abs() < 0.03, "cluster {c} spurious gap {gap}");
            }
        }
    }

    #[test]
    fn age_slope_scales_participant_means() {
        // Two single-age bins and no noise: mean ratio equals the age
        // factor ratio exactly.
        let bins = AgeBins::new(vec![(10, 10), (90, 90)]).unwrap();
        let spec = CohortSpec {
            bins,
            per_bin: vec![(1, 0), (1, 0)],
            effect_clusters: vec![],
            effect_size: 0.0,
            age_slope: 0.005,
            seed: 2,
        };
        let phantom = PhantomSpec { noise_sigma: 0.0, ..small_phantom() };
        let cohort = generate_cohort(&spec, &phantom, &SlicParams { k: 8, ..SlicParams::default() }).unwrap();
        let mean = |v: &Volume3D| v.data.iter().sum::<f64>() / v.data.len() as f64;
        let young = mean(&cohort.volumes[0]);
        let old = mean(&cohort.volumes[1]);
        assert!(((old / young) - 0.6).abs() < 1e-12, "ratio {}", old / young);
    }

    #[test]
    fn cohort_generation_is_deterministic() {
        let bins = AgeBins::new(vec![(20, 40)]).unwrap();
        let spec = CohortSpec::balanced(3, bins, vec![1], 0.1, 0.002, 11);
        let slic = SlicParams { k: 8, ..SlicParams::default() };
        let a = generate_cohort(&spec, &small_phantom(), &slic).unwrap();
        let b = generate_cohort(&spec, &small_phantom(), &slic).unwrap();
        assert_eq!(a.manifest, b.manifest);
        for (va, vb) in a.volumes.iter().zip(&b.volumes) {
            assert_eq!(va.data, vb.data);
        }
    }

    #[test]
    fn effect_cluster_out_of_range_is_config_error() {
        let bins = AgeBins::new(vec![(20, 40)]).unwrap();
        let spec = CohortSpec::balanced(2, bins, vec![99], 0.1, 0.0, 1);
        let slic = SlicParams { k: 8, ..SlicParams::default() };
        assert!(matches!(
            generate_cohort(&spec, &small_phantom(), &slic),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn with_totals_distributes_remainders_to_early_bins() {
        let spec = CohortSpec::with_totals(89, 97, AgeBins::standard(), vec![], 0.0, 0.0, 0);
        let m: usize = spec.per_bin.iter().map(|&(m, _)| m).sum();
        let f: usize = spec.per_bin.iter().map(|&(_, f)| f).sum();
        assert_eq!(m, 89);
        assert_eq!(f, 97);
        assert_eq!(spec.per_bin[0], (15, 17));
        assert_eq!(spec.per_bin[5], (14, 16));
    }
}
