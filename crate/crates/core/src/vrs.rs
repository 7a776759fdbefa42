//! Normative CBF tables and vascular risk scoring.
//!
//! A normative table holds the mean and sample standard deviation of
//! participant mean CBF per (age bin, sex) cell. A participant whose mean
//! CBF falls below `mu - sigma` of their cell is At-Risk; the perfusion
//! deficit is the shortfall below that bound and the continuous score is
//! `vrs = k * deficit`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::manifest::Sex;

/// Ordered, disjoint, inclusive integer age ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeBins {
    pub bins: Vec<(u32, u32)>,
}

impl AgeBins {
    pub fn new(bins: Vec<(u32, u32)>) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::Config("age bins must not be empty".into()));
        }
        for &(lo, hi) in &bins {
            if lo > hi {
                return Err(Error::Config(format!("age bin {lo}-{hi} is inverted")));
            }
        }
        for pair in bins.windows(2) {
            if pair[1].0 <= pair[0].1 {
                return Err(Error::Config(format!(
                    "age bins {}-{} and {}-{} overlap or are out of order",
                    pair[0].0, pair[0].1, pair[1].0, pair[1].1
                )));
            }
        }
        Ok(Self { bins })
    }

    /// Lifespan bins: 8-12, 13-20, 21-30, 31-50, 51-70, 71-92.
    pub fn standard() -> Self {
        Self { bins: vec![(8, 12), (13, 20), (21, 30), (31, 50), (51, 70), (71, 92)] }
    }

    /// Coarser preset: 8-20, 21-40, 41-80, 81-92.
    pub fn coarse() -> Self {
        Self { bins: vec![(8, 20), (21, 40), (41, 80), (81, 92)] }
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn bin_of(&self, age: u32) -> Result<usize> {
        self.bins
            .iter()
            .position(|&(lo, hi)| age >= lo && age <= hi)
            .ok_or(Error::BinCoverage(age))
    }

    /// Parse "8-12,13-20,..." as used in config files.
    pub fn parse(text: &str) -> Result<Self> {
        let mut bins = Vec::new();
        for part in text.split(',') {
            let part = part.trim();
            let (lo, hi) = part
                .split_once('-')
                .ok_or_else(|| Error::Parse(format!("age bin '{part}' is not 'lo-hi'")))?;
            let lo: u32 = lo.trim().parse().map_err(|_| Error::Parse(format!("bad bin bound '{lo}'")))?;
            let hi: u32 = hi.trim().parse().map_err(|_| Error::Parse(format!("bad bin bound '{hi}'")))?;
            bins.push((lo, hi));
        }
        Self::new(bins)
    }
}

impl std::fmt::Display for AgeBins {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.bins.iter().map(|(lo, hi)| format!("{lo}-{hi}")).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormativeCell {
    pub lo: u32,
    pub hi: u32,
    pub sex: Sex,
    pub mu: f64,
    pub sigma: f64,
    pub n: usize,
    pub usable: bool,
}

/// Per (age bin, sex) normative statistics; cells are ordered bin-major
/// with males before females.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormativeTable {
    pub bins: AgeBins,
    pub cells: Vec<NormativeCell>,
}

impl NormativeTable {
    pub fn cell(&self, age: u32, sex: Sex) -> Result<&NormativeCell> {
        let bin = self.bins.bin_of(age)?;
        let offset = match sex {
            Sex::M => 0,
            Sex::F => 1,
        };
        Ok(&self.cells[2 * bin + offset])
    }
}

/// How the participant-level mean CBF is aggregated from cluster features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanWeighting {
    /// Unweighted mean over nonempty clusters.
    ClusterMean,
    /// Cluster-size weighted mean; equals the masked-volume mean.
    VoxelWeighted,
}

impl std::str::FromStr for MeanWeighting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cluster_mean" => Ok(Self::ClusterMean),
            "voxel_weighted" => Ok(Self::VoxelWeighted),
            other => Err(Error::Parse(format!("unknown weighting '{other}'"))),
        }
    }
}

/// Participant mean CBF from their feature vector.
pub fn participant_mean_cbf(fv: &FeatureVector, weighting: MeanWeighting) -> Result<f64> {
    let nonempty: Vec<usize> = (0..fv.cluster_means.len())
        .filter(|&i| fv.cluster_sizes[i] > 0)
        .collect();
    if nonempty.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "participant {} has no nonempty clusters",
            fv.participant_id
        )));
    }
    Ok(match weighting {
        MeanWeighting::ClusterMean => {
            nonempty.iter().map(|&i| fv.cluster_means[i]).sum::<f64>() / nonempty.len() as f64
        }
        MeanWeighting::VoxelWeighted => {
            let total: usize = nonempty.iter().map(|&i| fv.cluster_sizes[i]).sum();
            nonempty
                .iter()
                .map(|&i| fv.cluster_means[i] * fv.cluster_sizes[i] as f64)
                .sum::<f64>()
                / total as f64
        }
    })
}

/// Fit the per-cell normative table; sigma is the sample standard deviation
/// (ddof 1), cells with n < 2 are flagged unusable.
pub fn fit_normative(
    means: &[f64],
    ages: &[u32],
    sexes: &[Sex],
    bins: &AgeBins,
) -> Result<NormativeTable> {
    if means.len() != ages.len() || means.len() != sexes.len() {
        return Err(Error::LengthMismatch { left: means.len(), right: ages.len().max(sexes.len()) });
    }
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); 2 * bins.len()];
    for ((&m, &age), &sex) in means.iter().zip(ages).zip(sexes) {
        let bin = bins.bin_of(age)?;
        let offset = match sex {
            Sex::M => 0,
            Sex::F => 1,
        };
        buckets[2 * bin + offset].push(m);
    }
    let mut cells = Vec::with_capacity(buckets.len());
    for (i, values) in buckets.iter().enumerate() {
        let (lo, hi) = bins.bins[i / 2];
        let sex = if i % 2 == 0 { Sex::M } else { Sex::F };
        let n = values.len();
        let (mu, sigma) = if n >= 2 {
            let mu = values.iter().sum::<f64>() / n as f64;
            let ss: f64 = values.iter().map(|v| (v - mu).powi(2)).sum();
            (mu, (ss / (n as f64 - 1.0)).sqrt())
        } else if n == 1 {
            (values[0], 0.0)
        } else {
            (0.0, 0.0)
        };
        cells.push(NormativeCell { lo, hi, sex, mu, sigma, n, usable: n >= 2 });
    }
    Ok(NormativeTable { bins: bins.clone(), cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RiskStatus {
    Normal,
    AtRisk,
}

impl std::fmt::Display for RiskStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RiskStatus::Normal => "Normal",
            RiskStatus::AtRisk => "AtRisk",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VrsResult {
    pub participant_id: String,
    pub cbf: f64,
    pub bin_index: usize,
    pub sex: Sex,
    pub lower_bound: f64,
    pub status: RiskStatus,
    pub deficit: f64,
    pub vrs: f64,
    pub k: f64,
}

/// Score one participant against the normative table.
///
/// The boundary `cbf == mu - sigma` counts as Normal with zero deficit.
pub fn score(cbf: f64, age: u32, sex: Sex, table: &NormativeTable, k: f64) -> Result<VrsResult> {
    if !(k > 0.0) {
        return Err(Error::InvalidK(k));
    }
    let bin_index = table.bins.bin_of(age)?;
    let cell = table.cell(age, sex)?;
    if !cell.usable {
        return Err(Error::UnusableCell { age, sex: sex.as_str().into() });
    }
    let lower_bound = cell.mu - cell.sigma;
    let deficit = (lower_bound - cbf).max(0.0);
    let status = if deficit > 0.0 { RiskStatus::AtRisk } else { RiskStatus::Normal };
    Ok(VrsResult {
        participant_id: String::new(),
        cbf,
        bin_index,
        sex,
        lower_bound,
        status,
        deficit,
        vrs: k * deficit,
        k,
    })
}

/// Score a whole cohort. With `leave_one_out` the table is refit per
/// participant with that participant excluded.
pub fn score_cohort(
    ids: &[String],
    means: &[f64],
    ages: &[u32],
    sexes: &[Sex],
    bins: &AgeBins,
    k: f64,
    leave_one_out: bool,
) -> Result<Vec<VrsResult>> {
    let table = fit_normative(means, ages, sexes, bins)?;
    let mut out = Vec::with_capacity(means.len());
    for i in 0..means.len() {
        let t;
        let table_ref = if leave_one_out {
            let mut m = means.to_vec();
            let mut a = ages.to_vec();
            let mut s = sexes.to_vec();
            m.remove(i);
            a.remove(i);
            s.remove(i);
            t = fit_normative(&m, &a, &s, bins)?;
            &t
        } else {
            &table
        };
        let mut r = score(means[i], ages[i], sexes[i], table_ref, k)?;
        r.participant_id = ids[i].clone();
        out.push(r);
    }
    Ok(out)
}

/// One row of the age-trend summary (same cells as the normative table).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendCell {
    pub lo: u32,
    pub hi: u32,
    pub sex: Sex,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Per-bin per-sex mean/std/n of participant mean CBF, for plotting.
pub fn age_trend(means: &[f64], ages: &[u32], sexes: &[Sex], bins: &AgeBins) -> Result<Vec<TrendCell>> {
    let table = fit_normative(means, ages, sexes, bins)?;
    Ok(table
        .cells
        .iter()
        .map(|c| TrendCell { lo: c.lo, hi: c.hi, sex: c.sex, mean: c.mu, std: c.sigma, n: c.n })
        .collect())
}

/// Serialize trend cells as CSV (`bin_lo,bin_hi,sex,mean,std,n`).
pub fn trend_to_csv(cells: &[TrendCell]) -> String {
    let mut out = String::from("bin_lo,bin_hi,sex,mean,std,n\n");
    for c in cells {
        out.push_str(&format!("{},{},{},{},{},{}\n", c.lo, c.hi, c.sex, c.mean, c.std, c.n));
    }
    out
}

pub fn trend_from_csv(text: &str) -> Result<Vec<TrendCell>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty trend file".into()))?;
    if header.trim() != "bin_lo,bin_hi,sex,mean,std,n" {
        return Err(Error::Parse(format!("unexpected trend header '{header}'")));
    }
    let mut cells = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(Error::Parse(format!("trend row {} has {} fields", i + 2, parts.len())));
        }
        cells.push(TrendCell {
            lo: parts[0].parse().map_err(|_| Error::Parse(format!("bad bin_lo '{}'", parts[0])))?,
            hi: parts[1].parse().map_err(|_| Error::Parse(format!("bad bin_hi '{}'", parts[1])))?,
            sex: Sex::parse(parts[2])?,
            mean: parts[3].parse().map_err(|_| Error::Parse(format!("bad mean '{}'", parts[3])))?,
            std: parts[4].parse().map_err(|_| Error::Parse(format!("bad std '{}'", parts[4])))?,
            n: parts[5].parse().map_err(|_| Error::Parse(format!("bad n '{}'", parts[5])))?,
        });
    }
    if cells.is_empty() {
        return Err(Error::Parse("trend file has no data rows".into()));
    }
    Ok(cells)
}

/// CSV report rows: `id,age,sex,cbf,lower_bound,status,deficit,vrs`.
pub fn vrs_report_csv(results: &[VrsResult], ages: &[u32]) -> String {
    let mut out = String::from("id,age,sex,cbf,lower_bound,status,deficit,vrs\n");
    for (r, &age) in results.iter().zip(ages) {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.participant_id, age, r.sex, r.cbf, r.lower_bound, r.status, r.deficit, r.vrs
        ));
    }
    out
}
