//! Records to normalized, split tensors.

use std::fs;
use std::path::Path;

use log::{info, warn};
use rand::Rng;

use crate::cohort::frames::{bin_timeframes, clean, TimeframeTensor};
use crate::cohort::io::{conform_to_schema, load_schema, load_tensors, save_schema, save_tensors};
use crate::cohort::normalize::{apply_normalization, fit_normalization, missing_report, NormalizationStats};
use crate::cohort::record::{CohortRecord, FeatureSchema};
use crate::cohort::split::{SplitMode, Splits};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Binning {
    pub h_hours: f64,
    pub p_max: usize,
}

impl Default for Binning {
    fn default() -> Self {
        Binning { h_hours: 4.0, p_max: 30 }
    }
}

/// Data-quality counters gathered while preparing a cohort.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QualityReport {
    pub out_of_range: usize,
    pub empty_stays: Vec<String>,
    /// Per numerical feature: stays that never observed it.
    pub missing: Vec<(String, usize)>,
    pub dropped_features: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct PreparedCohort {
    /// Schema after dropping constant features.
    pub schema: FeatureSchema,
    pub stats: NormalizationStats,
    pub splits: Splits<TimeframeTensor>,
    pub quality: QualityReport,
}

impl PreparedCohort {
    /// Writes `schema.txt`, `normalization.txt` and one tensor cache per split into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_schema(&dir.join("schema.txt"), &self.schema, "code_groups.txt")?;
        let stats = dir.join("normalization.txt");
        fs::write(&stats, self.stats.to_text()).map_err(|e| Error::io(&stats, e))?;
        save_tensors(&dir.join("train.tensors"), &self.splits.train)?;
        save_tensors(&dir.join("val.tensors"), &self.splits.val)?;
        save_tensors(&dir.join("test.tensors"), &self.splits.test)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let stats_path = dir.join("normalization.txt");
        let stats = NormalizationStats::from_text(&fs::read_to_string(&stats_path).map_err(|e| Error::io(&stats_path, e))?)?;
        let splits = Splits {
            train: load_tensors(&dir.join("train.tensors"))?,
            val: load_tensors(&dir.join("val.tensors"))?,
            test: load_tensors(&dir.join("test.tensors"))?,
        };
        Ok(PreparedCohort { schema: load_schema(&dir.join("schema.txt"))?, stats, splits, quality: QualityReport::default() })
    }
}

/// Conforms, cleans and bins every record; stays with no usable frame are skipped
/// and listed in the report.
pub fn tensorize(records: &[CohortRecord], schema: &FeatureSchema, binning: &Binning) -> Result<(Vec<TimeframeTensor>, QualityReport)> {
    let mut report = QualityReport::default();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let r = conform_to_schema(r.clone(), schema)?;
        let (r, c) = clean(&r, schema);
        report.out_of_range += c.out_of_range;
        match bin_timeframes(&r, schema, binning.h_hours, binning.p_max) {
            Ok(t) => out.push(t),
            Err(Error::EmptyStay(id)) => {
                warn!("stay {id} has no usable timeframe; skipped");
                report.empty_stays.push(id);
            }
            Err(e) => return Err(e),
        }
    }
    report.missing = missing_report(&out, schema);
    Ok((out, report))
}

/// Tensorizes, splits at the stay level, fits normalization on train and applies it
/// to every split.
pub fn prepare(
    records: &[CohortRecord],
    schema: &FeatureSchema,
    binning: &Binning,
    mode: &SplitMode,
    val_fraction: f64,
    rng: &mut impl Rng,
) -> Result<PreparedCohort> {
    let (tensors, quality) = tensorize(records, schema, binning)?;
    split_and_normalize(&tensors, schema, quality, mode, val_fraction, rng)
}

/// The split and normalization half of [`prepare`], for callers that re-split one
/// tensorized cohort many times.
pub fn split_and_normalize(
    tensors: &[TimeframeTensor],
    schema: &FeatureSchema,
    mut quality: QualityReport,
    mode: &SplitMode,
    val_fraction: f64,
    rng: &mut impl Rng,
) -> Result<PreparedCohort> {
    let raw = mode.split(tensors, val_fraction, rng)?;
    let stats = fit_normalization(&raw.train, schema)?;
    quality.dropped_features = stats.dropped.clone();
    let norm = |v: &[TimeframeTensor]| v.iter().map(|t| apply_normalization(t, &stats)).collect::<Result<Vec<_>>>();
    let splits = Splits { train: norm(&raw.train)?, val: norm(&raw.val)?, test: norm(&raw.test)? };
    info!(
        "prepared {} stays: train {}, val {}, test {}; {} out-of-range values dropped",
        tensors.len(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        quality.out_of_range
    );
    Ok(PreparedCohort { schema: stats.reduced_schema(schema)?, stats, splits, quality })
}
