//! Z-scoring of numerical columns with statistics fitted on the training split.

use log::warn;

use crate::cohort::frames::TimeframeTensor;
use crate::cohort::record::FeatureSchema;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub id: String,
    pub mean: f64,
    pub std: f64,
}

/// Per-feature training statistics; features with zero training variance are dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats {
    /// Kept numerical features, by original column.
    pub kept: Vec<(usize, FeatureStats)>,
    /// Dropped numerical feature ids.
    pub dropped: Vec<String>,
    /// Original `k`.
    pub k_in: usize,
}

impl NormalizationStats {
    pub fn k_out(&self) -> usize {
        self.kept.len()
    }

    /// The schema after dropping constant features.
    pub fn reduced_schema(&self, schema: &FeatureSchema) -> Result<FeatureSchema> {
        schema.with_numerical_subset(&self.kept.iter().map(|(i, _)| *i).collect::<Vec<_>>())
    }

    /// `id mean std` lines, dropped features as `id dropped`.
    pub fn to_text(&self) -> String {
        let mut s = format!("# k_in {}\n", self.k_in);
        for (col, f) in &self.kept {
            s.push_str(&format!("{} {} {} {}\n", col, f.id, f.mean, f.std));
        }
        for id in &self.dropped {
            s.push_str(&format!("- {id} dropped\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        let mut k_in = None;
        for (i, line) in text.lines().enumerate() {
            let bad = |m: &str| Error::Parse { line: i + 1, message: format!("{m}: `{line}`") };
            let f: Vec<&str> = line.split_whitespace().collect();
            match f[..] {
                [] => {}
                ["#", "k_in", n] => k_in = Some(n.parse().map_err(|_| bad("k_in"))?),
                ["-", id, "dropped"] => dropped.push(id.to_string()),
                [col, id, mean, std] => kept.push((
                    col.parse().map_err(|_| bad("column"))?,
                    FeatureStats {
                        id: id.to_string(),
                        mean: mean.parse().map_err(|_| bad("mean"))?,
                        std: std.parse().map_err(|_| bad("std"))?,
                    },
                )),
                _ => return Err(bad("unrecognized normalization entry")),
            }
        }
        let k_in = k_in.ok_or_else(|| Error::Parse { line: 1, message: "missing `# k_in` header".into() })?;
        Ok(NormalizationStats { kept, dropped, k_in })
    }
}

/// Mean and population std over all real rows of the training stays, per
/// numerical feature; stays that never observed a feature do not count toward it.
pub fn fit_normalization(train: &[TimeframeTensor], schema: &FeatureSchema) -> Result<NormalizationStats> {
    if train.is_empty() {
        return Err(Error::Contract("normalization needs at least one training stay".into()));
    }
    let k = schema.k();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for f in 0..k {
        let (mut n, mut sum) = (0usize, 0.0f64);
        for t in train.iter().filter(|t| !t.missing[f]) {
            for j in t.real_rows() {
                sum += t.row(j)[f] as f64;
                n += 1;
            }
        }
        let id = schema.numerical()[f].id.clone();
        if n == 0 {
            warn!("feature {id} never observed in the training split; dropped");
            dropped.push(id);
            continue;
        }
        let mean = sum / n as f64;
        let mut ss = 0.0;
        for t in train.iter().filter(|t| !t.missing[f]) {
            for j in t.real_rows() {
                let d = t.row(j)[f] as f64 - mean;
                ss += d * d;
            }
        }
        let std = (ss / n as f64).sqrt();
        if std > 0.0 {
            kept.push((f, FeatureStats { id, mean, std }));
        } else {
            warn!("feature {id} is constant in the training split; dropped");
            dropped.push(id);
        }
    }
    Ok(NormalizationStats { kept, dropped, k_in: k })
}

/// Z-scores kept numerical columns, drops the rest, zeroes features missing for the
/// stay (the training mean) and leaves indicator columns and padded rows untouched.
pub fn apply_normalization(t: &TimeframeTensor, stats: &NormalizationStats) -> Result<TimeframeTensor> {
    if t.k != stats.k_in {
        return Err(Error::Shape(format!("stay {} has k={}, stats expect {}", t.stay_id, t.k, stats.k_in)));
    }
    let (l_in, k_out) = (t.l(), stats.k_out());
    let l_out = k_out + t.m;
    let mut values = vec![0.0f32; t.p_max() * l_out];
    for j in t.real_rows() {
        let src = &t.values[j * l_in..(j + 1) * l_in];
        let dst = &mut values[j * l_out..(j + 1) * l_out];
        for (c, (f, s)) in stats.kept.iter().enumerate() {
            dst[c] = if t.missing[*f] { 0.0 } else { ((src[*f] as f64 - s.mean) / s.std) as f32 };
        }
        dst[k_out..].copy_from_slice(&src[t.k..]);
    }
    Ok(TimeframeTensor {
        stay_id: t.stay_id.clone(),
        label: t.label,
        admission_year: t.admission_year,
        k: k_out,
        m: t.m,
        values,
        pad_mask: t.pad_mask.clone(),
        missing: stats.kept.iter().map(|(f, _)| t.missing[*f]).collect(),
    })
}

/// Number of stays in which each numerical feature was never observed.
pub fn missing_report(tensors: &[TimeframeTensor], schema: &FeatureSchema) -> Vec<(String, usize)> {
    (0..schema.k())
        .map(|f| (schema.numerical()[f].id.clone(), tensors.iter().filter(|t| t.missing[f]).count()))
        .collect()
}
