//! Cleaning and timeframe binning: from an event stream to a `p_max × l` matrix.

use crate::cohort::record::{CohortRecord, EventKind, FeatureSchema};
use crate::error::{Error, Result};

/// Model-ready matrix of one stay.
///
/// Row `j` covers `[index − (p_max − j)·h, index − (p_max − j − 1)·h)`, so the last
/// row always abuts the index time and rows that fall before admission are padding.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeframeTensor {
    pub stay_id: String,
    pub label: u8,
    pub admission_year: i32,
    /// Numerical columns (`k`) then categorical indicator columns (`m`).
    pub k: usize,
    pub m: usize,
    /// Row-major `p_max × (k + m)`; padded rows are all zero.
    pub values: Vec<f32>,
    /// `true` for real timeframes.
    pub pad_mask: Vec<bool>,
    /// Per numerical feature: never observed during the stay's window.
    pub missing: Vec<bool>,
}

impl TimeframeTensor {
    pub fn l(&self) -> usize {
        self.k + self.m
    }

    pub fn p_max(&self) -> usize {
        self.pad_mask.len()
    }

    pub fn row(&self, j: usize) -> &[f32] {
        let l = self.l();
        &self.values[j * l..(j + 1) * l]
    }

    pub fn real_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.pad_mask.iter().enumerate().filter(|(_, &m)| m).map(|(j, _)| j)
    }

    pub fn n_real(&self) -> usize {
        self.pad_mask.iter().filter(|&&m| m).count()
    }
}

/// What [`clean`] removed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CleanReport {
    pub out_of_range: usize,
}

/// Drops numerical values outside the schema's valid range (bounds inclusive).
pub fn clean(record: &CohortRecord, schema: &FeatureSchema) -> (CohortRecord, CleanReport) {
    let mut report = CleanReport::default();
    let mut out = record.clone();
    out.events.retain(|e| match (e.kind, e.value, schema.numerical_index(&e.feature_id)) {
        (EventKind::Numerical, Some(v), Some(i)) => {
            let f = &schema.numerical()[i];
            let ok = v >= f.min && v <= f.max;
            if !ok {
                report.out_of_range += 1;
            }
            ok
        }
        _ => true,
    });
    (out, report)
}

/// Fills a binned series: interior gaps by linear interpolation between the nearest
/// observed bins, leading and trailing gaps by the nearest observed value.
/// `None` when nothing was observed.
pub fn fill_gaps(bins: &[Option<f64>]) -> Option<Vec<f64>> {
    let observed: Vec<(usize, f64)> = bins.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v))).collect();
    let (&(first_i, first_v), &(last_i, last_v)) = (observed.first()?, observed.last()?);
    let mut out = vec![0.0; bins.len()];
    out[..=first_i].iter_mut().for_each(|v| *v = first_v);
    out[last_i..].iter_mut().for_each(|v| *v = last_v);
    for w in observed.windows(2) {
        let ((i0, v0), (i1, v1)) = (w[0], w[1]);
        for (j, slot) in out.iter_mut().enumerate().take(i1 + 1).skip(i0) {
            let t = (j - i0) as f64 / (i1 - i0) as f64;
            *slot = v0 + t * (v1 - v0);
        }
    }
    Some(out)
}

/// Median with the mean-of-middle-two convention for even counts.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

/// Bins a cleaned stay into `p_max` frames of `h_hours` ending at the index time.
///
/// Only events in `[index − p_max·h, index)` at or after admission contribute.
/// Interior frames with no value for a feature are interpolated, edge frames
/// extended; features never observed are flagged in `missing` and left at zero.
pub fn bin_timeframes(record: &CohortRecord, schema: &FeatureSchema, h_hours: f64, p_max: usize) -> Result<TimeframeTensor> {
    if !(h_hours > 0.0) || p_max == 0 {
        return Err(Error::Config(format!("binning needs h > 0 and p_max > 0, got h={h_hours}, p_max={p_max}")));
    }
    let (k, m) = (schema.k(), schema.m());
    let l = k + m;
    let index = record.index_time;
    let start = index - p_max as f64 * h_hours;
    // A frame is real when it overlaps the stay, i.e. ends after admission (t = 0).
    let pad_mask: Vec<bool> = (0..p_max).map(|j| start + (j + 1) as f64 * h_hours > 0.0).collect();

    let mut num_bins: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); p_max]; k];
    let mut cat_hits = vec![false; p_max * m];
    let mut contributing = 0usize;
    for e in &record.events {
        let t = e.timestamp;
        if t < start || t >= index || t < 0.0 {
            continue;
        }
        debug_assert!(t < index, "post-index event reached binning");
        let j = (((t - start) / h_hours).floor() as usize).min(p_max - 1);
        match e.kind {
            EventKind::Numerical => {
                let f = schema
                    .numerical_index(&e.feature_id)
                    .ok_or_else(|| Error::Schema(format!("unknown numerical feature {}", e.feature_id)))?;
                num_bins[f][j].push(e.value.expect("numerical event carries a value"));
            }
            EventKind::Categorical => {
                let c = schema
                    .categorical_index(&e.feature_id)
                    .ok_or_else(|| Error::Schema(format!("unknown code {}", e.feature_id)))?;
                cat_hits[j * m + c] = true;
            }
        }
        contributing += 1;
    }
    let real: Vec<usize> = (0..p_max).filter(|&j| pad_mask[j]).collect();
    if real.is_empty() || contributing == 0 {
        return Err(Error::EmptyStay(record.stay_id.clone()));
    }

    let mut values = vec![0.0f32; p_max * l];
    let mut missing = vec![false; k];
    for (f, bins) in num_bins.iter_mut().enumerate() {
        let series: Vec<Option<f64>> = real.iter().map(|&j| median(&mut bins[j])).collect();
        match fill_gaps(&series) {
            Some(filled) => {
                for (&j, v) in real.iter().zip(filled) {
                    values[j * l + f] = v as f32;
                }
            }
            None => missing[f] = true,
        }
    }
    for &j in &real {
        for c in 0..m {
            if cat_hits[j * m + c] {
                values[j * l + k + c] = 1.0;
            }
        }
    }
    Ok(TimeframeTensor {
        stay_id: record.stay_id.clone(),
        label: record.label,
        admission_year: record.admission_year,
        k,
        m,
        values,
        pad_mask,
        missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::record::{Event, NumericalFeature};

    fn schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![
                NumericalFeature { id: "hr".into(), min: 0.0, max: 300.0 },
                NumericalFeature { id: "temp".into(), min: 25.0, max: 45.0 },
            ],
            vec!["C".into(), "D".into()],
            None,
        )
        .unwrap()
    }

    fn record(events: Vec<Event>, index: f64) -> CohortRecord {
        CohortRecord {
            stay_id: "s".into(),
            admission_year: 2012,
            events,
            index_time: index,
            label: 0,
            t1_hours: 120.0,
            t2_hours: 48.0,
        }
    }

    #[test]
    fn interpolation_and_edge_extension() {
        let bins = [None, Some(10.0), None, Some(20.0), None];
        assert_eq!(fill_gaps(&bins).unwrap(), vec![10.0, 10.0, 15.0, 20.0, 20.0]);
        assert_eq!(fill_gaps(&[None, None]), None);
        assert_eq!(fill_gaps(&[Some(3.0)]).unwrap(), vec![3.0]);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }

    #[test]
    fn clean_drops_out_of_range_only() {
        let r = record(vec![Event::numerical("hr", 80.0, 1.0), Event::categorical("C", 1.0)], 10.0);
        let (c, rep) = clean(&r, &schema());
        assert_eq!(c, r);
        assert_eq!(rep.out_of_range, 0);

        let r = record(vec![Event::numerical("hr", 900.0, 1.0), Event::numerical("hr", 300.0, 2.0)], 10.0);
        let (c, rep) = clean(&r, &schema());
        assert_eq!(c.events, vec![Event::numerical("hr", 300.0, 2.0)]);
        assert_eq!(rep.out_of_range, 1);
    }

    #[test]
    fn binning_layout() {
        // index at 40h, 4h frames, p_max 30: window starts at -80h; frames 20..30 are real.
        let events = vec![
            Event::numerical("hr", 1.0, 37.0),
            Event::numerical("hr", 2.0, 38.0),
            Event::numerical("hr", 3.0, 39.5),
            Event::numerical("hr", 4.0, 39.9),
            Event::categorical("C", 20.5),
            Event::categorical("C", 21.0),
            Event::numerical("temp", 37.0, 41.0),
        ];
        let t = bin_timeframes(&record(events, 40.0), &schema(), 4.0, 30).unwrap();
        assert_eq!(t.values.len(), 30 * 4);
        assert_eq!(t.n_real(), 10);
        assert!(!t.pad_mask[19] && t.pad_mask[20] && t.pad_mask[29]);
        assert_eq!(t.row(29)[0], 2.5);
        assert_eq!(t.row(25)[2], 1.0);
        assert_eq!(t.row(24)[2], 0.0);
        // hr only observed in the last frame: extended backwards.
        assert_eq!(t.row(20)[0], 2.5);
        // temp only observed after the index time.
        assert_eq!(t.missing, vec![false, true]);
        assert!(t.row(29)[1] == 0.0 && t.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn partially_covered_first_frame_is_real() {
        let t = bin_timeframes(&record(vec![Event::numerical("hr", 5.0, 0.5)], 6.0), &schema(), 4.0, 30).unwrap();
        assert_eq!(t.n_real(), 2);
        assert_eq!(t.row(28)[0], 5.0);
        assert_eq!(t.row(29)[0], 5.0);
    }

    #[test]
    fn empty_stay() {
        let only_late = record(vec![Event::numerical("hr", 80.0, 50.0)], 40.0);
        assert!(matches!(bin_timeframes(&only_late, &schema(), 4.0, 30), Err(Error::EmptyStay(_))));
        let at_admission = record(vec![Event::numerical("hr", 80.0, 0.0)], 0.0);
        assert!(matches!(bin_timeframes(&at_admission, &schema(), 4.0, 30), Err(Error::EmptyStay(_))));
        assert!(matches!(bin_timeframes(&at_admission, &schema(), 0.0, 30), Err(Error::Config(_))));
    }

    #[test]
    fn longer_stays_keep_the_most_recent_frames() {
        let events = vec![Event::numerical("hr", 1.0, 10.0), Event::numerical("hr", 9.0, 299.0)];
        let t = bin_timeframes(&record(events, 300.0), &schema(), 4.0, 30).unwrap();
        assert_eq!(t.n_real(), 30);
        assert!(t.real_rows().all(|j| t.row(j)[0] == 9.0));
    }
}
