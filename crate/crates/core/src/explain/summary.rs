//! Feature-level summaries of attributions and their CSV forms.

use std::path::Path;

use crate::cohort::{FeatureSchema, TimeframeTensor};
use crate::error::{Error, Result};
use crate::explain::attribution::Attribution;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureImportance {
    pub feature_id: String,
    /// Mean `|attribution|` over stays and real timeframes.
    pub mean_abs_attr: f64,
    /// Pearson correlation of attribution with the normalized input value; `None`
    /// when either is constant.
    pub sign_correlation: Option<f64>,
    /// 1 = most important.
    pub rank: usize,
}

#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    abs: f64,
    a: f64,
    x: f64,
    aa: f64,
    xx: f64,
    ax: f64,
}

/// Ranks schema columns by mean absolute attribution. `inputs[i]` must be the stay
/// `attributions[i]` explains. Stays are combined in `stay_id` order, so the table
/// does not depend on the order they are passed in.
pub fn summarize(
    attributions: &[Attribution],
    inputs: &[TimeframeTensor],
    schema: &FeatureSchema,
    top_n: Option<usize>,
) -> Result<Vec<FeatureImportance>> {
    if attributions.is_empty() {
        return Err(Error::Config("nothing to summarize".into()));
    }
    if attributions.len() != inputs.len() {
        return Err(Error::Shape(format!("{} attributions for {} stays", attributions.len(), inputs.len())));
    }
    let l = schema.l();
    let mut order: Vec<usize> = (0..attributions.len()).collect();
    order.sort_by(|&i, &j| attributions[i].stay_id.cmp(&attributions[j].stay_id));
    let mut acc = vec![Moments::default(); l];
    for i in order {
        let (a, x) = (&attributions[i], &inputs[i]);
        if a.stay_id != x.stay_id || a.l != l || x.l() != l || a.p != x.p_max() {
            return Err(Error::Shape(format!("attribution {} does not match stay {} or the schema", a.stay_id, x.stay_id)));
        }
        for j in (0..a.p).filter(|&j| a.pad_mask[j]) {
            for (c, m) in acc.iter_mut().enumerate() {
                let (av, xv) = (a.values[j * l + c], x.values[j * l + c] as f64);
                m.n += 1.0;
                m.abs += av.abs();
                m.a += av;
                m.x += xv;
                m.aa += av * av;
                m.xx += xv * xv;
                m.ax += av * xv;
            }
        }
    }
    let mut rows: Vec<FeatureImportance> = acc
        .iter()
        .enumerate()
        .map(|(c, m)| {
            let n = m.n.max(1.0);
            let cov = m.ax / n - (m.a / n) * (m.x / n);
            let va = m.aa / n - (m.a / n).powi(2);
            let vx = m.xx / n - (m.x / n).powi(2);
            let corr = (va > 1e-24 && vx > 1e-24).then(|| (cov / (va * vx).sqrt()).clamp(-1.0, 1.0));
            FeatureImportance { feature_id: schema.column_name(c).to_string(), mean_abs_attr: m.abs / n, sign_correlation: corr, rank: 0 }
        })
        .collect();
    // Stable sort: equal importance keeps schema order.
    rows.sort_by(|a, b| b.mean_abs_attr.total_cmp(&a.mean_abs_attr));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    if let Some(n) = top_n {
        rows.truncate(n);
    }
    Ok(rows)
}

/// `stay_id,timeframe,feature_id,value` for every real timeframe.
pub fn write_attributions_csv(path: &Path, attributions: &[Attribution], schema: &FeatureSchema) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["stay_id", "timeframe", "feature_id", "value"])?;
    for a in attributions {
        for j in (0..a.p).filter(|&j| a.pad_mask[j]) {
            for c in 0..a.l {
                w.write_record([a.stay_id.as_str(), &j.to_string(), schema.column_name(c), &a.values[j * a.l + c].to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `feature_id,mean_abs_attr,sign_correlation,rank`; an undefined correlation is empty.
pub fn write_summary_csv(path: &Path, rows: &[FeatureImportance]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["feature_id", "mean_abs_attr", "sign_correlation", "rank"])?;
    for r in rows {
        w.write_record([
            r.feature_id.clone(),
            r.mean_abs_attr.to_string(),
            r.sign_correlation.map_or(String::new(), |c| c.to_string()),
            r.rank.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
