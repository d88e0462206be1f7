//! Aggregation of per-run metrics into variant summaries and pairwise tests.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::experiment::RunMetric;
use crate::eval::stats::{mean, std_dev, welch_t_test, WelchResult};

const METRIC_HEADER: [&str; 8] = ["variant", "run", "seed", "n_train", "n_val", "n_test", "auc", "epoch_selected"];

#[derive(Clone, Debug, PartialEq)]
pub struct VariantSummary {
    pub variant: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// Mean AUC minus the full model's, when a `full` variant is present.
    pub delta_vs_full: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    /// `None` when the test is undefined (fewer than two runs, or no variance).
    pub welch: Option<WelchResult>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub summaries: Vec<VariantSummary>,
    pub comparisons: Vec<Comparison>,
}

/// `"0.812 ± 0.004"`.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.3} ± {std:.3}")
}

/// Variants in order of first appearance.
pub fn report(metrics: &[RunMetric]) -> Result<Report> {
    if metrics.is_empty() {
        return Err(Error::Config("report needs at least one metric row".into()));
    }
    let mut names: Vec<&str> = Vec::new();
    for m in metrics {
        if !names.contains(&m.variant.as_str()) {
            names.push(&m.variant);
        }
    }
    let aucs = |name: &str| metrics.iter().filter(|m| m.variant == name).map(|m| m.auc).collect::<Vec<f64>>();
    let full_mean = names.contains(&"full").then(|| mean(&aucs("full")));
    let summaries = names
        .iter()
        .map(|&name| {
            let a = aucs(name);
            let mu = mean(&a);
            VariantSummary { variant: name.to_string(), n: a.len(), mean: mu, std: std_dev(&a), delta_vs_full: full_mean.map(|f| mu - f) }
        })
        .collect();
    let mut comparisons = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            comparisons.push(Comparison { a: a.to_string(), b: b.to_string(), welch: welch_t_test(&aucs(a), &aucs(b)).ok() });
        }
    }
    Ok(Report { summaries, comparisons })
}

impl Report {
    pub fn to_text(&self) -> String {
        let mut s = String::from("variant                          runs  test AUC         delta vs full\n");
        for v in &self.summaries {
            let delta = v.delta_vs_full.map_or("-".to_string(), |d| format!("{d:+.3}"));
            let _ = writeln!(s, "{:<32} {:>4}  {:<16} {}", v.variant, v.n, format_mean_std(v.mean, v.std), delta);
        }
        if !self.comparisons.is_empty() {
            s.push_str("\npairwise Welch t-tests\n");
            for c in &self.comparisons {
                match &c.welch {
                    Some(w) => {
                        let _ = writeln!(s, "{} vs {}: t = {:.3}, dof = {:.1}, p = {:.4}", c.a, c.b, w.t, w.dof, w.p);
                    }
                    None => {
                        let _ = writeln!(s, "{} vs {}: undefined", c.a, c.b);
                    }
                }
            }
        }
        s
    }

    /// Summary CSV: `variant,n,mean_auc,std_auc,delta_vs_full`.
    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["variant", "n", "mean_auc", "std_auc", "delta_vs_full"])?;
        for v in &self.summaries {
            w.write_record([
                v.variant.clone(),
                v.n.to_string(),
                v.mean.to_string(),
                v.std.to_string(),
                v.delta_vs_full.map_or(String::new(), |d| d.to_string()),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Pairwise CSV: `a,b,t,dof,p`, empty fields for undefined tests.
    pub fn write_pairwise_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["a", "b", "t", "dof", "p"])?;
        for c in &self.comparisons {
            let (t, d, p) = c.welch.map_or((String::new(), String::new(), String::new()), |r| {
                (r.t.to_string(), r.dof.to_string(), r.p.to_string())
            });
            w.write_record([c.a.clone(), c.b.clone(), t, d, p])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn write_metrics_csv(path: &Path, metrics: &[RunMetric]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRIC_HEADER)?;
    for m in metrics {
        w.write_record([
            m.variant.clone(),
            m.run.to_string(),
            m.seed.to_string(),
            m.n_train.to_string(),
            m.n_val.to_string(),
            m.n_test.to_string(),
            m.auc.to_string(),
            m.epoch_selected.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_metrics_csv(path: &Path) -> Result<Vec<RunMetric>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    if r.headers()?.iter().ne(METRIC_HEADER) {
        return Err(Error::Parse { line: 1, message: format!("expected header {}", METRIC_HEADER.join(",")) });
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |j: usize| rec.get(j).unwrap_or("");
        let bad = |j: usize| Error::Parse { line, message: format!("bad {} `{}`", METRIC_HEADER[j], field(j)) };
        out.push(RunMetric {
            variant: field(0).to_string(),
            run: field(1).parse().map_err(|_| bad(1))?,
            seed: field(2).parse().map_err(|_| bad(2))?,
            n_train: field(3).parse().map_err(|_| bad(3))?,
            n_val: field(4).parse().map_err(|_| bad(4))?,
            n_test: field(5).parse().map_err(|_| bad(5))?,
            auc: field(6).parse().map_err(|_| bad(6))?,
            epoch_selected: field(7).parse().map_err(|_| bad(7))?,
        });
    }
    Ok(out)
}
