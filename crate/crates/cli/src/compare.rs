//! Side-by-side posterior summaries and overlap in pooled-sd units.

use std::path::Path;

use anyhow::{bail, ensure};
use bdgp::mcmc::{ParamSummary, Trace};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairDifference {
    pub first: String,
    pub second: String,
    pub parameter: String,
    pub mean_difference: f64,
    pub pooled_sd: f64,
    /// `|mean_1 - mean_2| / sqrt((sd_1^2 + sd_2^2) / 2)`.
    pub standardized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub names: Vec<String>,
    pub summaries: Vec<Vec<ParamSummary>>,
    pub differences: Vec<PairDifference>,
}

pub fn pooled_difference(a: &ParamSummary, b: &ParamSummary) -> (f64, f64, f64) {
    let diff = a.mean - b.mean;
    let pooled = ((a.sd * a.sd + b.sd * b.sd) / 2.0).sqrt();
    let z = if pooled > 0.0 { diff.abs() / pooled } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
    (diff, pooled, z)
}

/// All pairwise differences between traces that share a parameterization.
pub fn compare(traces: &[Trace], labels: &[String]) -> anyhow::Result<Comparison> {
    ensure!(traces.len() >= 2, "need at least two traces to compare");
    ensure!(labels.len() == traces.len(), "{} labels given for {} traces", labels.len(), traces.len());
    let names = traces[0].names.clone();
    for (t, l) in traces.iter().zip(labels) {
        if t.names != names {
            bail!("trace {l:?} has parameters {:?}, expected {:?}", t.names, names);
        }
        ensure!(!t.is_empty(), "trace {l:?} has no samples");
    }
    let summaries: Vec<Vec<ParamSummary>> = traces.iter().map(Trace::summary).collect();
    let mut differences = Vec::new();
    for i in 0..traces.len() {
        for j in i + 1..traces.len() {
            for (a, b) in summaries[i].iter().zip(&summaries[j]) {
                let (d, pooled, z) = pooled_difference(a, b);
                differences.push(PairDifference {
                    first: labels[i].clone(),
                    second: labels[j].clone(),
                    parameter: a.name.clone(),
                    mean_difference: d,
                    pooled_sd: pooled,
                    standardized: z,
                });
            }
        }
    }
    Ok(Comparison { labels: labels.to_vec(), names, summaries, differences })
}

impl Comparison {
    pub fn max_standardized(&self) -> f64 {
        self.differences.iter().map(|d| d.standardized).fold(0.0, f64::max)
    }

    /// One row per trace and parameter.
    pub fn write_summary_csv(&self, path: &Path) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["label", "parameter", "mean", "sd", "q025", "q975"])?;
        for (label, rows) in self.labels.iter().zip(&self.summaries) {
            for s in rows {
                w.write_record([
                    label.clone(),
                    s.name.clone(),
                    s.mean.to_string(),
                    s.sd.to_string(),
                    s.q025.to_string(),
                    s.q975.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_differences_csv(&self, path: &Path) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["first", "second", "parameter", "mean_difference", "pooled_sd", "standardized"])?;
        for d in &self.differences {
            w.write_record([
                d.first.clone(),
                d.second.clone(),
                d.parameter.clone(),
                d.mean_difference.to_string(),
                d.pooled_sd.to_string(),
                d.standardized.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(shift: f64) -> Trace {
        Trace {
            names: vec!["log_lambda".into(), "log_mu".into()],
            iters: (1..=5).collect(),
            samples: (0..5).map(|i| vec![i as f64 + shift, 2.0 * i as f64]).collect(),
            acceptance_rate: 0.3,
        }
    }

    #[test]
    fn identical_traces_have_zero_difference() {
        let c = compare(&[trace(0.0), trace(0.0)], &["x".into(), "y".into()]).unwrap();
        assert_eq!(c.differences.len(), 2);
        assert!(c.differences.iter().all(|d| d.standardized == 0.0));
    }

    #[test]
    fn shift_is_measured_in_pooled_sd() {
        let c = compare(&[trace(0.0), trace(1.0)], &["x".into(), "y".into()]).unwrap();
        let sd = crate::compare::tests::trace(0.0).summary()[0].sd;
        assert!((c.differences[0].standardized - 1.0 / sd).abs() < 1e-12);
        assert_eq!(c.differences[1].standardized, 0.0);
    }

    #[test]
    fn mismatched_parameters_are_rejected() {
        let mut other = trace(0.0);
        other.names[1] = "log_sigma".into();
        assert!(compare(&[trace(0.0), other], &["x".into(), "y".into()]).is_err());
        assert!(compare(&[trace(0.0)], &["x".into()]).is_err());
    }
}
