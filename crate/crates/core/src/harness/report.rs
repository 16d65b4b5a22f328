//! Evaluation reports, multi-seed aggregation and table export.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    /// Percent.
    pub eer: f64,
    /// Percent.
    pub auc: f64,
    #[serde(default)]
    pub threshold: f64,
    #[serde(default)]
    pub positives: usize,
    #[serde(default)]
    pub negatives: usize,
    /// Downsampled ROC as (false accept, false reject) pairs, for plotting.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub roc: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub datasets: BTreeMap<String, DatasetMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }

    pub fn format(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub eer: MeanStd,
    pub auc: MeanStd,
}

/// Training curve entry carried along for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub loss_detection: f64,
    pub loss_pda: f64,
    pub loss_total: f64,
    #[serde(default)]
    pub valid_eer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub runs: Vec<SeedResult>,
    pub summary: BTreeMap<String, DatasetSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub curve: Vec<CurvePoint>,
}

impl EvalReport {
    /// Report for a single run.
    pub fn single(seed: u64, datasets: BTreeMap<String, DatasetMetrics>) -> Self {
        let summary = datasets
            .iter()
            .map(|(k, m)| {
                (
                    k.clone(),
                    DatasetSummary {
                        eer: MeanStd::of(&[m.eer]),
                        auc: MeanStd::of(&[m.auc]),
                    },
                )
            })
            .collect();
        Self {
            label: None,
            runs: vec![SeedResult { seed, datasets }],
            summary,
            skipped: Vec::new(),
            curve: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for run in &self.runs {
            for (name, m) in &run.datasets {
                if !(0.0..=100.0).contains(&m.eer) || !(0.0..=100.0).contains(&m.auc) {
                    return Err(KwsError::invalid(format!("{name}: metrics outside [0, 100]")));
                }
            }
        }
        Ok(())
    }

    /// `dataset | EER (%) | AUC (%)` rows in `mean ± std` form.
    pub fn table(&self) -> String {
        let mut out = String::from("| dataset | EER (%) | AUC (%) |\n|---|---|---|\n");
        for (name, s) in &self.summary {
            out.push_str(&format!("| {name} | {} | {} |\n", s.eer.format(), s.auc.format()));
        }
        out
    }

    /// Summary plus per-seed values, one line per dataset.
    pub fn to_csv(&self) -> String {
        let seeds: Vec<u64> = self.runs.iter().map(|r| r.seed).collect();
        let mut out = String::from("dataset,eer_mean,eer_std,auc_mean,auc_std,eer,auc");
        for s in &seeds {
            out.push_str(&format!(",eer_seed{s},auc_seed{s}"));
        }
        out.push('\n');
        for (name, s) in &self.summary {
            out.push_str(&format!(
                "{name},{:.4},{:.4},{:.4},{:.4},\"{}\",\"{}\"",
                s.eer.mean,
                s.eer.std,
                s.auc.mean,
                s.auc.std,
                s.eer.format(),
                s.auc.format()
            ));
            for run in &self.runs {
                match run.datasets.get(name) {
                    Some(m) => out.push_str(&format!(",{:.4},{:.4}", m.eer, m.auc)),
                    None => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| KwsError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| KwsError::io(path, e))?;
        let r: Self = serde_json::from_str(&text)?;
        r.validate()?;
        Ok(r)
    }
}

/// Pools per-seed results of several reports and summarizes each dataset
/// by mean and sample standard deviation.
pub fn aggregate_runs(reports: &[EvalReport]) -> Result<EvalReport> {
    if reports.len() < 2 {
        return Err(KwsError::invalid("aggregation needs at least two reports"));
    }
    let runs: Vec<SeedResult> = reports.iter().flat_map(|r| r.runs.iter().cloned()).collect();
    let names: Vec<&String> = runs[0].datasets.keys().collect();
    for r in &runs[1..] {
        if r.datasets.keys().collect::<Vec<_>>() != names {
            return Err(KwsError::invalid(format!(
                "reports cover different datasets: {:?} vs {:?}",
                names,
                r.datasets.keys().collect::<Vec<_>>()
            )));
        }
    }
    let summary = names
        .iter()
        .map(|&name| {
            let eer: Vec<f64> = runs.iter().map(|r| r.datasets[name].eer).collect();
            let auc: Vec<f64> = runs.iter().map(|r| r.datasets[name].auc).collect();
            (
                name.clone(),
                DatasetSummary {
                    eer: MeanStd::of(&eer),
                    auc: MeanStd::of(&auc),
                },
            )
        })
        .collect();
    Ok(EvalReport {
        label: reports[0].label.clone(),
        runs,
        summary,
        skipped: reports.iter().flat_map(|r| r.skipped.iter().cloned()).collect(),
        curve: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(seed: u64, eer: f64, auc: f64) -> EvalReport {
        let mut d = BTreeMap::new();
        d.insert(
            "easy".to_string(),
            DatasetMetrics { eer, auc, threshold: 0.5, positives: 1, negatives: 1, roc: vec![] },
        );
        EvalReport::single(seed, d)
    }

    #[test]
    fn mean_and_sample_std() {
        let a = aggregate_runs(&[report(0, 10.0, 90.0), report(1, 20.0, 95.0)]).unwrap();
        let s = &a.summary["easy"];
        assert_eq!(s.eer.mean, 15.0);
        assert!((s.eer.std - 7.0711).abs() < 1e-4);
        let same = aggregate_runs(&[report(0, 3.0, 97.0), report(1, 3.0, 97.0), report(2, 3.0, 97.0)]).unwrap();
        assert_eq!(same.summary["easy"].eer.std, 0.0);
        assert!(aggregate_runs(&[report(0, 1.0, 1.0)]).is_err());
    }

    #[test]
    fn three_seed_row_format() {
        let a = aggregate_runs(&[report(0, 1.0, 99.0), report(1, 2.0, 98.0), report(2, 3.0, 97.0)]).unwrap();
        let table = a.table();
        assert!(table.contains("| easy | 2.00 ± 1.00 | 98.00 ± 1.00 |"), "{table}");
        let csv = a.to_csv();
        assert!(csv.lines().nth(1).unwrap().starts_with("easy,2.0000,1.0000,98.0000,1.0000,\"2.00 ± 1.00\""));
        assert_eq!(csv.lines().next().unwrap().matches("_seed").count(), 6);
    }

    #[test]
    fn mismatched_datasets_rejected() {
        let mut b = report(1, 1.0, 1.0);
        let m = b.runs[0].datasets.remove("easy").unwrap();
        b.runs[0].datasets.insert("hard".into(), m);
        assert!(aggregate_runs(&[report(0, 1.0, 1.0), b]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let r = report(4, 5.0, 95.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        r.save(&p).unwrap();
        assert_eq!(EvalReport::load(&p).unwrap(), r);
    }
}
