//! Voxel-wise confusion-matrix metrics: DSC, TPR, FPR and PPV.
//!
//! Ratios with a zero denominator are `None` ("n/a") rather than a silent 0 or 1.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voxel::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub dsc: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub ppv: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl SegMetrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self {
            tp,
            fp,
            fn_,
            tn,
            dsc: ratio(2 * tp, 2 * tp + fp + fn_),
            tpr: ratio(tp, tp + fn_),
            fpr: ratio(fp, fp + tn),
            ppv: ratio(tp, tp + fp),
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Which voxels enter the confusion matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Domain<'a> {
    #[default]
    Full,
    Within(&'a BinaryMask),
}

pub fn evaluate(pred: &BinaryMask, gt: &BinaryMask, domain: Domain<'_>) -> Result<SegMetrics> {
    if pred.shape() != gt.shape() {
        return Err(Error::invalid(format!(
            "prediction {} and ground truth {} differ in shape",
            pred.shape(),
            gt.shape()
        )));
    }
    if let Domain::Within(d) = domain {
        if d.shape() != gt.shape() {
            return Err(Error::invalid("evaluation domain shape differs from ground truth"));
        }
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..gt.shape().len() {
        if let Domain::Within(d) = domain {
            if !d.data()[i] {
                continue;
            }
        }
        match (pred.data()[i], gt.data()[i]) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(SegMetrics::from_counts(tp, fp, fn_, tn))
}

/// Per-case rows plus mean and standard deviation, in percent.
#[derive(Debug, Clone, Default)]
pub struct MetricsTable {
    pub rows: Vec<(String, SegMetrics)>,
}

fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

impl MetricsTable {
    pub fn push(&mut self, case: impl Into<String>, m: SegMetrics) {
        self.rows.push((case.into(), m));
    }

    fn column(&self, f: impl Fn(&SegMetrics) -> Option<f64>) -> Vec<f64> {
        self.rows.iter().filter_map(|(_, m)| f(m)).collect()
    }

    /// `[mean, std]` rows for DSC, TPR, FPR, PPV (percent); `None` if a column is all n/a.
    pub fn summary(&self) -> [Option<(f64, f64)>; 4] {
        [
            mean_std(&self.column(|m| m.dsc.map(|v| v * 100.0))),
            mean_std(&self.column(|m| m.tpr.map(|v| v * 100.0))),
            mean_std(&self.column(|m| m.fpr.map(|v| v * 100.0))),
            mean_std(&self.column(|m| m.ppv.map(|v| v * 100.0))),
        ]
    }

    pub fn to_csv(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:.4}", v * 100.0));
        let mut out = String::from("case,dsc,tpr,fpr,ppv,tp,fp,fn,tn\n");
        for (case, m) in &self.rows {
            let _ = writeln!(
                out,
                "{case},{},{},{},{},{},{},{},{}",
                pct(m.dsc),
                pct(m.tpr),
                pct(m.fpr),
                pct(m.ppv),
                m.tp,
                m.fp,
                m.fn_,
                m.tn
            );
        }
        let summary = self.summary();
        for (label, pick) in [("mean", 0), ("std", 1)] {
            let cells: Vec<String> = summary
                .iter()
                .map(|s| s.map_or("n/a".into(), |ms| format!("{:.4}", if pick == 0 { ms.0 } else { ms.1 })))
                .collect();
            let _ = writeln!(out, "{label},{},,,,", cells.join(","));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let pct = |v: Option<f64>, prec: usize| v.map_or("n/a".to_string(), |v| format!("{:.prec$}", v * 100.0));
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:>8} {:>8} {:>8} {:>8}", "Case", "DSC", "TPR", "FPR", "PPV");
        for (case, m) in &self.rows {
            let _ = writeln!(
                out,
                "{:<8} {:>8} {:>8} {:>8} {:>8}",
                case,
                pct(m.dsc, 1),
                pct(m.tpr, 1),
                pct(m.fpr, 3),
                pct(m.ppv, 1)
            );
        }
        let summary = self.summary();
        for (label, pick) in [("Mean", 0), ("Std.", 1)] {
            let cell = |k: usize, prec: usize| {
                summary[k].map_or("n/a".to_string(), |ms| format!("{:.prec$}", if pick == 0 { ms.0 } else { ms.1 }))
            };
            let _ = writeln!(
                out,
                "{:<8} {:>8} {:>8} {:>8} {:>8}",
                label,
                cell(0, 1),
                cell(1, 1),
                cell(2, 3),
                cell(3, 1)
            );
        }
        out
    }
}
