//! Confusion tallies and the P4 / F1 scores. Class 1 is the positive class.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Tallies after exchanging the roles of the two classes.
    pub fn swapped(&self) -> Self {
        Self::new(self.tn, self.tp, self.fn_, self.fp)
    }
}

pub fn confusion(predictions: &[u8], truths: &[u8]) -> Result<ConfusionCounts> {
    if predictions.len() != truths.len() {
        return Err(Error::dim("confusion truths", predictions.len(), truths.len()));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in predictions.iter().zip(truths) {
        match (p != 0, t != 0) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `4 TP TN / (4 TP TN + (TP + TN)(FP + FN))`.
///
/// When the denominator vanishes the score is 1 if nothing was
/// misclassified and 0 otherwise.
pub fn p4_score(c: &ConfusionCounts) -> f64 {
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let num = 4.0 * tp * tn;
    let den = num + (tp + tn) * (fp + fn_);
    if den == 0.0 {
        return if c.fp == 0 && c.fn_ == 0 { 1.0 } else { 0.0 };
    }
    num / den
}

/// `2 TP / (2 TP + FP + FN)`, 0 when undefined.
pub fn f1_score(c: &ConfusionCounts) -> f64 {
    let den = 2 * c.tp + c.fp + c.fn_;
    if den == 0 {
        0.0
    } else {
        (2 * c.tp) as f64 / den as f64
    }
}

pub const METRICS_HEADER: &str = "config_id,period,rho,mu,seed,tp,tn,fp,fn,p4,f1";

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub config_id: String,
    pub period: String,
    /// `None` for the baseline.
    pub rho: Option<f64>,
    pub mu: f64,
    pub seed: u64,
    pub counts: ConfusionCounts,
}

impl MetricsRow {
    pub fn p4(&self) -> f64 {
        p4_score(&self.counts)
    }

    pub fn f1(&self) -> f64 {
        f1_score(&self.counts)
    }

    pub fn to_csv(&self) -> String {
        let c = &self.counts;
        let rho = self.rho.map(|r| r.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{:.6},{:.6}",
            self.config_id,
            self.period,
            rho,
            self.mu,
            self.seed,
            c.tp,
            c.tn,
            c.fp,
            c.fn_,
            self.p4(),
            self.f1()
        )
    }

    pub fn parse_csv(line: &str) -> Result<Self> {
        let err = |m: &str| Error::Parse {
            location: format!("metrics row `{line}`"),
            message: m.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(err("expected 11 fields"));
        }
        let num = |s: &str| s.trim().parse::<u64>().map_err(|e| err(&e.to_string()));
        let real = |s: &str| s.trim().parse::<f64>().map_err(|e| err(&e.to_string()));
        Ok(Self {
            config_id: f[0].to_string(),
            period: f[1].to_string(),
            rho: if f[2].is_empty() { None } else { Some(real(f[2])?) },
            mu: real(f[3])?,
            seed: num(f[4])?,
            counts: ConfusionCounts::new(num(f[5])?, num(f[6])?, num(f[7])?, num(f[8])?),
        })
    }
}

/// Parse a metrics CSV, header included.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == METRICS_HEADER => {}
        _ => {
            return Err(Error::Parse {
                location: "metrics header".into(),
                message: format!("expected `{METRICS_HEADER}`"),
            })
        }
    }
    lines.filter(|l| !l.trim().is_empty()).map(MetricsRow::parse_csv).collect()
}
