//! Classification metrics and the portfolio return layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary classification summary; the positive class is success (`1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub weighted_f1: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn from_labels(y_true: &[u8], y_pred: &[u8]) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::invalid(format!(
                "label lists differ in length: {} vs {}",
                y_true.len(),
                y_pred.len()
            )));
        }
        let mut c = Self::default();
        for (&t, &p) in y_true.iter().zip(y_pred) {
            if t > 1 || p > 1 {
                return Err(Error::invalid("labels must be 0 or 1"));
            }
            match (t, p) {
                (1, 1) => c.tp += 1,
                (0, 1) => c.fp += 1,
                (1, 0) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn f1_of(tp: f64, fp: f64, fn_: f64) -> f64 {
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    ratio(2.0 * p * r, p + r)
}

pub fn classification_metrics(y_true: &[u8], y_pred: &[u8]) -> Result<ClassificationMetrics> {
    let c = ConfusionCounts::from_labels(y_true, y_pred)?;
    if c.total() == 0 {
        return Err(Error::invalid("metrics need at least one prediction"));
    }
    Ok(metrics_from_counts(&c))
}

pub fn metrics_from_counts(c: &ConfusionCounts) -> ClassificationMetrics {
    let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
    let n = tp + fp + fn_ + tn;
    let f1_pos = f1_of(tp, fp, fn_);
    // the negative class swaps roles: its "true positives" are tn
    let f1_neg = f1_of(tn, fn_, fp);
    let support_pos = tp + fn_;
    let support_neg = tn + fp;
    ClassificationMetrics {
        accuracy: ratio(tp + tn, n),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        f1: f1_pos,
        weighted_f1: ratio(support_pos * f1_pos + support_neg * f1_neg, n),
        macro_f1: 0.5 * (f1_pos + f1_neg),
    }
}

/// Probability that a random positive outscores a random negative, ties counting ½.
pub fn auc(y_true: &[u8], scores: &[f64]) -> Result<f64> {
    if y_true.len() != scores.len() {
        return Err(Error::invalid(format!(
            "labels and scores differ in length: {} vs {}",
            y_true.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let n_pos = y_true.iter().filter(|&&y| y == 1).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes present".into()));
    }
    // average ranks over tie groups, then Mann-Whitney U
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if y_true[idx] == 1 {
                pos_rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Investment outcome constants, in millions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    /// Final value of a correctly picked success.
    pub fiv_tp: f64,
    /// Final value of a picked failure.
    pub fiv_fp: f64,
    /// Capital invested per pick.
    pub ic: f64,
    /// Opportunity cost of a missed success.
    pub oc: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            fiv_tp: 248.44,
            fiv_fp: 0.0,
            ic: 10.24,
            oc: 198.81,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.ic > 0.0) {
            return Err(Error::invalid("invested capital must be positive"));
        }
        if [self.fiv_tp, self.fiv_fp, self.oc].iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("cost model values must be finite and non-negative"));
        }
        Ok(())
    }
}

fn deployed(c: &ConfusionCounts, m: &CostModel) -> Result<f64> {
    m.validate()?;
    if c.tp + c.fp == 0 {
        return Err(Error::UndefinedMetric("no capital deployed (tp + fp = 0)".into()));
    }
    Ok((c.tp + c.fp) as f64 * m.ic)
}

/// Net gain over deployed capital, in percent.
pub fn roi(c: &ConfusionCounts, m: &CostModel) -> Result<f64> {
    let cost = deployed(c, m)?;
    let value = c.tp as f64 * m.fiv_tp + c.fp as f64 * m.fiv_fp;
    Ok((value - cost - c.fn_ as f64 * m.oc) / cost * 100.0)
}

/// Multiple on invested capital.
pub fn moic(c: &ConfusionCounts, m: &CostModel) -> Result<f64> {
    let cost = deployed(c, m)?;
    let value = c.tp as f64 * m.fiv_tp + c.fp as f64 * m.fiv_fp;
    Ok((value - c.fn_ as f64 * m.oc) / cost)
}

/// Evaluation report as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: u64,
    pub threshold: f64,
    pub metrics: ClassificationMetrics,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    pub confusion: ConfusionCounts,
    pub cost_model: CostModel,
    /// `None` when nothing was picked.
    pub roi: Option<f64>,
    pub moic: Option<f64>,
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn evaluate(y_true: &[u8], scores: &[f64], threshold: f64, cost: &CostModel) -> Result<EvalReport> {
    if y_true.len() != scores.len() {
        return Err(Error::invalid("labels and scores differ in length"));
    }
    cost.validate()?;
    let y_pred: Vec<u8> = scores.iter().map(|&s| u8::from(s >= threshold)).collect();
    let confusion = ConfusionCounts::from_labels(y_true, &y_pred)?;
    Ok(EvalReport {
        n: confusion.total(),
        threshold,
        metrics: classification_metrics(y_true, &y_pred)?,
        auc: defined(auc(y_true, scores))?,
        confusion,
        cost_model: *cost,
        roi: defined(roi(&confusion, cost))?,
        moic: defined(moic(&confusion, cost))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cc(tp: u64, fp: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn: 0 }
    }

    #[test]
    fn perfect_predictions() {
        let y = [1, 0, 1, 0, 0];
        let m = classification_metrics(&y, &y).unwrap();
        for v in [m.accuracy, m.precision, m.recall, m.f1, m.weighted_f1, m.macro_f1] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn all_negative_predictions() {
        let m = classification_metrics(&[1, 0, 1, 0], &[0, 0, 0, 0]).unwrap();
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.f1, 0.0);
        assert_eq!(m.accuracy, 0.5);
    }

    #[test]
    fn half_right_fixture() {
        let m = classification_metrics(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap();
        for v in [m.accuracy, m.precision, m.recall, m.f1, m.weighted_f1, m.macro_f1] {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn length_mismatch() {
        assert!(classification_metrics(&[1], &[1, 0]).is_err());
        assert!(auc(&[1, 0], &[0.5]).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0, 0, 1, 1], &[0.1, 0.2, 0.8, 0.9]).unwrap(), 1.0);
        assert_eq!(auc(&[0, 1, 0, 1], &[0.3; 4]).unwrap(), 0.5);
        assert_eq!(auc(&[1, 0, 1, 0], &[0.9, 0.8, 0.4, 0.2]).unwrap(), 0.75);
        assert!(matches!(auc(&[1, 1], &[0.1, 0.2]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn roi_examples() {
        let m = CostModel::default();
        let a = roi(&cc(1, 0, 0), &m).unwrap();
        assert!((a - (248.44 - 10.24) / 10.24 * 100.0).abs() < 1e-9);
        assert!((a - 2326.17).abs() < 0.01);
        assert!((roi(&cc(0, 1, 0), &m).unwrap() + 100.0).abs() < 1e-9);
        let b = roi(&cc(1, 1, 1), &m).unwrap();
        assert!((b - (248.44 - 20.48 - 198.81) / 20.48 * 100.0).abs() < 1e-9);
        assert!((b - 142.33).abs() < 0.01);
        assert!(matches!(roi(&cc(0, 0, 3), &m), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn moic_examples() {
        let m = CostModel::default();
        assert!((moic(&cc(1, 1, 0), &m).unwrap() - 248.44 / 20.48).abs() < 1e-9);
        assert_eq!(moic(&cc(0, 1, 0), &m).unwrap(), 0.0);
        assert!((moic(&cc(1, 0, 1), &m).unwrap() - (248.44 - 198.81) / 10.24).abs() < 1e-9);
        assert!((moic(&cc(1, 0, 1), &m).unwrap() - 4.847).abs() < 1e-3);
    }

    #[test]
    fn default_constants() {
        let m: CostModel = serde_json::from_str("{}").unwrap();
        assert_eq!(m, CostModel::default());
        assert_eq!((m.fiv_tp, m.fiv_fp, m.ic, m.oc), (248.44, 0.0, 10.24, 198.81));
    }

    #[test]
    fn report_handles_degenerate_cases() {
        let r = evaluate(&[1, 1], &[0.1, 0.2], 0.5, &CostModel::default()).unwrap();
        assert_eq!(r.auc, None);
        assert_eq!(r.roi, None);
        assert_eq!(r.confusion.fn_, 2);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["confusion"]["fn"], 2);
    }
}
