//! Call-by-call belief updating at deployment time.
//!
//! Statuses are the posterior means (no sampling) chained through the calls;
//! the success rate after call `l` pools the means of calls `1..=l`. Bands come
//! from pushing posterior samples through the same rate network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ExpertType, PreparedCompany};
use crate::error::{Error, Result};
use crate::evaluation::classification_metrics;
use crate::genmodel::gen_success_rate;
use crate::inference::{infer_path, PosteriorStatus};
use crate::model::Model;

pub const DEFAULT_BAND_SAMPLES: usize = 100;
pub const DEFAULT_BAND_SEED: u64 = 0x5eed_ba4d;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictOptions {
    pub band_samples: usize,
    pub band_seed: u64,
    pub literal_ranges: bool,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            band_samples: DEFAULT_BAND_SAMPLES,
            band_seed: DEFAULT_BAND_SEED,
            literal_ranges: false,
        }
    }
}

/// Belief after one call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    /// 1-based.
    pub call_index: usize,
    pub expert_type: ExpertType,
    pub posterior_mean: Vec<f64>,
    pub rate_mean: f64,
    pub rate_lo90: f64,
    pub rate_hi90: f64,
    /// Attention over calls `1..=call_index`.
    pub status_attention: Vec<f64>,
    /// Attention over this call's exchanges.
    pub exchange_attention: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefTrajectory {
    pub company_id: String,
    pub entries: Vec<TrajectoryEntry>,
}

impl BeliefTrajectory {
    pub fn final_rate(&self) -> f64 {
        self.entries.last().map_or(f64::NAN, |e| e.rate_mean)
    }

    /// Rate after call `l` (1-based), or after the last call if the company had fewer.
    pub fn rate_at(&self, l: usize) -> f64 {
        let i = l.clamp(1, self.entries.len().max(1)) - 1;
        self.entries.get(i).map_or(f64::NAN, |e| e.rate_mean)
    }
}

/// Linear-interpolation percentile of unsorted values, `p` in `[0, 100]`.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = p / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Band noise for sample `m` at call `j`; independent of the number of calls so
/// a prefix sees the same draws.
fn band_noise(seed: u64, m: usize, j: usize, d_s: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (m as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(j as u64);
    (0..d_s).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn check_widths(company: &PreparedCompany, model: &Model) -> Result<()> {
    if company.calls.is_empty() {
        return Err(Error::invalid(format!("{}: no calls to predict from", company.company_id)));
    }
    let d = company.d_emb();
    if d != model.arch.d_emb {
        return Err(Error::invalid(format!(
            "{}: embeddings have width {d}, checkpoint expects {}",
            company.company_id, model.arch.d_emb
        )));
    }
    if company.features.len() != model.arch.d_e {
        return Err(Error::invalid(format!(
            "{}: feature width {}, checkpoint expects {}",
            company.company_id,
            company.features.len(),
            model.arch.d_e
        )));
    }
    Ok(())
}

/// Posterior means for every call (no label or dates read).
pub fn posterior_path(company: &PreparedCompany, model: &Model, literal_ranges: bool) -> Result<Vec<PosteriorStatus>> {
    check_widths(company, model)?;
    infer_path(&company.calls, &model.inf, literal_ranges)
}

/// Rate after each call, without bands.
pub fn rate_path(company: &PreparedCompany, model: &Model, literal_ranges: bool) -> Result<Vec<f64>> {
    let posts = posterior_path(company, model, literal_ranges)?;
    let means: Vec<Vec<f64>> = posts.into_iter().map(|p| p.mean).collect();
    (1..=means.len())
        .map(|l| gen_success_rate(&means[..l], &company.features, &model.gen).map(|r| r.0))
        .collect()
}

pub fn predict_sequence(company: &PreparedCompany, model: &Model, opts: &PredictOptions) -> Result<BeliefTrajectory> {
    let posts = posterior_path(company, model, opts.literal_ranges)?;
    let means: Vec<Vec<f64>> = posts.iter().map(|p| p.mean.clone()).collect();
    let tau = model.inf.tau;
    let d_s = model.arch.d_s;
    let samples: Vec<Vec<Vec<f64>>> = (0..opts.band_samples)
        .map(|m| {
            means
                .iter()
                .enumerate()
                .map(|(j, mu)| {
                    let eps = band_noise(opts.band_seed, m, j, d_s);
                    mu.iter().zip(eps).map(|(a, e)| a + tau * e).collect()
                })
                .collect()
        })
        .collect();

    let mut entries = Vec::with_capacity(posts.len());
    for (l, post) in posts.into_iter().enumerate() {
        let (rate, status_attention) = gen_success_rate(&means[..=l], &company.features, &model.gen)?;
        let (lo, hi) = if samples.is_empty() {
            (rate, rate)
        } else {
            let draws: Vec<f64> = samples
                .iter()
                .map(|s| gen_success_rate(&s[..=l], &company.features, &model.gen).map(|r| r.0))
                .collect::<Result<_>>()?;
            (percentile(&draws, 5.0).min(rate), percentile(&draws, 95.0).max(rate))
        };
        entries.push(TrajectoryEntry {
            call_index: l + 1,
            expert_type: company.calls[l].expert_type,
            posterior_mean: post.mean,
            rate_mean: rate,
            rate_lo90: lo,
            rate_hi90: hi,
            status_attention,
            exchange_attention: post.exchange_attention,
        });
    }
    Ok(BeliefTrajectory {
        company_id: company.company_id.clone(),
        entries,
    })
}

/// Predict every company, in parallel, preserving order.
pub fn predict_all(companies: &[PreparedCompany], model: &Model, opts: &PredictOptions) -> Result<Vec<BeliefTrajectory>> {
    use rayon::prelude::*;
    companies.par_iter().map(|c| predict_sequence(c, model, opts)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ThresholdPolicy {
    Fixed { value: f64 },
    /// Threshold chosen to maximise validation F1.
    Tuned { value: f64 },
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self::Fixed { value: 0.5 }
    }
}

impl ThresholdPolicy {
    pub fn fixed(value: f64) -> Result<Self> {
        check_threshold(value)?;
        Ok(Self::Fixed { value })
    }

    /// Tune on validation rates and labels.
    pub fn tuned(rates: &[f64], labels: &[u8]) -> Result<Self> {
        Ok(Self::Tuned {
            value: tune_threshold(rates, labels)?,
        })
    }

    pub fn value(&self) -> f64 {
        match *self {
            Self::Fixed { value } | Self::Tuned { value } => value,
        }
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::invalid(format!("threshold must lie in (0, 1), got {t}")));
    }
    Ok(())
}

/// Inclusive: `rate >= threshold` is a predicted success.
pub fn classify_rate(rate: f64, threshold: f64) -> u8 {
    u8::from(rate >= threshold)
}

/// Predicted label after each call.
pub fn classify(trajectory: &BeliefTrajectory, policy: &ThresholdPolicy) -> Vec<u8> {
    let t = policy.value();
    trajectory.entries.iter().map(|e| classify_rate(e.rate_mean, t)).collect()
}

/// F1-maximising threshold among the observed rates; the lowest wins ties.
pub fn tune_threshold(rates: &[f64], labels: &[u8]) -> Result<f64> {
    if rates.is_empty() {
        return Err(Error::invalid("threshold tuning needs validation data"));
    }
    if rates.len() != labels.len() {
        return Err(Error::invalid("rates and labels differ in length"));
    }
    let mut candidates: Vec<f64> = rates.iter().copied().filter(|r| *r > 0.0 && *r < 1.0).collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    if candidates.is_empty() {
        return Err(Error::invalid("no usable candidate thresholds in (0, 1)"));
    }
    let mut best = (f64::NEG_INFINITY, candidates[0]);
    for &t in &candidates {
        let pred: Vec<u8> = rates.iter().map(|&r| classify_rate(r, t)).collect();
        let f1 = classification_metrics(labels, &pred)?.f1;
        if f1 > best.0 {
            best = (f1, t);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PreparedCall;
    use crate::model::Architecture;
    use crate::tensor::Init;

    fn arch() -> Architecture {
        Architecture {
            d_s: 2,
            d_emb: 3,
            d_e: 1,
            hidden_dims: vec![4],
            token_dim: 3,
            dropout: 0.0,
            sigma_obs: 1.0,
            tau: 1.0,
            cross_exchange: true,
        }
    }

    fn company(calls: usize, label: u8) -> PreparedCompany {
        PreparedCompany {
            company_id: "p".into(),
            label,
            features: vec![0.3],
            calls: (0..calls)
                .map(|l| PreparedCall {
                    expert_type: ExpertType::ALL[l % 5],
                    gap_days: 30.0,
                    questions: vec![vec![0.1 * l as f64, 0.2, -0.3], vec![0.5, -0.5, 0.0]],
                    answers: vec![vec![-0.2, 0.4, 0.1 * l as f64], vec![0.0, 0.3, 0.3]],
                })
                .collect(),
        }
    }

    #[test]
    fn zero_model_is_flat() {
        let m = Model::init_with(arch(), Init::Zeros, 0).unwrap();
        let t = predict_sequence(&company(3, 1), &m, &PredictOptions::default()).unwrap();
        assert_eq!(t.entries.len(), 3);
        for e in &t.entries {
            assert_eq!((e.rate_mean, e.rate_lo90, e.rate_hi90), (0.5, 0.5, 0.5));
        }
    }

    #[test]
    fn prefix_consistency_and_bands() {
        let m = Model::init_with(arch(), Init::Gaussian(0.8), 3).unwrap();
        let c = company(4, 0);
        let opts = PredictOptions::default();
        let full = predict_sequence(&c, &m, &opts).unwrap();
        for l in 1..=4 {
            let part = predict_sequence(&c.prefix(l), &m, &opts).unwrap();
            assert_eq!(part.entries[..], full.entries[..l]);
        }
        for e in &full.entries {
            assert!(e.rate_lo90 <= e.rate_mean && e.rate_mean <= e.rate_hi90);
            assert!((e.status_attention.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((e.exchange_attention.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(e.status_attention.len(), e.call_index);
        }
        assert_eq!(rate_path(&c, &m, false).unwrap(), full.entries.iter().map(|e| e.rate_mean).collect::<Vec<_>>());
    }

    #[test]
    fn label_and_dates_are_ignored() {
        let m = Model::init_with(arch(), Init::Gaussian(0.8), 3).unwrap();
        let a = company(3, 0);
        let mut b = company(3, 1);
        for c in &mut b.calls {
            c.gap_days = 9999.0;
        }
        let opts = PredictOptions::default();
        assert_eq!(predict_sequence(&a, &m, &opts).unwrap(), predict_sequence(&b, &m, &opts).unwrap());
    }

    #[test]
    fn width_mismatch_rejected() {
        let mut m = Model::init_with(arch(), Init::FanIn, 0).unwrap();
        m.arch.d_emb = 4;
        assert!(predict_sequence(&company(1, 0), &m, &PredictOptions::default()).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert_eq!(percentile(&v, 100.0), 5.0);
        assert!((percentile(&v, 5.0) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn classification_rules() {
        assert_eq!(classify_rate(0.5, 0.5), 1);
        let t = BeliefTrajectory {
            company_id: "x".into(),
            entries: [0.2, 0.7]
                .iter()
                .enumerate()
                .map(|(i, &r)| TrajectoryEntry {
                    call_index: i + 1,
                    expert_type: ExpertType::Customer,
                    posterior_mean: vec![],
                    rate_mean: r,
                    rate_lo90: r,
                    rate_hi90: r,
                    status_attention: vec![],
                    exchange_attention: vec![],
                })
                .collect(),
        };
        assert_eq!(classify(&t, &ThresholdPolicy::default()), vec![0, 1]);
        assert!(ThresholdPolicy::fixed(1.0).is_err());
    }

    #[test]
    fn tuning_separated_rates() {
        let rates = [0.1, 0.1, 0.9, 0.1, 0.9];
        let labels = [0, 0, 1, 0, 1];
        let p = ThresholdPolicy::tuned(&rates, &labels).unwrap();
        let t = p.value();
        assert!(t > 0.1 && t <= 0.9);
        let pred: Vec<u8> = rates.iter().map(|&r| classify_rate(r, t)).collect();
        assert_eq!(classification_metrics(&labels, &pred).unwrap().f1, 1.0);
        assert!(tune_threshold(&[], &[]).is_err());
    }
}
