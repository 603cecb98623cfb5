//! Alternating optimisation of the inference and generative networks.
//!
//! Each round first updates the inference networks against
//! `−elbo + w·constraint` with the generative networks frozen, then the
//! generative networks against `−elbo` with inference frozen. Each set keeps
//! its own Adam state across rounds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{PreparedCompany, ScalerManifest};
use crate::error::{Error, Result};
use crate::evaluation::classification_metrics;
use crate::fsutil;
use crate::model::{Architecture, Model};
use crate::objective::{draw_noise, elbo_with_noise, objective_grads, LossBreakdown, ObjectiveOptions, Step};
use crate::predict::{classify_rate, rate_path};
use crate::tensor::{Adam, AdamConfig, Grads};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout: f64,
    pub d_s: usize,
    /// Constraint weight.
    pub w: f64,
    pub sigma_obs: f64,
    pub tau: f64,
    pub lambda_days: f64,
    pub batch_size: usize,
    pub mc_samples: usize,
    pub inf_epochs_per_round: usize,
    pub gen_epochs_per_round: usize,
    pub max_rounds: usize,
    pub patience: usize,
    pub seed: u64,
    pub hidden_dims: Vec<usize>,
    pub token_dim: usize,
    /// When false every exchange uses the first-exchange generative networks.
    pub cross_exchange: bool,
    pub literal_ranges: bool,
    /// When false step 2 is skipped and the generative networks stay fixed.
    pub train_generative: bool,
    /// Decision threshold used for the F1 column of the history.
    pub threshold: f64,
    /// Monte Carlo samples for the per-round ELBO evaluation.
    pub eval_mc_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            dropout: 0.15,
            d_s: 512,
            w: 1e-4,
            sigma_obs: 1.0,
            tau: 1.0,
            lambda_days: 365.0,
            batch_size: 8,
            mc_samples: 1,
            inf_epochs_per_round: 1,
            gen_epochs_per_round: 1,
            max_rounds: 100,
            patience: 5,
            seed: 0,
            hidden_dims: vec![512],
            token_dim: 512,
            cross_exchange: true,
            literal_ranges: false,
            train_generative: true,
            threshold: 0.5,
            eval_mc_samples: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("sigma_obs", self.sigma_obs),
            ("tau", self.tau),
            ("lambda_days", self.lambda_days),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let counts = [
            ("d_s", self.d_s),
            ("batch_size", self.batch_size),
            ("mc_samples", self.mc_samples),
            ("eval_mc_samples", self.eval_mc_samples),
            ("token_dim", self.token_dim),
            ("patience", self.patience),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if !(self.w >= 0.0) || !self.w.is_finite() {
            return Err(Error::invalid("constraint weight w must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid("threshold must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn architecture(&self, d_emb: usize, d_e: usize) -> Architecture {
        Architecture {
            d_s: self.d_s,
            d_emb,
            d_e,
            hidden_dims: self.hidden_dims.clone(),
            token_dim: self.token_dim,
            dropout: self.dropout,
            sigma_obs: self.sigma_obs,
            tau: self.tau,
            cross_exchange: self.cross_exchange,
        }
    }

    pub fn objective(&self) -> ObjectiveOptions {
        ObjectiveOptions {
            w: self.w,
            lambda_days: self.lambda_days,
            mc_samples: self.mc_samples,
            literal_ranges: self.literal_ranges,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub round: usize,
    pub split: String,
    pub elbo: f64,
    pub kl: f64,
    pub constraint: f64,
    pub f1: f64,
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from("round,split,elbo,kl,constraint,f1\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.round, r.split, r.elbo, r.kl, r.constraint, r.f1);
    }
    out
}

pub fn write_history(path: impl AsRef<Path>, rows: &[HistoryRow]) -> Result<()> {
    fsutil::write_atomic(path, history_csv(rows).as_bytes())
}

/// Deterministic seed derivation.
pub(crate) fn mix(parts: &[u64]) -> u64 {
    let mut h = 0x243f_6a88_85a3_08d3u64;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

const TAG_INF: u64 = 1;
const TAG_GEN: u64 = 2;
const TAG_EVAL: u64 = 3;
const TAG_SHUFFLE: u64 = 4;
const TAG_INIT: u64 = 5;

/// Mean objective terms and F1 of one split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitScore {
    pub loss: LossBreakdown,
    pub f1: f64,
}

/// Dataset-mean objective with fixed evaluation noise, plus F1 of the final-call rate.
pub fn evaluate_split(companies: &[PreparedCompany], model: &Model, cfg: &TrainConfig) -> Result<SplitScore> {
    if companies.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let opts = ObjectiveOptions {
        mc_samples: cfg.eval_mc_samples,
        ..cfg.objective()
    };
    let per: Vec<(LossBreakdown, f64)> = companies
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let noise = draw_noise(mix(&[cfg.seed, TAG_EVAL, i as u64]), opts.mc_samples, c.calls.len(), model.arch.d_s);
            let b = elbo_with_noise(c, &model.gen, &model.inf, &noise, &opts)?;
            let r = *rate_path(c, model, cfg.literal_ranges)?.last().expect("non-empty");
            Ok((b, r))
        })
        .collect::<Result<_>>()?;
    let mut loss = LossBreakdown::default();
    let scale = 1.0 / companies.len() as f64;
    for (b, _) in &per {
        loss.add_scaled(b, scale);
    }
    let labels: Vec<u8> = companies.iter().map(|c| c.label).collect();
    let pred: Vec<u8> = per.iter().map(|(_, r)| classify_rate(*r, cfg.threshold)).collect();
    Ok(SplitScore {
        loss,
        f1: classification_metrics(&labels, &pred)?.f1,
    })
}

fn check_data(train: &[PreparedCompany], valid: &[PreparedCompany], scaler: &ScalerManifest) -> Result<usize> {
    let Some(first) = train.first() else {
        return Err(Error::invalid("training set is empty"));
    };
    if first.calls.is_empty() {
        return Err(Error::invalid(format!("{}: no calls", first.company_id)));
    }
    let d_emb = first.d_emb();
    for c in train.iter().chain(valid) {
        if c.calls.is_empty() || c.d_emb() != d_emb {
            return Err(Error::invalid(format!("{}: inconsistent embedding width", c.company_id)));
        }
        if c.features.len() != scaler.d_e {
            return Err(Error::invalid(format!(
                "{}: feature width {} does not match scaler d_e {}",
                c.company_id,
                c.features.len(),
                scaler.d_e
            )));
        }
    }
    Ok(d_emb)
}

/// One pass over `train` updating the set selected by `step`.
fn run_epoch(
    train: &[PreparedCompany],
    model: &mut Model,
    adam: &mut Adam,
    cfg: &TrainConfig,
    step: Step,
    round: usize,
    epoch: usize,
) -> Result<()> {
    let tag = if step == Step::Inference { TAG_INF } else { TAG_GEN };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[cfg.seed, TAG_SHUFFLE, tag, round as u64, epoch as u64]));
    order.shuffle(&mut rng);
    let opts = cfg.objective();
    for batch in order.chunks(cfg.batch_size) {
        let snapshot = &*model;
        let grads: Vec<Grads> = batch
            .par_iter()
            .map(|&i| {
                let c = &train[i];
                let seed = mix(&[cfg.seed, tag, round as u64, epoch as u64, i as u64]);
                let noise = draw_noise(seed, opts.mc_samples, c.calls.len(), snapshot.arch.d_s);
                let mut drop_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd80f);
                let dropout = (cfg.dropout > 0.0).then_some(&mut drop_rng);
                let out = objective_grads(c, &snapshot.gen, &snapshot.inf, &noise, &opts, step, dropout)?;
                let g = if step == Step::Inference { out.inf } else { out.gen }.expect("trainable set has gradients");
                if !out.loss.is_finite() || !g.is_finite() {
                    return Err(Error::Diverged {
                        company_id: c.company_id.clone(),
                        round,
                    });
                }
                Ok(g)
            })
            .collect::<Result<_>>()?;
        let store = if step == Step::Inference { &mut model.inf.store } else { &mut model.gen.store };
        let mut total = Grads::zeros_like(store);
        let scale = 1.0 / grads.len() as f64;
        for g in &grads {
            total.accumulate(g, scale)?;
        }
        adam.step(store, &total)?;
    }
    Ok(())
}

/// Result of [`em_fit`].
#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters from the round with the best validation ELBO.
    pub checkpoint: Checkpoint,
    pub history: Vec<HistoryRow>,
    /// 0 when no round ran.
    pub best_round: usize,
}

/// Train from a fresh initialisation seeded by `cfg.seed`.
pub fn em_fit(
    train: &[PreparedCompany],
    valid: &[PreparedCompany],
    scaler: &ScalerManifest,
    cfg: &TrainConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let d_emb = check_data(train, valid, scaler)?;
    let model = Model::init(cfg.architecture(d_emb, scaler.d_e), mix(&[cfg.seed, TAG_INIT]))?;
    em_fit_from(model, train, valid, scaler, cfg)
}

/// Train starting from `model`. Architecture fields of `cfg` are ignored in favour of the model's.
pub fn em_fit_from(
    mut model: Model,
    train: &[PreparedCompany],
    valid: &[PreparedCompany],
    scaler: &ScalerManifest,
    cfg: &TrainConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let d_emb = check_data(train, valid, scaler)?;
    if d_emb != model.arch.d_emb || scaler.d_e != model.arch.d_e {
        return Err(Error::invalid("model widths do not match the data"));
    }
    let adam_cfg = AdamConfig::with_lr(cfg.learning_rate);
    let mut adam_inf = Adam::new(adam_cfg, &model.inf.store);
    let mut adam_gen = Adam::new(adam_cfg, &model.gen.store);
    let select = if valid.is_empty() { train } else { valid };

    let mut history = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize, model.clone());
    let mut valid_elbos: Vec<f64> = Vec::new();
    let mut best_ma = f64::NEG_INFINITY;
    let mut stale = 0usize;
    for round in 1..=cfg.max_rounds {
        for epoch in 0..cfg.inf_epochs_per_round {
            run_epoch(train, &mut model, &mut adam_inf, cfg, Step::Inference, round, epoch)?;
        }
        if cfg.train_generative {
            for epoch in 0..cfg.gen_epochs_per_round {
                run_epoch(train, &mut model, &mut adam_gen, cfg, Step::Generative, round, epoch)?;
            }
        }
        let tr = evaluate_split(train, &model, cfg)?;
        let va = evaluate_split(select, &model, cfg)?;
        for (split, s) in [("train", tr), ("valid", va)] {
            if !s.loss.is_finite() {
                return Err(Error::Diverged {
                    company_id: format!("<{split} mean>"),
                    round,
                });
            }
            history.push(HistoryRow {
                round,
                split: split.into(),
                elbo: s.loss.elbo,
                kl: s.loss.kl_total,
                constraint: s.loss.constraint,
                f1: s.f1,
            });
        }
        log::info!(
            "round {round}: train elbo {:.4}, valid elbo {:.4}, valid f1 {:.3}",
            tr.loss.elbo,
            va.loss.elbo,
            va.f1
        );
        if va.loss.elbo > best.0 {
            best = (va.loss.elbo, round, model.clone());
        }
        valid_elbos.push(va.loss.elbo);
        let window = &valid_elbos[valid_elbos.len().saturating_sub(3)..];
        let ma = window.iter().sum::<f64>() / window.len() as f64;
        if ma > best_ma + 1e-4 {
            best_ma = ma;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log::info!("stopping after round {round}: no moving-average improvement for {stale} rounds");
                break;
            }
        }
    }
    let (_, best_round, best_model) = best;
    Ok(FitOutcome {
        checkpoint: Checkpoint::new(cfg.clone(), scaler.clone(), best_model, history.clone()),
        history,
        best_round,
    })
}

/// Moving average with window 3 (shorter at the start).
pub fn moving_average(values: &[f64]) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let w = &values[i.saturating_sub(2)..=i];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect()
}

/// Grid axes: config field name → candidate values.
pub type SweepGrid = BTreeMap<String, Vec<serde_json::Value>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: BTreeMap<String, serde_json::Value>,
    pub config: TrainConfig,
    pub valid_f1: f64,
    pub valid_elbo: f64,
    pub best_round: usize,
}

/// Every grid point applied to `base`, in lexicographic axis order.
pub fn grid_points(grid: &SweepGrid, base: &TrainConfig) -> Result<Vec<(BTreeMap<String, serde_json::Value>, TrainConfig)>> {
    let base_json = serde_json::to_value(base)?;
    let fields = base_json.as_object().expect("config serialises to an object");
    for (axis, values) in grid {
        if values.is_empty() {
            return Err(Error::invalid(format!("sweep axis {axis} has no values")));
        }
        if !fields.contains_key(axis) {
            return Err(Error::invalid(format!("unknown config field {axis} in sweep grid")));
        }
    }
    let mut points: Vec<BTreeMap<String, serde_json::Value>> = vec![BTreeMap::new()];
    for (axis, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.insert(axis.clone(), v.clone());
                    q
                })
            })
            .collect();
    }
    points
        .into_iter()
        .map(|p| {
            let mut json = base_json.clone();
            for (k, v) in &p {
                json[k] = v.clone();
            }
            let cfg: TrainConfig = serde_json::from_value(json)
                .map_err(|e| Error::invalid(format!("sweep point {p:?} is not a valid config: {e}")))?;
            cfg.validate()?;
            Ok((p, cfg))
        })
        .collect()
}

/// One fit per grid point; rows sorted by validation F1, best first.
pub fn sweep(
    grid: &SweepGrid,
    base: &TrainConfig,
    train: &[PreparedCompany],
    valid: &[PreparedCompany],
    scaler: &ScalerManifest,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for (point, cfg) in grid_points(grid, base)? {
        let fit = em_fit(train, valid, scaler, &cfg)?;
        let best = fit
            .history
            .iter()
            .find(|r| r.round == fit.best_round && r.split == "valid")
            .cloned();
        let (valid_f1, valid_elbo) = match best {
            Some(r) => (r.f1, r.elbo),
            None => {
                let s = evaluate_split(if valid.is_empty() { train } else { valid }, &fit.checkpoint.model, &cfg)?;
                (s.f1, s.loss.elbo)
            }
        };
        rows.push(SweepRow {
            point,
            config: cfg,
            valid_f1,
            valid_elbo,
            best_round: fit.best_round,
        });
    }
    rows.sort_by(|a, b| b.valid_f1.total_cmp(&a.valid_f1));
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut out = String::from("learning_rate,dropout,d_s,w,valid_f1,valid_elbo,best_round,point\n");
    for r in rows {
        let point = serde_json::to_string(&r.point)?.replace('"', "\"\"");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},\"{}\"",
            r.config.learning_rate, r.config.dropout, r.config.d_s, r.config.w, r.valid_f1, r.valid_elbo, r.best_round, point
        );
    }
    Ok(out)
}
