//! Amortised posterior over call statuses.
//!
//! Each exchange becomes a token `enc([answer; question])`; tokens of a call are
//! attention-pooled into a context vector. The first call's posterior mean is
//! `head_first(ctx)`, later ones `head_next([ctx; previous mean])`, so means are
//! chained through the conversation. The posterior covariance is `tau²·I`.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PreparedCall;
use crate::error::{Error, Result};
use crate::model::Architecture;
use crate::tensor::{AttentionPool, Dropout, Init, Mlp, MlpSpec, ParamStore, Squash, Tape, Var};

/// Inference network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct InfParams {
    pub store: ParamStore,
    pair_encoder: Mlp,
    pool: AttentionPool,
    head_first: Mlp,
    head_next: Mlp,
    pub tau: f64,
    pub d_s: usize,
    pub d_emb: usize,
}

fn inf_specs(arch: &Architecture) -> [(&'static str, MlpSpec); 3] {
    let h = &arch.hidden_dims;
    let mlp = |i, o| MlpSpec::new(i, h, o, Squash::None).with_dropout(arch.dropout);
    [
        ("inf.pair", mlp(2 * arch.d_emb, arch.token_dim)),
        ("inf.first", mlp(arch.token_dim, arch.d_s)),
        ("inf.next", mlp(arch.token_dim + arch.d_s, arch.d_s)),
    ]
}

impl InfParams {
    pub fn init(arch: &Architecture, init: Init, rng: &mut ChaCha8Rng) -> Result<Self> {
        arch.validate()?;
        let mut store = ParamStore::new();
        let [a, b, c] = inf_specs(arch);
        let pair_encoder = Mlp::register(a.1, &mut store, a.0, init, rng)?;
        let pool = AttentionPool::register(arch.token_dim, &mut store, "inf.pool", init, rng);
        let head_first = Mlp::register(b.1, &mut store, b.0, init, rng)?;
        let head_next = Mlp::register(c.1, &mut store, c.0, init, rng)?;
        Ok(Self {
            store,
            pair_encoder,
            pool,
            head_first,
            head_next,
            tau: arch.tau,
            d_s: arch.d_s,
            d_emb: arch.d_emb,
        })
    }

    pub fn bind(arch: &Architecture, store: ParamStore) -> Result<Self> {
        let [a, b, c] = inf_specs(arch);
        Ok(Self {
            pair_encoder: Mlp::bind(a.1, &store, a.0)?,
            pool: AttentionPool::bind(arch.token_dim, &store, "inf.pool")?,
            head_first: Mlp::bind(b.1, &store, b.0)?,
            head_next: Mlp::bind(c.1, &store, c.0)?,
            store,
            tau: arch.tau,
            d_s: arch.d_s,
            d_emb: arch.d_emb,
        })
    }

    /// Posterior mean of one call's status; returns the mean and the exchange attention weights.
    pub fn posterior_mean_on(
        &self,
        tape: &mut Tape<'_>,
        sid: usize,
        pairs: &[(Var, Var)],
        prev_mean: Option<Var>,
        dropout: &mut Dropout<'_>,
    ) -> Result<(Var, Var)> {
        if pairs.is_empty() {
            return Err(Error::invalid("a call needs at least one exchange"));
        }
        let mut tokens = Vec::with_capacity(pairs.len());
        for &(q, a) in pairs {
            let x = tape.concat(&[a, q]);
            tokens.push(self.pair_encoder.forward(tape, sid, x, dropout)?);
        }
        let (ctx, weights) = self.pool.forward(tape, sid, &tokens)?;
        let mean = match prev_mean {
            None => self.head_first.forward(tape, sid, ctx, dropout)?,
            Some(m) => {
                let x = tape.concat(&[ctx, m]);
                self.head_next.forward(tape, sid, x, dropout)?
            }
        };
        Ok((mean, weights))
    }
}

/// Which exchanges of a `k`-exchange call feed the inference network.
///
/// Normally all of them. In literal-range mode the last exchange is held out
/// (`0..k-1`), except that a single-exchange call still uses its only pair.
pub fn inference_pairs(k: usize, literal_ranges: bool) -> std::ops::Range<usize> {
    if literal_ranges {
        0..k.saturating_sub(1).max(1).min(k)
    } else {
        0..k
    }
}

/// Gaussian posterior `N(mean, tau²·I)` for one call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorStatus {
    pub mean: Vec<f64>,
    pub tau: f64,
    /// Attention over the exchanges that were encoded.
    pub exchange_attention: Vec<f64>,
}

/// Posterior for one call given the previous call's posterior mean (none for the first call).
pub fn infer_status(call: &PreparedCall, prev_mean: Option<&[f64]>, params: &InfParams) -> Result<PosteriorStatus> {
    infer_status_with(call, prev_mean, params, false)
}

pub fn infer_status_with(
    call: &PreparedCall,
    prev_mean: Option<&[f64]>,
    params: &InfParams,
    literal_ranges: bool,
) -> Result<PosteriorStatus> {
    if call.is_empty() {
        return Err(Error::invalid("a call needs at least one exchange"));
    }
    if let Some(m) = prev_mean {
        if m.len() != params.d_s {
            return Err(Error::invalid(format!(
                "previous mean has length {}, expected {}",
                m.len(),
                params.d_s
            )));
        }
    }
    for (q, a) in call.questions.iter().zip(&call.answers) {
        if q.len() != params.d_emb || a.len() != params.d_emb {
            return Err(Error::invalid(format!(
                "exchange embedding width {} / {}, model expects {}",
                q.len(),
                a.len(),
                params.d_emb
            )));
        }
    }
    let mut tape = Tape::new(&[&params.store]);
    tape.set_trainable(0, false);
    let pairs: Vec<(Var, Var)> = inference_pairs(call.len(), literal_ranges)
        .map(|k| (tape.input(call.questions[k].clone()), tape.input(call.answers[k].clone())))
        .collect();
    let prev = prev_mean.map(|m| tape.input(m.to_vec()));
    let (mean, w) = params.posterior_mean_on(&mut tape, 0, &pairs, prev, &mut Dropout::Off)?;
    Ok(PosteriorStatus {
        mean: tape.value(mean).to_vec(),
        tau: params.tau,
        exchange_attention: tape.value(w).to_vec(),
    })
}

/// Posteriors for every call, chaining means from one call to the next.
pub fn infer_path(calls: &[PreparedCall], params: &InfParams, literal_ranges: bool) -> Result<Vec<PosteriorStatus>> {
    let mut out: Vec<PosteriorStatus> = Vec::with_capacity(calls.len());
    for call in calls {
        let prev = out.last().map(|p| p.mean.clone());
        out.push(infer_status_with(call, prev.as_deref(), params, literal_ranges)?);
    }
    Ok(out)
}

/// `mean + tau·noise`.
pub fn reparam_sample(post: &PosteriorStatus, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != post.mean.len() {
        return Err(Error::invalid(format!(
            "noise has length {}, posterior has {}",
            noise.len(),
            post.mean.len()
        )));
    }
    Ok(post.mean.iter().zip(noise).map(|(m, e)| m + post.tau * e).collect())
}
