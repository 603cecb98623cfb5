//! Generative networks and the synthetic data sampler.
//!
//! Statuses follow a Gaussian random walk `s¹ ~ N(0, I)`, `sˡ ~ N(sˡ⁻¹, I)`.
//! The success rate after call `l` pools `s¹..sˡ` with attention, appends the
//! standardised features and squashes through an MLP. Each call's exchanges
//! are drawn one pair at a time; the first pair depends only on the status,
//! later pairs also on the previous question and answer. The terminal label is
//! a Bernoulli draw from the last success rate.

use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{
    Call, CompanyRecord, Exchange, ExpertType, FeatureVector, ScalerManifest, CALL_HISTORY_MONTHS,
};
use crate::error::{Error, Result};
use crate::model::Architecture;
use crate::tensor::{AttentionPool, Dropout, Init, Mlp, MlpSpec, ParamStore, Squash, Tape, Var};
use crate::{data, fsutil};

/// Generative network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    pub store: ParamStore,
    nn1_pool: AttentionPool,
    nn1: Mlp,
    nn2: Mlp,
    nn3: Mlp,
    nn4: Mlp,
    nn5: Mlp,
    pub sigma_obs: f64,
    pub d_s: usize,
    pub d_emb: usize,
    pub d_e: usize,
    pub cross_exchange: bool,
}

fn gen_specs(arch: &Architecture) -> [(&'static str, MlpSpec); 5] {
    let (s, x, h) = (arch.d_s, arch.d_emb, &arch.hidden_dims);
    let mlp = |i, o, sq| MlpSpec::new(i, h, o, sq).with_dropout(arch.dropout);
    [
        ("nn1", mlp(s + arch.d_e, 1, Squash::UnitInterval)),
        ("nn2", mlp(s, x, Squash::None)),
        ("nn3", mlp(s + x, x, Squash::None)),
        ("nn4", mlp(s + 2 * x, x, Squash::None)),
        ("nn5", mlp(s + 3 * x, x, Squash::None)),
    ]
}

impl GenParams {
    pub fn init(arch: &Architecture, init: Init, rng: &mut ChaCha8Rng) -> Result<Self> {
        arch.validate()?;
        let mut store = ParamStore::new();
        let nn1_pool = AttentionPool::register(arch.d_s, &mut store, "nn1.pool", init, rng);
        let [a, b, c, d, e] = gen_specs(arch);
        let mut reg = |(name, spec): (&str, MlpSpec)| Mlp::register(spec, &mut store, name, init, rng);
        let (nn1, nn2, nn3, nn4, nn5) = (reg(a)?, reg(b)?, reg(c)?, reg(d)?, reg(e)?);
        Ok(Self::assemble(arch, store, nn1_pool, [nn1, nn2, nn3, nn4, nn5]))
    }

    /// Rebuild around an existing store (e.g. loaded from a checkpoint).
    pub fn bind(arch: &Architecture, store: ParamStore) -> Result<Self> {
        let nn1_pool = AttentionPool::bind(arch.d_s, &store, "nn1.pool")?;
        let [a, b, c, d, e] = gen_specs(arch);
        let bind = |(name, spec): (&str, MlpSpec)| Mlp::bind(spec, &store, name);
        let nets = [bind(a)?, bind(b)?, bind(c)?, bind(d)?, bind(e)?];
        Ok(Self::assemble(arch, store, nn1_pool, nets))
    }

    fn assemble(arch: &Architecture, store: ParamStore, nn1_pool: AttentionPool, nets: [Mlp; 5]) -> Self {
        let [nn1, nn2, nn3, nn4, nn5] = nets;
        Self {
            store,
            nn1_pool,
            nn1,
            nn2,
            nn3,
            nn4,
            nn5,
            sigma_obs: arch.sigma_obs,
            d_s: arch.d_s,
            d_emb: arch.d_emb,
            d_e: arch.d_e,
            cross_exchange: arch.cross_exchange,
        }
    }

    /// Parameter indices owned by each network, for tests and diagnostics.
    pub fn network_params(&self, name: &str) -> Vec<usize> {
        match name {
            "nn1" => {
                let mut v = self.nn1_pool.param_indices();
                v.extend(self.nn1.param_indices());
                v
            }
            "nn2" => self.nn2.param_indices(),
            "nn3" => self.nn3.param_indices(),
            "nn4" => self.nn4.param_indices(),
            "nn5" => self.nn5.param_indices(),
            _ => Vec::new(),
        }
    }

    /// `r = NN1(Attention(s¹..sˡ); e)`; returns the rate node and attention weights.
    pub fn success_rate_on(
        &self,
        tape: &mut Tape<'_>,
        sid: usize,
        statuses: &[Var],
        e: Var,
        dropout: &mut Dropout<'_>,
    ) -> Result<(Var, Var)> {
        if tape.len_of(e) != self.d_e {
            return Err(Error::invalid(format!(
                "feature vector has length {}, model expects {}",
                tape.len_of(e),
                self.d_e
            )));
        }
        let (ctx, weights) = self.nn1_pool.forward(tape, sid, statuses)?;
        let x = tape.concat(&[ctx, e]);
        let r = self.nn1.forward(tape, sid, x, dropout)?;
        Ok((r, weights))
    }

    /// Mean of the next question given the status and, after the first pair, the previous pair.
    pub fn question_mean_on(
        &self,
        tape: &mut Tape<'_>,
        sid: usize,
        s: Var,
        prev: Option<(Var, Var)>,
        dropout: &mut Dropout<'_>,
    ) -> Result<Var> {
        match prev.filter(|_| self.cross_exchange) {
            None => self.nn2.forward(tape, sid, s, dropout),
            Some((pq, pa)) => {
                let x = tape.concat(&[s, pq, pa]);
                self.nn4.forward(tape, sid, x, dropout)
            }
        }
    }

    pub fn answer_mean_on(
        &self,
        tape: &mut Tape<'_>,
        sid: usize,
        s: Var,
        prev: Option<(Var, Var)>,
        cur_q: Var,
        dropout: &mut Dropout<'_>,
    ) -> Result<Var> {
        match prev.filter(|_| self.cross_exchange) {
            None => {
                let x = tape.concat(&[s, cur_q]);
                self.nn3.forward(tape, sid, x, dropout)
            }
            Some((pq, pa)) => {
                let x = tape.concat(&[s, pq, pa, cur_q]);
                self.nn5.forward(tape, sid, x, dropout)
            }
        }
    }

    fn frozen_tape(&self) -> Tape<'_> {
        let mut tape = Tape::new(&[&self.store]);
        tape.set_trainable(0, false);
        tape
    }
}

fn prev_pair<'a>(prev_q: Option<&'a [f64]>, prev_a: Option<&'a [f64]>) -> Result<Option<(&'a [f64], &'a [f64])>> {
    match (prev_q, prev_a) {
        (Some(q), Some(a)) => Ok(Some((q, a))),
        (None, None) => Ok(None),
        _ => Err(Error::invalid(
            "previous question and answer must be both present or both absent",
        )),
    }
}

/// Success rate after the last of `statuses`, with the attention weights over them.
pub fn gen_success_rate(statuses: &[Vec<f64>], e: &[f64], params: &GenParams) -> Result<(f64, Vec<f64>)> {
    if statuses.is_empty() {
        return Err(Error::invalid("success rate needs at least one status"));
    }
    let mut tape = params.frozen_tape();
    let s: Vec<Var> = statuses.iter().map(|s| tape.input(s.clone())).collect();
    let e = tape.input(e.to_vec());
    let (r, w) = params.success_rate_on(&mut tape, 0, &s, e, &mut Dropout::Off)?;
    Ok((tape.scalar(r), tape.value(w).to_vec()))
}

pub fn gen_question_mean(
    s: &[f64],
    prev_q: Option<&[f64]>,
    prev_a: Option<&[f64]>,
    params: &GenParams,
) -> Result<Vec<f64>> {
    let prev = prev_pair(prev_q, prev_a)?;
    let mut tape = params.frozen_tape();
    let sv = tape.input(s.to_vec());
    let prev = prev.map(|(q, a)| (tape.input(q.to_vec()), tape.input(a.to_vec())));
    let m = params.question_mean_on(&mut tape, 0, sv, prev, &mut Dropout::Off)?;
    Ok(tape.value(m).to_vec())
}

pub fn gen_answer_mean(
    s: &[f64],
    prev_q: Option<&[f64]>,
    prev_a: Option<&[f64]>,
    cur_q: &[f64],
    params: &GenParams,
) -> Result<Vec<f64>> {
    let prev = prev_pair(prev_q, prev_a)?;
    let mut tape = params.frozen_tape();
    let sv = tape.input(s.to_vec());
    let prev = prev.map(|(q, a)| (tape.input(q.to_vec()), tape.input(a.to_vec())));
    let q = tape.input(cur_q.to_vec());
    let m = params.answer_mean_on(&mut tape, 0, sv, prev, q, &mut Dropout::Off)?;
    Ok(tape.value(m).to_vec())
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| normal(rng)).collect()
}

/// `N(0, I)` for the first call, `N(prev, I)` afterwards.
pub fn sample_status(prev: Option<&[f64]>, d_s: usize, rng: &mut impl Rng) -> Vec<f64> {
    let z = gaussian_vec(rng, d_s);
    match prev {
        None => z,
        Some(p) => p.iter().zip(z).map(|(a, b)| a + b).collect(),
    }
}

/// True latent trajectory of one sampled company.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPath {
    pub statuses: Vec<Vec<f64>>,
    pub success_rates: Vec<f64>,
}

/// Sidecar line for a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRecord {
    pub company_id: String,
    pub statuses: Vec<Vec<f64>>,
    pub success_rates: Vec<f64>,
}

/// Observable layout of one company to sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CompanyPlan {
    pub company_id: String,
    pub features: FeatureVector,
    /// Standardised features fed to NN1.
    pub e: Vec<f64>,
    /// Exchanges per call; its length is the number of calls.
    pub exchanges: Vec<usize>,
    pub call_dates: Vec<NaiveDate>,
    pub expert_types: Vec<ExpertType>,
    pub outcome_gap_days: u64,
}

/// Run the generative process once.
pub fn sample_company(params: &GenParams, plan: &CompanyPlan, rng: &mut impl Rng) -> Result<(CompanyRecord, LatentPath)> {
    let n_calls = plan.exchanges.len();
    if n_calls == 0 || plan.exchanges.contains(&0) {
        return Err(Error::invalid("a company needs at least one call and every call at least one exchange"));
    }
    if plan.call_dates.len() != n_calls || plan.expert_types.len() != n_calls {
        return Err(Error::invalid("plan dates/expert types must match the number of calls"));
    }
    if !(params.sigma_obs > 0.0) {
        return Err(Error::invalid("sigma_obs must be positive"));
    }
    let sigma = params.sigma_obs;
    let mut statuses: Vec<Vec<f64>> = Vec::with_capacity(n_calls);
    let mut rates = Vec::with_capacity(n_calls);
    let mut calls = Vec::with_capacity(n_calls);
    for l in 0..n_calls {
        let s = sample_status(statuses.last().map(Vec::as_slice), params.d_s, rng);
        statuses.push(s);
        let (r, _) = gen_success_rate(&statuses, &plan.e, params)?;
        rates.push(r);
        let s = &statuses[l];
        let mut exchanges = Vec::with_capacity(plan.exchanges[l]);
        let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
        for _ in 0..plan.exchanges[l] {
            let (pq, pa) = match &prev {
                Some((q, a)) => (Some(q.as_slice()), Some(a.as_slice())),
                None => (None, None),
            };
            let mq = gen_question_mean(s, pq, pa, params)?;
            let q: Vec<f64> = mq.iter().map(|m| m + sigma * normal(rng)).collect();
            let ma = gen_answer_mean(s, pq, pa, &q, params)?;
            let a: Vec<f64> = ma.iter().map(|m| m + sigma * normal(rng)).collect();
            exchanges.push(Exchange {
                question_text: None,
                answer_text: None,
                q_emb: Some(q.clone()),
                a_emb: Some(a.clone()),
            });
            prev = Some((q, a));
        }
        calls.push(Call {
            call_id: format!("{}-c{}", plan.company_id, l + 1),
            call_date: plan.call_dates[l],
            expert_type: plan.expert_types[l],
            exchanges,
        });
    }
    let r_last = *rates.last().expect("non-empty");
    let label = u8::from(rng.random::<f64>() < r_last);
    let outcome_date = plan.call_dates[n_calls - 1] + Days::new(plan.outcome_gap_days);
    let record = CompanyRecord {
        company_id: plan.company_id.clone(),
        label,
        outcome_date,
        features: plan.features.clone(),
        calls,
    };
    Ok((
        record,
        LatentPath {
            statuses,
            success_rates: rates,
        },
    ))
}

/// Ranges for the number of calls per company and exchanges per call (inclusive, uniform).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeDistribution {
    pub min_calls: usize,
    pub max_calls: usize,
    pub min_exchanges: usize,
    pub max_exchanges: usize,
}

impl Default for ShapeDistribution {
    fn default() -> Self {
        Self {
            min_calls: 1,
            max_calls: 5,
            min_exchanges: 2,
            max_exchanges: 8,
        }
    }
}

impl ShapeDistribution {
    fn validate(&self) -> Result<()> {
        if self.min_calls == 0 || self.min_exchanges == 0 || self.max_calls < self.min_calls || self.max_exchanges < self.min_exchanges {
            return Err(Error::invalid(format!("invalid shape distribution {self:?}")));
        }
        Ok(())
    }
}

const HQ_CHOICES: [&str; 4] = ["Berlin", "London", "New York", "San Francisco"];
const TRADEMARK_CHOICES: [&str; 3] = ["9", "35", "42"];

fn company_rng(seed: u64, index: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * index as u64 + stream);
    rng
}

/// Raw covariates for synthetic company `index`.
pub fn synth_features(seed: u64, index: usize) -> FeatureVector {
    let mut rng = company_rng(seed, index, 0);
    let lognormal = |rng: &mut ChaCha8Rng, mu: f64, sd: f64| (mu + sd * normal(rng)).exp();
    FeatureVector {
        age_months: rng.random_range(6..=120) as f64,
        founders_count: rng.random_range(1..=5) as f64,
        rounds: rng.random_range(0..=6) as f64,
        raised_funding_musd: lognormal(&mut rng, 1.5, 1.0),
        investor_count: rng.random_range(0..=20) as f64,
        active_products: rng.random_range(1..=10) as f64,
        it_spend_musd: lognormal(&mut rng, -1.0, 0.8),
        calls_last_24m: (0..CALL_HISTORY_MONTHS).map(|_| rng.random_range(0..=3)).collect(),
        hq: HQ_CHOICES[rng.random_range(0..HQ_CHOICES.len())].to_string(),
        trademark_class: TRADEMARK_CHOICES[rng.random_range(0..TRADEMARK_CHOICES.len())].to_string(),
    }
}

fn synth_plan(seed: u64, index: usize, features: FeatureVector, e: Vec<f64>, shape: &ShapeDistribution) -> CompanyPlan {
    let mut rng = company_rng(seed, index, 1);
    let n_calls = rng.random_range(shape.min_calls..=shape.max_calls);
    let exchanges = (0..n_calls)
        .map(|_| rng.random_range(shape.min_exchanges..=shape.max_exchanges))
        .collect();
    let mut date = NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid") + Days::new(rng.random_range(0..1000));
    let mut call_dates = Vec::with_capacity(n_calls);
    for l in 0..n_calls {
        if l > 0 {
            date = date + Days::new(rng.random_range(14..=120));
        }
        call_dates.push(date);
    }
    let expert_types = (0..n_calls)
        .map(|_| ExpertType::ALL[rng.random_range(0..ExpertType::ALL.len())])
        .collect();
    CompanyPlan {
        company_id: format!("synth-{index:06}"),
        features,
        e,
        exchanges,
        call_dates,
        expert_types,
        outcome_gap_days: rng.random_range(30..=730),
    }
}

/// Settings for a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_companies: usize,
    pub seed: u64,
    pub shape: ShapeDistribution,
    pub d_s: usize,
    pub d_emb: usize,
    pub hidden_dims: Vec<usize>,
    pub sigma_obs: f64,
    /// Freshly drawn emission weights (question/answer networks) have std
    /// `emission_gain/sqrt(fan_in)`. Values much above 1 make the
    /// exchange-to-exchange recursion expansive.
    pub emission_gain: f64,
    /// Same for the success-rate network and its attention pool.
    pub rate_gain: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_companies: 1000,
            seed: 0,
            shape: ShapeDistribution::default(),
            d_s: 8,
            d_emb: 16,
            hidden_dims: vec![32],
            sigma_obs: 1.0,
            emission_gain: 1.0,
            rate_gain: 3.0,
        }
    }
}

impl SynthSpec {
    /// Architecture of freshly drawn generating networks; inference widths mirror the generator.
    pub fn architecture(&self, d_e: usize) -> Architecture {
        Architecture {
            d_s: self.d_s,
            d_emb: self.d_emb,
            d_e,
            hidden_dims: self.hidden_dims.clone(),
            token_dim: self.hidden_dims.last().copied().unwrap_or(self.d_emb),
            dropout: 0.0,
            sigma_obs: self.sigma_obs,
            tau: 1.0,
            cross_exchange: true,
        }
    }
}

/// A sampled dataset together with everything needed to audit it.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub records: Vec<CompanyRecord>,
    pub latents: Vec<LatentRecord>,
    /// Feature transform used to build `e` for the generator.
    pub scaler: ScalerManifest,
    pub arch: Architecture,
    pub params: GenParams,
}

/// Sample `spec.n_companies` companies. With `params == None` the generating
/// networks are drawn with [`Init::ScaledFanIn`] using the spec seed.
pub fn synthesize(spec: &SynthSpec, params: Option<(Architecture, GenParams)>) -> Result<SynthOutput> {
    if spec.n_companies == 0 {
        return Err(Error::invalid("synthetic dataset needs at least one company"));
    }
    spec.shape.validate()?;
    if !(spec.emission_gain > 0.0) || !(spec.rate_gain >= 0.0) {
        return Err(Error::invalid("synthetic weight gains must be positive"));
    }
    let features: Vec<FeatureVector> = (0..spec.n_companies).map(|i| synth_features(spec.seed, i)).collect();
    let stub: Vec<CompanyRecord> = features
        .iter()
        .map(|f| CompanyRecord {
            company_id: String::new(),
            label: 0,
            outcome_date: NaiveDate::MIN,
            features: f.clone(),
            calls: Vec::new(),
        })
        .collect();
    let mut scaler = ScalerManifest::fit(&stub)?;
    scaler.d_emb = Some(spec.d_emb);
    let (arch, params) = match params {
        Some(p) => p,
        None => {
            let arch = spec.architecture(scaler.d_e);
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
            let mut gp = GenParams::init(&arch, Init::ScaledFanIn(spec.emission_gain), &mut rng)?;
            // biases start at zero, so rescaling equals drawing with the rate gain
            let ratio = spec.rate_gain / spec.emission_gain;
            for i in gp.network_params("nn1") {
                for v in gp.store.get_mut(i).data_mut() {
                    *v *= ratio;
                }
            }
            (arch, gp)
        }
    };
    if params.d_e != scaler.d_e || params.d_emb != spec.d_emb {
        return Err(Error::invalid(format!(
            "generating params expect d_e={} d_emb={}, dataset has d_e={} d_emb={}",
            params.d_e, params.d_emb, scaler.d_e, spec.d_emb
        )));
    }

    use rayon::prelude::*;
    let sampled: Vec<(CompanyRecord, LatentPath)> = features
        .into_par_iter()
        .enumerate()
        .map(|(i, f)| {
            let e = scaler.transform(&f);
            let plan = synth_plan(spec.seed, i, f, e, &spec.shape);
            let mut rng = company_rng(spec.seed ^ 0x51ed_270b_2762_4c39, i, 0);
            sample_company(&params, &plan, &mut rng)
        })
        .collect::<Result<_>>()?;
    let (records, latents) = sampled
        .into_iter()
        .map(|(r, p)| {
            let lat = LatentRecord {
                company_id: r.company_id.clone(),
                statuses: p.statuses,
                success_rates: p.success_rates,
            };
            (r, lat)
        })
        .unzip();
    Ok(SynthOutput {
        records,
        latents,
        scaler,
        arch,
        params,
    })
}

/// Sample and write the dataset plus its latent sidecar.
pub fn synth_dataset(
    spec: &SynthSpec,
    params: Option<(Architecture, GenParams)>,
    dataset_path: impl AsRef<Path>,
    sidecar_path: impl AsRef<Path>,
) -> Result<SynthOutput> {
    let out = synthesize(spec, params)?;
    data::write_dataset(&dataset_path, &out.records)?;
    fsutil::write_atomic(sidecar_path, &data::to_jsonl(&out.latents)?)?;
    Ok(out)
}
