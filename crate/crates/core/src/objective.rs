//! Variational objective: Gaussian reconstruction terms, the terminal label
//! likelihood, the per-call KL to the random-walk prior and the time-decayed
//! belief constraint.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::PreparedCompany;
use crate::error::{Error, Result};
use crate::genmodel::GenParams;
use crate::inference::{inference_pairs, InfParams};
use crate::tensor::{self, Dropout, Grads, Tape, Var};

const GEN: usize = 0;
const INF: usize = 1;

/// `log N(x; mu, sigma²·I)`.
pub fn gaussian_loglik(x: &[f64], mu: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if x.len() != mu.len() {
        return Err(Error::invalid(format!("length mismatch {} vs {}", x.len(), mu.len())));
    }
    let ss: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(gaussian_const(x.len(), sigma) - ss / (2.0 * sigma * sigma))
}

fn gaussian_const(d: usize, sigma: f64) -> f64 {
    -0.5 * d as f64 * (2.0 * std::f64::consts::PI * sigma * sigma).ln()
}

/// `y·log r + (1−y)·log(1−r)` with `r` clamped to `[1e-7, 1−1e-7]`.
pub fn bernoulli_ll(r: f64, y: u8) -> f64 {
    tensor::bernoulli_ll_value(r, f64::from(y))
}

/// `KL(N(mu_q, tau²I) ‖ N(prior_mean, I))`.
pub fn kl_gaussian(mu_q: &[f64], tau: f64, prior_mean: &[f64]) -> Result<f64> {
    if mu_q.len() != prior_mean.len() {
        return Err(Error::invalid(format!(
            "length mismatch {} vs {}",
            mu_q.len(),
            prior_mean.len()
        )));
    }
    let ss: f64 = mu_q.iter().zip(prior_mean).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(0.5 * ss + kl_const(mu_q.len(), tau))
}

fn kl_const(d: usize, tau: f64) -> f64 {
    let d = d as f64;
    let t2 = tau * tau;
    0.5 * (d * t2 - d - d * t2.ln())
}

/// `Σ_l exp(−t_l/λ)·CE(r_l, y)`.
pub fn constraint_term(rates: &[f64], y: u8, gaps_days: &[f64], lambda_days: f64) -> Result<f64> {
    if !(lambda_days > 0.0) {
        return Err(Error::invalid(format!("lambda_days must be positive, got {lambda_days}")));
    }
    if rates.len() != gaps_days.len() {
        return Err(Error::invalid("rates and gaps must have the same length"));
    }
    Ok(rates
        .iter()
        .zip(gaps_days)
        .map(|(&r, &t)| decay(t, lambda_days) * -bernoulli_ll(r, y))
        .sum())
}

fn decay(gap_days: f64, lambda_days: f64) -> f64 {
    (-gap_days / lambda_days).exp()
}

/// Per-company objective terms, averaged over Monte Carlo samples.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon_q: f64,
    pub recon_a: f64,
    pub label_ll: f64,
    pub kl_total: f64,
    pub constraint: f64,
    pub elbo: f64,
    /// `−elbo + w·constraint`.
    pub weighted_total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.recon_q,
            self.recon_a,
            self.label_ll,
            self.kl_total,
            self.constraint,
            self.elbo,
            self.weighted_total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// Running sum helper for batch averages.
    pub fn add_scaled(&mut self, other: &LossBreakdown, scale: f64) {
        self.recon_q += scale * other.recon_q;
        self.recon_a += scale * other.recon_a;
        self.label_ll += scale * other.label_ll;
        self.kl_total += scale * other.kl_total;
        self.constraint += scale * other.constraint;
        self.elbo += scale * other.elbo;
        self.weighted_total += scale * other.weighted_total;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveOptions {
    /// Constraint weight.
    pub w: f64,
    pub lambda_days: f64,
    pub mc_samples: usize,
    /// Drop the first answer and the last exchange of each call from the
    /// reconstruction terms, and the last exchange from the inference input.
    pub literal_ranges: bool,
}

impl Default for ObjectiveOptions {
    fn default() -> Self {
        Self {
            w: 1e-4,
            lambda_days: 365.0,
            mc_samples: 1,
            literal_ranges: false,
        }
    }
}

impl ObjectiveOptions {
    fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 {
            return Err(Error::invalid("mc_samples must be at least 1"));
        }
        if !(self.lambda_days > 0.0) {
            return Err(Error::invalid("lambda_days must be positive"));
        }
        if !(self.w >= 0.0) {
            return Err(Error::invalid("constraint weight must be non-negative"));
        }
        Ok(())
    }
}

/// Standard normal noise indexed `[sample][call][coordinate]`.
pub type Noise = Vec<Vec<Vec<f64>>>;

pub fn draw_noise(seed: u64, samples: usize, calls: usize, d_s: usize) -> Noise {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| {
            (0..calls)
                .map(|_| (0..d_s).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect()
        })
        .collect()
}

/// Which parameter set an objective evaluation differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    /// Inference parameters against `−elbo + w·constraint`.
    Inference,
    /// Generative parameters against `−elbo`.
    Generative,
    /// Both sets against `−elbo + w·constraint`.
    Joint,
}

struct Terms {
    recon_q: Var,
    recon_a: Var,
    label_ll: Var,
    kl: Var,
    constraint: Var,
}

fn check_inputs(company: &PreparedCompany, gen: &GenParams, inf: &InfParams, noise: &Noise) -> Result<()> {
    if company.calls.is_empty() {
        return Err(Error::invalid(format!("{}: no calls", company.company_id)));
    }
    if gen.d_s != inf.d_s || gen.d_emb != inf.d_emb {
        return Err(Error::invalid("generative and inference parameters disagree on widths"));
    }
    if company.features.len() != gen.d_e {
        return Err(Error::invalid(format!(
            "{}: feature width {} but model expects {}",
            company.company_id,
            company.features.len(),
            gen.d_e
        )));
    }
    for call in &company.calls {
        if call.is_empty() || call.answers.len() != call.questions.len() {
            return Err(Error::invalid(format!("{}: malformed call", company.company_id)));
        }
        if call.questions.iter().chain(&call.answers).any(|v| v.len() != gen.d_emb) {
            return Err(Error::invalid(format!(
                "{}: embedding width differs from model d_emb {}",
                company.company_id, gen.d_emb
            )));
        }
    }
    if noise.is_empty()
        || noise
            .iter()
            .any(|m| m.len() != company.calls.len() || m.iter().any(|e| e.len() != gen.d_s))
    {
        return Err(Error::invalid("noise must be [samples][calls][d_s]"));
    }
    Ok(())
}

fn gaussian_ll_on(tape: &mut Tape<'_>, x: Var, mu: Var, sigma: f64) -> Result<Var> {
    let d = tape.len_of(x);
    let diff = tape.sub(x, mu)?;
    let ss = tape.sum_squares(diff);
    Ok(tape.scale_shift(ss, -1.0 / (2.0 * sigma * sigma), gaussian_const(d, sigma)))
}

fn build(
    tape: &mut Tape<'_>,
    company: &PreparedCompany,
    gen: &GenParams,
    inf: &InfParams,
    noise: &Noise,
    opts: &ObjectiveOptions,
    dropout: &mut Dropout<'_>,
) -> Result<Terms> {
    let y = f64::from(company.label);
    let sigma = gen.sigma_obs;
    let tau = inf.tau;
    let d_s = inf.d_s;

    let obs: Vec<Vec<(Var, Var)>> = company
        .calls
        .iter()
        .map(|c| {
            c.questions
                .iter()
                .zip(&c.answers)
                .map(|(q, a)| (tape.input(q.clone()), tape.input(a.clone())))
                .collect()
        })
        .collect();

    let mut means: Vec<Var> = Vec::with_capacity(obs.len());
    for pairs in &obs {
        let used = &pairs[inference_pairs(pairs.len(), opts.literal_ranges)];
        let (mu, _) = inf.posterior_mean_on(tape, INF, used, means.last().copied(), dropout)?;
        means.push(mu);
    }

    let e = tape.input(company.features.clone());
    let inv_m = 1.0 / noise.len() as f64;
    let kl_c = kl_const(d_s, tau);
    let (mut rq, mut ra, mut lab, mut kl, mut con) = (vec![], vec![], vec![], vec![], vec![]);
    for sample in noise {
        let statuses: Vec<Var> = means
            .iter()
            .zip(sample)
            .map(|(&mu, eps)| {
                let shift = tape.input(eps.iter().map(|v| tau * v).collect());
                tape.add(mu, shift)
            })
            .collect::<Result<_>>()?;

        for (l, pairs) in obs.iter().enumerate() {
            let s = statuses[l];
            let k_count = pairs.len();
            for k in 0..k_count {
                let prev = (k > 0).then(|| pairs[k - 1]);
                let (q, a) = pairs[k];
                let (want_q, want_a) = if opts.literal_ranges {
                    (k == 0 || k + 1 < k_count, k > 0 && k + 1 < k_count)
                } else {
                    (true, true)
                };
                if want_q {
                    let mq = gen.question_mean_on(tape, GEN, s, prev, dropout)?;
                    rq.push(gaussian_ll_on(tape, q, mq, sigma)?);
                }
                if want_a {
                    let ma = gen.answer_mean_on(tape, GEN, s, prev, q, dropout)?;
                    ra.push(gaussian_ll_on(tape, a, ma, sigma)?);
                }
            }

            let prior_diff = match l {
                0 => means[0],
                _ => tape.sub(means[l], statuses[l - 1])?,
            };
            let ss = tape.sum_squares(prior_diff);
            kl.push(tape.scale_shift(ss, 0.5, kl_c));

            let (r, _) = gen.success_rate_on(tape, GEN, &statuses[..=l], e, dropout)?;
            let ll = tape.bernoulli_ll(r, y)?;
            let weight = decay(company.calls[l].gap_days, opts.lambda_days);
            con.push(tape.scale(ll, -weight));
            if l + 1 == obs.len() {
                lab.push(ll);
            }
        }
    }
    let avg = |tape: &mut Tape<'_>, terms: &[Var]| -> Result<Var> {
        let s = tape.add_n(terms)?;
        Ok(tape.scale(s, inv_m))
    };
    Ok(Terms {
        recon_q: avg(tape, &rq)?,
        recon_a: avg(tape, &ra)?,
        label_ll: avg(tape, &lab)?,
        kl: avg(tape, &kl)?,
        constraint: avg(tape, &con)?,
    })
}

fn assemble(tape: &mut Tape<'_>, t: &Terms, w: f64) -> Result<(Var, Var, LossBreakdown)> {
    let recon = tape.add(t.recon_q, t.recon_a)?;
    let fit = tape.add(recon, t.label_ll)?;
    let elbo = tape.sub(fit, t.kl)?;
    let neg_elbo = tape.scale(elbo, -1.0);
    let wc = tape.scale(t.constraint, w);
    let weighted = tape.add(neg_elbo, wc)?;
    let b = LossBreakdown {
        recon_q: tape.scalar(t.recon_q),
        recon_a: tape.scalar(t.recon_a),
        label_ll: tape.scalar(t.label_ll),
        kl_total: tape.scalar(t.kl),
        constraint: tape.scalar(t.constraint),
        elbo: tape.scalar(elbo),
        weighted_total: tape.scalar(weighted),
    };
    Ok((neg_elbo, weighted, b))
}

/// Objective terms using caller-supplied noise `[sample][call][coordinate]`.
pub fn elbo_with_noise(
    company: &PreparedCompany,
    gen: &GenParams,
    inf: &InfParams,
    noise: &Noise,
    opts: &ObjectiveOptions,
) -> Result<LossBreakdown> {
    opts.validate()?;
    check_inputs(company, gen, inf, noise)?;
    let mut tape = Tape::new(&[&gen.store, &inf.store]);
    tape.set_trainable(GEN, false);
    tape.set_trainable(INF, false);
    let terms = build(&mut tape, company, gen, inf, noise, opts, &mut Dropout::Off)?;
    Ok(assemble(&mut tape, &terms, opts.w)?.2)
}

/// Objective terms with `opts.mc_samples` noise draws from `noise_seed`.
pub fn elbo(
    company: &PreparedCompany,
    gen: &GenParams,
    inf: &InfParams,
    noise_seed: u64,
    opts: &ObjectiveOptions,
) -> Result<LossBreakdown> {
    let noise = draw_noise(noise_seed, opts.mc_samples, company.calls.len(), inf.d_s);
    elbo_with_noise(company, gen, inf, &noise, opts)
}

/// Loss value and gradients for one company.
#[derive(Debug, Clone)]
pub struct ObjectiveGrads {
    pub breakdown: LossBreakdown,
    /// Value of the differentiated loss.
    pub loss: f64,
    pub gen: Option<Grads>,
    pub inf: Option<Grads>,
}

/// Differentiate the objective for `step`. Dropout is active when `dropout_rng` is given.
pub fn objective_grads(
    company: &PreparedCompany,
    gen: &GenParams,
    inf: &InfParams,
    noise: &Noise,
    opts: &ObjectiveOptions,
    step: Step,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<ObjectiveGrads> {
    opts.validate()?;
    check_inputs(company, gen, inf, noise)?;
    let mut tape = Tape::new(&[&gen.store, &inf.store]);
    tape.set_trainable(GEN, step != Step::Inference);
    tape.set_trainable(INF, step != Step::Generative);
    let mut dropout = match dropout_rng {
        Some(rng) => Dropout::On(rng),
        None => Dropout::Off,
    };
    let terms = build(&mut tape, company, gen, inf, noise, opts, &mut dropout)?;
    let (neg_elbo, weighted, breakdown) = assemble(&mut tape, &terms, opts.w)?;
    let loss = if step == Step::Generative { neg_elbo } else { weighted };
    let grads = tape.backward(loss)?;
    let value = tape.scalar(loss);
    let mut stores = grads.stores;
    let inf_g = stores.pop().flatten();
    let gen_g = stores.pop().flatten();
    Ok(ObjectiveGrads {
        breakdown,
        loss: value,
        gen: gen_g,
        inf: inf_g,
    })
}
