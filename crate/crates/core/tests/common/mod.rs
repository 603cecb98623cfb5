#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqbelief::data::{ExpertType, PreparedCall, PreparedCompany};
use seqbelief::model::{Architecture, Model};
use seqbelief::objective::{draw_noise, objective_grads, elbo_with_noise, Noise, ObjectiveOptions, Step};
use seqbelief::tensor::{finite_diff_check, Init};

/// Random small model, company and frozen noise.
pub struct TinyCase {
    pub model: Model,
    pub company: PreparedCompany,
    pub noise: Noise,
    pub opts: ObjectiveOptions,
}

pub fn tiny_case(seed: u64) -> TinyCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_s = rng.random_range(1..=4);
    let d_emb = rng.random_range(2..=8);
    let d_e = rng.random_range(1..=3);
    let calls = rng.random_range(1..=3);
    let arch = Architecture {
        d_s,
        d_emb,
        d_e,
        hidden_dims: vec![rng.random_range(2..=4)],
        token_dim: rng.random_range(2..=4),
        dropout: 0.0,
        sigma_obs: rng.random_range(0.7..1.5),
        tau: rng.random_range(0.5..1.2),
        cross_exchange: rng.random_bool(0.8),
    };
    let model = Model::init_with(arch, Init::Gaussian(0.6), seed).unwrap();
    let mut vec = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.5..1.5)).collect() };
    let features = vec(d_e);
    let calls: Vec<PreparedCall> = (0..calls)
        .map(|l| {
            let k = (seed as usize + l) % 3 + 1;
            PreparedCall {
                expert_type: ExpertType::Customer,
                gap_days: 40.0 * (3 - l) as f64,
                questions: (0..k).map(|_| vec(d_emb)).collect(),
                answers: (0..k).map(|_| vec(d_emb)).collect(),
            }
        })
        .collect();
    let label = (seed % 2) as u8;
    let opts = ObjectiveOptions {
        w: 0.5,
        lambda_days: 365.0,
        mc_samples: 1,
        literal_ranges: seed % 7 == 3,
    };
    let noise = draw_noise(seed ^ 0xabc, 1 + (seed % 2) as usize, calls.len(), d_s);
    TinyCase {
        model,
        company: PreparedCompany {
            company_id: format!("tiny-{seed}"),
            label,
            features,
            calls,
        },
        noise,
        opts,
    }
}

/// Max relative error of analytic vs central-difference gradients of `−elbo + w·C` over both sets.
pub fn joint_gradient_error(case: &TinyCase, step: f64) -> f64 {
    let TinyCase { model, company, noise, opts } = case;
    let g = objective_grads(company, &model.gen, &model.inf, noise, opts, Step::Joint, None).unwrap();
    let loss = |gen: &seqbelief::genmodel::GenParams, inf: &seqbelief::inference::InfParams| {
        elbo_with_noise(company, gen, inf, noise, opts).unwrap().weighted_total
    };
    let e_gen = finite_diff_check(&model.gen.store, g.gen.as_ref().unwrap(), step, |p| {
        let mut gen = model.gen.clone();
        gen.store = p.clone();
        loss(&gen, &model.inf)
    })
    .unwrap();
    let e_inf = finite_diff_check(&model.inf.store, g.inf.as_ref().unwrap(), step, |p| {
        let mut inf = model.inf.clone();
        inf.store = p.clone();
        loss(&model.gen, &inf)
    })
    .unwrap();
    e_gen.max(e_inf)
}
