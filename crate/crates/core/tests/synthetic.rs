use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqbelief::data::ExpertType;
use seqbelief::genmodel::{
    gen_answer_mean, gen_question_mean, sample_company, sample_status, synth_dataset, synth_features, synthesize,
    CompanyPlan, GenParams, SynthSpec,
};
use seqbelief::tensor::Init;

fn moments(draws: &[Vec<f64>], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = draws.len() as f64;
    let mean: Vec<f64> = (0..d).map(|i| draws.iter().map(|x| x[i]).sum::<f64>() / n).collect();
    let var: Vec<f64> = (0..d)
        .map(|i| draws.iter().map(|x| (x[i] - mean[i]).powi(2)).sum::<f64>() / n)
        .collect();
    (mean, var)
}

#[test]
fn first_status_is_standard_normal() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for prev in [None, Some(&[0.0; 3][..])] {
        let draws: Vec<Vec<f64>> = (0..10_000).map(|_| sample_status(prev, 3, &mut rng)).collect();
        let (mean, var) = moments(&draws, 3);
        for i in 0..3 {
            assert!(mean[i].abs() <= 0.05, "mean {mean:?}");
            assert!((var[i] - 1.0).abs() <= 0.1, "var {var:?}");
        }
    }
}

fn small_params(sigma: f64) -> GenParams {
    let spec = SynthSpec {
        d_s: 2,
        d_emb: 4,
        hidden_dims: vec![6],
        sigma_obs: sigma,
        ..Default::default()
    };
    let arch = spec.architecture(synth_d_e());
    GenParams::init(&arch, Init::Gaussian(0.5), &mut ChaCha8Rng::seed_from_u64(8)).unwrap()
}

fn synth_d_e() -> usize {
    synthesize(
        &SynthSpec {
            n_companies: 1,
            d_emb: 4,
            ..Default::default()
        },
        None,
    )
    .unwrap()
    .scaler
    .d_e
}

fn plan(exchanges: Vec<usize>, d_e: usize) -> CompanyPlan {
    let n = exchanges.len();
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    CompanyPlan {
        company_id: "p".into(),
        features: synth_features(0, 0),
        e: vec![0.3; d_e],
        exchanges,
        call_dates: (0..n).map(|i| start + chrono::Days::new(30 * i as u64)).collect(),
        expert_types: vec![ExpertType::Competitor; n],
        outcome_gap_days: 100,
    }
}

#[test]
fn exchanges_scatter_around_their_means() {
    let sigma = 0.7;
    let params = small_params(sigma);
    let plan = plan(vec![2], params.d_e);
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut resid_a1 = Vec::with_capacity(n);
    let mut resid_q2 = Vec::with_capacity(n);
    for _ in 0..n {
        let (rec, lat) = sample_company(&params, &plan, &mut rng).unwrap();
        let s = &lat.statuses[0];
        let x = &rec.calls[0].exchanges;
        let (q1, a1) = (x[0].q_emb.as_ref().unwrap(), x[0].a_emb.as_ref().unwrap());
        let q2 = x[1].q_emb.as_ref().unwrap();
        let ma = gen_answer_mean(s, None, None, q1, &params).unwrap();
        let mq2 = gen_question_mean(s, Some(q1), Some(a1), &params).unwrap();
        resid_a1.push(a1.iter().zip(&ma).map(|(v, m)| v - m).collect::<Vec<f64>>());
        resid_q2.push(q2.iter().zip(&mq2).map(|(v, m)| v - m).collect::<Vec<f64>>());
    }
    let bound = 3.0 * sigma / (n as f64).sqrt();
    for resid in [resid_a1, resid_q2] {
        let (mean, var) = moments(&resid, 4);
        for i in 0..4 {
            assert!(mean[i].abs() <= bound, "mean residual {mean:?} vs {bound}");
            assert!((var[i] / (sigma * sigma) - 1.0).abs() < 0.05, "variance {var:?}");
        }
    }
}

#[test]
fn single_exchange_company_never_touches_later_networks() {
    let mut params = small_params(1.0);
    for name in ["nn4", "nn5"] {
        for i in params.network_params(name) {
            for v in params.store.get_mut(i).data_mut() {
                *v = f64::NAN;
            }
        }
    }
    let (rec, lat) = sample_company(&params, &plan(vec![1], params.d_e), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let x = &rec.calls[0].exchanges[0];
    assert!(x.q_emb.as_ref().unwrap().iter().chain(x.a_emb.as_ref().unwrap()).all(|v| v.is_finite()));
    assert!(lat.success_rates[0].is_finite());
    // and the poison is real: a second exchange goes through it
    let (rec, _) = sample_company(&params, &plan(vec![2], params.d_e), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(rec.calls[0].exchanges[1].q_emb.as_ref().unwrap().iter().any(|v| v.is_nan()));
}

#[test]
fn one_company_writes_one_line_each() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_companies: 1,
        ..Default::default()
    };
    let (d, s) = (dir.path().join("d.jsonl"), dir.path().join("s.jsonl"));
    synth_dataset(&spec, None, &d, &s).unwrap();
    assert_eq!(std::fs::read_to_string(&d).unwrap().lines().count(), 1);
    assert_eq!(std::fs::read_to_string(&s).unwrap().lines().count(), 1);
    let (d2, s2) = (dir.path().join("d2.jsonl"), dir.path().join("s2.jsonl"));
    synth_dataset(&spec, None, &d2, &s2).unwrap();
    assert_eq!(std::fs::read(&d).unwrap(), std::fs::read(&d2).unwrap());
    assert_eq!(std::fs::read(&s).unwrap(), std::fs::read(&s2).unwrap());
}

#[test]
fn default_shape_has_three_calls_on_average() {
    let out = synthesize(
        &SynthSpec {
            n_companies: 1000,
            seed: 4,
            ..Default::default()
        },
        None,
    )
    .unwrap();
    let mean = out.records.iter().map(|r| r.calls.len()).sum::<usize>() as f64 / 1000.0;
    assert!((mean - 3.0).abs() <= 0.15, "mean calls {mean}");
}

#[test]
fn labels_follow_the_final_rate() {
    let out = synthesize(
        &SynthSpec {
            n_companies: 5000,
            seed: 7,
            ..Default::default()
        },
        None,
    )
    .unwrap();
    let (mut n, mut pos) = (0, 0);
    for (rec, lat) in out.records.iter().zip(&out.latents) {
        let r = *lat.success_rates.last().unwrap();
        if (0.7..0.8).contains(&r) {
            n += 1;
            pos += rec.label as usize;
        }
    }
    let p = pos as f64 / n as f64;
    assert!(n >= 100, "only {n} companies in the bucket");
    assert!((0.67..=0.83).contains(&p), "P(y=1 | r in [0.7, 0.8)) = {p} over {n}");
}
