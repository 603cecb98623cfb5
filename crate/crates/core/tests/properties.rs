use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqbelief::data::{read_dataset, split_dataset, to_jsonl, ExpertType, PreparedCall, ScalerManifest, SplitSpec};
use seqbelief::evaluation::{auc, classification_metrics};
use seqbelief::genmodel::{gen_success_rate, synthesize, GenParams, SynthSpec};
use seqbelief::inference::{infer_status, InfParams};
use seqbelief::model::Architecture;
use seqbelief::objective::kl_gaussian;
use seqbelief::tensor::Init;

fn arch() -> Architecture {
    Architecture {
        d_s: 3,
        d_emb: 4,
        d_e: 2,
        hidden_dims: vec![5],
        token_dim: 4,
        dropout: 0.0,
        sigma_obs: 1.0,
        tau: 1.0,
        cross_exchange: true,
    }
}

fn vecs(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-20.0..20.0f64, d), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn records_survive_serialisation(seed in 0u64..1000, n in 1usize..6) {
        let out = synthesize(&SynthSpec { n_companies: n, seed, d_emb: 8, ..Default::default() }, None).unwrap();
        let bytes = to_jsonl(&out.records).unwrap();
        let back = read_dataset(&bytes[..]).unwrap();
        prop_assert_eq!(&back, &out.records);
        prop_assert_eq!(to_jsonl(&back).unwrap(), bytes);
    }

    #[test]
    fn scaler_round_trip_transforms_identically(seed in 0u64..1000) {
        let out = synthesize(&SynthSpec { n_companies: 6, seed, d_emb: 8, ..Default::default() }, None).unwrap();
        let scaler = ScalerManifest::fit(&out.records).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scaler.json");
        scaler.save(&path).unwrap();
        let loaded = ScalerManifest::load(&path).unwrap();
        for r in &out.records {
            let a = scaler.transform(&r.features);
            prop_assert_eq!(&a, &loaded.transform(&r.features));
            prop_assert_eq!(a, scaler.transform(&r.features));
        }
    }

    #[test]
    fn splits_partition_the_records(seed in 0u64..10_000, n in 3usize..40, stratify: bool, temporal: bool) {
        let out = synthesize(&SynthSpec { n_companies: n, seed: 5, d_emb: 8, ..Default::default() }, None).unwrap();
        let spec = SplitSpec { train_frac: 0.6, valid_frac: 0.2, test_frac: 0.2, seed, stratify, temporal };
        let split = split_dataset(&out.records, &spec).unwrap();
        let mut seen = HashSet::new();
        for r in split.train.iter().chain(&split.valid).chain(&split.test) {
            prop_assert!(seen.insert(r.company_id.clone()), "duplicate {}", r.company_id);
        }
        prop_assert_eq!(seen.len(), n);
    }

    #[test]
    fn success_rate_is_a_probability(statuses in (1usize..5).prop_flat_map(|l| vecs(l, 3)), e in prop::collection::vec(-5.0..5.0f64, 2), seed in 0u64..50) {
        let p = GenParams::init(&arch(), Init::Gaussian(1.0), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let (r, w) = gen_success_rate(&statuses, &e, &p).unwrap();
        prop_assert!(r > 0.0 && r < 1.0);
        prop_assert_eq!(w.len(), statuses.len());
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn exchange_attention_is_a_distribution(k in 1usize..6, seed in 0u64..50, scale in 0.1..10.0f64) {
        let p = InfParams::init(&arch(), Init::Gaussian(1.0), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let call = PreparedCall {
            expert_type: ExpertType::Partner,
            gap_days: 1.0,
            questions: (0..k).map(|i| vec![scale * (i as f64 - 1.0), 0.3, -0.2, 1.0]).collect(),
            answers: (0..k).map(|i| vec![0.1, scale * i as f64, 0.0, -1.0]).collect(),
        };
        let a = infer_status(&call, None, &p).unwrap();
        prop_assert!((a.exchange_attention.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(a.clone(), infer_status(&call, None, &p).unwrap());
    }

    #[test]
    fn kl_is_non_negative(mu in prop::collection::vec(-3.0..3.0f64, 1..6), shift in -2.0..2.0f64, tau in 0.05..3.0f64) {
        let prior: Vec<f64> = mu.iter().map(|m| m + shift).collect();
        let kl = kl_gaussian(&mu, tau, &prior).unwrap();
        prop_assert!(kl >= -1e-12);
        prop_assert_eq!(kl_gaussian(&mu, 1.0, &mu).unwrap(), 0.0);
    }

    #[test]
    fn auc_ignores_monotone_transforms(data in prop::collection::vec((0u8..2, -5.0..5.0f64), 2..60)) {
        let y: Vec<u8> = data.iter().map(|d| d.0).collect();
        prop_assume!(y.contains(&0) && y.contains(&1));
        let s: Vec<f64> = data.iter().map(|d| d.1).collect();
        let t: Vec<f64> = s.iter().map(|x| (2.0 * x).exp() + 3.0).collect();
        prop_assert!((auc(&y, &s).unwrap() - auc(&y, &t).unwrap()).abs() < 1e-12);
    }
}

/// Direct per-class recomputation.
fn brute_metrics(y: &[u8], p: &[u8]) -> [f64; 6] {
    let count = |t: u8, q: u8| y.iter().zip(p).filter(|(a, b)| **a == t && **b == q).count() as f64;
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let f1_for = |c: u8| {
        let o = 1 - c;
        let tp = count(c, c);
        let prec = div(tp, tp + count(o, c));
        let rec = div(tp, tp + count(c, o));
        (prec, rec, div(2.0 * prec * rec, prec + rec))
    };
    let (prec, rec, f1) = f1_for(1);
    let (_, _, f0) = f1_for(0);
    let n = y.len() as f64;
    let n1 = y.iter().filter(|v| **v == 1).count() as f64;
    let acc = (count(1, 1) + count(0, 0)) / n;
    [acc, prec, rec, f1, (f1 + f0) / 2.0, (n1 * f1 + (n - n1) * f0) / n]
}

fn brute_auc(y: &[u8], s: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..y.len() {
        for j in 0..y.len() {
            if y[i] == 1 && y[j] == 0 {
                pairs += 1.0;
                wins += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

#[test]
fn metrics_match_brute_force() {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let n = rng.random_range(1..40);
        let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let p: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let m = classification_metrics(&y, &p).unwrap();
        let got = [m.accuracy, m.precision, m.recall, m.f1, m.macro_f1, m.weighted_f1];
        for (a, b) in got.iter().zip(brute_metrics(&y, &p)) {
            assert!((a - b).abs() < 1e-12, "{got:?} vs brute force");
        }
        if y.contains(&0) && y.contains(&1) {
            // coarse scores so ties occur
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64 / 4.0).collect();
            assert!((auc(&y, &s).unwrap() - brute_auc(&y, &s)).abs() < 1e-12);
        }
    }
}
