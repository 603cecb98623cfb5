mod common;

use seqbelief::inference::{reparam_sample, PosteriorStatus};
use seqbelief::objective::{elbo, kl_gaussian, ObjectiveOptions};

fn std_dev(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[test]
fn elbo_spread_shrinks_with_more_samples() {
    let case = common::tiny_case(4);
    let spread = |m: usize| {
        let opts = ObjectiveOptions {
            mc_samples: m,
            ..case.opts
        };
        let values: Vec<f64> = (0..100)
            .map(|seed| elbo(&case.company, &case.model.gen, &case.model.inf, seed, &opts).unwrap().elbo)
            .collect();
        std_dev(&values)
    };
    let (s1, s4, s16) = (spread(1), spread(4), spread(16));
    for (ratio, what) in [(s1 / s4, "1→4"), (s4 / s16, "4→16")] {
        assert!(
            (2.0 / 1.5..=2.0 * 1.5).contains(&ratio),
            "std ratio {what} is {ratio} (stds {s1} {s4} {s16})"
        );
    }
}

#[test]
fn kl_gradient_in_the_mean_is_the_offset() {
    let mu = [0.4, -1.2, 2.0];
    let prior = [1.0, 0.5, -0.3];
    let tau = 0.7;
    let h = 1e-5;
    for i in 0..3 {
        let mut up = mu;
        let mut down = mu;
        up[i] += h;
        down[i] -= h;
        let fd = (kl_gaussian(&up, tau, &prior).unwrap() - kl_gaussian(&down, tau, &prior).unwrap()) / (2.0 * h);
        let exact = mu[i] - prior[i];
        assert!((fd - exact).abs() / exact.abs().max(1.0) < 1e-6, "coordinate {i}: {fd} vs {exact}");
    }
}

#[test]
fn sample_passes_mean_gradient_through() {
    // loss(s) = Σ sin(s_i)·i, so d loss / d mean = cos(s_i)·i through s = mean + tau·noise
    let noise = [0.3, -1.1, 0.8];
    let loss = |mean: &[f64]| {
        let post = PosteriorStatus {
            mean: mean.to_vec(),
            tau: 0.6,
            exchange_attention: vec![1.0],
        };
        let s = reparam_sample(&post, &noise).unwrap();
        s.iter().enumerate().map(|(i, v)| v.sin() * (i + 1) as f64).sum::<f64>()
    };
    let mean = [0.2, 0.9, -0.4];
    let h = 1e-5;
    for i in 0..3 {
        let mut up = mean;
        let mut down = mean;
        up[i] += h;
        down[i] -= h;
        let fd = (loss(&up) - loss(&down)) / (2.0 * h);
        let exact = (mean[i] + 0.6 * noise[i]).cos() * (i + 1) as f64;
        assert!((fd - exact).abs() / exact.abs().max(1.0) < 1e-4);
    }
    // zero noise returns the mean
    let post = PosteriorStatus {
        mean: mean.to_vec(),
        tau: 0.6,
        exchange_attention: vec![1.0],
    };
    assert_eq!(reparam_sample(&post, &[0.0; 3]).unwrap(), mean.to_vec());
}
