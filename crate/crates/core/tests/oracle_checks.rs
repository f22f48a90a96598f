mod oracles;

use ndarray::{array, Array1, Array2};
use rand::Rng;
use std::sync::Arc;

use whai::corpus::SparseCounts;
use whai::distributions::{
    crt_sample, kl_weibull_gamma, weibull_fit_to_gamma, weibull_sample, weibull_sample_grad, GammaParams, WeibullParams,
};
use whai::encoder::{DocLatents, EncoderParams, EncoderVariant, LayerLatents, LayerNoise};
use whai::eval::{heldout_perplexity, PosteriorSample, PredictiveAccumulator, ThetaMode};
use whai::model::{DldaModel, LayerSizes};
use whai::rng::rng_from;
use whai::tlasgr::sample_doc_counts;

fn w(k: f64, l: f64) -> WeibullParams {
    WeibullParams::new(k, l).unwrap()
}
fn g(a: f64, b: f64) -> GammaParams {
    GammaParams::new(a, b).unwrap()
}

#[test]
fn kl_matches_quadrature_on_random_grid() {
    let mut r = rng_from(20);
    for _ in 0..20 {
        let p: [f64; 4] = std::array::from_fn(|_| 0.2 + 4.8 * r.random::<f64>());
        let q = oracles::quad_kl(p[0], p[1], p[2], p[3]).expect("quadrature converged");
        let a = kl_weibull_gamma(w(p[0], p[1]), g(p[2], p[3]));
        assert!((a - q).abs() < 1e-4, "{p:?}: {a} vs {q}");
        assert!(a >= -1e-12);
    }
}

#[test]
fn kl_matches_monte_carlo() {
    let mut r = rng_from(21);
    for _ in 0..5 {
        let (k, lam, a, b) = (
            0.5 + 2.0 * r.random::<f64>(),
            0.5 + 2.0 * r.random::<f64>(),
            0.5 + 3.0 * r.random::<f64>(),
            0.5 + r.random::<f64>(),
        );
        let n = 100_000;
        let vals: Vec<f64> = (0..n)
            .map(|_| {
                let x = lam * (-(1.0 - r.random::<f64>()).ln()).powf(1.0 / k);
                let lq = k.ln() - lam.ln() + (k - 1.0) * (x / lam).ln() - (x / lam).powf(k);
                let lp = a * b.ln() - oracles::ln_gamma(a) + (a - 1.0) * x.ln() - b * x;
                lq - lp
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let se = sd / (n as f64).sqrt();
        let analytic = kl_weibull_gamma(w(k, lam), g(a, b));
        assert!((analytic - mean).abs() < 3.0 * se, "{analytic} vs {mean} ± {se}");
    }
}

#[test]
fn fit_matches_grid_search() {
    let fit = weibull_fit_to_gamma(g(0.5, 1.0)).unwrap();
    let (k, lam, kl) = oracles::grid_fit(0.5, 1.0, (0.05, 5.0), (0.01, 10.0), 400);
    assert!((fit.kl - kl).abs() < 1e-4, "fit {:?} grid ({k}, {lam}, {kl})", fit);
    assert!(fit.kl <= kl + 1e-12);
}

#[test]
fn weibull_moments_and_ks() {
    let mut r = rng_from(22);
    for (k, lam) in [(0.5, 1.0), (2.0, 3.0)] {
        let n = 100_000;
        let mut xs: Vec<f64> =
            (0..n).map(|_| weibull_sample(w(k, lam), r.random::<f64>().max(1e-300)).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean / oracles::weibull_mean(k, lam) - 1.0).abs() < 0.01, "mean {mean}");
        assert!((var / oracles::weibull_var(k, lam) - 1.0).abs() < 0.02, "var {var}");
        let d = oracles::ks_statistic(&mut xs, |x| oracles::weibull_cdf(x, k, lam));
        assert!(d < oracles::ks_critical_1pct(n));
    }
}

#[test]
fn weibull_sample_partials() {
    for (k, lam, eps) in [(0.7, 1.3, 0.2), (2.5, 0.4, 0.9), (1.0, 1.0, 0.5)] {
        let gr = weibull_sample_grad(w(k, lam), eps).unwrap();
        let f = |x: &[f64]| weibull_sample(w(x[0], x[1]), eps).unwrap();
        let fd = oracles::fd_gradient(f, &[k, lam], 1e-6);
        assert!((gr.d_shape - fd[0]).abs() <= 1e-5 * fd[0].abs().max(1e-8));
        assert!((gr.d_scale - fd[1]).abs() <= 1e-5 * fd[1].abs().max(1e-8));
    }
}

#[test]
fn crt_mean_matches_expectation() {
    let mut r = rng_from(23);
    let n = 100_000;
    let mean = (0..n).map(|_| crt_sample(50, 2.0, &mut r) as f64).sum::<f64>() / n as f64;
    let expect: f64 = (1..=50).map(|i| 2.0 / (2.0 + i as f64 - 1.0)).sum();
    assert!((mean / expect - 1.0).abs() < 0.02);
}

fn latents_with_theta(theta: Array1<f64>) -> DocLatents {
    let k = theta.len();
    let z = Array1::<f64>::zeros(k);
    DocLatents {
        layers: vec![LayerLatents {
            pre_h: z.clone(),
            h: z.clone(),
            pre_k: z.clone(),
            k_raw: z.clone(),
            pre_lambda: z.clone(),
            lambda: z.clone(),
            shape: z.clone(),
            theta,
            noise: LayerNoise::Uniform(z),
        }],
    }
}

#[test]
fn allocation_frequency_matches_weights() {
    let sizes = LayerSizes::new(vec![2, 2]).unwrap();
    let phi = array![[0.9, 0.1], [0.1, 0.9]];
    let model = DldaModel::from_parts(sizes, vec![phi], array![1.0, 1.0], vec![1.0]).unwrap();
    let theta = array![1.0, 2.0];
    let lat = latents_with_theta(theta.clone());
    let docs = SparseCounts::from_dense(&[vec![1, 0]]).unwrap();
    let mut r = rng_from(24);
    let n = 100_000;
    let mut first = 0u64;
    for _ in 0..n {
        let c = sample_doc_counts(&model, &lat, docs.doc(0), &mut r).unwrap();
        first += c.topic_totals[0][0];
    }
    let expect = 0.9 * 1.0 / (0.9 * 1.0 + 0.1 * 2.0);
    assert!((first as f64 / n as f64 - expect).abs() < 0.01);
}

#[test]
fn perplexity_hand_case_matches_direct_evaluation() {
    // 2 documents, V = 3, two samples with two topics each.
    let phis = [array![[0.5, 0.1], [0.3, 0.2], [0.2, 0.7]], array![[0.6, 0.2], [0.1, 0.1], [0.3, 0.7]]];
    let thetas = [vec![array![1.0, 2.0], array![0.5, 0.1]], vec![array![3.0, 0.2], array![0.4, 0.4]]];
    let y = vec![vec![2u32, 0, 1], vec![0, 3, 1]];
    let held = SparseCounts::from_dense(&y).unwrap();
    let mut acc = PredictiveAccumulator::new(&held);
    for s in 0..2 {
        acc.add_theta(&phis[s], &thetas[s]).unwrap();
    }
    let to_vec2 = |a: &Array2<f64>| a.outer_iter().map(|r| r.to_vec()).collect::<Vec<_>>();
    let direct = oracles::perplexity_direct(
        &phis.iter().map(to_vec2).collect::<Vec<_>>(),
        &thetas.iter().map(|ts| ts.iter().map(|t| t.to_vec()).collect()).collect::<Vec<_>>(),
        &y,
    );
    assert!((acc.report().unwrap().perplexity - direct).abs() < 1e-10);
}

#[test]
fn perplexity_invariant_to_theta_scaling() {
    let phi = array![[0.5, 0.1], [0.3, 0.2], [0.2, 0.7]];
    let held = SparseCounts::from_dense(&[vec![2, 1, 1], vec![0, 3, 1]]).unwrap();
    let run = |scale: [f64; 2]| {
        let mut acc = PredictiveAccumulator::new(&held);
        for s in 0..2 {
            let t = vec![array![1.0, 2.0] * scale[s], array![0.5, 0.1] * scale[s]];
            acc.add_theta(&phi, &t).unwrap();
        }
        acc.report().unwrap().perplexity
    };
    let base = run([1.0, 1.0]);
    assert!((run([7.0, 7.0]) - base).abs() < 1e-10);
    let mut single = PredictiveAccumulator::new(&held);
    single.add_theta(&phi, &[array![1.0, 2.0] * 3.0, array![0.5, 0.1] * 0.2]).unwrap();
    let mut unscaled = PredictiveAccumulator::new(&held);
    unscaled.add_theta(&phi, &[array![1.0, 2.0], array![0.5, 0.1]]).unwrap();
    assert!((single.report().unwrap().perplexity - unscaled.report().unwrap().perplexity).abs() < 1e-10);
}

#[test]
fn duplicated_samples_equal_single_sample() {
    let sizes = LayerSizes::new(vec![8, 3, 2]).unwrap();
    let truth = DldaModel::init(sizes.clone(), &[0.3, 0.5], 2).unwrap();
    let docs = truth.generate_corpus(40, 3).unwrap().0;
    let split = whai::corpus::split_tokens(&docs, 0.7, 4).unwrap();
    let s = PosteriorSample { iteration: 1, phi: truth.phi.clone(), omega: Arc::new(EncoderParams::init(&sizes, 5)) };
    let one = heldout_perplexity(EncoderVariant::Whai, std::slice::from_ref(&s), &split, ThetaMode::Mean).unwrap();
    let three = heldout_perplexity(EncoderVariant::Whai, &[s.clone(), s.clone(), s], &split, ThetaMode::Mean).unwrap();
    assert!((one.perplexity - three.perplexity).abs() <= 1e-12 * one.perplexity);
}
