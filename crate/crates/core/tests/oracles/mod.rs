//! Brute-force reference implementations used only by tests. Nothing here
//! calls into the library's numerical kernels.
#![allow(dead_code, clippy::excessive_precision)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + 7.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

pub fn gamma_fn(x: f64) -> f64 {
    ln_gamma(x).exp()
}

pub fn weibull_cdf(x: f64, k: f64, lam: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -(-(x / lam).powf(k)).exp_m1()
    }
}

pub fn weibull_mean(k: f64, lam: f64) -> f64 {
    lam * gamma_fn(1.0 + 1.0 / k)
}

pub fn weibull_var(k: f64, lam: f64) -> f64 {
    lam * lam * (gamma_fn(1.0 + 2.0 / k) - gamma_fn(1.0 + 1.0 / k).powi(2))
}

/// One-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sample.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sample.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Asymptotic 1% critical value of the KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.627_6 / (n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inconclusive {
    pub estimate: f64,
    pub error: f64,
}

/// Adaptive-quadrature settings.
#[derive(Debug, Clone)]
pub struct QuadratureSpec {
    pub splits: Vec<f64>,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639,
    0.949_107_912_342_758_525,
    0.864_864_423_359_769_073,
    0.741_531_185_599_394_440,
    0.586_087_235_467_691_130,
    0.405_845_151_377_397_167,
    0.207_784_955_007_898_468,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_553,
    0.104_790_010_322_250_184,
    0.140_653_259_715_525_919,
    0.169_004_726_639_267_903,
    0.190_350_578_064_785_410,
    0.204_432_940_075_298_892,
    0.209_482_141_084_727_828,
];
const WG: [f64; 4] =
    [0.129_484_966_168_869_693, 0.279_705_391_489_276_668, 0.381_830_050_505_118_945, 0.417_959_183_673_469_388];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

struct Piece {
    a: f64,
    b: f64,
    val: f64,
    err: f64,
}

impl PartialEq for Piece {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Piece {
    fn cmp(&self, o: &Self) -> Ordering {
        self.err.total_cmp(&o.err)
    }
}

/// Globally adaptive Gauss–Kronrod (7/15) quadrature over consecutive split points.
pub fn integrate(f: impl Fn(f64) -> f64, spec: &QuadratureSpec) -> Result<f64, Inconclusive> {
    let mut heap = BinaryHeap::new();
    for w in spec.splits.windows(2) {
        let (val, err) = gk15(&f, w[0], w[1]);
        heap.push(Piece { a: w[0], b: w[1], val, err });
    }
    for _ in 0..spec.max_subdivisions {
        let total: f64 = heap.iter().map(|p| p.val).sum();
        let err: f64 = heap.iter().map(|p| p.err).sum();
        if err <= spec.abs_tol.max(spec.rel_tol * total.abs()) {
            return Ok(total);
        }
        let p = heap.pop().unwrap();
        let m = 0.5 * (p.a + p.b);
        for (a, b) in [(p.a, m), (m, p.b)] {
            let (val, err) = gk15(&f, a, b);
            heap.push(Piece { a, b, val, err });
        }
    }
    let total: f64 = heap.iter().map(|p| p.val).sum();
    let err: f64 = heap.iter().map(|p| p.err).sum();
    if err <= spec.abs_tol.max(spec.rel_tol * total.abs()) {
        Ok(total)
    } else {
        Err(Inconclusive { estimate: total, error: err })
    }
}

/// KL(Weibull(k, λ) ‖ Gamma(α, rate β)) by quadrature of ∫ q ln(q/p).
/// Substituting u = (x/λ)^k gives ∫₀^∞ e^{−u} [ln q(x(u)) − ln p(x(u))] du.
pub fn quad_kl(k: f64, lam: f64, alpha: f64, beta: f64) -> Result<f64, Inconclusive> {
    let lg = ln_gamma(alpha);
    let integrand = |u: f64| {
        if u <= 0.0 {
            return 0.0;
        }
        let lu = u.ln();
        let lnx = lam.ln() + lu / k;
        let lnq = k.ln() - lam.ln() + (k - 1.0) * lu / k - u;
        let lnp = alpha * beta.ln() - lg + (alpha - 1.0) * lnx - beta * lnx.exp();
        (-u).exp() * (lnq - lnp)
    };
    let spec = QuadratureSpec {
        splits: vec![0.0, 1e-12, 1e-8, 1e-4, 1e-2, 0.1, 1.0, 4.0, 10.0, 25.0, 60.0, 200.0],
        rel_tol: 1e-8,
        abs_tol: 1e-11,
        max_subdivisions: 4000,
    };
    integrate(integrand, &spec)
}

/// Closed-form KL written out directly from E_q[ln x] = ln λ − γ/k and
/// E_q[x] = λ Γ(1 + 1/k).
pub fn closed_form_kl(k: f64, lam: f64, alpha: f64, beta: f64) -> f64 {
    let euler = 0.577_215_664_901_532_9;
    let e_lnx = lam.ln() - euler / k;
    let e_x = lam * gamma_fn(1.0 + 1.0 / k);
    let neg_entropy = k.ln() - lam.ln() + (k - 1.0) * (e_lnx - lam.ln()) - 1.0;
    let cross = alpha * beta.ln() - ln_gamma(alpha) + (alpha - 1.0) * e_lnx - beta * e_x;
    neg_entropy - cross
}

/// Central finite differences with relative step `step`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step * x[i].abs().max(1.0);
            xs[i] = x[i] + h;
            let fp = f(&xs);
            xs[i] = x[i] - h;
            let fm = f(&xs);
            xs[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Add-one-smoothed unigram of the train counts scored on held-out counts.
/// Both arguments are dense `docs × V` count matrices.
pub fn unigram_perplexity(train: &[Vec<u32>], heldout: &[Vec<u32>]) -> f64 {
    let v = train.first().or(heldout.first()).map_or(0, |r| r.len());
    let mut freq = vec![1.0; v];
    for row in train {
        for (f, &c) in freq.iter_mut().zip(row) {
            *f += c as f64;
        }
    }
    let total: f64 = freq.iter().sum();
    let (mut ll, mut y) = (0.0, 0.0);
    for row in heldout {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                ll += c as f64 * (freq[j] / total).ln();
                y += c as f64;
            }
        }
    }
    (-ll / y).exp()
}

/// Direct evaluation of the held-out perplexity formula. `phi[s][v][k]`,
/// `theta[s][n][k]`, dense held-out counts `y[n][v]`.
pub fn perplexity_direct(phi: &[Vec<Vec<f64>>], theta: &[Vec<Vec<f64>>], y: &[Vec<u32>]) -> f64 {
    let (mut ll, mut total) = (0.0, 0.0);
    for (n, row) in y.iter().enumerate() {
        let mass = |v: usize| -> f64 {
            let mut m = 0.0;
            for s in 0..phi.len() {
                for k in 0..theta[s][n].len() {
                    m += phi[s][v][k] * theta[s][n][k];
                }
            }
            m
        };
        let norm: f64 = (0..row.len()).map(mass).sum();
        for (v, &c) in row.iter().enumerate() {
            if c > 0 {
                ll += c as f64 * (mass(v) / norm).ln();
                total += c as f64;
            }
        }
    }
    (-ll / total).exp()
}

/// Minimum of `closed_form_kl` over a log-spaced grid of (k, λ).
pub fn grid_fit(alpha: f64, beta: f64, k_range: (f64, f64), lam_range: (f64, f64), n: usize) -> (f64, f64, f64) {
    let at = |lo: f64, hi: f64, i: usize| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp();
    let mut best = (f64::NAN, f64::NAN, f64::INFINITY);
    for i in 0..n {
        let k = at(k_range.0, k_range.1, i);
        for j in 0..n {
            let lam = at(lam_range.0, lam_range.1, j);
            let kl = closed_form_kl(k, lam, alpha, beta);
            if kl < best.2 {
                best = (k, lam, kl);
            }
        }
    }
    best
}

/// Cosine similarity of two vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Greedy one-to-one matching of columns by cosine similarity; returns the
/// mean similarity of matched pairs. Columns are given as `Vec<Vec<f64>>`.
pub fn greedy_matched_cosine(truth: &[Vec<f64>], learned: &[Vec<f64>]) -> f64 {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, t) in truth.iter().enumerate() {
        for (j, l) in learned.iter().enumerate() {
            pairs.push((cosine(t, l), i, j));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut used_t, mut used_l) = (vec![false; truth.len()], vec![false; learned.len()]);
    let (mut sum, mut count) = (0.0, 0);
    for (s, i, j) in pairs {
        if !used_t[i] && !used_l[j] {
            used_t[i] = true;
            used_l[j] = true;
            sum += s;
            count += 1;
        }
    }
    sum / count as f64
}

#[test]
fn oracle_self_checks() {
    assert!(quad_kl(1.0, 1.0, 1.0, 1.0).unwrap().abs() < 1e-8);
    let g = fd_gradient(|x| x[0] * x[0], &[3.0], 1e-6);
    assert!((g[0] - 6.0).abs() < 1e-6);
    let uniform = vec![vec![5u32; 20]; 4];
    assert!((unigram_perplexity(&uniform, &uniform) / 20.0 - 1.0).abs() < 0.01);
    assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
    assert!((closed_form_kl(2.0, 1.0, 1.0, 1.0) - 0.290_766).abs() < 1e-6);
    assert!((quad_kl(2.0, 1.0, 1.0, 1.0).unwrap() - 0.290_766).abs() < 1e-6);
}
