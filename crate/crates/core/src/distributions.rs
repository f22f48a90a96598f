//! Scalar probability kernels: Weibull reparameterization, Weibull/gamma
//! divergences, a Marsaglia–Tsang gamma sampler that records its accepted
//! noise, and the count samplers used by the latent-count augmentation.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::{digamma, gamma, ln_gamma};

use crate::corpus::binomial;
use crate::error::{invalid, Error, Result};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Lower/upper guard applied to uniform noise before it enters
/// [`weibull_sample`] in the training path.
pub const NOISE_CLAMP: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeibullParams {
    pub shape: f64,
    pub scale: f64,
}

impl WeibullParams {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()) {
            return Err(invalid(format!("Weibull({shape}, {scale}) needs positive finite parameters")));
        }
        Ok(WeibullParams { shape, scale })
    }

    pub fn mean(&self) -> f64 {
        self.scale * gamma(1.0 + 1.0 / self.shape)
    }

    pub fn variance(&self) -> f64 {
        let g1 = gamma(1.0 + 1.0 / self.shape);
        self.scale * self.scale * (gamma(1.0 + 2.0 / self.shape) - g1 * g1)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            -(-(x / self.scale).powf(self.shape)).exp_m1()
        }
    }
}

/// Gamma distribution in shape/rate form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
            return Err(invalid(format!("Gamma({shape}, {rate}) needs positive finite parameters")));
        }
        Ok(GammaParams { shape, rate })
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn clamp_uniform(eps: f64) -> f64 {
    eps.clamp(NOISE_CLAMP, 1.0 - NOISE_CLAMP)
}

/// `λ (−ln(1−ε))^{1/k}`.
pub fn weibull_sample(p: WeibullParams, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid(format!("uniform noise {eps} not in (0, 1)")));
    }
    Ok(weibull_transform(p.shape, p.scale, eps))
}

#[inline]
pub(crate) fn weibull_transform(shape: f64, scale: f64, eps: f64) -> f64 {
    scale * (-(-eps).ln_1p()).powf(1.0 / shape)
}

/// Value of the Weibull reparameterization and its partials in shape and scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReparamGrad {
    pub value: f64,
    pub d_shape: f64,
    pub d_scale: f64,
}

pub fn weibull_sample_grad(p: WeibullParams, eps: f64) -> Result<ReparamGrad> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid(format!("uniform noise {eps} not in (0, 1)")));
    }
    Ok(weibull_transform_grad(p.shape, p.scale, eps))
}

#[inline]
pub(crate) fn weibull_transform_grad(shape: f64, scale: f64, eps: f64) -> ReparamGrad {
    let e = -(-eps).ln_1p();
    let x = scale * e.powf(1.0 / shape);
    ReparamGrad { value: x, d_shape: -x * e.ln() / (shape * shape), d_scale: e.powf(1.0 / shape) }
}

/// `KL(Weibull(k, λ) ‖ Gamma(α, β))`, β a rate:
/// `−α ln λ + γα/k + ln k + βλΓ(1+1/k) − γ − 1 − α ln β + ln Γ(α)`.
pub fn kl_weibull_gamma(q: WeibullParams, p: GammaParams) -> f64 {
    kl_weibull_gamma_grad(q, p).value
}

/// KL value with partials in the Weibull shape and scale and the gamma shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlGrad {
    pub value: f64,
    pub d_q_shape: f64,
    pub d_q_scale: f64,
    pub d_p_shape: f64,
}

pub fn kl_weibull_gamma_grad(q: WeibullParams, p: GammaParams) -> KlGrad {
    let (k, lam, a, b) = (q.shape, q.scale, p.shape, p.rate);
    let s = 1.0 / k;
    let g = gamma(1.0 + s);
    let value =
        -a * lam.ln() + EULER_GAMMA * a * s + k.ln() + b * lam * g - EULER_GAMMA - 1.0 - a * b.ln() + ln_gamma(a);
    KlGrad {
        value,
        d_q_shape: -EULER_GAMMA * a * s * s + s - b * lam * g * digamma(1.0 + s) * s * s,
        d_q_scale: -a / lam + b * g,
        d_p_shape: -lam.ln() + EULER_GAMMA * s - b.ln() + digamma(a),
    }
}

/// `KL(Gamma(a₁, b₁) ‖ Gamma(a₂, b₂))` in shape/rate form, with partials in
/// `a₁`, `b₁` (reported as `d_q_shape`, `d_q_scale`) and `a₂`.
pub fn kl_gamma_gamma_grad(q: GammaParams, p: GammaParams) -> KlGrad {
    let (a1, b1, a2, b2) = (q.shape, q.rate, p.shape, p.rate);
    let value = (a1 - a2) * digamma(a1) - ln_gamma(a1) + ln_gamma(a2) + a2 * (b1.ln() - b2.ln()) + a1 * (b2 - b1) / b1;
    KlGrad {
        value,
        d_q_shape: (a1 - a2) * trigamma(a1) + (b2 - b1) / b1,
        d_q_scale: a2 / b1 - a1 * b2 / (b1 * b1),
        d_p_shape: -digamma(a1) + digamma(a2) + b1.ln() - b2.ln(),
    }
}

pub fn kl_gamma_gamma(q: GammaParams, p: GammaParams) -> f64 {
    kl_gamma_gamma_grad(q, p).value
}

/// ψ'(x) for x > 0: upward recurrence to x ≥ 8 then the asymptotic series.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 8.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let z = 1.0 / (x * x);
    // 1/x + 1/(2x²) + Σ B_{2j}/x^{2j+1}
    let tail = z * (1.0 / 6.0 - z * (1.0 / 30.0 - z * (1.0 / 42.0 - z * (1.0 / 30.0 - z * 5.0 / 66.0))));
    acc + 1.0 / x + 0.5 * z + tail / x
}

/// Result of fitting a Weibull to a gamma by minimizing their KL divergence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeibullFit {
    pub params: WeibullParams,
    pub kl: f64,
    pub iterations: usize,
}

const FIT_MAX_ITER: usize = 500;
const FIT_TOL: f64 = 1e-8;

/// Minimizes `KL(Weibull ‖ p)` over `(ln k, ln λ)` with damped Newton steps,
/// starting from `k = √α` and the mean-matched scale.
pub fn weibull_fit_to_gamma(p: GammaParams) -> Result<WeibullFit> {
    let (a, b) = (p.shape, p.rate);
    let objective = |u: f64, w: f64| kl_weibull_gamma(WeibullParams { shape: u.exp(), scale: w.exp() }, p);
    let mut u = 0.5 * a.ln();
    let mut w = (a / (b * gamma(1.0 + (-u).exp()))).ln();
    let mut f = objective(u, w);
    let mut grad_norm = f64::INFINITY;

    for it in 0..FIT_MAX_ITER {
        let s = (-u).exp();
        let lam = w.exp();
        let g = gamma(1.0 + s);
        let psi = digamma(1.0 + s);
        let psi1 = trigamma(1.0 + s);
        // d/du and d/du² of G(u) = Γ(1 + e^{−u})
        let g_u = -g * psi * s;
        let g_uu = g * s * (psi * psi * s + psi1 * s + psi);
        let gu = -EULER_GAMMA * a * s + 1.0 + b * lam * g_u;
        let gw = -a + b * lam * g;
        grad_norm = gu.hypot(gw);
        if grad_norm < FIT_TOL {
            return Ok(WeibullFit {
                params: WeibullParams { shape: u.exp(), scale: lam },
                kl: f.max(0.0),
                iterations: it,
            });
        }
        let huu = EULER_GAMMA * a * s + b * lam * g_uu;
        let hww = b * lam * g;
        let huw = b * lam * g_u;
        let det = huu * hww - huw * huw;
        let (mut du, mut dw) = if huu > 0.0 && det > 0.0 {
            (-(hww * gu - huw * gw) / det, -(huu * gw - huw * gu) / det)
        } else {
            (-gu, -gw)
        };
        // Keep steps in log space moderate, then backtrack on the objective.
        let len = du.hypot(dw);
        if len < 1e-12 && grad_norm < 1e-6 {
            return Ok(WeibullFit {
                params: WeibullParams { shape: u.exp(), scale: lam },
                kl: f.max(0.0),
                iterations: it,
            });
        }
        if len > 1.0 {
            du /= len;
            dw /= len;
        }
        let mut t = 1.0;
        loop {
            let (nu, nw) = (u + t * du, w + t * dw);
            let nf = objective(nu, nw);
            if nf.is_finite() && nf <= f + 1e-4 * t * (gu * du + gw * dw) {
                // Decreases below the rounding level of the objective terms
                // mean the optimum is resolved as far as f64 allows.
                let stalled = f - nf <= 1e-13 * (1.0 + f.abs() + a * w.abs());
                u = nu;
                w = nw;
                f = nf;
                if stalled && grad_norm < 1e-6 {
                    return Ok(WeibullFit {
                        params: WeibullParams { shape: u.exp(), scale: w.exp() },
                        kl: f.max(0.0),
                        iterations: it + 1,
                    });
                }
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                // No decrease possible at working precision.
                return if grad_norm < 1e-6 {
                    Ok(WeibullFit {
                        params: WeibullParams { shape: u.exp(), scale: w.exp() },
                        kl: f.max(0.0),
                        iterations: it,
                    })
                } else {
                    Err(Error::NoConvergence { iterations: it, grad_norm })
                };
            }
        }
    }
    Err(Error::NoConvergence { iterations: FIT_MAX_ITER, grad_norm })
}

/// Accepted proposal noise and boost uniforms of one gamma draw; replaying a
/// trace through [`gamma_from_trace`] reproduces the draw as a smooth
/// function of the gamma parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaTrace {
    pub eps: f64,
    pub uniforms: Vec<f64>,
    /// Rejected proposals before acceptance.
    pub rejections: u32,
}

impl GammaTrace {
    pub fn boost(&self) -> usize {
        self.uniforms.len()
    }
}

/// Shape boost making the boosted shape at least 1 with headroom.
pub fn default_boost(shape: f64) -> usize {
    let b = (1.0 - shape).ceil() + 4.0;
    if b > 0.0 {
        b as usize
    } else {
        0
    }
}

/// Marsaglia–Tsang draw of Gamma(α + B, 1), reduced to Gamma(α, β) through
/// `B` uniforms: `z = β⁻¹ z̃ ∏ uᵢ^{1/(α+i−1)}`.
pub fn gamma_sample_mt<R: Rng + ?Sized>(p: GammaParams, boost: usize, rng: &mut R) -> Result<(f64, GammaTrace)> {
    let boosted = p.shape + boost as f64;
    if boosted <= 1.0 / 3.0 {
        return Err(invalid(format!("boosted shape {boosted} must exceed 1/3")));
    }
    let d = boosted - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    let mut rejections = 0;
    let eps = loop {
        let e: f64 = StandardNormal.sample(rng);
        let t = 1.0 + c * e;
        if t > 0.0 {
            let v = t * t * t;
            let u: f64 = 1.0 - rng.random::<f64>();
            if u.ln() < 0.5 * e * e + d - d * v + d * v.ln() {
                break e;
            }
        }
        rejections += 1;
    };
    let uniforms = (0..boost).map(|_| 1.0 - rng.random::<f64>()).collect();
    let trace = GammaTrace { eps, uniforms, rejections };
    Ok((gamma_from_trace(p, &trace).value, trace))
}

/// Deterministic map from a recorded trace to the gamma draw; partials with
/// respect to the shape (`d_shape`) and the rate (`d_scale`).
pub fn gamma_from_trace(p: GammaParams, trace: &GammaTrace) -> ReparamGrad {
    let (a, b) = (p.shape, p.rate);
    let d = a + trace.boost() as f64 - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    let t = 1.0 + c * trace.eps;
    let v = t * t * t;
    let z_tilde = d * v;
    let dz_tilde = v - 1.5 * c * trace.eps * t * t;
    let mut log_boost = 0.0;
    let mut dlog_boost = 0.0;
    for (i, &u) in trace.uniforms.iter().enumerate() {
        let den = a + i as f64;
        log_boost += u.ln() / den;
        dlog_boost -= u.ln() / (den * den);
    }
    let z = z_tilde / b * log_boost.exp();
    ReparamGrad { value: z, d_shape: z * (dz_tilde / z_tilde + dlog_boost), d_scale: -z / b }
}

/// `x ln(rate) − rate − ln Γ(x+1)`; `−∞` when the rate is zero but `x > 0`.
pub fn poisson_logpmf(x: u64, rate: f64) -> f64 {
    if rate == 0.0 {
        return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let xf = x as f64;
    let lead = if x == 0 { 0.0 } else { xf * rate.ln() };
    lead - rate - ln_gamma(xf + 1.0)
}

/// Chinese restaurant table count: `Σ_{i=1}^{m} Bernoulli(r / (r + i − 1))`.
pub fn crt_sample<R: Rng + ?Sized>(m: u64, r: f64, rng: &mut R) -> u64 {
    let mut tables = 0;
    for i in 0..m {
        if rng.random::<f64>() * (r + i as f64) < r {
            tables += 1;
        }
    }
    tables
}

/// Multinomial(total, weights / Σ weights) by sequential conditional binomials.
pub fn multinomial_allocate<R: Rng + ?Sized>(total: u64, weights: &[f64], rng: &mut R) -> Result<Vec<u64>> {
    let mut out = vec![0; weights.len()];
    multinomial_into(total, weights, rng, &mut out)?;
    Ok(out)
}

pub(crate) fn multinomial_into<R: Rng + ?Sized>(
    total: u64,
    weights: &[f64],
    rng: &mut R,
    out: &mut [u64],
) -> Result<()> {
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(invalid("multinomial weights must be finite and nonnegative"));
    }
    out.iter_mut().for_each(|o| *o = 0);
    if total == 0 {
        return Ok(());
    }
    let mut mass: f64 = weights.iter().sum();
    if !(mass > 0.0) {
        return Err(invalid("all multinomial weights are zero"));
    }
    let mut left = total;
    for (i, &w) in weights.iter().enumerate() {
        if left == 0 {
            break;
        }
        if w == 0.0 {
            continue;
        }
        let p = (w / mass).min(1.0);
        let k = if p >= 1.0 { left } else { binomial(rng, left, p) };
        out[i] = k;
        left -= k;
        mass -= w;
        if mass <= 0.0 && left > 0 {
            // Rounding exhausted the remaining mass; give the rest here.
            out[i] += left;
            left = 0;
        }
    }
    if left > 0 {
        let last = weights.iter().rposition(|&w| w > 0.0).unwrap();
        out[last] += left;
    }
    Ok(())
}

/// Draws from a symmetric Dirichlet in log space, so concentrations well
/// below one never produce an all-zero vector.
pub fn dirichlet_symmetric<R: Rng + ?Sized>(concentration: f64, dim: usize, rng: &mut R) -> Vec<f64> {
    if dim == 1 {
        return vec![1.0];
    }
    // ln G for G ~ Gamma(a): ln Gamma(a + 1) + ln(U) / a
    let boosted = Gamma::new(concentration + 1.0, 1.0).expect("valid gamma");
    let logs: Vec<f64> = (0..dim)
        .map(|_| {
            let g: f64 = boosted.sample(rng);
            let u: f64 = 1.0 - rng.random::<f64>();
            g.ln() + u.ln() / concentration
        })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    out
}

/// Gamma(shape, rate) draw; zero shape yields zero.
pub(crate) fn gamma_draw<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    if shape <= 0.0 {
        return 0.0;
    }
    Gamma::new(shape, 1.0 / rate).expect("valid gamma").sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn w(k: f64, l: f64) -> WeibullParams {
        WeibullParams::new(k, l).unwrap()
    }
    fn g(a: f64, b: f64) -> GammaParams {
        GammaParams::new(a, b).unwrap()
    }

    #[test]
    fn weibull_sample_forcing_values() {
        let e = 1.0 - (-1.0f64).exp();
        assert!((weibull_sample(w(1.0, 2.0), e).unwrap() - 2.0).abs() < 1e-12);
        assert!((weibull_sample(w(2.0, 1.0), e).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weibull_sample_inverts_cdf() {
        // k = 0.5, λ = 3, ε = 0.5 → 3 (ln 2)²; the CDF must return ε.
        let p = w(0.5, 3.0);
        let x = weibull_sample(p, 0.5).unwrap();
        assert!((x - 3.0 * 2f64.ln().powi(2)).abs() < 1e-12);
        assert!((x - 1.441_359_3).abs() < 1e-6);
        assert!((p.cdf(x) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn weibull_sample_rejects_boundary_noise() {
        assert!(weibull_sample(w(1.0, 1.0), 0.0).is_err());
        assert!(weibull_sample(w(1.0, 1.0), 1.0).is_err());
        assert!(WeibullParams::new(0.0, 1.0).is_err());
        assert!(GammaParams::new(1.0, -1.0).is_err());
    }

    #[test]
    fn weibull_partials_match_finite_differences() {
        for &(k, l, e) in &[(0.7, 1.3, 0.2), (2.5, 0.4, 0.9), (1.0, 5.0, 0.5)] {
            let gr = weibull_sample_grad(w(k, l), e).unwrap();
            let hk = 1e-6 * k;
            let hl = 1e-6 * l;
            let fk = (weibull_transform(k + hk, l, e) - weibull_transform(k - hk, l, e)) / (2.0 * hk);
            let fl = (weibull_transform(k, l + hl, e) - weibull_transform(k, l - hl, e)) / (2.0 * hl);
            assert!((gr.d_shape - fk).abs() <= 1e-5 * fk.abs().max(1e-8), "{} vs {}", gr.d_shape, fk);
            assert!((gr.d_scale - fl).abs() <= 1e-5 * fl.abs().max(1e-8));
        }
    }

    #[test]
    fn kl_known_values() {
        assert!(kl_weibull_gamma(w(1.0, 1.0), g(1.0, 1.0)).abs() < 1e-12);
        // Hand evaluation at k=2, λ=1, α=β=1: γ/2 + ln 2 + Γ(3/2) − γ − 1.
        let expect = EULER_GAMMA / 2.0 + 2f64.ln() + 0.886_226_925_452_758 - EULER_GAMMA - 1.0;
        let v = kl_weibull_gamma(w(2.0, 1.0), g(1.0, 1.0));
        assert!((v - expect).abs() < 1e-12);
        assert!((v - 0.290_766).abs() < 1e-6);
        for &beta in &[0.1, 1.0, 3.7, 20.0] {
            assert!(kl_weibull_gamma(w(1.0, 1.0 / beta), g(1.0, beta)).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_partials_match_finite_differences() {
        let cases = [(0.8, 1.2, 0.6, 1.0), (3.0, 0.3, 2.5, 2.0), (1.4, 2.0, 0.2, 0.7)];
        for &(k, l, a, b) in &cases {
            let gr = kl_weibull_gamma_grad(w(k, l), g(a, b));
            let f = |k: f64, l: f64, a: f64| kl_weibull_gamma(w(k, l), g(a, b));
            let h = 1e-6;
            let dk = (f(k + h * k, l, a) - f(k - h * k, l, a)) / (2.0 * h * k);
            let dl = (f(k, l + h * l, a) - f(k, l - h * l, a)) / (2.0 * h * l);
            let da = (f(k, l, a + h * a) - f(k, l, a - h * a)) / (2.0 * h * a);
            for (an, fd) in [(gr.d_q_shape, dk), (gr.d_q_scale, dl), (gr.d_p_shape, da)] {
                assert!((an - fd).abs() <= 1e-6 * fd.abs().max(1.0), "{an} vs {fd}");
            }
        }
    }

    #[test]
    fn gamma_gamma_kl_and_partials() {
        assert!(kl_gamma_gamma(g(2.0, 3.0), g(2.0, 3.0)).abs() < 1e-14);
        let (a1, b1, a2, b2) = (1.7, 0.8, 0.9, 1.3);
        let gr = kl_gamma_gamma_grad(g(a1, b1), g(a2, b2));
        assert!(gr.value > 0.0);
        let f = |a1: f64, b1: f64, a2: f64| kl_gamma_gamma(g(a1, b1), g(a2, b2));
        let h = 1e-6;
        let d1 = (f(a1 + h, b1, a2) - f(a1 - h, b1, a2)) / (2.0 * h);
        let d2 = (f(a1, b1 + h, a2) - f(a1, b1 - h, a2)) / (2.0 * h);
        let d3 = (f(a1, b1, a2 + h) - f(a1, b1, a2 - h)) / (2.0 * h);
        assert!((gr.d_q_shape - d1).abs() < 1e-7);
        assert!((gr.d_q_scale - d2).abs() < 1e-7);
        assert!((gr.d_p_shape - d3).abs() < 1e-7);
    }

    #[test]
    fn trigamma_reference_values() {
        // ψ'(1) = π²/6, ψ'(1/2) = π²/2
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((trigamma(1.0) - pi2 / 6.0).abs() < 1e-12);
        assert!((trigamma(0.5) - pi2 / 2.0).abs() < 1e-12);
        assert!((trigamma(30.0) - 0.033_895_060_357_739_9).abs() < 1e-13);
    }

    #[test]
    fn fit_recovers_exponential() {
        let fit = weibull_fit_to_gamma(g(1.0, 1.0)).unwrap();
        assert!((fit.params.shape - 1.0).abs() < 1e-6);
        assert!((fit.params.scale - 1.0).abs() < 1e-6);
        assert!(fit.kl < 1e-10);
    }

    #[test]
    fn fit_quality_degrades_for_tiny_shapes() {
        let mid = weibull_fit_to_gamma(g(5.0, 1.0)).unwrap();
        let tiny = weibull_fit_to_gamma(g(0.05, 1.0)).unwrap();
        assert!(mid.kl < tiny.kl, "{} vs {}", mid.kl, tiny.kl);
    }

    #[test]
    fn mt_proposal_at_zero_noise() {
        let trace = GammaTrace { eps: 0.0, uniforms: vec![], rejections: 0 };
        let z = gamma_from_trace(g(2.5, 1.0), &trace).value;
        assert!((z - (2.5 - 1.0 / 3.0)).abs() < 1e-14);
    }

    #[test]
    fn mt_rejects_small_boosted_shape() {
        let mut rng = rng_from(1);
        assert!(gamma_sample_mt(g(0.3, 1.0), 0, &mut rng).is_err());
        assert_eq!(default_boost(0.3), 5);
        assert_eq!(default_boost(10.0), 0);
    }

    #[test]
    fn mt_trace_partials_match_finite_differences() {
        let mut rng = rng_from(5);
        for &(a, b) in &[(0.4, 1.0), (2.0, 3.0), (7.5, 0.5)] {
            let (z, tr) = gamma_sample_mt(g(a, b), default_boost(a), &mut rng).unwrap();
            let gr = gamma_from_trace(g(a, b), &tr);
            assert_eq!(z, gr.value);
            let h = 1e-6;
            let f = |a: f64, b: f64| gamma_from_trace(g(a, b), &tr).value;
            let da = (f(a + h * a, b) - f(a - h * a, b)) / (2.0 * h * a);
            let db = (f(a, b + h * b) - f(a, b - h * b)) / (2.0 * h * b);
            assert!((gr.d_shape - da).abs() <= 1e-6 * da.abs().max(1e-6));
            assert!((gr.d_scale - db).abs() <= 1e-6 * db.abs().max(1e-6));
        }
    }

    #[test]
    fn mt_moments_boosted() {
        // Gamma(2, rate 3): mean 2/3, variance 2/9.
        let mut rng = rng_from(2024);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let (z, _) = gamma_sample_mt(g(2.0, 3.0), 4, &mut rng).unwrap();
            s += z;
            s2 += z * z;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((mean - 2.0 / 3.0).abs() < 0.003, "mean {mean}");
        assert!((var / (2.0 / 9.0) - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn poisson_logpmf_values() {
        assert!((poisson_logpmf(0, 2.5) + 2.5).abs() < 1e-15);
        assert!((poisson_logpmf(1, 1.0) + 1.0).abs() < 1e-15);
        assert!((poisson_logpmf(3, 2.5) + 1.542_887).abs() < 1e-6);
        assert_eq!(poisson_logpmf(0, 0.0), 0.0);
        assert_eq!(poisson_logpmf(2, 0.0), f64::NEG_INFINITY);
        let total: f64 = (0..100).map(|x| poisson_logpmf(x, 2.5).exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn crt_edge_cases_and_mean() {
        let mut rng = rng_from(3);
        assert_eq!(crt_sample(0, 2.0, &mut rng), 0);
        for _ in 0..100 {
            assert_eq!(crt_sample(1, 0.01, &mut rng), 1);
            let t = crt_sample(20, 0.5, &mut rng);
            assert!((1..=20).contains(&t));
        }
        let expect: f64 = (1..=50).map(|i| 2.0 / (2.0 + i as f64 - 1.0)).sum();
        let n = 100_000;
        let mean = (0..n).map(|_| crt_sample(50, 2.0, &mut rng) as f64).sum::<f64>() / n as f64;
        assert!((mean / expect - 1.0).abs() < 0.02, "{mean} vs {expect}");
    }

    #[test]
    fn multinomial_support_and_balance() {
        let mut rng = rng_from(4);
        assert_eq!(multinomial_allocate(7, &[0.0, 3.0, 0.0], &mut rng).unwrap(), vec![0, 7, 0]);
        assert_eq!(multinomial_allocate(0, &[1.0, 1.0], &mut rng).unwrap(), vec![0, 0]);
        assert!(multinomial_allocate(3, &[0.0, 0.0], &mut rng).is_err());
        let v = multinomial_allocate(1_000_000, &[1.0, 1.0], &mut rng).unwrap();
        assert_eq!(v[0] + v[1], 1_000_000);
        assert!((v[0] as i64 - 500_000).abs() <= 2500);
    }

    #[test]
    fn softplus_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(100.0) - 100.0).abs() <= 1e-12 * 100.0);
        let tiny = softplus(-100.0);
        assert!(tiny > 0.0);
        assert!((tiny / (-100f64).exp() - 1.0).abs() < 1e-12);
        let mut prev = softplus(-50.0);
        for i in -499..500 {
            let v = softplus(i as f64 / 10.0);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn dirichlet_tiny_concentration_is_valid() {
        let mut rng = rng_from(8);
        let d = dirichlet_symmetric(1.0 / 128.0, 2000, &mut rng);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(d.iter().all(|&x| x >= 0.0));
        assert_eq!(dirichlet_symmetric(0.1, 1, &mut rng), vec![1.0]);
    }
}
