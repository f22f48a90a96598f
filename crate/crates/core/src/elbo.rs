//! Single-sample evidence lower bound: Poisson reconstruction minus the
//! analytic per-layer KL terms, and its exact gradient with respect to the
//! encoder parameters (reverse mode through the fixed-noise sampling path).

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::corpus::{DocView, SparseCounts};
use crate::distributions::{
    gamma_from_trace, kl_gamma_gamma_grad, kl_weibull_gamma_grad, sigmoid, weibull_transform_grad, GammaParams, KlGrad,
    WeibullParams,
};
use crate::encoder::{
    encode, DocLatents, DrawNoise, EncoderParams, EncoderVariant, LatentBatch, LayerNoise, ReplayNoise, SCALE_MIN,
    SHAPE_MAX, SHAPE_MIN, THETA_FLOOR,
};
use crate::error::{dims, Result};
use crate::model::DldaModel;
use crate::rng;

/// Documents per gradient-accumulation chunk. Chunks are reduced in a fixed
/// order, so results do not depend on the number of worker threads.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ElboBreakdown {
    pub recon: f64,
    pub kl_per_layer: Vec<f64>,
    pub total: f64,
}

impl ElboBreakdown {
    pub fn zero(depth: usize) -> Self {
        ElboBreakdown { recon: 0.0, kl_per_layer: vec![0.0; depth], total: 0.0 }
    }

    fn accumulate(&mut self, other: &ElboBreakdown) {
        self.recon += other.recon;
        for (a, b) in self.kl_per_layer.iter_mut().zip(&other.kl_per_layer) {
            *a += b;
        }
        self.total = self.recon - self.kl_per_layer.iter().sum::<f64>();
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = ElboBreakdown {
            recon: self.recon * s,
            kl_per_layer: self.kl_per_layer.iter().map(|k| k * s).collect(),
            total: 0.0,
        };
        out.total = out.recon - out.kl_per_layer.iter().sum::<f64>();
        out
    }
}

/// Noise for one document of a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum DocNoise {
    /// Draw fresh noise from a generator seeded with this value.
    Seed(u64),
    /// Replay recorded noise.
    Recorded(Vec<LayerNoise>),
}

/// Evaluates the ELBO of a batch given latents already drawn for it.
pub fn elbo_single_sample(
    variant: EncoderVariant,
    model: &DldaModel,
    docs: &SparseCounts,
    batch: &[usize],
    latents: &LatentBatch,
) -> Result<ElboBreakdown> {
    if latents.len() != batch.len() {
        return Err(dims(format!("{} latents for {} documents", latents.len(), batch.len())));
    }
    let colsum = model.phi[0].sum_axis(Axis(0));
    let mut total = ElboBreakdown::zero(model.depth());
    for (&n, lat) in batch.iter().zip(latents) {
        if lat.layers.len() != model.depth() {
            return Err(dims("latent depth does not match model"));
        }
        let b = doc_elbo(variant, model, docs.doc(n), lat, &colsum, None)?;
        total.accumulate(&b);
    }
    Ok(total)
}

/// Encodes the batch under the given noise and returns the gradient of the
/// summed ELBO with respect to every encoder parameter, the ELBO itself and
/// the sampled latents.
pub fn elbo_gradient(
    variant: EncoderVariant,
    omega: &EncoderParams,
    model: &DldaModel,
    docs: &SparseCounts,
    batch: &[usize],
    noise: &[DocNoise],
    boost: Option<usize>,
) -> Result<(EncoderParams, ElboBreakdown, LatentBatch)> {
    if noise.len() != batch.len() {
        return Err(dims(format!("{} noise records for {} documents", noise.len(), batch.len())));
    }
    omega.check_sizes(&model.sizes)?;
    if docs.vocab_size() != model.sizes.vocab_size() {
        return Err(dims("corpus vocabulary does not match model"));
    }
    let colsum = model.phi[0].sum_axis(Axis(0));
    let items: Vec<(usize, &DocNoise)> = batch.iter().copied().zip(noise).collect();
    let chunks: Vec<Result<(EncoderParams, ElboBreakdown, LatentBatch)>> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = EncoderParams::zeros(&model.sizes);
            let mut elbo = ElboBreakdown::zero(model.depth());
            let mut lats = Vec::with_capacity(chunk.len());
            for &(n, dn) in chunk {
                let x = docs.doc(n);
                let lat = match dn {
                    DocNoise::Seed(seed) => {
                        let mut r = rng::rng_from(*seed);
                        encode(variant, omega, &model.phi, x, &mut DrawNoise { rng: &mut r, boost })?
                    }
                    DocNoise::Recorded(rec) => encode(variant, omega, &model.phi, x, &mut ReplayNoise { noise: rec })?,
                };
                let b = doc_elbo(variant, model, x, &lat, &colsum, Some((omega, &mut grad)))?;
                elbo.accumulate(&b);
                lats.push(lat);
            }
            Ok((grad, elbo, lats))
        })
        .collect();

    let mut grad = EncoderParams::zeros(&model.sizes);
    let mut elbo = ElboBreakdown::zero(model.depth());
    let mut latents = Vec::with_capacity(batch.len());
    for c in chunks {
        let (g, e, l) = c?;
        grad.add_scaled(&g, 1.0);
        elbo.accumulate(&e);
        latents.extend(l);
    }
    Ok((grad, elbo, latents))
}

fn kl_term(variant: EncoderVariant, shape: f64, scale: f64, prior: GammaParams) -> KlGrad {
    if variant.uses_gamma() {
        kl_gamma_gamma_grad(GammaParams { shape, rate: scale }, prior)
    } else {
        kl_weibull_gamma_grad(WeibullParams { shape, scale }, prior)
    }
}

/// ELBO of one document; when `grad` is given, also accumulates
/// ∂ELBO/∂Ω into it.
fn doc_elbo(
    variant: EncoderVariant,
    model: &DldaModel,
    x: DocView,
    lat: &DocLatents,
    colsum: &Array1<f64>,
    grad: Option<(&EncoderParams, &mut EncoderParams)>,
) -> Result<ElboBreakdown> {
    let depth = model.depth();
    let phi1 = &model.phi[0];
    let theta1 = &lat.layers[0].theta;
    if theta1.len() != phi1.ncols() {
        return Err(dims("θ^(1) length does not match Φ^(1)"));
    }

    let mut recon = -colsum.dot(theta1);
    let mut rates = Vec::with_capacity(x.len());
    for (t, c) in x.iter() {
        let rate = phi1.row(t).dot(theta1);
        let cf = c as f64;
        recon += cf * rate.ln() - ln_gamma(cf + 1.0);
        rates.push(rate);
    }

    let mut kl_per_layer = vec![0.0; depth];
    let want_grad = grad.is_some();
    let mut g_theta: Vec<Array1<f64>> =
        if want_grad { lat.layers.iter().map(|l| Array1::zeros(l.theta.len())).collect() } else { Vec::new() };
    if want_grad {
        let g = &mut g_theta[0];
        g.scaled_add(-1.0, colsum);
        for ((t, c), rate) in x.iter().zip(&rates) {
            g.scaled_add(c as f64 / rate, &phi1.row(t));
        }
    }

    // Per-layer gradients with respect to the raw heads.
    let mut g_pre_k: Vec<Array1<f64>> = Vec::new();
    let mut g_pre_l: Vec<Array1<f64>> = Vec::new();

    for l in 1..=depth {
        let lay = &lat.layers[l - 1];
        let width = lay.theta.len();
        let prior_shape: Array1<f64> = if l < depth { model.phi[l].dot(&lat.layers[l].theta) } else { model.r.clone() };
        let rate = model.c[l - 1];
        let mut g_prior = Array1::<f64>::zeros(if want_grad { width } else { 0 });
        let mut gk = Array1::<f64>::zeros(if want_grad { width } else { 0 });
        let mut gl = Array1::<f64>::zeros(if want_grad { width } else { 0 });
        for j in 0..width {
            let shape = lay.shape[j];
            let scale = lay.lambda[j].max(SCALE_MIN);
            let kg = kl_term(variant, shape, scale, GammaParams { shape: prior_shape[j], rate });
            kl_per_layer[l - 1] += kg.value;
            if !want_grad {
                continue;
            }
            let sample = match &lay.noise {
                LayerNoise::Uniform(eps) => weibull_transform_grad(shape, scale, eps[j]),
                LayerNoise::Gamma(tr) => gamma_from_trace(GammaParams { shape, rate: scale }, &tr[j]),
            };
            let (ds, dl) = if sample.value > THETA_FLOOR { (sample.d_shape, sample.d_scale) } else { (0.0, 0.0) };
            let up = g_theta[l - 1][j];
            let g_shape = up * ds - kg.d_q_shape;
            let g_scale = if lay.lambda[j] > SCALE_MIN { up * dl - kg.d_q_scale } else { 0.0 };
            g_prior[j] = if l < depth { -kg.d_p_shape } else { 0.0 };

            let k_raw = lay.k_raw[j];
            let k_clip = k_raw.clamp(SHAPE_MIN, SHAPE_MAX);
            let mut g_kclip = g_shape;
            if variant.downward() && l < depth {
                let unclipped = k_clip + prior_shape[j];
                let pass = if unclipped > SHAPE_MIN && unclipped < SHAPE_MAX { g_shape } else { 0.0 };
                g_prior[j] += pass;
                g_kclip = pass;
            }
            let g_kraw = if k_raw > SHAPE_MIN && k_raw < SHAPE_MAX { g_kclip } else { 0.0 };
            gk[j] = g_kraw * sigmoid(lay.pre_k[j]);
            gl[j] = g_scale * sigmoid(lay.pre_lambda[j]);
        }
        if want_grad {
            if l < depth {
                let back = model.phi[l].t().dot(&g_prior);
                g_theta[l] += &back;
            }
            g_pre_k.push(gk);
            g_pre_l.push(gl);
        }
    }

    if let Some((omega, acc)) = grad {
        let mut g_h: Vec<Array1<f64>> = Vec::with_capacity(depth);
        for i in 0..depth {
            let p = &omega.layers[i];
            let a = &mut acc.layers[i];
            let h = &lat.layers[i].h;
            outer_add(&mut a.w1, &g_pre_k[i], h);
            a.b1 += &g_pre_k[i];
            outer_add(&mut a.w2, &g_pre_l[i], h);
            a.b2 += &g_pre_l[i];
            g_h.push(p.w1.t().dot(&g_pre_k[i]) + p.w2.t().dot(&g_pre_l[i]));
        }
        for i in (0..depth).rev() {
            let lay = &lat.layers[i];
            let g_pre_h = &g_h[i] * &lay.pre_h.mapv(sigmoid);
            let a = &mut acc.layers[i];
            a.b3 += &g_pre_h;
            if i == 0 {
                for (t, c) in x.iter() {
                    let h0 = (c as f64).ln_1p();
                    a.w3.column_mut(t).scaled_add(h0, &g_pre_h);
                }
            } else {
                outer_add(&mut a.w3, &g_pre_h, &lat.layers[i - 1].h);
                let back = omega.layers[i].w3.t().dot(&g_pre_h);
                g_h[i - 1] += &back;
            }
        }
    }

    let total = recon - kl_per_layer.iter().sum::<f64>();
    Ok(ElboBreakdown { recon, kl_per_layer, total })
}

fn outer_add(m: &mut Array2<f64>, col: &Array1<f64>, row: &Array1<f64>) {
    for (i, mut r) in m.axis_iter_mut(Axis(0)).enumerate() {
        let c = col[i];
        if c != 0.0 {
            r.scaled_add(c, row);
        }
    }
}
