//! Weibull upward–downward variational encoder and its gamma / independent
//! variants.
//!
//! Upward: `h⁰ = ln(1+x)`, `hˡ = softplus(W3ˡ hˡ⁻¹ + b3ˡ)`.
//! Heads: `kˡ = softplus(W1ˡ hˡ + b1ˡ)`, `λˡ = softplus(W2ˡ hˡ + b2ˡ)`.
//! Downward, top layer first: `θˡ ~ Weibull(kˡ + Φˡ⁺¹θˡ⁺¹, λˡ)`.

use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::gamma::gamma;

use crate::corpus::{DocView, SparseCounts};
use crate::distributions::{
    clamp_uniform, default_boost, gamma_from_trace, gamma_sample_mt, softplus, weibull_transform, GammaParams,
    GammaTrace,
};
use crate::error::{dims, invalid, Error, Result};
use crate::model::{DldaModel, LayerSizes};
use crate::rng;

/// Clip range for the raw shape head and the combined Weibull/gamma shape.
/// Below about 0.006 Γ(1+1/k) overflows; the floor keeps the KL term and its
/// squared gradient comfortably finite.
pub const SHAPE_MIN: f64 = 0.1;
pub const SHAPE_MAX: f64 = 1e3;
/// Floor for the scale head.
pub const SCALE_MIN: f64 = 1e-10;
/// Floor for sampled latent values.
pub const THETA_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncoderVariant {
    Whai,
    WhaiIndependent,
    Ghai,
    GhaiIndependent,
}

impl EncoderVariant {
    pub const ALL: [EncoderVariant; 4] =
        [EncoderVariant::Whai, EncoderVariant::WhaiIndependent, EncoderVariant::Ghai, EncoderVariant::GhaiIndependent];

    pub fn uses_gamma(self) -> bool {
        matches!(self, EncoderVariant::Ghai | EncoderVariant::GhaiIndependent)
    }

    /// Whether the sampled layer above feeds the shape of the layer below.
    pub fn downward(self) -> bool {
        matches!(self, EncoderVariant::Whai | EncoderVariant::Ghai)
    }

    pub fn name(self) -> &'static str {
        match self {
            EncoderVariant::Whai => "whai",
            EncoderVariant::WhaiIndependent => "whai-independent",
            EncoderVariant::Ghai => "ghai",
            EncoderVariant::GhaiIndependent => "ghai-independent",
        }
    }
}

impl FromStr for EncoderVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EncoderVariant::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| invalid(format!("unknown encoder variant {s:?}")))
    }
}

impl std::fmt::Display for EncoderVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters of one encoder layer; `w3` maps layer `l−1` (or the
/// vocabulary) to layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

impl EncoderLayer {
    fn zeros(below: usize, width: usize) -> Self {
        EncoderLayer {
            w1: Array2::zeros((width, width)),
            b1: Array1::zeros(width),
            w2: Array2::zeros((width, width)),
            b2: Array1::zeros(width),
            w3: Array2::zeros((width, below)),
            b3: Array1::zeros(width),
        }
    }

    pub fn width(&self) -> usize {
        self.b1.len()
    }
}

/// All encoder weights, `layers[i]` for hidden layer `i+1`. Also used as the
/// container for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<EncoderLayer>,
}

impl EncoderParams {
    pub fn zeros(sizes: &LayerSizes) -> Self {
        EncoderParams {
            layers: (1..=sizes.depth()).map(|l| EncoderLayer::zeros(sizes.width(l - 1), sizes.width(l))).collect(),
        }
    }

    /// Zero-mean normal weights with standard deviation `1/√fan_in`; shape
    /// and scale biases start where the softplus heads output 1.
    pub fn init(sizes: &LayerSizes, seed: u64) -> Self {
        let mut rng = rng::rng_from(seed);
        let unit = (std::f64::consts::E - 1.0).ln();
        let mut p = EncoderParams::zeros(sizes);
        for layer in &mut p.layers {
            let (width, below) = layer.w3.dim();
            fill_normal(&mut layer.w1, 1.0 / (width as f64).sqrt(), &mut rng);
            fill_normal(&mut layer.w2, 1.0 / (width as f64).sqrt(), &mut rng);
            fill_normal(&mut layer.w3, 1.0 / (below as f64).sqrt(), &mut rng);
            layer.b1.fill(unit);
            layer.b2.fill(unit);
        }
        p
    }

    pub fn check_sizes(&self, sizes: &LayerSizes) -> Result<()> {
        if self.layers.len() != sizes.depth() {
            return Err(dims(format!("encoder has {} layers, model {}", self.layers.len(), sizes.depth())));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let (w, below) = (sizes.width(i + 1), sizes.width(i));
            if layer.w1.dim() != (w, w)
                || layer.w2.dim() != (w, w)
                || layer.w3.dim() != (w, below)
                || layer.b1.len() != w
                || layer.b2.len() != w
                || layer.b3.len() != w
            {
                return Err(dims(format!("encoder layer {} does not match sizes {sizes}", i + 1)));
            }
        }
        Ok(())
    }

    /// Flat views of every tensor in a fixed order (per layer: W1 b1 W2 b2 W3 b3).
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.w1.as_slice().unwrap(),
                    l.b1.as_slice().unwrap(),
                    l.w2.as_slice().unwrap(),
                    l.b2.as_slice().unwrap(),
                    l.w3.as_slice().unwrap(),
                    l.b3.as_slice().unwrap(),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.w1.as_slice_mut().unwrap(),
                    l.b1.as_slice_mut().unwrap(),
                    l.w2.as_slice_mut().unwrap(),
                    l.b2.as_slice_mut().unwrap(),
                    l.w3.as_slice_mut().unwrap(),
                    l.b3.as_slice_mut().unwrap(),
                ]
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &EncoderParams, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }
}

fn fill_normal<R: Rng + ?Sized>(m: &mut Array2<f64>, sd: f64, rng: &mut R) {
    let normal = Normal::new(0.0, sd).expect("positive sd");
    m.iter_mut().for_each(|x| *x = normal.sample(rng));
}

/// Noise that produced one layer's sample.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerNoise {
    /// Clamped uniforms, one per unit (Weibull variants).
    Uniform(Array1<f64>),
    /// Accepted rejection-sampler traces, one per unit (gamma variants).
    Gamma(Vec<GammaTrace>),
}

/// Supplies the randomness consumed by [`downward_sample`].
pub trait NoiseSource {
    fn uniform(&mut self, layer: usize, unit: usize) -> f64;
    fn gamma_trace(&mut self, layer: usize, unit: usize, target: GammaParams) -> GammaTrace;
}

/// Draws fresh noise from an RNG.
pub struct DrawNoise<'a, R: Rng> {
    pub rng: &'a mut R,
    /// Fixed shape boost for the gamma sampler; `None` uses [`default_boost`].
    pub boost: Option<usize>,
}

impl<'a, R: Rng> NoiseSource for DrawNoise<'a, R> {
    fn uniform(&mut self, _layer: usize, _unit: usize) -> f64 {
        self.rng.random::<f64>()
    }

    fn gamma_trace(&mut self, _layer: usize, _unit: usize, target: GammaParams) -> GammaTrace {
        let b = match self.boost {
            Some(b) if target.shape + b as f64 > 1.0 / 3.0 => b,
            _ => default_boost(target.shape),
        };
        gamma_sample_mt(target, b, self.rng).expect("boosted shape above 1/3").1
    }
}

/// Replays previously recorded noise; `noise[i]` belongs to layer `i+1`.
pub struct ReplayNoise<'a> {
    pub noise: &'a [LayerNoise],
}

impl<'a> NoiseSource for ReplayNoise<'a> {
    fn uniform(&mut self, layer: usize, unit: usize) -> f64 {
        match &self.noise[layer - 1] {
            LayerNoise::Uniform(e) => e[unit],
            LayerNoise::Gamma(_) => panic!("replaying gamma noise as uniform"),
        }
    }

    fn gamma_trace(&mut self, layer: usize, unit: usize, _target: GammaParams) -> GammaTrace {
        match &self.noise[layer - 1] {
            LayerNoise::Gamma(t) => t[unit].clone(),
            LayerNoise::Uniform(_) => panic!("replaying uniform noise as gamma"),
        }
    }
}

/// Everything computed for one layer of one document.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerLatents {
    pub pre_h: Array1<f64>,
    pub h: Array1<f64>,
    pub pre_k: Array1<f64>,
    pub k_raw: Array1<f64>,
    pub pre_lambda: Array1<f64>,
    pub lambda: Array1<f64>,
    /// Shape actually used for sampling, after clipping.
    pub shape: Array1<f64>,
    pub theta: Array1<f64>,
    pub noise: LayerNoise,
}

/// Per-layer latents of one document; `layers[i]` is layer `i+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DocLatents {
    pub layers: Vec<LayerLatents>,
}

impl DocLatents {
    pub fn theta(&self, layer: usize) -> &Array1<f64> {
        &self.layers[layer - 1].theta
    }

    pub fn noise(&self) -> Vec<LayerNoise> {
        self.layers.iter().map(|l| l.noise.clone()).collect()
    }
}

pub type LatentBatch = Vec<DocLatents>;

/// Deterministic part of the encoder for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Upward {
    pub pre_h: Array1<f64>,
    pub h: Array1<f64>,
}

/// `h⁰ = ln(1+x)` followed by the softplus-affine chain; returns layers 1..L.
pub fn upward_pass(omega: &EncoderParams, x: DocView) -> Result<Vec<Upward>> {
    let first = omega.layers.first().ok_or_else(|| dims("encoder has no layers"))?;
    let v = first.w3.ncols();
    if let Some(&t) = x.terms.last() {
        if t as usize >= v {
            return Err(dims(format!("term index {t} exceeds encoder input size {v}")));
        }
    }
    let mut out: Vec<Upward> = Vec::with_capacity(omega.layers.len());
    for (i, layer) in omega.layers.iter().enumerate() {
        let mut pre = layer.b3.clone();
        if i == 0 {
            for (t, c) in x.iter() {
                let h0 = (c as f64).ln_1p();
                pre.scaled_add(h0, &layer.w3.column(t));
            }
        } else {
            pre += &layer.w3.dot(&out[i - 1].h);
        }
        let h = pre.mapv(softplus);
        out.push(Upward { pre_h: pre, h });
    }
    Ok(out)
}

/// `(pre_k, k, pre_λ, λ)`: the shape and scale heads with their pre-activations.
pub type Heads = (Array1<f64>, Array1<f64>, Array1<f64>, Array1<f64>);

/// Raw shape and scale heads of one layer, with their pre-activations.
pub fn heads(layer: &EncoderLayer, h: &Array1<f64>) -> Result<Heads> {
    if h.len() != layer.w1.ncols() {
        return Err(dims(format!("hidden vector length {} vs head input {}", h.len(), layer.w1.ncols())));
    }
    let pre_k = layer.w1.dot(h) + &layer.b1;
    let pre_l = layer.w2.dot(h) + &layer.b2;
    let k = pre_k.mapv(softplus);
    let l = pre_l.mapv(softplus);
    Ok((pre_k, k, pre_l, l))
}

/// Top-down sampling of θ^(L), …, θ^(1) given the upward states.
/// `phi[i]` is Φ^(i+1); only Φ^(2..L) are read.
pub fn downward_sample<N: NoiseSource>(
    variant: EncoderVariant,
    omega: &EncoderParams,
    phi: &[Array2<f64>],
    upward: &[Upward],
    noise: &mut N,
) -> Result<DocLatents> {
    let depth = omega.layers.len();
    if upward.len() != depth || phi.len() != depth {
        return Err(dims("encoder, topic matrices and upward states disagree on depth"));
    }
    let mut layers: Vec<Option<LayerLatents>> = vec![None; depth];
    for l in (1..=depth).rev() {
        let params = &omega.layers[l - 1];
        let up = &upward[l - 1];
        let (pre_k, k_raw, pre_lambda, lambda) = heads(params, &up.h)?;
        let mut shape = k_raw.mapv(|k| k.clamp(SHAPE_MIN, SHAPE_MAX));
        if variant.downward() && l < depth {
            let above = &layers[l].as_ref().unwrap().theta;
            shape += &phi[l].dot(above);
            shape.mapv_inplace(|s| s.clamp(SHAPE_MIN, SHAPE_MAX));
        }
        let scale = lambda.mapv(|x| x.max(SCALE_MIN));
        let width = shape.len();
        let (theta, layer_noise) = if variant.uses_gamma() {
            let mut traces = Vec::with_capacity(width);
            let theta = Array1::from_shape_fn(width, |j| {
                let target = GammaParams { shape: shape[j], rate: scale[j] };
                let tr = noise.gamma_trace(l, j, target);
                let z = gamma_from_trace(target, &tr).value;
                traces.push(tr);
                z.max(THETA_FLOOR)
            });
            (theta, LayerNoise::Gamma(traces))
        } else {
            let eps = Array1::from_shape_fn(width, |j| clamp_uniform(noise.uniform(l, j)));
            let theta =
                Array1::from_shape_fn(width, |j| weibull_transform(shape[j], scale[j], eps[j]).max(THETA_FLOOR));
            (theta, LayerNoise::Uniform(eps))
        };
        layers[l - 1] = Some(LayerLatents {
            pre_h: up.pre_h.clone(),
            h: up.h.clone(),
            pre_k,
            k_raw,
            pre_lambda,
            lambda,
            shape,
            theta,
            noise: layer_noise,
        });
    }
    Ok(DocLatents { layers: layers.into_iter().map(Option::unwrap).collect() })
}

/// Upward pass, heads and downward sampling for one document.
pub fn encode<N: NoiseSource>(
    variant: EncoderVariant,
    omega: &EncoderParams,
    phi: &[Array2<f64>],
    x: DocView,
    noise: &mut N,
) -> Result<DocLatents> {
    let up = upward_pass(omega, x)?;
    downward_sample(variant, omega, phi, &up, noise)
}

/// Deterministic encoding: every layer uses the mean of its variational
/// distribution, propagated top-down. Returns θ^(1..L).
pub fn encode_mean(
    variant: EncoderVariant,
    omega: &EncoderParams,
    phi: &[Array2<f64>],
    x: DocView,
) -> Result<Vec<Array1<f64>>> {
    let up = upward_pass(omega, x)?;
    let depth = omega.layers.len();
    if phi.len() != depth {
        return Err(dims("topic matrices and encoder disagree on depth"));
    }
    let mut theta: Vec<Array1<f64>> = vec![Array1::zeros(0); depth];
    for l in (1..=depth).rev() {
        let (_, k_raw, _, lambda) = heads(&omega.layers[l - 1], &up[l - 1].h)?;
        let mut shape = k_raw.mapv(|k| k.clamp(SHAPE_MIN, SHAPE_MAX));
        if variant.downward() && l < depth {
            shape += &phi[l].dot(&theta[l]);
            shape.mapv_inplace(|s| s.clamp(SHAPE_MIN, SHAPE_MAX));
        }
        theta[l - 1] = Array1::from_shape_fn(shape.len(), |j| {
            let scale = lambda[j].max(SCALE_MIN);
            let m = if variant.uses_gamma() { shape[j] / scale } else { scale * gamma(1.0 + 1.0 / shape[j]) };
            m.max(THETA_FLOOR)
        });
    }
    Ok(theta)
}

/// Mean wall-clock seconds per document for a full single-sample encoding.
pub fn encode_time_benchmark(
    variant: EncoderVariant,
    omega: &EncoderParams,
    model: &DldaModel,
    docs: &SparseCounts,
    seed: u64,
) -> Result<f64> {
    if docs.num_docs() == 0 {
        return Err(invalid("no documents to time"));
    }
    omega.check_sizes(&model.sizes)?;
    let mut rng = rng::rng_from(seed);
    let mut noise = DrawNoise { rng: &mut rng, boost: None };
    let start = Instant::now();
    let mut sink = 0.0;
    for doc in docs.docs() {
        let lat = encode(variant, omega, &model.phi, doc, &mut noise)?;
        sink += lat.layers[0].theta[0];
    }
    let secs = start.elapsed().as_secs_f64();
    std::hint::black_box(sink);
    Ok(secs / docs.num_docs() as f64)
}
