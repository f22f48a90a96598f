//! Latent-count augmentation and the topic-layer-adaptive stochastic-gradient
//! Riemannian update of the simplex-constrained topic columns.

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayViewMut1, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::corpus::{DocView, SparseCounts};
use crate::distributions::{crt_sample, multinomial_into};
use crate::encoder::{DocLatents, LatentBatch};
use crate::error::{dims, Result};
use crate::model::{DldaModel, LayerSizes};
use crate::rng;

/// Entry floor applied by [`simplex_project`].
pub const SIMPLEX_FLOOR: f64 = 1e-30;

/// Augmented counts of one document. `cells[i]` holds the nonzero
/// `(row, column, count)` entries of layer `i+1`; `topic_totals[i][k]` is the
/// number of counts assigned to topic `k` of layer `i+1`; `tables[i]` (for
/// `i ≥ 1`) is the table count drawn for each topic of layer `i`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DocCounts {
    pub cells: Vec<Vec<(u32, u32, u64)>>,
    pub topic_totals: Vec<Vec<u64>>,
    pub tables: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCounts {
    pub docs: Vec<DocCounts>,
    /// Per layer, counts summed over the batch: `stats[i]` is `K_i × K_{i+1}`.
    pub stats: Vec<Array2<f64>>,
}

/// Splits one document's word counts across layer-1 topics, then carries
/// table counts upward through the Chinese restaurant table distribution.
pub fn sample_doc_counts<R: Rng + ?Sized>(
    model: &DldaModel,
    lat: &DocLatents,
    x: DocView,
    rng: &mut R,
) -> Result<DocCounts> {
    let depth = model.depth();
    if lat.layers.len() != depth {
        return Err(dims("latent depth does not match model"));
    }
    let mut out = DocCounts {
        cells: vec![Vec::new(); depth],
        topic_totals: Vec::with_capacity(depth),
        tables: vec![Vec::new(); depth],
    };
    let k1 = model.sizes.width(1);
    let theta1 = lat.theta(1);
    let mut weights = vec![0.0; k1];
    let mut alloc = vec![0u64; k1];
    let mut totals = vec![0u64; k1];
    for (v, c) in x.iter() {
        let row = model.phi[0].row(v);
        for k in 0..k1 {
            weights[k] = row[k] * theta1[k];
        }
        allocate(c as u64, &mut weights, rng, &mut alloc, 1)?;
        for (k, &n) in alloc.iter().enumerate() {
            if n > 0 {
                out.cells[0].push((v as u32, k as u32, n));
                totals[k] += n;
            }
        }
    }
    out.topic_totals.push(totals);

    for l in 2..=depth {
        let phi = &model.phi[l - 1];
        let theta = lat.theta(l);
        let prior = phi.dot(theta);
        let width = model.sizes.width(l);
        let mut weights = vec![0.0; width];
        let mut alloc = vec![0u64; width];
        let mut totals = vec![0u64; width];
        let below = &out.topic_totals[l - 2];
        let mut tables = vec![0u64; below.len()];
        for (k, &m) in below.iter().enumerate() {
            if m == 0 {
                continue;
            }
            let t = crt_sample(m, prior[k].max(f64::MIN_POSITIVE), rng);
            tables[k] = t;
            let row = phi.row(k);
            for j in 0..width {
                weights[j] = row[j] * theta[j];
            }
            allocate(t, &mut weights, rng, &mut alloc, l)?;
            for (j, &n) in alloc.iter().enumerate() {
                if n > 0 {
                    out.cells[l - 1].push((k as u32, j as u32, n));
                    totals[j] += n;
                }
            }
        }
        out.tables[l - 1] = tables;
        out.topic_totals.push(totals);
    }
    Ok(out)
}

fn allocate<R: Rng + ?Sized>(
    total: u64,
    weights: &mut [f64],
    rng: &mut R,
    out: &mut [u64],
    layer: usize,
) -> Result<()> {
    if total > 0 && !(weights.iter().sum::<f64>() > 0.0) {
        warn!("layer {layer}: all allocation weights vanished; allocating uniformly");
        weights.iter_mut().for_each(|w| *w = 1.0);
    }
    multinomial_into(total, weights, rng, out)
}

/// Latent counts for a batch; document `i` uses a generator derived from
/// `(seed, i)` so the result does not depend on thread scheduling.
pub fn sample_latent_counts(
    model: &DldaModel,
    latents: &LatentBatch,
    docs: &SparseCounts,
    batch: &[usize],
    seed: u64,
) -> Result<LatentCounts> {
    if latents.len() != batch.len() {
        return Err(dims(format!("{} latents for {} documents", latents.len(), batch.len())));
    }
    let per_doc: Vec<DocCounts> = batch
        .par_iter()
        .zip(latents.par_iter())
        .enumerate()
        .map(|(i, (&n, lat))| {
            let mut r = rng::rng_from(rng::derive_seed(seed, &[i as u64]));
            sample_doc_counts(model, lat, docs.doc(n), &mut r)
        })
        .collect::<Result<_>>()?;
    let mut stats: Vec<Array2<f64>> =
        (0..model.depth()).map(|i| Array2::zeros((model.sizes.width(i), model.sizes.width(i + 1)))).collect();
    for d in &per_doc {
        for (i, cells) in d.cells.iter().enumerate() {
            for &(r, c, n) in cells {
                stats[i][[r as usize, c as usize]] += n as f64;
            }
        }
    }
    Ok(LatentCounts { docs: per_doc, stats })
}

/// Clamps entries to [`SIMPLEX_FLOOR`] and renormalizes.
pub fn simplex_project(v: &mut [f64]) {
    for x in v.iter_mut() {
        if !(*x >= SIMPLEX_FLOOR) {
            *x = SIMPLEX_FLOOR;
        }
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}

/// Polynomially decaying step size `ε₀ (1 + t/τ)^(−decay)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub eps0: f64,
    pub tau: f64,
    pub decay: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule { eps0: 0.1, tau: 1000.0, decay: 0.7 }
    }
}

impl StepSchedule {
    pub fn at(&self, t: u64) -> f64 {
        self.eps0 * (1.0 + t as f64 / self.tau).powf(-self.decay)
    }
}

/// Exponent of the smoothing weight `κ_t = (t+1)^(−0.9)` in the FIM-scale recursion.
pub const FIM_SMOOTHING_EXPONENT: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct TlasgrState {
    /// `fim_scale[i][k]`: FIM scale `M_k` of topic `k` in layer `i+1`.
    pub fim_scale: Vec<Vec<f64>>,
    pub step: u64,
    pub schedule: StepSchedule,
    /// Corpus-to-batch size ratio.
    pub rho: f64,
    /// Dirichlet concentration per layer.
    pub eta: Vec<f64>,
}

impl TlasgrState {
    pub fn new(sizes: &LayerSizes, eta: Vec<f64>, rho: f64, schedule: StepSchedule) -> Self {
        TlasgrState {
            fim_scale: (1..=sizes.depth()).map(|l| vec![1.0; sizes.width(l)]).collect(),
            step: 0,
            schedule,
            rho,
            eta,
        }
    }

    pub fn step_size(&self) -> f64 {
        self.schedule.at(self.step)
    }

    /// `M_k ← (1−κ_t) M_k + κ_t (ρ z̃_{·k·} + η V_l)`, floored at 1.
    pub fn update_fim_scale(&mut self, layer: usize, k: usize, z_total: f64, rows: usize) -> f64 {
        let kappa = (self.step as f64 + 1.0).powf(-FIM_SMOOTHING_EXPONENT);
        let target = self.rho * z_total + self.eta[layer - 1] * rows as f64;
        let m = &mut self.fim_scale[layer - 1][k];
        *m = ((1.0 - kappa) * *m + kappa * target).max(1.0);
        *m
    }

    /// Updates every column of `phi` (layer `layer`, 1-based) from the batch
    /// statistics `z` of the same shape.
    pub fn update_layer<R: Rng + ?Sized>(&mut self, phi: &mut Array2<f64>, z: &Array2<f64>, layer: usize, rng: &mut R) {
        let eps = self.step_size();
        let rows = phi.nrows();
        for (k, (col, zcol)) in phi.axis_iter_mut(Axis(1)).zip(z.axis_iter(Axis(1))).enumerate() {
            let m = self.update_fim_scale(layer, k, zcol.sum(), rows);
            tlasgr_step(col, zcol, eps, m, self.rho, self.eta[layer - 1], Some(&mut *rng));
        }
    }

    pub fn advance(&mut self) {
        self.step += 1;
    }
}

/// One update of a topic column:
/// `[φ + (ε/M)((ρz̃ + η) − (ρΣz̃ + ηV)φ) + N(0, (2ε/M) diag φ)]∠`.
/// `noise = None` suppresses the Gaussian term.
pub fn tlasgr_update<R: Rng + ?Sized>(
    phi_k: ArrayView1<f64>,
    z: ArrayView1<f64>,
    step: f64,
    fim_scale: f64,
    rho: f64,
    eta: f64,
    noise: Option<&mut R>,
) -> Array1<f64> {
    let mut out = phi_k.to_owned();
    tlasgr_step(out.view_mut(), z, step, fim_scale, rho, eta, noise);
    out
}

fn tlasgr_step<R: Rng + ?Sized>(
    mut phi: ArrayViewMut1<f64>,
    z: ArrayView1<f64>,
    step: f64,
    fim_scale: f64,
    rho: f64,
    eta: f64,
    mut noise: Option<&mut R>,
) {
    let v = phi.len() as f64;
    let a = step / fim_scale;
    let total = rho * z.sum() + eta * v;
    for (p, &zv) in phi.iter_mut().zip(z.iter()) {
        let drift = (rho * zv + eta) - total * *p;
        let mut next = *p + a * drift;
        if let Some(r) = noise.as_deref_mut() {
            let g: f64 = StandardNormal.sample(r);
            next += (2.0 * a * p.max(0.0)).sqrt() * g;
        }
        *p = next;
    }
    project_view(phi);
}

/// [`simplex_project`] for a possibly strided view.
pub fn project_view(mut v: ArrayViewMut1<f64>) {
    v.mapv_inplace(|x| if x >= SIMPLEX_FLOOR { x } else { SIMPLEX_FLOOR });
    let s = v.sum();
    v.mapv_inplace(|x| x / s);
}
