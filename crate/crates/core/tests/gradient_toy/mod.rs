//! Two-layer toy problem for checking ELBO gradients against finite
//! differences.
#![allow(dead_code)]

use whai::corpus::SparseCounts;
use whai::elbo::{elbo_gradient, DocNoise};
use whai::encoder::{encode, DrawNoise, EncoderParams, EncoderVariant};
use whai::model::{DldaModel, LayerSizes};
use whai::rng::rng_from;

pub struct Toy {
    pub model: DldaModel,
    pub omega: EncoderParams,
    pub docs: SparseCounts,
    pub noise: Vec<DocNoise>,
}

pub fn toy(variant: EncoderVariant, seed: u64) -> Toy {
    let sizes = LayerSizes::new(vec![5, 3, 2]).unwrap();
    let model = DldaModel::init(sizes.clone(), &[0.8, 0.8], seed).unwrap();
    // Halved initial weights keep every shape well inside the region where the
    // ELBO is moderate in size, so finite differences stay meaningful.
    let mut omega = EncoderParams::init(&sizes, seed + 1);
    omega.scale(0.5);
    let docs = SparseCounts::from_dense(&[vec![3, 0, 1, 4, 2], vec![0, 6, 2, 0, 1]]).unwrap();
    let mut r = rng_from(seed + 2);
    let noise = (0..2)
        .map(|n| {
            let lat =
                encode(variant, &omega, &model.phi, docs.doc(n), &mut DrawNoise { rng: &mut r, boost: None }).unwrap();
            DocNoise::Recorded(lat.noise())
        })
        .collect();
    Toy { model, omega, docs, noise }
}

fn flat(p: &EncoderParams) -> Vec<f64> {
    p.tensors().into_iter().flat_map(|t| t.iter().copied()).collect()
}

fn with_flat(p: &EncoderParams, x: &[f64]) -> EncoderParams {
    let mut out = p.clone();
    let mut i = 0;
    for t in out.tensors_mut() {
        for v in t.iter_mut() {
            *v = x[i];
            i += 1;
        }
    }
    out
}

/// Largest relative discrepancy between the analytic and finite-difference
/// gradients, with magnitudes below `floor` treated as `floor`.
pub fn max_rel_error(variant: EncoderVariant, t: &Toy, floor: f64) -> (f64, usize) {
    let batch = [0, 1];
    let (grad, _, _) = elbo_gradient(variant, &t.omega, &t.model, &t.docs, &batch, &t.noise, None).unwrap();
    let x = flat(&t.omega);
    let f = |y: &[f64]| {
        let om = with_flat(&t.omega, y);
        elbo_gradient(variant, &om, &t.model, &t.docs, &batch, &t.noise, None).unwrap().1.total
    };
    let fd = crate::oracles::fd_gradient(f, &x, 1e-6);
    let g = flat(&grad);
    let mut worst = 0.0f64;
    for (a, b) in g.iter().zip(&fd) {
        let rel = (a - b).abs() / a.abs().max(b.abs()).max(floor);
        worst = worst.max(rel);
    }
    (worst, g.len())
}
