//! Held-out per-word perplexity over collected posterior samples, the
//! perplexity-versus-time curve and topic-hierarchy export.

use std::io::Write;
use std::sync::Arc;

use log::warn;
use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{HeldoutSplit, SparseCounts, Vocabulary};
use crate::encoder::{encode, encode_mean, DrawNoise, EncoderParams, EncoderVariant};
use crate::error::{dims, invalid, Error, Result};
use crate::model::DldaModel;
use crate::rng;

/// Floor applied to a held-out word's predictive probability before the log.
pub const PROB_FLOOR: f64 = 1e-30;

/// Topic matrices of one posterior sample plus the encoder used to infer
/// its document representations.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSample {
    pub iteration: u64,
    pub phi: Vec<Array2<f64>>,
    pub omega: Arc<EncoderParams>,
}

/// How θ^(1) is obtained from the encoder at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaMode {
    /// Variational means propagated top-down.
    Mean,
    /// One random draw per document, seeded per (seed, sample, document).
    Stochastic { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub perplexity: f64,
    pub heldout_tokens: u64,
    pub samples: usize,
    /// Held-out terms whose predictive probability hit [`PROB_FLOOR`].
    pub guarded_terms: u64,
}

/// Running sums of the predictive mass `Σ_s Σ_k φ_vk θ_kn` for every held-out
/// (document, word) cell and of its per-document normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveAccumulator {
    heldout: SparseCounts,
    mass: Vec<Vec<f64>>,
    norm: Vec<f64>,
    samples: usize,
}

impl PredictiveAccumulator {
    pub fn new(heldout: &SparseCounts) -> Self {
        PredictiveAccumulator {
            mass: heldout.docs().map(|d| vec![0.0; d.len()]).collect(),
            norm: vec![0.0; heldout.num_docs()],
            heldout: heldout.clone(),
            samples: 0,
        }
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Adds one sample given Φ^(1) and θ^(1) for every document (`thetas[n]`).
    pub fn add_theta(&mut self, phi1: &Array2<f64>, thetas: &[Array1<f64>]) -> Result<()> {
        if thetas.len() != self.heldout.num_docs() {
            return Err(dims(format!("{} θ vectors for {} documents", thetas.len(), self.heldout.num_docs())));
        }
        if phi1.nrows() != self.heldout.vocab_size() {
            return Err(dims("Φ^(1) rows do not match the vocabulary"));
        }
        let colsum = phi1.sum_axis(Axis(0));
        let heldout = &self.heldout;
        self.mass.par_iter_mut().zip(self.norm.par_iter_mut()).zip(thetas.par_iter()).enumerate().try_for_each(
            |(n, ((mass, norm), theta))| {
                if theta.len() != phi1.ncols() {
                    return Err(dims("θ length does not match Φ^(1)"));
                }
                *norm += colsum.dot(theta);
                for (slot, (v, _)) in mass.iter_mut().zip(heldout.doc(n).iter()) {
                    *slot += phi1.row(v).dot(theta);
                }
                Ok(())
            },
        )?;
        self.samples += 1;
        Ok(())
    }

    /// Encodes every document's training half with the sample's encoder and adds it.
    pub fn add_sample(
        &mut self,
        variant: EncoderVariant,
        sample: &PosteriorSample,
        train: &SparseCounts,
        mode: ThetaMode,
    ) -> Result<()> {
        if train.num_docs() != self.heldout.num_docs() {
            return Err(dims("training and held-out halves differ in document count"));
        }
        let index = self.samples as u64;
        let thetas: Vec<Array1<f64>> = (0..train.num_docs())
            .into_par_iter()
            .map(|n| match mode {
                ThetaMode::Mean => Ok(encode_mean(variant, &sample.omega, &sample.phi, train.doc(n))?.swap_remove(0)),
                ThetaMode::Stochastic { seed } => {
                    let mut r = rng::rng_from(rng::derive_seed(seed, &[index, n as u64]));
                    let lat = encode(
                        variant,
                        &sample.omega,
                        &sample.phi,
                        train.doc(n),
                        &mut DrawNoise { rng: &mut r, boost: None },
                    )?;
                    Ok(lat.layers[0].theta.clone())
                }
            })
            .collect::<Result<_>>()?;
        self.add_theta(&sample.phi[0], &thetas)
    }

    pub fn report(&self) -> Result<PerplexityReport> {
        if self.samples == 0 {
            return Err(invalid("no samples accumulated"));
        }
        let total = self.heldout.total_tokens();
        if total == 0 {
            return Err(invalid("held-out half has no tokens"));
        }
        let mut guarded = 0u64;
        let mut ll = 0.0;
        for (n, (mass, &norm)) in self.mass.iter().zip(&self.norm).enumerate() {
            for (&m, (_, c)) in mass.iter().zip(self.heldout.doc(n).iter()) {
                let p = if norm > 0.0 { m / norm } else { 0.0 };
                let p = if p >= PROB_FLOOR {
                    p
                } else {
                    guarded += 1;
                    PROB_FLOOR
                };
                ll += c as f64 * p.ln();
            }
        }
        if guarded > 0 {
            warn!("{guarded} held-out terms had predictive probability below {PROB_FLOOR:e}");
        }
        Ok(PerplexityReport {
            perplexity: (-ll / total as f64).exp(),
            heldout_tokens: total,
            samples: self.samples,
            guarded_terms: guarded,
        })
    }
}

/// Per-held-out-word perplexity averaged over `samples`.
pub fn heldout_perplexity(
    variant: EncoderVariant,
    samples: &[PosteriorSample],
    split: &HeldoutSplit,
    mode: ThetaMode,
) -> Result<PerplexityReport> {
    if samples.is_empty() {
        return Err(invalid("at least one posterior sample is required"));
    }
    let mut acc = PredictiveAccumulator::new(&split.heldout);
    for s in samples {
        acc.add_sample(variant, s, &split.train, mode)?;
    }
    acc.report()
}

/// One point of the perplexity-versus-time curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub secs: f64,
    pub perplexity: f64,
    pub iteration: u64,
    pub samples: usize,
}

/// Collects curve points; time never decreases between consecutive points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CurveRecorder {
    pub points: Vec<CurvePoint>,
}

impl CurveRecorder {
    pub fn push(&mut self, mut p: CurvePoint) {
        if let Some(last) = self.points.last() {
            if p.secs <= last.secs {
                p.secs = f64::from_bits(last.secs.to_bits() + 1);
            }
        }
        self.points.push(p);
    }

    /// Comma-separated with header `secs,perplexity,iteration,samples`; numbers only.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "secs,perplexity,iteration,samples")?;
        for p in &self.points {
            writeln!(w, "{},{},{},{}", p.secs, p.perplexity, p.iteration, p.samples)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordWeight {
    pub word: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicEdge {
    /// Topic index in the layer below.
    pub child: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicEntry {
    pub topic: usize,
    pub words: Vec<WordWeight>,
    /// Strongest connections to layer `layer − 1`, by decreasing weight.
    pub children: Vec<TopicEdge>,
}

/// Topic report for one layer. Serialized as JSON:
/// `{"layer": l, "top_n": n, "edge_threshold": t, "topics": [{"topic": k,
/// "words": [{"word", "weight"}...], "children": [{"child", "weight"}...]}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicReport {
    pub layer: usize,
    pub top_n: usize,
    pub edge_threshold: f64,
    pub topics: Vec<TopicEntry>,
}

/// Projects every topic of `layer` to the vocabulary and lists its top words;
/// for layers above the first, also lists Φ^(layer) entries above
/// `edge_threshold` as edges to the layer below.
pub fn export_topics(
    model: &DldaModel,
    vocab: &Vocabulary,
    layer: usize,
    top_n: usize,
    edge_threshold: f64,
) -> Result<TopicReport> {
    if layer == 0 || layer > model.depth() {
        return Err(Error::IndexOutOfRange(format!("layer {layer} not in 1..={}", model.depth())));
    }
    let v = model.sizes.vocab_size();
    if top_n == 0 || top_n > v {
        return Err(Error::IndexOutOfRange(format!("top_n {top_n} not in 1..={v}")));
    }
    if vocab.len() != v {
        return Err(dims("vocabulary does not match model"));
    }
    let proj = model.projected_topics(layer)?;
    let topics = (0..model.sizes.width(layer))
        .map(|k| {
            let col = proj.column(k);
            let mut idx: Vec<usize> = (0..v).collect();
            idx.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
            let words =
                idx[..top_n].iter().map(|&i| WordWeight { word: vocab.token(i).to_string(), weight: col[i] }).collect();
            let mut children: Vec<TopicEdge> = if layer > 1 {
                model.phi[layer - 1]
                    .column(k)
                    .iter()
                    .enumerate()
                    .filter(|(_, &w)| w > edge_threshold)
                    .map(|(child, &weight)| TopicEdge { child, weight })
                    .collect()
            } else {
                Vec::new()
            };
            children.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.child.cmp(&b.child)));
            TopicEntry { topic: k, words, children }
        })
        .collect();
    Ok(TopicReport { layer, top_n, edge_threshold, topics })
}
