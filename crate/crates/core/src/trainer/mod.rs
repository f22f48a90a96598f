//! The hybrid training loop: per iteration, one adaptive-moment step on the
//! encoder parameters from the ELBO gradient, then one update of every topic
//! column from latent counts drawn with the same θ sample.

mod checkpoint;
mod config;
mod optim;
mod run;

use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use config::{GlobalUpdate, TrainConfig, RESUMABLE_KEYS};
pub use optim::Adam;
pub use run::{load_samples, read_log, RunDir};

use crate::corpus::{MinibatchIter, MinibatchState, SparseCounts};
use crate::elbo::{elbo_gradient, DocNoise};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::eval::PosteriorSample;
use crate::model::DldaModel;
use crate::rng::{self, Stream};
use crate::tlasgr::{project_view, sample_latent_counts, TlasgrState, SIMPLEX_FLOOR};

/// Unconstrained topic parameterization used by the plain stochastic-gradient path.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    /// Per layer, log-weights whose column-wise softmax is Φ.
    pub logits: Vec<Array2<f64>>,
    pub adam: Vec<Adam>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GlobalState {
    Tlasgr(TlasgrState),
    Sgd(SgdState),
}

/// One collected posterior sample: the iteration it was taken at and the
/// encoder snapshot it refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleEntry {
    pub iteration: u64,
    pub omega_snapshot: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: DldaModel,
    pub omega: EncoderParams,
    pub omega_adam: Adam,
    pub global: GlobalState,
    pub batches: MinibatchState,
    /// Completed iterations.
    pub iteration: u64,
    pub manifest: Vec<SampleEntry>,
    /// Encoder snapshots written so far.
    pub omega_snapshots: u64,
}

/// One line of the training log. ELBO terms are per-document means over the batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: u64,
    pub elbo: f64,
    pub recon: f64,
    pub kl: Vec<f64>,
    pub secs: f64,
}

/// What a training step produced besides the state change.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub record: IterRecord,
    /// Set when this iteration was stored as a posterior sample; the flag
    /// tells whether a new encoder snapshot was started with it.
    pub collected: Option<(SampleEntry, bool)>,
}

impl TrainState {
    /// Fresh state for a corpus of `num_docs` documents over `vocab_size` words.
    pub fn init(config: TrainConfig, num_docs: usize, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        let sizes = config.layer_sizes(vocab_size)?;
        let init_seed = rng::subsystem_seed(config.seed, Stream::Init);
        let eta = config.eta_values();
        let mut model = DldaModel::init(sizes.clone(), &eta, rng::derive_seed(init_seed, &[0]))?;
        model.r.fill(config.r);
        model.c.iter_mut().for_each(|c| *c = config.c);
        for phi in &mut model.phi {
            phi.axis_iter_mut(Axis(1)).for_each(project_view);
        }
        let omega = EncoderParams::init(&sizes, rng::derive_seed(init_seed, &[1]));
        let omega_adam =
            Adam::new(omega.num_params(), config.learning_rate, config.beta1, config.beta2, config.adam_epsilon);
        let rho = num_docs as f64 / config.batch_size as f64;
        let global = match config.global_update {
            GlobalUpdate::Tlasgr => GlobalState::Tlasgr(TlasgrState::new(&sizes, eta, rho, config.tlasgr)),
            GlobalUpdate::Sgd => GlobalState::Sgd(SgdState {
                logits: model.phi.iter().map(|p| p.mapv(|x| x.max(SIMPLEX_FLOOR).ln())).collect(),
                adam: model
                    .phi
                    .iter()
                    .map(|p| {
                        Adam::new(p.len(), config.sgd_learning_rate, config.beta1, config.beta2, config.adam_epsilon)
                    })
                    .collect(),
            }),
        };
        let batches =
            MinibatchIter::new(num_docs, config.batch_size, rng::subsystem_seed(config.seed, Stream::Batching))?
                .state();
        Ok(TrainState {
            config,
            model,
            omega,
            omega_adam,
            global,
            batches,
            iteration: 0,
            manifest: Vec::new(),
            omega_snapshots: 0,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    /// Checks the per-iteration invariants: simplex columns, finite
    /// parameters and FIM scales of at least one.
    pub fn check_invariants(&self) -> Result<()> {
        self.model.validate()?;
        if !self.omega.is_finite() {
            return Err(Error::NonFinite { iteration: self.iteration, what: "encoder parameters".into() });
        }
        if let GlobalState::Tlasgr(t) = &self.global {
            if t.fim_scale.iter().flatten().any(|&m| !(m >= 1.0)) {
                return Err(Error::InvalidArgument("FIM scale below 1".into()));
            }
        }
        Ok(())
    }

    /// Posterior sample made from the current parameters.
    pub fn current_sample(&self) -> PosteriorSample {
        PosteriorSample { iteration: self.iteration, phi: self.model.phi.clone(), omega: Arc::new(self.omega.clone()) }
    }
}

/// Runs training iterations over a fixed corpus.
pub struct Trainer<'a> {
    state: TrainState,
    docs: &'a SparseCounts,
    batches: MinibatchIter,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, docs: &'a SparseCounts) -> Result<Self> {
        let state = TrainState::init(config, docs.num_docs(), docs.vocab_size())?;
        Self::resume(state, docs)
    }

    /// Continues from a saved state. The corpus must be the one it was trained on.
    pub fn resume(state: TrainState, docs: &'a SparseCounts) -> Result<Self> {
        if docs.vocab_size() != state.model.sizes.vocab_size() {
            return Err(Error::DimensionMismatch(format!(
                "corpus has {} words, model expects {}",
                docs.vocab_size(),
                state.model.sizes.vocab_size()
            )));
        }
        if docs.num_docs() != state.batches.num_docs {
            return Err(Error::DimensionMismatch(format!(
                "corpus has {} documents, state was trained on {}",
                docs.num_docs(),
                state.batches.num_docs
            )));
        }
        let batches = MinibatchIter::from_state(&state.batches);
        Ok(Trainer { state, docs, batches })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    /// Performs one iteration. On a non-finite ELBO or parameter the error is
    /// returned and the state holds the offending values for diagnosis.
    pub fn step(&mut self) -> Result<StepOutcome> {
        let start = Instant::now();
        let st = &mut self.state;
        let cfg = &st.config;
        let t = st.iteration;
        let batch = self.batches.next().expect("endless batch stream");
        let m = batch.len() as f64;

        let noise_seed = rng::subsystem_seed(cfg.seed, Stream::Noise);
        let noise: Vec<DocNoise> =
            (0..batch.len()).map(|i| DocNoise::Seed(rng::derive_seed(noise_seed, &[t, i as u64]))).collect();
        let (mut grad, elbo, latents) =
            elbo_gradient(cfg.variant, &st.omega, &st.model, self.docs, &batch, &noise, cfg.boost)?;
        let non_finite = |what: &str| Error::NonFinite { iteration: t + 1, what: what.into() };
        if !elbo.total.is_finite() {
            st.batches = self.batches.state();
            return Err(non_finite("ELBO"));
        }
        grad.scale(1.0 / m);
        st.omega_adam.ascend(st.omega.tensors_mut(), grad.tensors());

        let counts_seed = rng::derive_seed(rng::subsystem_seed(cfg.seed, Stream::Counts), &[t]);
        let counts = sample_latent_counts(&st.model, &latents, self.docs, &batch, counts_seed)?;
        let rho = self.docs.num_docs() as f64 / m;
        let eta = cfg.eta_values();
        match &mut st.global {
            GlobalState::Tlasgr(tl) => {
                tl.rho = rho;
                let global_seed = rng::subsystem_seed(cfg.seed, Stream::Global);
                for (i, (phi, z)) in st.model.phi.iter_mut().zip(&counts.stats).enumerate() {
                    let mut r = rng::rng_from(rng::derive_seed(global_seed, &[t, i as u64]));
                    tl.update_layer(phi, z, i + 1, &mut r);
                }
                tl.advance();
            }
            GlobalState::Sgd(sg) => {
                for (i, (phi, z)) in st.model.phi.iter_mut().zip(&counts.stats).enumerate() {
                    sgd_global_step(phi, &mut sg.logits[i], &mut sg.adam[i], z, rho, eta[i]);
                }
            }
        }

        st.iteration += 1;
        st.batches = self.batches.state();
        if !st.omega.is_finite() {
            return Err(non_finite("encoder parameters"));
        }
        if st.model.phi.iter().any(|p| p.iter().any(|x| !x.is_finite())) {
            return Err(non_finite("topic matrices"));
        }

        let collected = collect_point(&st.config, st.iteration, st.manifest.len()).then(|| {
            let fresh = st.manifest.len().is_multiple_of(st.config.omega_snapshot_every);
            if fresh {
                st.omega_snapshots += 1;
            }
            let entry = SampleEntry { iteration: st.iteration, omega_snapshot: st.omega_snapshots - 1 };
            st.manifest.push(entry);
            (entry, fresh)
        });
        let per_doc = elbo.scaled(1.0 / m);
        Ok(StepOutcome {
            record: IterRecord {
                iter: st.iteration,
                elbo: per_doc.total,
                recon: per_doc.recon,
                kl: per_doc.kl_per_layer,
                secs: start.elapsed().as_secs_f64(),
            },
            collected,
        })
    }
}

fn collect_point(cfg: &TrainConfig, iteration: u64, collected: usize) -> bool {
    collected < cfg.samples
        && iteration > cfg.burn_in
        && (iteration - cfg.burn_in).is_multiple_of(cfg.collection_stride)
}

/// Plain stochastic-gradient update of one topic matrix: an adaptive-moment
/// step on the column logits along the gradient of the count log-posterior,
/// `(ρ z̃_vk + η) − (ρ Σ_v z̃_vk + η V) φ_vk`, followed by a column softmax.
pub fn sgd_global_step(
    phi: &mut Array2<f64>,
    logits: &mut Array2<f64>,
    adam: &mut Adam,
    z: &Array2<f64>,
    rho: f64,
    eta: f64,
) {
    let v = phi.nrows() as f64;
    let totals = z.sum_axis(Axis(0));
    let mut grad = Array2::zeros(phi.raw_dim());
    Zip::indexed(&mut grad).and(&*phi).and(z).for_each(|(_, k), g, &p, &zv| {
        *g = (rho * zv + eta) - (rho * totals[k] + eta * v) * p;
    });
    adam.ascend(vec![logits.as_slice_mut().expect("standard layout")], vec![grad.as_slice().expect("standard layout")]);
    for (mut col, lcol) in phi.axis_iter_mut(Axis(1)).zip(logits.axis_iter(Axis(1))) {
        let mx = lcol.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut s = 0.0;
        for (p, &l) in col.iter_mut().zip(lcol.iter()) {
            *p = (l - mx).exp();
            s += *p;
        }
        col.mapv_inplace(|p| p / s);
    }
}

/// Drives a [`Trainer`] to completion, reporting to `observer`.
pub trait TrainObserver {
    fn on_iteration(&mut self, _state: &TrainState, _outcome: &StepOutcome) -> Result<()> {
        Ok(())
    }
}

/// Keeps every collected sample in memory, sharing encoder snapshots.
#[derive(Debug, Default)]
pub struct SampleCollector {
    pub samples: Vec<PosteriorSample>,
    pub records: Vec<IterRecord>,
}

impl TrainObserver for SampleCollector {
    fn on_iteration(&mut self, state: &TrainState, outcome: &StepOutcome) -> Result<()> {
        self.records.push(outcome.record.clone());
        if let Some((entry, fresh)) = outcome.collected {
            let omega = if fresh || self.samples.is_empty() {
                Arc::new(state.omega.clone())
            } else {
                self.samples.last().unwrap().omega.clone()
            };
            self.samples.push(PosteriorSample { iteration: entry.iteration, phi: state.model.phi.clone(), omega });
        }
        Ok(())
    }
}

/// Trains from scratch to `config.iterations`, keeping samples in memory.
pub fn train(config: TrainConfig, docs: &SparseCounts) -> Result<(TrainState, SampleCollector)> {
    let mut trainer = Trainer::new(config, docs)?;
    let mut obs = SampleCollector::default();
    run_to_end(&mut trainer, &mut obs)?;
    Ok((trainer.into_state(), obs))
}

pub fn run_to_end(trainer: &mut Trainer, observer: &mut dyn TrainObserver) -> Result<()> {
    while !trainer.state().is_finished() {
        let out = trainer.step()?;
        observer.on_iteration(trainer.state(), &out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerSizes;
    use ndarray::array;

    fn toy_docs() -> SparseCounts {
        let sizes = LayerSizes::new(vec![10, 3]).unwrap();
        let truth = DldaModel::init(sizes, &[0.3], 8).unwrap();
        truth.generate_corpus(200, 9).unwrap().0
    }

    fn toy_config() -> TrainConfig {
        TrainConfig {
            topics: vec![3],
            batch_size: 20,
            iterations: 40,
            burn_in: 30,
            samples: 5,
            collection_stride: 2,
            omega_snapshot_every: 2,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn zero_iterations_gives_initial_state() {
        let docs = toy_docs();
        let cfg = TrainConfig { iterations: 0, burn_in: 0, samples: 0, ..toy_config() };
        let (st, obs) = train(cfg, &docs).unwrap();
        assert_eq!(st.iteration, 0);
        assert!(st.manifest.is_empty() && obs.samples.is_empty());
    }

    #[test]
    fn invariants_and_manifest() {
        let docs = toy_docs();
        let mut tr = Trainer::new(toy_config(), &docs).unwrap();
        let mut obs = SampleCollector::default();
        while !tr.state().is_finished() {
            let out = tr.step().unwrap();
            obs.on_iteration(tr.state(), &out).unwrap();
            tr.state().check_invariants().unwrap();
        }
        let st = tr.into_state();
        assert_eq!(st.manifest.len(), 5);
        let its: Vec<u64> = st.manifest.iter().map(|e| e.iteration).collect();
        assert_eq!(its, vec![32, 34, 36, 38, 40]);
        let snaps: Vec<u64> = st.manifest.iter().map(|e| e.omega_snapshot).collect();
        assert_eq!(snaps, vec![0, 0, 1, 1, 2]);
        assert!(Arc::ptr_eq(&obs.samples[0].omega, &obs.samples[1].omega));
        assert!(!Arc::ptr_eq(&obs.samples[1].omega, &obs.samples[2].omega));
        assert_eq!(obs.records.len(), 40);
    }

    #[test]
    fn identical_runs() {
        let docs = toy_docs();
        let (a, ra) = train(toy_config(), &docs).unwrap();
        let (b, rb) = train(toy_config(), &docs).unwrap();
        assert_eq!(a, b);
        let strip = |r: &SampleCollector| r.records.iter().map(|x| (x.iter, x.elbo.to_bits())).collect::<Vec<_>>();
        assert_eq!(strip(&ra), strip(&rb));
    }

    #[test]
    fn sgd_zero_gradient_keeps_phi() {
        let mut phi = array![[0.2, 0.5], [0.8, 0.5]];
        let mut logits = phi.mapv(f64::ln);
        let mut adam = Adam::new(4, 0.1, 0.9, 0.999, 1e-8);
        let (rho, eta) = (1.0, 0.0);
        // z proportional to φ makes the drift vanish.
        let z = array![[2.0, 1.0], [8.0, 1.0]];
        let before = phi.clone();
        sgd_global_step(&mut phi, &mut logits, &mut adam, &z, rho, eta);
        for (a, b) in phi.iter().zip(before.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_columns_stay_on_simplex() {
        let docs = toy_docs();
        let cfg = TrainConfig { global_update: GlobalUpdate::Sgd, sgd_learning_rate: 0.5, ..toy_config() };
        let mut tr = Trainer::new(cfg, &docs).unwrap();
        for _ in 0..30 {
            tr.step().unwrap();
            tr.state().check_invariants().unwrap();
        }
    }
}
