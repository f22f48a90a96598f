//! Self-describing run directories.
//!
//! ```text
//! config.txt            effective configuration (key = value)
//! run.json              library version, corpus shape, derived seeds
//! log.jsonl             one IterRecord per line
//! checkpoint.bin        latest checkpoint
//! checkpoint-failed.bin state at a non-finite abort, if any
//! samples/phi-NNNNNN.bin  Φ of collected sample NNNNNN
//! omega/omega-NNNNNN.bin  encoder snapshot NNNNNN
//! curve.csv             perplexity versus time, when enabled
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::info;
use serde_json::json;

use super::checkpoint::{get_omega, get_phi, put_omega, put_phi, OMEGA_MAGIC, PHI_MAGIC};
use super::{
    load_checkpoint, save_checkpoint, IterRecord, StepOutcome, TrainConfig, TrainObserver, TrainState, Trainer,
    RESUMABLE_KEYS,
};
use crate::codec::{read_envelope, write_envelope, Decoder, Encoder};
use crate::corpus::{split_tokens, HeldoutSplit, SparseCounts};
use crate::error::{Error, Result};
use crate::eval::{CurvePoint, CurveRecorder, PosteriorSample, PredictiveAccumulator, ThetaMode};
use crate::rng::{self, Stream};

const SAMPLE_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        RunDir { path: path.into() }
    }

    pub fn config_path(&self) -> PathBuf {
        self.path.join("config.txt")
    }
    pub fn log_path(&self) -> PathBuf {
        self.path.join("log.jsonl")
    }
    pub fn checkpoint_path(&self) -> PathBuf {
        self.path.join("checkpoint.bin")
    }
    pub fn failed_checkpoint_path(&self) -> PathBuf {
        self.path.join("checkpoint-failed.bin")
    }
    pub fn curve_path(&self) -> PathBuf {
        self.path.join("curve.csv")
    }
    pub fn phi_path(&self, index: usize) -> PathBuf {
        self.path.join("samples").join(format!("phi-{index:06}.bin"))
    }
    pub fn omega_path(&self, id: u64) -> PathBuf {
        self.path.join("omega").join(format!("omega-{id:06}.bin"))
    }

    /// Trains on `corpus` (the full corpus; the token split is derived from
    /// the configuration). With `resume`, continues from `checkpoint.bin`.
    pub fn train(&self, config: TrainConfig, corpus: &SparseCounts, resume: bool) -> Result<TrainState> {
        config.validate()?;
        fs::create_dir_all(self.path.join("samples"))?;
        fs::create_dir_all(self.path.join("omega"))?;
        let split = if config.train_fraction < 1.0 {
            Some(split_tokens(corpus, config.train_fraction, config.effective_split_seed())?)
        } else {
            None
        };
        let docs = split.as_ref().map_or(corpus, |s| &s.train);

        let state = if resume {
            let mut st = load_checkpoint(&self.checkpoint_path())?;
            let diff: Vec<_> =
                st.config.differing_keys(&config).into_iter().filter(|k| !RESUMABLE_KEYS.contains(k)).collect();
            if !diff.is_empty() {
                return Err(Error::Config(format!("resume changes non-resumable keys: {}", diff.join(", "))));
            }
            if config.iterations < st.iteration {
                return Err(Error::Config(format!("checkpoint is already at iteration {}", st.iteration)));
            }
            st.config = config.clone();
            truncate_log(&self.log_path(), st.iteration)?;
            st
        } else {
            TrainState::init(config.clone(), docs.num_docs(), docs.vocab_size())?
        };
        fs::write(self.config_path(), config.to_text())?;
        self.write_run_info(&config, corpus)?;

        let mut obs = DirObserver::new(self, &state, split.as_ref())?;
        let mut trainer = Trainer::resume(state, docs)?;
        if !resume {
            save_checkpoint(&self.checkpoint_path(), trainer.state())?;
        }
        while !trainer.state().is_finished() {
            match trainer.step() {
                Ok(out) => obs.on_iteration(trainer.state(), &out)?,
                Err(e @ Error::NonFinite { .. }) => {
                    save_checkpoint(&self.failed_checkpoint_path(), trainer.state())?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
        }
        obs.finish(trainer.state())?;
        save_checkpoint(&self.checkpoint_path(), trainer.state())?;
        Ok(trainer.into_state())
    }

    fn write_run_info(&self, config: &TrainConfig, corpus: &SparseCounts) -> Result<()> {
        let seeds: serde_json::Map<String, serde_json::Value> = [
            ("init", Stream::Init),
            ("batching", Stream::Batching),
            ("noise", Stream::Noise),
            ("counts", Stream::Counts),
            ("global", Stream::Global),
        ]
        .into_iter()
        .map(|(k, s)| (k.to_string(), json!(rng::subsystem_seed(config.seed, s))))
        .collect();
        let info = json!({
            "library_version": env!("CARGO_PKG_VERSION"),
            "checkpoint_version": super::CHECKPOINT_VERSION,
            "seed": config.seed,
            "split_seed": config.effective_split_seed(),
            "subsystem_seeds": seeds,
            "num_docs": corpus.num_docs(),
            "vocab_size": corpus.vocab_size(),
            "total_tokens": corpus.total_tokens(),
        });
        fs::write(self.path.join("run.json"), serde_json::to_string_pretty(&info)?)?;
        Ok(())
    }

    fn write_phi(&self, index: usize, iteration: u64, phi: &[ndarray::Array2<f64>]) -> Result<()> {
        let mut e = Encoder::default();
        e.u64(iteration);
        put_phi(&mut e, phi);
        let mut w = BufWriter::new(File::create(self.phi_path(index))?);
        write_envelope(&mut w, PHI_MAGIC, SAMPLE_VERSION, &e.buf)?;
        w.flush()?;
        Ok(())
    }

    fn write_omega(&self, id: u64, omega: &crate::encoder::EncoderParams) -> Result<()> {
        let mut e = Encoder::default();
        put_omega(&mut e, omega);
        let mut w = BufWriter::new(File::create(self.omega_path(id))?);
        write_envelope(&mut w, OMEGA_MAGIC, SAMPLE_VERSION, &e.buf)?;
        w.flush()?;
        Ok(())
    }

    fn read_phi(&self, index: usize) -> Result<(u64, Vec<ndarray::Array2<f64>>)> {
        let buf = read_envelope(&mut BufReader::new(File::open(self.phi_path(index))?), PHI_MAGIC, SAMPLE_VERSION)?;
        let mut d = Decoder::new(&buf);
        let it = d.u64()?;
        let phi = get_phi(&mut d)?;
        d.finish()?;
        Ok((it, phi))
    }

    fn read_omega(&self, id: u64) -> Result<crate::encoder::EncoderParams> {
        let buf = read_envelope(&mut BufReader::new(File::open(self.omega_path(id))?), OMEGA_MAGIC, SAMPLE_VERSION)?;
        let mut d = Decoder::new(&buf);
        let o = get_omega(&mut d)?;
        d.finish()?;
        Ok(o)
    }
}

/// Loads the latest checkpoint and every sample listed in its manifest.
pub fn load_samples(run: &RunDir) -> Result<(TrainState, Vec<PosteriorSample>)> {
    let st = load_checkpoint(&run.checkpoint_path())?;
    let samples = samples_of(run, &st)?;
    Ok((st, samples))
}

fn samples_of(run: &RunDir, st: &TrainState) -> Result<Vec<PosteriorSample>> {
    let mut cache: Option<(u64, Arc<crate::encoder::EncoderParams>)> = None;
    st.manifest
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let (it, phi) = run.read_phi(i)?;
            if it != e.iteration {
                return Err(Error::Corrupt(format!(
                    "sample {i} is from iteration {it}, manifest says {}",
                    e.iteration
                )));
            }
            let omega = match &cache {
                Some((id, o)) if *id == e.omega_snapshot => o.clone(),
                _ => {
                    let o = Arc::new(run.read_omega(e.omega_snapshot)?);
                    o.check_sizes(&st.model.sizes)?;
                    cache = Some((e.omega_snapshot, o.clone()));
                    o
                }
            };
            Ok(PosteriorSample { iteration: it, phi, omega })
        })
        .collect()
}

pub fn read_log(path: &Path) -> Result<Vec<IterRecord>> {
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

fn truncate_log(path: &Path, upto: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let keep: Vec<IterRecord> = read_log(path)?.into_iter().filter(|r| r.iter <= upto).collect();
    let mut w = BufWriter::new(File::create(path)?);
    for r in keep {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_curve(path: &Path, upto: u64) -> Result<Vec<CurvePoint>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut pts = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate().skip(1) {
        let line = line?;
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse { line: i + 1, msg: format!("bad curve record {line:?}") };
        if f.len() != 4 {
            return Err(bad());
        }
        let p = CurvePoint {
            secs: f[0].parse().map_err(|_| bad())?,
            perplexity: f[1].parse().map_err(|_| bad())?,
            iteration: f[2].parse().map_err(|_| bad())?,
            samples: f[3].parse().map_err(|_| bad())?,
        };
        if p.iteration <= upto {
            pts.push(p);
        }
    }
    Ok(pts)
}

struct Curve<'s> {
    split: &'s HeldoutSplit,
    acc: PredictiveAccumulator,
    recorder: CurveRecorder,
    /// Seconds already spent before this process started.
    offset: f64,
}

struct DirObserver<'r, 's> {
    run: &'r RunDir,
    log: BufWriter<File>,
    curve: Option<Curve<'s>>,
    start: Instant,
    last_omega: Option<Arc<crate::encoder::EncoderParams>>,
}

impl<'r, 's> DirObserver<'r, 's> {
    fn new(run: &'r RunDir, state: &TrainState, split: Option<&'s HeldoutSplit>) -> Result<Self> {
        let log = BufWriter::new(OpenOptions::new().create(true).append(true).open(run.log_path())?);
        let curve = match split {
            Some(split) if state.config.eval_every > 0 => {
                let mut acc = PredictiveAccumulator::new(&split.heldout);
                for s in samples_of(run, state)? {
                    acc.add_sample(state.config.variant, &s, &split.train, ThetaMode::Mean)?;
                }
                let points = read_curve(&run.curve_path(), state.iteration)?;
                let offset = points.last().map_or(0.0, |p| p.secs);
                Some(Curve { split, acc, recorder: CurveRecorder { points }, offset })
            }
            _ => None,
        };
        Ok(DirObserver { run, log, curve, start: Instant::now(), last_omega: None })
    }

    fn curve_point(&mut self, state: &TrainState) -> Result<()> {
        let secs = self.start.elapsed().as_secs_f64();
        let Some(c) = &mut self.curve else { return Ok(()) };
        let report = if c.acc.samples() > 0 {
            c.acc.report()?
        } else {
            let mut tmp = PredictiveAccumulator::new(&c.split.heldout);
            tmp.add_sample(state.config.variant, &state.current_sample(), &c.split.train, ThetaMode::Mean)?;
            tmp.report()?
        };
        c.recorder.push(CurvePoint {
            secs: c.offset + secs,
            perplexity: report.perplexity,
            iteration: state.iteration,
            samples: c.acc.samples(),
        });
        info!("iteration {}: held-out perplexity {:.3}", state.iteration, report.perplexity);
        Ok(())
    }

    fn write_curve(&self) -> Result<()> {
        if let Some(c) = &self.curve {
            let mut w = BufWriter::new(File::create(self.run.curve_path())?);
            c.recorder.write_csv(&mut w)?;
            w.flush()?;
        }
        Ok(())
    }

    fn finish(&mut self, state: &TrainState) -> Result<()> {
        self.log.flush()?;
        let needs_final = match &self.curve {
            Some(c) => c.recorder.points.last().is_none_or(|p| p.iteration != state.iteration),
            None => false,
        };
        if needs_final {
            self.curve_point(state)?;
        }
        self.write_curve()
    }
}

impl TrainObserver for DirObserver<'_, '_> {
    fn on_iteration(&mut self, state: &TrainState, out: &StepOutcome) -> Result<()> {
        serde_json::to_writer(&mut self.log, &out.record)?;
        self.log.write_all(b"\n")?;
        if let Some((entry, fresh)) = out.collected {
            let index = state.manifest.len() - 1;
            self.run.write_phi(index, entry.iteration, &state.model.phi)?;
            let omega = match (&self.last_omega, fresh) {
                (Some(o), false) => o.clone(),
                _ => {
                    if fresh {
                        self.run.write_omega(entry.omega_snapshot, &state.omega)?;
                        Arc::new(state.omega.clone())
                    } else {
                        Arc::new(self.run.read_omega(entry.omega_snapshot)?)
                    }
                }
            };
            self.last_omega = Some(omega.clone());
            if let Some(c) = &mut self.curve {
                let s = PosteriorSample { iteration: entry.iteration, phi: state.model.phi.clone(), omega };
                c.acc.add_sample(state.config.variant, &s, &c.split.train, ThetaMode::Mean)?;
            }
        }
        let cfg = &state.config;
        if cfg.eval_every > 0 && state.iteration.is_multiple_of(cfg.eval_every) {
            self.curve_point(state)?;
        }
        if cfg.checkpoint_stride > 0 && state.iteration.is_multiple_of(cfg.checkpoint_stride) {
            self.log.flush()?;
            self.write_curve()?;
            save_checkpoint(&self.run.checkpoint_path(), state)?;
        }
        Ok(())
    }
}
