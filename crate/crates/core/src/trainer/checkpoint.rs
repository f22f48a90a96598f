//! Binary training checkpoint.
//!
//! The file is a checksummed envelope (magic `WHAICKPT`) whose payload holds,
//! in order: the configuration text; layer sizes; Φ^(1..L) as row-major
//! matrices, r and c; the encoder tensors (W1 b1 W2 b2 W3 b3 per layer); the
//! encoder optimizer moments; the topic-update state; the mini-batch stream
//! position including its generator state; the iteration counter; and the
//! sample manifest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Adam, GlobalState, SampleEntry, SgdState, TrainConfig, TrainState};
use crate::codec::{read_envelope, write_envelope, Decoder, Encoder};
use crate::corpus::MinibatchState;
use crate::encoder::{EncoderLayer, EncoderParams};
use crate::error::{Error, Result};
use crate::model::{DldaModel, LayerSizes};
use crate::rng::RngState;
use crate::tlasgr::{StepSchedule, TlasgrState};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"WHAICKPT";
pub(crate) const PHI_MAGIC: &[u8; 8] = b"WHAIPHI\0";
pub(crate) const OMEGA_MAGIC: &[u8; 8] = b"WHAIOMEG";

pub(crate) fn put_sizes(e: &mut Encoder, s: &LayerSizes) {
    e.u64s(&s.as_slice().iter().map(|&x| x as u64).collect::<Vec<_>>());
}

pub(crate) fn get_sizes(d: &mut Decoder) -> Result<LayerSizes> {
    LayerSizes::new(d.u64s()?.into_iter().map(|x| x as usize).collect())
}

pub(crate) fn put_phi(e: &mut Encoder, phi: &[ndarray::Array2<f64>]) {
    e.u64(phi.len() as u64);
    phi.iter().for_each(|p| e.array2(p));
}

pub(crate) fn get_phi(d: &mut Decoder) -> Result<Vec<ndarray::Array2<f64>>> {
    let n = d.u64()? as usize;
    if n > 1024 {
        return Err(Error::Corrupt("implausible layer count".into()));
    }
    (0..n).map(|_| d.array2()).collect()
}

pub(crate) fn put_omega(e: &mut Encoder, o: &EncoderParams) {
    e.u64(o.layers.len() as u64);
    for l in &o.layers {
        e.array2(&l.w1);
        e.array1(&l.b1);
        e.array2(&l.w2);
        e.array1(&l.b2);
        e.array2(&l.w3);
        e.array1(&l.b3);
    }
}

pub(crate) fn get_omega(d: &mut Decoder) -> Result<EncoderParams> {
    let n = d.u64()? as usize;
    if n > 1024 {
        return Err(Error::Corrupt("implausible layer count".into()));
    }
    let layers = (0..n)
        .map(|_| {
            Ok(EncoderLayer {
                w1: d.array2()?,
                b1: d.array1()?,
                w2: d.array2()?,
                b2: d.array1()?,
                w3: d.array2()?,
                b3: d.array1()?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EncoderParams { layers })
}

fn put_adam(e: &mut Encoder, a: &Adam) {
    for x in [a.learning_rate, a.beta1, a.beta2, a.epsilon] {
        e.f64(x);
    }
    e.u64(a.step);
    e.f64s(&a.m);
    e.f64s(&a.v);
}

fn get_adam(d: &mut Decoder) -> Result<Adam> {
    Ok(Adam {
        learning_rate: d.f64()?,
        beta1: d.f64()?,
        beta2: d.f64()?,
        epsilon: d.f64()?,
        step: d.u64()?,
        m: d.f64s()?,
        v: d.f64s()?,
    })
}

fn put_rng(e: &mut Encoder, r: &RngState) {
    e.bytes(&r.seed);
    e.u64(r.stream);
    e.u128(r.word_pos);
}

fn get_rng(d: &mut Decoder) -> Result<RngState> {
    let seed: [u8; 32] = d.bytes()?.try_into().map_err(|_| Error::Corrupt("bad generator seed".into()))?;
    Ok(RngState { seed, stream: d.u64()?, word_pos: d.u128()? })
}

fn encode_state(st: &TrainState) -> Vec<u8> {
    let mut e = Encoder::default();
    e.str(&st.config.to_text());
    put_sizes(&mut e, &st.model.sizes);
    put_phi(&mut e, &st.model.phi);
    e.array1(&st.model.r);
    e.f64s(&st.model.c);
    put_omega(&mut e, &st.omega);
    put_adam(&mut e, &st.omega_adam);
    match &st.global {
        GlobalState::Tlasgr(t) => {
            e.u8(0);
            e.u64(t.fim_scale.len() as u64);
            t.fim_scale.iter().for_each(|m| e.f64s(m));
            e.u64(t.step);
            for x in [t.schedule.eps0, t.schedule.tau, t.schedule.decay, t.rho] {
                e.f64(x);
            }
            e.f64s(&t.eta);
        }
        GlobalState::Sgd(s) => {
            e.u8(1);
            put_phi(&mut e, &s.logits);
            e.u64(s.adam.len() as u64);
            s.adam.iter().for_each(|a| put_adam(&mut e, a));
        }
    }
    let b = &st.batches;
    e.u64(b.num_docs as u64);
    e.u64(b.batch_size as u64);
    put_rng(&mut e, &b.rng);
    e.u64s(&b.perm.iter().map(|&x| x as u64).collect::<Vec<_>>());
    e.u64(b.pos as u64);
    e.u64(st.iteration);
    e.u64(st.omega_snapshots);
    e.u64(st.manifest.len() as u64);
    for m in &st.manifest {
        e.u64(m.iteration);
        e.u64(m.omega_snapshot);
    }
    e.buf
}

fn decode_state(payload: &[u8]) -> Result<TrainState> {
    let mut d = Decoder::new(payload);
    let config = TrainConfig::from_text(&d.string()?)?;
    let sizes = get_sizes(&mut d)?;
    let phi = get_phi(&mut d)?;
    let r = d.array1()?;
    let c = d.f64s()?;
    let model = DldaModel::from_parts(sizes, phi, r, c)?;
    let omega = get_omega(&mut d)?;
    omega.check_sizes(&model.sizes)?;
    let omega_adam = get_adam(&mut d)?;
    let global = match d.u8()? {
        0 => {
            let n = d.u64()? as usize;
            let fim_scale = (0..n.min(1024)).map(|_| d.f64s()).collect::<Result<_>>()?;
            let step = d.u64()?;
            let schedule = StepSchedule { eps0: d.f64()?, tau: d.f64()?, decay: d.f64()? };
            let rho = d.f64()?;
            GlobalState::Tlasgr(TlasgrState { fim_scale, step, schedule, rho, eta: d.f64s()? })
        }
        1 => {
            let logits = get_phi(&mut d)?;
            let n = d.u64()? as usize;
            let adam = (0..n.min(1024)).map(|_| get_adam(&mut d)).collect::<Result<_>>()?;
            GlobalState::Sgd(SgdState { logits, adam })
        }
        t => return Err(Error::Corrupt(format!("unknown topic-update tag {t}"))),
    };
    let batches = MinibatchState {
        num_docs: d.u64()? as usize,
        batch_size: d.u64()? as usize,
        rng: get_rng(&mut d)?,
        perm: d.u64s()?.into_iter().map(|x| x as usize).collect(),
        pos: d.u64()? as usize,
    };
    let iteration = d.u64()?;
    let omega_snapshots = d.u64()?;
    let n = d.u64()? as usize;
    if n.saturating_mul(16) > payload.len() {
        return Err(Error::Corrupt("manifest length exceeds payload".into()));
    }
    let manifest =
        (0..n).map(|_| Ok(SampleEntry { iteration: d.u64()?, omega_snapshot: d.u64()? })).collect::<Result<_>>()?;
    d.finish()?;
    Ok(TrainState { config, model, omega, omega_adam, global, batches, iteration, manifest, omega_snapshots })
}

pub fn write_checkpoint<W: Write>(w: &mut W, state: &TrainState) -> Result<()> {
    write_envelope(w, MAGIC, CHECKPOINT_VERSION, &encode_state(state))
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<TrainState> {
    decode_state(&read_envelope(r, MAGIC, CHECKPOINT_VERSION)?)
}

/// Writes to a temporary sibling and renames it into place, so a crash never
/// leaves a partial checkpoint under `path`.
pub fn save_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write_checkpoint(&mut w, state)?;
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
