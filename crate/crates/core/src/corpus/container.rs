//! Versioned binary corpus container.
//!
//! Payload layout (little endian): `V u64, N u64, nnz u64`, then `V`
//! length-prefixed UTF-8 tokens, `N+1` u64 row offsets, `nnz` u32 term
//! indices and `nnz` u32 counts.

use std::io::{Read, Write};

use super::{SparseCounts, Vocabulary};
use crate::codec::{read_envelope, write_envelope, Decoder, Encoder};
use crate::error::{invalid, Error, Result};

pub const CORPUS_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"WHAICORP";

pub fn write_corpus<W: Write>(w: &mut W, vocab: &Vocabulary, counts: &SparseCounts) -> Result<()> {
    if vocab.len() != counts.vocab_size() {
        return Err(invalid("vocabulary size does not match counts"));
    }
    let (indptr, terms, cnts) = counts.raw_parts();
    let mut e = Encoder::default();
    e.u64(counts.vocab_size() as u64);
    e.u64(counts.num_docs() as u64);
    e.u64(counts.nnz() as u64);
    for t in vocab.tokens() {
        e.str(t);
    }
    for &p in indptr {
        e.u64(p as u64);
    }
    for &t in terms {
        e.u32(t);
    }
    for &c in cnts {
        e.u32(c);
    }
    write_envelope(w, MAGIC, CORPUS_FORMAT_VERSION, &e.buf)
}

pub fn read_corpus<R: Read>(r: &mut R) -> Result<(Vocabulary, SparseCounts)> {
    let payload = read_envelope(r, MAGIC, CORPUS_FORMAT_VERSION)?;
    let mut d = Decoder::new(&payload);
    let v = d.u64()? as usize;
    let n = d.u64()? as usize;
    let nnz = d.u64()? as usize;
    if nnz.saturating_mul(8) > payload.len() || n.saturating_mul(8) > payload.len() {
        return Err(Error::Corrupt("corpus dimensions exceed payload".into()));
    }
    let tokens = (0..v).map(|_| d.string()).collect::<Result<Vec<_>>>()?;
    let indptr = (0..=n).map(|_| d.u64().map(|x| x as usize)).collect::<Result<Vec<_>>>()?;
    let terms = (0..nnz).map(|_| d.u32()).collect::<Result<Vec<_>>>()?;
    let counts = (0..nnz).map(|_| d.u32()).collect::<Result<Vec<_>>>()?;
    d.finish()?;
    if indptr.first() != Some(&0) || indptr.last() != Some(&nnz) || indptr.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Corrupt("invalid row offsets".into()));
    }
    let docs = indptr.windows(2).map(|w| (w[0]..w[1]).map(|i| (terms[i] as usize, counts[i])).collect()).collect();
    let counts = SparseCounts::from_docs(v, docs).map_err(|e| Error::Corrupt(e.to_string()))?;
    Ok((Vocabulary::new(tokens)?, counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_counts() -> impl Strategy<Value = SparseCounts> {
        (1usize..12, 0usize..8).prop_flat_map(|(v, n)| {
            proptest::collection::vec(proptest::collection::btree_map(0..v, 1u32..50, 0..v), n).prop_map(move |docs| {
                SparseCounts::from_docs(v, docs.into_iter().map(|m| m.into_iter().collect()).collect()).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn container_round_trip(c in arb_counts()) {
            let vocab = Vocabulary::synthetic(c.vocab_size());
            let mut buf = Vec::new();
            write_corpus(&mut buf, &vocab, &c).unwrap();
            let (v2, c2) = read_corpus(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(v2, vocab);
            prop_assert_eq!(c2, c);
        }
    }

    #[test]
    fn truncated_container_is_corrupt() {
        let c = SparseCounts::from_docs(2, vec![vec![(0, 1)]]).unwrap();
        let mut buf = Vec::new();
        write_corpus(&mut buf, &Vocabulary::synthetic(2), &c).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_corpus(&mut buf.as_slice()), Err(Error::Corrupt(_))));
    }
}
