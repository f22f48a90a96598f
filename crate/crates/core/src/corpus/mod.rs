//! Bag-of-words corpora: vocabulary, sparse count matrices, held-out token
//! splits and mini-batch iteration.

mod batch;
mod container;
mod text;

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{invalid, Error, Result};
use crate::rng;

pub use batch::{MinibatchIter, MinibatchState};
pub use container::{read_corpus, write_corpus, CORPUS_FORMAT_VERSION};
pub use text::{load_tsv, load_uci_bow, read_vocabulary};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(invalid("vocabulary is empty"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Placeholder vocabulary `w0, w1, ...` for synthetic corpora.
    pub fn synthetic(size: usize) -> Self {
        Vocabulary::new((0..size).map(|i| format!("w{i}")).collect()).expect("synthetic tokens are unique")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }
}

/// Document-term counts in compressed sparse row form; one row per document,
/// term indices strictly increasing within a row, every stored count ≥ 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseCounts {
    vocab_size: usize,
    indptr: Vec<usize>,
    terms: Vec<u32>,
    counts: Vec<u32>,
}

/// Borrowed view of one document's postings.
#[derive(Debug, Clone, Copy)]
pub struct DocView<'a> {
    pub terms: &'a [u32],
    pub counts: &'a [u32],
}

impl<'a> DocView<'a> {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + 'a {
        self.terms.iter().zip(self.counts.iter()).map(|(&t, &c)| (t as usize, c))
    }
}

impl SparseCounts {
    /// Builds a matrix from per-document postings. Postings need not be
    /// sorted, but a term may appear at most once per document.
    pub fn from_docs(vocab_size: usize, docs: Vec<Vec<(usize, u32)>>) -> Result<Self> {
        if vocab_size == 0 {
            return Err(invalid("vocabulary size must be positive"));
        }
        let mut indptr = Vec::with_capacity(docs.len() + 1);
        let mut terms = Vec::new();
        let mut counts = Vec::new();
        indptr.push(0);
        for (n, mut doc) in docs.into_iter().enumerate() {
            doc.sort_unstable_by_key(|&(t, _)| t);
            for (i, &(t, c)) in doc.iter().enumerate() {
                if t >= vocab_size {
                    return Err(Error::IndexOutOfRange(format!("document {n}: term {t} outside [0, {vocab_size})")));
                }
                if c == 0 {
                    return Err(invalid(format!("document {n}: zero count for term {t}")));
                }
                if i > 0 && doc[i - 1].0 == t {
                    return Err(invalid(format!("document {n}: duplicate term {t}")));
                }
                terms.push(t as u32);
                counts.push(c);
            }
            indptr.push(terms.len());
        }
        Ok(SparseCounts { vocab_size, indptr, terms, counts })
    }

    pub fn from_dense(rows: &[Vec<u32>]) -> Result<Self> {
        let v = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != v) {
            return Err(invalid("ragged dense matrix"));
        }
        let docs =
            rows.iter().map(|r| r.iter().enumerate().filter(|(_, &c)| c > 0).map(|(t, &c)| (t, c)).collect()).collect();
        SparseCounts::from_docs(v, docs)
    }

    pub fn num_docs(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn nnz(&self) -> usize {
        self.terms.len()
    }

    pub fn doc(&self, n: usize) -> DocView<'_> {
        let (a, b) = (self.indptr[n], self.indptr[n + 1]);
        DocView { terms: &self.terms[a..b], counts: &self.counts[a..b] }
    }

    pub fn docs(&self) -> impl Iterator<Item = DocView<'_>> {
        (0..self.num_docs()).map(move |n| self.doc(n))
    }

    pub fn total_tokens(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn get(&self, n: usize, term: usize) -> u32 {
        let d = self.doc(n);
        match d.terms.binary_search(&(term as u32)) {
            Ok(i) => d.counts[i],
            Err(_) => 0,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<u32>> {
        self.docs()
            .map(|d| {
                let mut row = vec![0; self.vocab_size];
                for (t, c) in d.iter() {
                    row[t] = c;
                }
                row
            })
            .collect()
    }

    /// Total count of every term across the corpus.
    pub fn term_totals(&self) -> Vec<u64> {
        let mut out = vec![0u64; self.vocab_size];
        for (&t, &c) in self.terms.iter().zip(&self.counts) {
            out[t as usize] += c as u64;
        }
        out
    }

    pub(crate) fn raw_parts(&self) -> (&[usize], &[u32], &[u32]) {
        (&self.indptr, &self.terms, &self.counts)
    }
}

/// Train/held-out token split of one corpus; both halves keep every document.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldoutSplit {
    pub train: SparseCounts,
    pub heldout: SparseCounts,
    pub train_fraction: f64,
    pub seed: u64,
}

/// Assigns every token independently to the training half with probability
/// `train_fraction`. Per cell this is a single Binomial(count, fraction) draw.
pub fn split_tokens(counts: &SparseCounts, train_fraction: f64, seed: u64) -> Result<HeldoutSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid(format!("train fraction {train_fraction} not in (0, 1)")));
    }
    let mut rng = rng::rng_from(seed);
    let mut train_docs = Vec::with_capacity(counts.num_docs());
    let mut held_docs = Vec::with_capacity(counts.num_docs());
    for doc in counts.docs() {
        let mut tr = Vec::new();
        let mut ho = Vec::new();
        for (t, c) in doc.iter() {
            let k = binomial(&mut rng, c as u64, train_fraction) as u32;
            if k > 0 {
                tr.push((t, k));
            }
            if c > k {
                ho.push((t, c - k));
            }
        }
        train_docs.push(tr);
        held_docs.push(ho);
    }
    Ok(HeldoutSplit {
        train: SparseCounts::from_docs(counts.vocab_size(), train_docs)?,
        heldout: SparseCounts::from_docs(counts.vocab_size(), held_docs)?,
        train_fraction,
        seed,
    })
}

pub(crate) fn binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}
