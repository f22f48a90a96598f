//! Plain-text corpus formats: UCI bag-of-words (`docword` + `vocab`) and a
//! three-column TSV for small hand-made corpora.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use super::{SparseCounts, Vocabulary};
use crate::error::{Error, Result};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Reads one token per line; blank lines are skipped.
pub fn read_vocabulary<R: BufRead>(reader: R) -> Result<Vocabulary> {
    let mut tokens = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() {
            tokens.push(t.to_string());
        }
    }
    Vocabulary::new(tokens)
}

/// Loads a UCI bag-of-words corpus. Repeated `(doc, word)` records are summed
/// and documents with no records are kept as empty rows.
pub fn load_uci_bow<R1: BufRead, R2: BufRead>(docword: R1, vocab: R2) -> Result<(Vocabulary, SparseCounts)> {
    let vocab = read_vocabulary(vocab)?;
    let mut header = [0u64; 3];
    let mut filled = 0;
    let mut records = 0u64;
    let mut docs: Vec<BTreeMap<usize, u32>> = Vec::new();
    let (mut n_docs, mut n_words) = (0usize, 0usize);

    for (i, line) in docword.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if filled < 3 {
            header[filled] = t.parse().map_err(|_| parse_err(lineno, format!("expected integer header, got {t:?}")))?;
            filled += 1;
            if filled == 3 {
                n_docs = header[0] as usize;
                n_words = header[1] as usize;
                if n_words != vocab.len() {
                    return Err(Error::InvalidArgument(format!(
                        "header declares W = {n_words} but vocabulary has {} tokens",
                        vocab.len()
                    )));
                }
                docs = vec![BTreeMap::new(); n_docs];
            }
            continue;
        }
        let mut fields = t.split_whitespace();
        let mut next = |name: &str| -> Result<i64> {
            fields
                .next()
                .ok_or_else(|| parse_err(lineno, format!("missing {name}")))?
                .parse::<i64>()
                .map_err(|_| parse_err(lineno, format!("bad {name}")))
        };
        let (d, w, c) = (next("docID")?, next("wordID")?, next("count")?);
        if fields.next().is_some() {
            return Err(parse_err(lineno, "trailing fields"));
        }
        if d < 1 || d as usize > n_docs || w < 1 || w as usize > n_words {
            return Err(Error::IndexOutOfRange(format!(
                "line {lineno}: ({d}, {w}) outside [1, {n_docs}] x [1, {n_words}]"
            )));
        }
        if c < 1 {
            return Err(parse_err(lineno, format!("nonpositive count {c}")));
        }
        records += 1;
        if records > header[2] {
            return Err(parse_err(lineno, format!("more records than NNZ = {}", header[2])));
        }
        let cell = docs[d as usize - 1].entry(w as usize - 1).or_insert(0);
        *cell = cell.checked_add(c as u32).ok_or_else(|| parse_err(lineno, "count overflow"))?;
    }
    if filled < 3 {
        return Err(parse_err(filled + 1, "truncated header"));
    }
    if records != header[2] {
        return Err(parse_err(0, format!("header declares NNZ = {} but found {records} records", header[2])));
    }
    let docs = docs.into_iter().map(|m| m.into_iter().collect()).collect();
    Ok((vocab, SparseCounts::from_docs(n_words, docs)?))
}

/// Loads `doc_id<TAB>term<TAB>count` lines. Documents are numbered in order of
/// first appearance; repeated cells are summed; unknown terms are an error.
pub fn load_tsv<R: BufRead>(reader: R, vocab: &Vocabulary) -> Result<SparseCounts> {
    let mut doc_ids: HashMap<String, usize> = HashMap::new();
    let mut docs: Vec<BTreeMap<usize, u32>> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(parse_err(lineno, format!("expected 3 tab-separated fields, got {}", cols.len())));
        }
        let term = vocab.get(cols[1].trim()).ok_or_else(|| parse_err(lineno, format!("unknown term {:?}", cols[1])))?;
        let count: u32 = cols[2].trim().parse().map_err(|_| parse_err(lineno, format!("bad count {:?}", cols[2])))?;
        if count == 0 {
            return Err(parse_err(lineno, "nonpositive count 0"));
        }
        let next_id = doc_ids.len();
        let n = *doc_ids.entry(cols[0].to_string()).or_insert(next_id);
        if n == docs.len() {
            docs.push(BTreeMap::new());
        }
        *docs[n].entry(term).or_insert(0) += count;
    }
    let docs = docs.into_iter().map(|m| m.into_iter().collect()).collect();
    SparseCounts::from_docs(vocab.len(), docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab3() -> &'static str {
        "a\nb\nc\n"
    }

    #[test]
    fn transcribes_records() {
        let (v, c) = load_uci_bow("2\n3\n2\n1 1 4\n2 3 1\n".as_bytes(), vocab3().as_bytes()).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(c.to_dense(), vec![vec![4, 0, 0], vec![0, 0, 1]]);
    }

    #[test]
    fn sums_duplicate_records() {
        let (_, c) = load_uci_bow("1\n2\n2\n1 1 1\n1 1 2\n".as_bytes(), "a\nb\n".as_bytes()).unwrap();
        assert_eq!(c.to_dense(), vec![vec![3, 0]]);
    }

    #[test]
    fn rejects_out_of_range() {
        let e = load_uci_bow("1\n2\n1\n1 3 1\n".as_bytes(), "a\nb\n".as_bytes()).unwrap_err();
        assert!(matches!(e, Error::IndexOutOfRange(_)));
        let e = load_uci_bow("1\n2\n1\n0 1 1\n".as_bytes(), "a\nb\n".as_bytes()).unwrap_err();
        assert!(matches!(e, Error::IndexOutOfRange(_)));
    }

    #[test]
    fn rejects_count_and_header_problems() {
        assert!(load_uci_bow("1\n2\n1\n1 1 0\n".as_bytes(), "a\nb\n".as_bytes()).is_err());
        assert!(load_uci_bow("1\n2\n2\n1 1 1\n".as_bytes(), "a\nb\n".as_bytes()).is_err());
        assert!(load_uci_bow("1\n2\n1\n1 1 1\n1 2 1\n".as_bytes(), "a\nb\n".as_bytes()).is_err());
        assert!(load_uci_bow("1\n3\n1\n1 1 1\n".as_bytes(), "a\nb\n".as_bytes()).is_err());
        assert!(load_uci_bow("1\n2\n".as_bytes(), "a\nb\n".as_bytes()).is_err());
    }

    #[test]
    fn missing_documents_are_empty() {
        let (_, c) = load_uci_bow("3\n2\n1\n2 2 5\n".as_bytes(), "a\nb\n".as_bytes()).unwrap();
        assert_eq!(c.num_docs(), 3);
        assert!(c.doc(0).is_empty() && c.doc(2).is_empty());
    }

    #[test]
    fn tsv_resolves_terms() {
        let v = Vocabulary::new(vec!["x".into(), "y".into()]).unwrap();
        let c = load_tsv("d1\ty\t2\nd2\tx\t1\nd1\ty\t1\n".as_bytes(), &v).unwrap();
        assert_eq!(c.to_dense(), vec![vec![0, 3], vec![1, 0]]);
        assert!(load_tsv("d1\tz\t2\n".as_bytes(), &v).is_err());
        assert!(load_tsv("d1\tx\n".as_bytes(), &v).is_err());
    }
}
