use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore};

pub const UNK: &str = "<unk>";

/// Word vocabulary; id 0 is the unknown word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    /// Training-corpus counts, kept to pick the words that stay trainable.
    counts: Vec<usize>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Words seen at least `min_count` times, most frequent first (ties alphabetical).
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(words: I, min_count: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for w in words {
            *counts.entry(w).or_default() += 1;
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(w, c)| c >= min_count && w != UNK)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut words = vec![UNK.to_string()];
        let mut cs = vec![0];
        for (w, c) in kept {
            words.push(w.to_string());
            cs.push(c);
        }
        let mut v = Vocab {
            words,
            counts: cs,
            index: HashMap::new(),
        };
        v.reindex();
        v
    }

    /// Rebuilds the lookup table after deserialisation.
    pub fn reindex(&mut self) {
        self.index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 1
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(0)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn ids<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    /// Ids of the `k` most frequent words.
    pub fn most_common(&self, k: usize) -> Vec<usize> {
        (1..self.words.len()).take(k).collect()
    }
}

/// Reads a text embedding file: one word followed by `dim` floats per line.
/// Lines of the wrong width are skipped.
pub fn read_word_vectors(path: &Path, dim: usize, keep: Option<&Vocab>) -> Result<HashMap<String, Vec<f64>>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        if keep.is_some_and(|v| !v.contains(word)) {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        match vals {
            Ok(v) if v.len() == dim => {
                out.insert(word.to_string(), v);
            }
            _ => continue,
        }
    }
    Ok(out)
}

/// Copies pretrained rows into the embedding table and freezes them, except
/// for the `trainable_top` most frequent words. Returns the number of rows loaded.
pub fn apply_pretrained(
    store: &mut ParamStore,
    emb: ParamId,
    vocab: &Vocab,
    vectors: &HashMap<String, Vec<f64>>,
    trainable_top: usize,
) -> Result<usize> {
    let (rows, dim) = store.get(emb).dims2();
    if rows != vocab.len() {
        return Err(Error::ShapeMismatch {
            op: "apply_pretrained",
            left: vec![rows, dim],
            right: vec![vocab.len()],
        });
    }
    let trainable: HashSet<usize> = vocab.most_common(trainable_top).into_iter().collect();
    let mut frozen = vec![false; rows];
    let mut loaded = 0;
    let data = store.get_mut(emb).data_mut();
    for id in 1..rows {
        if let Some(v) = vectors.get(vocab.word(id)) {
            if v.len() != dim {
                return Err(Error::ShapeMismatch {
                    op: "apply_pretrained",
                    left: vec![dim],
                    right: vec![v.len()],
                });
            }
            data[id * dim..(id + 1) * dim].copy_from_slice(v);
            loaded += 1;
            frozen[id] = !trainable.contains(&id);
        }
    }
    store.set_frozen_rows(emb, frozen)?;
    Ok(loaded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::derive_rng;

    #[test]
    fn build_orders_by_frequency() {
        let v = Vocab::build("b a b c b a".split(' '), 1);
        assert_eq!(v.word(0), UNK);
        assert_eq!(v.word(1), "b");
        assert_eq!(v.word(2), "a");
        assert_eq!(v.id("zzz"), 0);
        let v2 = Vocab::build("b a b c b a".split(' '), 2);
        assert!(!v2.contains("c"));
    }

    #[test]
    fn pretrained_rows_are_frozen_except_top_words() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vec.txt");
        std::fs::write(&p, "b 1 2\na 3 4\nbad 1\nc 5 6\n").unwrap();
        let v = Vocab::build("b a b c b a".split(' '), 1);
        let vecs = read_word_vectors(&p, 2, Some(&v)).unwrap();
        assert_eq!(vecs.len(), 3);
        let mut store = ParamStore::new();
        let mut rng = derive_rng(0, "t", 0);
        let emb = store.add_glorot("emb", v.len(), 2, &mut rng).unwrap();
        assert_eq!(apply_pretrained(&mut store, emb, &v, &vecs, 1).unwrap(), 3);
        let frozen = store.param(emb).frozen_rows.clone().unwrap();
        assert_eq!(frozen, vec![false, false, true, true]);
        assert_eq!(&store.get(emb).data()[2..4], &[1.0, 2.0]);
    }
}
