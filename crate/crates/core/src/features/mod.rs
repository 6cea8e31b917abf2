//! Bag-of-words featurization: tokenization with negation merging, Porter
//! stemming, a frozen vocabulary, and sparse term-frequency vectors.

pub mod stem;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub use stem::stem;

const CLITIC: &str = "n't";

/// Tokenizer settings. Negators are matched after lowercasing; the clitic
/// `n't` is always a negator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub negators: Vec<String>,
    /// 1 for unigrams, 2 to add adjacent-pair tokens (`a_b`).
    pub ngram: usize,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer {
            negators: ["no", "not", "never", "cannot"].map(String::from).to_vec(),
            ngram: 1,
        }
    }
}

/// Tokenizes with the default settings.
pub fn tokenize(text: &str) -> Vec<String> {
    Tokenizer::default().tokenize(text)
}

fn split_words(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut words = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = lower.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            cur.push(c);
        } else if (c == '\'' || c == '\u{2019}')
            && !cur.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            cur.push('\'');
        } else if !cur.is_empty() {
            words.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

/// Splits `n't` clitics off and drops remaining apostrophes.
fn split_clitics(words: Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(words.len());
    for w in words {
        if let Some(base) = w.strip_suffix(CLITIC) {
            let base = match base {
                "ca" => "can",
                "wo" => "will",
                "sha" => "shall",
                other => other,
            };
            let base: String = base.chars().filter(|&c| c != '\'').collect();
            if !base.is_empty() {
                out.push(base);
            }
            out.push(CLITIC.to_string());
        } else {
            out.push(w.chars().filter(|&c| c != '\'').collect());
        }
    }
    out
}

impl Tokenizer {
    fn is_negator(&self, w: &str) -> bool {
        w == CLITIC || self.negators.iter().any(|n| n == w)
    }

    /// Lowercases, strips punctuation, stems, and merges each negator with
    /// the single following token into `not-<stem>`. A negator followed by
    /// another negator, or by nothing, is kept on its own (`n't` as `not`).
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let words = split_clitics(split_words(text));
        let mut tokens = Vec::with_capacity(words.len());
        let mut i = 0;
        while i < words.len() {
            let w = &words[i];
            if self.is_negator(w) {
                match words.get(i + 1) {
                    Some(next) if !self.is_negator(next) => {
                        tokens.push(format!("not-{}", stem(next)));
                        i += 2;
                        continue;
                    }
                    _ => tokens.push(if w == CLITIC { "not".to_string() } else { stem(w) }),
                }
            } else {
                tokens.push(stem(w));
            }
            i += 1;
        }
        if self.ngram >= 2 {
            let pairs: Vec<String> = tokens.windows(2).map(|p| format!("{}_{}", p[0], p[1])).collect();
            tokens.extend(pairs);
        }
        tokens
    }
}

/// Dense term index with corpus frequencies. Frozen once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    freqs: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps tokens seen at least `min_count` times, ordered by descending
    /// frequency with ties broken by the term itself.
    pub fn from_token_lists<'a, I>(lists: I, min_count: u64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        if min_count < 1 {
            return Err(Error::InvalidArgument("min_count must be at least 1".into()));
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for list in lists {
            for t in list {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut entries: Vec<(&str, u64)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_entries(entries.into_iter().map(|(t, c)| (t.to_string(), c)).collect())
    }

    pub fn build(corpus: &Corpus, tokenizer: &Tokenizer, min_count: u64) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let lists: Vec<Vec<String>> = corpus.docs().par_iter().map(|d| tokenizer.tokenize(&d.text)).collect();
        Self::from_token_lists(lists.iter().map(Vec::as_slice), min_count)
    }

    /// Rebuilds from `(term, frequency)` pairs in index order.
    pub fn from_entries(entries: Vec<(String, u64)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        let mut terms = Vec::with_capacity(entries.len());
        let mut freqs = Vec::with_capacity(entries.len());
        for (i, (t, f)) in entries.into_iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary term {t:?}")));
            }
            terms.push(t);
            freqs.push(f);
        }
        Ok(Vocabulary { terms, freqs, index })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn get(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, i: usize) -> &str {
        &self.terms[i]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn frequency(&self, i: usize) -> u64 {
        self.freqs[i]
    }

    /// Hex SHA-256 prefix over the ordered term list.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.terms {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let entries: Vec<(&str, u64)> = self.terms.iter().map(String::as_str).zip(self.freqs.iter().copied()).collect();
        entries.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let entries = Vec::<(String, u64)>::deserialize(d)?;
        Vocabulary::from_entries(entries).map_err(serde::de::Error::custom)
    }
}

/// Sparse vector with strictly increasing indices and no explicit zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector<T> {
    dim: usize,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> SparseVector<T> {
    pub fn zeros(dim: usize) -> Self {
        SparseVector {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Sums duplicate indices and drops zeros.
    pub fn from_pairs(dim: usize, mut pairs: Vec<(usize, T)>) -> Result<Self> {
        pairs.sort_by_key(|p| p.0);
        let mut indices: Vec<usize> = Vec::with_capacity(pairs.len());
        let mut values: Vec<T> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            if i >= dim {
                return Err(Error::DimensionMismatch { expected: dim, actual: i + 1 });
            }
            if !v.is_finite() {
                return Err(Error::NonFinite("sparse vector".into()));
            }
            if indices.last() == Some(&i) {
                *values.last_mut().expect("paired with index") += v;
            } else {
                indices.push(i);
                values.push(v);
            }
        }
        let (indices, values) = indices.into_iter().zip(values).filter(|(_, v)| *v != T::zero()).unzip();
        Ok(SparseVector { dim, indices, values })
    }

    pub fn from_dense(dense: &[T]) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != T::zero())
            .map(|(i, v)| (i, *v))
            .unzip();
        SparseVector {
            dim: dense.len(),
            indices,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut d = vec![T::zero(); self.dim];
        for (i, v) in self.iter() {
            d[i] = v;
        }
        d
    }

    pub fn dot(&self, other: &SparseVector<T>) -> T {
        let (mut a, mut b) = (0, 0);
        let mut acc = T::zero();
        while a < self.indices.len() && b < other.indices.len() {
            match self.indices[a].cmp(&other.indices[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[a] * other.values[b];
                    a += 1;
                    b += 1;
                }
            }
        }
        acc
    }

    pub fn dot_dense(&self, dense: &[T]) -> T {
        self.iter().fold(T::zero(), |acc, (i, v)| acc + v * dense[i])
    }

    pub fn scaled(&self, s: T) -> Self {
        SparseVector::from_pairs(self.dim, self.iter().map(|(i, v)| (i, v * s)).collect())
            .expect("indices already validated")
    }

    pub fn with_dim(mut self, dim: usize) -> Result<Self> {
        if let Some(&last) = self.indices.last() {
            if last >= dim {
                return Err(Error::DimensionMismatch { expected: dim, actual: last + 1 });
            }
        }
        self.dim = dim;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalize {
    None,
    #[default]
    L1,
    L2,
}

impl std::str::FromStr for Normalize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalize::None),
            "l1" => Ok(Normalize::L1),
            "l2" => Ok(Normalize::L2),
            other => Err(Error::InvalidArgument(format!("unknown normalization {other:?}"))),
        }
    }
}

/// Counts in-vocabulary tokens, then applies `normalize`.
pub fn vectorize<T: Real>(tokens: &[String], vocab: &Vocabulary, normalize: Normalize) -> SparseVector<T> {
    let pairs: Vec<(usize, T)> = tokens.iter().filter_map(|t| vocab.get(t)).map(|i| (i, T::one())).collect();
    let v = SparseVector::from_pairs(vocab.len(), pairs).expect("vocabulary indices are in range");
    let scale = match normalize {
        Normalize::None => return v,
        Normalize::L1 => v.values.iter().fold(T::zero(), |a, &x| a + x.abs()),
        Normalize::L2 => v.values.iter().fold(T::zero(), |a, &x| a + x * x).sqrt(),
    };
    if scale > T::zero() {
        v.scaled(T::one() / scale)
    } else {
        v
    }
}

/// Emotion-labeled feature vectors; `y[i]` indexes `classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub x: Vec<SparseVector<T>>,
    pub y: Vec<usize>,
    pub classes: Vec<String>,
}

impl<T> Dataset<T> {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes.len()];
        for &y in &self.y {
            c[y] += 1;
        }
        c
    }
}

/// Rating-labeled feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingDataset<T> {
    pub x: Vec<SparseVector<T>>,
    pub ratings: Vec<i64>,
}

/// A tokenizer, frozen vocabulary and normalization bundled together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub tokenizer: Tokenizer,
    pub vocabulary: Vocabulary,
    pub normalize: Normalize,
}

impl Featurizer {
    pub fn fit(corpus: &Corpus, tokenizer: Tokenizer, min_count: u64, normalize: Normalize) -> Result<Self> {
        let vocabulary = Vocabulary::build(corpus, &tokenizer, min_count)?;
        Ok(Featurizer {
            tokenizer,
            vocabulary,
            normalize,
        })
    }

    pub fn vectorize<T: Real>(&self, text: &str) -> SparseVector<T> {
        vectorize(&self.tokenizer.tokenize(text), &self.vocabulary, self.normalize)
    }

    pub fn dim(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn fingerprint(&self) -> String {
        self.vocabulary.fingerprint()
    }

    pub fn vectorize_all<T: Real>(&self, corpus: &Corpus) -> Vec<SparseVector<T>> {
        corpus.docs().par_iter().map(|d| self.vectorize(&d.text)).collect()
    }

    /// Vectorizes an emotion corpus against its own label set.
    pub fn dataset<T: Real>(&self, corpus: &Corpus) -> Result<Dataset<T>> {
        self.dataset_with_classes(corpus, &corpus.labels())
    }

    /// Vectorizes with a fixed class list; labels outside it are an error.
    pub fn dataset_with_classes<T: Real>(&self, corpus: &Corpus, classes: &[String]) -> Result<Dataset<T>> {
        let pos: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let y = corpus
            .docs()
            .iter()
            .map(|d| {
                let l = d.label.as_deref().ok_or_else(|| Error::InvalidArgument(format!("document {:?} has no label", d.id)))?;
                pos.get(l).copied().ok_or_else(|| Error::UnknownLabel(l.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            x: self.vectorize_all(corpus),
            y,
            classes: classes.to_vec(),
        })
    }

    pub fn rating_dataset<T: Real>(&self, corpus: &Corpus) -> Result<RatingDataset<T>> {
        let ratings = corpus
            .docs()
            .iter()
            .map(|d| d.rating.ok_or_else(|| Error::InvalidArgument(format!("document {:?} has no rating", d.id))))
            .collect::<Result<Vec<_>>>()?;
        Ok(RatingDataset {
            x: self.vectorize_all(corpus),
            ratings,
        })
    }
}
