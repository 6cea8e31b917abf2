//! Labeled text corpora: JSONL loading, canonical serialization, stratified
//! splitting and synthetic generation.

pub mod synth;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synth::{generate_synthetic, ClassSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    Emotion,
    Rating,
}

impl std::str::FromStr for CorpusKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "emotion" => Ok(CorpusKind::Emotion),
            "rating" => Ok(CorpusKind::Rating),
            other => Err(Error::InvalidArgument(format!("unknown corpus kind {other:?}"))),
        }
    }
}

/// One raw document. Exactly one of `label` / `rating` is set, depending on
/// the corpus kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<i64>,
}

impl Document {
    pub fn emotion(id: impl Into<String>, text: impl Into<String>, label: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            label: Some(label.into()),
            rating: None,
        }
    }

    pub fn rated(id: impl Into<String>, text: impl Into<String>, rating: i64) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            label: None,
            rating: Some(rating),
        }
    }

    fn kind(&self) -> Option<CorpusKind> {
        match (&self.label, &self.rating) {
            (Some(_), None) => Some(CorpusKind::Emotion),
            (None, Some(_)) => Some(CorpusKind::Rating),
            _ => None,
        }
    }

    /// Stratum key used for splitting: the label, or the rating rendered as text.
    fn stratum(&self) -> String {
        match (&self.label, self.rating) {
            (Some(l), _) => l.clone(),
            (None, Some(r)) => format!("{r:020}"),
            (None, None) => String::new(),
        }
    }
}

/// An ordered, validated collection of documents of a single kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    kind: CorpusKind,
    docs: Vec<Document>,
}

impl Corpus {
    /// Validates and wraps `docs`. Emotion corpora need at least two labels.
    pub fn new(kind: CorpusKind, docs: Vec<Document>) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut seen = HashSet::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            check_kind(doc, kind, i + 1)?;
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::DuplicateId {
                    id: doc.id.clone(),
                    line: i + 1,
                });
            }
        }
        let corpus = Corpus { kind, docs };
        if kind == CorpusKind::Emotion && corpus.labels().len() < 2 {
            return Err(Error::InvalidArgument(
                "emotion corpus needs at least two distinct labels".into(),
            ));
        }
        Ok(corpus)
    }

    /// Builds a corpus that may violate the two-label minimum (split halves,
    /// binary task subsets). Kind and id checks still apply.
    pub(crate) fn subset(kind: CorpusKind, docs: Vec<Document>) -> Self {
        Corpus { kind, docs }
    }

    pub fn kind(&self) -> CorpusKind {
        self.kind
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Distinct labels in lexicographic order.
    pub fn labels(&self) -> Vec<String> {
        self.docs
            .iter()
            .filter_map(|d| d.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Distinct ratings in ascending order.
    pub fn rating_levels(&self) -> Vec<i64> {
        self.docs
            .iter()
            .filter_map(|d| d.rating)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Writes the canonical JSONL form, one record per line with LF endings.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for doc in &self.docs {
            serde_json::to_writer(&mut out, doc)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

fn check_kind(doc: &Document, kind: CorpusKind, line: usize) -> Result<()> {
    match doc.kind() {
        Some(k) if k == kind => Ok(()),
        Some(_) => Err(Error::Parse {
            line,
            message: format!("record kind does not match a {kind:?} corpus"),
        }),
        None => Err(Error::Parse {
            line,
            message: "record must carry exactly one of \"label\" or \"rating\"".into(),
        }),
    }
}

/// Streams documents from JSONL without holding the whole file in memory.
pub struct CorpusReader<R> {
    lines: std::io::Lines<R>,
    kind: CorpusKind,
    line: usize,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R, kind: CorpusKind) -> Self {
        CorpusReader {
            lines: reader.lines(),
            kind,
            line: 0,
        }
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        let raw = self.lines.next()?;
        self.line += 1;
        let line = self.line;
        Some(raw.map_err(Error::from).and_then(|raw| {
            let raw = raw.strip_suffix('\r').unwrap_or(&raw);
            let doc: Document = serde_json::from_str(raw).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            check_kind(&doc, self.kind, line)?;
            Ok(doc)
        }))
    }
}

/// Loads a corpus from a reader, preserving record order.
pub fn read_corpus<R: BufRead>(reader: R, kind: CorpusKind) -> Result<Corpus> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, doc) in CorpusReader::new(reader, kind).enumerate() {
        let doc = doc?;
        if !seen.insert(doc.id.clone()) {
            return Err(Error::DuplicateId {
                id: doc.id,
                line: i + 1,
            });
        }
        docs.push(doc);
    }
    Corpus::new(kind, docs)
}

pub fn load_corpus(path: &Path, kind: CorpusKind) -> Result<Corpus> {
    let file = File::open(path)?;
    read_corpus(BufReader::new(file), kind)
}

/// Train/test split parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Self {
        SplitSpec {
            train_fraction,
            seed,
        }
    }
}

/// Stratified split. The train side has `round(train_fraction * n)` documents,
/// allotted to strata by largest remainder; every stratum keeps at least one
/// training document when the total allows it. Both halves keep file order.
pub fn split(corpus: &Corpus, spec: SplitSpec) -> Result<(Corpus, Corpus)> {
    let f = spec.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {f} outside (0, 1)"
        )));
    }
    let total = (f * corpus.len() as f64).round() as usize;
    split_by_count(corpus, total, spec.seed)
}

/// Stratified sample of exactly `train_count` documents; the rest form the
/// second corpus.
pub fn split_by_count(corpus: &Corpus, train_count: usize, seed: u64) -> Result<(Corpus, Corpus)> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if train_count > corpus.len() {
        return Err(Error::InvalidArgument(format!(
            "train count {train_count} exceeds corpus size {}",
            corpus.len()
        )));
    }
    let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, d) in corpus.docs.iter().enumerate() {
        strata.entry(d.stratum()).or_default().push(i);
    }
    let n = corpus.len() as f64;
    let frac = train_count as f64 / n;

    let sizes: Vec<usize> = strata.values().map(Vec::len).collect();
    let mut alloc: Vec<usize> = sizes
        .iter()
        .map(|&s| (frac * s as f64).floor() as usize)
        .collect();
    let mut remaining = train_count - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // largest fractional remainder first; ties to the earlier stratum
    order.sort_by(|&a, &b| {
        let ra = frac * sizes[a] as f64 - alloc[a] as f64;
        let rb = frac * sizes[b] as f64 - alloc[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &s in &order {
        if remaining == 0 {
            break;
        }
        if alloc[s] < sizes[s] {
            alloc[s] += 1;
            remaining -= 1;
        }
    }
    // every stratum represented in train when the budget allows
    for s in 0..alloc.len() {
        if alloc[s] == 0 && train_count >= alloc.len() {
            if let Some(donor) = (0..alloc.len())
                .filter(|&t| alloc[t] > 1)
                .max_by(|&a, &b| alloc[a].cmp(&alloc[b]).then(b.cmp(&a)))
            {
                alloc[donor] -= 1;
                alloc[s] += 1;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec_seed(seed));
    let mut in_train = vec![false; corpus.len()];
    for (members, &take) in strata.values().zip(&alloc) {
        let mut members = members.clone();
        members.shuffle(&mut rng);
        for &i in &members[..take] {
            in_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (doc, &t) in corpus.docs.iter().zip(&in_train) {
        if t {
            train.push(doc.clone());
        } else {
            test.push(doc.clone());
        }
    }
    Ok((
        Corpus::subset(corpus.kind, train),
        Corpus::subset(corpus.kind, test),
    ))
}

fn spec_seed(seed: u64) -> u64 {
    seed ^ 0x5851_f42d_4c95_7f2d
}
