//! Synthetic corpora with known generating distributions.
//!
//! Documents are bags of i.i.d. words drawn from a per-class categorical
//! distribution. Word strings are chosen so that tokenization and stemming
//! leave them unchanged (`w000`, `v012`, ...).

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use super::{Corpus, CorpusKind, Document};
use crate::error::{Error, Result};

/// Generating spec for one emotion class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub label: String,
    /// Categorical distribution over the shared vocabulary.
    pub distribution: Vec<f64>,
    pub docs: usize,
}

/// Generating spec for one rating level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSpec {
    pub rating: i64,
    pub distribution: Vec<f64>,
    pub docs: usize,
}

fn check_distribution(p: &[f64], vocab_len: usize, what: &str) -> Result<()> {
    if p.len() != vocab_len {
        return Err(Error::InvalidArgument(format!(
            "{what}: distribution has {} entries, vocabulary has {vocab_len}",
            p.len()
        )));
    }
    if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "{what}: probabilities must be finite and non-negative"
        )));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "{what}: probabilities sum to {s}, not 1"
        )));
    }
    Ok(())
}

fn sample_text<R: Rng>(rng: &mut R, vocab: &[String], dist: &WeightedIndex<f64>, len: usize) -> String {
    let mut text = String::with_capacity(len * 6);
    for k in 0..len {
        if k > 0 {
            text.push(' ');
        }
        text.push_str(&vocab[dist.sample(rng)]);
    }
    text
}

/// Samples `docs` documents of `doc_length` words per class. Deterministic in
/// `seed`; document ids are `d000000`, `d000001`, ... in generation order.
pub fn generate_synthetic(
    vocabulary: &[String],
    classes: &[ClassSpec],
    doc_length: usize,
    seed: u64,
) -> Result<Corpus> {
    if doc_length == 0 {
        return Err(Error::InvalidArgument("doc_length must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::new();
    for spec in classes {
        check_distribution(&spec.distribution, vocabulary.len(), &spec.label)?;
        if spec.docs == 0 {
            return Err(Error::InvalidArgument(format!(
                "class {:?} has zero documents",
                spec.label
            )));
        }
        let dist = WeightedIndex::new(&spec.distribution)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for _ in 0..spec.docs {
            let text = sample_text(&mut rng, vocabulary, &dist, doc_length);
            docs.push(Document::emotion(format!("d{:06}", docs.len()), text, &spec.label));
        }
    }
    Corpus::new(CorpusKind::Emotion, docs)
}

/// Rating-corpus counterpart of [`generate_synthetic`].
pub fn generate_rating_synthetic(
    vocabulary: &[String],
    levels: &[LevelSpec],
    doc_length: usize,
    seed: u64,
) -> Result<Corpus> {
    if doc_length == 0 {
        return Err(Error::InvalidArgument("doc_length must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::new();
    for spec in levels {
        check_distribution(&spec.distribution, vocabulary.len(), &format!("rating {}", spec.rating))?;
        if spec.docs == 0 {
            return Err(Error::InvalidArgument(format!(
                "rating {} has zero documents",
                spec.rating
            )));
        }
        let dist = WeightedIndex::new(&spec.distribution)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for _ in 0..spec.docs {
            let text = sample_text(&mut rng, vocabulary, &dist, doc_length);
            docs.push(Document::rated(format!("r{:06}", docs.len()), text, spec.rating));
        }
    }
    Corpus::new(CorpusKind::Rating, docs)
}

/// `prefix000`, `prefix001`, ...
pub fn word_list(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:03}")).collect()
}

fn normalize(mut p: Vec<f64>) -> Vec<f64> {
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

/// Classes grouped into super-topics: each class mixes its topic's shared
/// word block (weight `shared_fraction`) with a block of its own words.
/// A uniform background over the whole vocabulary takes `background_fraction`.
#[derive(Debug, Clone)]
pub struct SuperTopicLayout {
    pub topics: usize,
    pub classes_per_topic: usize,
    pub shared_fraction: f64,
    pub topic_words: usize,
    pub class_words: usize,
    pub background_words: usize,
    pub background_fraction: f64,
}

impl SuperTopicLayout {
    pub fn class_label(topic: usize, member: usize) -> String {
        format!("t{topic}c{member}")
    }

    /// Returns the vocabulary and one spec per class, `docs` documents each.
    pub fn build(&self, docs: usize) -> (Vec<String>, Vec<ClassSpec>) {
        let n_classes = self.topics * self.classes_per_topic;
        let topic_base = 0;
        let class_base = self.topics * self.topic_words;
        let bg_base = class_base + n_classes * self.class_words;
        let vocab = word_list("w", bg_base + self.background_words);
        let mut specs = Vec::with_capacity(n_classes);
        for t in 0..self.topics {
            for m in 0..self.classes_per_topic {
                let c = t * self.classes_per_topic + m;
                let mut p = vec![0.0; vocab.len()];
                let fg = 1.0 - self.background_fraction;
                for w in 0..self.topic_words {
                    p[topic_base + t * self.topic_words + w] +=
                        fg * self.shared_fraction / self.topic_words as f64;
                }
                for w in 0..self.class_words {
                    p[class_base + c * self.class_words + w] +=
                        fg * (1.0 - self.shared_fraction) / self.class_words as f64;
                }
                for x in p.iter_mut() {
                    *x += self.background_fraction / vocab.len() as f64;
                }
                specs.push(ClassSpec {
                    label: Self::class_label(t, m),
                    distribution: normalize(p),
                    docs,
                });
            }
        }
        (vocab, specs)
    }
}

/// Pairs of near-identical classes ("twins"). Each pair owns a block of
/// words; the twins differ only in a small private block of weight
/// `twin_fraction`. Every class also draws `shared_fraction` of its words
/// from a block common to all pairs.
#[derive(Debug, Clone)]
pub struct PlantedPairs {
    pub pairs: usize,
    pub pair_words: usize,
    pub private_words: usize,
    pub twin_fraction: f64,
    pub shared_words: usize,
    pub shared_fraction: f64,
}

impl PlantedPairs {
    pub fn label(pair: usize, twin: usize) -> String {
        format!("p{pair}{}", if twin == 0 { 'a' } else { 'b' })
    }

    pub fn build(&self, docs: usize) -> (Vec<String>, Vec<ClassSpec>) {
        let pair_base = self.shared_words;
        let private_base = pair_base + self.pairs * self.pair_words;
        let vocab = word_list("w", private_base + self.pairs * 2 * self.private_words);
        let mut specs = Vec::new();
        for p in 0..self.pairs {
            for twin in 0..2 {
                let mut dist = vec![0.0; vocab.len()];
                for x in &mut dist[..self.shared_words] {
                    *x += self.shared_fraction / self.shared_words as f64;
                }
                let own = 1.0 - self.shared_fraction;
                for w in 0..self.pair_words {
                    dist[pair_base + p * self.pair_words + w] +=
                        own * (1.0 - self.twin_fraction) / self.pair_words as f64;
                }
                let base = private_base + (2 * p + twin) * self.private_words;
                for w in 0..self.private_words {
                    dist[base + w] += own * self.twin_fraction / self.private_words as f64;
                }
                specs.push(ClassSpec {
                    label: Self::label(p, twin),
                    distribution: normalize(dist),
                    docs,
                });
            }
        }
        (vocab, specs)
    }
}

/// A planted two-dimensional emotion space: words and emotions have
/// positions, and a document at latent point `z` draws words with
/// probability proportional to `exp(-|z - pos|^2 / (2 h^2))`.
///
/// Axis 0 plays the role of sentiment (positive to the right), axis 1 of
/// engagement.
#[derive(Debug, Clone)]
pub struct LatentWorld {
    pub words: Vec<(String, [f64; 2])>,
    pub emotions: Vec<(String, [f64; 2])>,
    pub bandwidth: f64,
    pub background_fraction: f64,
    pub doc_spread: f64,
}

/// A review domain living on a straight latent segment inside a
/// [`LatentWorld`]. Reviews also contain non-emotional domain words
/// (`v000`, ...) whose usage shifts with the rating.
#[derive(Debug, Clone)]
pub struct ReviewDomain {
    pub levels: Vec<i64>,
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub spread: f64,
    pub emotional_fraction: f64,
    pub topical_words: usize,
    pub topical_signal: f64,
}

impl Default for ReviewDomain {
    fn default() -> Self {
        ReviewDomain {
            levels: (1..=5).collect(),
            start: [-1.0, 0.4],
            end: [1.0, 0.4],
            spread: 0.35,
            emotional_fraction: 0.8,
            topical_words: 60,
            topical_signal: 1.0,
        }
    }
}

impl LatentWorld {
    /// `n_emotions` on the unit circle (the first at angle 0), `n_words`
    /// emotional words on a jittered square grid covering [-1.6, 1.6]^2.
    pub fn new(n_emotions: usize, n_words: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = (n_words as f64).sqrt().ceil() as usize;
        let step = 3.2 / side as f64;
        let words = (0..n_words)
            .map(|i| {
                let (gx, gy) = (i % side, i / side);
                let jx: f64 = rng.random_range(-0.3..0.3);
                let jy: f64 = rng.random_range(-0.3..0.3);
                let pos = [
                    -1.6 + (gx as f64 + 0.5 + jx) * step,
                    -1.6 + (gy as f64 + 0.5 + jy) * step,
                ];
                (format!("w{i:03}"), pos)
            })
            .collect();
        let emotions = (0..n_emotions)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / n_emotions as f64;
                (format!("e{k:02}"), [a.cos(), a.sin()])
            })
            .collect();
        LatentWorld {
            words,
            emotions,
            bandwidth: 0.5,
            background_fraction: 0.2,
            doc_spread: 0.3,
        }
    }

    pub fn word_distribution(&self, z: [f64; 2]) -> Vec<f64> {
        let h2 = 2.0 * self.bandwidth * self.bandwidth;
        let kernel: Vec<f64> = self
            .words
            .iter()
            .map(|(_, p)| (-((z[0] - p[0]).powi(2) + (z[1] - p[1]).powi(2)) / h2).exp())
            .collect();
        let ks: f64 = kernel.iter().sum();
        let n = self.words.len() as f64;
        kernel
            .into_iter()
            .map(|k| (1.0 - self.background_fraction) * k / ks + self.background_fraction / n)
            .collect()
    }

    fn word_strings(&self) -> Vec<String> {
        self.words.iter().map(|(w, _)| w.clone()).collect()
    }

    /// Emotion-labeled documents; each document's latent point is jittered
    /// around its emotion's position by `doc_spread`.
    pub fn emotion_corpus(&self, docs_per_class: usize, doc_length: usize, seed: u64) -> Result<Corpus> {
        if docs_per_class == 0 || doc_length == 0 {
            return Err(Error::InvalidArgument(
                "docs_per_class and doc_length must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.doc_spread).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let vocab = self.word_strings();
        let mut docs = Vec::new();
        for (label, pos) in &self.emotions {
            for _ in 0..docs_per_class {
                let z = [pos[0] + noise.sample(&mut rng), pos[1] + noise.sample(&mut rng)];
                let dist = WeightedIndex::new(self.word_distribution(z))
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                let text = sample_text(&mut rng, &vocab, &dist, doc_length);
                docs.push(Document::emotion(format!("d{:06}", docs.len()), text, label));
            }
        }
        Corpus::new(CorpusKind::Emotion, docs)
    }

    /// Latent anchor of level index `i` on the domain's segment.
    pub fn level_anchor(domain: &ReviewDomain, i: usize) -> [f64; 2] {
        let t = if domain.levels.len() > 1 {
            i as f64 / (domain.levels.len() - 1) as f64
        } else {
            0.5
        };
        [
            domain.start[0] + t * (domain.end[0] - domain.start[0]),
            domain.start[1] + t * (domain.end[1] - domain.start[1]),
        ]
    }

    /// Reviews for every level of `domain`, `docs_per_level` each.
    pub fn rating_corpus(
        &self,
        domain: &ReviewDomain,
        docs_per_level: usize,
        doc_length: usize,
        seed: u64,
    ) -> Result<Corpus> {
        if docs_per_level == 0 || doc_length == 0 || domain.levels.is_empty() {
            return Err(Error::InvalidArgument(
                "levels, docs_per_level and doc_length must be non-empty".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, domain.spread).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let emo_vocab = self.word_strings();
        let topical_vocab = word_list("v", domain.topical_words);
        let r = domain.levels.len();
        let mut docs = Vec::new();
        for (li, &rating) in domain.levels.iter().enumerate() {
            let anchor = Self::level_anchor(domain, li);
            let level_pos = if r > 1 { 2.0 * li as f64 / (r - 1) as f64 - 1.0 } else { 0.0 };
            let topical = (domain.topical_words > 0).then(|| {
                let w: Vec<f64> = (0..domain.topical_words)
                    .map(|j| {
                        let slope = if domain.topical_words > 1 {
                            2.0 * j as f64 / (domain.topical_words - 1) as f64 - 1.0
                        } else {
                            0.0
                        };
                        (domain.topical_signal * slope * level_pos).exp()
                    })
                    .collect();
                WeightedIndex::new(w).expect("positive weights")
            });
            for _ in 0..docs_per_level {
                let z = [anchor[0] + noise.sample(&mut rng), anchor[1] + noise.sample(&mut rng)];
                let emo = WeightedIndex::new(self.word_distribution(z))
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                let mut words = Vec::with_capacity(doc_length);
                for _ in 0..doc_length {
                    let use_emotional = topical.is_none() || rng.random::<f64>() < domain.emotional_fraction;
                    if use_emotional {
                        words.push(emo_vocab[emo.sample(&mut rng)].as_str());
                    } else {
                        let t = topical.as_ref().expect("checked");
                        words.push(topical_vocab[t.sample(&mut rng)].as_str());
                    }
                }
                docs.push(Document::rated(format!("r{:06}", docs.len()), words.join(" "), rating));
            }
        }
        Corpus::new(CorpusKind::Rating, docs)
    }
}
