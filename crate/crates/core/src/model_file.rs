//! Versioned JSON container for every fitted model.
//!
//! Dense matrices are stored as `{"shape": [rows, cols], "data": [[..], ..]}`.
//! No timestamps are written, so saving the same model twice gives identical
//! bytes.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::{LinRegModel, LogRegOvaModel};
use crate::classify::EmotionClassifier;
use crate::error::{Error, Result};
use crate::features::Featurizer;
use crate::gaussian::{CovarianceSpec, GaussianClassModel};
use crate::manifold::ManifoldModel;
use crate::sentiment::SentimentModel;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixRecord {
    pub shape: [usize; 2],
    pub data: Vec<Vec<f64>>,
}

impl From<&DMatrix<f64>> for MatrixRecord {
    fn from(m: &DMatrix<f64>) -> Self {
        MatrixRecord {
            shape: [m.nrows(), m.ncols()],
            data: m.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }
}

impl MatrixRecord {
    pub fn to_matrix(&self, what: &str) -> Result<DMatrix<f64>> {
        let [r, c] = self.shape;
        if self.data.len() != r || self.data.iter().any(|row| row.len() != c) {
            return Err(Error::ModelFile(format!("{what}: data does not match shape {r}x{c}")));
        }
        Ok(DMatrix::from_fn(r, c, |i, j| self.data[i][j]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldRecord {
    pub labels: Vec<String>,
    pub vocab_fingerprint: String,
    pub ridge: f64,
    pub sigma_x: Option<f64>,
    /// `d x l`
    pub theta: MatrixRecord,
    pub intercept: Vec<f64>,
    /// `C x l`
    pub mu: MatrixRecord,
    pub eigenvalues: Vec<f64>,
}

impl From<&ManifoldModel<f64>> for ManifoldRecord {
    fn from(m: &ManifoldModel<f64>) -> Self {
        ManifoldRecord {
            labels: m.labels.clone(),
            vocab_fingerprint: m.vocab_fingerprint.clone(),
            ridge: m.ridge,
            sigma_x: m.sigma_x,
            theta: (&m.theta).into(),
            intercept: m.intercept.iter().copied().collect(),
            mu: (&m.mu).into(),
            eigenvalues: m.eigenvalues.iter().copied().collect(),
        }
    }
}

impl ManifoldRecord {
    pub fn to_model(&self) -> Result<ManifoldModel<f64>> {
        let theta = self.theta.to_matrix("theta")?;
        let mu = self.mu.to_matrix("mu")?;
        let l = theta.ncols();
        if self.intercept.len() != l || mu.ncols() != l || mu.nrows() != self.labels.len() {
            return Err(Error::ModelFile("manifold parameter shapes disagree".into()));
        }
        Ok(ManifoldModel {
            labels: self.labels.clone(),
            theta,
            intercept: DVector::from_vec(self.intercept.clone()),
            mu,
            eigenvalues: DVector::from_vec(self.eigenvalues.clone()),
            vocab_fingerprint: self.vocab_fingerprint.clone(),
            ridge: self.ridge,
            sigma_x: self.sigma_x,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianRecord {
    pub labels: Vec<String>,
    pub spec: CovarianceSpec,
    pub priors: Vec<f64>,
    pub counts: Vec<usize>,
    /// `C x l`
    pub means: MatrixRecord,
    /// One matrix when pooled, one per class otherwise.
    pub covariances: Vec<MatrixRecord>,
}

impl From<&GaussianClassModel<f64>> for GaussianRecord {
    fn from(g: &GaussianClassModel<f64>) -> Self {
        let means = g.means();
        let l = g.dim();
        let m = DMatrix::from_fn(means.len(), l, |i, j| means[i][j]);
        GaussianRecord {
            labels: g.labels.clone(),
            spec: g.spec,
            priors: g.priors.clone(),
            counts: g.counts.clone(),
            means: (&m).into(),
            covariances: g.covariances().iter().map(Into::into).collect(),
        }
    }
}

impl GaussianRecord {
    pub fn to_model(&self) -> Result<GaussianClassModel<f64>> {
        let means = self.means.to_matrix("means")?;
        let covs = self
            .covariances
            .iter()
            .map(|c| c.to_matrix("covariance"))
            .collect::<Result<Vec<_>>>()?;
        GaussianClassModel::from_parts(
            self.labels.clone(),
            means.row_iter().map(|r| r.transpose()).collect(),
            covs,
            self.priors.clone(),
            self.counts.clone(),
            self.spec,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_type", rename_all = "kebab-case")]
pub enum Payload {
    Manifold {
        featurizer: Featurizer,
        manifold: ManifoldRecord,
    },
    EmotionClassifier {
        featurizer: Featurizer,
        manifold: ManifoldRecord,
        gaussians: GaussianRecord,
    },
    Sentiment {
        featurizer: Featurizer,
        manifold: ManifoldRecord,
        levels: Vec<i64>,
        degenerate: bool,
        gaussians: GaussianRecord,
    },
    LogregOva {
        featurizer: Featurizer,
        labels: Vec<String>,
        reg: f64,
        /// `C x d`
        weights: MatrixRecord,
        biases: Vec<f64>,
    },
    Linreg {
        featurizer: Featurizer,
        levels: Vec<i64>,
        reg: f64,
        weights: Vec<f64>,
        bias: f64,
    },
}

impl Payload {
    pub fn model_type(&self) -> &'static str {
        match self {
            Payload::Manifold { .. } => "manifold",
            Payload::EmotionClassifier { .. } => "emotion-classifier",
            Payload::Sentiment { .. } => "sentiment",
            Payload::LogregOva { .. } => "logreg-ova",
            Payload::Linreg { .. } => "linreg",
        }
    }

    pub fn featurizer(&self) -> &Featurizer {
        match self {
            Payload::Manifold { featurizer, .. }
            | Payload::EmotionClassifier { featurizer, .. }
            | Payload::Sentiment { featurizer, .. }
            | Payload::LogregOva { featurizer, .. }
            | Payload::Linreg { featurizer, .. } => featurizer,
        }
    }
}

/// Free-form provenance without timestamps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub generator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Metadata {
    pub fn new(command: &str, seed: Option<u64>) -> Self {
        Metadata {
            generator: format!("moodmap {}", env!("CARGO_PKG_VERSION")),
            command: Some(command.to_string()),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    #[serde(flatten)]
    pub payload: Payload,
    pub metadata: Metadata,
}

fn check_fingerprint(featurizer: &Featurizer, model_fp: &str) -> Result<()> {
    let fp = featurizer.fingerprint();
    if fp != model_fp {
        return Err(Error::FingerprintMismatch {
            model: model_fp.to_string(),
            input: fp,
        });
    }
    Ok(())
}

impl ModelFile {
    pub fn new(payload: Payload, metadata: Metadata) -> Self {
        ModelFile {
            format_version: FORMAT_VERSION,
            payload,
            metadata,
        }
    }

    pub fn manifold(featurizer: &Featurizer, m: &ManifoldModel<f64>, metadata: Metadata) -> Self {
        Self::new(
            Payload::Manifold {
                featurizer: featurizer.clone(),
                manifold: m.into(),
            },
            metadata,
        )
    }

    pub fn classifier(featurizer: &Featurizer, c: &EmotionClassifier<f64>, metadata: Metadata) -> Self {
        Self::new(
            Payload::EmotionClassifier {
                featurizer: featurizer.clone(),
                manifold: (&c.manifold).into(),
                gaussians: (&c.gaussians).into(),
            },
            metadata,
        )
    }

    pub fn sentiment(featurizer: &Featurizer, s: &SentimentModel<f64>, metadata: Metadata) -> Self {
        Self::new(
            Payload::Sentiment {
                featurizer: featurizer.clone(),
                manifold: (&s.manifold).into(),
                levels: s.levels.clone(),
                degenerate: s.degenerate,
                gaussians: (&s.gaussians).into(),
            },
            metadata,
        )
    }

    pub fn logreg(featurizer: &Featurizer, m: &LogRegOvaModel<f64>, metadata: Metadata) -> Self {
        Self::new(
            Payload::LogregOva {
                featurizer: featurizer.clone(),
                labels: m.labels.clone(),
                reg: m.reg,
                weights: (&m.weights).into(),
                biases: m.biases.iter().copied().collect(),
            },
            metadata,
        )
    }

    pub fn linreg(featurizer: &Featurizer, m: &LinRegModel<f64>, metadata: Metadata) -> Self {
        Self::new(
            Payload::Linreg {
                featurizer: featurizer.clone(),
                levels: m.levels.clone(),
                reg: m.reg,
                weights: m.weights.iter().copied().collect(),
                bias: m.bias,
            },
            metadata,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        match raw.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => return Err(Error::ModelFile(format!("unsupported format_version {v}"))),
            None => return Err(Error::ModelFile("missing format_version".into())),
        }
        let file: ModelFile = serde_json::from_value(raw)?;
        file.validate()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Cross-component consistency: fingerprints and shapes.
    fn validate(&self) -> Result<()> {
        match &self.payload {
            Payload::Manifold { .. } => {
                self.manifold_model()?;
            }
            Payload::EmotionClassifier { .. } => {
                self.classifier_model()?;
            }
            Payload::Sentiment { .. } => {
                self.sentiment_model()?;
            }
            Payload::LogregOva { .. } => {
                self.logreg_model()?;
            }
            Payload::Linreg { .. } => {
                self.linreg_model()?;
            }
        }
        Ok(())
    }

    pub fn featurizer(&self) -> &Featurizer {
        self.payload.featurizer()
    }

    fn wrong_type(&self, wanted: &str) -> Error {
        Error::ModelFile(format!(
            "expected a {wanted} model, found {}",
            self.payload.model_type()
        ))
    }

    fn checked_manifold(featurizer: &Featurizer, rec: &ManifoldRecord) -> Result<ManifoldModel<f64>> {
        check_fingerprint(featurizer, &rec.vocab_fingerprint)?;
        let m = rec.to_model()?;
        if m.input_dim() != featurizer.dim() {
            return Err(Error::ModelFile("theta rows do not match the vocabulary".into()));
        }
        Ok(m)
    }

    /// The manifold of any manifold-based model.
    pub fn manifold_model(&self) -> Result<ManifoldModel<f64>> {
        match &self.payload {
            Payload::Manifold { featurizer, manifold }
            | Payload::EmotionClassifier { featurizer, manifold, .. }
            | Payload::Sentiment { featurizer, manifold, .. } => Self::checked_manifold(featurizer, manifold),
            _ => Err(self.wrong_type("manifold-based")),
        }
    }

    pub fn classifier_model(&self) -> Result<EmotionClassifier<f64>> {
        match &self.payload {
            Payload::EmotionClassifier {
                featurizer,
                manifold,
                gaussians,
            } => {
                let m = Self::checked_manifold(featurizer, manifold)?;
                let g = gaussians.to_model()?;
                if m.labels == g.labels {
                    EmotionClassifier::new(m, g)
                } else if m.dim() == g.dim() {
                    Ok(EmotionClassifier { manifold: m, gaussians: g })
                } else {
                    Err(Error::ModelFile("gaussian dimension differs from the manifold".into()))
                }
            }
            _ => Err(self.wrong_type("emotion-classifier")),
        }
    }

    pub fn sentiment_model(&self) -> Result<SentimentModel<f64>> {
        match &self.payload {
            Payload::Sentiment {
                featurizer,
                manifold,
                levels,
                degenerate,
                gaussians,
            } => {
                let m = Self::checked_manifold(featurizer, manifold)?;
                let g = gaussians.to_model()?;
                let expected: Vec<String> = levels.iter().map(|r| r.to_string()).collect();
                if g.labels != expected || g.dim() != m.dim() {
                    return Err(Error::ModelFile("sentiment levels or dimensions disagree".into()));
                }
                Ok(SentimentModel {
                    levels: levels.clone(),
                    gaussians: g,
                    manifold: m,
                    degenerate: *degenerate,
                })
            }
            _ => Err(self.wrong_type("sentiment")),
        }
    }

    pub fn logreg_model(&self) -> Result<LogRegOvaModel<f64>> {
        match &self.payload {
            Payload::LogregOva {
                featurizer,
                labels,
                reg,
                weights,
                biases,
            } => {
                let w = weights.to_matrix("weights")?;
                if w.nrows() != labels.len() || biases.len() != labels.len() || w.ncols() != featurizer.dim() {
                    return Err(Error::ModelFile("logistic parameter shapes disagree".into()));
                }
                Ok(LogRegOvaModel {
                    labels: labels.clone(),
                    weights: w,
                    biases: DVector::from_vec(biases.clone()),
                    reg: *reg,
                    vocab_fingerprint: featurizer.fingerprint(),
                })
            }
            _ => Err(self.wrong_type("logreg-ova")),
        }
    }

    pub fn linreg_model(&self) -> Result<LinRegModel<f64>> {
        match &self.payload {
            Payload::Linreg {
                featurizer,
                levels,
                reg,
                weights,
                bias,
            } => {
                if weights.len() != featurizer.dim() || levels.is_empty() {
                    return Err(Error::ModelFile("linear regression parameter shapes disagree".into()));
                }
                Ok(LinRegModel {
                    weights: DVector::from_vec(weights.clone()),
                    bias: *bias,
                    reg: *reg,
                    levels: levels.clone(),
                    vocab_fingerprint: featurizer.fingerprint(),
                })
            }
            _ => Err(self.wrong_type("linreg")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, CorpusKind, Document};
    use crate::features::{Normalize, Tokenizer};
    use crate::gaussian::{Pooling, Structure};
    use crate::manifold::ManifoldConfig;

    fn corpus() -> Corpus {
        let docs = [
            ("happy joy sun", "happy"),
            ("joy smile happy", "happy"),
            ("sad rain tears", "sad"),
            ("tears gloom sad", "sad"),
            ("bored dull wait", "bored"),
            ("dull wait yawn", "bored"),
        ]
        .iter()
        .enumerate()
        .map(|(i, (t, l))| Document::emotion(format!("d{i}"), *t, *l))
        .collect();
        Corpus::new(CorpusKind::Emotion, docs).unwrap()
    }

    fn classifier_file() -> (Featurizer, ModelFile) {
        let c = corpus();
        let f = Featurizer::fit(&c, Tokenizer::default(), 1, Normalize::L1).unwrap();
        let ds = f.dataset(&c).unwrap();
        let clf = EmotionClassifier::fit(
            &ds,
            f.dim(),
            &f.fingerprint(),
            &ManifoldConfig::default(),
            &CovarianceSpec::new(Structure::Full, Pooling::Pooled),
        )
        .unwrap();
        let file = ModelFile::classifier(&f, &clf, Metadata::new("test", Some(1)));
        (f, file)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let (_, file) = classifier_file();
        let a = file.to_json().unwrap();
        let loaded = ModelFile::from_json(&a).unwrap();
        assert_eq!(loaded.to_json().unwrap(), a);
        assert!(a.contains("\"model_type\": \"emotion-classifier\""));
        assert!(a.contains("\"shape\""));
    }

    #[test]
    fn loaded_classifier_predicts_identically() {
        let (f, file) = classifier_file();
        let original = file.classifier_model().unwrap();
        let loaded = ModelFile::from_json(&file.to_json().unwrap()).unwrap().classifier_model().unwrap();
        for text in ["happy sun", "rain", "yawn dull", "unknown words"] {
            let x = f.vectorize::<f64>(text);
            assert_eq!(original.predict_scores(&x).unwrap(), loaded.predict_scores(&x).unwrap());
        }
    }

    #[test]
    fn version_and_type_checks() {
        let (_, file) = classifier_file();
        let text = file.to_json().unwrap().replace("\"format_version\": 1", "\"format_version\": 2");
        assert!(matches!(ModelFile::from_json(&text), Err(Error::ModelFile(_))));
        assert!(matches!(file.sentiment_model(), Err(Error::ModelFile(_))));
        assert!(file.manifold_model().is_ok());
    }

    #[test]
    fn tampered_fingerprint_is_rejected() {
        let (f, file) = classifier_file();
        let text = file.to_json().unwrap().replace(&f.fingerprint(), "00000000000000000000000000000000");
        assert!(matches!(ModelFile::from_json(&text), Err(Error::FingerprintMismatch { .. })));
    }

    #[test]
    fn bad_shapes_are_rejected() {
        let rec = MatrixRecord {
            shape: [2, 2],
            data: vec![vec![1.0, 2.0]],
        };
        assert!(rec.to_matrix("m").is_err());
    }
}
