//! Emotion manifolds for text.
//!
//! Documents are mapped to bag-of-words vectors, class centroids are embedded
//! by classical MDS, and a ridge regression learns the projection from words
//! to the low-dimensional manifold. Classes (emotions, rating levels) are then
//! modelled as Gaussians on the manifold, which supports classification,
//! distance-based clustering, likelihood tessellations and rating prediction.
//!
//! All numerical code is generic over the scalar type ([`scalar::Real`]);
//! the aliases below fix it to `f64` or `f32`.

pub mod baselines;
pub mod classify;
pub mod cli;
pub mod cluster;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod gaussian;
pub mod linalg;
pub mod manifold;
pub mod model_file;
pub mod scalar;
pub mod sentiment;

pub use error::{Error, Result};

pub type ManifoldModel = manifold::ManifoldModel<f64>;
pub type ManifoldModelF32 = manifold::ManifoldModel<f32>;
pub type GaussianClassModel = gaussian::GaussianClassModel<f64>;
pub type GaussianClassModelF32 = gaussian::GaussianClassModel<f32>;
pub type EmotionClassifier = classify::EmotionClassifier<f64>;
pub type EmotionClassifierF32 = classify::EmotionClassifier<f32>;
pub type SentimentModel = sentiment::SentimentModel<f64>;
pub type SentimentModelF32 = sentiment::SentimentModel<f32>;
pub type LogRegOvaModel = baselines::LogRegOvaModel<f64>;
pub type LogRegOvaModelF32 = baselines::LogRegOvaModel<f32>;
pub type LinRegModel = baselines::LinRegModel<f64>;
pub type LinRegModelF32 = baselines::LinRegModel<f32>;
pub type Dendrogram = cluster::Dendrogram<f64>;
pub type DendrogramF32 = cluster::Dendrogram<f32>;
pub type SparseVector = features::SparseVector<f64>;
pub type SparseVectorF32 = features::SparseVector<f32>;
