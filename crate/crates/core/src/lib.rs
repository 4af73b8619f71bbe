//! Relevance filtering, outbreak detection and context ranking for disease
//! mentions in social-media streams.

// `!(x >= lo)` is how parameter checks reject NaN along with small values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod classifier;
pub mod drift;
pub mod error;
pub mod evaluation;
pub mod gazetteer;
pub mod ingest;
pub mod labeling;
pub mod linear;
pub mod ranking;
pub mod scalar;
pub mod series;
pub mod simulator;
pub mod stats;
pub mod surveillance;
pub mod text;

pub use error::{Error, Result};
pub use scalar::Real;

pub type SparseVectorF64 = linear::SparseVector<f64>;
pub type SparseVectorF32 = linear::SparseVector<f32>;
pub type LinearModelF64 = linear::LinearModel<f64>;
pub type LinearModelF32 = linear::LinearModel<f32>;
pub type ClassifierF64 = classifier::Classifier<f64>;
pub type ClassifierF32 = classifier::Classifier<f32>;
pub type EarsOutcomeF64 = surveillance::ears::EarsOutcome<f64>;
pub type FarringtonOutcomeF64 = surveillance::farrington::FarringtonOutcome<f64>;
pub type PoissonFitF64 = surveillance::glm::PoissonFit<f64>;
