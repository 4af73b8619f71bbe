//! Hashing vectorizer and the adaptive relevance classifier.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Message;
use crate::linear::{train_svm, LinearModel, SparseVector, SvmHyperparams};
use crate::scalar::Real;
use crate::text::{self, Token};

pub const DEFAULT_DIM: usize = 1 << 18;

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Unigram + adjacent-bigram hashing vectorizer with L2 normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashingVectorizer {
    pub dim: usize,
    pub bigrams: bool,
}

impl Default for HashingVectorizer {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            bigrams: true,
        }
    }
}

impl HashingVectorizer {
    pub fn new(dim: usize) -> Self {
        Self { dim, bigrams: true }
    }

    pub fn unigrams_only(mut self) -> Self {
        self.bigrams = false;
        self
    }

    pub fn feature_index(&self, feature: &str) -> u32 {
        (fnv1a(feature.as_bytes()) % self.dim as u64) as u32
    }

    pub fn vectorize<T: Real, S: AsRef<str>>(&self, tokens: &[S]) -> SparseVector<T> {
        let mut pairs: Vec<(u32, T)> = tokens
            .iter()
            .map(|t| (self.feature_index(t.as_ref()), T::one()))
            .collect();
        if self.bigrams {
            for w in tokens.windows(2) {
                let bigram = format!("{}_{}", w[0].as_ref(), w[1].as_ref());
                pairs.push((self.feature_index(&bigram), T::one()));
            }
        }
        SparseVector::from_pairs(self.dim, pairs)
            .expect("hashed indices are within dim")
            .normalized()
    }

    pub fn vectorize_text<T: Real>(&self, text: &str) -> SparseVector<T> {
        self.vectorize(&text::tokenize(text))
    }

    pub fn vectorize_tokens<T: Real>(&self, tokens: &[Token]) -> SparseVector<T> {
        let words: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).collect();
        self.vectorize(&words)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relevance {
    Relevant,
    Irrelevant,
}

impl Relevance {
    pub fn from_sign(positive: bool) -> Self {
        if positive {
            Self::Relevant
        } else {
            Self::Irrelevant
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Self::Relevant => 1,
            Self::Irrelevant => -1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Self::Relevant => Self::Irrelevant,
            Self::Irrelevant => Self::Relevant,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Relevant => "relevant",
            Self::Irrelevant => "irrelevant",
        }
    }
}

impl std::str::FromStr for Relevance {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relevant" | "1" | "+1" | "true" | "yes" => Ok(Self::Relevant),
            "irrelevant" | "0" | "-1" | "false" | "no" => Ok(Self::Irrelevant),
            other => Err(Error::Parse(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LabelSource {
    Expert,
    Crowd,
    Temporary { model_version: String },
}

impl LabelSource {
    pub fn is_temporary(&self) -> bool {
        matches!(self, Self::Temporary { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMessage {
    pub message: Message,
    pub label: Relevance,
    pub source: LabelSource,
}

impl LabeledMessage {
    pub fn new(message: Message, label: Relevance, source: LabelSource) -> Self {
        Self { message, label, source }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
}

impl AccuracyReport {
    /// Builds the report from `(predicted, truth)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Relevance, Relevance)>) -> Self {
        let mut r = Self::default();
        for (predicted, truth) in pairs {
            match (predicted, truth) {
                (Relevance::Relevant, Relevance::Relevant) => r.tp += 1,
                (Relevance::Irrelevant, Relevance::Irrelevant) => r.tn += 1,
                (Relevance::Relevant, Relevance::Irrelevant) => r.fp += 1,
                (Relevance::Irrelevant, Relevance::Relevant) => r.fn_ += 1,
            }
        }
        let total = r.total();
        r.accuracy = if total == 0 {
            0.0
        } else {
            (r.tp + r.tn) as f64 / total as f64
        };
        r
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// `relevant` iff the margin is strictly positive.
pub fn predict<T: Real>(m: &LinearModel<T>, x: &SparseVector<T>) -> Result<(Relevance, T)> {
    let margin = m.margin(x)?;
    Ok((Relevance::from_sign(margin > T::zero()), margin))
}

/// Vectorizer plus trained weights, tagged with a version id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Classifier<T> {
    pub version: String,
    pub vectorizer: HashingVectorizer,
    pub model: LinearModel<T>,
}

const ARTIFACT_FORMAT: &str = "epiwatch-linear-model";
const ARTIFACT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct Artifact<T> {
    format: String,
    format_version: u32,
    version: String,
    vectorizer: HashingVectorizer,
    dim: usize,
    bias: T,
    /// Nonzero weights as `[index, value]`.
    weights: Vec<(u32, T)>,
    hyperparams: SvmHyperparams,
    data_digest: String,
}

impl<T: Real> Classifier<T> {
    pub fn train(
        vectorizer: HashingVectorizer,
        data: &[LabeledMessage],
        h: &SvmHyperparams,
    ) -> Result<Self> {
        let vecs: Vec<(SparseVector<T>, i8)> = data
            .iter()
            .map(|l| (vectorizer.vectorize_text(&l.message.text), l.label.sign()))
            .collect();
        let model = train_svm(&vecs, h)?;
        let version = format!("m-{}", &model.data_digest[..12]);
        Ok(Self {
            version,
            vectorizer,
            model,
        })
    }

    pub fn vectorize(&self, text: &str) -> SparseVector<T> {
        self.vectorizer.vectorize_text(text)
    }

    pub fn classify(&self, m: &Message) -> (Relevance, T) {
        predict(&self.model, &self.vectorize(&m.text)).expect("vectorizer dim matches model")
    }

    pub fn evaluate(&self, test: &[LabeledMessage]) -> Result<AccuracyReport> {
        evaluate_accuracy(self, test)
    }

    pub fn write_artifact(&self, mut w: impl Write) -> Result<()> {
        let art = Artifact {
            format: ARTIFACT_FORMAT.into(),
            format_version: ARTIFACT_VERSION,
            version: self.version.clone(),
            vectorizer: self.vectorizer,
            dim: self.model.dim(),
            bias: self.model.bias,
            weights: self
                .model
                .weights
                .iter()
                .enumerate()
                .filter(|(_, w)| !w.is_zero())
                .map(|(i, &w)| (i as u32, w))
                .collect(),
            hyperparams: self.model.hyperparams,
            data_digest: self.model.data_digest.clone(),
        };
        serde_json::to_writer(&mut w, &art)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_artifact(mut r: impl Read) -> Result<Self> {
        let mut buf = String::new();
        r.read_to_string(&mut buf)?;
        let art: Artifact<T> = serde_json::from_str(&buf)?;
        if art.format != ARTIFACT_FORMAT || art.format_version != ARTIFACT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported model artifact {} v{}",
                art.format, art.format_version
            )));
        }
        if art.dim != art.vectorizer.dim {
            return Err(Error::DimensionMismatch {
                expected: art.vectorizer.dim,
                actual: art.dim,
            });
        }
        let mut weights = vec![T::zero(); art.dim];
        for (i, w) in art.weights {
            *weights.get_mut(i as usize).ok_or(Error::DimensionMismatch {
                expected: art.dim,
                actual: i as usize + 1,
            })? = w;
        }
        Ok(Self {
            version: art.version,
            vectorizer: art.vectorizer,
            model: LinearModel {
                weights,
                bias: art.bias,
                hyperparams: art.hyperparams,
                data_digest: art.data_digest,
            },
        })
    }
}

pub fn evaluate_accuracy<T: Real>(c: &Classifier<T>, test: &[LabeledMessage]) -> Result<AccuracyReport> {
    if test.is_empty() {
        return Err(Error::InvalidParameter("empty test set".into()));
    }
    Ok(AccuracyReport::from_pairs(
        test.iter().map(|l| (c.classify(&l.message).0, l.label)),
    ))
}
