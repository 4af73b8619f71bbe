//! Feature-change detection with a virtual classifier, novelty scoring and
//! selection of messages for labeling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Message;
use crate::linear::{train_svm, LinearModel, SparseVector, SvmHyperparams};
use crate::scalar::Real;
use crate::stats::binomial_upper_tail;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftParams {
    /// Fraction of a batch sent for labeling.
    pub q: f64,
    /// Significance level of the separability test.
    pub alpha: f64,
    pub cv_folds: usize,
}

impl Default for DriftParams {
    fn default() -> Self {
        Self {
            q: 0.05,
            alpha: 0.01,
            cv_folds: 5,
        }
    }
}

impl DriftParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::InvalidParameter(format!("q = {} outside (0, 1]", self.q)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!("alpha = {} outside (0, 1]", self.alpha)));
        }
        if self.cv_folds < 2 {
            return Err(Error::InvalidParameter("cv_folds must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftVerdict {
    pub changed: bool,
    pub vc_accuracy: f64,
    pub p_value: f64,
    pub n_eval: usize,
}

/// Downsamples both sets to the smaller size and labels them old = -1,
/// new = +1.
fn balanced<T: Real>(
    old: &[SparseVector<T>],
    new: &[SparseVector<T>],
    rng: &mut ChaCha8Rng,
) -> (Vec<SparseVector<T>>, Vec<SparseVector<T>>) {
    let m = old.len().min(new.len());
    let pick = |set: &[SparseVector<T>], rng: &mut ChaCha8Rng| -> Vec<SparseVector<T>> {
        let mut idx: Vec<usize> = (0..set.len()).collect();
        idx.shuffle(rng);
        idx.truncate(m);
        idx.sort_unstable();
        idx.into_iter().map(|i| set[i].clone()).collect()
    };
    (pick(old, rng), pick(new, rng))
}

fn vc_hyperparams(seed: u64) -> SvmHyperparams {
    SvmHyperparams::default().with_seed(seed)
}

/// Trains the old-vs-new separator. The larger set is downsampled (seeded)
/// to the size of the smaller one.
pub fn train_virtual_classifier<T: Real>(
    old: &[SparseVector<T>],
    new: &[SparseVector<T>],
    seed: u64,
) -> Result<LinearModel<T>> {
    if old.is_empty() || new.is_empty() {
        return Err(Error::TooFewSamples {
            required: 1,
            actual: old.len().min(new.len()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (o, n) = balanced(old, new, &mut rng);
    let data: Vec<(SparseVector<T>, i8)> = o
        .into_iter()
        .map(|x| (x, -1))
        .chain(n.into_iter().map(|x| (x, 1)))
        .collect();
    train_svm(&data, &vc_hyperparams(seed))
}

/// Signed distance to the virtual classifier's hyperplane; positive values
/// lie on the "new" side.
pub fn novelty_score<T: Real>(vc: &LinearModel<T>, x: &SparseVector<T>) -> Result<T> {
    let norm = vc.weight_norm();
    if norm.is_zero() {
        return Ok(T::zero());
    }
    Ok(vc.margin(x)? / norm)
}

/// Stratified k-fold accuracy of the virtual classifier, tested against
/// chance with an exact one-sided binomial test pooled over folds.
pub fn detect_feature_change<T: Real>(
    old: &[SparseVector<T>],
    new: &[SparseVector<T>],
    p: &DriftParams,
    seed: u64,
) -> Result<DriftVerdict> {
    p.validate()?;
    let smallest = old.len().min(new.len());
    if smallest < p.cv_folds {
        return Err(Error::TooFewSamples {
            required: p.cv_folds,
            actual: smallest,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (o, n) = balanced(old, new, &mut rng);
    let mut items: Vec<(SparseVector<T>, i8, usize)> = Vec::with_capacity(o.len() * 2);
    for (set, label) in [(o, -1i8), (n, 1i8)] {
        let mut idx: Vec<usize> = (0..set.len()).collect();
        idx.shuffle(&mut rng);
        let mut fold_of = vec![0; set.len()];
        for (rank, &i) in idx.iter().enumerate() {
            fold_of[i] = rank % p.cv_folds;
        }
        for (x, fold) in set.into_iter().zip(fold_of) {
            items.push((x, label, fold));
        }
    }
    let mut correct = 0usize;
    for fold in 0..p.cv_folds {
        let train: Vec<(SparseVector<T>, i8)> = items
            .iter()
            .filter(|(_, _, f)| *f != fold)
            .map(|(x, y, _)| (x.clone(), *y))
            .collect();
        let model = train_svm(&train, &vc_hyperparams(seed.wrapping_add(fold as u64 + 1)))?;
        for (x, y, _) in items.iter().filter(|(_, _, f)| *f == fold) {
            let predicted_new = model.margin(x)? > T::zero();
            if predicted_new == (*y == 1) {
                correct += 1;
            }
        }
    }
    let n_eval = items.len();
    let p_value = binomial_upper_tail(n_eval as u64, correct as u64, 0.5);
    Ok(DriftVerdict {
        changed: p_value < p.alpha,
        vc_accuracy: correct as f64 / n_eval as f64,
        p_value,
        n_eval,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    None,
    Random,
    Novelty,
}

impl std::str::FromStr for SelectionStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "random" => Ok(Self::Random),
            "novelty" => Ok(Self::Novelty),
            other => Err(Error::InvalidParameter(format!(
                "unknown strategy {other:?} (expected none, random or novelty)"
            ))),
        }
    }
}

/// `⌈q·n⌉`, robust to representation error in `q`.
pub fn selection_size(q: f64, n: usize) -> usize {
    ((q * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Indices into `batch` chosen for labeling, in batch order for `Random` and
/// in descending score order (ties: smaller id first) for `Novelty`.
pub fn select_indices<T: Real>(
    batch: &[Message],
    scores: &[T],
    q: f64,
    strategy: SelectionStrategy,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidParameter(format!("q = {q} outside (0, 1]")));
    }
    let k = selection_size(q, batch.len()).min(batch.len());
    match strategy {
        SelectionStrategy::None => Ok(Vec::new()),
        SelectionStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = rand::seq::index::sample(&mut rng, batch.len(), k).into_vec();
            idx.sort_unstable();
            Ok(idx)
        }
        SelectionStrategy::Novelty => {
            if scores.len() != batch.len() {
                return Err(Error::InvalidParameter(format!(
                    "{} scores for {} messages",
                    scores.len(),
                    batch.len()
                )));
            }
            let mut idx: Vec<usize> = (0..batch.len()).collect();
            idx.sort_by(|&a, &b| {
                scores[b]
                    .partial_cmp(&scores[a])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| batch[a].id.cmp(&batch[b].id))
            });
            idx.truncate(k);
            Ok(idx)
        }
    }
}

pub fn select_for_labeling<T: Real>(
    batch: &[Message],
    scores: &[T],
    q: f64,
    strategy: SelectionStrategy,
    seed: u64,
) -> Result<Vec<Message>> {
    Ok(select_indices(batch, scores, q, strategy, seed)?
        .into_iter()
        .map(|i| batch[i].clone())
        .collect())
}

/// One line of the drift audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub week: u32,
    pub vc_accuracy: f64,
    pub p_value: f64,
    pub changed: bool,
    pub n_selected: usize,
}

impl DriftReport {
    pub fn new(week: u32, verdict: &DriftVerdict, n_selected: usize) -> Self {
        Self {
            week,
            vc_accuracy: verdict.vc_accuracy,
            p_value: verdict.p_value,
            changed: verdict.changed,
            n_selected,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}
