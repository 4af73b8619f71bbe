//! Weekly adaptive loop: classify each batch with the current model, test for
//! feature change against the labeled store, send a share of the batch for
//! labeling and retrain.

use serde::{Deserialize, Serialize};

use crate::classifier::{AccuracyReport, Classifier, HashingVectorizer, LabeledMessage, Relevance};
use crate::drift::{
    detect_feature_change, novelty_score, select_indices, train_virtual_classifier, DriftParams, DriftReport,
    DriftVerdict, SelectionStrategy,
};
use crate::error::{Error, Result};
use crate::ingest::Message;
use crate::linear::{SparseVector, SvmHyperparams};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retrain {
    /// Train on every label collected so far.
    Cumulative,
    /// Train on labels from the last `n` weeks only.
    Window(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub drift: DriftParams,
    pub strategy: SelectionStrategy,
    pub retrain: Retrain,
    pub svm: SvmHyperparams,
    pub vectorizer: HashingVectorizer,
    pub seed: u64,
}

impl AdaptiveConfig {
    pub fn new(strategy: SelectionStrategy, q: f64) -> Self {
        Self {
            drift: DriftParams { q, ..DriftParams::default() },
            strategy,
            retrain: Retrain::Cumulative,
            svm: SvmHyperparams::default(),
            vectorizer: HashingVectorizer::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekOutcome {
    pub week: u32,
    /// Accuracy of the model in force at the start of the week, on messages
    /// whose truth is known.
    pub accuracy: Option<AccuracyReport>,
    pub drift: Option<DriftVerdict>,
    pub n_selected: usize,
    pub n_training: usize,
    pub model_version: String,
}

impl WeekOutcome {
    pub fn report(&self) -> Option<DriftReport> {
        self.drift.as_ref().map(|v| DriftReport::new(self.week, v, self.n_selected))
    }
}

/// Mean accuracy over the given weeks, skipping weeks without a report.
pub fn mean_accuracy(outcomes: &[WeekOutcome], weeks: impl Fn(u32) -> bool) -> Option<f64> {
    let xs: Vec<f64> = outcomes
        .iter()
        .filter(|o| weeks(o.week))
        .filter_map(|o| o.accuracy.as_ref().map(|a| a.accuracy))
        .collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Runs the loop over `weeks`. Week 0 is labeled in full through `label` and
/// trains the first model; later weeks follow the configured strategy.
/// `truth` supplies the reference label used for accuracy.
pub fn run_weeks<T, L, G>(
    weeks: &[Vec<Message>],
    cfg: &AdaptiveConfig,
    mut label: L,
    truth: G,
) -> Result<Vec<WeekOutcome>>
where
    T: Real,
    L: FnMut(u32, &[Message]) -> Result<Vec<LabeledMessage>>,
    G: Fn(&Message) -> Option<Relevance>,
{
    cfg.drift.validate()?;
    let first = weeks.first().ok_or_else(|| Error::InvalidParameter("no weeks to run".into()))?;
    // (week labeled, label), in arrival order
    let mut labeled: Vec<(u32, LabeledMessage)> = label(0, first)?.into_iter().map(|l| (0, l)).collect();
    let train = |labeled: &[(u32, LabeledMessage)], now: u32| -> Result<(Classifier<T>, usize)> {
        let data: Vec<LabeledMessage> = labeled
            .iter()
            .filter(|(w, _)| match cfg.retrain {
                Retrain::Cumulative => true,
                Retrain::Window(n) => now < *w + n.max(1),
            })
            .map(|(_, l)| l.clone())
            .collect();
        let c = Classifier::train(cfg.vectorizer, &data, &cfg.svm.with_seed(cfg.svm.seed ^ u64::from(now)))?;
        Ok((c, data.len()))
    };
    let (mut model, mut n_training) = train(&labeled, 0)?;
    let mut out = vec![WeekOutcome {
        week: 0,
        accuracy: None,
        drift: None,
        n_selected: 0,
        n_training,
        model_version: model.version.clone(),
    }];
    for (w, batch) in weeks.iter().enumerate().skip(1) {
        let week = w as u32;
        let pairs: Vec<(Relevance, Relevance)> = batch
            .iter()
            .filter_map(|m| truth(m).map(|t| (model.classify(m).0, t)))
            .collect();
        let accuracy = (!pairs.is_empty()).then(|| AccuracyReport::from_pairs(pairs));
        let mut outcome = WeekOutcome {
            week,
            accuracy,
            drift: None,
            n_selected: 0,
            n_training,
            model_version: model.version.clone(),
        };
        if cfg.strategy != SelectionStrategy::None && !batch.is_empty() {
            let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(u64::from(week));
            let old: Vec<SparseVector<T>> = labeled.iter().map(|(_, l)| model.vectorize(&l.message.text)).collect();
            let new: Vec<SparseVector<T>> = batch.iter().map(|m| model.vectorize(&m.text)).collect();
            if old.len().min(new.len()) >= cfg.drift.cv_folds {
                outcome.drift = Some(detect_feature_change(&old, &new, &cfg.drift, seed)?);
            }
            let scores: Vec<T> = if cfg.strategy == SelectionStrategy::Novelty {
                let vc = train_virtual_classifier(&old, &new, seed)?;
                new.iter().map(|x| novelty_score(&vc, x)).collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            let picked: Vec<Message> = select_indices(batch, &scores, cfg.drift.q, cfg.strategy, seed)?
                .into_iter()
                .map(|i| batch[i].clone())
                .collect();
            outcome.n_selected = picked.len();
            labeled.extend(label(week, &picked)?.into_iter().map(|l| (week, l)));
            (model, n_training) = train(&labeled, week)?;
        }
        out.push(outcome);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::LabelSource;
    use crate::simulator::{generate_stream, strategy_stream};
    use std::collections::BTreeMap;

    fn stream(seed: u64) -> (Vec<Vec<Message>>, BTreeMap<String, Relevance>) {
        let out = generate_stream(&strategy_stream(0.12).with_seed(seed)).unwrap();
        (out.weekly_batches(), out.key)
    }

    fn run(strategy: SelectionStrategy, seed: u64) -> Vec<WeekOutcome> {
        let (weeks, key) = stream(seed);
        let cfg = AdaptiveConfig { seed, ..AdaptiveConfig::new(strategy, 0.1) };
        let expert = |_: u32, ms: &[Message]| {
            Ok(ms.iter().map(|m| LabeledMessage::new(m.clone(), key[&m.id], LabelSource::Expert)).collect())
        };
        run_weeks::<f64, _, _>(&weeks, &cfg, expert, |m| key.get(&m.id).copied()).unwrap()
    }

    #[test]
    fn none_never_retrains() {
        let out = run(SelectionStrategy::None, 1);
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|o| o.n_selected == 0 && o.model_version == out[0].model_version));
        assert!(out[1..].iter().all(|o| o.accuracy.is_some() && o.drift.is_none()));
    }

    #[test]
    fn selection_grows_training_set() {
        let (weeks, _) = stream(2);
        let out = run(SelectionStrategy::Novelty, 2);
        for w in 1..out.len() - 1 {
            let expected = crate::drift::selection_size(0.1, weeks[w].len());
            assert_eq!(out[w].n_selected, expected);
            assert_eq!(out[w + 1].n_training, out[w].n_training + expected);
        }
        assert!(out[1].drift.unwrap().changed, "{:?}", out[1].drift);
    }

    #[test]
    fn windowed_retrain_forgets() {
        let (weeks, key) = stream(3);
        let cfg = AdaptiveConfig {
            retrain: Retrain::Window(1),
            ..AdaptiveConfig::new(SelectionStrategy::Random, 0.1)
        };
        let expert = |_: u32, ms: &[Message]| {
            Ok(ms.iter().map(|m| LabeledMessage::new(m.clone(), key[&m.id], LabelSource::Expert)).collect())
        };
        let out = run_weeks::<f64, _, _>(&weeks, &cfg, expert, |m| key.get(&m.id).copied()).unwrap();
        // after week 1 only that week's selection is in the window
        assert_eq!(out[2].n_training, out[1].n_selected);
    }

    #[test]
    fn empty_input_rejected() {
        let cfg = AdaptiveConfig::new(SelectionStrategy::None, 0.1);
        let r = run_weeks::<f64, _, _>(&[], &cfg, |_, _| Ok(Vec::new()), |_| None);
        assert!(r.is_err());
    }
}
