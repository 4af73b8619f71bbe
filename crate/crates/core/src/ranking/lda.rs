//! Latent Dirichlet allocation fitted by collapsed Gibbs sampling.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdaParams {
    pub topics: usize,
    /// Document-topic prior; `None` means `50 / topics`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for LdaParams {
    fn default() -> Self {
        Self {
            topics: 20,
            alpha: None,
            beta: 0.01,
            iterations: 500,
            seed: 0,
        }
    }
}

impl LdaParams {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.topics as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub params: LdaParams,
    pub vocab: Vec<String>,
    /// `topic_word[k * V + w]`.
    pub topic_word: Vec<u32>,
    pub topic_totals: Vec<u32>,
    /// `doc_topic[d * K + k]`.
    pub doc_topic: Vec<u32>,
    pub assignments: Vec<Vec<u16>>,
}

impl TopicModel {
    pub fn topics(&self) -> usize {
        self.params.topics
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn docs(&self) -> usize {
        self.assignments.len()
    }

    /// Smoothed `P(word | topic)`.
    pub fn topic_word_distribution(&self, k: usize) -> Vec<f64> {
        let v = self.vocab_size();
        let beta = self.params.beta;
        let denom = f64::from(self.topic_totals[k]) + v as f64 * beta;
        self.topic_word[k * v..(k + 1) * v]
            .iter()
            .map(|&c| (f64::from(c) + beta) / denom)
            .collect()
    }

    /// Smoothed `P(topic | doc)`.
    pub fn doc_topic_distribution(&self, d: usize) -> Vec<f64> {
        let k = self.topics();
        let alpha = self.params.alpha();
        let row = &self.doc_topic[d * k..(d + 1) * k];
        let len: u32 = row.iter().sum();
        let denom = f64::from(len) + k as f64 * alpha;
        row.iter().map(|&c| (f64::from(c) + alpha) / denom).collect()
    }

    /// Highest-probability terms of topic `k`; ties broken alphabetically.
    pub fn top_terms(&self, k: usize, n: usize) -> Vec<(&str, f64)> {
        let dist = self.topic_word_distribution(k);
        let mut idx: Vec<usize> = (0..dist.len()).collect();
        idx.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then_with(|| self.vocab[a].cmp(&self.vocab[b])));
        idx.into_iter().take(n).map(|w| (self.vocab[w].as_str(), dist[w])).collect()
    }

    pub fn total_tokens(&self) -> u64 {
        self.topic_totals.iter().map(|&c| u64::from(c)).sum()
    }
}

/// Collapsed Gibbs sampler. Vocabulary ids follow first appearance, so the
/// result depends only on the corpus order and the seed.
pub fn fit_lda<S: AsRef<str>>(corpus: &[Vec<S>], p: &LdaParams) -> Result<TopicModel> {
    if p.topics < 2 {
        return Err(Error::InvalidParameter("need at least 2 topics".into()));
    }
    if p.topics > usize::from(u16::MAX) {
        return Err(Error::InvalidParameter("too many topics".into()));
    }
    if !(p.alpha() > 0.0 && p.beta > 0.0) {
        return Err(Error::InvalidParameter("LDA priors must be positive".into()));
    }
    let mut vocab: Vec<String> = Vec::new();
    let mut index: HashMap<String, u32> = HashMap::new();
    let docs: Vec<Vec<u32>> = corpus
        .iter()
        .map(|doc| {
            doc.iter()
                .map(|w| {
                    let w = w.as_ref();
                    *index.entry(w.to_string()).or_insert_with(|| {
                        vocab.push(w.to_string());
                        (vocab.len() - 1) as u32
                    })
                })
                .collect()
        })
        .collect();
    if vocab.is_empty() {
        return Err(Error::InvalidParameter("corpus has no tokens".into()));
    }
    let (k, v) = (p.topics, vocab.len());
    if k > v {
        return Err(Error::TooManyTopics { topics: k, vocab: v });
    }
    let alpha = p.alpha();
    let beta = p.beta;
    let vbeta = v as f64 * beta;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut topic_word = vec![0u32; k * v];
    let mut topic_totals = vec![0u32; k];
    let mut doc_topic = vec![0u32; docs.len() * k];
    let mut assignments: Vec<Vec<u16>> = Vec::with_capacity(docs.len());
    for (d, doc) in docs.iter().enumerate() {
        let z: Vec<u16> = doc
            .iter()
            .map(|&w| {
                let t = rng.random_range(0..k);
                topic_word[t * v + w as usize] += 1;
                topic_totals[t] += 1;
                doc_topic[d * k + t] += 1;
                t as u16
            })
            .collect();
        assignments.push(z);
    }
    let mut weights = vec![0f64; k];
    for _ in 0..p.iterations {
        for (d, doc) in docs.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let w = w as usize;
                let old = assignments[d][i] as usize;
                topic_word[old * v + w] -= 1;
                topic_totals[old] -= 1;
                doc_topic[d * k + old] -= 1;
                let mut total = 0.0;
                for t in 0..k {
                    let p_wt = (f64::from(topic_word[t * v + w]) + beta) / (f64::from(topic_totals[t]) + vbeta);
                    total += p_wt * (f64::from(doc_topic[d * k + t]) + alpha);
                    weights[t] = total;
                }
                let u = rng.random::<f64>() * total;
                let new = weights.iter().position(|&c| u < c).unwrap_or(k - 1);
                topic_word[new * v + w] += 1;
                topic_totals[new] += 1;
                doc_topic[d * k + new] += 1;
                assignments[d][i] = new as u16;
            }
        }
    }
    Ok(TopicModel {
        params: *p,
        vocab,
        topic_word,
        topic_totals,
        doc_topic,
        assignments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn halves() -> Vec<Vec<String>> {
        let a = ["ehec", "sprouts", "hamburg", "hus", "outbreak"];
        let b = ["mumps", "vaccine", "toronto", "school", "swelling"];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (0..40)
            .map(|d| {
                let words = if d % 2 == 0 { &a } else { &b };
                (0..12).map(|_| words[rng.random_range(0..5)].to_string()).collect()
            })
            .collect()
    }

    fn params() -> LdaParams {
        LdaParams {
            topics: 2,
            alpha: Some(0.1),
            iterations: 200,
            seed: 3,
            ..LdaParams::default()
        }
    }

    #[test]
    fn separates_disjoint_halves() {
        let corpus = halves();
        let tm = fit_lda(&corpus, &params()).unwrap();
        let topic_of = |d: usize| {
            let dist = tm.doc_topic_distribution(d);
            let best = if dist[0] > dist[1] { 0 } else { 1 };
            assert!(dist[best] > 0.9, "doc {d}: {dist:?}");
            best
        };
        let even = topic_of(0);
        for d in 0..corpus.len() {
            assert_eq!(topic_of(d) == even, d % 2 == 0);
        }
        let top: Vec<&str> = tm.top_terms(even, 5).into_iter().map(|(w, _)| w).collect();
        assert!(top.contains(&"ehec") && top.contains(&"hamburg"));
    }

    #[test]
    fn counts_are_conserved() {
        let corpus = halves();
        let tm = fit_lda(&corpus, &params()).unwrap();
        let tokens: usize = corpus.iter().map(Vec::len).sum();
        assert_eq!(tm.total_tokens(), tokens as u64);
        assert_eq!(tm.topic_word.iter().map(|&c| u64::from(c)).sum::<u64>(), tokens as u64);
        assert_eq!(tm.doc_topic.iter().map(|&c| u64::from(c)).sum::<u64>(), tokens as u64);
        for k in 0..2 {
            let s: f64 = tm.topic_word_distribution(k).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        for d in 0..corpus.len() {
            let s: f64 = tm.doc_topic_distribution(d).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_runs_match() {
        let corpus = halves();
        assert_eq!(fit_lda(&corpus, &params()).unwrap(), fit_lda(&corpus, &params()).unwrap());
    }

    #[test]
    fn parameter_errors() {
        let corpus = vec![vec!["a", "b"]];
        assert!(matches!(
            fit_lda(&corpus, &LdaParams { topics: 3, ..params() }),
            Err(Error::TooManyTopics { topics: 3, vocab: 2 })
        ));
        assert!(fit_lda(&corpus, &LdaParams { topics: 1, ..params() }).is_err());
        assert!(fit_lda::<&str>(&[vec![]], &params()).is_err());
        assert_eq!(LdaParams::default().alpha(), 2.5);
    }
}
