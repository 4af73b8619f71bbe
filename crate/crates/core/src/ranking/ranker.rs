//! Binary rank features, a pairwise linear ranker and precision at n.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::context::{CandidateIndex, ExpandedContext, IndexedMessage};
use crate::classifier::{LabelSource, Relevance};
use crate::error::{Error, Result};
use crate::labeling::{aggregate_labels, Judgment, LabelTask};
use crate::linear::{LinearModel, SparseVector, SvmHyperparams};
use crate::scalar::Real;

pub const N_FEATURES: usize = 5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RankFeatures {
    pub mc: bool,
    pub location: bool,
    pub hashtag: bool,
    pub cc: bool,
    pub url: bool,
}

impl RankFeatures {
    pub fn as_array(&self) -> [bool; N_FEATURES] {
        [self.mc, self.location, self.hashtag, self.cc, self.url]
    }

    pub fn from_array(a: [bool; N_FEATURES]) -> Self {
        Self {
            mc: a[0],
            location: a[1],
            hashtag: a[2],
            cc: a[3],
            url: a[4],
        }
    }

    pub fn to_vector<T: Real>(&self, set: FeatureSet) -> SparseVector<T> {
        let mask = set.mask();
        let pairs: Vec<(u32, T)> = self
            .as_array()
            .iter()
            .zip(mask)
            .enumerate()
            .filter(|(_, (on, used))| **on && *used)
            .map(|(i, _)| (i as u32, T::one()))
            .collect();
        SparseVector::from_pairs(N_FEATURES, pairs).expect("indices below N_FEATURES")
    }
}

/// Feature subsets for ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    Full,
    McL,
    Mc,
}

impl FeatureSet {
    pub fn mask(self) -> [bool; N_FEATURES] {
        match self {
            Self::Full => [true; N_FEATURES],
            Self::McL => [true, true, false, false, false],
            Self::Mc => [true, false, false, false, false],
        }
    }
}

/// Each flag is set when the message carries a term from the matching
/// expanded set; `url` mirrors the message's URL flag.
pub fn extract_rank_features(doc: &IndexedMessage, e: &ExpandedContext) -> RankFeatures {
    RankFeatures {
        mc: e.all_conditions().any(|c| doc.conditions.contains(c)),
        location: e.all_locations().any(|c| doc.countries.contains(c)),
        hashtag: e.hashtags.iter().any(|h| doc.message.hashtags.contains(h)),
        cc: e.complementary_terms.iter().any(|w| doc.words.contains(w)),
        url: doc.message.urls_present,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankerParams {
    pub learning_rate: f64,
    pub l2: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for RankerParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            l2: 1e-4,
            steps: 2000,
            seed: 0,
        }
    }
}

/// Mean pairwise hinge `max(0, 1 − w·(x_r − x_i))` over all
/// (relevant, irrelevant) pairs, plus the L2 term.
pub fn pairwise_objective<T: Real>(w: &LinearModel<T>, judged: &[(SparseVector<T>, bool)], l2: f64) -> T {
    let (rel, irr): (Vec<_>, Vec<_>) = judged.iter().partition(|(_, r)| *r);
    if rel.is_empty() || irr.is_empty() {
        return T::zero();
    }
    let mut total = T::zero();
    for (xr, _) in &rel {
        let sr = xr.dot_dense(&w.weights);
        for (xi, _) in &irr {
            total = total + (T::one() - (sr - xi.dot_dense(&w.weights))).max(T::zero());
        }
    }
    let pairs = T::from_count(rel.len() * irr.len());
    let norm2: T = w.weights.iter().map(|v| *v * *v).sum();
    total / pairs + T::lit(l2 / 2.0) * norm2
}

/// Stochastic pairwise descent: each step draws one relevant and one
/// irrelevant example and takes a hinge subgradient step on their score
/// difference. The bias is unused since it cancels in differences.
pub fn train_pairwise<T: Real>(judged: &[(SparseVector<T>, bool)], p: &RankerParams) -> Result<LinearModel<T>> {
    let rel: Vec<&SparseVector<T>> = judged.iter().filter(|(_, r)| *r).map(|(x, _)| x).collect();
    let irr: Vec<&SparseVector<T>> = judged.iter().filter(|(_, r)| !*r).map(|(x, _)| x).collect();
    if rel.is_empty() || irr.is_empty() {
        return Err(Error::Training("ranker needs both relevant and irrelevant judgments".into()));
    }
    let dim = rel[0].dim();
    if let Some(bad) = judged.iter().find(|(x, _)| x.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.0.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut w = vec![T::zero(); dim];
    let lambda = T::lit(p.l2);
    for t in 1..=p.steps {
        let xr = rel[rng.random_range(0..rel.len())];
        let xi = irr[rng.random_range(0..irr.len())];
        let eta = T::lit(p.learning_rate / (t as f64).sqrt());
        let margin = xr.dot_dense(&w) - xi.dot_dense(&w);
        let shrink = T::one() - eta * lambda;
        for v in &mut w {
            *v = *v * shrink;
        }
        if margin < T::one() {
            for (i, v) in xr.iter() {
                w[i] = w[i] + eta * v;
            }
            for (i, v) in xi.iter() {
                w[i] = w[i] - eta * v;
            }
        }
    }
    let hyper = SvmHyperparams {
        learning_rate: p.learning_rate,
        l2: p.l2,
        epochs: p.steps,
        seed: p.seed,
    };
    let mut model = LinearModel::zeros(dim);
    model.weights = w;
    model.hyperparams = hyper;
    Ok(model)
}

pub fn train_ranker<T: Real>(judged: &[(RankFeatures, bool)], set: FeatureSet, p: &RankerParams) -> Result<LinearModel<T>> {
    let data: Vec<(SparseVector<T>, bool)> = judged.iter().map(|(f, r)| (f.to_vector(set), *r)).collect();
    train_pairwise(&data, p)
}

/// Sorts by score descending, ties by id ascending.
pub fn rank_scored<T: Real>(mut scored: Vec<(String, T)>) -> Vec<(String, T)> {
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    scored
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionAtN {
    pub value: f64,
    pub n: usize,
    /// Set when fewer than `n` candidates were available; the value is then
    /// computed over the available prefix.
    pub truncated: bool,
}

pub fn precision_at(relevance_in_rank_order: &[bool], n: usize) -> Result<PrecisionAtN> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let k = n.min(relevance_in_rank_order.len());
    let hits = relevance_in_rank_order[..k].iter().filter(|r| **r).count();
    Ok(PrecisionAtN {
        value: if k == 0 { 0.0 } else { hits as f64 / k as f64 },
        n,
        truncated: k < n,
    })
}

/// A judged candidate for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgedCandidate {
    pub id: String,
    pub features: RankFeatures,
    pub relevant: bool,
    /// Score under the TF-IDF baseline.
    pub tfidf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    Learned(FeatureSet),
    TfIdf,
}

impl std::str::FromStr for RankMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Learned(FeatureSet::Full)),
            "mc_l" | "mc+l" => Ok(Self::Learned(FeatureSet::McL)),
            "mc" => Ok(Self::Learned(FeatureSet::Mc)),
            "tfidf" | "tf-idf" => Ok(Self::TfIdf),
            other => Err(Error::InvalidParameter(format!("unknown rank mode {other:?} (full, mc_l, mc, tfidf)"))),
        }
    }
}

pub fn rank_and_evaluate(
    model: &LinearModel<f64>,
    set: FeatureSet,
    candidates: &[JudgedCandidate],
    n: usize,
) -> Result<(Vec<(String, f64)>, PrecisionAtN)> {
    let scored = candidates
        .iter()
        .map(|c| Ok((c.id.clone(), model.margin(&c.features.to_vector(set))?)))
        .collect::<Result<Vec<_>>>()?;
    evaluate_ranking(scored, candidates, n)
}

fn evaluate_ranking(scored: Vec<(String, f64)>, candidates: &[JudgedCandidate], n: usize) -> Result<(Vec<(String, f64)>, PrecisionAtN)> {
    let truth: BTreeMap<&str, bool> = candidates.iter().map(|c| (c.id.as_str(), c.relevant)).collect();
    let ranked = rank_scored(scored);
    let rel: Vec<bool> = ranked.iter().map(|(id, _)| truth[id.as_str()]).collect();
    let p = precision_at(&rel, n)?;
    Ok((ranked, p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub mode: RankMode,
    pub n: usize,
    pub per_split: Vec<f64>,
    pub mean: f64,
}

/// Averages P@n over `splits` seeded 80/20 partitions. Learned modes train
/// on the 80% part; the TF-IDF mode only ranks the held-out part.
pub fn cross_validate(candidates: &[JudgedCandidate], mode: RankMode, n: usize, splits: usize, p: &RankerParams) -> Result<CvReport> {
    if candidates.len() < 5 {
        return Err(Error::TooFewSamples {
            required: 5,
            actual: candidates.len(),
        });
    }
    let mut per_split = Vec::with_capacity(splits);
    for s in 0..splits {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed.wrapping_add(s as u64));
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.shuffle(&mut rng);
        let cut = (candidates.len() * 4).div_ceil(5);
        let train: Vec<&JudgedCandidate> = order[..cut].iter().map(|&i| &candidates[i]).collect();
        let test: Vec<JudgedCandidate> = order[cut..].iter().map(|&i| candidates[i].clone()).collect();
        let value = match mode {
            RankMode::TfIdf => {
                let scored = test.iter().map(|c| (c.id.clone(), c.tfidf)).collect();
                evaluate_ranking(scored, &test, n)?.1.value
            }
            RankMode::Learned(set) => {
                let judged: Vec<(RankFeatures, bool)> = train.iter().map(|c| (c.features, c.relevant)).collect();
                let params = RankerParams { seed: p.seed.wrapping_add(1000 + s as u64), ..*p };
                let model = train_ranker::<f64>(&judged, set, &params)?;
                rank_and_evaluate(&model, set, &test, n)?.1.value
            }
        };
        per_split.push(value);
    }
    let mean = per_split.iter().sum::<f64>() / per_split.len().max(1) as f64;
    Ok(CvReport { mode, n, per_split, mean })
}

/// TF-IDF of the base context's condition and location surface words,
/// with document frequencies taken over the candidate set.
pub fn tfidf_scores(candidates: &[&IndexedMessage], e: &ExpandedContext, annot: &crate::ingest::Annotator) -> Vec<f64> {
    let mut query: Vec<String> = Vec::new();
    for c in &e.base.conditions {
        query.extend(annot.conditions.surfaces_for(c).flat_map(|s| s.split(' ')).map(str::to_string));
        query.push(c.clone());
    }
    for l in &e.base.locations {
        query.extend(annot.locations.surfaces_for(l).flat_map(|s| s.split(' ')).map(str::to_string));
    }
    query.sort();
    query.dedup();
    let n = candidates.len() as f64;
    let sub = CandidateIndex::build(candidates.iter().map(|d| &d.message), annot);
    candidates
        .iter()
        .map(|d| {
            let toks = d.message.tokens();
            query
                .iter()
                .map(|q| {
                    let tf = toks.iter().filter(|t| t.bare() == q).count() as f64;
                    if tf == 0.0 {
                        return 0.0;
                    }
                    let df = sub.word_frequency(q).max(1) as f64;
                    tf * (1.0 + n / df).ln()
                })
                .sum()
        })
        .collect()
}

/// One row of a judgments file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRow {
    pub message_id: String,
    pub context_id: String,
    pub relevant: bool,
}

/// Reads `message_id,context_id,relevance` rows with relevance 0 or 1.
pub fn read_judgments(r: impl BufRead) -> Result<Vec<JudgmentRow>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (n == 0 && line.starts_with("message_id")) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::Parse(format!("judgments line {}: expected message_id,context_id,0|1", n + 1));
        if cols.len() != 3 {
            return Err(bad());
        }
        let relevant = match cols[2] {
            "1" => true,
            "0" => false,
            _ => return Err(bad()),
        };
        out.push(JudgmentRow {
            message_id: cols[0].to_string(),
            context_id: cols[1].to_string(),
            relevant,
        });
    }
    Ok(out)
}

/// Majority vote per (context, message); ties are dropped.
pub fn majority_judgments(rows: &[JudgmentRow]) -> BTreeMap<(String, String), bool> {
    let mut grouped: BTreeMap<(String, String), Vec<bool>> = BTreeMap::new();
    for r in rows {
        grouped.entry((r.context_id.clone(), r.message_id.clone())).or_default().push(r.relevant);
    }
    let epoch = chrono::DateTime::<chrono::Utc>::UNIX_EPOCH;
    grouped
        .into_iter()
        .filter_map(|(key, votes)| {
            let mut task = LabelTask::new(crate::ingest::Message::new(key.1.clone(), epoch, ""), 1);
            task.judgments = votes
                .iter()
                .enumerate()
                .map(|(i, &v)| Judgment {
                    worker_id: format!("j{i}"),
                    label: Relevance::from_sign(v),
                    timestamp: epoch,
                    expert: false,
                })
                .collect();
            let out = aggregate_labels(&[task], &Default::default(), 0.5);
            out.resolved
                .first()
                .filter(|l| l.source == LabelSource::Crowd)
                .map(|l| (key, l.label == Relevance::Relevant))
        })
        .collect()
}

pub fn write_ranked(mut w: impl Write, ranked: &[(String, f64)]) -> Result<()> {
    writeln!(w, "message_id,score")?;
    for (id, s) in ranked {
        writeln!(w, "{id},{s}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Annotator, Message};
    use crate::ranking::context::UserContext;
    use crate::series::DateRange;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn expanded() -> ExpandedContext {
        let range = DateRange::new("2011-06-01".parse().unwrap(), "2011-06-30".parse().unwrap()).unwrap();
        let mut e = ExpandedContext::unexpanded(UserContext::new("u", range, ["ehec"], Vec::<String>::new()).unwrap());
        e.extra_locations.insert("DE".into());
        e.hashtags.insert("eurohealth".into());
        e.complementary_terms.insert("sprouts".into());
        e
    }

    fn doc(text: &str) -> IndexedMessage {
        let m = Message::new("m", Utc.with_ymd_and_hms(2011, 6, 5, 0, 0, 0).unwrap(), text);
        IndexedMessage::new(&m, &Annotator::builtin())
    }

    #[test]
    fn feature_rules() {
        let f = extract_rank_features(&doc("EHEC cases in Hamburg http://t.co/x"), &expanded());
        assert_eq!(f.as_array(), [true, true, false, false, true]);
        let f = extract_rank_features(&doc("read this #eurohealth"), &expanded());
        assert_eq!(f.as_array(), [false, false, true, false, false]);
        let f = extract_rank_features(&doc("nice day http://x.org"), &ExpandedContext::unexpanded(expanded().base));
        assert_eq!(f.as_array(), [false, false, false, false, true]);
    }

    fn separable() -> Vec<(RankFeatures, bool)> {
        (0..32u8)
            .map(|b| {
                let a = [b & 1 > 0, b & 2 > 0, b & 4 > 0, b & 8 > 0, b & 16 > 0];
                (RankFeatures::from_array(a), a[0])
            })
            .collect()
    }

    #[test]
    fn ranker_learns_separable_rule() {
        let data = separable();
        let m = train_ranker::<f64>(&data, FeatureSet::Full, &RankerParams::default()).unwrap();
        assert!(m.weights[0] > 0.0);
        let score = |f: &RankFeatures| m.margin(&f.to_vector(FeatureSet::Full)).unwrap();
        for (r, _) in data.iter().filter(|(_, y)| *y) {
            for (i, _) in data.iter().filter(|(_, y)| !*y) {
                assert!(score(r) > score(i));
            }
        }
        assert_eq!(m, train_ranker::<f64>(&data, FeatureSet::Full, &RankerParams::default()).unwrap());
        let one_class: Vec<(RankFeatures, bool)> = data.iter().map(|(f, _)| (*f, true)).collect();
        assert!(train_ranker::<f64>(&one_class, FeatureSet::Full, &RankerParams::default()).is_err());
    }

    #[test]
    fn training_lowers_pairwise_hinge() {
        let data: Vec<(SparseVector<f64>, bool)> = separable()
            .into_iter()
            .map(|(f, _)| {
                let a = f.as_array();
                (f.to_vector(FeatureSet::Full), a[0] && (a[1] || a[2]))
            })
            .collect();
        for seed in 0..10 {
            let p = RankerParams { seed, ..RankerParams::default() };
            let before = pairwise_objective(&LinearModel::zeros(N_FEATURES), &data, p.l2);
            let after = pairwise_objective(&train_pairwise(&data, &p).unwrap(), &data, p.l2);
            assert!(after < before, "seed {seed}: {after} >= {before}");
        }
    }

    #[test]
    fn precision_examples() {
        let p = precision_at(&[true, true, false, true, false], 5).unwrap();
        assert!((p.value - 0.6).abs() < 1e-12);
        assert!(!p.truncated);
        assert_eq!(precision_at(&[true; 20], 10).unwrap().value, 1.0);
        let p = precision_at(&[true, false], 10).unwrap();
        assert!(p.truncated && p.value == 0.5);
        assert!(precision_at(&[true], 0).is_err());
    }

    #[test]
    fn judgments_io_and_majority() {
        let text = "message_id,context_id,relevance\nm1,c,1\nm1,c,1\nm1,c,0\nm2,c,1\nm2,c,0\nm3,c,0\n";
        let rows = read_judgments(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 6);
        let maj = majority_judgments(&rows);
        assert_eq!(maj.get(&("c".to_string(), "m1".to_string())), Some(&true));
        assert_eq!(maj.get(&("c".to_string(), "m2".to_string())), None);
        assert_eq!(maj.get(&("c".to_string(), "m3".to_string())), Some(&false));
        assert!(read_judgments("m1,c,2\n".as_bytes()).is_err());
        let mut buf = Vec::new();
        write_ranked(&mut buf, &[("m1".into(), 2.0), ("m2".into(), 1.5)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "message_id,score\nm1,2\nm2,1.5\n");
    }

    #[test]
    fn tfidf_prefers_query_terms() {
        let a = doc("ehec ehec in hamburg");
        let b = doc("weather is nice");
        let mut e = expanded();
        e.base.locations.insert("DE".into());
        let s = tfidf_scores(&[&a, &b], &e, &Annotator::builtin());
        assert!(s[0] > 0.0 && s[1] == 0.0);
    }

    proptest! {
        #[test]
        fn affine_invariant_ranking(scores in prop::collection::vec(-100i32..100, 1..30), a in 1u32..10, b in -50i32..50) {
            let items: Vec<(String, f64)> = scores.iter().enumerate().map(|(i, &s)| (format!("m{i:02}"), f64::from(s))).collect();
            let moved: Vec<(String, f64)> = items.iter().map(|(id, s)| (id.clone(), s * f64::from(a) + f64::from(b))).collect();
            let ids = |v: Vec<(String, f64)>| v.into_iter().map(|(id, _)| id).collect::<Vec<_>>();
            prop_assert_eq!(ids(rank_scored(items)), ids(rank_scored(moved)));
        }

        #[test]
        fn precision_times_n_nondecreasing(rel in prop::collection::vec(any::<bool>(), 1..40)) {
            let mut last = 0.0;
            for n in 1..=rel.len() {
                let v = precision_at(&rel, n).unwrap().value * n as f64;
                prop_assert!(v + 1e-9 >= last);
                prop_assert!((0.0..=1.0).contains(&(v / n as f64)));
                last = v;
            }
        }
    }
}
