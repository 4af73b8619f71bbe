//! Synthetic ranking judgments: candidate messages for a fixed expanded
//! context, judged relevant by a known linear utility over the five rank
//! features plus Gaussian noise.

use std::collections::BTreeSet;

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Annotator, Message};
use crate::ranking::ranker::tfidf_scores;
use crate::ranking::{extract_rank_features, CandidateIndex, ExpandedContext, JudgedCandidate, UserContext};
use crate::series::DateRange;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentScenario {
    pub messages: usize,
    /// Utility weights for (MC, L, hashtag, CC, URL).
    pub weights: [f64; 5],
    pub noise_sd: f64,
    /// Relevant iff utility exceeds this.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for JudgmentScenario {
    fn default() -> Self {
        Self {
            messages: 400,
            weights: [1.0, 0.8, 0.6, 0.6, 0.3],
            noise_sd: 0.3,
            threshold: 2.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct JudgmentFixture {
    pub context: ExpandedContext,
    pub messages: Vec<Message>,
    pub candidates: Vec<JudgedCandidate>,
}

const BASE_CONDITIONS: &[&str] = &["ehec", "e coli", "stec"];
const EXTRA_CONDITIONS: &[&str] = &["hus"];
const BASE_PLACES: &[&str] = &["germany", "hamburg", "berlin"];
const EXTRA_PLACES: &[&str] = &["denmark", "copenhagen"];
const TAGS: &[&str] = &["#foodalert", "#sproutwatch"];
const COMPLEMENTARY: &[&str] = &["sprouts", "cucumbers", "salad"];
const FILLER: &[&str] = &[
    "people talking about it",
    "saw this today",
    "what a week",
    "news tonight",
    "everyone at work is worried",
    "",
];

/// The expansion the fixture is built around: base context EHEC in
/// Germany, with HUS, Denmark, two hashtags and food terms added.
pub fn fixture_context(range: DateRange) -> ExpandedContext {
    let base = UserContext::new("ehec-de", range, ["ehec"], ["DE"]).expect("nonempty conditions");
    let mut e = ExpandedContext::unexpanded(base);
    e.extra_conditions = EXTRA_CONDITIONS.iter().map(|s| s.to_string()).collect();
    e.extra_locations = BTreeSet::from(["DK".to_string()]);
    e.hashtags = TAGS.iter().map(|t| t.trim_start_matches('#').to_string()).collect();
    e.complementary_terms = COMPLEMENTARY.iter().map(|s| s.to_string()).collect();
    e
}

fn render(rng: &mut impl Rng) -> String {
    // every message carries at least one expanded term, so it is retrieved
    loop {
        let mut parts: Vec<String> = Vec::new();
        let mut terms = 0;
        if rng.random_bool(0.55) {
            let pool = if rng.random_bool(0.4) { EXTRA_CONDITIONS } else { BASE_CONDITIONS };
            parts.push(format!("{} cases", pool.choose(rng).expect("nonempty")));
            terms += 1;
        }
        if rng.random_bool(0.5) {
            let pool = if rng.random_bool(0.3) { EXTRA_PLACES } else { BASE_PLACES };
            let place = pool.choose(rng).expect("nonempty");
            // place-heavy chatter pulls TF-IDF towards location repeats
            if terms == 0 && rng.random_bool(0.6) {
                parts.push(format!("{place} weather, {place} traffic, back in {place}"));
            } else {
                parts.push(format!("in {place}"));
            }
            terms += 1;
        }
        if rng.random_bool(0.35) {
            parts.push(format!("eat no {}", COMPLEMENTARY.choose(rng).expect("nonempty")));
            terms += 1;
        }
        parts.push(FILLER.choose(rng).expect("nonempty").to_string());
        if rng.random_bool(0.3) {
            parts.push(TAGS.choose(rng).expect("nonempty").to_string());
            terms += 1;
        }
        if rng.random_bool(0.4) {
            parts.push(format!("http://t.co/{:06x}", rng.random_range(0..0xff_ffffu32)));
        }
        if terms > 0 {
            return parts.into_iter().filter(|p| !p.is_empty()).collect::<Vec<_>>().join(" ");
        }
    }
}

/// Generates the messages, retrieves them with the stock index, extracts
/// features and judges each candidate with the scenario's utility.
pub fn judged_candidates(sc: &JudgmentScenario, annot: &Annotator) -> Result<JudgmentFixture> {
    if sc.messages < 5 || !(sc.noise_sd >= 0.0) {
        return Err(Error::InvalidScenario("judgment scenario needs ≥ 5 messages and noise_sd ≥ 0".into()));
    }
    let start = NaiveDate::from_ymd_opt(2011, 5, 20).expect("valid date");
    let range = DateRange { start, end: start + Duration::days(27) };
    let context = fixture_context(range);
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let noise = Normal::new(0.0, sc.noise_sd).map_err(|e| Error::InvalidScenario(e.to_string()))?;
    let t0 = Utc.from_utc_datetime(&start.and_hms_opt(0, 0, 0).expect("midnight"));
    let messages: Vec<Message> = (0..sc.messages)
        .map(|i| {
            let ts = t0 + Duration::seconds(rng.random_range(0..28 * 86_400));
            Message::new(format!("r-{i:05}"), ts, render(&mut rng))
        })
        .collect();
    let index = CandidateIndex::build(&messages, annot);
    let docs = index.retrieve(&context, range);
    let tfidf = tfidf_scores(&docs, &context, annot);
    let candidates = docs
        .iter()
        .zip(tfidf)
        .map(|(d, tfidf)| {
            let features = extract_rank_features(d, &context);
            let u: f64 = features
                .as_array()
                .iter()
                .zip(sc.weights)
                .map(|(&on, w)| if on { w } else { 0.0 })
                .sum::<f64>()
                + noise.sample(&mut rng);
            JudgedCandidate {
                id: d.message.id.clone(),
                features,
                relevant: u > sc.threshold,
                tfidf,
            }
        })
        .collect();
    Ok(JudgmentFixture {
        context,
        messages,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_message_is_retrieved_and_both_classes_occur() {
        let annot = Annotator::builtin();
        let fx = judged_candidates(&JudgmentScenario::default(), &annot).unwrap();
        assert_eq!(fx.candidates.len(), fx.messages.len());
        let rel = fx.candidates.iter().filter(|c| c.relevant).count();
        assert!(rel > 20 && rel < fx.candidates.len() / 2, "{rel}");
        // extra-condition messages count as MC but score nothing on the base query
        let hus_only = fx
            .candidates
            .iter()
            .zip(&fx.messages)
            .find(|(c, m)| c.features.mc && m.text.contains("hus") && !m.text.contains("germany") && !m.text.contains("hamburg") && !m.text.contains("berlin"))
            .unwrap();
        assert_eq!(hus_only.0.tfidf, 0.0, "{}", hus_only.1.text);
    }

    #[test]
    fn features_follow_text() {
        let annot = Annotator::builtin();
        let fx = judged_candidates(&JudgmentScenario { seed: 4, ..Default::default() }, &annot).unwrap();
        for (c, m) in fx.candidates.iter().zip(&fx.messages) {
            assert_eq!(c.features.url, m.text.contains("http://"));
            assert_eq!(c.features.hashtag, m.text.contains('#'), "{}", m.text);
            assert_eq!(c.features.cc, COMPLEMENTARY.iter().any(|w| m.text.contains(w)), "{}", m.text);
        }
    }
}
