//! User contexts, topic/hashtag expansion and the candidate index.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::lda::TopicModel;
use crate::error::{Error, Result};
use crate::ingest::{extract_conditions, infer_location, text_locations, Annotator, Message};
use crate::series::DateRange;

const BUILTIN_STOPWORDS: &str = include_str!("../../data/stopwords.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserContext {
    pub id: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub conditions: BTreeSet<String>,
    pub locations: BTreeSet<String>,
}

impl UserContext {
    pub fn new<I, J, S, T>(id: impl Into<String>, range: DateRange, conditions: I, locations: J) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: Into<String>,
        T: Into<String>,
    {
        let conditions: BTreeSet<String> = conditions.into_iter().map(Into::into).collect();
        if conditions.is_empty() {
            return Err(Error::InvalidParameter("a context needs at least one condition".into()));
        }
        Ok(Self {
            id: id.into(),
            start: range.start,
            end: range.end,
            conditions,
            locations: locations.into_iter().map(|l| l.into().to_ascii_uppercase()).collect(),
        })
    }

    pub fn range(&self) -> DateRange {
        DateRange {
            start: self.start,
            end: self.end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpandedContext {
    pub base: UserContext,
    pub extra_conditions: BTreeSet<String>,
    pub extra_locations: BTreeSet<String>,
    pub complementary_terms: BTreeSet<String>,
    pub hashtags: BTreeSet<String>,
}

impl ExpandedContext {
    /// The base context with nothing added.
    pub fn unexpanded(base: UserContext) -> Self {
        Self {
            base,
            extra_conditions: BTreeSet::new(),
            extra_locations: BTreeSet::new(),
            complementary_terms: BTreeSet::new(),
            hashtags: BTreeSet::new(),
        }
    }

    pub fn all_conditions(&self) -> impl Iterator<Item = &String> {
        self.base.conditions.iter().chain(&self.extra_conditions)
    }

    pub fn all_locations(&self) -> impl Iterator<Item = &String> {
        self.base.locations.iter().chain(&self.extra_locations)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionParams {
    /// Topic terms inspected when matching a topic to the context.
    pub top_terms: usize,
    /// Messages a hashtag must share with a context condition.
    pub min_cooccur: usize,
}

impl Default for ExpansionParams {
    fn default() -> Self {
        Self {
            top_terms: 20,
            min_cooccur: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_STOPWORDS)
    }

    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .filter(|l| !l.trim_start().starts_with('#'))
                .flat_map(str::split_whitespace)
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn contains(&self, w: &str) -> bool {
        self.0.contains(w)
    }
}

/// Content words for topic modelling: no hashtags, mentions, stopwords,
/// numbers, or words shorter than three characters.
pub fn topic_tokens(text: &str, stop: &Stopwords) -> Vec<String> {
    crate::text::tokenize(text)
        .into_iter()
        .filter(|t| {
            !t.starts_with('#')
                && !t.starts_with('@')
                && t.chars().count() >= 3
                && !t.chars().all(|c| c.is_ascii_digit())
                && !stop.contains(t)
        })
        .collect()
}

/// Topics whose top terms name a context condition or location contribute
/// their other top terms, sorted into conditions, locations and
/// complementary words. Hashtags seen alongside a context condition in at
/// least `min_cooccur` messages inside the interval are added as well.
/// Without a topic model only the hashtag step runs.
pub fn expand_context(c: &UserContext, tm: Option<&TopicModel>, corpus: &[Message], annot: &Annotator, p: &ExpansionParams) -> ExpandedContext {
    let mut e = ExpandedContext::unexpanded(c.clone());
    let condition_of = |w: &str| annot.conditions.lookup(w).map(|r| r.id.to_string());
    let location_of = |w: &str| annot.locations.lookup(w).map(|r| r.id.to_string());
    let names_context = |w: &str| {
        c.conditions.contains(w)
            || condition_of(w).is_some_and(|id| c.conditions.contains(&id))
            || location_of(w).is_some_and(|id| c.locations.contains(&id))
    };
    for (tm, k) in tm.into_iter().flat_map(|tm| (0..tm.topics()).map(move |k| (tm, k))) {
        let top = tm.top_terms(k, p.top_terms);
        if !top.iter().any(|(w, _)| names_context(w)) {
            continue;
        }
        for (w, _) in top {
            if names_context(w) {
                continue;
            }
            if let Some(id) = condition_of(w) {
                if !c.conditions.contains(&id) {
                    e.extra_conditions.insert(id);
                }
            } else if let Some(id) = location_of(w) {
                if !c.locations.contains(&id) {
                    e.extra_locations.insert(id);
                }
            } else {
                e.complementary_terms.insert(w.to_string());
            }
        }
    }
    let range = c.range();
    let mut cooccur: BTreeMap<String, usize> = BTreeMap::new();
    for m in corpus.iter().filter(|m| range.contains(m.date())) {
        let toks = m.tokens();
        let hits = extract_conditions(&m.text, &toks, &annot.conditions);
        if hits.iter().any(|h| c.conditions.contains(&h.condition_id)) {
            for h in &m.hashtags {
                *cooccur.entry(h.clone()).or_default() += 1;
            }
        }
    }
    e.hashtags = cooccur
        .into_iter()
        .filter(|(_, n)| *n >= p.min_cooccur)
        .map(|(h, _)| h)
        .collect();
    e
}

/// A message with the term sets used for retrieval and ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedMessage {
    pub message: Message,
    pub conditions: BTreeSet<String>,
    /// Countries named in the text plus the inferred country.
    pub countries: BTreeSet<String>,
    /// Non-hashtag tokens.
    pub words: BTreeSet<String>,
}

impl IndexedMessage {
    pub fn new(m: &Message, annot: &Annotator) -> Self {
        let toks = m.tokens();
        let conditions = extract_conditions(&m.text, &toks, &annot.conditions)
            .into_iter()
            .map(|c| c.condition_id)
            .collect();
        let mut countries: BTreeSet<String> = text_locations(&toks, &annot.locations).into_iter().map(|(c, _)| c).collect();
        if let Some(loc) = infer_location(m, &toks, &annot.locations, &annot.bounds) {
            countries.insert(loc.country);
        }
        let words = toks.iter().filter(|t| !t.is_hashtag()).map(|t| t.text.clone()).collect();
        Self {
            message: m.clone(),
            conditions,
            countries,
            words,
        }
    }
}

/// Inverted index over messages.
#[derive(Debug, Clone, Default)]
pub struct CandidateIndex {
    docs: Vec<IndexedMessage>,
    postings: HashMap<String, Vec<u32>>,
}

fn key_condition(id: &str) -> String {
    format!("c:{id}")
}

fn key_country(code: &str) -> String {
    format!("l:{code}")
}

fn key_hashtag(tag: &str) -> String {
    format!("#{tag}")
}

fn key_word(w: &str) -> String {
    format!("w:{w}")
}

impl CandidateIndex {
    pub fn build<'a>(messages: impl IntoIterator<Item = &'a Message>, annot: &Annotator) -> Self {
        let mut ix = Self::default();
        for m in messages {
            ix.insert(IndexedMessage::new(m, annot));
        }
        ix
    }

    pub fn insert(&mut self, doc: IndexedMessage) {
        let id = self.docs.len() as u32;
        let mut keys: Vec<String> = Vec::new();
        keys.extend(doc.conditions.iter().map(|c| key_condition(c)));
        keys.extend(doc.countries.iter().map(|c| key_country(c)));
        keys.extend(doc.message.hashtags.iter().map(|h| key_hashtag(h)));
        keys.extend(doc.words.iter().map(|w| key_word(w)));
        for k in keys {
            self.postings.entry(k).or_default().push(id);
        }
        self.docs.push(doc);
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[IndexedMessage] {
        &self.docs
    }

    /// Number of indexed messages containing the word.
    pub fn word_frequency(&self, w: &str) -> usize {
        self.postings.get(&key_word(w)).map_or(0, Vec::len)
    }

    /// Messages dated inside `range` that match at least one expanded term,
    /// ordered by message id.
    pub fn retrieve(&self, e: &ExpandedContext, range: DateRange) -> Vec<&IndexedMessage> {
        let mut keys: Vec<String> = Vec::new();
        keys.extend(e.all_conditions().map(|c| key_condition(c)));
        keys.extend(e.all_locations().map(|c| key_country(c)));
        keys.extend(e.hashtags.iter().map(|h| key_hashtag(h)));
        keys.extend(e.complementary_terms.iter().map(|w| key_word(w)));
        let hits: BTreeSet<u32> = keys
            .iter()
            .filter_map(|k| self.postings.get(k))
            .flatten()
            .copied()
            .collect();
        let mut out: Vec<&IndexedMessage> = hits
            .into_iter()
            .map(|i| &self.docs[i as usize])
            .filter(|d| range.contains(d.message.date()))
            .collect();
        out.sort_by(|a, b| a.message.id.cmp(&b.message.id));
        out.dedup_by(|a, b| a.message.id == b.message.id);
        out
    }
}
