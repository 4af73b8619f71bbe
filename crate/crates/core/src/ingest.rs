//! Message parsing, condition extraction, keyword filtering and location
//! inference.

use std::collections::{BTreeSet, HashSet};
use std::io::BufRead;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gazetteer::{valid_coordinates, CountryBounds, Gazetteer, GazetteerKind, KeywordList};
use crate::text::{self, TemporalMention, Token};

pub const MAX_TEXT_BYTES: usize = 560;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn is_valid(&self) -> bool {
        valid_coordinates(self.lat, self.lon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: String,
    #[serde(with = "ts_seconds")]
    pub timestamp: DateTime<Utc>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geo: Option<GeoPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_location: Option<String>,
    #[serde(default)]
    pub hashtags: BTreeSet<String>,
    #[serde(default)]
    pub urls_present: bool,
}

pub(crate) mod ts_seconds {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&ts.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        super::parse_timestamp(&raw).map_err(serde::de::Error::custom)
    }
}

pub fn parse_timestamp(raw: &str) -> std::result::Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(raw.trim())
        .map(|t| t.with_timezone(&Utc).with_nanosecond_truncated())
        .map_err(|e| format!("bad timestamp {raw:?}: {e}"))
}

trait TruncateNanos {
    fn with_nanosecond_truncated(self) -> Self;
}

impl TruncateNanos for DateTime<Utc> {
    fn with_nanosecond_truncated(self) -> Self {
        DateTime::from_timestamp(self.timestamp(), 0).unwrap_or(self)
    }
}

impl Message {
    /// Builds a message, deriving hashtags and the URL flag from the text.
    pub fn new(id: impl Into<String>, timestamp: DateTime<Utc>, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = text::tokenize_spans(&text);
        Self {
            id: id.into(),
            timestamp,
            hashtags: text::hashtags(&tokens).into_iter().collect(),
            urls_present: text::contains_url(&text),
            text,
            geo: None,
            profile_location: None,
        }
    }

    pub fn with_geo(mut self, lat: f64, lon: f64) -> Self {
        self.geo = Some(GeoPoint { lat, lon });
        self
    }

    pub fn with_profile(mut self, profile: impl Into<String>) -> Self {
        self.profile_location = Some(profile.into());
        self
    }

    pub fn date(&self) -> chrono::NaiveDate {
        self.timestamp.date_naive()
    }

    pub fn tokens(&self) -> Vec<Token> {
        text::tokenize_spans(&self.text)
    }

    /// The record in the line-delimited ingest format.
    pub fn to_line(&self) -> String {
        let rec = RawRecord {
            id: Some(self.id.clone()),
            ts: Some(self.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true)),
            text: Some(self.text.clone()),
            geo: self.geo,
            profile_location: self.profile_location.clone(),
        };
        serde_json::to_string(&rec).expect("record serializes")
    }
}

/// One line of the ingest format. Field names: `id`, `ts` (alias
/// `timestamp`), `text`, optional `geo: {lat, lon}` and `profile_location`.
#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    id: Option<String>,
    #[serde(alias = "timestamp")]
    ts: Option<String>,
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    geo: Option<GeoPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    profile_location: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseStats {
    pub ok: usize,
    pub malformed: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub messages: Vec<Message>,
    pub stats: ParseStats,
}

pub fn parse_line(line: &str) -> std::result::Result<Message, String> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let id = raw.id.filter(|s| !s.is_empty()).ok_or("missing id")?;
    let ts = parse_timestamp(raw.ts.as_deref().ok_or("missing timestamp")?)?;
    let text = raw.text.ok_or("missing text")?;
    if text.len() > MAX_TEXT_BYTES {
        return Err(format!("text is {} bytes, limit {MAX_TEXT_BYTES}", text.len()));
    }
    let mut m = Message::new(id, ts, text);
    m.geo = raw.geo;
    m.profile_location = raw.profile_location.filter(|p| !p.trim().is_empty());
    Ok(m)
}

/// Parses line-delimited records, skipping malformed lines and repeated ids.
pub fn parse_messages(reader: impl BufRead) -> Result<ParseOutcome> {
    let mut out = ParseOutcome::default();
    let mut seen = HashSet::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::Ingest(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line) {
            Ok(m) => {
                if seen.insert(m.id.clone()) {
                    out.messages.push(m);
                    out.stats.ok += 1;
                } else {
                    out.stats.duplicates += 1;
                }
            }
            Err(_) => out.stats.malformed += 1,
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionMatch {
    pub condition_id: String,
    pub surface: String,
    pub span: (usize, usize),
}

/// Left-to-right longest match over token n-grams. Works for either
/// gazetteer kind; returns `(first token, token count, canonical id, alternatives)`.
pub(crate) fn scan<'g>(tokens: &[Token], g: &'g Gazetteer) -> Vec<(usize, usize, &'g str, usize)> {
    let bare: Vec<&str> = tokens.iter().map(Token::bare).collect();
    let max_n = g.max_tokens().min(crate::gazetteer::MAX_NGRAM);
    let mut out = Vec::new();
    let mut i = 0;
    while i < bare.len() {
        let mut hit = None;
        for n in (1..=max_n.min(bare.len() - i)).rev() {
            let key = bare[i..i + n].join(" ");
            if let Some(r) = g.lookup(&key) {
                hit = Some((n, r.id, r.alternatives));
                break;
            }
        }
        match hit {
            Some((n, id, alt)) => {
                out.push((i, n, id, alt));
                i += n;
            }
            None => i += 1,
        }
    }
    out
}

pub fn extract_conditions(text: &str, tokens: &[Token], g: &Gazetteer) -> Vec<ConditionMatch> {
    debug_assert_eq!(g.kind(), GazetteerKind::Condition);
    scan(tokens, g)
        .into_iter()
        .map(|(i, n, id, _)| {
            let span = (tokens[i].start, tokens[i + n - 1].end);
            ConditionMatch {
                condition_id: id.to_string(),
                surface: text[span.0..span.1].to_lowercase(),
                span,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    RejectNegative,
    RejectNoPositive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub verdict: Verdict,
    pub matched_positive: Vec<ConditionMatch>,
    pub matched_negative: Vec<String>,
}

impl FilterDecision {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Positive/negative keyword decision. Negative phrases are matched as
/// contiguous token runs (with `#`/`@` stripped) and against hashtags with
/// the phrase's spaces removed.
pub fn keyword_filter(
    tokens: &[Token],
    hashtags: &BTreeSet<String>,
    matches: Vec<ConditionMatch>,
    negatives: &KeywordList,
) -> FilterDecision {
    let bare: Vec<&str> = tokens.iter().map(Token::bare).collect();
    let mut matched_negative = Vec::new();
    for phrase in negatives.phrases() {
        let in_tokens = bare
            .windows(phrase.len())
            .any(|w| w.iter().zip(phrase).all(|(a, b)| *a == b));
        let joined = phrase.concat();
        if in_tokens || hashtags.contains(&joined) {
            matched_negative.push(phrase.join(" "));
        }
    }
    let verdict = if !matched_negative.is_empty() {
        Verdict::RejectNegative
    } else if matches.is_empty() {
        Verdict::RejectNoPositive
    } else {
        Verdict::Pass
    };
    FilterDecision {
        verdict,
        matched_positive: matches,
        matched_negative,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationRule {
    TextMention,
    Geo,
    Profile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationInference {
    pub country: String,
    pub rule: LocationRule,
    /// Other countries sharing the matched surface form.
    pub alternatives: usize,
}

/// Countries mentioned in the text, in order of appearance.
pub fn text_locations(tokens: &[Token], g: &Gazetteer) -> Vec<(String, usize)> {
    scan(tokens, g)
        .into_iter()
        .map(|(_, _, id, alt)| (id.to_string(), alt))
        .collect()
}

/// Applies the three location rules in order: text mention, coordinates,
/// profile location.
pub fn infer_location(
    m: &Message,
    tokens: &[Token],
    g: &Gazetteer,
    bounds: &CountryBounds,
) -> Option<LocationInference> {
    debug_assert_eq!(g.kind(), GazetteerKind::Location);
    if let Some((country, alternatives)) = text_locations(tokens, g).into_iter().next() {
        return Some(LocationInference {
            country,
            rule: LocationRule::TextMention,
            alternatives,
        });
    }
    if let Some(geo) = m.geo.filter(GeoPoint::is_valid) {
        if let Some(c) = bounds.lookup(geo.lat, geo.lon) {
            return Some(LocationInference {
                country: c.to_string(),
                rule: LocationRule::Geo,
                alternatives: 0,
            });
        }
    }
    let profile = m.profile_location.as_deref()?;
    let ptoks = text::tokenize_spans(profile);
    text_locations(&ptoks, g)
        .into_iter()
        .next()
        .map(|(country, alternatives)| LocationInference {
            country,
            rule: LocationRule::Profile,
            alternatives,
        })
}

/// A message with every stage-one annotation attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedMessage {
    pub message: Message,
    pub filter: FilterDecision,
    pub location: Option<LocationInference>,
    /// Countries named in the text (deduplicated, in order).
    pub mentioned_countries: Vec<String>,
    pub temporal: Vec<TemporalMention>,
}

impl AnnotatedMessage {
    /// Distinct condition ids matched in the text.
    pub fn condition_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = Vec::new();
        for m in &self.filter.matched_positive {
            if !ids.contains(&m.condition_id.as_str()) {
                ids.push(&m.condition_id);
            }
        }
        ids
    }

    pub fn country(&self) -> Option<&str> {
        self.location.as_ref().map(|l| l.country.as_str())
    }
}

/// Bundles the dictionaries used for annotation.
#[derive(Debug, Clone)]
pub struct Annotator {
    pub conditions: Gazetteer,
    pub locations: Gazetteer,
    pub negatives: KeywordList,
    pub bounds: CountryBounds,
}

impl Default for Annotator {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Annotator {
    pub fn builtin() -> Self {
        Self {
            conditions: Gazetteer::builtin_conditions(),
            locations: Gazetteer::builtin_locations(),
            negatives: KeywordList::builtin(),
            bounds: CountryBounds::builtin(),
        }
    }

    pub fn annotate(&self, m: &Message) -> AnnotatedMessage {
        let tokens = m.tokens();
        let matches = extract_conditions(&m.text, &tokens, &self.conditions);
        let filter = keyword_filter(&tokens, &m.hashtags, matches, &self.negatives);
        let location = infer_location(m, &tokens, &self.locations, &self.bounds);
        let mut mentioned_countries: Vec<String> = Vec::new();
        for (c, _) in text_locations(&tokens, &self.locations) {
            if !mentioned_countries.contains(&c) {
                mentioned_countries.push(c);
            }
        }
        AnnotatedMessage {
            message: m.clone(),
            filter,
            location,
            mentioned_countries,
            temporal: text::tag_temporal(&m.text),
        }
    }
}
