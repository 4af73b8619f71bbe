//! Daily count series per (disease, country) context and the
//! oscillation/magnitude characterization.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::classifier::fnv1a;
use crate::error::{Error, Result};
use crate::ingest::AnnotatedMessage;
use crate::stats::{median, quantile};
use crate::text::tokenize;

pub const MIN_CHARACTERIZE_DAYS: usize = 28;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DiseaseContext {
    pub disease: String,
    pub country: String,
}

impl DiseaseContext {
    pub fn new(disease: impl Into<String>, country: impl Into<String>) -> Result<Self> {
        let (disease, country) = (disease.into(), country.into().to_ascii_uppercase());
        if disease.is_empty() || country.is_empty() {
            return Err(Error::InvalidParameter("context needs a disease and a country".into()));
        }
        Ok(Self { disease, country })
    }
}

impl fmt::Display for DiseaseContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.disease, self.country)
    }
}

/// Inclusive date interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::EmptyRange);
        }
        Ok(Self { start, end })
    }

    pub fn days(&self) -> usize {
        (self.end - self.start).num_days() as usize + 1
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

/// One located, relevant message reduced to what series building needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRecord {
    pub date: NaiveDate,
    pub conditions: Vec<String>,
    pub country: String,
    /// Hash of the normalized text, used when deduplicating.
    pub text_hash: u64,
}

/// Hash of the text with a leading retweet marker and mentions removed.
pub fn normalized_text_hash(text: &str) -> u64 {
    let toks = tokenize(text);
    let kept: Vec<&str> = toks
        .iter()
        .map(String::as_str)
        .skip_while(|t| *t == "rt" || t.starts_with('@'))
        .filter(|t| !t.starts_with('@'))
        .collect();
    fnv1a(kept.join(" ").as_bytes())
}

impl SeriesRecord {
    /// `None` when the message has no inferred country or no condition.
    pub fn from_annotated(a: &AnnotatedMessage) -> Option<Self> {
        let country = a.country()?.to_string();
        let mut conditions: Vec<String> = a.condition_ids().into_iter().map(str::to_string).collect();
        conditions.sort();
        conditions.dedup();
        if conditions.is_empty() {
            return None;
        }
        Some(Self {
            date: a.message.date(),
            conditions,
            country,
            text_hash: normalized_text_hash(&a.message.text),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub context: DiseaseContext,
    pub start: NaiveDate,
    pub counts: Vec<u32>,
}

impl TimeSeries {
    pub fn new(context: DiseaseContext, start: NaiveDate, counts: Vec<u32>) -> Self {
        Self { context, start, counts }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Last covered day. Equals `start` for an empty series.
    pub fn end(&self) -> NaiveDate {
        self.start + Duration::days(self.counts.len().saturating_sub(1) as i64)
    }

    pub fn date_at(&self, i: usize) -> NaiveDate {
        self.start + Duration::days(i as i64)
    }

    pub fn index_of(&self, d: NaiveDate) -> Option<usize> {
        let i = (d - self.start).num_days();
        (i >= 0 && (i as usize) < self.counts.len()).then_some(i as usize)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    /// Consecutive 7-day blocks from `start`; a trailing partial week is
    /// dropped.
    pub fn weekly(&self) -> WeeklySeries {
        let counts = self.counts.chunks_exact(7).map(|w| w.iter().sum()).collect();
        WeeklySeries {
            context: self.context.clone(),
            start: self.start,
            counts,
        }
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "date,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{c}", self.date_at(i))?;
        }
        Ok(())
    }

    /// Reads `date,count` rows; gaps are zero-filled and repeated dates add.
    pub fn read_csv(context: DiseaseContext, r: impl BufRead) -> Result<Self> {
        let mut rows: BTreeMap<NaiveDate, u32> = BTreeMap::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with("date")) {
                continue;
            }
            let (d, c) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("line {}: expected date,count", n + 1)))?;
            let d = NaiveDate::parse_from_str(d.trim(), "%Y-%m-%d")
                .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
            let c: u32 = c
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
            *rows.entry(d).or_default() += c;
        }
        let (Some((&start, _)), Some((&end, _))) = (rows.first_key_value(), rows.last_key_value()) else {
            return Err(Error::EmptyRange);
        };
        let mut counts = vec![0; DateRange::new(start, end)?.days()];
        for (d, c) in rows {
            counts[(d - start).num_days() as usize] = c;
        }
        Ok(Self::new(context, start, counts))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeeklySeries {
    pub context: DiseaseContext,
    /// First day of week 0.
    pub start: NaiveDate,
    pub counts: Vec<u32>,
}

impl WeeklySeries {
    pub fn week_start(&self, t: usize) -> NaiveDate {
        self.start + Duration::days(7 * t as i64)
    }

    pub fn week_end(&self, t: usize) -> NaiveDate {
        self.week_start(t) + Duration::days(6)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesOptions {
    /// Count identical normalized texts once per context.
    pub dedup_text: bool,
}

pub fn build_series(
    records: &[SeriesRecord],
    ctx: &DiseaseContext,
    range: DateRange,
    opts: SeriesOptions,
) -> TimeSeries {
    let mut counts = vec![0u32; range.days()];
    let mut seen = HashSet::new();
    for r in records {
        if r.country != ctx.country || !range.contains(r.date) || !r.conditions.contains(&ctx.disease) {
            continue;
        }
        if opts.dedup_text && !seen.insert(r.text_hash) {
            continue;
        }
        counts[(r.date - range.start).num_days() as usize] += 1;
    }
    TimeSeries::new(ctx.clone(), range.start, counts)
}

/// Series for every context present in `records`.
pub fn build_all(records: &[SeriesRecord], range: DateRange, opts: SeriesOptions) -> BTreeMap<DiseaseContext, TimeSeries> {
    let mut contexts = std::collections::BTreeSet::new();
    for r in records {
        for c in &r.conditions {
            contexts.insert(DiseaseContext {
                disease: c.clone(),
                country: r.country.clone(),
            });
        }
    }
    contexts
        .into_iter()
        .map(|ctx| {
            let s = build_series(records, &ctx, range, opts);
            (ctx, s)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadrant {
    pub oscillation: Level,
    pub magnitude: Level,
    pub osc_score: f64,
    pub mag_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadrantThresholds {
    /// Daily 95th percentile count at or above which magnitude is high.
    pub magnitude: f64,
    /// Spike-day fraction at or above which oscillation is high.
    pub oscillation: f64,
}

impl Default for QuadrantThresholds {
    fn default() -> Self {
        Self {
            magnitude: 50.0,
            oscillation: 0.10,
        }
    }
}

/// Scores are computed over days outside `exclusions`.
pub fn characterize_series(
    s: &TimeSeries,
    exclusions: &[DateRange],
    th: &QuadrantThresholds,
) -> Result<Quadrant> {
    if s.len() < MIN_CHARACTERIZE_DAYS {
        return Err(Error::SeriesTooShort {
            required: MIN_CHARACTERIZE_DAYS,
            actual: s.len(),
        });
    }
    let kept = |i: usize| !exclusions.iter().any(|r| r.contains(s.date_at(i)));
    let xs: Vec<f64> = s.counts.iter().map(|&c| f64::from(c)).collect();
    let daily: Vec<f64> = (0..xs.len()).filter(|&i| kept(i)).map(|i| xs[i]).collect();
    let mag_score = if daily.is_empty() { 0.0 } else { quantile(&daily, 0.95) };

    let (mut spikes, mut scored) = (0usize, 0usize);
    for t in 7..xs.len() {
        if !kept(t) {
            continue;
        }
        let m = median(&xs[t - 7..t]);
        scored += 1;
        if (xs[t] - m).abs() > f64::max(2.0, 0.5 * m) {
            spikes += 1;
        }
    }
    let osc_score = if scored == 0 { 0.0 } else { spikes as f64 / scored as f64 };
    let level = |score: f64, t: f64| if score >= t { Level::High } else { Level::Low };
    Ok(Quadrant {
        oscillation: level(osc_score, th.oscillation),
        magnitude: level(mag_score, th.magnitude),
        osc_score,
        mag_score,
    })
}
