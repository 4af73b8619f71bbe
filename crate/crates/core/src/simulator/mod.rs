//! Seeded synthetic message streams with injected outbreaks and vocabulary
//! drift, together with their ground truth and label key.
//!
//! Relevant daily counts are Poisson with a multiplicative outbreak
//! envelope. Messages are rendered from phrase templates so that the stock
//! annotator recovers the intended condition and country.

mod annotators;
mod judgments;
mod presets;
mod templates;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveTime, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::classifier::Relevance;
use crate::error::{Error, Result};
use crate::evaluation::{write_ground_truth, GroundTruthEvent};
use crate::gazetteer::{CountryBounds, Gazetteer, KeywordList};
use crate::ingest::Message;
use crate::series::{DateRange, DiseaseContext, TimeSeries};

pub use annotators::{replay_queue, SimulatedAnnotator, DEFAULT_ANNOTATOR_ACCURACY};
pub use judgments::{fixture_context, judged_candidates, JudgmentFixture, JudgmentScenario};
pub use presets::{preset, strategy_stream, PRESETS};

pub const DEFAULT_GEO_FRACTION: f64 = 0.01;
pub const DEFAULT_PROFILE_FRACTION: f64 = 0.1;

/// An outbreak window. The rate multiplier grows geometrically from 1 to
/// `multiplier` over `ramp_up_days`, holds, then falls back linearly over
/// `ramp_down_days` ending on `end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutbreakWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub multiplier: f64,
    pub ramp_up_days: u32,
    pub ramp_down_days: u32,
}

impl OutbreakWindow {
    pub fn range(&self) -> DateRange {
        DateRange { start: self.start, end: self.end }
    }

    /// Rate multiplier on day `d`; 1 outside the window.
    pub fn rho(&self, d: NaiveDate) -> f64 {
        if d < self.start || d > self.end {
            return 1.0;
        }
        let ramp = |days_in: f64, len: u32| if len == 0 { 1.0 } else { (days_in / f64::from(len)).min(1.0) };
        let up = ramp((d - self.start).num_days() as f64 + 1.0, self.ramp_up_days);
        let down = ramp((self.end - d).num_days() as f64 + 1.0, self.ramp_down_days);
        if up < 1.0 {
            self.multiplier.powf(up).min(1.0 + (self.multiplier - 1.0) * down)
        } else {
            1.0 + (self.multiplier - 1.0) * down
        }
    }
}

/// Short bursts of extra volume, the source of high oscillation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bursts {
    /// Expected burst starts per 365 days.
    pub per_year: f64,
    pub max_days: u32,
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextConfig {
    pub context: DiseaseContext,
    /// Mean daily relevant count outside outbreaks.
    pub baseline: f64,
    /// Coefficient of variation of the day-level rate (gamma mixing).
    #[serde(default)]
    pub volatility: f64,
    #[serde(default)]
    pub bursts: Option<Bursts>,
    /// Caps daily relevant counts outside outbreak windows.
    #[serde(default)]
    pub outside_cap: Option<u32>,
    #[serde(default)]
    pub windows: Vec<OutbreakWindow>,
    /// Mean daily count of irrelevant messages tied to the context.
    #[serde(default)]
    pub noise_rate: f64,
}

impl ContextConfig {
    pub fn new(context: DiseaseContext, baseline: f64) -> Self {
        Self {
            context,
            baseline,
            volatility: 0.0,
            bursts: None,
            outside_cap: None,
            windows: Vec::new(),
            noise_rate: 0.0,
        }
    }

    fn in_window(&self, d: NaiveDate) -> bool {
        self.windows.iter().any(|w| w.range().contains(d))
    }

    fn rho(&self, d: NaiveDate) -> f64 {
        self.windows.iter().map(|w| w.rho(d)).fold(1.0, f64::max)
    }
}

/// New vocabulary mixed into a run of weeks. `relevant` decides the key
/// label of the drift messages; a confounder is irrelevant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub start_week: u32,
    pub end_week: u32,
    pub terms: Vec<String>,
    /// Share of that week's messages that are drift messages.
    pub fraction: f64,
    /// Surface form the drift messages carry, e.g. "fever".
    pub condition: String,
    /// Location surface placed in the text.
    pub location: String,
    pub relevant: bool,
}

impl DriftEvent {
    pub fn covers(&self, week: u32) -> bool {
        self.start_week <= week && week <= self.end_week
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub start: NaiveDate,
    pub duration_days: u32,
    pub contexts: Vec<ContextConfig>,
    #[serde(default)]
    pub drift: Vec<DriftEvent>,
    pub geo_fraction: f64,
    pub profile_fraction: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn range(&self) -> DateRange {
        DateRange {
            start: self.start,
            end: self.start + Duration::days(i64::from(self.duration_days) - 1),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn day(&self, i: usize) -> NaiveDate {
        self.start + Duration::days(i as i64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.duration_days == 0 {
            return bad("duration_days must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.geo_fraction) || !(0.0..=1.0).contains(&self.profile_fraction) {
            return bad("geo and profile fractions must lie in [0, 1]".into());
        }
        if self.geo_fraction + self.profile_fraction > 1.0 {
            return bad("geo_fraction + profile_fraction exceeds 1".into());
        }
        let range = self.range();
        for c in &self.contexts {
            if !(c.baseline >= 0.0 && c.baseline.is_finite()) || !(c.noise_rate >= 0.0 && c.noise_rate.is_finite()) {
                return bad(format!("{}: rates must be finite and non-negative", c.context));
            }
            if !(c.volatility >= 0.0 && c.volatility.is_finite()) {
                return bad(format!("{}: volatility must be non-negative", c.context));
            }
            if let Some(b) = c.bursts {
                if !(b.per_year >= 0.0 && b.multiplier >= 1.0 && b.max_days >= 1) {
                    return bad(format!("{}: bursts need per_year >= 0, multiplier >= 1, max_days >= 1", c.context));
                }
            }
            for w in &c.windows {
                if !(w.multiplier >= 1.0 && w.multiplier.is_finite()) {
                    return bad(format!("{}: outbreak multiplier {} below 1", c.context, w.multiplier));
                }
                if w.end < w.start || !range.contains(w.start) || !range.contains(w.end) {
                    return bad(format!("{}: window {}..{} outside {}..{}", c.context, w.start, w.end, range.start, range.end));
                }
            }
        }
        let weeks = self.duration_days.div_ceil(7);
        for d in &self.drift {
            if d.terms.is_empty() || d.end_week < d.start_week || d.end_week >= weeks {
                return bad(format!("drift weeks {}..{} invalid for {weeks} weeks", d.start_week, d.end_week));
            }
            if !(0.0..1.0).contains(&d.fraction) {
                return bad(format!("drift fraction {} outside [0, 1)", d.fraction));
            }
        }
        Ok(())
    }

    /// Events for every window with a multiplier above 1.
    pub fn ground_truth(&self) -> Vec<GroundTruthEvent> {
        let mut out = Vec::new();
        for c in &self.contexts {
            for w in c.windows.iter().filter(|w| w.multiplier > 1.0) {
                let ev = GroundTruthEvent::new(c.context.clone(), w.start, w.end, self.name.clone()).expect("validated window");
                out.push(ev);
            }
        }
        out
    }
}

// Independent RNG streams keep per-context counts stable when other parts of
// the config change.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn poisson(rng: &mut impl Rng, rate: f64) -> u32 {
    if rate <= 0.0 {
        return 0;
    }
    let d = Poisson::new(rate).expect("positive finite rate");
    d.sample(rng) as u32
}

/// Daily relevant and noise counts for one context.
fn context_counts(cfg: &ScenarioConfig, c: &ContextConfig, stream: u64) -> (Vec<u32>, Vec<u32>) {
    let mut rng = stream_rng(cfg.seed, stream);
    let days = cfg.duration_days as usize;
    let gamma = (c.volatility > 0.0).then(|| {
        let shape = 1.0 / (c.volatility * c.volatility);
        Gamma::new(shape, 1.0 / shape).expect("positive shape")
    });
    let mut burst_left = 0u32;
    let mut relevant = Vec::with_capacity(days);
    let mut noise = Vec::with_capacity(days);
    for i in 0..days {
        let d = cfg.day(i);
        let mut burst = 1.0;
        if let Some(b) = c.bursts {
            if burst_left == 0 && rng.random_bool((b.per_year / 365.0).min(1.0)) {
                burst_left = rng.random_range(1..=b.max_days);
            }
            if burst_left > 0 {
                burst_left -= 1;
                burst = b.multiplier;
            }
        }
        let mix = gamma.map_or(1.0, |g| g.sample(&mut rng));
        let mut n = poisson(&mut rng, c.baseline * mix * c.rho(d) * burst);
        if let Some(cap) = c.outside_cap {
            if !c.in_window(d) {
                n = n.min(cap);
            }
        }
        relevant.push(n);
        noise.push(poisson(&mut rng, c.noise_rate));
    }
    (relevant, noise)
}

/// True daily relevant counts per context.
pub fn generate_counts(cfg: &ScenarioConfig) -> Result<BTreeMap<DiseaseContext, TimeSeries>> {
    cfg.validate()?;
    Ok(cfg
        .contexts
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let (rel, _) = context_counts(cfg, c, k as u64);
            (c.context.clone(), TimeSeries::new(c.context.clone(), cfg.start, rel))
        })
        .collect())
}

/// Everything a scenario produces.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutput {
    pub config: ScenarioConfig,
    /// In timestamp order; ids follow that order.
    pub messages: Vec<Message>,
    pub key: BTreeMap<String, Relevance>,
    pub events: Vec<GroundTruthEvent>,
    /// True relevant counts per context.
    pub counts: BTreeMap<DiseaseContext, TimeSeries>,
}

impl StreamOutput {
    /// Messages whose timestamps fall in week `w` (0-based from the start).
    pub fn week(&self, w: u32) -> Vec<&Message> {
        let from = self.config.start + Duration::days(i64::from(w) * 7);
        let to = from + Duration::days(7);
        self.messages.iter().filter(|m| m.date() >= from && m.date() < to).collect()
    }

    pub fn weeks(&self) -> u32 {
        self.config.duration_days.div_ceil(7)
    }

    /// Messages grouped by week, in stream order.
    pub fn weekly_batches(&self) -> Vec<Vec<Message>> {
        (0..self.weeks()).map(|w| self.week(w).into_iter().cloned().collect()).collect()
    }

    pub fn label(&self, id: &str) -> Option<Relevance> {
        self.key.get(id).copied()
    }

    /// Writes `messages.jsonl`, `ground_truth.csv`, `labels.csv` and
    /// `scenario.json` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut msgs = String::new();
        for m in &self.messages {
            msgs.push_str(&m.to_line());
            msgs.push('\n');
        }
        fs::write(dir.join("messages.jsonl"), msgs)?;
        let mut gt = Vec::new();
        write_ground_truth(&self.events, &mut gt)?;
        fs::write(dir.join("ground_truth.csv"), gt)?;
        let mut key = fs::File::create(dir.join("labels.csv"))?;
        writeln!(key, "message_id,relevance")?;
        for m in &self.messages {
            writeln!(key, "{},{}", m.id, self.key[&m.id].as_str())?;
        }
        fs::write(dir.join("scenario.json"), serde_json::to_string_pretty(&self.config)?)?;
        Ok(())
    }
}

/// Reads a `message_id,relevance` label key.
pub fn read_label_key(r: impl std::io::BufRead) -> Result<BTreeMap<String, Relevance>> {
    let mut out = BTreeMap::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("message_id")) {
            continue;
        }
        let (id, label) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("label key line {}: expected id,label", n + 1)))?;
        out.insert(id.to_string(), label.parse()?);
    }
    Ok(out)
}

struct Draft {
    second: u32,
    day: usize,
    text: String,
    geo: Option<(f64, f64)>,
    profile: Option<String>,
    label: Relevance,
}

struct Vocab {
    conditions: Vec<String>,
    locations: Vec<String>,
    negatives: Vec<String>,
}

fn vocab_for(c: &DiseaseContext, conds: &Gazetteer, locs: &Gazetteer, negatives: &KeywordList) -> Result<Vocab> {
    let conditions = templates::surfaces(conds, &c.disease);
    let locations = templates::surfaces(locs, &c.country);
    if conditions.is_empty() || locations.is_empty() {
        return Err(Error::InvalidScenario(format!("{c}: no unambiguous gazetteer surface for the condition or country")));
    }
    let negatives = templates::negatives_for(negatives, &conditions);
    Ok(Vocab { conditions, locations, negatives })
}

fn geo_point(rng: &mut impl Rng, bounds: &CountryBounds, country: &str) -> Option<(f64, f64)> {
    let boxes: Vec<_> = bounds.boxes().iter().filter(|b| b.country == country).collect();
    for _ in 0..64 {
        let b = boxes.choose(rng)?;
        let lat = rng.random_range(b.min_lat..=b.max_lat);
        let lon = rng.random_range(b.min_lon..=b.max_lon);
        if bounds.lookup(lat, lon) == Some(country) {
            return Some((lat, lon));
        }
    }
    None
}

/// Renders the full stream. Identical configs give identical output.
pub fn generate_stream(cfg: &ScenarioConfig) -> Result<StreamOutput> {
    cfg.validate()?;
    let conds = Gazetteer::builtin_conditions();
    let locs = Gazetteer::builtin_locations();
    let negatives = KeywordList::builtin();
    let bounds = CountryBounds::builtin();
    let vocabs: Vec<Vocab> = cfg
        .contexts
        .iter()
        .map(|c| vocab_for(&c.context, &conds, &locs, &negatives))
        .collect::<Result<_>>()?;

    let days = cfg.duration_days as usize;
    let mut rng = stream_rng(cfg.seed, 1 << 32);
    let mut drafts: Vec<Draft> = Vec::new();
    let mut counts = BTreeMap::new();
    let mut per_day_total = vec![0usize; days];
    for (k, (c, v)) in cfg.contexts.iter().zip(&vocabs).enumerate() {
        let (rel, noise) = context_counts(cfg, c, k as u64);
        for day in 0..days {
            per_day_total[day] += (rel[day] + noise[day]) as usize;
            for _ in 0..rel[day] {
                let cond = v.conditions.choose(&mut rng).expect("nonempty");
                let loc = v.locations.choose(&mut rng).expect("nonempty");
                let u: f64 = rng.random();
                let (mut text_loc, mut geo, mut profile) = (Some(loc.as_str()), None, None);
                if u < cfg.geo_fraction {
                    geo = geo_point(&mut rng, &bounds, &c.context.country);
                    if geo.is_some() {
                        text_loc = None;
                    }
                } else if u < cfg.geo_fraction + cfg.profile_fraction {
                    text_loc = None;
                    profile = Some(loc.clone());
                }
                drafts.push(Draft {
                    second: rng.random_range(0..86_400),
                    day,
                    text: templates::relevant(&mut rng, cond, text_loc),
                    geo,
                    profile,
                    label: Relevance::Relevant,
                });
            }
            for _ in 0..noise[day] {
                let cond = v.conditions.choose(&mut rng).expect("nonempty");
                let loc = v.locations.choose(&mut rng).expect("nonempty");
                let geo = if rng.random_bool(cfg.geo_fraction) {
                    geo_point(&mut rng, &bounds, &c.context.country)
                } else {
                    None
                };
                drafts.push(Draft {
                    second: rng.random_range(0..86_400),
                    day,
                    text: templates::noise(&mut rng, &v.negatives, cond, loc),
                    geo,
                    profile: None,
                    label: Relevance::Irrelevant,
                });
            }
        }
        counts.insert(c.context.clone(), TimeSeries::new(c.context.clone(), cfg.start, rel));
    }
    for ev in &cfg.drift {
        let share = ev.fraction / (1.0 - ev.fraction);
        let country = locs.lookup(&ev.location).map(|r| r.id.to_string());
        for (day, &total) in per_day_total.iter().enumerate() {
            if !ev.covers((day / 7) as u32) {
                continue;
            }
            let n = (share * total as f64).round() as usize;
            let label = if ev.relevant { Relevance::Relevant } else { Relevance::Irrelevant };
            for _ in 0..n {
                let geo = match &country {
                    Some(c) if rng.random_bool(cfg.geo_fraction) => geo_point(&mut rng, &bounds, c),
                    _ => None,
                };
                drafts.push(Draft {
                    second: rng.random_range(0..86_400),
                    day,
                    text: templates::drift(&mut rng, &ev.terms, &ev.condition, Some(&ev.location)),
                    geo,
                    profile: None,
                    label,
                });
            }
        }
    }
    // stable sort keeps generation order among equal timestamps
    drafts.sort_by_key(|d| (d.day, d.second));
    let width = drafts.len().max(1).to_string().len().max(6);
    let mut messages = Vec::with_capacity(drafts.len());
    let mut key = BTreeMap::new();
    for (n, d) in drafts.into_iter().enumerate() {
        let date = cfg.day(d.day);
        let time = NaiveTime::from_num_seconds_from_midnight_opt(d.second, 0).expect("second of day");
        let ts = Utc.from_utc_datetime(&date.and_time(time));
        let id = format!("{}-{:0width$}", cfg.name, n + 1);
        let mut m = Message::new(id.clone(), ts, d.text);
        if let Some((lat, lon)) = d.geo {
            m = m.with_geo(lat, lon);
        }
        if let Some(p) = d.profile {
            m = m.with_profile(p);
        }
        key.insert(id, d.label);
        messages.push(m);
    }
    Ok(StreamOutput {
        config: cfg.clone(),
        messages,
        key,
        events: cfg.ground_truth(),
        counts,
    })
}

#[cfg(test)]
mod tests;
