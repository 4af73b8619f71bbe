//! Scoring alerts against ground-truth outbreak windows.
//!
//! Precision counts alarms; recall counts events. An alarm is a true
//! positive when it falls between `start − margin` and `end` of an event in
//! the same context.

use std::io::{BufRead, Write};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{DiseaseContext, TimeSeries};
use crate::surveillance::{run_surveillance, Alert, Algorithm};

pub const DEFAULT_EARLY_MARGIN_DAYS: i64 = 10;

const BUILTIN_GROUND_TRUTH: &str = include_str!("../data/ground_truth.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndConfidence {
    Low,
    High,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthEvent {
    pub context: DiseaseContext,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub note: String,
    pub end_confidence: EndConfidence,
}

impl GroundTruthEvent {
    pub fn new(context: DiseaseContext, start: NaiveDate, end: NaiveDate, note: impl Into<String>) -> Result<Self> {
        if end < start {
            return Err(Error::EmptyRange);
        }
        Ok(Self {
            context,
            start,
            end,
            note: note.into(),
            end_confidence: EndConfidence::Low,
        })
    }

    pub fn window_contains(&self, d: NaiveDate, margin_days: i64) -> bool {
        self.start - Duration::days(margin_days) <= d && d <= self.end
    }
}

/// Parses `disease,country,start,end,note[,end_confidence]` rows. A header
/// row starting with `disease` is skipped.
pub fn parse_ground_truth(r: impl BufRead) -> Result<Vec<GroundTruthEvent>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (n == 0 && line.starts_with("disease")) {
            continue;
        }
        let bad = |what: &str| Error::Parse(format!("ground truth line {}: {what}", n + 1));
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() < 4 {
            return Err(bad("expected disease,country,start,end,note"));
        }
        let date = |s: &str| NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| bad(&e.to_string()));
        let ctx = DiseaseContext::new(cols[0], cols[1]).map_err(|e| bad(&e.to_string()))?;
        let note = cols.get(4).copied().unwrap_or("");
        let mut ev = GroundTruthEvent::new(ctx, date(cols[2])?, date(cols[3])?, note).map_err(|_| bad("end before start"))?;
        ev.end_confidence = match cols.get(5).copied() {
            None | Some("") | Some("low") => EndConfidence::Low,
            Some("high") => EndConfidence::High,
            Some(other) => return Err(bad(&format!("unknown end_confidence {other:?}"))),
        };
        out.push(ev);
    }
    Ok(out)
}

/// Writes events in the format read by [`parse_ground_truth`].
pub fn write_ground_truth(events: &[GroundTruthEvent], mut w: impl Write) -> Result<()> {
    writeln!(w, "disease,country,start,end,note,end_confidence")?;
    for e in events {
        let conf = match e.end_confidence {
            EndConfidence::Low => "low",
            EndConfidence::High => "high",
        };
        let note = e.note.replace(',', ";");
        writeln!(w, "{},{},{},{},{note},{conf}", e.context.disease, e.context.country, e.start, e.end)?;
    }
    Ok(())
}

pub fn builtin_ground_truth() -> Vec<GroundTruthEvent> {
    parse_ground_truth(BUILTIN_GROUND_TRUTH.as_bytes()).expect("bundled ground truth parses")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMatch {
    pub context: DiseaseContext,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub alarms: usize,
    pub first_alarm: Option<NaiveDate>,
    pub end_confidence: EndConfidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub detected_events: usize,
    pub total_events: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    /// Per-event view, one entry per event in input order.
    pub events: Vec<EventMatch>,
}

/// Fills in the ratios; any zero denominator yields 0.
pub fn compute_metrics(tp: usize, fp: usize, detected_events: usize, total_events: usize) -> MatchReport {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(detected_events, total_events);
    let f_measure = if precision == 0.0 || recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    MatchReport {
        tp,
        fp,
        fn_: total_events - detected_events,
        detected_events,
        total_events,
        precision,
        recall,
        f_measure,
        events: Vec::new(),
    }
}

/// An alarm inside several windows is credited to the earliest-starting one.
pub fn match_alerts(alerts: &[Alert], events: &[GroundTruthEvent], early_margin_days: i64) -> MatchReport {
    let mut per_event: Vec<EventMatch> = events
        .iter()
        .map(|e| EventMatch {
            context: e.context.clone(),
            start: e.start,
            end: e.end,
            alarms: 0,
            first_alarm: None,
            end_confidence: e.end_confidence,
        })
        .collect();
    let (mut tp, mut fp) = (0, 0);
    for a in alerts {
        let hit = events
            .iter()
            .enumerate()
            .filter(|(_, e)| e.context == a.context && e.window_contains(a.date, early_margin_days))
            .min_by_key(|(i, e)| (e.start, *i))
            .map(|(i, _)| i);
        match hit {
            Some(i) => {
                tp += 1;
                let m = &mut per_event[i];
                m.alarms += 1;
                m.first_alarm = Some(m.first_alarm.map_or(a.date, |d| d.min(a.date)));
            }
            None => fp += 1,
        }
    }
    let detected = per_event.iter().filter(|m| m.alarms > 0).count();
    MatchReport {
        events: per_event,
        ..compute_metrics(tp, fp, detected, events.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub context: DiseaseContext,
    pub algorithm: String,
    pub params_digest: String,
    pub report: MatchReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub rows: Vec<BenchmarkRow>,
    pub warnings: Vec<String>,
}

/// One row per (series, algorithm). Series without ground truth, or too
/// short for an algorithm, are skipped with a warning.
pub fn benchmark(series: &[TimeSeries], events: &[GroundTruthEvent], grid: &[Algorithm], early_margin_days: i64) -> BenchmarkTable {
    let mut table = BenchmarkTable::default();
    for s in series {
        let evs: Vec<GroundTruthEvent> = events.iter().filter(|e| e.context == s.context).cloned().collect();
        if evs.is_empty() {
            table.warnings.push(format!("{}: no ground truth, skipped", s.context));
            continue;
        }
        for algo in grid {
            match run_surveillance(s, algo) {
                Ok(alerts) => table.rows.push(BenchmarkRow {
                    context: s.context.clone(),
                    algorithm: algo.id(),
                    params_digest: algo.params_digest(),
                    report: match_alerts(&alerts, &evs, early_margin_days),
                }),
                Err(e) => table.warnings.push(format!("{} {}: {e}", s.context, algo.id())),
            }
        }
    }
    table
}

impl BenchmarkTable {
    /// Plain-text comparison table.
    pub fn render(&self) -> String {
        let mut out = String::from("# precision is alarm-based, recall is event-based\n");
        out.push_str(&format!(
            "{:<16} {:<18} {:>5} {:>5} {:>4} {:>9} {:>7} {:>9}\n",
            "context", "algorithm", "tp", "fp", "fn", "precision", "recall", "f_measure"
        ));
        for r in &self.rows {
            let m = &r.report;
            out.push_str(&format!(
                "{:<16} {:<18} {:>5} {:>5} {:>4} {:>9.3} {:>7.3} {:>9.3}\n",
                r.context.to_string(),
                r.algorithm,
                m.tp,
                m.fp,
                m.fn_,
                m.precision,
                m.recall,
                m.f_measure
            ));
        }
        for w in &self.warnings {
            out.push_str(&format!("# warning: {w}\n"));
        }
        out
    }
}
