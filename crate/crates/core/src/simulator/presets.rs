//! Named scenarios shaped after the five evaluated outbreaks and the
//! wedding-week confounder.

use chrono::NaiveDate;

use super::{Bursts, ContextConfig, DriftEvent, OutbreakWindow, ScenarioConfig, DEFAULT_GEO_FRACTION, DEFAULT_PROFILE_FRACTION};
use crate::error::{Error, Result};
use crate::series::DiseaseContext;

pub const PRESETS: &[&str] = &["anthrax_bd", "botulism_fr", "cholera_ke", "ecoli_de", "mumps_ca", "drift_royal_wedding"];

fn date(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").expect("preset date")
}

fn ctx(disease: &str, country: &str) -> DiseaseContext {
    DiseaseContext::new(disease, country).expect("preset context")
}

fn window(start: &str, end: &str, multiplier: f64, up: u32, down: u32) -> OutbreakWindow {
    OutbreakWindow {
        start: date(start),
        end: date(end),
        multiplier,
        ramp_up_days: up,
        ramp_down_days: down,
    }
}

fn year(name: &str, contexts: Vec<ContextConfig>) -> ScenarioConfig {
    ScenarioConfig {
        name: name.to_string(),
        start: date("2011-01-01"),
        duration_days: 365,
        contexts,
        drift: Vec::new(),
        geo_fraction: DEFAULT_GEO_FRACTION,
        profile_fraction: DEFAULT_PROFILE_FRACTION,
        seed: 0,
    }
}

fn wedding_contexts() -> Vec<ContextConfig> {
    let mut flu = ContextConfig::new(ctx("influenza", "GB"), 30.0);
    flu.noise_rate = 8.0;
    let mut fever = ContextConfig::new(ctx("fever", "GB"), 20.0);
    fever.noise_rate = 6.0;
    vec![flu, fever]
}

fn wedding_event(start_week: u32, end_week: u32, fraction: f64) -> DriftEvent {
    DriftEvent {
        start_week,
        end_week,
        terms: ["royal wedding", "kate", "william", "westminster abbey", "the dress", "wedding party"]
            .map(String::from)
            .to_vec(),
        fraction,
        condition: "fever".into(),
        location: "london".into(),
        relevant: false,
    }
}

/// Quadrant-calibrated scenario by name, seeded with 0.
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let cfg = match name {
        // high oscillation, low magnitude: 0..5 a day all year
        "anthrax_bd" => {
            let mut c = ContextConfig::new(ctx("anthrax", "BD"), 1.2);
            c.volatility = 0.6;
            c.bursts = Some(Bursts { per_year: 45.0, max_days: 4, multiplier: 5.0 });
            c.outside_cap = Some(8);
            c.windows = vec![window("2011-06-01", "2011-08-31", 2.5, 10, 20)];
            c.noise_rate = 0.5;
            year(name, vec![c])
        }
        // low oscillation, low magnitude
        "botulism_fr" => {
            let mut c = ContextConfig::new(ctx("botulism", "FR"), 0.15);
            c.windows = vec![window("2011-09-01", "2011-09-30", 25.0, 5, 10)];
            c.noise_rate = 0.3;
            year(name, vec![c])
        }
        // low oscillation, low magnitude with a clear peak
        "cholera_ke" => {
            let mut c = ContextConfig::new(ctx("cholera", "KE"), 1.0);
            c.windows = vec![window("2011-11-01", "2011-12-31", 20.0, 10, 25)];
            c.noise_rate = 1.0;
            year(name, vec![c])
        }
        // low oscillation, high magnitude: the peak is about two orders of
        // magnitude above the botulism one
        "ecoli_de" => {
            let mut c = ContextConfig::new(ctx("ehec", "DE"), 1.0);
            c.windows = vec![window("2011-05-01", "2011-07-31", 250.0, 12, 50)];
            c.noise_rate = 2.0;
            year(name, vec![c])
        }
        // high oscillation, high magnitude: endemic and ambiguous
        "mumps_ca" => {
            let mut c = ContextConfig::new(ctx("mumps", "CA"), 40.0);
            c.volatility = 0.35;
            c.bursts = Some(Bursts { per_year: 24.0, max_days: 4, multiplier: 2.5 });
            c.windows = vec![window("2011-06-01", "2011-08-31", 2.0, 15, 30)];
            c.noise_rate = 10.0;
            year(name, vec![c])
        }
        // six weeks from 2011-03-26; week 4 holds the wedding day
        "drift_royal_wedding" => ScenarioConfig {
            name: name.to_string(),
            start: date("2011-03-26"),
            duration_days: 42,
            contexts: wedding_contexts(),
            drift: vec![wedding_event(4, 4, 0.3)],
            geo_fraction: DEFAULT_GEO_FRACTION,
            profile_fraction: DEFAULT_PROFILE_FRACTION,
            seed: 0,
        },
        other => {
            return Err(Error::UnknownPreset {
                name: other.to_string(),
                available: PRESETS.join(", "),
            })
        }
    };
    Ok(cfg)
}

/// Five weeks where the confounder appears from week 1 on and persists,
/// used to compare labeling strategies.
pub fn strategy_stream(fraction: f64) -> ScenarioConfig {
    ScenarioConfig {
        name: "drift_stream".into(),
        start: date("2011-04-02"),
        duration_days: 35,
        contexts: wedding_contexts(),
        drift: vec![wedding_event(1, 4, fraction)],
        geo_fraction: DEFAULT_GEO_FRACTION,
        profile_fraction: DEFAULT_PROFILE_FRACTION,
        seed: 0,
    }
}
