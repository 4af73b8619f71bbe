//! Aberration detection over daily series.

pub mod ears;
pub mod farrington;
pub mod glm;

use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::classifier::fnv1a;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::series::{DiseaseContext, TimeSeries};

pub use ears::{ears_detect, ears_statistic, EarsOutcome, EarsParams, EarsVariant};
pub use farrington::{farrington_detect, FarringtonOutcome, FarringtonParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Algorithm {
    Ears(EarsParams),
    Farrington(FarringtonParams),
}

impl Algorithm {
    pub fn c1() -> Self {
        Self::Ears(EarsParams::new(EarsVariant::C1))
    }

    pub fn c2() -> Self {
        Self::Ears(EarsParams::new(EarsVariant::C2))
    }

    pub fn c3() -> Self {
        Self::Ears(EarsParams::new(EarsVariant::C3))
    }

    pub fn farrington(w: usize) -> Self {
        Self::Farrington(FarringtonParams::new(w))
    }

    /// C1, C2, C3 and Farrington with w = 2, 3, 4.
    pub fn standard_grid() -> Vec<Self> {
        vec![Self::c1(), Self::c2(), Self::c3(), Self::farrington(2), Self::farrington(3), Self::farrington(4)]
    }

    pub fn id(&self) -> String {
        match self {
            Self::Ears(p) => p.variant.id().to_string(),
            Self::Farrington(p) => p.id(),
        }
    }

    /// Short hash of the full parameter set.
    pub fn params_digest(&self) -> String {
        let json = serde_json::to_string(self).expect("params serialize");
        format!("{:08x}", fnv1a(json.as_bytes()) as u32)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    /// Accepts `c1`, `c2`, `c3`, `c3_classical`, `farrington` (w = 3) and
    /// `farrington_w<N>` / `fa_w<N>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        let s = s.strip_prefix("ears_").unwrap_or(&s);
        match s {
            "c1" => return Ok(Self::c1()),
            "c2" => return Ok(Self::c2()),
            "c3" => return Ok(Self::c3()),
            "c3_classical" => return Ok(Self::Ears(EarsParams::new(EarsVariant::C3Classical))),
            "farrington" | "fa" => return Ok(Self::farrington(3)),
            _ => {}
        }
        let w = s
            .strip_prefix("farrington_w")
            .or_else(|| s.strip_prefix("fa_w"))
            .and_then(|w| w.parse::<usize>().ok())
            .filter(|&w| w >= 1)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown algorithm {s:?}")))?;
        Ok(Self::farrington(w))
    }
}

/// Field order is part of the line format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub context: DiseaseContext,
    pub date: NaiveDate,
    pub algorithm: String,
    pub params_digest: String,
    /// Infinite for zero-variance EARS baselines; written as `"inf"`.
    #[serde(with = "maybe_infinite")]
    pub statistic: f64,
    pub threshold: f64,
    pub observed: f64,
}

impl Alert {
    pub fn id(&self) -> String {
        let key = format!("{}|{}|{}|{}", self.context, self.date, self.algorithm, self.params_digest);
        format!("a-{:016x}", fnv1a(key.as_bytes()))
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("alert serializes")
    }
}

mod maybe_infinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad statistic {t:?}"))),
        }
    }
}

/// Runs the detector over every index with enough history: days for EARS,
/// weeks for Farrington (alerts dated at the week's last day).
pub fn run_surveillance_with<T: Real>(s: &TimeSeries, algo: &Algorithm) -> Result<Vec<Alert>> {
    let mk = |date: NaiveDate, statistic: T, threshold: T, observed: T| Alert {
        context: s.context.clone(),
        date,
        algorithm: algo.id(),
        params_digest: algo.params_digest(),
        statistic: statistic.as_f64(),
        threshold: threshold.as_f64(),
        observed: observed.as_f64(),
    };
    let mut alerts = Vec::new();
    match algo {
        Algorithm::Ears(p) => {
            p.validate()?;
            let counts: Vec<T> = s.counts.iter().map(|&c| T::from_count(c as usize)).collect();
            let first = p.variant.min_index();
            if counts.len() <= first {
                return Err(Error::InsufficientHistory {
                    required: first + 1,
                    index: first,
                    available: counts.len(),
                });
            }
            for t in first..counts.len() {
                let o = ears_detect(&counts, t, p)?;
                if o.alarm {
                    alerts.push(mk(s.date_at(t), o.statistic, o.threshold, counts[t]));
                }
            }
        }
        Algorithm::Farrington(p) => {
            p.validate()?;
            let weekly = s.weekly();
            let counts: Vec<T> = weekly.counts.iter().map(|&c| T::from_count(c as usize)).collect();
            let first = p.min_index();
            if counts.len() <= first {
                return Err(Error::InsufficientHistory {
                    required: 7 * (first + 1),
                    index: first,
                    available: s.len(),
                });
            }
            for t in first..counts.len() {
                let o = farrington_detect(&counts, t, p)?;
                if o.alarm {
                    alerts.push(mk(weekly.week_end(t), o.expected, o.upper, counts[t]));
                }
            }
        }
    }
    Ok(alerts)
}

pub fn run_surveillance(s: &TimeSeries, algo: &Algorithm) -> Result<Vec<Alert>> {
    run_surveillance_with::<f64>(s, algo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(counts: Vec<u32>) -> TimeSeries {
        TimeSeries::new(DiseaseContext::new("ehec", "DE").unwrap(), "2011-01-01".parse().unwrap(), counts)
    }

    #[test]
    fn constant_series_is_quiet() {
        let s = series(vec![5; 120]);
        for a in Algorithm::standard_grid() {
            assert!(run_surveillance(&s, &a).unwrap().is_empty(), "{a}");
        }
    }

    /// Days where the C1 rule fires, recomputed from scratch.
    fn c1_oracle(c: &[u32]) -> Vec<usize> {
        (7..c.len())
            .filter(|&t| {
                let b: Vec<f64> = c[t - 7..t].iter().map(|&v| f64::from(v)).collect();
                let m = b.iter().sum::<f64>() / 7.0;
                let sd = (b.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 6.0).sqrt();
                let x = f64::from(c[t]);
                if sd == 0.0 { x > m } else { x > m + 3.0 * sd }
            })
            .collect()
    }

    #[test]
    fn single_spike_under_c1() {
        let mut counts = vec![0u32; 40];
        counts[20] = 9;
        let s = series(counts.clone());
        let got: Vec<usize> = run_surveillance(&s, &Algorithm::c1())
            .unwrap()
            .iter()
            .map(|a| s.index_of(a.date).unwrap())
            .collect();
        assert_eq!(got, c1_oracle(&counts));
        assert_eq!(got, vec![20]);
        let again = run_surveillance(&s, &Algorithm::c1()).unwrap();
        assert_eq!(again, run_surveillance(&s, &Algorithm::c1()).unwrap());
    }

    #[test]
    fn farrington_dates_week_end() {
        let mut counts = vec![2u32; 70];
        for c in &mut counts[56..63] {
            *c = 30;
        }
        let s = series(counts);
        let alerts = run_surveillance(&s, &Algorithm::farrington(3)).unwrap();
        assert_eq!(alerts.len(), 1);
        assert_eq!(alerts[0].date, s.date_at(62));
        assert_eq!(alerts[0].observed, 210.0);
        assert!(alerts[0].observed > alerts[0].threshold);
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            run_surveillance(&series(vec![1; 7]), &Algorithm::c1()),
            Err(Error::InsufficientHistory { .. })
        ));
        assert!(run_surveillance(&series(vec![1; 40]), &Algorithm::farrington(3)).is_err());
    }

    #[test]
    fn algorithm_names() {
        for a in Algorithm::standard_grid() {
            assert_eq!(a.id().parse::<Algorithm>().unwrap(), a);
        }
        assert_eq!("FA_W2".parse::<Algorithm>().unwrap(), Algorithm::farrington(2));
        assert!("c9".parse::<Algorithm>().is_err());
        assert_ne!(Algorithm::farrington(2).params_digest(), Algorithm::farrington(3).params_digest());
    }

    #[test]
    fn alert_line_field_order() {
        let s = series({
            let mut c = vec![0; 20];
            c[15] = 4;
            c
        });
        let a = &run_surveillance(&s, &Algorithm::c1()).unwrap()[0];
        let line = a.to_line();
        let keys = ["context", "date", "algorithm", "params_digest", "statistic", "threshold", "observed"];
        let pos: Vec<usize> = keys.iter().map(|k| line.find(&format!("\"{k}\"")).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{line}");
        assert!(a.id().starts_with("a-"));
        assert!(line.contains("\"statistic\":\"inf\""));
        assert_eq!(&serde_json::from_str::<Alert>(&line).unwrap(), a);
    }
}
