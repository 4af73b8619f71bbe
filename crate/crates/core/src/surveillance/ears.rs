//! EARS C1, C2 and C3 detectors on daily counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{mean, sample_sd, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarsVariant {
    C1,
    C2,
    /// Mean of the last three days against the C2 baseline.
    C3,
    /// Sum of the three most recent C2 statistics with `k = 1`, alarming
    /// above 2.
    C3Classical,
}

impl EarsVariant {
    pub fn id(self) -> &'static str {
        match self {
            Self::C1 => "ears_c1",
            Self::C2 => "ears_c2",
            Self::C3 => "ears_c3",
            Self::C3Classical => "ears_c3_classical",
        }
    }

    /// Smallest day index with enough history.
    pub fn min_index(self) -> usize {
        match self {
            Self::C1 => 7,
            Self::C2 => 10,
            Self::C3 | Self::C3Classical => 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarsParams {
    pub variant: EarsVariant,
    pub k: f64,
}

impl EarsParams {
    pub fn new(variant: EarsVariant) -> Self {
        Self { variant, k: 3.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::InvalidParameter(format!("k = {} must be positive", self.k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarsOutcome<T> {
    pub statistic: T,
    /// Level the tested value must exceed (`μ + kσ` for C1–C3).
    pub threshold: T,
    /// The tested value: `X_t`, or the 3-day mean for C3.
    pub tested: T,
    pub alarm: bool,
}

/// `max(0, (x − (μ + kσ))/σ)` over the baseline; with `σ = 0` the statistic
/// is `+∞` when `x > μ` and 0 otherwise.
pub fn ears_statistic<T: Real>(baseline: &[T], x: T, k: T) -> (T, T) {
    let mu = mean(baseline);
    let sd = sample_sd(baseline);
    let threshold = mu + k * sd;
    if sd.is_zero() {
        let s = if x > mu { T::infinity() } else { T::zero() };
        return (s, threshold);
    }
    (((x - threshold) / sd).max(T::zero()), threshold)
}

fn window<T>(counts: &[T], t: usize, lag_from: usize, lag_to: usize) -> &[T] {
    &counts[t - lag_from..=t - lag_to]
}

pub fn ears_detect<T: Real>(counts: &[T], t: usize, p: &EarsParams) -> Result<EarsOutcome<T>> {
    p.validate()?;
    let required = p.variant.min_index();
    if t < required || t >= counts.len() {
        return Err(Error::InsufficientHistory {
            required,
            index: t,
            available: t.min(counts.len()),
        });
    }
    let k = T::lit(p.k);
    let out = match p.variant {
        EarsVariant::C1 => {
            let (s, th) = ears_statistic(window(counts, t, 7, 1), counts[t], k);
            EarsOutcome { statistic: s, threshold: th, tested: counts[t], alarm: s > T::zero() }
        }
        EarsVariant::C2 => {
            let (s, th) = ears_statistic(window(counts, t, 10, 4), counts[t], k);
            EarsOutcome { statistic: s, threshold: th, tested: counts[t], alarm: s > T::zero() }
        }
        EarsVariant::C3 => {
            let x = (counts[t] + counts[t - 1] + counts[t - 2]) / T::lit(3.0);
            let (s, th) = ears_statistic(window(counts, t, 10, 4), x, k);
            EarsOutcome { statistic: s, threshold: th, tested: x, alarm: s > T::zero() }
        }
        EarsVariant::C3Classical => {
            let mut sum = T::zero();
            for lag in 0..3 {
                let i = t - lag;
                sum = sum + ears_statistic(window(counts, i, 10, 4), counts[i], T::one()).0;
            }
            let th = T::lit(2.0);
            EarsOutcome { statistic: sum, threshold: th, tested: sum, alarm: sum > th }
        }
    };
    Ok(out)
}
