//! Farrington-style detector on weekly counts: quasi-Poisson log-linear fit
//! to reference weeks and a 2/3-power prediction bound.

use serde::{Deserialize, Serialize};

use super::glm::{fit_poisson, PoissonFit};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::stats::{normal_quantile, t_two_sided_p};

pub const WEEKS_PER_YEAR: usize = 52;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FarringtonParams {
    /// Half-window in weeks.
    pub w: usize,
    /// Years of history; 0 uses the weeks just before the tested week.
    pub b: usize,
    pub dispersion_floor: f64,
    pub trend: bool,
    /// One-sided level of the prediction bound.
    pub alpha: f64,
}

impl FarringtonParams {
    pub fn new(w: usize) -> Self {
        Self {
            w,
            b: 0,
            dispersion_floor: 1.0,
            trend: true,
            alpha: 0.025,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w == 0 {
            return Err(Error::InvalidParameter("w must be at least 1".into()));
        }
        if !(self.dispersion_floor >= 1.0) {
            return Err(Error::InvalidParameter("dispersion floor must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::InvalidParameter(format!("alpha = {} outside (0, 0.5)", self.alpha)));
        }
        Ok(())
    }

    pub fn id(&self) -> String {
        format!("farrington_w{}", self.w)
    }

    /// Smallest week index with a full reference set.
    pub fn min_index(&self) -> usize {
        if self.b == 0 {
            2 * self.w + 1
        } else {
            WEEKS_PER_YEAR * self.b + self.w
        }
    }
}

/// Reference week indices for week `t`. With `b = 0` these are the `2w`
/// weeks ending at `t − 2`; otherwise weeks within `±w` of `t` in each of
/// the `b` previous years.
pub fn reference_weeks(t: usize, p: &FarringtonParams) -> Result<Vec<usize>> {
    let required = p.min_index();
    if t < required {
        return Err(Error::InsufficientHistory {
            required,
            index: t,
            available: t,
        });
    }
    if p.b == 0 {
        return Ok((t - 1 - 2 * p.w..=t - 2).collect());
    }
    let mut out = Vec::new();
    for y in (1..=p.b).rev() {
        let centre = t - WEEKS_PER_YEAR * y;
        out.extend(centre - p.w..=centre + p.w);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FarringtonOutcome<T> {
    pub expected: T,
    pub upper: T,
    pub alarm: bool,
    pub dispersion: T,
    pub trend_used: bool,
}

fn dispersion<T: Real>(fit: &PoissonFit<T>, y: &[T], floor: T) -> T {
    let df = y.len().saturating_sub(fit.beta.len());
    if df == 0 {
        return floor;
    }
    (fit.pearson(y) / T::from_count(df)).max(floor)
}

/// Prediction bound `(μ^{2/3} + z·se)^{3/2}` with
/// `se² = 4/9 · μ^{1/3} · (φ + μ·Var(η̂))`.
pub fn upper_bound<T: Real>(mu: T, phi: T, var_eta: T, z: T) -> T {
    if mu.is_zero() {
        return T::zero();
    }
    let two_thirds = T::lit(2.0 / 3.0);
    let tau = phi + mu * var_eta;
    let se = (T::lit(4.0 / 9.0) * mu.powf(T::lit(1.0 / 3.0)) * tau).sqrt();
    let base = mu.powf(two_thirds) + z * se;
    base.max(T::zero()).powf(T::lit(1.5))
}

/// Compares `weekly[t]` with the bound fitted on its reference weeks.
pub fn farrington_detect<T: Real>(weekly: &[T], t: usize, p: &FarringtonParams) -> Result<FarringtonOutcome<T>> {
    p.validate()?;
    if t >= weekly.len() {
        return Err(Error::InsufficientHistory {
            required: p.min_index(),
            index: t,
            available: weekly.len(),
        });
    }
    let refs = reference_weeks(t, p)?;
    let y: Vec<T> = refs.iter().map(|&i| weekly[i]).collect();
    let time: Vec<T> = refs.iter().map(|&i| T::from_count(i)).collect();
    let observed = weekly[t];
    let floor = T::lit(p.dispersion_floor);
    if y.iter().all(|v| v.is_zero()) {
        return Ok(FarringtonOutcome {
            expected: T::zero(),
            upper: T::zero(),
            alarm: observed > T::zero(),
            dispersion: floor,
            trend_used: false,
        });
    }
    let t_now = T::from_count(t);
    let y_max = y.iter().copied().fold(T::zero(), T::max);
    let y_min = y.iter().copied().fold(y_max, T::min);

    let mut chosen = None;
    if p.trend && y.len() > 2 {
        if let Ok(fit) = fit_poisson(&y, &time, true) {
            let phi = dispersion(&fit, &y, floor);
            let se = (phi * fit.cov[3]).sqrt();
            let tstat = fit.beta[1] / se;
            let pval = t_two_sided_p(tstat.as_f64(), (y.len() - 2) as f64);
            let mu0 = fit.predict(t_now);
            if pval < 0.05 && mu0 >= y_min && mu0 <= y_max {
                chosen = Some((fit, phi));
            }
        }
    }
    let (fit, phi) = match chosen {
        Some(c) => c,
        None => {
            let fit = fit_poisson(&y, &time, false)?;
            let phi = dispersion(&fit, &y, floor);
            (fit, phi)
        }
    };
    let expected = if fit.has_trend() { fit.predict(t_now) } else { fit.fitted[0] };
    let var_eta = phi * fit.predictor_variance(t_now);
    let z = T::lit(normal_quantile(1.0 - p.alpha));
    let upper = upper_bound(expected, phi, var_eta, z);
    Ok(FarringtonOutcome {
        expected,
        upper,
        alarm: observed > upper,
        dispersion: phi,
        trend_used: fit.has_trend(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    fn params(w: usize) -> FarringtonParams {
        FarringtonParams::new(w)
    }

    #[test]
    fn reference_construction() {
        assert_eq!(reference_weeks(7, &params(3)).unwrap(), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(reference_weeks(9, &params(2)).unwrap(), vec![4, 5, 6, 7]);
        assert!(matches!(
            reference_weeks(6, &params(3)),
            Err(Error::InsufficientHistory { required: 7, .. })
        ));
        let yearly = FarringtonParams { b: 1, ..params(2) };
        assert_eq!(reference_weeks(60, &yearly).unwrap(), vec![6, 7, 8, 9, 10]);
    }

    #[test]
    fn constant_reference() {
        let mut weekly = vec![4.0; 8];
        let o = farrington_detect(&weekly, 7, &params(3)).unwrap();
        assert_eq!(o.expected, 4.0);
        assert!(!o.alarm);
        assert!(!o.trend_used);
        // φ floors at 1 and the intercept variance is 1/(6·4).
        let z = normal_quantile(0.975);
        let se = (4.0 / 9.0 * 4f64.powf(1.0 / 3.0) * (1.0 + 4.0 / 24.0)).sqrt();
        assert!((o.upper - (4f64.powf(2.0 / 3.0) + z * se).powf(1.5)).abs() < 1e-12);
        weekly[7] = 40.0;
        assert!(farrington_detect(&weekly, 7, &params(3)).unwrap().alarm);
    }

    #[test]
    fn all_zero_reference() {
        let weekly = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let o = farrington_detect(&weekly, 7, &params(3)).unwrap();
        assert_eq!((o.expected, o.upper, o.alarm), (0.0, 0.0, true));
    }

    #[test]
    fn trend_kept_only_when_significant_and_in_range() {
        // Strong rise: the extrapolated value exceeds the reference maximum,
        // so the trend is dropped.
        let weekly = [2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 100.0, 0.0, 0.0];
        let o = farrington_detect(&weekly, 8, &params(3)).unwrap();
        assert!(!o.trend_used);
        // Steady decline extrapolates below the reference minimum.
        let weekly = [200.0, 150.0, 110.0, 80.0, 60.0, 45.0, 30.0, 0.0, 0.0];
        let o = farrington_detect(&weekly, 8, &params(3)).unwrap();
        assert!(!o.trend_used);
        // A late drop lands inside [12, 58] and the slope is significant.
        let weekly: [f64; 9] = [0.0, 58.0, 50.0, 53.0, 42.0, 31.0, 12.0, 0.0, 0.0];
        let o = farrington_detect(&weekly, 8, &params(3)).unwrap();
        assert!(o.trend_used);
        assert!((o.expected - 14.696).abs() < 0.01, "{}", o.expected);
    }

    #[test]
    fn poisson_reference_seldom_alarms() {
        let pois = Poisson::new(10.0).unwrap();
        let mut alarms = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut weekly: Vec<f64> = (0..7).map(|_| pois.sample(&mut rng)).collect();
            weekly.push(10.0);
            if farrington_detect(&weekly, 7, &params(3)).unwrap().alarm {
                alarms += 1;
            }
        }
        assert!(alarms <= 5, "{alarms} alarms");
    }

    proptest! {
        #[test]
        fn monotone_in_observed(refs in prop::collection::vec(0u32..30, 7), x in 0u32..80) {
            let mut weekly: Vec<f64> = refs.iter().map(|&v| f64::from(v)).collect();
            weekly.push(f64::from(x));
            let a = farrington_detect(&weekly, 7, &params(3)).unwrap();
            weekly[7] += 1.0;
            let b = farrington_detect(&weekly, 7, &params(3)).unwrap();
            prop_assert!(!a.alarm || b.alarm);
            prop_assert_eq!(a.upper, b.upper);
        }

        #[test]
        fn no_trend_expected_is_mean(refs in prop::collection::vec(1u32..30, 7)) {
            let weekly: Vec<f64> = refs.iter().map(|&v| f64::from(v)).chain([0.0]).collect();
            let p = FarringtonParams { trend: false, ..params(3) };
            let o = farrington_detect(&weekly, 7, &p).unwrap();
            let m = weekly[..6].iter().sum::<f64>() / 6.0;
            prop_assert!((o.expected - m).abs() <= 1e-12 * m);
        }
    }
}
