//! Poisson log-linear fit by iteratively reweighted least squares, with an
//! optional linear time term.

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAX_IRLS_ITERATIONS: usize = 100;
const TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonFit<T> {
    /// `[intercept]` or `[intercept, slope]`; the slope is per unit of
    /// centered time.
    pub beta: Vec<T>,
    /// Centering offset subtracted from the time covariate.
    pub time_center: T,
    pub fitted: Vec<T>,
    /// Unscaled covariance `(XᵀWX)⁻¹`, row-major.
    pub cov: Vec<T>,
    pub deviance: T,
    pub iterations: usize,
}

impl<T: Real> PoissonFit<T> {
    pub fn has_trend(&self) -> bool {
        self.beta.len() == 2
    }

    fn row(&self, time: T) -> Vec<T> {
        if self.has_trend() {
            vec![T::one(), time - self.time_center]
        } else {
            vec![T::one()]
        }
    }

    pub fn linear_predictor(&self, time: T) -> T {
        self.row(time).iter().zip(&self.beta).map(|(x, b)| *x * *b).sum()
    }

    pub fn predict(&self, time: T) -> T {
        self.linear_predictor(time).exp()
    }

    /// `xᵀ (XᵀWX)⁻¹ x` at `time`, before dispersion scaling.
    pub fn predictor_variance(&self, time: T) -> T {
        let x = self.row(time);
        let p = x.len();
        let mut acc = T::zero();
        for i in 0..p {
            for j in 0..p {
                acc = acc + x[i] * self.cov[i * p + j] * x[j];
            }
        }
        acc
    }

    /// Pearson χ² over the observations.
    pub fn pearson(&self, y: &[T]) -> T {
        y.iter()
            .zip(&self.fitted)
            .map(|(&yi, &mi)| if mi > T::zero() { (yi - mi).powi(2) / mi } else { T::zero() })
            .sum()
    }
}

pub fn poisson_deviance<T: Real>(y: &[T], mu: &[T]) -> T {
    let two = T::lit(2.0);
    y.iter()
        .zip(mu)
        .map(|(&yi, &mi)| {
            let term = if yi > T::zero() { yi * (yi / mi).ln() } else { T::zero() };
            two * (term - (yi - mi))
        })
        .sum()
}

/// Fits `log E[y] = β0 (+ β1·(time − center))`. The intercept-only model has
/// the closed form `μ = mean(y)`; the trend model is solved by IRLS.
pub fn fit_poisson<T: Real>(y: &[T], time: &[T], trend: bool) -> Result<PoissonFit<T>> {
    if y.is_empty() || y.len() != time.len() {
        return Err(Error::InvalidParameter("GLM needs matching nonempty y and time".into()));
    }
    let n = T::from_count(y.len());
    let ybar = y.iter().copied().sum::<T>() / n;
    if !trend {
        return Ok(PoissonFit {
            beta: vec![ybar.ln()],
            time_center: T::zero(),
            fitted: vec![ybar; y.len()],
            cov: vec![T::one() / (n * ybar)],
            deviance: poisson_deviance(y, &vec![ybar; y.len()]),
            iterations: 0,
        });
    }
    let center = time.iter().copied().sum::<T>() / n;
    let xs: Vec<T> = time.iter().map(|&t| t - center).collect();
    let mut mu: Vec<T> = y.iter().map(|&v| v + T::lit(0.1)).collect();
    let mut eta: Vec<T> = mu.iter().map(|m| m.ln()).collect();
    let mut dev_old = poisson_deviance(y, &mu);
    let tol = T::lit(TOLERANCE).max(T::epsilon() * T::lit(100.0));
    for iter in 1..=MAX_IRLS_ITERATIONS {
        // Weighted normal equations for working response z = η + (y − μ)/μ.
        let (mut s00, mut s01, mut s11, mut r0, mut r1) = (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
        for i in 0..y.len() {
            let w = mu[i];
            let z = eta[i] + (y[i] - mu[i]) / mu[i];
            s00 = s00 + w;
            s01 = s01 + w * xs[i];
            s11 = s11 + w * xs[i] * xs[i];
            r0 = r0 + w * z;
            r1 = r1 + w * xs[i] * z;
        }
        let det = s00 * s11 - s01 * s01;
        if !(det.abs() > T::epsilon()) {
            return Err(Error::NonConvergence {
                iterations: iter,
                deviance: dev_old.as_f64(),
            });
        }
        let inv = [s11 / det, -s01 / det, -s01 / det, s00 / det];
        let beta = [inv[0] * r0 + inv[1] * r1, inv[2] * r0 + inv[3] * r1];
        for i in 0..y.len() {
            eta[i] = beta[0] + beta[1] * xs[i];
            mu[i] = eta[i].exp();
        }
        let dev = poisson_deviance(y, &mu);
        if !dev.is_finite() {
            return Err(Error::NonConvergence {
                iterations: iter,
                deviance: dev.as_f64(),
            });
        }
        if (dev - dev_old).abs() / (dev.abs() + T::lit(0.1)) < tol {
            return Ok(PoissonFit {
                beta: beta.to_vec(),
                time_center: center,
                fitted: mu,
                cov: inv.to_vec(),
                deviance: dev,
                iterations: iter,
            });
        }
        dev_old = dev;
    }
    Err(Error::NonConvergence {
        iterations: MAX_IRLS_ITERATIONS,
        deviance: dev_old.as_f64(),
    })
}
