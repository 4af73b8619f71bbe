//! Scalar abstraction shared by the numeric modules.
//!
//! The linear models, the EARS statistics and the Farrington GLM are written
//! against [`Real`] so they run in `f32` or `f64`. Concrete aliases live at the
//! crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from `f64`; used for constants and table values.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count fits in scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Sample mean. Empty input yields zero.
pub fn mean<T: Real>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    xs.iter().copied().sum::<T>() / T::from_count(xs.len())
}

/// Sample standard deviation with the `n - 1` denominator.
pub fn sample_sd<T: Real>(xs: &[T]) -> T {
    if xs.len() < 2 {
        return T::zero();
    }
    let m = mean(xs);
    let ss: T = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    (ss / T::from_count(xs.len() - 1)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_sd_in_both_widths() {
        let xs = [1.0f64, 2.0, 1.0, 3.0, 2.0, 1.0, 2.0];
        assert!((mean(&xs) - 12.0 / 7.0).abs() < 1e-12);
        assert!((sample_sd(&xs) - 0.755_928_946_018_454_5).abs() < 1e-12);
        let ys: Vec<f32> = xs.iter().map(|&x| x as f32).collect();
        assert!((sample_sd(&ys) - 0.755_928_9).abs() < 1e-5);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(mean::<f64>(&[]), 0.0);
        assert_eq!(sample_sd(&[4.0f64]), 0.0);
    }
}
