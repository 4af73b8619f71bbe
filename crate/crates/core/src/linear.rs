//! Sparse vectors, linear models and a seeded stochastic subgradient SVM.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SparseVector<T> {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<T>,
}

impl<T: Real> SparseVector<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a vector from unordered `(index, value)` pairs; repeated
    /// indices accumulate and exact zeros are dropped.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (u32, T)>) -> Result<Self> {
        let mut pairs: Vec<(u32, T)> = pairs.into_iter().collect();
        pairs.sort_by_key(|p| p.0);
        let mut indices: Vec<u32> = Vec::with_capacity(pairs.len());
        let mut values: Vec<T> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            if i as usize >= dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: i as usize + 1,
                });
            }
            match indices.last() {
                Some(&last) if last == i => {
                    let l = values.len() - 1;
                    values[l] = values[l] + v;
                }
                _ => {
                    indices.push(i);
                    values.push(v);
                }
            }
        }
        let mut out = Self { dim, indices, values };
        out.retain_nonzero();
        Ok(out)
    }

    pub fn from_dense(dense: &[T]) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_zero())
            .map(|(i, &v)| (i as u32, v))
            .unzip();
        Self {
            dim: dense.len(),
            indices,
            values,
        }
    }

    fn retain_nonzero(&mut self) {
        let mut k = 0;
        for j in 0..self.indices.len() {
            if !self.values[j].is_zero() {
                self.indices[k] = self.indices[j];
                self.values[k] = self.values[j];
                k += 1;
            }
        }
        self.indices.truncate(k);
        self.values.truncate(k);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| (i as usize, v))
    }

    pub fn norm(&self) -> T {
        self.values.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > T::zero() {
            for v in &mut self.values {
                *v = *v / n;
            }
        }
        self
    }

    pub fn scaled(mut self, c: T) -> Self {
        for v in &mut self.values {
            *v = *v * c;
        }
        self.retain_nonzero();
        self
    }

    pub fn dot_dense(&self, dense: &[T]) -> T {
        self.iter().map(|(i, v)| v * dense[i]).sum()
    }

    pub fn get(&self, index: usize) -> T {
        match self.indices.binary_search(&(index as u32)) {
            Ok(p) => self.values[p],
            Err(_) => T::zero(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmHyperparams {
    /// Initial step size; step `t` uses `learning_rate / sqrt(t)`. With
    /// unit-norm inputs 0.1 is too small to leave the majority-class
    /// solution in 5 epochs, hence the default of 1.
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmHyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            l2: 1e-4,
            epochs: 5,
            seed: 0,
        }
    }
}

impl SvmHyperparams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct LinearModel<T> {
    pub weights: Vec<T>,
    pub bias: T,
    pub hyperparams: SvmHyperparams,
    /// Hex SHA-256 of the training data, empty for hand-built models.
    #[serde(default)]
    pub data_digest: String,
}

impl<T: Real> LinearModel<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![T::zero(); dim],
            bias: T::zero(),
            hyperparams: SvmHyperparams::default(),
            data_digest: String::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn margin(&self, x: &SparseVector<T>) -> Result<T> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.dim(),
            });
        }
        Ok(x.dot_dense(&self.weights) + self.bias)
    }

    pub fn weight_norm(&self) -> T {
        self.weights.iter().map(|&w| w * w).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }

    /// Regularized hinge objective `λ/2‖w‖² + mean(max(0, 1 − y·f(x)))`.
    pub fn hinge_objective(&self, data: &[(SparseVector<T>, i8)]) -> Result<T> {
        let lambda = T::lit(self.hyperparams.l2);
        let mut loss = T::zero();
        for (x, y) in data {
            let m = self.margin(x)? * T::lit(f64::from(*y));
            loss = loss + (T::one() - m).max(T::zero());
        }
        let n = T::from_count(data.len().max(1));
        let w2 = self.weight_norm() * self.weight_norm();
        Ok(T::lit(0.5) * lambda * w2 + loss / n)
    }
}

pub(crate) fn digest_data<T: Real>(data: &[(SparseVector<T>, i8)]) -> String {
    let mut h = Sha256::new();
    for (x, y) in data {
        h.update((x.dim() as u64).to_le_bytes());
        for (i, v) in x.iter() {
            h.update((i as u64).to_le_bytes());
            h.update(v.as_f64().to_bits().to_le_bytes());
        }
        h.update([*y as u8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Minimizes the L2-regularized hinge loss by seeded stochastic subgradient
/// descent with a `1/√t` step decay. Labels must be `+1` or `-1` and both
/// classes must be present.
pub fn train_svm<T: Real>(data: &[(SparseVector<T>, i8)], h: &SvmHyperparams) -> Result<LinearModel<T>> {
    if data.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if let Some((_, y)) = data.iter().find(|(_, y)| *y != 1 && *y != -1) {
        return Err(Error::Training(format!("label {y} is not +1 or -1")));
    }
    let pos = data.iter().filter(|(_, y)| *y == 1).count();
    if pos == 0 || pos == data.len() {
        return Err(Error::Training("training data contains a single class".into()));
    }
    let dim = data[0].0.dim();
    if let Some((x, _)) = data.iter().find(|(x, _)| x.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: x.dim(),
        });
    }

    // w = scale * v, so the shrink step is O(1)
    let mut v = vec![T::zero(); dim];
    let mut scale = T::one();
    let mut bias = T::zero();
    let lambda = T::lit(h.l2);
    let eta0 = T::lit(h.learning_rate);
    let tiny = T::lit(1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(h.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut t: usize = 0;
    for _ in 0..h.epochs {
        order.shuffle(&mut rng);
        for &k in &order {
            t += 1;
            let eta = eta0 / T::from_count(t).sqrt();
            let (x, y) = &data[k];
            let y = T::lit(f64::from(*y));
            let margin = (x.dot_dense(&v) * scale + bias) * y;
            scale = scale * (T::one() - eta * lambda);
            if scale < tiny {
                for w in &mut v {
                    *w = *w * scale;
                }
                scale = T::one();
            }
            if margin < T::one() {
                let step = eta * y / scale;
                for (i, xv) in x.iter() {
                    v[i] = v[i] + step * xv;
                }
                bias = bias + eta * y;
            }
        }
    }
    for w in &mut v {
        *w = *w * scale;
    }
    let model = LinearModel {
        weights: v,
        bias,
        hyperparams: *h,
        data_digest: digest_data(data),
    };
    if !model.is_finite() {
        return Err(Error::Training("training diverged to non-finite weights".into()));
    }
    Ok(model)
}
