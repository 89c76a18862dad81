use rand::seq::index;

use super::dataset::{build_with_purpose, LabelSwapConfig, SyntheticDataset};
use super::{Objective, ObjectiveKind};
use crate::error::{Error, Result};
use crate::participation::Group;
use crate::rng::{Purpose, Stream};
use crate::scalar::{dist_sq, Scalar};

/// Multinomial logistic regression over a [`SyntheticDataset`].
///
/// Parameters are laid out class by class, each row holding the feature
/// weights followed by the bias: `dim = classes * (features + 1)`.
#[derive(Clone, Debug)]
pub struct SoftmaxObjective<T> {
    train: SyntheticDataset<T>,
    test: Option<SyntheticDataset<T>>,
}

impl<T: Scalar> SoftmaxObjective<T> {
    pub fn new(train: SyntheticDataset<T>, test: Option<SyntheticDataset<T>>) -> Result<Self> {
        if let Some(idx) = train.clients.iter().position(|c| c.is_empty()) {
            return Err(Error::invalid(format!("client {idx} has an empty dataset")));
        }
        if let Some(t) = &test {
            if t.features != train.features || t.class_count != train.class_count {
                return Err(Error::invalid("test set shape differs from training set"));
            }
        }
        Ok(Self { train, test })
    }

    /// Training set from `seed` plus a held-out set drawn from the same
    /// clusters with the same per-group relabeling.
    pub fn generate(
        cfg: &LabelSwapConfig,
        groups: &[Group],
        seed: u64,
        test_samples_per_client: usize,
    ) -> Result<Self> {
        let train = build_with_purpose(cfg, groups, seed, Purpose::Dataset)?;
        let test = if test_samples_per_client > 0 {
            let test_cfg = LabelSwapConfig {
                samples_per_client: test_samples_per_client,
                ..cfg.clone()
            };
            Some(build_with_purpose(
                &test_cfg,
                groups,
                seed,
                Purpose::TestData,
            )?)
        } else {
            None
        };
        Self::new(train, test)
    }

    pub fn train(&self) -> &SyntheticDataset<T> {
        &self.train
    }

    pub fn test(&self) -> Option<&SyntheticDataset<T>> {
        self.test.as_ref()
    }

    pub fn client_len(&self, client: usize) -> usize {
        self.train.clients[client].len()
    }

    fn row(&self) -> usize {
        self.train.features + 1
    }

    fn logits(&self, w: &[T], x: &[T]) -> Vec<T> {
        let row = self.row();
        (0..self.train.class_count)
            .map(|c| {
                let wc = &w[c * row..(c + 1) * row];
                wc[..row - 1].iter().zip(x).map(|(&a, &b)| a * b).sum::<T>() + wc[row - 1]
            })
            .collect()
    }

    fn sample_loss(&self, w: &[T], x: &[T], y: usize) -> T {
        let z = self.logits(w, x);
        log_sum_exp(&z) - z[y]
    }

    fn add_sample_gradient(&self, w: &[T], x: &[T], y: usize, scale: T, acc: &mut [T]) {
        let row = self.row();
        let z = self.logits(w, x);
        let lse = log_sum_exp(&z);
        for (c, &zc) in z.iter().enumerate() {
            let mut coef = (zc - lse).exp();
            if c == y {
                coef -= T::one();
            }
            coef *= scale;
            let gc = &mut acc[c * row..(c + 1) * row];
            for (g, &xv) in gc[..row - 1].iter_mut().zip(x) {
                *g += coef * xv;
            }
            gc[row - 1] += coef;
        }
    }

    /// Mean gradient over the given sample indices of one client.
    pub fn batch_gradient(&self, client: usize, w: &[T], indices: &[usize]) -> Vec<T> {
        let mut acc = vec![T::zero(); self.dim()];
        let scale = T::one() / T::of(indices.len() as f64);
        for &idx in indices {
            let (x, y) = self.train.sample(client, idx);
            self.add_sample_gradient(w, x, y, scale, &mut acc);
        }
        acc
    }

    fn predict(&self, w: &[T], x: &[T]) -> usize {
        let z = self.logits(w, x);
        let mut best = 0;
        for (c, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = c;
            }
        }
        best
    }

    /// Mean over clients of per-client accuracy on `data`.
    pub fn accuracy_on(&self, data: &SyntheticDataset<T>, w: &[T]) -> T {
        let per_client: T = (0..data.n_clients())
            .map(|client| {
                let n = data.clients[client].len();
                let hits = (0..n)
                    .filter(|&idx| {
                        let (x, y) = data.sample(client, idx);
                        self.predict(w, x) == y
                    })
                    .count();
                T::of(hits as f64 / n as f64)
            })
            .sum();
        per_client / T::of(data.n_clients() as f64)
    }
}

fn log_sum_exp<T: Scalar>(z: &[T]) -> T {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    m + z.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

impl<T: Scalar> Objective<T> for SoftmaxObjective<T> {
    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::SyntheticSoftmax
    }

    fn n_clients(&self) -> usize {
        self.train.n_clients()
    }

    fn dim(&self) -> usize {
        self.train.class_count * self.row()
    }

    fn client_loss(&self, client: usize, w: &[T]) -> T {
        let n = self.client_len(client);
        let total: T = (0..n)
            .map(|idx| {
                let (x, y) = self.train.sample(client, idx);
                self.sample_loss(w, x, y)
            })
            .sum();
        total / T::of(n as f64)
    }

    fn client_gradient(&self, client: usize, w: &[T]) -> Vec<T> {
        let all: Vec<usize> = (0..self.client_len(client)).collect();
        self.batch_gradient(client, w, &all)
    }

    fn client_stochastic_gradient(
        &self,
        client: usize,
        w: &[T],
        batch_size: usize,
        rng: &mut Stream,
    ) -> Result<Vec<T>> {
        let n = self.client_len(client);
        if batch_size > n {
            return Err(Error::invalid(format!(
                "batch size {batch_size} exceeds client {client} dataset size {n}"
            )));
        }
        if batch_size == n {
            return Ok(self.client_gradient(client, w));
        }
        let mut picked = index::sample(rng, n, batch_size).into_vec();
        picked.sort_unstable();
        Ok(self.batch_gradient(client, w, &picked))
    }

    /// Exact variance of a without-replacement minibatch mean.
    fn gradient_variance(&self, client: usize, w: &[T], batch_size: usize) -> Result<T> {
        let n = self.client_len(client);
        if batch_size == 0 || batch_size > n {
            return Err(Error::invalid(format!(
                "batch size {batch_size} invalid for client dataset size {n}"
            )));
        }
        if n == 1 || batch_size == n {
            return Ok(T::zero());
        }
        let mean = self.client_gradient(client, w);
        let spread: T = (0..n)
            .map(|idx| dist_sq(&self.batch_gradient(client, w, &[idx]), &mean))
            .sum::<T>()
            / T::of(n as f64);
        let b = batch_size as f64;
        let fpc = (n as f64 - b) / (n as f64 - 1.0);
        Ok(spread * T::of(fpc / b))
    }

    fn test_accuracy(&self, w: &[T]) -> Option<T> {
        Some(self.accuracy_on(self.test.as_ref().unwrap_or(&self.train), w))
    }
}
