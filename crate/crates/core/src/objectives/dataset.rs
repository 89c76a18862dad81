use std::io::Write;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::participation::Group;
use crate::rng::{stream, Purpose};
use crate::scalar::Scalar;

/// Parameters of the Gaussian-cluster classification data with label swapping.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelSwapConfig {
    pub samples_per_client: usize,
    pub features: usize,
    pub class_count: usize,
    /// Fraction of each designated class relabeled on group-2 clients.
    pub swap_fraction: f64,
    pub class_pair: (usize, usize),
    /// Standard deviation of the class centers around the origin.
    pub center_scale: f64,
    /// Seed for the class centers; shared across experiments so only the swap
    /// fraction changes heterogeneity.
    pub center_seed: u64,
}

impl Default for LabelSwapConfig {
    fn default() -> Self {
        Self {
            samples_per_client: 60,
            features: 5,
            class_count: 10,
            swap_fraction: 0.0,
            class_pair: (0, 1),
            center_scale: 1.5,
            center_seed: 0x00C0_FFEE,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientData<T> {
    /// Row-major `samples x features`.
    pub features: Vec<T>,
    pub labels: Vec<usize>,
    /// Labels before swapping, kept for auditing.
    pub original_labels: Vec<usize>,
}

impl<T> ClientData<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset<T> {
    pub features: usize,
    pub class_count: usize,
    pub clients: Vec<ClientData<T>>,
    pub groups: Vec<Group>,
    pub swap_fraction: f64,
    pub class_pair: (usize, usize),
}

impl<T: Scalar> SyntheticDataset<T> {
    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn sample(&self, client: usize, idx: usize) -> (&[T], usize) {
        let c = &self.clients[client];
        (
            &c.features[idx * self.features..(idx + 1) * self.features],
            c.labels[idx],
        )
    }

    /// Writes `client_id,group,feature_0..feature_{d-1},label`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["client_id".to_string(), "group".to_string()];
        header.extend((0..self.features).map(|k| format!("feature_{k}")));
        header.push("label".into());
        wtr.write_record(&header)?;
        for (client, data) in self.clients.iter().enumerate() {
            for idx in 0..data.len() {
                let (x, y) = self.sample(client, idx);
                let mut row = vec![client.to_string(), self.groups[client].number().to_string()];
                row.extend(x.iter().map(|v| format!("{:.16e}", v.as_f64())));
                row.push(y.to_string());
                wtr.write_record(&row)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Generates Gaussian class clusters, partitions a class-balanced pool at
/// random across clients and, on group-2 clients, relabels
/// `floor(swap_fraction * m)` samples of each designated class as the other
/// one, where `m` is that client's count of the class.
pub fn build_label_swap_dataset<T: Scalar>(
    cfg: &LabelSwapConfig,
    groups: &[Group],
    seed: u64,
) -> Result<SyntheticDataset<T>> {
    build_with_purpose(cfg, groups, seed, Purpose::Dataset)
}

pub(crate) fn build_with_purpose<T: Scalar>(
    cfg: &LabelSwapConfig,
    groups: &[Group],
    seed: u64,
    purpose: Purpose,
) -> Result<SyntheticDataset<T>> {
    if !(0.0..=1.0).contains(&cfg.swap_fraction) {
        return Err(Error::invalid(format!(
            "swap fraction {} outside [0, 1]",
            cfg.swap_fraction
        )));
    }
    let (a, b) = cfg.class_pair;
    if a == b || a >= cfg.class_count || b >= cfg.class_count {
        return Err(Error::invalid(format!(
            "class pair ({a}, {b}) must be distinct and below {}",
            cfg.class_count
        )));
    }
    if groups.is_empty() || cfg.samples_per_client == 0 || cfg.features == 0 {
        return Err(Error::invalid(
            "dataset needs clients, samples and features",
        ));
    }

    let mut center_rng = stream(cfg.center_seed, Purpose::ClusterCenters, 0, 0);
    let centers: Vec<f64> = (0..cfg.class_count * cfg.features)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut center_rng);
            cfg.center_scale * z
        })
        .collect();

    let n_clients = groups.len();
    let total = n_clients * cfg.samples_per_client;
    let mut rng = stream(seed, purpose, 0, 0);
    let mut pool: Vec<(Vec<f64>, usize)> = (0..total)
        .map(|k| {
            let label = k % cfg.class_count;
            let x = (0..cfg.features)
                .map(|f| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    centers[label * cfg.features + f] + z
                })
                .collect();
            (x, label)
        })
        .collect();
    pool.shuffle(&mut rng);

    let clients = pool
        .chunks(cfg.samples_per_client)
        .zip(groups)
        .map(|(chunk, group)| {
            let original_labels: Vec<usize> = chunk.iter().map(|(_, y)| *y).collect();
            let mut labels = original_labels.clone();
            if *group == Group::Intermittent {
                swap_labels(&original_labels, &mut labels, a, b, cfg.swap_fraction);
            }
            ClientData {
                features: chunk
                    .iter()
                    .flat_map(|(x, _)| x.iter().map(|&v| T::of(v)))
                    .collect(),
                labels,
                original_labels,
            }
        })
        .collect();

    Ok(SyntheticDataset {
        features: cfg.features,
        class_count: cfg.class_count,
        clients,
        groups: groups.to_vec(),
        swap_fraction: cfg.swap_fraction,
        class_pair: cfg.class_pair,
    })
}

fn swap_labels(original: &[usize], labels: &mut [usize], a: usize, b: usize, fraction: f64) {
    for (from, to) in [(a, b), (b, a)] {
        let m = original.iter().filter(|&&y| y == from).count();
        let quota = (fraction * m as f64).floor() as usize;
        original
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == from)
            .take(quota)
            .for_each(|(idx, _)| labels[idx] = to);
    }
}
