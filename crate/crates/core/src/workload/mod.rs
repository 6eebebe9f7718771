//! Learning problems for the simulator: MNIST with per-label client
//! partitioning for the neural-network workload, and a strongly convex
//! quadratic with closed-form optima for analytically checkable tests.

pub mod idx;
pub mod mlp;
pub mod quadratic;

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

pub use mlp::MlpArch;
pub use quadratic::QuadraticWorkload;

/// An immutable labeled dataset, one column per example, pixels in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: DMatrix<f64>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn label_histogram(&self) -> [usize; 10] {
        let mut hist = [0usize; 10];
        for &l in &self.labels {
            hist[l as usize] += 1;
        }
        hist
    }
}

/// One client's training data.
#[derive(Debug, Clone)]
pub struct DataShard {
    pub client_id: usize,
    pub inputs: DMatrix<f64>,
    pub labels: Vec<u8>,
}

impl DataShard {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn dataset_from_bytes(pixels: &[u8], labels: Vec<u8>, dim: usize) -> Dataset {
    let n = labels.len();
    let inputs = DMatrix::from_fn(dim, n, |r, c| f64::from(pixels[c * dim + r]) / 255.0);
    Dataset { inputs, labels }
}

/// Load the four standard MNIST IDX files from `dir`.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let load_pair = |images: &str, labels: &str| -> Result<Dataset> {
        let imgs = idx::read_idx_images(&dir.join(images))?;
        let lbls = idx::read_idx_labels(&dir.join(labels))?;
        if imgs.count != lbls.len() {
            return Err(Error::IdxCountMismatch {
                images: imgs.count,
                labels: lbls.len(),
            });
        }
        Ok(dataset_from_bytes(&imgs.pixels, lbls, imgs.rows * imgs.cols))
    };
    let train = load_pair("train-images-idx3-ubyte", "train-labels-idx1-ubyte")?;
    let test = load_pair("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?;
    Ok((train, test))
}

/// Stratified subsample keeping each label's proportion within one example.
pub fn subsample_stratified<R: Rng + ?Sized>(
    ds: &Dataset,
    fraction: f64,
    rng: &mut R,
) -> Dataset {
    assert!(fraction > 0.0 && fraction <= 1.0);
    if fraction == 1.0 {
        return ds.clone();
    }
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); 10];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_label[l as usize].push(i);
    }
    let mut keep = Vec::new();
    for indices in by_label.iter_mut() {
        indices.shuffle(rng);
        let take = (indices.len() as f64 * fraction).round() as usize;
        keep.extend_from_slice(&indices[..take.min(indices.len())]);
    }
    keep.sort_unstable();
    select(ds, &keep)
}

fn select(ds: &Dataset, indices: &[usize]) -> Dataset {
    let dim = ds.input_dim();
    let inputs = DMatrix::from_fn(dim, indices.len(), |r, c| ds.inputs[(r, indices[c])]);
    let labels = indices.iter().map(|&i| ds.labels[i]).collect();
    Dataset { inputs, labels }
}

/// Heterogeneous partition: shard `j` holds exactly the examples of label
/// `j`. Requires one client per label.
pub fn partition_heterogeneous(ds: &Dataset, m: usize) -> Result<Vec<DataShard>> {
    let label_count = 10;
    if m != label_count {
        return Err(Error::InvalidParam(format!(
            "heterogeneous partitioning needs m = {label_count} clients, got {m}"
        )));
    }
    let mut shards = Vec::with_capacity(m);
    for label in 0..m {
        let indices: Vec<usize> = ds
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| usize::from(l) == label)
            .map(|(i, _)| i)
            .collect();
        let sub = select(ds, &indices);
        shards.push(DataShard {
            client_id: label,
            inputs: sub.inputs,
            labels: sub.labels,
        });
    }
    Ok(shards)
}

/// Homogeneous partition: a uniform shuffle split into `m` near-equal shards.
pub fn partition_homogeneous<R: Rng + ?Sized>(
    ds: &Dataset,
    m: usize,
    rng: &mut R,
) -> Vec<DataShard> {
    assert!(m >= 1);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(rng);
    let base = ds.len() / m;
    let extra = ds.len() % m;
    let mut shards = Vec::with_capacity(m);
    let mut offset = 0;
    for client_id in 0..m {
        let take = base + usize::from(client_id < extra);
        let mut indices = order[offset..offset + take].to_vec();
        indices.sort_unstable();
        offset += take;
        let sub = select(ds, &indices);
        shards.push(DataShard {
            client_id,
            inputs: sub.inputs,
            labels: sub.labels,
        });
    }
    shards
}
