//! Datasets, synthetic data generation, and on-disk formats.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dropout::{Layout, ParamVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Labeled samples plus the per-device shard assignment.
///
/// Shards partition the index set: every index appears in exactly one shard.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub shards: Vec<Vec<usize>>,
}

impl Dataset {
    /// Dataset with a single shard holding everything.
    pub fn single_shard(samples: Vec<Sample>) -> Self {
        let shards = vec![(0..samples.len()).collect()];
        Dataset { samples, shards }
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn n_devices(&self) -> usize {
        self.shards.len()
    }

    pub fn shard_size(&self, device: usize) -> usize {
        self.shards[device].len()
    }

    pub fn feature_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.features.len())
    }

    /// Borrowing view of the given indices, as (features, label) pairs.
    pub fn batch(&self, indices: &[usize]) -> Vec<(&[f64], usize)> {
        indices
            .iter()
            .map(|&i| (self.samples[i].features.as_slice(), self.samples[i].label))
            .collect()
    }

    pub fn full_batch(&self) -> Vec<(&[f64], usize)> {
        self.samples
            .iter()
            .map(|s| (s.features.as_slice(), s.label))
            .collect()
    }

    pub fn shard_batch(&self, device: usize) -> Vec<(&[f64], usize)> {
        self.batch(&self.shards[device])
    }

    /// Check that the shards form an exact partition of the index set.
    pub fn validate_shards(&self) -> Result<()> {
        let mut seen = vec![false; self.samples.len()];
        for shard in &self.shards {
            for &i in shard {
                if i >= self.samples.len() || seen[i] {
                    return Err(Error::Contract(format!(
                        "shards do not partition the index set (index {i})"
                    )));
                }
                seen[i] = true;
            }
        }
        if seen.iter().all(|&s| s) {
            Ok(())
        } else {
            Err(Error::Contract("shards do not cover the index set".into()))
        }
    }
}

/// Gaussian class clusters with unit covariance and means on a sphere of
/// radius 3. Labels are balanced: `n_samples / n_classes` each, remainder
/// spread over the first classes. Sample order is shuffled.
pub fn make_synthetic_dataset(
    n_classes: usize,
    n_samples: usize,
    dim: usize,
    rng: &mut impl Rng,
) -> Result<Dataset> {
    if n_classes < 2 {
        return Err(Error::domain("n_classes", "need at least 2 classes"));
    }
    if n_samples == 0 || dim == 0 {
        return Err(Error::domain("dataset size", "need samples and features"));
    }

    let mut means = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let mut dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in dir.iter_mut() {
            *v *= 3.0 / norm;
        }
        means.push(dir);
    }

    let base = n_samples / n_classes;
    let remainder = n_samples % n_classes;
    let mut samples = Vec::with_capacity(n_samples);
    for (c, mean) in means.iter().enumerate() {
        let count = base + usize::from(c < remainder);
        for _ in 0..count {
            let features = mean
                .iter()
                .map(|&m| {
                    let noise: f64 = StandardNormal.sample(rng);
                    m + noise
                })
                .collect();
            samples.push(Sample { features, label: c });
        }
    }

    // Fisher-Yates with the same stream keeps the whole dataset reproducible.
    for i in (1..samples.len()).rev() {
        let j = rng.random_range(0..=i);
        samples.swap(i, j);
    }
    Ok(Dataset::single_shard(samples))
}

/// Write samples as CSV: feature columns then an integer label column.
pub fn write_dataset_csv(dataset: &Dataset, out: &mut impl Write) -> Result<()> {
    let dim = dataset.feature_dim();
    let header: Vec<String> = (0..dim)
        .map(|i| format!("feature_{i}"))
        .chain(["label".to_string()])
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for s in &dataset.samples {
        for f in &s.features {
            write!(out, "{f},")?;
        }
        writeln!(out, "{}", s.label)?;
    }
    Ok(())
}

/// Read a dataset written by [`write_dataset_csv`]. Shards reset to one.
pub fn read_dataset_csv(input: impl Read) -> Result<Dataset> {
    let reader = BufReader::new(input);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty dataset csv".into()))??;
    let n_cols = header.split(',').count();
    if n_cols < 2 {
        return Err(Error::Config(
            "dataset csv needs features and a label".into(),
        ));
    }
    let mut samples = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_cols {
            return Err(Error::Config(format!("ragged csv row: {line}")));
        }
        let features = fields[..n_cols - 1]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("bad feature value: {e}")))?;
        let label = fields[n_cols - 1]
            .parse::<usize>()
            .map_err(|e| Error::Config(format!("bad label: {e}")))?;
        samples.push(Sample { features, label });
    }
    Ok(Dataset::single_shard(samples))
}

const CHECKPOINT_MAGIC: &str = "feddrop-checkpoint v1";

/// Save weights as a text header (magic, length, layout descriptor) followed
/// by the raw little-endian f64 values.
pub fn save_checkpoint(params: &ParamVector, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "{CHECKPOINT_MAGIC} {}", params.len())?;
    writeln!(file, "{}", params.layout.descriptor())?;
    for v in &params.values {
        file.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamVector> {
    let data = std::fs::read(path)?;
    let first_nl = data
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Config("truncated checkpoint header".into()))?;
    let header = std::str::from_utf8(&data[..first_nl])
        .map_err(|_| Error::Config("bad checkpoint header".into()))?;
    let rest = &data[first_nl + 1..];
    let second_nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Config("truncated checkpoint layout".into()))?;
    let descriptor = std::str::from_utf8(&rest[..second_nl])
        .map_err(|_| Error::Config("bad checkpoint layout".into()))?;
    let body = &rest[second_nl + 1..];

    let len: usize = header
        .strip_prefix(CHECKPOINT_MAGIC)
        .map(str::trim)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Config(format!("unrecognized checkpoint header: {header}")))?;
    if body.len() != len * 8 {
        return Err(Error::Config(format!(
            "checkpoint body has {} bytes, expected {}",
            body.len(),
            len * 8
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let layout = Layout::from_descriptor(descriptor)?;
    ParamVector::new(values, layout)
}
