use std::f64::consts::PI;

use ngen_core::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cifar;
use crate::config::{DatasetKind, DatasetSpec};
use crate::error::{LabError, Result};

/// Labelled samples stored contiguously, one flat block per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sample_shape: Vec<usize>,
    inputs: Vec<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(sample_shape: Vec<usize>, inputs: Vec<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        if per == 0 || inputs.len() != per * labels.len() {
            return Err(LabError::Config(format!(
                "{} values for {} samples of shape {sample_shape:?}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(LabError::Config(format!("label {bad} outside {classes} classes")));
        }
        Ok(Self { sample_shape, inputs, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let per = self.sample_len();
        &self.inputs[i * per..(i + 1) * per]
    }

    /// Stacks the given samples into a `[len, ...sample_shape]` batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.sample_shape);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::new(&shape, data).expect("batch shape matches data"), labels)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut inputs = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            inputs.extend_from_slice(self.sample(i));
        }
        Self {
            sample_shape: self.sample_shape.clone(),
            inputs,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.sample_len() {
            return Err(LabError::Config(format!(
                "cannot view samples of shape {:?} as {shape:?}",
                self.sample_shape
            )));
        }
        self.sample_shape = shape.to_vec();
        Ok(self)
    }

    fn channels(&self) -> (usize, usize) {
        let c = self.sample_shape[0];
        (c, self.sample_len() / c)
    }

    /// Per-channel mean and standard deviation (population) over all samples
    /// and spatial positions. For flat samples every feature is a channel.
    pub fn channel_stats(&self) -> Vec<(f64, f64)> {
        let (c, spatial) = self.channels();
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for s in self.inputs.chunks(self.sample_len()) {
            for (k, v) in s.iter().enumerate() {
                sum[k / spatial] += v;
            }
        }
        let count = (self.len() * spatial) as f64;
        let means: Vec<f64> = sum.iter().map(|s| s / count).collect();
        for s in self.inputs.chunks(self.sample_len()) {
            for (k, v) in s.iter().enumerate() {
                let d = v - means[k / spatial];
                sq[k / spatial] += d * d;
            }
        }
        means.into_iter().zip(sq).map(|(m, q)| (m, (q / count).sqrt())).collect()
    }

    /// Applies `(x − mean) / std` per channel; constant channels are only centered.
    pub fn standardize(&mut self, stats: &[(f64, f64)]) {
        let (_, spatial) = self.channels();
        let per = self.sample_len();
        for s in self.inputs.chunks_mut(per) {
            for (k, v) in s.iter_mut().enumerate() {
                let (m, sd) = stats[k / spatial];
                *v = if sd > 0.0 { (*v - m) / sd } else { *v - m };
            }
        }
    }

    /// 2×2 average pooling of image samples, `factor` times halved per side.
    pub fn downsample(self, factor: usize) -> Result<Self> {
        if factor == 1 {
            return Ok(self);
        }
        let [c, h, w] = self.sample_shape[..] else {
            return Err(LabError::Config("downsampling needs image samples".into()));
        };
        if h % factor != 0 || w % factor != 0 {
            return Err(LabError::Config(format!("{h}x{w} is not divisible by {factor}")));
        }
        let (oh, ow) = (h / factor, w / factor);
        let area = (factor * factor) as f64;
        let mut inputs = Vec::with_capacity(self.len() * c * oh * ow);
        for s in self.inputs.chunks(c * h * w) {
            for ch in 0..c {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = 0.0;
                        for dy in 0..factor {
                            for dx in 0..factor {
                                acc += s[(ch * h + y * factor + dy) * w + x * factor + dx];
                            }
                        }
                        inputs.push(acc / area);
                    }
                }
            }
        }
        Ok(Self { sample_shape: vec![c, oh, ow], inputs, labels: self.labels, classes: self.classes })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

/// Gaussian clusters: each class has a standard-normal center and samples
/// scatter around it with standard deviation `spread`.
pub fn synthetic_blobs(classes: usize, shape: &[usize], spread: f64, n: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let dims: usize = shape.iter().product();
    let centers: Vec<f64> = (0..classes * dims).map(|_| rng.sample(StandardNormal)).collect();
    blobs_around(&centers, classes, shape, spread, n, rng)
}

fn blobs_around(centers: &[f64], classes: usize, shape: &[usize], spread: f64, n: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let dims: usize = shape.iter().product();
    let mut inputs = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        for d in 0..dims {
            let noise: f64 = rng.sample(StandardNormal);
            inputs.push(centers[class * dims + d] + spread * noise);
        }
        labels.push(class);
    }
    Dataset::new(shape.to_vec(), inputs, labels, classes)
}

/// Interleaved spiral arms in the plane: arm `c` sweeps the angle
/// `[4c, 4c + 4)` while the radius grows from 0 to 1, with Gaussian angular
/// noise of standard deviation `noise`.
pub fn synthetic_spirals(classes: usize, n: usize, noise: f64, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let mut inputs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    let turn = 2.0 * PI / classes as f64;
    for i in 0..n {
        let class = i % classes;
        let r: f64 = rng.random_range(0.0..1.0);
        let jitter: f64 = rng.sample(StandardNormal);
        let theta = class as f64 * turn + 4.0 * r + noise * jitter;
        inputs.push(r * theta.sin());
        inputs.push(r * theta.cos());
        labels.push(class);
    }
    Dataset::new(vec![2], inputs, labels, classes)
}

/// Concentric shells around the origin, one per class, with uniformly
/// random directions.
pub fn synthetic_rings(classes: usize, shape: &[usize], noise: f64, n: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let dims: usize = shape.iter().product();
    let mut inputs = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        let dir: Vec<f64> = (0..dims).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let jitter: f64 = rng.sample(StandardNormal);
        let r = (class as f64 + 0.5) / classes as f64 + noise * jitter;
        inputs.extend(dir.iter().map(|v| r * v / norm));
        labels.push(class);
    }
    Dataset::new(shape.to_vec(), inputs, labels, classes)
}

/// Builds the train/test pair described by `spec`, fully determined by `seed`.
/// Standardization statistics come from the training split only.
pub fn load(spec: &DatasetSpec, seed: u64) -> Result<Splits> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = match &spec.kind {
        DatasetKind::Blobs { classes, shape, spread } => {
            let dims: usize = shape.iter().product();
            let centers: Vec<f64> = (0..classes * dims).map(|_| rng.sample(StandardNormal)).collect();
            let train = blobs_around(&centers, *classes, shape, *spread, spec.n, &mut rng)?;
            let test = blobs_around(&centers, *classes, shape, *spread, spec.test_n.max(1), &mut rng)?;
            (train, test)
        }
        DatasetKind::Spirals { classes, shape, noise } => {
            let train = synthetic_spirals(*classes, spec.n, *noise, &mut rng)?.reshape(shape)?;
            let test = synthetic_spirals(*classes, spec.test_n.max(1), *noise, &mut rng)?.reshape(shape)?;
            (train, test)
        }
        DatasetKind::Rings { classes, shape, noise } => {
            let train = synthetic_rings(*classes, shape, *noise, spec.n, &mut rng)?;
            let test = synthetic_rings(*classes, shape, *noise, spec.test_n.max(1), &mut rng)?;
            (train, test)
        }
        DatasetKind::Cifar10 { path, test_path, subset, downsample } => {
            let all = cifar::load_cifar10_binary(path)?;
            let (train, test) = match test_path {
                Some(tp) => {
                    let train = match subset {
                        Some(k) => pick(&all, *k, &mut rng),
                        None => all,
                    };
                    let test = cifar::load_cifar10_binary(tp)?;
                    let test = pick(&test, spec.test_n.min(test.len()), &mut rng);
                    (train, test)
                }
                None => {
                    let mut idx: Vec<usize> = (0..all.len()).collect();
                    idx.shuffle(&mut rng);
                    let held = spec.test_n.min(all.len().saturating_sub(1));
                    let (test_idx, rest) = idx.split_at(held);
                    let rest = match subset {
                        Some(k) => &rest[..(*k).min(rest.len())],
                        None => rest,
                    };
                    let mut rest = rest.to_vec();
                    rest.sort_unstable();
                    let mut test_idx = test_idx.to_vec();
                    test_idx.sort_unstable();
                    (all.subset(&rest), all.subset(&test_idx))
                }
            };
            (train.downsample(*downsample)?, test.downsample(*downsample)?)
        }
    };
    if spec.normalize {
        let stats = train.channel_stats();
        train.standardize(&stats);
        test.standardize(&stats);
    }
    Ok(Splits { train, test })
}

/// A seeded subset of `k` samples, kept in file order.
fn pick(data: &Dataset, k: usize, rng: &mut ChaCha8Rng) -> Dataset {
    if k >= data.len() {
        return data.clone();
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(rng);
    idx.truncate(k);
    idx.sort_unstable();
    data.subset(&idx)
}
