use std::f64::consts::PI;
use std::fs;
use std::io::ErrorKind;
use std::path::Path;

use crate::error::{QnnError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Labeled images, `[N, C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.ndim() != 4 || images.shape()[0] != labels.len() {
            return Err(QnnError::Dimension {
                op: "dataset",
                lhs: images.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(QnnError::Input(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(C, H, W)`.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let x = self.images.gather_rows(indices);
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        (x, y)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (images, labels) = self.batch(indices);
        Dataset {
            images,
            labels,
            classes: self.classes,
        }
    }
}

const PATTERN_STREAM: u64 = 0x5359_4e54;

/// Class-conditional Gaussian images: `x = μ_class + σ·ε`.
///
/// Each class mean is an oriented sinusoidal grating with a class-specific
/// frequency and phase plus a per-channel offset. The means depend only on
/// the seed of `rng`; samples are drawn from its stream, so splits drawn from
/// one seed on different streams share a task. Labels cycle through the
/// classes before shuffling, so class counts differ by at most one.
pub fn gen_synthetic(
    n: usize,
    classes: usize,
    dim: (usize, usize, usize),
    sigma: f32,
    rng: &mut Rng,
) -> Result<Dataset> {
    let (c, h, w) = dim;
    if classes == 0 || n < classes {
        return Err(QnnError::Parameter(format!(
            "need at least one sample per class: n={n}, classes={classes}"
        )));
    }
    if c == 0 || h == 0 || w == 0 {
        return Err(QnnError::Parameter(format!("empty image shape {dim:?}")));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(QnnError::Parameter(format!(
            "sigma must be ≥ 0, got {sigma}"
        )));
    }
    let means = class_patterns(classes, dim, &mut Rng::new(rng.seed(), PATTERN_STREAM));
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    rng.shuffle(&mut labels);
    let size = c * h * w;
    let mut data = Vec::with_capacity(n * size);
    for &label in &labels {
        let mu = &means[label * size..(label + 1) * size];
        data.extend(mu.iter().map(|&m| m + sigma * rng.normal() as f32));
    }
    Dataset::new(Tensor::from_parts(vec![n, c, h, w], data), labels, classes)
}

fn class_patterns(classes: usize, (c, h, w): (usize, usize, usize), rng: &mut Rng) -> Vec<f32> {
    let mut out = Vec::with_capacity(classes * c * h * w);
    for k in 0..classes {
        let theta = PI * (k as f64 + rng.uniform()) / classes as f64;
        let freq = 2.0 * PI * (1.0 + 2.0 * rng.uniform()) / h.max(w) as f64;
        let phase = 2.0 * PI * rng.uniform();
        let (kx, ky) = (freq * theta.cos(), freq * theta.sin());
        for _ in 0..c {
            let offset = 0.5 * (2.0 * rng.uniform() - 1.0);
            let gain = 0.5 + rng.uniform();
            for i in 0..h {
                for j in 0..w {
                    let v = gain * (kx * j as f64 + ky * i as f64 + phase).sin() + offset;
                    out.push(v as f32);
                }
            }
        }
    }
    out
}

pub const CIFAR_RECORD_BYTES: usize = 3073;
pub const CIFAR_CLASSES: usize = 10;
/// Per-channel mean and standard deviation of the CIFAR-10 training set
/// after scaling pixels to `[0, 1]`.
pub const CIFAR_MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR_STD: [f32; 3] = [0.2470, 0.2435, 0.2616];
pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";

/// Decodes a buffer of CIFAR-10 binary records.
pub fn parse_cifar_records(bytes: &[u8], path: &Path) -> Result<Dataset> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD_BYTES) {
        let offset = (bytes.len() - bytes.len() % CIFAR_RECORD_BYTES) as u64;
        return Err(QnnError::io(
            path,
            offset,
            std::io::Error::new(ErrorKind::UnexpectedEof, "truncated CIFAR-10 record"),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * 3072);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(QnnError::Format(format!(
                "{}: label byte {label} at offset {} exceeds 9",
                path.display(),
                i * CIFAR_RECORD_BYTES
            )));
        }
        labels.push(label);
        for (ch, plane) in rec[1..].chunks_exact(1024).enumerate() {
            let (m, s) = (CIFAR_MEAN[ch], CIFAR_STD[ch]);
            data.extend(plane.iter().map(|&p| (p as f32 / 255.0 - m) / s));
        }
    }
    Dataset::new(
        Tensor::from_parts(vec![n, 3, 32, 32], data),
        labels,
        CIFAR_CLASSES,
    )
}

fn read_cifar_file(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| QnnError::io(path, 0, e))?;
    parse_cifar_records(&bytes, path)
}

fn concat(parts: Vec<Dataset>) -> Result<Dataset> {
    let n: usize = parts.iter().map(Dataset::len).sum();
    let mut data = Vec::new();
    let mut labels = Vec::with_capacity(n);
    for p in parts {
        labels.extend(p.labels);
        data.extend(p.images.into_data());
    }
    Dataset::new(
        Tensor::from_parts(vec![n, 3, 32, 32], data),
        labels,
        CIFAR_CLASSES,
    )
}

/// Seeded class-stratified subset of `count` samples, in original order.
///
/// The first `count % classes` classes receive one extra sample.
pub fn stratified_subset(data: &Dataset, count: usize, rng: &mut Rng) -> Result<Dataset> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.classes];
    for (i, &l) in data.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut chosen = Vec::with_capacity(count);
    for (k, idx) in by_class.iter_mut().enumerate() {
        let want = count / data.classes + usize::from(k < count % data.classes);
        if idx.len() < want {
            return Err(QnnError::Input(format!(
                "class {k} has {} samples, subset needs {want}",
                idx.len()
            )));
        }
        rng.shuffle(idx);
        chosen.extend_from_slice(&idx[..want]);
    }
    chosen.sort_unstable();
    Ok(data.subset(&chosen))
}

/// Loads the CIFAR-10 binary batches from `dir` as `(train, test)`.
///
/// Pixels are scaled to `[0, 1]` and standardized with [`CIFAR_MEAN`] and
/// [`CIFAR_STD`]. With `subset = Some(n)`, the training set is reduced to a
/// stratified sample of `n` and the test set to one of `n / 5`.
pub fn load_cifar10(
    dir: &Path,
    subset: Option<usize>,
    rng: &mut Rng,
) -> Result<(Dataset, Dataset)> {
    let parts = CIFAR_TRAIN_FILES
        .iter()
        .map(|f| read_cifar_file(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    let train = concat(parts)?;
    let test = read_cifar_file(&dir.join(CIFAR_TEST_FILE))?;
    match subset {
        Some(n) => {
            let train = stratified_subset(&train, n, rng)?;
            let test = stratified_subset(&test, (n / 5).max(CIFAR_CLASSES), rng)?;
            Ok((train, test))
        }
        None => Ok((train, test)),
    }
}

/// Pad-4 random crop plus random horizontal flip, per image.
pub fn augment_batch(images: &Tensor, rng: &mut Rng) -> Tensor {
    const PAD: usize = 4;
    let s = images.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut out = vec![0.0f32; images.len()];
    let src = images.data();
    for i in 0..n {
        let dy = rng.below(2 * PAD as u64 + 1) as isize - PAD as isize;
        let dx = rng.below(2 * PAD as u64 + 1) as isize - PAD as isize;
        let flip = rng.below(2) == 1;
        for ch in 0..c {
            let base = (i * c + ch) * h * w;
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let xx = if flip { w - 1 - x } else { x };
                    let sx = xx as isize + dx;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    out[base + y * w + x] = src[base + sy as usize * w + sx as usize];
                }
            }
        }
    }
    Tensor::from_parts(s.to_vec(), out)
}
