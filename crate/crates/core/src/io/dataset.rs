use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::fingerprint;
use crate::numerics::RngState;

/// Labelled points, one row per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// Synthetic spec or file digest.
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        inputs: Vec<Vec<f64>>,
        labels: Vec<usize>,
        classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset labels",
                expected: inputs.len(),
                actual: labels.len(),
            });
        }
        if inputs.is_empty() {
            return Err(Error::invalid("empty dataset"));
        }
        let d = inputs[0].len();
        for (i, x) in inputs.iter().enumerate() {
            if x.len() != d {
                return Err(Error::invalid(format!(
                    "row {i} has {} columns, expected {d}",
                    x.len()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("row {i} of dataset")));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!(
                "label {bad} outside {classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            classes,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn d_in(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.inputs)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            provenance: self.provenance.clone(),
        }
    }

    /// First `n_train` rows and the rest.
    pub fn split(&self, n_train: usize) -> Result<(Self, Self)> {
        if n_train == 0 || n_train >= self.len() {
            return Err(Error::invalid(format!(
                "cannot split {} rows at {n_train}",
                self.len()
            )));
        }
        let all: Vec<usize> = (0..self.len()).collect();
        Ok((self.subset(&all[..n_train]), self.subset(&all[n_train..])))
    }
}

/// Desk-scale synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SyntheticSpec {
    /// Isotropic unit-variance Gaussians with means on a circle in the first
    /// two coordinates, spaced at least five standard deviations apart.
    /// A constant-1 coordinate is appended.
    Blobs {
        #[serde(default = "two")]
        classes: usize,
        #[serde(default = "two")]
        dims: usize,
    },
    /// Two concentric rings (radius 1 for class 0, 2 for class 1) with
    /// Gaussian radial noise. A constant-1 coordinate is appended.
    Circles {
        #[serde(default = "circle_noise")]
        noise: f64,
    },
    /// 1-D periodic signals: a class-specific pulse shape at a uniformly
    /// random circular shift, random positive amplitude and i.i.d. noise.
    ShiftedPulses {
        #[serde(default = "pulse_length")]
        length: usize,
        #[serde(default = "two")]
        classes: usize,
        #[serde(default = "pulse_noise")]
        noise: f64,
    },
}

fn two() -> usize {
    2
}
fn circle_noise() -> f64 {
    0.15
}
fn pulse_length() -> usize {
    16
}
fn pulse_noise() -> f64 {
    0.05
}

/// Unshifted pulse of class `c` (0: box, 1: triangle, 2: two spikes,
/// further classes: boxes of growing width).
fn pulse(c: usize, length: usize) -> Vec<f64> {
    let mut p = vec![0.0; length];
    match c {
        0 => p[..3].fill(1.0),
        1 => {
            p[..5].copy_from_slice(&[0.33, 0.67, 1.0, 0.67, 0.33]);
        }
        2 => {
            p[0] = 1.0;
            p[length / 2] = 1.0;
        }
        _ => p[..(c + 2).min(length)].fill(0.8),
    }
    p
}

pub fn generate_synthetic(spec: &SyntheticSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::invalid("synthetic datasets need n >= 2"));
    }
    let mut rng = RngState::new(seed);
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let classes = match *spec {
        SyntheticSpec::Blobs { classes, dims } => {
            if classes < 2 || dims < 2 {
                return Err(Error::invalid("blobs need at least 2 classes and 2 dims"));
            }
            let radius = 2.5 / (PI / classes as f64).sin();
            for i in 0..n {
                let c = i % classes;
                let angle = 2.0 * PI * c as f64 / classes as f64;
                let mut x: Vec<f64> = (0..dims).map(|_| rng.normal()).collect();
                x[0] += radius * angle.cos();
                x[1] += radius * angle.sin();
                x.push(1.0);
                inputs.push(x);
                labels.push(c);
            }
            classes
        }
        SyntheticSpec::Circles { noise } => {
            if !(0.0..0.5).contains(&noise) {
                return Err(Error::invalid("circle noise must be in [0, 0.5)"));
            }
            for i in 0..n {
                let c = i % 2;
                let r = (1.0 + c as f64) + noise * rng.normal();
                let t = rng.uniform_in(0.0, 2.0 * PI);
                inputs.push(vec![r * t.cos(), r * t.sin(), 1.0]);
                labels.push(c);
            }
            2
        }
        SyntheticSpec::ShiftedPulses {
            length,
            classes,
            noise,
        } => {
            if length < 6 || classes < 2 || !(noise >= 0.0) {
                return Err(Error::invalid(
                    "pulses need length >= 6, >= 2 classes, noise >= 0",
                ));
            }
            let shapes: Vec<Vec<f64>> = (0..classes).map(|c| pulse(c, length)).collect();
            for i in 0..n {
                let c = i % classes;
                let shift = rng.below(length);
                let amp = rng.uniform_in(0.5, 1.5);
                let x = (0..length)
                    .map(|j| amp * shapes[c][(j + shift) % length] + noise * rng.normal())
                    .collect();
                inputs.push(x);
                labels.push(c);
            }
            classes
        }
    };
    let tag = format!(
        "synthetic:{}:n={n}:seed={seed}",
        serde_json::to_string(spec).unwrap_or_default()
    );
    Dataset::new(inputs, labels, classes, tag)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetFormat {
    /// One sample per line, integer label in the final column.
    Csv {
        #[serde(default)]
        header: bool,
    },
    /// 3073-byte records: one label byte (0..=9) then 3072 pixel bytes.
    CifarBinary,
}

pub const CIFAR_RECORD: usize = 3073;
const CIFAR_CLASSES: usize = 10;

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = format!(
        "file:{}:{}",
        path.display(),
        fingerprint(&[bytes.iter().map(|&b| b as f64).collect()])
    );
    match format {
        DatasetFormat::Csv { header } => parse_csv(&bytes, header, digest),
        DatasetFormat::CifarBinary => parse_cifar(&bytes, digest),
    }
}

pub fn parse_csv(bytes: &[u8], header: bool, provenance: String) -> Result<Dataset> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        offset: e.valid_up_to() as u64,
        message: "not UTF-8".into(),
    })?;
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut offset = 0u64;
    for (n, line) in text.split_inclusive('\n').enumerate() {
        let here = offset;
        offset += line.len() as u64;
        let t = line.trim();
        if t.is_empty() || (header && n == 0) {
            continue;
        }
        let fields: Vec<&str> = t.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                offset: here,
                message: "need at least one feature and a label".into(),
            });
        }
        let (feat, label) = fields.split_at(fields.len() - 1);
        let x = feat
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                offset: here,
                message: e.to_string(),
            })?;
        let y = label[0].parse::<usize>().map_err(|_| Error::Parse {
            offset: here,
            message: format!("label {:?} is not a non-negative integer", label[0]),
        })?;
        if inputs
            .first()
            .is_some_and(|f: &Vec<f64>| f.len() != x.len())
        {
            return Err(Error::Parse {
                offset: here,
                message: format!("expected {} features, found {}", inputs[0].len(), x.len()),
            });
        }
        inputs.push(x);
        labels.push(y);
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(inputs, labels, classes, provenance)
}

pub fn parse_cifar(bytes: &[u8], provenance: String) -> Result<Dataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        let whole = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
        return Err(Error::Parse {
            offset: whole as u64,
            message: format!("truncated record: {} trailing bytes", bytes.len() - whole),
        });
    }
    let mut inputs = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut labels = Vec::with_capacity(inputs.capacity());
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::Parse {
                offset: (r * CIFAR_RECORD) as u64,
                message: format!("label {label} out of range"),
            });
        }
        labels.push(label);
        inputs.push(rec[1..].iter().map(|&b| b as f64 / 255.0).collect());
    }
    Dataset::new(inputs, labels, CIFAR_CLASSES, provenance)
}
