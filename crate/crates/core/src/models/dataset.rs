//! Synthetic classification data with a random teacher and label noise.
//!
//! Inputs are standard Gaussian. Clean labels come from a random teacher
//! network (`argmax` of a one-hidden-layer ReLU net, or of a linear map when
//! `teacher_hidden == 0`). Exactly `floor(label_noise * n_train)` training
//! labels are then replaced by a different class drawn uniformly; test labels
//! stay clean.
//!
//! # Text format
//!
//! ```text
//! noiselab-dataset v1
//! dim=2 classes=3 seed=7 label_noise=0.15 n_train=4 n_test=2 teacher_hidden=8
//! 0.12,-1.5,2
//! ...
//! ```
//!
//! The second line is the header. Each following row holds the features
//! then the integer label; the first `n_train` rows are the training split.
//! Floats are written in Rust's shortest round-trip form so a file read back
//! reproduces the dataset bit for bit.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{dot, Rng};

const MAGIC: &str = "noiselab-dataset v1";

/// Generator parameters; the dataset is a pure function of these. Missing
/// fields take their [`Default`] values when deserializing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub dim: usize,
    pub classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub label_noise: f64,
    pub teacher_hidden: usize,
    pub seed: u64,
}

fn default_teacher_hidden() -> usize {
    32
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            dim: 20,
            classes: 4,
            n_train: 4096,
            n_test: 2048,
            label_noise: 0.15,
            teacher_hidden: default_teacher_hidden(),
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.classes < 2 || self.n_train == 0 {
            return Err(Error::InvalidArgument(
                "dataset needs dim >= 1, classes >= 2 and n_train >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::InvalidArgument(format!(
                "label_noise must lie in [0, 1), got {}",
                self.label_noise
            )));
        }
        Ok(())
    }

    pub fn noisy_label_count(&self) -> usize {
        (self.label_noise * self.n_train as f64).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: DatasetSpec,
    /// Row-major `n_train x dim`.
    pub train_x: Vec<f64>,
    pub train_y: Vec<usize>,
    pub test_x: Vec<f64>,
    pub test_y: Vec<usize>,
}

struct Teacher {
    hidden: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
}

impl Teacher {
    fn new(spec: &DatasetSpec, rng: &mut Rng) -> Self {
        let (d, k, h) = (spec.dim, spec.classes, spec.teacher_hidden);
        let inner = if h == 0 { k } else { h };
        let mut w1 = vec![0.0; inner * d];
        rng.fill_normal(&mut w1);
        let s1 = 1.0 / (d as f64).sqrt();
        w1.iter_mut().for_each(|w| *w *= s1);
        let mut b1 = vec![0.0; inner];
        if h > 0 {
            rng.fill_normal(&mut b1);
            b1.iter_mut().for_each(|b| *b *= 0.5);
        }
        let mut w2 = vec![0.0; k * h];
        rng.fill_normal(&mut w2);
        Self { hidden: h, w1, b1, w2 }
    }

    fn label(&self, x: &[f64], classes: usize) -> usize {
        let d = x.len();
        let inner = self.b1.len();
        let pre: Vec<f64> = (0..inner).map(|i| dot(&self.w1[i * d..(i + 1) * d], x) + self.b1[i]).collect();
        let logits: Vec<f64> = if self.hidden == 0 {
            pre
        } else {
            let act: Vec<f64> = pre.iter().map(|z| z.max(0.0)).collect();
            (0..classes).map(|c| dot(&self.w2[c * self.hidden..(c + 1) * self.hidden], &act)).collect()
        };
        argmax(&logits)
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl SyntheticDataset {
    pub fn generate(spec: &DatasetSpec) -> Result<Self> {
        spec.validate()?;
        let root = Rng::new(spec.seed);
        let teacher = Teacher::new(spec, &mut root.child(&[1]));
        let sample = |n: usize, rng: &mut Rng| {
            let mut x = vec![0.0; n * spec.dim];
            rng.fill_normal(&mut x);
            let y: Vec<usize> =
                x.chunks_exact(spec.dim).map(|row| teacher.label(row, spec.classes)).collect();
            (x, y)
        };
        let (train_x, mut train_y) = sample(spec.n_train, &mut root.child(&[2]));
        let (test_x, test_y) = sample(spec.n_test, &mut root.child(&[3]));

        let mut noise_rng = root.child(&[4]);
        let mut order: Vec<usize> = (0..spec.n_train).collect();
        noise_rng.shuffle(&mut order);
        for &i in &order[..spec.noisy_label_count()] {
            let shift = 1 + noise_rng.below(spec.classes - 1);
            train_y[i] = (train_y[i] + shift) % spec.classes;
        }
        Ok(Self { spec: spec.clone(), train_x, train_y, test_x, test_y })
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn n_train(&self) -> usize {
        self.train_y.len()
    }

    pub fn n_test(&self) -> usize {
        self.test_y.len()
    }

    pub fn train_row(&self, i: usize) -> &[f64] {
        &self.train_x[i * self.dim()..(i + 1) * self.dim()]
    }

    /// Copies the rows listed in `batch` into contiguous buffers.
    pub fn gather_train(&self, batch: &[usize], x: &mut Vec<f64>, y: &mut Vec<usize>) {
        x.clear();
        y.clear();
        for &i in batch {
            x.extend_from_slice(self.train_row(i));
            y.push(self.train_y[i]);
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let s = &self.spec;
        writeln!(out, "{MAGIC}")?;
        writeln!(
            out,
            "dim={} classes={} seed={} label_noise={} n_train={} n_test={} teacher_hidden={}",
            s.dim, s.classes, s.seed, s.label_noise, s.n_train, s.n_test, s.teacher_hidden
        )?;
        let rows = self
            .train_x
            .chunks_exact(s.dim)
            .zip(&self.train_y)
            .chain(self.test_x.chunks_exact(s.dim).zip(&self.test_y));
        for (x, y) in rows {
            let mut line = String::new();
            for v in x {
                line.push_str(&format!("{v},"));
            }
            line.push_str(&y.to_string());
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let bad = |msg: String| Error::InvalidArgument(format!("dataset file: {msg}"));
        let mut lines = input.lines();
        let magic = lines.next().ok_or_else(|| bad("empty file".into()))??;
        if magic.trim() != MAGIC {
            return Err(bad(format!("expected '{MAGIC}', got '{magic}'")));
        }
        let header = lines.next().ok_or_else(|| bad("missing header".into()))??;
        let mut fields = std::collections::BTreeMap::new();
        for kv in header.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("malformed header field '{kv}'")))?;
            fields.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| fields.get(k).cloned().ok_or_else(|| bad(format!("header lacks '{k}'")));
        let parse_usize = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| bad(format!("header field '{k}' is not an integer")))
        };
        let spec = DatasetSpec {
            dim: parse_usize("dim")?,
            classes: parse_usize("classes")?,
            n_train: parse_usize("n_train")?,
            n_test: parse_usize("n_test")?,
            teacher_hidden: parse_usize("teacher_hidden")?,
            seed: get("seed")?.parse().map_err(|_| bad("seed is not an integer".into()))?,
            label_noise: get("label_noise")?.parse().map_err(|_| bad("label_noise is not a number".into()))?,
        };
        if fields.len() != 7 {
            return Err(bad("unexpected header fields".into()));
        }
        spec.validate()?;
        let mut xs = Vec::with_capacity((spec.n_train + spec.n_test) * spec.dim);
        let mut ys = Vec::with_capacity(spec.n_train + spec.n_test);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != spec.dim + 1 {
                return Err(bad(format!("row {} has {} columns, expected {}", lineno + 1, parts.len(), spec.dim + 1)));
            }
            for p in &parts[..spec.dim] {
                let v: f64 = p.trim().parse().map_err(|_| bad(format!("row {}: bad number '{p}'", lineno + 1)))?;
                xs.push(v);
            }
            let y: usize = parts[spec.dim].trim().parse().map_err(|_| bad(format!("row {}: bad label", lineno + 1)))?;
            if y >= spec.classes {
                return Err(bad(format!("row {}: label {y} out of range", lineno + 1)));
            }
            ys.push(y);
        }
        if ys.len() != spec.n_train + spec.n_test {
            return Err(bad(format!("expected {} rows, found {}", spec.n_train + spec.n_test, ys.len())));
        }
        let test_x = xs.split_off(spec.n_train * spec.dim);
        let test_y = ys.split_off(spec.n_train);
        Ok(Self { spec, train_x: xs, train_y: ys, test_x, test_y })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: f64) -> DatasetSpec {
        DatasetSpec { dim: 5, classes: 4, n_train: 200, n_test: 50, label_noise: noise, teacher_hidden: 8, seed: 11 }
    }

    #[test]
    fn deterministic_and_exact_label_noise() {
        let a = SyntheticDataset::generate(&small(0.15)).unwrap();
        let b = SyntheticDataset::generate(&small(0.15)).unwrap();
        assert_eq!(a, b);
        let clean = SyntheticDataset::generate(&small(0.0)).unwrap();
        assert_eq!(a.train_x, clean.train_x);
        assert_eq!(a.test_y, clean.test_y);
        let flipped = a.train_y.iter().zip(&clean.train_y).filter(|(x, y)| x != y).count();
        assert_eq!(flipped, 30);
    }

    #[test]
    fn linear_teacher_and_class_range() {
        let mut spec = small(0.1);
        spec.teacher_hidden = 0;
        let d = SyntheticDataset::generate(&spec).unwrap();
        assert!(d.train_y.iter().all(|&y| y < 4));
        // every class present in a 200-example draw
        for c in 0..4 {
            assert!(d.train_y.contains(&c), "class {c} missing");
        }
    }

    #[test]
    fn text_round_trip() {
        let d = SyntheticDataset::generate(&small(0.2)).unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        let back = SyntheticDataset::read_from(&buf[..]).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(SyntheticDataset::read_from(&b"nope\n"[..]).is_err());
        let text = "noiselab-dataset v1\ndim=2 classes=2 seed=1 label_noise=0 n_train=1 n_test=0 teacher_hidden=0\n1,2\n";
        assert!(SyntheticDataset::read_from(text.as_bytes()).is_err());
        let text = "noiselab-dataset v1\ndim=2 classes=2 seed=1 label_noise=0 n_train=1 n_test=0 teacher_hidden=0\n1,2,5\n";
        assert!(SyntheticDataset::read_from(text.as_bytes()).is_err());
        let text = "noiselab-dataset v1\ndim=2 classes=2 seed=1 label_noise=0 n_train=1 n_test=0 teacher_hidden=0\n1,2,1\n";
        assert!(SyntheticDataset::read_from(text.as_bytes()).is_ok());
    }

    #[test]
    fn validation() {
        assert!(SyntheticDataset::generate(&small(1.0)).is_err());
        let mut s = small(0.0);
        s.classes = 1;
        assert!(SyntheticDataset::generate(&s).is_err());
    }
}
