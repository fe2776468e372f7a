//! Datasets: MNIST IDX ingestion, a synthetic teacher-network generator,
//! seeded train/validation splits and the metrics CSV written by training
//! runs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NetworkGraph;
use crate::init::init_balanced;
use crate::netfwd::{forward_batch, Batch, Engine, HiddenMode};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labelled examples with features in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    dim: usize,
    classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        classes: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let name = name.into();
        if dim == 0 || classes == 0 {
            return Err(Error::Input(format!(
                "dataset `{name}` needs positive dimensionality and class count"
            )));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Input(format!(
                "dataset `{name}`: {} features for {} labels of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Input(format!(
                "dataset `{name}`: label {y} out of range for {classes} classes"
            )));
        }
        if let Some(i) = features.iter().position(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Input(format!(
                "dataset `{name}`: feature {} of row {} is outside [0, 1]",
                i % dim,
                i / dim
            )));
        }
        Ok(Dataset {
            name,
            dim,
            classes,
            features,
            labels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn batch_range(&self, start: usize, end: usize) -> Result<Batch> {
        Batch::new(
            self.features[start * self.dim..end * self.dim].to_vec(),
            self.labels[start..end].to_vec(),
            self.dim,
        )
    }

    /// Gathers the given rows into a batch, in order.
    pub fn batch(&self, rows: &[usize]) -> Result<Batch> {
        let mut inputs = Vec::with_capacity(rows.len() * self.dim);
        let mut labels = Vec::with_capacity(rows.len());
        for &i in rows {
            inputs.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Batch::new(inputs, labels, self.dim)
    }

    pub fn subset(&self, rows: &[usize], name: impl Into<String>) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.dim);
        let mut labels = Vec::with_capacity(rows.len());
        for &i in rows {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            name: name.into(),
            dim: self.dim,
            classes: self.classes,
            features,
            labels,
        }
    }

    /// First `n` rows (or all of them if fewer).
    pub fn truncate(mut self, n: usize) -> Dataset {
        let n = n.min(self.len());
        self.labels.truncate(n);
        self.features.truncate(n * self.dim);
        self
    }
}

/// Opens `path`, or `path.gz` when only the compressed file exists, and
/// returns the decompressed bytes.
fn read_maybe_gz(path: &Path) -> Result<(Vec<u8>, PathBuf)> {
    let (actual, gz) = if path.exists() {
        let gz = path.extension().is_some_and(|e| e == "gz");
        (path.to_path_buf(), gz)
    } else {
        let mut alt = path.as_os_str().to_owned();
        alt.push(".gz");
        let alt = PathBuf::from(alt);
        if alt.exists() {
            (alt, true)
        } else {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "file not found (also tried .gz)"),
            ));
        }
    };
    let file = File::open(&actual).map_err(|e| Error::io(&actual, e))?;
    let mut bytes = Vec::new();
    if gz {
        GzDecoder::new(BufReader::new(file))
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(&actual, e))?;
    } else {
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(&actual, e))?;
    }
    Ok((bytes, actual))
}

struct IdxReader<'a> {
    name: String,
    bytes: &'a [u8],
    pos: usize,
}

impl IdxReader<'_> {
    fn err(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            source_name: self.name.clone(),
            offset: offset as u64,
            msg: msg.into(),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        if end > self.bytes.len() {
            return Err(self.err(self.bytes.len(), "truncated header"));
        }
        let v = u32::from_be_bytes(self.bytes[self.pos..end].try_into().unwrap());
        self.pos = end;
        Ok(v)
    }

    fn body(&self, len: usize) -> Result<&[u8]> {
        let end = self.pos + len;
        if end > self.bytes.len() {
            return Err(self.err(
                self.bytes.len(),
                format!("truncated data: expected {len} bytes after the header"),
            ));
        }
        Ok(&self.bytes[self.pos..end])
    }
}

/// Parses IDX image bytes into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(name: &str, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut r = IdxReader {
        name: name.to_owned(),
        bytes,
        pos: 0,
    };
    let magic = r.u32()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(r.err(0, format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let n = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let pixels = r.body(n * rows * cols)?.to_vec();
    Ok((n, rows, cols, pixels))
}

pub fn parse_idx_labels(name: &str, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = IdxReader {
        name: name.to_owned(),
        bytes,
        pos: 0,
    };
    let magic = r.u32()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(r.err(0, format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let n = r.u32()? as usize;
    Ok(r.body(n)?.to_vec())
}

/// Loads an MNIST-style image/label pair; pixels are scaled by 1/255.
/// Either file may be gzip-compressed (`.gz` is tried when the plain name is
/// missing).
pub fn load_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (img_bytes, img_path) = read_maybe_gz(images.as_ref())?;
    let (lbl_bytes, lbl_path) = read_maybe_gz(labels.as_ref())?;
    let (n, rows, cols, pixels) = parse_idx_images(&img_path.display().to_string(), &img_bytes)?;
    let raw_labels = parse_idx_labels(&lbl_path.display().to_string(), &lbl_bytes)?;
    if raw_labels.len() != n {
        return Err(Error::Parse {
            source_name: lbl_path.display().to_string(),
            offset: 4,
            msg: format!("{} labels for {n} images", raw_labels.len()),
        });
    }
    let classes = raw_labels.iter().copied().max().map_or(1, |m| m as usize + 1).max(10);
    let features = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let labels = raw_labels.iter().map(|&y| y as usize).collect();
    let name = img_path
        .file_name()
        .map_or_else(|| "mnist".to_owned(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, rows * cols, classes, features, labels)
}

/// Loads the `train-*` and (when present) `t10k-*` pairs from an MNIST
/// directory.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Option<Dataset>)> {
    let dir = dir.as_ref();
    let train = load_mnist_idx(
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
    )?;
    let test_images = dir.join("t10k-images-idx3-ubyte");
    let has_test = test_images.exists() || dir.join("t10k-images-idx3-ubyte.gz").exists();
    let test = if has_test {
        Some(load_mnist_idx(test_images, dir.join("t10k-labels-idx1-ubyte"))?)
    } else {
        None
    };
    Ok((train, test))
}

/// Encodes a dataset whose features are `k/255` values as IDX bytes
/// (images, labels).
pub fn encode_idx(data: &Dataset, rows: usize, cols: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    if rows * cols != data.dim() {
        return Err(Error::Input(format!(
            "{rows}x{cols} images do not match dimensionality {}",
            data.dim()
        )));
    }
    let mut images = Vec::with_capacity(16 + data.features().len());
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [data.len(), rows, cols] {
        images.extend_from_slice(&(v as u32).to_be_bytes());
    }
    images.extend(data.features().iter().map(|&x| (x * 255.0).round() as u8));
    let mut labels = Vec::with_capacity(8 + data.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(data.len() as u32).to_be_bytes());
    labels.extend(data.labels().iter().map(|&y| y as u8));
    Ok((images, labels))
}

/// Teacher network used to label synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Teacher layer sizes; first is the feature dimension, last the class
    /// count.
    pub teacher: Vec<usize>,
    /// Standard deviation of Gaussian noise added to teacher scores before
    /// the arg-max.
    #[serde(default)]
    pub noise: f64,
}

/// Features uniform in `[0, 1]^D`, labels from the arg-max of a balanced
/// random teacher's scores. Deterministic in `seed`.
pub fn make_synthetic(spec: &SyntheticSpec, n: usize, seed: u64) -> Result<Dataset> {
    let g = NetworkGraph::layered(&spec.teacher)?;
    let dim = spec.teacher[0];
    let classes = *spec.teacher.last().unwrap();
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::Config(format!("noise must be finite and >= 0, got {}", spec.noise)));
    }
    let teacher = init_balanced(&g, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a);
    let features: Vec<f64> = (0..n * dim).map(|_| rng.random::<f64>()).collect();
    let mut labels = Vec::with_capacity(n);
    if n > 0 {
        let batch = Batch::new(features.clone(), vec![0; n], dim)?;
        let scores = forward_batch(&g, &teacher, &batch, HiddenMode::Plain, Engine::Auto)?;
        for row in scores.chunks(classes) {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (k, &s) in row.iter().enumerate() {
                let noisy = s + spec.noise * rng.sample::<f64, _>(StandardNormal);
                if noisy > best_v {
                    best_v = noisy;
                    best = k;
                }
            }
            labels.push(best);
        }
    }
    Dataset::new(format!("synthetic-{seed}"), dim, classes, features, labels)
}

/// Seeded disjoint split into `(train, validation)` with `n_holdout`
/// validation rows.
pub fn split_validation(data: &Dataset, n_holdout: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n_holdout >= data.len() && !(n_holdout == 0 && data.is_empty()) {
        return Err(Error::Config(format!(
            "holdout of {n_holdout} leaves no training rows out of {}",
            data.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (val, train) = order.split_at(n_holdout);
    let mut val = val.to_vec();
    let mut train = train.to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((
        data.subset(&train, format!("{}-train", data.name())),
        data.subset(&val, format!("{}-validation", data.name())),
    ))
}

/// One row of a learning curve. Non-finite values mark divergence and are
/// written as `inf`/`NaN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub optimizer: String,
    pub ce_train: f64,
    pub err_train: f64,
    pub err_test: f64,
    pub wall_s: f64,
}

pub const METRICS_HEADER: &str = "epoch,optimizer,ce_train,err_train,err_test,wall_s";

pub fn write_metrics(records: &[MetricRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{METRICS_HEADER}").map_err(|e| Error::io(path, e))?;
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut out);
        for r in records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != METRICS_HEADER {
        return Err(Error::Parse {
            source_name: path.display().to_string(),
            offset: 0,
            msg: format!("unexpected header `{header}`"),
        });
    }
    let mut records = Vec::new();
    for row in r.deserialize() {
        records.push(row?);
    }
    Ok(records)
}
