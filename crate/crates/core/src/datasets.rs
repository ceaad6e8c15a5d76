//! Synthetic source/target tasks with a relatedness dial, the per-class
//! split procedure, and CSV ingestion.
//!
//! A task draws class prototypes in a latent space and pushes
//! `prototype + noise` through a fixed random nonlinear mixing into input
//! space. A target task reuses the source's mixing (relatedness 1), an
//! independent mixing (relatedness 0), or a rotation between the two.

use std::collections::BTreeSet;
use std::f64::consts::FRAC_PI_2;
use std::fs::File;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Batch, Tensor2D};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub latent_dim: usize,
    pub input_dim: usize,
    pub samples_per_class: usize,
    pub noise_sigma: f64,
    /// Number of random linear maps in the mixing (tanh between them).
    pub mixing_depth: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    /// Standard deviation of the class prototypes in latent space.
    #[serde(default = "default_prototype_scale")]
    pub prototype_scale: f64,
    /// Scale of the first mixing map; larger values saturate the tanh more.
    #[serde(default = "default_mixing_gain")]
    pub mixing_gain: f64,
    /// Extra latent coordinates that vary per sample but carry no label.
    #[serde(default)]
    pub nuisance_dim: usize,
    #[serde(default = "default_nuisance_sigma")]
    pub nuisance_sigma: f64,
}

fn default_nuisance_sigma() -> f64 {
    1.0
}

fn default_prototype_scale() -> f64 {
    1.0
}

fn default_mixing_gain() -> f64 {
    1.5
}

impl SyntheticSpec {
    /// 20 classes x 200 samples, 16-d latent, 64-d inputs.
    pub fn default_source() -> Self {
        Self {
            n_classes: 20,
            latent_dim: 16,
            input_dim: 64,
            samples_per_class: 200,
            noise_sigma: 0.5,
            mixing_depth: 2,
            train_per_class: 160,
            val_per_class: 20,
            prototype_scale: default_prototype_scale(),
            mixing_gain: default_mixing_gain(),
            nuisance_dim: 0,
            nuisance_sigma: default_nuisance_sigma(),
        }
    }

    /// 10 classes x 50 samples sharing the source's latent and input sizes.
    pub fn default_target() -> Self {
        Self {
            n_classes: 10,
            samples_per_class: 50,
            train_per_class: 30,
            val_per_class: 10,
            ..Self::default_source()
        }
    }

    /// Width of the mixing's input: class-bearing plus nuisance coordinates.
    pub fn mixing_in_dim(&self) -> usize {
        self.latent_dim + self.nuisance_dim
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_classes", self.n_classes),
            ("latent_dim", self.latent_dim),
            ("input_dim", self.input_dim),
            ("samples_per_class", self.samples_per_class),
            ("mixing_depth", self.mixing_depth),
            ("train_per_class", self.train_per_class),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
        }
        if self.input_dim < self.mixing_in_dim() {
            return Err(Error::InvalidArgument(format!(
                "input_dim {} must be >= latent_dim + nuisance_dim = {}",
                self.input_dim,
                self.mixing_in_dim()
            )));
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("prototype_scale", self.prototype_scale),
            ("mixing_gain", self.mixing_gain),
            ("nuisance_sigma", self.nuisance_sigma),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.samples_per_class <= self.train_per_class + self.val_per_class {
            return Err(Error::InvalidArgument(format!(
                "samples_per_class {} leaves no test samples after {} train + {} val",
                self.samples_per_class, self.train_per_class, self.val_per_class
            )));
        }
        Ok(())
    }
}

/// Fixed random map from latent space to input space.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixing {
    /// Applied in order; tanh between consecutive maps.
    pub layers: Vec<Tensor2D>,
}

impl Mixing {
    pub fn random(spec: &SyntheticSpec, seed: u64) -> Self {
        let mut rng = seed::rng(seed, &[seed::STREAM_MIXING]);
        let mut layers = Vec::with_capacity(spec.mixing_depth);
        for l in 0..spec.mixing_depth {
            let fan_in = if l == 0 { spec.mixing_in_dim() } else { spec.input_dim };
            let gain = if l == 0 { spec.mixing_gain } else { 1.0 };
            let std = gain / (fan_in as f64).sqrt();
            let data = (0..spec.input_dim * fan_in)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            layers.push(Tensor2D::from_vec(spec.input_dim, fan_in, data).expect("sized"));
        }
        Self { layers }
    }

    /// `cos(phi) * self + sin(phi) * other` layer by layer with
    /// `phi = (1 - theta) * pi / 2`; exact at both endpoints.
    pub fn interpolate(&self, other: &Mixing, theta: f64) -> Self {
        if theta == 1.0 {
            return self.clone();
        }
        if theta == 0.0 {
            return other.clone();
        }
        let phi = (1.0 - theta) * FRAC_PI_2;
        let (a, b) = (phi.cos(), phi.sin());
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(x, y)| {
                let data = x
                    .as_slice()
                    .iter()
                    .zip(y.as_slice())
                    .map(|(u, v)| a * u + b * v)
                    .collect();
                Tensor2D::from_vec(x.rows(), x.cols(), data).expect("same shape")
            })
            .collect();
        Self { layers }
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let mut h = z.to_vec();
        for (l, w) in self.layers.iter().enumerate() {
            if l > 0 {
                h.iter_mut().for_each(|v| *v = v.tanh());
            }
            h = (0..w.rows())
                .map(|o| w.row(o).iter().zip(&h).map(|(a, b)| a * b).sum())
                .collect();
        }
        h
    }

    pub fn input_dim(&self) -> usize {
        self.layers.last().map_or(0, Tensor2D::rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Synthetic {
        spec: SyntheticSpec,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta: Option<f64>,
    },
    File {
        path: PathBuf,
    },
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    pub train: Batch,
    pub val: Batch,
    pub test: Batch,
    pub n_classes: usize,
    pub provenance: Provenance,
}

impl LabeledDataset {
    pub fn dim(&self) -> usize {
        self.train.dim()
    }

    /// Writes `{prefix}.train.csv`, `{prefix}.val.csv`, `{prefix}.test.csv`.
    pub fn save_splits(&self, dir: impl AsRef<Path>, prefix: &str) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        let mut paths = Vec::new();
        for (split, batch) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            let path = dir.join(format!("{prefix}.{split}.csv"));
            save_csv(&path, batch)?;
            paths.push(path);
        }
        Ok(paths)
    }

    pub fn load_splits(dir: impl AsRef<Path>, prefix: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let train = load_csv(dir.join(format!("{prefix}.train.csv")))?;
        let val = load_csv_allow_empty(dir.join(format!("{prefix}.val.csv")), train.dim())?;
        let test = load_csv(dir.join(format!("{prefix}.test.csv")))?;
        let n_classes = train.labels.iter().max().map_or(0, |m| m + 1);
        if val.dim() != train.dim() || test.dim() != train.dim() {
            return Err(Error::Shape(format!("splits under {} disagree on width", dir.display())));
        }
        for (name, b) in [("val", &val), ("test", &test)] {
            if b.labels.iter().any(|&l| l >= n_classes) {
                return Err(Error::InvalidArgument(format!(
                    "{name} split has labels unseen in train"
                )));
            }
        }
        Ok(Self {
            name: prefix.to_string(),
            train,
            val,
            test,
            n_classes,
            provenance: Provenance::File { path: dir.to_path_buf() },
        })
    }
}

fn empty_batch(dim: usize) -> Batch {
    Batch {
        inputs: Tensor2D::zeros(0, dim),
        labels: Vec::new(),
    }
}

/// Per class in input order: first `train_n` to train, next `val_n` to val,
/// the rest to test. Order within each split follows the input.
pub fn split_per_class(samples: &Batch, train_n: usize, val_n: usize) -> Result<LabeledDataset> {
    if train_n == 0 {
        return Err(Error::InvalidArgument("train_n must be >= 1".into()));
    }
    let n_classes = samples.labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; n_classes];
    for &l in &samples.labels {
        counts[l] += 1;
    }
    if let Some((class, &have)) = counts
        .iter()
        .enumerate()
        .find(|(_, &c)| c <= train_n + val_n)
    {
        return Err(Error::ClassTooSmall {
            class,
            have,
            need: train_n + val_n,
        });
    }
    let mut seen = vec![0usize; n_classes];
    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for (i, &l) in samples.labels.iter().enumerate() {
        let k = seen[l];
        seen[l] += 1;
        if k < train_n {
            tr.push(i);
        } else if k < train_n + val_n {
            va.push(i);
        } else {
            te.push(i);
        }
    }
    let val = if va.is_empty() {
        empty_batch(samples.dim())
    } else {
        samples.select(&va)
    };
    Ok(LabeledDataset {
        name: String::new(),
        train: samples.select(&tr),
        val,
        test: samples.select(&te),
        n_classes,
        provenance: Provenance::Unknown,
    })
}

/// Samples `spec.samples_per_class` rows per class through `mixing`,
/// class-major order.
fn sample_task(spec: &SyntheticSpec, mixing: &Mixing, seed: u64) -> Result<Batch> {
    let mut proto_rng = seed::rng(seed, &[seed::STREAM_PROTOTYPES]);
    let prototypes: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| {
            (0..spec.latent_dim)
                .map(|_| spec.prototype_scale * proto_rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let mut noise_rng = seed::rng(seed, &[seed::STREAM_NOISE]);
    let n = spec.n_classes * spec.samples_per_class;
    let mut data = Vec::with_capacity(n * spec.input_dim);
    let mut labels = Vec::with_capacity(n);
    for (c, proto) in prototypes.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let mut z: Vec<f64> = proto
                .iter()
                .map(|p| p + spec.noise_sigma * noise_rng.sample::<f64, _>(StandardNormal))
                .collect();
            z.extend(
                (0..spec.nuisance_dim)
                    .map(|_| spec.nuisance_sigma * noise_rng.sample::<f64, _>(StandardNormal)),
            );
            data.extend(mixing.apply(&z));
            labels.push(c);
        }
    }
    Batch::new(Tensor2D::from_vec(n, spec.input_dim, data)?, labels)
}

/// Source task and its mixing.
pub fn gen_source(spec: &SyntheticSpec, seed: u64) -> Result<(LabeledDataset, Mixing)> {
    spec.validate()?;
    let mixing = Mixing::random(spec, seed);
    let samples = sample_task(spec, &mixing, seed)?;
    let mut ds = split_per_class(&samples, spec.train_per_class, spec.val_per_class)?;
    ds.name = "source".into();
    ds.provenance = Provenance::Synthetic {
        spec: spec.clone(),
        seed,
        theta: None,
    };
    Ok((ds, mixing))
}

/// Target task whose mixing rotates from an independent random mixing
/// (`theta = 0`) to `source_mixing` (`theta = 1`). Class prototypes are
/// always fresh.
pub fn gen_target(
    spec: &SyntheticSpec,
    source_mixing: &Mixing,
    theta: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidArgument(format!(
            "relatedness must lie in [0, 1], got {theta}"
        )));
    }
    let independent = Mixing::random(spec, independent_seed(seed));
    if independent.layers.len() != source_mixing.layers.len()
        || independent
            .layers
            .iter()
            .zip(&source_mixing.layers)
            .any(|(a, b)| a.shape() != b.shape())
    {
        return Err(Error::Shape(
            "target spec must match the source mixing's dimensions and depth".into(),
        ));
    }
    let mixing = source_mixing.interpolate(&independent, theta);
    let task_seed = seed::mix(seed, &[0x7461_736b]);
    let samples = sample_task(spec, &mixing, task_seed)?;
    let mut ds = split_per_class(&samples, spec.train_per_class, spec.val_per_class)?;
    ds.name = "target".into();
    ds.provenance = Provenance::Synthetic {
        spec: spec.clone(),
        seed,
        theta: Some(theta),
    };
    Ok(ds)
}

/// Mixing actually used by [`gen_target`] for the given arguments.
pub fn target_mixing(spec: &SyntheticSpec, source_mixing: &Mixing, theta: f64, seed: u64) -> Mixing {
    let independent = Mixing::random(spec, independent_seed(seed));
    source_mixing.interpolate(&independent, theta)
}

fn independent_seed(seed: u64) -> u64 {
    seed::mix(seed, &[0x7461_7267])
}


fn csv_err(line: u64, message: impl Into<String>) -> Error {
    Error::Csv {
        line,
        message: message.into(),
    }
}

/// Reads `label,f0,...,f{d-1}`; labels must be dense from 0.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Batch> {
    let batch = read_csv(path.as_ref())?;
    if batch.labels.is_empty() {
        return Err(csv_err(2, "no data rows"));
    }
    Ok(batch)
}

fn load_csv_allow_empty(path: impl AsRef<Path>, dim: usize) -> Result<Batch> {
    let batch = read_csv(path.as_ref())?;
    if batch.labels.is_empty() {
        return Ok(empty_batch(dim));
    }
    Ok(batch)
}

fn read_csv(path: &Path) -> Result<Batch> {
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| csv_err(1, e.to_string()))?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(csv_err(1, "empty file"));
    }
    if &header[0] != "label" {
        return Err(csv_err(1, format!("first column must be 'label', found '{}'", &header[0])));
    }
    let dim = header.len() - 1;
    if dim == 0 {
        return Err(csv_err(1, "no feature columns"));
    }
    for (j, name) in header.iter().skip(1).enumerate() {
        if name != format!("f{j}") {
            return Err(csv_err(1, format!("column {} must be 'f{j}', found '{name}'", j + 1)));
        }
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut lines = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let label: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| csv_err(line, format!("label '{}' is not a class index", &record[0])))?;
        for (j, cell) in record.iter().skip(1).enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| csv_err(line, format!("f{j} value '{cell}' is not a number")))?;
            if !v.is_finite() {
                return Err(csv_err(line, format!("f{j} value '{cell}' is not finite")));
            }
            data.push(v);
        }
        labels.push(label);
        lines.push(line);
    }

    let present: BTreeSet<usize> = labels.iter().copied().collect();
    if let Some(missing) = (0..present.len()).find(|l| !present.contains(l)) {
        let (row, label) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l > missing)
            .map(|(i, &l)| (i, l))
            .expect("a larger label exists");
        return Err(csv_err(
            lines[row],
            format!("labels are not dense: {label} present but {missing} missing"),
        ));
    }
    Ok(Batch {
        inputs: Tensor2D::from_vec(labels.len(), dim, data)?,
        labels,
    })
}

/// Writes shortest round-trip decimal representations.
pub fn save_csv(path: impl AsRef<Path>, batch: &Batch) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => csv_err(0, format!("{other:?}")),
    })?;
    let write_err = |e: csv::Error| csv_err(0, e.to_string());
    let mut header = vec!["label".to_string()];
    header.extend((0..batch.dim()).map(|j| format!("f{j}")));
    writer.write_record(&header).map_err(write_err)?;
    for i in 0..batch.labels.len() {
        let mut row = Vec::with_capacity(batch.dim() + 1);
        row.push(batch.labels[i].to_string());
        row.extend(batch.inputs.row(i).iter().map(|v| v.to_string()));
        writer.write_record(&row).map_err(write_err)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_classes: 4,
            latent_dim: 3,
            input_dim: 6,
            samples_per_class: 12,
            noise_sigma: 0.3,
            mixing_depth: 2,
            train_per_class: 6,
            val_per_class: 3,
            prototype_scale: 1.0,
            mixing_gain: 1.5,
            ..SyntheticSpec::default_source()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, ma) = gen_source(&small(), 5).unwrap();
        let (b, mb) = gen_source(&small(), 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        let (c, _) = gen_source(&small(), 6).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn every_split_has_every_class() {
        let (ds, _) = gen_source(&small(), 1).unwrap();
        for split in [&ds.train, &ds.val, &ds.test] {
            let classes: BTreeSet<_> = split.labels.iter().copied().collect();
            assert_eq!(classes.len(), 4);
        }
        assert_eq!(ds.train.len(), 24);
        assert_eq!(ds.val.len(), 12);
        assert_eq!(ds.test.len(), 12);
    }

    #[test]
    fn tiny_noise_collapses_classes() {
        let mut spec = small();
        spec.noise_sigma = 1e-300;
        let (ds, _) = gen_source(&spec, 1).unwrap();
        for i in 1..6 {
            assert_eq!(ds.train.inputs.row(0), ds.train.inputs.row(i));
        }
    }

    #[test]
    fn target_endpoints() {
        let spec = small();
        let (_, mixing) = gen_source(&spec, 1).unwrap();
        assert_eq!(target_mixing(&spec, &mixing, 1.0, 9), mixing);
        let far = target_mixing(&spec, &mixing, 0.0, 9);
        assert_eq!(far, Mixing::random(&spec, seed::mix(9, &[0x7461_7267])));
        assert_ne!(far, mixing);
        let a = gen_target(&spec, &mixing, 0.5, 9).unwrap();
        let b = gen_target(&spec, &mixing, 0.5, 9).unwrap();
        assert_eq!(a, b);
        assert!(gen_target(&spec, &mixing, 1.5, 9).is_err());
        assert!(gen_target(&spec, &mixing, -0.1, 9).is_err());
    }

    #[test]
    fn interpolation_keeps_weight_scale() {
        let spec = SyntheticSpec {
            input_dim: 60,
            latent_dim: 30,
            ..small()
        };
        let a = Mixing::random(&spec, 1);
        let b = Mixing::random(&spec, 2);
        let mid = a.interpolate(&b, 0.5);
        let var = |m: &Mixing| {
            let w = m.layers[1].as_slice();
            w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64
        };
        assert!((var(&mid) / var(&a) - 1.0).abs() < 0.1);
    }

    #[test]
    fn caltech_style_split() {
        let n = 60;
        let inputs = Tensor2D::from_vec(2 * n, 1, (0..2 * n).map(|i| i as f64).collect()).unwrap();
        let labels = (0..2 * n).map(|i| i % 2).collect();
        let ds = split_per_class(&Batch::new(inputs, labels).unwrap(), 30, 20).unwrap();
        for c in 0..2 {
            let count = |b: &Batch| b.labels.iter().filter(|&&l| l == c).count();
            assert_eq!((count(&ds.train), count(&ds.val), count(&ds.test)), (30, 20, 10));
        }
        // First items of each class go to train.
        assert_eq!(ds.train.inputs.row(0), &[0.0]);
        assert_eq!(ds.train.inputs.row(1), &[1.0]);
    }

    #[test]
    fn split_is_order_sensitive() {
        let inputs = Tensor2D::from_vec(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let a = split_per_class(&Batch::new(inputs.clone(), vec![0; 4]).unwrap(), 1, 0).unwrap();
        let rev = inputs.select_rows(&[3, 2, 1, 0]);
        let b = split_per_class(&Batch::new(rev, vec![0; 4]).unwrap(), 1, 0).unwrap();
        assert_eq!(a.train.inputs.row(0), &[0.0]);
        assert_eq!(b.train.inputs.row(0), &[3.0]);
        assert!(a.val.is_empty());
    }

    #[test]
    fn small_class_named() {
        let inputs = Tensor2D::from_vec(5, 1, vec![0.0; 5]).unwrap();
        let err = split_per_class(&Batch::new(inputs, vec![0, 0, 0, 1, 1]).unwrap(), 1, 1).unwrap_err();
        assert!(matches!(err, Error::ClassTooSmall { class: 1, have: 2, need: 2 }));
    }

    #[test]
    fn csv_round_trip() {
        let (ds, _) = gen_source(&small(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        save_csv(&path, &ds.train).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back, ds.train);
        let paths = ds.save_splits(dir.path(), "src").unwrap();
        assert_eq!(paths.len(), 3);
        let loaded = LabeledDataset::load_splits(dir.path(), "src").unwrap();
        assert_eq!((loaded.train, loaded.val, loaded.test), (ds.train, ds.val, ds.test));
    }

    fn write(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("x.csv");
        std::fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn csv_errors_carry_lines() {
        let dir = tempfile::tempdir().unwrap();
        let gap = write(dir.path(), "label,f0\n0,1.0\n2,3.0\n");
        assert!(matches!(load_csv(gap), Err(Error::Csv { line: 3, ref message }) if message.contains("dense")));

        let empty = write(dir.path(), "");
        assert!(matches!(load_csv(empty), Err(Error::Csv { .. })));

        let ragged = write(dir.path(), "label,f0,f1\n0,1,2\n1,2\n");
        assert!(matches!(load_csv(ragged), Err(Error::Csv { line: 3, .. })));

        let text = write(dir.path(), "label,f0\n0,1\n1,abc\n");
        assert!(matches!(load_csv(text), Err(Error::Csv { line: 3, .. })));

        let header = write(dir.path(), "class,f0\n0,1\n");
        assert!(matches!(load_csv(header), Err(Error::Csv { line: 1, .. })));
    }
}
