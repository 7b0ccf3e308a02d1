//! Labelled image sets: synthetic generators, PGM ingestion, stratified
//! splitting and low-data subsampling.

mod pgm;
mod synth;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

pub use pgm::{ingest_pgm, parse_pgm};
pub use synth::{generate_synthetic, SynthKind};

use crate::models::{ImageShape, Parameters};
use crate::rng::substream;
use crate::surgery::archive;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// N images of shape C×H×W with values in [0, 1] and labels in [0, K).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        let [n, _, _, _] = images.shape() else {
            return Err(Error::Dimension(format!("images must be N×C×H×W, got {:?}", images.shape())));
        };
        if *n != labels.len() {
            return Err(Error::Dimension(format!("{n} images but {} labels", labels.len())));
        }
        if class_names.len() < 2 {
            return Err(Error::Label(format!("need at least 2 classes, got {}", class_names.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Label(format!("label {bad} out of range for {} classes", class_names.len())));
        }
        if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Range(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { images, labels, class_names })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image_shape(&self) -> ImageShape {
        let s = self.images.shape();
        ImageShape { channels: s[1], height: s[2], width: s[3] }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        self.labels.iter().for_each(|&l| counts[l] += 1);
        counts
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::Range("empty subset".into()));
        }
        let labels = indices
            .iter()
            .map(|&i| self.labels.get(i).copied().ok_or_else(|| Error::Range(format!("sample {i} out of range"))))
            .collect::<Result<_>>()?;
        Ok(Self { images: self.images.select_rows(indices)?, labels, class_names: self.class_names.clone() })
    }

    /// Images and one-hot targets of the samples at `indices`.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        let images = self.images.select_rows(indices)?;
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((images, one_hot(&labels, self.classes())?))
    }

    fn by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.classes()];
        self.labels.iter().enumerate().for_each(|(i, &l)| out[l].push(i));
        out
    }
}

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (row, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Label(format!("label {l} out of range for {classes} classes")));
        }
        data[row * classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], data)
}

/// Stratified train/test index partition. Each class contributes
/// `min(ceil(frac·n_c), n_c − 1)` samples to train, the rest to test.
pub fn split_indices(ds: &Dataset, train_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Range(format!("train fraction must lie in (0, 1), got {train_frac}")));
    }
    let mut rng = substream(seed, "split");
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (c, mut idx) in ds.by_class().into_iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::Stratification(format!(
                "class `{}` has {} sample(s), need at least 2",
                ds.class_names[c],
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n_train = ((train_frac * idx.len() as f64 - 1e-9).ceil() as usize).min(idx.len() - 1);
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split(ds: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(ds, train_frac, seed)?;
    Ok((ds.subset(&train)?, ds.subset(&test)?))
}

/// Per-class quotas summing to `m`, proportional to `counts` (largest
/// remainder, ties to the lower class), at least one per class.
fn quotas(counts: &[usize], m: usize) -> Result<Vec<usize>> {
    let n: usize = counts.iter().sum();
    if m < counts.len() {
        return Err(Error::Stratification(format!("{m} samples cannot cover {} classes", counts.len())));
    }
    let mut q: Vec<usize> = counts.iter().map(|&c| (m * c / n).max(1)).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&c| (std::cmp::Reverse((m * counts[c]) % n), c));
    for &c in order.iter().cycle() {
        if q.iter().sum::<usize>() >= m {
            break;
        }
        if q[c] < counts[c] {
            q[c] += 1;
        }
    }
    while q.iter().sum::<usize>() > m {
        // trim the class furthest above its proportional share
        let c = (0..counts.len()).filter(|&c| q[c] > 1).max_by_key(|&c| (q[c] * n).saturating_sub(m * counts[c])).unwrap();
        q[c] -= 1;
    }
    Ok(q)
}

/// Stratified subset of `ceil(pct·N/100)` indices drawn from the stream
/// `subsample:{pct}:{rep}`. Returned sorted.
pub fn subsample_indices(ds: &Dataset, pct: f64, seed: u64, rep: usize) -> Result<Vec<usize>> {
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(Error::Range(format!("subset percentage must lie in (0, 100], got {pct}")));
    }
    let m = ((pct * ds.len() as f64 / 100.0) - 1e-9).ceil() as usize;
    let groups = ds.by_class();
    let counts: Vec<usize> = groups.iter().map(Vec::len).collect();
    if counts.contains(&0) {
        return Err(Error::Stratification("a class has no samples".into()));
    }
    let q = quotas(&counts, m)?;
    let mut rng = substream(seed, &format!("subsample:{pct}:{rep}"));
    let mut out = Vec::with_capacity(m);
    for (idx, &take) in groups.iter().zip(&q) {
        out.extend(rand::seq::index::sample(&mut rng, idx.len(), take).into_iter().map(|k| idx[k]));
    }
    out.sort_unstable();
    Ok(out)
}

pub fn subsample(ds: &Dataset, pct: f64, seed: u64, rep: usize) -> Result<Dataset> {
    ds.subset(&subsample_indices(ds, pct, seed, rep)?)
}

/// Writes `dataset.nta` (entries `images` and `labels`) and `classes.json`
/// into `dir`.
pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut p = Parameters::new();
    p.insert("images", ds.images.clone());
    p.insert("labels", Tensor::new(vec![ds.len()], ds.labels.iter().map(|&l| l as f32).collect())?);
    archive::write_archive(&p, dir.join("dataset.nta"))?;
    let names = dir.join("classes.json");
    fs::write(&names, serde_json::to_string_pretty(&ds.class_names)? + "\n").map_err(|e| Error::io(&names, e))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let p = archive::read_archive(dir.join("dataset.nta"))?;
    let names_path = dir.join("classes.json");
    let text = fs::read_to_string(&names_path).map_err(|e| Error::io(&names_path, e))?;
    let class_names: Vec<String> = serde_json::from_str(&text)?;
    let labels = p
        .require("labels")?
        .data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Label(format!("label value {v} is not a class index")))
            }
        })
        .collect::<Result<_>>()?;
    Dataset::new(p.require("images")?.clone(), labels, class_names)
}

/// Per-class sample counts, keyed by class name.
pub fn class_histogram(ds: &Dataset) -> BTreeMap<String, usize> {
    ds.class_names.iter().cloned().zip(ds.class_counts()).collect()
}
