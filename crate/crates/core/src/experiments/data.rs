//! Dataset loaders: UCI comma-separated files, IDX image/label files and a
//! synthetic blob generator.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UciDataset {
    Iris,
    Wine,
}

impl UciDataset {
    fn n_features(self) -> usize {
        match self {
            UciDataset::Iris => 4,
            UciDataset::Wine => 13,
        }
    }
}

/// Real-valued rows with integer class labels `0..k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

/// Directory holding the bundled iris, wine and 8x8 digits files.
pub fn bundled_data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

/// Parses iris (label last) or wine (label first) rows, standardises every
/// feature and maps the distinct labels, in sorted order, to `0..k`.
pub fn parse_uci(text: &str, dataset: UciDataset) -> Result<Dataset> {
    let d = dataset.n_features();
    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 1 {
            return Err(Error::Parse { line: n + 1, message: format!("expected {} fields, got {}", d + 1, fields.len()) });
        }
        let (label, values) = match dataset {
            UciDataset::Iris => (fields[d], &fields[..d]),
            UciDataset::Wine => (fields[0], &fields[1..]),
        };
        let row = values
            .iter()
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| Error::Parse { line: n + 1, message: format!("non-numeric feature in {line:?}") })?;
        features.push(row);
        raw_labels.push(label.to_string());
    }
    if features.is_empty() {
        return Err(Error::Parse { line: 0, message: "no data rows".into() });
    }
    standardize(&mut features);
    let ids: BTreeMap<&str, usize> = {
        let mut names: Vec<&str> = raw_labels.iter().map(String::as_str).collect();
        names.sort();
        names.dedup();
        names.into_iter().enumerate().map(|(i, s)| (s, i)).collect()
    };
    let labels = raw_labels.iter().map(|l| ids[l.as_str()]).collect();
    Ok(Dataset { features, labels })
}

pub fn load_uci(path: &Path, dataset: UciDataset) -> Result<Dataset> {
    parse_uci(&fs::read_to_string(path)?, dataset)
}

/// Zero mean and unit (population) variance per column; constant columns are
/// only centred.
pub fn standardize(rows: &mut [Vec<f64>]) {
    let n = rows.len() as f64;
    let d = rows.first().map_or(0, Vec::len);
    for j in 0..d {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for r in rows.iter_mut() {
            r[j] = (r[j] - mean) / sd;
        }
    }
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Raw IDX image tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<Vec<u8>>,
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format("IDX header truncated".into()))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES {
        return Err(Error::Format(format!("bad IDX image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let size = rows * cols;
    let body = &bytes[16..];
    if body.len() != n * size {
        return Err(Error::Format(format!("IDX image body has {} bytes, expected {}", body.len(), n * size)));
    }
    let pixels = if size == 0 { vec![Vec::new(); n] } else { body.chunks(size).map(<[u8]>::to_vec).collect() };
    Ok(IdxImages { rows, cols, pixels })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS {
        return Err(Error::Format(format!("bad IDX label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Format(format!("IDX label body has {} bytes, expected {n}", body.len())));
    }
    Ok(body.to_vec())
}

/// Reads an image file and its label file and checks they agree in length.
pub fn read_idx_pair(images: &Path, labels: &Path) -> Result<(IdxImages, Vec<u8>)> {
    let im = parse_idx_images(&fs::read(images)?)?;
    let lb = parse_idx_labels(&fs::read(labels)?)?;
    if im.pixels.len() != lb.len() {
        return Err(Error::Format(format!("{} images but {} labels", im.pixels.len(), lb.len())));
    }
    Ok((im, lb))
}

/// Samples `per_class` images of each class without replacement and
/// binarises them (`pixel >= threshold`). Output is grouped by class in the
/// order given.
pub fn binarize_sample<R: Rng + ?Sized>(
    images: &IdxImages,
    labels: &[u8],
    classes: &[u8],
    per_class: usize,
    threshold: u8,
    rng: &mut R,
) -> Result<(Vec<Vec<bool>>, Vec<usize>)> {
    let mut bits = Vec::new();
    let mut out_labels = Vec::new();
    for &c in classes {
        let idx: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l == c).map(|(i, _)| i).collect();
        if idx.len() < per_class {
            return Err(Error::Config(format!("class {c} has {} images, {per_class} requested", idx.len())));
        }
        for j in sample(rng, idx.len(), per_class) {
            bits.push(images.pixels[idx[j]].iter().map(|&p| p >= threshold).collect());
            out_labels.push(c as usize);
        }
    }
    Ok((bits, out_labels))
}

pub fn load_mnist_binarized<R: Rng + ?Sized>(
    images: &Path,
    labels: &Path,
    classes: &[u8],
    per_class: usize,
    threshold: u8,
    rng: &mut R,
) -> Result<(Vec<Vec<bool>>, Vec<usize>)> {
    let (im, lb) = read_idx_pair(images, labels)?;
    binarize_sample(&im, &lb, classes, per_class, threshold, rng)
}

/// Finds an IDX image/label pair in `dir`: the standard MNIST names
/// (`{prefix}-images-idx3-ubyte`, `{prefix}-labels-idx1-ubyte`) or the bare
/// `images-idx3-ubyte` / `labels-idx1-ubyte` of the bundled digits.
pub fn idx_paths(dir: &Path, prefix: &str) -> Option<(PathBuf, PathBuf)> {
    let candidates = [
        (format!("{prefix}-images-idx3-ubyte"), format!("{prefix}-labels-idx1-ubyte")),
        (format!("{prefix}-images.idx3-ubyte"), format!("{prefix}-labels.idx1-ubyte")),
        ("images-idx3-ubyte".to_string(), "labels-idx1-ubyte".to_string()),
    ];
    candidates.into_iter().map(|(i, l)| (dir.join(i), dir.join(l))).find(|(i, l)| i.is_file() && l.is_file())
}

/// Gaussian blobs with unit spread; centres equally spaced on a circle of
/// radius `radius` in the first two coordinates. Items are grouped by blob.
pub fn blobs<R: Rng + ?Sized>(n: usize, k: usize, dim: usize, radius: f64, rng: &mut R) -> Result<Dataset> {
    if k == 0 || dim < 2 || n < k {
        return Err(Error::Config(format!("blobs need k >= 1, dim >= 2 and n >= k (n={n}, k={k}, dim={dim})")));
    }
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i * k / n;
        let angle = std::f64::consts::TAU * c as f64 / k as f64;
        let mut x: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        x[0] += radius * angle.cos();
        x[1] += radius * angle.sin();
        features.push(x);
        labels.push(c);
    }
    Ok(Dataset { features, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn iris_and_wine_shapes() {
        let iris = load_uci(&bundled_data_dir().join("iris.data"), UciDataset::Iris).unwrap();
        assert_eq!((iris.len(), iris.features[0].len(), iris.n_classes()), (150, 4, 3));
        let wine = load_uci(&bundled_data_dir().join("wine.data"), UciDataset::Wine).unwrap();
        assert_eq!((wine.len(), wine.features[0].len(), wine.n_classes()), (178, 13, 3));
        for j in 0..13 {
            let col: Vec<f64> = wine.features.iter().map(|r| r[j]).collect();
            let mean = col.iter().sum::<f64>() / 178.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 178.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uci_errors() {
        assert!(matches!(parse_uci("", UciDataset::Iris), Err(Error::Parse { .. })));
        match parse_uci("1,2,3,4,a\n1,2,x,4,a\n", UciDataset::Iris) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_uci("1,2,3\n", UciDataset::Wine), Err(Error::Parse { line: 1, .. })));
    }

    fn idx(n: usize, rows: usize, cols: usize, fill: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut b = IDX_IMAGES.to_be_bytes().to_vec();
        for v in [n, rows, cols] {
            b.extend((v as u32).to_be_bytes());
        }
        b.extend((0..n * rows * cols).map(fill));
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = IDX_LABELS.to_be_bytes().to_vec();
        b.extend((labels.len() as u32).to_be_bytes());
        b.extend(labels);
        b
    }

    #[test]
    fn idx_magic_is_checked() {
        let mut b = idx(1, 2, 2, |_| 0);
        b[3] = 0x01;
        assert!(matches!(parse_idx_images(&b), Err(Error::Format(_))));
        assert!(matches!(parse_idx_labels(&idx(1, 2, 2, |_| 0)), Err(Error::Format(_))));
        assert!(matches!(parse_idx_images(&b[..10]), Err(Error::Format(_))));
    }

    #[test]
    fn binarize_counts_zero_image_and_determinism() {
        let labels: Vec<u8> = (0..90).map(|i| (i % 3) as u8).collect();
        let im = parse_idx_images(&idx(90, 2, 2, |p| if p < 4 { 0 } else { (p * 37 % 256) as u8 })).unwrap();
        let lb = parse_idx_labels(&idx_labels(&labels)).unwrap();
        let (bits, ls) = binarize_sample(&im, &lb, &[0, 1, 2], 30, 128, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!((bits.len(), ls.len()), (90, 90));
        // image 0 (class 0) is all zeros and every class-0 image is drawn
        assert!(bits[..30].iter().any(|b| b.iter().all(|x| !x)));
        let again = binarize_sample(&im, &lb, &[0, 1, 2], 30, 128, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(again.0, bits);
        assert!(binarize_sample(&im, &lb, &[0], 31, 128, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn bundled_digits_binarize_to_150() {
        let dir = bundled_data_dir().join("digits");
        let (i, l) = idx_paths(&dir, "train").unwrap();
        let (bits, labels) = load_mnist_binarized(&i, &l, &[0, 1, 2], 50, 128, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(bits.len(), 150);
        assert_eq!(bits[0].len(), 64);
        assert_eq!(labels.iter().filter(|&&c| c == 2).count(), 50);
    }

    #[test]
    fn blobs_are_grouped() {
        let d = blobs(60, 3, 2, 8.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(d.labels.iter().filter(|&&c| c == 1).count(), 20);
        assert_eq!(d.n_classes(), 3);
    }
}
