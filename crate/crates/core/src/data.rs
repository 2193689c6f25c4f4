//! IDX image ingestion and synthetic manifold generators.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, DenseVector, RngState};

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

/// Distance of each two-blobs center from the origin along the first axis.
pub const BLOB_CENTER: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidParameter(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<DenseVector>,
    pub input_dim: usize,
    pub name: String,
    pub split: Split,
    pub labels: Option<Vec<u8>>,
}

impl Dataset {
    pub fn new(samples: Vec<DenseVector>, name: impl Into<String>, split: Split) -> Result<Self> {
        let input_dim = samples.first().map(Vec::len).ok_or_else(|| Error::InvalidInput("dataset is empty".into()))?;
        if let Some(i) = samples.iter().position(|s| s.len() != input_dim) {
            return Err(Error::Shape(format!("sample {i} has length {}, expected {input_dim}", samples[i].len())));
        }
        Ok(Self { samples, input_dim, name: name.into(), split, labels: None })
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.samples.len() {
            return Err(Error::Length(format!("{} labels for {} samples", labels.len(), self.samples.len())));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Keeps the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        self.samples.truncate(n);
        if let Some(l) = &mut self.labels {
            l.truncate(n);
        }
    }

    /// Splits off everything after the first `n` samples.
    pub fn split_off(&mut self, n: usize, split: Split) -> Dataset {
        let n = n.min(self.samples.len());
        Dataset {
            samples: self.samples.split_off(n),
            input_dim: self.input_dim,
            name: self.name.clone(),
            split,
            labels: self.labels.as_mut().map(|l| l.split_off(n)),
        }
    }
}

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Length(format!("{}: header truncated at byte {at}", path.display())))
}

/// Parses an IDX file with the given magic, returning its dimension sizes and
/// at most `limit` items of payload.
fn read_idx(path: &Path, magic: u32, limit: Option<usize>) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = fs::read(path)?;
    let found = read_u32(&bytes, 0, path)?;
    if found != magic {
        return Err(Error::Format(format!("{}: bad magic number {found}, expected {magic}", path.display())));
    }
    let ndims = (magic & 0xff) as usize;
    let dims: Vec<usize> = (0..ndims).map(|i| read_u32(&bytes, 4 + 4 * i, path).map(|d| d as usize)).collect::<Result<_>>()?;
    let start = 4 + 4 * ndims;
    let item: usize = dims[1..].iter().product();
    let count = limit.map_or(dims[0], |l| l.min(dims[0]));
    let need = count * item;
    let payload = bytes.get(start..start + need).ok_or_else(|| {
        Error::Length(format!("{}: expected {need} payload bytes, found {}", path.display(), bytes.len().saturating_sub(start)))
    })?;
    let mut dims = dims;
    dims[0] = count;
    Ok((dims, payload.to_vec()))
}

/// Loads IDX images scaled to `[0, 1]`, flattened row-major, keeping the
/// first `limit` items in file order.
pub fn load_idx(images: &Path, labels: Option<&Path>, limit: Option<usize>) -> Result<Dataset> {
    let (dims, pixels) = read_idx(images, IDX_IMAGES_MAGIC, limit)?;
    let item: usize = dims[1..].iter().product();
    if dims[0] == 0 || item == 0 {
        return Err(Error::InvalidInput(format!("{}: no images", images.display())));
    }
    let samples: Vec<DenseVector> = pixels.chunks(item).map(|c| c.iter().map(|&p| p as f64 / 255.0).collect()).collect();
    let name = images.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let ds = Dataset::new(samples, name, Split::Train)?;
    match labels {
        Some(lp) => {
            let (ldims, lab) = read_idx(lp, IDX_LABELS_MAGIC, Some(dims[0]))?;
            if ldims[0] != dims[0] {
                return Err(Error::Length(format!("{}: {} labels for {} images", lp.display(), ldims[0], dims[0])));
            }
            ds.with_labels(lab)
        }
        None => Ok(ds),
    }
}

fn write_idx(path: &Path, magic: u32, dims: &[usize], payload: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&magic.to_be_bytes())?;
    for &d in dims {
        f.write_all(&(d as u32).to_be_bytes())?;
    }
    f.write_all(payload)?;
    Ok(())
}

/// Writes `count` images of `rows × cols` bytes in IDX format.
pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    if rows * cols == 0 || pixels.len() % (rows * cols) != 0 {
        return Err(Error::Shape(format!("{} bytes is not a whole number of {rows}x{cols} images", pixels.len())));
    }
    write_idx(path, IDX_IMAGES_MAGIC, &[pixels.len() / (rows * cols), rows, cols], pixels)
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    write_idx(path, IDX_LABELS_MAGIC, &[labels.len()], labels)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ManifoldKind {
    NoisyCircle,
    TwoBlobs,
    LinearSubspace,
}

impl ManifoldKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "noisy-circle" => Ok(ManifoldKind::NoisyCircle),
            "two-blobs" => Ok(ManifoldKind::TwoBlobs),
            "linear-subspace" => Ok(ManifoldKind::LinearSubspace),
            other => Err(Error::InvalidParameter(format!("unknown manifold kind '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ManifoldKind::NoisyCircle => "noisy-circle",
            ManifoldKind::TwoBlobs => "two-blobs",
            ManifoldKind::LinearSubspace => "linear-subspace",
        }
    }

    pub fn intrinsic_dim(self) -> usize {
        match self {
            ManifoldKind::TwoBlobs => 1,
            _ => 2,
        }
    }
}

/// Two orthonormal vectors in `R^n` by Gram–Schmidt on Gaussian draws.
pub fn random_frame(rng: &mut RngState, n: usize) -> [DenseVector; 2] {
    let a = rng.unit_sphere(n);
    loop {
        let mut b: DenseVector = (0..n).map(|_| rng.normal()).collect();
        let p = dot(&a, &b);
        b.iter_mut().zip(&a).for_each(|(bi, ai)| *bi -= p * ai);
        let nb = norm2(&b);
        if nb > 1e-8 {
            b.iter_mut().for_each(|v| *v /= nb);
            return [a, b];
        }
    }
}

/// Synthetic dataset of `n` points in `R^ambient_dim`.
///
/// Noisy-circle and linear-subspace points live in a random 2-D frame fixed
/// by `seed`; two-blobs alternates between centers `±BLOB_CENTER·e₁`.
/// Isotropic Gaussian noise of std `noise_std` is added in every case.
/// Labels record the blob for two-blobs and are zero otherwise.
pub fn synth_manifold(kind: ManifoldKind, n: usize, ambient_dim: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    if ambient_dim < kind.intrinsic_dim() {
        return Err(Error::InvalidParameter(format!(
            "{} needs ambient_dim >= {}, got {ambient_dim}",
            kind.name(),
            kind.intrinsic_dim()
        )));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise_std must be finite and non-negative, got {noise_std}")));
    }
    let mut rng = RngState::new(seed);
    let frame = match kind {
        ManifoldKind::TwoBlobs => None,
        _ => Some(random_frame(&mut rng, ambient_dim)),
    };
    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (mut x, label) = match (kind, &frame) {
            (ManifoldKind::TwoBlobs, _) => {
                let mut x = vec![0.0; ambient_dim];
                let label = (i % 2) as u8;
                x[0] = if label == 0 { BLOB_CENTER } else { -BLOB_CENTER };
                (x, label)
            }
            (ManifoldKind::NoisyCircle, Some([a, b])) => {
                let t = rng.uniform_range(0.0, std::f64::consts::TAU);
                let (s, c) = t.sin_cos();
                (a.iter().zip(b).map(|(ai, bi)| c * ai + s * bi).collect(), 0)
            }
            (ManifoldKind::LinearSubspace, Some([a, b])) => {
                let (u, v) = (rng.normal(), rng.normal());
                (a.iter().zip(b).map(|(ai, bi)| u * ai + v * bi).collect(), 0)
            }
            _ => unreachable!(),
        };
        if noise_std > 0.0 {
            x.iter_mut().for_each(|v| *v += noise_std * rng.normal());
        }
        samples.push(x);
        labels.push(label);
    }
    Dataset::new(samples, kind.name(), Split::Train)?.with_labels(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;
    use std::sync::OnceLock;

    fn tmp(name: &str) -> PathBuf {
        static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
        DIR.get_or_init(|| tempfile::tempdir().unwrap()).path().join(name)
    }

    #[test]
    fn idx_round_trip_and_limit() {
        let (img, lab) = (tmp("rt-img"), tmp("rt-lab"));
        let pixels: Vec<u8> = (0..12 * 6).map(|i| (i * 7 % 256) as u8).collect();
        write_idx_images(&img, 2, 3, &pixels).unwrap();
        write_idx_labels(&lab, &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 0, 1]).unwrap();
        let all = load_idx(&img, Some(&lab), None).unwrap();
        assert_eq!(all.len(), 12);
        assert_eq!(all.input_dim, 6);
        assert_eq!(all.samples[1][0], pixels[6] as f64 / 255.0);
        assert!(all.samples.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        let head = load_idx(&img, Some(&lab), Some(10)).unwrap();
        assert_eq!(head.len(), 10);
        assert_eq!(head.samples[..], all.samples[..10]);
        assert_eq!(head.labels.as_ref().unwrap().len(), 10);
        assert_eq!(load_idx(&img, None, None).unwrap().samples, all.samples);
    }

    #[test]
    fn idx_header_bytes() {
        let p = tmp("hdr");
        write_idx_images(&p, 1, 1, &[255]).unwrap();
        let b = fs::read(&p).unwrap();
        assert_eq!(&b[..4], &[0, 0, 8, 3]);
        assert_eq!(load_idx(&p, None, None).unwrap().samples, vec![vec![1.0]]);
        write_idx_labels(&p, &[3]).unwrap();
        assert_eq!(&fs::read(&p).unwrap()[..4], &[0, 0, 8, 1]);
    }

    #[test]
    fn idx_errors() {
        let p = tmp("bad-magic");
        write_idx_labels(&p, &[1, 2]).unwrap();
        match load_idx(&p, None, None) {
            Err(Error::Format(msg)) => assert!(msg.contains("2049")),
            other => panic!("{other:?}"),
        }
        let t = tmp("trunc");
        write_idx_images(&t, 2, 2, &[0; 8]).unwrap();
        let b = fs::read(&t).unwrap();
        fs::write(&t, &b[..b.len() - 1]).unwrap();
        assert!(matches!(load_idx(&t, None, None), Err(Error::Length(_))));
        fs::write(&t, &b[..6]).unwrap();
        assert!(matches!(load_idx(&t, None, None), Err(Error::Length(_))));
        assert!(matches!(load_idx(&tmp("missing"), None, None), Err(Error::Io(_))));
    }

    #[test]
    fn circle_without_noise_is_unit() {
        let d = synth_manifold(ManifoldKind::NoisyCircle, 200, 16, 0.0, 5).unwrap();
        for x in &d.samples {
            assert!((norm2(x) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn generators_are_deterministic_and_finite() {
        for kind in [ManifoldKind::NoisyCircle, ManifoldKind::TwoBlobs, ManifoldKind::LinearSubspace] {
            let a = synth_manifold(kind, 50, 8, 0.1, 3).unwrap();
            assert_eq!(a, synth_manifold(kind, 50, 8, 0.1, 3).unwrap());
            assert_ne!(a, synth_manifold(kind, 50, 8, 0.1, 4).unwrap());
            assert!(a.samples.iter().flatten().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn two_blob_mean_within_clt_bound() {
        let (n, sigma) = (10_000, 0.5);
        let d = synth_manifold(ManifoldKind::TwoBlobs, n, 4, sigma, 11).unwrap();
        for j in 0..4 {
            let mean = d.samples.iter().map(|x| x[j]).sum::<f64>() / n as f64;
            assert!(mean.abs() < 3.0 * sigma / (n as f64).sqrt(), "coord {j}: {mean}");
        }
    }

    #[test]
    fn subspace_points_lie_in_a_plane() {
        let d = synth_manifold(ManifoldKind::LinearSubspace, 30, 6, 0.0, 2).unwrap();
        let g = crate::linalg::DenseMatrix::from_rows(&d.samples).unwrap().gram();
        let e = crate::linalg::sym_eig(&g).unwrap();
        assert!(e.values()[2] < 1e-10 * e.values()[0]);
    }

    #[test]
    fn invalid_parameters() {
        assert!(matches!(synth_manifold(ManifoldKind::NoisyCircle, 0, 4, 0.0, 0), Err(Error::InvalidParameter(_))));
        assert!(matches!(synth_manifold(ManifoldKind::NoisyCircle, 4, 1, 0.0, 0), Err(Error::InvalidParameter(_))));
        assert!(matches!(synth_manifold(ManifoldKind::TwoBlobs, 4, 2, -1.0, 0), Err(Error::InvalidParameter(_))));
        assert!(ManifoldKind::parse("spiral").is_err());
    }
}
