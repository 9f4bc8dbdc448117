//! Labelled datasets, IDX/container I/O and the non-IID client partitioners.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::Matrix;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CONTAINER_MAGIC: u32 = 0x5046_4453;

/// Share of each client's samples held out for its local test split.
pub const TEST_FRACTION: f64 = 0.2;
pub const PARTITION_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::shape(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!("label {bad} outside {num_classes} classes")));
        }
        Ok(Dataset { features, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        self.labels.iter().for_each(|&y| h[y] += 1);
        h
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Sample indices grouped by class, in ascending index order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            by[y].push(i);
        }
        by
    }
}

/// One client's private data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub train: Dataset,
    pub test: Dataset,
    /// Per-class counts of `train`.
    pub label_histogram: Vec<usize>,
    /// Rows of the source dataset that ended up in `train` / `test`.
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// A fixed per-client change of feature distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainTransform {
    pub rotation_angle: f64,
    pub scale: f64,
    pub noise_sigma: f64,
    pub channel_shift: f64,
}

impl Default for DomainTransform {
    fn default() -> Self {
        DomainTransform::identity()
    }
}

impl DomainTransform {
    pub fn identity() -> Self {
        DomainTransform { rotation_angle: 0.0, scale: 1.0, noise_sigma: 0.0, channel_shift: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("transform needs scale > 0 and noise_sigma >= 0"));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        *self == DomainTransform::identity()
    }

    /// Transforms every row. 784-wide rows are treated as 28×28 images and
    /// rotated in the image plane; other widths rotate consecutive coordinate
    /// pairs. Then `x ← scale·x + channel_shift + N(0, noise_sigma²)`.
    pub fn apply(&self, features: &Matrix, rng: &mut ChaCha8Rng) -> Result<Matrix> {
        self.validate()?;
        let mut out = features.clone();
        if self.is_identity() {
            return Ok(out);
        }
        let noise = Normal::new(0.0, self.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let (sin, cos) = self.rotation_angle.sin_cos();
        let map = (features.cols() == 784 && self.rotation_angle != 0.0).then(|| image_rotation_map(28, sin, cos));
        for i in 0..features.rows() {
            let src = features.row(i);
            let dst = out.row_mut(i);
            if let Some(map) = &map {
                for (d, m) in dst.iter_mut().zip(map) {
                    *d = m.map_or(0.0, |s| src[s]);
                }
            } else if self.rotation_angle != 0.0 {
                for (pair_dst, pair_src) in dst.chunks_exact_mut(2).zip(src.chunks_exact(2)) {
                    pair_dst[0] = cos * pair_src[0] - sin * pair_src[1];
                    pair_dst[1] = sin * pair_src[0] + cos * pair_src[1];
                }
            }
            for v in dst.iter_mut() {
                *v = self.scale * *v + self.channel_shift;
                if self.noise_sigma > 0.0 {
                    *v += noise.sample(rng);
                }
            }
        }
        Ok(out)
    }
}

/// Nearest-neighbour inverse map of a rotation about the image centre:
/// for each destination pixel, the source pixel (if inside the image).
fn image_rotation_map(side: usize, sin: f64, cos: f64) -> Vec<Option<usize>> {
    let c = (side as f64 - 1.0) / 2.0;
    let mut map = Vec::with_capacity(side * side);
    for r in 0..side {
        for col in 0..side {
            let x = col as f64 - c;
            let y = r as f64 - c;
            let sx = (cos * x + sin * y + c).round();
            let sy = (-sin * x + cos * y + c).round();
            let inside = sx >= 0.0 && sy >= 0.0 && sx < side as f64 && sy < side as f64;
            map.push(inside.then(|| sy as usize * side + sx as usize));
        }
    }
    map
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<Matrix> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.read_u32::<BigEndian>().map_err(|_| Error::Format("images header truncated".into()))?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("bad image magic {magic:#010x}")));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = cur.read_u32::<BigEndian>().map_err(|_| Error::Format("images header truncated".into()))? as usize;
    }
    let [count, rows, cols] = dims;
    let width = rows * cols;
    let payload = &bytes[16..];
    if payload.len() < count * width {
        return Err(Error::Format(format!(
            "image payload has {} bytes, header promises {}",
            payload.len(),
            count * width
        )));
    }
    let data = payload[..count * width].iter().map(|&b| b as f64 / 255.0).collect();
    Matrix::from_vec(count, width, data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.read_u32::<BigEndian>().map_err(|_| Error::Format("labels header truncated".into()))?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("bad label magic {magic:#010x}")));
    }
    let count = cur.read_u32::<BigEndian>().map_err(|_| Error::Format("labels header truncated".into()))? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(Error::Format(format!("label payload has {} bytes, header promises {count}", payload.len())));
    }
    Ok(payload[..count].iter().map(|&b| b as usize).collect())
}

/// Reads an IDX image/label file pair. Pixels are scaled to `[0, 1]`; the
/// class count is one more than the largest label.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let features = parse_idx_images(&fs::read(images_path)?)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)?;
    if labels.len() != features.rows() {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(features, labels, num_classes)
}

/// Encodes images (values in `[0, 1]`, quantized to bytes) and labels as IDX.
pub fn write_idx(ds: &Dataset, side: (usize, usize), images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    if side.0 * side.1 != ds.dim() {
        return Err(Error::shape("image side does not match the feature width"));
    }
    let mut img = Vec::with_capacity(16 + ds.len() * ds.dim());
    img.write_u32::<BigEndian>(IDX_IMAGES_MAGIC)?;
    img.write_u32::<BigEndian>(ds.len() as u32)?;
    img.write_u32::<BigEndian>(side.0 as u32)?;
    img.write_u32::<BigEndian>(side.1 as u32)?;
    img.extend(ds.features.as_slice().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(images, img)?;

    let mut lab = Vec::with_capacity(8 + ds.len());
    lab.write_u32::<BigEndian>(IDX_LABELS_MAGIC)?;
    lab.write_u32::<BigEndian>(ds.len() as u32)?;
    lab.extend(ds.labels.iter().map(|&y| y as u8));
    fs::write(labels, lab)?;
    Ok(())
}

/// Little-endian container: `u32 magic, u32 rows, u32 cols, u32 classes`,
/// then row-major `f64` features, then `u16` labels.
pub fn write_container(ds: &Dataset, mut out: impl Write) -> Result<()> {
    out.write_u32::<LittleEndian>(CONTAINER_MAGIC)?;
    out.write_u32::<LittleEndian>(ds.len() as u32)?;
    out.write_u32::<LittleEndian>(ds.dim() as u32)?;
    out.write_u32::<LittleEndian>(ds.num_classes as u32)?;
    for &v in ds.features.as_slice() {
        out.write_f64::<LittleEndian>(v)?;
    }
    for &y in &ds.labels {
        out.write_u16::<LittleEndian>(y as u16)?;
    }
    Ok(())
}

pub fn read_container(mut input: impl Read) -> Result<Dataset> {
    let truncated = |_| Error::Format("container truncated".into());
    let magic = input.read_u32::<LittleEndian>().map_err(truncated)?;
    if magic != CONTAINER_MAGIC {
        return Err(Error::Format(format!("bad container magic {magic:#010x}")));
    }
    let rows = input.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let cols = input.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let classes = input.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut data = vec![0.0; rows * cols];
    input.read_f64_into::<LittleEndian>(&mut data).map_err(truncated)?;
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        labels.push(input.read_u16::<LittleEndian>().map_err(truncated)? as usize);
    }
    Dataset::new(Matrix::from_vec(rows, cols, data)?, labels, classes)
}

/// Class `j` is drawn from `N(separation · a_j, I)` where the anchors `a_j`
/// are `±e_j` (orthonormal for `C ≤ d`, antipodal pairs up to `2d`) and
/// seeded random unit directions beyond that. Rows are grouped by class.
pub fn synth_gaussian(
    num_classes: usize,
    dim: usize,
    n_per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 || dim < 2 || n_per_class < 1 {
        return Err(Error::invalid("synthetic data needs C >= 2, d >= 2, n_per_class >= 1"));
    }
    let mut rng = seeds::rng(seeds::derive(seed, &[seeds::TAG_SYNTH]));
    let mut anchors = Vec::with_capacity(num_classes);
    for j in 0..num_classes {
        let mut a = vec![0.0; dim];
        if j < 2 * dim {
            a[j % dim] = if j < dim { 1.0 } else { -1.0 };
        } else {
            a.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
            let n = crate::tensor::norm(&a);
            a.iter_mut().for_each(|v| *v /= n);
        }
        anchors.push(a);
    }
    let mut data = Vec::with_capacity(num_classes * n_per_class * dim);
    let mut labels = Vec::with_capacity(num_classes * n_per_class);
    for (j, a) in anchors.iter().enumerate() {
        for _ in 0..n_per_class {
            for &c in a {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(separation * c + z);
            }
            labels.push(j);
        }
    }
    Dataset::new(Matrix::from_vec(labels.len(), dim, data)?, labels, num_classes)
}

/// Stratified uniform subsample of `n` rows (largest-remainder quotas per class),
/// returned in random order.
pub fn subsample(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n > ds.len() {
        return Err(Error::invalid(format!("cannot draw {n} of {} rows", ds.len())));
    }
    let mut rng = seeds::rng(seeds::derive(seed, &[seeds::TAG_SUBSAMPLE]));
    let by_class = ds.indices_by_class();
    let total = ds.len().max(1);
    let exact: Vec<f64> = by_class.iter().map(|c| c.len() as f64 * n as f64 / total as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..by_class.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - quota[a] as f64;
        let rb = exact[b] - quota[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut short = n - quota.iter().sum::<usize>();
    for &j in &order {
        if short == 0 {
            break;
        }
        if quota[j] < by_class[j].len() {
            quota[j] += 1;
            short -= 1;
        }
    }
    let mut picked = Vec::with_capacity(n);
    for (class, &q) in by_class.iter().zip(&quota) {
        let mut idx = class.clone();
        idx.shuffle(&mut rng);
        picked.extend_from_slice(&idx[..q]);
    }
    picked.shuffle(&mut rng);
    Ok(ds.subset(&picked))
}

/// Splits one client's sample indices 80/20 per class, keeping at least one
/// training sample of every class it owns.
fn split_train_test(
    ds: &Dataset,
    client_id: usize,
    mut owned: Vec<usize>,
    rng: &mut ChaCha8Rng,
) -> ClientShard {
    owned.shuffle(rng);
    let mut by_class = vec![Vec::new(); ds.num_classes];
    for i in owned {
        by_class[ds.labels[i]].push(i);
    }
    let mut train_indices = Vec::new();
    let mut test_indices = Vec::new();
    for idx in by_class {
        let c = idx.len();
        if c == 0 {
            continue;
        }
        let n_test = ((c as f64 * TEST_FRACTION).round() as usize).min(c - 1);
        test_indices.extend_from_slice(&idx[..n_test]);
        train_indices.extend_from_slice(&idx[n_test..]);
    }
    let train = ds.subset(&train_indices);
    let test = ds.subset(&test_indices);
    ClientShard {
        client_id,
        label_histogram: train.histogram(),
        train,
        test,
        train_indices,
        test_indices,
    }
}

fn dirichlet(alpha: f64, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    loop {
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return Ok(draws.into_iter().map(|g| g / sum).collect());
        }
    }
}

/// Label-skewed split: each class is divided among the clients by a fresh
/// `Dir(alpha·1_N)` draw. Partitions leaving a client without training or
/// test samples are redrawn, up to [`PARTITION_ATTEMPTS`] times.
pub fn partition_dirichlet(ds: &Dataset, num_clients: usize, alpha: f64, seed: u64) -> Result<Vec<ClientShard>> {
    if num_clients == 0 {
        return Err(Error::invalid("need at least one client"));
    }
    if !(alpha > 0.0) {
        return Err(Error::invalid("alpha must be positive"));
    }
    let by_class = ds.indices_by_class();
    for attempt in 0..PARTITION_ATTEMPTS {
        let mut rng = seeds::rng(seeds::derive(seed, &[seeds::TAG_PARTITION, attempt as u64]));
        let mut owned = vec![Vec::new(); num_clients];
        for class in &by_class {
            let mut idx = class.clone();
            idx.shuffle(&mut rng);
            let p = dirichlet(alpha, num_clients, &mut rng)?;
            let n = idx.len();
            let mut start = 0;
            let mut cum = 0.0;
            for (client, share) in p.iter().enumerate() {
                cum += share;
                let end = if client + 1 == num_clients { n } else { ((cum * n as f64).round() as usize).clamp(start, n) };
                owned[client].extend_from_slice(&idx[start..end]);
                start = end;
            }
        }
        let shards: Vec<ClientShard> = owned
            .into_iter()
            .enumerate()
            .map(|(c, o)| split_train_test(ds, c, o, &mut rng))
            .collect();
        if shards.iter().all(|s| !s.train.is_empty() && !s.test.is_empty()) {
            return Ok(shards);
        }
        log::debug!("dirichlet partition attempt {attempt} left a client empty, redrawing");
    }
    Err(Error::DegeneratePartition { attempts: PARTITION_ATTEMPTS })
}

/// Feature-skewed split: a stratified, near-equal division of every class
/// among the clients, after which client `i`'s features go through `transforms[i]`.
pub fn partition_feature_skew(ds: &Dataset, transforms: &[DomainTransform], seed: u64) -> Result<Vec<ClientShard>> {
    let n = transforms.len();
    if n < 2 {
        return Err(Error::invalid("feature skew needs at least two clients"));
    }
    transforms.iter().try_for_each(DomainTransform::validate)?;
    let mut rng = seeds::rng(seeds::derive(seed, &[seeds::TAG_PARTITION]));
    let mut owned = vec![Vec::new(); n];
    for (j, class) in ds.indices_by_class().into_iter().enumerate() {
        let mut idx = class;
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            owned[(pos + j) % n].push(i);
        }
    }
    let mut shards: Vec<ClientShard> = owned
        .into_iter()
        .enumerate()
        .map(|(c, o)| split_train_test(ds, c, o, &mut rng))
        .collect();
    for (shard, t) in shards.iter_mut().zip(transforms) {
        let mut trng = seeds::rng(seeds::derive(seed, &[seeds::TAG_TRANSFORM, shard.client_id as u64]));
        shard.train.features = t.apply(&shard.train.features, &mut trng)?;
        shard.test.features = t.apply(&shard.test.features, &mut trng)?;
    }
    Ok(shards)
}

/// `n` seeded transforms of increasing strength: client 0 is the identity,
/// client `i` is rotated by `i·π/n`, rescaled, shifted and noised.
pub fn default_domains(n: usize, seed: u64) -> Vec<DomainTransform> {
    let mut rng = seeds::rng(seeds::derive(seed, &[seeds::TAG_TRANSFORM, u64::MAX]));
    (0..n)
        .map(|i| {
            if i == 0 {
                return DomainTransform::identity();
            }
            DomainTransform {
                rotation_angle: i as f64 * std::f64::consts::PI / n as f64,
                scale: rng.random_range(0.6..1.4),
                noise_sigma: 0.1 * i as f64,
                channel_shift: rng.random_range(-0.5..0.5),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_bytes(count: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.write_u32::<BigEndian>(IDX_IMAGES_MAGIC).unwrap();
        b.write_u32::<BigEndian>(count).unwrap();
        b.write_u32::<BigEndian>(28).unwrap();
        b.write_u32::<BigEndian>(28).unwrap();
        b.extend_from_slice(pixels);
        b
    }

    fn label_bytes(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.write_u32::<BigEndian>(IDX_LABELS_MAGIC).unwrap();
        b.write_u32::<BigEndian>(labels.len() as u32).unwrap();
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn idx_fixture_loads() {
        let dir = tempfile::tempdir().unwrap();
        let mut pixels = vec![0u8; 4 * 784];
        pixels[..784].iter_mut().for_each(|p| *p = 255);
        fs::write(dir.path().join("img"), idx_bytes(4, &pixels)).unwrap();
        fs::write(dir.path().join("lab"), label_bytes(&[0, 1, 2, 1])).unwrap();
        let ds = load_idx(dir.path().join("img"), dir.path().join("lab")).unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.num_classes), (4, 784, 3));
        assert!(ds.features.row(0).iter().all(|&v| v == 1.0));
        assert!(ds.features.row(1).iter().all(|&v| v == 0.0));

        fs::write(dir.path().join("lab3"), label_bytes(&[0, 1, 2])).unwrap();
        let err = load_idx(dir.path().join("img"), dir.path().join("lab3")).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn idx_rejects_bad_magic_and_truncation() {
        let mut b = idx_bytes(2, &[0u8; 784]);
        assert!(parse_idx_images(&b).is_err());
        b[3] = 0x01;
        assert!(parse_idx_images(&b).is_err());
        assert!(parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 5, 1, 2]).is_err());
    }

    #[test]
    fn container_round_trip() {
        let ds = synth_gaussian(3, 4, 5, 2.0, 1).unwrap();
        let mut buf = Vec::new();
        write_container(&ds, &mut buf).unwrap();
        assert_eq!(&buf[..4], &CONTAINER_MAGIC.to_le_bytes());
        assert_eq!(buf.len(), 16 + 15 * 4 * 8 + 15 * 2);
        assert_eq!(read_container(buf.as_slice()).unwrap(), ds);
        assert!(read_container(&buf[..20]).is_err());
    }

    #[test]
    fn synth_is_deterministic_and_checks_args() {
        assert_eq!(synth_gaussian(4, 8, 10, 3.0, 5).unwrap(), synth_gaussian(4, 8, 10, 3.0, 5).unwrap());
        assert!(synth_gaussian(1, 8, 10, 3.0, 5).is_err());
        assert!(synth_gaussian(4, 1, 10, 3.0, 5).is_err());
    }

    #[test]
    fn subsample_edges() {
        let ds = synth_gaussian(3, 2, 10, 1.0, 2).unwrap();
        let all = subsample(&ds, 30, 1).unwrap();
        assert_eq!(all.histogram(), ds.histogram());
        let empty = subsample(&ds, 0, 1).unwrap();
        assert_eq!((empty.len(), empty.dim()), (0, 2));
        assert!(subsample(&ds, 31, 1).is_err());
        let some = subsample(&ds, 7, 1).unwrap();
        assert!(some.histogram().iter().all(|&c| c == 2 || c == 3));
    }

    #[test]
    fn single_client_gets_everything() {
        let ds = synth_gaussian(3, 2, 10, 1.0, 2).unwrap();
        let shards = partition_dirichlet(&ds, 1, 0.5, 3).unwrap();
        assert_eq!(shards.len(), 1);
        let mut all: Vec<usize> = shards[0].train_indices.iter().chain(&shards[0].test_indices).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..30).collect::<Vec<_>>());
        assert_eq!(shards[0].test.len(), 6);
    }

    #[test]
    fn partition_rejects_bad_args() {
        let ds = synth_gaussian(3, 2, 10, 1.0, 2).unwrap();
        assert!(partition_dirichlet(&ds, 0, 0.5, 3).is_err());
        assert!(partition_dirichlet(&ds, 2, 0.0, 3).is_err());
        assert!(partition_feature_skew(&ds, &[DomainTransform::identity()], 3).is_err());
    }

    #[test]
    fn impossible_partition_is_degenerate() {
        // two samples can never give three clients a train and a test sample each
        let ds = synth_gaussian(2, 2, 1, 1.0, 2).unwrap();
        assert!(matches!(
            partition_dirichlet(&ds, 3, 1.0, 1),
            Err(Error::DegeneratePartition { attempts: 100 })
        ));
    }

    #[test]
    fn quarter_turn_is_a_pixel_permutation() {
        let map = image_rotation_map(28, std::f64::consts::FRAC_PI_2.sin(), std::f64::consts::FRAC_PI_2.cos());
        let mut seen: Vec<usize> = map.iter().map(|m| m.unwrap()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..784).collect::<Vec<_>>());
    }
}
