//! Training image sources: IDX files, image directories, and in-memory sets.
//!
//! Pixels are held in `[-1, 1]`. Iteration order is a pure function of the
//! handle's shuffle seed and the epoch number.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::imageops::FilterType;
use image::{DynamicImage, GenericImageView};
use log::warn;
use ndarray::{s, Array4, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn pixels(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }
}

impl std::fmt::Display for ImageShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// A batch of images (`count × channels × height × width`) with their dataset ids.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch {
    pub pixels: Array4<f64>,
    pub ids: Vec<usize>,
}

impl ImageBatch {
    /// Wrap generated pixels; ids are `0..n`.
    pub fn generated(pixels: Array4<f64>) -> Self {
        let ids = (0..pixels.dim().0).collect();
        Self { pixels, ids }
    }

    pub fn empty(shape: ImageShape) -> Self {
        Self {
            pixels: Array4::zeros((0, shape.channels, shape.height, shape.width)),
            ids: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> ImageShape {
        let (_, c, h, w) = self.pixels.dim();
        ImageShape::new(c, h, w)
    }

    /// `count × pixels` row-major view of the batch.
    pub fn flat(&self) -> ndarray::Array2<f64> {
        let n = self.len();
        let p = self.shape().pixels();
        self.pixels
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, p))
            .expect("contiguous pixels")
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            pixels: self.pixels.select(Axis(0), indices),
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
        }
    }
}

/// An immutable, shareable image dataset.
#[derive(Clone, Debug)]
pub struct DatasetHandle {
    source: PathBuf,
    shape: ImageShape,
    seed: u64,
    images: Arc<Array4<f64>>,
}

impl DatasetHandle {
    /// Build from in-memory pixels already in `[-1, 1]`.
    pub fn from_pixels(source: impl Into<PathBuf>, pixels: Array4<f64>) -> Result<Self> {
        let (n, c, h, w) = pixels.dim();
        if n == 0 {
            return Err(Error::arg("dataset must contain at least one image"));
        }
        if pixels.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::arg("dataset pixels must lie in [-1, 1]"));
        }
        Ok(Self {
            source: source.into(),
            shape: ImageShape::new(c, h, w),
            seed: 0,
            images: Arc::new(pixels),
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn source(&self) -> &Path {
        &self.source
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.images.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Restrict to the first `n` images (ids keep their meaning).
    pub fn take(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::arg(format!("cannot take {n} of {} images", self.len())));
        }
        Ok(Self {
            images: Arc::new(self.images.slice(s![..n, .., .., ..]).to_owned()),
            ..self.clone()
        })
    }

    /// Images `start..` as a separate dataset with ids renumbered from 0.
    pub fn skip(&self, start: usize) -> Result<Self> {
        if start >= self.len() {
            return Err(Error::arg(format!("cannot skip {start} of {} images", self.len())));
        }
        Ok(Self {
            images: Arc::new(self.images.slice(s![start.., .., .., ..]).to_owned()),
            ..self.clone()
        })
    }

    pub fn batch(&self, ids: &[usize]) -> Result<ImageBatch> {
        if let Some(bad) = ids.iter().find(|&&i| i >= self.len()) {
            return Err(Error::arg(format!("image id {bad} out of range (dataset has {})", self.len())));
        }
        Ok(ImageBatch {
            pixels: self.images.select(Axis(0), ids),
            ids: ids.to_vec(),
        })
    }

    pub fn all(&self) -> ImageBatch {
        ImageBatch {
            pixels: (*self.images).clone(),
            ids: (0..self.len()).collect(),
        }
    }

    /// Permutation of `0..T` for an epoch.
    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut r = rng::rng(rng::mix(rng::derive(self.seed, "epoch-order"), epoch));
        order.shuffle(&mut r);
        order
    }

    /// Id partition of one epoch into batches of `batch` (last may be smaller).
    pub fn minibatch_ids(&self, batch: usize, epoch: u64) -> Result<Vec<Vec<usize>>> {
        if batch == 0 {
            return Err(Error::arg("batch size must be positive"));
        }
        if batch > self.len() {
            return Err(Error::arg(format!("batch size {batch} exceeds dataset size {}", self.len())));
        }
        Ok(self.epoch_order(epoch).chunks(batch).map(<[usize]>::to_vec).collect())
    }

    pub fn minibatches(&self, batch: usize, epoch: u64) -> Result<impl Iterator<Item = ImageBatch> + '_> {
        let ids = self.minibatch_ids(batch, epoch)?;
        Ok(ids.into_iter().map(move |b| self.batch(&b).expect("ids in range")))
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("{}: corrupt gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Load an IDX image file (optionally gzip-compressed).
pub fn load_idx(path: impl AsRef<Path>) -> Result<DatasetHandle> {
    let path = path.as_ref();
    let bytes = read_maybe_gz(path)?;
    let pixels = parse_idx_images(&bytes)?;
    DatasetHandle::from_pixels(path, pixels)
}

/// Decode IDX image bytes (magic `00 00 08 03`) into `[-1, 1]` pixels.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Array4<f64>> {
    if bytes.len() < 4 {
        return Err(Error::Length {
            what: "IDX header".into(),
            expected: 4,
            found: bytes.len(),
        });
    }
    let magic = be_u32(bytes, 0);
    if magic != IDX_IMAGE_MAGIC {
        let hint = if magic == IDX_LABEL_MAGIC { " (this is an IDX label file)" } else { "" };
        return Err(Error::Format(format!(
            "bad IDX magic bytes {:02x} {:02x} {:02x} {:02x}, expected 00 00 08 03{hint}",
            bytes[0], bytes[1], bytes[2], bytes[3]
        )));
    }
    if bytes.len() < 16 {
        return Err(Error::Length {
            what: "IDX header".into(),
            expected: 16,
            found: bytes.len(),
        });
    }
    let (n, h, w) = (be_u32(bytes, 4) as usize, be_u32(bytes, 8) as usize, be_u32(bytes, 12) as usize);
    let payload = &bytes[16..];
    let expected = n * h * w;
    if payload.len() != expected {
        return Err(Error::Length {
            what: "IDX payload".into(),
            expected,
            found: payload.len(),
        });
    }
    let values = payload.iter().map(|&b| byte_to_unit(b)).collect();
    Ok(Array4::from_shape_vec((n, 1, h, w), values).expect("length checked"))
}

/// Linear map of `[0, 255]` onto `[-1, 1]`.
pub fn byte_to_unit(b: u8) -> f64 {
    b as f64 / 255.0 * 2.0 - 1.0
}

/// Inverse of [`byte_to_unit`] for rendering: `round(255 · (x + 1) / 2)`, clamped.
pub fn unit_to_byte(x: f64) -> u8 {
    (255.0 * (x + 1.0) / 2.0).round().clamp(0.0, 255.0) as u8
}

/// Encode `[-1, 1]` single-channel images as IDX bytes.
pub fn encode_idx_images(batch: &ImageBatch) -> Result<Vec<u8>> {
    let shape = batch.shape();
    if shape.channels != 1 {
        return Err(Error::arg("IDX image files hold single-channel images"));
    }
    let mut out = Vec::with_capacity(16 + batch.pixels.len());
    for v in [IDX_IMAGE_MAGIC, batch.len() as u32, shape.height as u32, shape.width as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(batch.pixels.iter().map(|&x| unit_to_byte(x)));
    Ok(out)
}

/// Load every decodable image in a directory, resized so the short side is
/// `size` and center-cropped to `size × size`. Ids follow lexicographic file order.
pub fn load_image_dir(path: impl AsRef<Path>, size: usize) -> Result<DatasetHandle> {
    let path = path.as_ref();
    if size == 0 {
        return Err(Error::arg("target image size must be positive"));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Format(format!("{}: directory contains no files", path.display())));
    }

    let mut channels = None;
    let mut images = Vec::new();
    for f in &files {
        let img = match image::open(f) {
            Ok(img) => img,
            Err(e) => {
                warn!("skipping undecodable file {}: {e}", f.display());
                continue;
            }
        };
        let c = *channels.get_or_insert_with(|| if img.color().has_color() { 3 } else { 1 });
        images.push(image_to_unit(&fit_square(&img, size as u32), c));
    }
    let Some(c) = channels else {
        return Err(Error::Format(format!("{}: no decodable images among {} files", path.display(), files.len())));
    };
    let n = images.len();
    let flat: Vec<f64> = images.into_iter().flatten().collect();
    let pixels = Array4::from_shape_vec((n, c, size, size), flat).expect("uniform image sizes");
    DatasetHandle::from_pixels(path, pixels)
}

/// Scale the short side to `size` (bilinear) and center-crop to a square.
pub fn fit_square(img: &DynamicImage, size: u32) -> DynamicImage {
    let (w, h) = img.dimensions();
    let scaled = if w.min(h) == size {
        img.clone()
    } else {
        let short = w.min(h) as f64;
        let nw = ((w as f64 * size as f64 / short).round() as u32).max(size);
        let nh = ((h as f64 * size as f64 / short).round() as u32).max(size);
        img.resize_exact(nw, nh, FilterType::Triangle)
    };
    let (sw, sh) = scaled.dimensions();
    scaled.crop_imm((sw - size) / 2, (sh - size) / 2, size, size)
}

/// Planar `[-1, 1]` pixels with `channels` ∈ {1, 3}.
pub fn image_to_unit(img: &DynamicImage, channels: usize) -> Vec<f64> {
    let (w, h) = img.dimensions();
    let plane = (w * h) as usize;
    let mut out = vec![0.0; channels * plane];
    if channels == 1 {
        for (i, p) in img.to_luma8().pixels().enumerate() {
            out[i] = byte_to_unit(p.0[0]);
        }
    } else {
        for (i, p) in img.to_rgb8().pixels().enumerate() {
            for c in 0..3 {
                out[c * plane + i] = byte_to_unit(p.0[c]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut b = magic.to_be_bytes().to_vec();
        for d in dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn idx_pixels_map_linearly() {
        let px = parse_idx_images(&idx_bytes(IDX_IMAGE_MAGIC, &[1, 2, 2], &[0, 255, 128, 0])).unwrap();
        assert_eq!(px.dim(), (1, 1, 2, 2));
        let v: Vec<f64> = px.iter().copied().collect();
        assert_eq!(v[0], -1.0);
        assert_eq!(v[1], 1.0);
        assert!((v[2] - 0.00392).abs() < 1e-4);
        assert_eq!(v[3], -1.0);
    }

    #[test]
    fn label_magic_is_rejected() {
        let err = parse_idx_images(&idx_bytes(IDX_LABEL_MAGIC, &[1], &[3])).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Format(_)));
        assert!(msg.contains("00 00 08 01"), "{msg}");
    }

    #[test]
    fn truncated_payload_is_length_error() {
        let err = parse_idx_images(&idx_bytes(IDX_IMAGE_MAGIC, &[2, 2, 2], &[0; 7])).unwrap_err();
        assert!(matches!(err, Error::Length { expected: 8, found: 7, .. }), "{err}");
    }

    #[test]
    fn idx_encoding_round_trips_bytes() {
        let payload: Vec<u8> = (0..=255u8).chain(0..=255u8).take(2 * 4 * 4).collect();
        let bytes = idx_bytes(IDX_IMAGE_MAGIC, &[2, 4, 4], &payload);
        let px = parse_idx_images(&bytes).unwrap();
        let batch = ImageBatch::generated(px);
        assert_eq!(encode_idx_images(&batch).unwrap(), bytes);
    }

    fn toy(n: usize) -> DatasetHandle {
        let px = Array4::from_shape_fn((n, 1, 2, 2), |(i, _, y, x)| ((i + y + x) % 3) as f64 / 2.0 - 0.5);
        DatasetHandle::from_pixels("toy", px).unwrap().with_seed(3)
    }

    #[test]
    fn minibatch_partition_sizes() {
        let d = toy(10);
        let ids = d.minibatch_ids(4, 0).unwrap();
        assert_eq!(ids.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let all: BTreeSet<usize> = ids.iter().flatten().copied().collect();
        assert_eq!(all, (0..10).collect());
    }

    #[test]
    fn minibatches_are_deterministic_and_vary_by_epoch() {
        let d = toy(100);
        let a: Vec<_> = d.minibatches(7, 3).unwrap().collect();
        let b: Vec<_> = d.minibatches(7, 3).unwrap().collect();
        assert_eq!(a, b);
        assert_ne!(d.epoch_order(0), d.epoch_order(1));
        assert_ne!(d.epoch_order(0), d.clone().with_seed(4).epoch_order(0));
    }

    #[test]
    fn batch_argument_errors() {
        let d = toy(5);
        assert!(matches!(d.minibatch_ids(0, 0), Err(Error::Argument(_))));
        assert!(matches!(d.minibatch_ids(6, 0), Err(Error::Argument(_))));
        assert!(matches!(d.batch(&[5]), Err(Error::Argument(_))));
    }

    #[test]
    fn byte_round_trip() {
        for b in 0..=255u8 {
            assert_eq!(unit_to_byte(byte_to_unit(b)), b);
        }
    }
}
