//! Planar floating-point images, 8-bit raster I/O and the paired dataset
//! layout (`<root>/low/<id>.png`, `<root>/high/<id>.png`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader, RgbImage};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// An `H×W×C` image stored channel-major (`data[c*H*W + y*W + x]`).
///
/// Values are finite. Images read from disk lie in `[0, 1]`; intermediate
/// results (simulated photon counts, decomposition maps) may leave that
/// range.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(
                "image buffer",
                height * width * channels,
                data.len(),
            ));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite pixel value {v}")));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    /// Constant image. Panics on a zero dimension.
    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty image");
        Image {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    /// Build from a function of `(channel, row, column)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut img = Self::zeros(height, width, channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    img.data[(c * height + y) * width + x] = f(c, y, x);
                }
            }
        }
        img
    }

    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Image {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image::from_raw(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// `map` with a stateful closure, visiting values in storage order.
    pub fn map_with(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Image::from_raw(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn clipped(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn ensure_same_shape(&self, other: &Image, context: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(
                context,
                format!("{:?}", self.dims()),
                format!("{:?}", other.dims()),
            ))
        }
    }

    /// ITU-R BT.601 luma for color images; single-channel images are returned as is.
    pub fn luma(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        let data = r
            .iter()
            .zip(g)
            .zip(b)
            .map(|((r, g), b)| 0.299 * r + 0.587 * g + 0.114 * b)
            .collect();
        Image::from_raw(self.height, self.width, 1, data)
    }

    /// Replicate a single channel into three; color images are returned unchanged.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let plane = self.plane(0);
        let mut data = Vec::with_capacity(plane.len() * 3);
        for _ in 0..3 {
            data.extend_from_slice(plane);
        }
        Image::from_raw(self.height, self.width, 3, data)
    }

    /// Copy of the window starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop window {height}x{width}+{top}+{left} outside {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in top..top + height {
                data.extend_from_slice(&plane[y * self.width + left..y * self.width + left + width]);
            }
        }
        Ok(Image::from_raw(height, width, self.channels, data))
    }

    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.height, self.width, self.channels, |c, y, x| {
            self.get(c, y, self.width - 1 - x)
        })
    }
}

/// A low/normal-light pair sharing a filename stem.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub id: String,
    pub low: Image,
    pub high: Image,
}

impl PairedSample {
    pub fn new(id: impl Into<String>, low: Image, high: Image) -> Result<Self> {
        low.ensure_same_shape(&high, "paired sample")?;
        Ok(PairedSample {
            id: id.into(),
            low,
            high,
        })
    }
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

pub fn is_image_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Decode a PNG or JPEG into `[0, 1]`. Grayscale files yield one channel,
/// everything else three (alpha is dropped).
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Jpeg) => {}
        _ => return Err(Error::UnsupportedFormat(path.to_path_buf())),
    }
    let decoded = reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if decoded.width() == 0 || decoded.height() == 0 {
        return Err(Error::EmptyImage);
    }
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if decoded.color().has_color() {
        let rgb = decoded.to_rgb8();
        let mut data = vec![0.0; h * w * 3];
        for (i, px) in rgb.pixels().enumerate() {
            for c in 0..3 {
                data[c * h * w + i] = px.0[c] as f64 / 255.0;
            }
        }
        Ok(Image::from_raw(h, w, 3, data))
    } else {
        let gray = decoded.to_luma8();
        let data = gray.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
        Ok(Image::from_raw(h, w, 1, data))
    }
}

/// 8-bit quantization used on save: clip to `[0, 1]`, then round to nearest.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write an 8-bit raster; the format follows the file extension.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = image::ImageFormat::from_path(path)
        .map_err(|_| Error::UnsupportedFormat(path.to_path_buf()))?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Jpeg) {
        return Err(Error::UnsupportedFormat(path.to_path_buf()));
    }
    let (h, w) = (img.height(), img.width());
    let result = match img.channels() {
        1 => {
            let buf: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
            GrayImage::from_raw(w as u32, h as u32, buf)
                .expect("buffer size matches")
                .save_with_format(path, format)
        }
        3 => {
            let mut buf = vec![0u8; h * w * 3];
            for c in 0..3 {
                for (i, &v) in img.plane(c).iter().enumerate() {
                    buf[i * 3 + c] = quantize(v);
                }
            }
            RgbImage::from_raw(w as u32, h as u32, buf)
                .expect("buffer size matches")
                .save_with_format(path, format)
        }
        c => return Err(Error::ChannelCount { expected: 3, actual: c }),
    };
    result.map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Encode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

/// Crop the same `size×size` window out of both images of a pair.
pub fn random_crop_pair(sample: &PairedSample, size: usize, seed: u64) -> Result<PairedSample> {
    let mut rng = stream_rng(seed, Stream::Crop, 0, 0);
    crop_pair_with(sample, size, &mut rng)
}

pub(crate) fn crop_pair_with<R: Rng>(
    sample: &PairedSample,
    size: usize,
    rng: &mut R,
) -> Result<PairedSample> {
    let (h, w, _) = sample.low.dims();
    if size == 0 || size > h || size > w {
        return Err(Error::CropTooLarge {
            size,
            height: h,
            width: w,
        });
    }
    let top = rng.random_range(0..=h - size);
    let left = rng.random_range(0..=w - size);
    Ok(PairedSample {
        id: sample.id.clone(),
        low: sample.low.crop(top, left, size, size)?,
        high: sample.high.crop(top, left, size, size)?,
    })
}

/// Map of filename stem to path for every PNG/JPEG directly inside `dir`.
pub fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() || !is_image_path(&path) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            if let Some(prev) = out.insert(stem.to_string(), path.clone()) {
                log::warn!("duplicate stem {stem}: {} shadows {}", path.display(), prev.display());
            }
        }
    }
    Ok(out)
}

/// Sorted ids present in both directories. Unmatched stems are logged.
pub fn scan_paired_dataset(low_dir: &Path, high_dir: &Path) -> Result<Vec<String>> {
    let low = list_images(low_dir)?;
    let high = list_images(high_dir)?;
    for id in low.keys().filter(|k| !high.contains_key(*k)) {
        log::warn!("{id} has no normal-light counterpart in {}", high_dir.display());
    }
    for id in high.keys().filter(|k| !low.contains_key(*k)) {
        log::warn!("{id} has no low-light counterpart in {}", low_dir.display());
    }
    let ids: Vec<String> = low.keys().filter(|k| high.contains_key(*k)).cloned().collect();
    if ids.is_empty() {
        return Err(Error::EmptyIntersection {
            low: low_dir.to_path_buf(),
            high: high_dir.to_path_buf(),
        });
    }
    Ok(ids)
}

/// Load every pair under `<root>/low` and `<root>/high`, in id order.
pub fn load_paired_dataset(root: &Path) -> Result<Vec<PairedSample>> {
    let (low_dir, high_dir) = (root.join("low"), root.join("high"));
    for dir in [&low_dir, &high_dir] {
        if !dir.is_dir() {
            return Err(Error::io(
                dir.as_path(),
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory missing"),
            ));
        }
    }
    let ids = scan_paired_dataset(&low_dir, &high_dir)?;
    let low = list_images(&low_dir)?;
    let high = list_images(&high_dir)?;
    ids.into_iter()
        .map(|id| {
            let l = load_image(&low[&id])?.to_rgb();
            let h = load_image(&high[&id])?.to_rgb();
            PairedSample::new(id, l, h)
        })
        .collect()
}
