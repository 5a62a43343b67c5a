//! Images, binary PPM I/O, Laplacian pyramids and rain synthesis.

mod ppm;
pub mod procedural;
mod pyramid;
mod rain;

pub use ppm::{load_image, save_image};
pub use pyramid::{pyramid_build, pyramid_collapse, LaplacianPyramid};
pub use rain::{synthesize_rain, RainConfig};

use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("missing file: {0}")]
    Missing(PathBuf),

    #[error("malformed header in {path}: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },

    #[error("unsupported bit depth in {path}: maxval {maxval}")]
    UnsupportedDepth { path: PathBuf, maxval: u32 },

    #[error("truncated pixel data in {0}")]
    Truncated(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid dimensions: {0}")]
    Dimensions(String),
}

pub type Result<T> = std::result::Result<T, ImageError>;

/// Planar `(C, H, W)` image with `f32` samples.
///
/// Loaded and saved pixels live in `[0, 1]`; intermediate images such as
/// Laplacian bands may hold signed values.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(ImageError::Dimensions(format!(
                "{width}x{height} with {channels} channels"
            )));
        }
        if data.len() != width * height * channels {
            return Err(ImageError::Dimensions(format!(
                "{} samples for {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Image::new(width, height, channels, vec![value; width * height * channels]).expect("valid dimensions")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        (self.width, self.height, self.channels) == (other.width, other.height, other.channels)
    }

    pub fn clamped(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f32, f32) -> f32) -> Result<Image> {
        if !self.same_dims(other) {
            return Err(ImageError::Dimensions(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )));
        }
        Ok(Image {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            ..*self
        })
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Image> {
        if top + h > self.height || left + w > self.width || h == 0 || w == 0 {
            return Err(ImageError::Dimensions(format!(
                "crop {h}x{w} at ({top},{left}) outside {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w * self.channels);
        for c in 0..self.channels {
            for y in top..top + h {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + left..row + left + w]);
            }
        }
        Image::new(w, h, self.channels, data)
    }

    /// Largest centred crop whose sides are multiples of `m`.
    pub fn center_crop_multiple(&self, m: usize) -> Result<Image> {
        let (h, w) = (self.height / m * m, self.width / m * m);
        if h == 0 || w == 0 {
            return Err(ImageError::Dimensions(format!(
                "{}x{} is smaller than {m}",
                self.height, self.width
            )));
        }
        self.crop((self.height - h) / 2, (self.width - w) / 2, h, w)
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                let row = (c * self.height + y) * self.width;
                out.data[row..row + self.width].reverse();
            }
        }
        out
    }

    /// Replicates a single channel into three.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.data.len() * 3);
        for _ in 0..3 {
            data.extend_from_slice(&self.data);
        }
        Image::new(self.width, self.height, 3, data).expect("valid dimensions")
    }

    /// `(1, C, H, W)` tensor view of the image.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec(
            [1, self.channels, self.height, self.width],
            self.data.iter().map(|&v| T::of_f64(v as f64)).collect(),
        )
        .expect("image dims match")
    }

    /// Image from batch item `n` of a tensor.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, n: usize) -> Result<Image> {
        let s: Shape = t.shape();
        if n >= s.n() {
            return Err(ImageError::Dimensions(format!("batch item {n} of {s}")));
        }
        let data = t.data()[n * s.item()..(n + 1) * s.item()]
            .iter()
            .map(|v| v.as_f64() as f32)
            .collect();
        Image::new(s.w(), s.h(), s.c(), data)
    }

    /// Population variance over all samples.
    pub fn variance(&self) -> f64 {
        let n = self.data.len() as f64;
        let mean = self.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        self.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n
    }
}
