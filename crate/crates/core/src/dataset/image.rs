use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// An 8-bit image, 1 (grayscale) or 3 (RGB) channels, stored planar:
/// `data[(c * height + y) * width + x]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::Format(format!(
                "image must be non-empty with 1 or 3 channels, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Format(format!(
                "{width}x{height}x{channels} image needs {} bytes, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(RawImage {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> u8 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn put(&mut self, c: usize, y: usize, x: usize, v: u8) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Decodes a PNG (or other enabled format). Only 8-bit luma or RGB(A)
    /// inputs are accepted; alpha is dropped.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        Self::from_dynamic(img)
    }

    pub fn from_dynamic(img: DynamicImage) -> Result<Self> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img {
            DynamicImage::ImageLuma8(buf) => Self::new(w, h, 1, buf.into_raw()),
            DynamicImage::ImageRgb8(buf) => Ok(Self::from_interleaved(w, h, &buf.into_raw(), 3)),
            DynamicImage::ImageRgba8(buf) => Ok(Self::from_interleaved(w, h, &buf.into_raw(), 4)),
            DynamicImage::ImageLumaA8(buf) => {
                let luma: Vec<u8> = buf.into_raw().chunks(2).map(|p| p[0]).collect();
                Self::new(w, h, 1, luma)
            }
            other => Err(Error::Format(format!(
                "expected an 8-bit image, got {:?}",
                other.color()
            ))),
        }
    }

    fn from_interleaved(w: usize, h: usize, raw: &[u8], stride: usize) -> Self {
        let mut data = vec![0u8; w * h * 3];
        for (i, px) in raw.chunks(stride).enumerate() {
            for c in 0..3 {
                data[c * w * h + i] = px[c];
            }
        }
        RawImage {
            width: w,
            height: h,
            channels: 3,
            data,
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        let res = if self.channels == 1 {
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, self.data.clone())
                .expect("buffer sized by constructor")
                .save(path)
        } else {
            let plane = self.width * self.height;
            let mut inter = Vec::with_capacity(plane * 3);
            for i in 0..plane {
                for c in 0..3 {
                    inter.push(self.data[c * plane + i]);
                }
            }
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, inter)
                .expect("buffer sized by constructor")
                .save(path)
        };
        res.map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    /// Per-channel mean of the 3-channel view (grayscale replicated).
    pub fn channel_means(&self) -> [f64; 3] {
        let plane = self.width * self.height;
        let mean = |c: usize| {
            let src = if self.channels == 1 { 0 } else { c };
            let sum: u64 = self.data[src * plane..(src + 1) * plane]
                .iter()
                .map(|&v| v as u64)
                .sum();
            sum as f64 / plane as f64
        };
        [mean(0), mean(1), mean(2)]
    }
}

/// Anything bilinear sampling can read from: a `channels x height x width`
/// grid of values.
pub trait PixelSource: Sync {
    fn channels(&self) -> usize;
    fn height(&self) -> usize;
    fn width(&self) -> usize;
    fn value(&self, c: usize, y: usize, x: usize) -> f64;
}

impl PixelSource for RawImage {
    fn channels(&self) -> usize {
        self.channels
    }
    fn height(&self) -> usize {
        self.height
    }
    fn width(&self) -> usize {
        self.width
    }
    #[inline]
    fn value(&self, c: usize, y: usize, x: usize) -> f64 {
        self.at(c, y, x) as f64
    }
}

/// Reads sample 0 of the tensor.
impl<T: Scalar> PixelSource for Tensor4<T> {
    fn channels(&self) -> usize {
        self.shape().c
    }
    fn height(&self) -> usize {
        self.shape().h
    }
    fn width(&self) -> usize {
        self.shape().w
    }
    #[inline]
    fn value(&self, c: usize, y: usize, x: usize) -> f64 {
        self.at(0, c, y, x).as_f64()
    }
}

/// Mean intensity per channel.
pub type ChannelMeans = [f64; 3];

/// Replicates grayscale to three channels and subtracts a per-channel mean,
/// keeping the 0..255 scale. Returns a `(1, 3, h, w)` tensor.
pub fn preprocess<T: Scalar>(image: &RawImage, means: &ChannelMeans) -> Result<Tensor4<T>> {
    let plane = image.width * image.height;
    let mut out = Tensor4::zeros(Shape4::new(1, 3, image.height, image.width))?;
    for c in 0..3 {
        let src = if image.channels == 1 { 0 } else { c };
        let mean = means[c];
        let dst = &mut out.data_mut()[c * plane..(c + 1) * plane];
        for (d, &v) in dst.iter_mut().zip(&image.data[src * plane..(src + 1) * plane]) {
            *d = T::lit(v as f64 - mean);
        }
    }
    Ok(out)
}

/// Average of per-image channel means (all images weigh equally).
pub fn dataset_channel_means<'a>(images: impl IntoIterator<Item = &'a RawImage>) -> Result<ChannelMeans> {
    let mut acc = [0.0; 3];
    let mut count = 0usize;
    for img in images {
        let m = img.channel_means();
        for c in 0..3 {
            acc[c] += m[c];
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Empty("channel means of zero images".into()));
    }
    Ok(acc.map(|s| s / count as f64))
}
