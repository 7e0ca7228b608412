//! Planar float images and lossless file I/O.

use std::path::Path;

use ndgrad::{Real, Tensor};

use crate::error::{invalid, Error, Result};

/// A planar (channel-major) image with values nominally in `[0, 1]`.
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
            return Err(invalid(format!(
                "bad image geometry {width}x{height} with {channels} channels"
            )));
        }
        if data.len() != width * height * channels {
            return Err(invalid(format!(
                "image data has {} values, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::new(width, height, channels, vec![0.0; width * height * channels])
            .expect("valid geometry")
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut img = Self::zeros(width, height, channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    img.data[(c * height + y) * width + x] = f(c, x, y);
                }
            }
        }
        img
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

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Replicates a single channel three times; RGB images pass through.
    pub fn into_rgb(self) -> Self {
        if self.channels == 3 {
            return self;
        }
        let mut data = Vec::with_capacity(self.data.len() * 3);
        for _ in 0..3 {
            data.extend_from_slice(&self.data);
        }
        Self {
            channels: 3,
            data,
            ..self
        }
    }

    /// Luma (ITU-R 601 weights) as a one-channel image.
    pub fn to_gray(&self) -> Self {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.width * self.height;
        let data = (0..n)
            .map(|i| 0.299 * self.data[i] + 0.587 * self.data[n + i] + 0.114 * self.data[2 * n + i])
            .collect();
        Self {
            channels: 1,
            data,
            ..*self
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        let w = self.width;
        Self::from_fn(w, self.height, self.channels, |c, x, y| self.get(c, w - 1 - x, y))
    }

    /// Bilinear sample at pixel coordinates; taps outside the image are zero.
    pub fn sample(&self, c: usize, px: f64, py: f64) -> f32 {
        if !px.is_finite() || !py.is_finite() {
            return 0.0;
        }
        let (w, h) = (self.width as isize, self.height as isize);
        let (fx, fy) = (px.floor(), py.floor());
        if fx < -2.0 || fy < -2.0 || fx > w as f64 + 1.0 || fy > h as f64 + 1.0 {
            return 0.0;
        }
        let (x0, y0) = (fx as isize, fy as isize);
        let (ax, ay) = (px - fx, py - fy);
        let plane = self.plane(c);
        let tap = |x: isize, y: isize| -> f64 {
            if x < 0 || y < 0 || x >= w || y >= h {
                0.0
            } else {
                plane[y as usize * self.width + x as usize] as f64
            }
        };
        let top = tap(x0, y0) * (1.0 - ax) + tap(x0 + 1, y0) * ax;
        let bot = tap(x0, y0 + 1) * (1.0 - ax) + tap(x0 + 1, y0 + 1) * ax;
        (top * (1.0 - ay) + bot * ay) as f32
    }

    /// Bilinear sample at normalized `[-1, 1]` coordinates (align corners).
    pub fn sample_normalized(&self, c: usize, x: f64, y: f64) -> f32 {
        let px = (x + 1.0) * 0.5 * (self.width - 1) as f64;
        let py = (y + 1.0) * 0.5 * (self.height - 1) as f64;
        self.sample(c, px, py)
    }

    /// Builds an `out_w x out_h` image whose pixel at normalized output
    /// coordinate `q` is this image sampled at `source(q)`.
    pub fn warp(
        &self,
        out_w: usize,
        out_h: usize,
        source: impl Fn(f64, f64) -> (f64, f64),
    ) -> Self {
        let mut out = Self::zeros(out_w, out_h, self.channels);
        let sx = 2.0 / (out_w.max(2) - 1) as f64;
        let sy = 2.0 / (out_h.max(2) - 1) as f64;
        for y in 0..out_h {
            for x in 0..out_w {
                let (u, v) = source(x as f64 * sx - 1.0, y as f64 * sy - 1.0);
                for c in 0..self.channels {
                    out.set(c, x, y, self.sample_normalized(c, u, v));
                }
            }
        }
        out
    }

    /// Resizes with a box prefilter when shrinking so thin lines survive.
    pub fn resize(&self, out_w: usize, out_h: usize) -> Self {
        if out_w == self.width && out_h == self.height {
            return self.clone();
        }
        let rx = self.width as f64 / out_w as f64;
        let ry = self.height as f64 / out_h as f64;
        let nx = rx.ceil().max(1.0) as usize;
        let ny = ry.ceil().max(1.0) as usize;
        let mut out = Self::zeros(out_w, out_h, self.channels);
        let inv = 1.0 / (nx * ny) as f64;
        for y in 0..out_h {
            for x in 0..out_w {
                for c in 0..self.channels {
                    let mut acc = 0.0;
                    for j in 0..ny {
                        // Sub-sample positions tile the footprint of the
                        // output pixel in source pixel-edge coordinates.
                        let sy = (y as f64 + (j as f64 + 0.5) / ny as f64) * ry - 0.5;
                        for i in 0..nx {
                            let sx = (x as f64 + (i as f64 + 0.5) / nx as f64) * rx - 0.5;
                            acc += self.sample(
                                c,
                                sx.clamp(0.0, (self.width - 1) as f64),
                                sy.clamp(0.0, (self.height - 1) as f64),
                            ) as f64;
                        }
                    }
                    out.set(c, x, y, (acc * inv) as f32);
                }
            }
        }
        out
    }

    /// Exact quarter-turn rotation: pixel `(x, y)` moves to `(y, W-1-x)`.
    pub fn rotate90(&self) -> Self {
        let (w, h) = (self.width, self.height);
        Self::from_fn(h, w, self.channels, |c, x, y| self.get(c, w - 1 - y, x))
    }

    pub fn clamp01(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    /// Rounds every value to the nearest 8-bit level, matching a save/load
    /// round trip.
    pub fn quantize(&mut self) {
        self.data.iter_mut().for_each(|v| *v = to_u8(*v) as f32 / 255.0);
    }

    pub fn mean_per_channel(&self) -> Vec<f64> {
        let n = (self.width * self.height) as f64;
        (0..self.channels)
            .map(|c| self.plane(c).iter().map(|&v| v as f64).sum::<f64>() / n)
            .collect()
    }

    /// A `1 x 3 x H x W` tensor with `mean` subtracted per channel.
    pub fn to_tensor<T: Real>(&self, mean: [f32; 3]) -> Tensor<T> {
        let rgb = if self.channels == 3 {
            std::borrow::Cow::Borrowed(self)
        } else {
            std::borrow::Cow::Owned(self.clone().into_rgb())
        };
        let n = self.width * self.height;
        let data = rgb
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| T::lit((v - mean[i / n]) as f64))
            .collect();
        Tensor::new(&[1, 3, self.height, self.width], data).expect("consistent shape")
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>, mean: [f32; 3]) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != 3 {
            return Err(invalid(format!("expected a 1x3xHxW tensor, got {s:?}")));
        }
        let n = s[2] * s[3];
        let data = t
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v.as_f64() as f32 + mean[i / n])
            .collect();
        Self::new(s[3], s[2], 3, data)
    }

    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let img = image::load_from_memory(bytes).map_err(|source| Error::Image {
            path: origin.to_path_buf(),
            source,
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        if w == 0 || h == 0 {
            return Err(Error::Data {
                path: origin.to_path_buf(),
                msg: "empty image".into(),
            });
        }
        let gray = !img.color().has_color();
        if gray {
            let g = img.into_luma8();
            let data = g.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
            Self::new(w, h, 1, data)
        } else {
            let rgb = img.into_rgb8();
            let raw = rgb.as_raw();
            let n = w * h;
            let mut data = vec![0.0; 3 * n];
            for i in 0..n {
                for c in 0..3 {
                    data[c * n + i] = raw[3 * i + c] as f32 / 255.0;
                }
            }
            Self::new(w, h, 3, data)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        Self::decode(&bytes, path)
    }

    /// Writes 8-bit PNG, or binary PGM for `.pgm` paths (one channel only).
    pub fn save(&self, path: &Path) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        let is_pgm = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
        let wrap = |source| Error::Image {
            path: path.to_path_buf(),
            source,
        };
        if is_pgm {
            let gray = self.to_gray();
            let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
            bytes.extend(gray.data.iter().map(|&v| to_u8(v)));
            std::fs::write(path, bytes)?;
            return Ok(());
        }
        let n = self.width * self.height;
        if self.channels == 1 {
            let raw: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
            image::GrayImage::from_raw(w, h, raw)
                .expect("buffer size")
                .save_with_format(path, image::ImageFormat::Png)
                .map_err(wrap)
        } else {
            let mut raw = vec![0u8; 3 * n];
            for i in 0..n {
                for c in 0..3 {
                    raw[3 * i + c] = to_u8(self.data[c * n + i]);
                }
            }
            image::RgbImage::from_raw(w, h, raw)
                .expect("buffer size")
                .save_with_format(path, image::ImageFormat::Png)
                .map_err(wrap)
        }
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Normalized cross-correlation of two equally sized single-plane signals.
pub fn ncc(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, 3, |c, x, y| ((x + 3 * y + 7 * c) % 17) as f32 / 16.0)
    }

    #[test]
    fn flip_is_involution_and_mirrors() {
        let img = ramp(7, 5);
        let f = img.flip_horizontal();
        assert_eq!(f.flip_horizontal(), img);
        for y in 0..5 {
            for x in 0..7 {
                assert_eq!(f.get(1, x, y), img.get(1, 6 - x, y));
            }
        }
    }

    #[test]
    fn rotate90_mapping() {
        let img = ramp(6, 4);
        let r = img.rotate90();
        assert_eq!((r.width(), r.height()), (4, 6));
        for y in 0..4 {
            for x in 0..6 {
                assert_eq!(r.get(0, y, 6 - 1 - x), img.get(0, x, y));
            }
        }
    }

    #[test]
    fn sample_at_centres_and_outside() {
        let img = Image::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(img.sample_normalized(0, 0.0, 0.0), 2.5);
        assert_eq!(img.sample(0, 1.0, 0.0), 2.0);
        assert_eq!(img.sample(0, -5.0, 0.0), 0.0);
        assert_eq!(img.sample(0, f64::NAN, 0.0), 0.0);
    }

    #[test]
    fn identity_warp_and_resize() {
        let img = ramp(9, 9);
        assert_eq!(img.warp(9, 9, |x, y| (x, y)), img);
        assert_eq!(img.resize(9, 9), img);
        let small = img.resize(3, 3);
        assert_eq!((small.width(), small.height()), (3, 3));
        let c = Image::from_fn(12, 12, 1, |_, _, _| 0.4).resize(5, 5);
        assert!(c.data().iter().all(|&v| (v - 0.4).abs() < 1e-6));
    }

    #[test]
    fn png_and_pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = ramp(5, 4);
        img.quantize();
        let p = dir.path().join("a.png");
        img.save(&p).unwrap();
        assert_eq!(Image::load(&p).unwrap(), img);

        let g = dir.path().join("g.pgm");
        let mut gray = img.to_gray();
        gray.quantize();
        gray.save(&g).unwrap();
        let back = Image::load(&g).unwrap();
        assert_eq!(back.channels(), 1);
        assert_eq!(back, gray);
        let rgb = back.into_rgb();
        assert_eq!(rgb.plane(0), rgb.plane(2));
    }

    #[test]
    fn corrupt_bytes_error() {
        assert!(Image::decode(b"not an image", Path::new("x.png")).is_err());
        assert!(Image::load(Path::new("/nonexistent/a.png")).is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let img = ramp(4, 3);
        let mean = [0.1, 0.2, 0.3];
        let t = img.to_tensor::<f64>(mean);
        assert_eq!(t.shape(), &[1, 3, 3, 4]);
        let back = Image::from_tensor(&t, mean).unwrap();
        assert!(back.data().iter().zip(img.data()).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn ncc_basics() {
        let a = [0.0, 1.0, 2.0, 3.0];
        let b = [1.0, 3.0, 5.0, 7.0];
        assert!((ncc(&a, &b) - 1.0).abs() < 1e-12);
        let c = [3.0, 2.0, 1.0, 0.0];
        assert!((ncc(&a, &c) + 1.0).abs() < 1e-12);
    }
}
