//! Floating-point RGB rasters and 8-bit PNG I/O.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage as Rgb8};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Colour channel of an [`RgbImage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Red,
    Green,
    Blue,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Red, Channel::Green, Channel::Blue];

    pub fn index(self) -> usize {
        match self {
            Channel::Red => 0,
            Channel::Green => 1,
            Channel::Blue => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Red => "red",
            Channel::Green => "green",
            Channel::Blue => "blue",
        }
    }
}

/// RGB image with values in `[0, 1]`, stored planar (`[3, height, width]`) so
/// it can be handed to the networks without reordering.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    pub fn from_planar(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::shape(format!(
                "{} values cannot form a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut img = RgbImage::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set_pixel(x, y, f(x, y));
            }
        }
        img
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        RgbImage::from_fn(width, height, |_, _| rgb)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, channel: Channel) -> &[f64] {
        let n = self.width * self.height;
        &self.data[channel.index() * n..(channel.index() + 1) * n]
    }

    pub fn plane_mut(&mut self, channel: Channel) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.data[channel.index() * n..(channel.index() + 1) * n]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, channel: Channel) -> f64 {
        self.data[(channel.index() * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, channel: Channel, value: f64) {
        self.data[(channel.index() * self.height + y) * self.width + x] = value;
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        Channel::ALL.map(|c| self.get(x, y, c))
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        for c in Channel::ALL {
            self.set(x, y, c, rgb[c.index()]);
        }
    }

    /// Exact copy of the `width x height` window at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<RgbImage> {
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(Error::RoiBounds(format!(
                "window ({x0},{y0},{width},{height}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut out = RgbImage::new(width, height);
        for c in Channel::ALL {
            let src = self.plane(c);
            let dst = out.plane_mut(c);
            for y in 0..height {
                dst[y * width..(y + 1) * width].copy_from_slice(&src[(y0 + y) * self.width + x0..][..width]);
            }
        }
        Ok(out)
    }

    /// Bilinear resampling with pixel-centre alignment. Resizing to the same
    /// extents returns an exact copy.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> RgbImage {
        let mut out = RgbImage::new(width, height);
        for c in Channel::ALL {
            let plane = resize_plane(self.plane(c), self.width, self.height, width, height);
            out.plane_mut(c).copy_from_slice(&plane);
        }
        out
    }

    /// Rounds every value to the nearest 8-bit level, so that a PNG round
    /// trip is lossless.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = to_u8(*v) as f64 / 255.0;
        }
    }

    /// Network input layout `[3, height, width]`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[3, self.height, self.width], self.data.clone()).expect("non-empty image")
    }

    pub fn from_tensor(t: &Tensor) -> Result<RgbImage> {
        match *t.shape() {
            [3, h, w] => RgbImage::from_planar(w, h, t.data().to_vec()),
            _ => Err(Error::shape(format!("expected [3,H,W], got {:?}", t.shape()))),
        }
    }

    pub fn channel_mean(&self, channel: Channel) -> f64 {
        let p = self.plane(channel);
        p.iter().sum::<f64>() / p.len() as f64
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<RgbImage> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = RgbImage::new(w, h);
        for (x, y, px) in img.enumerate_pixels() {
            out.set_pixel(x as usize, y as usize, px.0.map(|v| v as f64 / 255.0));
        }
        Ok(out)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut img = Rgb8::new(self.width as u32, self.height as u32);
        for (x, y, px) in img.enumerate_pixels_mut() {
            *px = Rgb(self.pixel(x as usize, y as usize).map(to_u8));
        }
        img.save(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }
}

pub(crate) fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Bilinear resize of a single-channel raster.
pub fn resize_plane(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    if sw == dw && sh == dh {
        return src.to_vec();
    }
    let axis = |d: usize, s: usize, n: usize| -> (usize, usize, f64) {
        let pos = ((d as f64 + 0.5) * s as f64 / n as f64 - 0.5).clamp(0.0, (s - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(s - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = vec![0.0; dw * dh];
    for y in 0..dh {
        let (y0, y1, fy) = axis(y, sh, dh);
        for x in 0..dw {
            let (x0, x1, fx) = axis(x, sw, dw);
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bottom = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out[y * dw + x] = top * (1.0 - fy) + bottom * fy;
        }
    }
    out
}

/// Writes a single-channel raster in `[0, 1]` as an 8-bit grayscale PNG.
pub fn save_gray_png(path: impl AsRef<Path>, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let img = GrayImage::from_fn(width as u32, height as u32, |x, y| {
        Luma([to_u8(values[y as usize * width + x as usize])])
    });
    img.save(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Writes a boolean raster as a 1-bit grayscale PNG (set pixels are white).
pub fn save_bitmap_png(path: impl AsRef<Path>, width: usize, height: usize, bits: &[bool]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(std::io::BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::One);
    let stride = width.div_ceil(8);
    let mut packed = vec![0u8; stride * height];
    for y in 0..height {
        for x in 0..width {
            if bits[y * width + x] {
                packed[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    let png_err = |e: png::EncodingError| Error::Image(format!("{}: {e}", path.display()));
    let mut writer = encoder.write_header().map_err(png_err)?;
    writer.write_image_data(&packed).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// Reads any grayscale-convertible PNG as a boolean raster (nonzero = set).
pub fn load_bitmap_png(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<bool>)> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .to_luma8();
    let bits = img.pixels().map(|p| p.0[0] > 127).collect();
    Ok((img.width() as usize, img.height() as usize, bits))
}
