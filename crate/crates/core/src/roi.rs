//! Left-ventricle region of interest: manual boxes and a brightness-based
//! heuristic detector.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;

/// Smallest accepted ROI side, matching the network input size.
pub const MIN_ROI_EXTENT: usize = 96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoiSource {
    Manual,
    Heuristic,
}

/// Axis-aligned box `[x0, x0 + width) x [y0, y0 + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    pub provenance: RoiSource,
}

impl Roi {
    pub fn new(x0: usize, y0: usize, width: usize, height: usize) -> Self {
        Roi {
            x0,
            y0,
            width,
            height,
            provenance: RoiSource::Manual,
        }
    }

    /// The whole image.
    pub fn full(image: &RgbImage) -> Self {
        Roi::new(0, 0, image.width(), image.height())
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn x1(&self) -> usize {
        self.x0 + self.width
    }

    pub fn y1(&self) -> usize {
        self.y0 + self.height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1()).contains(&x) && (self.y0..self.y1()).contains(&y)
    }

    /// Fails with [`Error::RoiBounds`] unless the box is non-empty and lies
    /// inside a `width x height` image.
    pub fn check_within(&self, width: usize, height: usize) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::EmptyRoi);
        }
        if self.x1() > width || self.y1() > height {
            return Err(Error::RoiBounds(format!(
                "{self} exceeds {width}x{height} image"
            )));
        }
        Ok(())
    }

    /// Same extents, with the origin moved to `(0, 0)`.
    pub fn local(&self) -> Roi {
        Roi { x0: 0, y0: 0, ..*self }
    }
}

impl fmt::Display for Roi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x0, self.y0, self.width, self.height)
    }
}

impl FromStr for Roi {
    type Err = Error;

    /// Parses `x0,y0,w,h`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("ROI '{s}' is not x0,y0,w,h")))?;
        match parts.as_slice() {
            &[x0, y0, w, h] => Ok(Roi::new(x0, y0, w, h)),
            _ => Err(Error::Config(format!("ROI '{s}' is not x0,y0,w,h"))),
        }
    }
}

fn check_min_extent(roi: &Roi) -> Result<()> {
    if roi.width < MIN_ROI_EXTENT || roi.height < MIN_ROI_EXTENT {
        return Err(Error::RoiBounds(format!(
            "{roi} is smaller than the minimum {MIN_ROI_EXTENT}x{MIN_ROI_EXTENT}"
        )));
    }
    Ok(())
}

/// Validates a user-supplied box against the image.
pub fn roi_from_config(image: &RgbImage, bbox: Roi) -> Result<Roi> {
    let roi = Roi {
        provenance: RoiSource::Manual,
        ..bbox
    };
    roi.check_within(image.width(), image.height())?;
    check_min_extent(&roi)?;
    Ok(roi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectParams {
    /// Half-width of the box filter applied before thresholding; 0 disables it.
    pub blur_radius: usize,
    pub intensity_quantile: f64,
    /// Fraction of the component's width/height added on each side.
    pub expand: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams {
            blur_radius: 0,
            intensity_quantile: 0.80,
            expand: 0.05,
        }
    }
}

/// Bounding box of the largest bright region.
///
/// The channel sum is (optionally) box-blurred and thresholded strictly above
/// its `intensity_quantile`; the largest 4-connected component wins, ties going
/// to the smaller `(x0, y0)`. Its bounding box is grown by `expand` per side
/// and clipped to the image.
pub fn detect_roi_heuristic(image: &RgbImage, params: &DetectParams) -> Result<Roi> {
    let (w, h) = (image.width(), image.height());
    if w == 0 || h == 0 {
        return Err(Error::NoRoiFound);
    }
    if !(0.0..=1.0).contains(&params.intensity_quantile) {
        return Err(Error::Config(format!(
            "intensity quantile {} outside [0, 1]",
            params.intensity_quantile
        )));
    }
    let mut sum: Vec<f64> = (0..w * h)
        .map(|i| (0..3).map(|c| image.data()[c * w * h + i]).sum())
        .collect();
    if params.blur_radius > 0 {
        sum = box_blur(&sum, w, h, params.blur_radius);
    }
    let mut sorted = sum.clone();
    sorted.sort_by(f64::total_cmp);
    let threshold = sorted[(params.intensity_quantile * (sorted.len() - 1) as f64).floor() as usize];
    let above: Vec<bool> = sum.iter().map(|&v| v > threshold).collect();

    let best = components(&above, w, h)
        .into_iter()
        .max_by(|a, b| a.size.cmp(&b.size).then((b.x0, b.y0).cmp(&(a.x0, a.y0))))
        .ok_or(Error::NoRoiFound)?;

    let (cw, ch) = (best.x1 - best.x0 + 1, best.y1 - best.y0 + 1);
    let pad_x = (params.expand * cw as f64).round() as usize;
    let pad_y = (params.expand * ch as f64).round() as usize;
    let x0 = best.x0.saturating_sub(pad_x);
    let y0 = best.y0.saturating_sub(pad_y);
    let x1 = (best.x1 + 1 + pad_x).min(w);
    let y1 = (best.y1 + 1 + pad_y).min(h);
    let roi = Roi {
        x0,
        y0,
        width: x1 - x0,
        height: y1 - y0,
        provenance: RoiSource::Heuristic,
    };
    check_min_extent(&roi)?;
    Ok(roi)
}

/// Exact copy of the ROI's pixels.
pub fn crop_roi(image: &RgbImage, roi: &Roi) -> Result<RgbImage> {
    roi.check_within(image.width(), image.height())?;
    image.crop(roi.x0, roi.y0, roi.width, roi.height)
}

#[derive(Debug, Clone, Copy)]
struct Component {
    size: usize,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

fn components(mask: &[bool], w: usize, h: usize) -> Vec<Component> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut c = Component {
            size: 0,
            x0: usize::MAX,
            y0: usize::MAX,
            x1: 0,
            y1: 0,
        };
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            c.size += 1;
            c.x0 = c.x0.min(x);
            c.y0 = c.y0.min(y);
            c.x1 = c.x1.max(x);
            c.y1 = c.y1.max(y);
            let neighbours = [
                (x > 0).then(|| i - 1),
                (x + 1 < w).then(|| i + 1),
                (y > 0).then(|| i - w),
                (y + 1 < h).then(|| i + w),
            ];
            for j in neighbours.into_iter().flatten() {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        out.push(c);
    }
    out
}

/// Mean over the `(2r+1)^2` window clipped to the image.
/// Separable mean filter with the window clipped at the borders. Sums are
/// taken directly rather than from an integral image so flat regions stay
/// exactly flat.
fn box_blur(src: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let win = &line[x.saturating_sub(r)..(x + r + 1).min(w)];
            rows[y * w + x] = win.iter().sum::<f64>() / win.len() as f64;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let (ya, yb) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            out[y * w + x] = (ya..yb).map(|yy| rows[yy * w + x]).sum::<f64>() / (yb - ya) as f64;
        }
    }
    out
}
