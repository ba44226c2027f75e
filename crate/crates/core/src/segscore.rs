//! Channel thresholds from generated patches, segmentation masks, the
//! infarction score and mask overlap metrics.

use serde::{Deserialize, Serialize};

use crate::anomaly::{self, AnomalyConfig, HeatMap, SearchResult, ZMode};
use crate::error::{Error, Result};
use crate::image::{Channel, RgbImage};
use crate::model::GanModel;
use crate::roi::{crop_roi, Roi};

/// Pixels of one channel strictly above a threshold inside an ROI.
#[derive(Debug, Clone, PartialEq)]
pub struct SegMask {
    pub channel: Channel,
    pub roi: Roi,
    /// Row-major over the ROI, `roi.width * roi.height` entries.
    pub bits: Vec<bool>,
    pub threshold: f64,
}

impl SegMask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Whether image pixel `(x, y)` is in the mask.
    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.roi.contains(x, y) && self.bits[(y - self.roi.y0) * self.roi.width + (x - self.roi.x0)]
    }

    /// Image coordinates of the included pixels, in row-major order.
    pub fn coordinates(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let roi = self.roi;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (roi.x0 + i % roi.width, roi.y0 + i / roi.width))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y\n");
        for (x, y) in self.coordinates() {
            s.push_str(&format!("{x},{y}\n"));
        }
        s
    }

    /// Truth mask over a full image restricted to `roi`.
    pub fn from_full_image(bits: &[bool], image_width: usize, roi: Roi, channel: Channel) -> Self {
        let bits = (0..roi.height)
            .flat_map(|y| {
                let start = (roi.y0 + y) * image_width + roi.x0;
                bits[start..start + roi.width].iter().copied()
            })
            .collect();
        SegMask {
            channel,
            roi,
            bits,
            threshold: f64::NAN,
        }
    }
}

/// Mean of `channel` over the ROI pixels.
pub fn mean_channel_intensity(image: &RgbImage, roi: &Roi, channel: Channel) -> Result<f64> {
    if roi.area() == 0 {
        return Err(Error::EmptyRoi);
    }
    roi.check_within(image.width(), image.height())?;
    let mut sum = 0.0;
    for y in roi.y0..roi.y1() {
        for x in roi.x0..roi.x1() {
            sum += image.get(x, y, channel);
        }
    }
    Ok(sum / roi.area() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub green: f64,
    pub red: f64,
}

/// Average over `patches` of each patch's mean green and red intensity.
pub fn thresholds_from_patches<'a>(patches: impl IntoIterator<Item = &'a RgbImage>) -> Result<Thresholds> {
    let (mut g, mut r, mut n) = (0.0, 0.0, 0usize);
    for p in patches {
        let full = Roi::full(p);
        g += mean_channel_intensity(p, &full, Channel::Green)?;
        r += mean_channel_intensity(p, &full, Channel::Red)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::shape("no generated patches to estimate thresholds from"));
    }
    Ok(Thresholds {
        green: g / n as f64,
        red: r / n as f64,
    })
}

pub fn thresholds_from_results(results: &[SearchResult]) -> Result<Thresholds> {
    thresholds_from_patches(results.iter().map(|r| &r.reconstruction))
}

/// Thresholds from `cfg.n_z` generated patches matched to the query ROI.
pub fn estimate_thresholds(model: &GanModel, cfg: &AnomalyConfig, query_roi: &RgbImage) -> Result<Thresholds> {
    let query = anomaly::prepare_query(query_roi);
    thresholds_from_results(&anomaly::reconstruct(model, &query, cfg)?)
}

/// Pixels of `channel` strictly greater than `theta`.
pub fn channel_mask(query: &RgbImage, roi: &Roi, channel: Channel, theta: f64) -> Result<SegMask> {
    if roi.area() == 0 {
        return Err(Error::EmptyRoi);
    }
    roi.check_within(query.width(), query.height())?;
    let plane = query.plane(channel);
    let w = query.width();
    let bits = (roi.y0..roi.y1())
        .flat_map(|y| plane[y * w + roi.x0..y * w + roi.x1()].iter().map(|&v| v > theta))
        .collect();
    Ok(SegMask {
        channel,
        roi: *roi,
        bits,
        threshold: theta,
    })
}

fn check_same_roi(a: &SegMask, b: &SegMask) -> Result<()> {
    if (a.roi.width, a.roi.height) != (b.roi.width, b.roi.height) {
        return Err(Error::shape(format!("masks over {} and {} differ in extent", a.roi, b.roi)));
    }
    Ok(())
}

/// Green pixel count over red pixel count.
pub fn infarction_score(green: &SegMask, red: &SegMask) -> Result<f64> {
    check_same_roi(green, red)?;
    let t_r = red.count();
    if t_r == 0 {
        return Err(Error::UndefinedScore);
    }
    Ok(green.count() as f64 / t_r as f64)
}

/// `2|A∩B| / (|A|+|B|)`, taken as 1 when both sets are empty.
pub fn dice_bits(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        na += x as usize;
        nb += y as usize;
    }
    if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    }
}

pub fn dice(a: &SegMask, b: &SegMask) -> Result<f64> {
    check_same_roi(a, b)?;
    Ok(dice_bits(&a.bits, &b.bits))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfarctionReport {
    pub image_id: String,
    pub label: String,
    pub roi: Roi,
    /// Green and red mask pixel counts.
    pub t_g: usize,
    pub t_r: usize,
    /// `t_g / t_r`; absent when the red mask is empty.
    pub score: Option<f64>,
    /// Error kind when the score is undefined.
    pub error: Option<String>,
    pub thresholds: Thresholds,
    pub z_mode: ZMode,
    pub seed: u64,
    pub checkpoint_id: String,
    /// Combined loss of the best reconstruction.
    pub anomaly_loss: f64,
    pub scored_on_resized: bool,
}

impl InfarctionReport {
    pub const CSV_HEADER: &'static str =
        "image_id,label,t_g,t_r,score,error,theta_g,theta_r,z_mode,seed,checkpoint_id,anomaly_loss";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.image_id,
            self.label,
            self.t_g,
            self.t_r,
            self.score.map(|s| s.to_string()).unwrap_or_default(),
            self.error.clone().unwrap_or_default(),
            self.thresholds.green,
            self.thresholds.red,
            self.z_mode.name(),
            self.seed,
            self.checkpoint_id,
            self.anomaly_loss,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOptions {
    pub anomaly: AnomalyConfig,
    /// Segment the 96x96 resized query instead of the native ROI.
    pub on_resized: bool,
}

/// Everything produced by scoring one image.
#[derive(Debug, Clone)]
pub struct ScoreOutcome {
    pub report: InfarctionReport,
    pub green: SegMask,
    pub red: SegMask,
    pub heatmap: HeatMap,
    pub best: SearchResult,
}

/// Reconstructs the ROI, derives thresholds, segments and scores it.
pub fn score_image(
    model: &GanModel,
    image: &RgbImage,
    roi: &Roi,
    image_id: &str,
    label: &str,
    checkpoint_id: &str,
    opts: &ScoreOptions,
) -> Result<ScoreOutcome> {
    let crop = crop_roi(image, roi)?;
    let query = anomaly::prepare_query(&crop);
    let results = anomaly::reconstruct(model, &query, &opts.anomaly)?;
    let thresholds = thresholds_from_results(&results)?;
    let best = anomaly::best_result(&results).expect("n_z >= 1").clone();
    let heatmap = anomaly::residual_heatmap(&crop, &best.reconstruction)?;

    let (target, target_roi) = if opts.on_resized {
        (&query, Roi::full(&query))
    } else {
        (image, *roi)
    };
    let green = channel_mask(target, &target_roi, Channel::Green, thresholds.green)?;
    let red = channel_mask(target, &target_roi, Channel::Red, thresholds.red)?;
    let (score, error) = match infarction_score(&green, &red) {
        Ok(s) => (Some(s), None),
        Err(e @ Error::UndefinedScore) => (None, Some(e.kind().to_string())),
        Err(e) => return Err(e),
    };
    let report = InfarctionReport {
        image_id: image_id.to_string(),
        label: label.to_string(),
        roi: *roi,
        t_g: green.count(),
        t_r: red.count(),
        score,
        error,
        thresholds,
        z_mode: opts.anomaly.z_mode,
        seed: opts.anomaly.seed,
        checkpoint_id: checkpoint_id.to_string(),
        anomaly_loss: best.loss,
        scored_on_resized: opts.on_resized,
    };
    Ok(ScoreOutcome {
        report,
        green,
        red,
        heatmap,
        best,
    })
}
