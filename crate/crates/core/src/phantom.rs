//! Synthetic heart-section phantoms with exact collagen ground truth.
//!
//! Red carries oriented myofiber streaks, green carries collagen. Normal
//! phantoms only show a sparse green autofluorescence floor; infarct phantoms
//! add bright green disks inside the ventricle box until a target fraction
//! `phi` of the box is covered, and dim the red channel under the disks by
//! `1 - phi`.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{self, Channel, RgbImage};
use crate::rng;
use crate::roi::Roi;

/// Allowed deviation of the realized collagen fraction from `phi`.
pub const FRACTION_TOLERANCE: f64 = 0.02;
pub const MAX_PHI: f64 = 0.9;
/// Minimum green value inside collagen disks.
pub const COLLAGEN_FLOOR: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FiberParams {
    pub orientation_deg: f64,
    /// Period of the streak pattern in pixels.
    pub spacing: f64,
    pub amplitude: f64,
    pub base: f64,
    pub noise_sigma: f64,
}

impl Default for FiberParams {
    fn default() -> Self {
        FiberParams {
            orientation_deg: 30.0,
            spacing: 12.0,
            amplitude: 0.55,
            base: 0.2,
            noise_sigma: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollagenParams {
    /// Target fraction of the ventricle covered by collagen.
    pub phi: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Upper bound on the number of disks.
    pub max_blobs: usize,
    /// Mean green level inside disks.
    pub level: f64,
    /// Probability of a green autofluorescence speckle outside collagen.
    pub speckle_prob: f64,
    /// Speckles take uniform 8-bit levels in `(0, speckle_max]`.
    pub speckle_max: f64,
}

impl Default for CollagenParams {
    fn default() -> Self {
        CollagenParams {
            phi: 0.0,
            radius_min: 4.0,
            radius_max: 10.0,
            max_blobs: 2000,
            level: 0.8,
            speckle_prob: 0.02,
            speckle_max: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub ventricle: Roi,
    pub fibers: FiberParams,
    pub collagen: CollagenParams,
    pub seed: u64,
    /// Disk proposals tried before packing gives up.
    pub max_attempts: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            width: 256,
            height: 256,
            ventricle: Roi::new(64, 64, 128, 128),
            fibers: FiberParams::default(),
            collagen: CollagenParams::default(),
            seed: 0,
            max_attempts: 20_000,
        }
    }
}

impl PhantomSpec {
    pub fn with_phi(&self, phi: f64) -> Self {
        let mut s = self.clone();
        s.collagen.phi = phi;
        s
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        PhantomSpec { seed, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        self.ventricle.check_within(self.width, self.height)?;
        let c = &self.collagen;
        if !(0.0..=MAX_PHI).contains(&c.phi) {
            return Err(Error::Config(format!("phi {} outside [0, {MAX_PHI}]", c.phi)));
        }
        if !(c.radius_min > 0.0 && c.radius_min <= c.radius_max) {
            return Err(Error::Config("collagen radii must satisfy 0 < min <= max".into()));
        }
        if !(0.0..=1.0).contains(&c.speckle_prob) || !(0.0..=0.05).contains(&c.speckle_max) {
            return Err(Error::Config("speckle floor must stay within 0.05".into()));
        }
        if self.fibers.spacing <= 0.0 || self.fibers.noise_sigma < 0.0 {
            return Err(Error::Config("fiber spacing must be positive and noise non-negative".into()));
        }
        Ok(())
    }
}

/// A generated image with its collagen ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: RgbImage,
    /// Collagen pixels over the whole image, row-major.
    pub truth: Vec<bool>,
    pub ventricle: Roi,
    /// Covered fraction of the ventricle.
    pub realized_fraction: f64,
}

impl Phantom {
    pub fn truth_count(&self) -> usize {
        self.truth.iter().filter(|&&b| b).count()
    }
}

fn base_image(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> RgbImage {
    let f = &spec.fibers;
    let theta = f.orientation_deg.to_radians();
    let (ct, st) = (theta.cos(), theta.sin());
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let noise = Normal::new(0.0, f.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let c = &spec.collagen;
    let mut img = RgbImage::new(spec.width, spec.height);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let along = (x as f64 * ct + y as f64 * st) / f.spacing;
            let streak = 0.5 + 0.5 * (std::f64::consts::TAU * along + phase).sin();
            let red = f.base + f.amplitude * streak + if f.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            let top_level = (c.speckle_max * 255.0).floor() as u32;
            let green = if rng.gen_bool(c.speckle_prob) && top_level > 0 {
                rng.gen_range(1..=top_level) as f64 / 255.0
            } else {
                0.0
            };
            img.set_pixel(x, y, [red.clamp(0.0, 1.0), green, 0.0]);
        }
    }
    img
}

/// Normal (collagen-free) phantom. `spec.collagen.phi` is ignored.
pub fn gen_normal(spec: &PhantomSpec) -> Result<Phantom> {
    spec.with_phi(0.0).validate()?;
    let mut rng = rng::stream(spec.seed, "phantom");
    let mut image = base_image(spec, &mut rng);
    image.quantize();
    Ok(Phantom {
        image,
        truth: vec![false; spec.width * spec.height],
        ventricle: spec.ventricle,
        realized_fraction: 0.0,
    })
}

/// Infarct phantom with collagen covering `phi` (within
/// [`FRACTION_TOLERANCE`]) of the ventricle.
pub fn gen_infarct(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let phi = spec.collagen.phi;
    if phi <= 0.0 {
        return Err(Error::Config("an infarct phantom needs phi > 0".into()));
    }
    let mut rng = rng::stream(spec.seed, "phantom");
    let mut image = base_image(spec, &mut rng);
    let v = spec.ventricle;
    let area = v.area() as f64;
    let mut covered = vec![false; v.area()];
    let mut count = 0usize;
    let mut blobs = 0usize;
    let mut attempts = 0usize;
    let c = &spec.collagen;
    while (count as f64) / area < phi {
        if attempts >= spec.max_attempts || blobs >= c.max_blobs {
            return Err(Error::PhantomPacking { phi, attempts });
        }
        attempts += 1;
        let r = rng.gen_range(c.radius_min..=c.radius_max);
        // Disk centres keep the whole disk inside the ventricle.
        let (lo_x, hi_x) = (r, v.width as f64 - 1.0 - r);
        let (lo_y, hi_y) = (r, v.height as f64 - 1.0 - r);
        if lo_x > hi_x || lo_y > hi_y {
            continue;
        }
        let cx = rng.gen_range(lo_x..=hi_x);
        let cy = rng.gen_range(lo_y..=hi_y);
        let disk: Vec<usize> = disk_pixels(cx, cy, r, v.width, v.height)
            .filter(|&i| !covered[i])
            .collect();
        if (count + disk.len()) as f64 / area > phi + FRACTION_TOLERANCE {
            continue;
        }
        count += disk.len();
        blobs += 1;
        for i in disk {
            covered[i] = true;
        }
    }

    let level = Normal::new(c.level, 0.08).expect("finite sigma");
    let mut truth = vec![false; spec.width * spec.height];
    for (i, _) in covered.iter().enumerate().filter(|(_, &b)| b) {
        let (x, y) = (v.x0 + i % v.width, v.y0 + i / v.width);
        truth[y * spec.width + x] = true;
        let red = image.get(x, y, Channel::Red) * (1.0 - phi);
        let green = level.sample(&mut rng).clamp(COLLAGEN_FLOOR, 1.0);
        image.set_pixel(x, y, [red, green, 0.0]);
    }
    image.quantize();
    Ok(Phantom {
        image,
        truth,
        ventricle: v,
        realized_fraction: count as f64 / area,
    })
}

/// Indices (row-major within a `w x h` box) of pixel centres inside the disk.
fn disk_pixels(cx: f64, cy: f64, r: f64, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let y_lo = (cy - r).floor().max(0.0) as usize;
    let y_hi = ((cy + r).ceil() as usize).min(h - 1);
    let x_lo = (cx - r).floor().max(0.0) as usize;
    let x_hi = ((cx + r).ceil() as usize).min(w - 1);
    (y_lo..=y_hi).flat_map(move |y| {
        (x_lo..=x_hi).filter_map(move |x| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            (dx * dx + dy * dy <= r * r).then_some(y * w + x)
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub label: String,
    pub phi: f64,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_path: Option<PathBuf>,
    pub realized_fraction: f64,
}

/// Index of a generated phantom series; paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub ventricle: Roi,
    pub normal: ManifestEntry,
    pub queries: Vec<ManifestEntry>,
    pub spec: PhantomSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Description of a phantom series, as read by the `synth` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSpec {
    #[serde(default)]
    pub base: PhantomSpec,
    pub phis: Vec<f64>,
    pub labels: Vec<String>,
}

impl Default for SeriesSpec {
    fn default() -> Self {
        SeriesSpec {
            base: PhantomSpec::default(),
            phis: vec![0.05, 0.15, 0.30],
            labels: vec!["day1".into(), "day4".into(), "week2".into()],
        }
    }
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes one normal phantom plus one infarct phantom and truth mask per
/// `phi` into `out_dir`, and returns the manifest (also written as
/// `manifest.json`).
pub fn gen_series(series: &SeriesSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    if series.phis.len() != series.labels.len() {
        return Err(Error::Config(format!(
            "{} phis but {} labels",
            series.phis.len(),
            series.labels.len()
        )));
    }
    let mut stems: Vec<String> = series.labels.iter().map(|l| file_stem(l)).collect();
    stems.push("normal".into());
    let mut unique = stems.clone();
    unique.sort();
    unique.dedup();
    if unique.len() != stems.len() {
        return Err(Error::Config("labels must be distinct and differ from 'normal'".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let base = &series.base;
    let normal = gen_normal(&base.with_seed(rng::derive_seed(base.seed, "normal")))?;
    normal.image.save_png(out_dir.join("normal.png"))?;
    let mut queries = Vec::with_capacity(series.phis.len());
    for (i, (&phi, label)) in series.phis.iter().zip(&series.labels).enumerate() {
        let spec = base
            .with_phi(phi)
            .with_seed(rng::derive_seed(base.seed, &format!("query-{i}")));
        let p = gen_infarct(&spec)?;
        let stem = file_stem(label);
        let path = PathBuf::from(format!("{stem}.png"));
        let truth_path = PathBuf::from(format!("{stem}_truth.png"));
        p.image.save_png(out_dir.join(&path))?;
        image::save_bitmap_png(out_dir.join(&truth_path), spec.width, spec.height, &p.truth)?;
        queries.push(ManifestEntry {
            label: label.clone(),
            phi,
            path,
            truth_path: Some(truth_path),
            realized_fraction: p.realized_fraction,
        });
    }
    let manifest = Manifest {
        seed: base.seed,
        ventricle: base.ventricle,
        normal: ManifestEntry {
            label: "normal".into(),
            phi: 0.0,
            path: "normal.png".into(),
            truth_path: None,
            realized_fraction: 0.0,
        },
        queries,
        spec: base.clone(),
        provenance: None,
    };
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
