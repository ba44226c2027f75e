//! Query-time anomaly scoring: residual and feature-matching losses, latent
//! search against a trained generator, and residual heat maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{resize_plane, RgbImage};
use crate::model::{Discriminator, GanModel, Generator, CHANNELS, FEATURE_DIM, PATCH_SIZE};
use crate::rng;
use crate::tensor::{Adam, AdamConfig, Graph, Tensor};

/// How latent vectors are chosen at query time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZMode {
    /// Optimise each latent towards the query.
    Search,
    /// Use the seeded Gaussian draws as they are.
    Random,
}

impl std::str::FromStr for ZMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "search" => Ok(ZMode::Search),
            "random" => Ok(ZMode::Random),
            other => Err(Error::Config(format!("z-mode must be search or random, got '{other}'"))),
        }
    }
}

impl ZMode {
    pub fn name(self) -> &'static str {
        match self {
            ZMode::Search => "search",
            ZMode::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyConfig {
    /// Weight of the feature-matching term.
    pub lambda: f64,
    pub steps: usize,
    pub lr: f64,
    /// Latent samples averaged for threshold estimation.
    pub n_z: usize,
    pub seed: u64,
    pub z_mode: ZMode,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        AnomalyConfig {
            lambda: 0.1,
            steps: 100,
            lr: AdamConfig::LATENT.lr,
            n_z: 64,
            seed: 0,
            z_mode: ZMode::Search,
        }
    }
}

impl AnomalyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.n_z == 0 {
            return Err(Error::Config("n_z must be at least 1".into()));
        }
        self.adam().validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::LATENT
        }
    }
}

fn check_same(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::shape(format!(
            "images differ in size: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Mean absolute pixel difference.
pub fn residual_loss(x: &RgbImage, gz: &RgbImage) -> Result<f64> {
    check_same(x, gz)?;
    Ok(mean_abs_diff(x.data(), gz.data()))
}

/// Mean absolute difference of discriminator bottleneck features.
pub fn feature_matching_loss(model: &GanModel, x: &RgbImage, gz: &RgbImage) -> Result<f64> {
    check_same(x, gz)?;
    let f = model.extract_features_batch(&[x, gz])?;
    Ok(mean_abs_diff(&f[0].values, &f[1].values))
}

pub fn combined_loss(l_r: f64, l_f: f64, lambda: f64) -> f64 {
    (1.0 - lambda) * l_r + lambda * l_f
}

/// Bilinear resize of a query region to the network input size.
pub fn prepare_query(roi_image: &RgbImage) -> RgbImage {
    roi_image.resize_bilinear(PATCH_SIZE, PATCH_SIZE)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// Best latent found.
    pub z: Vec<f64>,
    /// `G(z)` for the best latent.
    pub reconstruction: RgbImage,
    /// Combined loss of the best latent.
    pub loss: f64,
    /// Loss at every visited latent, starting with the initialisation.
    pub trace: Vec<f64>,
    /// Running minimum of `trace`.
    pub best_trace: Vec<f64>,
}

/// Seeded initial latents for `n` searches, row-major.
pub fn initial_latents(model: &GanModel, n: usize, seed: u64) -> Vec<f64> {
    rng::standard_normal(&mut rng::stream(seed, "latent-init"), n * model.latent_dim())
}

/// Single search from the first seeded latent.
pub fn latent_search(model: &GanModel, query: &RgbImage, cfg: &AnomalyConfig) -> Result<SearchResult> {
    let z0 = initial_latents(model, 1, cfg.seed);
    latent_search_from(model, query, &z0, cfg)
}

pub fn latent_search_from(model: &GanModel, query: &RgbImage, z0: &[f64], cfg: &AnomalyConfig) -> Result<SearchResult> {
    Ok(latent_search_batch(model, query, z0, cfg)?.remove(0))
}

/// Independent searches, one per latent in `inits` (row-major), run as one
/// batch. Each latent minimises its own combined loss with Adam; the best
/// latent seen so far is returned for each.
pub fn latent_search_batch(
    model: &GanModel,
    query: &RgbImage,
    inits: &[f64],
    cfg: &AnomalyConfig,
) -> Result<Vec<SearchResult>> {
    cfg.validate()?;
    if query.width() != PATCH_SIZE || query.height() != PATCH_SIZE {
        return Err(Error::shape(format!(
            "query is {}x{}, resize to {PATCH_SIZE}x{PATCH_SIZE} first",
            query.width(),
            query.height()
        )));
    }
    let dim = model.latent_dim();
    if inits.is_empty() || !inits.len().is_multiple_of(dim) {
        return Err(Error::shape(format!(
            "{} latent values is not a whole number of {dim}-vectors",
            inits.len()
        )));
    }
    let n = inits.len() / dim;
    let plane = CHANNELS * PATCH_SIZE * PATCH_SIZE;
    let query_features = model.extract_features(query)?.values;
    let target = Tensor::new(&[n, CHANNELS, PATCH_SIZE, PATCH_SIZE], query.data().repeat(n))?;
    let target_features = Tensor::new(&[n, FEATURE_DIM], query_features.repeat(n))?;

    let mut z = Tensor::new(&[n, dim], inits.to_vec())?;
    let mut adam = Adam::new(cfg.adam())?;
    let mut results: Vec<SearchResult> = (0..n)
        .map(|_| SearchResult {
            z: Vec::new(),
            reconstruction: RgbImage::new(PATCH_SIZE, PATCH_SIZE),
            loss: f64::INFINITY,
            trace: Vec::with_capacity(cfg.steps + 1),
            best_trace: Vec::with_capacity(cfg.steps + 1),
        })
        .collect();

    for step in 0..=cfg.steps {
        let mut g = Graph::new();
        let gen = model.generator.register(&mut g, false)?;
        let disc = model.discriminator.register(&mut g, false)?;
        let zv = g.leaf(z.clone().with_requires_grad(true))?;
        let fake = Generator::forward(&mut g, &gen, zv)?;
        let out = Discriminator::forward(&mut g, &disc, fake)?;

        let images = g.value(fake).data();
        let features = g.value(out.features).data();
        for (i, r) in results.iter_mut().enumerate() {
            let l_r = mean_abs_diff(&images[i * plane..(i + 1) * plane], query.data());
            let l_f = mean_abs_diff(&features[i * FEATURE_DIM..(i + 1) * FEATURE_DIM], &query_features);
            let loss = combined_loss(l_r, l_f, cfg.lambda);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("latent search loss is {loss} at step {step}")));
            }
            r.trace.push(loss);
            if loss < r.loss {
                r.loss = loss;
                r.z = z.data()[i * dim..(i + 1) * dim].to_vec();
                r.reconstruction = RgbImage::from_planar(PATCH_SIZE, PATCH_SIZE, images[i * plane..(i + 1) * plane].to_vec())?;
            }
            r.best_trace.push(r.loss);
        }
        if step == cfg.steps {
            break;
        }

        // Sum of per-sample losses, so each latent sees its own gradient.
        let tv = g.constant(target.clone())?;
        let tf = g.constant(target_features.clone())?;
        let l_r = g.l1_loss(fake, tv)?;
        let l_f = g.l1_loss(out.features, tf)?;
        let l_r = g.scale(l_r, (1.0 - cfg.lambda) * n as f64)?;
        let l_f = g.scale(l_f, cfg.lambda * n as f64)?;
        let loss = g.add(l_r, l_f)?;
        g.backward(loss)?;
        let grad = g.take_grad(zv).expect("latent requires grad");
        adam.step(&mut [&mut z], &[grad])?;
    }
    Ok(results)
}

/// Reconstructions of `query` used for thresholds and heat maps: `cfg.n_z`
/// seeded latents, optimised in [`ZMode::Search`] and used as drawn in
/// [`ZMode::Random`]. Results are ordered by initial latent.
pub fn reconstruct(model: &GanModel, query: &RgbImage, cfg: &AnomalyConfig) -> Result<Vec<SearchResult>> {
    let inits = initial_latents(model, cfg.n_z, cfg.seed);
    let cfg = match cfg.z_mode {
        ZMode::Search => *cfg,
        ZMode::Random => AnomalyConfig { steps: 0, ..*cfg },
    };
    latent_search_batch(model, query, &inits, &cfg)
}

/// Lowest-loss result; ties go to the earliest.
pub fn best_result(results: &[SearchResult]) -> Option<&SearchResult> {
    results.iter().reduce(|best, r| if r.loss < best.loss { r } else { best })
}

/// Per-pixel channel-mean absolute residual.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    pub width: usize,
    pub height: usize,
    /// Row-major values at the query ROI's extents.
    pub values: Vec<f64>,
    /// Row-major values at the network resolution, before resizing.
    pub raw: Vec<f64>,
}

impl HeatMap {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.values.chunks(self.width) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// Residual between the resized query ROI and a reconstruction, resized back
/// to the ROI's extents for display.
pub fn residual_heatmap(query_roi: &RgbImage, reconstruction: &RgbImage) -> Result<HeatMap> {
    if reconstruction.width() != PATCH_SIZE || reconstruction.height() != PATCH_SIZE {
        return Err(Error::shape(format!(
            "reconstruction is {}x{}, expected {PATCH_SIZE}x{PATCH_SIZE}",
            reconstruction.width(),
            reconstruction.height()
        )));
    }
    let query = prepare_query(query_roi);
    let n = PATCH_SIZE * PATCH_SIZE;
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = (0..CHANNELS)
                .map(|c| (query.data()[c * n + i] - reconstruction.data()[c * n + i]).abs())
                .sum();
            (d / CHANNELS as f64).clamp(0.0, 1.0)
        })
        .collect();
    let (w, h) = (query_roi.width(), query_roi.height());
    let values = resize_plane(&raw, PATCH_SIZE, PATCH_SIZE, w, h)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    Ok(HeatMap {
        width: w,
        height: h,
        values,
        raw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Channel;
    use rand::{Rng, SeedableRng};

    fn model() -> GanModel {
        GanModel::build(3, 8).unwrap()
    }

    fn random_patch(seed: u64) -> RgbImage {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(PATCH_SIZE, PATCH_SIZE, |_, _| [r.gen(), r.gen(), r.gen()])
    }

    #[test]
    fn residual_loss_cases() {
        let ones = RgbImage::filled(4, 4, [1.0; 3]);
        let zeros = RgbImage::new(4, 4);
        assert_eq!(residual_loss(&ones, &ones).unwrap(), 0.0);
        assert_eq!(residual_loss(&ones, &zeros).unwrap(), 1.0);
        assert!(matches!(residual_loss(&ones, &RgbImage::new(4, 5)), Err(Error::Shape(_))));
    }

    #[test]
    fn combined_loss_substitution_and_superposition() {
        assert!((combined_loss(1.0, 0.0, 0.1) - 0.9).abs() < 1e-15);
        assert_eq!(combined_loss(0.7, 0.3, 0.0), 0.7);
        assert_eq!(combined_loss(0.7, 0.3, 1.0), 0.3);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (a, b, c, d, lam): (f64, f64, f64, f64, f64) = (r.gen(), r.gen(), r.gen(), r.gen(), r.gen());
            let lhs = combined_loss(a + c, b + d, lam);
            let rhs = combined_loss(a, b, lam) + combined_loss(c, d, lam);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_loss_is_zero_on_identical_and_sees_structure() {
        let m = model();
        let x = random_patch(5);
        assert_eq!(feature_matching_loss(&m, &x, &x).unwrap(), 0.0);
        // Same pixel histogram, different arrangement.
        let n = PATCH_SIZE * PATCH_SIZE;
        let mut data = x.data().to_vec();
        for c in 0..CHANNELS {
            data[c * n..(c + 1) * n].reverse();
        }
        let y = RgbImage::from_planar(PATCH_SIZE, PATCH_SIZE, data).unwrap();
        assert!(feature_matching_loss(&m, &x, &y).unwrap() > 0.0);
    }

    #[test]
    fn zero_steps_returns_the_initialisation() {
        let m = model();
        let q = random_patch(9);
        let z0 = initial_latents(&m, 1, 4);
        let cfg = AnomalyConfig { steps: 0, ..AnomalyConfig::default() };
        let r = latent_search_from(&m, &q, &z0, &cfg).unwrap();
        assert_eq!(r.z, z0);
        assert_eq!(r.reconstruction, m.generate(&z0).unwrap());
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn search_trace_matches_standalone_losses_and_is_monotone() {
        let m = model();
        let q = random_patch(11);
        let cfg = AnomalyConfig { steps: 15, seed: 2, ..AnomalyConfig::default() };
        let r = latent_search(&m, &q, &cfg).unwrap();
        assert_eq!(r.trace.len(), 16);
        assert!(r.best_trace.windows(2).all(|w| w[1] <= w[0]));
        let l = combined_loss(
            residual_loss(&q, &r.reconstruction).unwrap(),
            feature_matching_loss(&m, &q, &r.reconstruction).unwrap(),
            cfg.lambda,
        );
        assert!((l - r.loss).abs() < 1e-12);
        assert!(r.loss <= r.trace[0]);
    }

    #[test]
    fn search_starting_at_the_optimum_stays_there() {
        let m = model();
        let z0 = initial_latents(&m, 1, 6);
        let q = m.generate(&z0).unwrap();
        let cfg = AnomalyConfig { steps: 5, ..AnomalyConfig::default() };
        let r = latent_search_from(&m, &q, &z0, &cfg).unwrap();
        assert_eq!(r.trace[0], 0.0);
        assert_eq!(r.loss, 0.0);
    }

    #[test]
    fn batched_search_equals_individual_searches() {
        let m = model();
        let q = random_patch(13);
        let cfg = AnomalyConfig { steps: 4, ..AnomalyConfig::default() };
        let inits = initial_latents(&m, 3, 8);
        let batch = latent_search_batch(&m, &q, &inits, &cfg).unwrap();
        for (i, b) in batch.iter().enumerate() {
            let single = latent_search_from(&m, &q, &inits[i * 8..(i + 1) * 8], &cfg).unwrap();
            for (x, y) in b.trace.iter().zip(&single.trace) {
                assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn random_mode_does_not_optimise() {
        let m = model();
        let q = random_patch(1);
        let cfg = AnomalyConfig { n_z: 3, z_mode: ZMode::Random, ..AnomalyConfig::default() };
        let rs = reconstruct(&m, &q, &cfg).unwrap();
        let inits = initial_latents(&m, 3, cfg.seed);
        for (i, r) in rs.iter().enumerate() {
            assert_eq!(r.z, inits[i * 8..(i + 1) * 8]);
            assert_eq!(r.trace.len(), 1);
        }
    }

    #[test]
    fn heatmap_single_pixel_and_identity() {
        let q = random_patch(21);
        let h = residual_heatmap(&q, &q).unwrap();
        assert!(h.raw.iter().all(|&v| v == 0.0));
        let mut rec = q.clone();
        let v = rec.get(10, 20, Channel::Green);
        rec.set(10, 20, Channel::Green, if v > 0.5 { v - 0.3 } else { v + 0.3 });
        let h = residual_heatmap(&q, &rec).unwrap();
        let nonzero: Vec<usize> = (0..h.raw.len()).filter(|&i| h.raw[i] != 0.0).collect();
        assert_eq!(nonzero, vec![20 * PATCH_SIZE + 10]);
        assert!((h.raw[nonzero[0]] - 0.1).abs() < 1e-12);
        assert!(h.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn heatmap_is_resized_to_roi_extents() {
        let roi = RgbImage::filled(128, 110, [0.3, 0.2, 0.1]);
        let rec = RgbImage::filled(PATCH_SIZE, PATCH_SIZE, [0.3, 0.5, 0.1]);
        let h = residual_heatmap(&roi, &rec).unwrap();
        assert_eq!((h.width, h.height, h.values.len()), (128, 110, 128 * 110));
        assert!(h.values.iter().all(|v| (v - 0.1).abs() < 1e-12));
        assert!(residual_heatmap(&roi, &roi).is_err());
    }

    #[test]
    fn lambda_out_of_range() {
        let cfg = AnomalyConfig { lambda: 1.5, ..AnomalyConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
