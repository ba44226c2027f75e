//! Discriminator bottleneck embeddings and exact t-SNE projection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::model::GanModel;
use crate::rng;

/// Feature rows with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

/// Features of every patch, in input order. Patches are processed in chunks
/// to bound memory.
pub fn collect_embeddings(model: &GanModel, patches: &[RgbImage], labels: &[String]) -> Result<Embeddings> {
    if patches.is_empty() {
        return Err(Error::shape("no patches to embed"));
    }
    if patches.len() != labels.len() {
        return Err(Error::shape(format!("{} patches but {} labels", patches.len(), labels.len())));
    }
    let mut rows = Vec::with_capacity(patches.len());
    for chunk in patches.chunks(32) {
        let refs: Vec<&RgbImage> = chunk.iter().collect();
        rows.extend(model.extract_features_batch(&refs)?.into_iter().map(|f| f.values));
    }
    Ok(Embeddings {
        rows,
        labels: labels.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    /// `None` picks `min(30, (N - 1) / 3)`, at least 1.
    pub perplexity: Option<f64>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: None,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            seed: 0,
        }
    }
}

pub fn default_perplexity(n: usize) -> f64 {
    ((n as f64 - 1.0) / 3.0).clamp(1.0, 30.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    /// One `[x, y]` per input row, centred on the origin.
    pub coords: Vec<[f64; 2]>,
    /// KL divergence before the first update and after every iteration.
    pub kl_trace: Vec<f64>,
    pub perplexity: f64,
}

impl TsneResult {
    /// KL divergence after `iteration` updates.
    pub fn kl_at(&self, iteration: usize) -> Option<f64> {
        self.kl_trace.get(iteration).copied()
    }

    pub fn final_kl(&self) -> f64 {
        *self.kl_trace.last().expect("trace starts with the initial KL")
    }
}

const SEARCH_STEPS: usize = 50;
const ENTROPY_TOL: f64 = 1e-4;
const P_FLOOR: f64 = 1e-12;
const MIN_GAIN: f64 = 0.01;
const INIT_SCALE: f64 = 1e-4;

fn squared_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Conditional distribution of row `i` whose entropy matches `ln(perplexity)`.
fn conditional_row(d: &[f64], i: usize, n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let row = &d[i * n..(i + 1) * n];
    // Shifting by the nearest distance leaves the normalised row unchanged
    // and keeps the exponentials from underflowing.
    let shift = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(f64::INFINITY, f64::min);
    let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
    let mut p = vec![0.0; n];
    for _ in 0..SEARCH_STEPS {
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for j in 0..n {
            p[j] = if j == i { 0.0 } else { (-(row[j] - shift) * beta).exp() };
            sum += p[j];
            weighted += (row[j] - shift) * p[j];
        }
        let entropy = sum.ln() + beta * weighted / sum;
        for v in p.iter_mut() {
            *v /= sum;
        }
        let diff = entropy - target;
        if diff.abs() < ENTROPY_TOL {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
    p
}

/// Symmetrised joint affinities.
fn joint_probabilities(x: &[Vec<f64>], perplexity: f64) -> Vec<f64> {
    let n = x.len();
    let mut d = squared_distances(x);
    // Scale-free: the bandwidth search works on distances of order one.
    let max = d.iter().copied().fold(0.0, f64::max);
    for v in d.iter_mut() {
        *v /= max;
    }
    let cond: Vec<Vec<f64>> = (0..n).map(|i| conditional_row(&d, i, n, perplexity)).collect();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i][j] + cond[j][i]) / (2.0 * n as f64)).max(P_FLOOR);
            }
        }
    }
    p
}

/// Student-t kernel values and their off-diagonal sum.
fn student_kernel(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            sum += 2.0 * v;
        }
    }
    (num, sum)
}

fn kl_divergence(p: &[f64], num: &[f64], sum: f64, n: usize) -> f64 {
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let pij = p[i * n + j];
                let qij = (num[i * n + j] / sum).max(P_FLOOR);
                kl += pij * (pij / qij).ln();
            }
        }
    }
    kl
}

fn centre(y: &mut [[f64; 2]]) {
    let n = y.len() as f64;
    let mx = y.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = y.iter().map(|p| p[1]).sum::<f64>() / n;
    for p in y.iter_mut() {
        p[0] -= mx;
        p[1] -= my;
    }
}

/// Exact t-SNE to two dimensions: per-point bandwidths by bisection on the
/// entropy, early exaggeration, momentum switch and adaptive gains.
pub fn tsne_project(x: &[Vec<f64>], cfg: &TsneConfig) -> Result<TsneResult> {
    let n = x.len();
    let dim = x.first().map_or(0, Vec::len);
    if dim == 0 || x.iter().any(|r| r.len() != dim) {
        return Err(Error::shape("t-SNE needs equal-length, non-empty rows"));
    }
    let perplexity = cfg.perplexity.unwrap_or_else(|| default_perplexity(n));
    if !(perplexity >= 1.0 && perplexity < n as f64) {
        return Err(Error::Perplexity { perplexity, n });
    }
    if cfg.iterations == 0 {
        return Err(Error::Config("t-SNE needs at least one iteration".into()));
    }
    if x.iter().all(|r| r == &x[0]) {
        return Err(Error::DegenerateInput);
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("t-SNE input contains non-finite values".into()));
    }

    let p = joint_probabilities(x, perplexity);
    let mut init_rng = rng::stream(cfg.seed, "tsne-init");
    let init = rng::standard_normal(&mut init_rng, 2 * n);
    let mut y: Vec<[f64; 2]> = init.chunks(2).map(|c| [c[0] * INIT_SCALE, c[1] * INIT_SCALE]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_trace = Vec::with_capacity(cfg.iterations + 1);

    for it in 0..cfg.iterations {
        let early = it < cfg.exaggeration_iters;
        let exaggeration = if early { cfg.early_exaggeration } else { 1.0 };
        let momentum = if early { 0.5 } else { 0.8 };
        let (num, sum) = student_kernel(&y);
        kl_trace.push(kl_divergence(&p, &num, sum, n));
        for i in 0..n {
            let mut grad = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let k = i * n + j;
                let m = (exaggeration * p[k] - num[k] / sum) * num[k];
                grad[0] += 4.0 * m * (y[i][0] - y[j][0]);
                grad[1] += 4.0 * m * (y[i][1] - y[j][1]);
            }
            for a in 0..2 {
                let same_sign = (grad[a] > 0.0) == (update[i][a] > 0.0);
                gains[i][a] = if same_sign { gains[i][a] * 0.8 } else { gains[i][a] + 0.2 };
                gains[i][a] = gains[i][a].max(MIN_GAIN);
                update[i][a] = momentum * update[i][a] - cfg.learning_rate * gains[i][a] * grad[a];
            }
        }
        for (yi, u) in y.iter_mut().zip(&update) {
            yi[0] += u[0];
            yi[1] += u[1];
        }
        centre(&mut y);
        if y.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::Numeric(format!("t-SNE diverged at iteration {it}")));
        }
    }
    let (num, sum) = student_kernel(&y);
    kl_trace.push(kl_divergence(&p, &num, sum, n));
    Ok(TsneResult {
        coords: y,
        kl_trace,
        perplexity,
    })
}

/// Distance between two cluster centroids against the clusters' spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub centroid_distance: f64,
    /// Mean over both clusters of the mean point-to-centroid distance.
    pub mean_spread: f64,
}

impl Separation {
    pub fn ratio(&self) -> f64 {
        self.centroid_distance / self.mean_spread
    }
}

/// Separation between the points labelled `a` and those labelled `b`.
pub fn separation(coords: &[[f64; 2]], labels: &[String], a: &str, b: &str) -> Result<Separation> {
    let cluster = |name: &str| -> Result<Vec<[f64; 2]>> {
        let pts: Vec<[f64; 2]> = coords
            .iter()
            .zip(labels)
            .filter(|(_, l)| l.as_str() == name)
            .map(|(c, _)| *c)
            .collect();
        if pts.is_empty() {
            return Err(Error::shape(format!("no points labelled '{name}'")));
        }
        Ok(pts)
    };
    let centroid = |pts: &[[f64; 2]]| {
        let n = pts.len() as f64;
        [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n]
    };
    let dist = |p: [f64; 2], q: [f64; 2]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
    let spread = |pts: &[[f64; 2]], c: [f64; 2]| pts.iter().map(|&p| dist(p, c)).sum::<f64>() / pts.len() as f64;
    let (pa, pb) = (cluster(a)?, cluster(b)?);
    let (ca, cb) = (centroid(&pa), centroid(&pb));
    Ok(Separation {
        centroid_distance: dist(ca, cb),
        mean_spread: (spread(&pa, ca) + spread(&pb, cb)) / 2.0,
    })
}

pub fn coords_to_csv(coords: &[[f64; 2]], labels: &[String]) -> String {
    let mut s = String::from("x,y,label\n");
    for (c, l) in coords.iter().zip(labels) {
        s.push_str(&format!("{},{},{}\n", c[0], c[1], l));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn clusters(per: usize, dim: usize, gap: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<String>) {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (k, name) in ["a", "b"].iter().enumerate() {
            for _ in 0..per {
                let mut row: Vec<f64> = (0..dim).map(|_| normal.sample(&mut r)).collect();
                row[0] += gap * k as f64;
                rows.push(row);
                labels.push(name.to_string());
            }
        }
        (rows, labels)
    }

    #[test]
    fn separated_gaussian_clusters_stay_apart() {
        let (x, labels) = clusters(20, 50, 10.0, 4);
        let res = tsne_project(&x, &TsneConfig { seed: 1, ..TsneConfig::default() }).unwrap();
        let s = separation(&res.coords, &labels, "a", "b").unwrap();
        assert!(s.ratio() > 2.0, "{s:?}");
        assert!(res.final_kl() <= res.kl_at(300).unwrap());
        assert_eq!(res.kl_trace.len(), 1001);
    }

    #[test]
    fn output_is_centred_and_deterministic() {
        let (x, _) = clusters(6, 5, 3.0, 2);
        let cfg = TsneConfig { iterations: 120, seed: 3, ..TsneConfig::default() };
        let a = tsne_project(&x, &cfg).unwrap();
        let b = tsne_project(&x, &cfg).unwrap();
        assert_eq!(a, b);
        let mx: f64 = a.coords.iter().map(|c| c[0]).sum::<f64>() / 12.0;
        let my: f64 = a.coords.iter().map(|c| c[1]).sum::<f64>() / 12.0;
        assert!(mx.abs() < 1e-9 && my.abs() < 1e-9);
    }

    #[test]
    fn two_distinct_rows_give_two_points() {
        let x = vec![vec![0.0, 1.0], vec![2.0, 0.5]];
        let r = tsne_project(&x, &TsneConfig { iterations: 50, ..TsneConfig::default() }).unwrap();
        assert_ne!(r.coords[0], r.coords[1]);
    }

    #[test]
    fn perplexity_and_degenerate_errors() {
        let x = vec![vec![0.0], vec![1.0], vec![3.0]];
        let cfg = TsneConfig { perplexity: Some(3.0), ..TsneConfig::default() };
        assert!(matches!(tsne_project(&x, &cfg), Err(Error::Perplexity { .. })));
        let cfg = TsneConfig { perplexity: Some(0.5), ..TsneConfig::default() };
        assert!(matches!(tsne_project(&x, &cfg), Err(Error::Perplexity { .. })));
        let same = vec![vec![1.0, 2.0]; 4];
        assert!(matches!(tsne_project(&same, &TsneConfig::default()), Err(Error::DegenerateInput)));
    }

    #[test]
    fn bandwidth_search_hits_the_perplexity() {
        let (x, _) = clusters(15, 4, 2.0, 8);
        let n = x.len();
        let mut d = squared_distances(&x);
        let max = d.iter().copied().fold(0.0, f64::max);
        d.iter_mut().for_each(|v| *v /= max);
        for i in 0..n {
            let p = conditional_row(&d, i, n, 7.0);
            let h: f64 = -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>();
            assert!((h.exp() - 7.0).abs() < 7.0 * 1e-3, "row {i}: {}", h.exp());
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn default_perplexity_rule() {
        assert_eq!(default_perplexity(100), 30.0);
        assert_eq!(default_perplexity(31), 10.0);
        assert_eq!(default_perplexity(2), 1.0);
    }

    #[test]
    fn embeddings_follow_patch_order() {
        let m = GanModel::build(1, 4).unwrap();
        let a = RgbImage::filled(96, 96, [0.1, 0.2, 0.3]);
        let b = RgbImage::filled(96, 96, [0.7, 0.1, 0.0]);
        let labels: Vec<String> = ["x", "y", "x"].iter().map(|s| s.to_string()).collect();
        let e = collect_embeddings(&m, &[a.clone(), b.clone(), a.clone()], &labels).unwrap();
        assert_eq!(e.rows[0], m.extract_features(&a).unwrap().values);
        assert_eq!(e.rows[1], m.extract_features(&b).unwrap().values);
        assert_eq!(e.rows[0], e.rows[2]);
        assert!(collect_embeddings(&m, &[a], &labels).is_err());
    }
}
