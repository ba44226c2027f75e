//! Oracles shared by the integration tests and the acceptance harness.

#![allow(dead_code)]

use std::collections::HashSet;

use fibroscore::image::{Channel, RgbImage};
use fibroscore::roi::Roi;
use fibroscore::segscore::{self, SegMask};
use fibroscore::tensor::{Activation, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Below this magnitude both gradients count as zero.
pub const FD_ABS_FLOOR: f64 = 1e-8;

type Build = fn(&mut Graph, &[Var]) -> fibroscore::Result<Var>;
type Sample = fn(&mut ChaCha8Rng) -> Vec<Tensor>;

/// One differentiable operation under test: how to draw its inputs and how to
/// apply it. All inputs are differentiated.
pub struct GradCase {
    pub name: &'static str,
    sample: Sample,
    build: Build,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values bounded away from zero, for ops with a kink there.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

pub fn grad_cases() -> Vec<GradCase> {
    vec![
        GradCase {
            name: "conv2d batched s2 p1",
            sample: |r| vec![uniform(r, &[2, 3, 7, 7], -1.0, 1.0), uniform(r, &[4, 3, 3, 3], -0.5, 0.5), uniform(r, &[4], -0.5, 0.5)],
            build: |g, v| g.conv2d(v[0], v[1], v[2], 2, 1),
        },
        GradCase {
            name: "conv2d single k4 s4",
            sample: |r| vec![uniform(r, &[2, 12, 12], -1.0, 1.0), uniform(r, &[3, 2, 4, 4], -0.5, 0.5), uniform(r, &[3], -0.5, 0.5)],
            build: |g, v| g.conv2d(v[0], v[1], v[2], 4, 0),
        },
        GradCase {
            name: "conv_transpose2d batched s2 p1",
            sample: |r| vec![uniform(r, &[2, 3, 4, 4], -1.0, 1.0), uniform(r, &[3, 2, 4, 4], -0.5, 0.5), uniform(r, &[2], -0.5, 0.5)],
            build: |g, v| g.conv_transpose2d(v[0], v[1], v[2], 2, 1),
        },
        GradCase {
            name: "conv_transpose2d single k4 s4",
            sample: |r| vec![uniform(r, &[3, 3, 3], -1.0, 1.0), uniform(r, &[3, 2, 4, 4], -0.5, 0.5), uniform(r, &[2], -0.5, 0.5)],
            build: |g, v| g.conv_transpose2d(v[0], v[1], v[2], 4, 0),
        },
        GradCase {
            name: "dense vector",
            sample: |r| vec![uniform(r, &[5], -1.0, 1.0), uniform(r, &[3, 5], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0)],
            build: |g, v| g.dense(v[0], v[1], v[2]),
        },
        GradCase {
            name: "dense batched",
            sample: |r| vec![uniform(r, &[4, 5], -1.0, 1.0), uniform(r, &[3, 5], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0)],
            build: |g, v| g.dense(v[0], v[1], v[2]),
        },
        GradCase {
            name: "leaky relu",
            sample: |r| vec![off_zero(r, &[3, 4])],
            build: |g, v| g.activation(v[0], Activation::LeakyRelu(0.2)),
        },
        GradCase {
            name: "tanh",
            sample: |r| vec![uniform(r, &[3, 4], -3.0, 3.0)],
            build: |g, v| g.activation(v[0], Activation::Tanh),
        },
        GradCase {
            name: "sigmoid",
            sample: |r| vec![uniform(r, &[3, 4], -4.0, 4.0)],
            build: |g, v| g.activation(v[0], Activation::Sigmoid),
        },
        GradCase {
            name: "affine",
            sample: |r| vec![uniform(r, &[6], -1.0, 1.0)],
            build: |g, v| g.affine(v[0], 0.5, 0.5),
        },
        GradCase {
            name: "scale",
            sample: |r| vec![uniform(r, &[6], -1.0, 1.0)],
            build: |g, v| g.scale(v[0], -1.7),
        },
        GradCase {
            name: "reshape",
            sample: |r| vec![uniform(r, &[2, 6], -1.0, 1.0)],
            build: |g, v| g.reshape(v[0], &[3, 4]),
        },
        GradCase {
            name: "l1 loss",
            sample: |r| {
                let a = uniform(r, &[2, 5], -1.0, 1.0);
                let gap = off_zero(r, &[2, 5]);
                let b = Tensor::new(a.shape(), a.data().iter().zip(gap.data()).map(|(x, d)| x + d).collect()).unwrap();
                vec![a, b]
            },
            build: |g, v| g.l1_loss(v[0], v[1]),
        },
        GradCase {
            name: "bce loss vs 1",
            sample: |r| vec![uniform(r, &[7], 0.05, 0.95)],
            build: |g, v| g.bce_loss(v[0], 1.0),
        },
        GradCase {
            name: "bce loss vs 0",
            sample: |r| vec![uniform(r, &[7], 0.05, 0.95)],
            build: |g, v| g.bce_loss(v[0], 0.0),
        },
        GradCase {
            name: "add",
            sample: |r| vec![uniform(r, &[5], -1.0, 1.0), uniform(r, &[5], -1.0, 1.0)],
            build: |g, v| g.add(v[0], v[1]),
        },
        GradCase {
            name: "mul",
            sample: |r| vec![uniform(r, &[5], -1.0, 1.0), uniform(r, &[5], -1.0, 1.0)],
            build: |g, v| g.mul(v[0], v[1]),
        },
        GradCase {
            name: "sum",
            sample: |r| vec![uniform(r, &[2, 3], -1.0, 1.0)],
            build: |g, v| g.sum(v[0]),
        },
        GradCase {
            name: "generator-discriminator chain",
            sample: |r| {
                vec![
                    uniform(r, &[2, 3], -1.0, 1.0),
                    uniform(r, &[2 * 2 * 2, 3], -0.5, 0.5),
                    uniform(r, &[8], -0.1, 0.1),
                    uniform(r, &[2, 2, 4, 4], -0.5, 0.5),
                    uniform(r, &[2], -0.1, 0.1),
                    uniform(r, &[3, 2, 4, 4], -0.5, 0.5),
                    uniform(r, &[3], -0.1, 0.1),
                    uniform(r, &[1, 3 * 2 * 2], -0.5, 0.5),
                    uniform(r, &[1], -0.1, 0.1),
                ]
            },
            build: |g, v| {
                let h = g.dense(v[0], v[1], v[2])?;
                let h = g.reshape(h, &[2, 2, 2, 2])?;
                let h = g.conv_transpose2d(h, v[3], v[4], 4, 0)?;
                let h = g.activation(h, Activation::Tanh)?;
                let h = g.affine(h, 0.5, 0.5)?;
                let h = g.conv2d(h, v[5], v[6], 4, 0)?;
                let h = g.activation(h, Activation::Tanh)?;
                let h = g.reshape(h, &[2, 12])?;
                let h = g.dense(h, v[7], v[8])?;
                let p = g.activation(h, Activation::Sigmoid)?;
                g.bce_loss(p, 1.0)
            },
        },
    ]
}

/// Scalar `sum(op(inputs) * weights)`.
fn project(case: &GradCase, g: &mut Graph, vars: &[Var], weights: &[f64]) -> fibroscore::Result<Var> {
    let out = (case.build)(g, vars)?;
    let w = Tensor::new(g.value(out).shape(), weights.to_vec())?;
    let w = g.constant(w)?;
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

fn output_len(case: &GradCase, inputs: &[Tensor]) -> usize {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone()).unwrap()).collect();
    let out = (case.build)(&mut g, &vars).unwrap();
    g.value(out).len()
}

fn value(case: &GradCase, inputs: &[Tensor], weights: &[f64]) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone()).unwrap()).collect();
    let loss = project(case, &mut g, &vars, weights).unwrap();
    g.value(loss).item().unwrap()
}

fn relative_error(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < FD_ABS_FLOOR {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Worst relative error between backprop and central differences over every
/// input coordinate of `case` for one seed.
pub fn gradcheck(case: &GradCase, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = (case.sample)(&mut rng);
    let weights: Vec<f64> = (0..output_len(case, &inputs)).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone().with_requires_grad(true)).unwrap()).collect();
    let loss = project(case, &mut g, &vars, &weights).unwrap();
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.take_grad(v).unwrap()).collect();

    let mut worst = 0.0f64;
    for (k, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let mut shifted = inputs.clone();
            shifted[k].data_mut()[i] += FD_STEP;
            let up = value(case, &shifted, &weights);
            shifted[k].data_mut()[i] -= 2.0 * FD_STEP;
            let down = value(case, &shifted, &weights);
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    worst
}

/// `(case name, worst error over seeds)` for every case.
pub fn gradcheck_suite(seeds: std::ops::Range<u64>) -> Vec<(&'static str, f64)> {
    grad_cases()
        .iter()
        .map(|c| (c.name, seeds.clone().map(|s| gradcheck(c, s)).fold(0.0, f64::max)))
        .collect()
}

/// Random image with 8-bit levels and a random ROI inside it.
pub fn fixture(rng: &mut ChaCha8Rng) -> (RgbImage, Roi) {
    let (w, h) = (rng.gen_range(1..40), rng.gen_range(1..40));
    let img = RgbImage::from_fn(w, h, |_, _| [0; 3].map(|_: i32| rng.gen_range(0..=255u8) as f64 / 255.0));
    let (x0, y0) = (rng.gen_range(0..w), rng.gen_range(0..h));
    let roi = Roi::new(x0, y0, rng.gen_range(1..=w - x0), rng.gen_range(1..=h - y0));
    (img, roi)
}

fn naive_set(img: &RgbImage, roi: &Roi, channel: Channel, theta: f64) -> HashSet<(usize, usize)> {
    let mut set = HashSet::new();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let inside = x >= roi.x0 && x < roi.x0 + roi.width && y >= roi.y0 && y < roi.y0 + roi.height;
            if inside && img.pixel(x, y)[channel.index()] > theta {
                set.insert((x, y));
            }
        }
    }
    set
}

fn mask_set(m: &SegMask) -> HashSet<(usize, usize)> {
    m.coordinates().collect()
}

/// Mismatch counts of the mask, mean, score and Dice operations against
/// naive implementations on `n` random fixtures: `[mask, mean, score, dice]`.
pub fn oracle_suite(n: usize, seed: u64) -> [usize; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = [0usize; 4];
    for _ in 0..n {
        let (img, roi) = fixture(&mut rng);
        let tg = rng.gen_range(0..=255) as f64 / 255.0;
        let tr = rng.gen_range(0..=255) as f64 / 255.0;

        let green = segscore::channel_mask(&img, &roi, Channel::Green, tg).unwrap();
        let red = segscore::channel_mask(&img, &roi, Channel::Red, tr).unwrap();
        let (ng, nr) = (naive_set(&img, &roi, Channel::Green, tg), naive_set(&img, &roi, Channel::Red, tr));
        if mask_set(&green) != ng || mask_set(&red) != nr || green.count() != ng.len() {
            bad[0] += 1;
        }

        for channel in Channel::ALL {
            let mut sum = 0.0;
            for y in roi.y0..roi.y0 + roi.height {
                for x in roi.x0..roi.x0 + roi.width {
                    sum += img.pixel(x, y)[channel.index()];
                }
            }
            let naive = sum / (roi.width * roi.height) as f64;
            let got = segscore::mean_channel_intensity(&img, &roi, channel).unwrap();
            if (got - naive).abs() > 1e-12 {
                bad[1] += 1;
            }
        }

        let score = segscore::infarction_score(&green, &red);
        let score_ok = if nr.is_empty() {
            score.is_err()
        } else {
            score.map(|s| s == ng.len() as f64 / nr.len() as f64).unwrap_or(false)
        };
        if !score_ok {
            bad[2] += 1;
        }

        let inter = ng.intersection(&nr).count();
        let naive_dice = if ng.is_empty() && nr.is_empty() {
            1.0
        } else {
            2.0 * inter as f64 / (ng.len() + nr.len()) as f64
        };
        if segscore::dice(&green, &red).unwrap() != naive_dice {
            bad[3] += 1;
        }
    }
    bad
}
