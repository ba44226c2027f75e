//! One-shot adversarial training on random patches of a single normal image.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::model::{Discriminator, GanModel, Generator, CHANNELS, PATCH_SIZE};
use crate::rng;
use crate::tensor::{Adam, AdamConfig, Graph, Tensor};

pub const DEFAULT_PATCHES: usize = 1000;
pub const DEFAULT_EPOCHS: usize = 500;
pub const DEFAULT_BATCH_SIZE: usize = 64;

/// Training patches cut from one image.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub patches: Vec<RgbImage>,
    pub size: usize,
    pub source_id: String,
    pub seed: u64,
    /// Top-left corner `(x, y)` of every patch.
    pub coords: Vec<(usize, usize)>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Cuts `count` patches of `size x size` at uniformly random positions.
pub fn sample_patches(image: &RgbImage, count: usize, size: usize, seed: u64) -> Result<PatchSet> {
    if size == 0 || image.width() < size || image.height() < size {
        return Err(Error::ImageTooSmall {
            width: image.width(),
            height: image.height(),
            size,
        });
    }
    let mut rng = rng::stream(seed, "patches");
    let (max_x, max_y) = (image.width() - size, image.height() - size);
    let mut coords = Vec::with_capacity(count);
    let mut patches = Vec::with_capacity(count);
    for _ in 0..count {
        let x = rng.gen_range(0..=max_x);
        let y = rng.gen_range(0..=max_y);
        coords.push((x, y));
        patches.push(image.crop(x, y, size, size)?);
    }
    Ok(PatchSet {
        patches,
        size,
        source_id: String::new(),
        seed,
        coords,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub generator_adam: AdamConfig,
    pub discriminator_adam: AdamConfig,
    pub seed: u64,
    /// Emit a checkpoint every this many epochs; zero disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            generator_adam: AdamConfig::GAN,
            discriminator_adam: AdamConfig::GAN,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, patch_count: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.batch_size > patch_count {
            return Err(Error::Config(format!(
                "batch size {} must lie in [1, {patch_count}]",
                self.batch_size
            )));
        }
        self.generator_adam.validate()?;
        self.discriminator_adam.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_real: f64,
    pub d_fake: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,d_loss,g_loss,d_real,d_fake\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.d_loss, r.g_loss, r.d_real, r.d_fake
            ));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(self.to_csv().as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Adversarial training without checkpoints. See [`train_with`].
pub fn train(model: GanModel, patches: &PatchSet, cfg: &TrainConfig) -> Result<(GanModel, TrainLog)> {
    train_with(model, patches, cfg, |_, _| Ok(()))
}

/// Alternating discriminator/generator updates with binary cross-entropy:
/// the discriminator labels real patches 1 and generated ones 0, the
/// generator is pushed towards a discriminator verdict of 1.
///
/// `on_checkpoint(epoch, model)` runs after every `cfg.checkpoint_every`
/// epochs (1-based epoch numbers).
pub fn train_with(
    mut model: GanModel,
    patches: &PatchSet,
    cfg: &TrainConfig,
    mut on_checkpoint: impl FnMut(usize, &GanModel) -> Result<()>,
) -> Result<(GanModel, TrainLog)> {
    cfg.validate(patches.len())?;
    if patches.size != PATCH_SIZE {
        return Err(Error::shape(format!(
            "training patches are {0}x{0}, the model needs {PATCH_SIZE}x{PATCH_SIZE}",
            patches.size
        )));
    }
    let latent = model.latent_dim();
    let mut order_rng = rng::stream(cfg.seed, "train-order");
    let mut latent_rng = rng::stream(cfg.seed, "train-latent");
    let mut adam_d = Adam::new(cfg.discriminator_adam)?;
    let mut adam_g = Adam::new(cfg.generator_adam)?;
    let mut order: Vec<usize> = (0..patches.len()).collect();
    let mut log = TrainLog::default();
    let plane = CHANNELS * PATCH_SIZE * PATCH_SIZE;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut sums = [0.0f64; 4];
        for batch in order.chunks(cfg.batch_size) {
            let n = batch.len();
            let mut real = Vec::with_capacity(n * plane);
            for &i in batch {
                real.extend_from_slice(patches.patches[i].data());
            }
            let real = Tensor::new(&[n, CHANNELS, PATCH_SIZE, PATCH_SIZE], real)?;
            let z = Tensor::new(&[n, latent], rng::standard_normal(&mut latent_rng, n * latent))?;

            let step = discriminator_step(&mut model, &mut adam_d, real, z.clone())
                .and_then(|(d_loss, d_real, d_fake)| {
                    let g_loss = generator_step(&mut model, &mut adam_g, z)?;
                    Ok([d_loss, g_loss, d_real, d_fake])
                })
                .map_err(|e| diverged(epoch, e))?;
            if step.iter().any(|v| !v.is_finite()) {
                return Err(Error::TrainingDiverged {
                    epoch,
                    detail: format!("non-finite loss {step:?}"),
                });
            }
            for (s, v) in sums.iter_mut().zip(step) {
                *s += v * n as f64;
            }
        }
        let total = patches.len() as f64;
        log.records.push(EpochRecord {
            epoch,
            d_loss: sums[0] / total,
            g_loss: sums[1] / total,
            d_real: sums[2] / total,
            d_fake: sums[3] / total,
        });
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            on_checkpoint(epoch + 1, &model)?;
        }
    }
    Ok((model, log))
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::Numeric(detail) => Error::TrainingDiverged { epoch, detail },
        other => other,
    }
}

/// Returns `(loss, mean D(real), mean D(fake))`.
fn discriminator_step(model: &mut GanModel, adam: &mut Adam, real: Tensor, z: Tensor) -> Result<(f64, f64, f64)> {
    let mut g = Graph::new();
    let gen = model.generator.register(&mut g, false)?;
    let disc = model.discriminator.register(&mut g, true)?;
    let z = g.constant(z)?;
    let fake = Generator::forward(&mut g, &gen, z)?;
    let real = g.constant(real)?;
    let on_real = Discriminator::forward(&mut g, &disc, real)?;
    let on_fake = Discriminator::forward(&mut g, &disc, fake)?;
    let loss_real = g.bce_loss(on_real.prob, 1.0)?;
    let loss_fake = g.bce_loss(on_fake.prob, 0.0)?;
    let loss = g.add(loss_real, loss_fake)?;
    let stats = (
        g.value(loss).item()?,
        mean(g.value(on_real.prob).data()),
        mean(g.value(on_fake.prob).data()),
    );
    if !stats.0.is_finite() {
        return Err(Error::Numeric("discriminator loss".into()));
    }
    g.backward(loss)?;
    let grads: Vec<Vec<f64>> = disc.all().iter().map(|&v| g.take_grad(v).expect("trainable")).collect();
    adam.step(&mut model.discriminator.tensors_mut(), &grads)?;
    Ok(stats)
}

fn generator_step(model: &mut GanModel, adam: &mut Adam, z: Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let gen = model.generator.register(&mut g, true)?;
    let disc = model.discriminator.register(&mut g, false)?;
    let z = g.constant(z)?;
    let fake = Generator::forward(&mut g, &gen, z)?;
    let out = Discriminator::forward(&mut g, &disc, fake)?;
    let loss = g.bce_loss(out.prob, 1.0)?;
    let value = g.value(loss).item()?;
    if !value.is_finite() {
        return Err(Error::Numeric("generator loss".into()));
    }
    g.backward(loss)?;
    let grads: Vec<Vec<f64>> = gen.all().iter().map(|&v| g.take_grad(v).expect("trainable")).collect();
    adam.step(&mut model.generator.tensors_mut(), &grads)?;
    Ok(value)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
