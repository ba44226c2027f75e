//! Generator and discriminator of the one-shot GAN.
//!
//! Layer widths:
//!
//! | network       | layer            | shape                       |
//! |---------------|------------------|-----------------------------|
//! | generator     | dense            | `latent -> 128 x 6 x 6`     |
//! | generator     | conv-transpose 1 | `128 -> 64`, 6 -> 24        |
//! | generator     | conv-transpose 2 | `64 -> 3`, 24 -> 96 (head)  |
//! | discriminator | conv 1           | `3 -> 64`, 96 -> 24         |
//! | discriminator | conv 2           | `64 -> 128`, 24 -> 6        |
//! | discriminator | dense            | `128*6*6 -> 1`              |
//!
//! Every (transposed) convolution uses a 4x4 kernel with stride 4 and no
//! padding. Hidden layers use leaky ReLU (0.2); the generator ends in `tanh`
//! mapped onto `[0, 1]`, the discriminator in a sigmoid. The flattened output
//! of the second discriminator convolution is the bottleneck feature vector.

use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::rng;
use crate::tensor::{Activation, Graph, Tensor, Var};

pub const PATCH_SIZE: usize = 96;
pub const CHANNELS: usize = 3;
pub const DEFAULT_LATENT_DIM: usize = 100;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const INIT_STD: f64 = 0.02;

pub const GEN_DENSE_CHANNELS: usize = 128;
pub const GEN_UP_CHANNELS: usize = 64;
pub const DISC_CONV1_CHANNELS: usize = 64;
pub const DISC_CONV2_CHANNELS: usize = 128;
pub const KERNEL: usize = 4;
pub const STRIDE: usize = 4;
pub const PADDING: usize = 0;

/// Spatial extent after one stride-4 convolution of the input patch.
pub const MID_EXTENT: usize = (PATCH_SIZE - KERNEL) / STRIDE + 1;
/// Spatial extent of the discriminator bottleneck and of the generator seed grid.
pub const BASE_EXTENT: usize = (MID_EXTENT - KERNEL) / STRIDE + 1;
/// Dimension of [`FeatureVector`]s.
pub const FEATURE_DIM: usize = DISC_CONV2_CHANNELS * BASE_EXTENT * BASE_EXTENT;

pub const ARCH_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"FSC1";
const FORMAT_VERSION: u32 = 1;

const _: () = assert!(MID_EXTENT == 24 && BASE_EXTENT == 6 && FEATURE_DIM == 4608);

/// Bottleneck activations of the discriminator for one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub fc_w: Tensor,
    pub fc_b: Tensor,
    pub up1_w: Tensor,
    pub up1_b: Tensor,
    pub up2_w: Tensor,
    pub up2_b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub conv1_w: Tensor,
    pub conv1_b: Tensor,
    pub conv2_w: Tensor,
    pub conv2_b: Tensor,
    pub fc_w: Tensor,
    pub fc_b: Tensor,
}

/// Generator parameters recorded on a [`Graph`].
#[derive(Debug, Clone, Copy)]
pub struct GeneratorVars {
    pub fc_w: Var,
    pub fc_b: Var,
    pub up1_w: Var,
    pub up1_b: Var,
    pub up2_w: Var,
    pub up2_b: Var,
}

impl GeneratorVars {
    pub fn all(&self) -> [Var; 6] {
        [self.fc_w, self.fc_b, self.up1_w, self.up1_b, self.up2_w, self.up2_b]
    }
}

/// Discriminator parameters recorded on a [`Graph`].
#[derive(Debug, Clone, Copy)]
pub struct DiscriminatorVars {
    pub conv1_w: Var,
    pub conv1_b: Var,
    pub conv2_w: Var,
    pub conv2_b: Var,
    pub fc_w: Var,
    pub fc_b: Var,
}

impl DiscriminatorVars {
    pub fn all(&self) -> [Var; 6] {
        [self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b, self.fc_w, self.fc_b]
    }
}

/// Outputs of a discriminator pass.
#[derive(Debug, Clone, Copy)]
pub struct DiscriminatorOutput {
    /// Probability that the input is a real patch, `[N, 1]` or `[1]`.
    pub prob: Var,
    /// Flattened bottleneck, `[N, FEATURE_DIM]` or `[FEATURE_DIM]`.
    pub features: Var,
}

fn register(g: &mut Graph, t: &Tensor, trainable: bool) -> Result<Var> {
    if trainable {
        g.leaf(t.clone().with_requires_grad(true))
    } else {
        g.constant(t.clone())
    }
}

impl Generator {
    fn build(latent_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let dense_out = GEN_DENSE_CHANNELS * BASE_EXTENT * BASE_EXTENT;
        Generator {
            fc_w: init(&[dense_out, latent_dim], rng),
            fc_b: Tensor::zeros(&[dense_out]),
            up1_w: init(&[GEN_DENSE_CHANNELS, GEN_UP_CHANNELS, KERNEL, KERNEL], rng),
            up1_b: Tensor::zeros(&[GEN_UP_CHANNELS]),
            up2_w: init(&[GEN_UP_CHANNELS, CHANNELS, KERNEL, KERNEL], rng),
            up2_b: Tensor::zeros(&[CHANNELS]),
        }
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 6] {
        [
            ("gen.fc.weight", &self.fc_w),
            ("gen.fc.bias", &self.fc_b),
            ("gen.up1.weight", &self.up1_w),
            ("gen.up1.bias", &self.up1_b),
            ("gen.up2.weight", &self.up2_w),
            ("gen.up2.bias", &self.up2_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.fc_w,
            &mut self.fc_b,
            &mut self.up1_w,
            &mut self.up1_b,
            &mut self.up2_w,
            &mut self.up2_b,
        ]
    }

    pub fn register(&self, g: &mut Graph, trainable: bool) -> Result<GeneratorVars> {
        Ok(GeneratorVars {
            fc_w: register(g, &self.fc_w, trainable)?,
            fc_b: register(g, &self.fc_b, trainable)?,
            up1_w: register(g, &self.up1_w, trainable)?,
            up1_b: register(g, &self.up1_b, trainable)?,
            up2_w: register(g, &self.up2_w, trainable)?,
            up2_b: register(g, &self.up2_b, trainable)?,
        })
    }

    /// `z` is `[latent]` or `[N, latent]`; the result is `[3, 96, 96]` or
    /// `[N, 3, 96, 96]` with values in `[0, 1]`.
    pub fn forward(g: &mut Graph, p: &GeneratorVars, z: Var) -> Result<Var> {
        let batch = match g.value(z).shape() {
            [_] => None,
            [n, _] => Some(*n),
            s => return Err(Error::shape(format!("latent must be [d] or [N,d], got {s:?}"))),
        };
        let h = g.dense(z, p.fc_w, p.fc_b)?;
        let h = g.activation(h, Activation::LeakyRelu(LEAKY_SLOPE))?;
        let grid = [GEN_DENSE_CHANNELS, BASE_EXTENT, BASE_EXTENT];
        let h = match batch {
            None => g.reshape(h, &grid)?,
            Some(n) => g.reshape(h, &[n, grid[0], grid[1], grid[2]])?,
        };
        let h = g.conv_transpose2d(h, p.up1_w, p.up1_b, STRIDE, PADDING)?;
        let h = g.activation(h, Activation::LeakyRelu(LEAKY_SLOPE))?;
        let h = g.conv_transpose2d(h, p.up2_w, p.up2_b, STRIDE, PADDING)?;
        let h = g.activation(h, Activation::Tanh)?;
        g.affine(h, 0.5, 0.5)
    }
}

impl Discriminator {
    fn build(rng: &mut ChaCha8Rng) -> Self {
        Discriminator {
            conv1_w: init(&[DISC_CONV1_CHANNELS, CHANNELS, KERNEL, KERNEL], rng),
            conv1_b: Tensor::zeros(&[DISC_CONV1_CHANNELS]),
            conv2_w: init(&[DISC_CONV2_CHANNELS, DISC_CONV1_CHANNELS, KERNEL, KERNEL], rng),
            conv2_b: Tensor::zeros(&[DISC_CONV2_CHANNELS]),
            fc_w: init(&[1, FEATURE_DIM], rng),
            fc_b: Tensor::zeros(&[1]),
        }
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 6] {
        [
            ("disc.conv1.weight", &self.conv1_w),
            ("disc.conv1.bias", &self.conv1_b),
            ("disc.conv2.weight", &self.conv2_w),
            ("disc.conv2.bias", &self.conv2_b),
            ("disc.fc.weight", &self.fc_w),
            ("disc.fc.bias", &self.fc_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc_w,
            &mut self.fc_b,
        ]
    }

    pub fn register(&self, g: &mut Graph, trainable: bool) -> Result<DiscriminatorVars> {
        Ok(DiscriminatorVars {
            conv1_w: register(g, &self.conv1_w, trainable)?,
            conv1_b: register(g, &self.conv1_b, trainable)?,
            conv2_w: register(g, &self.conv2_w, trainable)?,
            conv2_b: register(g, &self.conv2_b, trainable)?,
            fc_w: register(g, &self.fc_w, trainable)?,
            fc_b: register(g, &self.fc_b, trainable)?,
        })
    }

    /// `x` is `[3, 96, 96]` or `[N, 3, 96, 96]`.
    pub fn forward(g: &mut Graph, p: &DiscriminatorVars, x: Var) -> Result<DiscriminatorOutput> {
        let batch = match *g.value(x).shape() {
            [CHANNELS, PATCH_SIZE, PATCH_SIZE] => None,
            [n, CHANNELS, PATCH_SIZE, PATCH_SIZE] => Some(n),
            ref s => {
                return Err(Error::shape(format!(
                    "discriminator expects [3,{PATCH_SIZE},{PATCH_SIZE}] patches, got {s:?}"
                )))
            }
        };
        let h = g.conv2d(x, p.conv1_w, p.conv1_b, STRIDE, PADDING)?;
        let h = g.activation(h, Activation::LeakyRelu(LEAKY_SLOPE))?;
        let h = g.conv2d(h, p.conv2_w, p.conv2_b, STRIDE, PADDING)?;
        let h = g.activation(h, Activation::LeakyRelu(LEAKY_SLOPE))?;
        let features = match batch {
            None => g.reshape(h, &[FEATURE_DIM])?,
            Some(n) => g.reshape(h, &[n, FEATURE_DIM])?,
        };
        let logit = g.dense(features, p.fc_w, p.fc_b)?;
        let prob = g.activation(logit, Activation::Sigmoid)?;
        Ok(DiscriminatorOutput { prob, features })
    }
}

fn init(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    Tensor::from_fn(shape, |_| normal.sample(rng))
}

/// Generator, discriminator and the metadata needed to rebuild them.
#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub generator: Generator,
    pub discriminator: Discriminator,
    latent_dim: usize,
    seed: u64,
}

impl GanModel {
    /// Fresh model with weights drawn from `Normal(0, 0.02)` and zero biases.
    pub fn build(seed: u64, latent_dim: usize) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::Config("latent_dim must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng::derive_seed(seed, "model-init"));
        let generator = Generator::build(latent_dim, &mut rng);
        let discriminator = Discriminator::build(&mut rng);
        Ok(GanModel {
            generator,
            discriminator,
            latent_dim,
            seed,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `(height, width, channels)` of generated and discriminated patches.
    pub fn input_size(&self) -> (usize, usize, usize) {
        (PATCH_SIZE, PATCH_SIZE, CHANNELS)
    }

    pub fn version(&self) -> u32 {
        ARCH_VERSION
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        self.generator
            .tensors()
            .into_iter()
            .chain(self.discriminator.tensors())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn check_latent(&self, len: usize) -> Result<()> {
        if len != self.latent_dim {
            return Err(Error::shape(format!(
                "latent vector of length {len}, model expects {}",
                self.latent_dim
            )));
        }
        Ok(())
    }

    /// Generated patch for latent vector `z`.
    pub fn generate(&self, z: &[f64]) -> Result<RgbImage> {
        self.check_latent(z.len())?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("latent vector contains non-finite values".into()));
        }
        Ok(self.generate_batch(z, 1)?.remove(0))
    }

    /// Generated patches for `n` latent vectors stored row-major in `zs`.
    pub fn generate_batch(&self, zs: &[f64], n: usize) -> Result<Vec<RgbImage>> {
        if n == 0 || zs.len() != n * self.latent_dim {
            return Err(Error::shape(format!(
                "{} latent values for {n} vectors of length {}",
                zs.len(),
                self.latent_dim
            )));
        }
        let mut g = Graph::new();
        let p = self.generator.register(&mut g, false)?;
        let z = g.constant(Tensor::new(&[n, self.latent_dim], zs.to_vec())?)?;
        let out = Generator::forward(&mut g, &p, z)?;
        let plane = CHANNELS * PATCH_SIZE * PATCH_SIZE;
        g.value(out)
            .data()
            .chunks(plane)
            .map(|c| RgbImage::from_planar(PATCH_SIZE, PATCH_SIZE, c.to_vec()))
            .collect()
    }

    fn patch_batch(patches: &[&RgbImage]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(patches.len() * CHANNELS * PATCH_SIZE * PATCH_SIZE);
        for p in patches {
            if p.width() != PATCH_SIZE || p.height() != PATCH_SIZE {
                return Err(Error::shape(format!(
                    "patch is {}x{}, expected {PATCH_SIZE}x{PATCH_SIZE}",
                    p.width(),
                    p.height()
                )));
            }
            data.extend_from_slice(p.data());
        }
        Tensor::new(&[patches.len(), CHANNELS, PATCH_SIZE, PATCH_SIZE], data)
    }

    /// Probability in (0, 1) that `patch` is a real patch.
    pub fn discriminate(&self, patch: &RgbImage) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.discriminator.register(&mut g, false)?;
        let x = g.constant(Self::patch_batch(&[patch])?)?;
        let out = Discriminator::forward(&mut g, &p, x)?;
        Ok(g.value(out.prob).data()[0])
    }

    /// Bottleneck features of `patch`, of dimension [`FEATURE_DIM`].
    pub fn extract_features(&self, patch: &RgbImage) -> Result<FeatureVector> {
        Ok(self.extract_features_batch(&[patch])?.remove(0))
    }

    pub fn extract_features_batch(&self, patches: &[&RgbImage]) -> Result<Vec<FeatureVector>> {
        if patches.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let p = self.discriminator.register(&mut g, false)?;
        let x = g.constant(Self::patch_batch(patches)?)?;
        let out = Discriminator::forward(&mut g, &p, x)?;
        Ok(g.value(out.features)
            .data()
            .chunks(FEATURE_DIM)
            .map(|c| FeatureVector {
                values: c.to_vec(),
                source: None,
            })
            .collect())
    }

    /// Serialized checkpoint: magic `FSC1`, a self-describing little-endian
    /// header, then every parameter as raw little-endian `f64`.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let tensors = self.named_tensors();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&ARCH_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.latent_dim as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for d in [PATCH_SIZE, PATCH_SIZE, CHANNELS] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in &tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
        for (_, t) in &tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::CheckpointFormat("bad magic, expected FSC1".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointFormat(format!("format version {version} is not supported")));
        }
        let arch = r.u32()?;
        let latent_dim = r.u32()? as usize;
        let seed = r.u64()?;
        let input = [r.u32()?, r.u32()?, r.u32()?];
        let count = r.u32()? as usize;
        if count > 64 {
            return Err(Error::CheckpointCorrupt(format!("implausible tensor count {count}")));
        }
        let mut header = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::CheckpointCorrupt("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(Error::CheckpointCorrupt(format!("implausible rank {rank}")));
            }
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            header.push((name, shape));
        }
        let declared: usize = header.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        let payload = bytes.len() - r.pos;
        if payload != declared * 8 {
            return Err(Error::CheckpointCorrupt(format!(
                "header declares {declared} values ({} bytes) but payload has {payload} bytes",
                declared * 8
            )));
        }
        if arch != ARCH_VERSION || input != [PATCH_SIZE as u32, PATCH_SIZE as u32, CHANNELS as u32] {
            return Err(Error::CheckpointFormat(format!(
                "architecture {arch} with input {input:?} is not supported"
            )));
        }
        if latent_dim == 0 {
            return Err(Error::CheckpointFormat("latent_dim is zero".into()));
        }
        let mut model = GanModel::build(seed, latent_dim)?;
        let expected: Vec<(String, Vec<usize>)> = model
            .named_tensors()
            .iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
            .collect();
        if expected != header {
            return Err(Error::CheckpointFormat("tensor layout does not match the architecture".into()));
        }
        let targets = model
            .generator
            .tensors_mut()
            .into_iter()
            .chain(model.discriminator.tensors_mut());
        for t in targets {
            for v in t.data_mut() {
                *v = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            }
        }
        Ok(model)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}

/// Short content hash identifying a checkpoint.
pub fn checkpoint_id(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::CheckpointCorrupt(format!("truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model() -> GanModel {
        GanModel::build(3, 8).unwrap()
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let a = GanModel::build(11, DEFAULT_LATENT_DIM).unwrap();
        let b = GanModel::build(11, DEFAULT_LATENT_DIM).unwrap();
        let c = GanModel::build(12, DEFAULT_LATENT_DIM).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.generator.fc_w, c.generator.fc_w);
        assert!(GanModel::build(1, 0).is_err());
    }

    #[test]
    fn generate_shape_range_and_purity() {
        let m = small_model();
        let z: Vec<f64> = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
        let a = m.generate(&z).unwrap();
        assert_eq!((a.width(), a.height()), (PATCH_SIZE, PATCH_SIZE));
        assert_eq!(a, m.generate(&z).unwrap());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(matches!(m.generate(&z[..7]), Err(Error::Shape(_))));
    }

    #[test]
    fn batch_generation_matches_single() {
        let m = small_model();
        let zs: Vec<f64> = (0..24).map(|i| ((i * 13) % 7) as f64 * 0.25 - 0.7).collect();
        let batch = m.generate_batch(&zs, 3).unwrap();
        for (i, img) in batch.iter().enumerate() {
            let single = m.generate(&zs[i * 8..(i + 1) * 8]).unwrap();
            for (a, b) in img.data().iter().zip(single.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn discriminator_output_and_features() {
        let m = small_model();
        let p = RgbImage::from_fn(PATCH_SIZE, PATCH_SIZE, |x, y| [(x % 5) as f64 / 5.0, (y % 3) as f64 / 3.0, 0.5]);
        let d = m.discriminate(&p).unwrap();
        assert!(d > 0.0 && d < 1.0);
        assert_eq!(d, m.discriminate(&p).unwrap());
        let f = m.extract_features(&p).unwrap();
        assert_eq!(f.values.len(), FEATURE_DIM);
        assert_eq!(f, m.extract_features(&p).unwrap());
        let wrong = RgbImage::new(64, 64);
        assert!(matches!(m.discriminate(&wrong), Err(Error::Shape(_))));
        assert!(matches!(m.extract_features(&wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn feature_dimension_from_shape_arithmetic() {
        let conv = |n: usize| (n + 2 * PADDING - KERNEL) / STRIDE + 1;
        assert_eq!(FEATURE_DIM, conv(conv(96)) * conv(conv(96)) * 128);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let m = small_model();
        let bytes = m.to_checkpoint_bytes();
        assert_eq!(&bytes[..4], b"FSC1");
        let back = GanModel::from_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        for ((_, a), (_, b)) in m.named_tensors().iter().zip(back.named_tensors()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn checkpoint_errors() {
        assert!(matches!(
            GanModel::from_checkpoint_bytes(&[]),
            Err(Error::CheckpointCorrupt(_))
        ));
        let bytes = small_model().to_checkpoint_bytes();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            GanModel::from_checkpoint_bytes(&bad_magic),
            Err(Error::CheckpointFormat(_))
        ));
        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(matches!(
            GanModel::from_checkpoint_bytes(&bad_version),
            Err(Error::CheckpointFormat(_))
        ));
        assert!(matches!(
            GanModel::from_checkpoint_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::CheckpointCorrupt(_))
        ));
    }

    #[test]
    fn checkpoint_shape_inconsistent_with_payload() {
        let bytes = small_model().to_checkpoint_bytes();
        // First tensor dims start after magic, versions, latent, seed, input
        // size, count, name length, name and rank.
        let name = b"gen.fc.weight";
        let dims_at = 4 + 4 + 4 + 4 + 8 + 12 + 4 + 4 + name.len() + 4;
        assert_eq!(&bytes[dims_at - 4 - name.len()..dims_at - 4], name);
        let mut corrupt = bytes.clone();
        let d0 = u32::from_le_bytes(corrupt[dims_at..dims_at + 4].try_into().unwrap());
        corrupt[dims_at..dims_at + 4].copy_from_slice(&(d0 + 1).to_le_bytes());
        assert!(matches!(
            GanModel::from_checkpoint_bytes(&corrupt),
            Err(Error::CheckpointCorrupt(_))
        ));
    }
}
