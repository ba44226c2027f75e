//! Trains the GAN on patches from a single normal phantom and saves a
//! checkpoint with its loss log.
//!
//! `cargo run --example train_gan -- [EPOCHS] [CHECKPOINT]`

use fibroscore::model::{checkpoint_id, GanModel, DEFAULT_LATENT_DIM, PATCH_SIZE};
use fibroscore::phantom::{gen_normal, PhantomSpec};
use fibroscore::trainer::{sample_patches, train, TrainConfig};

fn main() -> fibroscore::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let path = args.next().unwrap_or_else(|| "model.ckpt".into());

    let normal = gen_normal(&PhantomSpec::default().with_seed(1))?;
    let patches = sample_patches(&normal.image, 64, PATCH_SIZE, 1)?;
    let cfg = TrainConfig { epochs, seed: 1, ..TrainConfig::default() };
    let (model, log) = train(GanModel::build(cfg.seed, DEFAULT_LATENT_DIM)?, &patches, &cfg)?;

    print!("{}", log.to_csv());
    model.save_checkpoint(&path)?;
    println!("{} parameters, checkpoint {path} ({})", model.parameter_count(), checkpoint_id(&model.to_checkpoint_bytes()));
    Ok(())
}
