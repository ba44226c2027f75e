//! Segments green (collagen) and red (tissue) inside the ventricle of each
//! phantom in a series and reports the infarction score and Dice.
//!
//! `cargo run --example segment_score -- [CHECKPOINT]`

use fibroscore::anomaly::AnomalyConfig;
use fibroscore::image::Channel;
use fibroscore::model::{GanModel, DEFAULT_LATENT_DIM, PATCH_SIZE};
use fibroscore::phantom::{gen_infarct, gen_normal, PhantomSpec};
use fibroscore::segscore::{dice, score_image, ScoreOptions, SegMask};
use fibroscore::trainer::{sample_patches, train, TrainConfig};

fn model() -> fibroscore::Result<GanModel> {
    if let Some(path) = std::env::args().nth(1) {
        return GanModel::load_checkpoint(path);
    }
    let normal = gen_normal(&PhantomSpec::default().with_seed(1))?;
    let patches = sample_patches(&normal.image, 64, PATCH_SIZE, 1)?;
    let cfg = TrainConfig { epochs: 20, seed: 1, ..TrainConfig::default() };
    Ok(train(GanModel::build(1, DEFAULT_LATENT_DIM)?, &patches, &cfg)?.0)
}

fn main() -> fibroscore::Result<()> {
    let model = model()?;
    let opts = ScoreOptions { anomaly: AnomalyConfig { n_z: 16, ..AnomalyConfig::default() }, on_resized: false };
    println!("{:>5} {:>9} {:>8} {:>7} {:>7} {:>6}", "phi", "realized", "score", "t_g", "t_r", "dice");
    for (i, phi) in [0.05, 0.15, 0.30].into_iter().enumerate() {
        let p = gen_infarct(&PhantomSpec::default().with_phi(phi).with_seed(20 + i as u64))?;
        let out = score_image(&model, &p.image, &p.ventricle, "query", "example", "none", &opts)?;
        let truth = SegMask::from_full_image(&p.truth, p.image.width(), p.ventricle, Channel::Green);
        let score = out.report.score.map_or("n/a".into(), |s| format!("{s:.4}"));
        println!(
            "{phi:>5.2} {:>9.4} {score:>8} {:>7} {:>7} {:>6.3}",
            p.realized_fraction,
            out.report.t_g,
            out.report.t_r,
            dice(&out.green, &truth)?
        );
    }
    Ok(())
}
