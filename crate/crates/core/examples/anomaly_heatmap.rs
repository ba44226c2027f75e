//! Latent search on a normal and an infarct ventricle crop, followed by the
//! residual heat map of the infarct.
//!
//! `cargo run --example anomaly_heatmap -- [CHECKPOINT]` trains a small model
//! first when no checkpoint is given.

use fibroscore::anomaly::{latent_search, prepare_query, residual_heatmap, AnomalyConfig};
use fibroscore::image::save_gray_png;
use fibroscore::model::{GanModel, DEFAULT_LATENT_DIM, PATCH_SIZE};
use fibroscore::phantom::{gen_infarct, gen_normal, PhantomSpec};
use fibroscore::roi::crop_roi;
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
    let spec = PhantomSpec::default();
    let normal = gen_normal(&spec.with_seed(10))?;
    let infarct = gen_infarct(&spec.with_phi(0.15).with_seed(11))?;
    let cfg = AnomalyConfig::default();

    for (name, p) in [("normal", &normal), ("infarct", &infarct)] {
        let query = prepare_query(&crop_roi(&p.image, &p.ventricle)?);
        let found = latent_search(&model, &query, &cfg)?;
        println!("{name:<8} loss {:.4} -> {:.4} after {} steps", found.trace[0], found.loss, cfg.steps);
        if name == "infarct" {
            let heat = residual_heatmap(&query, &found.reconstruction)?;
            save_gray_png("heatmap.png", heat.width, heat.height, &heat.values)?;
            found.reconstruction.save_png("reconstruction.png")?;
            println!("heat map max residual {:.4}, written to heatmap.png", heat.max());
        }
    }
    Ok(())
}
