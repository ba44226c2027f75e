//! Embeds discriminator features of normal and infarct patches with t-SNE and
//! writes a labelled scatter plot.
//!
//! `cargo run --example tsne_embedding -- [CHECKPOINT]`

use fibroscore::embed::{collect_embeddings, separation, tsne_project, TsneConfig};
use fibroscore::model::{GanModel, DEFAULT_LATENT_DIM, PATCH_SIZE};
use fibroscore::phantom::{gen_infarct, gen_normal, PhantomSpec};
use fibroscore::plot::scatter_svg;
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

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = model()?;
    let spec = PhantomSpec::default();
    let normal = gen_normal(&spec.with_seed(30))?;
    let infarct = gen_infarct(&spec.with_phi(0.30).with_seed(31))?;

    let mut patches = sample_patches(&crop_roi(&normal.image, &normal.ventricle)?, 30, PATCH_SIZE, 1)?.patches;
    patches.extend(sample_patches(&crop_roi(&infarct.image, &infarct.ventricle)?, 30, PATCH_SIZE, 2)?.patches);
    let labels: Vec<String> = (0..60).map(|i| if i < 30 { "normal" } else { "infarct" }.into()).collect();

    let emb = collect_embeddings(&model, &patches, &labels)?;
    let res = tsne_project(&emb.rows, &TsneConfig::default())?;
    let s = separation(&res.coords, &labels, "normal", "infarct")?;
    println!("perplexity {:.1}, KL {:.4} -> {:.4}", res.perplexity, res.kl_trace[0], res.final_kl());
    println!("centroid distance {:.3}, mean spread {:.3}, ratio {:.2}", s.centroid_distance, s.mean_spread, s.ratio());
    std::fs::write("embedding.svg", scatter_svg(&res.coords, &labels, "Discriminator features"))?;
    println!("scatter plot written to embedding.svg");
    Ok(())
}
