//! Command-line front end: argument and config-file handling, artifact
//! writing and error reporting.
//!
//! Every flag may also come from a JSON file given with `--config`. Top-level
//! keys apply to every command and an object under a command's name applies
//! to that command only; flags given on the command line win.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::anomaly::{AnomalyConfig, ZMode};
use crate::embed::{self, TsneConfig};
use crate::error::{Error, Result};
use crate::image::{self, Channel, RgbImage};
use crate::model::{checkpoint_id, GanModel, DEFAULT_LATENT_DIM, PATCH_SIZE};
use crate::phantom::{self, Manifest, SeriesSpec};
use crate::plot;
use crate::rng;
use crate::roi::{self, DetectParams, Roi};
use crate::segscore::{self, InfarctionReport, ScoreOptions, ScoreOutcome, SegMask};
use crate::trainer::{self, TrainConfig};

const TOOL: &str = env!("CARGO_PKG_NAME");
const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "fibroscore", version, about = "One-shot GAN fibrosis scoring for SHG heart images")]
struct Cli {
    /// JSON file supplying defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic phantom series.
    Synth(SynthArgs),
    /// Train the GAN on patches of one normal image.
    Train(TrainArgs),
    /// Score one image and print its report.
    Score(QueryArgs),
    /// Write green and red segmentation masks.
    Segment(QueryArgs),
    /// Write the residual heat map and reconstruction.
    Heatmap(QueryArgs),
    /// Project bottleneck features of image patches with t-SNE.
    Embed(EmbedArgs),
    /// Score every query of a phantom series against its ground truth.
    Eval(EvalArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Score(_) => "score",
            Command::Segment(_) => "segment",
            Command::Heatmap(_) => "heatmap",
            Command::Embed(_) => "embed",
            Command::Eval(_) => "eval",
        }
    }
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct SynthArgs {
    /// Series description (JSON); the built-in three-timepoint series if absent.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the series seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct TrainArgs {
    #[arg(long)]
    image: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    patches: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Restrict patch sampling to `x0,y0,w,h`.
    #[arg(long)]
    roi: Option<String>,
    /// Also save a checkpoint every N epochs.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Training log CSV; defaults to the checkpoint path with `.log.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
}

/// Query-time settings shared by `score`, `segment`, `heatmap` and `eval`.
#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default)]
struct AnomalyArgs {
    /// `search` optimises latents towards the query, `random` uses them as drawn.
    #[arg(long)]
    z_mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Latent search steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Latent search learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Latent samples for threshold estimation.
    #[arg(long)]
    n_z: Option<usize>,
    /// Segment the 96x96 resized ROI instead of the native one.
    #[arg(long)]
    score_on_resized: bool,
}

impl AnomalyArgs {
    fn options(&self) -> Result<ScoreOptions> {
        let d = AnomalyConfig::default();
        let anomaly = AnomalyConfig {
            lambda: self.lambda.unwrap_or(d.lambda),
            steps: self.steps.unwrap_or(d.steps),
            lr: self.lr.unwrap_or(d.lr),
            n_z: self.n_z.unwrap_or(d.n_z),
            seed: self.seed.unwrap_or(d.seed),
            z_mode: self.z_mode.as_deref().map(str::parse).transpose()?.unwrap_or(ZMode::Search),
        };
        anomaly.validate()?;
        Ok(ScoreOptions {
            anomaly,
            on_resized: self.score_on_resized,
        })
    }
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct QueryArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
    /// Region of interest `x0,y0,w,h`; the whole image if neither this nor
    /// `--roi-auto` is given.
    #[arg(long, conflicts_with = "roi_auto")]
    roi: Option<String>,
    /// Detect the region of interest from image brightness.
    #[arg(long)]
    roi_auto: bool,
    /// Output directory for masks and heat maps.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Timepoint label recorded in the report.
    #[arg(long)]
    label: Option<String>,
    /// Ground-truth green mask (PNG) for a Dice score.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    anomaly: AnomalyArgs,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct EmbedArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Phantom series whose normal and query images are embedded.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// `PATH=LABEL`, repeatable.
    #[arg(long = "image")]
    images: Vec<String>,
    /// Region of interest applied to `--image` inputs.
    #[arg(long)]
    roi: Option<String>,
    /// Patches sampled per image.
    #[arg(long)]
    per_image: Option<usize>,
    #[arg(long)]
    perplexity: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct EvalArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Detect each query's ROI instead of using the series ventricle.
    #[arg(long)]
    roi_auto: bool,
    #[command(flatten)]
    #[serde(flatten)]
    anomaly: AnomalyArgs,
}

/// Runs the CLI and returns the process exit code. Errors are printed to
/// stderr as one JSON object.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", json!({ "error": "UsageError", "message": e.to_string(), "exit_code": 2 }));
            return 2;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string(), "exit_code": code }));
            code
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let v: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            if !v.is_object() {
                return Err(Error::Config(format!("{} must hold a JSON object", path.display())));
            }
            v
        }
        None => Value::Object(Map::new()),
    };
    let name = cli.command.name();
    match cli.command {
        Command::Synth(a) => synth(&resolve(&a, &file, name)?, name),
        Command::Train(a) => train(&resolve(&a, &file, name)?, name),
        Command::Score(a) => query(&resolve(&a, &file, name)?, name),
        Command::Segment(a) => query(&resolve(&a, &file, name)?, name),
        Command::Heatmap(a) => query(&resolve(&a, &file, name)?, name),
        Command::Embed(a) => embed(&resolve(&a, &file, name)?, name),
        Command::Eval(a) => eval(&resolve(&a, &file, name)?, name),
    }
}

const COMMANDS: [&str; 7] = ["synth", "train", "score", "segment", "heatmap", "embed", "eval"];

/// File values overlaid by the command's section, overlaid by set flags.
fn resolve<T: Serialize + DeserializeOwned>(cli: &T, file: &Value, command: &str) -> Result<T> {
    let mut merged = Map::new();
    if let Value::Object(top) = file {
        for (k, v) in top {
            if !COMMANDS.contains(&k.as_str()) {
                merged.insert(k.clone(), v.clone());
            }
        }
        if let Some(Value::Object(section)) = top.get(command) {
            merged.extend(section.clone());
        }
    }
    if let Value::Object(flags) = serde_json::to_value(cli)? {
        for (k, v) in flags {
            let unset = match &v {
                Value::Null => true,
                Value::Bool(b) => !b,
                Value::Array(a) => a.is_empty(),
                _ => false,
            };
            if !unset {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(format!("{command} options: {e}")))
}

fn provenance<T: Serialize>(command: &str, seed: u64, resolved: &T) -> Result<Value> {
    let config = serde_json::to_value(resolved)?;
    let hash = Sha256::digest(serde_json::to_string(&config)?.as_bytes());
    let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
    Ok(json!({
        "tool": TOOL,
        "version": VERSION,
        "command": command,
        "seed": seed,
        "config_hash": format!("sha256:{hex}"),
        "config": config,
    }))
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
    value.as_ref().ok_or_else(|| Error::Config(format!("missing --{flag}")))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn print_json(value: &impl Serialize) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value)? + "\n";
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn parse_roi(text: &str) -> Result<Roi> {
    text.parse()
}

fn load_model(path: &Path) -> Result<(GanModel, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let model = GanModel::from_checkpoint_bytes(&bytes)?;
    Ok((model, checkpoint_id(&bytes)))
}

fn synth(a: &SynthArgs, command: &str) -> Result<()> {
    let out = required(&a.out, "out")?;
    let mut series = match &a.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<SeriesSpec>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => SeriesSpec::default(),
    };
    if let Some(seed) = a.seed {
        series.base.seed = seed;
    }
    let mut manifest = phantom::gen_series(&series, out)?;
    manifest.provenance = Some(provenance(command, series.base.seed, &json!({ "args": a, "series": series }))?);
    manifest.save(out.join(phantom::MANIFEST_FILE))?;
    print_json(&manifest)
}

fn train(a: &TrainArgs, command: &str) -> Result<()> {
    let image_path = required(&a.image, "image")?;
    let out = required(&a.out, "out")?;
    let size = a.size.unwrap_or(PATCH_SIZE);
    if size != PATCH_SIZE {
        return Err(Error::Config(format!("--size must be {PATCH_SIZE}, the network input size")));
    }
    let seed = a.seed.unwrap_or(0);
    let image = RgbImage::load_png(image_path)?;
    let source = match &a.roi {
        Some(text) => roi::crop_roi(&image, &parse_roi(text)?)?,
        None => image,
    };
    let patches = trainer::sample_patches(&source, a.patches.unwrap_or(trainer::DEFAULT_PATCHES), size, seed)?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: a.epochs.unwrap_or(trainer::DEFAULT_EPOCHS),
        batch_size: a.batch_size.unwrap_or(trainer::DEFAULT_BATCH_SIZE),
        seed,
        checkpoint_every: a.checkpoint_every.unwrap_or(0),
        ..defaults
    };
    let model = GanModel::build(seed, a.latent_dim.unwrap_or(DEFAULT_LATENT_DIM))?;
    let (model, log) = trainer::train_with(model, &patches, &cfg, |epoch, m| {
        m.save_checkpoint(with_suffix(out, &format!(".epoch{epoch}")))
    })?;
    model.save_checkpoint(out)?;
    let log_path = a.log.clone().unwrap_or_else(|| with_suffix(out, ".log.csv"));
    log.write_csv(&log_path)?;
    let (_, id) = load_model(out)?;
    let summary = json!({
        "checkpoint": out,
        "checkpoint_id": id,
        "parameters": model.parameter_count(),
        "patches": patches.len(),
        "epochs": cfg.epochs,
        "final": log.records.last(),
        "log": log_path,
        "provenance": provenance(command, seed, a)?,
    });
    write_json(&with_suffix(out, ".json"), &summary)?;
    print_json(&summary)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn select_roi(image: &RgbImage, roi: Option<&str>, auto: bool) -> Result<Roi> {
    match (roi, auto) {
        (Some(_), true) => Err(Error::Config("--roi and --roi-auto are exclusive".into())),
        (Some(text), false) => roi::roi_from_config(image, parse_roi(text)?),
        (None, true) => roi::detect_roi_heuristic(image, &DetectParams::default()),
        (None, false) => roi::roi_from_config(image, Roi::full(image)),
    }
}

/// Ground truth over the same pixels the masks cover: the native ROI, or the
/// ROI resized to the network input when scoring on the resized query.
fn truth_mask(bits: &[bool], width: usize, height: usize, roi: &Roi, on_resized: bool) -> Result<SegMask> {
    roi.check_within(width, height)?;
    let native = SegMask::from_full_image(bits, width, *roi, Channel::Green);
    if !on_resized {
        return Ok(native);
    }
    let plane: Vec<f64> = native.bits.iter().map(|&b| b as u8 as f64).collect();
    let resized = image::resize_plane(&plane, roi.width, roi.height, PATCH_SIZE, PATCH_SIZE);
    Ok(SegMask {
        roi: Roi::new(0, 0, PATCH_SIZE, PATCH_SIZE),
        bits: resized.iter().map(|&v| v >= 0.5).collect(),
        ..native
    })
}

fn load_truth(path: &Path, image: &RgbImage, roi: &Roi, on_resized: bool) -> Result<SegMask> {
    let (w, h, bits) = image::load_bitmap_png(path)?;
    if (w, h) != (image.width(), image.height()) {
        return Err(Error::shape(format!(
            "truth mask is {w}x{h} but the image is {}x{}",
            image.width(),
            image.height()
        )));
    }
    truth_mask(&bits, w, h, roi, on_resized)
}

/// Mask bits placed on a canvas of the host image (or resized query) size.
fn mask_overlay(mask: &SegMask, width: usize, height: usize) -> Vec<bool> {
    let mut bits = vec![false; width * height];
    for (x, y) in mask.coordinates() {
        bits[y * width + x] = true;
    }
    bits
}

fn write_masks(dir: &Path, prefix: &str, outcome: &ScoreOutcome, image: &RgbImage) -> Result<()> {
    let (w, h) = if outcome.report.scored_on_resized {
        (PATCH_SIZE, PATCH_SIZE)
    } else {
        (image.width(), image.height())
    };
    for mask in [&outcome.green, &outcome.red] {
        let name = format!("{prefix}{}_mask", mask.channel.name());
        image::save_bitmap_png(dir.join(format!("{name}.png")), w, h, &mask_overlay(mask, w, h))?;
        write_text(&dir.join(format!("{name}.csv")), &mask.to_csv())?;
    }
    Ok(())
}

fn write_heatmap(dir: &Path, prefix: &str, outcome: &ScoreOutcome) -> Result<()> {
    let hm = &outcome.heatmap;
    image::save_gray_png(dir.join(format!("{prefix}heatmap.png")), hm.width, hm.height, &hm.values)?;
    write_text(&dir.join(format!("{prefix}heatmap.csv")), &hm.to_csv())?;
    outcome.best.reconstruction.save_png(dir.join(format!("{prefix}reconstruction.png")))
}

#[derive(Debug, Serialize)]
struct ScoredReport<'a> {
    #[serde(flatten)]
    report: &'a InfarctionReport,
    dice: Option<f64>,
}

fn query(a: &QueryArgs, command: &str) -> Result<()> {
    let (model, id) = load_model(required(&a.model, "model")?)?;
    let image_path = required(&a.image, "image")?;
    let image = RgbImage::load_png(image_path)?;
    let roi = select_roi(&image, a.roi.as_deref(), a.roi_auto)?;
    let opts = a.anomaly.options()?;
    let out = match command {
        "score" => a.out.as_ref(),
        _ => Some(required(&a.out, "out")?),
    };
    let image_id = image_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let label = a.label.clone().unwrap_or_else(|| image_id.clone());
    let outcome = segscore::score_image(&model, &image, &roi, &image_id, &label, &id, &opts)?;
    let dice = match &a.truth {
        Some(path) => Some(segscore::dice(&outcome.green, &load_truth(path, &image, &roi, opts.on_resized)?)?),
        None => None,
    };
    let prov = provenance(command, opts.anomaly.seed, a)?;
    let report = ScoredReport {
        report: &outcome.report,
        dice,
    };
    if let Some(dir) = out {
        create_dir(dir)?;
        if command != "heatmap" {
            write_masks(dir, "", &outcome, &image)?;
        }
        if command != "segment" {
            write_heatmap(dir, "", &outcome)?;
        }
        if command == "score" {
            write_json(&dir.join("report.json"), &json!({ "report": report, "provenance": prov }))?;
        } else {
            write_json(&dir.join("provenance.json"), &prov)?;
        }
    }
    if command == "score" {
        print_json(&json!({ "report": report, "provenance": prov }))?;
    }
    Ok(())
}

fn embed(a: &EmbedArgs, command: &str) -> Result<()> {
    let (model, _) = load_model(required(&a.model, "model")?)?;
    let out = required(&a.out, "out")?;
    let seed = a.seed.unwrap_or(0);
    let per_image = a.per_image.unwrap_or(50);
    let mut sources: Vec<(PathBuf, String, Option<Roi>)> = Vec::new();
    if let Some(path) = &a.manifest {
        let m = Manifest::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in std::iter::once(&m.normal).chain(&m.queries) {
            sources.push((base.join(&e.path), e.label.clone(), Some(m.ventricle)));
        }
    }
    let roi = a.roi.as_deref().map(parse_roi).transpose()?;
    for spec in &a.images {
        let (path, label) = spec
            .rsplit_once('=')
            .ok_or_else(|| Error::Config(format!("--image '{spec}' is not PATH=LABEL")))?;
        sources.push((PathBuf::from(path), label.to_string(), roi));
    }
    if sources.is_empty() {
        return Err(Error::Config("embed needs --manifest or at least one --image".into()));
    }
    let mut patches = Vec::new();
    let mut labels = Vec::new();
    for (i, (path, label, roi)) in sources.iter().enumerate() {
        let image = RgbImage::load_png(path)?;
        let region = match roi {
            Some(r) => roi::crop_roi(&image, r)?,
            None => image,
        };
        let set = trainer::sample_patches(&region, per_image, PATCH_SIZE, rng::derive_seed(seed, &format!("embed-{i}")))?;
        labels.extend(std::iter::repeat_n(label.clone(), set.len()));
        patches.extend(set.patches);
    }
    let emb = embed::collect_embeddings(&model, &patches, &labels)?;
    let cfg = TsneConfig {
        perplexity: a.perplexity,
        iterations: a.iterations.unwrap_or(TsneConfig::default().iterations),
        seed,
        ..TsneConfig::default()
    };
    let res = embed::tsne_project(&emb.rows, &cfg)?;
    create_dir(out)?;
    write_text(&out.join("embedding.csv"), &embed::coords_to_csv(&res.coords, &labels))?;
    write_text(
        &out.join("embedding.svg"),
        &plot::scatter_svg(&res.coords, &labels, "t-SNE of discriminator features"),
    )?;
    let first = labels[0].clone();
    let mut separations = Map::new();
    let mut seen = vec![first.clone()];
    for l in &labels {
        if !seen.contains(l) {
            seen.push(l.clone());
            let s = embed::separation(&res.coords, &labels, &first, l)?;
            separations.insert(
                format!("{first}/{l}"),
                json!({ "centroid_distance": s.centroid_distance, "mean_spread": s.mean_spread, "ratio": s.ratio() }),
            );
        }
    }
    let summary = json!({
        "points": labels.len(),
        "perplexity": res.perplexity,
        "final_kl": res.final_kl(),
        "kl_trace": res.kl_trace,
        "separation": separations,
        "provenance": provenance(command, seed, a)?,
    });
    write_json(&out.join("embedding.json"), &summary)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalRow {
    label: String,
    phi: f64,
    realized_fraction: f64,
    dice: Option<f64>,
    #[serde(flatten)]
    report: InfarctionReport,
}

fn eval(a: &EvalArgs, command: &str) -> Result<()> {
    let manifest_path = required(&a.manifest, "manifest")?;
    let (model, id) = load_model(required(&a.model, "model")?)?;
    let out = required(&a.out, "out")?;
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let opts = a.anomaly.options()?;
    create_dir(out)?;

    let mut rows = Vec::with_capacity(manifest.queries.len());
    for entry in &manifest.queries {
        let image = RgbImage::load_png(base.join(&entry.path))?;
        let roi = if a.roi_auto {
            roi::detect_roi_heuristic(&image, &DetectParams::default())?
        } else {
            roi::roi_from_config(&image, manifest.ventricle)?
        };
        let stem = entry.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let outcome = segscore::score_image(&model, &image, &roi, &stem, &entry.label, &id, &opts)?;
        let dice = match &entry.truth_path {
            Some(p) => Some(segscore::dice(&outcome.green, &load_truth(&base.join(p), &image, &roi, opts.on_resized)?)?),
            None => None,
        };
        write_masks(out, &format!("{stem}_"), &outcome, &image)?;
        write_heatmap(out, &format!("{stem}_"), &outcome)?;
        rows.push(EvalRow {
            label: entry.label.clone(),
            phi: entry.phi,
            realized_fraction: entry.realized_fraction,
            dice,
            report: outcome.report,
        });
    }

    let mut csv = String::from("label,phi,realized_fraction,score,t_g,t_r,theta_g,theta_r,dice,anomaly_loss,error\n");
    for r in &rows {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.label,
            r.phi,
            r.realized_fraction,
            opt(r.report.score),
            r.report.t_g,
            r.report.t_r,
            r.report.thresholds.green,
            r.report.thresholds.red,
            opt(r.dice),
            r.report.anomaly_loss,
            r.report.error.clone().unwrap_or_default()
        ));
    }
    write_text(&out.join("scores.csv"), &csv)?;
    let labels: Vec<String> = rows.iter().map(|r| r.label.clone()).collect();
    let scores: Vec<Option<f64>> = rows.iter().map(|r| r.report.score).collect();
    write_text(
        &out.join("score_chart.svg"),
        &plot::line_chart_svg(&labels, &scores, "Infarction score by timepoint", "score"),
    )?;
    let increasing = scores.windows(2).all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if b > a));
    let summary = json!({
        "rows": rows,
        "scores_strictly_increasing": increasing,
        "checkpoint_id": id,
        "provenance": provenance(command, opts.anomaly.seed, a)?,
    });
    write_json(&out.join("reports.json"), &summary)?;
    print_json(&summary)
}
