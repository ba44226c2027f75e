//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use fibroscore::anomaly::{self, AnomalyConfig};
use fibroscore::embed::{self, TsneConfig};
use fibroscore::model::{GanModel, PATCH_SIZE};
use fibroscore::phantom::{gen_infarct, gen_normal, PhantomSpec};
use fibroscore::rng;
use fibroscore::roi::crop_roi;
use fibroscore::trainer::sample_patches;

const E2E_SEED: &str = "7";
const E2E_PATCHES: &str = "300";
const E2E_EPOCHS: &str = "150";

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let results = common::gradcheck_suite(0..20);
    let elapsed = t.elapsed();
    let worst = results.iter().cloned().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let pass = worst.1 < common::FD_REL_TOL && elapsed < Duration::from_secs(60);
    outcome(
        pass,
        format!("{} ops x 20 seeds, worst rel err {:.2e} ({}), {}", results.len(), worst.1, worst.0, secs(elapsed)),
    )
}

fn oracles() -> Outcome {
    let t = Instant::now();
    let bad = common::oracle_suite(100, 2024);
    let elapsed = t.elapsed();
    let pass = bad == [0; 4] && elapsed < Duration::from_secs(60);
    outcome(
        pass,
        format!("100 fixtures, mismatches mask/mean/score/dice = {bad:?}, {}", secs(elapsed)),
    )
}

fn architecture() -> Outcome {
    let m = GanModel::build(0, 100).unwrap();
    let k = 16;
    let expected: [(&str, usize); 12] = [
        ("gen.fc.weight", 100 * 128 * 36),
        ("gen.fc.bias", 128 * 36),
        ("gen.up1.weight", 128 * 64 * k),
        ("gen.up1.bias", 64),
        ("gen.up2.weight", 64 * 3 * k),
        ("gen.up2.bias", 3),
        ("disc.conv1.weight", 3 * 64 * k),
        ("disc.conv1.bias", 64),
        ("disc.conv2.weight", 64 * 128 * k),
        ("disc.conv2.bias", 128),
        ("disc.fc.weight", 128 * 36),
        ("disc.fc.bias", 1),
    ];
    let got: Vec<(&str, usize)> = m.named_tensors().iter().map(|(n, t)| (*n, t.len())).collect();
    let total: usize = expected.iter().map(|e| e.1).sum();
    outcome(
        got == expected && m.parameter_count() == total,
        format!("{} tensors, {} parameters (closed form {total})", got.len(), m.parameter_count()),
    )
}

fn fibroscore(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fibroscore"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)))
    }
}

struct RunResult {
    dir: PathBuf,
    scores: Vec<Option<f64>>,
    dice: Vec<(f64, Option<f64>)>,
    elapsed: Duration,
}

/// synth -> train -> eval through the command-line binary.
fn pipeline(dir: &Path) -> Result<RunResult, String> {
    let t = Instant::now();
    let _ = std::fs::remove_dir_all(dir);
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    fibroscore(&["synth", "--out", &p("data"), "--seed", E2E_SEED])?;
    fibroscore(&[
        "train", "--image", &p("data/normal.png"), "--out", &p("model.ckpt"),
        "--patches", E2E_PATCHES, "--epochs", E2E_EPOCHS, "--seed", E2E_SEED,
    ])?;
    let stdout = fibroscore(&[
        "eval", "--manifest", &p("data/manifest.json"), "--model", &p("model.ckpt"),
        "--out", &p("report"), "--seed", E2E_SEED,
    ])?;
    let summary: serde_json::Value = serde_json::from_str(&stdout).map_err(|e| e.to_string())?;
    let rows = summary["rows"].as_array().ok_or("eval summary has no rows")?;
    Ok(RunResult {
        dir: dir.to_path_buf(),
        scores: rows.iter().map(|r| r["score"].as_f64()).collect(),
        dice: rows.iter().map(|r| (r["phi"].as_f64().unwrap_or(f64::NAN), r["dice"].as_f64())).collect(),
        elapsed: t.elapsed(),
    })
}

fn end_to_end(run: &Result<RunResult, String>) -> Outcome {
    let run = match run {
        Ok(r) => r,
        Err(e) => return outcome(false, e.clone()),
    };
    let increasing = run.scores.len() == 3
        && run.scores.windows(2).all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if b > a));
    let dice_ok = run
        .dice
        .iter()
        .filter(|(phi, _)| *phi >= 0.15)
        .all(|(_, d)| d.is_some_and(|d| d >= 0.70));
    let fmt = |v: &Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
    outcome(
        increasing && dice_ok,
        format!(
            "scores [{}], dice [{}], {} (target < 1200s)",
            run.scores.iter().map(fmt).collect::<Vec<_>>().join(", "),
            run.dice.iter().map(|(phi, d)| format!("phi {phi}: {}", fmt(d))).collect::<Vec<_>>().join(", "),
            secs(run.elapsed)
        ),
    )
}

/// Files compared between two runs: checkpoint, score table and every mask.
fn determinism_files(dir: &Path) -> Vec<PathBuf> {
    let mut files = vec![dir.join("model.ckpt"), dir.join("report/scores.csv")];
    let mut masks: Vec<PathBuf> = std::fs::read_dir(dir.join("report"))
        .map(|it| it.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    masks.retain(|p| p.file_name().is_some_and(|n| n.to_string_lossy().contains("_mask.")));
    masks.sort();
    files.extend(masks);
    files
}

fn determinism(first: &Result<RunResult, String>, second: &Result<RunResult, String>) -> Outcome {
    let (a, b) = match (first, second) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return outcome(false, e.clone()),
    };
    let fa = determinism_files(&a.dir);
    let mut differing = Vec::new();
    for f in &fa {
        let rel = f.strip_prefix(&a.dir).unwrap();
        let (x, y) = (std::fs::read(f), std::fs::read(b.dir.join(rel)));
        if !matches!((x, y), (Ok(x), Ok(y)) if x == y) {
            differing.push(rel.display().to_string());
        }
    }
    let masks = fa.len() - 2;
    outcome(
        differing.is_empty() && masks == 12,
        format!("checkpoint, scores.csv and {masks} mask files compared; differing: {differing:?}"),
    )
}

fn held_out_pair(trial: u64, phi: f64) -> (fibroscore::image::RgbImage, fibroscore::image::RgbImage) {
    let base = PhantomSpec::default();
    let normal = gen_normal(&base.with_seed(rng::derive_seed(trial, "held-out-normal"))).unwrap();
    let infarct = gen_infarct(&base.with_phi(phi).with_seed(rng::derive_seed(trial, "held-out-infarct"))).unwrap();
    (
        crop_roi(&normal.image, &normal.ventricle).unwrap(),
        crop_roi(&infarct.image, &infarct.ventricle).unwrap(),
    )
}

fn anomaly_separation(model: &Option<GanModel>) -> Outcome {
    let Some(model) = model else {
        return outcome(false, "no trained model from the end-to-end run");
    };
    let phis = [0.05, 0.15, 0.30];
    let mut wins = 0;
    let mut detail = Vec::new();
    for trial in 0..10u64 {
        let (normal, infarct) = held_out_pair(100 + trial, phis[trial as usize % 3]);
        let cfg = AnomalyConfig { seed: trial, ..AnomalyConfig::default() };
        let ln = anomaly::latent_search(model, &anomaly::prepare_query(&normal), &cfg).map(|r| r.loss);
        let li = anomaly::latent_search(model, &anomaly::prepare_query(&infarct), &cfg).map(|r| r.loss);
        if let (Ok(ln), Ok(li)) = (ln, li) {
            wins += (li > ln) as usize;
            detail.push(format!("{ln:.4}<{li:.4}"));
        } else {
            detail.push("error".into());
        }
    }
    outcome(wins >= 9, format!("{wins}/10 trials infarct loss > normal loss [{}]", detail.join(" ")))
}

fn embedding_separation(model: &Option<GanModel>) -> Outcome {
    let Some(model) = model else {
        return outcome(false, "no trained model from the end-to-end run");
    };
    let (normal, infarct) = held_out_pair(500, 0.30);
    let mut patches = sample_patches(&normal, 50, PATCH_SIZE, 1).unwrap().patches;
    patches.extend(sample_patches(&infarct, 50, PATCH_SIZE, 2).unwrap().patches);
    let labels: Vec<String> = (0..100).map(|i| if i < 50 { "normal" } else { "infarct" }.to_string()).collect();
    let emb = match embed::collect_embeddings(model, &patches, &labels) {
        Ok(e) => e,
        Err(e) => return outcome(false, e.to_string()),
    };
    let res = match embed::tsne_project(&emb.rows, &TsneConfig { seed: 7, ..TsneConfig::default() }) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let s = embed::separation(&res.coords, &labels, "normal", "infarct").unwrap();
    let kl300 = res.kl_at(300).unwrap_or(f64::NAN);
    outcome(
        s.ratio() > 2.0 && res.final_kl() <= kl300,
        format!(
            "centroid distance {:.3} vs 2 x spread {:.3}; KL final {:.4} vs iter-300 {:.4}",
            s.centroid_distance,
            2.0 * s.mean_spread,
            res.final_kl(),
            kl300
        ),
    )
}

fn main() {
    // `cargo test -- --list` and filtered runs probe test binaries; this
    // harness has nothing to list.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let report = |name: &'static str, o: Outcome, results: &mut Vec<(&str, Outcome)>| {
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };

    report("1 gradient suite", gradients(), &mut results);
    report("2 oracle equivalence", oracles(), &mut results);
    report("3 architecture audit", architecture(), &mut results);
    let first = pipeline(&root.join("run1"));
    report("4 end-to-end phantom series", end_to_end(&first), &mut results);
    let second = pipeline(&root.join("run2"));
    report("5 determinism", determinism(&first, &second), &mut results);
    let model = first
        .as_ref()
        .ok()
        .and_then(|r| GanModel::load_checkpoint(r.dir.join("model.ckpt")).ok());
    report("6 anomaly-loss separation", anomaly_separation(&model), &mut results);
    report("7 embedding separation", embedding_separation(&model), &mut results);

    let failed: Vec<&str> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
