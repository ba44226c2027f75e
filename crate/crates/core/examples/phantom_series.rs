//! Writes a normal phantom plus a series of infarct phantoms with truth
//! masks and a manifest.
//!
//! `cargo run --example phantom_series -- [OUT_DIR]`

use fibroscore::phantom::{gen_series, SeriesSpec};

fn main() -> fibroscore::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "phantoms".into());
    let mut series = SeriesSpec::default();
    series.base.seed = 42;
    let manifest = gen_series(&series, &out)?;

    println!("ventricle {:?}", manifest.ventricle);
    println!("{:<8} {:>6} {:>9}  path", "label", "phi", "realized");
    for e in std::iter::once(&manifest.normal).chain(&manifest.queries) {
        println!("{:<8} {:>6.2} {:>9.4}  {}", e.label, e.phi, e.realized_fraction, e.path.display());
    }
    println!("manifest written to {out}/manifest.json");
    Ok(())
}
