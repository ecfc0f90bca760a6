//! Runs every phase of a small experiment in a temporary directory and
//! prints the report.
//!
//! cargo run --release --example osse_pipeline

use locmap::harness::{ExperimentConfig, Run};

fn main() -> locmap::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/smoke.json");
    let mut cfg = ExperimentConfig::load(path.as_ref())?;
    cfg.out_dir = std::env::temp_dir().join("locmap-osse-example");
    let mut run = Run::open(cfg)?;
    run.nature()?;
    run.observe()?;
    run.train()?;
    run.tune_gc()?;
    run.verify()?;
    println!("outputs in {}", run.dir().display());
    print!("{}", run.report()?);
    Ok(())
}
