//! Integrates a Lorenz-96 truth run, writes it to disk and reads it back.
//!
//! cargo run --example nature_run

use locmap::model::{nature_run, ModelConfig, TrajectoryHeader, Trajectory};

fn main() -> locmap::Result<()> {
    let cfg = ModelConfig::lorenz96();
    let steps = 5000;
    let truth = nature_run(&cfg, 42, 1000, steps)?;

    let values = truth.as_rows();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt();
    println!("{} states of N={} over t in [{}, {}]", truth.len(), truth.n_state(), truth.start_time(), truth.time(steps));
    println!("climatological mean {mean:.3}, std {std:.3}");

    let dir = std::env::temp_dir().join("locmap-nature-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("truth.bin");
    truth.save(&path, &TrajectoryHeader::for_run(&cfg, steps, 42))?;
    let (back, header) = Trajectory::load(&path)?;
    assert_eq!(back.as_rows(), truth.as_rows());
    println!("round trip through {} ok (seed {})", path.display(), header.seed);
    Ok(())
}
