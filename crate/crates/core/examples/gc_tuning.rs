//! Tunes the Gaspari-Cohn half-width over a grid for several inflations.

use locmap::cycling::Window;
use locmap::harness::study::{simulate_setup, tune_setup};
use locmap::harness::ObsSetup;
use locmap::model::ModelConfig;
use locmap::observations::ObsKind;

fn main() -> locmap::Result<()> {
    let data = simulate_setup(&ModelConfig::lorenz96(), ObsSetup::new(ObsKind::Direct, 20, 1), 3, 1000, 1000)?;
    let window = Window { start: 0, count: 1000, spinup: 200 };
    let grid: Vec<f64> = (1..=10).map(f64::from).collect();
    println!("K  inflation  half-width  RMSE");
    for k in [5, 10] {
        for f in [0.0, 0.05, 0.1] {
            let e = tune_setup(&data, k, f, &grid, window, 3)?;
            let rmse = if e.diverged { "diverged".to_string() } else { format!("{:.3}", e.rmse) };
            println!("{k:<2} {f:<10} {:<11} {rmse}", e.half_width);
        }
    }
    Ok(())
}
