//! A 10-member serial EnKF with Gaspari-Cohn localization cycling against a
//! Lorenz-96 truth observed at every other grid point.

use locmap::cycling::{run_serial, Twin, Window};
use locmap::diagnostics::aggregate;
use locmap::filters::FilterConfig;
use locmap::model::{nature_run, ModelConfig};
use locmap::observations::{generate_observations, ObservationOperator};
use locmap::LocalizationScheme;

fn main() -> locmap::Result<()> {
    let model = ModelConfig::lorenz96();
    let truth = nature_run(&model, 5, 1000, 2000)?;
    let op = ObservationOperator::direct(20, 40)?;
    let records = generate_observations(&truth, &op, 1, 6)?;
    let twin = Twin { model: &model, truth: &truth, records: &records, op: &op, stride: 1 };
    let window = Window { start: 0, count: 1500, spinup: 300 };

    for (name, scheme) in [
        ("no localization", LocalizationScheme::None),
        ("GC c=4", LocalizationScheme::gaspari_cohn(4.0)?),
    ] {
        let cfg = FilterConfig::new(10, 0.05, scheme)?;
        let s = aggregate(&run_serial(&twin, &cfg, window, 11)?, None)?;
        println!("{name:16} RMSE {:.3} spread {:.3} diverged {}", s.mean_rmse, s.mean_spread, s.diverged);
    }
    Ok(())
}
