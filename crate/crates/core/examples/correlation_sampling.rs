//! Sampling error of ensemble correlations: subsamples of a large ensemble
//! scatter around its correlation roughly as (1 - rho^2)^2 / K.

use locmap::cycling::perturbed_ensemble;
use locmap::model::{nature_run, ModelConfig};
use locmap::observations::ObservationOperator;
use locmap::stats::{ensemble_correlation, subsample};

fn main() -> locmap::Result<()> {
    let model = ModelConfig::lorenz96();
    let truth = nature_run(&model, 2, 1000, 10)?;
    // Spread a 400-member ensemble along the flow so neighbours correlate.
    let mut e = perturbed_ensemble(truth.state(0), 400, 9)?;
    locmap::filters::forecast_in_place(&mut e, &model, 4);
    let op = ObservationOperator::direct(40, 40)?;
    let full = ensemble_correlation(&e, &op)?;
    for k in [5, 10, 20, 40] {
        let subs = subsample(&e, k, 500, 17)?;
        let mut mse = 0.0;
        let mut law = 0.0;
        for s in &subs {
            let r = ensemble_correlation(s, &op)?;
            let (i, j) = (1, 0);
            let rho = full.entries[(i, j)];
            mse += (r.entries[(i, j)] - rho).powi(2);
            law += (1.0 - rho * rho).powi(2) / k as f64;
        }
        println!("K={k:2}: mean squared error {:.4}, large-sample law {:.4}", mse / 500.0, law / 500.0);
    }
    Ok(())
}
