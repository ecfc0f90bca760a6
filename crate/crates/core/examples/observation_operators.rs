//! Applies the direct, linear indirect and nonlinear indirect operators to
//! one state and draws noisy observation records.

use locmap::model::{nature_run, ModelConfig};
use locmap::observations::{compute_extrema, generate_observations, NonlinearObsParams, ObservationOperator};

fn main() -> locmap::Result<()> {
    let truth = nature_run(&ModelConfig::lorenz96(), 1, 1000, 2000)?;
    let (a, b) = compute_extrema(&truth)?;
    let ops = [
        ObservationOperator::direct(10, 40)?,
        ObservationOperator::indirect(40)?,
        ObservationOperator::nonlinear(10, 40, NonlinearObsParams::new(a, b)?)?,
    ];
    let x = truth.state(500);
    for op in &ops {
        let y = op.apply(x)?;
        let head: Vec<String> = y.iter().take(4).map(|v| format!("{v:7.3}")).collect();
        println!("{:<18} M={:<2} centers {:?}.. h(x) = [{} ..]", op.kind().as_str(), op.n_obs(), (0..3).map(|j| op.center(j)).collect::<Vec<_>>(), head.join(", "));
    }

    let records = generate_observations(&truth, &ops[0], 5, 7)?;
    println!("{} records every 5 steps; first at cycle {}", records.len(), records[0].time_index);
    Ok(())
}
