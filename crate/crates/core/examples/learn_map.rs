//! Learns a localization map for 5-member ensembles from a 200-member ETKF
//! run and compares it with Gaspari-Cohn in a short verification run.

use locmap::cycling::Window;
use locmap::diagnostics::aggregate;
use locmap::filters::FilterConfig;
use locmap::harness::study::{simulate_setup, train_maps, verify_serial};
use locmap::harness::{MapRequest, ObsSetup, Regressor};
use locmap::model::ModelConfig;
use locmap::observations::ObsKind;
use locmap::LocalizationScheme;

fn main() -> locmap::Result<()> {
    let (t_train, t_verify) = (1500, 1500);
    let setup = ObsSetup::new(ObsKind::Direct, 10, 1);
    let data = simulate_setup(&ModelConfig::lorenz96(), setup, 1, 1000, t_train + t_verify)?;
    let regressor = Regressor::Etkf { members: 200 };
    let train = Window { start: 0, count: t_train, spinup: 300 };
    let out = train_maps(&data, &regressor, train, &[MapRequest { k: 5, s: 1 }], &[], 1, false)?;
    let maps = &out.maps[0];
    println!("archived {} analyses; regressor RMSE {:.3}", out.archived, out.regressor_summary.mean_rmse);

    // Weights the map gives the raw correlations when updating grid point
    // i, two points away from observation j.
    let j = 3;
    let c = data.op.center(j);
    let i = c + 2;
    let row: Vec<String> = (c - 4..=c + 4).map(|q| format!("{:6.3}", maps.map.get(q, i, j))).collect();
    println!("L(q, {i}, {j}) for q = {}..{}: {}", c - 4, c + 4, row.join(" "));
    let diag: Vec<String> = (c - 4..=c + 4).map(|i| format!("{:6.3}", maps.diagonal.weights[(i, j)])).collect();
    println!("diagonal weights near the observation: {}", diag.join(" "));

    let verify = Window { start: t_train, count: t_verify, spinup: 300 };
    for (name, scheme) in [
        ("learned map", LocalizationScheme::FullMap(maps.map.clone())),
        ("diagonal map", LocalizationScheme::DiagonalMap(maps.diagonal.clone())),
        ("GC c=3", LocalizationScheme::gaspari_cohn(3.0)?),
    ] {
        let s = aggregate(&verify_serial(&data, &FilterConfig::new(5, 0.05, scheme)?, verify, 1)?, None)?;
        println!("{name:13} RMSE {:.3} diverged {}", s.mean_rmse, s.diverged);
    }
    Ok(())
}
