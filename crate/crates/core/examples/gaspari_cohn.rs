//! Tabulates the Gaspari-Cohn taper and the weights it puts around an
//! observation on the periodic grid.

use locmap::localization::{circular_distance, gaspari_cohn, transform_correlation};
use locmap::observations::ObservationOperator;
use locmap::LocalizationScheme;

fn main() -> locmap::Result<()> {
    println!("  d   c=2    c=5    c=10");
    for d in 0..=12 {
        let d = d as f64;
        println!("{d:4} {:.4} {:.4} {:.4}", gaspari_cohn(d, 2.0), gaspari_cohn(d, 5.0), gaspari_cohn(d, 10.0));
    }

    // A flat correlation column tapered around the observation at grid point 8.
    let op = ObservationOperator::direct(10, 40)?;
    let scheme = LocalizationScheme::gaspari_cohn(3.0)?;
    let tapered = transform_correlation(&scheme, &op, &[1.0; 40], 2)?;
    for (i, w) in tapered.iter().enumerate().filter(|(_, w)| **w > 0.0) {
        println!("grid {i:2} (distance {}) weight {w:.4}", circular_distance(i, op.center(2), 40));
    }
    Ok(())
}
