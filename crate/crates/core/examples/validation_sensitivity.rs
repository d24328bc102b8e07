//! How far compute optima move when the validation set behind the aggregate
//! estimate is swapped.
//!
//!     cargo run --example validation_sensitivity

use std::collections::BTreeMap;

use isoflop::analyze::{validation_sensitivity, SensitivityThresholds};
use isoflop::ingest::log_spaced;
use isoflop::synth::{closed_form_optimum, ChinchillaSurface};

fn main() -> isoflop::Result<()> {
    let budgets = log_spaced(6e18, 3e21, 9);
    let optima = |s: &ChinchillaSurface| budgets.iter().map(|&b| closed_form_optimum(s, b)).collect::<Vec<_>>();
    let baseline = optima(&ChinchillaSurface::with_optimum(1.7, 0.34, 0.50, 6e18, 1e8, 0.3)?);
    let variants = BTreeMap::from([
        ("slimpajama".to_string(), optima(&ChinchillaSurface::with_optimum(1.7, 0.34, 0.52, 6e18, 1.05e8, 0.3)?)),
        ("c4".to_string(), optima(&ChinchillaSurface::with_optimum(1.7, 0.34, 0.44, 6e18, 0.8e8, 0.3)?)),
    ]);
    let th = SensitivityThresholds::default();
    let table = validation_sensitivity(&baseline, &variants)?;
    for r in &table.rows {
        println!("{:<11} B={:.3e}  {:+7.2}%  {:?}", r.validation_id, r.key, 100.0 * r.rel_diff, th.flag(r.rel_diff));
    }
    println!("largest shift {:+.2}% ({:?})", 100.0 * table.max_rel_diff(), table.max_flag(&th));
    println!("3 largest budgets all beyond {:.0}%: {}", 100.0 * th.minor, table.largest_keys_exceed_minor(3, &th));
    Ok(())
}
