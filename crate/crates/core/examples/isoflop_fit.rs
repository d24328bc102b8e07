//! Group a runs file into IsoFLOP curves, fit each, and regress the optima.
//!
//!     cargo run --example isoflop_fit -- runs.csv val
//!
//! Without arguments a noisy synthetic sweep is used.

use std::path::Path;

use isoflop::fit::fit_power_law;
use isoflop::ingest::{group_isoflop, infer_budget_grid, load_runs, log_spaced, ParseOptions};
use isoflop::pipeline::dataset_curves;
use isoflop::synth::{sample_losses, ChinchillaSurface, SurfaceSet, SynthDesign};
use isoflop::OptimumSource;

fn main() -> isoflop::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (runs, dataset) = match args.as_slice() {
        [path, dataset] => (load_runs(Path::new(path), &ParseOptions::default())?, dataset.clone()),
        _ => {
            let mut set = SurfaceSet::default();
            set.insert("val", ChinchillaSurface::new(1.69, 406.4, 0.34, 410.7, 0.28)?);
            let design = SynthDesign {
                budgets: log_spaced(6e18, 3e21, 9),
                models_per_budget: 16,
                span_decades: 0.5,
                noise_sigma: 0.01,
                seed: 7,
            };
            (sample_losses(&set, &design, "canonical")?, "val".to_string())
        }
    };

    let budgets = infer_budget_grid(&runs, 0.05);
    let grouping = group_isoflop(&runs, &budgets, 0.05)?;
    let curves = dataset_curves(&grouping, &dataset, OptimumSource::Ape(dataset.clone()));
    for c in &curves.curves {
        let fit = c.fit.as_ref().expect("fitted");
        println!(
            "B={:.3e}  a={:+.4} b={:+.4} c={:+.4}  p*={:.4e}  {}",
            c.optimum.budget, fit.a, fit.b, fit.c, c.optimum.p_star, c.optimum.validity
        );
    }
    for s in &curves.skipped {
        println!("skipped B={:.3e}: {}", s.budget, s.reason);
    }
    let law = fit_power_law(&curves.optima())?;
    println!(
        "p* = {:.4e} * B^{:.4}  (R^2 {:.4}, {} excluded)",
        law.fit.coefficient,
        law.fit.exponent,
        law.fit.r_squared,
        law.excluded.len()
    );
    Ok(())
}
