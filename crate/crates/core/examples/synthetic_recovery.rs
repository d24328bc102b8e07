//! How well the fitted optima track the surface's true optima as noise grows.
//!
//!     cargo run --release --example synthetic_recovery

use isoflop::fit::fit_power_law;
use isoflop::ingest::{group_isoflop, log_spaced};
use isoflop::pipeline::dataset_curves;
use isoflop::synth::{closed_form_optimum, sample_losses, ChinchillaSurface, SurfaceSet, SynthDesign};
use isoflop::OptimumSource;

fn main() -> isoflop::Result<()> {
    let surface = ChinchillaSurface::new(1.69, 406.4, 0.34, 410.7, 0.28)?;
    let mut set = SurfaceSet::default();
    set.insert("val", surface);
    let budgets = log_spaced(6e18, 3e21, 9);
    println!("true exponent {:.4}", surface.optimum_exponent());
    for sigma in [0.0, 0.005, 0.01, 0.02, 0.05] {
        let mut worst: f64 = 0.0;
        let mut exps = Vec::new();
        for seed in 0..20 {
            let design = SynthDesign {
                budgets: budgets.clone(),
                models_per_budget: 16,
                span_decades: 0.5,
                noise_sigma: sigma,
                seed,
            };
            let runs = sample_losses(&set, &design, "canonical")?;
            let grouping = group_isoflop(&runs, &budgets, 0.05)?;
            let curves = dataset_curves(&grouping, "val", OptimumSource::Ape("val".into()));
            for o in curves.valid_optima() {
                let truth = closed_form_optimum(&surface, o.budget).p_star;
                worst = worst.max((o.p_star - truth).abs() / truth);
            }
            if let Ok(law) = fit_power_law(&curves.optima()) {
                exps.push(law.fit.exponent);
            }
        }
        let mean = exps.iter().sum::<f64>() / exps.len() as f64;
        println!("sigma={sigma:<6} worst p* error {:>6.2}%  mean exponent {mean:.4}", 100.0 * worst);
    }
    Ok(())
}
