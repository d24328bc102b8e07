//! Closed-form vs grid-plus-golden-section optimum on a parametric surface.
//!
//!     cargo run --example oracle_crosscheck

use isoflop::ingest::log_spaced;
use isoflop::synth::{brute_force_optimum, closed_form_optimum, ChinchillaSurface};

fn main() -> isoflop::Result<()> {
    let surface = ChinchillaSurface::new(1.69, 406.4, 0.34, 410.7, 0.28)?;
    println!("p* ~ B^{:.4}", surface.optimum_exponent());
    println!("{:>10}  {:>12}  {:>12}  {:>10}", "budget", "closed", "brute", "rel diff");
    for budget in log_spaced(6e18, 3e21, 9) {
        let cf = closed_form_optimum(&surface, budget);
        let bf = brute_force_optimum(&surface, budget, 1000)?;
        println!(
            "{budget:>10.3e}  {:>12.4e}  {:>12.4e}  {:>10.2e}",
            cf.p_star,
            bf.p_star,
            (bf.p_star - cf.p_star).abs() / cf.p_star
        );
    }
    Ok(())
}
