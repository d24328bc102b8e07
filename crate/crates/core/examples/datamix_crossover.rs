//! Optimum size against datamix composition, and the code/knowledge ratio
//! at which both skills want the same model size.
//!
//!     cargo run --example datamix_crossover

use isoflop::analyze::{find_crossover, proportion_curve, RatioCurve, DEFAULT_CROSSOVER_TOL};
use isoflop::{ComputeOptimum, DatamixSpec, OptimumSource, Skill, Validity};

fn main() -> isoflop::Result<()> {
    // Optima at one budget for five mixes: the knowledge optimum grows with
    // the code/knowledge ratio and the code optimum shrinks.
    let budget = 6e18;
    let mixes = [
        DatamixSpec::new("k60", 0.60, 0.10, 0.30)?,
        DatamixSpec::new("k50", 0.50, 0.15, 0.35)?,
        DatamixSpec::new("k40", 0.40, 0.20, 0.40)?,
        DatamixSpec::new("k30", 0.30, 0.25, 0.45)?,
        DatamixSpec::new("k20", 0.20, 0.30, 0.50)?,
    ];
    let opt = |p: f64, skill: &str| ComputeOptimum::new(budget, p, OptimumSource::Skill(skill.into()), Validity::Valid);
    let mut knowledge = Vec::new();
    let mut code = Vec::new();
    for m in &mixes {
        let r = m.code_knowledge_ratio().expect("knowledge share > 0");
        knowledge.push((m.clone(), opt(1.0e8 * r.powf(0.2), "knowledge")));
        code.push((m.clone(), opt(1.1e8 * r.powf(-0.1), "code")));
    }

    for (skill, rows) in [(Skill::Knowledge, &knowledge), (Skill::Code, &code)] {
        let c = proportion_curve(rows, skill)?;
        println!("{skill}: log10 p* = {:.4} + {:+.4} * proportion", c.intercept, c.slope);
    }

    let k = RatioCurve::from_mixes(&knowledge)?;
    let c = RatioCurve::from_mixes(&code)?;
    let (lo, hi) = (k.range().0.max(c.range().0), k.range().1.min(c.range().1));
    match find_crossover(&k, &c, (lo, hi), DEFAULT_CROSSOVER_TOL) {
        Ok(x) => println!("crossover at code/knowledge = {:.4}, p* = {:.4e}", x.ratio, x.p_at_crossover),
        Err(e) => println!("{e} ({lo:.3}..{hi:.3})"),
    }
    Ok(())
}
