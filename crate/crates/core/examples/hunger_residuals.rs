//! Skills whose optima grow faster or slower than the aggregate optimum show
//! up as capacity- or data-hungry residuals.
//!
//!     cargo run --example hunger_residuals

use isoflop::ingest::{log_spaced, ExperimentStore};
use isoflop::pipeline::{residual_report, PipelineOptions};
use isoflop::synth::{sample_losses, ChinchillaSurface, SurfaceSet, SynthDesign};
use isoflop::{Role, Skill, SkillSpec, Split};

fn spec(id: &str, skill: Skill, role: Role) -> SkillSpec {
    SkillSpec { dataset_id: id.into(), skill, split: Split::Heldout, role, exclude_from_average: false }
}

fn main() -> isoflop::Result<()> {
    let mut set = SurfaceSet::default();
    for (id, exponent) in [("val", 0.5), ("triviaqa", 0.6), ("humaneval", 0.4)] {
        set.insert(id, ChinchillaSurface::with_optimum(1.7, 0.34, exponent, 6e17, 1e8, 0.3)?);
    }
    let design = SynthDesign {
        budgets: log_spaced(6e18, 3e21, 9),
        models_per_budget: 16,
        span_decades: 0.5,
        noise_sigma: 0.002,
        seed: 1,
    };
    let runs = sample_losses(&set, &design, "canonical")?;
    let skills = vec![
        spec("val", Skill::Other, Role::Validation),
        spec("triviaqa", Skill::Knowledge, Role::Evaluation),
        spec("humaneval", Skill::Code, Role::Evaluation),
    ];
    let store = ExperimentStore::new(runs, skills, Vec::new(), None)?;
    let opts = PipelineOptions { dead_band: 0.02, ..PipelineOptions::default() };
    let report = residual_report(&store, "canonical", &opts)?;
    for r in report.all_residuals() {
        println!("B={:.3e} {:<10} {:+.4}  {}", r.budget, r.dataset_id, r.value, r.classification);
    }
    for s in &report.skipped {
        println!("skipped B={:.3e} {}: {}", s.budget, s.what, s.reason);
    }
    for (skill, s) in &report.per_skill {
        println!("{skill}: mean {:+.4}, stdev {:.4}", s.mean, s.stdev);
    }
    Ok(())
}
