//! Full report (plots, tables and manifest) for a synthetic experiment.
//!
//!     cargo run --example render_report -- out/

use std::path::PathBuf;

use isoflop::ingest::{log_spaced, ExperimentStore};
use isoflop::pipeline::PipelineOptions;
use isoflop::report::build_report;
use isoflop::synth::{sample_losses, ChinchillaSurface, SurfaceSet, SynthDesign};
use isoflop::{Role, Skill, SkillSpec, Split};

fn main() -> isoflop::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("report"));
    let mut set = SurfaceSet::default();
    for (id, exponent, p0) in [
        ("val", 0.50, 1.0e8),
        ("val_c4", 0.48, 0.9e8),
        ("triviaqa", 0.56, 1.3e8),
        ("nq", 0.58, 1.2e8),
        ("humaneval", 0.44, 0.7e8),
        ("mbpp", 0.45, 0.8e8),
    ] {
        set.insert(id, ChinchillaSurface::with_optimum(1.7, 0.34, exponent, 6e18, p0, 0.3)?);
    }
    let design = SynthDesign {
        budgets: log_spaced(6e18, 3e21, 9),
        models_per_budget: 16,
        span_decades: 0.6,
        noise_sigma: 0.003,
        seed: 42,
    };
    let runs = sample_losses(&set, &design, "canonical")?;
    let spec = |id: &str, skill, role| SkillSpec {
        dataset_id: id.into(),
        skill,
        split: Split::Heldout,
        role,
        exclude_from_average: false,
    };
    let skills = vec![
        spec("val", Skill::Other, Role::Validation),
        spec("val_c4", Skill::Other, Role::Validation),
        spec("triviaqa", Skill::Knowledge, Role::Evaluation),
        spec("nq", Skill::Knowledge, Role::Evaluation),
        spec("humaneval", Skill::Code, Role::Evaluation),
        spec("mbpp", Skill::Code, Role::Evaluation),
    ];
    let store = ExperimentStore::new(runs, skills, Vec::new(), None)?;
    let artifacts = build_report(&store, &PipelineOptions::default())?;
    let manifest = artifacts.write(&out)?;
    for a in &manifest.artifacts {
        println!("{:<32} {:>7} bytes  {}", a.path, a.bytes, &a.sha256[..12]);
    }
    Ok(())
}
