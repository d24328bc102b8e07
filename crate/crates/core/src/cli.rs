//! Command-line front end: `synth → ingest → fit → optima/residuals/
//! proportion/crossover/sensitivity → report`.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error. Failures print a
//! single JSON line `{"error": ..., "kind": ...}` on stderr.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analyze::SensitivityThresholds;
use crate::domain::{Skill, Split};
use crate::error::{Error, Result};
use crate::ingest::{
    self, format_float, load_ape, load_mixes, load_runs, load_skills, ExperimentStore, ParseOptions, DEFAULT_TOLERANCE,
};
use crate::pipeline::{self, Aggregation, PipelineOptions};
use crate::report::{self, ArtifactSet};
use crate::synth::{sample_losses, SurfaceSet, SynthDesign};

#[derive(Debug, Parser)]
#[command(name = "isoflop", version, about = "Skill-dependent compute-optimal scaling analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate runs.csv from parametric loss surfaces.
    Synth(SynthArgs),
    /// Validate inputs and emit normalised runs plus IsoFLOP groups.
    Ingest(StoreArgs),
    /// Per-budget quadratic fits for every dataset and skill average.
    Fit(StoreArgs),
    /// Skill and APE compute optima with their power laws.
    Optima(StoreArgs),
    /// Capacity-/data-hunger residuals against the APE optima.
    Residuals(StoreArgs),
    /// Optimum parameter count against the skill's datamix proportion.
    Proportion(StoreArgs),
    /// Code/knowledge ratio at which the skill optima coincide.
    Crossover(StoreArgs),
    /// Optimum shifts across validation sets.
    Sensitivity(StoreArgs),
    /// Every plot and table the inputs support.
    Report(StoreArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    surfaces: PathBuf,
    /// Number of budgets, log-spaced over [--budget-min, --budget-max].
    #[arg(long, default_value_t = 9)]
    budgets: usize,
    #[arg(long, default_value_t = 6e18)]
    budget_min: f64,
    #[arg(long, default_value_t = 3e21)]
    budget_max: f64,
    #[arg(long, default_value_t = 16)]
    models: usize,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Half-width of the sampling window in decades of parameters.
    #[arg(long, default_value_t = 0.5)]
    span: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "canonical")]
    datamix: String,
    /// Output runs file (.csv or .jsonl).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct StoreArgs {
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    skills: Option<PathBuf>,
    #[arg(long)]
    mixes: Option<PathBuf>,
    #[arg(long)]
    ape: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
    #[arg(long = "dead-band", default_value_t = 0.0)]
    dead_band: f64,
    #[arg(long, default_value = "average_loss_first")]
    agg: Aggregation,
    #[arg(long, default_value = "heldout")]
    split: Split,
    #[arg(long, default_value = "knowledge")]
    skill: Skill,
    /// Datamix for single-mix analyses; defaults to the first in runs.
    #[arg(long)]
    datamix: Option<String>,
}

impl StoreArgs {
    fn options(&self) -> PipelineOptions {
        PipelineOptions {
            tolerance: self.tolerance,
            dead_band: self.dead_band,
            aggregation: self.agg,
            split: self.split,
            ..PipelineOptions::default()
        }
    }

    fn load(&self, need_skills: bool) -> Result<ExperimentStore> {
        if !(self.tolerance > 0.0 && self.tolerance < 0.5) {
            return Err(Error::invalid(format!("--tolerance {} outside (0, 0.5)", self.tolerance)));
        }
        let runs = load_runs(&self.runs, &ParseOptions { flops_tolerance: self.tolerance })?;
        let skills = match &self.skills {
            Some(p) => load_skills(p)?,
            None if need_skills => return Err(Error::invalid("--skills is required")),
            None => {
                let mut ids: Vec<&String> = runs.iter().flat_map(|r| r.losses.keys()).collect();
                ids.sort();
                ids.dedup();
                ids.into_iter()
                    .map(|id| crate::domain::SkillSpec {
                        dataset_id: id.clone(),
                        skill: Skill::Other,
                        split: Split::Heldout,
                        role: crate::domain::Role::Evaluation,
                        exclude_from_average: false,
                    })
                    .collect()
            }
        };
        let mixes = self.mixes.as_deref().map(load_mixes).transpose()?.unwrap_or_default();
        let ape = self.ape.as_deref().map(load_ape).transpose()?;
        ExperimentStore::new(runs, skills, mixes, ape)
    }

    fn datamix(&self, store: &ExperimentStore) -> Result<String> {
        match &self.datamix {
            Some(m) if store.datamix_ids().contains(m) => Ok(m.clone()),
            Some(m) => Err(Error::invalid(format!("datamix {m} has no runs"))),
            None => store
                .datamix_ids()
                .into_iter()
                .next()
                .ok_or_else(|| Error::invalid("no runs")),
        }
    }
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn synth(args: &SynthArgs) -> Result<String> {
    let text = fs::read_to_string(&args.surfaces).map_err(|e| Error::io(&args.surfaces, e))?;
    let surfaces = SurfaceSet::from_json(&text)?;
    let design = SynthDesign {
        budgets: ingest::log_spaced(args.budget_min, args.budget_max, args.budgets),
        models_per_budget: args.models,
        span_decades: args.span,
        noise_sigma: args.sigma,
        seed: args.seed,
    };
    let runs = sample_losses(&surfaces, &design, &args.datamix)?;
    let body = match args.out.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("ndjson") => ingest::write_runs_jsonl(&runs)?,
        _ => ingest::write_runs_csv(&runs)?,
    };
    write_file(&args.out, &body)?;
    Ok(format!("wrote {} runs to {}", runs.len(), args.out.display()))
}

fn groups_json(store: &ExperimentStore, opts: &PipelineOptions) -> Result<String> {
    let mut mixes = Vec::new();
    for mix in store.datamix_ids() {
        let g = pipeline::group_mix(store, &mix, opts)?;
        let groups: Vec<serde_json::Value> = g
            .groups
            .iter()
            .map(|g| {
                serde_json::json!({
                    "budget": g.budget,
                    "usable": g.usable(),
                    "members": g.members.iter().map(|m| m.run_id.as_str()).collect::<Vec<_>>(),
                })
            })
            .collect();
        mixes.push(serde_json::json!({"datamix_id": mix, "groups": groups, "unassigned": g.unassigned}));
    }
    report::to_json(&mixes)
}

fn run_store_command(cmd: &Command, args: &StoreArgs) -> Result<String> {
    let opts = args.options();
    let mut out = ArtifactSet::new();
    match cmd {
        Command::Ingest(_) => {
            let store = args.load(false)?;
            out.add("runs.csv", ingest::write_runs_csv(&store.runs)?);
            out.add("groups.json", groups_json(&store, &opts)?);
        }
        Command::Fit(_) => {
            let store = args.load(true)?;
            out.add("fits.json", report::fits_json(&pipeline::all_fits(&store, &opts)?)?);
        }
        Command::Optima(_) => {
            let store = args.load(true)?;
            let reports = store
                .datamix_ids()
                .iter()
                .map(|m| pipeline::optima_report(&store, m, &opts).map(|r| report::optima_value(&r)))
                .collect::<Result<Vec<_>>>()?;
            out.add("optima.json", report::to_json(&reports)?);
        }
        Command::Residuals(_) => {
            let store = args.load(true)?;
            let res = pipeline::residual_report(&store, &args.datamix(&store)?, &opts)?;
            out.add("residuals.csv", report::residuals_csv(&res.all_residuals())?);
            let summary: serde_json::Map<String, serde_json::Value> = res
                .per_skill
                .iter()
                .map(|(s, set)| {
                    (s.to_string(), serde_json::json!({"mean": set.mean, "stdev": set.stdev, "n": set.residuals.len()}))
                })
                .collect();
            out.add("residual_summary.json", report::to_json(&serde_json::json!({
                "summary": summary,
                "skipped": res.skipped,
            }))?);
        }
        Command::Proportion(_) => {
            let store = args.load(true)?;
            let curve = pipeline::proportion_analysis(&store, args.skill, &opts)?;
            out.add("proportion.json", report::to_json(&curve)?);
        }
        Command::Crossover(_) => {
            let store = args.load(true)?;
            let x = pipeline::crossover_analysis(&store, &opts)?;
            out.add("crossover.json", report::crossover_json(&x.result)?);
        }
        Command::Sensitivity(_) => {
            let store = args.load(true)?;
            let t = pipeline::sensitivity_analysis(&store, &opts)?;
            let th = SensitivityThresholds::default();
            out.add("sensitivity.csv", report::sensitivity_csv(&t, &th)?);
            out.add("sensitivity.json", report::to_json(&serde_json::json!({
                "max_rel_diff": format_float(t.max_rel_diff()),
                "max_by_variant": t.max_by_variant,
                "max_flag": th.flag(t.max_rel_diff()),
            }))?);
        }
        Command::Report(_) => {
            let store = args.load(true)?;
            out = report::build_report(&store, &opts)?;
        }
        Command::Synth(_) => unreachable!("handled separately"),
    }
    let manifest = out.write(&args.out)?;
    Ok(format!("wrote {} artifacts to {}", manifest.artifacts.len(), args.out.display()))
}

fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        cmd @ (Command::Ingest(a)
        | Command::Fit(a)
        | Command::Optima(a)
        | Command::Residuals(a)
        | Command::Proportion(a)
        | Command::Crossover(a)
        | Command::Sensitivity(a)
        | Command::Report(a)) => run_store_command(cmd, a),
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            let line = serde_json::json!({"error": e.to_string(), "kind": e.kind()});
            let _ = writeln!(std::io::stderr(), "{line}");
            1
        }
    }
}
