//! End-to-end orchestration over an [`ExperimentStore`]: grouping per
//! datamix, per-dataset and per-skill fits, APE optima, and the inputs of
//! every second-stage analysis.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analyze::{
    compute_residuals, crossover_over_overlap, proportion_curve, validation_sensitivity_keyed, CrossoverResult,
    ProportionCurve, RatioCurve, ResidualSet, SensitivityTable,
};
use crate::domain::{ComputeOptimum, IsoFlopGroup, OptimumSource, Role, Skill, Split, Validity};
use crate::error::{Error, Result};
use crate::fit::{extract_optimum, fit_power_law, fit_quadratic, group_points, FitRecord, PowerLawOutcome, QuadraticFit};
use crate::ingest::{group_isoflop, infer_budget_grid, skill_average_losses, skill_datasets, ExperimentStore, Grouping};

/// Order in which skill datasets are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Average the datasets' losses per run, then fit one curve.
    #[default]
    AverageLossFirst,
    /// Fit every dataset, then average valid optima in log10 space.
    PerDataset,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::AverageLossFirst => "average_loss_first",
            Aggregation::PerDataset => "per_dataset",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average_loss_first" => Ok(Aggregation::AverageLossFirst),
            "per_dataset" | "per_dataset_then_average" => Ok(Aggregation::PerDataset),
            _ => Err(Error::invalid(format!("unknown aggregation '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    pub tolerance: f64,
    pub dead_band: f64,
    pub aggregation: Aggregation,
    pub split: Split,
    pub crossover_tol: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            tolerance: crate::ingest::DEFAULT_TOLERANCE,
            dead_band: 0.0,
            aggregation: Aggregation::AverageLossFirst,
            split: Split::Heldout,
            crossover_tol: crate::analyze::DEFAULT_CROSSOVER_TOL,
        }
    }
}

/// A fitted curve and the optimum read from it.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveOptimum {
    pub fit: Option<QuadraticFit>,
    pub optimum: ComputeOptimum,
}

/// Something that was left out, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub budget: f64,
    pub what: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curves {
    pub curves: Vec<CurveOptimum>,
    pub skipped: Vec<Skipped>,
}

impl Curves {
    pub fn optima(&self) -> Vec<ComputeOptimum> {
        self.curves.iter().map(|c| c.optimum.clone()).collect()
    }

    pub fn valid_optima(&self) -> Vec<ComputeOptimum> {
        self.curves.iter().filter(|c| c.optimum.is_valid()).map(|c| c.optimum.clone()).collect()
    }
}

pub fn skill_label(skill: Skill, split: Split) -> String {
    format!("avg:{skill}:{split}")
}

/// Budget grid inferred from every run in the store.
pub fn budget_grid(store: &ExperimentStore, opts: &PipelineOptions) -> Vec<f64> {
    infer_budget_grid(&store.runs, opts.tolerance)
}

/// IsoFLOP groups for one datamix on the store-wide budget grid.
pub fn group_mix(store: &ExperimentStore, datamix_id: &str, opts: &PipelineOptions) -> Result<Grouping> {
    group_isoflop(&store.runs_for_mix(datamix_id), &budget_grid(store, opts), opts.tolerance)
}

fn fit_points(group: &IsoFlopGroup, points: &[(f64, f64)], source: OptimumSource) -> Result<CurveOptimum> {
    let fit = fit_quadratic(points)?;
    let optimum = extract_optimum(&fit, group, source);
    Ok(CurveOptimum { fit: Some(fit), optimum })
}

fn unusable(group: &IsoFlopGroup, what: &str) -> Option<Skipped> {
    (!group.usable()).then(|| Skipped {
        budget: group.budget,
        what: what.to_string(),
        reason: format!("{} members (need 3)", group.members.len()),
    })
}

/// One curve per group for a single dataset.
pub fn dataset_curves(grouping: &Grouping, dataset_id: &str, source: OptimumSource) -> Curves {
    let mut out = Curves { curves: Vec::new(), skipped: Vec::new() };
    for g in &grouping.groups {
        if let Some(s) = unusable(g, dataset_id) {
            out.skipped.push(s);
            continue;
        }
        let pts = group_points(g, |r| r.losses.get(dataset_id).copied());
        match fit_points(g, &pts, source.clone()) {
            Ok(c) => out.curves.push(c),
            Err(e) => out.skipped.push(Skipped { budget: g.budget, what: dataset_id.into(), reason: e.to_string() }),
        }
    }
    out
}

/// Skill optimum per group under the configured aggregation.
pub fn skill_curves(
    store: &ExperimentStore,
    grouping: &Grouping,
    skill: Skill,
    opts: &PipelineOptions,
) -> Result<Curves> {
    let label = skill_label(skill, opts.split);
    let datasets = skill_datasets(&store.skills, skill, opts.split);
    if datasets.is_empty() {
        return Err(Error::invalid(format!("no dataset matches ({skill}, {})", opts.split)));
    }
    let mut out = Curves { curves: Vec::new(), skipped: Vec::new() };
    for g in &grouping.groups {
        if let Some(s) = unusable(g, &label) {
            out.skipped.push(s);
            continue;
        }
        let source = OptimumSource::Skill(label.clone());
        match opts.aggregation {
            Aggregation::AverageLossFirst => {
                let avg = skill_average_losses(&g.members, &store.skills, skill, opts.split)?;
                for id in &avg.excluded {
                    out.skipped.push(Skipped {
                        budget: g.budget,
                        what: id.clone(),
                        reason: format!("run lacks a dataset of {label}"),
                    });
                }
                let by_id: BTreeMap<&str, f64> = avg.values.iter().map(|(id, v)| (id.as_str(), *v)).collect();
                let pts = group_points(g, |r| by_id.get(r.run_id.as_str()).copied());
                match fit_points(g, &pts, source) {
                    Ok(c) => out.curves.push(c),
                    Err(e) => out.skipped.push(Skipped { budget: g.budget, what: label.clone(), reason: e.to_string() }),
                }
            }
            Aggregation::PerDataset => {
                let mut per: Vec<ComputeOptimum> = Vec::new();
                for ds in &datasets {
                    let pts = group_points(g, |r| r.losses.get(ds).copied());
                    match fit_points(g, &pts, OptimumSource::Skill(ds.clone())) {
                        Ok(c) => per.push(c.optimum),
                        Err(e) => out.skipped.push(Skipped { budget: g.budget, what: ds.clone(), reason: e.to_string() }),
                    }
                }
                if per.is_empty() {
                    continue;
                }
                let valid: Vec<&ComputeOptimum> = per.iter().filter(|o| o.is_valid()).collect();
                let (pool, validity): (Vec<&ComputeOptimum>, Validity) = if valid.is_empty() {
                    (per.iter().collect(), per[0].validity)
                } else {
                    (valid, Validity::Valid)
                };
                for o in per.iter().filter(|o| !o.is_valid()) {
                    out.skipped.push(Skipped {
                        budget: g.budget,
                        what: o.source.label().to_string(),
                        reason: format!("optimum {}", o.validity),
                    });
                }
                let log_mean = pool.iter().map(|o| o.p_star.log10()).sum::<f64>() / pool.len() as f64;
                out.curves.push(CurveOptimum {
                    fit: None,
                    optimum: ComputeOptimum::new(g.budget, 10f64.powf(log_mean), source, validity),
                });
            }
        }
    }
    Ok(out)
}

/// APE optima for each group: from the external source when configured,
/// otherwise fitted on the first validation-role dataset.
pub fn ape_curves(store: &ExperimentStore, grouping: &Grouping, opts: &PipelineOptions) -> Result<Curves> {
    if let Some(ape) = &store.ape {
        let curves = grouping
            .groups
            .iter()
            .map(|g| {
                Ok(CurveOptimum {
                    fit: None,
                    optimum: ComputeOptimum::new(
                        g.budget,
                        ape.p_c_at(g.budget, opts.tolerance)?,
                        OptimumSource::Ape("external".into()),
                        Validity::Valid,
                    ),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(Curves { curves, skipped: Vec::new() });
    }
    let val = store
        .skills
        .iter()
        .find(|s| s.role == Role::Validation)
        .ok_or_else(|| Error::invalid("no APE source: supply --ape or a validation-role dataset"))?;
    Ok(dataset_curves(grouping, &val.dataset_id, OptimumSource::Ape(val.dataset_id.clone())))
}

/// Every per-dataset and per-skill fit of every datamix, sorted by
/// datamix, budget and source.
pub fn all_fits(store: &ExperimentStore, opts: &PipelineOptions) -> Result<Vec<FitRecord>> {
    let mut out = Vec::new();
    for mix in store.datamix_ids() {
        let grouping = group_mix(store, &mix, opts)?;
        for spec in &store.skills {
            let source = match spec.role {
                Role::Validation => OptimumSource::Ape(spec.dataset_id.clone()),
                Role::Evaluation => OptimumSource::Skill(spec.dataset_id.clone()),
            };
            for c in dataset_curves(&grouping, &spec.dataset_id, source).curves {
                out.push(FitRecord::new(c.fit.as_ref().expect("dataset fit"), &c.optimum, Some(mix.clone())));
            }
        }
        if opts.aggregation == Aggregation::AverageLossFirst {
            for skill in [Skill::Knowledge, Skill::Code] {
                if skill_datasets(&store.skills, skill, opts.split).is_empty() {
                    continue;
                }
                for c in skill_curves(store, &grouping, skill, opts)?.curves {
                    out.push(FitRecord::new(c.fit.as_ref().expect("average fit"), &c.optimum, Some(mix.clone())));
                }
            }
        }
    }
    out.sort_by(|a, b| {
        a.datamix_id
            .cmp(&b.datamix_id)
            .then(a.budget.total_cmp(&b.budget))
            .then_with(|| a.source.cmp(&b.source))
    });
    Ok(out)
}

/// Skill and APE optimum laws for one datamix.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimaReport {
    pub datamix_id: String,
    pub skills: BTreeMap<Skill, (Curves, Option<PowerLawOutcome>)>,
    pub ape: (Curves, Option<PowerLawOutcome>),
}

fn law(curves: &Curves) -> Option<PowerLawOutcome> {
    fit_power_law(&curves.optima()).ok()
}

pub fn optima_report(store: &ExperimentStore, datamix_id: &str, opts: &PipelineOptions) -> Result<OptimaReport> {
    let grouping = group_mix(store, datamix_id, opts)?;
    let mut skills = BTreeMap::new();
    for skill in [Skill::Knowledge, Skill::Code] {
        if skill_datasets(&store.skills, skill, opts.split).is_empty() {
            continue;
        }
        let curves = skill_curves(store, &grouping, skill, opts)?;
        let l = law(&curves);
        skills.insert(skill, (curves, l));
    }
    let ape = ape_curves(store, &grouping, opts)?;
    let ape_law = law(&ape);
    Ok(OptimaReport { datamix_id: datamix_id.to_string(), skills, ape: (ape, ape_law) })
}

/// Per-dataset residuals against the APE optima, pooled per skill.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub per_dataset: Vec<ResidualSet>,
    pub per_skill: BTreeMap<Skill, ResidualSet>,
    pub skipped: Vec<Skipped>,
}

impl ResidualReport {
    pub fn all_residuals(&self) -> Vec<crate::domain::Residual> {
        let mut all: Vec<_> = self.per_dataset.iter().flat_map(|s| s.residuals.iter().cloned()).collect();
        all.sort_by(|a, b| a.budget.total_cmp(&b.budget).then_with(|| a.dataset_id.cmp(&b.dataset_id)));
        all
    }
}

pub fn residual_report(store: &ExperimentStore, datamix_id: &str, opts: &PipelineOptions) -> Result<ResidualReport> {
    let grouping = group_mix(store, datamix_id, opts)?;
    let ape = ape_curves(store, &grouping, opts)?;
    let mut skipped = ape.skipped.clone();
    let ape_valid = ape.valid_optima();
    let mut per_dataset = Vec::new();
    let mut per_skill = BTreeMap::new();
    for skill in [Skill::Knowledge, Skill::Code] {
        let mut sets = Vec::new();
        for ds in skill_datasets(&store.skills, skill, opts.split) {
            let curves = dataset_curves(&grouping, &ds, OptimumSource::Skill(ds.clone()));
            skipped.extend(curves.skipped.iter().cloned());
            let mut skill_opt = Vec::new();
            for o in curves.optima() {
                if !o.is_valid() {
                    skipped.push(Skipped { budget: o.budget, what: ds.clone(), reason: format!("optimum {}", o.validity) });
                } else if ape_valid.iter().any(|a| a.budget == o.budget) {
                    skill_opt.push(o);
                }
            }
            let matched_ape: Vec<ComputeOptimum> = ape_valid
                .iter()
                .filter(|a| skill_opt.iter().any(|o| o.budget == a.budget))
                .cloned()
                .collect();
            if skill_opt.is_empty() {
                continue;
            }
            let set = compute_residuals(&skill_opt, &matched_ape, opts.dead_band)?;
            sets.push(set);
        }
        if !sets.is_empty() {
            per_skill.insert(skill, ResidualSet::pool(skill.as_str(), sets.iter()));
            per_dataset.extend(sets);
        }
    }
    Ok(ResidualReport { per_dataset, per_skill, skipped })
}

/// Smallest budget at which every listed datamix has a usable group.
pub fn common_smallest_budget(store: &ExperimentStore, opts: &PipelineOptions) -> Result<f64> {
    let mixes = store.datamix_ids();
    for b in budget_grid(store, opts) {
        let mut all = true;
        for m in &mixes {
            let g = group_mix(store, m, opts)?;
            if !g.groups.iter().any(|g| g.budget == b && g.usable()) {
                all = false;
                break;
            }
        }
        if all {
            return Ok(b);
        }
    }
    Err(Error::invalid("no budget is shared by every datamix"))
}

/// Skill optimum for every datamix at one budget, paired with its mix spec.
pub fn mix_optima(
    store: &ExperimentStore,
    skill: Skill,
    budget: f64,
    opts: &PipelineOptions,
) -> Result<Vec<(crate::domain::DatamixSpec, ComputeOptimum)>> {
    let mut out = Vec::new();
    for id in store.datamix_ids() {
        let mix = store
            .mix(&id)
            .ok_or_else(|| Error::invalid(format!("datamix {id} has no mixes entry")))?
            .clone();
        let grouping = group_mix(store, &id, opts)?;
        let only = Grouping {
            groups: grouping.groups.into_iter().filter(|g| g.budget == budget).collect(),
            unassigned: Vec::new(),
        };
        let curves = skill_curves(store, &only, skill, opts)?;
        let c = curves
            .curves
            .into_iter()
            .next()
            .ok_or_else(|| Error::Analysis(format!("datamix {id}: no {skill} optimum at {budget:e}")))?;
        if !c.optimum.is_valid() {
            return Err(Error::Analysis(format!(
                "datamix {id}: {skill} optimum at {budget:e} is {}",
                c.optimum.validity
            )));
        }
        out.push((mix, c.optimum));
    }
    Ok(out)
}

pub fn proportion_analysis(store: &ExperimentStore, skill: Skill, opts: &PipelineOptions) -> Result<ProportionCurve> {
    let budget = common_smallest_budget(store, opts)?;
    proportion_curve(&mix_optima(store, skill, budget, opts)?, skill)
}

/// Both skills' ratio curves and their crossover.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossoverAnalysis {
    pub budget: f64,
    pub knowledge: RatioCurve,
    pub code: RatioCurve,
    pub result: CrossoverResult,
}

pub fn crossover_analysis(store: &ExperimentStore, opts: &PipelineOptions) -> Result<CrossoverAnalysis> {
    let budget = common_smallest_budget(store, opts)?;
    let knowledge = RatioCurve::from_mixes(&mix_optima(store, Skill::Knowledge, budget, opts)?)?;
    let code = RatioCurve::from_mixes(&mix_optima(store, Skill::Code, budget, opts)?)?;
    let result = crossover_over_overlap(&knowledge, &code, opts.crossover_tol)?;
    Ok(CrossoverAnalysis { budget, knowledge, code, result })
}

/// Optimum shifts when each validation set replaces the first one as the
/// APE. Keys are budgets for a single datamix, or code/knowledge ratios at
/// the smallest shared budget when several datamixes are present.
pub fn sensitivity_analysis(store: &ExperimentStore, opts: &PipelineOptions) -> Result<SensitivityTable> {
    let vals: Vec<&str> = store
        .skills
        .iter()
        .filter(|s| s.role == Role::Validation)
        .map(|s| s.dataset_id.as_str())
        .collect();
    if vals.len() < 2 {
        return Err(Error::invalid("sensitivity needs at least 2 validation-role datasets"));
    }
    let mixes = store.datamix_ids();
    let keyed = |ds: &str| -> Result<Vec<(f64, f64)>> {
        if mixes.len() == 1 {
            let grouping = group_mix(store, &mixes[0], opts)?;
            let curves = dataset_curves(&grouping, ds, OptimumSource::Ape(ds.into()));
            Ok(curves.valid_optima().iter().map(|o| (o.budget, o.p_star)).collect())
        } else {
            let budget = common_smallest_budget(store, opts)?;
            let mut out = Vec::new();
            for id in &mixes {
                let mix = store
                    .mix(id)
                    .ok_or_else(|| Error::invalid(format!("datamix {id} has no mixes entry")))?;
                let ratio = mix
                    .code_knowledge_ratio()
                    .ok_or_else(|| Error::Analysis(format!("datamix {id} has no knowledge data")))?;
                let grouping = group_mix(store, id, opts)?;
                let only = Grouping {
                    groups: grouping.groups.into_iter().filter(|g| g.budget == budget).collect(),
                    unassigned: Vec::new(),
                };
                for o in dataset_curves(&only, ds, OptimumSource::Ape(ds.into())).valid_optima() {
                    out.push((ratio, o.p_star));
                }
            }
            Ok(out)
        }
    };
    let baseline = keyed(vals[0])?;
    let mut variants = BTreeMap::new();
    for v in &vals[1..] {
        variants.insert(v.to_string(), keyed(v)?);
    }
    validation_sensitivity_keyed(&baseline, &variants)
}
