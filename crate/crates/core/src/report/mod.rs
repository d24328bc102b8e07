//! SVG charts and machine-readable tables for every analysis, and the
//! assembly of a complete report directory.

mod svg;
mod tables;

pub use svg::{render_svg, MarkerSet, PlotKind, PlotSpec, Scale, Series, Style, PALETTE};
pub use tables::{
    crossover_json, fits_json, residuals_csv, sensitivity_csv, to_json, ArtifactSet, Manifest, ManifestEntry,
};

use std::collections::BTreeMap;

use serde::Serialize;

use crate::analyze::{CrossoverResult, ProportionCurve, RatioCurve, ResidualSet, SensitivityTable, SensitivityThresholds};
use crate::domain::{ComputeOptimum, Skill};
use crate::error::Result;
use crate::fit::{project_ape, PowerLawFit};
use crate::ingest::{ExperimentStore, Grouping};
use crate::pipeline::{self, Aggregation, Curves, OptimaReport, PipelineOptions, Skipped};

/// Samples per fitted parabola when drawing IsoFLOP curves.
const CURVE_SAMPLES: usize = 32;

fn budget_label(b: f64) -> String {
    format!("{b:.2e} FLOPs")
}

/// Fitted IsoFLOP parabolas, one series per budget, with APE projections and
/// the skill optima as marker overlays.
pub fn isoflop_plot(title: &str, grouping: &Grouping, curves: &Curves, ape: &Curves) -> Result<PlotSpec> {
    let mut series = Vec::new();
    let mut ape_points = Vec::new();
    let mut vertices = Vec::new();
    for (i, c) in curves.curves.iter().enumerate() {
        let Some(fit) = c.fit else { continue };
        let Some(group) = grouping.groups.iter().find(|g| g.budget == c.optimum.budget) else {
            continue;
        };
        let (lo, hi) = group.param_range();
        let (xl, xh) = ((lo as f64).log10(), (hi as f64).log10());
        let points = (0..CURVE_SAMPLES)
            .map(|k| {
                let x = xl + (xh - xl) * k as f64 / (CURVE_SAMPLES - 1) as f64;
                (10f64.powf(x), fit.eval(x))
            })
            .collect();
        series.push(Series {
            label: budget_label(c.optimum.budget),
            points,
            style: Style::line(PALETTE[i % PALETTE.len()]),
        });
        if c.optimum.is_valid() {
            vertices.push((c.optimum.p_star, fit.eval(c.optimum.p_star.log10())));
        }
        if let Some(a) = ape.curves.iter().find(|a| a.optimum.budget == c.optimum.budget) {
            let (x, y) = project_ape(&fit, a.optimum.p_star)?;
            ape_points.push((10f64.powf(x), y));
        }
    }
    let mut markers = Vec::new();
    if !ape_points.is_empty() {
        markers.push(MarkerSet { label: "APE optima (projected)".into(), points: ape_points, color: "black".into() });
    }
    if !vertices.is_empty() {
        markers.push(MarkerSet { label: "skill optima".into(), points: vertices, color: "#d62728".into() });
    }
    Ok(PlotSpec {
        kind: PlotKind::Isoflop,
        title: title.into(),
        x_label: "parameters".into(),
        y_label: "NLL (nats/token)".into(),
        series,
        x_scale: Scale::Log10,
        y_scale: Scale::Linear,
        markers,
    })
}

/// Valid optima per source with their fitted power laws.
pub fn co_power_law_plot(title: &str, laws: &[(String, Vec<ComputeOptimum>, Option<PowerLawFit>)]) -> PlotSpec {
    let mut series = Vec::new();
    let mut markers = Vec::new();
    for (i, (label, optima, law)) in laws.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = optima.iter().filter(|o| o.is_valid()).map(|o| (o.budget, o.p_star)).collect();
        if pts.is_empty() {
            continue;
        }
        if let Some(law) = law {
            let (lo, hi) = pts.iter().fold((f64::INFINITY, 0.0f64), |(a, b), p| (a.min(p.0), b.max(p.0)));
            series.push(Series {
                label: format!("{label}: p* = {:.3e}·B^{:.3}", law.coefficient, law.exponent),
                points: vec![(lo, law.eval(lo)), (hi, law.eval(hi))],
                style: Style::dashed(color),
            });
        } else {
            series.push(Series { label: label.clone(), points: pts.clone(), style: Style::line(color) });
        }
        markers.push(MarkerSet { label: format!("{label} optima"), points: pts, color: color.into() });
    }
    PlotSpec {
        kind: PlotKind::CoPowerLaw,
        title: title.into(),
        x_label: "compute (FLOPs)".into(),
        y_label: "optimal parameters".into(),
        series,
        x_scale: Scale::Log10,
        y_scale: Scale::Log10,
        markers,
    }
}

/// Step outlines of residual histograms on shared bins.
pub fn residual_hist_plot(title: &str, sets: &[&ResidualSet], bins: usize) -> PlotSpec {
    let values: Vec<f64> = sets.iter().flat_map(|s| s.residuals.iter().map(|r| r.value)).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 0.1 };
    let mut series = Vec::new();
    let mut markers = Vec::new();
    for (i, s) in sets.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut counts = vec![0usize; bins];
        for r in &s.residuals {
            let k = (((r.value - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        let mut pts = vec![(lo, 0.0)];
        for (k, &c) in counts.iter().enumerate() {
            let x0 = lo + width * k as f64;
            pts.push((x0, c as f64));
            pts.push((x0 + width, c as f64));
        }
        pts.push((lo + width * bins as f64, 0.0));
        series.push(Series { label: s.key.clone(), points: pts, style: Style::line(color) });
        if !s.residuals.is_empty() {
            markers.push(MarkerSet { label: format!("{} mean", s.key), points: vec![(s.mean, 0.0)], color: color.into() });
        }
    }
    PlotSpec {
        kind: PlotKind::ResidualHist,
        title: title.into(),
        x_label: "log10 p_skill - log10 p_APE".into(),
        y_label: "count".into(),
        series,
        x_scale: Scale::Linear,
        y_scale: Scale::Linear,
        markers,
    }
}

pub fn proportion_plot(title: &str, curves: &[&ProportionCurve]) -> PlotSpec {
    let series = curves
        .iter()
        .enumerate()
        .map(|(i, c)| Series {
            label: format!("{} (slope {:.3})", c.skill, c.slope),
            points: c.points.iter().map(|p| (p.proportion, p.p_star)).collect(),
            style: Style::line(PALETTE[i % PALETTE.len()]).with_points(),
        })
        .collect();
    PlotSpec {
        kind: PlotKind::Proportion,
        title: title.into(),
        x_label: "skill-relevant proportion of pretraining data".into(),
        y_label: "optimal parameters".into(),
        series,
        x_scale: Scale::Linear,
        y_scale: Scale::Log10,
        markers: Vec::new(),
    }
}

pub fn crossover_plot(title: &str, knowledge: &RatioCurve, code: &RatioCurve, result: Option<&CrossoverResult>) -> PlotSpec {
    let series = vec![
        Series { label: "knowledge".into(), points: knowledge.points.clone(), style: Style::line(PALETTE[0]).with_points() },
        Series { label: "code".into(), points: code.points.clone(), style: Style::line(PALETTE[1]).with_points() },
    ];
    let markers = result
        .map(|r| {
            vec![MarkerSet {
                label: format!("crossover r = {:.3}", r.ratio),
                points: vec![(r.ratio, r.p_at_crossover)],
                color: "black".into(),
            }]
        })
        .unwrap_or_default();
    PlotSpec {
        kind: PlotKind::Crossover,
        title: title.into(),
        x_label: "code / knowledge data ratio".into(),
        y_label: "optimal parameters".into(),
        series,
        x_scale: Scale::Log10,
        y_scale: Scale::Log10,
        markers,
    }
}

pub fn sensitivity_plot(title: &str, table: &SensitivityTable) -> PlotSpec {
    let mut by_variant: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &table.rows {
        by_variant.entry(&r.validation_id).or_default().push((r.key, r.rel_diff));
    }
    let series = by_variant
        .into_iter()
        .enumerate()
        .map(|(i, (id, mut pts))| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { label: id.to_string(), points: pts, style: Style::line(PALETTE[i % PALETTE.len()]).with_points() }
        })
        .collect();
    PlotSpec {
        kind: PlotKind::Sensitivity,
        title: title.into(),
        x_label: "key (budget or code/knowledge ratio)".into(),
        y_label: "relative difference in p*".into(),
        series,
        x_scale: Scale::Log10,
        y_scale: Scale::Linear,
        markers: Vec::new(),
    }
}

#[derive(Debug, Serialize)]
pub struct LawTable<'a> {
    pub optima: Vec<&'a ComputeOptimum>,
    pub power_law: Option<&'a PowerLawFit>,
    pub excluded: Vec<&'a ComputeOptimum>,
    pub skipped: &'a [Skipped],
}

fn law_table<'a>(curves: &'a Curves, law: &'a Option<crate::fit::PowerLawOutcome>) -> LawTable<'a> {
    LawTable {
        optima: curves.curves.iter().map(|c| &c.optimum).collect(),
        power_law: law.as_ref().map(|l| &l.fit),
        excluded: law.as_ref().map(|l| l.excluded.iter().collect()).unwrap_or_default(),
        skipped: &curves.skipped,
    }
}

/// Optima, power laws and exclusions of one datamix as JSON.
pub fn optima_value(report: &OptimaReport) -> serde_json::Value {
    let skills: BTreeMap<&str, LawTable> =
        report.skills.iter().map(|(s, (c, l))| (s.as_str(), law_table(c, l))).collect();
    serde_json::json!({
        "datamix_id": report.datamix_id,
        "skills": skills,
        "ape": law_table(&report.ape.0, &report.ape.1),
    })
}

pub fn optima_json(report: &OptimaReport) -> Result<String> {
    to_json(&optima_value(report))
}

/// Analyses that could not run, with the reason.
#[derive(Debug, Default, Serialize)]
struct Notes {
    skipped_analyses: BTreeMap<String, String>,
}

/// Builds every plot and table the store supports. Analyses whose inputs are
/// missing are listed in `tables/notes.json` instead of failing the report.
pub fn build_report(store: &ExperimentStore, opts: &PipelineOptions) -> Result<ArtifactSet> {
    let mut out = ArtifactSet::new();
    let mut notes = Notes::default();
    out.add("tables/fits.json", fits_json(&pipeline::all_fits(store, opts)?)?);

    let mixes = store.datamix_ids();
    let primary = mixes.first().cloned().unwrap_or_default();
    let grouping = pipeline::group_mix(store, &primary, opts)?;
    let plot_opts = PipelineOptions { aggregation: Aggregation::AverageLossFirst, ..*opts };

    match pipeline::optima_report(store, &primary, opts) {
        Ok(report) => {
            out.add("tables/optima.json", optima_json(&report)?);
            let mut laws = Vec::new();
            for (skill, (curves, law)) in &report.skills {
                let plot_curves = pipeline::skill_curves(store, &grouping, *skill, &plot_opts)?;
                let spec = isoflop_plot(
                    &format!("IsoFLOP curves: {skill} ({}, {primary})", opts.split),
                    &grouping,
                    &plot_curves,
                    &report.ape.0,
                )?;
                if !spec.series.is_empty() {
                    out.add(format!("plots/isoflop_{skill}.svg"), render_svg(&spec)?);
                }
                laws.push((skill.to_string(), curves.optima(), law.as_ref().map(|l| l.fit)));
            }
            laws.push(("APE".into(), report.ape.0.optima(), report.ape.1.as_ref().map(|l| l.fit)));
            let spec = co_power_law_plot(&format!("Compute-optimal parameters ({primary})"), &laws);
            if !spec.series.is_empty() {
                out.add("plots/co_power_law.svg", render_svg(&spec)?);
            }
        }
        Err(e) => {
            notes.skipped_analyses.insert("optima".into(), e.to_string());
        }
    }

    match pipeline::residual_report(store, &primary, opts) {
        Ok(res) => {
            out.add("tables/residuals.csv", residuals_csv(&res.all_residuals())?);
            let summary: BTreeMap<&str, serde_json::Value> = res
                .per_skill
                .iter()
                .map(|(s, set)| {
                    (s.as_str(), serde_json::json!({"mean": set.mean, "stdev": set.stdev, "n": set.residuals.len()}))
                })
                .collect();
            out.add("tables/residual_summary.json", to_json(&summary)?);
            let sets: Vec<&ResidualSet> = res.per_skill.values().collect();
            if !sets.is_empty() {
                let spec = residual_hist_plot(&format!("Parameter-count residuals ({primary})"), &sets, 12);
                out.add("plots/residual_hist.svg", render_svg(&spec)?);
            }
        }
        Err(e) => {
            notes.skipped_analyses.insert("residuals".into(), e.to_string());
        }
    }

    if mixes.len() > 1 {
        let mut curves = Vec::new();
        for skill in [Skill::Knowledge, Skill::Code] {
            match pipeline::proportion_analysis(store, skill, opts) {
                Ok(c) => {
                    out.add(format!("tables/proportion_{skill}.json"), to_json(&c)?);
                    curves.push(c);
                }
                Err(e) => {
                    notes.skipped_analyses.insert(format!("proportion_{skill}"), e.to_string());
                }
            }
        }
        if !curves.is_empty() {
            let refs: Vec<&ProportionCurve> = curves.iter().collect();
            out.add("plots/proportion.svg", render_svg(&proportion_plot("Optimum vs datamix proportion", &refs))?);
        }
        match pipeline::crossover_analysis(store, opts) {
            Ok(x) => {
                out.add("tables/crossover.json", crossover_json(&x.result)?);
                let spec = crossover_plot("Code/knowledge crossover", &x.knowledge, &x.code, Some(&x.result));
                out.add("plots/crossover.svg", render_svg(&spec)?);
            }
            Err(e) => {
                notes.skipped_analyses.insert("crossover".into(), e.to_string());
            }
        }
    }

    match pipeline::sensitivity_analysis(store, opts) {
        Ok(t) => {
            let th = SensitivityThresholds::default();
            out.add("tables/sensitivity.csv", sensitivity_csv(&t, &th)?);
            out.add("plots/sensitivity.svg", render_svg(&sensitivity_plot("Validation-set sensitivity", &t))?);
        }
        Err(e) => {
            notes.skipped_analyses.insert("sensitivity".into(), e.to_string());
        }
    }

    out.add("tables/notes.json", to_json(&notes)?);
    Ok(out)
}
