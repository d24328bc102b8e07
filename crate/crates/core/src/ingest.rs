//! Run-log and configuration parsing, IsoFLOP grouping and skill averaging.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{
    estimate_flops, DatamixSpec, IsoFlopGroup, Role, RunRecord, Skill, SkillSpec, Split,
};
use crate::error::{Error, Result};

/// Relative tolerance used both for `flops` vs `6pt` at ingest and for
/// assigning runs to nominal budgets.
pub const DEFAULT_TOLERANCE: f64 = 0.05;

const FIXED_COLUMNS: [&str; 4] = ["run_id", "datamix_id", "params", "tokens"];
const LOSS_PREFIX: &str = "loss:";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunFormat {
    Csv,
    JsonLines,
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    pub flops_tolerance: f64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            flops_tolerance: DEFAULT_TOLERANCE,
        }
    }
}

/// Text form used for every float we write: 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn parse_runs(text: &str, format: RunFormat, opts: &ParseOptions) -> Result<Vec<RunRecord>> {
    match format {
        RunFormat::Csv => parse_runs_csv(text, opts),
        RunFormat::JsonLines => parse_runs_jsonl(text, opts),
    }
}

fn parse_err(message: impl Into<String>, row: u64, column: &str) -> Error {
    Error::Parse {
        message: message.into(),
        row,
        column: column.to_string(),
    }
}

fn parse_count(cell: &str, row: u64, column: &str) -> Result<u64> {
    if let Ok(v) = cell.parse::<u64>() {
        if v == 0 {
            return Err(parse_err(format!("{column} must be positive"), row, column));
        }
        return Ok(v);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 1.0 && v.fract() == 0.0 && v <= u64::MAX as f64 => {
            Ok(v as u64)
        }
        Ok(v) if v <= 0.0 => Err(parse_err(format!("{column} must be positive"), row, column)),
        _ => Err(parse_err(format!("malformed count '{cell}'"), row, column)),
    }
}

fn parse_runs_csv(text: &str, opts: &ParseOptions) -> Result<Vec<RunRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < FIXED_COLUMNS.len() || names[..4] != FIXED_COLUMNS {
        return Err(parse_err(
            format!("header must start with {}", FIXED_COLUMNS.join(",")),
            1,
            names.first().copied().unwrap_or(""),
        ));
    }
    let mut flops_col = None;
    let mut loss_cols = Vec::new();
    for (i, &name) in names.iter().enumerate().skip(4) {
        if name == "flops" && i == 4 {
            flops_col = Some(i);
        } else if let Some(ds) = name.strip_prefix(LOSS_PREFIX) {
            if ds.is_empty() || loss_cols.iter().any(|(_, d): &(usize, String)| d == ds) {
                return Err(parse_err("bad or duplicate loss column", 1, name));
            }
            loss_cols.push((i, ds.to_string()));
        } else {
            return Err(parse_err("unexpected column", 1, name));
        }
    }
    if loss_cols.is_empty() {
        return Err(parse_err("no loss:<dataset> columns", 1, ""));
    }

    let mut runs = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record.position().map(|p| p.line()).unwrap_or(0);
        let cell = |i: usize| record.get(i).unwrap_or("");
        let run_id = cell(0).to_string();
        if run_id.is_empty() {
            return Err(parse_err("missing run_id", row, "run_id"));
        }
        let datamix_id = cell(1).to_string();
        if datamix_id.is_empty() {
            return Err(parse_err("missing datamix_id", row, "datamix_id"));
        }
        let params = parse_count(cell(2), row, "params")?;
        let tokens = parse_count(cell(3), row, "tokens")?;
        let flops = match flops_col {
            Some(i) if !cell(i).is_empty() => {
                let f: f64 = cell(i)
                    .parse()
                    .map_err(|_| parse_err(format!("malformed flops '{}'", cell(i)), row, "flops"))?;
                if !(f.is_finite() && f > 0.0) {
                    return Err(parse_err("flops must be positive and finite", row, "flops"));
                }
                let expected = estimate_flops(params, tokens);
                let dev = (f - expected).abs() / expected;
                if dev > opts.flops_tolerance {
                    return Err(parse_err(
                        format!(
                            "flops deviates from 6*params*tokens by {dev:.4} (tolerance {})",
                            opts.flops_tolerance
                        ),
                        row,
                        "flops",
                    ));
                }
                f
            }
            _ => estimate_flops(params, tokens),
        };
        let mut losses = BTreeMap::new();
        for (i, ds) in &loss_cols {
            let column = format!("{LOSS_PREFIX}{ds}");
            let raw = cell(*i);
            if raw.is_empty() {
                return Err(parse_err("missing loss value", row, &column));
            }
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(format!("malformed loss '{raw}'"), row, &column))?;
            if !v.is_finite() {
                return Err(parse_err("non-finite loss", row, &column));
            }
            if v < 0.0 {
                return Err(parse_err("negative loss", row, &column));
            }
            losses.insert(ds.clone(), v);
        }
        runs.push(RunRecord {
            run_id,
            datamix_id,
            params,
            tokens,
            flops,
            losses,
        });
    }
    Ok(runs)
}

#[derive(Deserialize)]
struct JsonRun {
    run_id: String,
    datamix_id: String,
    params: u64,
    tokens: u64,
    #[serde(default)]
    flops: Option<f64>,
    losses: BTreeMap<String, f64>,
}

fn parse_runs_jsonl(text: &str, opts: &ParseOptions) -> Result<Vec<RunRecord>> {
    let mut runs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: JsonRun =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string(), row, "json"))?;
        if raw.params == 0 {
            return Err(parse_err("params must be positive", row, "params"));
        }
        if raw.tokens == 0 {
            return Err(parse_err("tokens must be positive", row, "tokens"));
        }
        let rec = RunRecord {
            flops: raw.flops.unwrap_or_else(|| estimate_flops(raw.params, raw.tokens)),
            run_id: raw.run_id,
            datamix_id: raw.datamix_id,
            params: raw.params,
            tokens: raw.tokens,
            losses: raw.losses,
        };
        rec.validate(Some(opts.flops_tolerance))
            .map_err(|e| parse_err(e.to_string(), row, "record"))?;
        runs.push(rec);
    }
    Ok(runs)
}

/// Writes the `runs.csv` schema with an explicit `flops` column. All runs
/// must report the same set of datasets.
pub fn write_runs_csv(runs: &[RunRecord]) -> Result<String> {
    let datasets: Vec<&String> = match runs.first() {
        Some(r) => r.losses.keys().collect(),
        None => Vec::new(),
    };
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.push("flops".into());
    header.extend(datasets.iter().map(|d| format!("{LOSS_PREFIX}{d}")));
    w.write_record(&header)?;
    for r in runs {
        if !r.losses.keys().eq(datasets.iter().copied()) {
            return Err(Error::invalid(format!(
                "run {} reports a different dataset set than run {}",
                r.run_id, runs[0].run_id
            )));
        }
        let mut row = vec![
            r.run_id.clone(),
            r.datamix_id.clone(),
            r.params.to_string(),
            r.tokens.to_string(),
            format_float(r.flops),
        ];
        row.extend(r.losses.values().map(|&v| format_float(v)));
        w.write_record(&row)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::invalid(format!("csv writer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

pub fn write_runs_jsonl(runs: &[RunRecord]) -> Result<String> {
    let mut out = String::new();
    for r in runs {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// `n` budgets evenly spaced in log10 between `lo` and `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..n)
                .map(|i| {
                    if i == 0 {
                        lo
                    } else if i == n - 1 {
                        hi
                    } else {
                        10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)
                    }
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    pub groups: Vec<IsoFlopGroup>,
    /// Run ids that matched no nominal budget.
    pub unassigned: Vec<String>,
}

impl Grouping {
    /// Groups with fewer than three members.
    pub fn unusable(&self) -> impl Iterator<Item = &IsoFlopGroup> {
        self.groups.iter().filter(|g| !g.usable())
    }
}

fn within(flops: f64, budget: f64, tol: f64) -> bool {
    (flops - budget).abs() / budget <= tol
}

/// Assigns each run to the nominal budget it lies within `rel_tolerance`
/// of. Empty groups are dropped.
pub fn group_isoflop(
    runs: &[RunRecord],
    nominal_budgets: &[f64],
    rel_tolerance: f64,
) -> Result<Grouping> {
    if !(rel_tolerance > 0.0 && rel_tolerance < 0.5) {
        return Err(Error::invalid(format!(
            "grouping tolerance {rel_tolerance} outside (0, 0.5)"
        )));
    }
    if nominal_budgets.iter().any(|&b| !(b.is_finite() && b > 0.0))
        || nominal_budgets.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::invalid(
            "nominal budgets must be positive and strictly increasing",
        ));
    }
    let mut members: Vec<Vec<RunRecord>> = vec![Vec::new(); nominal_budgets.len()];
    let mut unassigned = Vec::new();
    for run in runs {
        let mut hits = nominal_budgets
            .iter()
            .enumerate()
            .filter(|(_, &b)| within(run.flops, b, rel_tolerance));
        match (hits.next(), hits.next()) {
            (None, _) => unassigned.push(run.run_id.clone()),
            (Some((i, _)), None) => members[i].push(run.clone()),
            (Some((_, a)), Some((_, b))) => {
                return Err(Error::invalid(format!(
                    "ambiguous budget grid: run {} ({:e} FLOPs) is within {} of both {:e} and {:e}",
                    run.run_id, run.flops, rel_tolerance, a, b
                )))
            }
        }
    }
    let mut groups = Vec::new();
    for (&budget, members) in nominal_budgets.iter().zip(members) {
        if members.is_empty() {
            continue;
        }
        let mut seen = BTreeSet::new();
        for m in &members {
            if !seen.insert(m.params) {
                return Err(Error::invalid(format!(
                    "group at {budget:e} FLOPs has two runs with {} params; group one datamix at a time",
                    m.params
                )));
            }
        }
        groups.push(IsoFlopGroup { budget, members });
    }
    Ok(Grouping { groups, unassigned })
}

fn round_sig(x: f64, digits: i32) -> f64 {
    let mag = 10f64.powi(digits - 1 - x.log10().floor() as i32);
    (x * mag).round() / mag
}

/// Recovers a nominal budget grid from run FLOPs by clustering runs that
/// lie within `rel_tolerance` of the smallest member of their cluster. Each
/// nominal value is the cluster's geometric mean rounded to three significant
/// digits, unless rounding would push a member out of tolerance.
pub fn infer_budget_grid(runs: &[RunRecord], rel_tolerance: f64) -> Vec<f64> {
    let mut flops: Vec<f64> = runs.iter().map(|r| r.flops).collect();
    flops.sort_by(f64::total_cmp);
    let mut clusters: Vec<Vec<f64>> = Vec::new();
    for f in flops {
        match clusters.last_mut() {
            Some(c) if (f - c[0]) / c[0] <= rel_tolerance => c.push(f),
            _ => clusters.push(vec![f]),
        }
    }
    clusters
        .into_iter()
        .map(|c| {
            let geo = 10f64.powf(c.iter().map(|f| f.log10()).sum::<f64>() / c.len() as f64);
            let rounded = round_sig(geo, 3);
            if c.iter().all(|&f| within(f, rounded, rel_tolerance)) {
                rounded
            } else {
                geo
            }
        })
        .collect()
}

/// Evaluation datasets that enter the `(skill, split)` average, sorted.
pub fn skill_datasets(skills: &[SkillSpec], skill: Skill, split: Split) -> Vec<String> {
    let mut ids: Vec<String> = skills
        .iter()
        .filter(|s| {
            s.skill == skill && s.split == split && s.role == Role::Evaluation && !s.exclude_from_average
        })
        .map(|s| s.dataset_id.clone())
        .collect();
    ids.sort();
    ids
}

/// Mean NLL over the record's datasets matching `(skill, split)`.
pub fn skill_average_loss(
    record: &RunRecord,
    skills: &[SkillSpec],
    skill: Skill,
    split: Split,
) -> Result<f64> {
    let values: Vec<f64> = skill_datasets(skills, skill, split)
        .iter()
        .filter_map(|d| record.losses.get(d).copied())
        .collect();
    if values.is_empty() {
        return Err(Error::invalid(format!(
            "run {}: no dataset matches ({skill}, {split})",
            record.run_id
        )));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillAverages {
    pub datasets: Vec<String>,
    /// `(run_id, mean loss)` in input order.
    pub values: Vec<(String, f64)>,
    /// Runs missing at least one of `datasets`.
    pub excluded: Vec<String>,
}

/// Skill averages over a fixed dataset set, so every run averages the same
/// datasets.
pub fn skill_average_losses(
    records: &[RunRecord],
    skills: &[SkillSpec],
    skill: Skill,
    split: Split,
) -> Result<SkillAverages> {
    let datasets = skill_datasets(skills, skill, split);
    if datasets.is_empty() {
        return Err(Error::invalid(format!("no dataset matches ({skill}, {split})")));
    }
    let mut values = Vec::new();
    let mut excluded = Vec::new();
    for r in records {
        let got: Option<Vec<f64>> = datasets.iter().map(|d| r.losses.get(d).copied()).collect();
        match got {
            Some(v) => values.push((r.run_id.clone(), v.iter().sum::<f64>() / v.len() as f64)),
            None => excluded.push(r.run_id.clone()),
        }
    }
    Ok(SkillAverages {
        datasets,
        values,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApeEntry {
    pub budget: f64,
    pub p_c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawParams {
    pub coefficient: f64,
    pub exponent: f64,
}

/// Externally supplied APE compute optima: a per-budget table or a law
/// `p_c = G·B^b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApeSource {
    Table(Vec<ApeEntry>),
    PowerLaw(PowerLawParams),
}

impl ApeSource {
    /// APE parameter count at `budget`. Table lookups take the nearest entry
    /// within `rel_tolerance`.
    pub fn p_c_at(&self, budget: f64, rel_tolerance: f64) -> Result<f64> {
        match self {
            ApeSource::PowerLaw(law) => Ok(law.coefficient * budget.powf(law.exponent)),
            ApeSource::Table(entries) => entries
                .iter()
                .filter(|e| within(budget, e.budget, rel_tolerance))
                .min_by(|a, b| {
                    (a.budget - budget)
                        .abs()
                        .total_cmp(&(b.budget - budget).abs())
                })
                .map(|e| e.p_c)
                .ok_or_else(|| {
                    Error::invalid(format!("APE table has no entry for budget {budget:e}"))
                }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ApeSource::PowerLaw(law) => {
                if !(law.coefficient > 0.0 && law.coefficient.is_finite() && law.exponent.is_finite()) {
                    return Err(Error::invalid("APE power law needs coefficient > 0"));
                }
            }
            ApeSource::Table(entries) => {
                if entries.is_empty() {
                    return Err(Error::invalid("APE table is empty"));
                }
                if entries.iter().any(|e| !(e.budget > 0.0 && e.p_c > 0.0)) {
                    return Err(Error::invalid("APE table entries must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Runs plus the configuration they are analysed under.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentStore {
    pub runs: Vec<RunRecord>,
    pub skills: Vec<SkillSpec>,
    /// May be empty when no datamix analysis is requested; otherwise every
    /// run's datamix must be listed.
    pub mixes: Vec<DatamixSpec>,
    pub ape: Option<ApeSource>,
}

impl ExperimentStore {
    pub fn new(
        runs: Vec<RunRecord>,
        skills: Vec<SkillSpec>,
        mixes: Vec<DatamixSpec>,
        ape: Option<ApeSource>,
    ) -> Result<Self> {
        let store = ExperimentStore {
            runs,
            skills,
            mixes,
            ape,
        };
        store.validate()?;
        Ok(store)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for s in &self.skills {
            if !ids.insert(s.dataset_id.as_str()) {
                return Err(Error::invalid(format!(
                    "dataset {} listed twice in skills",
                    s.dataset_id
                )));
            }
        }
        let mut mix_ids = BTreeSet::new();
        for m in &self.mixes {
            m.validate()?;
            if !mix_ids.insert(m.datamix_id.as_str()) {
                return Err(Error::invalid(format!("datamix {} listed twice", m.datamix_id)));
            }
        }
        for r in &self.runs {
            if let Some(ds) = r.losses.keys().find(|d| !ids.contains(d.as_str())) {
                return Err(Error::invalid(format!(
                    "run {}: dataset {} has no skills entry",
                    r.run_id, ds
                )));
            }
            if !self.mixes.is_empty() && !mix_ids.contains(r.datamix_id.as_str()) {
                return Err(Error::invalid(format!(
                    "run {}: datamix {} has no mixes entry",
                    r.run_id, r.datamix_id
                )));
            }
        }
        if let Some(ape) = &self.ape {
            ape.validate()?;
        }
        Ok(())
    }

    pub fn skill(&self, dataset_id: &str) -> Option<&SkillSpec> {
        self.skills.iter().find(|s| s.dataset_id == dataset_id)
    }

    pub fn mix(&self, datamix_id: &str) -> Option<&DatamixSpec> {
        self.mixes.iter().find(|m| m.datamix_id == datamix_id)
    }

    /// Datamix ids in first-appearance order.
    pub fn datamix_ids(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.runs {
            if !out.contains(&r.datamix_id) {
                out.push(r.datamix_id.clone());
            }
        }
        out
    }

    pub fn runs_for_mix(&self, datamix_id: &str) -> Vec<RunRecord> {
        self.runs
            .iter()
            .filter(|r| r.datamix_id == datamix_id)
            .cloned()
            .collect()
    }

    /// Errors unless the APE source covers every budget.
    pub fn check_ape_coverage(&self, budgets: &[f64], rel_tolerance: f64) -> Result<()> {
        let ape = self
            .ape
            .as_ref()
            .ok_or_else(|| Error::invalid("no APE source configured"))?;
        for &b in budgets {
            ape.p_c_at(b, rel_tolerance)?;
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_runs(path: &Path, opts: &ParseOptions) -> Result<Vec<RunRecord>> {
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("ndjson") => RunFormat::JsonLines,
        _ => RunFormat::Csv,
    };
    parse_runs(&read(path)?, format, opts)
}

pub fn load_skills(path: &Path) -> Result<Vec<SkillSpec>> {
    Ok(serde_json::from_str(&read(path)?)?)
}

pub fn load_mixes(path: &Path) -> Result<Vec<DatamixSpec>> {
    let mixes: Vec<DatamixSpec> = serde_json::from_str(&read(path)?)?;
    for m in &mixes {
        m.validate()?;
    }
    Ok(mixes)
}

pub fn load_ape(path: &Path) -> Result<ApeSource> {
    let ape: ApeSource = serde_json::from_str(&read(path)?)?;
    ape.validate()?;
    Ok(ape)
}
