//! Second-stage analyses over fitted optima: hunger residuals, optimum vs
//! datamix proportion, the code/knowledge crossover ratio and sensitivity
//! to the choice of validation set.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{classify_hunger, ComputeOptimum, DatamixSpec, Residual, Skill};
use crate::error::{Error, Result};
use crate::fit::linear_regression;

/// Default bisection tolerance on `|Δ log10 p*|` for crossovers.
pub const DEFAULT_CROSSOVER_TOL: f64 = 1e-6;

/// Keys (budgets or ratios) closer than this, relatively, are the same key.
const KEY_MATCH: f64 = 1e-9;

fn same_key(a: f64, b: f64) -> bool {
    (a - b).abs() <= KEY_MATCH * a.abs().max(b.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSet {
    /// Grouping key such as a skill name.
    pub key: String,
    pub residuals: Vec<Residual>,
    pub mean: f64,
    /// Population standard deviation.
    pub stdev: f64,
}

impl ResidualSet {
    pub fn new(key: impl Into<String>, mut residuals: Vec<Residual>) -> Self {
        residuals.sort_by(|a, b| a.budget.total_cmp(&b.budget).then_with(|| a.dataset_id.cmp(&b.dataset_id)));
        let n = residuals.len() as f64;
        let (mean, stdev) = if residuals.is_empty() {
            (0.0, 0.0)
        } else {
            let mean = residuals.iter().map(|r| r.value).sum::<f64>() / n;
            let var = residuals.iter().map(|r| (r.value - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        ResidualSet {
            key: key.into(),
            residuals,
            mean,
            stdev,
        }
    }

    /// Pools several sets (e.g. every dataset of one skill) under one key.
    pub fn pool<'a>(key: impl Into<String>, sets: impl IntoIterator<Item = &'a ResidualSet>) -> Self {
        let all = sets.into_iter().flat_map(|s| s.residuals.iter().cloned()).collect();
        Self::new(key, all)
    }
}

/// `log10 p_s − log10 p_c` per budget, classified with `dead_band`.
pub fn compute_residuals(
    skill_optima: &[ComputeOptimum],
    ape_optima: &[ComputeOptimum],
    dead_band: f64,
) -> Result<ResidualSet> {
    if let Some(bad) = skill_optima.iter().chain(ape_optima).find(|o| !o.is_valid()) {
        return Err(Error::Analysis(format!(
            "optimum {} at {:e} FLOPs is {}; exclude it before computing residuals",
            bad.source, bad.budget, bad.validity
        )));
    }
    let unmatched_skill: Vec<f64> = skill_optima
        .iter()
        .filter(|s| !ape_optima.iter().any(|a| same_key(a.budget, s.budget)))
        .map(|s| s.budget)
        .collect();
    let unmatched_ape: Vec<f64> = ape_optima
        .iter()
        .filter(|a| !skill_optima.iter().any(|s| same_key(a.budget, s.budget)))
        .map(|a| a.budget)
        .collect();
    if !unmatched_skill.is_empty() || !unmatched_ape.is_empty() {
        return Err(Error::Analysis(format!(
            "budget mismatch: skill-only {:?}, ape-only {:?}",
            unmatched_skill, unmatched_ape
        )));
    }
    let mut residuals = Vec::with_capacity(skill_optima.len());
    for s in skill_optima {
        let a = ape_optima
            .iter()
            .find(|a| same_key(a.budget, s.budget))
            .expect("matched above");
        let value = s.p_star.log10() - a.p_star.log10();
        residuals.push(Residual {
            budget: s.budget,
            dataset_id: s.source.label().to_string(),
            value,
            classification: classify_hunger(value, dead_band)?,
        });
    }
    let key = skill_optima
        .first()
        .map(|o| o.source.label().to_string())
        .unwrap_or_default();
    Ok(ResidualSet::new(key, residuals))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProportionPoint {
    pub proportion: f64,
    pub p_star: f64,
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionCurve {
    pub skill: Skill,
    pub points: Vec<ProportionPoint>,
    /// `d log10 p* / d proportion`.
    pub slope: f64,
    pub intercept: f64,
}

/// Optimum parameter count against the skill-relevant share of the datamix,
/// all at a single budget.
pub fn proportion_curve(experiments: &[(DatamixSpec, ComputeOptimum)], skill: Skill) -> Result<ProportionCurve> {
    if experiments.len() < 2 {
        return Err(Error::Analysis("proportion curve needs at least 2 datamixes".into()));
    }
    let budget = experiments[0].1.budget;
    if let Some((m, o)) = experiments.iter().find(|(_, o)| !same_key(o.budget, budget)) {
        return Err(Error::Analysis(format!(
            "proportion curve mixes budgets: {:e} ({}) vs {:e}",
            o.budget, m.datamix_id, budget
        )));
    }
    let mut points: Vec<ProportionPoint> = experiments
        .iter()
        .map(|(m, o)| ProportionPoint {
            proportion: m.proportion(skill),
            p_star: o.p_star,
            budget: o.budget,
        })
        .collect();
    points.sort_by(|a, b| a.proportion.total_cmp(&b.proportion));
    if points.windows(2).any(|w| w[0].proportion == w[1].proportion) {
        return Err(Error::Analysis(format!("duplicate {skill} proportion across datamixes")));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.proportion).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.p_star.log10()).collect();
    let (intercept, slope, _, _) = linear_regression(&xs, &ys);
    Ok(ProportionCurve {
        skill,
        points,
        slope,
        intercept,
    })
}

/// Optimum parameter count sampled over the code/knowledge data ratio,
/// interpolated piecewise-linearly in `(log10 ratio, log10 p*)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioCurve {
    /// `(ratio, p*)`, sorted by ratio.
    pub points: Vec<(f64, f64)>,
}

impl RatioCurve {
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Analysis("ratio curve needs at least 2 points".into()));
        }
        if points.iter().any(|&(r, p)| !(r > 0.0 && p > 0.0 && r.is_finite() && p.is_finite())) {
            return Err(Error::Analysis("ratio curve points must be positive".into()));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Analysis("duplicate ratio in curve".into()));
        }
        Ok(RatioCurve { points })
    }

    /// Builds the curve from per-datamix optima using `code / knowledge`.
    pub fn from_mixes(experiments: &[(DatamixSpec, ComputeOptimum)]) -> Result<Self> {
        let points = experiments
            .iter()
            .map(|(m, o)| {
                m.code_knowledge_ratio()
                    .map(|r| (r, o.p_star))
                    .ok_or_else(|| Error::Analysis(format!("datamix {} has no knowledge data", m.datamix_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(points)
    }

    pub fn range(&self) -> (f64, f64) {
        (self.points[0].0, self.points[self.points.len() - 1].0)
    }

    /// `log10 p*` at `ratio`; no extrapolation.
    pub fn log10_p_at(&self, ratio: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        if !(ratio >= lo && ratio <= hi) {
            return Err(Error::Analysis(format!(
                "ratio {ratio} outside sampled range [{lo}, {hi}]"
            )));
        }
        let i = self.points.partition_point(|p| p.0 < ratio);
        if i < self.points.len() && self.points[i].0 == ratio {
            return Ok(self.points[i].1.log10());
        }
        let (r0, p0) = self.points[i - 1];
        let (r1, p1) = self.points[i];
        let w = (ratio.log10() - r0.log10()) / (r1.log10() - r0.log10());
        Ok(p0.log10() + w * (p1.log10() - p0.log10()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossoverResult {
    pub ratio: f64,
    pub p_at_crossover: f64,
    pub bracket: (f64, f64),
}

/// Code/knowledge ratio at which the two skills' optima coincide, found by
/// bisection in log10 ratio on `log10 p_knowledge − log10 p_code`. Stops once
/// the gap is within `tol` and the bracket is narrower than `tol` decades.
pub fn find_crossover(
    knowledge: &RatioCurve,
    code: &RatioCurve,
    bracket: (f64, f64),
    tol: f64,
) -> Result<CrossoverResult> {
    let (lo, hi) = bracket;
    if !(lo > 0.0 && hi > lo && tol > 0.0) {
        return Err(Error::Analysis(format!("invalid crossover bracket ({lo}, {hi}) or tolerance {tol}")));
    }
    let gap = |r: f64| -> Result<f64> { Ok(knowledge.log10_p_at(r)? - code.log10_p_at(r)?) };
    let (g_lo, g_hi) = (gap(lo)?, gap(hi)?);
    if (g_lo == 0.0 && g_hi == 0.0) || g_lo * g_hi > 0.0 {
        return Err(Error::Analysis("no crossover in bracket".into()));
    }
    let finish = |r: f64| -> Result<CrossoverResult> {
        let p = 0.5 * (knowledge.log10_p_at(r)? + code.log10_p_at(r)?);
        Ok(CrossoverResult {
            ratio: r,
            p_at_crossover: 10f64.powf(p),
            bracket,
        })
    };
    if g_lo == 0.0 {
        return finish(lo);
    }
    if g_hi == 0.0 {
        return finish(hi);
    }
    let (mut a, mut b) = (lo.log10(), hi.log10());
    let mut g_a = g_lo;
    let mut mid = 0.5 * (a + b);
    for _ in 0..400 {
        mid = 0.5 * (a + b);
        let g_mid = gap(10f64.powf(mid))?;
        if g_mid.abs() <= tol && b - a <= tol {
            break;
        }
        if g_mid == 0.0 {
            break;
        }
        if (g_mid > 0.0) == (g_a > 0.0) {
            a = mid;
            g_a = g_mid;
        } else {
            b = mid;
        }
    }
    finish(10f64.powf(mid).clamp(lo, hi))
}

/// Crossover over the overlap of both curves' sampled ratios.
pub fn crossover_over_overlap(knowledge: &RatioCurve, code: &RatioCurve, tol: f64) -> Result<CrossoverResult> {
    let (k_lo, k_hi) = knowledge.range();
    let (c_lo, c_hi) = code.range();
    let bracket = (k_lo.max(c_lo), k_hi.min(c_hi));
    if bracket.0 >= bracket.1 {
        return Err(Error::Analysis("ratio curves do not overlap".into()));
    }
    find_crossover(knowledge, code, bracket, tol)
}

/// Thresholds on relative optimum shifts between validation sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityThresholds {
    /// Flag when `|Δ| ≥ major`.
    pub major: f64,
    /// Flag when `|Δ| > minor`.
    pub minor: f64,
}

impl Default for SensitivityThresholds {
    fn default() -> Self {
        SensitivityThresholds { major: 0.5, minor: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityFlag {
    None,
    Minor,
    Major,
}

impl SensitivityThresholds {
    pub fn flag(&self, rel_diff: f64) -> SensitivityFlag {
        let d = rel_diff.abs();
        if d >= self.major {
            SensitivityFlag::Major
        } else if d > self.minor {
            SensitivityFlag::Minor
        } else {
            SensitivityFlag::None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub validation_id: String,
    /// Budget, or datamix ratio in single-budget mode.
    pub key: f64,
    pub baseline_p: f64,
    pub variant_p: f64,
    pub rel_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTable {
    /// Sorted by validation id, then key.
    pub rows: Vec<SensitivityRow>,
    /// Signed relative difference with the largest magnitude per validation set.
    pub max_by_variant: BTreeMap<String, f64>,
}

impl SensitivityTable {
    /// Signed difference with the largest magnitude over all rows.
    pub fn max_rel_diff(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.rel_diff)
            .fold(0.0, |m, d| if d.abs() > m.abs() { d } else { m })
    }

    pub fn max_flag(&self, th: &SensitivityThresholds) -> SensitivityFlag {
        th.flag(self.max_rel_diff())
    }

    /// Whether every variant exceeds the minor threshold at each of the `n`
    /// largest keys.
    pub fn largest_keys_exceed_minor(&self, n: usize, th: &SensitivityThresholds) -> bool {
        let mut keys: Vec<f64> = self.rows.iter().map(|r| r.key).collect();
        keys.sort_by(f64::total_cmp);
        keys.dedup();
        let top = &keys[keys.len().saturating_sub(n)..];
        !top.is_empty()
            && self
                .rows
                .iter()
                .filter(|r| top.contains(&r.key))
                .all(|r| th.flag(r.rel_diff) != SensitivityFlag::None)
    }
}

/// Relative optimum shift `(p_variant − p_baseline) / p_baseline` per key.
pub fn validation_sensitivity_keyed(
    baseline: &[(f64, f64)],
    variants: &BTreeMap<String, Vec<(f64, f64)>>,
) -> Result<SensitivityTable> {
    let mut rows = Vec::new();
    let mut max_by_variant = BTreeMap::new();
    for (id, variant) in variants {
        let missing: Vec<f64> = baseline
            .iter()
            .filter(|b| !variant.iter().any(|v| same_key(v.0, b.0)))
            .map(|b| b.0)
            .chain(
                variant
                    .iter()
                    .filter(|v| !baseline.iter().any(|b| same_key(v.0, b.0)))
                    .map(|v| v.0),
            )
            .collect();
        if !missing.is_empty() || variant.len() != baseline.len() {
            return Err(Error::Analysis(format!(
                "validation set {id}: keys do not match the baseline (unmatched {missing:?})"
            )));
        }
        let mut these: Vec<SensitivityRow> = baseline
            .iter()
            .map(|&(key, bp)| {
                let vp = variant.iter().find(|v| same_key(v.0, key)).expect("matched").1;
                SensitivityRow {
                    validation_id: id.clone(),
                    key,
                    baseline_p: bp,
                    variant_p: vp,
                    rel_diff: (vp - bp) / bp,
                }
            })
            .collect();
        these.sort_by(|a, b| a.key.total_cmp(&b.key));
        let max = these
            .iter()
            .map(|r| r.rel_diff)
            .fold(0.0f64, |m, d| if d.abs() > m.abs() { d } else { m });
        max_by_variant.insert(id.clone(), max);
        rows.extend(these);
    }
    Ok(SensitivityTable { rows, max_by_variant })
}

/// Budget-keyed form of [`validation_sensitivity_keyed`].
pub fn validation_sensitivity(
    baseline: &[ComputeOptimum],
    variants: &BTreeMap<String, Vec<ComputeOptimum>>,
) -> Result<SensitivityTable> {
    let key = |os: &[ComputeOptimum]| os.iter().map(|o| (o.budget, o.p_star)).collect::<Vec<_>>();
    let variants = variants.iter().map(|(k, v)| (k.clone(), key(v))).collect();
    validation_sensitivity_keyed(&key(baseline), &variants)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Hunger, OptimumSource, Validity};
    use proptest::prelude::*;

    fn opt(b: f64, p: f64, label: &str) -> ComputeOptimum {
        ComputeOptimum::new(b, p, OptimumSource::Skill(label.into()), Validity::Valid)
    }

    fn ape(b: f64, p: f64) -> ComputeOptimum {
        ComputeOptimum::new(b, p, OptimumSource::Ape("external".into()), Validity::Valid)
    }

    const BUDGETS: [f64; 3] = [6e18, 6e19, 6e20];

    #[test]
    fn residuals_identity_and_ratio() {
        let a: Vec<_> = BUDGETS.iter().map(|&b| ape(b, b.sqrt() / 10.0)).collect();
        let same: Vec<_> = a.iter().map(|o| opt(o.budget, o.p_star, "nq")).collect();
        let set = compute_residuals(&same, &a, 0.0).unwrap();
        assert!(set.residuals.iter().all(|r| r.value == 0.0 && r.classification == Hunger::Aligned));
        assert_eq!(set.mean, 0.0);

        let double: Vec<_> = a.iter().map(|o| opt(o.budget, 2.0 * o.p_star, "nq")).collect();
        let set = compute_residuals(&double, &a, 0.0).unwrap();
        for r in &set.residuals {
            assert!((r.value - 2f64.log10()).abs() < 1e-12);
            assert_eq!(r.classification, Hunger::CapacityHungry);
        }
        assert!(set.stdev < 1e-12);
    }

    #[test]
    fn residual_errors() {
        let a = vec![ape(6e18, 1e8), ape(6e19, 2e8)];
        let s = vec![opt(6e18, 1e8, "x")];
        let err = compute_residuals(&s, &a, 0.0).unwrap_err();
        assert!(err.to_string().contains("6e19"), "{err}");
        let mut bad = opt(6e18, 1e8, "x");
        bad.validity = Validity::OutsideEmpiricalRange;
        assert!(compute_residuals(&[bad], &a[..1], 0.0).is_err());
    }

    #[test]
    fn residual_summary_is_recomputable() {
        let a: Vec<_> = BUDGETS.iter().map(|&b| ape(b, 1e8)).collect();
        let s: Vec<_> = BUDGETS.iter().zip([1.3e8, 0.8e8, 2.2e8]).map(|(&b, p)| opt(b, p, "k")).collect();
        let set = compute_residuals(&s, &a, 0.0).unwrap();
        let vals: Vec<f64> = set.residuals.iter().map(|r| r.value).collect();
        let mean = vals.iter().sum::<f64>() / 3.0;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!((set.mean - mean).abs() < 1e-12 && (set.stdev - sd).abs() < 1e-12);
        let pooled = ResidualSet::pool("knowledge", [&set, &set]);
        assert_eq!(pooled.residuals.len(), 6);
        assert!((pooled.mean - mean).abs() < 1e-12);
    }

    fn mix(id: &str, k: f64, c: f64) -> DatamixSpec {
        DatamixSpec::new(id, k, c, 1.0 - k - c).unwrap()
    }

    #[test]
    fn flat_proportion_curve() {
        let e = vec![(mix("a", 0.3, 0.2), opt(6e18, 1e8, "k")), (mix("b", 0.6, 0.2), opt(6e18, 1e8, "k"))];
        assert_eq!(proportion_curve(&e, Skill::Knowledge).unwrap().slope, 0.0);
    }

    #[test]
    fn increasing_proportion_curve() {
        let e: Vec<_> = [(0.22, 1.1e8), (0.58, 1.6e8), (0.85, 2.9e8)]
            .iter()
            .enumerate()
            .map(|(i, &(k, p))| (mix(&format!("m{i}"), k, 0.1), opt(6e18, p, "k")))
            .collect();
        let c = proportion_curve(&e, Skill::Knowledge).unwrap();
        assert!(c.slope > 0.0);
        assert!(c.points.windows(2).all(|w| w[0].proportion < w[1].proportion));
    }

    #[test]
    fn constructed_proportion_slope() {
        // p*(x) = 10^(7 + 0.5 x)
        let e: Vec<_> = [0.1, 0.3, 0.45, 0.7]
            .iter()
            .enumerate()
            .map(|(i, &k)| (mix(&format!("m{i}"), k, 0.05), opt(6e18, 10f64.powf(7.0 + 0.5 * k), "k")))
            .collect();
        let c = proportion_curve(&e, Skill::Knowledge).unwrap();
        assert!((c.slope - 0.5).abs() < 1e-6);
        assert!((c.intercept - 7.0).abs() < 1e-6);
    }

    #[test]
    fn proportion_curve_errors() {
        let one = vec![(mix("a", 0.3, 0.2), opt(6e18, 1e8, "k"))];
        assert!(proportion_curve(&one, Skill::Knowledge).is_err());
        let mixed = vec![(mix("a", 0.3, 0.2), opt(6e18, 1e8, "k")), (mix("b", 0.5, 0.2), opt(6e19, 1e8, "k"))];
        assert!(proportion_curve(&mixed, Skill::Knowledge).is_err());
    }

    fn power_curve(coef: f64, exp: f64) -> RatioCurve {
        let ratios: [f64; 7] = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
        RatioCurve::new(ratios.iter().map(|&r| (r, coef * r.powf(exp))).collect()).unwrap()
    }

    #[test]
    fn analytic_crossover() {
        // 1e8·r^0.2 = 2e8·r^-0.1  ⇔  0.3·log10 r = log10 2
        let expected = 2f64.powf(10.0 / 3.0);
        let k = power_curve(1e8, 0.2);
        let c = power_curve(2e8, -0.1);
        let res = find_crossover(&k, &c, (1.0, 32.0), 1e-6).unwrap();
        assert!((res.ratio.log10() - expected.log10()).abs() < 1e-6);
        let p_true = 1e8 * expected.powf(0.2);
        assert!((res.p_at_crossover.log10() - p_true.log10()).abs() / p_true.log10() < 1e-6);
    }

    #[test]
    fn crossover_errors() {
        let k = power_curve(1e8, 0.2);
        let err = find_crossover(&k, &k.clone(), (1.0, 8.0), 1e-6).unwrap_err();
        assert_eq!(err.to_string(), "no crossover in bracket");
        let c = power_curve(2e8, -0.1);
        assert!(find_crossover(&k, &c, (0.1, 32.0), 1e-6)
            .unwrap_err()
            .to_string()
            .contains("outside sampled range"));
        let above = power_curve(5e9, 0.0);
        assert_eq!(
            find_crossover(&k, &above, (1.0, 8.0), 1e-6).unwrap_err().to_string(),
            "no crossover in bracket"
        );
    }

    #[test]
    fn interpolation_hits_nodes() {
        let k = power_curve(1e8, 0.2);
        assert!((k.log10_p_at(4.0).unwrap() - (1e8 * 4f64.powf(0.2)).log10()).abs() < 1e-12);
        assert!(k.log10_p_at(64.0).is_err());
    }

    #[test]
    fn sensitivity_examples() {
        let base = vec![opt(6e18, 1e8, "stack")];
        let same = BTreeMap::from([("v".to_string(), base.clone())]);
        assert_eq!(validation_sensitivity(&base, &same).unwrap().rows[0].rel_diff, 0.0);

        let up = BTreeMap::from([("v".to_string(), vec![opt(6e18, 1.5e8, "v")])]);
        let t = validation_sensitivity(&base, &up).unwrap();
        assert!((t.rows[0].rel_diff - 0.5).abs() < 1e-12);
        assert_eq!(t.max_flag(&SensitivityThresholds::default()), SensitivityFlag::Major);
    }

    #[test]
    fn sensitivity_thresholding() {
        let base: Vec<_> = BUDGETS.iter().map(|&b| opt(b, 1e8, "stack")).collect();
        let var: Vec<_> = BUDGETS.iter().zip([1.35, 1.12, 1.11]).map(|(&b, r)| opt(b, r * 1e8, "v")).collect();
        let t = validation_sensitivity(&base, &BTreeMap::from([("v".to_string(), var)])).unwrap();
        let th = SensitivityThresholds::default();
        assert!((t.max_rel_diff() - 0.35).abs() < 1e-12);
        assert_eq!(t.max_flag(&th), SensitivityFlag::Minor);
        assert!(t.largest_keys_exceed_minor(3, &th));
        assert!(t.largest_keys_exceed_minor(2, &th));
    }

    #[test]
    fn sensitivity_key_mismatch() {
        let base = vec![opt(6e18, 1e8, "s"), opt(6e19, 1e8, "s")];
        let var = BTreeMap::from([("v".to_string(), vec![opt(6e18, 1e8, "v")])]);
        assert!(validation_sensitivity(&base, &var).is_err());
    }

    proptest! {
        #[test]
        fn residuals_antisymmetric(ps in proptest::collection::vec((7.0f64..10.0, 7.0f64..10.0), 1..6)) {
            let s: Vec<_> = ps.iter().enumerate().map(|(i, (x, _))| opt(10f64.powi(18 + i as i32), 10f64.powf(*x), "s")).collect();
            let a: Vec<_> = ps.iter().enumerate().map(|(i, (_, y))| ape(10f64.powi(18 + i as i32), 10f64.powf(*y))).collect();
            let fwd = compute_residuals(&s, &a, 0.0).unwrap();
            let back = compute_residuals(&a, &s, 0.0).unwrap();
            let zero = compute_residuals(&s, &s, 0.0).unwrap();
            for ((f, b), z) in fwd.residuals.iter().zip(&back.residuals).zip(&zero.residuals) {
                prop_assert_eq!(f.value, -b.value);
                prop_assert_eq!(z.value, 0.0);
            }
        }

        #[test]
        fn proportion_slope_scale_invariant(k in 0.01f64..100.0) {
            let base: Vec<_> = [(0.2, 1.1e8), (0.5, 1.9e8), (0.8, 2.4e8)]
                .iter().enumerate()
                .map(|(i, &(q, p))| (mix(&format!("m{i}"), q, 0.1), opt(6e18, p, "k")))
                .collect();
            let scaled: Vec<_> = base.iter().map(|(m, o)| (m.clone(), opt(o.budget, k * o.p_star, "k"))).collect();
            let s0 = proportion_curve(&base, Skill::Knowledge).unwrap().slope;
            let s1 = proportion_curve(&scaled, Skill::Knowledge).unwrap().slope;
            prop_assert!((s0 - s1).abs() < 1e-9);
        }

        #[test]
        fn crossover_refinement_stable(c in 1.2f64..4.0, e in 0.1f64..0.4, tol_exp in 3i32..8) {
            let k = power_curve(1e8, e);
            let code = power_curve(1e8 * c, -0.1);
            let tol = 10f64.powi(-tol_exp);
            let r1 = find_crossover(&k, &code, (0.5, 32.0), tol);
            let r2 = find_crossover(&k, &code, (0.5, 32.0), tol / 2.0);
            if let (Ok(r1), Ok(r2)) = (r1, r2) {
                prop_assert!((r1.ratio.log10() - r2.ratio.log10()).abs() <= tol);
            }
        }

        #[test]
        fn sensitivity_scales_linearly(k in 0.2f64..5.0, ds in proptest::collection::vec(-0.5f64..1.0, 1..5)) {
            let base: Vec<_> = ds.iter().enumerate().map(|(i, _)| opt(10f64.powi(18 + i as i32), 1e8, "b")).collect();
            let var: Vec<_> = ds.iter().enumerate().map(|(i, d)| opt(10f64.powi(18 + i as i32), 1e8 * (1.0 + d), "v")).collect();
            let scaled: Vec<_> = var.iter().map(|o| opt(o.budget, k * o.p_star, "v")).collect();
            let t0 = validation_sensitivity(&base, &BTreeMap::from([("v".to_string(), var)])).unwrap();
            let t1 = validation_sensitivity(&base, &BTreeMap::from([("v".to_string(), scaled)])).unwrap();
            for (r0, r1) in t0.rows.iter().zip(&t1.rows) {
                prop_assert!((r1.rel_diff - (k * (1.0 + r0.rel_diff) - 1.0)).abs() < 1e-9);
            }
        }
    }
}
