//! Value types shared across the pipeline, FLOPs bookkeeping and the
//! capacity-/data-hunger classification rule.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `knowledge + code + other = 1` for a datamix.
pub const MIX_SUM_TOLERANCE: f64 = 1e-6;

/// Training compute `6·p·t`. Computed in 128-bit integers so the only
/// rounding is the final conversion to `f64`.
pub fn estimate_flops(params: u64, tokens: u64) -> f64 {
    (6u128 * params as u128 * tokens as u128) as f64
}

/// Relative deviation of `flops` from `6·p·t`.
pub fn flops_deviation(params: u64, tokens: u64, flops: f64) -> f64 {
    let expected = estimate_flops(params, tokens);
    (flops - expected).abs() / expected
}

/// One trained model: its size, training tokens, compute and per-dataset NLL
/// (nats per target token).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub datamix_id: String,
    pub params: u64,
    pub tokens: u64,
    pub flops: f64,
    pub losses: BTreeMap<String, f64>,
}

impl RunRecord {
    /// Builds a record with `flops` derived from `6·p·t`.
    pub fn new(
        run_id: impl Into<String>,
        datamix_id: impl Into<String>,
        params: u64,
        tokens: u64,
        losses: BTreeMap<String, f64>,
    ) -> Result<Self> {
        let rec = RunRecord {
            run_id: run_id.into(),
            datamix_id: datamix_id.into(),
            params,
            tokens,
            flops: estimate_flops(params, tokens),
            losses,
        };
        rec.validate(None)?;
        Ok(rec)
    }

    /// Checks the record invariants. With `flops_tolerance` set, the stored
    /// flops must agree with `6·p·t` to that relative tolerance.
    pub fn validate(&self, flops_tolerance: Option<f64>) -> Result<()> {
        if self.params == 0 || self.tokens == 0 {
            return Err(Error::invalid(format!(
                "run {}: params and tokens must be positive",
                self.run_id
            )));
        }
        if !(self.flops.is_finite() && self.flops > 0.0) {
            return Err(Error::invalid(format!(
                "run {}: flops must be positive and finite",
                self.run_id
            )));
        }
        if let Some(tol) = flops_tolerance {
            let dev = flops_deviation(self.params, self.tokens, self.flops);
            if dev > tol {
                return Err(Error::invalid(format!(
                    "run {}: flops {:e} deviates from 6pt by {:.4} (tolerance {})",
                    self.run_id, self.flops, dev, tol
                )));
            }
        }
        if self.losses.is_empty() {
            return Err(Error::invalid(format!("run {}: no losses", self.run_id)));
        }
        for (ds, &v) in &self.losses {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "run {}: loss for {} must be finite and non-negative, got {}",
                    self.run_id, ds, v
                )));
            }
        }
        Ok(())
    }

    pub fn log10_params(&self) -> f64 {
        (self.params as f64).log10()
    }
}

macro_rules! str_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::invalid(format!(
                        concat!("unknown ", stringify!($name), " '{}'"), other
                    ))),
                }
            }
        }
    };
}

str_enum!(
    /// The ability a dataset quantifies.
    Skill { Knowledge => "knowledge", Code => "code", Other => "other" }
);
str_enum!(Split { Hypothesis => "hypothesis", Heldout => "heldout" });
str_enum!(Role { Evaluation => "evaluation", Validation => "validation" });
str_enum!(Validity {
    Valid => "valid",
    NonConvex => "non_convex",
    OutsideEmpiricalRange => "outside_empirical_range",
});
str_enum!(Hunger {
    CapacityHungry => "capacity_hungry",
    DataHungry => "data_hungry",
    Aligned => "aligned",
});

/// How a dataset participates in the analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillSpec {
    pub dataset_id: String,
    pub skill: Skill,
    pub split: Split,
    pub role: Role,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub exclude_from_average: bool,
}

/// Pretraining data proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatamixSpec {
    pub datamix_id: String,
    #[serde(rename = "knowledge")]
    pub knowledge_frac: f64,
    #[serde(rename = "code")]
    pub code_frac: f64,
    #[serde(rename = "other")]
    pub other_frac: f64,
}

impl DatamixSpec {
    pub fn new(id: impl Into<String>, knowledge: f64, code: f64, other: f64) -> Result<Self> {
        let mix = DatamixSpec {
            datamix_id: id.into(),
            knowledge_frac: knowledge,
            code_frac: code,
            other_frac: other,
        };
        mix.validate()?;
        Ok(mix)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("knowledge", self.knowledge_frac),
            ("code", self.code_frac),
            ("other", self.other_frac),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!(
                    "datamix {}: {} fraction {} outside [0, 1]",
                    self.datamix_id, name, v
                )));
            }
        }
        let sum = self.knowledge_frac + self.code_frac + self.other_frac;
        if (sum - 1.0).abs() > MIX_SUM_TOLERANCE {
            return Err(Error::invalid(format!(
                "datamix {}: fractions sum to {} (expected 1 within {:e})",
                self.datamix_id, sum, MIX_SUM_TOLERANCE
            )));
        }
        Ok(())
    }

    pub fn proportion(&self, skill: Skill) -> f64 {
        match skill {
            Skill::Knowledge => self.knowledge_frac,
            Skill::Code => self.code_frac,
            Skill::Other => self.other_frac,
        }
    }

    /// Code-to-knowledge data ratio; `None` when the mix has no knowledge data.
    pub fn code_knowledge_ratio(&self) -> Option<f64> {
        (self.knowledge_frac > 0.0).then(|| self.code_frac / self.knowledge_frac)
    }
}

/// Runs sharing one nominal compute budget.
#[derive(Debug, Clone, PartialEq)]
pub struct IsoFlopGroup {
    pub budget: f64,
    pub members: Vec<RunRecord>,
}

impl IsoFlopGroup {
    /// Groups with fewer than three members cannot support a quadratic fit.
    pub fn usable(&self) -> bool {
        self.members.len() >= 3
    }

    pub fn param_range(&self) -> (u64, u64) {
        let min = self.members.iter().map(|r| r.params).min().unwrap_or(0);
        let max = self.members.iter().map(|r| r.params).max().unwrap_or(0);
        (min, max)
    }
}

/// Which curve an optimum was read from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OptimumSource {
    /// A skill dataset, or a skill average such as `avg:knowledge:heldout`.
    Skill(String),
    /// An aggregate estimator: a validation set or an external law.
    Ape(String),
    /// Analytic or brute-force optimum of a synthetic surface.
    Oracle(String),
}

impl OptimumSource {
    pub fn label(&self) -> &str {
        match self {
            OptimumSource::Skill(s) | OptimumSource::Ape(s) | OptimumSource::Oracle(s) => s,
        }
    }
}

impl fmt::Display for OptimumSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimumSource::Skill(s) => write!(f, "skill:{s}"),
            OptimumSource::Ape(s) => write!(f, "ape:{s}"),
            OptimumSource::Oracle(s) => write!(f, "oracle:{s}"),
        }
    }
}

impl FromStr for OptimumSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (kind, label) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("malformed optimum source '{s}'")))?;
        let label = label.to_string();
        match kind {
            "skill" => Ok(OptimumSource::Skill(label)),
            "ape" => Ok(OptimumSource::Ape(label)),
            "oracle" => Ok(OptimumSource::Oracle(label)),
            _ => Err(Error::invalid(format!("malformed optimum source '{s}'"))),
        }
    }
}

impl Serialize for OptimumSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OptimumSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Compute-optimal `(p*, t*)` at one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeOptimum {
    pub budget: f64,
    pub p_star: f64,
    pub t_star: f64,
    pub source: OptimumSource,
    pub validity: Validity,
}

impl ComputeOptimum {
    /// `t_star` is derived from the budget constraint `B = 6·p·t`.
    pub fn new(budget: f64, p_star: f64, source: OptimumSource, validity: Validity) -> Self {
        ComputeOptimum {
            budget,
            p_star,
            t_star: budget / (6.0 * p_star),
            source,
            validity,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.validity == Validity::Valid
    }
}

/// Log-scale gap between a skill optimum and the APE optimum at one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub budget: f64,
    pub dataset_id: String,
    pub value: f64,
    pub classification: Hunger,
}

/// `capacity_hungry` above the dead band, `data_hungry` below its negative,
/// `aligned` inside it.
pub fn classify_hunger(residual_value: f64, dead_band: f64) -> Result<Hunger> {
    if !residual_value.is_finite() {
        return Err(Error::invalid(format!(
            "residual value must be finite, got {residual_value}"
        )));
    }
    if !(dead_band.is_finite() && dead_band >= 0.0) {
        return Err(Error::invalid(format!(
            "dead band must be finite and non-negative, got {dead_band}"
        )));
    }
    Ok(if residual_value > dead_band {
        Hunger::CapacityHungry
    } else if residual_value < -dead_band {
        Hunger::DataHungry
    } else {
        Hunger::Aligned
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flops_examples() {
        assert_eq!(estimate_flops(1, 1), 6.0);
        assert_eq!(estimate_flops(40_000_000, 25_000_000_000), 6e18);
        assert_eq!(estimate_flops(8_000_000_000, 62_500_000_000), 3e21);
    }

    #[test]
    fn hunger_examples() {
        assert_eq!(classify_hunger(0.0, 0.0).unwrap(), Hunger::Aligned);
        assert_eq!(classify_hunger(0.3, 0.0).unwrap(), Hunger::CapacityHungry);
        assert_eq!(classify_hunger(-0.3, 0.0).unwrap(), Hunger::DataHungry);
        assert_eq!(classify_hunger(0.05, 0.1).unwrap(), Hunger::Aligned);
        assert!(classify_hunger(f64::NAN, 0.0).is_err());
        assert!(classify_hunger(f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn canonical_mix_accepted() {
        let mix = DatamixSpec::new("canonical", 0.584, 0.199, 0.217).unwrap();
        let ratio = mix.code_knowledge_ratio().unwrap();
        assert!((ratio - 0.199 / 0.584).abs() < 1e-15);
        assert!(DatamixSpec::new("bad", 0.584, 0.199, 0.218).is_err());
        assert!(DatamixSpec::new("neg", 1.2, -0.2, 0.0).is_err());
        let no_knowledge = DatamixSpec::new("code-only", 0.0, 1.0, 0.0).unwrap();
        assert_eq!(no_knowledge.code_knowledge_ratio(), None);
    }

    #[test]
    fn record_validation() {
        let losses = BTreeMap::from([("nq".to_string(), 2.31)]);
        let rec = RunRecord::new("r1", "canonical", 40_000_000, 25_000_000_000, losses).unwrap();
        assert_eq!(rec.flops, 6e18);
        assert!(RunRecord::new("r0", "m", 0, 1, BTreeMap::from([("a".into(), 1.0)])).is_err());
        assert!(RunRecord::new("r0", "m", 1, 1, BTreeMap::new()).is_err());
        assert!(RunRecord::new("r0", "m", 1, 1, BTreeMap::from([("a".into(), -1.0)])).is_err());
    }

    #[test]
    fn source_round_trip() {
        for src in [
            OptimumSource::Skill("avg:knowledge:heldout".into()),
            OptimumSource::Ape("external".into()),
            OptimumSource::Oracle("closed-form".into()),
        ] {
            let back: OptimumSource = src.to_string().parse().unwrap();
            assert_eq!(back, src);
        }
    }

    proptest! {
        #[test]
        fn flops_is_six_pt(p in 1u64..10_000_000_000, t in 1u64..100_000_000_000) {
            let f = estimate_flops(p, t);
            let exact = p as f64 * t as f64;
            prop_assert!((f / 6.0 - exact).abs() <= exact * 1e-15);
        }

        #[test]
        fn hunger_antisymmetric(x in -10.0f64..10.0) {
            let a = classify_hunger(x, 0.0).unwrap();
            let b = classify_hunger(-x, 0.0).unwrap();
            let mirrored = match a {
                Hunger::CapacityHungry => Hunger::DataHungry,
                Hunger::DataHungry => Hunger::CapacityHungry,
                Hunger::Aligned => Hunger::Aligned,
            };
            prop_assert_eq!(b, mirrored);
        }

        #[test]
        fn optimum_reconstructs_tokens(b in 1e15f64..1e24, p in 1e6f64..1e11) {
            let opt = ComputeOptimum::new(b, p, OptimumSource::Ape("x".into()), Validity::Valid);
            let t = opt.budget / (6.0 * opt.p_star);
            prop_assert!(((t - opt.t_star) / opt.t_star).abs() <= 1e-9);
            prop_assert!(((6.0 * opt.p_star * opt.t_star - b) / b).abs() <= 1e-9);
        }
    }
}
