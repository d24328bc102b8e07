//! Synthetic ground truth: parametric loss surfaces with a closed-form
//! compute optimum, an independent brute-force optimum, and a seeded run
//! generator.

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{estimate_flops, ComputeOptimum, OptimumSource, RunRecord, Validity};
use crate::error::{Error, Result};

/// `L(p, t) = E + A·p^(-alpha) + B_c·t^(-beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChinchillaSurface {
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "A")]
    pub a: f64,
    pub alpha: f64,
    #[serde(rename = "B_c")]
    pub b_c: f64,
    pub beta: f64,
}

impl ChinchillaSurface {
    pub fn new(e: f64, a: f64, alpha: f64, b_c: f64, beta: f64) -> Result<Self> {
        let s = ChinchillaSurface { e, a, alpha, b_c, beta };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.e >= 0.0
            && self.a > 0.0
            && self.alpha > 0.0
            && self.b_c > 0.0
            && self.beta > 0.0
            && [self.e, self.a, self.alpha, self.b_c, self.beta]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid surface {self:?}")))
        }
    }

    /// A surface whose compute optimum at `anchor_budget` is exactly
    /// `anchor_params` and whose optimum grows as `B^exponent`. At the anchor
    /// the data term equals `scale` and the parameter term `scale·beta/alpha`.
    pub fn with_optimum(
        e: f64,
        alpha: f64,
        exponent: f64,
        anchor_budget: f64,
        anchor_params: f64,
        scale: f64,
    ) -> Result<Self> {
        if !(exponent > 0.0 && exponent < 1.0) {
            return Err(Error::invalid(format!("optimum exponent {exponent} outside (0, 1)")));
        }
        // exponent = beta / (alpha + beta)
        let beta = alpha * exponent / (1.0 - exponent);
        let anchor_tokens = anchor_budget / (6.0 * anchor_params);
        let b_c = scale * anchor_tokens.powf(beta);
        let a = scale * (beta / alpha) * anchor_params.powf(alpha);
        Self::new(e, a, alpha, b_c, beta)
    }

    pub fn loss(&self, params: f64, tokens: f64) -> f64 {
        self.e + self.a * params.powf(-self.alpha) + self.b_c * tokens.powf(-self.beta)
    }

    /// Loss along the budget constraint `t = B / 6p`.
    pub fn loss_at_budget(&self, params: f64, budget: f64) -> f64 {
        self.loss(params, budget / (6.0 * params))
    }

    /// Exponent of the compute-optimal law `p* ∝ B^(beta / (alpha + beta))`.
    pub fn optimum_exponent(&self) -> f64 {
        self.beta / (self.alpha + self.beta)
    }
}

/// Minimiser of `L(p, B/6p)`: substitute the constraint and set `dL/dp = 0`.
pub fn closed_form_optimum(surface: &ChinchillaSurface, budget: f64) -> ComputeOptimum {
    let s = surface;
    let sum = s.alpha + s.beta;
    let log_p = ((s.alpha * s.a) / (s.beta * s.b_c)).log10() / sum + (s.beta / sum) * (budget / 6.0).log10();
    ComputeOptimum::new(
        budget,
        10f64.powf(log_p),
        OptimumSource::Oracle("closed-form".into()),
        Validity::Valid,
    )
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section minimisation of a unimodal `f` on `[lo, hi]`.
fn golden_section<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Independent numeric optimum: log-uniform grid over six decades of `p`
/// centred on `sqrt(B/6)`, refined by golden-section search between the
/// argmin's neighbours. When the argmin sits on a window edge the window
/// slides three decades that way and the scan repeats.
pub fn brute_force_optimum(surface: &ChinchillaSurface, budget: f64, grid_points: usize) -> Result<ComputeOptimum> {
    if grid_points < 1000 {
        return Err(Error::invalid(format!("grid_points must be >= 1000, got {grid_points}")));
    }
    let objective = |x: f64| surface.loss_at_budget(10f64.powf(x), budget);
    let step = 6.0 / (grid_points - 1) as f64;
    let mut center = 0.5 * (budget / 6.0).log10();
    for _ in 0..64 {
        let lo = center - 3.0;
        let (best, _) = (0..grid_points)
            .map(|i| (i, objective(lo + step * i as f64)))
            .fold((0usize, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
        if best == 0 {
            center -= 3.0;
            continue;
        }
        if best == grid_points - 1 {
            center += 3.0;
            continue;
        }
        let x_lo = lo + step * (best - 1) as f64;
        let x_hi = lo + step * (best + 1) as f64;
        let x = golden_section(objective, x_lo, x_hi, 1e-12);
        return Ok(ComputeOptimum::new(
            budget,
            10f64.powf(x),
            OptimumSource::Oracle("brute-force".into()),
            Validity::Valid,
        ));
    }
    Err(Error::invalid("brute-force search did not bracket an optimum"))
}

/// Dataset surfaces in declaration order; the first one sets the sampling
/// window. Serialises as `{dataset_id: {E, A, alpha, B_c, beta}}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SurfaceSet(pub IndexMap<String, ChinchillaSurface>);

impl SurfaceSet {
    pub fn from_json(text: &str) -> Result<Self> {
        let set: SurfaceSet = serde_json::from_str(text)?;
        if set.0.is_empty() {
            return Err(Error::invalid("surface set is empty"));
        }
        for s in set.0.values() {
            s.validate()?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, dataset_id: impl Into<String>, surface: ChinchillaSurface) -> &mut Self {
        self.0.insert(dataset_id.into(), surface);
        self
    }

    pub fn first(&self) -> Option<(&String, &ChinchillaSurface)> {
        self.0.first()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDesign {
    pub budgets: Vec<f64>,
    pub models_per_budget: usize,
    /// Half-width of the log10(params) window around the true optimum.
    pub span_decades: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthDesign {
    pub fn validate(&self) -> Result<()> {
        if self.models_per_budget < 3 {
            return Err(Error::invalid("models_per_budget must be >= 3"));
        }
        if !(self.span_decades > 0.0 && self.span_decades.is_finite()) {
            return Err(Error::invalid("span_decades must be positive"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be non-negative"));
        }
        if self.budgets.is_empty() || self.budgets.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return Err(Error::invalid("budgets must be positive"));
        }
        Ok(())
    }
}

/// SplitMix64 finaliser; turns a structured key into a well-mixed seed.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn keyed_seed(seed: u64, budget_idx: usize, model_idx: usize, dataset_idx: usize) -> u64 {
    [budget_idx, model_idx, dataset_idx]
        .iter()
        .fold(mix64(seed), |h, &k| mix64(h ^ k as u64))
}

/// Gaussian draw keyed by `(seed, budget, model, dataset)`; order-free.
fn keyed_noise(sigma: f64, seed: u64, budget_idx: usize, model_idx: usize, dataset_idx: usize) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(keyed_seed(seed, budget_idx, model_idx, dataset_idx));
    Normal::new(0.0, sigma).expect("sigma validated").sample(&mut rng)
}

/// Generates one IsoFLOP sweep per budget. Parameter counts are log-uniform
/// across `±span_decades` around the first surface's closed-form optimum;
/// tokens come from the budget constraint and are rounded, and `flops` is
/// recomputed from the rounded counts.
pub fn sample_losses(surfaces: &SurfaceSet, design: &SynthDesign, datamix_id: &str) -> Result<Vec<RunRecord>> {
    design.validate()?;
    let (_, anchor) = surfaces
        .first()
        .ok_or_else(|| Error::invalid("surface set is empty"))?;
    let m = design.models_per_budget;
    let mut runs = Vec::with_capacity(design.budgets.len() * m);
    for (bi, &budget) in design.budgets.iter().enumerate() {
        let center = closed_form_optimum(anchor, budget).p_star.log10();
        for mi in 0..m {
            let x = center - design.span_decades + 2.0 * design.span_decades * mi as f64 / (m - 1) as f64;
            let params = (10f64.powf(x).round() as u64).max(1);
            let tokens = ((budget / (6.0 * params as f64)).round() as u64).max(1);
            let losses = surfaces
                .0
                .iter()
                .enumerate()
                .map(|(di, (id, s))| {
                    let clean = s.loss(params as f64, tokens as f64);
                    (id.clone(), clean + keyed_noise(design.noise_sigma, design.seed, bi, mi, di))
                })
                .collect();
            runs.push(RunRecord {
                run_id: format!("{datamix_id}-b{bi}-m{mi}"),
                datamix_id: datamix_id.to_string(),
                params,
                tokens,
                flops: estimate_flops(params, tokens),
                losses,
            });
        }
    }
    Ok(runs)
}
