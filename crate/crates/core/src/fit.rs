//! IsoFLOP curve fitting: per-budget parabolas in log10(params), vertex
//! extraction, APE projection and the cross-budget power law.

use serde::{Deserialize, Serialize};

use crate::domain::{ComputeOptimum, IsoFlopGroup, OptimumSource, RunRecord, Validity};
use crate::error::{Error, Result};

/// `loss ≈ a·x² + b·x + c` with `x = log10(params)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub rss: f64,
    pub n_points: usize,
}

impl QuadraticFit {
    pub fn eval(&self, x: f64) -> f64 {
        (self.a * x + self.b) * x + self.c
    }

    /// `x* = -b / 2a`; `None` when `a == 0`.
    pub fn vertex(&self) -> Option<f64> {
        (self.a != 0.0).then(|| -self.b / (2.0 * self.a))
    }
}

/// Solves the 3-column least-squares problem `min ‖Xβ - y‖` by Householder
/// QR. `rows` holds `[u², u, 1]`.
fn lstsq3(rows: &mut [[f64; 3]], y: &mut [f64]) -> Option<[f64; 3]> {
    let scale = rows
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    for k in 0..3 {
        let norm = rows[k..].iter().map(|r| r[k] * r[k]).sum::<f64>().sqrt();
        if norm <= 1e-12 * scale.max(1.0) {
            return None;
        }
        let alpha = if rows[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = rows[k..].iter().map(|r| r[k]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k..3 {
            let dot: f64 = v.iter().zip(&rows[k..]).map(|(vi, r)| vi * r[j]).sum();
            let f = 2.0 * dot / vnorm2;
            for (vi, r) in v.iter().zip(rows[k..].iter_mut()) {
                r[j] -= f * vi;
            }
        }
        let dot: f64 = v.iter().zip(&y[k..]).map(|(vi, yi)| vi * yi).sum();
        let f = 2.0 * dot / vnorm2;
        for (vi, yi) in v.iter().zip(y[k..].iter_mut()) {
            *yi -= f * vi;
        }
    }
    let mut beta = [0.0; 3];
    for k in (0..3).rev() {
        let mut s = y[k];
        for j in k + 1..3 {
            s -= rows[k][j] * beta[j];
        }
        beta[k] = s / rows[k][k];
    }
    Some(beta)
}

/// Ordinary least-squares parabola through `(log10_params, loss)` points.
///
/// Points are sorted before fitting so the result does not depend on input
/// order. The solve runs on centred and scaled abscissae and the coefficients
/// are mapped back to raw `x`.
pub fn fit_quadratic(points: &[(f64, f64)]) -> Result<QuadraticFit> {
    if points.iter().any(|(x, y)| !(x.is_finite() && y.is_finite())) {
        return Err(Error::Fit("non-finite point in quadratic fit".into()));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
    let distinct = 1 + pts.windows(2).filter(|w| w[0].0 != w[1].0).count();
    if pts.len() < 3 || distinct < 3 {
        return Err(Error::Fit(format!(
            "rank-deficient quadratic fit: {} points with {} distinct x values (need 3)",
            pts.len(),
            if pts.is_empty() { 0 } else { distinct }
        )));
    }
    let n = pts.len() as f64;
    let mean = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let half = pts.iter().map(|p| (p.0 - mean).abs()).fold(0.0, f64::max);
    let mut rows: Vec<[f64; 3]> = pts
        .iter()
        .map(|p| {
            let u = (p.0 - mean) / half;
            [u * u, u, 1.0]
        })
        .collect();
    let mut y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let [qa, qb, qc] = lstsq3(&mut rows, &mut y)
        .ok_or_else(|| Error::Fit("rank-deficient quadratic fit".into()))?;

    let rss = pts
        .iter()
        .map(|p| {
            let u = (p.0 - mean) / half;
            let r = p.1 - ((qa * u + qb) * u + qc);
            r * r
        })
        .sum();
    let s2 = half * half;
    Ok(QuadraticFit {
        a: qa / s2,
        b: qb / half - 2.0 * qa * mean / s2,
        c: qa * mean * mean / s2 - qb * mean / half + qc,
        rss,
        n_points: pts.len(),
    })
}

/// Reads the compute optimum off a fitted IsoFLOP curve.
///
/// Concave or flat fits are flagged `non_convex` and report the member whose
/// fitted loss is lowest. A vertex outside the group's parameter range is
/// kept but flagged `outside_empirical_range`.
pub fn extract_optimum(fit: &QuadraticFit, group: &IsoFlopGroup, source: OptimumSource) -> ComputeOptimum {
    let (lo, hi) = group.param_range();
    if fit.a <= 0.0 {
        let best = group
            .members
            .iter()
            .map(|m| m.params as f64)
            .min_by(|p, q| fit.eval(p.log10()).total_cmp(&fit.eval(q.log10())).then(p.total_cmp(q)))
            .unwrap_or(1.0);
        return ComputeOptimum::new(group.budget, best, source, Validity::NonConvex);
    }
    let x = (-fit.b / (2.0 * fit.a)).clamp(-300.0, 300.0);
    let p_star = 10f64.powf(x);
    let validity = if p_star < lo as f64 || p_star > hi as f64 {
        Validity::OutsideEmpiricalRange
    } else {
        Validity::Valid
    };
    ComputeOptimum::new(group.budget, p_star, source, validity)
}

/// Point on the fitted curve at the APE-optimal parameter count.
pub fn project_ape(fit: &QuadraticFit, p_c: f64) -> Result<(f64, f64)> {
    if !(p_c > 0.0 && p_c.is_finite()) {
        return Err(Error::Fit(format!("APE parameter count must be positive, got {p_c}")));
    }
    let x = p_c.log10();
    Ok((x, fit.eval(x)))
}

/// `(log10 params, loss)` points of a group under `loss_of`; members without
/// a loss are skipped.
pub fn group_points<F>(group: &IsoFlopGroup, loss_of: F) -> Vec<(f64, f64)>
where
    F: Fn(&RunRecord) -> Option<f64>,
{
    group
        .members
        .iter()
        .filter_map(|m| loss_of(m).map(|l| (m.log10_params(), l)))
        .collect()
}

/// `p*(B) = G·B^b`, regressed in log10–log10 space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub coefficient: f64,
    pub exponent: f64,
    pub r_squared: f64,
    pub n_points: usize,
    /// Residual sum of squares of `log10 p*`.
    pub rss_log10: f64,
}

impl PowerLawFit {
    pub fn eval(&self, budget: f64) -> f64 {
        self.coefficient * budget.powf(self.exponent)
    }

    pub fn log10_eval(&self, budget: f64) -> f64 {
        self.coefficient.log10() + self.exponent * budget.log10()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerLawOutcome {
    pub fit: PowerLawFit,
    /// Optima left out of the regression because they were not valid.
    pub excluded: Vec<ComputeOptimum>,
}

/// Least-squares line `y = intercept + slope·x`, plus rss and R².
pub(crate) fn linear_regression(xs: &[f64], ys: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r2 = if syy > 0.0 { (1.0 - rss / syy).clamp(0.0, 1.0) } else { 1.0 };
    (intercept, slope, rss, r2)
}

/// Fits the compute-optimal law over valid optima with distinct budgets.
pub fn fit_power_law(optima: &[ComputeOptimum]) -> Result<PowerLawOutcome> {
    let (valid, excluded): (Vec<&ComputeOptimum>, Vec<&ComputeOptimum>) =
        optima.iter().partition(|o| o.is_valid());
    if valid.len() < 2 {
        return Err(Error::Fit(format!(
            "power-law fit needs at least 2 valid optima, got {} ({} excluded)",
            valid.len(),
            excluded.len()
        )));
    }
    let mut budgets: Vec<f64> = valid.iter().map(|o| o.budget).collect();
    budgets.sort_by(f64::total_cmp);
    if budgets.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Fit("power-law fit needs distinct budgets".into()));
    }
    let xs: Vec<f64> = valid.iter().map(|o| o.budget.log10()).collect();
    let ys: Vec<f64> = valid.iter().map(|o| o.p_star.log10()).collect();
    let (intercept, slope, rss, r2) = linear_regression(&xs, &ys);
    Ok(PowerLawOutcome {
        fit: PowerLawFit {
            coefficient: 10f64.powf(intercept),
            exponent: slope,
            r_squared: r2,
            n_points: valid.len(),
            rss_log10: rss,
        },
        excluded: excluded.into_iter().cloned().collect(),
    })
}

/// One row of `fits.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub budget: f64,
    pub source: OptimumSource,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub rss: f64,
    pub p_star: f64,
    pub t_star: f64,
    pub validity: Validity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub datamix_id: Option<String>,
}

impl FitRecord {
    pub fn new(fit: &QuadraticFit, opt: &ComputeOptimum, datamix_id: Option<String>) -> Self {
        FitRecord {
            budget: opt.budget,
            source: opt.source.clone(),
            a: fit.a,
            b: fit.b,
            c: fit.c,
            rss: fit.rss,
            p_star: opt.p_star,
            t_star: opt.t_star,
            validity: opt.validity,
            datamix_id,
        }
    }
}
