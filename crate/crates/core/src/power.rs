//! Normal-approximation rejection probabilities for the naive t-test and for
//! an efficient unbiased estimator.

use serde::Serialize;

use crate::asymptotics::{dm_asymptotic_variance, AsymptoticReport};
use crate::cramer_rao::cr_lower_bound;
use crate::error::{invalid_arg, Error, Result};
use crate::model::{gte, PlatformModel};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// `P(W >= x)` for standard normal `W`.
pub fn normal_upper_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// `P(W <= x)`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// `ln P(W >= x)`, finite far into the tail.
pub fn log_normal_upper_tail(x: f64) -> f64 {
    if x < 30.0 {
        return normal_upper_tail(x).ln();
    }
    // Mills-ratio expansion
    let x2 = x * x;
    let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
    -0.5 * x2 - (x * (2.0 * std::f64::consts::PI).sqrt()).ln() + series.ln()
}

/// Lower quantile for `p <= 0.5` (Acklam's rational approximation, then one
/// Halley step against `erfc`).
fn lower_quantile_left(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Upper quantile `Φ_q`: `P(W >= Φ_q) = q`.
pub fn normal_quantile(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return invalid_arg(format!("quantile level must lie in (0, 1), got {q}"));
    }
    if q == 0.5 {
        return Ok(0.0);
    }
    Ok(if q < 0.5 {
        -lower_quantile_left(q)
    } else {
        lower_quantile_left(1.0 - q)
    })
}

fn check_level(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        invalid_arg(format!(
            "significance level must lie in (0, 1), got {alpha}"
        ))
    }
}

/// `P(|T| > c)` for `T ~ N(mu, s^2)`.
pub fn two_sided_rejection(mu: f64, s: f64, c: f64) -> f64 {
    let m = mu.abs();
    normal_upper_tail((c - m) / s) + normal_upper_tail((c + m) / s)
}

/// `log10 P(|T| <= c)` for `T ~ N(mu, s^2)`, accurate when the acceptance
/// probability is tiny.
pub fn log10_two_sided_acceptance(mu: f64, s: f64, c: f64) -> f64 {
    let m = mu.abs();
    let hi = (m - c) / s; // acceptance = P(W > hi) - P(W > (m + c)/s)
    let lo = (m + c) / s;
    let l_hi = log_normal_upper_tail(hi);
    let l_lo = log_normal_upper_tail(lo);
    let ln = l_hi + (-(l_lo - l_hi).exp()).ln_1p();
    ln / std::f64::consts::LN_10
}

/// Mean and standard deviation of `T̂_N` under the composed normal limit.
fn naive_moments(report: &AsymptoticReport, n: f64) -> Result<(f64, f64)> {
    if !(report.naive_limit > 0.0) {
        return Err(Error::Numerical(
            "naive variance limit is zero; the t-statistic is degenerate".into(),
        ));
    }
    let mu = n.sqrt() * report.ade / report.naive_limit.sqrt();
    let s = (report.sigma_tilde_sq / report.naive_limit).sqrt();
    Ok((mu, s))
}

fn check_n(n: u64) -> Result<f64> {
    if n == 0 {
        return invalid_arg("sample size N must be at least 1");
    }
    Ok(n as f64)
}

/// Rejection probability of the naive test from an already computed report.
pub fn naive_power_from_report(report: &AsymptoticReport, n: u64, alpha: f64) -> Result<f64> {
    check_level(alpha)?;
    let c = normal_quantile(alpha / 2.0)?;
    let (mu, s) = naive_moments(report, check_n(n)?)?;
    Ok(two_sided_rejection(mu, s, c))
}

/// Rejection probability of `|T̂_N| > Φ_{α/2}`, with `T̂_N` approximated by
/// `N(√N ADE / √naive, σ̃² / naive)`. This is the FPP when GTE = 0.
pub fn naive_test_power(model: &PlatformModel, a: f64, n: u64, alpha: f64) -> Result<f64> {
    let report = dm_asymptotic_variance(model, a)?;
    naive_power_from_report(&report, n, alpha)
}

/// Rejection probability for an efficient unbiased estimator with
/// `√N(θ̂ - GTE)/σ_UB ⇒ N(0, 1)`.
pub fn unbiased_power_from_parts(gte: f64, sigma_ub: f64, n: u64, alpha: f64) -> Result<f64> {
    check_level(alpha)?;
    let n = check_n(n)?;
    if !(sigma_ub > 0.0) {
        return Err(Error::Numerical("Cramér-Rao bound is zero".into()));
    }
    let c = normal_quantile(alpha / 2.0)?;
    Ok(two_sided_rejection(n.sqrt() * gte / sigma_ub, 1.0, c))
}

pub fn unbiased_test_power(model: &PlatformModel, a: f64, n: u64, alpha: f64) -> Result<f64> {
    let cr = cr_lower_bound(model, a)?;
    unbiased_power_from_parts(gte(model)?, cr.sigma_ub_sq.sqrt(), n, alpha)
}

/// What the two metric columns of a [`PowerCurve`] hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveMode {
    /// Rejection probability under a null (GTE = 0).
    Fpp,
    /// Rejection probability under an alternative.
    Power,
    /// `log10(1 - power)`.
    Log10Fnp,
}

impl CurveMode {
    pub fn label(self) -> &'static str {
        match self {
            CurveMode::Fpp => "fpp",
            CurveMode::Power => "power",
            CurveMode::Log10Fnp => "log10_fnp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerRow {
    #[serde(rename = "N")]
    pub n: u64,
    pub naive: f64,
    pub unbiased: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerCurve {
    pub alpha: f64,
    pub scenario: String,
    pub mode: CurveMode,
    pub rows: Vec<PowerRow>,
}

impl PowerCurve {
    pub const CSV_HEADER: &'static str = "N,metric_naive,metric_unbiased,mode";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.n,
                r.naive,
                r.unbiased,
                self.mode.label()
            ));
        }
        s
    }
}

fn check_grid(grid: &[u64]) -> Result<()> {
    if grid.is_empty() {
        return invalid_arg("N grid must be nonempty");
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return invalid_arg("N grid must be strictly increasing");
    }
    if grid[0] == 0 {
        return invalid_arg("N grid entries must be positive");
    }
    Ok(())
}

struct CurveInputs {
    report: AsymptoticReport,
    sigma_ub: f64,
    c: f64,
}

fn curve_inputs(model: &PlatformModel, a: f64, grid: &[u64], alpha: f64) -> Result<CurveInputs> {
    check_grid(grid)?;
    check_level(alpha)?;
    let report = dm_asymptotic_variance(model, a)?;
    let cr = cr_lower_bound(model, a)?;
    if !(cr.sigma_ub_sq > 0.0) {
        return Err(Error::Numerical("Cramér-Rao bound is zero".into()));
    }
    Ok(CurveInputs {
        report,
        sigma_ub: cr.sigma_ub_sq.sqrt(),
        c: normal_quantile(alpha / 2.0)?,
    })
}

/// Rejection probabilities of both pipelines over `grid`, labelled `mode`
/// (`Fpp` or `Power`).
pub fn rejection_curves(
    model: &PlatformModel,
    a: f64,
    grid: &[u64],
    alpha: f64,
    mode: CurveMode,
    scenario: &str,
) -> Result<PowerCurve> {
    if mode == CurveMode::Log10Fnp {
        return fnp_curves(model, a, grid, alpha, scenario);
    }
    let inp = curve_inputs(model, a, grid, alpha)?;
    let rows = grid
        .iter()
        .map(|&n| {
            let (mu, s) = naive_moments(&inp.report, n as f64)?;
            let mu_ub = (n as f64).sqrt() * inp.report.gte / inp.sigma_ub;
            Ok(PowerRow {
                n,
                naive: two_sided_rejection(mu, s, inp.c),
                unbiased: two_sided_rejection(mu_ub, 1.0, inp.c),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PowerCurve {
        alpha,
        scenario: scenario.to_string(),
        mode,
        rows,
    })
}

/// `log10 FNP` of both pipelines over `grid`.
pub fn fnp_curves(
    model: &PlatformModel,
    a: f64,
    grid: &[u64],
    alpha: f64,
    scenario: &str,
) -> Result<PowerCurve> {
    let inp = curve_inputs(model, a, grid, alpha)?;
    let rows = grid
        .iter()
        .map(|&n| {
            let (mu, s) = naive_moments(&inp.report, n as f64)?;
            let mu_ub = (n as f64).sqrt() * inp.report.gte / inp.sigma_ub;
            Ok(PowerRow {
                n,
                naive: log10_two_sided_acceptance(mu, s, inp.c),
                unbiased: log10_two_sided_acceptance(mu_ub, 1.0, inp.c),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PowerCurve {
        alpha,
        scenario: scenario.to_string(),
        mode: CurveMode::Log10Fnp,
        rows,
    })
}
