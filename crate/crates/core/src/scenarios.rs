//! Parameterized platform models used throughout the analysis: the logit
//! booking family, two sign-inconsistent examples, and mean-field families.

use serde::{Deserialize, Serialize};

use crate::cramer_rao::ModelFamily;
use crate::error::{invalid_arg, Error, Result};
use crate::model::{PlatformModel, ValidationMode};

/// Functional form of the holding rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauShape {
    /// `tau(k) = tau_bar * k`.
    #[default]
    Linear,
    /// `tau(k) = tau_bar`, times `K` when arrivals scale with `K`.
    Constant,
}

/// Whether a rate given per unit of capacity is multiplied by `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    /// Used as given.
    Fixed,
    /// Multiplied by `K`.
    PerListing,
}

/// Logit booking family:
/// `p_z(k) = (K - k) v_z / (eps + (K - k) v_z)`, `v_1 = v_0 + delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogitParams {
    #[serde(rename = "K")]
    pub k: usize,
    pub lambda_bar: f64,
    pub tau: TauShape,
    pub tau_bar: f64,
    pub v0: f64,
    pub delta: f64,
    pub eps_bar: f64,
    pub a: f64,
    /// `lambda = K lambda_bar` (per listing) or `lambda = lambda_bar`.
    pub arrivals: Scaling,
    /// `eps = eps_bar` (fixed) or `eps = K eps_bar` (per listing).
    pub outside_option: Scaling,
}

impl Default for LogitParams {
    fn default() -> Self {
        LogitParams {
            k: 200,
            lambda_bar: 1.5,
            tau: TauShape::Linear,
            tau_bar: 1.0,
            v0: 0.5,
            delta: 0.05,
            eps_bar: 1.0,
            a: 0.5,
            arrivals: Scaling::PerListing,
            outside_option: Scaling::Fixed,
        }
    }
}

impl LogitParams {
    /// The reading under which a fixed arrival rate meets a per-listing
    /// outside option, i.e. `p_z(k) = p̄_z(k/K)` with `p̄_z(s) = (1-s)v/(eps + (1-s)v)`.
    pub fn intensive(self) -> Self {
        LogitParams {
            arrivals: Scaling::Fixed,
            outside_option: Scaling::PerListing,
            ..self
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidModel("K must be at least 1".into()));
        }
        for (name, v) in [
            ("lambda_bar", self.lambda_bar),
            ("tau_bar", self.tau_bar),
            ("v0", self.v0),
            ("eps_bar", self.eps_bar),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return invalid_arg(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.delta.is_finite() && self.v0 + self.delta > 0.0) {
            return invalid_arg(format!(
                "treatment value v0 + delta must be positive, got {}",
                self.v0 + self.delta
            ));
        }
        if !(self.a > 0.0 && self.a < 1.0) {
            return invalid_arg(format!("a must lie in (0, 1), got {}", self.a));
        }
        Ok(())
    }
}

fn scale(s: Scaling, k: usize) -> f64 {
    match s {
        Scaling::Fixed => 1.0,
        Scaling::PerListing => k as f64,
    }
}

fn logit_profile(k_max: usize, v: f64, eps: f64) -> Vec<f64> {
    (0..=k_max)
        .map(|k| {
            let w = (k_max - k) as f64 * v;
            w / (eps + w)
        })
        .collect()
}

/// Builds the logit model, validated in strict mode.
pub fn logit_scenario(params: &LogitParams) -> Result<PlatformModel> {
    params.validate()?;
    let k = params.k;
    let lambda = params.lambda_bar * scale(params.arrivals, k);
    let tau = match params.tau {
        TauShape::Linear => (1..=k).map(|i| params.tau_bar * i as f64).collect(),
        TauShape::Constant => vec![params.tau_bar * scale(params.arrivals, k); k],
    };
    let eps = params.eps_bar * scale(params.outside_option, k);
    let p0 = logit_profile(k, params.v0, eps);
    let p1 = logit_profile(k, params.v0 + params.delta, eps);
    PlatformModel::with_mode(k, lambda, tau, p0, p1, ValidationMode::Strict)
}

/// Booking probability at states 0 and 1 that equalizes the global booking
/// rates of [`example_sign_inconsistent_null`].
///
/// Root of `A p^2 + p - (B - 1) = 0`, written as `2(B-1) / (1 + sqrt(1 + 4A(B-1)))`
/// to avoid cancellation.
pub fn example_null_pbar(k: usize) -> f64 {
    let a = (1.0 - 0.1_f64.powi(k as i32 - 1)) / 0.9;
    let b = (1.0 - 0.5_f64.powi(k as i32 + 1)) / 0.5;
    2.0 * (b - 1.0) / (1.0 + (1.0 + 4.0 * a * (b - 1.0)).sqrt())
}

fn step_profile(k: usize, low: f64, high: f64) -> Vec<f64> {
    (0..=k)
        .map(|i| {
            if i == k {
                0.0
            } else if i < 2 {
                high
            } else {
                low
            }
        })
        .collect()
}

fn flat_control(k: usize) -> Vec<f64> {
    (0..=k).map(|i| if i < k { 0.5 } else { 0.0 }).collect()
}

fn unit_rates(k: usize, tau: TauShape) -> Vec<f64> {
    match tau {
        TauShape::Constant => vec![1.0; k],
        TauShape::Linear => (1..=k).map(|i| i as f64).collect(),
    }
}

/// Sign-inconsistent treatment with GTE = 0: control books with probability
/// 0.5 everywhere; treatment books with `p̄` at states 0 and 1 and 0.1 above.
/// Arrival rate 1, holding rate 1.
pub fn example_sign_inconsistent_null(k: usize) -> Result<PlatformModel> {
    example_sign_inconsistent_null_with(k, TauShape::Constant)
}

/// As [`example_sign_inconsistent_null`] with a choice of holding-rate shape.
/// `GTE = 0` holds only for the constant shape.
pub fn example_sign_inconsistent_null_with(k: usize, tau: TauShape) -> Result<PlatformModel> {
    if k < 3 {
        return invalid_arg(format!("example needs K >= 3, got {k}"));
    }
    let pbar = example_null_pbar(k);
    PlatformModel::new(
        k,
        1.0,
        unit_rates(k, tau),
        flat_control(k),
        step_profile(k, 0.1, pbar),
    )
}

/// Sign-inconsistent treatment with ADE near zero but GTE > 0 (K = 30).
pub fn example_sign_inconsistent_alt() -> Result<PlatformModel> {
    example_sign_inconsistent_alt_with(TauShape::Constant)
}

pub fn example_sign_inconsistent_alt_with(tau: TauShape) -> Result<PlatformModel> {
    let k = 30;
    PlatformModel::new(
        k,
        1.0,
        unit_rates(k, tau),
        flat_control(k),
        step_profile(k, 0.0745, 0.62),
    )
}

/// Limits `p̄_0, p̄_1` on `[0, 1]` and `τ̄` for a mean-field family.
pub trait MeanFieldLimits: Sync {
    fn p0_bar(&self, s: f64) -> f64;
    fn p1_bar(&self, s: f64) -> f64;
    fn tau_bar(&self, s: f64) -> f64;
    fn lambda_bar(&self) -> f64;
}

/// Logit limits `p̄_z(s) = (1-s)v_z / (eps + (1-s)v_z)` with `τ̄(s) = tau_bar s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitLimits {
    pub lambda_bar: f64,
    pub tau_bar: f64,
    pub v0: f64,
    pub delta: f64,
    pub eps_bar: f64,
}

impl Default for LogitLimits {
    fn default() -> Self {
        LogitLimits {
            lambda_bar: 1.5,
            tau_bar: 1.0,
            v0: 0.5,
            delta: 0.05,
            eps_bar: 1.0,
        }
    }
}

impl MeanFieldLimits for LogitLimits {
    fn p0_bar(&self, s: f64) -> f64 {
        let w = (1.0 - s) * self.v0;
        w / (self.eps_bar + w)
    }
    fn p1_bar(&self, s: f64) -> f64 {
        let w = (1.0 - s) * (self.v0 + self.delta);
        w / (self.eps_bar + w)
    }
    fn tau_bar(&self, s: f64) -> f64 {
        self.tau_bar * s
    }
    fn lambda_bar(&self) -> f64 {
        self.lambda_bar
    }
}

/// Limits given as values on a uniform grid over `[0, 1]`, linearly interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedLimits {
    pub lambda_bar: f64,
    pub p0: Vec<f64>,
    pub p1: Vec<f64>,
    pub tau: Vec<f64>,
}

fn interpolate(table: &[f64], s: f64) -> f64 {
    let n = table.len() - 1;
    let x = s.clamp(0.0, 1.0) * n as f64;
    let i = (x.floor() as usize).min(n.saturating_sub(1));
    let t = x - i as f64;
    if n == 0 {
        table[0]
    } else {
        table[i] * (1.0 - t) + table[i + 1] * t
    }
}

impl TabulatedLimits {
    pub fn new(lambda_bar: f64, p0: Vec<f64>, p1: Vec<f64>, tau: Vec<f64>) -> Result<Self> {
        for (name, t) in [("p0", &p0), ("p1", &p1), ("tau", &tau)] {
            if t.len() < 2 {
                return invalid_arg(format!("{name} table needs at least two points"));
            }
        }
        Ok(TabulatedLimits {
            lambda_bar,
            p0,
            p1,
            tau,
        })
    }
}

impl MeanFieldLimits for TabulatedLimits {
    fn p0_bar(&self, s: f64) -> f64 {
        interpolate(&self.p0, s)
    }
    fn p1_bar(&self, s: f64) -> f64 {
        interpolate(&self.p1, s)
    }
    fn tau_bar(&self, s: f64) -> f64 {
        interpolate(&self.tau, s)
    }
    fn lambda_bar(&self) -> f64 {
        self.lambda_bar
    }
}

/// Number of grid points on which the growth hypotheses are checked.
const HYPOTHESIS_GRID: usize = 1000;

/// Checks the growth hypotheses on a uniform grid:
/// `0 < p̄_0 < p̄_1 < 1` and both strictly decreasing on `[0, 1)`,
/// `p̄_z(1) = 0`, `τ̄(0) = 0`, `τ̄` nondecreasing and positive on `(0, 1]`.
pub fn check_meanfield_hypotheses(limits: &dyn MeanFieldLimits) -> Result<()> {
    let fail = |msg: String| Err(Error::InvalidModel(msg));
    if !(limits.lambda_bar() > 0.0) {
        return fail("lambda_bar must be positive".into());
    }
    if limits.p0_bar(1.0) != 0.0 || limits.p1_bar(1.0) != 0.0 {
        return fail("booking limits must vanish at s = 1".into());
    }
    if limits.tau_bar(0.0) != 0.0 {
        return fail("holding-rate limit must vanish at s = 0".into());
    }
    let n = HYPOTHESIS_GRID;
    let mut prev: Option<(f64, f64, f64)> = None;
    for i in 0..=n {
        let s = i as f64 / n as f64;
        let (p0, p1, t) = (limits.p0_bar(s), limits.p1_bar(s), limits.tau_bar(s));
        if i < n && !(0.0 < p0 && p0 < p1 && p1 < 1.0) {
            return fail(format!("need 0 < p0_bar < p1_bar < 1 at s = {s}"));
        }
        if i > 0 && !(t > 0.0) {
            return fail(format!("tau_bar must be positive at s = {s}"));
        }
        if let Some((q0, q1, u)) = prev {
            if !(p0 < q0 && p1 < q1) {
                return fail(format!("booking limits must strictly decrease at s = {s}"));
            }
            if t < u {
                return fail(format!("tau_bar must be nondecreasing at s = {s}"));
            }
        }
        prev = Some((p0, p1, t));
    }
    Ok(())
}

/// Discretization `lambda = K λ̄`, `tau(k) = K τ̄(k/K)`, `p_z(k) = p̄_z(k/K)`.
pub fn meanfield_family(limits: &dyn MeanFieldLimits, k: usize) -> Result<PlatformModel> {
    check_meanfield_hypotheses(limits)?;
    meanfield_model(limits, k)
}

fn meanfield_model(limits: &dyn MeanFieldLimits, k: usize) -> Result<PlatformModel> {
    if k == 0 {
        return Err(Error::InvalidModel("K must be at least 1".into()));
    }
    let kf = k as f64;
    let tau = (1..=k)
        .map(|i| kf * limits.tau_bar(i as f64 / kf))
        .collect();
    let mut p0: Vec<f64> = (0..=k).map(|i| limits.p0_bar(i as f64 / kf)).collect();
    let mut p1: Vec<f64> = (0..=k).map(|i| limits.p1_bar(i as f64 / kf)).collect();
    // (K - K)/K is exactly 1, but tabulated limits may round.
    p0[k] = 0.0;
    p1[k] = 0.0;
    PlatformModel::new(k, kf * limits.lambda_bar(), tau, p0, p1)
}

/// Logit family with every parameter but `K` held fixed.
pub struct LogitFamily(pub LogitParams);

impl ModelFamily for LogitFamily {
    fn model(&self, k: usize) -> Result<PlatformModel> {
        logit_scenario(&LogitParams { k, ..self.0 })
    }
}

/// Mean-field discretizations of fixed limits; hypotheses checked once.
pub struct MeanFieldFamily<L: MeanFieldLimits> {
    limits: L,
}

impl<L: MeanFieldLimits> MeanFieldFamily<L> {
    pub fn new(limits: L) -> Result<Self> {
        check_meanfield_hypotheses(&limits)?;
        Ok(MeanFieldFamily { limits })
    }
}

impl<L: MeanFieldLimits> ModelFamily for MeanFieldFamily<L> {
    fn model(&self, k: usize) -> Result<PlatformModel> {
        meanfield_model(&self.limits, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{booking_rate, classify_sign, gte, steady_state, Arm, SignClass};
    use approx::assert_abs_diff_eq;

    #[test]
    fn logit_defaults_are_strict_and_positive() {
        let m = logit_scenario(&LogitParams {
            k: 20,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(m.p0()[20], 0.0);
        assert_eq!(classify_sign(&m), SignClass::StrictlyPositive);
        assert_eq!(m.lambda(), 30.0);
        assert_eq!(m.tau(7), 7.0);

        let same = logit_scenario(&LogitParams {
            k: 20,
            delta: 0.0,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(classify_sign(&same), SignClass::Identical);
    }

    #[test]
    fn logit_rejects_bad_params() {
        assert!(logit_scenario(&LogitParams {
            k: 0,
            ..Default::default()
        })
        .is_err());
        assert!(logit_scenario(&LogitParams {
            eps_bar: -1.0,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn pbar_solves_quadratic() {
        for k in [3, 10, 50, 100, 400] {
            let p = example_null_pbar(k);
            let a = (1.0 - 0.1_f64.powi(k as i32 - 1)) / 0.9;
            let b = (1.0 - 0.5_f64.powi(k as i32 + 1)) / 0.5;
            assert_abs_diff_eq!(a * p * p + p - (b - 1.0), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn null_example_has_zero_gte() {
        for k in [3, 10, 50, 100] {
            let m = example_sign_inconsistent_null(k).unwrap();
            assert!(gte(&m).unwrap().abs() <= 1e-12, "K = {k}");
            assert_eq!(classify_sign(&m), SignClass::Inconsistent);
        }
        assert!(example_sign_inconsistent_null(2).is_err());
    }

    #[test]
    fn meanfield_logit_matches_intensive_logit() {
        let limits = LogitLimits::default();
        let k = 40;
        let mf = meanfield_family(&limits, k).unwrap();
        let direct = logit_scenario(
            &LogitParams {
                k,
                ..Default::default()
            }
            .intensive(),
        )
        .unwrap();
        // same booking profiles; the intensive reading keeps lambda fixed
        for (a, b) in mf.p1().iter().zip(direct.p1()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        assert_eq!(mf.lambda(), 60.0);
    }

    #[test]
    fn meanfield_k1_closed_form() {
        let m = meanfield_family(&LogitLimits::default(), 1).unwrap();
        // pi(1)/pi(0) = lambda p0(0) / tau(1)
        let r = m.lambda() * m.p0()[0] / m.tau(1);
        let pi = steady_state(&m, Arm::Control).unwrap();
        assert_abs_diff_eq!(pi.probs()[0], 1.0 / (1.0 + r), epsilon = 1e-15);
        assert_abs_diff_eq!(
            booking_rate(&m, Arm::Control).unwrap(),
            m.p0()[0] / (1.0 + r),
            epsilon = 1e-15
        );
    }

    #[test]
    fn meanfield_hypotheses_enforced() {
        let bad =
            TabulatedLimits::new(1.0, vec![0.5, 0.0], vec![0.4, 0.0], vec![0.0, 1.0]).unwrap();
        assert!(meanfield_family(&bad, 10).is_err());
        let good =
            TabulatedLimits::new(1.0, vec![0.5, 0.0], vec![0.6, 0.0], vec![0.0, 1.0]).unwrap();
        let m = meanfield_family(&good, 10).unwrap();
        assert_abs_diff_eq!(m.p0()[5], 0.25, epsilon = 1e-15);
        assert_eq!(classify_sign(&m), SignClass::StrictlyPositive);
    }
}
