//! The inventory-constrained platform: a birth-death chain on the number of
//! booked listings, driven by Poisson customer arrivals that book with a
//! state-dependent probability, and by listing releases at rate `tau(k)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};

/// Absolute tolerance used by the stochastic-dominance comparisons.
pub const DOMINANCE_TOL: f64 = 1e-12;

/// Tolerance on the total mass of a [`Distribution`].
pub const MASS_TOL: f64 = 1e-12;

/// A customer segment: a Poisson arrival stream with its own booking profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerType {
    pub rate: f64,
    pub booking: Vec<f64>,
}

/// Which booking-probability monotonicity rules a model must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationMode {
    /// Requires `p_z(0) > p_z(1) > ... > p_z(K-1) > 0` for both arms.
    Strict,
    /// Only the structural invariants; monotonicity violations become warnings.
    #[default]
    Permissive,
}

/// Global control, global treatment, or a Bernoulli(a) experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Arm {
    Control,
    Treatment,
    Experiment(f64),
}

impl Arm {
    /// The arm for treatment indicator `z`.
    pub fn from_indicator(z: u8) -> Arm {
        if z == 0 {
            Arm::Control
        } else {
            Arm::Treatment
        }
    }
}

/// Platform with `K` listings, arrival rate `lambda`, holding rates
/// `tau(1..=K)` and control/treatment booking profiles over states `0..=K`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlatformModel {
    #[serde(rename = "K")]
    k: usize,
    lambda: f64,
    tau: Vec<f64>,
    p0: Vec<f64>,
    p1: Vec<f64>,
}

impl PlatformModel {
    /// Builds a model, enforcing the permissive invariants.
    pub fn new(k: usize, lambda: f64, tau: Vec<f64>, p0: Vec<f64>, p1: Vec<f64>) -> Result<Self> {
        let model = PlatformModel {
            k,
            lambda,
            tau,
            p0,
            p1,
        };
        model.check_structure()?;
        Ok(model)
    }

    /// Builds a model and validates it in the given mode.
    pub fn with_mode(
        k: usize,
        lambda: f64,
        tau: Vec<f64>,
        p0: Vec<f64>,
        p1: Vec<f64>,
        mode: ValidationMode,
    ) -> Result<Self> {
        let model = Self::new(k, lambda, tau, p0, p1)?;
        model.validate(mode)?;
        Ok(model)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Holding rate in state `k`; `tau(0) = 0`.
    pub fn tau(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.tau[k - 1]
        }
    }

    /// `tau(1..=K)`.
    pub fn tau_slice(&self) -> &[f64] {
        &self.tau
    }

    pub fn p0(&self) -> &[f64] {
        &self.p0
    }

    pub fn p1(&self) -> &[f64] {
        &self.p1
    }

    /// Booking profile for treatment indicator `z`.
    pub fn profile(&self, z: u8) -> &[f64] {
        if z == 0 {
            &self.p0
        } else {
            &self.p1
        }
    }

    /// Number of states, `K + 1`.
    pub fn n_states(&self) -> usize {
        self.k + 1
    }

    /// Copy of the model with the treatment profile replaced by control (A/A).
    pub fn to_aa(&self) -> PlatformModel {
        PlatformModel {
            p1: self.p0.clone(),
            ..self.clone()
        }
    }

    /// Booking probabilities faced by an arriving customer under `arm`.
    pub fn booking_profile(&self, arm: Arm) -> Result<Vec<f64>> {
        match arm {
            Arm::Control => Ok(self.p0.clone()),
            Arm::Treatment => Ok(self.p1.clone()),
            Arm::Experiment(a) => {
                if !(0.0..=1.0).contains(&a) {
                    return invalid_arg(format!("allocation a must lie in [0, 1], got {a}"));
                }
                Ok(self
                    .p0
                    .iter()
                    .zip(&self.p1)
                    .map(|(&p0, &p1)| (1.0 - a) * p0 + a * p1)
                    .collect())
            }
        }
    }

    fn check_structure(&self) -> Result<()> {
        let k = self.k;
        if k == 0 {
            return Err(Error::InvalidModel(
                "K must be a positive integer (K >= 1)".into(),
            ));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidModel(format!(
                "lambda must be positive and finite, got {}",
                self.lambda
            )));
        }
        if self.tau.len() != k {
            return Err(Error::InvalidModel(format!(
                "tau must have K = {k} entries, got {}",
                self.tau.len()
            )));
        }
        for (i, &t) in self.tau.iter().enumerate() {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidModel(format!(
                    "tau({}) must be positive, got {t}",
                    i + 1
                )));
            }
        }
        for (i, w) in self.tau.windows(2).enumerate() {
            if w[1] < w[0] {
                return Err(Error::InvalidModel(format!(
                    "tau must be nondecreasing: tau({}) = {} > tau({}) = {}",
                    i + 1,
                    w[0],
                    i + 2,
                    w[1]
                )));
            }
        }
        for (name, p) in [("p0", &self.p0), ("p1", &self.p1)] {
            if p.len() != k + 1 {
                return Err(Error::InvalidModel(format!(
                    "{name} must have K + 1 = {} entries, got {}",
                    k + 1,
                    p.len()
                )));
            }
            if let Some((i, v)) = p
                .iter()
                .enumerate()
                .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
            {
                return Err(Error::InvalidModel(format!(
                    "{name}({i}) must be a probability, got {v}"
                )));
            }
            if p[k] != 0.0 {
                return Err(Error::InvalidModel(format!(
                    "{name}(K) must be 0 (no listing available), got {}",
                    p[k]
                )));
            }
        }
        Ok(())
    }

    /// Violations of the strict booking monotonicity, one message each.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, p) in [("p0", &self.p0), ("p1", &self.p1)] {
            for i in 0..self.k.saturating_sub(1) {
                if p[i] <= p[i + 1] {
                    out.push(format!(
                        "{name} is not strictly decreasing: {name}({i}) = {} <= {name}({}) = {}",
                        p[i],
                        i + 1,
                        p[i + 1]
                    ));
                    break;
                }
            }
            if p[self.k - 1] <= 0.0 {
                out.push(format!("{name}(K-1) must be positive for strict mode"));
            }
        }
        out
    }

    pub fn validate(&self, mode: ValidationMode) -> Result<()> {
        self.check_structure()?;
        if mode == ValidationMode::Strict {
            if let Some(w) = self.warnings().into_iter().next() {
                return Err(Error::InvalidModel(w));
            }
        }
        Ok(())
    }
}

// -- JSON ingestion ---------------------------------------------------------

/// Holding-rate specification in a model document.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TauSpec {
    Explicit(Vec<f64>),
    Form(TauForm),
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(tag = "form", rename_all = "lowercase", deny_unknown_fields)]
pub enum TauForm {
    /// `tau(k) = k * tau_bar`.
    Linear { tau_bar: f64 },
    /// `tau(k) = tau_bar`.
    Constant { tau_bar: f64 },
}

impl TauForm {
    pub fn rates(&self, k: usize) -> Vec<f64> {
        match *self {
            TauForm::Linear { tau_bar } => (1..=k).map(|i| i as f64 * tau_bar).collect(),
            TauForm::Constant { tau_bar } => vec![tau_bar; k],
        }
    }
}

impl TauSpec {
    fn rates(&self, k: usize) -> Vec<f64> {
        match self {
            TauSpec::Explicit(v) => v.clone(),
            TauSpec::Form(f) => f.rates(k),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExplicitDocument {
    #[serde(rename = "K")]
    k: usize,
    lambda: f64,
    tau: TauSpec,
    p0: Vec<f64>,
    p1: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TypesByArm {
    control: Vec<CustomerType>,
    treatment: Vec<CustomerType>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TypesDocument {
    types: TypesByArm,
    tau: TauSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ModelDocument {
    Explicit(ExplicitDocument),
    Types(TypesDocument),
}

impl PlatformModel {
    /// Parses the JSON model document (explicit aggregate form or per-type form).
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        match doc {
            ModelDocument::Explicit(d) => {
                let tau = d.tau.rates(d.k);
                PlatformModel::new(d.k, d.lambda, tau, d.p0, d.p1)
            }
            ModelDocument::Types(d) => {
                let agg = aggregate_types(&d.types.control, &d.types.treatment)?;
                let k = agg.p0.len() - 1;
                PlatformModel::new(k, agg.lambda, d.tau.rates(k), agg.p0, agg.p1)
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

/// Aggregated arrival rate and booking profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateProfiles {
    pub lambda: f64,
    pub p0: Vec<f64>,
    pub p1: Vec<f64>,
}

fn aggregate_arm(types: &[CustomerType], arm: &str) -> Result<(f64, Vec<f64>)> {
    let Some(first) = types.first() else {
        return Err(Error::InvalidModel(format!("{arm} has no customer types")));
    };
    let len = first.booking.len();
    if len < 2 {
        return Err(Error::InvalidModel(format!(
            "{arm} booking profiles need at least two states"
        )));
    }
    let mut lambda = 0.0;
    let mut weighted = vec![0.0; len];
    for t in types {
        if !(t.rate.is_finite() && t.rate > 0.0) {
            return Err(Error::InvalidModel(format!(
                "customer type rate must be positive, got {}",
                t.rate
            )));
        }
        if t.booking.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                found: t.booking.len(),
            });
        }
        lambda += t.rate;
        for (w, p) in weighted.iter_mut().zip(&t.booking) {
            *w += t.rate * p;
        }
    }
    Ok((lambda, weighted.into_iter().map(|w| w / lambda).collect()))
}

/// Collapses per-type arrival streams into aggregate booking profiles,
/// `p_z(k) = sum_g lambda_g p_{g,z}(k) / lambda`.
///
/// Both arms describe the same customer population, so their total rates
/// must agree.
pub fn aggregate_types(
    control: &[CustomerType],
    treatment: &[CustomerType],
) -> Result<AggregateProfiles> {
    let (l0, p0) = aggregate_arm(control, "control")?;
    let (l1, p1) = aggregate_arm(treatment, "treatment")?;
    if p0.len() != p1.len() {
        return Err(Error::LengthMismatch {
            expected: p0.len(),
            found: p1.len(),
        });
    }
    if (l0 - l1).abs() > 1e-12 * l0.max(l1) {
        return Err(Error::InvalidModel(format!(
            "control and treatment arrival rates differ: {l0} vs {l1}"
        )));
    }
    Ok(AggregateProfiles { lambda: l0, p0, p1 })
}

// -- Distributions ----------------------------------------------------------

/// Probability vector over states `0..=K`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return invalid_arg("distribution must have at least one state");
        }
        if let Some(v) = probs.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return invalid_arg(format!("distribution entries must be >= 0, got {v}"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return invalid_arg(format!("distribution must sum to 1, got {total}"));
        }
        Ok(Distribution { probs })
    }

    /// Normalizes a nonnegative mass vector.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return invalid_arg("weights must have positive finite mass");
        }
        Distribution::new(weights.into_iter().map(|w| (w / total).max(0.0)).collect())
    }

    pub fn point_mass(n_states: usize, at: usize) -> Self {
        let mut probs = vec![0.0; n_states];
        probs[at] = 1.0;
        Distribution { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// `sum_{k' >= k} p(k')` for each `k`.
    pub fn tail_sums(&self) -> Vec<f64> {
        let mut tails = vec![0.0; self.probs.len()];
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate().rev() {
            acc += p;
            tails[i] = acc;
        }
        tails
    }

    pub fn expectation(&self, f: &[f64]) -> f64 {
        self.probs.iter().zip(f).map(|(p, v)| p * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Distribution) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// First-order stochastic dominance of `nu` over `mu`: every tail sum of `nu`
/// is at least that of `mu`, and at least one is strictly larger.
pub fn dominates(nu: &Distribution, mu: &Distribution) -> Result<bool> {
    if nu.len() != mu.len() {
        return Err(Error::LengthMismatch {
            expected: nu.len(),
            found: mu.len(),
        });
    }
    let (tn, tm) = (nu.tail_sums(), mu.tail_sums());
    let mut strict = false;
    for (a, b) in tn.iter().zip(&tm) {
        if *a < *b - DOMINANCE_TOL {
            return Ok(false);
        }
        if *a > *b + DOMINANCE_TOL {
            strict = true;
        }
    }
    Ok(strict)
}

// -- Steady state -----------------------------------------------------------

/// `ln pi(k)` under `arm`, unnormalized-then-normalized in the log domain.
/// Entries are `-inf` for states the chain cannot reach.
pub fn log_steady_state(model: &PlatformModel, arm: Arm) -> Result<Vec<f64>> {
    let q = model.booking_profile(arm)?;
    let lambda = model.lambda();
    let mut log_w = Vec::with_capacity(model.n_states());
    log_w.push(0.0);
    let mut acc = 0.0_f64;
    for j in 1..=model.k() {
        acc += (lambda * q[j - 1]).ln() - model.tau(j).ln();
        log_w.push(acc);
    }
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_norm = max + log_w.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    Ok(log_w.into_iter().map(|l| l - log_norm).collect())
}

/// Stationary distribution of the birth-death chain, from detailed balance
/// `lambda q(k) pi(k) = tau(k+1) pi(k+1)`.
pub fn steady_state(model: &PlatformModel, arm: Arm) -> Result<Distribution> {
    let log_pi = log_steady_state(model, arm)?;
    Distribution::from_weights(log_pi.into_iter().map(f64::exp).collect())
}

/// Steady-state probability that an arriving customer books.
pub fn booking_rate(model: &PlatformModel, arm: Arm) -> Result<f64> {
    let pi = steady_state(model, arm)?;
    let q = model.booking_profile(arm)?;
    Ok(pi.expectation(&q))
}

/// Global treatment effect `rho_1 - rho_0`.
pub fn gte(model: &PlatformModel) -> Result<f64> {
    Ok(booking_rate(model, Arm::Treatment)? - booking_rate(model, Arm::Control)?)
}

/// Average direct effect: treatment minus control booking probability,
/// averaged over the experiment's steady state.
pub fn ade(model: &PlatformModel, a: f64) -> Result<f64> {
    let pi_a = steady_state(model, Arm::Experiment(a))?;
    let diff: Vec<f64> = model
        .p1()
        .iter()
        .zip(model.p0())
        .map(|(p1, p0)| p1 - p0)
        .collect();
    Ok(pi_a.expectation(&diff))
}

/// Continuous-time generator of the chain under `arm`.
pub fn generator(model: &PlatformModel, arm: Arm) -> Result<DMatrix<f64>> {
    let q = model.booking_profile(arm)?;
    let n = model.n_states();
    let lambda = model.lambda();
    let mut g = DMatrix::zeros(n, n);
    for k in 0..n {
        let up = if k < model.k() { lambda * q[k] } else { 0.0 };
        let down = model.tau(k);
        if k + 1 < n {
            g[(k, k + 1)] = up;
        }
        if k > 0 {
            g[(k, k - 1)] = down;
        }
        g[(k, k)] = -(up + down);
    }
    Ok(g)
}

// -- Sign consistency -------------------------------------------------------

/// Direction of the state-wise booking change `p1(k) - p0(k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SignClass {
    /// `p1 == p0` exactly.
    Identical,
    StrictlyPositive,
    StrictlyNegative,
    /// Weakly positive with every nonzero difference below tolerance.
    Positive,
    /// Weakly negative with every nonzero difference below tolerance.
    Negative,
    Inconsistent,
}

impl SignClass {
    pub fn is_sign_consistent(self) -> bool {
        !matches!(self, SignClass::Inconsistent)
    }

    pub fn is_strict(self) -> bool {
        matches!(
            self,
            SignClass::StrictlyPositive | SignClass::StrictlyNegative
        )
    }
}

/// Differences within this band count as ties in [`classify_sign`].
pub const SIGN_TOL: f64 = 1e-12;

pub fn classify_sign(model: &PlatformModel) -> SignClass {
    let diffs: Vec<f64> = model
        .p1()
        .iter()
        .zip(model.p0())
        .map(|(a, b)| a - b)
        .collect();
    let up = diffs.iter().any(|d| *d > SIGN_TOL);
    let down = diffs.iter().any(|d| *d < -SIGN_TOL);
    match (up, down) {
        (true, true) => SignClass::Inconsistent,
        (true, false) if diffs.iter().all(|d| *d >= -SIGN_TOL) => SignClass::StrictlyPositive,
        (false, true) if diffs.iter().all(|d| *d <= SIGN_TOL) => SignClass::StrictlyNegative,
        (true, false) | (false, true) => SignClass::Inconsistent,
        (false, false) => {
            if diffs.iter().all(|d| *d == 0.0) {
                SignClass::Identical
            } else if diffs.iter().all(|d| *d >= 0.0) {
                SignClass::Positive
            } else if diffs.iter().all(|d| *d <= 0.0) {
                SignClass::Negative
            } else {
                SignClass::Inconsistent
            }
        }
    }
}
