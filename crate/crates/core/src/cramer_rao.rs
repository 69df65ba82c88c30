//! Value functions of the global-control and global-treatment arrival chains
//! and the Cramér-Rao lower bound `σ²_UB` they induce.
//!
//! The bound limits `N Var(θ̂_N)` for estimators that are unbiased for the
//! GTE over every feasible choice of the chain primitives and allocation, not
//! merely at the model being evaluated. It says nothing about estimators that
//! are unbiased only locally.

use rayon::prelude::*;
use serde::Serialize;

use crate::asymptotics::{centered_variance, fundamental_solve};
use crate::error::{check_interior_allocation, invalid_arg, Error, Result};
use crate::kernels::{aug_index, augmented_kernel, AugmentedKernel};
use crate::linalg::CompensatedSum;
use crate::model::{log_steady_state, Arm, Distribution, PlatformModel};

/// Solution of Poisson's equation `v = g - rho e + P v` on the augmented chain,
/// normalized so that `sum phi v = 0`.
#[derive(Debug, Clone)]
pub struct ValueFunction {
    pub z: u8,
    pub rho: f64,
    /// Indexed by `2k + y`.
    pub v: Vec<f64>,
    /// Max-norm residual of Poisson's equation.
    pub poisson_residual: f64,
}

impl ValueFunction {
    pub fn get(&self, k: usize, y: usize) -> f64 {
        self.v[aug_index(k, y)]
    }

    pub fn k(&self) -> usize {
        self.v.len() / 2 - 1
    }
}

/// Reward `g(k, y) = y` on the augmented states.
fn booking_reward(n_states: usize) -> Vec<f64> {
    (0..2 * n_states).map(|i| (i % 2) as f64).collect()
}

fn check_indicator(z: u8) -> Result<()> {
    if z > 1 {
        return invalid_arg(format!("treatment indicator must be 0 or 1, got {z}"));
    }
    Ok(())
}

fn solve_poisson(aug: &AugmentedKernel, g: &[f64], z: u8) -> Result<ValueFunction> {
    let phi = Distribution::from_weights(aug.phi.clone())?;
    let rho: f64 = phi.expectation(g);
    let rhs: Vec<f64> = g.iter().map(|gi| gi - rho).collect();
    let v = fundamental_solve(&aug.matrix, &phi, &rhs)?;
    let n = v.len();
    let mut poisson_residual = 0.0_f64;
    for i in 0..n {
        let pv: f64 = (0..n).map(|j| aug.matrix[(i, j)] * v[j]).sum();
        poisson_residual = poisson_residual.max((v[i] - rhs[i] - pv).abs());
    }
    Ok(ValueFunction {
        z,
        rho,
        v,
        poisson_residual,
    })
}

/// Value function of arm `z` for the booking reward.
pub fn value_function(model: &PlatformModel, z: u8) -> Result<ValueFunction> {
    check_indicator(z)?;
    let aug = augmented_kernel(model, Arm::from_indicator(z))?;
    solve_poisson(&aug, &booking_reward(model.n_states()), z)
}

/// Value function of arm `z` for an arbitrary reward on the augmented states.
pub fn value_function_with_reward(
    model: &PlatformModel,
    z: u8,
    reward: &[f64],
) -> Result<ValueFunction> {
    check_indicator(z)?;
    if reward.len() != 2 * model.n_states() {
        return Err(Error::LengthMismatch {
            expected: 2 * model.n_states(),
            found: reward.len(),
        });
    }
    let aug = augmented_kernel(model, Arm::from_indicator(z))?;
    solve_poisson(&aug, reward, z)
}

/// Residuals of the closed-form increments of `v(., 0)` and of the booked-state
/// shift `v(k, 1) = 1 + v(k + 1, 0)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RecursionResiduals {
    /// `v(K,0) - v(K-1,0) = -lambda rho / tau(K)`.
    pub top: f64,
    /// Interior increment recursion, over `0 < k < K` with `p(k) > 0`.
    pub interior: f64,
    /// `v(1,0) - v(0,0) = (rho - p(0)) / p(0)`.
    pub bottom: f64,
    /// `v(k,1) = 1 + v(k+1,0)` over `k < K`.
    pub booked_shift: f64,
}

impl RecursionResiduals {
    pub fn max(&self) -> f64 {
        self.top
            .max(self.interior)
            .max(self.bottom)
            .max(self.booked_shift)
    }
}

/// Checks a value function against the increment identities of the booking
/// chain. Interior states with `p(k) = 0` are skipped.
pub fn recursion_residuals(model: &PlatformModel, vf: &ValueFunction) -> RecursionResiduals {
    let k_max = model.k();
    let lambda = model.lambda();
    let p = model.profile(vf.z);
    let rho = vf.rho;
    let d = |k: usize| vf.get(k + 1, 0) - vf.get(k, 0);

    let top = (d(k_max - 1) + lambda * rho / model.tau(k_max)).abs();
    let bottom = if p[0] > 0.0 {
        (d(0) - (rho - p[0]) / p[0]).abs()
    } else {
        0.0
    };
    let mut interior = 0.0_f64;
    for k in 1..k_max {
        if p[k] <= 0.0 {
            continue;
        }
        let want = (rho - p[k]) / p[k] + model.tau(k) / (lambda * p[k]) * d(k - 1);
        interior = interior.max((d(k) - want).abs());
    }
    let booked_shift = (0..k_max)
        .map(|k| (vf.get(k, 1) - 1.0 - vf.get(k + 1, 0)).abs())
        .fold(0.0, f64::max);
    RecursionResiduals {
        top,
        interior,
        bottom,
        booked_shift,
    }
}

/// Rebuilds the value function from the increment recursions alone, without
/// any linear solve. Runs the recursion forward from state 0 where it
/// contracts and backward from state `K` elsewhere.
///
/// Returns `None` when some `p(k)`, `k < K`, is zero.
pub fn value_function_by_recursion(model: &PlatformModel, z: u8) -> Result<Option<Vec<f64>>> {
    check_indicator(z)?;
    let k_max = model.k();
    let lambda = model.lambda();
    let p = model.profile(z).to_vec();
    if p[..k_max].iter().any(|pk| *pk <= 0.0) {
        return Ok(None);
    }
    let arm = Arm::from_indicator(z);
    let log_pi = log_steady_state(model, arm)?;
    let pi: Vec<f64> = log_pi.iter().map(|l| l.exp()).collect();
    let rho: f64 = pi.iter().zip(&p).map(|(a, b)| a * b).sum();

    // gain of the forward step d_{k-1} -> d_k
    let gain = |k: usize| model.tau(k) / (lambda * p[k]);
    let split = (1..k_max).find(|&k| gain(k) >= 1.0).unwrap_or(k_max);

    let mut d = vec![0.0; k_max];
    d[0] = (rho - p[0]) / p[0];
    for k in 1..split {
        d[k] = (rho - p[k]) / p[k] + gain(k) * d[k - 1];
    }
    if split < k_max {
        d[k_max - 1] = -lambda * rho / model.tau(k_max);
        for k in (split..k_max - 1).rev() {
            // invert d_{k+1} = (rho - p)/p + gain(k+1) d_k
            d[k] = (d[k + 1] - (rho - p[k + 1]) / p[k + 1]) / gain(k + 1);
        }
    }

    let mut v0 = vec![0.0; k_max + 1];
    for k in 0..k_max {
        v0[k + 1] = v0[k] + d[k];
    }
    let mut v = vec![0.0; 2 * (k_max + 1)];
    for k in 0..=k_max {
        v[aug_index(k, 0)] = v0[k];
        v[aug_index(k, 1)] = 1.0 + v0[(k + 1).min(k_max)];
    }
    let center: f64 = (0..=k_max)
        .map(|k| pi[k] * ((1.0 - p[k]) * v[aug_index(k, 0)] + p[k] * v[aug_index(k, 1)]))
        .sum();
    for x in &mut v {
        *x -= center;
    }
    Ok(Some(v))
}

/// Cramér-Rao lower bound on `N Var` of unbiased GTE estimators.
#[derive(Debug, Clone, Serialize)]
pub struct CRBound {
    #[serde(rename = "K")]
    pub k: usize,
    pub a: f64,
    pub sigma_ub_sq: f64,
    /// Term carrying the `1/a` factor.
    pub treatment_part: f64,
    /// Term carrying the `1/(1-a)` factor.
    pub control_part: f64,
}

fn log_phi(log_pi: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * log_pi.len());
    for (lp, qk) in log_pi.iter().zip(q) {
        out.push(lp + (1.0 - qk).ln());
        out.push(lp + qk.ln());
    }
    out
}

fn arm_term(model: &PlatformModel, z: u8, log_phi_a: &[f64]) -> Result<f64> {
    let arm = Arm::from_indicator(z);
    let aug = augmented_kernel(model, arm)?;
    let g = booking_reward(model.n_states());
    let vf = solve_poisson(&aug, &g, z)?;
    let log_phi_z = log_phi(&log_steady_state(model, arm)?, model.profile(z));

    let n = aug.matrix.nrows();
    let mut total = CompensatedSum::new();
    for x in 0..n {
        if log_phi_z[x] == f64::NEG_INFINITY {
            continue;
        }
        if log_phi_a[x] == f64::NEG_INFINITY {
            return Err(Error::InvalidModel(format!(
                "augmented state {x} is reachable under arm {z} but not under the experiment"
            )));
        }
        let weight = (2.0 * log_phi_z[x] - log_phi_a[x]).exp();
        let shift = g[x] - vf.rho - vf.v[x];
        let mut inner = CompensatedSum::new();
        for xp in 0..n {
            let pr = aug.matrix[(x, xp)];
            if pr != 0.0 {
                let e = vf.v[xp] + shift;
                inner.add(pr * e * e);
            }
        }
        total.add(weight * inner.value());
    }
    Ok(total.value())
}

pub fn cr_lower_bound(model: &PlatformModel, a: f64) -> Result<CRBound> {
    check_interior_allocation(a)?;
    let arm_a = Arm::Experiment(a);
    let q_a = model.booking_profile(arm_a)?;
    let log_phi_a = log_phi(&log_steady_state(model, arm_a)?, &q_a);
    let treatment_part = arm_term(model, 1, &log_phi_a)? / a;
    let control_part = arm_term(model, 0, &log_phi_a)? / (1.0 - a);
    let sigma_ub_sq = treatment_part + control_part;
    if !(sigma_ub_sq.is_finite() && sigma_ub_sq >= 0.0) {
        return Err(Error::Numerical(format!(
            "Cramér-Rao bound is not a finite nonnegative number ({sigma_ub_sq})"
        )));
    }
    Ok(CRBound {
        k: model.k(),
        a,
        sigma_ub_sq,
        treatment_part,
        control_part,
    })
}

/// A sequence of models indexed by the listing count.
pub trait ModelFamily: Sync {
    fn model(&self, k: usize) -> Result<PlatformModel>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub sigma_ub_sq: f64,
    pub naive_limit: f64,
}

/// Least-squares line `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl LinearFit {
    /// Needs at least two distinct abscissae.
    pub fn fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
        let n = xs.len();
        if n < 2 || ys.len() != n {
            return None;
        }
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        if sxx == 0.0 {
            return None;
        }
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let slope = sxy / sxx;
        let r_squared = if syy == 0.0 {
            1.0
        } else {
            sxy * sxy / (sxx * syy)
        };
        Some(LinearFit {
            slope,
            intercept: my - slope * mx,
            r_squared,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthScan {
    pub rows: Vec<GrowthRow>,
    /// Fit of `ln sigma_ub_sq` against `K`; absent for fewer than two rows.
    pub log_fit: Option<LinearFit>,
}

impl GrowthScan {
    pub const CSV_HEADER: &'static str = "K,sigma_ub_sq,naive_limit";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.k, r.sigma_ub_sq, r.naive_limit));
        }
        s
    }
}

/// Evaluates `σ²_UB(K)` and the naive-variance limit along a family, in
/// parallel over `K`.
pub fn growth_scan(family: &dyn ModelFamily, ks: &[usize], a: f64) -> Result<GrowthScan> {
    check_interior_allocation(a)?;
    if ks.is_empty() {
        return invalid_arg("K list must be nonempty");
    }
    let rows = ks
        .par_iter()
        .map(|&k| {
            let model = family.model(k)?;
            let cr = cr_lower_bound(&model, a)?;
            let v0 = centered_variance(&model, a, 0)?;
            let v1 = centered_variance(&model, a, 1)?;
            Ok(GrowthRow {
                k,
                sigma_ub_sq: cr.sigma_ub_sq,
                naive_limit: v1 / a + v0 / (1.0 - a),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| r.k as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.sigma_ub_sq.ln()).collect();
    Ok(GrowthScan {
        log_fit: LinearFit::fit(&xs, &ys),
        rows,
    })
}
