//! Large-sample behaviour of the difference-in-means estimator under a
//! Bernoulli(a) customer-randomized experiment.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_interior_allocation, invalid_arg, Error, Result};
use crate::kernels::{interarrival_kernel, seen_state_kernel};
use crate::linalg::{solve_dense, stationarity_residual};
use crate::model::{ade, gte, steady_state, Arm, Distribution, PlatformModel};

/// Tolerance on `stationary * kernel == stationary` before a fundamental solve.
pub const STATIONARITY_TOL: f64 = 1e-8;
/// Tolerance on `stationary . rhs == 0`.
pub const CENTERING_TOL: f64 = 1e-10;
/// Maximum accepted residual of the fundamental system, relative to `max(1, |x|)`.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-9;

/// Asymptotic summary of the DM estimator and the naive variance estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticReport {
    pub gte: f64,
    pub ade: f64,
    pub v0: f64,
    pub v1: f64,
    pub cov_tail: f64,
    pub sigma_tilde_sq: f64,
    pub naive_limit: f64,
    pub a: f64,
}

fn mean_booking(pi_a: &Distribution, p: &[f64]) -> f64 {
    pi_a.expectation(p)
}

/// `Var(Y_1 | Z_1 = z)` for a customer arriving at the experiment's steady state.
pub fn centered_variance(model: &PlatformModel, a: f64, z: u8) -> Result<f64> {
    check_interior_allocation(a)?;
    let pi_a = steady_state(model, Arm::Experiment(a))?;
    let p = model.profile(z);
    let m = mean_booking(&pi_a, p);
    Ok(pi_a
        .probs()
        .iter()
        .zip(p)
        .map(|(w, pk)| w * (pk * (1.0 - m).powi(2) + (1.0 - pk) * m * m))
        .sum())
}

/// `x = sum_{j >= 0} kernel^j rhs` for a centered `rhs`, obtained by solving
/// `(I - kernel + 1 stationary^T) x = rhs`.
pub fn fundamental_solve(
    kernel: &DMatrix<f64>,
    stationary: &Distribution,
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = kernel.nrows();
    if kernel.ncols() != n || stationary.len() != n || rhs.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: if stationary.len() != n {
                stationary.len()
            } else {
                rhs.len()
            },
        });
    }
    let pi = stationary.probs();
    let stat_res = stationarity_residual(kernel, pi);
    if stat_res > STATIONARITY_TOL {
        return Err(Error::Numerical(format!(
            "stationary vector is not invariant for the kernel (residual {stat_res:.3e})"
        )));
    }
    let scale = rhs.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let centering: f64 = pi.iter().zip(rhs).map(|(p, r)| p * r).sum();
    if centering.abs() > CENTERING_TOL * scale {
        return invalid_arg(format!(
            "right-hand side is not centered under the stationary law (mean {centering:.3e})"
        ));
    }
    if rhs.iter().all(|r| *r == 0.0) {
        return Ok(vec![0.0; n]);
    }
    let mut a = -kernel.clone();
    for i in 0..n {
        a[(i, i)] += 1.0;
        for j in 0..n {
            a[(i, j)] += pi[j];
        }
    }
    let sol = solve_dense(&a, &DVector::from_column_slice(rhs))?;
    let xmax = sol.x.amax().max(1.0);
    if sol.residual > SOLVE_RESIDUAL_TOL * xmax {
        return Err(Error::Numerical(format!(
            "fundamental solve residual {:.3e} exceeds tolerance",
            sol.residual
        )));
    }
    Ok(sol.x.iter().copied().collect())
}

/// Pieces shared by the analytic and truncated covariance sums.
struct CovarianceParts {
    kernel: DMatrix<f64>,
    pi_a: Distribution,
    /// Signed measure of the state seen by customer 2, weighted by the
    /// centered outcome of customer 1 with `Z_1 = z`.
    w: [Vec<f64>; 2],
    /// Centered booking profile `p_z - m_z`.
    r: [Vec<f64>; 2],
}

fn covariance_parts(model: &PlatformModel, a: f64) -> Result<CovarianceParts> {
    check_interior_allocation(a)?;
    let arm = Arm::Experiment(a);
    let pi_a = steady_state(model, arm)?;
    let kernel = seen_state_kernel(model, arm)?.matrix;
    let d = interarrival_kernel(model);
    let n = model.n_states();
    let k_max = model.k();

    let mut w: [Vec<f64>; 2] = [vec![0.0; n], vec![0.0; n]];
    let mut r: [Vec<f64>; 2] = [vec![0.0; n], vec![0.0; n]];
    for z in 0..2u8 {
        let p = model.profile(z);
        let m = mean_booking(&pi_a, p);
        let wz = &mut w[z as usize];
        for (k, &pk) in p.iter().enumerate() {
            let mass = pi_a.probs()[k];
            if mass == 0.0 {
                continue;
            }
            let up = (k + 1).min(k_max);
            let c_book = mass * pk * (1.0 - m);
            let c_stay = mass * (1.0 - pk) * (-m);
            for (kp, slot) in wz.iter_mut().enumerate() {
                *slot += c_book * d[(up, kp)] + c_stay * d[(k, kp)];
            }
        }
        r[z as usize] = p.iter().map(|pk| pk - m).collect();
    }
    Ok(CovarianceParts { kernel, pi_a, w, r })
}

fn combine(s: [[f64; 2]; 2]) -> f64 {
    s[0][0] + s[1][1] - s[0][1] - s[1][0]
}

/// `sum_{j >= 2} [C_j(0,0) + C_j(1,1) - C_j(0,1) - C_j(1,0)]` via the
/// fundamental matrix of the experiment's seen-state chain.
pub fn cov_tail_sum(model: &PlatformModel, a: f64) -> Result<f64> {
    let parts = covariance_parts(model, a)?;
    let x: [Vec<f64>; 2] = [
        fundamental_solve(&parts.kernel, &parts.pi_a, &parts.r[0])?,
        fundamental_solve(&parts.kernel, &parts.pi_a, &parts.r[1])?,
    ];
    let mut s = [[0.0; 2]; 2];
    for z in 0..2 {
        for zp in 0..2 {
            s[z][zp] = dot(&parts.w[z], &x[zp]);
        }
    }
    Ok(combine(s))
}

/// Same quantity as [`cov_tail_sum`] by direct summation of
/// `w M^(j-2) r` until the propagated measure falls below `tol`.
pub fn cov_tail_truncated(model: &PlatformModel, a: f64, tol: f64) -> Result<f64> {
    const MAX_TERMS: usize = 10_000_000;
    let parts = covariance_parts(model, a)?;
    let rmax = parts
        .r
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut s = [[0.0; 2]; 2];
    for z in 0..2 {
        let mut u = parts.w[z].clone();
        let mut terms = 0;
        loop {
            for zp in 0..2 {
                s[z][zp] += dot(&u, &parts.r[zp]);
            }
            let mass: f64 = u.iter().map(|v| v.abs()).sum();
            if mass * rmax < tol {
                break;
            }
            terms += 1;
            if terms > MAX_TERMS {
                return Err(Error::Numerical(
                    "truncated covariance sum did not converge".into(),
                ));
            }
            u = row_times(&u, &parts.kernel);
        }
    }
    Ok(combine(s))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn row_times(u: &[f64], m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.ncols();
    let mut out = vec![0.0; n];
    for (i, &ui) in u.iter().enumerate() {
        if ui == 0.0 {
            continue;
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o += ui * m[(i, j)];
        }
    }
    out
}

/// Assembles the limiting mean and variance of `sqrt(N) GTÊ_N` and the limit
/// of `N Var̂_N`.
pub fn dm_asymptotic_variance(model: &PlatformModel, a: f64) -> Result<AsymptoticReport> {
    check_interior_allocation(a)?;
    let v0 = centered_variance(model, a, 0)?;
    let v1 = centered_variance(model, a, 1)?;
    let cov_tail = cov_tail_sum(model, a)?;
    let naive_limit = v1 / a + v0 / (1.0 - a);
    let sigma_tilde_sq = naive_limit + 2.0 * cov_tail;
    if !(sigma_tilde_sq.is_finite() && sigma_tilde_sq > 0.0) {
        return Err(Error::Numerical(format!(
            "asymptotic variance is not positive ({sigma_tilde_sq:.3e})"
        )));
    }
    Ok(AsymptoticReport {
        gte: gte(model)?,
        ade: ade(model, a)?,
        v0,
        v1,
        cov_tail,
        sigma_tilde_sq,
        naive_limit,
        a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn k2(p1: [f64; 3]) -> PlatformModel {
        PlatformModel::new(2, 1.0, vec![1.0, 2.0], vec![0.5, 0.25, 0.0], p1.to_vec()).unwrap()
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let k = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let pi = Distribution::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(
            fundamental_solve(&k, &pi, &[0.0, 0.0]).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn two_state_chain_against_truncated_series() {
        // stay with prob 0.5, swap with prob 0.5: P^j r = 0 for j >= 1
        let k = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let pi = Distribution::new(vec![0.5, 0.5]).unwrap();
        let x = fundamental_solve(&k, &pi, &[1.0, -1.0]).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], -1.0, epsilon = 1e-14);

        // sticky chain: P^j r = 0.4^j r, sum = r / 0.6
        let k = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.3, 0.7]);
        let x = fundamental_solve(&k, &pi, &[1.0, -1.0]).unwrap();
        let mut series = [0.0; 2];
        let mut term = [1.0, -1.0];
        for _ in 0..=200 {
            series[0] += term[0];
            series[1] += term[1];
            term = [0.7 * term[0] + 0.3 * term[1], 0.3 * term[0] + 0.7 * term[1]];
        }
        assert_abs_diff_eq!(x[0], series[0], epsilon = 1e-12);
        assert_abs_diff_eq!(x[0], 1.0 / 0.6, epsilon = 1e-12);
    }

    #[test]
    fn uncentered_rhs_rejected() {
        let k = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let pi = Distribution::new(vec![0.5, 0.5]).unwrap();
        assert!(fundamental_solve(&k, &pi, &[1.0, 0.0]).is_err());
        let wrong_pi = Distribution::new(vec![0.9, 0.1]).unwrap();
        let k = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.3, 0.7]);
        assert!(fundamental_solve(&k, &wrong_pi, &[0.1, -0.9]).is_err());
    }

    #[test]
    fn variance_special_cases() {
        let zero = PlatformModel::new(2, 1.0, vec![1.0, 2.0], vec![0.0; 3], vec![0.0; 3]).unwrap();
        assert_eq!(centered_variance(&zero, 0.5, 0).unwrap(), 0.0);
        assert!(dm_asymptotic_variance(&zero, 0.5).is_err());

        // V(z) = m(1 - m) for any profile
        let m = k2([0.6, 0.3, 0.0]);
        let pi_a = steady_state(&m, Arm::Experiment(0.4)).unwrap();
        let mean = pi_a.expectation(m.p1());
        assert_abs_diff_eq!(
            centered_variance(&m, 0.4, 1).unwrap(),
            mean * (1.0 - mean),
            epsilon = 1e-15
        );
        assert!(centered_variance(&m, 1.0, 1).is_err());
    }

    #[test]
    fn cov_tail_matches_truncation_small() {
        let m = k2([0.6, 0.3, 0.0]);
        let exact = cov_tail_sum(&m, 0.5).unwrap();
        let trunc = cov_tail_truncated(&m, 0.5, 1e-15).unwrap();
        assert_abs_diff_eq!(exact, trunc, epsilon = 1e-12);
        assert!(exact.abs() > 1e-6);

        let k1 = PlatformModel::new(1, 2.0, vec![1.5], vec![0.4, 0.0], vec![0.7, 0.0]).unwrap();
        assert_abs_diff_eq!(
            cov_tail_sum(&k1, 0.3).unwrap(),
            cov_tail_truncated(&k1, 0.3, 1e-15).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn aa_covariances_cancel() {
        let m = k2([0.5, 0.25, 0.0]);
        let r = dm_asymptotic_variance(&m, 0.3).unwrap();
        assert!(r.cov_tail.abs() <= 1e-12);
        assert_abs_diff_eq!(r.sigma_tilde_sq, r.naive_limit, epsilon = 1e-12);
        assert_abs_diff_eq!(
            r.naive_limit,
            (1.0 / 0.3 + 1.0 / 0.7) * r.v0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn report_json_field_names() {
        let r = dm_asymptotic_variance(&k2([0.6, 0.3, 0.0]), 0.5).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "a",
                "ade",
                "cov_tail",
                "gte",
                "naive_limit",
                "sigma_tilde_sq",
                "v0",
                "v1"
            ]
        );
    }
}
