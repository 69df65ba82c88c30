//! Discrete-time kernels sampled at customer arrival epochs.
//!
//! `D̄(m, k')` is the probability that the chain, sitting at `m` right after a
//! customer's booking decision, has descended to `k'` when the next customer
//! arrives. Composing it with the booking step gives the seen-state kernel
//! `M_z` and the augmented `(state, outcome)` kernel `P_z`.

use nalgebra::DMatrix;

use crate::error::{check_interior_allocation, invalid_arg, Result};
use crate::model::{steady_state, Arm, Distribution, PlatformModel};

/// Interarrival descent kernel `D̄`, lower triangular and row-stochastic.
pub fn interarrival_kernel(model: &PlatformModel) -> DMatrix<f64> {
    let n = model.n_states();
    let lambda = model.lambda();
    let mut d = DMatrix::zeros(n, n);
    for m in 0..n {
        // acc = prod_{kappa = k'+1..m} tau(kappa) / (lambda + tau(kappa))
        let mut acc = 1.0;
        for kp in (0..=m).rev() {
            let t = model.tau(kp);
            d[(m, kp)] = acc * lambda / (lambda + t);
            acc *= t / (lambda + t);
        }
    }
    d
}

fn arm_profile(model: &PlatformModel, arm: Arm) -> Result<Vec<f64>> {
    if let Arm::Experiment(a) = arm {
        check_interior_allocation(a)?;
    }
    model.booking_profile(arm)
}

/// Transition matrix of the state seen by successive arriving customers.
#[derive(Debug, Clone)]
pub struct SeenStateKernel {
    pub matrix: DMatrix<f64>,
}

impl SeenStateKernel {
    /// One step of `nu -> nu M`.
    pub fn step(&self, nu: &[f64]) -> Vec<f64> {
        step_row(&self.matrix, nu)
    }
}

fn step_row(m: &DMatrix<f64>, nu: &[f64]) -> Vec<f64> {
    let n = m.ncols();
    let mut out = vec![0.0; n];
    for (i, &w) in nu.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o += w * m[(i, j)];
        }
    }
    out
}

fn seen_state_from(d: &DMatrix<f64>, q: &[f64]) -> DMatrix<f64> {
    let n = d.nrows();
    let k = n - 1;
    let mut m = DMatrix::zeros(n, n);
    for s in 0..n {
        let up = (s + 1).min(k);
        for j in 0..n {
            m[(s, j)] = q[s] * d[(up, j)] + (1.0 - q[s]) * d[(s, j)];
        }
    }
    m
}

/// `M_z(k, .) = q(k) D̄(min(k+1, K), .) + (1 - q(k)) D̄(k, .)`.
pub fn seen_state_kernel(model: &PlatformModel, arm: Arm) -> Result<SeenStateKernel> {
    let q = arm_profile(model, arm)?;
    let d = interarrival_kernel(model);
    Ok(SeenStateKernel {
        matrix: seen_state_from(&d, &q),
    })
}

/// Kernel on `(k, y)` pairs, flattened as index `2k + y`, with its
/// stationary law from the PASTA factorization.
#[derive(Debug, Clone)]
pub struct AugmentedKernel {
    pub matrix: DMatrix<f64>,
    pub phi: Vec<f64>,
}

/// Flattened index of augmented state `(k, y)`.
#[inline]
pub fn aug_index(k: usize, y: usize) -> usize {
    2 * k + y
}

/// `P_z((k,y),(k',y')) = D̄(min(k+y, K), k') p_z(k')^y' (1 - p_z(k'))^(1-y')`.
///
/// The arm's booking profile governs the outcome `y'` of the customer arriving
/// at the destination state.
pub fn augmented_kernel(model: &PlatformModel, arm: Arm) -> Result<AugmentedKernel> {
    let q = arm_profile(model, arm)?;
    let d = interarrival_kernel(model);
    let n = model.n_states();
    let k_max = model.k();
    let mut p = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        for y in 0..2 {
            let from = (k + y).min(k_max);
            let row = aug_index(k, y);
            for kp in 0..=from {
                let dd = d[(from, kp)];
                p[(row, aug_index(kp, 0))] = dd * (1.0 - q[kp]);
                p[(row, aug_index(kp, 1))] = dd * q[kp];
            }
        }
    }
    let pi = steady_state(model, arm)?;
    let phi = augmented_stationary(pi.probs(), &q);
    Ok(AugmentedKernel { matrix: p, phi })
}

/// `phi(k, y) = pi(k) q(k)^y (1 - q(k))^(1-y)`.
pub fn augmented_stationary(pi: &[f64], q: &[f64]) -> Vec<f64> {
    let mut phi = Vec::with_capacity(2 * pi.len());
    for (p, qk) in pi.iter().zip(q) {
        phi.push(p * (1.0 - qk));
        phi.push(p * qk);
    }
    phi
}

/// Exact distributions of the state seen by customers `1..=N+1` given the
/// assignment sequence `z` and the law `nu1` seen by the first customer.
///
/// Element `i` is the law seen by customer `i + 1`; the last element is the
/// state met by a hypothetical customer after the final one.
pub fn propagate_arrival_distributions(
    model: &PlatformModel,
    z: &[u8],
    nu1: &Distribution,
) -> Result<Vec<Distribution>> {
    if z.is_empty() {
        return invalid_arg("assignment sequence must be nonempty");
    }
    if nu1.len() != model.n_states() {
        return invalid_arg(format!(
            "initial distribution has {} states, model has {}",
            nu1.len(),
            model.n_states()
        ));
    }
    let d = interarrival_kernel(model);
    let m0 = seen_state_from(&d, model.p0());
    let m1 = seen_state_from(&d, model.p1());
    let mut out = Vec::with_capacity(z.len() + 1);
    out.push(nu1.clone());
    let mut cur = nu1.probs().to_vec();
    for &zi in z {
        let m = if zi == 0 { &m0 } else { &m1 };
        cur = step_row(m, &cur);
        out.push(Distribution::from_weights(cur.clone())?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{row_stochastic_defect, stationarity_residual};
    use approx::assert_abs_diff_eq;

    fn k2() -> PlatformModel {
        PlatformModel::new(
            2,
            1.0,
            vec![1.0, 2.0],
            vec![0.5, 0.25, 0.0],
            vec![0.6, 0.3, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn descent_kernel_small_cases() {
        let m = PlatformModel::new(1, 1.0, vec![1.0], vec![1.0, 0.0], vec![1.0, 0.0]).unwrap();
        let d = interarrival_kernel(&m);
        assert_eq!(d[(0, 0)], 1.0);
        assert_eq!(d[(0, 1)], 0.0);
        assert_abs_diff_eq!(d[(1, 1)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d[(1, 0)], 0.5, epsilon = 1e-15);
        assert!(row_stochastic_defect(&interarrival_kernel(&k2())) < 1e-15);
    }

    #[test]
    fn seen_state_small_cases() {
        let m = PlatformModel::new(1, 1.0, vec![1.0], vec![1.0, 0.0], vec![1.0, 0.0]).unwrap();
        let s = seen_state_kernel(&m, Arm::Control).unwrap();
        assert_abs_diff_eq!(s.matrix[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.matrix[(0, 1)], 0.5, epsilon = 1e-15);

        let zero = PlatformModel::new(2, 1.0, vec![1.0, 2.0], vec![0.0; 3], vec![0.0; 3]).unwrap();
        let s = seen_state_kernel(&zero, Arm::Control).unwrap();
        assert_eq!(s.matrix, interarrival_kernel(&zero));
    }

    #[test]
    fn pasta_fixed_points() {
        let m = k2();
        for arm in [Arm::Control, Arm::Treatment, Arm::Experiment(0.3)] {
            let s = seen_state_kernel(&m, arm).unwrap();
            let pi = steady_state(&m, arm).unwrap();
            assert!(row_stochastic_defect(&s.matrix) < 1e-12);
            assert!(stationarity_residual(&s.matrix, pi.probs()) < 1e-12);

            let aug = augmented_kernel(&m, arm).unwrap();
            assert!(row_stochastic_defect(&aug.matrix) < 1e-12);
            assert!(stationarity_residual(&aug.matrix, &aug.phi) < 1e-12);
        }
    }

    #[test]
    fn booked_row_equals_next_unbooked_row() {
        let m = k2();
        let aug = augmented_kernel(&m, Arm::Treatment).unwrap();
        for k in 0..m.k() {
            let a = aug.matrix.row(aug_index(k, 1));
            let b = aug.matrix.row(aug_index(k + 1, 0));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn experiment_needs_interior_allocation() {
        assert!(seen_state_kernel(&k2(), Arm::Experiment(0.0)).is_err());
        assert!(augmented_kernel(&k2(), Arm::Experiment(1.0)).is_err());
    }

    #[test]
    fn propagation_from_control_steady_state_is_stationary() {
        let m = k2();
        let pi0 = steady_state(&m, Arm::Control).unwrap();
        let nus = propagate_arrival_distributions(&m, &[0; 10], &pi0).unwrap();
        assert_eq!(nus.len(), 11);
        for nu in &nus {
            assert!(nu.max_abs_diff(&pi0) < 1e-14);
        }
        assert!(propagate_arrival_distributions(&m, &[], &pi0).is_err());
    }
}
