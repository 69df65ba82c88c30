//! Exact enumeration of the DM estimator over all assignment vectors, for
//! small experiments with an explicit joint law of outcomes.

use serde::Serialize;

use crate::error::{check_interior_allocation, invalid_arg, Result};
use crate::linalg::CompensatedSum;

pub const MAX_CUSTOMERS: usize = 6;
pub const MAX_SUPPORT: usize = 64;
const MASS_TOL: f64 = 1e-12;

/// Finite joint law of the outcome vector `(Y_1, ..., Y_N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointOutcomes {
    outcomes: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl JointOutcomes {
    pub fn new(outcomes: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        if outcomes.is_empty() {
            return invalid_arg("joint law has empty support");
        }
        if outcomes.len() > MAX_SUPPORT {
            return invalid_arg(format!(
                "support of {} points exceeds the limit of {MAX_SUPPORT}",
                outcomes.len()
            ));
        }
        if outcomes.len() != probs.len() {
            return invalid_arg("outcomes and probabilities differ in length");
        }
        let n = outcomes[0].len();
        if !(2..=MAX_CUSTOMERS).contains(&n) {
            return invalid_arg(format!("N must lie in 2..={MAX_CUSTOMERS}, got {n}"));
        }
        if outcomes.iter().any(|y| y.len() != n) {
            return invalid_arg("outcome vectors differ in length");
        }
        if outcomes.iter().flatten().any(|y| !y.is_finite()) {
            return invalid_arg("outcomes must be finite");
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return invalid_arg("probabilities must be nonnegative");
        }
        let total: f64 = probs.iter().copied().collect::<CompensatedSum>().value();
        if (total - 1.0).abs() > MASS_TOL {
            return invalid_arg(format!("probabilities sum to {total}, not 1"));
        }
        Ok(JointOutcomes { outcomes, probs })
    }

    pub fn n(&self) -> usize {
        self.outcomes[0].len()
    }

    pub fn support(&self) -> &[Vec<f64>] {
        &self.outcomes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Law of `(Y_σ(1), ..., Y_σ(N))` for a uniform random permutation σ,
    /// with each support point split into its `N!` rearrangements.
    pub fn permuted(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let perms = permutations(self.n());
        let w = 1.0 / perms.len() as f64;
        let mut ys = Vec::with_capacity(self.outcomes.len() * perms.len());
        let mut ps = Vec::with_capacity(ys.capacity());
        for (y, &p) in self.outcomes.iter().zip(&self.probs) {
            for s in &perms {
                ys.push(s.iter().map(|&i| y[i]).collect());
                ps.push(p * w);
            }
        }
        (ys, ps)
    }
}

/// Conditional moments of the DM estimator and its variance estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionalMoments {
    /// `P(N1 > 0, N0 > 0)`.
    pub prob_nonempty: f64,
    /// `P(N1 > 1, N0 > 1)`.
    pub prob_nondegenerate: f64,
    /// `E[GTE_hat | N1 > 0, N0 > 0]`.
    pub mean_gte_hat: f64,
    /// `E[Var_hat | N1 > 1, N0 > 1]`.
    pub mean_var_hat: f64,
    /// `Var(GTE_hat | N1 > 1, N0 > 1)`.
    pub var_gte_hat: f64,
}

impl ConditionalMoments {
    fn max_abs_diff(&self, o: &Self) -> f64 {
        [
            self.prob_nonempty - o.prob_nonempty,
            self.prob_nondegenerate - o.prob_nondegenerate,
            self.mean_gte_hat - o.mean_gte_hat,
            self.mean_var_hat - o.mean_var_hat,
            self.var_gte_hat - o.var_gte_hat,
        ]
        .iter()
        .fold(0.0, |m, d| m.max(d.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleReport {
    pub original: ConditionalMoments,
    pub permuted: ConditionalMoments,
    /// Largest absolute difference between the two sets of moments.
    pub max_discrepancy: f64,
}

/// Exact moments under Bernoulli(`a`) assignment independent of the outcomes.
pub fn exchangeable_oracle(joint: &JointOutcomes, a: f64) -> Result<OracleReport> {
    check_interior_allocation(a)?;
    let original = moments(joint.support(), joint.probs(), a);
    let (ys, ps) = joint.permuted();
    let permuted = moments(&ys, &ps, a);
    Ok(OracleReport {
        original,
        permuted,
        max_discrepancy: original.max_abs_diff(&permuted),
    })
}

struct Draw {
    weight: f64,
    gte_hat: f64,
    var_hat: Option<f64>,
}

fn estimator(y: &[f64], mask: u32) -> Option<(f64, Option<f64>)> {
    let n = y.len();
    let mut n1 = 0usize;
    let (mut s1, mut s0) = (0.0, 0.0);
    for (i, &yi) in y.iter().enumerate() {
        if mask >> i & 1 == 1 {
            n1 += 1;
            s1 += yi;
        } else {
            s0 += yi;
        }
    }
    let n0 = n - n1;
    if n1 == 0 || n0 == 0 {
        return None;
    }
    let (m1, m0) = (s1 / n1 as f64, s0 / n0 as f64);
    let g = m1 - m0;
    if n1 < 2 || n0 < 2 {
        return Some((g, None));
    }
    let (mut q1, mut q0) = (0.0, 0.0);
    for (i, &yi) in y.iter().enumerate() {
        if mask >> i & 1 == 1 {
            q1 += (yi - m1) * (yi - m1);
        } else {
            q0 += (yi - m0) * (yi - m0);
        }
    }
    let v = q1 / ((n1 * (n1 - 1)) as f64) + q0 / ((n0 * (n0 - 1)) as f64);
    Some((g, Some(v)))
}

fn moments(ys: &[Vec<f64>], ps: &[f64], a: f64) -> ConditionalMoments {
    let n = ys[0].len();
    let draws: Vec<Draw> = ys
        .iter()
        .zip(ps)
        .flat_map(|(y, &p)| {
            (0u32..1 << n).filter_map(move |mask| {
                let n1 = mask.count_ones() as i32;
                let w = p * a.powi(n1) * (1.0 - a).powi(n as i32 - n1);
                estimator(y, mask).map(|(g, v)| Draw {
                    weight: w,
                    gte_hat: g,
                    var_hat: v,
                })
            })
        })
        .collect();

    let sum = |f: &dyn Fn(&Draw) -> Option<f64>| -> f64 {
        draws
            .iter()
            .filter_map(f)
            .collect::<CompensatedSum>()
            .value()
    };
    let p_nonempty = sum(&|d| Some(d.weight));
    let p_nondeg = sum(&|d| d.var_hat.map(|_| d.weight));
    let mean_g = sum(&|d| Some(d.weight * d.gte_hat)) / p_nonempty;
    let mean_g_nd = sum(&|d| d.var_hat.map(|_| d.weight * d.gte_hat)) / p_nondeg;
    let mean_v = sum(&|d| d.var_hat.map(|v| d.weight * v)) / p_nondeg;
    let var_g = sum(&|d| {
        d.var_hat
            .map(|_| d.weight * (d.gte_hat - mean_g_nd) * (d.gte_hat - mean_g_nd))
    }) / p_nondeg;
    ConditionalMoments {
        prob_nonempty: p_nonempty,
        prob_nondegenerate: p_nondeg,
        mean_gte_hat: mean_g,
        mean_var_hat: mean_v,
        var_gte_hat: var_g,
    }
}

/// All permutations of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut cur: Vec<usize> = (0..n).collect();
    let mut out = vec![cur.clone()];
    loop {
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).unwrap();
        cur.swap(i - 1, j);
        cur[i..].reverse();
        out.push(cur.clone());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn permutation_count() {
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(4).len(), 24);
        assert_eq!(permutations(3)[5], vec![2, 1, 0]);
    }

    #[test]
    fn constant_outcomes() {
        let j = JointOutcomes::new(vec![vec![0.7; 4]], vec![1.0]).unwrap();
        let r = exchangeable_oracle(&j, 0.5).unwrap();
        assert_eq!(r.original.mean_gte_hat, 0.0);
        assert_eq!(r.original.mean_var_hat, 0.0);
        assert_eq!(r.original.var_gte_hat, 0.0);
    }

    #[test]
    fn nondegenerate_probability() {
        // N = 4, a = 1/2: both arms of size 2 only, 6 of 16 assignments
        let j = JointOutcomes::new(vec![vec![0.0, 1.0, 0.0, 1.0]], vec![1.0]).unwrap();
        let r = exchangeable_oracle(&j, 0.5).unwrap();
        assert_abs_diff_eq!(r.original.prob_nondegenerate, 6.0 / 16.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.original.prob_nonempty, 14.0 / 16.0, epsilon = 1e-15);
    }

    #[test]
    fn iid_outcomes_identity() {
        // i.i.d. Bernoulli(0.3) outcomes on N = 4
        let mut ys = Vec::new();
        let mut ps = Vec::new();
        for m in 0u32..16 {
            ys.push((0..4).map(|i| (m >> i & 1) as f64).collect());
            let k = m.count_ones() as i32;
            ps.push(0.3f64.powi(k) * 0.7f64.powi(4 - k));
        }
        let j = JointOutcomes::new(ys, ps).unwrap();
        let r = exchangeable_oracle(&j, 0.3).unwrap();
        assert_abs_diff_eq!(r.original.mean_gte_hat, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            r.original.mean_var_hat,
            r.original.var_gte_hat,
            epsilon = 1e-12
        );
        assert!(r.max_discrepancy < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(JointOutcomes::new(vec![vec![0.0; 7]], vec![1.0]).is_err());
        assert!(JointOutcomes::new(vec![vec![0.0; 3]], vec![0.9]).is_err());
        assert!(JointOutcomes::new(vec![vec![0.0; 3]; 65], vec![1.0 / 65.0; 65]).is_err());
        let j = JointOutcomes::new(vec![vec![0.0; 3]], vec![1.0]).unwrap();
        assert!(exchangeable_oracle(&j, 1.0).is_err());
    }
}
