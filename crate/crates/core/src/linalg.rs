//! Dense linear-algebra helpers shared by the asymptotic and Cramér-Rao code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition numbers above this trigger a warning on stderr.
pub const CONDITION_WARNING: f64 = 1e12;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

/// Result of a dense solve together with diagnostics.
#[derive(Debug, Clone)]
pub struct Solution {
    pub x: DVector<f64>,
    /// Max-norm of `A x - b`.
    pub residual: f64,
    /// Estimated 1-norm condition number of `A`.
    pub condition: f64,
}

/// Solves `A x = b` with a partially pivoted LU factorization and estimates
/// the condition number of `A` (Hager's 1-norm estimator).
pub fn solve_dense(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Solution> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: b.len(),
        });
    }
    let lu = a.clone().lu();
    let x = lu
        .solve(b)
        .ok_or_else(|| Error::Singular(format!("{n}x{n} system has a zero pivot")))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(format!(
            "{n}x{n} system produced non-finite solution"
        )));
    }
    let residual = (a * &x - b).amax();
    let inv_norm = estimate_inverse_one_norm(a, &lu);
    let condition = one_norm(a) * inv_norm;
    if condition > CONDITION_WARNING {
        eprintln!("warning: ill-conditioned {n}x{n} solve (estimated condition {condition:.3e})");
    }
    Ok(Solution {
        x,
        residual,
        condition,
    })
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Hager/Higham estimate of `||A^{-1}||_1`.
fn estimate_inverse_one_norm(
    a: &DMatrix<f64>,
    lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
) -> f64 {
    let n = a.nrows();
    let lu_t = a.transpose().lu();
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut estimate = 0.0;
    for _ in 0..5 {
        let Some(y) = lu.solve(&x) else {
            return f64::INFINITY;
        };
        let norm_y: f64 = y.iter().map(|v| v.abs()).sum();
        if norm_y <= estimate {
            break;
        }
        estimate = norm_y;
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let Some(z) = lu_t.solve(&xi) else {
            return f64::INFINITY;
        };
        let (j, zmax) = z.iamax_full_abs();
        if zmax <= z.dot(&x) {
            break;
        }
        x.fill(0.0);
        x[j] = 1.0;
    }
    estimate
}

trait AbsMaxIndex {
    fn iamax_full_abs(&self) -> (usize, f64);
}

impl AbsMaxIndex for DVector<f64> {
    fn iamax_full_abs(&self) -> (usize, f64) {
        self.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| {
                if v.abs() > bv {
                    (i, v.abs())
                } else {
                    (bi, bv)
                }
            })
    }
}

/// Max-norm of `v P - v` for a row vector `v`.
pub fn stationarity_residual(kernel: &DMatrix<f64>, v: &[f64]) -> f64 {
    let row = DVector::from_column_slice(v).transpose() * kernel;
    row.iter()
        .zip(v)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Largest deviation of a row sum from one.
pub fn row_stochastic_defect(kernel: &DMatrix<f64>) -> f64 {
    kernel
        .row_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut terms = vec![1e16];
        terms.extend(std::iter::repeat(1.0).take(1000));
        terms.push(-1e16);
        assert_eq!(compensated_sum(terms), 1000.0);
    }

    #[test]
    fn solve_reports_residual_and_condition() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 2.0, 3.0]);
        let b = DVector::from_column_slice(&[1.0, 2.0]);
        let sol = solve_dense(&a, &b).unwrap();
        assert_abs_diff_eq!(sol.x[0], 0.1, epsilon = 1e-14);
        assert_abs_diff_eq!(sol.x[1], 0.6, epsilon = 1e-14);
        assert!(sol.residual < 1e-14);
        // exact ||A||_1 ||A^-1||_1 = 6 * 0.5
        assert_abs_diff_eq!(sol.condition, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn singular_system_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DVector::from_column_slice(&[1.0, 1.0]);
        assert!(matches!(solve_dense(&a, &b), Err(Error::Singular(_))));
    }
}
