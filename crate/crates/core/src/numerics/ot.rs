//! Exact optimal transport between equal-size empirical measures.
//!
//! With uniform marginals `1/n` on both sides the balanced-plan polytope is
//! the (scaled) Birkhoff polytope, whose vertices are permutation matrices, so
//! an exact assignment solver returns an optimal plan.

use crate::error::{Error, Result};

use super::gaussian::Matrix;

/// Optimal balanced plan: mass `1/n` on each pair `(i, assignment[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub assignment: Vec<usize>,
    /// `Σ_ij π_ij c_ij` under the cost the plan was solved for.
    pub cost_total: f64,
}

impl TransportPlan {
    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn mass(&self, i: usize, j: usize) -> f64 {
        if self.assignment[i] == j {
            1.0 / self.n() as f64
        } else {
            0.0
        }
    }

    /// Dense `n × n` plan matrix.
    pub fn plan(&self) -> Matrix {
        let n = self.n();
        let mut m = Matrix::zeros(n, n);
        for (i, &j) in self.assignment.iter().enumerate() {
            m[(i, j)] = 1.0 / n as f64;
        }
        m
    }
}

/// Solves `min_{π ∈ Π} Σ π_ij c_ij` over balanced plans with uniform marginals.
pub fn solve_balanced_ot(cost: &Matrix) -> Result<TransportPlan> {
    let n = cost.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("transport cost matrix"));
    }
    if cost.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: cost.ncols(),
        });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("non-finite transport cost".into()));
    }
    let assignment = hungarian(n, |i, j| cost[(i, j)]);
    let cost_total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[(i, j)])
        .sum::<f64>()
        / n as f64;
    Ok(TransportPlan {
        assignment,
        cost_total,
    })
}

/// Shortest-augmenting-path Hungarian method with row/column potentials,
/// O(n³). Returns the column assigned to each row.
fn hungarian(n: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // p[j]: row matched to column j (1-based, 0 = free)
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Exact W1 between two equal-size empirical measures on the line:
/// `(1/n) Σ_k |u_(k) - v_(k)|` over sorted samples.
pub fn wasserstein1_1d(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.is_empty() || v.is_empty() {
        return Err(Error::EmptyInput("wasserstein samples"));
    }
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    if u.iter().chain(v).any(|x| x.is_nan()) {
        return Err(Error::InvalidArgument("NaN sample".into()));
    }
    let mut a = u.to_vec();
    let mut b = v.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_and_antidiagonal() {
        let c = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let p = solve_balanced_ot(&c).unwrap();
        assert_eq!(p.assignment, vec![0, 1]);
        assert_eq!(p.cost_total, 0.0);
        assert_eq!(p.plan(), Matrix::identity(2, 2) * 0.5);

        let c = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let p = solve_balanced_ot(&c).unwrap();
        assert_eq!(p.assignment, vec![1, 0]);
        assert_eq!(p.cost_total, 0.0);
    }

    #[test]
    fn single_point() {
        let p = solve_balanced_ot(&Matrix::from_element(1, 1, 3.5)).unwrap();
        assert_eq!(p.assignment, vec![0]);
        assert_eq!(p.cost_total, 3.5);
        assert_eq!(p.mass(0, 0), 1.0);
    }

    #[test]
    fn malformed_input() {
        assert!(solve_balanced_ot(&Matrix::zeros(0, 0)).is_err());
        assert!(solve_balanced_ot(&Matrix::zeros(2, 3)).is_err());
        assert!(solve_balanced_ot(&Matrix::from_element(2, 2, f64::NAN)).is_err());
    }

    #[test]
    fn w1_examples() {
        assert_eq!(wasserstein1_1d(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(wasserstein1_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(wasserstein1_1d(&[0.0, 2.0], &[1.0, 3.0]).unwrap(), 1.0);
        assert_eq!(wasserstein1_1d(&[2.0, 0.0], &[3.0, 1.0]).unwrap(), 1.0);
        assert!(wasserstein1_1d(&[], &[]).is_err());
        assert!(wasserstein1_1d(&[1.0], &[1.0, 2.0]).is_err());
    }
}
