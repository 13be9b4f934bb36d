use crate::error::{Error, Result};

const EPS: f64 = 1e-11;

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
}

impl Tableau {
    fn rhs(&self) -> usize {
        self.rows[0].len() - 1
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let p = self.rows[r][col];
        self.rows[r].iter_mut().for_each(|v| *v /= p);
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i != r {
                let f = row[col];
                if f != 0.0 {
                    row.iter_mut().zip(&pivot_row).for_each(|(v, p)| *v -= f * p);
                }
            }
        }
        self.basis[r] = col;
    }

    /// Primal simplex with Bland's rule over columns `< allowed`.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> Result<()> {
        let rhs = self.rhs();
        for _ in 0..10_000 {
            let entering = (0..allowed).find(|&j| {
                if self.basis.contains(&j) {
                    return false;
                }
                let reduced = cost[j]
                    - self
                        .rows
                        .iter()
                        .zip(&self.basis)
                        .map(|(row, &bi)| cost[bi] * row[j])
                        .sum::<f64>();
                reduced < -EPS
            });
            let Some(j) = entering else { return Ok(()) };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                if row[j] > EPS {
                    let ratio = row[rhs] / row[j];
                    let better = match leave {
                        None => true,
                        Some((li, lr)) => {
                            ratio < lr - EPS || ((ratio - lr).abs() <= EPS && self.basis[i] < self.basis[li])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let (i, _) = leave.ok_or_else(|| Error::Degenerate("linear program is unbounded".into()))?;
            self.pivot(i, j);
        }
        Err(Error::Degenerate("simplex iteration limit".into()))
    }
}

/// `min cᵀx` subject to `A x = b`, `x ≥ 0`, by the two-phase dense simplex
/// method with Bland's anti-cycling rule. Intended for small problems used
/// as reference answers. Returns the optimal value and a minimizer.
pub fn solve_standard_lp(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Result<(f64, Vec<f64>)> {
    let m = a.len();
    let n = c.len();
    if m == 0 || b.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: b.len() });
    }
    if let Some(row) = a.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: row.len() });
    }
    // rows scaled so that b ≥ 0, then one artificial per row
    let rows = a
        .iter()
        .zip(b)
        .enumerate()
        .map(|(i, (row, &bi))| {
            let s = if bi < 0.0 { -1.0 } else { 1.0 };
            let mut r: Vec<f64> = row.iter().map(|v| s * v).collect();
            r.extend((0..m).map(|k| if k == i { 1.0 } else { 0.0 }));
            r.push(s * bi);
            r
        })
        .collect();
    let mut t = Tableau {
        rows,
        basis: (n..n + m).collect(),
    };
    let phase1: Vec<f64> = (0..n + m).map(|j| if j < n { 0.0 } else { 1.0 }).collect();
    t.optimize(&phase1, n + m)?;
    let rhs = t.rhs();
    let infeasibility: f64 = t
        .rows
        .iter()
        .zip(&t.basis)
        .filter(|(_, &bi)| bi >= n)
        .map(|(r, _)| r[rhs])
        .sum();
    if infeasibility > 1e-9 {
        return Err(Error::Degenerate("linear program is infeasible".into()));
    }
    // drive remaining artificials out of the basis; rows that cannot be
    // pivoted are redundant constraints
    let mut i = 0;
    while i < t.rows.len() {
        if t.basis[i] >= n {
            match (0..n).find(|&j| t.rows[i][j].abs() > EPS) {
                Some(j) => t.pivot(i, j),
                None => {
                    t.rows.remove(i);
                    t.basis.remove(i);
                    continue;
                }
            }
        }
        i += 1;
    }
    let mut cost = c.to_vec();
    cost.extend(std::iter::repeat_n(0.0, m));
    t.optimize(&cost, n)?;
    let mut x = vec![0.0; n];
    for (row, &bi) in t.rows.iter().zip(&t.basis) {
        x[bi] = row[rhs];
    }
    let value = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok((value, x))
}

/// Earth mover's distance between two uniform empirical measures on the
/// line (sizes may differ), as a transportation linear program.
pub(crate) fn transport_lp_w1(u: &[f64], v: &[f64]) -> Result<f64> {
    let (n, m) = (u.len(), v.len());
    let mut a = Vec::with_capacity(n + m);
    for i in 0..n {
        a.push((0..n * m).map(|k| if k / m == i { 1.0 } else { 0.0 }).collect());
    }
    for j in 0..m {
        a.push((0..n * m).map(|k| if k % m == j { 1.0 } else { 0.0 }).collect());
    }
    let mut b = vec![1.0 / n as f64; n];
    b.extend(std::iter::repeat_n(1.0 / m as f64, m));
    let c: Vec<f64> = (0..n * m).map(|k| (u[k / m] - v[k % m]).abs()).collect();
    Ok(solve_standard_lp(&a, &b, &c)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y s.t. x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18  →  36 at (2, 6)
        let a = vec![
            vec![1.0, 0.0, 1.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0, 1.0, 0.0],
            vec![3.0, 2.0, 0.0, 0.0, 1.0],
        ];
        let (v, x) = solve_standard_lp(&a, &[4.0, 12.0, 18.0], &[-3.0, -5.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((v + 36.0).abs() < 1e-12);
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        assert!(solve_standard_lp(&[vec![1.0, 1.0]], &[-1.0], &[1.0, 1.0]).is_err());
        assert!(solve_standard_lp(&[vec![1.0, -1.0]], &[1.0], &[0.0, -1.0]).is_err());
    }

    #[test]
    fn transport_small_cases() {
        assert!((transport_lp_w1(&[0.0], &[2.0]).unwrap() - 2.0).abs() < 1e-12);
        assert!((transport_lp_w1(&[0.0, 1.0], &[1.0, 0.0]).unwrap()).abs() < 1e-12);
        // half of the mass at 0 moves to 1
        assert!((transport_lp_w1(&[0.0, 0.0], &[0.0, 1.0]).unwrap() - 0.5).abs() < 1e-12);
        // unequal sizes: {0, 3} vs {1}
        assert!((transport_lp_w1(&[0.0, 3.0], &[1.0]).unwrap() - 1.5).abs() < 1e-12);
    }
}
