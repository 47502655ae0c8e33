//! Dense two-phase simplex for small linear programs.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::Lu;

/// Pivot and feasibility tolerance.
pub const TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Values of the original variables (empty unless optimal).
    pub x: Vec<f64>,
    pub objective: f64,
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// `rows x (cols + 1)`, last column is the right-hand side.
    t: Vec<f64>,
    /// Reduced costs `c_j − c_B·B⁻¹A_j`, last entry `−z`.
    obj: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * (self.cols + 1) + c]
    }

    fn pivot(&mut self, r: usize, e: usize) {
        let w = self.cols + 1;
        let p = self.t[r * w + e];
        for c in 0..w {
            self.t[r * w + c] /= p;
        }
        let prow: Vec<f64> = self.t[r * w..(r + 1) * w].to_vec();
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.t[i * w + e];
            if f != 0.0 {
                for c in 0..w {
                    self.t[i * w + c] -= f * prow[c];
                }
            }
        }
        let f = self.obj[e];
        if f != 0.0 {
            for c in 0..w {
                self.obj[c] -= f * prow[c];
            }
        }
        self.basis[r] = e;
    }

    fn set_objective(&mut self, c: &[f64]) {
        let w = self.cols + 1;
        self.obj = vec![0.0; w];
        self.obj[..self.cols].copy_from_slice(c);
        for r in 0..self.rows {
            let cb = c[self.basis[r]];
            if cb != 0.0 {
                for j in 0..w {
                    self.obj[j] -= cb * self.t[r * w + j];
                }
            }
        }
    }

    /// Bland's rule iterations; returns false when unbounded.
    fn optimize(&mut self, allowed: &[bool]) -> bool {
        loop {
            let Some(e) = (0..self.cols).find(|&j| allowed[j] && self.obj[j] > TOL) else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, e);
                if a > TOL {
                    let ratio = self.at(r, self.cols) / a;
                    let better = match leave {
                        None => true,
                        Some((lr, best)) => {
                            ratio < best - TOL || (ratio <= best + TOL && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, e),
                None => return false,
            }
        }
    }
}

/// Maximizes `c·x` subject to `a_eq x = b_eq`, `a_ub x ≤ b_ub`, `x ≥ 0`.
///
/// After the simplex finds an optimal basis, the basic variables are
/// re-solved from the original constraint matrix for accuracy.
pub fn maximize(c: &[f64], a_eq: &[Vec<f64>], b_eq: &[f64], a_ub: &[Vec<f64>], b_ub: &[f64]) -> LpSolution {
    let n = c.len();
    let m_eq = a_eq.len();
    let m_ub = a_ub.len();
    let rows = m_eq + m_ub;
    // columns: originals, one slack per inequality, one artificial per row
    let slack0 = n;
    let art0 = n + m_ub;
    let cols = art0 + rows;
    let w = cols + 1;
    let mut full = vec![0.0; rows * w];
    for r in 0..rows {
        let (coeffs, rhs) = if r < m_eq { (&a_eq[r], b_eq[r]) } else { (&a_ub[r - m_eq], b_ub[r - m_eq]) };
        let sign = if rhs < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            full[r * w + j] = sign * coeffs[j];
        }
        if r >= m_eq {
            full[r * w + slack0 + (r - m_eq)] = sign;
        }
        full[r * w + art0 + r] = 1.0;
        full[r * w + cols] = sign * rhs;
    }
    let original = full.clone();
    let mut tab = Tableau { rows, cols, t: full, obj: Vec::new(), basis: (art0..art0 + rows).collect() };

    let mut phase1 = vec![0.0; cols];
    phase1[art0..].iter_mut().for_each(|v| *v = -1.0);
    tab.set_objective(&phase1);
    let all = vec![true; cols];
    tab.optimize(&all);
    let scale: f64 = 1.0 + (0..rows).map(|r| original[r * w + cols].abs()).sum::<f64>();
    if tab.obj[cols] > TOL * scale {
        return LpSolution { status: LpStatus::Infeasible, x: Vec::new(), objective: f64::NAN };
    }
    for r in 0..rows {
        if tab.basis[r] >= art0 {
            if let Some(j) = (0..art0).find(|&j| tab.at(r, j).abs() > TOL) {
                tab.pivot(r, j);
            }
        }
    }

    let mut phase2 = vec![0.0; cols];
    phase2[..n].copy_from_slice(c);
    tab.set_objective(&phase2);
    let mut allowed = vec![true; cols];
    allowed[art0..].iter_mut().for_each(|v| *v = false);
    if !tab.optimize(&allowed) {
        return LpSolution { status: LpStatus::Unbounded, x: Vec::new(), objective: f64::INFINITY };
    }

    let mut values = vec![0.0; cols];
    for r in 0..rows {
        values[tab.basis[r]] = tab.at(r, cols);
    }
    let mut basis_matrix = vec![0.0; rows * rows];
    for r in 0..rows {
        for (k, &j) in tab.basis.iter().enumerate() {
            basis_matrix[r * rows + k] = original[r * w + j];
        }
    }
    if let Ok(lu) = Lu::factor(rows, basis_matrix) {
        let rhs: Vec<f64> = (0..rows).map(|r| original[r * w + cols]).collect();
        let xb = lu.solve(&rhs);
        if xb.iter().all(|v| v.is_finite()) {
            for (k, &j) in tab.basis.iter().enumerate() {
                values[j] = xb[k];
            }
        }
    }
    let x: Vec<f64> = values[..n].iter().map(|&v| if v < 0.0 && v > -TOL { 0.0 } else { v }).collect();
    let objective = x.iter().zip(c).map(|(a, b)| a * b).sum();
    LpSolution { status: LpStatus::Optimal, x, objective }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y st x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let s = maximize(
            &[3.0, 5.0],
            &[],
            &[],
            &[vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 2.0]],
            &[4.0, 12.0, 18.0],
        );
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 36.0).abs() < 1e-12);
        assert!((s.x[0] - 2.0).abs() < 1e-12 && (s.x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn equality_and_infeasible() {
        let s = maximize(&[1.0, 1.0], &[vec![1.0, 1.0]], &[1.0], &[vec![1.0, 0.0]], &[0.25]);
        assert!((s.objective - 1.0).abs() < 1e-12);
        let bad = maximize(&[1.0], &[vec![1.0]], &[1.0], &[vec![1.0]], &[0.5]);
        assert_eq!(bad.status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded() {
        let s = maximize(&[1.0, 0.0], &[], &[], &[vec![-1.0, 1.0]], &[1.0]);
        assert_eq!(s.status, LpStatus::Unbounded);
    }

    #[test]
    fn negative_rhs() {
        // x >= 2 written as -x <= -2, max -x -> x = 2
        let s = maximize(&[-1.0], &[], &[], &[vec![-1.0]], &[-2.0]);
        assert!((s.x[0] - 2.0).abs() < 1e-12);
    }
}
