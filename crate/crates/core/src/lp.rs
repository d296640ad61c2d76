//! Dense two-phase revised simplex for small standard-form linear programs.
//!
//! Solves `min c'x  s.t.  Ax = b, x >= 0` with Bland's anti-cycling rule,
//! refactoring the basis at every iteration. Problem sizes here are tens of
//! variables, so determinism and exact vertex solutions matter more than
//! speed. Optimality is certified by the dual solution of the final basis.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;
const MAX_ITERS: usize = 50_000;

/// An optimal basic solution together with its duality certificate.
#[derive(Debug, Clone)]
pub struct LpSolution {
    /// Primal optimizer (a vertex of the feasible set).
    pub x: Vec<f64>,
    /// Objective value `c'x`.
    pub value: f64,
    /// Dual multipliers of the equality rows.
    pub duals: Vec<f64>,
    /// Indices of the optimal basis.
    pub basis: Vec<usize>,
    /// `|c'x - b'y|`, zero up to roundoff at an optimal basis.
    pub gap: f64,
    /// Most negative reduced cost, clipped at zero (dual feasibility slack).
    pub dual_infeasibility: f64,
    /// `max |Ax - b|`.
    pub primal_residual: f64,
}

struct Program {
    a: DMatrix<f64>,
    b: DVector<f64>,
    basis: Vec<usize>,
}

impl Program {
    fn m(&self) -> usize {
        self.a.nrows()
    }

    fn n(&self) -> usize {
        self.a.ncols()
    }

    fn basis_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.m(), self.m(), |r, c| self.a[(r, self.basis[c])])
    }

    fn solve_basis(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        self.basis_matrix()
            .lu()
            .solve(rhs)
            .ok_or(Error::Numerical {
                routine: "simplex basis solve",
                residual: f64::NAN,
            })
    }

    fn solve_basis_transpose(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        self.basis_matrix()
            .transpose()
            .lu()
            .solve(rhs)
            .ok_or(Error::Numerical {
                routine: "simplex basis transpose solve",
                residual: f64::NAN,
            })
    }

    /// Runs simplex iterations for the cost vector `c` starting from the
    /// current basis, which must be feasible.
    fn optimize(&mut self, c: &DVector<f64>) -> Result<()> {
        for _ in 0..MAX_ITERS {
            let xb = self.solve_basis(&self.b)?;
            let cb = DVector::from_fn(self.m(), |r, _| c[self.basis[r]]);
            let y = self.solve_basis_transpose(&cb)?;

            // Bland: entering variable is the smallest index with a
            // negative reduced cost.
            let mut entering = None;
            for j in 0..self.n() {
                if self.basis.contains(&j) {
                    continue;
                }
                let col = self.a.column(j);
                let reduced = c[j] - y.dot(&col.into_owned());
                if reduced < -TOL {
                    entering = Some(j);
                    break;
                }
            }
            let Some(j) = entering else {
                return Ok(());
            };

            let d = self.solve_basis(&self.a.column(j).into_owned())?;
            // Ratio test; ties resolved toward the smallest basis variable
            // index (Bland).
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m() {
                if d[r] > TOL {
                    let ratio = xb[r].max(0.0) / d[r];
                    let better = match leave {
                        None => true,
                        Some((lr, lratio)) => {
                            ratio < lratio - TOL
                                || (ratio < lratio + TOL && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((r, _)) = leave else {
                return Err(Error::Numerical {
                    routine: "simplex (unbounded direction)",
                    residual: f64::INFINITY,
                });
            };
            self.basis[r] = j;
        }
        Err(Error::Numerical {
            routine: "simplex iteration cap",
            residual: f64::NAN,
        })
    }
}

fn phase_one(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(Program, f64)> {
    let m = a.nrows();
    let n = a.ncols();
    // Flip rows so the right-hand side is nonnegative, then append an
    // artificial identity block as the starting basis.
    let mut ext = DMatrix::zeros(m, n + m);
    let mut rhs = DVector::zeros(m);
    for r in 0..m {
        let sign = if b[r] < 0.0 { -1.0 } else { 1.0 };
        rhs[r] = sign * b[r];
        for c in 0..n {
            ext[(r, c)] = sign * a[(r, c)];
        }
        ext[(r, n + r)] = 1.0;
    }
    let mut prog = Program {
        a: ext,
        b: rhs,
        basis: (n..n + m).collect(),
    };
    let cost = DVector::from_fn(n + m, |j, _| if j >= n { 1.0 } else { 0.0 });
    prog.optimize(&cost)?;
    let xb = prog.solve_basis(&prog.b)?;
    let infeasibility: f64 = prog
        .basis
        .iter()
        .zip(xb.iter())
        .filter(|(&j, _)| j >= n)
        .map(|(_, &v)| v.max(0.0))
        .sum();
    Ok((prog, infeasibility))
}

/// Removes artificial variables from the phase-one basis, dropping redundant
/// rows that cannot be pivoted onto an original column.
fn drive_out_artificials(prog: Program, n: usize) -> Result<Program> {
    let mut a = prog.a;
    let mut b = prog.b;
    let mut basis = prog.basis;

    loop {
        let Some(pos) = basis.iter().position(|&j| j >= n) else {
            break;
        };
        // Row direction of the artificial in the current basis.
        let bmat = DMatrix::from_fn(a.nrows(), a.nrows(), |r, c| a[(r, basis[c])]);
        let lu = bmat.lu();
        let mut replaced = false;
        for j in 0..n {
            if basis.contains(&j) {
                continue;
            }
            let d = lu.solve(&a.column(j).into_owned()).ok_or(Error::Numerical {
                routine: "simplex basis solve",
                residual: f64::NAN,
            })?;
            if d[pos].abs() > 1e-8 {
                basis[pos] = j;
                replaced = true;
                break;
            }
        }
        if !replaced {
            // The row is a linear combination of the others: drop it.
            a = a.remove_row(pos);
            b = b.remove_row(pos);
            basis.remove(pos);
        }
    }
    // Strip artificial columns.
    let a = DMatrix::from_fn(a.nrows(), n, |r, c| a[(r, c)]);
    Ok(Program { a, b, basis })
}

/// Solves `min c'x  s.t.  Ax = b, x >= 0`.
pub fn solve_min(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> Result<LpSolution> {
    let n = a.ncols();
    if b.len() != a.nrows() || c.len() != n {
        return Err(Error::invalid("LP dimensions do not match"));
    }
    let (prog, infeasibility) = phase_one(a, b)?;
    if infeasibility > FEAS_TOL {
        return Err(Error::LpInfeasible { infeasibility });
    }
    let mut prog = drive_out_artificials(prog, n)?;
    prog.optimize(c)?;

    let xb = prog.solve_basis(&prog.b)?;
    let cb = DVector::from_fn(prog.m(), |r, _| c[prog.basis[r]]);
    let y = prog.solve_basis_transpose(&cb)?;

    let mut x = vec![0.0; n];
    for (r, &j) in prog.basis.iter().enumerate() {
        x[j] = xb[r].max(0.0);
    }
    let value = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum::<f64>();

    let mut dual_infeasibility = 0.0_f64;
    for j in 0..n {
        let reduced = c[j] - y.dot(&prog.a.column(j).into_owned());
        dual_infeasibility = dual_infeasibility.max(-reduced);
    }
    let dual_value = y.dot(&prog.b);
    let xv = DVector::from_column_slice(&x);
    let primal_residual = (&prog.a * &xv - &prog.b).abs().max();

    // Duals are reported against the reduced (non-redundant) row system;
    // pad removed rows with zeros by index bookkeeping is unnecessary for
    // callers, which only consume the certificate.
    Ok(LpSolution {
        x,
        value,
        duals: y.iter().cloned().collect(),
        basis: prog.basis.clone(),
        gap: (value - dual_value).abs(),
        dual_infeasibility: dual_infeasibility.max(0.0),
        primal_residual,
    })
}

/// Phase-one feasibility of `{x : Ax = b, x >= 0}`.
pub fn is_feasible(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<bool> {
    let (_, infeasibility) = phase_one(a, b)?;
    Ok(infeasibility <= FEAS_TOL)
}

/// A feasible vertex of `{x : Ax = b, x >= 0}`, if one exists.
pub fn feasible_vertex(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Vec<f64>> {
    let zero = DVector::zeros(a.ncols());
    solve_min(a, b, &zero).map(|s| s.x)
}
