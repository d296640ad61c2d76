//! Regularized argmax oracles over occupation polytopes.
//!
//! Two projection families back the learner's policy updates: Euclidean
//! projection (the quadratic-regularizer dual-averaging step reduces to it)
//! and Kullback-Leibler projection (the two-step mirror-descent update).
//!
//! The Euclidean projection eliminates the equality constraints by an
//! orthonormal nullspace parameterization and runs a primal active-set loop
//! on the coordinate lower bounds. Dimensions are small, so exactness and
//! determinism are preferred over asymptotic speed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{nullspace_basis, pinv_solve};
use crate::lp;
use crate::occupancy::{OccupationMeasure, OccupationPolytope};

/// Stationarity tolerance required of a finished projection.
pub const KKT_TOL: f64 = 1e-8;

/// The regularizer of the dual-averaging argmax.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub enum Regularizer {
    /// `h(rho) = coeff * |rho|^2`, strongly convex w.r.t. the Euclidean norm.
    Quadratic { coeff: f64 },
    /// Negative entropy, strongly convex w.r.t. the L1 norm on the simplex.
    NegativeEntropy,
}

impl Regularizer {
    pub fn strong_convexity(&self) -> f64 {
        match self {
            Regularizer::Quadratic { coeff } => 2.0 * coeff,
            Regularizer::NegativeEntropy => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Regularizer::Quadratic { coeff } if *coeff <= 0.0 => {
                Err(Error::invalid("quadratic regularizer needs a positive coefficient"))
            }
            _ => Ok(()),
        }
    }
}

/// Residuals of the Karush-Kuhn-Tucker system at a projection output.
#[derive(Debug, Clone, Copy)]
pub struct KktInfo {
    /// Stationarity residual of the least-squares multiplier fit.
    pub stationarity: f64,
    /// Smallest bound multiplier (must not be materially negative).
    pub min_multiplier: f64,
    /// Constraint violation of the output point.
    pub primal: f64,
}

impl KktInfo {
    pub fn worst(&self) -> f64 {
        self.stationarity
            .max(-self.min_multiplier)
            .max(self.primal)
    }
}

/// Euclidean projection of `y` onto the polytope.
pub fn euclidean_project(polytope: &OccupationPolytope, y: &[f64]) -> Result<OccupationMeasure> {
    euclidean_project_diagnostics(polytope, y).map(|(m, _)| m)
}

/// Euclidean projection returning the KKT residuals of the solution.
pub fn euclidean_project_diagnostics(
    polytope: &OccupationPolytope,
    y: &[f64],
) -> Result<(OccupationMeasure, KktInfo)> {
    let dim = polytope.dim();
    if y.len() != dim {
        return Err(Error::invalid(format!(
            "projection input has length {}, expected {dim}",
            y.len()
        )));
    }
    let lower = polytope.lower_bound();
    let a = polytope.eq_matrix();

    let z = nullspace_basis(&a);
    let nz = z.ncols();

    // Feasible starting point from a phase-one vertex.
    let (std_a, std_b) = polytope.shifted_standard_form();
    let start = lp::feasible_vertex(&std_a, &std_b).map_err(|e| match e {
        Error::LpInfeasible { .. } => Error::EmptyShrunkPolytope {
            player: 0,
            delta: lower,
        },
        other => other,
    })?;
    let x0 = DVector::from_fn(dim, |j, _| start[j] + lower);

    let yv = DVector::from_column_slice(y);
    let w = z.transpose() * (&yv - &x0);

    let mut u = DVector::zeros(nz);
    let mut active: Vec<usize> = (0..dim)
        .filter(|&j| x0[j] - lower <= 1e-9)
        .collect();

    let max_updates = 10 * dim.max(4);
    let mut converged = false;
    for _ in 0..max_updates {
        // Minimize |u - w| subject to the active bounds held at the lower
        // bound: (Z u)_j = lower - x0_j for j in the working set.
        let (u_star, lambda) = solve_working_set(&z, &x0, &w, &active, lower)?;
        let p = &u_star - &u;
        let step_norm = p.amax();

        if step_norm <= 1e-12 {
            // At the working-set optimum; multipliers with the wrong sign
            // mark bounds that should release.
            let mut drop_idx = None;
            let mut worst = 1e-10;
            for (i, &l) in lambda.iter().enumerate() {
                if l > worst {
                    worst = l;
                    drop_idx = Some(i);
                }
            }
            match drop_idx {
                Some(i) => {
                    active.remove(i);
                }
                None => {
                    converged = true;
                    break;
                }
            }
            continue;
        }

        // Ratio test toward the candidate: stop at the first bound hit.
        let rho_cur = &x0 + &z * &u;
        let zp = &z * &p;
        let mut alpha = 1.0_f64;
        let mut blocker = None;
        for j in 0..dim {
            if active.contains(&j) {
                continue;
            }
            if zp[j] < -1e-13 {
                let room = lower - rho_cur[j];
                let a_j = (room / zp[j]).max(0.0);
                if a_j < alpha - 1e-15 {
                    alpha = a_j;
                    blocker = Some(j);
                }
            }
        }
        u += &p * alpha;
        if let Some(j) = blocker {
            active.push(j);
            active.sort_unstable();
        }
    }
    if !converged {
        return Err(Error::Numerical {
            routine: "active-set projection",
            residual: f64::NAN,
        });
    }

    let mut values: Vec<f64> = (&x0 + &z * &u).iter().cloned().collect();
    for v in &mut values {
        if (*v - lower).abs() <= 1e-12 {
            *v = lower;
        }
    }
    let kkt = kkt_residuals(polytope, y, &values);
    if kkt.worst() > KKT_TOL {
        return Err(Error::Numerical {
            routine: "projection KKT check",
            residual: kkt.worst(),
        });
    }
    let measure = polytope.measure(values).map_err(|_| Error::Numerical {
        routine: "projection feasibility check",
        residual: kkt.primal,
    })?;
    Ok((measure, kkt))
}

fn solve_working_set(
    z: &DMatrix<f64>,
    x0: &DVector<f64>,
    w: &DVector<f64>,
    active: &[usize],
    lower: f64,
) -> Result<(DVector<f64>, Vec<f64>)> {
    if active.is_empty() {
        return Ok((w.clone(), Vec::new()));
    }
    let nz = z.ncols();
    let g = DMatrix::from_fn(active.len(), nz, |r, c| z[(active[r], c)]);
    let h = DVector::from_fn(active.len(), |r, _| lower - x0[active[r]]);
    let ggt = &g * g.transpose();
    let rhs = &g * w - h;
    let lambda = pinv_solve(&ggt, &rhs);
    let u = w - g.transpose() * &lambda;
    Ok((u, lambda.iter().cloned().collect()))
}

/// Least-squares multiplier fit measuring how far `values` is from
/// satisfying the projection optimality system for target `y`.
pub fn kkt_residuals(polytope: &OccupationPolytope, y: &[f64], values: &[f64]) -> KktInfo {
    let dim = polytope.dim();
    let lower = polytope.lower_bound();
    let a = polytope.eq_matrix();
    let grad = DVector::from_fn(dim, |j, _| values[j] - y[j]);
    let active: Vec<usize> = (0..dim)
        .filter(|&j| values[j] - lower <= 1e-9)
        .collect();
    // Stack equality rows and active-bound directions, fit multipliers.
    let cols = a.nrows() + active.len();
    let mut basism = DMatrix::zeros(dim, cols);
    for r in 0..a.nrows() {
        for j in 0..dim {
            basism[(j, r)] = a[(r, j)];
        }
    }
    for (c, &j) in active.iter().enumerate() {
        basism[(j, a.nrows() + c)] = 1.0;
    }
    let svd = basism.clone().svd(true, true);
    let smax = svd.singular_values.max().max(1e-300);
    let mult = svd.solve(&grad, smax * 1e-12).expect("svd solve");
    let residual = (&basism * &mult - &grad).amax();
    let min_multiplier = active
        .iter()
        .enumerate()
        .map(|(c, _)| mult[a.nrows() + c])
        .fold(f64::INFINITY, f64::min);
    KktInfo {
        stationarity: residual,
        min_multiplier: if active.is_empty() {
            0.0
        } else {
            min_multiplier
        },
        primal: polytope.membership_residual(values),
    }
}

/// The dual-averaging argmax `argmax_rho <rho, score> - h(rho)` over the
/// polytope. For the quadratic regularizer this is the Euclidean projection
/// of `score / (2 coeff)`; the entropy variant is served by the KL path.
pub fn da_argmax(
    polytope: &OccupationPolytope,
    score: &[f64],
    reg: &Regularizer,
) -> Result<OccupationMeasure> {
    reg.validate()?;
    match reg {
        Regularizer::Quadratic { coeff } => {
            let scaled: Vec<f64> = score.iter().map(|&v| v / (2.0 * coeff)).collect();
            euclidean_project(polytope, &scaled)
        }
        Regularizer::NegativeEntropy => Err(Error::invalid(
            "entropy regularizer is handled by the KL update path",
        )),
    }
}

/// Multiplicative-weights step on the full simplex:
/// `rho'(s,a)` proportional to `rho(s,a) * exp(g(s,a))`, computed with
/// max-subtraction and normalized exactly.
pub fn kl_simplex_step(rho: &OccupationMeasure, g: &[f64]) -> Result<Vec<f64>> {
    let values = rho.values();
    if g.len() != values.len() {
        return Err(Error::invalid("gradient length does not match measure"));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("gradient must be finite"));
    }
    if values.iter().any(|&v| v <= 0.0) {
        return Err(Error::invalid("multiplicative step needs a strictly positive measure"));
    }
    let gmax = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = values
        .iter()
        .zip(g)
        .map(|(&r, &gi)| r * (gi - gmax).exp())
        .collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// I-projection of a strictly positive distribution onto the (unshrunk)
/// occupation polytope: `argmin_{rho in P} KL(rho, q)`.
///
/// Solved by damped Newton ascent on the dual of the exponential-family
/// representation: iterates have the form `q * exp(A~' lambda)` normalized,
/// where `A~` collects the independent flow rows. Stops when the flow
/// residual is at most 1e-9 and the dual objective is stationary to 1e-12
/// relative, within 10^4 iterations.
pub fn kl_project(polytope: &OccupationPolytope, q: &[f64]) -> Result<OccupationMeasure> {
    let dim = polytope.dim();
    if q.len() != dim {
        return Err(Error::invalid(format!(
            "KL projection input has length {}, expected {dim}",
            q.len()
        )));
    }
    if polytope.lower_bound() != 0.0 {
        return Err(Error::invalid(
            "KL projection targets the unshrunk polytope",
        ));
    }
    if q.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
        return Err(Error::invalid(
            "KL projection needs strictly positive finite inputs",
        ));
    }

    let n_states = polytope.n_states();
    // Independent flow rows: the full set sums to zero, so one is dropped;
    // normalization is enforced in closed form.
    let n_rows = n_states.saturating_sub(1);
    let eq = polytope.eq_matrix();
    let flow = DMatrix::from_fn(n_rows, dim, |r, c| eq[(r, c)]);

    let log_q: Vec<f64> = q.iter().map(|&v| v.ln()).collect();
    let mut lambda = DVector::zeros(n_rows);
    let mut rho = DVector::zeros(dim);

    let eval = |lambda: &DVector<f64>, rho: &mut DVector<f64>| -> f64 {
        // rho = normalize(q * exp(flow' lambda)); returns the dual objective
        // log sum before normalization (to be minimized).
        let expo = flow.transpose() * lambda;
        let mut m = f64::NEG_INFINITY;
        for j in 0..dim {
            m = m.max(log_q[j] + expo[j]);
        }
        let mut total = 0.0;
        for j in 0..dim {
            rho[j] = (log_q[j] + expo[j] - m).exp();
            total += rho[j];
        }
        for j in 0..dim {
            rho[j] /= total;
        }
        m + total.ln()
    };

    let mut f_cur = eval(&lambda, &mut rho);
    if n_rows == 0 {
        let values: Vec<f64> = rho.iter().cloned().collect();
        return polytope.measure(values);
    }

    let mut residual = f64::INFINITY;
    let mut converged = false;
    for _ in 0..10_000 {
        let grad = &flow * &rho;

        // Newton direction on the dual.
        let mut h = DMatrix::zeros(n_rows, n_rows);
        for j in 0..dim {
            let col = flow.column(j);
            let w = rho[j];
            for r in 0..n_rows {
                for c in 0..n_rows {
                    h[(r, c)] += w * col[r] * col[c];
                }
            }
        }
        let mean = &flow * &rho;
        h -= &mean * mean.transpose();
        let ridge = 1e-12 * (1.0 + h.trace() / n_rows as f64);
        for r in 0..n_rows {
            h[(r, r)] += ridge;
        }
        let step = match h.clone().lu().solve(&grad) {
            Some(s) => -s,
            None => -pinv_solve(&h, &grad),
        };

        let mut t = 1.0;
        let mut accepted = false;
        let mut f_next = f_cur;
        let mut rho_next = rho.clone();
        while t >= 1e-12 {
            let cand = &lambda + &step * t;
            let f = eval(&cand, &mut rho_next);
            if f <= f_cur {
                lambda = cand;
                f_next = f;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // Plain gradient step as a fallback descent direction.
            lambda -= &grad * 0.1;
            f_next = eval(&lambda, &mut rho_next);
        }
        rho.copy_from(&rho_next);

        let rel_change = (f_cur - f_next).abs() / f_cur.abs().max(1.0);
        f_cur = f_next;
        let grad_now = (&flow * &rho).amax();
        residual = grad_now;
        if grad_now <= 1e-9 && rel_change <= 1e-12 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical {
            routine: "KL projection dual ascent",
            residual,
        });
    }
    let values: Vec<f64> = rho.iter().cloned().collect();
    polytope.measure(values)
}

/// `KL(p, q) = sum p ln(p/q)` with the `0 ln 0 = 0` convention.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi > 0.0 { pi * (pi / qi).ln() } else { 0.0 })
        .sum()
}
