//! Occupation-measure machinery.
//!
//! A stationary policy for one player induces a long-run fraction of time
//! spent on each `(state, action)` pair: its occupation measure. The set of
//! feasible occupation measures is a polytope cut out by flow-balance and
//! normalization constraints; shrinking it by a coordinatewise lower bound
//! forces exploratory policies. This module builds those polytopes, converts
//! between policies and occupation measures, and estimates mixing times.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{generate, PlayerChain, Policy};
use crate::lp;

/// Tolerance on the normalization of an occupation measure.
pub const OCC_SUM_TOL: f64 = 1e-9;
/// Tolerance on flow-balance residuals.
pub const FLOW_TOL: f64 = 1e-8;
/// Residual required of stationary distributions.
pub const STATIONARY_TOL: f64 = 1e-10;
/// Largest state count solved directly; larger kernels use power iteration.
const DIRECT_SOLVE_LIMIT: usize = 64;

/// A probability vector over one player's `(s, a)` pairs satisfying the
/// flow constraints, stored row-major with index `s * n_actions + a`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OccupationMeasure {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl OccupationMeasure {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    /// State marginal `nu(s) = sum_a rho(s, a)`.
    pub fn state_marginal(&self, s: usize) -> f64 {
        self.values[s * self.n_actions..(s + 1) * self.n_actions]
            .iter()
            .sum()
    }

    pub(crate) fn from_parts_unchecked(
        n_states: usize,
        n_actions: usize,
        values: Vec<f64>,
    ) -> Self {
        OccupationMeasure {
            n_states,
            n_actions,
            values,
        }
    }
}

/// The constraint system of one player's feasible occupation measures:
/// one flow-balance row per state, one normalization row, and a coordinate
/// lower bound (zero when unshrunk).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OccupationPolytope {
    n_states: usize,
    n_actions: usize,
    /// Equality rows, `(n_states + 1) x (n_states * n_actions)`.
    eq: Vec<f64>,
    /// Right-hand side: zeros for flow rows, one for normalization.
    rhs: Vec<f64>,
    /// Coordinatewise lower bound.
    lower: f64,
}

impl OccupationPolytope {
    /// Builds the unshrunk polytope of a chain: for every state `s'` the
    /// flow row `sum_{s,a} (P(s'|s,a) - 1{s = s'}) rho(s,a) = 0`, plus
    /// `sum rho = 1`.
    pub fn from_chain(chain: &PlayerChain) -> Self {
        let n_states = chain.n_states();
        let n_actions = chain.n_actions();
        let dim = n_states * n_actions;
        let mut eq = vec![0.0; (n_states + 1) * dim];
        for next in 0..n_states {
            for s in 0..n_states {
                for a in 0..n_actions {
                    let mut coeff = chain.prob(next, s, a);
                    if s == next {
                        coeff -= 1.0;
                    }
                    eq[next * dim + s * n_actions + a] = coeff;
                }
            }
        }
        for j in 0..dim {
            eq[n_states * dim + j] = 1.0;
        }
        let mut rhs = vec![0.0; n_states + 1];
        rhs[n_states] = 1.0;
        OccupationPolytope {
            n_states,
            n_actions,
            eq,
            rhs,
            lower: 0.0,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn dim(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower
    }

    pub fn n_eq_rows(&self) -> usize {
        self.n_states + 1
    }

    /// Equality matrix as a dense `(n_states + 1) x dim` matrix.
    pub fn eq_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_eq_rows(), self.dim(), &self.eq)
    }

    pub fn eq_rhs(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.rhs)
    }

    /// The same equalities with the lower bound raised to `delta`.
    /// Feasibility of the shrunk set is verified by a phase-one linear
    /// program; an empty shrunk polytope is an error naming the player.
    pub fn shrink(&self, delta: f64) -> Result<Self> {
        self.shrink_for_player(delta, 0)
    }

    /// [`OccupationPolytope::shrink`] with the player index used in errors.
    pub fn shrink_for_player(&self, delta: f64, player: usize) -> Result<Self> {
        if delta < 0.0 {
            return Err(Error::invalid("lower bound must be nonnegative"));
        }
        let shrunk = OccupationPolytope {
            lower: delta,
            ..self.clone()
        };
        if delta == 0.0 {
            return Ok(shrunk);
        }
        let (a, b) = shrunk.shifted_standard_form();
        if !lp::is_feasible(&a, &b)? {
            return Err(Error::EmptyShrunkPolytope { player, delta });
        }
        Ok(shrunk)
    }

    /// Standard form `{x >= 0 : Ax = b}` for the shifted variable
    /// `x = rho - lower`.
    pub(crate) fn shifted_standard_form(&self) -> (DMatrix<f64>, DVector<f64>) {
        let a = self.eq_matrix();
        let ones = DVector::from_element(self.dim(), self.lower);
        let b = self.eq_rhs() - &a * ones;
        (a, b)
    }

    /// Largest violation across equality rows and the lower bound.
    pub fn membership_residual(&self, values: &[f64]) -> f64 {
        let dim = self.dim();
        assert_eq!(values.len(), dim);
        let mut worst = 0.0_f64;
        for r in 0..self.n_eq_rows() {
            let lhs: f64 = (0..dim).map(|j| self.eq[r * dim + j] * values[j]).sum();
            worst = worst.max((lhs - self.rhs[r]).abs());
        }
        for &v in values {
            worst = worst.max(self.lower - v);
        }
        worst
    }

    /// Validates and wraps a raw vector as an occupation measure.
    pub fn measure(&self, values: Vec<f64>) -> Result<OccupationMeasure> {
        if values.len() != self.dim() {
            return Err(Error::invalid(format!(
                "occupation vector has length {}, expected {}",
                values.len(),
                self.dim()
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > OCC_SUM_TOL {
            return Err(Error::invalid(format!(
                "occupation vector sums to {sum}, expected 1"
            )));
        }
        if values.iter().any(|&v| v < self.lower - OCC_SUM_TOL) {
            return Err(Error::invalid(format!(
                "occupation vector violates the lower bound {}",
                self.lower
            )));
        }
        let residual = self.membership_residual(&values);
        if residual > FLOW_TOL {
            return Err(Error::invalid(format!(
                "flow-balance residual {residual} exceeds {FLOW_TOL}"
            )));
        }
        Ok(OccupationMeasure {
            n_states: self.n_states,
            n_actions: self.n_actions,
            values,
        })
    }

    /// A maximal linearly independent subsystem of the equality rows,
    /// via singular value decomposition.
    pub(crate) fn reduced_rows(&self) -> (DMatrix<f64>, DVector<f64>) {
        let a = self.eq_matrix();
        let b = self.eq_rhs();
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let tol = smax * 1e-12 * (self.dim().max(self.n_eq_rows())) as f64;
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        let u = svd.u.as_ref().expect("svd with u");
        let vt = svd.v_t.as_ref().expect("svd with v_t");
        let mut rows = DMatrix::zeros(rank, self.dim());
        let mut rhs = DVector::zeros(rank);
        for r in 0..rank {
            let sigma = svd.singular_values[r];
            for j in 0..self.dim() {
                rows[(r, j)] = sigma * vt[(r, j)];
            }
            rhs[r] = u.column(r).dot(&b);
        }
        (rows, rhs)
    }

    /// All vertices (basic feasible solutions) of the polytope, found by
    /// enumerating basis column subsets of the reduced equality system.
    /// Intended for small instances; refuses oversized enumerations.
    pub fn vertices(&self) -> Result<Vec<Vec<f64>>> {
        let (rows, rhs) = self.reduced_rows();
        let rank = rows.nrows();
        let dim = self.dim();
        let combos = binomial(dim, rank);
        if combos > 2_000_000 {
            return Err(Error::invalid(format!(
                "vertex enumeration over C({dim}, {rank}) = {combos} bases is too large"
            )));
        }
        // Shift to x = rho - lower >= 0.
        let shift = DVector::from_element(dim, self.lower);
        let shifted_rhs = &rhs - &rows * shift;

        let mut vertices: Vec<Vec<f64>> = Vec::new();
        let mut basis: Vec<usize> = (0..rank).collect();
        loop {
            let bmat = DMatrix::from_fn(rank, rank, |r, c| rows[(r, basis[c])]);
            if let Some(x_b) = bmat.lu().solve(&shifted_rhs) {
                if x_b.iter().all(|&v| v >= -1e-9) {
                    let mut v = vec![self.lower; dim];
                    for (i, &j) in basis.iter().enumerate() {
                        v[j] = self.lower + x_b[i].max(0.0);
                    }
                    if !vertices
                        .iter()
                        .any(|u| linf_distance(u, &v) < 1e-7)
                    {
                        vertices.push(v);
                    }
                }
            }
            if !next_combination(&mut basis, dim) {
                break;
            }
        }
        Ok(vertices)
    }
}

fn linf_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut out: u128 = 1;
    for i in 0..k {
        out = out.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    out
}

/// Advances `combo` to the next k-subset of `0..n` in lexicographic order.
fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    if k == 0 {
        return false;
    }
    let mut i = k;
    while i > 0 {
        i -= 1;
        if combo[i] < n - (k - i) {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// The stationary policy of an occupation measure:
/// `pi(a|s) = rho(s,a) / sum_a' rho(s,a')`.
///
/// States with zero marginal get a uniform row; their indices are returned
/// so callers can surface the fallback rather than silently accepting it.
pub fn policy_from_occupation(rho: &OccupationMeasure) -> (Policy, Vec<usize>) {
    let n_states = rho.n_states();
    let n_actions = rho.n_actions();
    let mut probs = vec![0.0; n_states * n_actions];
    let mut flagged = Vec::new();
    for s in 0..n_states {
        let nu = rho.state_marginal(s);
        if nu <= 0.0 {
            flagged.push(s);
            for a in 0..n_actions {
                probs[s * n_actions + a] = 1.0 / n_actions as f64;
            }
        } else {
            for a in 0..n_actions {
                probs[s * n_actions + a] = rho.value(s, a) / nu;
            }
        }
    }
    (
        Policy::from_rows_unchecked(n_states, n_actions, probs),
        flagged,
    )
}

/// The occupation measure induced by following `policy` on `chain`:
/// `rho(s,a) = nu(s) pi(a|s)` with `nu` the stationary distribution of the
/// induced kernel.
pub fn occupation_from_policy(chain: &PlayerChain, policy: &Policy) -> Result<OccupationMeasure> {
    let kernel = chain.induced_kernel(policy)?;
    let nu = stationary_distribution(&kernel, chain.n_states())?;
    let mut values = vec![0.0; chain.dim()];
    for s in 0..chain.n_states() {
        for a in 0..chain.n_actions() {
            values[s * chain.n_actions() + a] = nu[s] * policy.prob(s, a);
        }
    }
    Ok(OccupationMeasure::from_parts_unchecked(
        chain.n_states(),
        chain.n_actions(),
        values,
    ))
}

/// Stationary distribution of an ergodic row-stochastic kernel
/// (row-major, `n x n`), by a dense linear solve with a damped
/// power-iteration fallback for large kernels.
pub fn stationary_distribution(kernel: &[f64], n: usize) -> Result<Vec<f64>> {
    if kernel.len() != n * n || n == 0 {
        return Err(Error::invalid("kernel must be square and nonempty"));
    }
    for s in 0..n {
        let row = &kernel[s * n..(s + 1) * n];
        let sum: f64 = row.iter().sum();
        let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < 0.0 || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::NonStochasticRow { row: s, sum, min });
        }
    }
    if n == 1 {
        return Ok(vec![1.0]);
    }

    let nu = if n <= DIRECT_SOLVE_LIMIT {
        direct_stationary(kernel, n)?
    } else {
        power_stationary(kernel, n)?
    };

    // nu P = nu must hold tightly, whichever path produced nu.
    let mut residual = 0.0;
    for j in 0..n {
        let mut col = 0.0;
        for i in 0..n {
            col += nu[i] * kernel[i * n + j];
        }
        residual += (col - nu[j]).abs();
    }
    if residual > STATIONARY_TOL {
        return Err(Error::NonErgodic(format!(
            "stationary residual {residual} exceeds {STATIONARY_TOL}"
        )));
    }
    Ok(nu)
}

fn direct_stationary(kernel: &[f64], n: usize) -> Result<Vec<f64>> {
    // (P^T - I) nu = 0 with the last row replaced by normalization.
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        for j in 0..n {
            m[(i, j)] = kernel[j * n + i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        m[(n - 1, j)] = 1.0;
    }
    // A rank-deficient system means several stationary distributions
    // (multiple recurrent classes).
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > smax * 1e-12 * n as f64)
        .count();
    if rank < n {
        return Err(Error::NonErgodic(
            "kernel admits multiple stationary distributions".into(),
        ));
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let nu = m.lu().solve(&rhs).ok_or_else(|| {
        Error::NonErgodic("singular balance system".into())
    })?;
    if nu.iter().any(|&v| v < -1e-10) {
        return Err(Error::NonErgodic("negative stationary entries".into()));
    }
    let mut out: Vec<f64> = nu.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

fn power_stationary(kernel: &[f64], n: usize) -> Result<Vec<f64>> {
    // Damped iteration nu <- (nu + nu P) / 2 shares the fixed point and
    // converges on periodic chains too.
    let mut nu = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..1_000_000 {
        for x in next.iter_mut() {
            *x = 0.0;
        }
        for i in 0..n {
            let w = nu[i];
            for j in 0..n {
                next[j] += w * kernel[i * n + j];
            }
        }
        let mut change = 0.0;
        for j in 0..n {
            let blended = 0.5 * (nu[j] + next[j]);
            change += (blended - nu[j]).abs();
            nu[j] = blended;
        }
        if change < 1e-12 {
            let total: f64 = nu.iter().sum();
            for v in &mut nu {
                *v /= total;
            }
            return Ok(nu);
        }
    }
    Err(Error::Numerical {
        routine: "stationary power iteration",
        residual: f64::NAN,
    })
}

/// Single-step L2 contraction factor of a kernel on the sum-zero subspace:
/// the largest singular value of `V^T P^T V` where `V` spans `1^perp`.
pub fn kernel_contraction(kernel: &[f64], n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    // Helmert basis of the sum-zero subspace.
    let mut v = DMatrix::zeros(n, n - 1);
    for k in 1..n {
        let norm = (k as f64 * (k as f64 + 1.0)).sqrt();
        for i in 0..k {
            v[(i, k - 1)] = 1.0 / norm;
        }
        v[(k, k - 1)] = -(k as f64) / norm;
    }
    let p_t = DMatrix::from_fn(n, n, |i, j| kernel[j * n + i]);
    let b = v.transpose() * p_t * &v;
    b.svd(false, false).singular_values.max()
}

/// A mixing-time estimate together with the policy attaining it.
#[derive(Debug, Clone)]
pub struct MixingBound {
    /// Conservative mixing-time estimate, at least 1.
    pub tau: f64,
    /// Sampled policy with the slowest contraction.
    pub policy: Policy,
    /// Its contraction factor.
    pub contraction: f64,
}

/// Estimates a uniform mixing-time bound by sampling interior policies and
/// taking the worst single-step contraction: `tau = max(1, -1 / ln lambda2)`.
/// Overestimates are safe for their consumers (burn-in lengths, batch caps).
pub fn mixing_time_bound(chain: &PlayerChain) -> Result<MixingBound> {
    mixing_time_bound_with(chain, 200, 0x6d69_7874)
}

/// [`mixing_time_bound`] with explicit sample count and seed. Samples are
/// drawn sequentially, so a larger count extends (and thus dominates) a
/// smaller one at the same seed.
pub fn mixing_time_bound_with(
    chain: &PlayerChain,
    samples: usize,
    seed: u64,
) -> Result<MixingBound> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let floor = (0.01f64).min(0.5 / chain.n_actions() as f64);
    let mut best: Option<MixingBound> = None;
    for _ in 0..samples.max(1) {
        let mut rows = Vec::with_capacity(chain.dim());
        for _ in 0..chain.n_states() {
            rows.extend(generate::floored_simplex_row(
                chain.n_actions(),
                floor,
                &mut rng,
            ));
        }
        let policy = Policy::from_rows_unchecked(chain.n_states(), chain.n_actions(), rows);
        let kernel = chain.induced_kernel(&policy)?;
        let lambda = kernel_contraction(&kernel, chain.n_states());
        if lambda >= 1.0 - 1e-12 {
            return Err(Error::NonErgodic(format!(
                "sampled policy shows no single-step contraction (factor {lambda})"
            )));
        }
        let tau = if lambda <= 0.0 {
            1.0
        } else {
            (-1.0 / lambda.ln()).max(1.0)
        };
        if best.as_ref().map_or(true, |b| tau > b.tau) {
            best = Some(MixingBound {
                tau,
                policy,
                contraction: lambda,
            });
        }
    }
    Ok(best.expect("at least one sample"))
}

pub mod delta;

pub use delta::compute_delta;
