//! Runnable invariant suites backed by independent oracles.
//!
//! Each suite checks one implementation path against a slower, structurally
//! different computation: projections against brute-force active-set
//! enumeration and grid search, the best-response simplex against vertex
//! enumeration, the batch estimator against exact gradients, and the
//! simulator against the product-of-marginals law. The suites power the
//! `validate` command and are reused by the acceptance tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::Result;
use crate::game::{random_game, GameConfig, GeneratorMeta, Policy, RewardOracle};
use crate::metrics;
use crate::occupancy::{occupation_from_policy, policy_from_occupation, OccupationPolytope};
use crate::projection::{euclidean_project, kl_divergence, kl_project};
use crate::rng::StreamBank;

/// How much Monte-Carlo work the suites do.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationLevel {
    Fast,
    Full,
}

/// Deliberate corruption for negative-testing the validator itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultInjection {
    /// Perturbs Euclidean projection outputs before the oracle comparison.
    PerturbProjection,
}

/// Outcome of one suite.
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl SuiteResult {
    fn pass(name: &'static str, detail: String) -> Self {
        SuiteResult {
            name,
            passed: true,
            detail,
        }
    }

    fn fail(name: &'static str, detail: String) -> Self {
        SuiteResult {
            name,
            passed: false,
            detail,
        }
    }
}

/// Runs every suite at the given level.
pub fn run_all(level: ValidationLevel, fault: Option<FaultInjection>) -> Result<Vec<SuiteResult>> {
    let fast = level == ValidationLevel::Fast;
    let perturb = matches!(fault, Some(FaultInjection::PerturbProjection));
    Ok(vec![
        roundtrip_suite(if fast { 60 } else { 200 })?,
        euclidean_projection_suite(if fast { 30 } else { 100 }, perturb)?,
        kl_projection_suite(if fast { 15 } else { 50 })?,
        best_response_suite(if fast { 20 } else { 60 })?,
        bias_suite(
            if fast { &[2, 8] } else { &[2, 4, 8, 16, 32] },
            if fast { 5_000 } else { 50_000 },
        )?,
        independence_suite(if fast { 20_000 } else { 100_000 })?,
    ])
}

/// A random strictly interior point of the shrunk polytope.
fn random_interior_point(
    polytope: &OccupationPolytope,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let raw: Vec<f64> = (0..polytope.dim()).map(|_| rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let target: Vec<f64> = raw.iter().map(|v| v / total).collect();
    Ok(euclidean_project(polytope, &target)?.values().to_vec())
}

/// Occupation -> policy -> occupation must reproduce the input.
pub fn roundtrip_suite(cases: usize) -> Result<SuiteResult> {
    let mut streams = StreamBank::new(0x7011, 1);
    let mut worst = 0.0_f64;
    for case in 0..cases {
        let game = random_game(&[3], &[3], 1000 + case as u64)?;
        let chain = game.player(0);
        let shrunk = OccupationPolytope::from_chain(chain).shrink(1e-3)?;
        let rho_values = random_interior_point(&shrunk, streams.nature())?;
        let rho = shrunk.measure(rho_values)?;
        let (policy, flagged) = policy_from_occupation(&rho);
        if !flagged.is_empty() {
            return Ok(SuiteResult::fail(
                "roundtrip",
                format!("interior measure produced zero-marginal states {flagged:?}"),
            ));
        }
        let back = occupation_from_policy(chain, &policy)?;
        let err = rho
            .values()
            .iter()
            .zip(back.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err);
    }
    let detail = format!("{cases} roundtrips, max |error| = {worst:.3e} (tol 1e-7)");
    if worst <= 1e-7 {
        Ok(SuiteResult::pass("roundtrip", detail))
    } else {
        Ok(SuiteResult::fail("roundtrip", detail))
    }
}

/// Brute-force oracle: minimize `|rho - y|^2` over the polytope by trying
/// every subset of bounds held at the lower bound and solving the resulting
/// equality-constrained least-squares system.
pub fn brute_force_projection(polytope: &OccupationPolytope, y: &[f64]) -> Option<Vec<f64>> {
    let dim = polytope.dim();
    let lower = polytope.lower_bound();
    let a = polytope.eq_matrix();
    let b = polytope.eq_rhs();
    let m = a.nrows();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << dim) {
        let held: Vec<usize> = (0..dim).filter(|j| mask & (1 << j) != 0).collect();
        let rows = m + held.len();
        // KKT system of the equality-constrained problem:
        // [ I  C^T ] [rho]   [y]
        // [ C   0  ] [mu ] = [d]
        let n = dim + rows;
        let mut kkt = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        for j in 0..dim {
            kkt[(j, j)] = 1.0;
            rhs[j] = y[j];
        }
        for r in 0..m {
            for j in 0..dim {
                kkt[(dim + r, j)] = a[(r, j)];
                kkt[(j, dim + r)] = a[(r, j)];
            }
            rhs[dim + r] = b[r];
        }
        for (k, &j) in held.iter().enumerate() {
            kkt[(dim + m + k, j)] = 1.0;
            kkt[(j, dim + m + k)] = 1.0;
            rhs[dim + m + k] = lower;
        }
        let svd = kkt.clone().svd(true, true);
        let smax = svd.singular_values.max().max(1e-300);
        let Some(sol) = svd.solve(&rhs, smax * 1e-12).ok() else {
            continue;
        };
        let rho: Vec<f64> = (0..dim).map(|j| sol[j]).collect();
        // Solution must actually satisfy the constraint block (the KKT
        // system is solved in the least-squares sense when singular).
        let mut consistent = true;
        for r in 0..m {
            let lhs: f64 = (0..dim).map(|j| a[(r, j)] * rho[j]).sum();
            if (lhs - b[r]).abs() > 1e-8 {
                consistent = false;
                break;
            }
        }
        if !consistent || rho.iter().any(|&v| v < lower - 1e-9) {
            continue;
        }
        let objective: f64 = rho.iter().zip(y).map(|(r, t)| (r - t) * (r - t)).sum();
        if best.as_ref().map_or(true, |(o, _)| objective < *o) {
            best = Some((objective, rho));
        }
    }
    best.map(|(_, rho)| rho)
}

/// Euclidean projection against the brute-force oracle, plus idempotence
/// and nonexpansiveness spot checks.
pub fn euclidean_projection_suite(cases: usize, perturb: bool) -> Result<SuiteResult> {
    let mut streams = StreamBank::new(0xe0c1, 1);
    let mut worst = 0.0_f64;
    let mut worst_expansion = 0.0_f64;
    for case in 0..cases {
        let game = random_game(&[3], &[2], 2000 + case as u64)?;
        let delta = if case % 2 == 0 { 0.0 } else { 0.01 };
        let polytope = OccupationPolytope::from_chain(game.player(0)).shrink(delta)?;
        let y1: Vec<f64> = (0..6)
            .map(|_| streams.nature().random::<f64>() * 2.0 - 0.5)
            .collect();
        let y2: Vec<f64> = (0..6)
            .map(|_| streams.nature().random::<f64>() * 2.0 - 0.5)
            .collect();
        let mut p1 = euclidean_project(&polytope, &y1)?.values().to_vec();
        let p2 = euclidean_project(&polytope, &y2)?.values().to_vec();
        if perturb {
            p1[0] += 1e-5;
        }
        let oracle = brute_force_projection(&polytope, &y1)
            .expect("brute-force projection found no feasible candidate");
        let err = p1
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err);

        // Nonexpansiveness: |P(y1) - P(y2)| <= |y1 - y2|.
        let dp: f64 = p1
            .iter()
            .zip(&p2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let dy: f64 = y1
            .iter()
            .zip(&y2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        worst_expansion = worst_expansion.max(dp - dy);

        // Idempotence on the oracle's output.
        let again = euclidean_project(&polytope, &oracle)?.values().to_vec();
        let idem = again
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(idem);
    }
    let detail = format!(
        "{cases} projections, max |error vs oracle| = {worst:.3e} (tol 1e-7), \
         max expansion = {worst_expansion:.3e} (tol 1e-9)"
    );
    if worst <= 1e-7 && worst_expansion <= 1e-9 {
        Ok(SuiteResult::pass("euclidean-projection", detail))
    } else {
        Ok(SuiteResult::fail("euclidean-projection", detail))
    }
}

/// KL projection against a refined grid search over the two-dimensional
/// feasible parameterization, plus the Pythagorean inequality.
pub fn kl_projection_suite(cases: usize) -> Result<SuiteResult> {
    let mut streams = StreamBank::new(0x6b4c, 1);
    let mut worst_obj = 0.0_f64;
    let mut worst_pyth = 0.0_f64;
    for case in 0..cases {
        let game = random_game(&[2], &[2], 3000 + case as u64)?;
        let polytope = OccupationPolytope::from_chain(game.player(0));
        let q: Vec<f64> = (0..4)
            .map(|_| streams.nature().random::<f64>() + 0.05)
            .collect();
        let projected = kl_project(&polytope, &q)?;
        let objective = kl_divergence(projected.values(), &q);

        let oracle = grid_search_kl(&polytope, &q);
        worst_obj = worst_obj.max(objective - oracle);

        // Pythagorean: KL(p, q) >= KL(p, proj) + KL(proj, q) for feasible p.
        for trial in 0..10 {
            let shrunk = polytope.shrink(1e-3)?;
            let _ = trial;
            let p = random_interior_point(&shrunk, streams.nature())?;
            let slack = kl_divergence(&p, &q)
                - kl_divergence(&p, projected.values())
                - kl_divergence(projected.values(), &q);
            worst_pyth = worst_pyth.max(-slack);
        }
    }
    let detail = format!(
        "{cases} KL projections, max objective excess vs grid = {worst_obj:.3e} (tol 1e-6), \
         worst Pythagorean slack = {worst_pyth:.3e} (tol 1e-7)"
    );
    if worst_obj <= 1e-6 && worst_pyth <= 1e-7 {
        Ok(SuiteResult::pass("kl-projection", detail))
    } else {
        Ok(SuiteResult::fail("kl-projection", detail))
    }
}

/// Best KL objective found by nested grid refinement over the nullspace
/// parameterization of the feasible set.
pub fn grid_search_kl(polytope: &OccupationPolytope, q: &[f64]) -> f64 {
    let dim = polytope.dim();
    let a = polytope.eq_matrix();
    let z = crate::linalg::nullspace_basis(&a);
    let (std_a, std_b) = polytope.shifted_standard_form();
    let x0v = crate::lp::feasible_vertex(&std_a, &std_b).expect("feasible polytope");
    let x0 = DVector::from_fn(dim, |j, _| x0v[j] + polytope.lower_bound());

    assert_eq!(z.ncols(), 2, "grid oracle expects a 2-dimensional feasible set");
    let eval = |u0: f64, u1: f64| -> f64 {
        let mut obj = 0.0;
        for j in 0..dim {
            let v = x0[j] + z[(j, 0)] * u0 + z[(j, 1)] * u1;
            if v <= 0.0 {
                return f64::INFINITY;
            }
            obj += v * (v / q[j]).ln();
        }
        obj
    };
    let mut center = (0.0, 0.0);
    let mut half_width = 1.5;
    let mut best = f64::INFINITY;
    for _level in 0..6 {
        let steps = 40;
        let mut best_pt = center;
        for i in 0..=steps {
            for j in 0..=steps {
                let u0 = center.0 - half_width + 2.0 * half_width * i as f64 / steps as f64;
                let u1 = center.1 - half_width + 2.0 * half_width * j as f64 / steps as f64;
                let obj = eval(u0, u1);
                if obj < best {
                    best = obj;
                    best_pt = (u0, u1);
                }
            }
        }
        center = best_pt;
        half_width *= 2.5 / steps as f64;
        half_width = half_width.max(1e-9);
        half_width *= 4.0;
    }
    best
}

/// Best-response simplex solves against brute-force vertex enumeration.
pub fn best_response_suite(cases: usize) -> Result<SuiteResult> {
    let mut streams = StreamBank::new(0x1b, 1);
    let mut worst = 0.0_f64;
    let mut worst_cert = 0.0_f64;
    for case in 0..cases {
        let sizes: (usize, usize) = if case % 2 == 0 { (3, 2) } else { (2, 3) };
        let game = random_game(&[sizes.0], &[sizes.1], 4000 + case as u64)?;
        let delta = if case % 3 == 0 { 0.0 } else { 0.005 };
        let polytope = OccupationPolytope::from_chain(game.player(0)).shrink(delta)?;
        let objective: Vec<f64> = (0..polytope.dim())
            .map(|_| streams.nature().random::<f64>() * 2.0 - 1.0)
            .collect();
        let best = metrics::best_response_value(&polytope, &objective)?;
        let brute = polytope
            .vertices()?
            .iter()
            .map(|v| v.iter().zip(&objective).map(|(x, g)| x * g).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max((best.value - brute).abs());
        worst_cert = worst_cert
            .max(best.duality_gap)
            .max(best.dual_infeasibility);
    }
    let detail = format!(
        "{cases} solves, max |LP - enumeration| = {worst:.3e} (tol 1e-9), \
         worst certificate residual = {worst_cert:.3e} (tol 1e-9)"
    );
    if worst <= 1e-9 && worst_cert <= 1e-9 {
        Ok(SuiteResult::pass("best-response", detail))
    } else {
        Ok(SuiteResult::fail("best-response", detail))
    }
}

/// Estimator bias study on a fixed two-player game.
pub fn bias_suite(d_values: &[usize], batches: usize) -> Result<SuiteResult> {
    let game = random_game(&[2, 2], &[2, 2], 77)?;
    let policies = vec![Policy::uniform(2, 2), Policy::uniform(2, 2)];
    let reports = metrics::estimator_bias_report(&game, &policies, d_values, batches, 2024)?;
    let mut detail = String::new();
    let mut passed = true;
    for r in &reports {
        let violations: usize = r.players.iter().map(|p| p.violations.len()).sum();
        passed &= violations == 0;
        detail.push_str(&format!(
            "d={}: max |bias| = {:.3e}, bound = {:.3e}, violations = {violations}; ",
            r.burn_in,
            r.max_abs_bias(),
            r.bound()
        ));
    }
    let name = "estimator-bias";
    if passed {
        Ok(SuiteResult::pass(name, detail))
    } else {
        Ok(SuiteResult::fail(name, detail))
    }
}

/// Empirical joint state distribution must factor into the product of
/// marginals on a two-player game.
pub fn independence_suite(steps: usize) -> Result<SuiteResult> {
    let game = independence_game()?;
    let l1 = independence_l1(&game, steps, 4242)?;
    let detail = format!("{steps} steps, joint/product L1 distance = {l1:.4} (tol 0.05)");
    if l1 <= 0.05 {
        Ok(SuiteResult::pass("independence", detail))
    } else {
        Ok(SuiteResult::fail("independence", detail))
    }
}

/// A two-player, two-state game for the independence check.
pub fn independence_game() -> Result<GameConfig> {
    random_game(&[2, 2], &[2, 2], 5150)
}

/// L1 distance between the empirical joint state distribution and the
/// product of the empirical marginals under uniform policies.
pub fn independence_l1(game: &GameConfig, steps: usize, seed: u64) -> Result<f64> {
    let policies: Vec<Policy> = game
        .players()
        .iter()
        .map(|p| Policy::uniform(p.n_states(), p.n_actions()))
        .collect();
    let mut streams = StreamBank::new(seed, game.n_players());
    let mut state = vec![0usize; game.n_players()];
    let s0 = game.player(0).n_states();
    let s1 = game.player(1).n_states();
    let mut joint = vec![0usize; s0 * s1];
    let mut m0 = vec![0usize; s0];
    let mut m1 = vec![0usize; s1];
    for _ in 0..steps {
        let actions: Vec<usize> = (0..game.n_players())
            .map(|i| crate::game::sample_action(&policies[i], state[i], streams.player(i)))
            .collect::<Result<Vec<_>>>()?;
        state = game.step(&state, &actions, &mut streams)?;
        joint[state[0] * s1 + state[1]] += 1;
        m0[state[0]] += 1;
        m1[state[1]] += 1;
    }
    let n = steps as f64;
    let mut l1 = 0.0;
    for i in 0..s0 {
        for j in 0..s1 {
            let joint_p = joint[i * s1 + j] as f64 / n;
            let prod = (m0[i] as f64 / n) * (m1[j] as f64 / n);
            l1 += (joint_p - prod).abs();
        }
    }
    Ok(l1)
}

/// Ignore player chains and rewards: the generator meta of suite games.
#[allow(dead_code)]
fn suite_meta() -> GeneratorMeta {
    GeneratorMeta::Custom
}

#[allow(dead_code)]
fn suite_rewards(dim: usize) -> RewardOracle {
    RewardOracle::Tabular {
        tables: vec![vec![0.0; dim]],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_suites_pass() {
        let results = run_all(ValidationLevel::Fast, None).unwrap();
        for r in &results {
            assert!(r.passed, "{} failed: {}", r.name, r.detail);
        }
    }

    #[test]
    fn injected_fault_is_detected() {
        let result = euclidean_projection_suite(5, true).unwrap();
        assert!(!result.passed, "perturbed projections must fail the suite");
    }
}
