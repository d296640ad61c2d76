//! Exact small-game oracles and equilibrium diagnostics.
//!
//! Payoffs of occupation profiles are multilinear, so small tabular games
//! admit exact payoff and gradient evaluation by joint enumeration. On top
//! of those sit the best-response linear program, the Nikaido-Isoda gap and
//! its trajectory-weighted average, the stable-equilibrium residual, and a
//! Monte-Carlo bias report for the batch reward estimator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game::{GameConfig, MixedRadix, Policy};
use crate::learner::{run_batch, BatchMode};
use crate::lp;
use crate::occupancy::{
    mixing_time_bound, occupation_from_policy, OccupationMeasure, OccupationPolytope,
};
use crate::rng::StreamBank;

fn check_cap(game: &GameConfig) -> Result<()> {
    let size = game.joint_size();
    if size > game.enumeration_cap() {
        return Err(Error::EnumerationTooLarge {
            size,
            cap: game.enumeration_cap(),
        });
    }
    Ok(())
}

fn check_profile(game: &GameConfig, profile: &[OccupationMeasure]) -> Result<()> {
    if profile.len() != game.n_players() {
        return Err(Error::invalid("one occupation measure per player required"));
    }
    for (i, rho) in profile.iter().enumerate() {
        let chain = game.player(i);
        if rho.n_states() != chain.n_states() || rho.n_actions() != chain.n_actions() {
            return Err(Error::invalid(format!(
                "occupation measure {i} does not match player {i}'s spaces"
            )));
        }
    }
    Ok(())
}

/// Exact payoff gradient of `player` with respect to its own occupation:
/// coordinate `(s_i, a_i)` carries the reward averaged over the opponents'
/// joint occupation profile.
pub fn exact_gradient(
    game: &GameConfig,
    profile: &[OccupationMeasure],
    player: usize,
) -> Result<Vec<f64>> {
    check_cap(game)?;
    check_profile(game, profile)?;
    let chain = game.player(player);
    let mut grad = vec![0.0; chain.dim()];
    let state_sizes: Vec<usize> = game.players().iter().map(|p| p.n_states()).collect();
    let action_sizes: Vec<usize> = game.players().iter().map(|p| p.n_actions()).collect();
    for joint_s in MixedRadix::new(state_sizes.clone()) {
        for joint_a in MixedRadix::new(action_sizes.clone()) {
            let mut weight = 1.0;
            for (j, rho) in profile.iter().enumerate() {
                if j != player {
                    weight *= rho.value(joint_s[j], joint_a[j]);
                }
            }
            if weight == 0.0 {
                continue;
            }
            let r = game.reward(&joint_s, &joint_a, player);
            grad[joint_s[player] * chain.n_actions() + joint_a[player]] += weight * r;
        }
    }
    Ok(grad)
}

/// Exact long-run average payoff of `player` at an occupation profile,
/// by direct joint enumeration.
pub fn exact_payoff(
    game: &GameConfig,
    profile: &[OccupationMeasure],
    player: usize,
) -> Result<f64> {
    check_cap(game)?;
    check_profile(game, profile)?;
    let state_sizes: Vec<usize> = game.players().iter().map(|p| p.n_states()).collect();
    let action_sizes: Vec<usize> = game.players().iter().map(|p| p.n_actions()).collect();
    let mut total = 0.0;
    for joint_s in MixedRadix::new(state_sizes.clone()) {
        for joint_a in MixedRadix::new(action_sizes.clone()) {
            let mut weight = 1.0;
            for (j, rho) in profile.iter().enumerate() {
                weight *= rho.value(joint_s[j], joint_a[j]);
            }
            if weight == 0.0 {
                continue;
            }
            total += weight * game.reward(&joint_s, &joint_a, player);
        }
    }
    Ok(total)
}

/// Gradients of every player at a profile.
pub fn exact_gradient_profile(
    game: &GameConfig,
    profile: &[OccupationMeasure],
) -> Result<Vec<Vec<f64>>> {
    (0..game.n_players())
        .map(|i| exact_gradient(game, profile, i))
        .collect()
}

/// An optimal vertex of `max <theta, objective>` over a polytope, with the
/// duality certificate of the simplex solve.
#[derive(Debug, Clone)]
pub struct BestResponse {
    pub value: f64,
    pub vertex: Vec<f64>,
    pub duality_gap: f64,
    pub dual_infeasibility: f64,
}

/// Maximizes a linear objective over the (possibly shrunk) occupation
/// polytope by the dense simplex method; optimality is certified by the
/// duality gap of the final basis.
pub fn best_response_value(
    polytope: &OccupationPolytope,
    objective: &[f64],
) -> Result<BestResponse> {
    let dim = polytope.dim();
    if objective.len() != dim {
        return Err(Error::invalid("objective length does not match polytope"));
    }
    let (a, b) = polytope.shifted_standard_form();
    let c = DVector::from_fn(dim, |j, _| -objective[j]);
    let sol = lp::solve_min(&a, &b, &c)?;
    let lower = polytope.lower_bound();
    let vertex: Vec<f64> = sol.x.iter().map(|&x| x + lower).collect();
    let value: f64 = vertex.iter().zip(objective).map(|(t, g)| t * g).sum();
    let cert_tol = 1e-9;
    if sol.gap > cert_tol || sol.dual_infeasibility > cert_tol {
        return Err(Error::Numerical {
            routine: "best response certificate",
            residual: sol.gap.max(sol.dual_infeasibility),
        });
    }
    Ok(BestResponse {
        value,
        vertex,
        duality_gap: sol.gap,
        dual_infeasibility: sol.dual_infeasibility,
    })
}

/// The equilibrium gap at a profile: the total one-shot deviation gain
/// `sum_i [max_theta <theta, v_i> - <rho_i, v_i>]` over the given
/// (typically shrunk) polytopes. Nonnegative for feasible profiles.
pub fn ni_gap(
    game: &GameConfig,
    profile: &[OccupationMeasure],
    polytopes: &[OccupationPolytope],
) -> Result<f64> {
    if polytopes.len() != game.n_players() {
        return Err(Error::invalid("one polytope per player required"));
    }
    let mut gap = 0.0;
    for i in 0..game.n_players() {
        let grad = exact_gradient(game, profile, i)?;
        let best = best_response_value(&polytopes[i], &grad)?;
        let current: f64 = profile[i]
            .values()
            .iter()
            .zip(&grad)
            .map(|(r, g)| r * g)
            .sum();
        gap += best.value - current;
    }
    Ok(gap)
}

/// The weight-averaged equilibrium gap of a trajectory: the maximum over
/// deviation profiles of the weighted deviation gain. The maximum is linear
/// in the deviation and separates across players, so it reduces to one
/// best-response solve per player against the weight-averaged gradient.
pub fn averaged_ni_gap(
    game: &GameConfig,
    trajectory: &[Vec<OccupationMeasure>],
    weights: &[f64],
    polytopes: &[OccupationPolytope],
) -> Result<f64> {
    if trajectory.is_empty() || trajectory.len() != weights.len() {
        return Err(Error::invalid(
            "trajectory and weights must be nonempty and of equal length",
        ));
    }
    if weights.iter().any(|&w| w <= 0.0) {
        return Err(Error::invalid("weights must be positive"));
    }
    let total: f64 = weights.iter().sum();
    let n = game.n_players();
    let mut avg_grads: Vec<Vec<f64>> = game
        .players()
        .iter()
        .map(|p| vec![0.0; p.dim()])
        .collect();
    let mut avg_values = vec![0.0; n];
    for (profile, &w) in trajectory.iter().zip(weights) {
        let scale = w / total;
        for i in 0..n {
            let grad = exact_gradient(game, profile, i)?;
            let value: f64 = profile[i]
                .values()
                .iter()
                .zip(&grad)
                .map(|(r, g)| r * g)
                .sum();
            avg_values[i] += scale * value;
            for (acc, g) in avg_grads[i].iter_mut().zip(&grad) {
                *acc += scale * g;
            }
        }
    }
    let mut gap = 0.0;
    for i in 0..n {
        let best = best_response_value(&polytopes[i], &avg_grads[i])?;
        gap += best.value - avg_values[i];
    }
    Ok(gap)
}

/// The trajectory-weighted residual toward a candidate equilibrium:
/// `sum_l (w_l / W) <v(rho^l), rho_star - rho^l>`. Nonnegative along any
/// feasible trajectory when `rho_star` is a stable equilibrium.
pub fn stable_residual(
    game: &GameConfig,
    trajectory: &[Vec<OccupationMeasure>],
    weights: &[f64],
    rho_star: &[OccupationMeasure],
) -> Result<f64> {
    if trajectory.is_empty() || trajectory.len() != weights.len() {
        return Err(Error::invalid(
            "trajectory and weights must be nonempty and of equal length",
        ));
    }
    check_profile(game, rho_star)?;
    let total: f64 = weights.iter().sum();
    let mut out = 0.0;
    for (profile, &w) in trajectory.iter().zip(weights) {
        let scale = w / total;
        for i in 0..game.n_players() {
            let grad = exact_gradient(game, profile, i)?;
            let inner: f64 = rho_star[i]
                .values()
                .iter()
                .zip(profile[i].values())
                .zip(&grad)
                .map(|((star, cur), g)| (star - cur) * g)
                .sum();
            out += scale * inner;
        }
    }
    Ok(out)
}

/// Per-coordinate Monte-Carlo bias of the batch reward estimator for one
/// player at one burn-in length.
#[derive(Debug, Clone)]
pub struct PlayerBias {
    pub mean: Vec<f64>,
    pub exact: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Coordinates with `|mean - exact| > exp(-d/tau) + 3 SE`.
    pub violations: Vec<usize>,
}

/// Bias study of the importance-weighted reward estimator at one burn-in.
#[derive(Debug, Clone)]
pub struct BiasReport {
    pub burn_in: usize,
    pub tau_hat: f64,
    pub batches: usize,
    pub players: Vec<PlayerBias>,
}

impl BiasReport {
    /// The mixing-bias bound `exp(-d / tau)`.
    pub fn bound(&self) -> f64 {
        (-(self.burn_in as f64) / self.tau_hat).exp()
    }

    pub fn max_abs_bias(&self) -> f64 {
        self.players
            .iter()
            .flat_map(|p| p.mean.iter().zip(&p.exact))
            .map(|(m, e)| (m - e).abs())
            .fold(0.0, f64::max)
    }

    pub fn has_violations(&self) -> bool {
        self.players.iter().any(|p| !p.violations.is_empty())
    }
}

/// Runs `batches` estimator batches per burn-in length under fixed policies
/// and compares the per-coordinate sample mean of the reward vector against
/// the exact payoff gradient at the induced occupation profile.
pub fn estimator_bias_report(
    game: &GameConfig,
    policies: &[Policy],
    d_values: &[usize],
    batches: usize,
    seed: u64,
) -> Result<Vec<BiasReport>> {
    if batches == 0 {
        return Err(Error::invalid("bias study needs at least one batch"));
    }
    if policies.len() != game.n_players() {
        return Err(Error::invalid("one policy per player required"));
    }
    check_cap(game)?;
    let profile: Vec<OccupationMeasure> = game
        .players()
        .iter()
        .zip(policies)
        .map(|(chain, policy)| occupation_from_policy(chain, policy))
        .collect::<Result<Vec<_>>>()?;
    let exact: Vec<Vec<f64>> = exact_gradient_profile(game, &profile)?;
    let tau_hat = game
        .players()
        .iter()
        .map(mixing_time_bound)
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .map(|b| b.tau)
        .fold(1.0_f64, f64::max);

    let mut reports = Vec::with_capacity(d_values.len());
    for (di, &d) in d_values.iter().enumerate() {
        if d == 0 {
            return Err(Error::invalid("burn-in must be at least 1"));
        }
        let mut streams = StreamBank::new(seed.wrapping_add(di as u64), game.n_players());
        let mut state = vec![0usize; game.n_players()];
        let dims: Vec<usize> = game.players().iter().map(|p| p.dim()).collect();
        let mut sums: Vec<Vec<f64>> = dims.iter().map(|&k| vec![0.0; k]).collect();
        let mut sq_sums: Vec<Vec<f64>> = dims.iter().map(|&k| vec![0.0; k]).collect();
        for _ in 0..batches {
            let outcome = run_batch(
                game,
                policies,
                &mut state,
                &mut streams,
                d,
                &BatchMode::Cover { cap: None },
                0.0,
            )?;
            for i in 0..game.n_players() {
                for (j, &v) in outcome.reward_vectors[i].iter().enumerate() {
                    sums[i][j] += v;
                    sq_sums[i][j] += v * v;
                }
            }
        }
        let bound = (-(d as f64) / tau_hat).exp();
        let players = (0..game.n_players())
            .map(|i| {
                let n = batches as f64;
                let mean: Vec<f64> = sums[i].iter().map(|&s| s / n).collect();
                let std_error: Vec<f64> = sums[i]
                    .iter()
                    .zip(&sq_sums[i])
                    .map(|(&s, &sq)| {
                        let m = s / n;
                        let var = (sq / n - m * m).max(0.0) * n / (n - 1.0).max(1.0);
                        (var / n).sqrt()
                    })
                    .collect();
                let violations = mean
                    .iter()
                    .zip(&exact[i])
                    .zip(&std_error)
                    .enumerate()
                    .filter(|(_, ((m, e), se))| (*m - *e).abs() > bound + 3.0 * **se)
                    .map(|(j, _)| j)
                    .collect();
                PlayerBias {
                    mean,
                    exact: exact[i].clone(),
                    std_error,
                    violations,
                }
            })
            .collect();
        reports.push(BiasReport {
            burn_in: d,
            tau_hat,
            batches,
            players,
        });
    }
    Ok(reports)
}

/// Checks whether the players' rewards sum to a constant over the whole
/// joint space (unit weights), returning the constant when they do.
pub fn check_constant_sum(game: &GameConfig) -> Result<Option<f64>> {
    if !game.rewards().is_tabular() {
        return Err(Error::invalid("constant-sum check needs tabular rewards"));
    }
    check_cap(game)?;
    let state_sizes: Vec<usize> = game.players().iter().map(|p| p.n_states()).collect();
    let action_sizes: Vec<usize> = game.players().iter().map(|p| p.n_actions()).collect();
    let mut constant: Option<f64> = None;
    for joint_s in MixedRadix::new(state_sizes.clone()) {
        for joint_a in MixedRadix::new(action_sizes.clone()) {
            let total: f64 = (0..game.n_players())
                .map(|i| game.reward(&joint_s, &joint_a, i))
                .sum();
            match constant {
                None => constant = Some(total),
                Some(c) if (c - total).abs() > 1e-9 => return Ok(None),
                _ => {}
            }
        }
    }
    Ok(constant)
}

/// Payoff of the profile where `player` deviates to `theta` while the rest
/// of `profile` stays fixed.
pub fn deviation_payoff(
    game: &GameConfig,
    profile: &[OccupationMeasure],
    player: usize,
    theta: &OccupationMeasure,
) -> Result<f64> {
    let mut deviated: Vec<OccupationMeasure> = profile.to_vec();
    deviated[player] = theta.clone();
    exact_payoff(game, &deviated, player)
}

/// Dense view of a polytope's equality system, exposed for audits.
pub fn polytope_system(polytope: &OccupationPolytope) -> (DMatrix<f64>, DVector<f64>) {
    (polytope.eq_matrix(), polytope.eq_rhs())
}

#[cfg(test)]
mod tests;
