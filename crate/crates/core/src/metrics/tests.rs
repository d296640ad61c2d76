use super::*;
use crate::game::{
    random_game, zero_sum_two_player, GameConfig, GeneratorMeta, PlayerChain, RewardOracle,
};
use crate::occupancy::OccupationMeasure;
use crate::projection::euclidean_project;
use rand::Rng;

fn matrix_game(tables: Vec<Vec<f64>>, n_actions: &[usize]) -> GameConfig {
    let players = n_actions
        .iter()
        .map(|&a| PlayerChain::identity(1, a))
        .collect();
    GameConfig::new(players, RewardOracle::Tabular { tables }, 0, GeneratorMeta::Custom).unwrap()
}

fn simplex_measure(values: Vec<f64>) -> OccupationMeasure {
    OccupationMeasure::from_parts_unchecked(1, values.len(), values)
}

fn interior_profile(game: &GameConfig, seed: u64) -> Vec<OccupationMeasure> {
    let mut streams = StreamBank::new(seed, game.n_players());
    game.players()
        .iter()
        .map(|chain| {
            let polytope = OccupationPolytope::from_chain(chain).shrink(1e-3).unwrap();
            let raw: Vec<f64> = (0..chain.dim())
                .map(|_| streams.nature().random::<f64>())
                .collect();
            let total: f64 = raw.iter().sum();
            let target: Vec<f64> = raw.iter().map(|v| v / total).collect();
            euclidean_project(&polytope, &target).unwrap()
        })
        .collect()
}

#[test]
fn gradient_of_matching_game_is_opponent_profile() {
    // r1(a1, a2) = 1 when the actions match.
    let game = matrix_game(
        vec![vec![1.0, 0.0, 0.0, 1.0], vec![0.5; 4]],
        &[2, 2],
    );
    let profile = vec![
        simplex_measure(vec![0.5, 0.5]),
        simplex_measure(vec![0.3, 0.7]),
    ];
    let grad = exact_gradient(&game, &profile, 0).unwrap();
    assert!((grad[0] - 0.3).abs() < 1e-15);
    assert!((grad[1] - 0.7).abs() < 1e-15);
}

#[test]
fn gradient_of_constant_reward_is_constant() {
    let game = matrix_game(vec![vec![0.4; 6], vec![0.4; 6]], &[2, 3]);
    let profile = vec![
        simplex_measure(vec![0.5, 0.5]),
        simplex_measure(vec![0.2, 0.3, 0.5]),
    ];
    for i in 0..2 {
        let grad = exact_gradient(&game, &profile, i).unwrap();
        assert!(grad.iter().all(|&g| (g - 0.4).abs() < 1e-15));
    }
}

#[test]
fn payoff_is_inner_product_with_gradient() {
    let game = random_game(&[2, 1, 2], &[2, 2, 2], 61).unwrap();
    let profile = interior_profile(&game, 3);
    for i in 0..3 {
        let grad = exact_gradient(&game, &profile, i).unwrap();
        let inner: f64 = profile[i]
            .values()
            .iter()
            .zip(&grad)
            .map(|(r, g)| r * g)
            .sum();
        let payoff = exact_payoff(&game, &profile, i).unwrap();
        assert!(
            (inner - payoff).abs() <= 1e-12,
            "multilinearity violated by {}",
            (inner - payoff).abs()
        );
    }
}

#[test]
fn constant_sum_payoffs_add_to_one() {
    let game = zero_sum_two_player([2, 2], [2, 2], 67).unwrap();
    let profile = interior_profile(&game, 5);
    let v1 = exact_payoff(&game, &profile, 0).unwrap();
    let v2 = exact_payoff(&game, &profile, 1).unwrap();
    assert!((v1 + v2 - 1.0).abs() < 1e-12);
}

#[test]
fn payoff_matches_long_run_simulation() {
    let game = random_game(&[2, 2], &[2, 2], 71).unwrap();
    let profile = interior_profile(&game, 7);
    let policies: Vec<_> = profile
        .iter()
        .map(|rho| crate::occupancy::policy_from_occupation(rho).0)
        .collect();
    let expected = exact_payoff(&game, &profile, 0).unwrap();

    let mut streams = StreamBank::new(123, 2);
    let mut state = vec![0usize, 0];
    let steps = 1_000_000;
    let mut total = 0.0;
    for _ in 0..steps {
        let actions: Vec<usize> = (0..2)
            .map(|i| {
                crate::game::sample_action(&policies[i], state[i], streams.player(i)).unwrap()
            })
            .collect();
        total += game.reward(&state, &actions, 0);
        state = game.step(&state, &actions, &mut streams).unwrap();
    }
    let simulated = total / steps as f64;
    assert!(
        (simulated - expected).abs() < 0.01,
        "simulated {simulated}, exact {expected}"
    );
}

#[test]
fn cap_guards_exact_oracles() {
    let game = random_game(&[2, 2], &[2, 2], 73)
        .unwrap()
        .with_enumeration_cap(1);
    let profile = vec![
        OccupationMeasure::from_parts_unchecked(2, 2, vec![0.25; 4]),
        OccupationMeasure::from_parts_unchecked(2, 2, vec![0.25; 4]),
    ];
    assert!(matches!(
        exact_gradient(&game, &profile, 0),
        Err(Error::EnumerationTooLarge { .. })
    ));
}

#[test]
fn best_response_on_simplex_picks_top_vertex() {
    let chain = PlayerChain::identity(1, 3);
    let polytope = OccupationPolytope::from_chain(&chain);
    let best = best_response_value(&polytope, &[1.0, 0.0, 0.0]).unwrap();
    assert!((best.value - 1.0).abs() < 1e-12);
    assert!((best.vertex[0] - 1.0).abs() < 1e-12);
    assert!(best.duality_gap <= 1e-9);
    assert!(best.dual_infeasibility <= 1e-9);
}

#[test]
fn best_response_on_shrunk_simplex() {
    let chain = PlayerChain::identity(1, 2);
    let polytope = OccupationPolytope::from_chain(&chain).shrink(0.1).unwrap();
    let best = best_response_value(&polytope, &[1.0, 0.0]).unwrap();
    assert!((best.value - 0.9).abs() < 1e-12);
    assert!((best.vertex[0] - 0.9).abs() < 1e-12);
    assert!((best.vertex[1] - 0.1).abs() < 1e-12);
}

#[test]
fn best_response_matches_vertex_enumeration() {
    let mut rng = StreamBank::new(77, 1);
    for seed in 0..12u64 {
        let game = random_game(&[3], &[2], 100 + seed).unwrap();
        let delta = if seed % 2 == 0 { 0.0 } else { 0.01 };
        let polytope = OccupationPolytope::from_chain(game.player(0))
            .shrink(delta)
            .unwrap();
        let objective: Vec<f64> = (0..polytope.dim())
            .map(|_| rng.nature().random::<f64>() * 2.0 - 1.0)
            .collect();
        let best = best_response_value(&polytope, &objective).unwrap();
        let brute = polytope
            .vertices()
            .unwrap()
            .iter()
            .map(|v| v.iter().zip(&objective).map(|(x, g)| x * g).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(
            (best.value - brute).abs() <= 1e-9,
            "LP {} vs enumeration {brute}",
            best.value
        );
    }
}

#[test]
fn gap_vanishes_at_matching_pennies_equilibrium() {
    // Symmetric constant-sum matching game: uniform play is the mixed
    // equilibrium, so no deviation gains anything.
    let game = matrix_game(
        vec![vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 1.0, 1.0, 0.0]],
        &[2, 2],
    );
    let polytopes: Vec<_> = game
        .players()
        .iter()
        .map(OccupationPolytope::from_chain)
        .collect();
    let profile = vec![
        simplex_measure(vec![0.5, 0.5]),
        simplex_measure(vec![0.5, 0.5]),
    ];
    let gap = ni_gap(&game, &profile, &polytopes).unwrap();
    assert!(gap.abs() <= 1e-9, "gap {gap}");
}

#[test]
fn gap_is_zero_for_constant_rewards() {
    let game = matrix_game(vec![vec![0.3; 4], vec![0.8; 4]], &[2, 2]);
    let polytopes: Vec<_> = game
        .players()
        .iter()
        .map(OccupationPolytope::from_chain)
        .collect();
    let profile = vec![
        simplex_measure(vec![0.9, 0.1]),
        simplex_measure(vec![0.4, 0.6]),
    ];
    let gap = ni_gap(&game, &profile, &polytopes).unwrap();
    assert!(gap.abs() <= 1e-12);
}

#[test]
fn gap_is_nonnegative_everywhere() {
    let game = random_game(&[2, 2], &[2, 2], 83).unwrap();
    let polytopes: Vec<_> = game
        .players()
        .iter()
        .map(|c| OccupationPolytope::from_chain(c).shrink(0.01).unwrap())
        .collect();
    for seed in 0..20 {
        let profile = interior_profile(&game, 900 + seed);
        let gap = ni_gap(&game, &profile, &polytopes).unwrap();
        assert!(gap >= -1e-9, "gap {gap}");
    }
}

#[test]
fn averaged_gap_of_constant_trajectory_equals_pointwise_gap() {
    let game = random_game(&[2, 2], &[2, 2], 89).unwrap();
    let polytopes: Vec<_> = game
        .players()
        .iter()
        .map(|c| OccupationPolytope::from_chain(c).shrink(0.01).unwrap())
        .collect();
    let profile = interior_profile(&game, 31);
    let single = ni_gap(&game, &profile, &polytopes).unwrap();

    let trajectory = vec![profile.clone(), profile.clone(), profile];
    let weights = vec![0.5, 1.0, 0.25];
    let averaged = averaged_ni_gap(&game, &trajectory, &weights, &polytopes).unwrap();
    assert!((averaged - single).abs() < 1e-12);

    let one = averaged_ni_gap(&game, &trajectory[..1].to_vec(), &[1.0], &polytopes).unwrap();
    assert!((one - single).abs() < 1e-12);
}

#[test]
fn averaged_gap_matches_vertex_enumeration_oracle() {
    let game = random_game(&[2, 2], &[2, 2], 97).unwrap();
    let polytopes: Vec<_> = game
        .players()
        .iter()
        .map(|c| OccupationPolytope::from_chain(c).shrink(0.01).unwrap())
        .collect();
    let trajectory = vec![interior_profile(&game, 41), interior_profile(&game, 43)];
    let weights = vec![0.5, 0.5];
    let fast = averaged_ni_gap(&game, &trajectory, &weights, &polytopes).unwrap();

    // Independent path: explicit sums first, then brute-force vertex search.
    let mut brute = 0.0;
    for i in 0..2 {
        let g0 = exact_gradient(&game, &trajectory[0], i).unwrap();
        let g1 = exact_gradient(&game, &trajectory[1], i).unwrap();
        let avg: Vec<f64> = g0.iter().zip(&g1).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
        let held: f64 = [0, 1]
            .iter()
            .map(|&l| {
                let g = if l == 0 { &g0 } else { &g1 };
                0.5 * trajectory[l][i]
                    .values()
                    .iter()
                    .zip(g)
                    .map(|(r, gi)| r * gi)
                    .sum::<f64>()
            })
            .sum();
        let best = polytopes[i]
            .vertices()
            .unwrap()
            .iter()
            .map(|v| v.iter().zip(&avg).map(|(x, g)| x * g).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        brute += best - held;
    }
    assert!((fast - brute).abs() <= 1e-9, "fast {fast} vs brute {brute}");
}

#[test]
fn stable_residual_vanishes_at_the_equilibrium_itself() {
    let game = random_game(&[2, 2], &[2, 2], 101).unwrap();
    let profile = interior_profile(&game, 51);
    let trajectory = vec![profile.clone(), profile.clone()];
    let d = stable_residual(&game, &trajectory, &[1.0, 1.0], &profile).unwrap();
    assert!(d.abs() < 1e-12);
}

#[test]
fn stable_residual_is_zero_under_constant_rewards() {
    let game = matrix_game(vec![vec![0.6; 4], vec![0.6; 4]], &[2, 2]);
    let star = vec![
        simplex_measure(vec![0.5, 0.5]),
        simplex_measure(vec![0.5, 0.5]),
    ];
    let trajectory = vec![
        vec![
            simplex_measure(vec![0.9, 0.1]),
            simplex_measure(vec![0.2, 0.8]),
        ],
        vec![
            simplex_measure(vec![0.1, 0.9]),
            simplex_measure(vec![0.7, 0.3]),
        ],
    ];
    let d = stable_residual(&game, &trajectory, &[0.3, 0.7], &star).unwrap();
    assert!(d.abs() < 1e-12);
}

#[test]
fn dominant_strategy_equilibrium_is_stable() {
    // Constant-sum game where row 0 / column 1 dominate: the pure profile
    // (e0, e1) satisfies <v(rho), rho* - rho> >= 0 on a grid, vanishing only
    // at rho*, and weighted residuals along feasible trajectories are
    // nonnegative.
    let r1 = vec![0.9, 0.8, 0.2, 0.1];
    let r2: Vec<f64> = r1.iter().map(|v| 1.0 - v).collect();
    let game = matrix_game(vec![r1, r2], &[2, 2]);
    let star = vec![
        simplex_measure(vec![1.0, 0.0]),
        simplex_measure(vec![0.0, 1.0]),
    ];
    let grid = 11;
    for pi in 0..grid {
        for qi in 0..grid {
            let p = pi as f64 / (grid - 1) as f64;
            let q = qi as f64 / (grid - 1) as f64;
            let profile = vec![
                simplex_measure(vec![p, 1.0 - p]),
                simplex_measure(vec![q, 1.0 - q]),
            ];
            let d = stable_residual(&game, &[profile], &[1.0], &star).unwrap();
            assert!(d >= -1e-12, "residual {d} at p={p}, q={q}");
            if (p - 1.0).abs() < 1e-12 && q.abs() < 1e-12 {
                assert!(d.abs() < 1e-12);
            } else {
                assert!(d > 0.0 || ((p - 1.0).abs() < 1e-12 || q.abs() < 1e-12));
            }
        }
    }
}

#[test]
fn bias_report_single_state_is_unbiased() {
    let game = random_game(&[1, 1], &[2, 2], 107).unwrap();
    let policies = vec![
        Policy::new(1, 2, vec![0.4, 0.6]).unwrap(),
        Policy::new(1, 2, vec![0.7, 0.3]).unwrap(),
    ];
    let reports = estimator_bias_report(&game, &policies, &[3], 20_000, 7).unwrap();
    assert_eq!(reports.len(), 1);
    for p in &reports[0].players {
        for ((m, e), se) in p.mean.iter().zip(&p.exact).zip(&p.std_error) {
            assert!(
                (m - e).abs() <= 3.0 * se + 1e-12,
                "bias {} exceeds 3 SE {}",
                (m - e).abs(),
                3.0 * se
            );
        }
        assert!(p.violations.is_empty());
    }
}

#[test]
fn bias_shrinks_with_longer_burn_in() {
    let game = random_game(&[2, 2], &[2, 2], 109).unwrap();
    let policies = vec![Policy::uniform(2, 2), Policy::uniform(2, 2)];
    let reports =
        estimator_bias_report(&game, &policies, &[2, 4, 8, 16, 32], 20_000, 11).unwrap();
    for r in &reports {
        assert!(!r.has_violations(), "violations at d = {}", r.burn_in);
    }
    // Max bias at the longest burn-in is within noise of zero and not
    // larger than at the shortest.
    let first = reports.first().unwrap().max_abs_bias();
    let last = reports.last().unwrap().max_abs_bias();
    assert!(last <= first + 0.02, "bias grew from {first} to {last}");
}

#[test]
fn bias_report_rejects_empty_study() {
    let game = random_game(&[1], &[2], 1).unwrap();
    let policies = vec![Policy::uniform(1, 2)];
    assert!(estimator_bias_report(&game, &policies, &[2], 0, 1).is_err());
}

#[test]
fn constant_sum_detection() {
    let zs = zero_sum_two_player([2, 2], [2, 2], 113).unwrap();
    assert_eq!(check_constant_sum(&zs).unwrap(), Some(1.0));

    let rand_game = random_game(&[2, 2], &[2, 2], 127).unwrap();
    assert_eq!(check_constant_sum(&rand_game).unwrap(), None);

    let constants = matrix_game(vec![vec![0.25; 4], vec![0.5; 4]], &[2, 2]);
    let c = check_constant_sum(&constants).unwrap().unwrap();
    assert!((c - 0.75).abs() < 1e-12);
}

#[test]
fn payoff_is_linear_in_own_occupation() {
    // Directional derivative along theta - rho matches <v_i, theta - rho>.
    let game = random_game(&[2, 2], &[2, 2], 131).unwrap();
    let profile = interior_profile(&game, 61);
    let theta = interior_profile(&game, 62);
    let h = 1e-4;
    for i in 0..2 {
        let grad = exact_gradient(&game, &profile, i).unwrap();
        let expected: f64 = theta[i]
            .values()
            .iter()
            .zip(profile[i].values())
            .zip(&grad)
            .map(|((t, r), g)| (t - r) * g)
            .sum();
        let blended: Vec<f64> = profile[i]
            .values()
            .iter()
            .zip(theta[i].values())
            .map(|(r, t)| r + h * (t - r))
            .collect();
        let stepped = OccupationMeasure::from_parts_unchecked(2, 2, blended);
        let v0 = exact_payoff(&game, &profile, i).unwrap();
        let v1 = deviation_payoff(&game, &profile, i, &stepped).unwrap();
        let fd = (v1 - v0) / h;
        assert!(
            (fd - expected).abs() <= 1e-6,
            "directional derivative {fd} vs {expected}"
        );
    }
}
