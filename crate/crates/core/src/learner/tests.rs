use super::*;
use crate::game::{random_game, GameConfig, GeneratorMeta, PlayerChain, RewardOracle};
use crate::occupancy::OccupationPolytope;
use crate::projection::kl_divergence;

fn constant_reward_game(value: f64) -> GameConfig {
    let chain = PlayerChain::identity(1, 2);
    GameConfig::new(
        vec![chain.clone(), chain],
        RewardOracle::Tabular {
            tables: vec![vec![value; 4], vec![value; 4]],
        },
        0,
        GeneratorMeta::Custom,
    )
    .unwrap()
}

fn da_options(episodes: usize, seed: u64) -> LearnerOptions {
    LearnerOptions {
        algo: Algo::DualAveraging {
            regularizer: Regularizer::Quadratic { coeff: 1.0 },
        },
        schedule: Schedule::InversePower { beta: 0.6 },
        burn_in: BurnInSpec::Fixed(2),
        delta: DeltaSpec::Uniform(0.01),
        episodes,
        seed,
        batch: BatchMode::Cover { cap: None },
        tau_override: None,
    }
}

#[test]
fn step_size_examples() {
    assert_eq!(Schedule::ScaledInverse { c: 0.02 }.step_size(1), 0.02);
    assert_eq!(Schedule::InversePower { beta: 1.0 }.step_size(4), 0.25);
    assert_eq!(Schedule::HalfPlus { beta: 0.1 }.step_size(1), 1.0);
}

#[test]
fn schedule_validation() {
    assert!(Schedule::InversePower { beta: 0.5 }.validate().is_err());
    assert!(Schedule::InversePower { beta: 1.0 }.validate().is_ok());
    assert!(Schedule::HalfPlus { beta: 0.0 }.validate().is_err());
    assert!(Schedule::HalfPlus { beta: 0.5 }.validate().is_ok());
    assert!(Schedule::ScaledInverse { c: 0.0 }.validate().is_err());
}

#[test]
fn single_state_batch_ends_right_after_burn_in() {
    let game = constant_reward_game(0.5);
    let policies = vec![Policy::uniform(1, 2), Policy::uniform(1, 2)];
    let mut state = vec![0, 0];
    let mut streams = StreamBank::new(3, 2);
    let d = 7;
    let outcome = run_batch(
        &game,
        &policies,
        &mut state,
        &mut streams,
        d,
        &BatchMode::Cover { cap: None },
        0.0,
    )
    .unwrap();
    assert_eq!(outcome.len, d + 1);
    for r in &outcome.reward_vectors {
        // Exactly one action sampled for the single state: r / pi = 0.5 / 0.5.
        let nonzero: Vec<f64> = r.iter().cloned().filter(|&v| v != 0.0).collect();
        assert_eq!(nonzero, vec![1.0]);
    }
}

#[test]
fn estimator_has_at_most_one_entry_per_state() {
    let game = random_game(&[3, 2], &[2, 3], 5).unwrap();
    let policies = vec![Policy::uniform(3, 2), Policy::uniform(2, 3)];
    let mut state = vec![0, 0];
    let mut streams = StreamBank::new(9, 2);
    for _ in 0..50 {
        let outcome = run_batch(
            &game,
            &policies,
            &mut state,
            &mut streams,
            2,
            &BatchMode::Cover { cap: None },
            0.0,
        )
        .unwrap();
        for (i, r) in outcome.reward_vectors.iter().enumerate() {
            let chain = game.player(i);
            for s in 0..chain.n_states() {
                let nonzero = (0..chain.n_actions())
                    .filter(|&a| r[s * chain.n_actions() + a] != 0.0)
                    .count();
                assert!(nonzero <= 1, "state {s} has {nonzero} sampled actions");
            }
            assert_eq!(outcome.uncovered[i], 0);
        }
    }
}

#[test]
fn cover_cap_aborts_run_with_partial_log() {
    let game = random_game(&[4], &[2], 13).unwrap();
    let mut opts = da_options(10, 1);
    opts.batch = BatchMode::Cover { cap: Some(0) };
    let outcome = run(&game, &opts, &LogOptions::default()).unwrap();
    assert!(matches!(
        outcome.abort,
        Some(AbortReason::BatchCapExceeded { .. })
    ));
    assert!(outcome.log.episodes.len() < 10);
}

#[test]
fn fixed_length_mode_reports_uncovered_states() {
    let game = random_game(&[5], &[2], 17).unwrap();
    let policies = vec![Policy::uniform(5, 2)];
    let mut state = vec![0];
    let mut streams = StreamBank::new(2, 1);
    let outcome = run_batch(
        &game,
        &policies,
        &mut state,
        &mut streams,
        3,
        &BatchMode::FixedLength { len: 4 },
        0.0,
    )
    .unwrap();
    assert_eq!(outcome.len, 4);
    // One sampling step can cover exactly one state.
    assert_eq!(outcome.uncovered[0], 4);
}

#[test]
fn da_update_with_zero_reward_is_identity() {
    let game = random_game(&[2], &[2], 21).unwrap();
    let polytope = OccupationPolytope::from_chain(game.player(0)).shrink(0.05).unwrap();
    let uniform = vec![0.25; 4];
    let rho = crate::projection::euclidean_project(&polytope, &uniform).unwrap();
    let mut learner = PlayerLearner::new(rho.clone());
    let reg = Regularizer::Quadratic { coeff: 2.0 };
    da_update(&mut learner, &[0.0; 4], 0.5, &polytope, &reg).unwrap();
    assert_eq!(learner.dual_score, vec![0.0; 4]);
    for (a, b) in learner.rho.values().iter().zip(rho.values()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn da_update_on_shrunk_simplex_closed_form() {
    // Single state, two actions, coeff 1/2: the argmax is the projection of
    // the dual score itself; (1, 0) projects to (0.9, 0.1) on the
    // 0.1-shrunk simplex.
    let chain = PlayerChain::identity(1, 2);
    let polytope = OccupationPolytope::from_chain(&chain).shrink(0.1).unwrap();
    let rho = crate::projection::euclidean_project(&polytope, &[0.5, 0.5]).unwrap();
    let mut learner = PlayerLearner::new(rho);
    let reg = Regularizer::Quadratic { coeff: 0.5 };
    da_update(&mut learner, &[1.0, 0.0], 1.0, &polytope, &reg).unwrap();
    assert!((learner.rho.value(0, 0) - 0.9).abs() < 1e-9);
    assert!((learner.rho.value(0, 1) - 0.1).abs() < 1e-9);
}

#[test]
fn md_update_with_zero_reward_is_identity() {
    let game = random_game(&[2], &[2], 23).unwrap();
    let polytope = OccupationPolytope::from_chain(game.player(0));
    let shrunk = polytope.shrink(0.05).unwrap();
    let rho = crate::projection::euclidean_project(&shrunk, &[0.25; 4]).unwrap();
    let mut learner = PlayerLearner::new(rho.clone());
    md_update(&mut learner, &[0.0; 4], 0.3, &polytope).unwrap();
    for (a, b) in learner.rho.values().iter().zip(rho.values()) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn md_update_on_simplex_is_multiplicative_weights() {
    let chain = PlayerChain::identity(1, 2);
    let polytope = OccupationPolytope::from_chain(&chain);
    let rho = polytope.measure(vec![0.5, 0.5]).unwrap();
    let mut learner = PlayerLearner::new(rho);
    let reward = [-0.2, -0.5];
    md_update(&mut learner, &reward, 1.0, &polytope).unwrap();
    let z = 0.5 * (-0.2f64).exp() + 0.5 * (-0.5f64).exp();
    assert!((learner.rho.value(0, 0) - 0.5 * (-0.2f64).exp() / z).abs() < 1e-9);
    assert!((learner.rho.value(0, 1) - 0.5 * (-0.5f64).exp() / z).abs() < 1e-9);
}

#[test]
fn md_update_rejects_positive_rewards() {
    let chain = PlayerChain::identity(1, 2);
    let polytope = OccupationPolytope::from_chain(&chain);
    let rho = polytope.measure(vec![0.5, 0.5]).unwrap();
    let mut learner = PlayerLearner::new(rho);
    assert!(md_update(&mut learner, &[0.5, 0.0], 1.0, &polytope).is_err());
}

#[test]
fn md_step_satisfies_descent_inequality() {
    // Along recorded mirror-descent steps, for feasible z and nonpositive g:
    // KL(z, next) - KL(z, cur) <= <g, cur - z> + 0.5 <g^2, cur>.
    let game = random_game(&[2], &[2], 29).unwrap();
    let polytope = OccupationPolytope::from_chain(game.player(0));
    let shrunk = polytope.shrink(0.02).unwrap();
    let z = crate::projection::euclidean_project(&shrunk, &[0.3, 0.1, 0.4, 0.2]).unwrap();
    let start = crate::projection::euclidean_project(&shrunk, &[0.25; 4]).unwrap();
    let mut learner = PlayerLearner::new(start);
    let mut rng = StreamBank::new(31, 1);
    for _ in 0..1000 {
        let g: Vec<f64> = (0..4)
            .map(|_| -rand::Rng::random::<f64>(rng.nature()))
            .collect();
        let cur = learner.rho.clone();
        md_update(&mut learner, &g, 1.0, &polytope).unwrap();
        let lhs = kl_divergence(z.values(), learner.rho.values())
            - kl_divergence(z.values(), cur.values());
        let rhs: f64 = g
            .iter()
            .zip(cur.values().iter().zip(z.values()))
            .map(|(gi, (c, zi))| gi * (c - zi))
            .sum::<f64>()
            + 0.5
                * g.iter()
                    .zip(cur.values())
                    .map(|(gi, c)| gi * gi * c)
                    .sum::<f64>();
        assert!(lhs <= rhs + 1e-7, "descent inequality violated: {lhs} > {rhs}");
    }
}

#[test]
fn zero_reward_game_keeps_iterates_constant() {
    let game = constant_reward_game(0.0);
    for algo in [
        Algo::DualAveraging {
            regularizer: Regularizer::Quadratic { coeff: 1.0 },
        },
        Algo::MirrorDescent,
    ] {
        let mut opts = da_options(5, 7);
        opts.algo = algo;
        let outcome = run(&game, &opts, &LogOptions::default()).unwrap();
        assert!(outcome.abort.is_none());
        let first = &outcome.log.iterates.first().unwrap().rho;
        let last = &outcome.log.iterates.last().unwrap().rho;
        for (a, b) in first.iter().flatten().zip(last.iter().flatten()) {
            assert!((a - b).abs() < 1e-9, "iterate drifted under zero rewards");
        }
    }
}

#[test]
fn averaged_iterate_matches_direct_recomputation() {
    let game = random_game(&[2, 2], &[2, 2], 41).unwrap();
    let opts = da_options(30, 11);
    let outcome = run(&game, &opts, &LogOptions::default()).unwrap();
    let log = &outcome.log;
    assert_eq!(log.iterates.len(), 30);
    let mut acc = vec![vec![0.0; 4], vec![0.0; 4]];
    let mut w = 0.0;
    for (snap, rec) in log.iterates.iter().zip(&log.episodes) {
        assert_eq!(snap.episode, rec.episode);
        w += rec.eta;
        for i in 0..2 {
            for (a, &v) in acc[i].iter_mut().zip(&snap.rho[i]) {
                *a += rec.eta * v;
            }
        }
    }
    for i in 0..2 {
        for (direct, &incremental) in acc[i].iter().map(|v| v / w).zip(&log.rho_bar[i]) {
            assert!((direct - incremental).abs() <= 1e-10);
        }
    }
}

#[test]
fn iterates_stay_in_shrunk_polytope() {
    let game = random_game(&[3, 2], &[2, 2], 43).unwrap();
    let opts = da_options(40, 13);
    let outcome = run(&game, &opts, &LogOptions::default()).unwrap();
    let polytopes: Vec<OccupationPolytope> = game
        .players()
        .iter()
        .map(|c| OccupationPolytope::from_chain(c).shrink(0.01).unwrap())
        .collect();
    for snap in &outcome.log.iterates {
        for (i, rho) in snap.rho.iter().enumerate() {
            assert!(polytopes[i].membership_residual(rho) <= 1e-8);
            assert!(rho.iter().all(|&v| v >= 0.01 - 1e-9));
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let game = random_game(&[2, 3], &[3, 2], 47).unwrap();
    let a = run(&game, &da_options(25, 99), &LogOptions::default()).unwrap();
    let b = run(&game, &da_options(25, 99), &LogOptions::default()).unwrap();
    let ja = serde_json::to_string(&a.log).unwrap();
    let jb = serde_json::to_string(&b.log).unwrap();
    assert_eq!(ja, jb);

    let c = run(&game, &da_options(25, 100), &LogOptions::default()).unwrap();
    assert_ne!(ja, serde_json::to_string(&c.log).unwrap());
}

#[test]
fn checkpoint_resume_is_bit_identical() {
    let game = random_game(&[2, 2], &[2, 2], 53).unwrap();
    let opts = da_options(20, 5);

    let full = run(&game, &opts, &LogOptions::default()).unwrap();

    let mut half_opts = opts.clone();
    half_opts.episodes = 10;
    let mut saved: Option<Checkpoint> = None;
    let first = run_with(&game, &half_opts, &LogOptions::default(), |view| {
        if view.episode() == 10 {
            saved = Some(view.checkpoint());
        }
        Ok(())
    })
    .unwrap();
    let ckpt = saved.expect("checkpoint at episode 10");

    let resumed = resume_with(&game, &opts, &LogOptions::default(), &ckpt, |_| Ok(())).unwrap();

    let merged: Vec<&EpisodeRecord> = first
        .log
        .episodes
        .iter()
        .chain(resumed.log.episodes.iter())
        .collect();
    assert_eq!(merged.len(), full.log.episodes.len());
    for (m, f) in merged.iter().zip(&full.log.episodes) {
        assert_eq!(
            serde_json::to_string(m).unwrap(),
            serde_json::to_string(f).unwrap()
        );
    }
    assert_eq!(
        serde_json::to_string(&resumed.log.final_rho).unwrap(),
        serde_json::to_string(&full.log.final_rho).unwrap()
    );
    assert_eq!(
        serde_json::to_string(&resumed.log.rho_bar).unwrap(),
        serde_json::to_string(&full.log.rho_bar).unwrap()
    );
}

#[test]
fn checkpoint_rejects_mismatched_config() {
    let game = random_game(&[2, 2], &[2, 2], 53).unwrap();
    let opts = da_options(10, 5);
    let mut saved = None;
    run_with(&game, &opts, &LogOptions::default(), |view| {
        if saved.is_none() {
            saved = Some(view.checkpoint());
        }
        Ok(())
    })
    .unwrap();
    let ckpt = saved.unwrap();

    let other_game = random_game(&[2, 2], &[2, 2], 54).unwrap();
    let err = resume_with(&other_game, &opts, &LogOptions::default(), &ckpt, |_| Ok(()))
        .unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)));
}

#[test]
fn burn_in_auto_follows_mixing_estimate() {
    let game = random_game(&[2, 2], &[2, 2], 57).unwrap();
    let mut opts = da_options(1, 1);
    opts.burn_in = BurnInSpec::Auto { epsilon: 0.05 };
    opts.tau_override = Some(2.0);
    let setup = RunSetup::prepare(&game, &opts).unwrap();
    let sum_dims = 8.0_f64;
    let expected = (2.0 * (6.0 * 2.0 / 0.05 * sum_dims).ln()).ceil() as usize;
    assert_eq!(setup.burn_in, expected);
    assert_eq!(setup.tau_hat, 2.0);
}

#[test]
fn default_cover_cap_scales_with_mixing_and_states() {
    let game = random_game(&[4, 2], &[2, 2], 59).unwrap();
    let mut opts = da_options(1, 1);
    opts.tau_override = Some(3.0);
    let setup = RunSetup::prepare(&game, &opts).unwrap();
    assert_eq!(setup.batch_cap, Some((50.0_f64 * 3.0 * 4.0).ceil() as usize));
}
