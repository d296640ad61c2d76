//! The episodic batch learner.
//!
//! Players repeatedly play the stochastic game in batches. A batch plays the
//! current stationary policies, waits out a burn-in of `d` steps, then runs
//! until every player has visited all of its own states; the first visit to
//! each state contributes the importance-weighted reward `r / pi(a|s)` to
//! that player's reward vector. At the end of the batch each player folds
//! the reward vector into its dual score and maps the score back to an
//! occupation measure, either through the quadratic-regularizer argmax
//! (dual averaging) or the two-step multiplicative-weights/KL-projection
//! update (mirror descent).
//!
//! The centralized simulator realizes the batch-end synchronization
//! (`max` over per-player cover times) exactly; a fixed-length batch mode
//! drops the synchronization and logs how many states went uncovered.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{sample_action, GameConfig, Policy};
use crate::metrics;
use crate::occupancy::{
    compute_delta, mixing_time_bound, policy_from_occupation, OccupationMeasure,
    OccupationPolytope,
};
use crate::projection::{
    euclidean_project, euclidean_project_diagnostics, kl_project, kl_simplex_step, KktInfo,
    Regularizer,
};
use crate::rng::StreamBank;

/// Policy rows produced by the mirror-descent path are floored here to keep
/// importance weights finite.
pub const POLICY_FLOOR: f64 = 1e-12;

/// Which update maps dual scores to occupation measures.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub enum Algo {
    /// Dual averaging: accumulate scores, argmax with a quadratic
    /// regularizer over the shrunk polytope.
    DualAveraging { regularizer: Regularizer },
    /// Mirror descent: multiplicative-weights step then KL projection onto
    /// the unshrunk polytope, with rewards shifted to `[-1, 0]`.
    MirrorDescent,
}

impl Algo {
    /// Shift added to raw rewards inside the estimator.
    pub fn reward_shift(&self) -> f64 {
        match self {
            Algo::DualAveraging { .. } => 0.0,
            Algo::MirrorDescent => -1.0,
        }
    }
}

/// Step-size schedules `eta_l` for episode `l = 1, 2, ...`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub enum Schedule {
    /// `eta_l = l^-beta` with `beta` in `(1/2, 1]`.
    InversePower { beta: f64 },
    /// `eta_l = l^-(1/2 + beta)` with `beta` in `(0, 1/2]`.
    HalfPlus { beta: f64 },
    /// `eta_l = c / l` with `c > 0`.
    ScaledInverse { c: f64 },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            Schedule::InversePower { beta } if !(*beta > 0.5 && *beta <= 1.0) => Err(
                Error::invalid("inverse-power schedule needs beta in (1/2, 1]"),
            ),
            Schedule::HalfPlus { beta } if !(*beta > 0.0 && *beta <= 0.5) => Err(
                Error::invalid("half-plus schedule needs beta in (0, 1/2]"),
            ),
            Schedule::ScaledInverse { c } if *c <= 0.0 => {
                Err(Error::invalid("scaled-inverse schedule needs c > 0"))
            }
            _ => Ok(()),
        }
    }

    /// The step size for 1-based episode index `ell`.
    pub fn step_size(&self, ell: usize) -> f64 {
        assert!(ell >= 1, "episodes are 1-based");
        let l = ell as f64;
        match self {
            Schedule::InversePower { beta } => l.powf(-beta),
            Schedule::HalfPlus { beta } => l.powf(-(0.5 + beta)),
            Schedule::ScaledInverse { c } => c / l,
        }
    }
}

/// How a batch ends.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub enum BatchMode {
    /// Run until every player covers its states; `cap` bounds the number of
    /// post-burn-in steps (`None` = unlimited).
    Cover { cap: Option<usize> },
    /// Run exactly `len` steps regardless of coverage; uncovered states
    /// leave zero estimator coordinates and are counted in the outcome.
    FixedLength { len: usize },
}

/// Everything one batch produced.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    /// Importance-weighted reward vectors, one per player, at most one
    /// nonzero coordinate per state.
    pub reward_vectors: Vec<Vec<f64>>,
    /// Steps played in the batch (burn-in included).
    pub len: usize,
    /// Per-player sum of realized rewards over the whole batch.
    pub reward_sums: Vec<f64>,
    /// Per-player sum of realized rewards over the post-burn-in phase.
    pub sampling_sums: Vec<f64>,
    /// Per-player count of states never visited after burn-in.
    pub uncovered: Vec<usize>,
}

/// Plays one batch from `state`, which is advanced in place.
///
/// Coverage bookkeeping and estimator accumulation start after `d` burn-in
/// steps. In cover mode the batch ends once every player has visited all of
/// its states (the simulator keeps already-covered players playing until the
/// global maximum); `reward_shift` is added to raw rewards inside the
/// estimator only.
pub fn run_batch(
    game: &GameConfig,
    policies: &[Policy],
    state: &mut Vec<usize>,
    streams: &mut StreamBank,
    d: usize,
    mode: &BatchMode,
    reward_shift: f64,
) -> Result<BatchOutcome> {
    let n = game.n_players();
    if policies.len() != n || state.len() != n {
        return Err(Error::invalid("one policy and one state per player required"));
    }
    if d == 0 {
        return Err(Error::invalid("burn-in must be at least 1"));
    }
    if let BatchMode::FixedLength { len } = mode {
        if *len <= d {
            return Err(Error::invalid("fixed batch length must exceed the burn-in"));
        }
    }

    let dims: Vec<usize> = game.players().iter().map(|p| p.dim()).collect();
    let mut reward_vectors: Vec<Vec<f64>> = dims.iter().map(|&k| vec![0.0; k]).collect();
    let mut reward_sums = vec![0.0; n];
    let mut sampling_sums = vec![0.0; n];
    let mut unvisited: Vec<Vec<bool>> = game
        .players()
        .iter()
        .map(|p| vec![true; p.n_states()])
        .collect();
    let mut remaining: Vec<usize> = game.players().iter().map(|p| p.n_states()).collect();

    let mut actions = vec![0usize; n];
    let mut len = 0usize;
    loop {
        for i in 0..n {
            actions[i] = sample_action(&policies[i], state[i], streams.player(i))?;
        }
        if len >= d {
            for i in 0..n {
                let r = game.reward(state, &actions, i);
                reward_sums[i] += r;
                sampling_sums[i] += r;
                let s = state[i];
                if unvisited[i][s] {
                    unvisited[i][s] = false;
                    remaining[i] -= 1;
                    let a = actions[i];
                    let p = policies[i].prob(s, a);
                    reward_vectors[i][s * game.player(i).n_actions() + a] +=
                        (r + reward_shift) / p;
                }
            }
        } else {
            for i in 0..n {
                reward_sums[i] += game.reward(state, &actions, i);
            }
        }
        *state = game.step(state, &actions, streams)?;
        len += 1;

        match mode {
            BatchMode::Cover { cap } => {
                if len > d && remaining.iter().all(|&r| r == 0) {
                    break;
                }
                if let Some(cap) = cap {
                    if len.saturating_sub(d) > *cap {
                        return Err(Error::BatchCapExceeded {
                            episode: 0,
                            len: len - d,
                            cap: *cap,
                        });
                    }
                }
            }
            BatchMode::FixedLength { len: fixed } => {
                if len == *fixed {
                    break;
                }
            }
        }
    }
    Ok(BatchOutcome {
        reward_vectors,
        len,
        reward_sums,
        sampling_sums,
        uncovered: remaining,
    })
}

/// One player's learning state.
#[derive(Debug, Clone)]
pub struct PlayerLearner {
    pub dual_score: Vec<f64>,
    pub rho: OccupationMeasure,
    pub policy: Policy,
    /// Zero-marginal states that fell back to uniform policy rows.
    pub zero_row_events: usize,
    /// Mirror-descent policy rows that hit the positivity floor.
    pub floor_events: usize,
}

impl PlayerLearner {
    fn new(rho: OccupationMeasure) -> Self {
        let (policy, flagged) = policy_from_occupation(&rho);
        PlayerLearner {
            dual_score: vec![0.0; rho.dim()],
            rho,
            policy,
            zero_row_events: flagged.len(),
            floor_events: 0,
        }
    }

    fn refresh_policy(&mut self) {
        let (policy, flagged) = policy_from_occupation(&self.rho);
        self.zero_row_events += flagged.len();
        self.policy = policy;
    }

    fn refresh_policy_floored(&mut self) {
        self.refresh_policy();
        let n_states = self.policy.n_states();
        let n_actions = self.policy.n_actions();
        let mut rows: Vec<f64> = Vec::with_capacity(n_states * n_actions);
        let mut floored = false;
        for s in 0..n_states {
            let row = self.policy.row(s);
            if row.iter().any(|&p| p < POLICY_FLOOR) {
                floored = true;
                let lifted: Vec<f64> = row.iter().map(|&p| p.max(POLICY_FLOOR)).collect();
                let total: f64 = lifted.iter().sum();
                rows.extend(lifted.into_iter().map(|p| p / total));
            } else {
                rows.extend_from_slice(row);
            }
        }
        if floored {
            self.floor_events += 1;
            self.policy = Policy::from_rows_unchecked(n_states, n_actions, rows);
        }
    }
}

/// Dual-averaging update: fold the reward vector into the dual score and
/// argmax over the shrunk polytope. Returns the projection's KKT residuals.
pub fn da_update(
    learner: &mut PlayerLearner,
    reward_vector: &[f64],
    eta: f64,
    shrunk: &OccupationPolytope,
    regularizer: &Regularizer,
) -> Result<KktInfo> {
    regularizer.validate()?;
    let coeff = match regularizer {
        Regularizer::Quadratic { coeff } => *coeff,
        Regularizer::NegativeEntropy => {
            return Err(Error::invalid(
                "entropy regularizer is handled by the mirror-descent path",
            ))
        }
    };
    for (y, r) in learner.dual_score.iter_mut().zip(reward_vector) {
        *y += eta * r;
    }
    let scaled: Vec<f64> = learner
        .dual_score
        .iter()
        .map(|&y| y / (2.0 * coeff))
        .collect();
    let (rho, kkt) = euclidean_project_diagnostics(shrunk, &scaled)?;
    learner.rho = rho;
    learner.refresh_policy();
    Ok(kkt)
}

/// Mirror-descent update: multiplicative-weights step with the (shifted,
/// nonpositive) scaled reward vector, then KL projection onto the unshrunk
/// polytope.
pub fn md_update(
    learner: &mut PlayerLearner,
    reward_vector: &[f64],
    eta: f64,
    unshrunk: &OccupationPolytope,
) -> Result<()> {
    let g: Vec<f64> = reward_vector.iter().map(|&r| eta * r).collect();
    if g.iter().any(|&v| v > 1e-12) {
        return Err(Error::invalid(
            "mirror-descent rewards must be shifted to [-1, 0]",
        ));
    }
    let half = kl_simplex_step(&learner.rho, &g)?;
    learner.rho = kl_project(unshrunk, &half)?;
    for (y, r) in learner.dual_score.iter_mut().zip(reward_vector) {
        *y += eta * r;
    }
    learner.refresh_policy_floored();
    Ok(())
}

/// Burn-in specification.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub enum BurnInSpec {
    Fixed(usize),
    /// `d = ceil(tau * ln((6 n / epsilon) * sum_i |A_i||S_i|))`.
    Auto { epsilon: f64 },
}

/// Shrink-parameter specification.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum DeltaSpec {
    PerPlayer(Vec<f64>),
    Uniform(f64),
    /// Per-player constructive search at the given accuracy.
    Auto { epsilon: f64 },
}

/// Logging knobs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LogOptions {
    /// Keep every `thin`-th iterate in the log (0 disables iterate storage).
    pub thin: usize,
    /// Evaluate equilibrium gaps every this many episodes (None disables).
    pub gap_cadence: Option<usize>,
    /// Record the worst per-episode projection KKT residual.
    pub record_kkt: bool,
}

impl Default for LogOptions {
    fn default() -> Self {
        LogOptions {
            thin: 1,
            gap_cadence: None,
            record_kkt: false,
        }
    }
}

/// Full configuration of a learning run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnerOptions {
    pub algo: Algo,
    pub schedule: Schedule,
    pub burn_in: BurnInSpec,
    pub delta: DeltaSpec,
    pub episodes: usize,
    pub seed: u64,
    pub batch: BatchMode,
    pub tau_override: Option<f64>,
}

/// One episode's log record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// 1-based episode index.
    pub episode: usize,
    pub start_time: u64,
    /// Exclusive end time; `end - start` is the batch length.
    pub end_time: u64,
    pub eta: f64,
    /// Per-player mean realized reward over the whole batch.
    pub mean_reward: Vec<f64>,
    /// Per-player mean realized reward excluding the burn-in.
    pub mean_reward_sampling: Vec<f64>,
    /// Per-player count of states left uncovered (fixed-length mode).
    pub uncovered: Vec<usize>,
    /// Worst projection KKT residual of the episode, when recorded.
    pub kkt_worst: Option<f64>,
}

impl EpisodeRecord {
    pub fn batch_len(&self) -> u64 {
        self.end_time - self.start_time
    }
}

/// A stored iterate profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterateSnapshot {
    pub episode: usize,
    pub rho: Vec<Vec<f64>>,
}

/// A gap evaluation point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapEval {
    pub episode: usize,
    /// Weight-averaged gap of the trajectory up to this episode.
    pub averaged_gap: f64,
    /// Gap of the weighted-average iterate.
    pub rho_bar_gap: f64,
}

/// Everything a run produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub tau_hat: f64,
    pub burn_in: usize,
    pub deltas: Vec<f64>,
    /// Post-burn-in batch length cap in cover mode.
    pub batch_cap: Option<usize>,
    pub episodes: Vec<EpisodeRecord>,
    pub iterates: Vec<IterateSnapshot>,
    pub gap_evals: Vec<GapEval>,
    /// Final weighted-average occupation profile.
    pub rho_bar: Vec<Vec<f64>>,
    /// Total schedule weight of the averaged iterates.
    pub weight_total: f64,
    pub final_rho: Vec<Vec<f64>>,
    pub zero_row_events: usize,
    pub floor_events: usize,
}

/// Why a run stopped early.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum AbortReason {
    BatchCapExceeded { episode: usize, len: usize, cap: usize },
}

/// A finished (or aborted-with-partial-log) run.
#[derive(Debug)]
pub struct RunOutcome {
    pub log: TrajectoryLog,
    pub abort: Option<AbortReason>,
}

/// Resumable snapshot of the learner between episodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub episode: usize,
    pub global_time: u64,
    pub joint_state: Vec<usize>,
    pub dual_scores: Vec<Vec<f64>>,
    pub rho: Vec<Vec<f64>>,
    pub rho_bar_acc: Vec<Vec<f64>>,
    pub weight_total: f64,
    pub gap_grad_acc: Option<Vec<Vec<f64>>>,
    pub gap_value_acc: Option<Vec<f64>>,
    /// Stream word positions as decimal strings (nature first).
    pub rng_positions: Vec<String>,
    pub config_hash: String,
}

/// FNV-1a over a byte string; used to fingerprint configurations.
pub fn fingerprint(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}

/// Fingerprint of a game plus the run options that shape its trajectory.
pub fn config_fingerprint(game: &GameConfig, opts: &LearnerOptions) -> String {
    let game_json = game.to_json().unwrap_or_default();
    let opts_json = serde_json::to_string(&(
        &opts.algo,
        &opts.schedule,
        &opts.burn_in,
        &opts.delta,
        opts.seed,
        &opts.batch,
        &opts.tau_override,
    ))
    .unwrap_or_default();
    fingerprint(format!("{game_json}|{opts_json}").as_bytes())
}

/// Derived run-wide quantities.
pub struct RunSetup {
    pub tau_hat: f64,
    pub burn_in: usize,
    pub deltas: Vec<f64>,
    pub batch_cap: Option<usize>,
    pub shrunk: Vec<OccupationPolytope>,
    pub unshrunk: Vec<OccupationPolytope>,
    pub initial_rho: Vec<OccupationMeasure>,
}

impl RunSetup {
    pub fn prepare(game: &GameConfig, opts: &LearnerOptions) -> Result<Self> {
        opts.schedule.validate()?;
        let n = game.n_players();

        let tau_hat = match opts.tau_override {
            Some(tau) if tau >= 1.0 => tau,
            Some(_) => return Err(Error::invalid("tau override must be at least 1")),
            None => {
                let mut worst = 1.0_f64;
                for chain in game.players() {
                    worst = worst.max(mixing_time_bound(chain)?.tau);
                }
                worst
            }
        };

        let sum_dims: usize = game.players().iter().map(|p| p.dim()).sum();
        let burn_in = match opts.burn_in {
            BurnInSpec::Fixed(d) if d >= 1 => d,
            BurnInSpec::Fixed(_) => return Err(Error::invalid("burn-in must be at least 1")),
            BurnInSpec::Auto { epsilon } => {
                if !(epsilon > 0.0 && epsilon < 1.0) {
                    return Err(Error::invalid("auto burn-in needs epsilon in (0, 1)"));
                }
                let arg = (6.0 * n as f64 / epsilon) * sum_dims as f64;
                (tau_hat * arg.ln()).ceil().max(1.0) as usize
            }
        };

        let deltas: Vec<f64> = match &opts.delta {
            DeltaSpec::PerPlayer(v) => {
                if v.len() != n {
                    return Err(Error::invalid("one delta per player required"));
                }
                v.clone()
            }
            DeltaSpec::Uniform(d) => vec![*d; n],
            DeltaSpec::Auto { epsilon } => game
                .players()
                .iter()
                .map(|chain| compute_delta(chain, *epsilon))
                .collect::<Result<Vec<_>>>()?,
        };

        let unshrunk: Vec<OccupationPolytope> = game
            .players()
            .iter()
            .map(OccupationPolytope::from_chain)
            .collect();
        let shrunk: Vec<OccupationPolytope> = unshrunk
            .iter()
            .zip(&deltas)
            .enumerate()
            .map(|(i, (p, &d))| p.shrink_for_player(d, i))
            .collect::<Result<Vec<_>>>()?;

        let max_states = game.players().iter().map(|p| p.n_states()).max().unwrap();
        let batch_cap = match opts.batch {
            BatchMode::Cover { cap } => {
                Some(cap.unwrap_or((50.0 * tau_hat * max_states as f64).ceil() as usize))
            }
            BatchMode::FixedLength { .. } => None,
        };

        // Initial iterate: projection of the uniform vector onto the shrunk
        // polytope (deterministic and symmetric).
        let initial_rho = shrunk
            .iter()
            .map(|p| {
                let uniform = vec![1.0 / p.dim() as f64; p.dim()];
                euclidean_project(p, &uniform)
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(RunSetup {
            tau_hat,
            burn_in,
            deltas,
            batch_cap,
            shrunk,
            unshrunk,
            initial_rho,
        })
    }
}

struct RunCore {
    players: Vec<PlayerLearner>,
    streams: StreamBank,
    joint_state: Vec<usize>,
    episode: usize,
    global_time: u64,
    rho_bar_acc: Vec<Vec<f64>>,
    weight_total: f64,
    gap_grad_acc: Option<Vec<Vec<f64>>>,
    gap_value_acc: Option<Vec<f64>>,
    config_hash: String,
}

impl RunCore {
    fn fresh(game: &GameConfig, setup: &RunSetup, opts: &LearnerOptions) -> Self {
        let players: Vec<PlayerLearner> = setup
            .initial_rho
            .iter()
            .map(|rho| PlayerLearner::new(rho.clone()))
            .collect();
        RunCore {
            rho_bar_acc: players.iter().map(|p| vec![0.0; p.rho.dim()]).collect(),
            gap_grad_acc: None,
            gap_value_acc: None,
            players,
            streams: StreamBank::new(opts.seed, game.n_players()),
            joint_state: vec![0; game.n_players()],
            episode: 0,
            global_time: 0,
            weight_total: 0.0,
            config_hash: config_fingerprint(game, opts),
        }
    }

    fn from_checkpoint(
        game: &GameConfig,
        setup: &RunSetup,
        opts: &LearnerOptions,
        ckpt: &Checkpoint,
    ) -> Result<Self> {
        let expected = config_fingerprint(game, opts);
        if ckpt.config_hash != expected {
            return Err(Error::Checkpoint(format!(
                "configuration hash mismatch: checkpoint {}, current {}",
                ckpt.config_hash, expected
            )));
        }
        let n = game.n_players();
        if ckpt.rho.len() != n || ckpt.dual_scores.len() != n || ckpt.joint_state.len() != n {
            return Err(Error::Checkpoint("player count mismatch".into()));
        }
        let mut players = Vec::with_capacity(n);
        for i in 0..n {
            let rho = match opts.algo {
                Algo::DualAveraging { .. } => setup.shrunk[i].measure(ckpt.rho[i].clone()),
                Algo::MirrorDescent => setup.unshrunk[i].measure(ckpt.rho[i].clone()),
            }
            .map_err(|e| Error::Checkpoint(format!("iterate {i} invalid: {e}")))?;
            let mut learner = PlayerLearner::new(rho);
            learner.dual_score = ckpt.dual_scores[i].clone();
            if matches!(opts.algo, Algo::MirrorDescent) {
                learner.refresh_policy_floored();
            }
            players.push(learner);
        }
        let mut streams = StreamBank::new(opts.seed, n);
        let positions = ckpt
            .rng_positions
            .iter()
            .map(|s| {
                s.parse::<u128>()
                    .map_err(|_| Error::Checkpoint("bad stream position".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        streams.restore_positions(&positions)?;
        Ok(RunCore {
            players,
            streams,
            joint_state: ckpt.joint_state.clone(),
            episode: ckpt.episode,
            global_time: ckpt.global_time,
            rho_bar_acc: ckpt.rho_bar_acc.clone(),
            weight_total: ckpt.weight_total,
            gap_grad_acc: ckpt.gap_grad_acc.clone(),
            gap_value_acc: ckpt.gap_value_acc.clone(),
            config_hash: ckpt.config_hash.clone(),
        })
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            episode: self.episode,
            global_time: self.global_time,
            joint_state: self.joint_state.clone(),
            dual_scores: self.players.iter().map(|p| p.dual_score.clone()).collect(),
            rho: self
                .players
                .iter()
                .map(|p| p.rho.values().to_vec())
                .collect(),
            rho_bar_acc: self.rho_bar_acc.clone(),
            weight_total: self.weight_total,
            gap_grad_acc: self.gap_grad_acc.clone(),
            gap_value_acc: self.gap_value_acc.clone(),
            rng_positions: self
                .streams
                .positions()
                .iter()
                .map(|p| p.to_string())
                .collect(),
            config_hash: self.config_hash.clone(),
        }
    }

    fn rho_bar(&self) -> Vec<Vec<f64>> {
        self.rho_bar_acc
            .iter()
            .map(|acc| acc.iter().map(|&v| v / self.weight_total.max(f64::MIN_POSITIVE)).collect())
            .collect()
    }
}

fn gap_enabled(logging: &LogOptions) -> bool {
    matches!(logging.gap_cadence, Some(m) if m > 0)
}

/// A view of the run handed to per-episode observers.
pub struct EpisodeView<'a> {
    pub record: &'a EpisodeRecord,
    core: &'a RunCore,
    pub rho_bar_current: Vec<Vec<f64>>,
}

impl EpisodeView<'_> {
    pub fn checkpoint(&self) -> Checkpoint {
        self.core.checkpoint()
    }

    pub fn episode(&self) -> usize {
        self.core.episode
    }
}

/// Runs `episodes` episodes of the learner.
pub fn run(game: &GameConfig, opts: &LearnerOptions, logging: &LogOptions) -> Result<RunOutcome> {
    run_with(game, opts, logging, |_| Ok(()))
}

/// [`run`] with a per-episode observer (CSV writers, checkpointing).
pub fn run_with<F>(
    game: &GameConfig,
    opts: &LearnerOptions,
    logging: &LogOptions,
    observer: F,
) -> Result<RunOutcome>
where
    F: FnMut(&EpisodeView<'_>) -> Result<()>,
{
    let setup = RunSetup::prepare(game, opts)?;
    let core = RunCore::fresh(game, &setup, opts);
    drive(game, opts, logging, setup, core, observer)
}

/// Resumes a checkpointed run and continues to `opts.episodes`.
pub fn resume_with<F>(
    game: &GameConfig,
    opts: &LearnerOptions,
    logging: &LogOptions,
    checkpoint: &Checkpoint,
    observer: F,
) -> Result<RunOutcome>
where
    F: FnMut(&EpisodeView<'_>) -> Result<()>,
{
    let setup = RunSetup::prepare(game, opts)?;
    let core = RunCore::from_checkpoint(game, &setup, opts, checkpoint)?;
    drive(game, opts, logging, setup, core, observer)
}

fn drive<F>(
    game: &GameConfig,
    opts: &LearnerOptions,
    logging: &LogOptions,
    setup: RunSetup,
    mut core: RunCore,
    mut observer: F,
) -> Result<RunOutcome>
where
    F: FnMut(&EpisodeView<'_>) -> Result<()>,
{
    let gap_on = gap_enabled(logging);
    if gap_on {
        // Gap evaluation needs exact oracles.
        let size = game.joint_size();
        if size > game.enumeration_cap() {
            return Err(Error::EnumerationTooLarge {
                size,
                cap: game.enumeration_cap(),
            });
        }
        if core.gap_grad_acc.is_none() {
            if core.episode > 0 {
                return Err(Error::Checkpoint(
                    "cannot enable gap evaluation when resuming a run without gap accumulators"
                        .into(),
                ));
            }
            core.gap_grad_acc =
                Some(core.players.iter().map(|p| vec![0.0; p.rho.dim()]).collect());
            core.gap_value_acc = Some(vec![0.0; core.players.len()]);
        }
    }

    let shift = opts.algo.reward_shift();
    let mode = match opts.batch {
        BatchMode::Cover { .. } => BatchMode::Cover {
            cap: setup.batch_cap,
        },
        fixed => fixed,
    };

    let mut log = TrajectoryLog {
        tau_hat: setup.tau_hat,
        burn_in: setup.burn_in,
        deltas: setup.deltas.clone(),
        batch_cap: setup.batch_cap,
        episodes: Vec::new(),
        iterates: Vec::new(),
        gap_evals: Vec::new(),
        rho_bar: Vec::new(),
        weight_total: 0.0,
        final_rho: Vec::new(),
        zero_row_events: 0,
        floor_events: 0,
    };
    let mut abort = None;

    while core.episode < opts.episodes {
        let ell = core.episode + 1;
        let policies: Vec<Policy> = core.players.iter().map(|p| p.policy.clone()).collect();
        let start_time = core.global_time;
        let outcome = match run_batch(
            game,
            &policies,
            &mut core.joint_state,
            &mut core.streams,
            setup.burn_in,
            &mode,
            shift,
        ) {
            Ok(o) => o,
            Err(Error::BatchCapExceeded { len, cap, .. }) => {
                abort = Some(AbortReason::BatchCapExceeded {
                    episode: ell,
                    len,
                    cap,
                });
                break;
            }
            Err(e) => return Err(e),
        };
        core.global_time += outcome.len as u64;
        let eta = opts.schedule.step_size(ell);

        // The iterate played this episode enters the weighted average and
        // the gap accumulators before the update.
        core.weight_total += eta;
        for (acc, p) in core.rho_bar_acc.iter_mut().zip(&core.players) {
            for (a, &v) in acc.iter_mut().zip(p.rho.values()) {
                *a += eta * v;
            }
        }
        if gap_on {
            let profile: Vec<OccupationMeasure> =
                core.players.iter().map(|p| p.rho.clone()).collect();
            let grads = metrics::exact_gradient_profile(game, &profile)?;
            let grad_acc = core.gap_grad_acc.as_mut().unwrap();
            let value_acc = core.gap_value_acc.as_mut().unwrap();
            for i in 0..core.players.len() {
                let inner: f64 = profile[i]
                    .values()
                    .iter()
                    .zip(&grads[i])
                    .map(|(r, g)| r * g)
                    .sum();
                value_acc[i] += eta * inner;
                for (a, g) in grad_acc[i].iter_mut().zip(&grads[i]) {
                    *a += eta * g;
                }
            }
        }

        let mut kkt_worst: Option<f64> = None;
        for (i, learner) in core.players.iter_mut().enumerate() {
            match &opts.algo {
                Algo::DualAveraging { regularizer } => {
                    let kkt = da_update(
                        learner,
                        &outcome.reward_vectors[i],
                        eta,
                        &setup.shrunk[i],
                        regularizer,
                    )?;
                    if logging.record_kkt {
                        let worst = kkt.worst();
                        kkt_worst = Some(kkt_worst.map_or(worst, |w: f64| w.max(worst)));
                    }
                }
                Algo::MirrorDescent => {
                    md_update(learner, &outcome.reward_vectors[i], eta, &setup.unshrunk[i])?;
                }
            }
        }
        core.episode = ell;

        let len = outcome.len as f64;
        let sampling_len = (outcome.len - setup.burn_in) as f64;
        let record = EpisodeRecord {
            episode: ell,
            start_time,
            end_time: core.global_time,
            eta,
            mean_reward: outcome.reward_sums.iter().map(|&s| s / len).collect(),
            mean_reward_sampling: outcome
                .sampling_sums
                .iter()
                .map(|&s| s / sampling_len)
                .collect(),
            uncovered: outcome.uncovered.clone(),
            kkt_worst,
        };

        if logging.thin > 0 && (ell % logging.thin == 0 || ell == opts.episodes) {
            log.iterates.push(IterateSnapshot {
                episode: ell,
                rho: core
                    .players
                    .iter()
                    .map(|p| p.rho.values().to_vec())
                    .collect(),
            });
        }
        if let Some(cadence) = logging.gap_cadence {
            if cadence > 0 && (ell % cadence == 0 || ell == opts.episodes) {
                let eval = evaluate_gaps(game, &setup, &core)?;
                log.gap_evals.push(eval);
            }
        }

        let view = EpisodeView {
            record: &record,
            core: &core,
            rho_bar_current: core.rho_bar(),
        };
        observer(&view)?;
        log.episodes.push(record);
    }

    log.rho_bar = core.rho_bar();
    log.weight_total = core.weight_total;
    log.final_rho = core
        .players
        .iter()
        .map(|p| p.rho.values().to_vec())
        .collect();
    log.zero_row_events = core.players.iter().map(|p| p.zero_row_events).sum();
    log.floor_events = core.players.iter().map(|p| p.floor_events).sum();
    Ok(RunOutcome { log, abort })
}

fn evaluate_gaps(game: &GameConfig, setup: &RunSetup, core: &RunCore) -> Result<GapEval> {
    let grad_acc = core.gap_grad_acc.as_ref().expect("gap accumulators");
    let value_acc = core.gap_value_acc.as_ref().expect("gap accumulators");
    let w = core.weight_total;
    let mut averaged_gap = 0.0;
    for i in 0..core.players.len() {
        let avg_grad: Vec<f64> = grad_acc[i].iter().map(|&g| g / w).collect();
        let best = metrics::best_response_value(&setup.shrunk[i], &avg_grad)?;
        averaged_gap += best.value - value_acc[i] / w;
    }

    let rho_bar = core.rho_bar();
    let profile: Vec<OccupationMeasure> = rho_bar
        .iter()
        .enumerate()
        .map(|(i, v)| {
            OccupationMeasure::from_parts_unchecked(
                game.player(i).n_states(),
                game.player(i).n_actions(),
                v.clone(),
            )
        })
        .collect();
    let rho_bar_gap = metrics::ni_gap(game, &profile, &setup.shrunk)?;
    Ok(GapEval {
        episode: core.episode,
        averaged_gap,
        rho_bar_gap,
    })
}

#[cfg(test)]
mod tests;
