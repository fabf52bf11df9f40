//! The observed learner: REINFORCE on the grid, and the trajectory log it
//! leaves behind.
//!
//! The log holds states and actions only. True rewards are returned on a
//! separate channel that only evaluation code reads.

use std::fmt::Write as _;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gridworld::{Action, Environment};
use crate::tinynn::{Direction, Mlp, NetSpec, ScoreMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StepRecord {
    pub episode: usize,
    pub t: usize,
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub env_hash: String,
    pub episodes: usize,
    pub horizon: usize,
    pub records: Vec<StepRecord>,
}

impl TrajectoryLog {
    /// Checks contiguity of episodes, timestep order and state chaining.
    pub fn validate(&self) -> Result<()> {
        let mut prev: Option<&StepRecord> = None;
        for r in &self.records {
            if r.t >= self.horizon {
                return Err(Error::usage(format!("record t={} beyond horizon {}", r.t, self.horizon)));
            }
            match prev {
                None if r.episode != 0 || r.t != 0 => {
                    return Err(Error::usage("log must start at episode 0, t=0"));
                }
                Some(p) if r.episode == p.episode => {
                    if r.t != p.t + 1 || r.state != p.next_state {
                        return Err(Error::usage(format!("episode {} breaks at t={}", r.episode, r.t)));
                    }
                }
                Some(p) if r.episode != p.episode + 1 || r.t != 0 => {
                    return Err(Error::usage(format!("episodes not contiguous at episode {}", r.episode)));
                }
                _ => {}
            }
            prev = Some(r);
        }
        let seen = self.records.last().map_or(0, |r| r.episode + 1);
        if seen != self.episodes {
            return Err(Error::usage(format!("log declares {} episodes but holds {seen}", self.episodes)));
        }
        Ok(())
    }

    /// Record-index range of every episode, in order.
    pub fn episode_ranges(&self) -> Vec<Range<usize>> {
        let mut ranges = Vec::with_capacity(self.episodes);
        let mut start = 0;
        for i in 1..=self.records.len() {
            if i == self.records.len() || self.records[i].episode != self.records[start].episode {
                ranges.push(start..i);
                start = i;
            }
        }
        ranges
    }

    /// Visits per state as next-state arrivals plus the episode start states.
    pub fn state_visits(&self, num_states: usize) -> Vec<usize> {
        let mut counts = vec![0; num_states];
        for r in &self.records {
            counts[r.state] += 1;
        }
        counts
    }

    pub fn header_line(&self) -> String {
        format!("# env_hash={}  E={} T={}", self.env_hash, self.episodes, self.horizon)
    }

    /// CSV form. `manifest` lines are written as extra `#` lines after the
    /// fixed header.
    pub fn to_csv(&self, manifest: &[String]) -> String {
        let mut out = String::with_capacity(self.records.len() * 16);
        out.push_str(&self.header_line());
        out.push('\n');
        for line in manifest {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str("episode,t,state,action,next_state\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{},{}", r.episode, r.t, r.state, r.action, r.next_state);
        }
        out
    }

    pub fn parse_csv(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        let first = lines.next().ok_or("empty file")?;
        let fields = first.strip_prefix("# ").ok_or("missing `# env_hash=` header")?;
        let mut env_hash = None;
        let mut episodes = None;
        let mut horizon = None;
        for tok in fields.split_whitespace() {
            match tok.split_once('=') {
                Some(("env_hash", v)) => env_hash = Some(v.to_string()),
                Some(("E", v)) => episodes = Some(v.parse::<usize>().map_err(|e| e.to_string())?),
                Some(("T", v)) => horizon = Some(v.parse::<usize>().map_err(|e| e.to_string())?),
                _ => return Err(format!("unexpected header token `{tok}`")),
            }
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.starts_with('#') || line.starts_with("episode,") || line.is_empty() {
                continue;
            }
            let vals: Vec<usize> = line
                .split(',')
                .map(|v| v.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| format!("line {}: {e}", i + 2))?;
            if vals.len() != 5 {
                return Err(format!("line {}: expected 5 fields", i + 2));
            }
            records.push(StepRecord {
                episode: vals[0],
                t: vals[1],
                state: vals[2],
                action: vals[3],
                next_state: vals[4],
            });
        }
        Ok(Self {
            env_hash: env_hash.ok_or("missing env_hash")?,
            episodes: episodes.ok_or("missing E")?,
            horizon: horizon.ok_or("missing T")?,
            records,
        })
    }
}

/// Reward assigned on arrival at a state.
pub trait RewardSource {
    fn reward(&self, next_state: usize) -> f64;
}

impl RewardSource for Environment {
    fn reward(&self, next_state: usize) -> f64 {
        self.reward_at(next_state)
    }
}

/// Per-state reward table, e.g. a learned reward model evaluated on every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularReward(pub Vec<f64>);

impl RewardSource for TabularReward {
    fn reward(&self, next_state: usize) -> f64 {
        self.0[next_state]
    }
}

/// Which return multiplies the score function in the policy update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReturnMode {
    /// `R(s_{t+1})`, the arrival reward of the step alone.
    Immediate,
    /// Discounted sum of arrival rewards from step `t` to the episode end.
    RewardToGo,
}

impl ReturnMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReturnMode::Immediate => "immediate",
            ReturnMode::RewardToGo => "reward_to_go",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "immediate" => Ok(ReturnMode::Immediate),
            "reward_to_go" => Ok(ReturnMode::RewardToGo),
            other => Err(Error::config(format!("unknown return mode `{other}`"))),
        }
    }
}

pub fn sample_action<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (a, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    probs.len() - 1
}

/// One episode under `policy`, sampling actions from its distribution.
///
/// Returns the observable records and, separately, the true arrival rewards.
pub fn run_episode<R: Rng>(
    env: &Environment,
    policy: &Mlp,
    episode: usize,
    rng: &mut R,
) -> Result<(Vec<StepRecord>, Vec<f64>)> {
    rollout(env, policy, episode, |probs| sample_action(probs, rng))
}

pub fn run_episode_seeded(
    env: &Environment,
    policy: &Mlp,
    episode: usize,
    seed: u64,
) -> Result<(Vec<StepRecord>, Vec<f64>)> {
    run_episode(env, policy, episode, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// One episode taking the most probable action at every step.
pub fn run_greedy_episode(env: &Environment, policy: &Mlp) -> Result<(Vec<StepRecord>, Vec<f64>)> {
    rollout(env, policy, 0, |probs| {
        let mut best = 0;
        for (a, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = a;
            }
        }
        best
    })
}

fn rollout(
    env: &Environment,
    policy: &Mlp,
    episode: usize,
    mut choose: impl FnMut(&[f64]) -> usize,
) -> Result<(Vec<StepRecord>, Vec<f64>)> {
    if policy.output_size() != env.num_actions() || policy.input_size() != env.num_states() {
        return Err(Error::usage(format!(
            "policy shape {:?} does not fit a {}-state, {}-action environment",
            policy.layer_sizes(),
            env.num_states(),
            env.num_actions()
        )));
    }
    let mut records = Vec::with_capacity(env.horizon());
    let mut rewards = Vec::with_capacity(env.horizon());
    let mut state = env.start();
    for t in 0..env.horizon() {
        let probs = policy.policy_forward(&env.encode_state(state)?)?;
        let action = choose(&probs);
        let out = env.step(state, Action::from_index(action)?, t)?;
        records.push(StepRecord { episode, t, state, action, next_state: out.next_state });
        rewards.push(out.reward);
        state = out.next_state;
        if out.done {
            break;
        }
    }
    Ok((records, rewards))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardConfig {
    pub episodes: usize,
    pub alpha: f64,
    pub gamma: f64,
    /// Seeds action sampling; network init uses the `NetSpec` seed.
    pub seed: u64,
    pub return_mode: ReturnMode,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self { episodes: 5000, alpha: 0.00075, gamma: 0.999, seed: 0, return_mode: ReturnMode::Immediate }
    }
}

impl ForwardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::config("forward.episodes must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("forward.alpha must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("forward.gamma must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ForwardRun {
    pub policy: Mlp,
    pub log: TrajectoryLog,
    /// Undiscounted per-episode sum of the rewards the learner was trained on.
    pub returns: Vec<f64>,
    /// True arrival rewards per episode, for evaluation only.
    pub true_rewards: Vec<Vec<f64>>,
}

/// Per-step multipliers of the score function for one episode.
pub fn episode_weights(rewards: &[f64], gamma: f64, mode: ReturnMode) -> Vec<f64> {
    match mode {
        ReturnMode::Immediate => rewards.to_vec(),
        ReturnMode::RewardToGo => {
            let mut out = vec![0.0; rewards.len()];
            let mut acc = 0.0;
            for t in (0..rewards.len()).rev() {
                acc = rewards[t] + gamma * acc;
                out[t] = acc;
            }
            out
        }
    }
}

/// Trains a fresh policy on the environment's true rewards.
pub fn reinforce_train(env: &Environment, spec: &NetSpec, cfg: &ForwardConfig) -> Result<ForwardRun> {
    reinforce_train_with(env, env, spec, cfg)
}

/// REINFORCE with rewards supplied by `rewards` and dynamics by `env`.
///
/// After each episode the update `theta += alpha * gamma^t * G_t * grad ln pi(a_t|s_t)`
/// is applied for every step in timestep order, where `G_t` is chosen by the
/// configured [`ReturnMode`].
pub fn reinforce_train_with(
    env: &Environment,
    rewards: &dyn RewardSource,
    spec: &NetSpec,
    cfg: &ForwardConfig,
) -> Result<ForwardRun> {
    cfg.validate()?;
    let mut policy = Mlp::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.episodes * env.horizon());
    let mut returns = Vec::with_capacity(cfg.episodes);
    let mut true_rewards = Vec::with_capacity(cfg.episodes);
    let mut grad = crate::tinynn::ParamVector::zeros(policy.params().shapes().to_vec());

    for episode in 0..cfg.episodes {
        let (steps, truth) = run_episode(env, &policy, episode, &mut rng)?;
        let observed: Vec<f64> = steps.iter().map(|r| rewards.reward(r.next_state)).collect();
        let weights = episode_weights(&observed, cfg.gamma, cfg.return_mode);
        let mut discount = 1.0;
        for (step, w) in steps.iter().zip(&weights) {
            let coeff = cfg.alpha * discount * w;
            discount *= cfg.gamma;
            if coeff == 0.0 {
                continue;
            }
            let x = env.encode_state(step.state)?;
            let acts = policy.activations(&x)?;
            let probs = crate::tinynn::softmax(acts.output());
            let mut dz: Vec<f64> = probs.iter().map(|p| -p).collect();
            dz[step.action] += 1.0;
            grad.fill(0.0);
            policy.backward(&acts, &dz, 1.0, &mut grad)?;
            policy.sgd_step(&grad, coeff, Direction::Ascend)?;
        }
        if !policy.params().all_finite() {
            return Err(Error::Divergence(format!(
                "policy parameters became non-finite in episode {episode}"
            )));
        }
        returns.push(observed.iter().sum());
        records.extend(steps);
        true_rewards.push(truth);
    }

    Ok(ForwardRun {
        policy,
        log: TrajectoryLog {
            env_hash: env.fingerprint(),
            episodes: cfg.episodes,
            horizon: env.horizon(),
            records,
        },
        returns,
        true_rewards,
    })
}

/// Score function used by the learner, exposed for tests and the reward model.
pub fn learner_score(policy: &Mlp, x: &[f64], action: usize) -> Result<crate::tinynn::ParamVector> {
    policy.grad_log_prob(x, action, ScoreMode::LogProb)
}

pub fn true_rewards_csv(true_rewards: &[Vec<f64>], manifest: &[String]) -> String {
    let mut out = String::new();
    for line in manifest {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str("episode,t,reward\n");
    for (e, rs) in true_rewards.iter().enumerate() {
        for (t, r) in rs.iter().enumerate() {
            let _ = writeln!(out, "{e},{t},{r:?}");
        }
    }
    out
}

pub fn parse_true_rewards_csv(text: &str) -> std::result::Result<Vec<Vec<f64>>, String> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.starts_with("episode,") || line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(format!("line {}: expected 3 fields", i + 1));
        }
        let e: usize = parts[0].parse().map_err(|e| format!("line {}: {e}", i + 1))?;
        let r: f64 = parts[2].parse().map_err(|e| format!("line {}: {e}", i + 1))?;
        if e == out.len() {
            out.push(Vec::new());
        }
        out.last_mut().ok_or("episodes out of order")?.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::GridConfig;
    use crate::tinynn::{Head, ParamVector};

    fn env() -> Environment {
        Environment::new(GridConfig::default()).unwrap()
    }

    /// Policy whose bias makes `action` (almost surely) chosen everywhere.
    fn forced_policy(action: usize) -> Mlp {
        let mut net = Mlp::zeros(&[49, 16, 3], Head::Softmax).unwrap();
        let mut view = net.last_layer();
        let n = view.values.len();
        view.values[n - 3 + action] = 200.0;
        net.set_last_layer(&view).unwrap();
        net
    }

    #[test]
    fn always_right_walks_top_row() {
        let env = env();
        let (steps, _) = run_episode_seeded(&env, &forced_policy(0), 0, 1).unwrap();
        assert_eq!(steps.len(), 15);
        let visited: Vec<usize> = steps.iter().map(|s| s.next_state).collect();
        assert_eq!(&visited[..7], &[1, 2, 3, 4, 5, 6, 6]);
        assert!(visited.iter().all(|s| *s < 7));
    }

    #[test]
    fn shortest_route_reaches_goal_in_twelve() {
        let mut cfg = GridConfig::default();
        cfg.terminate_at_goal = true;
        let env = Environment::new(cfg).unwrap();
        // alternate right/down through the per-state first-layer weights
        let mut net = Mlp::zeros(&[49, 49, 3], Head::Softmax).unwrap();
        let p = net.params_mut().values_mut();
        for s in 0..49 {
            p[s * 49 + s] = 1.0; // hidden unit s copies the one-hot input
            let (row, col) = (s / 7, s % 7);
            let a = if col < 6 && (col <= row || row == 6) { 0 } else { 2 };
            p[49 * 49 + 49 + a * 49 + s] = 100.0;
        }
        let (steps, rewards) = run_episode_seeded(&env, &net, 0, 0).unwrap();
        assert_eq!(steps.len(), env.shortest_path_len().unwrap());
        assert_eq!(steps.last().unwrap().next_state, 48);
        assert_eq!(*rewards.last().unwrap(), 20.0);
    }

    #[test]
    fn episode_is_deterministic_per_seed() {
        let env = env();
        let net = Mlp::new(&NetSpec::new(vec![49, 16, 3], Head::Softmax, 2)).unwrap();
        let a = run_episode_seeded(&env, &net, 0, 42).unwrap();
        let b = run_episode_seeded(&env, &net, 0, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_rewards_leave_parameters_unchanged() {
        let env = env();
        let spec = NetSpec::new(vec![49, 16, 3], Head::Softmax, 3);
        let cfg = ForwardConfig { episodes: 20, ..Default::default() };
        for mode in [ReturnMode::Immediate, ReturnMode::RewardToGo] {
            let cfg = ForwardConfig { return_mode: mode, ..cfg.clone() };
            let run = reinforce_train_with(&env, &TabularReward(vec![0.0; 49]), &spec, &cfg).unwrap();
            assert_eq!(run.policy, Mlp::new(&spec).unwrap());
        }
    }

    /// One-step environment: the update must equal alpha * R * score by hand.
    #[test]
    fn single_step_update_matches_hand_calculation() {
        let mut cfg = GridConfig::default();
        cfg.horizon = 1;
        let env = Environment::new(cfg).unwrap();
        let spec = NetSpec::new(vec![49, 4, 3], Head::Softmax, 5);
        let fcfg = ForwardConfig {
            episodes: 1,
            alpha: 0.01,
            gamma: 0.9,
            seed: 17,
            return_mode: ReturnMode::Immediate,
        };
        let run = reinforce_train(&env, &spec, &fcfg).unwrap();
        let step = run.log.records[0];
        let init = Mlp::new(&spec).unwrap();
        let score = learner_score(&init, &one_hot0(), step.action).unwrap();
        let reward = env.reward_at(step.next_state);
        let mut expect = init.params().clone();
        expect.add_scaled(&score, 0.01 * reward).unwrap();
        for (a, b) in run.policy.params().values().iter().zip(expect.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    fn one_hot0() -> Vec<f64> {
        crate::gridworld::one_hot(0, 49)
    }

    /// Zero-weight two-action net: score for action 0 at equal logits is
    /// (1/2, -1/2) on the biases.
    #[test]
    fn zero_weight_two_action_score() {
        let net = Mlp::zeros(&[1, 1, 2], Head::Softmax).unwrap();
        let g: ParamVector = learner_score(&net, &[1.0], 0).unwrap();
        let r = g.last_layer_range();
        assert_eq!(&g.values()[r.end - 2..r.end], &[0.5, -0.5]);
    }

    #[test]
    fn reward_to_go_weights() {
        let w = episode_weights(&[1.0, 2.0, 3.0], 0.5, ReturnMode::RewardToGo);
        assert_eq!(w, vec![1.0 + 0.5 * (2.0 + 0.5 * 3.0), 2.0 + 1.5, 3.0]);
        assert_eq!(episode_weights(&[1.0, 2.0], 0.5, ReturnMode::Immediate), vec![1.0, 2.0]);
    }

    #[test]
    fn log_excludes_rewards_and_round_trips() {
        let env = env();
        let spec = NetSpec::new(vec![49, 16, 3], Head::Softmax, 1);
        let cfg = ForwardConfig { episodes: 30, seed: 4, ..Default::default() };
        let run = reinforce_train(&env, &spec, &cfg).unwrap();
        run.log.validate().unwrap();
        let text = run.log.to_csv(&["seed=4".into()]);
        assert!(text.starts_with(&format!("# env_hash={}  E=30 T=15\n", env.fingerprint())));
        assert!(!text.contains("reward"));
        let back = TrajectoryLog::parse_csv(&text).unwrap();
        assert_eq!(back, run.log);
        let rewards = parse_true_rewards_csv(&true_rewards_csv(&run.true_rewards, &[])).unwrap();
        assert_eq!(rewards, run.true_rewards);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let env = env();
        let spec = NetSpec::new(vec![49, 16, 3], Head::Softmax, 1);
        let cfg = ForwardConfig { episodes: 50, seed: 9, ..Default::default() };
        let a = reinforce_train(&env, &spec, &cfg).unwrap();
        let b = reinforce_train(&env, &spec, &cfg).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.log, b.log);
        assert_eq!(a.returns, b.returns);
    }

    #[test]
    fn divergence_is_reported() {
        let env = env();
        let spec = NetSpec::new(vec![49, 16, 3], Head::Softmax, 1);
        let cfg = ForwardConfig { episodes: 50, alpha: 1e300, ..Default::default() };
        let err = reinforce_train(&env, &spec, &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence(ref m) if m.contains("episode")));
    }
}
