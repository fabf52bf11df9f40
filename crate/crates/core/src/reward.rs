//! Reward model trained to explain the drift between consecutive cloned
//! policies.
//!
//! For a transition `(s, a, s')` at timestep `t` in bundle `k`, the learner's
//! update predicts that the last-layer parameters move by
//! `beta(s') * gamma^t * g`, where `g` is the score of cloned policy `k` at
//! `(s, a)`. The reward network `beta` is fitted so that this prediction
//! matches the observed difference `psi_{k+1} - psi_k`, in squared norm.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bundle::{make_bundles, ClonedPolicySequence};
use crate::error::{Error, Result};
use crate::forward::TrajectoryLog;
use crate::gridworld::one_hot;
use crate::tinynn::{Direction, Head, Mlp, NetSpec, ParamVector, ScoreMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrainingSample {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub t: usize,
    /// 1-based bundle index; always below the number of cloned policies.
    pub k: usize,
}

fn check_sample(sample: &TrainingSample, policies: &ClonedPolicySequence) -> Result<()> {
    if sample.k == 0 || sample.k >= policies.len() {
        return Err(Error::usage(format!(
            "bundle {} has no successor policy (sequence holds {})",
            sample.k,
            policies.len()
        )));
    }
    Ok(())
}

fn last_layer_delta(policies: &ClonedPolicySequence, k: usize) -> Vec<f64> {
    let before = policies.policies[k - 1].last_layer();
    let after = policies.policies[k].last_layer();
    after.values.iter().zip(&before.values).map(|(a, b)| a - b).collect()
}

/// `beta(s') * gamma^t * g - (last(psi_{k+1}) - last(psi_k))`.
pub fn beta_residual(
    sample: &TrainingSample,
    beta: &Mlp,
    policies: &ClonedPolicySequence,
    gamma: f64,
    mode: ScoreMode,
) -> Result<Vec<f64>> {
    check_sample(sample, policies)?;
    let num_states = beta.input_size();
    let policy = &policies.policies[sample.k - 1];
    let score = policy.last_layer_score(&one_hot(sample.s, num_states), sample.a, mode)?;
    let reward = beta.scalar_forward(&one_hot(sample.s_next, num_states))?;
    let delta = last_layer_delta(policies, sample.k);
    let discount = gamma.powi(sample.t as i32);
    Ok(score.iter().zip(&delta).map(|(g, d)| reward * discount * g - d).collect())
}

/// One summand of the reward loss with its score and target precomputed.
#[derive(Debug, Clone, Copy)]
pub struct ResidualTerm<'a> {
    pub next_state: usize,
    pub discount: f64,
    pub score: &'a [f64],
    pub delta: &'a [f64],
}

/// Sum over `terms` of the squared residual norm. When `grad` is given the
/// gradient with respect to the reward network's parameters is accumulated.
pub fn beta_loss(beta: &Mlp, terms: &[ResidualTerm<'_>], mut grad: Option<&mut ParamVector>) -> Result<f64> {
    let num_states = beta.input_size();
    let mut loss = 0.0;
    for term in terms {
        let acts = beta.activations(&one_hot(term.next_state, num_states))?;
        let reward = acts.output()[0];
        let mut dot = 0.0;
        for (g, d) in term.score.iter().zip(term.delta) {
            let r = reward * term.discount * g - d;
            loss += r * r;
            dot += r * g;
        }
        if let Some(grad) = grad.as_deref_mut() {
            beta.backward(&acts, &[2.0 * term.discount * dot], 1.0, grad)?;
        }
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaConfig {
    pub spec: NetSpec,
    pub gamma: f64,
    pub batch: usize,
    pub episodes: usize,
    pub lr: f64,
    pub mode: ScoreMode,
    /// Seeds both the network init and sample selection.
    pub seed: u64,
}

impl Default for BetaConfig {
    fn default() -> Self {
        Self {
            spec: NetSpec::new(vec![49, 20, 1], Head::Linear, 0),
            gamma: 0.999,
            batch: 100,
            episodes: 5000,
            lr: 0.005,
            mode: ScoreMode::Prob,
            seed: 0,
        }
    }
}

impl BetaConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.spec.head != Head::Linear {
            return Err(Error::config("beta.spec must end in a linear scalar head"));
        }
        if self.batch == 0 {
            return Err(Error::config("beta.batch must be at least 1"));
        }
        if self.episodes == 0 {
            return Err(Error::config("beta.episodes must be at least 1"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("beta.gamma must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BetaRun {
    pub beta: Mlp,
    /// Batch loss of every training episode, before its update.
    pub losses: Vec<f64>,
}

/// Every transition that can be paired with a successor policy.
pub fn eligible_samples(log: &TrajectoryLog, policies: &ClonedPolicySequence) -> Result<Vec<TrainingSample>> {
    let bundles = make_bundles(log, policies.bundle_size, policies.mode)?;
    if bundles.len() < policies.len() {
        return Err(Error::usage(format!(
            "log yields {} bundles but {} policies were supplied",
            bundles.len(),
            policies.len()
        )));
    }
    let m = policies.len();
    Ok(bundles
        .iter()
        .take(m.saturating_sub(1))
        .flat_map(|b| {
            b.records.iter().map(move |r| TrainingSample {
                s: r.state,
                a: r.action,
                s_next: r.next_state,
                t: r.t,
                k: b.index,
            })
        })
        .collect())
}

/// Trains the reward network with the cloned policies held fixed.
pub fn train_beta(log: &TrajectoryLog, policies: &ClonedPolicySequence, cfg: &BetaConfig) -> Result<BetaRun> {
    cfg.validate()?;
    let samples = eligible_samples(log, policies)?;
    if samples.is_empty() {
        return Err(Error::usage(format!(
            "no training samples: {} cloned policies leave no bundle with a successor",
            policies.len()
        )));
    }
    let spec = NetSpec { init_seed: cfg.seed, ..cfg.spec.clone() };
    let mut beta = Mlp::new(&spec)?;
    let num_states = beta.input_size();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let deltas: Vec<Vec<f64>> = (1..policies.len()).map(|k| last_layer_delta(policies, k)).collect();
    let mut scores: HashMap<(usize, usize, usize), Vec<f64>> = HashMap::new();
    let mut grad = ParamVector::zeros(beta.params().shapes().to_vec());
    let mut losses = Vec::with_capacity(cfg.episodes);
    let mut batch = Vec::with_capacity(cfg.batch);

    for episode in 0..cfg.episodes {
        batch.clear();
        for _ in 0..cfg.batch {
            batch.push(samples[rng.gen_range(0..samples.len())]);
        }
        for s in &batch {
            if let Entry::Vacant(e) = scores.entry((s.k, s.s, s.a)) {
                e.insert(policies.policies[s.k - 1].last_layer_score(
                    &one_hot(s.s, num_states),
                    s.a,
                    cfg.mode,
                )?);
            }
        }
        let terms: Vec<ResidualTerm<'_>> = batch
            .iter()
            .map(|s| ResidualTerm {
                next_state: s.s_next,
                discount: cfg.gamma.powi(s.t as i32),
                score: &scores[&(s.k, s.s, s.a)],
                delta: &deltas[s.k - 1],
            })
            .collect();
        grad.fill(0.0);
        let loss = beta_loss(&beta, &terms, Some(&mut grad))?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("reward loss became non-finite in episode {episode}")));
        }
        losses.push(loss);
        beta.sgd_step(&grad, cfg.lr, Direction::Descend)?;
        if !beta.params().all_finite() {
            return Err(Error::Divergence(format!("reward network diverged in episode {episode}")));
        }
    }
    Ok(BetaRun { beta, losses })
}

/// The reward network evaluated at every state.
pub fn predict_rewards(beta: &Mlp) -> Result<Vec<f64>> {
    let n = beta.input_size();
    (0..n).map(|s| beta.scalar_forward(&one_hot(s, n))).collect()
}
