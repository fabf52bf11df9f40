//! Bundle behavior cloning.
//!
//! Consecutive episodes are grouped into bundles that are treated as the
//! output of one policy. For each bundle the empirical per-state action
//! distribution is computed and a policy network is fitted to it by
//! full-batch gradient descent on the mean squared error, warm-started from
//! the previous bundle's clone.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::forward::{StepRecord, TrajectoryLog};
use crate::gridworld::one_hot;
use crate::tinynn::{softmax, Activations, Direction, Mlp, NetSpec, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BundleMode {
    /// Non-overlapping blocks of `B` episodes; trailing episodes are dropped.
    #[default]
    Disjoint,
    /// Windows of `B` episodes with stride one.
    Sliding,
    /// Blocks of `2B` episodes keeping every other step record.
    Independent,
}

impl BundleMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BundleMode::Disjoint => "disjoint",
            BundleMode::Sliding => "sliding",
            BundleMode::Independent => "independent",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "disjoint" => Ok(BundleMode::Disjoint),
            "sliding" => Ok(BundleMode::Sliding),
            "independent" => Ok(BundleMode::Independent),
            other => Err(Error::config(format!("unknown bundle mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    /// 1-based bundle index.
    pub index: usize,
    /// Episode range `[lo, hi)`.
    pub episodes: Range<usize>,
    pub records: Vec<StepRecord>,
}

fn records_for<'a>(
    log: &'a TrajectoryLog,
    ranges: &[Range<usize>],
    episodes: Range<usize>,
) -> &'a [StepRecord] {
    let start = ranges[episodes.start].start;
    let end = ranges[episodes.end - 1].end;
    &log.records[start..end]
}

pub fn make_bundles(log: &TrajectoryLog, bundle_size: usize, mode: BundleMode) -> Result<Vec<Bundle>> {
    if mode == BundleMode::Independent {
        return thin_for_independence(log, bundle_size);
    }
    let e = log.episodes;
    if bundle_size == 0 {
        return Err(Error::config("bundle size must be at least 1"));
    }
    if bundle_size > e {
        return Err(Error::config(format!("bundle size {bundle_size} exceeds the {e} logged episodes")));
    }
    let ranges = log.episode_ranges();
    let windows: Vec<Range<usize>> = match mode {
        BundleMode::Disjoint => {
            (0..e / bundle_size).map(|k| k * bundle_size..(k + 1) * bundle_size).collect()
        }
        BundleMode::Sliding => (0..=e - bundle_size).map(|k| k..k + bundle_size).collect(),
        BundleMode::Independent => unreachable!(),
    };
    Ok(windows
        .into_iter()
        .enumerate()
        .map(|(k, eps)| Bundle {
            index: k + 1,
            records: records_for(log, &ranges, eps.clone()).to_vec(),
            episodes: eps,
        })
        .collect())
}

/// Bundles of `2B` episodes keeping only records at even positions in the
/// log, so each bundle holds as many pairs as an unthinned one.
pub fn thin_for_independence(log: &TrajectoryLog, bundle_size: usize) -> Result<Vec<Bundle>> {
    let span = 2 * bundle_size;
    if bundle_size == 0 {
        return Err(Error::config("bundle size must be at least 1"));
    }
    if span > log.episodes {
        return Err(Error::config(format!(
            "thinned bundles span {span} episodes but only {} are logged",
            log.episodes
        )));
    }
    let ranges = log.episode_ranges();
    Ok((0..log.episodes / span)
        .map(|k| {
            let eps = k * span..(k + 1) * span;
            let first = ranges[eps.start].start;
            let end = ranges[eps.end - 1].end;
            let records = (first..end).filter(|i| i % 2 == 0).map(|i| log.records[i]).collect();
            Bundle { index: k + 1, episodes: eps, records }
        })
        .collect())
}

/// Empirical action distribution of each visited state.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleDistribution {
    pub num_actions: usize,
    pub probs: BTreeMap<usize, Vec<f64>>,
    pub counts: BTreeMap<usize, usize>,
}

impl BundleDistribution {
    pub fn total_count(&self) -> usize {
        self.counts.values().sum()
    }
}

pub fn empirical_distribution(bundle: &Bundle, num_actions: usize) -> Result<BundleDistribution> {
    if bundle.records.is_empty() {
        return Err(Error::usage(format!("bundle {} is empty", bundle.index)));
    }
    let mut tallies: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for r in &bundle.records {
        if r.action >= num_actions {
            return Err(Error::usage(format!("action {} outside [0, {num_actions})", r.action)));
        }
        tallies.entry(r.state).or_insert_with(|| vec![0; num_actions])[r.action] += 1;
    }
    let mut probs = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for (state, tally) in tallies {
        let n: usize = tally.iter().sum();
        probs.insert(state, tally.iter().map(|&c| c as f64 / n as f64).collect());
        counts.insert(state, n);
    }
    Ok(BundleDistribution { num_actions, probs, counts })
}

/// Summed per-state MSE between the policy and the bundle distribution.
/// When `grad` is given, the loss gradient is accumulated into it.
pub fn cloning_loss(
    net: &Mlp,
    dist: &BundleDistribution,
    num_states: usize,
    grad: Option<&mut ParamVector>,
) -> Result<f64> {
    let targets: Vec<(Vec<f64>, &[f64])> =
        dist.probs.iter().map(|(&s, p)| (one_hot(s, num_states), p.as_slice())).collect();
    let mut acts = Activations::default();
    targets_loss(net, &targets, &mut acts, grad)
}

fn targets_loss(
    net: &Mlp,
    targets: &[(Vec<f64>, &[f64])],
    acts: &mut Activations,
    mut grad: Option<&mut ParamVector>,
) -> Result<f64> {
    let mut loss = 0.0;
    let mut dz = Vec::new();
    for (x, target) in targets {
        net.activations_into(x, acts)?;
        let p = softmax(acts.output());
        let n_a = p.len() as f64;
        loss += p.iter().zip(*target).map(|(pi, ri)| (pi - ri).powi(2)).sum::<f64>() / n_a;
        if let Some(g) = grad.as_deref_mut() {
            // dL/dp, then through the softmax Jacobian
            let inner: f64 = p.iter().zip(*target).map(|(pi, ri)| pi * 2.0 * (pi - ri) / n_a).sum();
            dz.clear();
            dz.extend(p.iter().zip(*target).map(|(pi, ri)| pi * (2.0 * (pi - ri) / n_a - inner)));
            net.backward(acts, &dz, 1.0, g)?;
        }
    }
    Ok(loss)
}

/// Full-batch gradient descent on [`cloning_loss`]; returns the loss after
/// the final update.
pub fn fit_distribution(
    net: &mut Mlp,
    dist: &BundleDistribution,
    num_states: usize,
    lr: f64,
    epochs: usize,
) -> Result<f64> {
    let targets: Vec<(Vec<f64>, &[f64])> =
        dist.probs.iter().map(|(&s, p)| (one_hot(s, num_states), p.as_slice())).collect();
    let mut acts = Activations::default();
    let mut grad = ParamVector::zeros(net.params().shapes().to_vec());
    for _ in 0..epochs {
        grad.fill(0.0);
        targets_loss(net, &targets, &mut acts, Some(&mut grad))?;
        net.sgd_step(&grad, lr, Direction::Descend)?;
    }
    targets_loss(net, &targets, &mut acts, None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloneConfig {
    pub bundle_size: usize,
    pub mode: BundleMode,
    pub lr: f64,
    pub epochs: usize,
    /// Initializes the first clone.
    pub seed: u64,
}

impl Default for CloneConfig {
    fn default() -> Self {
        Self { bundle_size: 15, mode: BundleMode::Disjoint, lr: 0.00075, epochs: 2000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClonedPolicySequence {
    pub spec: NetSpec,
    pub bundle_size: usize,
    pub mode: BundleMode,
    pub policies: Vec<Mlp>,
    /// Cloning loss of each policy against its own bundle.
    pub final_losses: Vec<f64>,
}

impl ClonedPolicySequence {
    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }
}

/// Clones one policy per bundle, each warm-started from its predecessor.
pub fn clone_policies(
    log: &TrajectoryLog,
    spec: &NetSpec,
    cfg: &CloneConfig,
    num_states: usize,
) -> Result<ClonedPolicySequence> {
    let bundles = make_bundles(log, cfg.bundle_size, cfg.mode)?;
    clone_bundles(&bundles, spec, cfg, num_states)
}

pub fn clone_bundles(
    bundles: &[Bundle],
    spec: &NetSpec,
    cfg: &CloneConfig,
    num_states: usize,
) -> Result<ClonedPolicySequence> {
    let spec = NetSpec { init_seed: cfg.seed, ..spec.clone() };
    let num_actions = *spec.layer_sizes.last().unwrap_or(&0);
    let dists = bundles.iter().map(|b| empirical_distribution(b, num_actions)).collect::<Result<Vec<_>>>()?;
    let mut net = Mlp::new(&spec)?;
    let mut policies = Vec::with_capacity(bundles.len());
    let mut final_losses = Vec::with_capacity(bundles.len());
    for (bundle, dist) in bundles.iter().zip(&dists) {
        let loss = fit_distribution(&mut net, dist, num_states, cfg.lr, cfg.epochs)?;
        if !loss.is_finite() || !net.params().all_finite() {
            return Err(Error::Divergence(format!(
                "cloning loss became non-finite on bundle {}",
                bundle.index
            )));
        }
        policies.push(net.clone());
        final_losses.push(loss);
    }
    Ok(ClonedPolicySequence { spec, bundle_size: cfg.bundle_size, mode: cfg.mode, policies, final_losses })
}
