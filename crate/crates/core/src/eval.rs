//! Evaluation: normalized reward grids, policy returns, retraining on a learned
//! reward, confidence bands over repeated reward fits, and weight-drift series.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bundle::ClonedPolicySequence;
use crate::forward::{
    reinforce_train_with, run_episode, run_greedy_episode, ForwardConfig, TabularReward, TrajectoryLog,
};
use crate::gridworld::Environment;
use crate::reward::{predict_rewards, train_beta, BetaConfig};
use crate::tinynn::{Mlp, NetSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridSource {
    True,
    Learned,
}

impl GridSource {
    pub fn as_str(self) -> &'static str {
        match self {
            GridSource::True => "true",
            GridSource::Learned => "learned",
        }
    }
}

/// Min-max normalized per-cell values.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedGrid {
    pub values: Vec<f64>,
    pub source: GridSource,
    pub min: f64,
    pub max: f64,
}

impl NormalizedGrid {
    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Affine map onto [0, 1]. A constant input maps to 0.5 everywhere.
pub fn normalize_grid(raw: &[f64], source: GridSource) -> Result<NormalizedGrid> {
    if raw.is_empty() {
        return Err(Error::usage("cannot normalize an empty grid"));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::usage("grid contains a non-finite value"));
    }
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let values = if max > min {
        raw.iter().map(|v| (v - min) / (max - min)).collect()
    } else {
        log::warn!("{} grid is constant ({min}); normalizing to 0.5", source.as_str());
        vec![0.5; raw.len()]
    };
    Ok(NormalizedGrid { values, source, min, max })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnStats {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn mean_std(xs: &[f64]) -> ReturnStats {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var =
        if n > 1 { xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    ReturnStats { mean, std: var.sqrt(), n }
}

/// Undiscounted returns of `n_episodes` sampled episodes under the true rewards.
pub fn evaluate_policy(policy: &Mlp, env: &Environment, n_episodes: usize, seed: u64) -> Result<ReturnStats> {
    if n_episodes < 2 {
        return Err(Error::usage("policy evaluation needs at least two episodes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut returns = Vec::with_capacity(n_episodes);
    for e in 0..n_episodes {
        let (_, rewards) = run_episode(env, policy, e, &mut rng)?;
        returns.push(rewards.iter().sum());
    }
    Ok(mean_std(&returns))
}

/// How raw network outputs become rewards for retraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BetaUnits {
    /// Divide by the learner's step size: the fitted network absorbs it.
    #[default]
    PerAlpha,
    Raw,
}

impl BetaUnits {
    pub fn as_str(self) -> &'static str {
        match self {
            BetaUnits::PerAlpha => "per_alpha",
            BetaUnits::Raw => "raw",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "per_alpha" => Ok(BetaUnits::PerAlpha),
            "raw" => Ok(BetaUnits::Raw),
            other => Err(Error::config(format!("unknown beta units `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrainConfig {
    pub forward: ForwardConfig,
    pub scale: f64,
    pub units: BetaUnits,
    pub eval_episodes: usize,
    pub eval_seed: u64,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self {
            forward: ForwardConfig::default(),
            scale: 1.0,
            units: BetaUnits::default(),
            eval_episodes: 500,
            eval_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RetrainOutcome {
    pub policy: Mlp,
    /// Per-state rewards the policy was trained on.
    pub rewards: Vec<f64>,
    /// True undiscounted return of every retraining episode.
    pub training_returns: Vec<f64>,
    /// Fresh rollouts of the final policy, scored on the true rewards.
    pub evaluation: ReturnStats,
    pub greedy_return: f64,
    pub reaches_goal: bool,
}

/// Per-state rewards handed to the learner when retraining on `beta`.
pub fn retrain_rewards(beta: &Mlp, cfg: &RetrainConfig) -> Result<Vec<f64>> {
    let factor = match cfg.units {
        BetaUnits::PerAlpha => cfg.scale / cfg.forward.alpha,
        BetaUnits::Raw => cfg.scale,
    };
    Ok(predict_rewards(beta)?.into_iter().map(|r| r * factor).collect())
}

/// Trains a fresh policy on the environment's dynamics with rewards from `beta`,
/// then scores it against the true rewards.
pub fn retrain_from_beta(
    beta: &Mlp,
    env: &Environment,
    spec: &NetSpec,
    cfg: &RetrainConfig,
) -> Result<RetrainOutcome> {
    if !cfg.scale.is_finite() {
        return Err(Error::config("eval.beta_scale must be finite"));
    }
    let rewards = retrain_rewards(beta, cfg)?;
    if rewards.len() != env.num_states() {
        return Err(Error::usage(format!(
            "reward network covers {} states, environment has {}",
            rewards.len(),
            env.num_states()
        )));
    }
    let run = reinforce_train_with(env, &TabularReward(rewards.clone()), spec, &cfg.forward)?;
    let training_returns = run.true_rewards.iter().map(|ep| ep.iter().sum()).collect();
    let evaluation = evaluate_policy(&run.policy, env, cfg.eval_episodes, cfg.eval_seed)?;
    let (steps, greedy) = run_greedy_episode(env, &run.policy)?;
    Ok(RetrainOutcome {
        reaches_goal: steps.iter().any(|s| s.next_state == env.goal()),
        greedy_return: greedy.iter().sum(),
        policy: run.policy,
        rewards,
        training_returns,
        evaluation,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceBands {
    pub seeds: Vec<u64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Share of logged steps spent in each state, in percent.
    pub visitation: Vec<f64>,
}

impl ConfidenceBands {
    pub fn widths(&self) -> Vec<f64> {
        self.upper.iter().zip(&self.lower).map(|(u, l)| u - l).collect()
    }
}

/// Percentage of logged steps taken from each state.
pub fn visitation_percent(log: &TrajectoryLog, num_states: usize) -> Vec<f64> {
    let visits = log.state_visits(num_states);
    let total: usize = visits.iter().sum();
    if total == 0 {
        return vec![0.0; num_states];
    }
    visits.iter().map(|v| 100.0 * *v as f64 / total as f64).collect()
}

/// Per-state 95% band from normalized reward estimates.
pub fn bands_from_estimates(estimates: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if estimates.len() < 2 {
        return Err(Error::usage("confidence bands need at least two runs"));
    }
    let n = estimates[0].len();
    let mut mean = Vec::with_capacity(n);
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for s in 0..n {
        let column: Vec<f64> = estimates.iter().map(|e| e[s]).collect();
        let stats = mean_std(&column);
        mean.push(stats.mean);
        lower.push(stats.mean - 1.96 * stats.std);
        upper.push(stats.mean + 1.96 * stats.std);
    }
    Ok((mean, lower, upper))
}

/// Fits one reward network per seed on the same log and policies and reports
/// the spread of the normalized estimates.
pub fn confidence_bands(
    log: &TrajectoryLog,
    policies: &ClonedPolicySequence,
    cfg: &BetaConfig,
    seeds: &[u64],
) -> Result<ConfidenceBands> {
    if seeds.len() < 2 {
        return Err(Error::usage("confidence bands need at least two runs"));
    }
    let mut estimates = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let run = train_beta(log, policies, &BetaConfig { seed, ..cfg.clone() })?;
        let grid = normalize_grid(&predict_rewards(&run.beta)?, GridSource::Learned)?;
        estimates.push(grid.values);
    }
    let (mean, lower, upper) = bands_from_estimates(&estimates)?;
    let num_states = mean.len();
    Ok(ConfidenceBands {
        seeds: seeds.to_vec(),
        mean,
        lower,
        upper,
        visitation: visitation_percent(log, num_states),
    })
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|a, b| xs[*a].total_cmp(&xs[*b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // tied block shares the average of its 1-based ranks
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[order[k]] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties. Zero when either
/// side is constant.
pub fn rank_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::usage("rank correlation needs two equal-length series of length >= 2"));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let mx = rx.iter().sum::<f64>() / rx.len() as f64;
    let my = ry.iter().sum::<f64>() / ry.len() as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// The first `first_k` cloned policies.
pub fn truncate_bundles(policies: &ClonedPolicySequence, first_k: usize) -> Result<ClonedPolicySequence> {
    if first_k < 1 || first_k > policies.len() {
        return Err(Error::usage(format!("first_k must lie in 1..={}, got {first_k}", policies.len())));
    }
    Ok(ClonedPolicySequence {
        policies: policies.policies[..first_k].to_vec(),
        final_losses: policies.final_losses[..first_k].to_vec(),
        ..policies.clone()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormSeries {
    pub norms: Vec<f64>,
    /// `|norm[k+1] - norm[k]|`.
    pub diffs: Vec<f64>,
}

impl NormSeries {
    pub fn mean_diff(&self) -> f64 {
        if self.diffs.is_empty() {
            0.0
        } else {
            self.diffs.iter().sum::<f64>() / self.diffs.len() as f64
        }
    }
}

pub fn last_layer_norm_series(policies: &ClonedPolicySequence) -> Result<NormSeries> {
    if policies.is_empty() {
        return Err(Error::usage("no cloned policies"));
    }
    let norms: Vec<f64> = policies.policies.iter().map(|p| p.last_layer().norm()).collect();
    let diffs = norms.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    Ok(NormSeries { norms, diffs })
}

/// Row-major grid of `width` columns, one CSV line per row.
pub fn grid_csv(values: &[f64], width: usize) -> String {
    let mut out = String::new();
    for row in values.chunks(width) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_grid_csv(text: &str) -> std::result::Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        for cell in line.split(',') {
            out.push(cell.trim().parse().map_err(|e| format!("line {}: {e}", i + 1))?);
        }
    }
    Ok(out)
}

/// Plain (ASCII) graymap with each cell drawn as a `cell_px` square.
/// Values are clamped to [0, 1] and mapped to 0..=255.
pub fn grid_pgm(values: &[f64], width: usize, cell_px: usize) -> String {
    let height = values.len().div_ceil(width);
    let cell_px = cell_px.max(1);
    let mut out = format!("P2\n{} {}\n255\n", width * cell_px, height * cell_px);
    for row in 0..height {
        let line: Vec<String> = (0..width * cell_px)
            .map(|x| {
                let v = values.get(row * width + x / cell_px).copied().unwrap_or(0.0);
                ((v.clamp(0.0, 1.0) * 255.0).round() as u8).to_string()
            })
            .collect();
        let line = line.join(" ");
        for _ in 0..cell_px {
            out.push_str(&line);
            out.push('\n');
        }
    }
    out
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub description: String,
    pub mean: f64,
    pub std: f64,
    pub seeds: Vec<u64>,
}

pub fn results_table_csv(rows: &[TableRow]) -> String {
    let mut out = String::from("description,mean,std,seeds\n");
    for r in rows {
        let seeds: Vec<String> = r.seeds.iter().map(|s| s.to_string()).collect();
        out.push_str(&format!("{},{:.3},{:.3},{}\n", r.description, r.mean, r.std, seeds.join(" ")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::BundleMode;
    use crate::gridworld::GridConfig;
    use crate::tinynn::Head;
    use proptest::prelude::*;

    fn env() -> Environment {
        Environment::new(GridConfig::default()).unwrap()
    }

    /// Single linear layer whose bias makes `action` almost certain everywhere.
    fn fixed_policy(action: usize) -> Mlp {
        let mut net = Mlp::zeros(&[49, 3], Head::Softmax).unwrap();
        let n = net.params().len();
        net.params_mut().values_mut()[n - 3 + action] = 60.0;
        net
    }

    fn sequence(policies: Vec<Mlp>) -> ClonedPolicySequence {
        ClonedPolicySequence {
            spec: NetSpec::new(policies[0].layer_sizes(), Head::Softmax, 0),
            bundle_size: 1,
            mode: BundleMode::Disjoint,
            final_losses: vec![0.0; policies.len()],
            policies,
        }
    }

    #[test]
    fn normalizing_true_rewards_puts_goal_at_one() {
        let e = env();
        let g = normalize_grid(&e.reward_table(), GridSource::True).unwrap();
        assert_eq!(g.values[48], 1.0);
        assert_eq!(g.argmax(), 48);
        assert_eq!(g.values.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!((g.min, g.max), (-5.0, 20.0));
    }

    #[test]
    fn constant_grid_maps_to_half() {
        let g = normalize_grid(&[3.0; 5], GridSource::Learned).unwrap();
        assert!(g.values.iter().all(|v| *v == 0.5));
        assert!(normalize_grid(&[1.0, f64::NAN], GridSource::Learned).is_err());
        assert!(normalize_grid(&[], GridSource::Learned).is_err());
    }

    #[test]
    fn always_left_stays_at_start() {
        let e = env();
        let stats = evaluate_policy(&fixed_policy(1), &e, 4, 0).unwrap();
        assert_eq!(stats.mean, 15.0 * e.reward_at(0));
        assert_eq!(stats.std, 0.0);
    }

    #[test]
    fn evaluation_is_deterministic_and_needs_two_episodes() {
        let e = env();
        let net = Mlp::new(&NetSpec::new(vec![49, 16, 3], Head::Softmax, 2)).unwrap();
        assert_eq!(evaluate_policy(&net, &e, 20, 5).unwrap(), evaluate_policy(&net, &e, 20, 5).unwrap());
        assert!(evaluate_policy(&net, &e, 1, 5).is_err());
    }

    #[test]
    fn mean_std_uses_sample_deviation() {
        let s = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_beta_retrains_without_error() {
        let e = env();
        let beta = Mlp::zeros(&[49, 4, 1], Head::Linear).unwrap();
        let cfg = RetrainConfig {
            forward: ForwardConfig { episodes: 50, ..ForwardConfig::default() },
            eval_episodes: 10,
            ..RetrainConfig::default()
        };
        let spec = NetSpec::new(vec![49, 16, 3], Head::Softmax, 0);
        let out = retrain_from_beta(&beta, &e, &spec, &cfg).unwrap();
        assert!(out.rewards.iter().all(|r| *r == 0.0));
        // zero rewards leave the policy at its initialization
        assert_eq!(out.policy, Mlp::new(&spec).unwrap());
        assert_eq!(out.training_returns.len(), 50);
    }

    #[test]
    fn retrain_rewards_scale_with_units() {
        let mut beta = Mlp::zeros(&[49, 2, 1], Head::Linear).unwrap();
        let n = beta.params().len();
        beta.params_mut().values_mut()[n - 1] = 0.003;
        let cfg = RetrainConfig { scale: 2.0, ..RetrainConfig::default() };
        let per_alpha = retrain_rewards(&beta, &cfg).unwrap();
        assert!((per_alpha[0] - 2.0 * 0.003 / 0.00075).abs() < 1e-12);
        let raw = retrain_rewards(&beta, &RetrainConfig { units: BetaUnits::Raw, ..cfg }).unwrap();
        assert!((raw[7] - 0.006).abs() < 1e-15);
    }

    #[test]
    fn identical_runs_give_zero_width_bands() {
        let est = vec![vec![0.1, 0.9, 0.4], vec![0.1, 0.9, 0.4]];
        let (mean, lower, upper) = bands_from_estimates(&est).unwrap();
        assert_eq!(lower, upper);
        assert_eq!(mean, est[0]);
        assert!(bands_from_estimates(&est[..1]).is_err());
    }

    #[test]
    fn visitation_sums_to_hundred() {
        let spec = NetSpec::new(vec![49, 16, 3], Head::Softmax, 0);
        let run = crate::forward::reinforce_train(
            &env(),
            &spec,
            &ForwardConfig { episodes: 20, ..ForwardConfig::default() },
        )
        .unwrap();
        let v = visitation_percent(&run.log, 49);
        assert!((v.iter().sum::<f64>() - 100.0).abs() < 1e-6);
    }

    #[test]
    fn rank_correlation_examples() {
        assert!((rank_correlation(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((rank_correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        // ties: ranks (1.5, 1.5, 3) vs (1, 2, 3)
        let r = rank_correlation(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r - 0.8660254037844387).abs() < 1e-12, "{r}");
        assert_eq!(rank_correlation(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn truncation_bounds() {
        let nets: Vec<Mlp> =
            (0..4).map(|s| Mlp::new(&NetSpec::new(vec![4, 3, 3], Head::Softmax, s)).unwrap()).collect();
        let seq = sequence(nets);
        assert_eq!(truncate_bundles(&seq, 4).unwrap(), seq);
        assert_eq!(truncate_bundles(&seq, 2).unwrap().len(), 2);
        assert_eq!(truncate_bundles(&seq, 0).unwrap_err().category(), "usage");
        assert!(truncate_bundles(&seq, 5).is_err());
    }

    #[test]
    fn norm_series_of_identical_policies_is_flat() {
        let net = Mlp::new(&NetSpec::new(vec![4, 3, 3], Head::Softmax, 1)).unwrap();
        let s = last_layer_norm_series(&sequence(vec![net.clone(), net.clone(), net])).unwrap();
        assert_eq!(s.norms.len(), 3);
        assert!(s.norms.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(s.mean_diff(), 0.0);
    }

    #[test]
    fn grid_outputs() {
        let values: Vec<f64> = (0..49).map(|i| i as f64 / 48.0).collect();
        let csv = grid_csv(&values, 7);
        assert_eq!(csv.lines().count(), 7);
        assert_eq!(parse_grid_csv(&csv).unwrap(), values);
        let pgm = grid_pgm(&values, 7, 2);
        let mut lines = pgm.lines();
        assert_eq!(lines.next(), Some("P2"));
        assert_eq!(lines.next(), Some("14 14"));
        assert_eq!(lines.next(), Some("255"));
        let first: Vec<&str> = lines.next().unwrap().split(' ').collect();
        assert_eq!(first.len(), 14);
        assert_eq!((first[0], first[2]), ("0", "5"));
        assert!(pgm.trim_end().ends_with("255"));
    }

    #[test]
    fn table_records_seeds() {
        let csv = results_table_csv(&[TableRow {
            description: "forward".into(),
            mean: 57.4612,
            std: 4.2,
            seeds: vec![0, 1],
        }]);
        assert_eq!(csv, "description,mean,std,seeds\nforward,57.461,4.200,0 1\n");
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(raw in proptest::collection::vec(-50.0f64..50.0, 1..60)) {
            let once = normalize_grid(&raw, GridSource::Learned).unwrap();
            let twice = normalize_grid(&once.values, GridSource::Learned).unwrap();
            for (a, b) in once.values.iter().zip(&twice.values) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!(once.values.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn bands_contain_the_mean(est in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 5), 2..6)) {
            let (mean, lower, upper) = bands_from_estimates(&est).unwrap();
            for s in 0..5 {
                prop_assert!(lower[s] <= mean[s] && mean[s] <= upper[s]);
            }
        }
    }
}
