//! On-disk pipeline: forward -> clone -> reward -> bounds -> eval.
//!
//! Every stage reads its inputs from the output directory, writes its
//! artifacts atomically, and records a manifest with the sha256 of every
//! input and output. Artifacts start with `#` header lines carrying the
//! config hash and seeds.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::bundle::{clone_policies, BundleMode, ClonedPolicySequence};
use crate::config::PipelineConfig;
use crate::eval::{
    confidence_bands, evaluate_policy, grid_csv, grid_pgm, last_layer_norm_series, mean_std, normalize_grid,
    rank_correlation, results_table_csv, retrain_from_beta, truncate_bundles, GridSource, ReturnStats,
    TableRow,
};
use crate::forward::{parse_true_rewards_csv, reinforce_train, true_rewards_csv, TrajectoryLog};
use crate::gridworld::Environment;
use crate::reward::{predict_rewards, train_beta};
use crate::theory::{bound_sweep, estimate_epsilon, optimal_bundle_size, sweep_csv};
use crate::tinynn::{Head, Mlp, NetSpec, Snapshot};
use crate::{Error, Result};

pub const STAGES: [&str; 5] = ["forward", "clone", "reward", "bounds", "eval"];

const PGM_CELL_PX: usize = 8;

/// File layout under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn trajectories(&self) -> PathBuf {
        self.file("trajectories.csv")
    }

    pub fn true_rewards(&self) -> PathBuf {
        self.file("true_rewards.csv")
    }

    pub fn forward_policy(&self) -> PathBuf {
        self.file("forward_policy.txt")
    }

    pub fn policies_dir(&self) -> PathBuf {
        self.file("policies")
    }

    pub fn policy(&self, index: usize) -> PathBuf {
        self.policies_dir().join(policy_file_name(index))
    }

    pub fn policies_manifest(&self) -> PathBuf {
        self.policies_dir().join("manifest.txt")
    }

    pub fn beta(&self) -> PathBuf {
        self.file("beta.txt")
    }

    pub fn stage_manifest(&self, stage: &str) -> PathBuf {
        self.file(&format!("{stage}.manifest"))
    }

    fn rel(&self, path: &Path) -> String {
        path.strip_prefix(&self.root).unwrap_or(path).display().to_string()
    }
}

fn policy_file_name(index: usize) -> String {
    format!("policy_{index:04}.txt")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temp file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn seeds_line(cfg: &PipelineConfig) -> String {
    let beta: Vec<String> = cfg.band_seeds().iter().map(|s| s.to_string()).collect();
    format!(
        "seeds forward={} bundle={} beta={} eval={}",
        cfg.forward.seed,
        cfg.bundle.seed,
        beta.join(","),
        cfg.eval.seed
    )
}

/// Header lines (without `# `) shared by every artifact of a stage.
pub fn manifest_header(cfg: &PipelineConfig, stage: &str) -> Vec<String> {
    vec![format!("stage={stage} config_hash={}", cfg.hash()), seeds_line(cfg)]
}

fn commented(header: &[String], body: &str) -> String {
    let mut out = String::new();
    for line in header {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str(body);
    out
}

/// Tracks the files one stage read and wrote.
struct Stage<'a> {
    name: &'static str,
    cfg: &'a PipelineConfig,
    layout: &'a Layout,
    inputs: Vec<(String, String)>,
    outputs: Vec<(String, String)>,
}

impl<'a> Stage<'a> {
    fn new(name: &'static str, cfg: &'a PipelineConfig, layout: &'a Layout) -> Self {
        Self { name, cfg, layout, inputs: Vec::new(), outputs: Vec::new() }
    }

    fn header(&self) -> Vec<String> {
        manifest_header(self.cfg, self.name)
    }

    fn read(&mut self, path: &Path, producer: &'static str) -> Result<String> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingArtifact { path: path.to_path_buf(), stage: producer })
            }
            Err(e) => return Err(e.into()),
        };
        self.inputs.push((self.layout.rel(path), sha256_hex(text.as_bytes())));
        Ok(text)
    }

    fn write(&mut self, path: &Path, contents: &str) -> Result<()> {
        write_atomic(path, contents.as_bytes())?;
        self.outputs.push((self.layout.rel(path), sha256_hex(contents.as_bytes())));
        Ok(())
    }

    /// Writes `body` after the stage header.
    fn artifact(&mut self, name: &str, body: &str) -> Result<()> {
        let text = commented(&self.header(), body);
        self.write(&self.layout.file(name), &text)
    }

    /// Raw grid CSV plus a normalized graymap.
    fn grid(&mut self, stem: &str, values: &[f64], width: usize, normalized: &[f64]) -> Result<()> {
        self.artifact(&format!("{stem}.csv"), &grid_csv(values, width))?;
        let pgm = grid_pgm(normalized, width, PGM_CELL_PX);
        // graymaps cannot carry a `#` line before the magic number
        let mut lines = pgm.splitn(2, '\n');
        let magic = lines.next().unwrap_or("P2");
        let rest = lines.next().unwrap_or("");
        let header: String = self.header().iter().map(|l| format!("# {l}\n")).collect();
        self.write(&self.layout.file(&format!("{stem}.pgm")), &format!("{magic}\n{header}{rest}"))
    }

    fn finish(self) -> Result<()> {
        let mut text = commented(&self.header(), "");
        for (path, sha) in &self.inputs {
            text.push_str(&format!("input {path} sha256={sha}\n"));
        }
        for (path, sha) in &self.outputs {
            text.push_str(&format!("output {path} sha256={sha}\n"));
        }
        write_atomic(&self.layout.stage_manifest(self.name), text.as_bytes())
    }
}

fn parse_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), reason: reason.into() }
}

fn environment(cfg: &PipelineConfig) -> Result<Environment> {
    Environment::new(cfg.grid.clone())
}

fn load_log(stage: &mut Stage<'_>, env: &Environment) -> Result<TrajectoryLog> {
    let path = stage.layout.trajectories();
    let text = stage.read(&path, "forward")?;
    let log = TrajectoryLog::parse_csv(&text).map_err(|e| parse_err(&path, e))?;
    log.validate().map_err(|e| parse_err(&path, e.to_string()))?;
    if log.env_hash != env.fingerprint() {
        return Err(Error::Usage(format!(
            "{} was produced for a different environment; rerun the forward stage",
            path.display()
        )));
    }
    Ok(log)
}

fn load_snapshot(stage: &mut Stage<'_>, path: &Path, producer: &'static str) -> Result<Mlp> {
    let text = stage.read(path, producer)?;
    Ok(Snapshot::parse(&text).map_err(|e| parse_err(path, e))?.net)
}

fn load_policies(stage: &mut Stage<'_>) -> Result<ClonedPolicySequence> {
    let manifest_path = stage.layout.policies_manifest();
    let text = stage.read(&manifest_path, "clone")?;
    let bad = |reason: String| parse_err(&manifest_path, reason);
    let mut layers = None;
    let mut seed = None;
    let mut bundle_size = None;
    let mut mode = None;
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.is_empty() || line.starts_with("index,") {
            continue;
        }
        if let Some((key, value)) = line.split_once('=') {
            match key {
                "spec" => {
                    let sizes: std::result::Result<Vec<usize>, _> =
                        value.split('x').map(str::parse).collect();
                    layers = Some(sizes.map_err(|e| bad(format!("spec: {e}")))?);
                }
                "init_seed" => seed = Some(value.parse::<u64>().map_err(|e| bad(format!("init_seed: {e}")))?),
                "bundle_size" => {
                    bundle_size = Some(value.parse::<usize>().map_err(|e| bad(format!("bundle_size: {e}")))?)
                }
                "mode" => mode = Some(BundleMode::parse(value).map_err(|e| bad(e.to_string()))?),
                "count" => {}
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad(format!("expected `index,file,final_loss,sha256`, got `{line}`")));
        }
        let loss: f64 = fields[2].parse().map_err(|e| bad(format!("final_loss: {e}")))?;
        rows.push((fields[1].to_string(), loss, fields[3].to_string()));
    }
    let layers = layers.ok_or_else(|| bad("missing spec".into()))?;
    let spec = NetSpec::new(layers, Head::Softmax, seed.ok_or_else(|| bad("missing init_seed".into()))?);
    let mut policies = Vec::with_capacity(rows.len());
    let mut final_losses = Vec::with_capacity(rows.len());
    for (file, loss, sha) in rows {
        let path = stage.layout.policies_dir().join(&file);
        let text = stage.read(&path, "clone")?;
        if sha256_hex(text.as_bytes()) != sha {
            return Err(parse_err(&path, "contents do not match the policy manifest hash"));
        }
        policies.push(Snapshot::parse(&text).map_err(|e| parse_err(&path, e))?.net);
        final_losses.push(loss);
    }
    Ok(ClonedPolicySequence {
        spec,
        bundle_size: bundle_size.ok_or_else(|| bad("missing bundle_size".into()))?,
        mode: mode.ok_or_else(|| bad("missing mode".into()))?,
        policies,
        final_losses,
    })
}

fn snapshot_text(header: Vec<String>, net: &Mlp) -> String {
    Snapshot { header, net: net.clone() }.to_text()
}

#[derive(Debug, Clone)]
pub struct ForwardSummary {
    pub episodes: usize,
    /// Mean true return of the last `min(500, E)` training episodes.
    pub tail_mean: f64,
}

pub fn run_forward(cfg: &PipelineConfig) -> Result<ForwardSummary> {
    let layout = Layout::new(&cfg.output_dir);
    let mut stage = Stage::new("forward", cfg, &layout);
    let env = environment(cfg)?;
    let run = reinforce_train(&env, &cfg.forward_spec(), &cfg.forward_config())?;
    let header = stage.header();
    stage.write(&layout.trajectories(), &run.log.to_csv(&header))?;
    stage.write(&layout.true_rewards(), &true_rewards_csv(&run.true_rewards, &header))?;
    stage.write(&layout.forward_policy(), &snapshot_text(header, &run.policy))?;
    let table = env.reward_table();
    let normalized = normalize_grid(&table, GridSource::True)?;
    stage.grid("true_reward", &table, cfg.grid.width, &normalized.values)?;
    stage.artifact("true_reward_normalized.csv", &grid_csv(&normalized.values, cfg.grid.width))?;
    stage.finish()?;
    let returns: Vec<f64> = run.true_rewards.iter().map(|ep| ep.iter().sum()).collect();
    let tail = &returns[returns.len().saturating_sub(500)..];
    Ok(ForwardSummary { episodes: returns.len(), tail_mean: tail.iter().sum::<f64>() / tail.len() as f64 })
}

/// True per-episode returns recorded by the forward stage.
pub fn load_training_returns(cfg: &PipelineConfig) -> Result<Vec<f64>> {
    let path = Layout::new(&cfg.output_dir).true_rewards();
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingArtifact { path, stage: "forward" })
        }
        Err(e) => return Err(e.into()),
    };
    let rewards = parse_true_rewards_csv(&text).map_err(|e| parse_err(&path, e))?;
    Ok(rewards.iter().map(|ep| ep.iter().sum()).collect())
}

#[derive(Debug, Clone)]
pub struct CloneSummary {
    pub bundles: usize,
    pub final_losses: Vec<f64>,
}

pub fn run_clone(cfg: &PipelineConfig) -> Result<CloneSummary> {
    let layout = Layout::new(&cfg.output_dir);
    let mut stage = Stage::new("clone", cfg, &layout);
    let env = environment(cfg)?;
    let log = load_log(&mut stage, &env)?;
    let seq = clone_policies(&log, &cfg.clone_spec(), &cfg.clone_config(), env.num_states())?;
    if let Ok(entries) = fs::read_dir(layout.policies_dir()) {
        // snapshots from an earlier run with more bundles
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().to_string();
            if name.starts_with("policy_") && name.ends_with(".txt") {
                fs::remove_file(entry.path())?;
            }
        }
    }
    let mut manifest = commented(&stage.header(), "");
    manifest.push_str(&format!(
        "spec={}\ninit_seed={}\nbundle_size={}\nmode={}\ncount={}\nindex,file,final_loss,sha256\n",
        seq.spec.label(),
        seq.spec.init_seed,
        seq.bundle_size,
        seq.mode.as_str(),
        seq.len()
    ));
    for (k, (policy, loss)) in seq.policies.iter().zip(&seq.final_losses).enumerate() {
        let mut header = stage.header();
        header.push(format!("bundle={}", k + 1));
        let text = snapshot_text(header, policy);
        stage.write(&layout.policy(k + 1), &text)?;
        manifest.push_str(&format!(
            "{},{},{loss:?},{}\n",
            k + 1,
            policy_file_name(k + 1),
            sha256_hex(text.as_bytes())
        ));
    }
    stage.write(&layout.policies_manifest(), &manifest)?;
    stage.finish()?;
    Ok(CloneSummary { bundles: seq.len(), final_losses: seq.final_losses })
}

#[derive(Debug, Clone)]
pub struct RewardSummary {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub argmax: usize,
    pub losses: Vec<f64>,
}

pub fn run_reward(cfg: &PipelineConfig) -> Result<RewardSummary> {
    let layout = Layout::new(&cfg.output_dir);
    let mut stage = Stage::new("reward", cfg, &layout);
    let env = environment(cfg)?;
    let log = load_log(&mut stage, &env)?;
    let policies = load_policies(&mut stage)?;
    let run = train_beta(&log, &policies, &cfg.beta_config())?;
    let raw = predict_rewards(&run.beta)?;
    let normalized = normalize_grid(&raw, GridSource::Learned)?;
    let header = stage.header();
    stage.write(&layout.beta(), &snapshot_text(header, &run.beta))?;
    let mut losses = String::from("episode,loss\n");
    for (i, l) in run.losses.iter().enumerate() {
        losses.push_str(&format!("{},{l:?}\n", i + 1));
    }
    stage.artifact("beta_losses.csv", &losses)?;
    stage.artifact("learned_reward_raw.csv", &grid_csv(&raw, cfg.grid.width))?;
    stage.grid("learned_reward", &normalized.values, cfg.grid.width, &normalized.values)?;
    stage.finish()?;
    Ok(RewardSummary { argmax: normalized.argmax(), normalized: normalized.values, raw, losses: run.losses })
}

#[derive(Debug, Clone)]
pub struct BoundsSummary {
    pub epsilon: f64,
    pub optimal_bundle_size: usize,
    pub optimal_bound: f64,
    pub totals: Vec<f64>,
}

pub fn run_bounds(cfg: &PipelineConfig) -> Result<BoundsSummary> {
    let layout = Layout::new(&cfg.output_dir);
    let mut stage = Stage::new("bounds", cfg, &layout);
    let epsilon = match cfg.bounds.epsilon {
        Some(e) => e,
        None => {
            let policies = load_policies(&mut stage)?;
            estimate_epsilon(&policies, cfg.grid.num_states())?
        }
    };
    let inputs = cfg.bound_inputs(epsilon);
    let sweep = bound_sweep(&inputs, cfg.bounds.bmax)?;
    let best = optimal_bundle_size(&inputs, cfg.bounds.bmax)?;
    let mut header = stage.header();
    header.push(format!(
        "epsilon={epsilon:?} delta={:?} policy_class_size={:?}",
        inputs.delta, inputs.policy_class_size
    ));
    header.push(format!(
        "optimal_B={} bound={:?} standard={:?} advantage={}",
        best.bundle_size, best.bound, best.standard_bound, best.advantage
    ));
    stage.write(&layout.file("bounds.csv"), &commented(&header, &sweep_csv(&sweep)))?;
    stage.finish()?;
    Ok(BoundsSummary {
        epsilon,
        optimal_bundle_size: best.bundle_size,
        optimal_bound: best.bound,
        totals: sweep.iter().map(|r| r.bundle_bound).collect(),
    })
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    /// Last 500 (or fewer) training episodes of the learner.
    pub forward_training: ReturnStats,
    /// Fresh rollouts of the learner's final snapshot.
    pub forward: ReturnStats,
    pub retrained: ReturnStats,
    pub retrained_greedy_return: f64,
    pub retrained_reaches_goal: bool,
    pub learned_argmax: usize,
    pub band_widths: Vec<f64>,
    pub visitation: Vec<f64>,
    /// Spearman correlation of visitation percentage vs band width.
    pub visitation_width_correlation: f64,
    /// Normalized goal value from the first `first_k` bundles, if requested.
    pub early_goal_value: Option<f64>,
    pub norm_mean_diff: f64,
}

pub fn run_eval(cfg: &PipelineConfig) -> Result<EvalSummary> {
    let layout = Layout::new(&cfg.output_dir);
    let mut stage = Stage::new("eval", cfg, &layout);
    let env = environment(cfg)?;
    let width = cfg.grid.width;
    let log = load_log(&mut stage, &env)?;
    let forward_policy = load_snapshot(&mut stage, &layout.forward_policy(), "forward")?;
    let policies = load_policies(&mut stage)?;
    let beta = load_snapshot(&mut stage, &layout.beta(), "reward")?;

    let forward = evaluate_policy(&forward_policy, &env, cfg.eval.episodes, cfg.eval.seed)?;
    let retrain = retrain_from_beta(&beta, &env, &cfg.retrain_spec(), &cfg.retrain_config())?;
    let mut header = stage.header();
    header.push(format!("greedy_return={:?} reaches_goal={}", retrain.greedy_return, retrain.reaches_goal));
    stage.write(&layout.file("retrained_policy.txt"), &snapshot_text(header, &retrain.policy))?;
    let returns_path = layout.true_rewards();
    let returns_text = stage.read(&returns_path, "forward")?;
    let training: Vec<f64> = parse_true_rewards_csv(&returns_text)
        .map_err(|e| parse_err(&returns_path, e))?
        .iter()
        .map(|ep| ep.iter().sum())
        .collect();
    let tail = mean_std(&training[training.len().saturating_sub(500)..]);
    let rows = vec![
        TableRow {
            description: format!(
                "forward policy: last {} training episodes ({})",
                tail.n,
                cfg.forward_spec().label()
            ),
            mean: tail.mean,
            std: tail.std,
            seeds: vec![cfg.forward.seed],
        },
        TableRow {
            description: format!("forward policy: final snapshot ({})", cfg.forward_spec().label()),
            mean: forward.mean,
            std: forward.std,
            seeds: vec![cfg.forward.seed, cfg.eval.seed],
        },
        TableRow {
            description: format!(
                "retrained on learned reward ({}; {})",
                cfg.retrain_spec().label(),
                cfg.bundle.mode.as_str()
            ),
            mean: retrain.evaluation.mean,
            std: retrain.evaluation.std,
            seeds: vec![cfg.forward.seed, cfg.bundle.seed, cfg.beta_config().seed, cfg.eval.seed],
        },
    ];
    stage.artifact("results.csv", &results_table_csv(&rows))?;

    let learned = normalize_grid(&predict_rewards(&beta)?, GridSource::Learned)?;
    let bands = confidence_bands(&log, &policies, &cfg.beta_config(), &cfg.band_seeds())?;
    let widths = bands.widths();
    let correlation = rank_correlation(&bands.visitation, &widths)?;
    stage.grid("band_lower", &bands.lower, width, &bands.lower)?;
    stage.grid("band_upper", &bands.upper, width, &bands.upper)?;
    stage.grid("band_mean", &bands.mean, width, &bands.mean)?;
    let max_visit = bands.visitation.iter().cloned().fold(0.0, f64::max);
    let visit_scaled: Vec<f64> =
        bands.visitation.iter().map(|v| if max_visit > 0.0 { v / max_visit } else { 0.0 }).collect();
    stage.grid("visitation", &bands.visitation, width, &visit_scaled)?;

    let early_goal_value = if cfg.eval.first_k > 0 {
        let prefix = truncate_bundles(&policies, cfg.eval.first_k)?;
        let run = train_beta(&log, &prefix, &cfg.beta_config())?;
        let grid = normalize_grid(&predict_rewards(&run.beta)?, GridSource::Learned)?;
        stage.grid("early_reward", &grid.values, width, &grid.values)?;
        Some(grid.values[env.goal()])
    } else {
        None
    };

    let norms = last_layer_norm_series(&policies)?;
    let mut norm_csv = String::from("bundle,norm,diff\n");
    for (k, n) in norms.norms.iter().enumerate() {
        let diff = if k == 0 { String::new() } else { format!("{:?}", norms.diffs[k - 1]) };
        norm_csv.push_str(&format!("{},{n:?},{diff}\n", k + 1));
    }
    stage.artifact("norms.csv", &norm_csv)?;

    let summary = EvalSummary {
        forward_training: tail,
        forward,
        retrained: retrain.evaluation,
        retrained_greedy_return: retrain.greedy_return,
        retrained_reaches_goal: retrain.reaches_goal,
        learned_argmax: learned.argmax(),
        band_widths: widths,
        visitation: bands.visitation,
        visitation_width_correlation: correlation,
        early_goal_value,
        norm_mean_diff: norms.mean_diff(),
    };
    let mut kv = String::from("key,value\n");
    let mut put = |k: &str, v: String| kv.push_str(&format!("{k},{v}\n"));
    put("goal", env.goal().to_string());
    put("learned_argmax", summary.learned_argmax.to_string());
    put("retrained_greedy_return", format!("{:?}", summary.retrained_greedy_return));
    put("retrained_reaches_goal", summary.retrained_reaches_goal.to_string());
    put("visitation_width_correlation", format!("{:?}", summary.visitation_width_correlation));
    put("early_goal_value", summary.early_goal_value.map_or("skipped".to_string(), |v| format!("{v:?}")));
    put("norm_mean_diff", format!("{:?}", summary.norm_mean_diff));
    stage.artifact("summary.csv", &kv)?;
    stage.finish()?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub forward: ForwardSummary,
    pub clone: CloneSummary,
    pub reward: RewardSummary,
    pub bounds: BoundsSummary,
    pub eval: EvalSummary,
}

/// Runs every stage in order and saves the effective config as `config.txt`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineSummary> {
    write_atomic(&Layout::new(&cfg.output_dir).file("config.txt"), cfg.to_text().as_bytes())?;
    let forward = run_forward(cfg)?;
    log::info!("forward: last-episode mean return {:.2}", forward.tail_mean);
    let clone = run_clone(cfg)?;
    log::info!("clone: {} policies", clone.bundles);
    let reward = run_reward(cfg)?;
    log::info!("reward: normalized argmax at cell {}", reward.argmax);
    let bounds = run_bounds(cfg)?;
    log::info!("bounds: optimal B = {}", bounds.optimal_bundle_size);
    let eval = run_eval(cfg)?;
    Ok(PipelineSummary { forward, clone, reward, bounds, eval })
}

/// Dispatches one stage by name.
pub fn run_stage(name: &str, cfg: &PipelineConfig) -> Result<()> {
    match name {
        "forward" => run_forward(cfg).map(drop),
        "clone" => run_clone(cfg).map(drop),
        "reward" => run_reward(cfg).map(drop),
        "bounds" => run_bounds(cfg).map(drop),
        "eval" => run_eval(cfg).map(drop),
        "pipeline" => run_pipeline(cfg).map(drop),
        other => Err(Error::Usage(format!("unknown stage `{other}`"))),
    }
}
