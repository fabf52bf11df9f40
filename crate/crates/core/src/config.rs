//! Pipeline configuration: flat `key = value` lines, `#` comments, dotted
//! section prefixes. Every key must be present; unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::bundle::{BundleMode, CloneConfig};
use crate::eval::{BetaUnits, RetrainConfig};
use crate::forward::{ForwardConfig, ReturnMode};
use crate::gridworld::GridConfig;
use crate::reward::BetaConfig;
use crate::theory::BoundInputs;
use crate::tinynn::{Head, NetSpec, ScoreMode};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSection {
    pub episodes: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub layers: Vec<usize>,
    pub return_mode: ReturnMode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleSection {
    pub size: usize,
    pub mode: BundleMode,
    pub layers: Vec<usize>,
    pub clone_lr: f64,
    pub clone_epochs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaSection {
    pub layers: Vec<usize>,
    pub batch: usize,
    pub episodes: usize,
    pub lr: f64,
    pub gradient_mode: ScoreMode,
    /// The first seed trains the reported network; band runs take as many as
    /// they need, continuing with consecutive integers past the last listed.
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub episodes: usize,
    pub runs: usize,
    /// Prefix of cloned policies for the early-recovery estimate; 0 skips it.
    pub first_k: usize,
    pub beta_scale: f64,
    pub beta_units: BetaUnits,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsSection {
    /// `None` estimates epsilon from the cloned policies.
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub policy_class_size: f64,
    pub bmax: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub grid: GridConfig,
    pub forward: ForwardSection,
    pub bundle: BundleSection,
    pub beta: BetaSection,
    pub eval: EvalSection,
    pub bounds: BoundsSection,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let fwd = ForwardConfig::default();
        let clone = CloneConfig::default();
        let beta = BetaConfig::default();
        let retrain = RetrainConfig::default();
        Self {
            grid: GridConfig::default(),
            forward: ForwardSection {
                episodes: fwd.episodes,
                alpha: fwd.alpha,
                gamma: fwd.gamma,
                layers: vec![49, 16, 3],
                return_mode: fwd.return_mode,
                seed: 0,
            },
            bundle: BundleSection {
                size: clone.bundle_size,
                mode: clone.mode,
                layers: vec![49, 16, 3],
                clone_lr: clone.lr,
                clone_epochs: clone.epochs,
                seed: 1000,
            },
            beta: BetaSection {
                layers: beta.spec.layer_sizes.clone(),
                batch: beta.batch,
                episodes: beta.episodes,
                lr: beta.lr,
                gradient_mode: beta.mode,
                seeds: vec![2000],
            },
            eval: EvalSection {
                episodes: retrain.eval_episodes,
                runs: 10,
                first_k: 50,
                beta_scale: retrain.scale,
                beta_units: retrain.units,
                seed: 3000,
            },
            bounds: BoundsSection { epsilon: None, delta: 0.05, policy_class_size: 1e8, bmax: 100 },
            output_dir: PathBuf::from("out"),
        }
    }
}

pub const PRESETS: [&str; 6] = ["default", "hidden8", "hidden24", "hidden32", "layers3", "layers5"];

fn join<T: ToString>(xs: &[T], sep: &str) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

fn float(x: f64) -> String {
    format!("{x:?}")
}

fn layers_label(layers: &[usize]) -> String {
    join(layers, "x")
}

impl PipelineConfig {
    /// Derives every stage seed from one run seed.
    pub fn with_run_seed(mut self, seed: u64) -> Self {
        self.forward.seed = seed;
        self.bundle.seed = seed + 1000;
        self.beta.seeds = vec![seed + 2000];
        self.eval.seed = seed + 3000;
        self
    }

    /// Ordered `(key, value)` pairs; the canonical serialized form.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let g = &self.grid;
        vec![
            ("grid.width", g.width.to_string()),
            ("grid.height", g.height.to_string()),
            ("grid.start", g.start.to_string()),
            ("grid.goal", g.goal.to_string()),
            ("grid.goal_reward", float(g.goal_reward)),
            ("grid.horizon", g.horizon.to_string()),
            ("grid.reward_seed", g.reward_seed.to_string()),
            ("grid.terminate_at_goal", g.terminate_at_goal.to_string()),
            ("grid.cell_rewards", join(&g.cell_rewards.iter().map(|r| float(*r)).collect::<Vec<_>>(), ",")),
            ("forward.episodes", self.forward.episodes.to_string()),
            ("forward.alpha", float(self.forward.alpha)),
            ("forward.gamma", float(self.forward.gamma)),
            ("forward.layers", layers_label(&self.forward.layers)),
            ("forward.return_mode", self.forward.return_mode.as_str().to_string()),
            ("forward.seed", self.forward.seed.to_string()),
            ("bundle.size", self.bundle.size.to_string()),
            ("bundle.mode", self.bundle.mode.as_str().to_string()),
            ("bundle.layers", layers_label(&self.bundle.layers)),
            ("bundle.clone_lr", float(self.bundle.clone_lr)),
            ("bundle.clone_epochs", self.bundle.clone_epochs.to_string()),
            ("bundle.seed", self.bundle.seed.to_string()),
            ("beta.layers", layers_label(&self.beta.layers)),
            ("beta.batch", self.beta.batch.to_string()),
            ("beta.episodes", self.beta.episodes.to_string()),
            ("beta.lr", float(self.beta.lr)),
            ("beta.gradient_mode", self.beta.gradient_mode.as_str().to_string()),
            ("beta.seeds", join(&self.beta.seeds, ",")),
            ("eval.episodes", self.eval.episodes.to_string()),
            ("eval.runs", self.eval.runs.to_string()),
            ("eval.first_k", self.eval.first_k.to_string()),
            ("eval.beta_scale", float(self.eval.beta_scale)),
            ("eval.beta_units", self.eval.beta_units.as_str().to_string()),
            ("eval.seed", self.eval.seed.to_string()),
            ("bounds.epsilon", self.bounds.epsilon.map_or("estimate".to_string(), float)),
            ("bounds.delta", float(self.bounds.delta)),
            ("bounds.policy_class_size", float(self.bounds.policy_class_size)),
            ("bounds.bmax", self.bounds.bmax.to_string()),
            ("output.dir", self.output_dir.display().to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, value) in self.entries() {
            let prefix = key.split('.').next().unwrap_or("");
            if prefix != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("# {prefix}\n"));
                section = prefix;
            }
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    /// Hex sha256 of the canonical text without `output.dir`, so the same
    /// run in two directories carries the same hash.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (key, value) in self.entries() {
            if key != "output.dir" {
                h.update(format!("{key} = {value}\n").as_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Architecture variants for the cloned and retrained
    /// policies; the learner keeps its own network.
    pub fn preset(name: &str) -> Result<Self> {
        let layers = match name {
            "default" => vec![49, 16, 3],
            "hidden8" => vec![49, 8, 3],
            "hidden24" => vec![49, 24, 3],
            "hidden32" => vec![49, 32, 3],
            "layers3" => vec![49, 16, 16, 3],
            "layers5" => vec![49, 16, 16, 16, 16, 3],
            other => {
                return Err(Error::config(format!(
                    "unknown preset `{other}` (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        let mut cfg = Self::default();
        cfg.bundle.layers = layers;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", i + 1)))?;
            let key = key.trim().to_string();
            if map.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::config(format!("key `{key}` given twice")));
            }
        }
        Self::from_map(map)
    }

    /// Applies `key=value` overrides on top of this config.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut map: BTreeMap<String, String> =
            self.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        for (k, v) in overrides {
            if !map.contains_key(k) {
                return Err(Error::config(format!("unknown config key `{k}`")));
            }
            map.insert(k.clone(), v.clone());
        }
        Self::from_map(map)
    }

    fn from_map(mut map: BTreeMap<String, String>) -> Result<Self> {
        let mut r = Reader { map: &mut map };
        let width = r.num("grid.width")?;
        let height = r.num("grid.height")?;
        let goal_reward: f64 = r.num("grid.goal_reward")?;
        let grid = GridConfig {
            width,
            height,
            start: r.num("grid.start")?,
            goal: r.num("grid.goal")?,
            goal_reward,
            horizon: r.num("grid.horizon")?,
            reward_seed: r.num("grid.reward_seed")?,
            terminate_at_goal: r.num("grid.terminate_at_goal")?,
            cell_rewards: r.list("grid.cell_rewards")?,
        };
        let forward = ForwardSection {
            episodes: r.num("forward.episodes")?,
            alpha: r.num("forward.alpha")?,
            gamma: r.num("forward.gamma")?,
            layers: r.layers("forward.layers")?,
            return_mode: r.with("forward.return_mode", ReturnMode::parse)?,
            seed: r.num("forward.seed")?,
        };
        let bundle = BundleSection {
            size: r.num("bundle.size")?,
            mode: r.with("bundle.mode", BundleMode::parse)?,
            layers: r.layers("bundle.layers")?,
            clone_lr: r.num("bundle.clone_lr")?,
            clone_epochs: r.num("bundle.clone_epochs")?,
            seed: r.num("bundle.seed")?,
        };
        let beta = BetaSection {
            layers: r.layers("beta.layers")?,
            batch: r.num("beta.batch")?,
            episodes: r.num("beta.episodes")?,
            lr: r.num("beta.lr")?,
            gradient_mode: r.with("beta.gradient_mode", ScoreMode::parse)?,
            seeds: r.list("beta.seeds")?,
        };
        let eval = EvalSection {
            episodes: r.num("eval.episodes")?,
            runs: r.num("eval.runs")?,
            first_k: r.num("eval.first_k")?,
            beta_scale: r.num("eval.beta_scale")?,
            beta_units: r.with("eval.beta_units", BetaUnits::parse)?,
            seed: r.num("eval.seed")?,
        };
        let bounds = BoundsSection {
            epsilon: r.with("bounds.epsilon", |v| {
                if v == "estimate" {
                    Ok(None)
                } else {
                    v.parse().map(Some).map_err(|_| Error::config(""))
                }
            })?,
            delta: r.num("bounds.delta")?,
            policy_class_size: r.num("bounds.policy_class_size")?,
            bmax: r.num("bounds.bmax")?,
        };
        let output_dir = PathBuf::from(r.take("output.dir")?);
        if let Some(extra) = map.keys().next() {
            return Err(Error::config(format!("unknown config key `{extra}`")));
        }
        let cfg = Self { grid, forward, bundle, beta, eval, bounds, output_dir };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let n = self.grid.num_states();
        self.forward_config().validate()?;
        self.beta_config().validate()?;
        let policy_shape = |key: &str, layers: &[usize]| -> Result<()> {
            NetSpec::new(layers.to_vec(), Head::Softmax, 0)
                .validate()
                .map_err(|e| Error::config(format!("{key}: {e}")))?;
            if layers[0] != n || *layers.last().unwrap() != crate::gridworld::NUM_ACTIONS {
                return Err(Error::config(format!(
                    "{key} must map {n} one-hot states to {} actions",
                    crate::gridworld::NUM_ACTIONS
                )));
            }
            Ok(())
        };
        policy_shape("forward.layers", &self.forward.layers)?;
        policy_shape("bundle.layers", &self.bundle.layers)?;
        if self.beta.layers[0] != n {
            return Err(Error::config(format!("beta.layers must take {n} inputs")));
        }
        if self.bundle.size == 0 {
            return Err(Error::config("bundle.size must be at least 1"));
        }
        if !(self.bundle.clone_lr > 0.0 && self.bundle.clone_lr.is_finite()) {
            return Err(Error::config("bundle.clone_lr must be positive"));
        }
        if self.beta.seeds.is_empty() {
            return Err(Error::config("beta.seeds must list at least one seed"));
        }
        if self.eval.episodes < 2 {
            return Err(Error::config("eval.episodes must be at least 2"));
        }
        if self.eval.runs < 2 {
            return Err(Error::config("eval.runs must be at least 2"));
        }
        if !self.eval.beta_scale.is_finite() {
            return Err(Error::config("eval.beta_scale must be finite"));
        }
        if self.bounds.bmax == 0 {
            return Err(Error::config("bounds.bmax must be at least 1"));
        }
        let probe = self.bound_inputs(self.bounds.epsilon.unwrap_or(0.0));
        probe.validate().map_err(|e| Error::config(format!("bounds: {e}")))?;
        Ok(())
    }

    pub fn forward_spec(&self) -> NetSpec {
        NetSpec::new(self.forward.layers.clone(), Head::Softmax, self.forward.seed)
    }

    pub fn clone_spec(&self) -> NetSpec {
        NetSpec::new(self.bundle.layers.clone(), Head::Softmax, self.bundle.seed)
    }

    pub fn forward_config(&self) -> ForwardConfig {
        ForwardConfig {
            episodes: self.forward.episodes,
            alpha: self.forward.alpha,
            gamma: self.forward.gamma,
            seed: self.forward.seed,
            return_mode: self.forward.return_mode,
        }
    }

    pub fn clone_config(&self) -> CloneConfig {
        CloneConfig {
            bundle_size: self.bundle.size,
            mode: self.bundle.mode,
            lr: self.bundle.clone_lr,
            epochs: self.bundle.clone_epochs,
            seed: self.bundle.seed,
        }
    }

    pub fn beta_config(&self) -> BetaConfig {
        BetaConfig {
            spec: NetSpec::new(
                self.beta.layers.clone(),
                Head::Linear,
                self.beta.seeds.first().copied().unwrap_or(0),
            ),
            gamma: self.forward.gamma,
            batch: self.beta.batch,
            episodes: self.beta.episodes,
            lr: self.beta.lr,
            mode: self.beta.gradient_mode,
            seed: self.beta.seeds.first().copied().unwrap_or(0),
        }
    }

    /// `runs` seeds for repeated reward fits.
    pub fn band_seeds(&self) -> Vec<u64> {
        let mut seeds: Vec<u64> = self.beta.seeds.iter().copied().take(self.eval.runs).collect();
        while seeds.len() < self.eval.runs {
            let next = seeds.last().map_or(0, |s| s + 1);
            seeds.push(next);
        }
        seeds
    }

    /// Retraining reuses the learner's hyperparameters with its own seed.
    pub fn retrain_config(&self) -> RetrainConfig {
        RetrainConfig {
            forward: ForwardConfig { seed: self.eval.seed, ..self.forward_config() },
            scale: self.eval.beta_scale,
            units: self.eval.beta_units,
            eval_episodes: self.eval.episodes,
            eval_seed: self.eval.seed + 1,
        }
    }

    pub fn retrain_spec(&self) -> NetSpec {
        NetSpec::new(self.bundle.layers.clone(), Head::Softmax, self.eval.seed)
    }

    pub fn bound_inputs(&self, epsilon: f64) -> BoundInputs {
        BoundInputs {
            bundle_size: self.bundle.size,
            horizon: self.grid.horizon,
            epsilon,
            gamma: self.forward.gamma,
            delta: self.bounds.delta,
            policy_class_size: self.bounds.policy_class_size,
        }
    }
}

struct Reader<'a> {
    map: &'a mut BTreeMap<String, String>,
}

impl Reader<'_> {
    fn take(&mut self, key: &str) -> Result<String> {
        self.map.remove(key).ok_or_else(|| Error::config(format!("missing config key `{key}`")))
    }

    fn with<T>(&mut self, key: &str, parse: impl FnOnce(&str) -> Result<T>) -> Result<T> {
        let value = self.take(key)?;
        parse(&value).map_err(|_| Error::config(format!("invalid value `{value}` for config key `{key}`")))
    }

    fn num<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        self.with(key, |v| v.parse().map_err(|_| Error::config("")))
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Vec<T>> {
        self.with(key, |v| {
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',').map(|x| x.trim().parse().map_err(|_| Error::config(""))).collect()
        })
    }

    fn layers(&mut self, key: &str) -> Result<Vec<usize>> {
        self.with(key, |v| {
            let sizes: Vec<usize> = v
                .split('x')
                .map(|x| x.trim().parse().map_err(|_| Error::config("")))
                .collect::<Result<_>>()?;
            if sizes.len() < 2 {
                return Err(Error::config(""));
            }
            Ok(sizes)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_round_trips() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_text();
        let back = PipelineConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), text);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn defaults_match_reference_settings() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.forward.episodes, 5000);
        assert_eq!(cfg.grid.horizon, 15);
        assert_eq!(cfg.forward.alpha, 0.00075);
        assert_eq!(cfg.forward.gamma, 0.999);
        assert_eq!(cfg.bundle.size, 15);
        assert_eq!(cfg.beta.batch, 100);
        assert_eq!(cfg.beta.episodes, 5000);
        assert_eq!(cfg.forward.layers, vec![49, 16, 3]);
        assert_eq!(cfg.beta.layers, vec![49, 20, 1]);
    }

    #[test]
    fn missing_key_is_named() {
        let text = PipelineConfig::default().to_text().replace("beta.lr = 0.005\n", "");
        let err = PipelineConfig::parse(&text).unwrap_err();
        assert_eq!(err.category(), "config");
        assert!(err.to_string().contains("beta.lr"), "{err}");
    }

    #[test]
    fn invalid_value_is_named() {
        let text =
            PipelineConfig::default().to_text().replace("bundle.mode = disjoint", "bundle.mode = zigzag");
        let err = PipelineConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("bundle.mode"), "{err}");
        let text =
            PipelineConfig::default().to_text().replace("forward.alpha = 0.00075", "forward.alpha = fast");
        assert!(PipelineConfig::parse(&text).unwrap_err().to_string().contains("forward.alpha"));
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        let text = format!("{}extra.key = 1\n", PipelineConfig::default().to_text());
        assert!(PipelineConfig::parse(&text).unwrap_err().to_string().contains("extra.key"));
        let text = format!("{}beta.lr = 0.1\n", PipelineConfig::default().to_text());
        assert!(PipelineConfig::parse(&text).unwrap_err().to_string().contains("twice"));
    }

    #[test]
    fn overrides_apply_and_validate() {
        let cfg = PipelineConfig::default();
        let over = cfg.with_overrides(&[("bundle.size".into(), "5".into())]).unwrap();
        assert_eq!(over.bundle.size, 5);
        assert!(cfg.with_overrides(&[("bundle.size".into(), "0".into())]).is_err());
        assert!(cfg.with_overrides(&[("nope".into(), "0".into())]).is_err());
    }

    #[test]
    fn run_seed_keeps_clone_init_apart_from_learner() {
        let cfg = PipelineConfig::default().with_run_seed(3);
        assert_eq!(cfg.forward.seed, 3);
        assert_ne!(cfg.clone_spec().init_seed, cfg.forward_spec().init_seed);
        assert_eq!(cfg.band_seeds(), (2003..2013).collect::<Vec<u64>>());
    }

    #[test]
    fn explicit_epsilon_round_trips() {
        let cfg =
            PipelineConfig::default().with_overrides(&[("bounds.epsilon".into(), "0.001".into())]).unwrap();
        assert_eq!(cfg.bounds.epsilon, Some(0.001));
        assert_eq!(PipelineConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.bundle.size = 16;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn presets_change_only_the_cloned_network() {
        for name in PRESETS {
            let cfg = PipelineConfig::preset(name).unwrap();
            cfg.validate().unwrap();
            assert_eq!(cfg.forward.layers, vec![49, 16, 3]);
        }
        assert_eq!(PipelineConfig::preset("hidden24").unwrap().bundle.layers, vec![49, 24, 3]);
        assert_eq!(PipelineConfig::preset("default").unwrap(), PipelineConfig::default());
        assert!(PipelineConfig::preset("huge").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_holds_for_varied_values(
            alpha in 1e-6f64..0.1,
            size in 1usize..60,
            seeds in proptest::collection::vec(0u64..100_000, 1..4),
            scale in -5.0f64..5.0,
            reward_seed in 0u64..1_000_000,
        ) {
            let mut cfg = PipelineConfig::default();
            cfg.forward.alpha = alpha;
            cfg.bundle.size = size;
            cfg.beta.seeds = seeds;
            cfg.eval.beta_scale = scale;
            cfg.grid = GridConfig::with_reward_seed(reward_seed);
            let back = PipelineConfig::parse(&cfg.to_text()).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
