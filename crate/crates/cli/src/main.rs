use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use bundle_irl::config::{PipelineConfig, PRESETS};
use bundle_irl::pipeline;
use bundle_irl::{Error, Result};
use clap::{Args, Parser, Subcommand};

/// Learn a reward function from the trajectories of an agent that is still learning.
#[derive(Parser, Debug)]
#[command(name = "bundle-irl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the learner with REINFORCE and log its trajectories.
    Forward(Common),
    /// Clone one policy per bundle of logged episodes.
    Clone(Common),
    /// Fit the reward network to the cloned policy sequence.
    Reward(Common),
    /// Sweep the bundle-size bound and report the best B.
    Bounds {
        #[command(flatten)]
        common: Common,
        /// Policy drift per episode; estimated from cloned policies when omitted.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Largest bundle size in the sweep.
        #[arg(long)]
        bmax: Option<usize>,
    },
    /// Retrain on the learned reward, confidence bands, truncation, norms.
    Eval(Common),
    /// Run every stage in order.
    Pipeline(Common),
    /// Print a complete config file.
    DefaultConfig {
        /// One of: default, hidden8, hidden24, hidden32, layers3, layers5.
        #[arg(long, default_value = "default")]
        preset: String,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Config file; built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Derive every stage seed from one run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override a config key, e.g. `--set bundle.size=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self, extra: Vec<(String, String)>) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
                PipelineConfig::parse(&text)?
            }
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg = cfg.with_run_seed(seed);
        }
        let mut overrides = Vec::new();
        for raw in &self.overrides {
            let (k, v) = raw
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got `{raw}`")))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        overrides.extend(extra);
        if let Some(out) = &self.out {
            overrides.push(("output.dir".into(), out.display().to_string()));
        }
        let cfg = cfg.with_overrides(&overrides)?;
        log::debug!("config hash {}", cfg.hash());
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Forward(c) => {
            let s = pipeline::run_forward(&c.load(vec![])?)?;
            println!("forward: {} episodes, mean return of last 500 = {:.3}", s.episodes, s.tail_mean);
        }
        Command::Clone(c) => {
            let s = pipeline::run_clone(&c.load(vec![])?)?;
            println!("clone: {} policies", s.bundles);
        }
        Command::Reward(c) => {
            let s = pipeline::run_reward(&c.load(vec![])?)?;
            println!("reward: normalized maximum at cell {}", s.argmax);
        }
        Command::Bounds { common, epsilon, bmax } => {
            let mut extra = Vec::new();
            if let Some(e) = epsilon {
                extra.push(("bounds.epsilon".to_string(), format!("{e:?}")));
            }
            if let Some(b) = bmax {
                extra.push(("bounds.bmax".to_string(), b.to_string()));
            }
            let s = pipeline::run_bounds(&common.load(extra)?)?;
            println!(
                "bounds: epsilon = {:e}, optimal B = {} (bound {:.6})",
                s.epsilon, s.optimal_bundle_size, s.optimal_bound
            );
        }
        Command::Eval(c) => print_eval(&pipeline::run_eval(&c.load(vec![])?)?),
        Command::Pipeline(c) => {
            let s = pipeline::run_pipeline(&c.load(vec![])?)?;
            println!("forward: mean return of last 500 = {:.3}", s.forward.tail_mean);
            println!("clone: {} policies", s.clone.bundles);
            println!("reward: normalized maximum at cell {}", s.reward.argmax);
            println!("bounds: optimal B = {}", s.bounds.optimal_bundle_size);
            print_eval(&s.eval);
        }
        Command::DefaultConfig { preset } => {
            if !PRESETS.contains(&preset.as_str()) {
                return Err(Error::Usage(format!("unknown preset `{preset}`")));
            }
            print!("{}", PipelineConfig::preset(&preset)?.to_text());
        }
    }
    Ok(())
}

fn print_eval(s: &pipeline::EvalSummary) {
    println!(
        "eval: forward policy {:.3} +- {:.3} (last {} training episodes), final snapshot {:.3} +- {:.3}",
        s.forward_training.mean, s.forward_training.std, s.forward_training.n, s.forward.mean, s.forward.std
    );
    println!(
        "eval: retrained {:.3} +- {:.3}, greedy return {}, reaches goal {}",
        s.retrained.mean, s.retrained.std, s.retrained_greedy_return, s.retrained_reaches_goal
    );
    println!("eval: visitation/band-width rank correlation {:.3}", s.visitation_width_correlation);
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: category={} message={msg:?}", e.category());
            ExitCode::FAILURE
        }
    }
}
