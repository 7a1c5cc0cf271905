//! Run configuration: a TOML file that pins down one experiment plus the
//! process-level settings (output directory, logging, parallelism).
//! Unknown keys are hard errors so a typo cannot silently fall back to a
//! default, and relative paths are resolved against the config file's
//! own directory so a config means the same thing from any working
//! directory.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vistitch::eval::{DecoderChoice, ExperimentSpec, PolicyVariant};
use vistitch::sim::{build_envs, EnvPreset, PresetShape, SimParams, Task};
use vistitch::{Error, Result};

/// Environment variable overriding `[run] output_dir`.
pub const ENV_OUT_DIR: &str = "VISTITCH_OUT_DIR";
/// Environment variable overriding `[run] parallelism`.
pub const ENV_PARALLELISM: &str = "VISTITCH_PARALLELISM";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogLevel {
    Off,
    Error,
    Warn,
    Info,
    Debug,
}

impl fmt::Display for LogLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            LogLevel::Off => "off",
            LogLevel::Error => "error",
            LogLevel::Warn => "warn",
            LogLevel::Info => "info",
            LogLevel::Debug => "debug",
        };
        write!(f, "{name}")
    }
}

/// Process-level settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Where all artifacts of this run are written.
    pub output_dir: PathBuf,
    #[serde(default = "default_log_level")]
    pub log_level: LogLevel,
    /// Worker cap for evaluation rollouts.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn default_log_level() -> LogLevel {
    LogLevel::Info
}

fn default_parallelism() -> usize {
    1
}

/// The experiment itself. Cameras come from a named preset expanded
/// deterministically from `env_seed`, which keeps the file small while
/// still pinning every camera parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub id: String,
    pub task: Task,
    pub variant: PolicyVariant,
    /// Slot-2 perturbation defining the second environment.
    pub preset: EnvPreset,
    #[serde(default = "default_image_side")]
    pub image_height: usize,
    #[serde(default = "default_image_side")]
    pub image_width: usize,
    #[serde(default = "default_channels")]
    pub image_channels: usize,
    /// Seed for camera noise streams.
    #[serde(default)]
    pub env_seed: u64,
    #[serde(default = "default_demo_count")]
    pub demo_count: usize,
    #[serde(default = "default_anchor_count")]
    pub anchor_count: usize,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "default_gmm_modes")]
    pub gmm_modes: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Replay translation amplitude for the second environment.
    #[serde(default)]
    pub deviation: f64,
    /// Overrides the variant's default disentanglement weight when set.
    #[serde(default)]
    pub lambda_disent: Option<f64>,
    /// Which trained policy keeps its decoder in the stitched policy.
    #[serde(default)]
    pub decoder: DecoderChoice,
}

fn default_image_side() -> usize {
    24
}
fn default_channels() -> usize {
    1
}
fn default_demo_count() -> usize {
    200
}
fn default_anchor_count() -> usize {
    32
}
fn default_latent_dim() -> usize {
    32
}
fn default_gmm_modes() -> usize {
    2
}
fn default_epochs() -> usize {
    50
}
fn default_batch_size() -> usize {
    32
}
fn default_learning_rate() -> f64 {
    1e-4
}
fn default_eval_episodes() -> usize {
    100
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

/// A parsed run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub sim: SimParams,
}

impl RunConfig {
    /// Parses the TOML text without path resolution or overrides.
    pub fn parse_str(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::config(format!("config error: {e}")))
    }

    /// Serializes back to TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("config error: {e}")))
    }

    /// Loads a config file: parse, resolve `output_dir` relative to the
    /// file, apply environment overrides, and validate.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg = Self::parse_str(&text)?;
        if cfg.run.output_dir.is_relative() {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            cfg.run.output_dir = base.join(&cfg.run.output_dir);
        }
        if let Ok(dir) = std::env::var(ENV_OUT_DIR) {
            if !dir.is_empty() {
                cfg.run.output_dir = PathBuf::from(dir);
            }
        }
        if let Ok(par) = std::env::var(ENV_PARALLELISM) {
            if !par.is_empty() {
                cfg.run.parallelism = par.parse().map_err(|_| {
                    Error::config(format!("{ENV_PARALLELISM} must be a positive integer"))
                })?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.parallelism == 0 {
            return Err(Error::config("parallelism must be at least 1"));
        }
        self.spec().validate()
    }

    /// Expands this configuration into the full experiment description,
    /// including all three environments' cameras.
    pub fn spec(&self) -> ExperimentSpec {
        let e = &self.experiment;
        let shape = PresetShape {
            height: e.image_height,
            width: e.image_width,
            channels: e.image_channels,
        };
        let (env1, env2, env3) = build_envs(e.preset, shape, e.env_seed);
        ExperimentSpec {
            experiment_id: e.id.clone(),
            task: e.task,
            env1,
            env2,
            env3,
            sim: self.sim,
            variant: e.variant,
            demo_count: e.demo_count,
            anchor_count: e.anchor_count,
            latent_dim: e.latent_dim,
            gmm_modes: e.gmm_modes,
            epochs: e.epochs,
            batch_size: e.batch_size,
            learning_rate: e.learning_rate,
            eval_episodes: e.eval_episodes,
            seeds: e.seeds.clone(),
            deviation: e.deviation,
            lambda_disent: e.lambda_disent,
            decoder: e.decoder,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> &'static str {
        "[run]\n\
         output_dir = \"out\"\n\
         \n\
         [experiment]\n\
         id = \"demo\"\n\
         task = \"push\"\n\
         variant = \"disent\"\n\
         preset = \"mask\"\n"
    }

    #[test]
    fn round_trip_is_identity() {
        let cfg = RunConfig::parse_str(minimal_toml()).unwrap();
        let text = cfg.to_toml().unwrap();
        let again = RunConfig::parse_str(&text).unwrap();
        assert_eq!(cfg, again);
        // And once more through the serialized form.
        assert_eq!(text, again.to_toml().unwrap());
    }

    #[test]
    fn defaults_fill_in_and_spec_validates() {
        let cfg = RunConfig::parse_str(minimal_toml()).unwrap();
        assert_eq!(cfg.experiment.demo_count, 200);
        assert_eq!(cfg.experiment.seeds, vec![0, 1, 2]);
        assert_eq!(cfg.run.parallelism, 1);
        assert_eq!(cfg.run.log_level, LogLevel::Info);
        let spec = cfg.spec();
        spec.validate().unwrap();
        assert_eq!(spec.env3.camera1, spec.env1.camera1);
        assert_eq!(spec.env3.camera2, spec.env2.camera2);
    }

    #[test]
    fn unknown_keys_are_rejected_everywhere() {
        let with_typo = format!("{}\ndemo_cuont = 10\n", minimal_toml());
        let err = RunConfig::parse_str(&with_typo).unwrap_err();
        assert!(err.to_string().contains("demo_cuont"), "{err}");
        let top_level = format!("{}\n[extra]\nx = 1\n", minimal_toml());
        assert!(RunConfig::parse_str(&top_level).is_err());
        let sim_typo = format!("{}\n[sim]\nmax_horizont = 10\n", minimal_toml());
        assert!(RunConfig::parse_str(&sim_typo).is_err());
    }

    #[test]
    fn sim_overrides_reach_the_spec() {
        let text = format!("{}\n[sim]\nmax_horizon = 17\n", minimal_toml());
        let cfg = RunConfig::parse_str(&text).unwrap();
        assert_eq!(cfg.sim.max_horizon, 17);
        assert_eq!(cfg.spec().sim.max_horizon, 17);
        // Other fields keep their defaults.
        assert_eq!(cfg.sim.goal_x, SimParams::default().goal_x);
    }

    #[test]
    fn log_levels_order_and_render() {
        assert!(LogLevel::Debug > LogLevel::Info);
        assert!(LogLevel::Info > LogLevel::Off);
        assert_eq!(LogLevel::Warn.to_string(), "warn");
    }
}
