//! Run configuration: optional TOML file, overridden by flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use midframe::flow::farneback::GfParams;
use midframe::flow::lk::{LkParams, ShiTomasiParams};
use midframe::fusion::{FusionConfig, FusionMode};
use midframe::pipeline::{FlowMethod, PipelineConfig};
use midframe::train::TrainConfig;
use midframe::warp::Timestep;

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FlowSource {
    #[default]
    Gf,
    Lk,
    /// Flow read from two `.flo` files (`--flo`).
    File,
    /// No motion: the overlay baseline.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    #[default]
    Blend,
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub base_channels: usize,
    pub resblocks_per_stage: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let f = FusionConfig::default();
        Self {
            base_channels: f.base_channels,
            resblocks_per_stage: f.resblocks_per_stage,
        }
    }
}

/// Fully resolved settings of one invocation. Serialized back to TOML as
/// the config echo; feeding the echo to `--config` reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub flow: FlowSource,
    pub fusion: Fusion,
    pub timesteps: Vec<Timestep>,
    pub repeat: usize,
    pub warmup: bool,
    /// Worker threads for `sequence` and `benchmark`; 0 uses every
    /// logical core.
    pub threads: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub flo: Vec<PathBuf>,
    pub gf: GfParams,
    pub shi_tomasi: ShiTomasiParams,
    pub lk: LkParams,
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            flow: FlowSource::Gf,
            fusion: Fusion::Blend,
            timesteps: vec![Timestep::MIDDLE],
            repeat: 3,
            warmup: true,
            threads: 0,
            weights: None,
            flo: Vec::new(),
            gf: GfParams::default(),
            shi_tomasi: ShiTomasiParams::default(),
            lk: LkParams::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Flags shared by every command. Each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML file with any subset of the run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub flow: Option<FlowSource>,
    /// Forward and backward flow files for `--flow file`.
    #[arg(long, global = true, num_args = 2, value_names = ["F01", "F10"])]
    pub flo: Option<Vec<PathBuf>>,
    #[arg(long, global = true, value_enum)]
    pub fusion: Option<Fusion>,
    /// Checkpoint for `--fusion learned`.
    #[arg(long, global = true, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    /// Target time in (0, 1); repeat for several outputs.
    #[arg(long = "t", global = true, value_name = "T")]
    pub timesteps: Vec<f32>,
    #[arg(long, global = true)]
    pub repeat: Option<usize>,
    #[arg(long, global = true)]
    pub no_warmup: bool,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true, help_heading = "Dense flow")]
    pub pyr_scale: Option<f32>,
    #[arg(long, global = true, help_heading = "Dense flow")]
    pub levels: Option<usize>,
    #[arg(long, global = true, help_heading = "Dense flow")]
    pub poly_n: Option<usize>,
    #[arg(long, global = true, help_heading = "Dense flow")]
    pub poly_sigma: Option<f32>,
    #[arg(long, global = true, help_heading = "Dense flow")]
    pub win_size: Option<usize>,
    #[arg(long, global = true, help_heading = "Dense flow")]
    pub iterations: Option<usize>,

    #[arg(long, global = true, help_heading = "Sparse flow")]
    pub max_corners: Option<usize>,
    #[arg(long, global = true, help_heading = "Sparse flow")]
    pub quality_level: Option<f32>,
    #[arg(long, global = true, help_heading = "Sparse flow")]
    pub min_distance: Option<f32>,
    #[arg(long, global = true, help_heading = "Sparse flow")]
    pub block_size: Option<usize>,
    #[arg(long, global = true, help_heading = "Sparse flow")]
    pub lk_win_size: Option<usize>,
    #[arg(long, global = true, help_heading = "Sparse flow")]
    pub lk_levels: Option<usize>,
    #[arg(long, global = true, help_heading = "Sparse flow")]
    pub lk_iterations: Option<usize>,

    #[arg(long, global = true, help_heading = "Network and training")]
    pub base_channels: Option<usize>,
    #[arg(long, global = true, help_heading = "Network and training")]
    pub resblocks: Option<usize>,
    #[arg(long, global = true, help_heading = "Network and training")]
    pub steps: Option<usize>,
    #[arg(long, global = true, help_heading = "Network and training")]
    pub batch_size: Option<usize>,
    #[arg(long, global = true, help_heading = "Network and training")]
    pub lr: Option<f32>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl ConfigArgs {
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => load(path)?,
            None => RunConfig::default(),
        };
        set(&mut c.flow, self.flow);
        set(&mut c.fusion, self.fusion);
        if self.weights.is_some() {
            c.weights.clone_from(&self.weights);
        }
        if let Some(f) = &self.flo {
            c.flo.clone_from(f);
        }
        if !self.timesteps.is_empty() {
            c.timesteps = self
                .timesteps
                .iter()
                .map(|&t| Timestep::new(t).map_err(|e| UsageError(e.to_string())))
                .collect::<Result<_, _>>()?;
        }
        set(&mut c.repeat, self.repeat);
        if self.no_warmup {
            c.warmup = false;
        }
        set(&mut c.threads, self.threads);
        set(&mut c.train.seed, self.seed);

        set(&mut c.gf.pyr_scale, self.pyr_scale);
        set(&mut c.gf.levels, self.levels);
        set(&mut c.gf.poly_n, self.poly_n);
        set(&mut c.gf.poly_sigma, self.poly_sigma);
        set(&mut c.gf.win_size, self.win_size);
        set(&mut c.gf.iterations, self.iterations);
        set(&mut c.shi_tomasi.max_corners, self.max_corners);
        set(&mut c.shi_tomasi.quality_level, self.quality_level);
        set(&mut c.shi_tomasi.min_distance, self.min_distance);
        set(&mut c.shi_tomasi.block_size, self.block_size);
        set(&mut c.lk.win_size, self.lk_win_size);
        set(&mut c.lk.levels, self.lk_levels);
        set(&mut c.lk.max_iterations, self.lk_iterations);
        set(&mut c.network.base_channels, self.base_channels);
        set(&mut c.network.resblocks_per_stage, self.resblocks);
        set(&mut c.train.steps, self.steps);
        set(&mut c.train.batch_size, self.batch_size);
        set(&mut c.train.optimizer.lr, self.lr);
        c.validate()?;
        Ok(c)
    }
}

pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
}

impl RunConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.timesteps.is_empty() {
            bail!(UsageError("at least one timestep is required".into()));
        }
        if self.timesteps.windows(2).any(|w| w[0] >= w[1]) {
            bail!(UsageError("timesteps must be strictly increasing".into()));
        }
        if self.repeat == 0 {
            bail!(UsageError("repeat must be >= 1".into()));
        }
        if self.flow == FlowSource::File && self.flo.len() != 2 {
            bail!(UsageError("--flow file needs two flow files (--flo F01 F10)".into()));
        }
        self.pipeline().validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Pipeline settings. `file` flow maps to `gf` here; callers that
    /// honour flow files bypass estimation entirely.
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            flow: match self.flow {
                FlowSource::Gf | FlowSource::File => FlowMethod::Gf,
                FlowSource::Lk => FlowMethod::Lk,
                FlowSource::Zero => FlowMethod::Zero,
            },
            gf: self.gf,
            shi_tomasi: self.shi_tomasi,
            lk: self.lk,
            fusion: self.fusion_config(),
        }
    }

    pub fn fusion_config(&self) -> FusionConfig {
        FusionConfig {
            mode: match self.fusion {
                Fusion::Blend => FusionMode::Blend,
                Fusion::Learned => FusionMode::Learned,
            },
            base_channels: self.network.base_channels,
            resblocks_per_stage: self.network.resblocks_per_stage,
        }
    }

    pub fn worker_threads(&self) -> usize {
        if self.threads == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.threads
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always serializable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_roundtrips() {
        let mut c = RunConfig::default();
        c.flow = FlowSource::Lk;
        c.timesteps = vec![Timestep::new(0.25).unwrap(), Timestep::new(0.75).unwrap()];
        c.weights = Some("w.frwt".into());
        c.train.seed = 9;
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "flow = \"lk\"\nrepeat = 5\n[gf]\nlevels = 2\n").unwrap();
        let args = ConfigArgs {
            config: Some(p),
            repeat: Some(7),
            ..Default::default()
        };
        let c = args.resolve().unwrap();
        assert_eq!(c.flow, FlowSource::Lk);
        assert_eq!(c.repeat, 7);
        assert_eq!(c.gf.levels, 2);
        assert_eq!(c.gf.pyr_scale, 0.2);
    }

    #[test]
    fn invalid_settings_are_usage_errors() {
        let bad = |a: ConfigArgs| a.resolve().unwrap_err().downcast::<UsageError>().is_ok();
        assert!(bad(ConfigArgs { timesteps: vec![0.5, 0.25], ..Default::default() }));
        assert!(bad(ConfigArgs { timesteps: vec![1.0], ..Default::default() }));
        assert!(bad(ConfigArgs { flow: Some(FlowSource::File), ..Default::default() }));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "colour = 3\n").unwrap();
        assert!(bad(ConfigArgs { config: Some(p), ..Default::default() }));
    }
}
