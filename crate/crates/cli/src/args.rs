use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sld_core::guidance::{named_config, ConfigOverrides};
use sld_core::scheduler::{
    DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_INFERENCE_STEPS, DEFAULT_ORDER,
    DEFAULT_TRAIN_STEPS,
};
use sld_core::{
    GuidanceConfig, GuidanceMode, MixtureModel, ScaleClip, ScheduleKind, SchedulerConfig,
};

use crate::output::{input_file, Failure};

#[derive(Debug, Parser)]
#[command(
    name = "sld",
    version,
    about = "Safe latent diffusion guidance on analytic toy models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw guided samples from a mixture model.
    Sample(SampleArgs),
    /// Compare unsafe-mode fractions across configurations with paired seeds.
    Sweep(SweepArgs),
    /// Compute benchmark metrics from prompt and label files.
    Bench(BenchArgs),
    /// Render a sweep or grid CSV as an SVG bar chart.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Mixture model file; defaults to the built-in two-mode model.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Concept used for the prompt condition (overrides the model file).
    #[arg(long)]
    pub prompt_concept: Option<String>,
    /// Concept used for the safety condition (overrides the model file).
    #[arg(long)]
    pub safety_concept: Option<String>,
}

impl ModelArgs {
    pub fn load(&self) -> Result<MixtureModel, Failure> {
        let model = match &self.model {
            Some(path) => MixtureModel::load(input_file(path)?)?,
            None => MixtureModel::default_two_mode(),
        };
        let prompt = self
            .prompt_concept
            .clone()
            .or_else(|| model.prompt_concept().map(str::to_string));
        let safety = self
            .safety_concept
            .clone()
            .or_else(|| model.safety_concept().map(str::to_string));
        match (prompt, safety) {
            (Some(p), Some(s)) => Ok(model.with_default_concepts(Some(p), Some(s))?),
            _ => Err(Failure::usage(
                "model names no prompt/safety concept; pass --prompt-concept and --safety-concept",
            )),
        }
    }
}

#[derive(Debug, Args)]
pub struct SchedulerArgs {
    #[arg(long, default_value_t = DEFAULT_TRAIN_STEPS)]
    pub train_steps: usize,
    /// Number of inference steps.
    #[arg(long, default_value_t = DEFAULT_INFERENCE_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = DEFAULT_BETA_START)]
    pub beta_start: f64,
    #[arg(long, default_value_t = DEFAULT_BETA_END)]
    pub beta_end: f64,
    /// linear or scaled-linear.
    #[arg(long, default_value_t = ScheduleKind::Linear)]
    pub schedule: ScheduleKind,
    /// Multistep order of the sampler.
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    pub order: usize,
}

impl SchedulerArgs {
    pub fn config(&self) -> SchedulerConfig {
        SchedulerConfig {
            num_train_steps: self.train_steps,
            num_inference_steps: self.steps,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            kind: self.schedule,
            order: self.order,
        }
    }
}

/// Guidance flags mirror the keys of the flat config file.
#[derive(Debug, Args)]
pub struct GuidanceArgs {
    /// Named configuration: cfg, neg, weak, medium, strong or max.
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// Flat key-value config file; the flags below override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// plain-cfg, sld or negative-prompt.
    #[arg(long)]
    pub mode: Option<GuidanceMode>,
    #[arg(long = "s_g", allow_negative_numbers = true)]
    pub s_g: Option<f64>,
    #[arg(long = "s_S")]
    pub s_s: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub delta: Option<usize>,
    #[arg(long = "s_m")]
    pub s_m: Option<f64>,
    #[arg(long = "beta_m")]
    pub beta_m: Option<f64>,
    /// paper-literal or upper-clip-at-1.
    #[arg(long = "scale_clip")]
    pub scale_clip: Option<ScaleClip>,
}

impl GuidanceArgs {
    pub fn resolve(&self, total_steps: usize) -> Result<GuidanceConfig, Failure> {
        let base = match (&self.preset, &self.config) {
            (Some(name), _) => named_config(name)?,
            (None, Some(path)) => GuidanceConfig::load(input_file(path)?)?,
            (None, None) => GuidanceConfig::default(),
        };
        let overrides = ConfigOverrides {
            preset: None,
            mode: self.mode,
            s_g: self.s_g,
            s_s: self.s_s,
            lambda: self.lambda,
            delta: self.delta,
            s_m: self.s_m,
            beta_m: self.beta_m,
            scale_clip: self.scale_clip,
        };
        let config = overrides.apply(base);
        config.validate(Some(total_steps))?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub guidance: GuidanceArgs,
    #[command(flatten)]
    pub scheduler: SchedulerArgs,
    /// Number of samples.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV of terminal samples.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub scheduler: SchedulerArgs,
    /// Comma-separated config names or config file paths.
    #[arg(long, default_value = "cfg,neg,weak,medium,strong,max")]
    pub presets: String,
    /// Samples per configuration.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV with one row per configuration.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Prompt CSV in the I2P schema.
    #[arg(long, value_name = "FILE")]
    pub prompts: PathBuf,
    /// Labels for one configuration as NAME=FILE; repeatable.
    #[arg(long, value_name = "NAME=FILE", required = true)]
    pub labels: Vec<String>,
    /// Bootstrap subset size.
    #[arg(long, default_value_t = 25)]
    pub n: usize,
    #[arg(long, default_value_t = 10_000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "FILE", required_unless_present = "out_csv")]
    pub out_json: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub out_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Sweep CSV or benchmark grid CSV.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Output SVG.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Chart title; defaults to the input file name.
    #[arg(long)]
    pub title: Option<String>,
}
