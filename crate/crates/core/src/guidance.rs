//! Classifier-free guidance with the safety-guidance extension.
//!
//! Per step the predictor supplies three noise estimates (unconditional,
//! prompt-conditioned, safety-conditioned). In `sld` mode:
//!
//! ```text
//! φ      = s_S · (prompt − safety)
//! μ[i]   = max(1, |φ[i]|)  where prompt[i] − safety[i] < λ, else 0
//! γ_t    = μ ⊙ (safety − uncond) + s_m · ν_t
//! ν_t+1  = β_m · ν_t + (1 − β_m) · γ_t
//! out    = uncond + s_g · (prompt − uncond − γ_t)    (t ≥ δ)
//! out    = uncond + s_g · (prompt − uncond)          (t < δ)
//! ```
//!
//! The momentum update runs on every step, warm-up included, before the
//! apply-or-skip branch.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::LatentTensor;

pub const DEFAULT_GUIDANCE_SCALE: f64 = 7.5;

pub const PRESET_NAMES: [&str; 4] = ["weak", "medium", "strong", "max"];

/// Names accepted by [`named_config`]: the two baselines plus the presets.
pub const CONFIG_NAMES: [&str; 6] = ["cfg", "neg", "weak", "medium", "strong", "max"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GuidanceMode {
    #[default]
    #[serde(rename = "plain-cfg", alias = "cfg")]
    PlainCfg,
    #[serde(rename = "sld")]
    Sld,
    #[serde(rename = "negative-prompt", alias = "neg")]
    NegativePrompt,
}

impl fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GuidanceMode::PlainCfg => "plain-cfg",
            GuidanceMode::Sld => "sld",
            GuidanceMode::NegativePrompt => "negative-prompt",
        })
    }
}

impl FromStr for GuidanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain-cfg" | "cfg" => Ok(GuidanceMode::PlainCfg),
            "sld" => Ok(GuidanceMode::Sld),
            "negative-prompt" | "neg" => Ok(GuidanceMode::NegativePrompt),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (valid modes: plain-cfg, sld, negative-prompt)"
            ))),
        }
    }
}

/// How the safety scale magnitude is bounded on the thresholded set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleClip {
    /// `max(1, |φ|)`, the formula as written.
    #[default]
    PaperLiteral,
    /// `min(1, |φ|)`.
    #[serde(rename = "upper-clip-at-1")]
    UpperClipAt1,
}

impl fmt::Display for ScaleClip {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScaleClip::PaperLiteral => "paper-literal",
            ScaleClip::UpperClipAt1 => "upper-clip-at-1",
        })
    }
}

impl FromStr for ScaleClip {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-literal" => Ok(ScaleClip::PaperLiteral),
            "upper-clip-at-1" => Ok(ScaleClip::UpperClipAt1),
            other => Err(Error::Config(format!(
                "unknown scale_clip `{other}` (valid: paper-literal, upper-clip-at-1)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceConfig {
    pub mode: GuidanceMode,
    /// Text guidance scale.
    pub s_g: f64,
    /// Safety guidance scale.
    #[serde(rename = "s_S")]
    pub s_s: f64,
    /// Safety threshold.
    pub lambda: f64,
    /// Warm-up steps before safety guidance is applied.
    pub delta: usize,
    /// Momentum scale.
    pub s_m: f64,
    /// Momentum decay.
    pub beta_m: f64,
    pub scale_clip: ScaleClip,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            mode: GuidanceMode::PlainCfg,
            s_g: DEFAULT_GUIDANCE_SCALE,
            s_s: 0.0,
            lambda: 0.0,
            delta: 0,
            s_m: 0.0,
            beta_m: 0.0,
            scale_clip: ScaleClip::PaperLiteral,
        }
    }
}

impl GuidanceConfig {
    /// Checks parameter ranges; `total_steps`, when known, bounds `delta`.
    pub fn validate(&self, total_steps: Option<usize>) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !self.s_g.is_finite() {
            return bad(format!("s_g must be finite, got {}", self.s_g));
        }
        if !(self.s_s.is_finite() && self.s_s >= 0.0) {
            return bad(format!("s_S must be finite and >= 0, got {}", self.s_s));
        }
        if !self.lambda.is_finite() {
            return bad(format!("lambda must be finite, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.s_m) {
            return bad(format!("s_m must lie in [0, 1], got {}", self.s_m));
        }
        if !(0.0..1.0).contains(&self.beta_m) {
            return bad(format!("beta_m must lie in [0, 1), got {}", self.beta_m));
        }
        if let Some(total) = total_steps {
            if self.delta > total {
                return bad(format!(
                    "delta {} exceeds the {total} inference steps",
                    self.delta
                ));
            }
        }
        Ok(())
    }

    /// Serializes every key to the flat config format.
    pub fn to_config_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn from_config_str(text: &str) -> Result<Self> {
        let overrides: ConfigOverrides =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        overrides.resolve()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_config_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// A config name from [`CONFIG_NAMES`] or, failing that, a config file path.
    pub fn from_name_or_path(source: &str) -> Result<Self> {
        if let Ok(cfg) = named_config(source) {
            return Ok(cfg);
        }
        let path = Path::new(source);
        if path.exists() {
            Self::load(path)
        } else {
            Err(Error::UnknownPreset {
                name: source.to_string(),
                valid: CONFIG_NAMES.join(", "),
            })
        }
    }
}

/// Partial config: the optional `preset` key selects a base, remaining keys
/// override it. Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub preset: Option<String>,
    pub mode: Option<GuidanceMode>,
    pub s_g: Option<f64>,
    #[serde(rename = "s_S")]
    pub s_s: Option<f64>,
    pub lambda: Option<f64>,
    pub delta: Option<usize>,
    pub s_m: Option<f64>,
    pub beta_m: Option<f64>,
    pub scale_clip: Option<ScaleClip>,
}

impl ConfigOverrides {
    pub fn apply(&self, mut base: GuidanceConfig) -> GuidanceConfig {
        if let Some(v) = self.mode {
            base.mode = v;
        }
        if let Some(v) = self.s_g {
            base.s_g = v;
        }
        if let Some(v) = self.s_s {
            base.s_s = v;
        }
        if let Some(v) = self.lambda {
            base.lambda = v;
        }
        if let Some(v) = self.delta {
            base.delta = v;
        }
        if let Some(v) = self.s_m {
            base.s_m = v;
        }
        if let Some(v) = self.beta_m {
            base.beta_m = v;
        }
        if let Some(v) = self.scale_clip {
            base.scale_clip = v;
        }
        base
    }

    pub fn resolve(&self) -> Result<GuidanceConfig> {
        let base = match &self.preset {
            Some(name) => named_config(name)?,
            None => GuidanceConfig::default(),
        };
        let cfg = self.apply(base);
        cfg.validate(None)?;
        Ok(cfg)
    }
}

/// One of the four safety presets, all in `sld` mode with `s_g = 7.5`.
pub fn preset(name: &str) -> Result<GuidanceConfig> {
    let key = name.trim().to_ascii_lowercase();
    let key = key.strip_prefix("hyp-").unwrap_or(&key);
    let (delta, s_s, lambda, s_m, beta_m) = match key {
        "weak" => (15, 200.0, 0.0, 0.0, 0.0),
        "medium" => (10, 1000.0, 0.01, 0.3, 0.4),
        "strong" => (7, 2000.0, 0.025, 0.5, 0.7),
        "max" => (0, 5000.0, 1.0, 0.5, 0.7),
        _ => {
            return Err(Error::UnknownPreset {
                name: name.to_string(),
                valid: PRESET_NAMES.join(", "),
            })
        }
    };
    Ok(GuidanceConfig {
        mode: GuidanceMode::Sld,
        s_g: DEFAULT_GUIDANCE_SCALE,
        s_s,
        lambda,
        delta,
        s_m,
        beta_m,
        scale_clip: ScaleClip::PaperLiteral,
    })
}

/// A preset, or one of the baselines `cfg` (plain classifier-free guidance)
/// and `neg` (safety concept used as negative prompt).
pub fn named_config(name: &str) -> Result<GuidanceConfig> {
    match name.trim().to_ascii_lowercase().as_str() {
        "cfg" | "plain-cfg" | "sd" => Ok(GuidanceConfig::default()),
        "neg" | "negative-prompt" => Ok(GuidanceConfig {
            mode: GuidanceMode::NegativePrompt,
            ..GuidanceConfig::default()
        }),
        _ => preset(name).map_err(|_| Error::UnknownPreset {
            name: name.to_string(),
            valid: CONFIG_NAMES.join(", "),
        }),
    }
}

/// The three noise estimates for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTriple {
    pub uncond: LatentTensor,
    pub prompt: LatentTensor,
    pub safety: LatentTensor,
}

impl NoiseTriple {
    pub fn new(uncond: LatentTensor, prompt: LatentTensor, safety: LatentTensor) -> Result<Self> {
        uncond.same_shape(&prompt)?;
        uncond.same_shape(&safety)?;
        Ok(Self {
            uncond,
            prompt,
            safety,
        })
    }

    pub fn shape(&self) -> &[usize] {
        self.uncond.shape()
    }
}

/// Momentum accumulator carried across steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyState {
    pub nu: LatentTensor,
    pub step: usize,
}

impl SafetyState {
    pub fn new(shape: &[usize]) -> Result<Self> {
        Ok(Self {
            nu: LatentTensor::zeros(shape)?,
            step: 0,
        })
    }
}

/// `uncond + s_g · (prompt − uncond)`.
pub fn cfg_combine(triple: &NoiseTriple, s_g: f64) -> Result<LatentTensor> {
    let direction = triple.prompt.sub(&triple.uncond)?;
    triple.uncond.add_scaled(&direction, s_g)
}

/// Element-wise safety scale μ.
pub fn safety_scale(
    triple: &NoiseTriple,
    s_s: f64,
    lambda: f64,
    clip: ScaleClip,
) -> Result<LatentTensor> {
    let diff = triple.prompt.sub(&triple.safety)?;
    let magnitude = diff.map(|d| {
        let phi = (s_s * d).abs();
        match clip {
            ScaleClip::PaperLiteral => phi.max(1.0),
            ScaleClip::UpperClipAt1 => phi.min(1.0),
        }
    })?;
    LatentTensor::where_lt(&triple.prompt, &triple.safety, lambda, &magnitude, 0.0)
}

/// `γ_t = μ ⊙ (safety − uncond) + s_m · ν_t`.
pub fn safety_gamma(
    triple: &NoiseTriple,
    mu: &LatentTensor,
    state: &SafetyState,
    s_m: f64,
) -> Result<LatentTensor> {
    let away = triple.safety.sub(&triple.uncond)?;
    mu.mul(&away)?.add_scaled(&state.nu, s_m)
}

/// `ν_{t+1} = β_m · ν_t + (1 − β_m) · γ_t`.
pub fn momentum_update(
    state: &SafetyState,
    gamma: &LatentTensor,
    beta_m: f64,
) -> Result<SafetyState> {
    state.nu.same_shape(gamma)?;
    let data = state
        .nu
        .data()
        .iter()
        .zip(gamma.data())
        .map(|(&nu, &g)| {
            // rounding can step just outside the segment between nu and g
            (beta_m * nu + (1.0 - beta_m) * g).clamp(nu.min(g), nu.max(g))
        })
        .collect();
    Ok(SafetyState {
        nu: LatentTensor::new(state.nu.shape().to_vec(), data)?,
        step: state.step + 1,
    })
}

/// Guided estimate at step `t`; plain CFG while `t < delta`.
pub fn sld_combine(
    triple: &NoiseTriple,
    gamma: &LatentTensor,
    config: &GuidanceConfig,
    t: usize,
) -> Result<LatentTensor> {
    if t < config.delta {
        return cfg_combine(triple, config.s_g);
    }
    let direction = triple.prompt.sub(&triple.uncond)?.sub(gamma)?;
    triple.uncond.add_scaled(&direction, config.s_g)
}

/// CFG with the unconditional estimate replaced by the safety estimate.
pub fn negative_prompt_combine(triple: &NoiseTriple, s_g: f64) -> Result<LatentTensor> {
    let direction = triple.prompt.sub(&triple.safety)?;
    triple.safety.add_scaled(&direction, s_g)
}

/// One guidance step: returns the combined noise estimate and the next state.
///
/// Only `sld` mode touches the momentum; the baselines leave `ν` at zero and
/// just advance the step counter.
pub fn guidance_step(
    triple: &NoiseTriple,
    state: &SafetyState,
    config: &GuidanceConfig,
    t: usize,
) -> Result<(LatentTensor, SafetyState)> {
    if state.step != t {
        return Err(Error::Invalid(format!(
            "safety state is at step {} but guidance was requested for step {t}",
            state.step
        )));
    }
    config.validate(None)?;
    triple.uncond.same_shape(&state.nu)?;
    match config.mode {
        GuidanceMode::PlainCfg => Ok((cfg_combine(triple, config.s_g)?, advance(state))),
        GuidanceMode::NegativePrompt => {
            Ok((negative_prompt_combine(triple, config.s_g)?, advance(state)))
        }
        GuidanceMode::Sld => {
            let mu = safety_scale(triple, config.s_s, config.lambda, config.scale_clip)?;
            let gamma = safety_gamma(triple, &mu, state, config.s_m)?;
            let next = momentum_update(state, &gamma, config.beta_m)?;
            Ok((sld_combine(triple, &gamma, config, t)?, next))
        }
    }
}

fn advance(state: &SafetyState) -> SafetyState {
    SafetyState {
        nu: state.nu.clone(),
        step: state.step + 1,
    }
}
