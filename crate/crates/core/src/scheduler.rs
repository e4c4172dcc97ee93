//! Beta schedules, sigma sequences and the linear multistep (LMS) sampler.
//!
//! Sampling runs in sigma space: a latent at noise level `σ` is `x + σ·ε` with
//! `x` drawn from the data distribution. The probability-flow ODE is
//! `dz/dσ = ε(z, σ)`, so the predicted noise is the derivative integrated by
//! the multistep update. Initial latents are standard normals scaled by
//! `sqrt(σ_max² + 1)` (see [`SamplerState::init_noise_sigma`]).

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::LatentTensor;

pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const DEFAULT_INFERENCE_STEPS: usize = 50;
pub const DEFAULT_BETA_START: f64 = 8.5e-4;
pub const DEFAULT_BETA_END: f64 = 0.012;
pub const DEFAULT_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    #[default]
    Linear,
    /// Interpolate in square-root space, then square.
    ScaledLinear,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::ScaledLinear => "scaled-linear",
        })
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "scaled-linear" | "scaled_linear" => Ok(ScheduleKind::ScaledLinear),
            other => Err(Error::Schedule(format!(
                "unknown schedule kind `{other}` (expected linear or scaled-linear)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    betas: Vec<f64>,
    alphas_cumprod: Vec<f64>,
}

impl NoiseSchedule {
    pub fn build(
        num_train_steps: usize,
        beta_start: f64,
        beta_end: f64,
        kind: ScheduleKind,
    ) -> Result<Self> {
        if num_train_steps == 0 {
            return Err(Error::Schedule("num_train_steps must be at least 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Schedule(format!(
                "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let denom = num_train_steps.saturating_sub(1).max(1) as f64;
        // start·(1−f) + end·f hits both endpoints exactly
        let lerp = |a: f64, b: f64, i: usize| {
            let f = i as f64 / denom;
            a * (1.0 - f) + b * f
        };
        let betas: Vec<f64> = (0..num_train_steps)
            .map(|i| match kind {
                ScheduleKind::Linear => lerp(beta_start, beta_end, i),
                ScheduleKind::ScaledLinear => lerp(beta_start.sqrt(), beta_end.sqrt(), i).powi(2),
            })
            .collect();
        let alphas_cumprod = betas
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            kind,
            betas,
            alphas_cumprod,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn num_train_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas_cumprod(&self) -> &[f64] {
        &self.alphas_cumprod
    }

    /// `σ_t = sqrt((1 − ᾱ_t) / ᾱ_t)` for every training timestep.
    pub fn train_sigmas(&self) -> Vec<f64> {
        self.alphas_cumprod
            .iter()
            .map(|a| ((1.0 - a) / a).sqrt())
            .collect()
    }

    /// Sigmas at `num_inference_steps` evenly spaced (fractional) training
    /// timesteps from `T − 1` down to `0`, linearly interpolated between integer
    /// timesteps, with a terminal `0` appended.
    pub fn inference_sigmas(&self, num_inference_steps: usize) -> Result<Vec<f64>> {
        let n_train = self.num_train_steps();
        if num_inference_steps == 0 || num_inference_steps > n_train {
            return Err(Error::Schedule(format!(
                "num_inference_steps must be in 1..={n_train}, got {num_inference_steps}"
            )));
        }
        let train = self.train_sigmas();
        let last = (n_train - 1) as f64;
        let denom = num_inference_steps.saturating_sub(1).max(1) as f64;
        let mut sigmas: Vec<f64> = (0..num_inference_steps)
            .map(|i| {
                let t = last * (denom - i as f64).max(0.0) / denom;
                let lo = t.floor() as usize;
                let hi = (lo + 1).min(n_train - 1);
                let frac = t - lo as f64;
                train[lo] * (1.0 - frac) + train[hi] * frac
            })
            .collect();
        sigmas.push(0.0);
        Ok(sigmas)
    }
}

/// Scheduler settings with the defaults used throughout the crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub num_train_steps: usize,
    pub num_inference_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub kind: ScheduleKind,
    pub order: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            num_train_steps: DEFAULT_TRAIN_STEPS,
            num_inference_steps: DEFAULT_INFERENCE_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            kind: ScheduleKind::Linear,
            order: DEFAULT_ORDER,
        }
    }
}

impl SchedulerConfig {
    pub fn sigmas(&self) -> Result<Vec<f64>> {
        NoiseSchedule::build(
            self.num_train_steps,
            self.beta_start,
            self.beta_end,
            self.kind,
        )?
        .inference_sigmas(self.num_inference_steps)
    }

    pub fn sampler(&self) -> Result<SamplerState> {
        SamplerState::new(self.sigmas()?, self.order)
    }
}

/// Per-trajectory LMS state.
#[derive(Debug, Clone)]
pub struct SamplerState {
    sigmas: Vec<f64>,
    order: usize,
    /// Most recent derivative first.
    history: VecDeque<LatentTensor>,
    step_index: usize,
}

impl SamplerState {
    pub fn new(sigmas: Vec<f64>, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Schedule("multistep order must be at least 1".into()));
        }
        if sigmas.len() < 2 || *sigmas.last().unwrap() != 0.0 {
            return Err(Error::Schedule(
                "sigmas must contain at least one step and end with 0".into(),
            ));
        }
        if sigmas.iter().any(|s| !s.is_finite()) || sigmas.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Schedule(
                "sigmas must be finite and strictly decreasing".into(),
            ));
        }
        Ok(Self {
            sigmas,
            order,
            history: VecDeque::with_capacity(order),
            step_index: 0,
        })
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn num_steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    pub fn is_finished(&self) -> bool {
        self.step_index >= self.num_steps()
    }

    pub fn current_sigma(&self) -> f64 {
        self.sigmas[self.step_index.min(self.num_steps())]
    }

    /// Standard deviation of the initial latent, `sqrt(σ_max² + 1)`.
    pub fn init_noise_sigma(&self) -> f64 {
        (self.sigmas[0].powi(2) + 1.0).sqrt()
    }

    /// LMS coefficients for the current step; the effective order is capped by
    /// the number of sigma points seen so far (`step_index + 1`).
    pub fn lms_coefficients(&self, order: usize) -> Vec<f64> {
        lms_coefficients(&self.sigmas, self.step_index, order)
    }

    /// Advance the latent by one multistep update using `eps` as the current
    /// derivative.
    pub fn step(&mut self, z: &LatentTensor, eps: &LatentTensor) -> Result<LatentTensor> {
        if self.is_finished() {
            return Err(Error::SamplerFinished(self.num_steps()));
        }
        z.same_shape(eps)?;
        self.history.push_front(eps.clone());
        self.history.truncate(self.order);
        let coeffs = self.lms_coefficients(self.order);
        let mut next = z.clone();
        for (c, d) in coeffs.iter().zip(&self.history) {
            next = next.add_scaled(d, *c)?;
        }
        self.step_index += 1;
        Ok(next)
    }
}

/// `∫_{σ_step}^{σ_{step+1}} L_k(τ) dτ` for `k < order`, where `L_k` is the
/// Lagrange basis polynomial through `σ_step, σ_{step−1}, …` (one point per
/// history entry). `order` is reduced to `step + 1` when fewer points exist.
pub fn lms_coefficients(sigmas: &[f64], step: usize, order: usize) -> Vec<f64> {
    let order = order.clamp(1, step + 1);
    let (a, b) = (sigmas[step], sigmas[step + 1]);
    if order == 1 {
        return vec![b - a];
    }
    let points: Vec<f64> = (0..order).map(|k| sigmas[step - k]).collect();
    let (nodes, weights) = gauss_legendre(order);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (0..order)
        .map(|k| {
            let basis = |tau: f64| {
                points
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != k)
                    .map(|(_, &p)| (tau - p) / (points[k] - p))
                    .product::<f64>()
            };
            half * nodes
                .iter()
                .zip(&weights)
                .map(|(x, w)| w * basis(mid + half * x))
                .sum::<f64>()
        })
        .collect()
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`
/// (exact for polynomials of degree `2n − 1`).
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n(x) and its derivative
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}
