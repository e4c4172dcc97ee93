//! The guided sampling loop.

use rayon::prelude::*;

use crate::error::Result;
use crate::guidance::{guidance_step, GuidanceConfig, NoiseTriple, SafetyState};
use crate::mixture::{Condition, NoisePredictor};
use crate::rng::RngState;
use crate::scheduler::SamplerState;
use crate::tensor::LatentTensor;

/// Prompt and safety conditions used for every step of a trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conditioning {
    pub prompt: Condition,
    pub safety: Condition,
}

/// Runs one trajectory from scaled Gaussian noise to the terminal latent.
///
/// `sampler` is a fresh template and is cloned, so one template can drive many
/// trajectories.
pub fn sample_trajectory(
    predictor: &dyn NoisePredictor,
    conditioning: &Conditioning,
    sampler: &SamplerState,
    config: &GuidanceConfig,
    rng: &mut RngState,
) -> Result<LatentTensor> {
    config.validate(Some(sampler.num_steps()))?;
    let mut sampler = sampler.clone();
    let shape = predictor.latent_shape();
    let mut z = LatentTensor::normal_sample(rng, &shape)?.scale(sampler.init_noise_sigma())?;
    let mut state = SafetyState::new(&shape)?;
    let uncond = Condition::unconditional();
    for t in 0..sampler.num_steps() {
        let sigma = sampler.current_sigma();
        let triple = NoiseTriple::new(
            predictor.predict(&z, sigma, &uncond)?,
            predictor.predict(&z, sigma, &conditioning.prompt)?,
            predictor.predict(&z, sigma, &conditioning.safety)?,
        )?;
        let (eps, next) = guidance_step(&triple, &state, config, t)?;
        state = next;
        z = sampler.step(&z, &eps)?;
    }
    Ok(z)
}

/// `count` trajectories in parallel; trajectory `i` draws from stream `i` of
/// `seed`, so output does not depend on the thread count.
pub fn sample_batch(
    predictor: &dyn NoisePredictor,
    conditioning: &Conditioning,
    sampler: &SamplerState,
    config: &GuidanceConfig,
    seed: u64,
    count: usize,
) -> Result<Vec<LatentTensor>> {
    config.validate(Some(sampler.num_steps()))?;
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngState::with_stream(seed, i);
            sample_trajectory(predictor, conditioning, sampler, config, &mut rng)
        })
        .collect()
}
