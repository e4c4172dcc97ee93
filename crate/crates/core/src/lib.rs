//! Safety-guided classifier-free diffusion sampling.
//!
//! * [`tensor`] and [`rng`]: numeric substrate.
//! * [`scheduler`]: beta schedules, sigma sequences, linear multistep sampler.
//! * [`guidance`]: classifier-free guidance, safety guidance with warm-up and
//!   momentum, negative-prompt baseline, presets.
//! * [`mixture`] and [`trajectory`]: analytic Gaussian-mixture noise predictor
//!   and the guided sampling loop.
//! * [`bench`]: prompt dataset ingestion and evaluation metrics.

pub mod bench;
pub mod error;
pub mod guidance;
pub mod mixture;
pub mod rng;
pub mod scheduler;
pub mod tensor;
pub mod trajectory;

pub use error::{Error, Result};
pub use guidance::{GuidanceConfig, GuidanceMode, NoiseTriple, SafetyState, ScaleClip};
pub use mixture::{Condition, MixtureModel, NoisePredictor};
pub use rng::RngState;
pub use scheduler::{NoiseSchedule, SamplerState, ScheduleKind, SchedulerConfig};
pub use tensor::LatentTensor;
pub use trajectory::{sample_batch, sample_trajectory, Conditioning};
