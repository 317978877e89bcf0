//! Conditional denoising diffusion in pixel space: schedules, the epsilon
//! prediction model, training objective, and samplers.

mod loss;
mod model;
mod sampler;
mod schedule;
mod train;

pub use loss::{denoise_loss, denoise_loss_tape, q_sample};
pub use model::{
    forward_backward, grad_check, DenoiserModel, ModelConfig, TokenId, Vocab, GROUP_COND_EMBED,
    GROUP_COND_PROJ, GROUP_TIME, GROUP_TRUNK, NULL_TOKEN,
};
pub use sampler::{sample, sample_with_noise_trace, timestep_grid, GenerationRequest, SamplerKind};
pub use schedule::{make_schedule, NoiseSchedule, ScheduleSpec};
pub use train::{train_base, BaseTrainConfig};
