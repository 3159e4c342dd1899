//! Unguided denoising diffusion over placements: schedule, forward noising,
//! ε-prediction training and ancestral sampling.

mod net;
mod placement;
mod sampler;
mod schedule;

pub use net::{
    draw_training_noise, epsilon_loss, q_sample, timestep_embedding, train_unguided, DiffusionNet,
    DiffusionTrainConfig, LossTrace, NoisePredictor,
};
pub use placement::Placement;
pub use sampler::{chain_rng, draw_reverse, initial_state, p_sample_step, posterior_mean, sample_unguided};
pub use schedule::{NoiseSchedule, ScheduleSpec};
