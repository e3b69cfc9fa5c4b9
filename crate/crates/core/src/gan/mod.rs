//! Multi-resolution spectrogram and multi-period waveform discriminators
//! together with the adversarial and auxiliary training criteria.

mod discriminator;
mod losses;

pub use discriminator::{
    period_reshape, DiscriminatorConfig, DiscriminatorOutputs, MultiDiscriminator, StftResolution,
};
pub use losses::{
    loss_adversarial, loss_aux, loss_discriminator, loss_generator, loss_mag, loss_sc, loss_ssc,
    mean_cosine,
};
