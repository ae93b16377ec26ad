//! Progressive unseen-domain expansion: the noise-conditioned generator,
//! contrastive and adversarial losses, and the alternating training loop.

pub mod generator;
pub mod losses;
pub mod train;

pub use generator::{
    adain3d, adain3d_ref, generate, sample_noise, Generator, GeneratorVars, ProjectionHead,
    ProjectionVars, ADAIN_EPS,
};
pub use losses::{
    clip_max, loss_nce, loss_nce_star, loss_recon, nce_partner, nce_reference,
    nce_star_reference, recon_reference,
};
pub use train::{
    adversarial_step, generator_batch_grads, progressive_train, CycleRecord, ExpansionConfig,
    ExpansionState,
};
