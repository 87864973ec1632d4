//! Presets, losses, optimizers and training processes.

pub mod loss;
pub mod optim;
pub mod presets;
pub mod process;

pub use loss::{
    bce, bce_target, discriminator_loss, generator_loss, gradient_penalty, hinge_d, l1, mse, wasserstein_d, wasserstein_g,
    LossKind, PROB_CLAMP,
};
pub use optim::{optimizer_step, OptimizerKind, OptimizerState};
pub use presets::{
    family_defaults, preset_discriminator, preset_discriminator_with_labels, preset_generator, preset_generator_with_labels,
    registry_json, FamilyDefaults, Preset, DEFAULT_LABEL_COUNT, DEFAULT_LATENT_DIM,
};
pub use process::{one_hot, train_step, ProcessKind, StepMetrics, TrainingProcess};
