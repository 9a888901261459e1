//! Speech-driven lip animation: a generator producing one mouth frame per
//! speech chunk from an identity frame, a frame discriminator, a sequence
//! discriminator, and their training objectives.

mod config;
mod discriminators;
mod generator;
pub mod losses;
mod train;

pub use config::{GeneratorConfig, LamLossWeights};
pub use discriminators::{FrameDiscriminator, SequenceDiscriminator};
pub use generator::{Generator, SEED_SIZE};
pub use losses::{disc_objective, generator_adv, lam_total, lam_total_loss, reconstruction_loss, LamTerms, PROB_EPS};
pub use train::{
    generator_from_checkpoint, load_generator, train_lam, LamClip, LamRun, LamStepLog, LamTrainConfig, LamTrainer,
    CHECKPOINT_KIND,
};
