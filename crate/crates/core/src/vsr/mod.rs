//! The lip-reading recognizer: a 3D-convolutional residual front-end, a
//! Conformer encoder and a Transformer decoder trained jointly with CTC and
//! cross-entropy.

mod attention;
mod average;
mod config;
mod conformer;
pub mod ctc;
mod decoder;
mod frontend;
mod model;
mod search;
mod train;

pub use average::{average_checkpoints, select_last};
pub use config::{EncoderConfig, FrontendConfig, VsrConfig};
pub use conformer::ConformerEncoder;
pub use ctc::{ctc_loss, ctc_nll, INFEASIBLE_LOSS};
pub use decoder::{sinusoidal_positions, TransformerDecoder};
pub use frontend::Frontend;
pub use model::{clip_tensor, joint_loss, sequence_nll, teacher_forcing_pairs, VsrFeatureBundle, VsrLoss, VsrModel};
pub use search::{beam_search, decode, greedy, DecodeOptions, EncodedClip, Hypothesis, StepScorer};
pub use train::{
    checkpoint_config, load_vsr, model_checkpoint, model_tensors, vsr_from_checkpoint, VsrStepLog, VsrTrainConfig,
    VsrTrainer, CHECKPOINT_KIND,
};
