//! Attack-policy learners: PPO and SAC over small tanh MLPs with hand-written
//! reverse-mode gradients.

pub mod adam;
pub mod checkpoint;
pub mod gae;
pub mod mlp;
pub mod policy;
pub mod ppo;
pub mod replay;
pub mod sac;
pub mod train;

pub use checkpoint::{Algorithm, Checkpoint};
pub use mlp::Mlp;
pub use policy::GaussianPolicy;
pub use ppo::PpoConfig;
pub use sac::SacConfig;
pub use train::{rollout, train, ActionMode, TrainOutcome, TrainerConfig};
