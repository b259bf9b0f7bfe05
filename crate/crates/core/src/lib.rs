//! Memory-based text-guided image manipulation.
//!
//! A caption is encoded word by word, each word attends over a bank of
//! learned texture memories, and two generator stages paint the resulting
//! textures into the image: a coarse stage gated by a learned localization
//! map and a refinement stage driven by per-word attention.

pub mod checkpoint;
pub mod config;
pub mod discriminator;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod losses;
pub mod manipulate;
pub mod memory;
pub mod model;
pub mod optim;
pub mod params;
pub mod pnm;
pub mod scorer;
pub mod text;
pub mod toyset;
pub mod trainer;
pub mod vision;

pub use config::{Ablation, LossWeights, ModelDims, StageWeights, TrainingConfig};
pub use error::{MimError, Result};
pub use manipulate::{Gate, ManipulationState, Stage};
pub use memory::{FusedTexture, MemoryBank};
pub use model::MimNet;
pub use params::{Bound, ParamStore};
pub use text::{TextEncoder, TextEncoding, Vocabulary};
