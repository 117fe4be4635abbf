//! Synthetic 2D wall-navigation environment: continuous dynamics with a
//! door gap, deterministic grayscale renderer, frozen random patch
//! tokenizer, and trajectory dataset IO.

mod dataset;
mod render;
mod sim;
mod tokenizer;

pub use dataset::{generate_dataset, load_dataset, save_dataset, Dataset, Episode};
pub use render::{render, Frame};
pub use sim::{step, EnvConfig, EnvState};
pub use tokenizer::Tokenizer;
