//! Sparse-imagination planning with a transformer world model.
//!
//! The crate trains a small causal transformer to predict the next frame
//! of visual patch tokens under randomized grouped attention, then plans
//! with MPC-CEM while rolling out on random token subsets. Analysis
//! instruments (nHSIC, attentive probing, prediction error, noise
//! injection) quantify how much state information the subsets retain.
//!
//! A narrative guide lives in `book/`; the snippets there mirror the
//! doc-tests in this crate.
//!
//! ```
//! use sparseplan::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let a = g.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]));
//! let b = g.leaf(Tensor::from_rows(&[vec![3.0], vec![4.0]]));
//! let c = g.matmul(a, b).unwrap();
//! assert_eq!(g.value(c).data, vec![11.0]);
//! ```

pub mod analysis;
pub mod autodiff;
pub mod bench;
pub mod env;
pub mod error;
pub mod model;
pub mod plan;
pub mod token;

pub use error::{Error, Result};
