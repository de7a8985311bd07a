//! Context-aware regularization for multiple instance learning on tile bags.
//!
//! A graph autoencoder sits between tile features and a MIL head. Its encoder
//! smooths features along the spatial k-NN graph of each slide, its decoder
//! reconstructs that graph, and the reconstruction loss is blended with the
//! Cox survival loss of the head.

pub mod error;
pub mod gae;
pub mod graph;
pub mod heads;
pub mod io;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod synth;
pub mod train;

pub use error::{Error, ErrorKind, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/autodiff.md")]
    pub struct Autodiff;
    #[doc = include_str!("../../../book/src/graphs.md")]
    pub struct Graphs;
    #[doc = include_str!("../../../book/src/model.md")]
    pub struct Model;
    #[doc = include_str!("../../../book/src/losses.md")]
    pub struct Losses;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/synthetic.md")]
    pub struct Synthetic;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
