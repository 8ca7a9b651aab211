//! Random-weight networks as loss priors for image restoration.
//!
//! A task model `y = model(x)` is trained against
//! `||gt - y|| + lambda * ||f(gt) - f(y)||`, where `f` is a network whose
//! weights are drawn at random and never trained. What makes `f` useful is
//! its structure, not its weights. Four structures are provided in
//! [`manifolds`]:
//!
//! * Taylor unfolding ([`manifolds::TaylorNet`])
//! * additive-coupling invertible networks ([`manifolds::InnNet`])
//! * central difference convolution ([`manifolds::CdcNet`])
//! * reverse filtering by fixed-point iteration ([`manifolds::ReverseNet`])
//!
//! Everything is plain `f64` on the CPU with hand-written adjoints; see the
//! guide in `book/` for the derivations.

pub mod config;
pub mod conv;
pub mod error;
pub mod harness;
pub mod init;
pub mod loss;
pub mod manifolds;
pub mod presets;
pub mod rng;
pub mod runner;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Norm, Shape, Tensor};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/manifolds.md")]
    mod manifolds {}
    #[doc = include_str!("../../../book/src/taylor.md")]
    mod taylor {}
    #[doc = include_str!("../../../book/src/inn.md")]
    mod inn {}
    #[doc = include_str!("../../../book/src/cdc.md")]
    mod cdc {}
    #[doc = include_str!("../../../book/src/reverse.md")]
    mod reverse {}
    #[doc = include_str!("../../../book/src/loss.md")]
    mod loss {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
