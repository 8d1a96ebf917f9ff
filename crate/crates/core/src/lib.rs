#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array_codebook;
pub mod channel;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod offline_db;
pub mod refinement;
pub mod regret;
pub mod selection;
pub mod two_layer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    pub struct Intro;
    #[doc = include_str!("../../../book/src/codebook.md")]
    pub struct Codebooks;
    #[doc = include_str!("../../../book/src/channel.md")]
    pub struct Channel;
    #[doc = include_str!("../../../book/src/offline.md")]
    pub struct Offline;
    #[doc = include_str!("../../../book/src/selection.md")]
    pub struct Selection;
    #[doc = include_str!("../../../book/src/refinement.md")]
    pub struct Refinement;
    #[doc = include_str!("../../../book/src/regret.md")]
    pub struct Regret;
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub struct Experiments;
}
