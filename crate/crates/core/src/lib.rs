//! Cost-efficient document annotation and ordinal sentiment prediction.
//!
//! The pipeline: build a sparse [`corpus`], factorize it with a multinomial
//! topic model ([`topics`]), rank documents for labeling by greedy
//! D-optimality in topic space ([`design`]), regress token counts on the
//! collected labels ([`mnir`]) and predict sentiment over the whole pool
//! from the resulting low-dimensional scores ([`forward`]). The [`harness`]
//! module runs the learning-curve experiments that compare design
//! strategies.

pub mod corpus;
pub mod design;
pub mod error;
pub mod forward;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod mnir;
pub mod plot;
pub mod synthetic;
pub mod topics;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/topics.md")]
    mod topics {}
    #[doc = include_str!("../../../book/src/design.md")]
    mod design {}
    #[doc = include_str!("../../../book/src/mnir.md")]
    mod mnir {}
    #[doc = include_str!("../../../book/src/forward.md")]
    mod forward {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
