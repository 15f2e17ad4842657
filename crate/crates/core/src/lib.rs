//! Reward engineering for proactive question-asking agents.
//!
//! The crate scores the questions a doctor model asks by the Shapley-weighted
//! fact coverage they add to its articulated understanding, searches dialogue
//! trees with those rewards, and distributes trajectory rewards down to
//! individual tokens for group-relative policy optimization. All model access
//! goes through the traits in [`oracle`]; [`oracle::synthetic`] provides a
//! closed-form environment in which every quantity can be checked by hand.

pub mod episode;
pub mod error;
pub mod eval;
pub mod grpo;
pub mod hash;
pub mod mcts;
pub mod model;
pub mod noise;
pub mod oracle;
pub mod prompt;
pub mod shapley;
pub mod sig;

pub use error::{Error, Result};

// The guide's code blocks run as doc-tests through these modules.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/cases.md")]
    mod cases {}
    #[doc = include_str!("../../../book/src/shapley.md")]
    mod shapley {}
    #[doc = include_str!("../../../book/src/sig.md")]
    mod sig {}
    #[doc = include_str!("../../../book/src/search.md")]
    mod search {}
    #[doc = include_str!("../../../book/src/rewards.md")]
    mod rewards {}
    #[doc = include_str!("../../../book/src/oracles.md")]
    mod oracles {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
