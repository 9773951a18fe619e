//! Budgeted sequential selection of high-value items.
//!
//! A ground set of items with known features and costs hides a utility
//! `f`. Items are picked one at a time, each pick reveals a noisy `f(v)`,
//! and no item can be picked twice. The utility is modelled as a
//! Gaussian-process sample, and each round picks the item with the best
//! optimistic estimate of its value, optionally divided by its cost and
//! traded against a log-determinant diversity bonus.
//!
//! The crate is organised by the pieces of that loop:
//!
//! * [`items`]: ground sets, CSV/JSON ingestion, synthetic instances and
//!   the bounded-noise feedback oracle.
//! * [`kernels`]: kernels, Gram matrices and `C_K = ½ log|I + σ̂⁻²K|`.
//! * [`posterior`]: the incremental GP posterior.
//! * [`diversity`]: `D(S)` and its marginal gains.
//! * [`selection`]: decision rules, the main loop and baseline policies.
//! * [`lazy`]: lazy variance updates with a failsafe full update.
//! * [`oracles`]: knapsack/greedy references and regret curves.
//!
//! ```
//! use gp_select::items::synth_gp_itemset;
//! use gp_select::kernels::KernelSpec;
//! use gp_select::selection::{run_gp_select, BetaSchedule, PolicyConfig, Rule};
//!
//! let kernel = KernelSpec::Rbf { bandwidth: 0.2 };
//! let (items, mut oracle) = synth_gp_itemset(200, 2, &kernel, 0.05, (1.0, 1.0), 7)?;
//! let config = PolicyConfig::new(Rule::Uniform, BetaSchedule::Constant { value: 4.0 }, 20.0, 0.05);
//! let trace = run_gp_select(&items, &mut oracle, &kernel, &config)?;
//! assert_eq!(trace.selected().len(), 20);
//! # Ok::<(), gp_select::Error>(())
//! ```

pub mod diversity;
mod error;
mod factor;
pub mod items;
pub mod kernels;
pub mod lazy;
pub mod oracles;
pub mod posterior;
pub mod selection;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/posterior.md")]
    mod posterior {}
    #[doc = include_str!("../../../book/src/diversity.md")]
    mod diversity {}
    #[doc = include_str!("../../../book/src/selection.md")]
    mod selection {}
    #[doc = include_str!("../../../book/src/lazy.md")]
    mod lazy {}
    #[doc = include_str!("../../../book/src/regret.md")]
    mod regret {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
