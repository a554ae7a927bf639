//! Manifold decomposition of adversarial risk.
//!
//! The crate trains small feed-forward classifiers on synthetic data
//! manifolds (unit circle, flat square in R³, unit segment), attacks them in
//! the ambient ball, along normal fibers and inside the manifold, and
//! estimates every term of the decomposition
//!
//! ```text
//! R_adv(f, ε) ≤ R_std(f) + R_nor(f, ε) + R_in(f, 2ε) + μ(Z̄ ∩ B_2ε(Z))
//! ```
//!
//! where `Z` is the set of correctly classified points that can be flipped
//! by a normal perturbation. The [`tightness`] module builds the interval
//! family `f_n` for which every term but the neighborhood term vanishes while
//! the adversarial risk stays at one.
//!
//! Scores are signed: the predicted label is `sign(s(x))` and the event
//! `s(x')·y ≤ 0` counts as a misclassification, so a score of exactly zero
//! is always an error.

pub mod attacks;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod manifolds;
pub mod measure;
pub mod nn;
pub mod risk;
pub mod seed;
pub mod tightness;
pub mod training;

pub use attacks::{AttackBudget, AttackOutcome, Norm, ScoreFunction};
pub use error::{Error, Result};
pub use exec::Exec;
pub use manifolds::{LabelRule, LabeledManifoldSample, ManifoldKind};
pub use nn::{Activation, Classifier, SgdConfig};
pub use risk::{RiskReport, Verdict};
pub use tightness::TightnessConstruction;
pub use training::{TrainMode, TrainRecipe};
