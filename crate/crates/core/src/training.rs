//! The three training procedures: standard SGD, PGD adversarial training
//! and normal-direction adversarial training (random offsets along the
//! normal fiber of each sample).
//!
//! Attack generation fans out over the minibatch through [`Exec`]; the SGD
//! step itself is sequential, and every attack seed is derived from
//! `(budget seed, epoch, sample index)`, so results do not depend on the
//! thread count.

use serde::{Deserialize, Serialize};

use crate::attacks::{normal_attack_random, pgd_attack, AttackBudget};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::manifolds::LabeledManifoldSample;
use crate::nn::{train_epochs_with, Classifier, Example, SgdConfig};
use crate::seed::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Standard,
    Adversarial,
    NormalAt,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Standard => "standard",
            TrainMode::Adversarial => "adversarial",
            TrainMode::NormalAt => "normal_at",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecipe {
    pub mode: TrainMode,
    pub sgd: SgdConfig,
    /// Hidden layer widths; the network is initialized from `sgd.seed`.
    pub hidden: Vec<usize>,
    /// Perturbation settings; required by the adversarial modes.
    #[serde(default)]
    pub budget: Option<AttackBudget>,
    #[serde(default)]
    pub exec: Exec,
}

impl TrainRecipe {
    pub fn standard(sgd: SgdConfig, hidden: Vec<usize>) -> Self {
        Self {
            mode: TrainMode::Standard,
            sgd,
            hidden,
            budget: None,
            exec: Exec::default(),
        }
    }

    pub fn with_mode(&self, mode: TrainMode, budget: AttackBudget) -> Self {
        Self {
            mode,
            budget: Some(budget),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        match (self.mode, &self.budget) {
            (TrainMode::Standard, _) => Ok(()),
            (mode, None) => Err(Error::Config(format!(
                "{} training needs an attack budget",
                mode.name()
            ))),
            (_, Some(b)) => b.validate(),
        }
    }
}

/// A trained model with its per-epoch mean loss.
#[derive(Debug, Clone)]
pub struct Trained {
    pub classifier: Classifier,
    pub losses: Vec<f64>,
}

fn attack_seed(base: u64, epoch: usize, i: usize) -> u64 {
    seed::derive(base, stream::TRAIN_ATTACK, ((epoch as u64) << 32) | i as u64)
}

/// Trains according to `recipe.mode`.
pub fn train(data: &[LabeledManifoldSample], recipe: &TrainRecipe) -> Result<Trained> {
    recipe.validate()?;
    let first = data.first().ok_or_else(|| Error::usage("training set is empty"))?;
    let mut c = Classifier::mlp(first.x.len(), &recipe.hidden, recipe.sgd.seed)?;
    let examples: Vec<Example> = data.iter().map(|s| Example::new(s.x.clone(), s.y)).collect();
    let budget = recipe.budget.as_ref().filter(|b| b.eps > 0.0);
    let exec = recipe.exec;
    let losses = match (recipe.mode, budget) {
        (TrainMode::Standard, _) | (_, None) => train_epochs_with(&mut c, &examples, &recipe.sgd, |_, _, _| Ok(None))?,
        (TrainMode::Adversarial, Some(b)) => train_epochs_with(&mut c, &examples, &recipe.sgd, |model, epoch, idx| {
            Ok(Some(exec.map(idx, |_, &i| {
                let s = &data[i];
                pgd_attack(model, &s.x, s.y, &b.with_seed(attack_seed(b.seed, epoch, i))).witness
            })))
        })?,
        (TrainMode::NormalAt, Some(b)) => train_epochs_with(&mut c, &examples, &recipe.sgd, |model, epoch, idx| {
            Ok(Some(exec.map(idx, |_, &i| {
                normal_attack_random(model, &data[i], &b.with_seed(attack_seed(b.seed, epoch, i))).witness
            })))
        })?,
    };
    Ok(Trained { classifier: c, losses })
}

pub fn train_standard(data: &[LabeledManifoldSample], recipe: &TrainRecipe) -> Result<Trained> {
    train(
        data,
        &TrainRecipe {
            mode: TrainMode::Standard,
            ..recipe.clone()
        },
    )
}

pub fn train_adversarial(data: &[LabeledManifoldSample], recipe: &TrainRecipe) -> Result<Trained> {
    train(
        data,
        &TrainRecipe {
            mode: TrainMode::Adversarial,
            ..recipe.clone()
        },
    )
}

pub fn train_normal_at(data: &[LabeledManifoldSample], recipe: &TrainRecipe) -> Result<Trained> {
    train(
        data,
        &TrainRecipe {
            mode: TrainMode::NormalAt,
            ..recipe.clone()
        },
    )
}

/// The inputs normal-direction training feeds to SGD for one epoch, in
/// sample order. Exposed so the fiber invariant can be checked directly.
pub fn normal_at_inputs(
    model: &Classifier,
    data: &[LabeledManifoldSample],
    budget: &AttackBudget,
    epoch: usize,
) -> Vec<Vec<f64>> {
    data.iter()
        .enumerate()
        .map(|(i, s)| normal_attack_random(model, s, &budget.with_seed(attack_seed(budget.seed, epoch, i))).witness)
        .collect()
}
