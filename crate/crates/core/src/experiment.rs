//! Experiment configuration and the end-to-end sweep: generate data, train
//! `f`, `f_adv` and `f_nor`, and evaluate a risk report per classifier and ε.
//!
//! A single `seed` determines everything. Training and test sets, network
//! initialization, shuffling and attack randomness are derived from it on
//! separate streams, and all classifiers share one initialization so that a
//! zero budget reproduces the standard model exactly.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::attacks::{AmbientMethod, AttackBudget, InManifoldMethod, Norm};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::manifolds::{sample_dataset, LabelRule, LabeledManifoldSample, ManifoldKind};
use crate::nn::{Classifier, SgdConfig};
use crate::risk::{decomposition_check, evaluate_report, RiskReport, RiskSettings, Verdict, NOR_ZERO_THRESHOLD};
use crate::seed::{self, stream};
use crate::training::{train, TrainMode, TrainRecipe, Trained};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassifierTag {
    #[serde(rename = "f")]
    F,
    #[serde(rename = "f_adv")]
    FAdv,
    #[serde(rename = "f_nor")]
    FNor,
}

impl ClassifierTag {
    pub const ALL: [ClassifierTag; 3] = [ClassifierTag::F, ClassifierTag::FAdv, ClassifierTag::FNor];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierTag::F => "f",
            ClassifierTag::FAdv => "f_adv",
            ClassifierTag::FNor => "f_nor",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::usage(format!("unknown classifier tag {s:?}; expected f, f_adv or f_nor")))
    }

    pub fn mode(self) -> TrainMode {
        match self {
            ClassifierTag::F => TrainMode::Standard,
            ClassifierTag::FAdv => TrainMode::Adversarial,
            ClassifierTag::FNor => TrainMode::NormalAt,
        }
    }

    /// Whether the trained model depends on ε.
    pub fn per_eps(self) -> bool {
        self != ClassifierTag::F
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: ManifoldKind,
    pub rule: LabelRule,
}

impl DatasetSpec {
    pub fn name(&self) -> &'static str {
        self.rule.name()
    }
}

/// Network and optimizer for one classifier tag. The SGD seed is replaced
/// by one derived from the experiment seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub sgd: SgdConfig,
    /// Attack settings for the adversarial modes; `eps` and `seed` are set
    /// per run.
    #[serde(default)]
    pub attack: Option<AttackBudget>,
}

/// Evaluation-time attack settings; `eps` and `seed` are set per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub budget: AttackBudget,
    pub ambient: AmbientMethod,
    pub in_method: InManifoldMethod,
    pub nnr_in_points: usize,
    pub nnr_normal_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub eps: Vec<f64>,
    pub classifiers: Vec<ClassifierTag>,
    pub recipes: BTreeMap<ClassifierTag, ModelSpec>,
    pub eval: EvalSpec,
    #[serde(default = "default_threshold")]
    pub nor_zero_threshold: f64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    #[serde(default)]
    pub exec: Exec,
}

fn default_threshold() -> f64 {
    NOR_ZERO_THRESHOLD
}

/// The four datasets of the experiments.
pub const PRESETS: [&str; 4] = ["circle_single", "circle_double", "plane_single", "plane_double"];

/// ε grid used for each preset.
pub fn default_eps_grid(rule: LabelRule) -> Vec<f64> {
    match rule {
        LabelRule::CircleSingle | LabelRule::CircleDouble => vec![0.01, 0.02, 0.03, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
        LabelRule::PlaneSingle => (1..=8).map(|i| i as f64 / 10.0).collect(),
        LabelRule::PlaneDouble => (2..=8).map(|i| i as f64 * 0.05).collect(),
        LabelRule::ConstantPlusOne => Vec::new(),
    }
}

impl ExperimentConfig {
    /// Reference settings: one hidden layer of 64 units, 1000 epochs at learning
    /// rate 0.1 on the circle; three hidden layers of 64, 2000 epochs with
    /// weight decay 0.001 on the plane. 1000 training and test points, l∞
    /// attacks.
    pub fn preset(name: &str) -> Result<Self> {
        let rule = match name {
            "circle_single" => LabelRule::CircleSingle,
            "circle_double" => LabelRule::CircleDouble,
            "plane_single" => LabelRule::PlaneSingle,
            "plane_double" => LabelRule::PlaneDouble,
            _ => {
                return Err(Error::usage(format!(
                    "unknown preset {name:?}; expected one of {PRESETS:?}"
                )))
            }
        };
        let circle = matches!(rule, LabelRule::CircleSingle | LabelRule::CircleDouble);
        let kind = if circle {
            ManifoldKind::Circle2d
        } else {
            ManifoldKind::Plane3d
        };
        let (hidden, epochs, weight_decay) = if circle {
            (vec![64], 1000, 0.0)
        } else {
            (vec![64, 64, 64], 2000, 0.001)
        };
        let sgd = SgdConfig {
            learning_rate: 0.1,
            weight_decay,
            epochs,
            batch_size: 32,
            seed: 0,
        };
        let attack = AttackBudget::for_manifold(kind, 0.0, Norm::Linf);
        let recipes = ClassifierTag::ALL
            .into_iter()
            .map(|t| {
                let spec = ModelSpec {
                    hidden: hidden.clone(),
                    sgd: sgd.clone(),
                    attack: t.per_eps().then(|| attack.clone()),
                };
                (t, spec)
            })
            .collect();
        Ok(Self {
            dataset: DatasetSpec { kind, rule },
            n_train: 1000,
            n_test: 1000,
            eps: default_eps_grid(rule),
            classifiers: ClassifierTag::ALL.to_vec(),
            recipes,
            eval: EvalSpec {
                budget: attack.clone(),
                ambient: AmbientMethod::Pgd,
                in_method: InManifoldMethod::Grid,
                nnr_in_points: attack.in_points,
                nnr_normal_points: attack.normal_points,
            },
            nor_zero_threshold: NOR_ZERO_THRESHOLD,
            out_dir: None,
            seed: 0,
            exec: Exec::default(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let DatasetSpec { kind, rule } = self.dataset;
        if !rule.supports(kind) {
            return Err(Error::Config(format!(
                "label rule {} does not apply to {}",
                rule.name(),
                kind.name()
            )));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("n_train and n_test must be at least 1".into()));
        }
        for &e in &self.eps {
            if !(e > 0.0 && e < kind.tubular_radius()) {
                return Err(Error::Config(format!(
                    "eps {e} must lie in (0, {}) for {}",
                    kind.tubular_radius(),
                    kind.name()
                )));
            }
        }
        for tag in &self.classifiers {
            let spec = self.spec(*tag)?;
            spec.sgd.validate()?;
            if tag.per_eps() {
                spec.attack
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("{} needs attack settings", tag.name())))?
                    .validate()?;
            }
        }
        self.eval.budget.validate()?;
        if self.eval.nnr_in_points < 2 || self.eval.nnr_normal_points < 2 {
            return Err(Error::Config("NNR grid counts must be at least 2".into()));
        }
        Ok(())
    }

    pub fn spec(&self, tag: ClassifierTag) -> Result<&ModelSpec> {
        self.recipes
            .get(&tag)
            .ok_or_else(|| Error::Config(format!("no recipe for classifier {}", tag.name())))
    }

    pub fn train_set(&self) -> Result<Vec<LabeledManifoldSample>> {
        let d = self.dataset;
        sample_dataset(
            d.kind,
            d.rule,
            self.n_train,
            seed::derive(self.seed, stream::DATA_TRAIN, 0),
        )
    }

    pub fn test_set(&self) -> Result<Vec<LabeledManifoldSample>> {
        let d = self.dataset;
        sample_dataset(
            d.kind,
            d.rule,
            self.n_test,
            seed::derive(self.seed, stream::DATA_TEST, 0),
        )
    }

    /// Training recipe for `tag` at budget `eps` (ignored for `f`).
    pub fn recipe(&self, tag: ClassifierTag, eps: f64) -> Result<TrainRecipe> {
        let spec = self.spec(tag)?;
        let sgd = SgdConfig {
            seed: seed::derive(self.seed, stream::INIT, 0),
            ..spec.sgd.clone()
        };
        let budget = match (tag.per_eps(), &spec.attack) {
            (false, _) => None,
            (true, Some(b)) => Some(
                b.with_eps(eps)
                    .with_seed(seed::derive(self.seed, stream::TRAIN_ATTACK, 0)),
            ),
            (true, None) => return Err(Error::Config(format!("{} needs attack settings", tag.name()))),
        };
        Ok(TrainRecipe {
            mode: tag.mode(),
            sgd,
            hidden: spec.hidden.clone(),
            budget,
            exec: self.exec,
        })
    }

    pub fn risk_settings(&self, eps: f64) -> RiskSettings {
        RiskSettings {
            kind: self.dataset.kind,
            budget: self
                .eval
                .budget
                .with_eps(eps)
                .with_seed(seed::derive(self.seed, stream::EVAL_ATTACK, 0)),
            ambient: self.eval.ambient,
            in_method: self.eval.in_method,
            nnr_in_points: self.eval.nnr_in_points,
            nnr_normal_points: self.eval.nnr_normal_points,
            exec: self.exec,
        }
    }

    /// Replaces the experiment seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// A trained classifier of the sweep; `eps` is `None` for the standard model.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub tag: ClassifierTag,
    pub eps: Option<f64>,
    pub trained: Trained,
}

impl TrainedModel {
    /// File stem such as `f` or `f_adv_eps0.1`.
    pub fn stem(&self) -> String {
        match self.eps {
            None => self.tag.name().to_string(),
            Some(e) => format!("{}_eps{e}", self.tag.name()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub models: Vec<TrainedModel>,
    pub reports: Vec<(RiskReport, Verdict)>,
}

/// Trains the models for `tag`: one for `f`, one per ε otherwise.
pub fn train_tag(
    cfg: &ExperimentConfig,
    tag: ClassifierTag,
    train_set: &[LabeledManifoldSample],
) -> Result<Vec<TrainedModel>> {
    if !tag.per_eps() {
        let trained = train(train_set, &cfg.recipe(tag, 0.0)?)?;
        return Ok(vec![TrainedModel {
            tag,
            eps: None,
            trained,
        }]);
    }
    cfg.eps
        .iter()
        .map(|&e| {
            Ok(TrainedModel {
                tag,
                eps: Some(e),
                trained: train(train_set, &cfg.recipe(tag, e)?)?,
            })
        })
        .collect()
}

/// Reports of one model: all ε for the standard model, its own ε otherwise.
pub fn evaluate_model(
    cfg: &ExperimentConfig,
    model: &Classifier,
    tag: ClassifierTag,
    eps: &[f64],
    test_set: &[LabeledManifoldSample],
) -> Result<Vec<(RiskReport, Verdict)>> {
    eps.iter()
        .map(|&e| {
            let r = evaluate_report(model, test_set, &cfg.risk_settings(e), cfg.dataset.name(), tag.name())?;
            let v = decomposition_check(&r, cfg.nor_zero_threshold);
            Ok((r, v))
        })
        .collect()
}

/// Runs the full sweep, calling `progress` with a short line per finished step.
pub fn run(cfg: &ExperimentConfig, mut progress: impl FnMut(&str)) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let (train_set, test_set) = (cfg.train_set()?, cfg.test_set()?);
    let mut models = Vec::new();
    let mut reports = Vec::new();
    for &tag in &cfg.classifiers {
        for m in train_tag(cfg, tag, &train_set)? {
            let eps: Vec<f64> = match m.eps {
                None => cfg.eps.clone(),
                Some(e) => vec![e],
            };
            let rows = evaluate_model(cfg, &m.trained.classifier, tag, &eps, &test_set)?;
            progress(&format!(
                "{} {}: trained and evaluated at {} eps",
                cfg.dataset.name(),
                m.stem(),
                rows.len()
            ));
            reports.extend(rows);
            models.push(m);
        }
    }
    // table order: by eps, then classifier
    reports.sort_by(|a, b| {
        a.0.eps
            .total_cmp(&b.0.eps)
            .then_with(|| tag_order(&a.0.classifier).cmp(&tag_order(&b.0.classifier)))
    });
    Ok(ExperimentOutput { models, reports })
}

fn tag_order(name: &str) -> usize {
    ClassifierTag::ALL
        .iter()
        .position(|t| t.name() == name)
        .unwrap_or(usize::MAX)
}
