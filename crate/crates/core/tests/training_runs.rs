//! End-to-end training runs on the experiment datasets.

use manifold_risk::attacks::{AmbientMethod, AttackBudget, Norm};
use manifold_risk::manifolds::{sample_dataset, LabelRule, ManifoldKind};
use manifold_risk::nn::SgdConfig;
use manifold_risk::risk::{estimate_adv_risk, estimate_nor_risk, estimate_std_risk};
use manifold_risk::training::{train, train_standard, TrainMode, TrainRecipe};
use manifold_risk::Exec;

fn sgd(epochs: usize, weight_decay: f64) -> SgdConfig {
    SgdConfig {
        learning_rate: 0.1,
        weight_decay,
        epochs,
        batch_size: 32,
        seed: 17,
    }
}

#[test]
fn standard_circle_classifier_is_accurate() {
    let train_set = sample_dataset(ManifoldKind::Circle2d, LabelRule::CircleSingle, 1000, 1).unwrap();
    let test = sample_dataset(ManifoldKind::Circle2d, LabelRule::CircleSingle, 1000, 2).unwrap();
    let t = train_standard(&train_set, &TrainRecipe::standard(sgd(1000, 0.0), vec![64])).unwrap();
    assert_eq!(t.losses.len(), 1000);
    assert!(estimate_std_risk(&t.classifier, &test).unwrap() <= 0.02);
}

#[test]
fn seeded_loss_trace_is_bitwise_reproducible() {
    let data = sample_dataset(ManifoldKind::Circle2d, LabelRule::CircleSingle, 200, 7).unwrap();
    let mut r = TrainRecipe::standard(sgd(30, 0.0), vec![16]);
    r.sgd.seed = 7;
    let a = train_standard(&data, &r).unwrap();
    let b = train_standard(&data, &r).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.losses), bits(&b.losses));
    assert_eq!(a.classifier, b.classifier);
}

#[test]
fn adversarial_training_does_not_lose_to_standard_at_its_own_budget() {
    let train_set = sample_dataset(ManifoldKind::Circle2d, LabelRule::CircleSingle, 1000, 3).unwrap();
    let test = sample_dataset(ManifoldKind::Circle2d, LabelRule::CircleSingle, 1000, 4).unwrap();
    let mut budget = AttackBudget::new(0.1, Norm::Linf).with_seed(5);
    budget.pgd_steps = 10;
    let f = train_standard(&train_set, &TrainRecipe::standard(sgd(300, 0.0), vec![64])).unwrap();
    let recipe = TrainRecipe::standard(sgd(300, 0.0), vec![64]).with_mode(TrainMode::Adversarial, budget);
    let f_adv = train(&train_set, &recipe).unwrap();
    assert!(f_adv.losses.iter().all(|l| l.is_finite()));
    let eval = AttackBudget::new(0.1, Norm::Linf).with_seed(6);
    let r_f = estimate_adv_risk(&f.classifier, &test, &eval, AmbientMethod::Pgd, Exec::default()).unwrap();
    let r_adv = estimate_adv_risk(&f_adv.classifier, &test, &eval, AmbientMethod::Pgd, Exec::default()).unwrap();
    assert!(r_adv <= r_f + 0.05, "{r_adv} vs {r_f}");
}

#[test]
fn normal_training_removes_normal_risk_on_the_circle() {
    let train_set = sample_dataset(ManifoldKind::Circle2d, LabelRule::CircleSingle, 1000, 5).unwrap();
    let test = sample_dataset(ManifoldKind::Circle2d, LabelRule::CircleSingle, 1000, 6).unwrap();
    let budget = AttackBudget::new(0.1, Norm::Linf).with_seed(7);
    let recipe = TrainRecipe::standard(sgd(1000, 0.0), vec![64]).with_mode(TrainMode::NormalAt, budget.clone());
    let f_nor = train(&train_set, &recipe).unwrap();
    assert!(estimate_nor_risk(&f_nor.classifier, &test, &budget, Exec::default()).unwrap() <= 0.02);
}

#[test]
fn normal_training_removes_normal_risk_on_the_plane() {
    let train_set = sample_dataset(ManifoldKind::Plane3d, LabelRule::PlaneSingle, 1000, 7).unwrap();
    let test = sample_dataset(ManifoldKind::Plane3d, LabelRule::PlaneSingle, 1000, 8).unwrap();
    let budget = AttackBudget::for_manifold(ManifoldKind::Plane3d, 0.4, Norm::Linf).with_seed(9);
    let recipe =
        TrainRecipe::standard(sgd(500, 0.001), vec![64, 64, 64]).with_mode(TrainMode::NormalAt, budget.clone());
    let f_nor = train(&train_set, &recipe).unwrap();
    assert!(estimate_nor_risk(&f_nor.classifier, &test, &budget, Exec::default()).unwrap() <= 0.03);
}
