//! End-to-end runs of the `mrisk` binary on small configs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use manifold_risk::experiment::{ClassifierTag, ExperimentConfig};
use manifold_risk::manifolds::{read_dataset_csv, ManifoldKind};
use manifold_risk::nn::{Activation, Classifier, Layer};
use manifold_risk::risk::read_risk_csv;
use manifold_risk::tightness::read_tightness_csv;

fn mrisk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrisk")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// A preset cut down to a few seconds of work.
fn tiny_config(dir: &Path, preset: &str, eps: &[f64]) -> PathBuf {
    let mut cfg = ExperimentConfig::preset(preset).unwrap();
    cfg.n_train = 120;
    cfg.n_test = 60;
    cfg.eps = eps.to_vec();
    for spec in cfg.recipes.values_mut() {
        spec.hidden = vec![8];
        spec.sgd.epochs = 5;
        if let Some(a) = spec.attack.as_mut() {
            a.pgd_steps = 3;
        }
    }
    cfg.eval.nnr_in_points = 10;
    cfg.eval.nnr_normal_points = 5;
    let path = dir.join(format!("{preset}.json"));
    std::fs::write(&path, cfg.to_json().unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_writes_correctly_labelled_reproducible_files() {
    let dir = tempfile::tempdir().unwrap();
    type Rule = fn(&[f64]) -> bool;
    let rules: [(&str, ManifoldKind, Rule); 3] = [
        ("circle_single", ManifoldKind::Circle2d, |x| x[0] > 0.0),
        ("circle_double", ManifoldKind::Circle2d, |x| x[0] * x[1] > 0.0),
        ("plane_single", ManifoldKind::Plane3d, |x| x[0] > x[1].sin()),
    ];
    for (preset, kind, positive) in rules {
        let cfg = tiny_config(dir.path(), preset, &[0.1]);
        let (a, b) = (
            dir.path().join(format!("{preset}_a")),
            dir.path().join(format!("{preset}_b")),
        );
        for out in [&a, &b] {
            let o = mrisk(&["--config", s(&cfg), "--out", s(out), "gen-data"]);
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
            assert!(String::from_utf8_lossy(&o.stdout).contains("labelled +1"));
        }
        for (name, n) in [("train.csv", 120), ("test.csv", 60)] {
            let bytes = std::fs::read(a.join(name)).unwrap();
            assert_eq!(bytes, std::fs::read(b.join(name)).unwrap());
            let rows = read_dataset_csv(kind, bytes.as_slice()).unwrap();
            assert_eq!(rows.len(), n);
            for r in &rows {
                assert_eq!(r.y, if positive(&r.x) { 1.0 } else { -1.0 });
            }
        }
    }
}

#[test]
fn zero_budget_adversarial_checkpoint_equals_standard() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "circle_single", &[0.1]);
    let out = dir.path().join("out");
    assert_eq!(
        code(&mrisk(&["--config", s(&cfg), "--out", s(&out), "train", "--tag", "f"])),
        0
    );
    let o = mrisk(&[
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "train",
        "--tag",
        "f_adv",
        "--eps",
        "0",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let models = out.join("models");
    let f = std::fs::read_to_string(models.join("f.json")).unwrap();
    assert_eq!(f, std::fs::read_to_string(models.join("f_adv_eps0.json")).unwrap());
    Classifier::from_json(&f).unwrap();

    let loss = std::fs::read_to_string(models.join("f_loss.csv")).unwrap();
    let mut lines = loss.lines();
    assert_eq!(lines.next(), Some("epoch,loss"));
    let values: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), 5);
    assert!(values.iter().all(|v| v.is_finite()));
}

#[test]
fn risks_writes_one_row_per_classifier_and_eps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "circle_single", &[0.1, 0.2]);
    let out = dir.path().join("out");
    let o = mrisk(&["--config", s(&cfg), "--out", s(&out), "all"]);
    assert!(matches!(code(&o), 0 | 2), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_risk_csv(std::fs::File::open(out.join("risks.csv")).unwrap()).unwrap();
    // f at both eps, then one f_adv and one f_nor model per eps
    assert_eq!(rows.len(), 6);
    let order: Vec<(f64, &str)> = rows.iter().map(|r| (r.eps, r.classifier.as_str())).collect();
    assert_eq!(order[..3], [(0.1, "f"), (0.1, "f_adv"), (0.1, "f_nor")]);
    assert!(out.join("models/f_nor_eps0.2.json").exists());

    // a second run loads the checkpoints and reproduces the table
    let first = std::fs::read(out.join("risks.csv")).unwrap();
    mrisk(&["--config", s(&cfg), "--out", s(&out), "risks"]);
    assert_eq!(first, std::fs::read(out.join("risks.csv")).unwrap());
}

#[test]
fn empty_eps_list_gives_a_header_only_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "plane_single", &[]);
    let out = dir.path().join("out");
    let o = mrisk(&["--config", s(&cfg), "--out", s(&out), "risks"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("risks.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("dataset,classifier,eps"));
}

#[test]
fn tightness_table_has_exact_normal_risk() {
    let dir = tempfile::tempdir().unwrap();
    let o = mrisk(&[
        "--out",
        s(dir.path()),
        "tightness",
        "--n",
        "3,5,10",
        "--eps",
        "0.25",
        "--probes",
        "300",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("tightness.csv")).unwrap();
    assert!(text.starts_with("n,eps,l1,l2,r_std,r_in,r_nor,nnr,r_adv_analytic,r_adv_bruteforce\n"));
    let rows = read_tightness_csv(text.as_bytes()).unwrap();
    for r in &rows {
        assert_eq!(r.r_nor, 1.0 / r.n as f64);
        assert_eq!(r.r_adv_analytic, 1.0);
        assert_eq!(r.r_adv_bruteforce, 1.0);
    }

    let o = mrisk(&[
        "--out",
        s(dir.path()),
        "tightness",
        "--n",
        "2",
        "--eps",
        "0.05",
        "--probes",
        "300",
    ]);
    assert_eq!(code(&o), 0);
    let rows = read_tightness_csv(std::fs::File::open(dir.path().join("tightness.csv")).unwrap()).unwrap();
    assert!(rows[0].r_adv_bruteforce < 1.0);
}

fn write_net(dir: &Path, name: &str, c: &Classifier) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, c.to_json().unwrap()).unwrap();
    path
}

fn dump(dir: &Path, checkpoint: &Path, n: usize) -> Vec<csv::StringRecord> {
    let n = n.to_string();
    let args = [
        "--out",
        s(dir),
        "boundary-dump",
        "--checkpoint",
        s(checkpoint),
        "--kind",
        "circle2d",
        "--n-probe",
        &n,
    ];
    let o = mrisk(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(dir.join("boundary.csv")).unwrap();
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>(),
        ["x0", "x1", "score", "label", "on_boundary", "p0", "p1", "u0"]
    );
    r.records().map(Result::unwrap).collect()
}

#[test]
fn radially_constant_net_has_constant_labels_along_fibers() {
    let dir = tempfile::tempdir().unwrap();
    // no biases: the score is positively homogeneous, so its sign is
    // constant along each ray from the origin, which is a normal fiber
    let net = Classifier::new(vec![
        Layer::new(
            2,
            3,
            vec![1.0, 0.5, -0.7, 1.0, 0.3, -1.2],
            vec![0.0; 3],
            Activation::Relu,
        )
        .unwrap(),
        Layer::new(3, 1, vec![1.0, -0.8, 0.6], vec![0.0], Activation::Identity).unwrap(),
    ])
    .unwrap();
    let ckpt = write_net(dir.path(), "radial.json", &net);
    let rows = dump(dir.path(), &ckpt, 500);
    assert_eq!(rows.len(), 500);
    for row in &rows {
        let p: Vec<f64> = (5..7).map(|i| row[i].parse().unwrap()).collect();
        let label: i32 = row[3].parse().unwrap();
        let at_projection = if net.eval(&p) > 0.0 { 1 } else { -1 };
        assert_eq!(label, at_projection);
        let x: Vec<f64> = (0..2).map(|i| row[i].parse().unwrap()).collect();
        let n = x[0].hypot(x[1]);
        assert!((x[0] / n - p[0]).abs() < 1e-12 && (x[1] / n - p[1]).abs() < 1e-12);
    }
}

#[test]
fn zero_net_puts_every_probe_on_the_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = write_net(dir.path(), "zero.json", &Classifier::zeros(2, &[4]).unwrap());
    for row in dump(dir.path(), &ckpt, 50) {
        assert_eq!(&row[3], "-1");
        assert_eq!(&row[4], "1");
    }
}

#[test]
fn exit_codes_follow_the_documented_contract() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&mrisk(&["--help"])), 0);
    assert_eq!(code(&mrisk(&["--version"])), 0);
    assert_eq!(code(&mrisk(&["no-such-command"])), 1);
    assert_eq!(code(&mrisk(&["--config", "/nonexistent/cfg.json", "gen-data"])), 1);
    assert_eq!(code(&mrisk(&["--preset", "torus", "gen-data"])), 1);
    let cfg = tiny_config(dir.path(), "circle_single", &[0.1]);
    let bad = [
        "--config",
        s(&cfg),
        "--out",
        s(dir.path()),
        "train",
        "--tag",
        "f_adv",
        "--eps",
        "1.5",
    ];
    assert_eq!(code(&mrisk(&bad)), 1);
    let o = mrisk(&["--out", s(dir.path()), "tightness", "--n", "10", "--probes", "2"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn failed_decomposition_check_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::preset("circle_single").unwrap();
    cfg.n_test = 1000;
    cfg.eps = vec![0.05];
    cfg.classifiers = vec![ClassifierTag::F];
    cfg.eval.nnr_in_points = 10;
    cfg.eval.nnr_normal_points = 5;
    // evaluating claim (ii) on a model with large normal risk must fail it
    cfg.nor_zero_threshold = 1.0;
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, cfg.to_json().unwrap()).unwrap();

    // s = x1 on the circle, but a steep ramp past x1 = 1 flips every point
    // near (1, 0) that is pushed outward along its normal
    let net = Classifier::new(vec![
        Layer::new(
            2,
            3,
            vec![1.0, 0.0, -1.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, -1.0],
            Activation::Relu,
        )
        .unwrap(),
        Layer::new(3, 1, vec![1.0, -1.0, -1000.0], vec![0.0], Activation::Identity).unwrap(),
    ])
    .unwrap();
    let out = dir.path().join("out");
    std::fs::create_dir_all(out.join("models")).unwrap();
    write_net(&out.join("models"), "f.json", &net);
    let o = mrisk(&["--config", s(&cfg_path), "--out", s(&out), "risks"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_risk_csv(std::fs::File::open(out.join("risks.csv")).unwrap()).unwrap();
    assert_eq!(rows[0].r_std, 0.0);
    assert_eq!(rows[0].holds_ii, Some(false));
}
