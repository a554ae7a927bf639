//! Monte-Carlo estimators for every term of the risk decomposition.
//!
//! All estimators are fractions of a test set. Attacks can fail, so the
//! estimated adversarial risk is a lower bound on the true one; the
//! decomposition check therefore allows a binomial slack and reports
//! margins rather than failing on noise.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::attacks::{
    ambient_attack, in_manifold_attack, in_manifold_attack_grid, normal_attack_grid, AmbientMethod, AttackBudget,
    InManifoldMethod, ScoreFunction,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::manifolds::{LabeledManifoldSample, ManifoldKind};
use crate::measure::{arc_union_length, interval_union_length, rect_union_area, Rect};
use crate::seed::{self, stream};

/// Default `R_nor` level below which claim (ii) is checked.
pub const NOR_ZERO_THRESHOLD: f64 = 0.01;

fn nonempty(test: &[LabeledManifoldSample]) -> Result<()> {
    if test.is_empty() {
        Err(Error::usage("test set is empty"))
    } else {
        Ok(())
    }
}

fn fraction(hits: usize, n: usize) -> f64 {
    hits as f64 / n as f64
}

/// Per-sample attack seed, independent of evaluation order.
fn sample_budget(budget: &AttackBudget, i: usize) -> AttackBudget {
    budget.with_seed(seed::derive(budget.seed, stream::EVAL_ATTACK, i as u64))
}

/// Fraction of samples with `s(x)·y ≤ 0`.
pub fn estimate_std_risk<S: ScoreFunction + ?Sized>(c: &S, test: &[LabeledManifoldSample]) -> Result<f64> {
    nonempty(test)?;
    let hits = test.iter().filter(|s| c.score(&s.x) * s.y <= 0.0).count();
    Ok(fraction(hits, test.len()))
}

/// Fraction of samples with an ambient witness in the `budget` ball.
pub fn estimate_adv_risk<S: ScoreFunction + ?Sized>(
    c: &S,
    test: &[LabeledManifoldSample],
    budget: &AttackBudget,
    method: AmbientMethod,
    exec: Exec,
) -> Result<f64> {
    nonempty(test)?;
    let hits = exec.count(test.len(), |i| {
        let s = &test[i];
        ambient_attack(c, &s.x, s.y, &sample_budget(budget, i), method).success
    });
    Ok(fraction(hits, test.len()))
}

/// Fraction of samples with a flip on their closed normal segment, the
/// sample itself excluded. Correctness at `x` is not required.
pub fn estimate_nor_risk<S: ScoreFunction + ?Sized>(
    c: &S,
    test: &[LabeledManifoldSample],
    budget: &AttackBudget,
    exec: Exec,
) -> Result<f64> {
    nonempty(test)?;
    let hits = exec.count(test.len(), |i| normal_attack_grid(c, &test[i], budget).success);
    Ok(fraction(hits, test.len()))
}

/// Fraction of samples with an in-manifold witness within chord distance
/// `budget.eps`. Pass a budget of `2ε` for the decomposition term.
pub fn estimate_in_risk<S: ScoreFunction + ?Sized>(
    c: &S,
    kind: ManifoldKind,
    test: &[LabeledManifoldSample],
    budget: &AttackBudget,
    method: InManifoldMethod,
    exec: Exec,
) -> Result<f64> {
    nonempty(test)?;
    let flags = exec.try_map(test, |i, s| {
        in_manifold_attack(c, kind, s, &sample_budget(budget, i), method).map(|o| o.success)
    })?;
    Ok(fraction(flags.into_iter().filter(|&f| f).count(), test.len()))
}

/// The empirical `Ẑ`: correctly classified samples with a normal witness.
#[derive(Debug, Clone, PartialEq)]
pub struct ZnorSet {
    pub members: Vec<LabeledManifoldSample>,
    /// Size of the test set the members were drawn from.
    pub n_test: usize,
}

impl ZnorSet {
    /// Empirical probability mass of `Ẑ`.
    pub fn mass(&self) -> f64 {
        if self.n_test == 0 {
            0.0
        } else {
            fraction(self.members.len(), self.n_test)
        }
    }
}

fn in_znor<S: ScoreFunction + ?Sized>(c: &S, s: &LabeledManifoldSample, budget: &AttackBudget) -> bool {
    c.score(&s.x) * s.y > 0.0 && normal_attack_grid(c, s, budget).success
}

pub fn build_znor<S: ScoreFunction + ?Sized>(
    c: &S,
    test: &[LabeledManifoldSample],
    budget: &AttackBudget,
    exec: Exec,
) -> ZnorSet {
    let keep = exec.map(test, |_, s| in_znor(c, s, budget));
    ZnorSet {
        members: test
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(s, _)| s.clone())
            .collect(),
        n_test: test.len(),
    }
}

/// The neighborhood term `μ(Z̄ ∩ B_2ε(Z))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuEstimate {
    /// Normalized measure of the `2ε` dilation of `Ẑ` on the manifold.
    pub union: f64,
    /// Empirical mass of `Ẑ` itself.
    pub znor_mass: f64,
    /// `max(union − znor_mass, 0)`.
    pub value: f64,
}

/// Dilates every `Ẑ` chart point by `2ε` and measures the union exactly:
/// arcs of chord radius `2ε` on the circle, axis-aligned squares of
/// half-side `2ε` clipped to the plane's square, segments on `[0, 1]`.
pub fn mu_znor_neighborhood(kind: ManifoldKind, znor: &ZnorSet, eps: f64) -> MuEstimate {
    if znor.members.is_empty() {
        return MuEstimate {
            union: 0.0,
            znor_mass: 0.0,
            value: 0.0,
        };
    }
    let r = 2.0 * eps;
    let union = match kind {
        ManifoldKind::Circle2d => {
            let half = 2.0 * (r.min(2.0) / 2.0).asin();
            let arcs: Vec<(f64, f64)> = znor.members.iter().map(|s| (s.u[0], half)).collect();
            arc_union_length(&arcs) / kind.volume()
        }
        ManifoldKind::Plane3d => {
            let pi = std::f64::consts::PI;
            let bounds = Rect {
                x0: -pi,
                x1: pi,
                y0: -pi,
                y1: pi,
            };
            let rects: Vec<Rect> = znor
                .members
                .iter()
                .map(|s| {
                    Rect {
                        x0: s.u[0] - r,
                        x1: s.u[0] + r,
                        y0: s.u[1] - r,
                        y1: s.u[1] + r,
                    }
                    .clip(&bounds)
                })
                .collect();
            rect_union_area(&rects) / kind.volume()
        }
        ManifoldKind::Interval1d => {
            let segs: Vec<(f64, f64)> = znor
                .members
                .iter()
                .map(|s| ((s.u[0] - r).max(0.0), (s.u[0] + r).min(1.0)))
                .collect();
            interval_union_length(&segs)
        }
    };
    let znor_mass = znor.mass();
    MuEstimate {
        union,
        znor_mass,
        value: (union - znor_mass).max(0.0),
    }
}

/// Attack settings for a full report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSettings {
    pub kind: ManifoldKind,
    /// Budget at `ε`; in-manifold terms at `2ε` reuse it with a doubled radius.
    pub budget: AttackBudget,
    pub ambient: AmbientMethod,
    pub in_method: InManifoldMethod,
    /// Chart grid points searched for a nearby normally attackable point.
    pub nnr_in_points: usize,
    /// Normal grid points checked at each of those chart points.
    pub nnr_normal_points: usize,
    #[serde(default)]
    pub exec: Exec,
}

impl RiskSettings {
    /// PGD, grid in-manifold search, and the budget's own grid sizes for NNR.
    pub fn new(kind: ManifoldKind, budget: AttackBudget) -> Self {
        Self {
            kind,
            nnr_in_points: budget.in_points,
            nnr_normal_points: budget.normal_points,
            budget,
            ambient: AmbientMethod::Pgd,
            in_method: InManifoldMethod::Grid,
            exec: Exec::default(),
        }
    }
}

/// Whether some chart grid point within chord `2ε` of the sample has a
/// label-free normal flip: a fiber point `z` with `s(z)·s(x') ≤ 0`.
fn nearby_normal_risk<S: ScoreFunction + ?Sized>(
    c: &S,
    kind: ManifoldKind,
    sample: &LabeledManifoldSample,
    settings: &RiskSettings,
) -> Result<bool> {
    let normal = AttackBudget {
        normal_points: settings.nnr_normal_points,
        ..settings.budget.clone()
    };
    let ball = kind.in_manifold_ball(&sample.u, 2.0 * settings.budget.eps)?;
    // nearest chart points first: flips close to the sample end the search early
    let mut grid = ball.grid(settings.nnr_in_points);
    grid.sort_by(|a, b| {
        kind.chord_distance(a, &sample.u)
            .total_cmp(&kind.chord_distance(b, &sample.u))
    });
    for u in grid {
        let x = kind.embed(&u);
        let sx = c.score(&x);
        let probe = LabeledManifoldSample {
            normals: sample_normals(kind, &x),
            x,
            y: sx,
            u,
        };
        if normal_attack_grid(c, &probe, &normal).success {
            return Ok(true);
        }
    }
    Ok(false)
}

fn sample_normals(kind: ManifoldKind, x: &[f64]) -> Vec<Vec<f64>> {
    kind.normal_basis(x).expect("embedded chart points lie on the manifold")
}

/// Events of the nearby-normal-risk term for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NnrEvents {
    /// No normal witness: `s(x')·y > 0` on the whole normal grid.
    pub a: bool,
    /// A chart point within `2ε` has a label-free normal flip.
    pub b: bool,
    /// No in-manifold witness within `2ε`.
    pub c: bool,
}

impl NnrEvents {
    pub fn all(self) -> bool {
        self.a && self.b && self.c
    }
}

/// NNR events of one sample. B is only searched when A and C hold.
pub fn nnr_events<S: ScoreFunction + ?Sized>(
    c: &S,
    kind: ManifoldKind,
    sample: &LabeledManifoldSample,
    settings: &RiskSettings,
) -> Result<NnrEvents> {
    let a = !normal_attack_grid(c, sample, &settings.budget).success;
    let double = settings.budget.with_eps(2.0 * settings.budget.eps);
    let cc = !in_manifold_attack_grid(c, kind, sample, &double)?.success;
    let b = a && cc && nearby_normal_risk(c, kind, sample, settings)?;
    Ok(NnrEvents { a, b, c: cc })
}

/// Fraction of samples where A, B and C all hold.
pub fn estimate_nnr_events<S: ScoreFunction + ?Sized>(
    c: &S,
    test: &[LabeledManifoldSample],
    settings: &RiskSettings,
) -> Result<f64> {
    nonempty(test)?;
    let flags = settings.exec.try_map(test, |_, s| {
        nnr_events(c, settings.kind, s, settings).map(NnrEvents::all)
    })?;
    Ok(fraction(flags.into_iter().filter(|&f| f).count(), test.len()))
}

/// Per-sample outcomes behind a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleEvents {
    pub std: bool,
    /// Union of all ambient-ball witnesses: the sample itself, the ambient
    /// attack, the normal grid and the in-manifold search at `ε`.
    pub adv: bool,
    /// Ambient attack alone.
    pub ambient: bool,
    pub nor: bool,
    pub in_eps: bool,
    pub in_2eps: bool,
    pub znor: bool,
    pub nnr: bool,
}

pub fn sample_events<S: ScoreFunction + ?Sized>(
    c: &S,
    sample: &LabeledManifoldSample,
    index: usize,
    settings: &RiskSettings,
) -> Result<SampleEvents> {
    let kind = settings.kind;
    let budget = sample_budget(&settings.budget, index);
    let double = budget.with_eps(2.0 * budget.eps);
    let std = c.score(&sample.x) * sample.y <= 0.0;
    let ambient = ambient_attack(c, &sample.x, sample.y, &budget, settings.ambient).success;
    let nor = normal_attack_grid(c, sample, &budget).success;
    let in_eps = in_manifold_attack(c, kind, sample, &budget, settings.in_method)?.success;
    let in_2eps = in_manifold_attack(c, kind, sample, &double, settings.in_method)?.success;
    // A and C coincide with the normal and 2ε grid searches already done
    let in_2eps_grid = match settings.in_method {
        InManifoldMethod::Grid => in_2eps,
        InManifoldMethod::Project => in_manifold_attack_grid(c, kind, sample, &double)?.success,
    };
    let nnr = !nor && !in_2eps_grid && nearby_normal_risk(c, kind, sample, settings)?;
    Ok(SampleEvents {
        std,
        adv: std || ambient || nor || in_eps,
        ambient,
        nor,
        in_eps,
        in_2eps,
        znor: !std && nor,
        nnr,
    })
}

/// All risk terms for one (classifier, dataset, ε) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub dataset: String,
    pub classifier: String,
    pub eps: f64,
    pub n_test: usize,
    pub r_std: f64,
    pub r_adv: f64,
    /// Ambient attack alone, without the other witnesses.
    pub r_adv_ambient: f64,
    pub r_nor: f64,
    pub r_in_eps: f64,
    pub r_in_2eps: f64,
    pub znor_size: usize,
    pub mu_union: f64,
    pub mu_znor: f64,
    pub nnr_events: f64,
    /// `R_std + R_nor + R_in(2ε) + μ`.
    pub rhs_i: f64,
    /// `R_std + R_in(2ε)`.
    pub rhs_ii: f64,
    pub seed: u64,
    pub ambient_method: AmbientMethod,
    pub in_method: InManifoldMethod,
}

/// Runs every attack on every test sample and aggregates the terms.
pub fn evaluate_report<S: ScoreFunction + ?Sized>(
    c: &S,
    test: &[LabeledManifoldSample],
    settings: &RiskSettings,
    dataset: &str,
    classifier: &str,
) -> Result<RiskReport> {
    nonempty(test)?;
    settings.budget.validate_for(settings.kind)?;
    let events = settings.exec.try_map(test, |i, s| sample_events(c, s, i, settings))?;
    let n = test.len();
    let rate = |f: fn(&SampleEvents) -> bool| fraction(events.iter().filter(|e| f(e)).count(), n);
    let znor = ZnorSet {
        members: test
            .iter()
            .zip(&events)
            .filter(|(_, e)| e.znor)
            .map(|(s, _)| s.clone())
            .collect(),
        n_test: n,
    };
    let mu = mu_znor_neighborhood(settings.kind, &znor, settings.budget.eps);
    let (r_std, r_nor, r_in_2eps) = (rate(|e| e.std), rate(|e| e.nor), rate(|e| e.in_2eps));
    Ok(RiskReport {
        dataset: dataset.to_string(),
        classifier: classifier.to_string(),
        eps: settings.budget.eps,
        n_test: n,
        r_std,
        r_adv: rate(|e| e.adv),
        r_adv_ambient: rate(|e| e.ambient),
        r_nor,
        r_in_eps: rate(|e| e.in_eps),
        r_in_2eps,
        znor_size: znor.members.len(),
        mu_union: mu.union,
        mu_znor: mu.value,
        nnr_events: rate(|e| e.nnr),
        rhs_i: r_std + r_nor + r_in_2eps + mu.value,
        rhs_ii: r_std + r_in_2eps,
        seed: settings.budget.seed,
        ambient_method: settings.ambient,
        in_method: settings.in_method,
    })
}

/// Outcome of checking both decomposition claims on a report.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub holds_i: bool,
    /// `None` when `R_nor` is above the threshold and claim (ii) does not apply.
    pub holds_ii: Option<bool>,
    pub margin_i: f64,
    pub margin_ii: f64,
    /// Monte-Carlo slack `2·√(R_adv(1 − R_adv)/n) + 0.01`.
    pub tolerance: f64,
    pub warnings: Vec<String>,
}

impl Verdict {
    /// True unless a claim fails beyond the tolerance.
    pub fn passed(&self) -> bool {
        self.holds_i && self.holds_ii != Some(false)
    }
}

pub fn mc_tolerance(r: f64, n: usize) -> f64 {
    2.0 * (r * (1.0 - r) / n.max(1) as f64).sqrt() + 0.01
}

/// Checks `R_adv ≤ rhs_i` and, when `R_nor ≤ nor_zero_threshold`,
/// `R_adv ≤ rhs_ii`, each up to the Monte-Carlo tolerance.
pub fn decomposition_check(report: &RiskReport, nor_zero_threshold: f64) -> Verdict {
    let tolerance = mc_tolerance(report.r_adv, report.n_test);
    let margin_i = report.rhs_i - report.r_adv;
    let margin_ii = report.rhs_ii - report.r_adv;
    let holds_i = margin_i >= -tolerance;
    let holds_ii = (report.r_nor <= nor_zero_threshold).then_some(margin_ii >= -tolerance);
    let mut warnings = Vec::new();
    let tag = format!("{} {} eps={}", report.dataset, report.classifier, report.eps);
    if holds_i && margin_i < 0.0 {
        warnings.push(format!(
            "{tag}: R_adv exceeds rhs_i by {:.4}, within the Monte-Carlo slack",
            -margin_i
        ));
    }
    if holds_ii == Some(true) && margin_ii < 0.0 {
        warnings.push(format!(
            "{tag}: R_adv exceeds rhs_ii by {:.4}, within the Monte-Carlo slack",
            -margin_ii
        ));
    }
    if report.znor_size > 0 && report.mu_union <= report.znor_mass_estimate() {
        warnings.push(format!(
            "{tag}: neighborhood term floored at zero; the right-hand side may be underestimated at small eps"
        ));
    }
    Verdict {
        holds_i,
        holds_ii,
        margin_i,
        margin_ii,
        tolerance,
        warnings,
    }
}

impl RiskReport {
    fn znor_mass_estimate(&self) -> f64 {
        fraction(self.znor_size, self.n_test.max(1))
    }
}

/// One row of the risk CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub dataset: String,
    pub classifier: String,
    pub eps: f64,
    pub n_test: usize,
    pub r_std: f64,
    pub r_adv: f64,
    pub r_nor: f64,
    pub r_in_2eps: f64,
    pub mu_znor: f64,
    pub nnr_events: f64,
    pub rhs_i: f64,
    pub rhs_ii: f64,
    pub holds_i: bool,
    /// Empty when claim (ii) was not evaluated.
    pub holds_ii: Option<bool>,
    pub margin_i: f64,
    pub margin_ii: f64,
    pub seed: u64,
}

impl RiskRow {
    pub fn new(report: &RiskReport, verdict: &Verdict) -> Self {
        Self {
            dataset: report.dataset.clone(),
            classifier: report.classifier.clone(),
            eps: report.eps,
            n_test: report.n_test,
            r_std: report.r_std,
            r_adv: report.r_adv,
            r_nor: report.r_nor,
            r_in_2eps: report.r_in_2eps,
            mu_znor: report.mu_znor,
            nnr_events: report.nnr_events,
            rhs_i: report.rhs_i,
            rhs_ii: report.rhs_ii,
            holds_i: verdict.holds_i,
            holds_ii: verdict.holds_ii,
            margin_i: verdict.margin_i,
            margin_ii: verdict.margin_ii,
            seed: report.seed,
        }
    }
}

pub const RISK_HEADER: [&str; 17] = [
    "dataset",
    "classifier",
    "eps",
    "n_test",
    "r_std",
    "r_adv",
    "r_nor",
    "r_in_2eps",
    "mu_znor",
    "nnr_events",
    "rhs_i",
    "rhs_ii",
    "holds_i",
    "holds_ii",
    "margin_i",
    "margin_ii",
    "seed",
];

/// Writes the header and one line per row; an empty slice gives the header only.
pub fn write_risk_csv<W: Write>(rows: &[RiskRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(RISK_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<risk csv>", e))?;
    Ok(())
}

pub fn read_risk_csv<R: Read>(input: R) -> Result<Vec<RiskRow>> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(RISK_HEADER) {
        return Err(Error::Format("unexpected risk CSV header".into()));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
