//! Adversarial search in the ambient ball, along normal fibers and inside
//! the manifold.
//!
//! Every attack looks for a point `x'` in its search set with
//! `s(x')·y ≤ 0`. A score of exactly zero counts as a success. Attacks are
//! pure functions of `(score function, sample, budget)`; randomness comes
//! only from `budget.seed`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifolds::{wrap_angle, ChartBall, LabeledManifoldSample, ManifoldKind};
use crate::nn::Classifier;

/// Anything with a scalar score and an input gradient.
pub trait ScoreFunction: Sync {
    fn input_dim(&self) -> usize;
    fn score(&self, x: &[f64]) -> f64;
    fn input_gradient(&self, x: &[f64]) -> Vec<f64>;
}

impl ScoreFunction for Classifier {
    fn input_dim(&self) -> usize {
        Classifier::input_dim(self)
    }

    fn score(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }

    fn input_gradient(&self, x: &[f64]) -> Vec<f64> {
        Classifier::input_gradient(self, x).expect("attack points have the classifier's dimension")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Linf,
    L2,
}

impl Norm {
    pub fn length(self, v: &[f64]) -> f64 {
        match self {
            Norm::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        }
    }

    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
        self.length(&d)
    }

    /// Projects `p` onto the closed ball of radius `eps` around `center`.
    fn project(self, p: &mut [f64], center: &[f64], eps: f64) {
        match self {
            Norm::Linf => {
                for (v, c) in p.iter_mut().zip(center) {
                    *v = v.clamp(c - eps, c + eps);
                }
            }
            Norm::L2 => {
                let r = self.distance(p, center);
                if r > eps {
                    let k = eps / r;
                    for (v, c) in p.iter_mut().zip(center) {
                        *v = c + (*v - c) * k;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackBudget {
    pub eps: f64,
    pub norm: Norm,
    pub pgd_steps: usize,
    /// Defaults to `2.5·eps / pgd_steps` when unset.
    #[serde(default)]
    pub pgd_step_size: Option<f64>,
    pub pgd_restarts: usize,
    /// Points on the normal segment `[-eps, eps] \ {0}`.
    pub normal_points: usize,
    /// Chart grid points inside the in-manifold ball.
    pub in_points: usize,
    #[serde(default)]
    pub seed: u64,
}

impl AttackBudget {
    /// 40 PGD steps, one restart, 100 normal points, 100 in-manifold points.
    pub fn new(eps: f64, norm: Norm) -> Self {
        Self {
            eps,
            norm,
            pgd_steps: 40,
            pgd_step_size: None,
            pgd_restarts: 1,
            normal_points: 100,
            in_points: 100,
            seed: 0,
        }
    }

    /// Defaults with the in-manifold grid sized for the manifold: 100 points
    /// on curves and a 20×20 lattice on surfaces.
    pub fn for_manifold(kind: ManifoldKind, eps: f64, norm: Norm) -> Self {
        let mut b = Self::new(eps, norm);
        b.in_points = if kind.intrinsic_dim() == 1 { 100 } else { 400 };
        b
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        Self { eps, ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn step_size(&self) -> f64 {
        self.pgd_step_size
            .unwrap_or(2.5 * self.eps / self.pgd_steps.max(1) as f64)
    }

    /// Structural checks. A zero radius is allowed as a degenerate budget.
    pub fn validate(&self) -> Result<()> {
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::Budget(format!(
                "eps must be finite and non-negative, got {}",
                self.eps
            )));
        }
        if self.pgd_steps == 0 || self.pgd_restarts == 0 {
            return Err(Error::Budget("PGD needs at least one step and one restart".into()));
        }
        if self.normal_points < 2 || self.in_points < 2 {
            return Err(Error::Budget("grid counts must be at least 2".into()));
        }
        if let Some(s) = self.pgd_step_size {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::Budget("PGD step size must be finite and non-negative".into()));
            }
        }
        Ok(())
    }

    /// [`AttackBudget::validate`] plus `eps < Δ` for the manifold.
    pub fn validate_for(&self, kind: ManifoldKind) -> Result<()> {
        self.validate()?;
        if self.eps >= kind.tubular_radius() {
            return Err(Error::Budget(format!(
                "eps {} must be below the tubular radius {} of {}",
                self.eps,
                kind.tubular_radius(),
                kind.name()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub success: bool,
    pub witness: Vec<f64>,
    pub score: f64,
}

/// Tracks the best candidate: the first flip, else the lowest margin `s·y`.
struct Search<'a, S: ScoreFunction + ?Sized> {
    c: &'a S,
    y: f64,
    best: Option<(Vec<f64>, f64)>,
}

impl<'a, S: ScoreFunction + ?Sized> Search<'a, S> {
    fn new(c: &'a S, y: f64) -> Self {
        Self { c, y, best: None }
    }

    /// Scores `p`; returns true if it flips the label.
    fn offer(&mut self, p: &[f64]) -> bool {
        let s = self.c.score(p);
        let flipped = s * self.y <= 0.0;
        let better = match &self.best {
            None => true,
            Some((_, bs)) => s * self.y < bs * self.y,
        };
        if flipped || better {
            self.best = Some((p.to_vec(), s));
        }
        flipped
    }

    fn finish(self, success: bool) -> AttackOutcome {
        let (witness, score) = self.best.expect("at least one candidate was scored");
        AttackOutcome {
            success,
            witness,
            score,
        }
    }
}

fn random_in_ball(rng: &mut ChaCha8Rng, center: &[f64], eps: f64, norm: Norm) -> Vec<f64> {
    if eps == 0.0 {
        return center.to_vec();
    }
    loop {
        let d: Vec<f64> = center.iter().map(|_| rng.gen_range(-eps..=eps)).collect();
        if norm == Norm::Linf || Norm::L2.length(&d) <= eps {
            return center.iter().zip(&d).map(|(c, v)| c + v).collect();
        }
    }
}

/// Projected gradient ascent on the logistic loss inside the `eps`-ball.
///
/// The clean point is checked first, then each restart starts uniformly in
/// the ball and takes signed (l∞) or normalized (l2) gradient steps, each
/// followed by projection back onto the ball. Returns the first flipping
/// iterate, otherwise the highest-loss iterate seen.
pub fn pgd_attack<S: ScoreFunction + ?Sized>(c: &S, x: &[f64], y: f64, budget: &AttackBudget) -> AttackOutcome {
    let mut search = Search::new(c, y);
    if search.offer(x) {
        return search.finish(true);
    }
    if budget.eps == 0.0 {
        return search.finish(false);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let step = budget.step_size();
    for _ in 0..budget.pgd_restarts.max(1) {
        let mut p = random_in_ball(&mut rng, x, budget.eps, budget.norm);
        if search.offer(&p) {
            return search.finish(true);
        }
        for _ in 0..budget.pgd_steps {
            // ascent direction of log(1 + exp(-y s)) is -y ∇s
            let g = c.input_gradient(&p);
            match budget.norm {
                Norm::Linf => {
                    for (v, gi) in p.iter_mut().zip(&g) {
                        let d = -y * gi;
                        if d > 0.0 {
                            *v += step;
                        } else if d < 0.0 {
                            *v -= step;
                        }
                    }
                }
                Norm::L2 => {
                    let n = Norm::L2.length(&g);
                    if n > 0.0 {
                        for (v, gi) in p.iter_mut().zip(&g) {
                            *v += step * (-y * gi) / n;
                        }
                    }
                }
            }
            budget.norm.project(&mut p, x, budget.eps);
            if search.offer(&p) {
                return search.finish(true);
            }
        }
    }
    search.finish(false)
}

/// Exhaustive lattice search over the closed ball: spacing `eps/per_axis`
/// along each axis, lattice points outside the ball (l2) discarded.
pub fn ball_grid_attack<S: ScoreFunction + ?Sized>(
    c: &S,
    x: &[f64],
    y: f64,
    eps: f64,
    norm: Norm,
    per_axis: usize,
) -> AttackOutcome {
    let mut search = Search::new(c, y);
    if search.offer(x) {
        return search.finish(true);
    }
    if eps == 0.0 {
        return search.finish(false);
    }
    let k = per_axis.max(1) as i64;
    let h = eps / k as f64;
    let dim = x.len();
    let mut idx = vec![-k; dim];
    let mut p = vec![0.0; dim];
    loop {
        let inside = match norm {
            Norm::Linf => true,
            Norm::L2 => idx.iter().map(|&i| i * i).sum::<i64>() <= k * k,
        };
        if inside {
            for ((v, &i), c0) in p.iter_mut().zip(&idx).zip(x) {
                *v = c0 + h * i as f64;
            }
            if search.offer(&p) {
                return search.finish(true);
            }
        }
        // odometer increment
        let mut axis = 0;
        loop {
            if axis == dim {
                return search.finish(false);
            }
            idx[axis] += 1;
            if idx[axis] <= k {
                break;
            }
            idx[axis] = -k;
            axis += 1;
        }
    }
}

/// Offsets `±eps·j/m`, `j = 1..=m`, `m = ⌈k/2⌉`, ordered by magnitude.
pub fn normal_offsets(eps: f64, k: usize) -> Vec<f64> {
    let m = k.div_ceil(2).max(1);
    let mut out = Vec::with_capacity(2 * m);
    for j in 1..=m {
        let t = if j == m { eps } else { eps * j as f64 / m as f64 };
        out.push(t);
        out.push(-t);
    }
    out
}

/// Grid search along each normal direction: `x + t·v` for the offsets of
/// [`normal_offsets`]. The sample itself is excluded.
pub fn normal_attack_grid<S: ScoreFunction + ?Sized>(
    c: &S,
    sample: &LabeledManifoldSample,
    budget: &AttackBudget,
) -> AttackOutcome {
    let mut search = Search::new(c, sample.y);
    let offsets = normal_offsets(budget.eps, budget.normal_points);
    let mut p = sample.x.clone();
    for v in &sample.normals {
        for &t in &offsets {
            for ((pi, xi), vi) in p.iter_mut().zip(&sample.x).zip(v) {
                *pi = xi + t * vi;
            }
            if search.offer(&p) {
                return search.finish(true);
            }
        }
    }
    search.finish(false)
}

/// One uniformly random normal offset `t ∈ [-eps, eps]` along the first
/// normal direction, seeded by `budget.seed`.
pub fn normal_attack_random<S: ScoreFunction + ?Sized>(
    c: &S,
    sample: &LabeledManifoldSample,
    budget: &AttackBudget,
) -> AttackOutcome {
    let t = if budget.eps == 0.0 {
        0.0
    } else {
        ChaCha8Rng::seed_from_u64(budget.seed).gen_range(-budget.eps..=budget.eps)
    };
    let v = &sample.normals[0];
    let p: Vec<f64> = sample.x.iter().zip(v).map(|(x, n)| x + t * n).collect();
    let score = c.score(&p);
    AttackOutcome {
        success: score * sample.y <= 0.0,
        witness: p,
        score,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InManifoldMethod {
    Grid,
    Project,
}

/// Grid search over the in-manifold ball of chord radius `budget.eps`,
/// starting with the sample itself.
pub fn in_manifold_attack_grid<S: ScoreFunction + ?Sized>(
    c: &S,
    kind: ManifoldKind,
    sample: &LabeledManifoldSample,
    budget: &AttackBudget,
) -> Result<AttackOutcome> {
    let ball = kind.in_manifold_ball(&sample.u, budget.eps)?;
    let mut search = Search::new(c, sample.y);
    if search.offer(&sample.x) {
        return Ok(search.finish(true));
    }
    for u in ball.grid(budget.in_points) {
        if search.offer(&kind.embed(&u)) {
            return Ok(search.finish(true));
        }
    }
    Ok(search.finish(false))
}

/// Moves chart point `u` toward `center` until it lies in the ball.
fn shrink_into(kind: ManifoldKind, ball: &ChartBall, center: &[f64], u: &[f64]) -> Vec<f64> {
    match *ball {
        ChartBall::Arc { half_width, .. } => {
            let d = wrap_angle(u[0] - center[0]).clamp(-half_width, half_width);
            vec![center[0] + d]
        }
        ChartBall::Segment { lo, hi } => vec![u[0].clamp(lo, hi)],
        ChartBall::Disc { radius, .. } => {
            let r = kind.chord_distance(u, center);
            if r <= radius {
                u.to_vec()
            } else {
                let k = radius / r;
                vec![center[0] + (u[0] - center[0]) * k, center[1] + (u[1] - center[1]) * k]
            }
        }
    }
}

/// PGD in the ambient ball, projection of the witness onto the manifold,
/// then a geodesic shrink toward the sample if the projection left the
/// in-manifold ball.
pub fn in_manifold_attack_project<S: ScoreFunction + ?Sized>(
    c: &S,
    kind: ManifoldKind,
    sample: &LabeledManifoldSample,
    budget: &AttackBudget,
) -> Result<AttackOutcome> {
    let ball = kind.in_manifold_ball(&sample.u, budget.eps)?;
    let ambient = pgd_attack(c, &sample.x, sample.y, budget);
    let projected = kind.project(&ambient.witness)?;
    let u = shrink_into(kind, &ball, &sample.u, &kind.chart(&projected));
    let witness = kind.embed(&u);
    let score = c.score(&witness);
    Ok(AttackOutcome {
        success: score * sample.y <= 0.0,
        witness,
        score,
    })
}

pub fn in_manifold_attack<S: ScoreFunction + ?Sized>(
    c: &S,
    kind: ManifoldKind,
    sample: &LabeledManifoldSample,
    budget: &AttackBudget,
    method: InManifoldMethod,
) -> Result<AttackOutcome> {
    match method {
        InManifoldMethod::Grid => in_manifold_attack_grid(c, kind, sample, budget),
        InManifoldMethod::Project => in_manifold_attack_project(c, kind, sample, budget),
    }
}

/// How the ambient-ball event is searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmbientMethod {
    Pgd,
    /// [`ball_grid_attack`] with `per_axis` lattice steps per half-axis.
    Exhaustive {
        per_axis: usize,
    },
}

pub fn ambient_attack<S: ScoreFunction + ?Sized>(
    c: &S,
    x: &[f64],
    y: f64,
    budget: &AttackBudget,
    method: AmbientMethod,
) -> AttackOutcome {
    match method {
        AmbientMethod::Pgd => pgd_attack(c, x, y, budget),
        AmbientMethod::Exhaustive { per_axis } => ball_grid_attack(c, x, y, budget.eps, budget.norm, per_axis),
    }
}
