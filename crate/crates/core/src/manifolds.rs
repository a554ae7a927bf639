//! Synthetic data manifolds with exact charts and normal spaces.
//!
//! | kind         | manifold                      | d | D | Δ   | chart `u`     |
//! |--------------|-------------------------------|---|---|-----|---------------|
//! | `circle2d`   | unit circle in R²             | 1 | 2 | 1   | angle         |
//! | `plane3d`    | square `[-π, π]²` at `x3 = 0` | 2 | 3 | ∞   | `(x1, x2)`    |
//! | `interval1d` | segment `[0, 1] × {0}` in R²  | 1 | 2 | ∞   | `x1`          |

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for accepting a point as lying on a manifold.
pub const ON_MANIFOLD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifoldKind {
    Circle2d,
    Plane3d,
    Interval1d,
}

impl ManifoldKind {
    pub fn name(self) -> &'static str {
        match self {
            ManifoldKind::Circle2d => "circle2d",
            ManifoldKind::Plane3d => "plane3d",
            ManifoldKind::Interval1d => "interval1d",
        }
    }

    pub fn ambient_dim(self) -> usize {
        match self {
            ManifoldKind::Circle2d | ManifoldKind::Interval1d => 2,
            ManifoldKind::Plane3d => 3,
        }
    }

    pub fn intrinsic_dim(self) -> usize {
        match self {
            ManifoldKind::Circle2d | ManifoldKind::Interval1d => 1,
            ManifoldKind::Plane3d => 2,
        }
    }

    /// Tubular-neighborhood radius Δ.
    pub fn tubular_radius(self) -> f64 {
        match self {
            ManifoldKind::Circle2d => 1.0,
            ManifoldKind::Plane3d | ManifoldKind::Interval1d => f64::INFINITY,
        }
    }

    /// Total length or area of the manifold.
    pub fn volume(self) -> f64 {
        match self {
            ManifoldKind::Circle2d => 2.0 * PI,
            ManifoldKind::Plane3d => 4.0 * PI * PI,
            ManifoldKind::Interval1d => 1.0,
        }
    }

    /// Distance from `x` to the manifold along the normal direction, ignoring
    /// chart-domain bounds.
    pub fn normal_residual(self, x: &[f64]) -> f64 {
        match self {
            ManifoldKind::Circle2d => ((x[0] * x[0] + x[1] * x[1]).sqrt() - 1.0).abs(),
            ManifoldKind::Plane3d => x[2].abs(),
            ManifoldKind::Interval1d => x[1].abs(),
        }
    }

    fn check_point(self, x: &[f64]) -> Result<()> {
        if x.len() != self.ambient_dim() {
            return Err(Error::InputShape {
                expected: self.ambient_dim(),
                got: x.len(),
            });
        }
        let in_domain = match self {
            ManifoldKind::Circle2d => true,
            ManifoldKind::Plane3d => x[0].abs() <= PI + ON_MANIFOLD_TOL && x[1].abs() <= PI + ON_MANIFOLD_TOL,
            ManifoldKind::Interval1d => x[0] >= -ON_MANIFOLD_TOL && x[0] <= 1.0 + ON_MANIFOLD_TOL,
        };
        // a NaN residual fails the comparison and is rejected too
        let near = self.normal_residual(x) <= ON_MANIFOLD_TOL;
        if !in_domain || !near {
            return Err(Error::Geometry(format!("{x:?} is not on the {} manifold", self.name())));
        }
        Ok(())
    }

    /// Ambient point for chart coordinate `u`.
    pub fn embed(self, u: &[f64]) -> Vec<f64> {
        match self {
            ManifoldKind::Circle2d => vec![u[0].cos(), u[0].sin()],
            ManifoldKind::Plane3d => vec![u[0], u[1], 0.0],
            ManifoldKind::Interval1d => vec![u[0], 0.0],
        }
    }

    /// Chart coordinate of an on-manifold point (angle in `(-π, π]` for the circle).
    pub fn chart(self, x: &[f64]) -> Vec<f64> {
        match self {
            ManifoldKind::Circle2d => vec![x[1].atan2(x[0])],
            ManifoldKind::Plane3d => vec![x[0], x[1]],
            ManifoldKind::Interval1d => vec![x[0]],
        }
    }

    /// Orthonormal basis of the normal space at `x`.
    pub fn normal_basis(self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_point(x)?;
        Ok(self.normals_unchecked(x))
    }

    fn normals_unchecked(self, x: &[f64]) -> Vec<Vec<f64>> {
        match self {
            ManifoldKind::Circle2d => {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                vec![vec![x[0] / r, x[1] / r]]
            }
            ManifoldKind::Plane3d => vec![vec![0.0, 0.0, 1.0]],
            ManifoldKind::Interval1d => vec![vec![0.0, 1.0]],
        }
    }

    /// Nearest manifold point to `z`.
    pub fn project(self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.ambient_dim() {
            return Err(Error::InputShape {
                expected: self.ambient_dim(),
                got: z.len(),
            });
        }
        match self {
            ManifoldKind::Circle2d => {
                let r = (z[0] * z[0] + z[1] * z[1]).sqrt();
                if r == 0.0 || !r.is_finite() {
                    return Err(Error::ProjectionUndefined(z.to_vec()));
                }
                Ok(vec![z[0] / r, z[1] / r])
            }
            ManifoldKind::Plane3d => Ok(vec![z[0].clamp(-PI, PI), z[1].clamp(-PI, PI), 0.0]),
            ManifoldKind::Interval1d => Ok(vec![z[0].clamp(0.0, 1.0), 0.0]),
        }
    }

    /// Ambient (chord) distance between two chart coordinates.
    pub fn chord_distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            ManifoldKind::Circle2d => 2.0 * (wrap_angle(a[0] - b[0]).abs() / 2.0).sin(),
            ManifoldKind::Plane3d => ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt(),
            ManifoldKind::Interval1d => (a[0] - b[0]).abs(),
        }
    }

    /// Chart region of the in-manifold ball `{x' ∈ M : ‖x − x'‖ ≤ eps}` around `u`.
    pub fn in_manifold_ball(self, u: &[f64], eps: f64) -> Result<ChartBall> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Budget(format!("in-manifold radius must be positive, got {eps}")));
        }
        match self {
            ManifoldKind::Circle2d => {
                if eps > 2.0 {
                    return Err(Error::Budget(format!("chord radius {eps} exceeds the circle diameter")));
                }
                Ok(ChartBall::Arc {
                    center: u[0],
                    half_width: 2.0 * (eps / 2.0).asin(),
                })
            }
            ManifoldKind::Plane3d => Ok(ChartBall::Disc {
                center: [u[0], u[1]],
                radius: eps,
            }),
            ManifoldKind::Interval1d => Ok(ChartBall::Segment {
                lo: (u[0] - eps).max(0.0),
                hi: (u[0] + eps).min(1.0),
            }),
        }
    }
}

/// Maps an angle difference to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// In-manifold ball expressed in chart coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChartBall {
    /// Angles `center ± half_width` on the circle.
    Arc { center: f64, half_width: f64 },
    /// Euclidean disc in the plane chart, clipped to `[-π, π]²`.
    Disc { center: [f64; 2], radius: f64 },
    /// Sub-segment of `[0, 1]`.
    Segment { lo: f64, hi: f64 },
}

impl ChartBall {
    /// Chart grid over the ball: `k` evenly spaced points in 1-D, a
    /// `round(√k)`-per-side square lattice in 2-D with points outside the
    /// disc or the chart domain discarded.
    pub fn grid(&self, k: usize) -> Vec<Vec<f64>> {
        let k = k.max(2);
        match *self {
            ChartBall::Arc { center, half_width } => linspace(center - half_width, center + half_width, k)
                .map(|a| vec![a])
                .collect(),
            ChartBall::Segment { lo, hi } => linspace(lo, hi, k).map(|a| vec![a]).collect(),
            ChartBall::Disc { center, radius } => {
                let side = ((k as f64).sqrt().round() as usize).max(2);
                let xs: Vec<f64> = linspace(center[0] - radius, center[0] + radius, side).collect();
                let ys: Vec<f64> = linspace(center[1] - radius, center[1] + radius, side).collect();
                let mut out = Vec::with_capacity(side * side);
                for &a in &xs {
                    for &b in &ys {
                        let p = [a, b];
                        if self.contains(&p) {
                            out.push(p.to_vec());
                        }
                    }
                }
                out
            }
        }
    }

    /// Whether chart point `p` lies in the ball (with 1e-12 slack).
    pub fn contains(&self, p: &[f64]) -> bool {
        const SLACK: f64 = 1e-12;
        match *self {
            ChartBall::Arc { center, half_width } => wrap_angle(p[0] - center).abs() <= half_width + SLACK,
            ChartBall::Segment { lo, hi } => p[0] >= lo - SLACK && p[0] <= hi + SLACK,
            ChartBall::Disc { center, radius } => {
                let d2 = (p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2);
                d2 <= (radius + SLACK).powi(2) && p[0].abs() <= PI + SLACK && p[1].abs() <= PI + SLACK
            }
        }
    }
}

/// `k ≥ 2` evenly spaced values including both endpoints.
pub(crate) fn linspace(lo: f64, hi: f64, k: usize) -> impl Iterator<Item = f64> {
    let step = (hi - lo) / (k - 1) as f64;
    (0..k).map(move |i| if i + 1 == k { hi } else { lo + step * i as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// `y = 2·𝟙(x1 > 0) − 1`
    CircleSingle,
    /// `y = 2·𝟙(x1·x2 > 0) − 1`
    CircleDouble,
    /// `y = 2·𝟙(x1 > sin x2) − 1`
    PlaneSingle,
    /// `y = 2·𝟙((x1 − sin x2)·x2 > 0) − 1`
    PlaneDouble,
    /// `y ≡ +1`
    ConstantPlusOne,
}

impl LabelRule {
    pub fn name(self) -> &'static str {
        match self {
            LabelRule::CircleSingle => "circle_single",
            LabelRule::CircleDouble => "circle_double",
            LabelRule::PlaneSingle => "plane_single",
            LabelRule::PlaneDouble => "plane_double",
            LabelRule::ConstantPlusOne => "constant_plus_one",
        }
    }

    /// Label of an ambient point. Points exactly on a decision curve get −1.
    pub fn label(self, x: &[f64]) -> f64 {
        let positive = match self {
            LabelRule::CircleSingle => x[0] > 0.0,
            LabelRule::CircleDouble => x[0] * x[1] > 0.0,
            LabelRule::PlaneSingle => x[0] > x[1].sin(),
            LabelRule::PlaneDouble => (x[0] - x[1].sin()) * x[1] > 0.0,
            LabelRule::ConstantPlusOne => true,
        };
        if positive {
            1.0
        } else {
            -1.0
        }
    }

    pub fn supports(self, kind: ManifoldKind) -> bool {
        match self {
            LabelRule::CircleSingle | LabelRule::CircleDouble => kind == ManifoldKind::Circle2d,
            LabelRule::PlaneSingle | LabelRule::PlaneDouble => kind == ManifoldKind::Plane3d,
            LabelRule::ConstantPlusOne => true,
        }
    }
}

/// A labeled on-manifold point with its chart coordinate and normal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledManifoldSample {
    pub x: Vec<f64>,
    pub y: f64,
    pub u: Vec<f64>,
    pub normals: Vec<Vec<f64>>,
}

impl LabeledManifoldSample {
    /// Builds a sample from a chart coordinate, labelling it with `rule`.
    pub fn from_chart(kind: ManifoldKind, rule: LabelRule, u: &[f64]) -> Self {
        let x = kind.embed(u);
        let y = rule.label(&x);
        let normals = kind.normals_unchecked(&x);
        Self {
            x,
            y,
            u: u.to_vec(),
            normals,
        }
    }

    /// Builds a sample from an on-manifold ambient point and a given label.
    pub fn from_point(kind: ManifoldKind, x: &[f64], y: f64) -> Result<Self> {
        let normals = kind.normal_basis(x)?;
        Ok(Self {
            x: x.to_vec(),
            y,
            u: kind.chart(x),
            normals,
        })
    }
}

/// Draws `n` i.i.d. uniform samples from the manifold, labelled by `rule`.
pub fn sample_dataset(kind: ManifoldKind, rule: LabelRule, n: usize, seed: u64) -> Result<Vec<LabeledManifoldSample>> {
    if n == 0 {
        return Err(Error::usage("dataset size must be at least 1"));
    }
    if !rule.supports(kind) {
        return Err(Error::usage(format!(
            "label rule {} does not apply to {}",
            rule.name(),
            kind.name()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let u = match kind {
                ManifoldKind::Circle2d => vec![rng.gen_range(-PI..PI)],
                ManifoldKind::Plane3d => vec![rng.gen_range(-PI..=PI), rng.gen_range(-PI..=PI)],
                ManifoldKind::Interval1d => vec![rng.gen_range(0.0..=1.0)],
            };
            LabeledManifoldSample::from_chart(kind, rule, &u)
        })
        .collect())
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the dataset CSV `x0,…,x{D-1},y,u0,…,u{d-1}` with 17 significant digits.
pub fn write_dataset_csv<W: Write>(kind: ManifoldKind, samples: &[LabeledManifoldSample], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = (0..kind.ambient_dim())
        .map(|i| format!("x{i}"))
        .chain(std::iter::once("y".to_string()))
        .chain((0..kind.intrinsic_dim()).map(|i| format!("u{i}")))
        .collect();
    w.write_record(&header)?;
    for s in samples {
        let row: Vec<String> =
            s.x.iter()
                .map(|&v| fmt17(v))
                .chain(std::iter::once(format!("{}", s.y as i32)))
                .chain(s.u.iter().map(|&v| fmt17(v)))
                .collect();
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<dataset csv>", e))?;
    Ok(())
}

/// Reads a dataset CSV written by [`write_dataset_csv`], recomputing normals.
pub fn read_dataset_csv<R: Read>(kind: ManifoldKind, input: R) -> Result<Vec<LabeledManifoldSample>> {
    let (dd, d) = (kind.ambient_dim(), kind.intrinsic_dim());
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.len() != dd + 1 + d || &header[dd] != "y" {
        return Err(Error::Format(format!(
            "dataset header {:?} does not match {}",
            header.iter().collect::<Vec<_>>(),
            kind.name()
        )));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("{f:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != dd + 1 + d {
            return Err(Error::Format("dataset row has the wrong number of fields".into()));
        }
        let y = vals[dd];
        if y != 1.0 && y != -1.0 {
            return Err(Error::Format(format!("label {y} is not -1 or +1")));
        }
        let mut s = LabeledManifoldSample::from_point(kind, &vals[..dd], y)?;
        s.u = vals[dd + 1..].to_vec();
        out.push(s);
    }
    Ok(out)
}
