//! The interval family `f_n` on `M = [0, 1] × {0} ⊂ R²`.
//!
//! `[0, 1]` is cut into `A_0, B_1, A_1, …, B_n, A_n` with `|A_i| = ℓ1 =
//! (n−1)/(n(n+1))` and `|B_i| = ℓ2 = 1/n²`. The decision boundary of `f_n`
//! is the graph of `±g_n`, where `g_n = 1` on A-intervals and `ε/2` on
//! B-intervals, and all labels are `+1`. Standard and in-manifold risk are
//! zero, normal risk is `1/n`, yet every point has an ambient witness once
//! the A-intervals are short enough.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::attacks::{ball_grid_attack, Norm, ScoreFunction};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Lattice steps per half-axis of the brute-force ball search (spacing ε/200).
pub const BRUTE_FORCE_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// `A_i`, `0 ≤ i ≤ n`.
    A(usize),
    /// `B_i`, `1 ≤ i ≤ n`.
    B(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TightnessConstruction {
    n: usize,
    eps: f64,
    l1: f64,
    l2: f64,
    delta: f64,
    /// `2n + 2` endpoints `0 = e_0 ≤ … ≤ e_{2n+1} = 1`; interval `k` is
    /// `[e_k, e_{k+1}]`, an A-interval for even `k`.
    bounds: Vec<f64>,
}

impl TightnessConstruction {
    /// Builds the partition with ramp sharpness `eps / 10`.
    pub fn new(n: usize, eps: f64) -> Result<Self> {
        Self::with_delta(n, eps, eps / 10.0)
    }

    pub fn with_delta(n: usize, eps: f64, delta: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::usage("n must be at least 1"));
        }
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::Budget(format!("eps must lie in (0, 1/2), got {eps}")));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::usage("boundary sharpness must be positive"));
        }
        // Positions are k·ℓ1 + j·ℓ2 = (k(n−1)n + j(n+1)) / (n²(n+1)); integer
        // numerators keep each endpoint correctly rounded and the last one 1.
        let nn = n as u128;
        let den = nn * nn * (nn + 1);
        let a_num = (nn - 1) * nn;
        let b_num = nn + 1;
        let bounds = (0..=2 * n + 1)
            .map(|k| {
                let a = k.div_ceil(2) as u128;
                let b = (k / 2) as u128;
                (a * a_num + b * b_num) as f64 / den as f64
            })
            .collect();
        Ok(Self {
            n,
            eps,
            l1: (nn - 1) as f64 / (nn * (nn + 1)) as f64,
            l2: 1.0 / (nn * nn) as f64,
            delta,
            bounds,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn l1(&self) -> f64 {
        self.l1
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn endpoints(&self) -> &[f64] {
        &self.bounds
    }

    /// `(n+1)·ℓ1 + n·ℓ2 − 1` evaluated exactly in integers.
    pub fn partition_identity_residual(&self) -> i128 {
        let n = self.n as i128;
        // (n+1)(n−1)n + n(n+1) − n²(n+1)
        (n + 1) * (n - 1) * n + n * (n + 1) - n * n * (n + 1)
    }

    /// Intervals in left-to-right order with their region tags.
    pub fn intervals(&self) -> Vec<(Region, f64, f64)> {
        (0..=2 * self.n)
            .map(|k| {
                let region = if k % 2 == 0 {
                    Region::A(k / 2)
                } else {
                    Region::B(k.div_ceil(2))
                };
                (region, self.bounds[k], self.bounds[k + 1])
            })
            .collect()
    }

    fn intervals_of(&self, want_b: bool) -> Vec<(f64, f64)> {
        self.intervals()
            .into_iter()
            .filter(|(r, _, _)| matches!(r, Region::B(_)) == want_b)
            .map(|(_, a, b)| (a, b))
            .collect()
    }

    pub fn a_intervals(&self) -> Vec<(f64, f64)> {
        self.intervals_of(false)
    }

    pub fn b_intervals(&self) -> Vec<(f64, f64)> {
        self.intervals_of(true)
    }

    /// Region containing `x`; points outside `[0, 1]` take the nearest
    /// endpoint's region. Shared endpoints belong to the right interval.
    pub fn region(&self, x: f64) -> Region {
        let x = x.clamp(0.0, 1.0);
        let last = 2 * self.n;
        let mut k = self.bounds.partition_point(|&e| e <= x).saturating_sub(1).min(last);
        while k > 0 && self.bounds[k] == self.bounds[k + 1] {
            k -= 1;
        }
        if k % 2 == 0 {
            Region::A(k / 2)
        } else {
            Region::B(k.div_ceil(2))
        }
    }

    /// Boundary height `g_n(x)`.
    pub fn boundary_height(&self, x: f64) -> f64 {
        match self.region(x) {
            Region::A(_) => 1.0,
            Region::B(_) => self.eps / 2.0,
        }
    }

    /// Signed score `clamp((g_n(x) − |t|) / δ, −1, 1)`: positive inside the
    /// band `|t| < g_n(x)`, zero on its edge, negative outside.
    pub fn score_at(&self, x: f64, t: f64) -> f64 {
        ((self.boundary_height(x) - t.abs()) / self.delta).clamp(-1.0, 1.0)
    }

    /// Exact risks under the uniform distribution on `[0, 1]` with `y ≡ +1`.
    pub fn analytic_risks(&self) -> AnalyticRisks {
        let nnr_gap = self.uncovered_a_length(2.0 * self.eps);
        let adv_gap = self.uncovered_a_length(3f64.sqrt() * self.eps / 2.0);
        let a_total = 1.0 - 1.0 / self.n as f64;
        AnalyticRisks {
            r_std: 0.0,
            r_in: 0.0,
            r_nor: 1.0 / self.n as f64,
            nnr: (a_total - nnr_gap).max(0.0),
            r_adv: 1.0 - adv_gap,
        }
    }

    /// Length of A-points farther than `reach` from every B-interval. Only
    /// the adjacent B-intervals matter: end intervals have one neighbour,
    /// interior ones two.
    fn uncovered_a_length(&self, reach: f64) -> f64 {
        self.intervals()
            .iter()
            .filter_map(|&(r, a, b)| match r {
                Region::A(i) => {
                    let sides = if self.n == 0 {
                        0.0
                    } else if i == 0 || i == self.n {
                        1.0
                    } else {
                        2.0
                    };
                    Some(((b - a) - sides * reach).max(0.0))
                }
                Region::B(_) => None,
            })
            .sum()
    }

    /// Number of places where a reach boundary falls strictly inside an
    /// A-interval; each can shift a lattice estimate by about one cell.
    fn partial_boundaries(&self, reach: f64) -> usize {
        self.intervals()
            .iter()
            .map(|&(r, a, b)| match r {
                Region::A(i) => {
                    let len = b - a;
                    let sides = if i == 0 || i == self.n { 1 } else { 2 };
                    if len > sides as f64 * reach && len > 0.0 {
                        sides
                    } else {
                        0
                    }
                }
                Region::B(_) => 0,
            })
            .sum()
    }

    /// Fraction of `m` midpoint probes in `[0, 1]` with a sign flip found by
    /// a lattice search (spacing ε/200) over the closed l2 ball of radius ε.
    pub fn brute_force_adv_check(&self, m: usize, exec: Exec) -> Result<f64> {
        if m < 100 {
            return Err(Error::usage("brute-force check needs at least 100 probes"));
        }
        let hits = exec.count(m, |i| {
            let x = (i as f64 + 0.5) / m as f64;
            ball_grid_attack(self, &[x, 0.0], 1.0, self.eps, Norm::L2, BRUTE_FORCE_STEPS).success
        });
        Ok(hits as f64 / m as f64)
    }

    /// Allowed gap between [`Self::brute_force_adv_check`] and the analytic
    /// adversarial risk: one probe spacing, plus one probe spacing and one
    /// lattice cell per partially covered A-interval edge.
    pub fn brute_force_tolerance(&self, m: usize) -> f64 {
        let edges = self.partial_boundaries(3f64.sqrt() * self.eps / 2.0) as f64;
        let cell = self.eps / BRUTE_FORCE_STEPS as f64;
        (1.0 + edges) / m as f64 + edges * cell
    }
}

impl ScoreFunction for TightnessConstruction {
    fn input_dim(&self) -> usize {
        2
    }

    fn score(&self, p: &[f64]) -> f64 {
        self.score_at(p[0], p[1])
    }

    fn input_gradient(&self, p: &[f64]) -> Vec<f64> {
        let raw = (self.boundary_height(p[0]) - p[1].abs()) / self.delta;
        let dt = if raw.abs() < 1.0 {
            if p[1] > 0.0 {
                -1.0 / self.delta
            } else if p[1] < 0.0 {
                1.0 / self.delta
            } else {
                0.0
            }
        } else {
            0.0
        };
        vec![0.0, dt]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticRisks {
    pub r_std: f64,
    pub r_in: f64,
    pub r_nor: f64,
    pub nnr: f64,
    pub r_adv: f64,
}

/// One row of the tightness CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightnessRow {
    pub n: usize,
    pub eps: f64,
    pub l1: f64,
    pub l2: f64,
    pub r_std: f64,
    pub r_in: f64,
    pub r_nor: f64,
    pub nnr: f64,
    pub r_adv_analytic: f64,
    pub r_adv_bruteforce: f64,
}

impl TightnessRow {
    pub fn compute(n: usize, eps: f64, probes: usize, exec: Exec) -> Result<(Self, TightnessConstruction)> {
        let tc = TightnessConstruction::new(n, eps)?;
        let a = tc.analytic_risks();
        let brute = tc.brute_force_adv_check(probes, exec)?;
        Ok((
            Self {
                n,
                eps,
                l1: tc.l1,
                l2: tc.l2,
                r_std: a.r_std,
                r_in: a.r_in,
                r_nor: a.r_nor,
                nnr: a.nnr,
                r_adv_analytic: a.r_adv,
                r_adv_bruteforce: brute,
            },
            tc,
        ))
    }

    /// Violated construction invariants, empty when all hold.
    pub fn violations(&self, tc: &TightnessConstruction, probes: usize) -> Vec<String> {
        let mut out = Vec::new();
        if tc.partition_identity_residual() != 0 {
            out.push(format!("n={}: (n+1)l1 + n l2 != 1", self.n));
        }
        let tiled = *tc.bounds.first().unwrap() == 0.0 && *tc.bounds.last().unwrap() == 1.0;
        if !tiled || tc.bounds.windows(2).any(|w| w[1] < w[0]) {
            out.push(format!("n={}: partition does not tile [0,1] in order", self.n));
        }
        if self.r_nor != 1.0 / self.n as f64 {
            out.push(format!("n={}: r_nor {} != 1/n", self.n, self.r_nor));
        }
        if self.r_std != 0.0 || self.r_in != 0.0 {
            out.push(format!("n={}: standard or in-manifold risk is not zero", self.n));
        }
        let tol = tc.brute_force_tolerance(probes);
        if (self.r_adv_bruteforce - self.r_adv_analytic).abs() > tol {
            out.push(format!(
                "n={}: brute-force r_adv {} differs from analytic {} by more than {tol}",
                self.n, self.r_adv_bruteforce, self.r_adv_analytic
            ));
        }
        out
    }
}

pub const TIGHTNESS_HEADER: [&str; 10] = [
    "n",
    "eps",
    "l1",
    "l2",
    "r_std",
    "r_in",
    "r_nor",
    "nnr",
    "r_adv_analytic",
    "r_adv_bruteforce",
];

pub fn write_tightness_csv<W: Write>(rows: &[TightnessRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(TIGHTNESS_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<tightness csv>", e))?;
    Ok(())
}

pub fn read_tightness_csv<R: Read>(input: R) -> Result<Vec<TightnessRow>> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(TIGHTNESS_HEADER) {
        return Err(Error::Format("unexpected tightness CSV header".into()));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
