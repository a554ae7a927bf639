//! Exact measures of unions: intervals on a line, arcs on a circle, and
//! axis-aligned rectangles in the plane.

use std::f64::consts::PI;

/// Length of the union of closed intervals `[lo, hi]`; empty ones are ignored.
pub fn interval_union_length(intervals: &[(f64, f64)]) -> f64 {
    merge_intervals(intervals).iter().map(|(a, b)| b - a).sum()
}

/// Sorted, disjoint union of the given intervals.
pub fn merge_intervals(intervals: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = intervals.iter().copied().filter(|(a, b)| b > a).collect();
    v.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for (a, b) in v {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

/// Length of `a ∩ union(b)` for interval lists `a` and `b`.
pub fn intersection_length(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let (a, b) = (merge_intervals(a), merge_intervals(b));
    let mut total = 0.0;
    for &(a0, a1) in &a {
        for &(b0, b1) in &b {
            let (lo, hi) = (a0.max(b0), a1.min(b1));
            if hi > lo {
                total += hi - lo;
            }
        }
    }
    total
}

/// Total angle covered by arcs `center ± half_width` on the circle, in `[0, 2π]`.
pub fn arc_union_length(arcs: &[(f64, f64)]) -> f64 {
    let two_pi = 2.0 * PI;
    let mut pieces = Vec::with_capacity(arcs.len() * 2);
    for &(center, half) in arcs {
        if half <= 0.0 {
            continue;
        }
        if half >= PI {
            return two_pi;
        }
        let lo = (center - half).rem_euclid(two_pi);
        let hi = lo + 2.0 * half;
        if hi <= two_pi {
            pieces.push((lo, hi));
        } else {
            pieces.push((lo, two_pi));
            pieces.push((0.0, hi - two_pi));
        }
    }
    interval_union_length(&pieces).min(two_pi)
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn clip(&self, bounds: &Rect) -> Rect {
        Rect {
            x0: self.x0.max(bounds.x0),
            x1: self.x1.min(bounds.x1),
            y0: self.y0.max(bounds.y0),
            y1: self.y1.min(bounds.y1),
        }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }
}

/// Area of a union of rectangles by sweeping over x: between consecutive
/// edges the covered height is the union of the active y-intervals.
pub fn rect_union_area(rects: &[Rect]) -> f64 {
    let rects: Vec<Rect> = rects.iter().copied().filter(|r| r.area() > 0.0).collect();
    let mut xs: Vec<f64> = rects.iter().flat_map(|r| [r.x0, r.x1]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut area = 0.0;
    let mut active = Vec::new();
    for w in xs.windows(2) {
        let (a, b) = (w[0], w[1]);
        active.clear();
        active.extend(rects.iter().filter(|r| r.x0 <= a && r.x1 >= b).map(|r| (r.y0, r.y1)));
        area += (b - a) * interval_union_length(&active);
    }
    area
}
