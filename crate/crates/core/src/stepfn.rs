//! Step functions, cumulative-sum diagrams, greatest convex minorants and
//! weighted isotonic regression (pool adjacent violators).
//!
//! Every estimator component in this crate is a right-continuous
//! nondecreasing step function, and every estimator computation reduces to
//! slopes of the greatest convex minorant of some diagram of points. This
//! module owns those primitives.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Absolute tolerance used when verifying "touch" relations between a
/// diagram and its minorant (double-precision hull arithmetic on cumulative
/// sums of magnitude up to the sample size).
pub const TOUCH_ABS_TOL: f64 = 1e-12;

/// A right-continuous piecewise-constant function.
///
/// The function takes the value `left_value` on `(-inf, knots[0])` and
/// `levels[i]` on `[knots[i], knots[i+1])`. A `StepFunction` with no knots
/// is the constant `left_value`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    knots: Vec<f64>,
    levels: Vec<f64>,
    left_value: f64,
}

impl StepFunction {
    /// Build a step function that is `0` before the first knot.
    pub fn new(knots: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        Self::with_left_value(knots, levels, 0.0)
    }

    /// Build a step function with an explicit value left of the first knot.
    pub fn with_left_value(knots: Vec<f64>, levels: Vec<f64>, left_value: f64) -> Result<Self> {
        if knots.len() != levels.len() {
            return Err(Error::invalid("knots and levels must have equal length"));
        }
        if knots.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("knots must be finite"));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("knots must be strictly increasing"));
        }
        Ok(Self {
            knots,
            levels,
            left_value,
        })
    }

    /// The constant function `value`.
    pub fn constant(value: f64) -> Self {
        Self {
            knots: Vec::new(),
            levels: Vec::new(),
            left_value: value,
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn left_value(&self) -> f64 {
        self.left_value
    }

    /// Right-continuous evaluation: the level of the largest knot `<= t`.
    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.knots.partition_point(|&k| k <= t);
        if idx == 0 {
            self.left_value
        } else {
            self.levels[idx - 1]
        }
    }

    /// Left limit at `t`: the level of the largest knot `< t`.
    pub fn left_limit(&self, t: f64) -> f64 {
        let idx = self.knots.partition_point(|&k| k < t);
        if idx == 0 {
            self.left_value
        } else {
            self.levels[idx - 1]
        }
    }

    /// Value as `t -> inf`.
    pub fn final_value(&self) -> f64 {
        self.levels.last().copied().unwrap_or(self.left_value)
    }

    /// `true` when the levels are nondecreasing within `tol` and no level
    /// drops below `left_value`.
    pub fn is_nondecreasing(&self, tol: f64) -> bool {
        let mut prev = self.left_value;
        for &l in &self.levels {
            if l < prev - tol {
                return false;
            }
            prev = l;
        }
        true
    }

    /// Knots where the function increases by more than `tol`, with the jump
    /// size.
    pub fn jumps(&self, tol: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut prev = self.left_value;
        for (&k, &l) in self.knots.iter().zip(&self.levels) {
            if l - prev > tol {
                out.push((k, l - prev));
            }
            prev = l;
        }
        out
    }

    /// Pointwise scaling by `1/c`.
    pub fn divide_by(&self, c: f64) -> StepFunction {
        StepFunction {
            knots: self.knots.clone(),
            levels: self.levels.iter().map(|l| l / c).collect(),
            left_value: self.left_value / c,
        }
    }
}

/// A diagram of points with strictly increasing abscissae; the carrier for
/// cumulative-sum diagrams and sampled paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagram {
    points: Vec<(f64, f64)>,
}

impl Diagram {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::invalid(
                "diagram x values must be strictly increasing",
            ));
        }
        Ok(Self { points })
    }

    pub fn from_xy(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::invalid("diagram xs and ys must have equal length"));
        }
        Self::new(xs.iter().copied().zip(ys.iter().copied()).collect())
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A continuous piecewise-linear function given by its vertices.
///
/// Outputs of [`convex_minorant`] are convex: the slopes of consecutive
/// segments are nondecreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    vertices: Vec<(f64, f64)>,
}

impl PiecewiseLinear {
    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.vertices[0].0, self.vertices[self.vertices.len() - 1].0)
    }

    /// Linear interpolation; outside the domain the end segments are
    /// extended.
    pub fn eval(&self, x: f64) -> f64 {
        let v = &self.vertices;
        if v.len() == 1 {
            return v[0].1;
        }
        // Segment index: the last vertex with abscissa <= x, clamped so that
        // extrapolation uses the first or last segment.
        let idx = v.partition_point(|p| p.0 <= x);
        let i = idx.clamp(1, v.len() - 1);
        let (x0, y0) = v[i - 1];
        let (x1, y1) = v[i];
        y0 + (y1 - y0) / (x1 - x0) * (x - x0)
    }

    /// Right derivative at `x`.
    ///
    /// Defined for `x` in `[first vertex, last vertex]`; at the last vertex
    /// the final segment slope is returned, matching the right-continuity
    /// convention used for the slope processes.
    pub fn right_slope(&self, x: f64) -> Result<f64> {
        let v = &self.vertices;
        let (lo, hi) = self.domain();
        if !(lo..=hi).contains(&x) {
            return Err(Error::OutOfDomain(alloc::format!(
                "query {x} outside [{lo}, {hi}]"
            )));
        }
        if v.len() == 1 {
            return Err(Error::OutOfDomain(
                "single-vertex function has no slope".to_string(),
            ));
        }
        let idx = v.partition_point(|p| p.0 <= x);
        let i = idx.clamp(1, v.len() - 1);
        let (x0, y0) = v[i - 1];
        let (x1, y1) = v[i];
        Ok((y1 - y0) / (x1 - x0))
    }

    /// Slopes of the segments, one per vertex pair.
    pub fn segment_slopes(&self) -> Vec<f64> {
        self.vertices
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
            .collect()
    }
}

/// Greatest convex minorant of a diagram: the largest convex function that
/// is pointwise bounded by the piecewise-linear interpolant of the points.
///
/// The result's vertices are a subsequence of the diagram's points (the
/// lower convex hull), found by a single monotone-chain sweep. Collinear
/// interior points are dropped.
pub fn convex_minorant(d: &Diagram) -> Result<PiecewiseLinear> {
    let pts = d.points();
    if pts.len() < 2 {
        return Err(Error::invalid(alloc::format!(
            "convex minorant needs at least 2 points, got {}",
            pts.len()
        )));
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for &p in pts {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // Pop b when it lies on or above the chord from a to p.
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    Ok(PiecewiseLinear { vertices: hull })
}

/// Right derivatives of a piecewise-linear function at each query point.
pub fn right_slopes(p: &PiecewiseLinear, at: &[f64]) -> Result<Vec<f64>> {
    at.iter().map(|&x| p.right_slope(x)).collect()
}

/// Cumulative-sum diagram of weighted values: the origin followed by the
/// points `(sum of w, sum of w*y)`.
pub fn cusum_diagram(y: &[f64], w: &[f64]) -> Result<Diagram> {
    if y.len() != w.len() {
        return Err(Error::invalid("cusum inputs must have equal length"));
    }
    let mut pts = Vec::with_capacity(y.len() + 1);
    pts.push((0.0, 0.0));
    let (mut sw, mut swy) = (0.0, 0.0);
    for (&yi, &wi) in y.iter().zip(w) {
        sw += wi;
        swy += wi * yi;
        pts.push((sw, swy));
    }
    Diagram::new(pts)
}

/// Weighted least-squares projection of `y` onto nondecreasing sequences
/// (pool adjacent violators).
///
/// Equals the right slopes of the convex minorant of the cumulative-sum
/// diagram of `(y, w)`.
pub fn pava(y: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    if y.is_empty() {
        return Err(Error::invalid("pava input must be non-empty"));
    }
    if y.len() != w.len() {
        return Err(Error::invalid("pava inputs must have equal length"));
    }
    if w.iter().any(|&wi| !wi.is_finite() || wi <= 0.0) {
        return Err(Error::invalid("pava weights must be positive"));
    }

    // Blocks of pooled values: (weighted mean, total weight, count).
    let mut mean: Vec<f64> = Vec::with_capacity(y.len());
    let mut weight: Vec<f64> = Vec::with_capacity(y.len());
    let mut count: Vec<usize> = Vec::with_capacity(y.len());
    for (&yi, &wi) in y.iter().zip(w) {
        mean.push(yi);
        weight.push(wi);
        count.push(1);
        let mut j = mean.len() - 1;
        while j > 0 && mean[j - 1] > mean[j] {
            let wt = weight[j - 1] + weight[j];
            mean[j - 1] = (weight[j - 1] * mean[j - 1] + weight[j] * mean[j]) / wt;
            weight[j - 1] = wt;
            count[j - 1] += count[j];
            mean.pop();
            weight.pop();
            count.pop();
            j -= 1;
        }
    }

    let mut out = Vec::with_capacity(y.len());
    for (m, c) in mean.iter().zip(&count) {
        for _ in 0..*c {
            out.push(*m);
        }
    }
    Ok(out)
}
