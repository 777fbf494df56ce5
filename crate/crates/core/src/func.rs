//! One-dimensional piecewise functions used for initial data, weights and
//! desired outflows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right-continuous piecewise-constant function.
///
/// `values[0]` holds on `(-inf, knots[0])`, `values[i]` on
/// `[knots[i-1], knots[i])` and the last value on `[knots[last], +inf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFn {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl StepFn {
    pub fn constant(value: f64) -> Self {
        Self {
            knots: Vec::new(),
            values: vec![value],
        }
    }

    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != knots.len() + 1 {
            return Err(Error::Config(format!(
                "step function needs {} values for {} knots, got {}",
                knots.len() + 1,
                knots.len(),
                values.len()
            )));
        }
        if knots.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("step function has non-finite entries".into()));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "step function knots must be strictly increasing".into(),
            ));
        }
        Ok(Self { knots, values })
    }

    /// Builds a step function from sampled breakpoints, dropping knots that
    /// do not change the value.
    pub(crate) fn from_samples(first: f64, samples: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut knots = Vec::new();
        let mut values = vec![first];
        for (t, v) in samples {
            if v != *values.last().unwrap() {
                if let Some(&k) = knots.last() {
                    if t <= k {
                        *values.last_mut().unwrap() = v;
                        continue;
                    }
                }
                knots.push(t);
                values.push(v);
            }
        }
        // collapse consecutive equal values created by overwrites
        let mut out = Self {
            knots: Vec::with_capacity(knots.len()),
            values: vec![values[0]],
        };
        for (k, v) in knots.into_iter().zip(values.into_iter().skip(1)) {
            if v != *out.values.last().unwrap() {
                out.knots.push(k);
                out.values.push(v);
            }
        }
        out
    }

    /// Appends a breakpoint at `knot >= last knot`; a knot equal to the last
    /// one overwrites its value.
    pub(crate) fn push(&mut self, knot: f64, value: f64) {
        if let Some(&last) = self.knots.last() {
            if knot <= last {
                *self.values.last_mut().unwrap() = value;
                if self.values[self.values.len() - 2] == value {
                    self.knots.pop();
                    self.values.pop();
                }
                return;
            }
        }
        if *self.values.last().unwrap() != value {
            self.knots.push(knot);
            self.values.push(value);
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at `x` (right limit at knots).
    pub fn value(&self, x: f64) -> f64 {
        self.values[self.knots.partition_point(|k| *k <= x)]
    }

    /// Left limit at `x`.
    pub fn value_left(&self, x: f64) -> f64 {
        self.values[self.knots.partition_point(|k| *k < x)]
    }

    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Total variation on the whole real line.
    pub fn total_variation(&self) -> f64 {
        self.values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }

    /// Knots lying strictly inside `(a, b)`.
    pub fn knots_in(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        let lo = self.knots.partition_point(|k| *k <= a);
        let hi = self.knots.partition_point(|k| *k < b);
        self.knots[lo..hi.max(lo)].iter().copied()
    }

    /// Exact integral over `[a, b]`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut total = 0.0;
        let mut left = a;
        for k in self.knots_in(a, b) {
            total += self.value(left) * (k - left);
            left = k;
        }
        total + self.value(left) * (b - left)
    }

    /// Exact L1 distance to `other` over `[a, b]`.
    pub fn l1_distance(&self, other: &StepFn, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut cuts: Vec<f64> = self.knots_in(a, b).chain(other.knots_in(a, b)).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut total = 0.0;
        let mut left = a;
        for k in cuts.into_iter().chain(std::iter::once(b)) {
            total += (self.value(left) - other.value(left)).abs() * (k - left);
            left = k;
        }
        total
    }

    pub fn scaled(&self, factor: f64) -> StepFn {
        StepFn {
            knots: self.knots.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Continuous piecewise-linear function given by nodes; constant outside
/// the node range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFn {
    nodes: Vec<(f64, f64)>,
}

impl LinearFn {
    pub fn new(nodes: Vec<(f64, f64)>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Config(
                "piecewise-linear function needs nodes".into(),
            ));
        }
        if nodes.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config(
                "piecewise-linear nodes must have increasing abscissae".into(),
            ));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[(f64, f64)] {
        &self.nodes
    }

    pub fn value(&self, t: f64) -> f64 {
        let n = &self.nodes;
        if t <= n[0].0 {
            return n[0].1;
        }
        if t >= n[n.len() - 1].0 {
            return n[n.len() - 1].1;
        }
        let i = n.partition_point(|p| p.0 <= t);
        let (t0, v0) = n[i - 1];
        let (t1, v1) = n[i];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }
}

/// Time profile that is either piecewise constant or piecewise linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Profile {
    Steps(StepFn),
    Linear(LinearFn),
}

impl Profile {
    pub fn constant(value: f64) -> Self {
        Profile::Steps(StepFn::constant(value))
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            Profile::Steps(s) => s.value(t),
            Profile::Linear(l) => l.value(t),
        }
    }

    /// Abscissae where the profile is not smooth, inside `(a, b)`.
    pub fn kinks_in(&self, a: f64, b: f64) -> Vec<f64> {
        match self {
            Profile::Steps(s) => s.knots_in(a, b).collect(),
            Profile::Linear(l) => l
                .nodes()
                .iter()
                .map(|p| p.0)
                .filter(|t| *t > a && *t < b)
                .collect(),
        }
    }

    pub fn min_value(&self) -> f64 {
        match self {
            Profile::Steps(s) => s.min_value(),
            Profile::Linear(l) => l.nodes().iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        }
    }
}

/// Exact value of `∫_a^b w(t) (c - p(t))^2 dt` for a step weight `w`, a
/// constant `c` and a piecewise-linear-or-constant profile `p`.
pub fn weighted_square_integral(w: &StepFn, c: f64, p: &Profile, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let mut cuts: Vec<f64> = w.knots_in(a, b).chain(p.kinks_in(a, b)).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = 0.0;
    let mut left = a;
    for right in cuts.into_iter().chain(std::iter::once(b)) {
        let len = right - left;
        if len > 0.0 {
            let weight = w.value(left);
            if weight != 0.0 {
                // Simpson is exact for the quadratic integrand on each piece;
                // the profile is evaluated at interior points so a step at
                // `left` takes its right value.
                let mid = 0.5 * (left + right);
                let (fa, fm, fb) = match p {
                    Profile::Steps(s) => {
                        let v = (c - s.value(mid)).powi(2);
                        (v, v, v)
                    }
                    Profile::Linear(l) => (
                        (c - l.value(left)).powi(2),
                        (c - l.value(mid)).powi(2),
                        (c - l.value(right)).powi(2),
                    ),
                };
                total += weight * len * (fa + 4.0 * fm + fb) / 6.0;
            }
        }
        left = right;
    }
    total
}

/// Exact value of `∫_a^b w(t) (q0 + (q1 - q0)(t - a)/(b - a)) dt` for a step
/// weight `w`.
pub fn weighted_linear_integral(w: &StepFn, q0: f64, q1: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let line = |t: f64| q0 + (q1 - q0) * (t - a) / (b - a);
    let mut total = 0.0;
    let mut left = a;
    for right in w.knots_in(a, b).chain(std::iter::once(b)) {
        total += w.value(left) * 0.5 * (line(left) + line(right)) * (right - left);
        left = right;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_fn_is_right_continuous() {
        let f = StepFn::new(vec![0.5], vec![5.0, 3.0]).unwrap();
        assert_eq!(f.value(0.5), 3.0);
        assert_eq!(f.value_left(0.5), 5.0);
        assert_eq!(f.value(0.49), 5.0);
    }

    #[test]
    fn integral_and_distance() {
        let f = StepFn::new(vec![1.0, 2.0], vec![1.0, 3.0, 0.0]).unwrap();
        assert!((f.integral(0.0, 3.0) - 4.0).abs() < 1e-14);
        assert!((f.integral(1.5, 2.5) - 1.5).abs() < 1e-14);
        let g = StepFn::constant(1.0);
        assert!((f.l1_distance(&g, 0.0, 3.0) - 3.0).abs() < 1e-14);
        assert_eq!(f.total_variation(), 5.0);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(StepFn::new(vec![1.0], vec![1.0]).is_err());
        assert!(StepFn::new(vec![2.0, 1.0], vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn linear_profile_square_integral_is_exact() {
        // ∫_0^1 (2 - t)^2 dt = 7/3
        let p = Profile::Linear(LinearFn::new(vec![(0.0, 0.0), (1.0, 1.0)]).unwrap());
        let v = weighted_square_integral(&StepFn::constant(1.0), 2.0, &p, 0.0, 1.0);
        assert!((v - 7.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn step_profile_square_integral_splits_at_knots() {
        let p = Profile::Steps(StepFn::new(vec![10.0], vec![100.0, 75.0]).unwrap());
        let w = StepFn::constant(0.5);
        let v = weighted_square_integral(&w, 75.0, &p, 0.0, 20.0);
        assert!((v - 0.5 * 625.0 * 10.0).abs() < 1e-9);
    }

    #[test]
    fn push_overwrites_and_collapses() {
        let mut f = StepFn::constant(1.0);
        f.push(0.0, 1.0);
        assert!(f.knots().is_empty());
        f.push(1.0, 2.0);
        f.push(1.0, 3.0);
        assert_eq!(f.values(), &[1.0, 3.0]);
        f.push(1.0, 1.0);
        assert!(f.knots().is_empty());
        f.push(2.0, 4.0);
        assert_eq!(f.knots(), &[2.0]);
    }

    #[test]
    fn from_samples_drops_redundant_knots() {
        let f = StepFn::from_samples(0.0, vec![(1.0, 0.0), (2.0, 4.0), (3.0, 4.0), (4.0, 1.0)]);
        assert_eq!(f.knots(), &[2.0, 4.0]);
        assert_eq!(f.values(), &[0.0, 4.0, 1.0]);
    }
}
