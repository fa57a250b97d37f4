//! Occupation measures of sampled paths over finite unions of half-open
//! intervals, under Lebesgue (`dt`) or realized quadratic-variation
//! (`(dX)^2`) weighting, and the closed-form local time of differentiable
//! paths.
//!
//! Step `[t_i, t_{i+1})` is attributed to the left-endpoint value
//! `X_{t_i}`, the same non-anticipating convention as the Itô sums.

use std::io::{self, Write};
use std::sync::Arc;

use crate::csv::num;
use crate::error::{invalid, Error, Result};
use crate::paths::SamplePath;

/// Finite union of disjoint half-open intervals `[a_i, b_i)`, sorted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntervalUnion {
    intervals: Vec<(f64, f64)>,
}

impl IntervalUnion {
    pub fn new(intervals: Vec<(f64, f64)>) -> Result<Self> {
        for &(a, b) in &intervals {
            if !(a.is_finite() || a == f64::NEG_INFINITY) || !(b.is_finite() || b == f64::INFINITY) {
                return Err(invalid("intervals", "endpoints must not be NaN"));
            }
            if a >= b {
                return Err(invalid("intervals", format!("empty interval [{a}, {b})")));
            }
        }
        for w in intervals.windows(2) {
            if w[0].1 > w[1].0 {
                return Err(invalid(
                    "intervals",
                    "intervals must be sorted by left endpoint and pairwise disjoint",
                ));
            }
        }
        Ok(Self { intervals })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn interval(a: f64, b: f64) -> Result<Self> {
        Self::new(vec![(a, b)])
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, x: f64) -> bool {
        let k = self.intervals.partition_point(|&(a, _)| a <= x);
        k > 0 && x < self.intervals[k - 1].1
    }
}

/// Clock against which time spent in a set is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OccupationWeight {
    /// `dt` per step.
    Lebesgue,
    /// Squared path increment `(X_{t_{i+1}} - X_{t_i})^2` per step.
    QuadraticVariation,
}

impl OccupationWeight {
    #[inline]
    pub(crate) fn step(self, dt: f64, dx: f64) -> f64 {
        match self {
            OccupationWeight::Lebesgue => dt,
            OccupationWeight::QuadraticVariation => dx * dx,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OccupationWeight::Lebesgue => "lebesgue",
            OccupationWeight::QuadraticVariation => "quadratic_variation",
        }
    }
}

pub(crate) fn check_upto(path: &SamplePath, upto: f64) -> Result<usize> {
    let horizon = path.grid().horizon();
    if !(upto >= 0.0 && upto <= horizon * (1.0 + 1e-9)) {
        return Err(invalid("upto", format!("must lie in [0, {horizon}], got {upto}")));
    }
    Ok(path.grid().steps_until(upto))
}

/// Weighted time spent by the path in `set` over the grid steps contained
/// in `[0, upto]`.
pub fn occupation_time(
    path: &SamplePath,
    set: &IntervalUnion,
    weight: OccupationWeight,
    upto: f64,
) -> Result<f64> {
    let steps = check_upto(path, upto)?;
    if set.is_empty() {
        return Ok(0.0);
    }
    let dt = path.grid().dt();
    let v = path.values();
    let mut acc = 0.0;
    for i in 0..steps {
        if set.contains(v[i]) {
            acc += weight.step(dt, v[i + 1] - v[i]);
        }
    }
    Ok(acc)
}

/// Occupation mass per half-open bin `[edge_b, edge_{b+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub mass: Vec<f64>,
}

impl Histogram {
    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "bin_left,bin_right,mass")?;
        for (e, m) in self.edges.windows(2).zip(&self.mass) {
            writeln!(w, "{},{},{}", num(e[0]), num(e[1]), num(*m))?;
        }
        Ok(())
    }
}

pub fn occupation_histogram(
    path: &SamplePath,
    edges: &[f64],
    weight: OccupationWeight,
) -> Result<Histogram> {
    if edges.len() < 2
        || edges.iter().any(|e| !e.is_finite())
        || edges.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::InvalidBins);
    }
    let bins = edges.len() - 1;
    let mut mass = vec![0.0; bins];
    let dt = path.grid().dt();
    let v = path.values();
    for i in 0..path.grid().steps() {
        let x = v[i];
        let k = edges.partition_point(|&e| e <= x);
        if k == 0 || k > bins {
            continue;
        }
        mass[k - 1] += weight.step(dt, v[i + 1] - x);
    }
    Ok(Histogram {
        edges: edges.to_vec(),
        mass,
    })
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A differentiable path given in closed form together with its derivative.
#[derive(Clone)]
pub struct DifferentiablePathSpec {
    value: ScalarFn,
    derivative: ScalarFn,
}

impl DifferentiablePathSpec {
    pub fn new<V, D>(value: V, derivative: D) -> Self
    where
        V: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            value: Arc::new(value),
            derivative: Arc::new(derivative),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        (self.value)(t)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        (self.derivative)(t)
    }
}

/// Scan resolution used to bracket level crossings before bisection.
pub const DEFAULT_SCAN_POINTS_PER_UNIT_TIME: f64 = 1e4;

/// Local time `sum 1/|X'(s)|` over the times `s` in `[0, upto)` where the
/// path crosses level `x`, using the default scan resolution.
pub fn deterministic_local_time(
    spec: &DifferentiablePathSpec,
    x: f64,
    upto: f64,
    crossing_tolerance: f64,
) -> Result<f64> {
    deterministic_local_time_with_scan(
        spec,
        x,
        upto,
        crossing_tolerance,
        DEFAULT_SCAN_POINTS_PER_UNIT_TIME,
    )
}

/// Crossings are bracketed by sign changes of `X(s) - x` on a uniform scan
/// and refined by bisection to `crossing_tolerance`. A zero exactly on a
/// scan point counts once; a crossing at `s = 0` is counted and one at
/// `s = upto` is not. Tangential touches without a sign change are not
/// detected.
pub fn deterministic_local_time_with_scan(
    spec: &DifferentiablePathSpec,
    x: f64,
    upto: f64,
    crossing_tolerance: f64,
    points_per_unit_time: f64,
) -> Result<f64> {
    if !(crossing_tolerance > 0.0) {
        return Err(invalid("crossing_tolerance", "must be positive"));
    }
    if !(points_per_unit_time > 0.0) {
        return Err(invalid("points_per_unit_time", "must be positive"));
    }
    if !(upto >= 0.0 && upto.is_finite()) {
        return Err(invalid("upto", "must be finite and nonnegative"));
    }
    if upto == 0.0 {
        return Ok(0.0);
    }
    let g = |s: f64| spec.value(s) - x;
    let cells = ((upto * points_per_unit_time).ceil() as usize).max(1);
    let h = upto / cells as f64;
    let mut total = 0.0;
    let mut g0 = g(0.0);
    for j in 0..cells {
        let s0 = j as f64 * h;
        let s1 = if j + 1 == cells { upto } else { (j + 1) as f64 * h };
        let g1 = g(s1);
        let root = if g0 == 0.0 {
            Some(s0)
        } else if g0 * g1 < 0.0 {
            Some(bisect(&g, s0, s1, g0, crossing_tolerance))
        } else {
            None
        };
        if let Some(s) = root {
            let slope = spec.derivative(s).abs();
            if slope < crossing_tolerance {
                return Err(Error::StationaryLevel {
                    level: x,
                    time: s,
                    slope,
                });
            }
            total += 1.0 / slope;
        }
        g0 = g1;
    }
    Ok(total)
}

fn bisect(g: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, g_lo: f64, tol: f64) -> f64 {
    let lo_negative = g_lo < 0.0;
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if (gm < 0.0) == lo_negative {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{wiener_path, TimeGrid};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn grid(h: f64, n: usize) -> TimeGrid {
        TimeGrid::new(h, n).unwrap()
    }

    #[test]
    fn interval_union_validation() {
        assert!(IntervalUnion::new(vec![(1.0, 1.0)]).is_err());
        assert!(IntervalUnion::new(vec![(0.0, 2.0), (1.0, 3.0)]).is_err());
        assert!(IntervalUnion::new(vec![(2.0, 3.0), (0.0, 1.0)]).is_err());
        let u = IntervalUnion::new(vec![(0.0, 1.0), (1.0, 2.0), (5.0, 6.0)]).unwrap();
        assert!(u.contains(0.0) && u.contains(1.0) && u.contains(5.5));
        assert!(!u.contains(2.0) && !u.contains(-0.1) && !u.contains(6.0));
    }

    #[test]
    fn constant_path_point_mass() {
        let p = SamplePath::from_fn(grid(2.0, 64), |_| 0.3).unwrap();
        let a = IntervalUnion::interval(0.0, 1.0).unwrap();
        let t = occupation_time(&p, &a, OccupationWeight::Lebesgue, 1.5).unwrap();
        assert_relative_eq!(t, 1.5, max_relative = 1e-12);
        let miss = IntervalUnion::interval(0.4, 1.0).unwrap();
        assert_eq!(occupation_time(&p, &miss, OccupationWeight::Lebesgue, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn ramp_change_of_variable() {
        let p = SamplePath::from_fn(grid(2.0, 2048), |t| t).unwrap();
        let a = IntervalUnion::interval(0.0, 1.0).unwrap();
        let t = occupation_time(&p, &a, OccupationWeight::Lebesgue, 2.0).unwrap();
        assert_relative_eq!(t, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn empty_set_and_bad_upto() {
        let p = wiener_path(grid(1.0, 100), 1, 0);
        let e = IntervalUnion::empty();
        assert_eq!(occupation_time(&p, &e, OccupationWeight::Lebesgue, 1.0).unwrap(), 0.0);
        assert!(occupation_time(&p, &e, OccupationWeight::Lebesgue, 1.5).is_err());
        assert!(occupation_time(&p, &e, OccupationWeight::Lebesgue, -0.1).is_err());
    }

    #[test]
    fn qv_weight_matches_direct_rescan() {
        let p = wiener_path(grid(1.0, 4096), 21, 0);
        let a = IntervalUnion::interval(-1.0, 1.0).unwrap();
        let got = occupation_time(&p, &a, OccupationWeight::QuadraticVariation, 1.0).unwrap();
        let v = p.values();
        let mut oracle = 0.0;
        for i in 0..4096 {
            if (-1.0..1.0).contains(&v[i]) {
                oracle += (v[i + 1] - v[i]).powi(2);
            }
        }
        assert_eq!(got, oracle);
    }

    #[test]
    fn additivity_and_monotonicity() {
        let p = wiener_path(grid(1.0, 2048), 4, 1);
        let a = IntervalUnion::interval(-0.5, 0.1).unwrap();
        let b = IntervalUnion::interval(0.1, 0.7).unwrap();
        let ab = IntervalUnion::new(vec![(-0.5, 0.1), (0.1, 0.7)]).unwrap();
        for w in [OccupationWeight::Lebesgue, OccupationWeight::QuadraticVariation] {
            let whole = occupation_time(&p, &ab, w, 1.0).unwrap();
            let parts = occupation_time(&p, &a, w, 1.0).unwrap() + occupation_time(&p, &b, w, 1.0).unwrap();
            assert_relative_eq!(whole, parts, max_relative = 1e-12);
        }
        let mut last = 0.0;
        for k in 0..=20 {
            let t = occupation_time(&p, &ab, OccupationWeight::Lebesgue, k as f64 / 20.0).unwrap();
            assert!(t >= last && t <= k as f64 / 20.0 + 1e-12);
            last = t;
        }
    }

    #[test]
    fn histogram_rejects_bad_edges() {
        let p = wiener_path(grid(1.0, 16), 1, 0);
        assert_eq!(occupation_histogram(&p, &[0.0], OccupationWeight::Lebesgue), Err(Error::InvalidBins));
        assert_eq!(
            occupation_histogram(&p, &[0.0, 1.0, 1.0], OccupationWeight::Lebesgue),
            Err(Error::InvalidBins)
        );
    }

    #[test]
    fn histogram_single_bin_and_point_mass() {
        let p = wiener_path(grid(1.0, 1024), 2, 0);
        let h = occupation_histogram(&p, &[p.min() - 1.0, p.max() + 1.0], OccupationWeight::Lebesgue).unwrap();
        assert_relative_eq!(h.total(), 1.0, max_relative = 1e-12);

        let flat = SamplePath::from_fn(grid(1.0, 100), |_| 0.25).unwrap();
        let edges: Vec<f64> = (0..=10).map(|k| -1.0 + 0.2 * k as f64).collect();
        let h = occupation_histogram(&flat, &edges, OccupationWeight::Lebesgue).unwrap();
        let nonzero: Vec<_> = h.mass.iter().filter(|&&m| m > 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_relative_eq!(*nonzero[0], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn histogram_bins_match_occupation_time() {
        let p = wiener_path(grid(1.0, 4096), 8, 0);
        let edges: Vec<f64> = (0..=12).map(|k| -1.5 + 0.25 * k as f64).collect();
        for w in [OccupationWeight::Lebesgue, OccupationWeight::QuadraticVariation] {
            let h = occupation_histogram(&p, &edges, w).unwrap();
            for (e, m) in edges.windows(2).zip(&h.mass) {
                let set = IntervalUnion::interval(e[0], e[1]).unwrap();
                assert_eq!(*m, occupation_time(&p, &set, w, 1.0).unwrap());
            }
            let support = IntervalUnion::interval(edges[0], edges[12]).unwrap();
            assert_relative_eq!(h.total(), occupation_time(&p, &support, w, 1.0).unwrap(), max_relative = 1e-12);
        }
    }

    #[test]
    fn histogram_csv() {
        let h = Histogram {
            edges: vec![0.0, 1.0, 2.0],
            mass: vec![0.5, 0.25],
        };
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("bin_left,bin_right,mass\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn deterministic_ramps() {
        let unit = DifferentiablePathSpec::new(|t| t, |_| 1.0);
        assert_relative_eq!(deterministic_local_time(&unit, 0.5, 1.0, 1e-12).unwrap(), 1.0);
        let steep = DifferentiablePathSpec::new(|t| 2.0 * t, |_| 2.0);
        assert_relative_eq!(deterministic_local_time(&steep, 0.5, 1.0, 1e-12).unwrap(), 0.5);
        // level never reached
        assert_eq!(deterministic_local_time(&unit, 2.0, 1.0, 1e-12).unwrap(), 0.0);
    }

    #[test]
    fn sine_half_open_convention() {
        let sine = DifferentiablePathSpec::new(|t| (2.0 * PI * t).sin(), |t| 2.0 * PI * (2.0 * PI * t).cos());
        // zeros at 0 and 1/2 count, the zero at 1 does not
        let got = deterministic_local_time(&sine, 0.0, 1.0, 1e-13).unwrap();
        assert_relative_eq!(got, 2.0 / (2.0 * PI), max_relative = 1e-9);
    }

    #[test]
    fn stationary_level_is_an_error() {
        let parabola = DifferentiablePathSpec::new(|t| (t - 0.5) * (t - 0.5), |t| 2.0 * (t - 0.5));
        // crosses 0.04 at t = 0.3 and t = 0.7 with slope 0.4
        let l = deterministic_local_time(&parabola, 0.04, 1.0, 1e-12).unwrap();
        assert_relative_eq!(l, 5.0, max_relative = 1e-6);
        // a cubic crosses its inflection level with zero slope
        let cubic = DifferentiablePathSpec::new(|t| (t - 0.5f64).powi(3), |t| 3.0 * (t - 0.5f64).powi(2));
        let err = deterministic_local_time(&cubic, 0.0, 1.0, 1e-9).unwrap_err();
        assert!(matches!(err, Error::StationaryLevel { .. }));
    }
}
