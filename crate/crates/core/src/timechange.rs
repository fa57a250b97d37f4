//! Random time changes `C_t` defined by `int_0^{C_t} g^2(X_s) ds = t`.
//!
//! The clock `A(s) = int_0^s g^2(X_u) du` is accumulated with the
//! trapezoid rule on the source grid; `C` is its inverse, linear between
//! the knots `(A(s_k), s_k)`. Time-changed paths are read off the source
//! path by linear interpolation.

use std::io::{self, Write};
use std::sync::Arc;

use crate::csv::num;
use crate::error::{invalid, Error, Result};
use crate::localtime::{band_local_time, band_local_time_terminal, BandConfig};
use crate::occupation::OccupationWeight;
use crate::paths::{interpolate, quadratic_variation, SamplePath, TimeGrid};
use crate::reflection::relative_gap;

/// Clock density `g > 0`.
#[derive(Clone)]
pub struct ClockDensity {
    g: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl ClockDensity {
    pub fn new(g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { g: Arc::new(g) }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c)
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.g)(x)
    }
}

impl std::fmt::Debug for ClockDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ClockDensity")
    }
}

/// Strictly increasing time change sampled through its clock knots.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeChangeMap {
    source_grid: TimeGrid,
    /// `A(s_k)` at every source grid point; `C(A(s_k)) = s_k`.
    clock: Vec<f64>,
}

/// Relative slack when comparing a requested horizon to `max_attained`.
const HORIZON_SLACK: f64 = 1e-9;

impl TimeChangeMap {
    pub fn source_grid(&self) -> TimeGrid {
        self.source_grid
    }

    /// Clock values at the source grid points.
    pub fn clock(&self) -> &[f64] {
        &self.clock
    }

    /// Largest `t` whose `C_t` still fits in the source horizon.
    pub fn max_attained(&self) -> f64 {
        self.clock[self.clock.len() - 1]
    }

    /// Measured clock `A(s)` at an arbitrary source time.
    pub fn measured(&self, s: f64) -> f64 {
        interpolate(&self.clock, self.source_grid.dt(), s)
    }

    /// `C_t`, clamped to the source horizon for `t >= max_attained`.
    pub fn forward(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let k = self.clock.partition_point(|&a| a <= t);
        if k >= self.clock.len() {
            return self.source_grid.horizon();
        }
        let (a0, a1) = (self.clock[k - 1], self.clock[k]);
        let dt = self.source_grid.dt();
        self.source_grid.time(k - 1) + (t - a0) / (a1 - a0) * dt
    }

    fn check_horizon(&self, out_grid: TimeGrid) -> Result<()> {
        let max = self.max_attained();
        if out_grid.horizon() > max * (1.0 + HORIZON_SLACK) {
            return Err(Error::HorizonOverrun {
                requested: out_grid.horizon(),
                max_attained: max,
            });
        }
        Ok(())
    }

    /// `C_t` on every point of `out_grid`.
    pub fn sample(&self, out_grid: TimeGrid) -> Result<Vec<f64>> {
        self.check_horizon(out_grid)?;
        Ok(out_grid.times().map(|t| self.forward(t).min(self.source_grid.horizon())).collect())
    }

    /// CSV `t,C_t` on `out_grid`.
    pub fn write_csv<W: Write>(&self, out_grid: TimeGrid, mut w: W) -> io::Result<()> {
        let c = self.sample(out_grid).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        writeln!(w, "t,C_t")?;
        for (t, c) in out_grid.times().zip(c) {
            writeln!(w, "{},{}", num(t), num(c))?;
        }
        Ok(())
    }
}

pub fn build_time_change(path: &SamplePath, clock: &ClockDensity) -> Result<TimeChangeMap> {
    let g2: Vec<f64> = path.values().iter().map(|&x| clock.eval(x).powi(2)).collect();
    for (index, &value) in g2.iter().enumerate() {
        let g = clock.eval(path.values()[index]);
        if !(g > 0.0 && value.is_finite() && value > 0.0) {
            return Err(Error::NonPositiveClock { index, value });
        }
    }
    let dt = path.grid().dt();
    let mut a = Vec::with_capacity(g2.len());
    let mut acc = 0.0;
    a.push(acc);
    for w in g2.windows(2) {
        acc += 0.5 * (w[0] + w[1]) * dt;
        a.push(acc);
    }
    Ok(TimeChangeMap {
        source_grid: path.grid(),
        clock: a,
    })
}

/// `X^C_t = X_{C_t}` on `out_grid`.
pub fn apply_time_change(path: &SamplePath, map: &TimeChangeMap, out_grid: TimeGrid) -> Result<SamplePath> {
    if path.grid() != map.source_grid {
        return Err(invalid("path", "time change was built on a different grid"));
    }
    let c = map.sample(out_grid)?;
    SamplePath::new(out_grid, c.iter().map(|&s| path.value_at(s)).collect())
}

/// Gap between `<X^C>_t` and `<X>_{C_t}`, both realized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QvTransformGap {
    pub sup_gap: f64,
    pub terminal_qv: f64,
    pub relative_gap: f64,
}

pub fn check_qv_transform(path: &SamplePath, map: &TimeChangeMap, out_grid: TimeGrid) -> Result<QvTransformGap> {
    let changed = apply_time_change(path, map, out_grid)?;
    let qv_changed = quadratic_variation(&changed);
    let qv_source = quadratic_variation(path);
    let c = map.sample(out_grid)?;
    let sup_gap = qv_changed
        .values()
        .iter()
        .zip(&c)
        .map(|(q, &s)| (q - qv_source.value_at(s)).abs())
        .fold(0.0, f64::max);
    let terminal_qv = qv_changed.terminal().max(qv_source.value_at(c[c.len() - 1]));
    Ok(QvTransformGap {
        sup_gap,
        terminal_qv,
        relative_gap: if terminal_qv > 0.0 { sup_gap / terminal_qv } else { 0.0 },
    })
}

/// Band local time (quadratic-variation weight) of `X^C` at the output
/// horizon against that of `X` read at time `C_T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTimeTransformGap {
    pub time_changed: f64,
    pub source_at_clock: f64,
    pub relative_gap: f64,
}

pub fn check_localtime_transform(
    path: &SamplePath,
    map: &TimeChangeMap,
    out_grid: TimeGrid,
    a: f64,
    band: &BandConfig,
) -> Result<LocalTimeTransformGap> {
    let changed = apply_time_change(path, map, out_grid)?;
    let time_changed = band_local_time_terminal(&changed, a, band, OccupationWeight::QuadraticVariation);
    let source = band_local_time(path, a, band, OccupationWeight::QuadraticVariation);
    let c_end = map.forward(out_grid.horizon()).min(path.grid().horizon());
    let source_at_clock = source.value_at(c_end);
    Ok(LocalTimeTransformGap {
        time_changed,
        source_at_clock,
        relative_gap: relative_gap(time_changed, source_at_clock),
    })
}

/// Least-squares fit of `dY = b * Y dt + noise` through the origin, pooled
/// over every step of every path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftFit {
    pub slope: f64,
    pub stderr: f64,
    pub observations: usize,
}

pub fn linear_drift_fit(paths: &[SamplePath]) -> Result<DriftFit> {
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut n = 0usize;
    for p in paths {
        let dt = p.grid().dt();
        for w in p.values().windows(2) {
            let x = w[0] * dt;
            sxy += x * (w[1] - w[0]);
            sxx += x * x;
            n += 1;
        }
    }
    if n < 2 || sxx == 0.0 {
        return Err(Error::TooFewSamples(n));
    }
    let slope = sxy / sxx;
    let mut rss = 0.0;
    for p in paths {
        let dt = p.grid().dt();
        for w in p.values().windows(2) {
            let r = (w[1] - w[0]) - slope * w[0] * dt;
            rss += r * r;
        }
    }
    let sigma2 = rss / (n - 1) as f64;
    Ok(DriftFit {
        slope,
        stderr: (sigma2 / sxx).sqrt(),
        observations: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{wiener_path, ItoCoefficients, SimulationConfig};
    use approx::assert_relative_eq;

    fn grid(h: f64, n: usize) -> TimeGrid {
        TimeGrid::new(h, n).unwrap()
    }

    #[test]
    fn identity_clock() {
        let p = wiener_path(grid(1.0, 1000), 1, 0);
        let map = build_time_change(&p, &ClockDensity::constant(1.0)).unwrap();
        assert_relative_eq!(map.max_attained(), 1.0, max_relative = 1e-12);
        for t in [0.0, 0.1234, 0.5, 0.999] {
            assert_relative_eq!(map.forward(t), t, epsilon = 1e-12);
        }
        let out = grid(1.0, 1000);
        let changed = apply_time_change(&p, &map, out).unwrap();
        for (a, b) in changed.values().iter().zip(p.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_scaling_inverts_in_closed_form() {
        let c = 2.0;
        let p = wiener_path(grid(1.0, 4096), 2, 0).map(|w| c * w).unwrap();
        let map = build_time_change(&p, &ClockDensity::constant(c)).unwrap();
        assert_relative_eq!(map.max_attained(), c * c, max_relative = 1e-12);
        for t in [0.3, 1.0, 2.5, 3.9] {
            assert_relative_eq!(map.forward(t), t / (c * c), max_relative = 1e-12);
        }
    }

    #[test]
    fn round_trip_within_two_cells() {
        let p = wiener_path(grid(1.0, 2048), 5, 0);
        let clock = ClockDensity::new(|x: f64| 1.0 + 0.5 * x.sin());
        let map = build_time_change(&p, &clock).unwrap();
        let dt = p.grid().dt();
        for k in (0..=2048).step_by(37) {
            let s = p.grid().time(k);
            assert!((map.forward(map.measured(s)) - s).abs() <= 2.0 * dt);
        }
        let cell = map.clock().windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        for j in 0..50 {
            let t = map.max_attained() * j as f64 / 50.0;
            assert!((map.measured(map.forward(t)) - t).abs() <= 2.0 * cell);
        }
        assert!(map.clock().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn nonpositive_clock_rejected() {
        let p = wiener_path(grid(1.0, 64), 5, 0);
        let err = build_time_change(&p, &ClockDensity::new(|x: f64| x)).unwrap_err();
        assert!(matches!(err, Error::NonPositiveClock { index: 0, .. }));
    }

    #[test]
    fn horizon_overrun_names_max_attained() {
        let p = wiener_path(grid(1.0, 64), 5, 0);
        let map = build_time_change(&p, &ClockDensity::constant(0.5)).unwrap();
        match apply_time_change(&p, &map, grid(1.0, 64)) {
            Err(Error::HorizonOverrun { max_attained, .. }) => assert_relative_eq!(max_attained, 0.25),
            other => panic!("expected overrun, got {other:?}"),
        }
        assert!(apply_time_change(&p, &map, grid(0.25, 64)).is_ok());
    }

    #[test]
    fn monotone_map_on_monotone_path() {
        let p = SamplePath::from_fn(grid(1.0, 500), |t| t * t).unwrap();
        let map = build_time_change(&p, &ClockDensity::new(|x| 1.0 + x)).unwrap();
        let out = grid(map.max_attained(), 300);
        let changed = apply_time_change(&p, &map, out).unwrap();
        assert!(changed.values().windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn qv_transform_cases() {
        let p = wiener_path(grid(1.0, 1 << 14), 7, 0);
        let map = build_time_change(&p, &ClockDensity::constant(1.0)).unwrap();
        let gap = check_qv_transform(&p, &map, grid(1.0, 1 << 14)).unwrap();
        assert!(gap.relative_gap < 1e-9);

        // g = 2 on a standard Wiener path: C_t = t/4
        let map = build_time_change(&p, &ClockDensity::constant(2.0)).unwrap();
        let out = grid(1.0, 1 << 12);
        let changed = apply_time_change(&p, &map, out).unwrap();
        let qv = quadratic_variation(&changed).terminal();
        assert_relative_eq!(qv, 0.25, max_relative = 0.1);
        let gap = check_qv_transform(&p, &map, out).unwrap();
        assert!(gap.relative_gap < 0.05, "{gap:?}");

        let smooth = SamplePath::from_fn(grid(1.0, 1 << 12), |t| t).unwrap();
        let map = build_time_change(&smooth, &ClockDensity::constant(1.0)).unwrap();
        let gap = check_qv_transform(&smooth, &map, grid(1.0, 1 << 12)).unwrap();
        assert!(gap.sup_gap < 1e-3 && gap.terminal_qv < 1e-3);
    }

    #[test]
    fn localtime_transform_cases() {
        let p = wiener_path(grid(1.0, 1 << 14), 9, 0);
        let band = BandConfig::for_grid(p.grid());
        let map = build_time_change(&p, &ClockDensity::constant(1.0)).unwrap();
        let gap = check_localtime_transform(&p, &map, grid(1.0, 1 << 14), 0.0, &band).unwrap();
        assert!(gap.relative_gap < 0.02, "{gap:?}");

        let far = check_localtime_transform(&p, &map, grid(1.0, 1 << 14), 50.0, &band).unwrap();
        assert_eq!((far.time_changed, far.source_at_clock, far.relative_gap), (0.0, 0.0, 0.0));

        // Non-constant clock: X^C is read between source points. Linear
        // interpolation at the source resolution loses about a third of the
        // quadratic variation, so resample coarsely and pool over paths.
        let clock = ClockDensity::new(|x: f64| 1.0 + 0.3 * x.cos());
        let (mut changed, mut source) = (0.0, 0.0);
        for seed in 0..64 {
            let p = wiener_path(grid(1.0, 1 << 14), 100 + seed, 0);
            let map = build_time_change(&p, &clock).unwrap();
            let out = grid(map.max_attained() * 0.99, 1 << 10);
            let gap = check_localtime_transform(&p, &map, out, 0.0, &band).unwrap();
            changed += gap.time_changed;
            source += gap.source_at_clock;
        }
        assert!(crate::reflection::relative_gap(changed, source) < 0.1, "{changed} {source}");
    }

    #[test]
    fn wiener_source_with_inverse_sigma_clock_builds_scaled_diffusion() {
        // clock 1/sigma on W gives C_t = sigma^2 t, so W_{C_t} has <.>_t = sigma^2 t
        let sigma = 0.5;
        let p = wiener_path(grid(1.0, 1 << 14), 10, 0);
        let map = build_time_change(&p, &ClockDensity::constant(1.0 / sigma)).unwrap();
        let out = grid(4.0, 1 << 14);
        let changed = apply_time_change(&p, &map, out).unwrap();
        let qv = quadratic_variation(&changed).terminal();
        assert_relative_eq!(qv, sigma * sigma * 4.0, max_relative = 0.05);
    }

    #[test]
    fn drift_fit_recovers_ou_drift() {
        let cfg = SimulationConfig::new(3, 400, grid(1.0, 1024)).unwrap();
        let ou = ItoCoefficients::new(|x| -x, |_| 1.0, 1.0);
        let paths = crate::paths::simulate_ito(&ou, &cfg).unwrap();
        let fit = linear_drift_fit(&paths).unwrap();
        assert!((fit.slope + 1.0).abs() < 4.0 * fit.stderr, "{fit:?}");
        assert!(linear_drift_fit(&[]).is_err());
    }
}
