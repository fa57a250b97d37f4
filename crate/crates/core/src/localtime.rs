//! Local-time estimators for sampled semimartingale paths.
//!
//! Two independent routes are provided:
//!
//! * the band (occupation-density) estimator
//!   `L_t^x ~ (1 / 2eps) * occupation of [x - eps, x + eps)`, under either
//!   occupation weight;
//! * discrete Tanaka sums
//!   `L_t^a = |X_t - a| - |X_0 - a| - sum_i sgn(X_{t_i} - a) (X_{t_{i+1}} - X_{t_i})`
//!   with `sgn(0) = -1`.
//!
//! plus the Gaussian closed-form expectation `E[L_t^x] = int_0^t p(s, x) ds`
//! for standard Wiener paths, evaluated by adaptive quadrature.

use std::f64::consts::PI;
use std::io::{self, Write};

use statrs::distribution::{ContinuousCDF, Normal};

use crate::csv::num;
use crate::error::{invalid, Error, Result};
use crate::occupation::OccupationWeight;
use crate::paths::{SamplePath, TimeGrid};

/// Half-width `eps` of the occupation band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandConfig {
    epsilon: f64,
}

impl BandConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(invalid("epsilon", format!("must be positive, got {epsilon}")));
        }
        Ok(Self { epsilon })
    }

    /// Default bandwidth `eps = dt^(1/3)`.
    pub fn for_grid(grid: TimeGrid) -> Self {
        Self {
            epsilon: grid.dt().cbrt(),
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// Sign function with `sgn(0) = -1`.
#[inline]
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[inline]
fn in_band(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v < hi
}

fn band_running(values: &[f64], dt: f64, lo: f64, hi: f64, scale: f64, weight: OccupationWeight) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        if in_band(w[0], lo, hi) {
            acc += weight.step(dt, w[1] - w[0]);
        }
        out.push(acc * scale);
    }
    out
}

fn band_terminal(values: &[f64], dt: f64, lo: f64, hi: f64, scale: f64, weight: OccupationWeight) -> f64 {
    let mut acc = 0.0;
    for w in values.windows(2) {
        if in_band(w[0], lo, hi) {
            acc += weight.step(dt, w[1] - w[0]);
        }
    }
    acc * scale
}

/// Band estimate of `t -> L_t^x`: `(1/2eps)` times the weighted occupation
/// of `[x - eps, x + eps)` up to each grid time.
pub fn band_local_time(path: &SamplePath, x: f64, band: &BandConfig, weight: OccupationWeight) -> SamplePath {
    let eps = band.epsilon;
    let values = band_running(path.values(), path.grid().dt(), x - eps, x + eps, 0.5 / eps, weight);
    SamplePath::from_parts(path.grid(), values)
}

/// Terminal value of [`band_local_time`] without allocating the path.
pub fn band_local_time_terminal(path: &SamplePath, x: f64, band: &BandConfig, weight: OccupationWeight) -> f64 {
    let eps = band.epsilon;
    band_terminal(path.values(), path.grid().dt(), x - eps, x + eps, 0.5 / eps, weight)
}

/// One-sided band `[x, x + eps)` with mass `1/eps`, for local time at the
/// lower boundary of a process that never goes below `x`. For such a
/// process the two-sided band would report half the value.
pub fn one_sided_band_local_time(
    path: &SamplePath,
    x: f64,
    band: &BandConfig,
    weight: OccupationWeight,
) -> SamplePath {
    let eps = band.epsilon;
    let values = band_running(path.values(), path.grid().dt(), x, x + eps, 1.0 / eps, weight);
    SamplePath::from_parts(path.grid(), values)
}

pub fn one_sided_band_local_time_terminal(
    path: &SamplePath,
    x: f64,
    band: &BandConfig,
    weight: OccupationWeight,
) -> f64 {
    let eps = band.epsilon;
    band_terminal(path.values(), path.grid().dt(), x, x + eps, 1.0 / eps, weight)
}

/// Increment of the discrete Tanaka sum over one step. When the step does
/// not change the sign of `X - a` the Itô term cancels `|X - a|` exactly;
/// otherwise the sum reduces to `2 |X_{t_{i+1}} - a|`.
#[inline]
fn tanaka_step(prev: f64, next: f64, a: f64) -> f64 {
    if (prev > a) == (next > a) {
        0.0
    } else {
        2.0 * (next - a).abs()
    }
}

/// Discrete Tanaka local time at level `a`.
///
/// Each step contributes `|X_{i+1} - a| - |X_i - a| - sgn(X_i - a) dX_i`,
/// evaluated in its telescoped form so that steps that stay on one side of
/// `a` contribute exactly zero.
pub fn tanaka_local_time(path: &SamplePath, a: f64) -> SamplePath {
    let mut out = Vec::with_capacity(path.values().len());
    let mut acc = 0.0;
    out.push(acc);
    for w in path.values().windows(2) {
        acc += tanaka_step(w[0], w[1], a);
        out.push(acc);
    }
    SamplePath::from_parts(path.grid(), out)
}

pub fn tanaka_local_time_terminal(path: &SamplePath, a: f64) -> f64 {
    path.values().windows(2).map(|w| tanaka_step(w[0], w[1], a)).sum()
}

/// Output of [`tanaka_positive_part`].
#[derive(Debug, Clone, PartialEq)]
pub struct PositivePart {
    /// `(X_0 - x)^+ + sum 1{X_i > x} dX_i + L/2`, with `L` from the
    /// absolute-value Tanaka sum.
    pub reconstructed: SamplePath,
    /// `L/2` implied by the positive-part formula:
    /// `(X_t - x)^+ - (X_0 - x)^+ - sum 1{X_i > x} dX_i`.
    pub half_local_time: SamplePath,
    level: f64,
}

impl PositivePart {
    /// `reconstructed - (X_t - x)^+` on the path's grid.
    pub fn residual(&self, path: &SamplePath) -> Vec<f64> {
        self.reconstructed
            .values()
            .iter()
            .zip(path.values())
            .map(|(r, v)| r - (v - self.level).max(0.0))
            .collect()
    }
}

pub fn tanaka_positive_part(path: &SamplePath, x: f64) -> PositivePart {
    let v = path.values();
    let start = (v[0] - x).max(0.0);
    let tanaka = tanaka_local_time(path, x);
    let mut ito = 0.0;
    let mut reconstructed = Vec::with_capacity(v.len());
    let mut half = Vec::with_capacity(v.len());
    for (k, &vk) in v.iter().enumerate() {
        if k > 0 && v[k - 1] > x {
            ito += vk - v[k - 1];
        }
        reconstructed.push(start + ito + 0.5 * tanaka.values()[k]);
        half.push((vk - x).max(0.0) - start - ito);
    }
    PositivePart {
        reconstructed: SamplePath::from_parts(path.grid(), reconstructed),
        half_local_time: SamplePath::from_parts(path.grid(), half),
        level: x,
    }
}

/// Band local-time estimates on a (time x space) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTimeField {
    t_grid: TimeGrid,
    time_stride: usize,
    x_grid: Vec<f64>,
    band: BandConfig,
    weight: OccupationWeight,
    /// Row-major, one row per time in `t_grid`.
    values: Vec<f64>,
}

impl LocalTimeField {
    pub fn t_grid(&self) -> TimeGrid {
        self.t_grid
    }

    /// Number of source path steps per field row.
    pub fn time_stride(&self) -> usize {
        self.time_stride
    }

    pub fn x_grid(&self) -> &[f64] {
        &self.x_grid
    }

    pub fn band(&self) -> BandConfig {
        self.band
    }

    pub fn weight(&self) -> OccupationWeight {
        self.weight
    }

    pub fn value(&self, t_index: usize, x_index: usize) -> f64 {
        self.values[t_index * self.x_grid.len() + x_index]
    }

    pub fn row(&self, t_index: usize) -> &[f64] {
        let n = self.x_grid.len();
        &self.values[t_index * n..(t_index + 1) * n]
    }

    pub fn terminal_row(&self) -> &[f64] {
        self.row(self.t_grid.steps())
    }

    pub fn column(&self, x_index: usize) -> Vec<f64> {
        (0..self.t_grid.len()).map(|t| self.value(t, x_index)).collect()
    }

    /// Midpoint-rule cell widths of the x-grid: each node owns the cell
    /// between the midpoints to its neighbours, and the end nodes extend
    /// their cell symmetrically.
    pub fn x_weights(&self) -> Vec<f64> {
        midpoint_weights(&self.x_grid)
    }

    /// `sum_j h(x_j) L_t^{x_j} w_j` for row `t_index`.
    pub fn integrate_row(&self, t_index: usize, h: impl Fn(f64) -> f64) -> f64 {
        self.row(t_index)
            .iter()
            .zip(&self.x_grid)
            .zip(self.x_weights())
            .map(|((l, &x), w)| h(x) * l * w)
            .sum()
    }

    /// CSV `t,x,L`, one row per field entry.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,x,L")?;
        for (k, t) in self.t_grid.times().enumerate() {
            for (x, l) in self.x_grid.iter().zip(self.row(k)) {
                writeln!(w, "{},{},{}", num(t), num(*x), num(*l))?;
            }
        }
        Ok(())
    }
}

pub(crate) fn midpoint_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|j| {
            let left = if j == 0 { x[1] - x[0] } else { x[j] - x[j - 1] };
            let right = if j + 1 == n { x[n - 1] - x[n - 2] } else { x[j + 1] - x[j] };
            0.5 * (left + right)
        })
        .collect()
}

/// Uniform x-grid with the given spacing, anchored on multiples of
/// `spacing`, covering `[min X - eps, max X + eps]`.
pub fn covering_x_grid(path: &SamplePath, band: &BandConfig, spacing: f64) -> Result<Vec<f64>> {
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(invalid("x_step", "must be positive"));
    }
    let eps = band.epsilon;
    let lo = ((path.min() - eps) / spacing).floor() as i64;
    let hi = ((path.max() + eps) / spacing).ceil() as i64;
    Ok((lo..=hi).map(|j| j as f64 * spacing).collect())
}

/// Full-resolution field: one row per path grid point.
pub fn local_time_field(
    path: &SamplePath,
    x_grid: &[f64],
    band: &BandConfig,
    weight: OccupationWeight,
) -> Result<LocalTimeField> {
    local_time_field_strided(path, x_grid, band, weight, 1)
}

/// Field sampled every `time_stride` path steps. Entries are bit-identical
/// to [`band_local_time`] evaluated at the same level and time.
pub fn local_time_field_strided(
    path: &SamplePath,
    x_grid: &[f64],
    band: &BandConfig,
    weight: OccupationWeight,
    time_stride: usize,
) -> Result<LocalTimeField> {
    if x_grid.is_empty()
        || x_grid.iter().any(|x| !x.is_finite())
        || x_grid.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(invalid("x_grid", "must be nonempty and strictly increasing"));
    }
    let steps = path.grid().steps();
    if time_stride == 0 || !steps.is_multiple_of(time_stride) {
        return Err(invalid(
            "time_stride",
            format!("must divide the path's {steps} steps, got {time_stride}"),
        ));
    }
    let t_grid = TimeGrid::new(path.grid().horizon(), steps / time_stride)?;
    let eps = band.epsilon;
    let scale = 0.5 / eps;
    let dt = path.grid().dt();
    let nx = x_grid.len();
    let mut acc = vec![0.0; nx];
    let mut values = Vec::with_capacity(t_grid.len() * nx);
    values.extend(std::iter::repeat_n(0.0, nx));
    let v = path.values();
    for i in 0..steps {
        let xi = v[i];
        // nodes with x_j - eps <= X_i < x_j + eps
        let start = x_grid.partition_point(|&xj| xj + eps <= xi);
        let end = x_grid.partition_point(|&xj| xj - eps <= xi);
        if start < end {
            let w = weight.step(dt, v[i + 1] - xi);
            for a in &mut acc[start..end] {
                *a += w;
            }
        }
        if (i + 1) % time_stride == 0 {
            values.extend(acc.iter().map(|a| a * scale));
        }
    }
    Ok(LocalTimeField {
        t_grid,
        time_stride,
        x_grid: x_grid.to_vec(),
        band: *band,
        weight,
        values,
    })
}

/// `E[L_t^x] = int_0^t p(s, x) ds` for a standard Wiener process started
/// at 0, with `p(s, .)` the `N(0, s)` density.
///
/// The substitution `s = u^2` turns the integrand into the bounded function
/// `sqrt(2/pi) exp(-x^2 / 2u^2)` on `[0, sqrt(t)]`, which adaptive Simpson
/// integrates to a relative accuracy of `1e-10`.
pub fn expected_local_time_gaussian(t: f64, x: f64) -> Result<f64> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(invalid("t", format!("must be finite and nonnegative, got {t}")));
    }
    if !x.is_finite() {
        return Err(invalid("x", "must be finite"));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let c = (2.0 / PI).sqrt();
    let x2 = x * x;
    let f = move |u: f64| {
        if u == 0.0 {
            if x2 == 0.0 {
                c
            } else {
                0.0
            }
        } else {
            c * (-x2 / (2.0 * u * u)).exp()
        }
    };
    Ok(adaptive_simpson(&f, 0.0, t.sqrt(), 1e-10))
}

/// Exact expectation of the discrete two-sided band estimator on standard
/// Wiener paths started at 0:
/// `sum_i dt P(x - eps <= W_{t_i} < x + eps) / (2 eps)` over the left
/// endpoints of the grid. Either occupation weight gives the same value,
/// since `E[(dW_i)^2 | W_{t_i}] = dt`.
///
/// The gap to [`expected_local_time_gaussian`] is the bias of the estimator
/// at finite `(dt, eps)`.
pub fn expected_band_local_time_gaussian(grid: TimeGrid, x: f64, band: &BandConfig) -> Result<f64> {
    if !x.is_finite() {
        return Err(invalid("x", "must be finite"));
    }
    let eps = band.epsilon();
    let dt = grid.dt();
    let mut acc = if x - eps <= 0.0 && 0.0 < x + eps { dt } else { 0.0 };
    for i in 1..grid.steps() {
        let n = Normal::new(0.0, grid.time(i).sqrt()).expect("positive time");
        acc += dt * (n.cdf(x + eps) - n.cdf(x - eps));
    }
    Ok(acc / (2.0 * eps))
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(fa, fm, fb, a, b);
    // absolute target from a coarse magnitude estimate
    let scale = (b - a) * fa.abs().max(fm.abs()).max(fb.abs());
    let tol = (rel_tol * scale).max(f64::MIN_POSITIVE);
    recurse(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Mean and standard error of one level's local-time samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSummary {
    pub x: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl EnsembleSummary {
    /// Summation runs in sample order, so the result is reproducible.
    pub fn from_samples(x: f64, samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::TooFewSamples(n));
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(Self {
            x,
            mean,
            stderr: (var / n as f64).sqrt(),
            n,
        })
    }
}

/// CSV `x,mean_L,stderr,n`.
pub fn write_summary_csv<W: Write>(rows: &[EnsembleSummary], mut w: W) -> io::Result<()> {
    writeln!(w, "x,mean_L,stderr,n")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", num(r.x), num(r.mean), num(r.stderr), r.n)?;
    }
    Ok(())
}
