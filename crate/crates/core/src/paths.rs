//! Discretely sampled paths: Wiener processes, Euler–Maruyama diffusions,
//! realized quadratic variation and running extremes.
//!
//! Every replicate draws its Gaussian increments from its own ChaCha8
//! stream keyed on `(seed, replicate)`, so an ensemble generated in
//! parallel is bit-identical to one generated sequentially.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::csv::num;
use crate::error::{invalid, Error, Result};

/// Uniform grid `t_i = i * dt`, `i = 0..=steps`, on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("steps must be at least 1".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of grid points, `steps + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        let dt = self.dt();
        (0..=self.steps).map(move |i| i as f64 * dt)
    }

    /// Number of whole steps contained in `[0, t]`, clamped to `steps`.
    /// Times within a relative `1e-9` of a grid point count as that point.
    pub fn steps_until(&self, t: f64) -> usize {
        if t <= 0.0 {
            return 0;
        }
        let k = (t / self.dt() + 1e-9).floor();
        (k as usize).min(self.steps)
    }
}

/// A trajectory sampled on a [`TimeGrid`], optionally carrying the driving
/// Gaussian increments `dW_i` used to generate it.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    grid: TimeGrid,
    values: Vec<f64>,
    driver_increments: Option<Vec<f64>>,
}

impl SamplePath {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidPath(format!(
                "expected {} values for {} steps, got {}",
                grid.len(),
                grid.steps(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidPath(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            grid,
            values,
            driver_increments: None,
        })
    }

    pub fn with_driver(grid: TimeGrid, values: Vec<f64>, driver: Vec<f64>) -> Result<Self> {
        if driver.len() != grid.steps() {
            return Err(Error::InvalidPath(format!(
                "expected {} driver increments, got {}",
                grid.steps(),
                driver.len()
            )));
        }
        let mut path = Self::new(grid, values)?;
        path.driver_increments = Some(driver);
        Ok(path)
    }

    /// Samples `f(t_i)` on the grid.
    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.times().map(f).collect())
    }

    pub(crate) fn from_parts(grid: TimeGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            grid,
            values,
            driver_increments: None,
        }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn driver_increments(&self) -> Option<&[f64]> {
        self.driver_increments.as_deref()
    }

    pub fn initial(&self) -> f64 {
        self.values[0]
    }

    pub fn terminal(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Path increments `X_{t_{i+1}} - X_{t_i}`.
    pub fn increments(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.windows(2).map(|w| w[1] - w[0])
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Pointwise map, dropping any driver increments.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<SamplePath> {
        SamplePath::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Linear interpolation of the path at time `t`, clamped to the horizon.
    pub fn value_at(&self, t: f64) -> f64 {
        interpolate(&self.values, self.grid.dt(), t)
    }

    /// CSV with header `t,value[,dW]`. The `dW` column of row `i` holds the
    /// increment driving step `[t_i, t_{i+1})`; it is empty on the last row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        match &self.driver_increments {
            None => {
                writeln!(w, "t,value")?;
                for (t, v) in self.grid.times().zip(&self.values) {
                    writeln!(w, "{},{}", num(t), num(*v))?;
                }
            }
            Some(dw) => {
                writeln!(w, "t,value,dW")?;
                for (i, (t, v)) in self.grid.times().zip(&self.values).enumerate() {
                    match dw.get(i) {
                        Some(d) => writeln!(w, "{},{},{}", num(t), num(*v), num(*d))?,
                        None => writeln!(w, "{},{},", num(t), num(*v))?,
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn interpolate(values: &[f64], dt: f64, t: f64) -> f64 {
    let last = values.len() - 1;
    let pos = (t / dt).max(0.0);
    let i = pos.floor() as usize;
    if i >= last {
        return values[last];
    }
    let frac = pos - i as f64;
    if frac == 0.0 {
        values[i]
    } else {
        values[i] + frac * (values[i + 1] - values[i])
    }
}

/// Seed, replicate count and grid of a Monte Carlo ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub seed: u64,
    pub replicates: usize,
    pub grid: TimeGrid,
}

impl SimulationConfig {
    pub fn new(seed: u64, replicates: usize, grid: TimeGrid) -> Result<Self> {
        if replicates == 0 {
            return Err(invalid("replicates", "must be at least 1"));
        }
        Ok(Self {
            seed,
            replicates,
            grid,
        })
    }

    /// Same ensemble shape on an unrelated seed stream. Used to draw the two
    /// sides of a two-sample comparison independently.
    pub fn derive_stream(&self, stream: u64) -> Self {
        Self {
            seed: splitmix64(self.seed ^ splitmix64(stream.wrapping_add(0x243F_6A88_85A3_08D3))),
            ..*self
        }
    }

    pub fn with_grid(&self, grid: TimeGrid) -> Self {
        Self { grid, ..*self }
    }

    pub fn with_replicates(&self, replicates: usize) -> Self {
        Self {
            replicates: replicates.max(1),
            ..*self
        }
    }

    /// Generator for one replicate.
    pub fn rng(&self, replicate: usize) -> ChaCha8Rng {
        replicate_rng(self.seed, replicate)
    }

    /// Runs `f` on every replicate index and returns the results in
    /// replicate order. Work is spread over the rayon pool; the output does
    /// not depend on scheduling.
    pub fn map_replicates<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..self.replicates).into_par_iter().map(f).collect()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

fn gaussian_increments(grid: TimeGrid, seed: u64, replicate: usize) -> Vec<f64> {
    let mut rng = replicate_rng(seed, replicate);
    let scale = grid.dt().sqrt();
    (0..grid.steps())
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

type CoefficientFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Drift `mu(x)`, diffusion `sigma(x)` and initial value of
/// `dX = mu(X) dt + sigma(X) dW`.
#[derive(Clone)]
pub struct ItoCoefficients {
    drift: CoefficientFn,
    diffusion: CoefficientFn,
    initial: f64,
}

impl ItoCoefficients {
    pub fn new<D, S>(drift: D, diffusion: S, initial: f64) -> Self
    where
        D: Fn(f64) -> f64 + Send + Sync + 'static,
        S: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            initial,
        }
    }

    pub fn constant(mu: f64, sigma: f64, initial: f64) -> Self {
        Self::new(move |_| mu, move |_| sigma, initial)
    }

    pub fn drift(&self, x: f64) -> f64 {
        (self.drift)(x)
    }

    pub fn diffusion(&self, x: f64) -> f64 {
        (self.diffusion)(x)
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn with_initial(&self, initial: f64) -> Self {
        Self {
            initial,
            ..self.clone()
        }
    }
}

impl fmt::Debug for ItoCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ItoCoefficients")
            .field("initial", &self.initial)
            .finish_non_exhaustive()
    }
}

/// One standard Wiener replicate: `W_0 = 0`, `dW_i ~ N(0, dt)`.
pub fn wiener_path(grid: TimeGrid, seed: u64, replicate: usize) -> SamplePath {
    let driver = gaussian_increments(grid, seed, replicate);
    let mut values = Vec::with_capacity(grid.len());
    let mut w = 0.0;
    values.push(w);
    for dw in &driver {
        w += dw;
        values.push(w);
    }
    SamplePath {
        grid,
        values,
        driver_increments: Some(driver),
    }
}

pub fn simulate_wiener(config: &SimulationConfig) -> Vec<SamplePath> {
    config.map_replicates(|r| wiener_path(config.grid, config.seed, r))
}

/// One Euler–Maruyama replicate `X_{i+1} = X_i + mu(X_i) dt + sigma(X_i) dW_i`,
/// driven by the same increments as [`wiener_path`] for the same seed.
pub fn ito_path(
    coeffs: &ItoCoefficients,
    grid: TimeGrid,
    seed: u64,
    replicate: usize,
) -> Result<SamplePath> {
    let driver = gaussian_increments(grid, seed, replicate);
    let dt = grid.dt();
    let mut values = Vec::with_capacity(grid.len());
    let mut x = coeffs.initial;
    if !x.is_finite() {
        return Err(Error::Divergence { step: 0, value: x });
    }
    values.push(x);
    for (i, dw) in driver.iter().enumerate() {
        x = x + coeffs.drift(x) * dt + coeffs.diffusion(x) * dw;
        if !x.is_finite() {
            return Err(Error::Divergence { step: i + 1, value: x });
        }
        values.push(x);
    }
    Ok(SamplePath {
        grid,
        values,
        driver_increments: Some(driver),
    })
}

pub fn simulate_ito(coeffs: &ItoCoefficients, config: &SimulationConfig) -> Result<Vec<SamplePath>> {
    config
        .map_replicates(|r| ito_path(coeffs, config.grid, config.seed, r))
        .into_iter()
        .collect()
}

/// Running sum of squared increments: value at `t_k` is
/// `sum_{i<k} (X_{t_{i+1}} - X_{t_i})^2`.
pub fn quadratic_variation(path: &SamplePath) -> SamplePath {
    let mut values = Vec::with_capacity(path.values.len());
    let mut acc = 0.0;
    values.push(acc);
    for d in path.increments() {
        acc += d * d;
        values.push(acc);
    }
    SamplePath::from_parts(path.grid, values)
}

/// Terminal realized quadratic variation without materializing the path.
pub fn realized_qv(values: &[f64]) -> f64 {
    values.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum()
}

/// Running maximum and running minimum of the path.
pub fn running_extremes(path: &SamplePath) -> (SamplePath, SamplePath) {
    let mut hi = f64::NEG_INFINITY;
    let mut lo = f64::INFINITY;
    let mut maxes = Vec::with_capacity(path.values.len());
    let mut mins = Vec::with_capacity(path.values.len());
    for &v in &path.values {
        hi = hi.max(v);
        lo = lo.min(v);
        maxes.push(hi);
        mins.push(lo);
    }
    (
        SamplePath::from_parts(path.grid, maxes),
        SamplePath::from_parts(path.grid, mins),
    )
}
