//! Skorohod reflection at zero and regulated SDEs.
//!
//! For a path `x` with `x_0 = 0` the regulator is the running maximum of
//! the negative part, `f_t = max_{s <= t} max(-x_s, 0)`, and `z = x + f`
//! is the regulated path.

use std::io::{self, Write};

use crate::csv::num;
use crate::error::{Error, Result};
use crate::localtime::{one_sided_band_local_time_terminal, BandConfig};
use crate::occupation::OccupationWeight;
use crate::paths::{realized_qv, ItoCoefficients, SamplePath, SimulationConfig, TimeGrid};

/// Input path `x`, regulated path `z` and regulator `f` on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectedPair {
    x: SamplePath,
    z: SamplePath,
    f: SamplePath,
}

impl ReflectedPair {
    /// Assembles a pair without checking the reflection properties; use
    /// [`verify_skorohod`] for that.
    pub fn new(x: SamplePath, z: SamplePath, f: SamplePath) -> Result<Self> {
        if x.grid() != z.grid() || x.grid() != f.grid() {
            return Err(Error::InvalidPath("x, z and f must share a grid".into()));
        }
        Ok(Self { x, z, f })
    }

    pub fn x(&self) -> &SamplePath {
        &self.x
    }

    pub fn z(&self) -> &SamplePath {
        &self.z
    }

    pub fn f(&self) -> &SamplePath {
        &self.f
    }

    pub fn grid(&self) -> TimeGrid {
        self.x.grid()
    }

    /// Complementarity tolerance `2 max|dx| / max z`. Whenever the
    /// regulator moves on step `i`, the left-endpoint `z_i` is at most one
    /// step displacement away from 0, so an exact reflection always meets
    /// this bound.
    pub fn grid_tolerance(&self) -> f64 {
        let max_z = self.z.max();
        if max_z <= 0.0 {
            return 0.0;
        }
        let max_step = self.x.increments().map(f64::abs).fold(0.0, f64::max);
        2.0 * max_step / max_z
    }

    /// CSV `t,x,z,f`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,x,z,f")?;
        for (i, t) in self.grid().times().enumerate() {
            writeln!(
                w,
                "{},{},{},{}",
                num(t),
                num(self.x.values()[i]),
                num(self.z.values()[i]),
                num(self.f.values()[i])
            )?;
        }
        Ok(())
    }
}

/// Discrete Skorohod map by prefix scan.
pub fn skorohod_map(path: &SamplePath) -> Result<ReflectedPair> {
    let x = path.values();
    if x[0] != 0.0 {
        return Err(Error::NonzeroStart(x[0]));
    }
    let mut f = Vec::with_capacity(x.len());
    let mut z = Vec::with_capacity(x.len());
    let mut reg = 0.0_f64;
    for &v in x {
        reg = reg.max(-v);
        f.push(reg);
        z.push(v + reg);
    }
    let grid = path.grid();
    Ok(ReflectedPair {
        x: SamplePath::from_parts(grid, x.to_vec()),
        z: SamplePath::from_parts(grid, z),
        f: SamplePath::from_parts(grid, f),
    })
}

/// Outcome of [`verify_skorohod`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkorohodReport {
    pub nonnegative: bool,
    pub nondecreasing: bool,
    pub additive: bool,
    /// `z_0 f_0 + sum_i z_{t_i} (f_{t_{i+1}} - f_{t_i})`; the first term
    /// charges a jump of the regulator at time 0.
    pub complementarity: f64,
    pub complementarity_bound: f64,
    pub complementary: bool,
}

impl SkorohodReport {
    pub fn passed(&self) -> bool {
        self.nonnegative && self.nondecreasing && self.additive && self.complementary
    }
}

/// Checks `z >= 0`, `f` nondecreasing and `z = x + f` exactly, and the
/// summed complementarity `sum z df <= tol * f_T * max z`.
pub fn verify_skorohod(pair: &ReflectedPair, complementarity_tolerance: f64) -> SkorohodReport {
    let x = pair.x.values();
    let z = pair.z.values();
    let f = pair.f.values();
    let nonnegative = z.iter().all(|&v| v >= 0.0);
    let nondecreasing = f.windows(2).all(|w| w[1] >= w[0]);
    let additive = x.iter().zip(f).zip(z).all(|((a, b), c)| a + b == *c);
    let mut comp = z[0] * f[0];
    for i in 0..f.len() - 1 {
        comp += z[i] * (f[i + 1] - f[i]);
    }
    let bound = complementarity_tolerance * pair.f.terminal() * pair.z.max();
    SkorohodReport {
        nonnegative,
        nondecreasing,
        additive,
        complementarity: comp,
        complementarity_bound: bound,
        complementary: comp <= bound,
    }
}

/// Regulated diffusion `dX = mu(X) dt + sigma(X) dW + dF` started at 0.
#[derive(Debug, Clone)]
pub struct RegulatedSdeSpec {
    coeffs: ItoCoefficients,
    lipschitz_hint: Option<f64>,
}

impl RegulatedSdeSpec {
    pub fn new(coeffs: ItoCoefficients) -> Result<Self> {
        if coeffs.initial() != 0.0 {
            return Err(Error::NonzeroStart(coeffs.initial()));
        }
        Ok(Self {
            coeffs,
            lipschitz_hint: None,
        })
    }

    pub fn with_lipschitz_hint(mut self, k: f64) -> Self {
        self.lipschitz_hint = Some(k);
        self
    }

    pub fn coeffs(&self) -> &ItoCoefficients {
        &self.coeffs
    }

    pub fn lipschitz_hint(&self) -> Option<f64> {
        self.lipschitz_hint
    }
}

/// One projected-Euler replicate.
///
/// The step `z~ = z_i + mu(z_i) dt + sigma(z_i) dW_i`, `z_{i+1} = max(z~, 0)`,
/// `dF_i = z_{i+1} - z~` is carried out through the running regulator: the
/// free part `x` accumulates the Euler increments and
/// `f_{i+1} = max(f_i, -x_{i+1})`, `z_{i+1} = x_{i+1} + f_{i+1}`. The two
/// forms agree algebraically, and this one keeps `z = x + f` exact in
/// floating point. With `mu = 0`, `sigma = 1` the result is bit-identical to
/// [`skorohod_map`] of the Wiener path with the same seed.
pub fn regulated_path(
    spec: &RegulatedSdeSpec,
    grid: TimeGrid,
    seed: u64,
    replicate: usize,
) -> Result<ReflectedPair> {
    let free = crate::paths::wiener_path(grid, seed, replicate);
    let driver = free.driver_increments().expect("wiener paths carry increments");
    let dt = grid.dt();
    let c = &spec.coeffs;
    let mut xs = Vec::with_capacity(grid.len());
    let mut zs = Vec::with_capacity(grid.len());
    let mut fs = Vec::with_capacity(grid.len());
    let (mut x, mut f, mut z) = (0.0_f64, 0.0_f64, 0.0_f64);
    xs.push(x);
    fs.push(f);
    zs.push(z);
    for (i, dw) in driver.iter().enumerate() {
        x = x + c.drift(z) * dt + c.diffusion(z) * dw;
        if !x.is_finite() {
            return Err(Error::Divergence { step: i + 1, value: x });
        }
        f = f.max(-x);
        z = x + f;
        xs.push(x);
        fs.push(f);
        zs.push(z);
    }
    Ok(ReflectedPair {
        x: SamplePath::from_parts(grid, xs),
        z: SamplePath::from_parts(grid, zs),
        f: SamplePath::from_parts(grid, fs),
    })
}

pub fn simulate_regulated_sde(spec: &RegulatedSdeSpec, config: &SimulationConfig) -> Result<Vec<ReflectedPair>> {
    config
        .map_replicates(|r| regulated_path(spec, config.grid, config.seed, r))
        .into_iter()
        .collect()
}

/// Terminal regulator against half the one-sided boundary local time of
/// the regulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegulatorGap {
    pub regulator: f64,
    /// `(1/2) (1/eps) int 1{0 <= Z < eps} d<Z>`.
    pub half_local_time: f64,
    pub relative_gap: f64,
    /// The regulated path has zero realized quadratic variation while the
    /// regulator moved: the identification of `F` with local time needs a
    /// nondegenerate diffusion, so a gap is expected here.
    pub degenerate_weight: bool,
}

pub fn regulator_vs_localtime(pair: &ReflectedPair, band: &BandConfig) -> RegulatorGap {
    let regulator = pair.f.terminal();
    let half_local_time =
        0.5 * one_sided_band_local_time_terminal(&pair.z, 0.0, band, OccupationWeight::QuadraticVariation);
    RegulatorGap {
        regulator,
        half_local_time,
        relative_gap: relative_gap(regulator, half_local_time),
        degenerate_weight: regulator > 0.0 && realized_qv(pair.z.values()) == 0.0,
    }
}

/// `|a - b| / max(|a|, |b|)`, and 0 when both vanish.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
