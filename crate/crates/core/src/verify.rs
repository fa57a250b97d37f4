//! Kolmogorov–Smirnov machinery and the named distributional checks of
//! Brownian local time.

use std::fmt::Write as _;
use std::io::{self, Write};

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::statistics::Statistics;

use crate::csv::num;
use crate::error::{invalid, Error, Result};
use crate::localtime::{
    band_local_time_terminal, covering_x_grid, local_time_field_strided, one_sided_band_local_time_terminal,
    tanaka_local_time_terminal, BandConfig,
};
use crate::occupation::OccupationWeight;
use crate::paths::{realized_qv, wiener_path, SamplePath, SimulationConfig};

/// Sorted sample with its empirical CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    sorted: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::TooFewSamples(samples.len()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(invalid("samples", "must be finite"));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { sorted: samples })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// `#{s <= x} / n`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&s| s <= x) as f64 / self.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.sorted.iter().mean()
    }
}

/// Asymptotic Kolmogorov critical value `c(alpha) = sqrt(-ln(alpha / 2) / 2)`.
pub fn kolmogorov_critical_value(alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
    pub n_effective: usize,
}

impl KsResult {
    fn new(statistic: f64, threshold: f64, n_effective: usize) -> Self {
        Self {
            statistic,
            threshold,
            pass: statistic <= threshold,
            n_effective,
        }
    }

    /// Threshold multiplied by `factor`. Identities checked on discretized
    /// paths carry an O(sqrt(dt)) bias, so they use an inflated threshold.
    pub fn inflated(self, factor: f64) -> Self {
        Self::new(self.statistic, self.threshold * factor, self.n_effective)
    }

    pub fn with_threshold(self, threshold: f64) -> Self {
        Self::new(self.statistic, threshold, self.n_effective)
    }
}

pub fn ks_two_sample(a: &EmpiricalDistribution, b: &EmpiricalDistribution, alpha: f64) -> KsResult {
    let (x, y) = (a.sorted(), b.sorted());
    let (na, nb) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let v = x[i].min(y[j]);
        while i < na && x[i] <= v {
            i += 1;
        }
        while j < nb && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let scale = ((na + nb) as f64 / (na as f64 * nb as f64)).sqrt();
    KsResult::new(d, kolmogorov_critical_value(alpha) * scale, na * nb / (na + nb))
}

pub fn ks_one_sample(a: &EmpiricalDistribution, cdf: impl Fn(f64) -> f64, alpha: f64) -> KsResult {
    let n = a.len() as f64;
    let d = a
        .sorted()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (((i + 1) as f64 / n) - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max);
    KsResult::new(d, kolmogorov_critical_value(alpha) / n.sqrt(), a.len())
}

/// CDF of `|N(0, t)|`; also the law of `sup_{s<=t} W_s` and of `L_t^0`.
pub fn half_normal_cdf(t: f64) -> impl Fn(f64) -> f64 {
    let normal = Normal::new(0.0, t.sqrt()).expect("positive variance");
    move |x| if x <= 0.0 { 0.0 } else { 2.0 * normal.cdf(x) - 1.0 }
}

/// One named pass/fail line of a report. A check passes when
/// `statistic <= threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
    pub n: usize,
}

impl Check {
    pub fn at_most(name: impl Into<String>, statistic: f64, threshold: f64, n: usize) -> Self {
        Self {
            name: name.into(),
            statistic,
            threshold,
            pass: statistic <= threshold,
            n,
        }
    }

    pub fn from_ks(name: impl Into<String>, ks: &KsResult) -> Self {
        Self {
            name: name.into(),
            statistic: ks.statistic,
            threshold: ks.threshold,
            pass: ks.pass,
            n: ks.n_effective,
        }
    }

    /// Negative control: passes exactly when `inner` fails.
    pub fn rejected(name: impl Into<String>, inner: &Check) -> Self {
        Self {
            name: name.into(),
            statistic: inner.statistic,
            threshold: inner.threshold,
            pass: !inner.pass,
            n: inner.n,
        }
    }
}

/// Checks and auxiliary measurements produced by one verification run.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub name: String,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub measurements: Vec<(String, f64)>,
}

impl Report {
    pub fn new(name: impl Into<String>, seed: u64) -> Self {
        Self {
            name: name.into(),
            seed,
            checks: Vec::new(),
            measurements: Vec::new(),
        }
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn measure(&mut self, key: impl Into<String>, value: f64) {
        self.measurements.push((key.into(), value));
    }

    /// Appends another report's checks and measurements under `prefix.`.
    pub fn absorb(&mut self, prefix: &str, other: Report) {
        for mut c in other.checks {
            c.name = format!("{prefix}.{}", c.name);
            self.checks.push(c);
        }
        for (k, v) in other.measurements {
            self.measurements.push((format!("{prefix}.{k}"), v));
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn measurement(&self, key: &str) -> Option<f64> {
        self.measurements.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// `key = value` lines, one per check field and measurement.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "experiment = {}", self.name);
        let _ = writeln!(s, "seed = {}", self.seed);
        for c in &self.checks {
            let _ = writeln!(s, "check.{}.statistic = {}", c.name, num(c.statistic));
            let _ = writeln!(s, "check.{}.threshold = {}", c.name, num(c.threshold));
            let _ = writeln!(s, "check.{}.pass = {}", c.name, c.pass);
            let _ = writeln!(s, "check.{}.n = {}", c.name, c.n);
        }
        for (k, v) in &self.measurements {
            let _ = writeln!(s, "measure.{k} = {}", num(*v));
        }
        let _ = writeln!(s, "pass = {}", self.passed());
        s
    }

    /// CSV `check,statistic,threshold,pass,n,seed`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "check,statistic,threshold,pass,n,seed")?;
        for c in &self.checks {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                c.name,
                num(c.statistic),
                num(c.threshold),
                c.pass,
                c.n,
                self.seed
            )?;
        }
        Ok(())
    }
}

/// Significance level of every KS check below.
pub const ALPHA: f64 = 0.01;
/// Threshold inflation for identities compared on discretized paths.
pub const DISCRETE_INFLATION: f64 = 2.0;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let sa = a.iter().std_dev();
    let sb = b.iter().std_dev();
    if sa == 0.0 || sb == 0.0 {
        return f64::INFINITY;
    }
    a.iter().covariance(b.iter()) / (sa * sb)
}

/// `L_T^0` (discrete Tanaka) against `S_T = max_{s<=T} W_s` on independent
/// ensembles, plus `S_T` against its exact half-normal law.
pub fn check_localtime_maximum_identity(config: &SimulationConfig) -> Result<Report> {
    let t = config.grid.horizon();
    let a = config.derive_stream(1);
    let b = config.derive_stream(2);
    let local = a.map_replicates(|r| tanaka_local_time_terminal(&wiener_path(a.grid, a.seed, r), 0.0));
    let maxima = b.map_replicates(|r| wiener_path(b.grid, b.seed, r).max());
    let local = EmpiricalDistribution::new(local)?;
    let maxima = EmpiricalDistribution::new(maxima)?;

    let mut report = Report::new("localtime_maximum_identity", config.seed);
    let ks = ks_two_sample(&local, &maxima, ALPHA).inflated(DISCRETE_INFLATION);
    report.push(Check::from_ks("two_sample_ks", &ks));
    report.push(Check::from_ks(
        "maximum_half_normal_ks",
        &ks_one_sample(&maxima, half_normal_cdf(t), ALPHA),
    ));
    let exact_mean = (2.0 * t / std::f64::consts::PI).sqrt();
    report.measure("mean_local_time", local.mean());
    report.measure("mean_maximum", maxima.mean());
    report.measure("exact_mean", exact_mean);
    Ok(report)
}

/// Joint law `(S - W, S) = (|W|, L^0)` at the horizon: both marginals by
/// two-sample KS and the cross correlation.
pub fn check_joint_identity(config: &SimulationConfig) -> Result<Report> {
    let a = config.derive_stream(1);
    let b = config.derive_stream(2);
    let left: Vec<(f64, f64)> = a.map_replicates(|r| {
        let p = wiener_path(a.grid, a.seed, r);
        let s = p.max();
        (s - p.terminal(), s)
    });
    let right: Vec<(f64, f64)> = b.map_replicates(|r| {
        let p = wiener_path(b.grid, b.seed, r);
        (p.terminal().abs(), tanaka_local_time_terminal(&p, 0.0))
    });
    let (drawdown, maximum): (Vec<f64>, Vec<f64>) = left.into_iter().unzip();
    let (abs_w, local): (Vec<f64>, Vec<f64>) = right.into_iter().unzip();
    let corr_left = pearson(&drawdown, &maximum);
    let corr_right = pearson(&abs_w, &local);

    let mut report = Report::new("joint_identity", config.seed);
    let n = drawdown.len();
    let drawdown = EmpiricalDistribution::new(drawdown)?;
    let abs_w = EmpiricalDistribution::new(abs_w)?;
    let maximum = EmpiricalDistribution::new(maximum)?;
    let local = EmpiricalDistribution::new(local)?;
    report.push(Check::from_ks(
        "reflected_marginal_ks",
        &ks_two_sample(&drawdown, &abs_w, ALPHA).inflated(DISCRETE_INFLATION),
    ));
    report.push(Check::from_ks(
        "local_time_marginal_ks",
        &ks_two_sample(&maximum, &local, ALPHA).inflated(DISCRETE_INFLATION),
    ));
    report.push(Check::at_most("correlation_gap", (corr_left - corr_right).abs(), 0.03, n));
    report.measure("correlation_drawdown_maximum", corr_left);
    report.measure("correlation_abs_w_local_time", corr_right);
    Ok(report)
}

/// `|W|` against `W`: the one-sided band at 0 of `|W|` sees twice the
/// two-sided local time of `W`; levels below `-3 eps` are never visited; a
/// positive level `x` collects `L^x(W) + L^{-x}(W)`. Lebesgue weight
/// throughout.
pub fn check_abs_w_localtime(config: &SimulationConfig, band: &BandConfig, positive_level: f64) -> Result<Report> {
    let eps = band.epsilon();
    if !(positive_level >= 3.0 * eps) {
        return Err(invalid("positive_level", "must be at least 3 epsilon"));
    }
    let w = OccupationWeight::Lebesgue;
    let rows: Vec<[f64; 6]> = config.map_replicates(|r| {
        let p = wiener_path(config.grid, config.seed, r);
        let abs = p.map(f64::abs).expect("finite path");
        [
            one_sided_band_local_time_terminal(&abs, 0.0, band, w),
            band_local_time_terminal(&p, 0.0, band, w),
            band_local_time_terminal(&abs, -3.5 * eps, band, w).max(band_local_time_terminal(&abs, -10.0 * eps, band, w)),
            band_local_time_terminal(&abs, positive_level, band, w),
            band_local_time_terminal(&p, positive_level, band, w),
            band_local_time_terminal(&p, -positive_level, band, w),
        ]
    });
    let n = rows.len() as f64;
    let mean = |k: usize| rows.iter().map(|r| r[k]).sum::<f64>() / n;
    let ratio = mean(0) / mean(1);
    let negative_max = rows.iter().map(|r| r[2]).fold(0.0, f64::max);
    let folded = mean(3);
    let unfolded = mean(4) + mean(5);

    let mut report = Report::new("abs_w_localtime", config.seed);
    report.push(Check::at_most("factor_two", (ratio - 2.0).abs(), 0.1, rows.len()));
    report.push(Check::at_most("negative_level_zero", negative_max, 0.0, rows.len()));
    report.push(Check::at_most(
        "positive_level_sum",
        crate::reflection::relative_gap(folded, unfolded),
        0.05,
        rows.len(),
    ));
    report.measure("ratio", ratio);
    report.measure("positive_level", positive_level);
    report.measure("abs_w_positive_mean", folded);
    report.measure("w_two_level_mean", unfolded);
    Ok(report)
}

/// Standard-Wiener acceptance of a path sample: terminal law `N(0, T)`,
/// terminal quadratic variation near `T` on average, and no lag-one
/// correlation between increments.
pub fn check_standard_wiener(paths: &[SamplePath]) -> Result<Report> {
    let first = paths.first().ok_or(Error::TooFewSamples(0))?;
    let t = first.grid().horizon();
    if paths.iter().any(|p| p.grid() != first.grid()) {
        return Err(invalid("paths", "must share a grid"));
    }
    let terminal = EmpiricalDistribution::new(paths.iter().map(|p| p.terminal()).collect())?;
    let normal = Normal::new(0.0, t.sqrt()).expect("positive horizon");
    let qv_mean = paths.iter().map(|p| realized_qv(p.values())).sum::<f64>() / paths.len() as f64;
    let (mut lead, mut lag) = (Vec::new(), Vec::new());
    for p in paths {
        let d: Vec<f64> = p.increments().collect();
        for w in d.windows(2) {
            lead.push(w[0]);
            lag.push(w[1]);
        }
    }
    let m = lead.len();
    let rho = if m < 2 { f64::INFINITY } else { pearson(&lead, &lag).abs() };

    let mut report = Report::new("standard_wiener", 0);
    report.push(Check::from_ks(
        "terminal_normal_ks",
        &ks_one_sample(&terminal, |x| normal.cdf(x), ALPHA),
    ));
    report.push(Check::at_most("mean_qv_over_t", (qv_mean / t - 1.0).abs(), 0.05, paths.len()));
    report.push(Check::at_most("lag_one_autocorrelation", rho, 4.0 / (m.max(1) as f64).sqrt(), m));
    report.measure("mean_terminal_qv", qv_mean);
    Ok(report)
}

/// Test functions for the occupation density identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFunction {
    /// `exp(-x^2)`.
    GaussianBump,
    /// Indicator of `[a, b)`.
    IndicatorInterval { a: f64, b: f64 },
    ConstantOne,
}

impl TestFunction {
    pub const NAMES: [&'static str; 3] = ["gaussian_bump", "indicator_interval", "constant_one"];

    /// Registry lookup; the indicator defaults to `[0, 1)`.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "gaussian_bump" => Ok(Self::GaussianBump),
            "indicator_interval" => Ok(Self::IndicatorInterval { a: 0.0, b: 1.0 }),
            "constant_one" => Ok(Self::ConstantOne),
            _ => Err(invalid(
                "test_function",
                format!("unknown `{name}`, expected one of {}", Self::NAMES.join(", ")),
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::GaussianBump => "gaussian_bump",
            Self::IndicatorInterval { .. } => "indicator_interval",
            Self::ConstantOne => "constant_one",
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Self::GaussianBump => (-x * x).exp(),
            Self::IndicatorInterval { a, b } => {
                if a <= x && x < b {
                    1.0
                } else {
                    0.0
                }
            }
            Self::ConstantOne => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OccupationGap {
    /// `sum_i f(X_{t_i}) (dX_i)^2`.
    pub lhs: f64,
    /// `sum_j f(x_j) L_T^{x_j} w_j` over a covering level grid.
    pub rhs: f64,
    pub relative_gap: f64,
}

/// Occupation density identity at the horizon, with the quadratic-variation
/// weighted field on levels spaced `spacing` apart.
pub fn occupation_density_identity(
    path: &SamplePath,
    f: TestFunction,
    band: &BandConfig,
    spacing: f64,
) -> Result<OccupationGap> {
    let v = path.values();
    let lhs: f64 = v.windows(2).map(|w| f.eval(w[0]) * (w[1] - w[0]).powi(2)).sum();
    let xs = covering_x_grid(path, band, spacing)?;
    let steps = path.grid().steps();
    let field = local_time_field_strided(path, &xs, band, OccupationWeight::QuadraticVariation, steps)?;
    let rhs = field.integrate_row(1, |x| f.eval(x));
    Ok(OccupationGap {
        lhs,
        rhs,
        relative_gap: crate::reflection::relative_gap(lhs, rhs),
    })
}

/// Smallest nondecreasing staircase `g` with `g_0 = 0` and
/// `x_i + g_i >= 0`, found by exhaustive dynamic programming over all
/// staircases taking values in `{0} ∪ {-x_j}`. The pointwise-minimal
/// regulator has the smallest sum, so minimizing the sum of value ranks
/// (integers, no rounding ties) recovers it. `None` when `x_0 < 0`.
pub fn minimal_staircase(x: &[f64]) -> Option<Vec<f64>> {
    if x.is_empty() || x[0] < 0.0 {
        return None;
    }
    let mut values: Vec<f64> = std::iter::once(0.0).chain(x.iter().map(|&v| (-v).max(0.0))).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let m = values.len();
    const INF: u64 = u64::MAX;
    // cost[i][k]: least rank sum of g_0..g_i with g_i = values[k]
    let mut cost = vec![vec![INF; m]; x.len()];
    let mut from = vec![vec![0usize; m]; x.len()];
    cost[0][0] = 0;
    for i in 1..x.len() {
        let (mut best, mut best_k) = (INF, 0);
        for k in 0..m {
            if cost[i - 1][k] < best {
                best = cost[i - 1][k];
                best_k = k;
            }
            if best < INF && x[i] + values[k] >= 0.0 {
                cost[i][k] = best + k as u64;
                from[i][k] = best_k;
            }
        }
    }
    let last = x.len() - 1;
    let mut k = (0..m).min_by_key(|&k| cost[last][k])?;
    let mut g = vec![0.0; x.len()];
    for i in (0..x.len()).rev() {
        g[i] = values[k];
        if i > 0 {
            k = from[i][k];
        }
    }
    Some(g)
}
