//! Difference-of-convex functions represented by their second-derivative
//! measure `f''(dx) = g(x) dx + sum_i c_i delta_{a_i}`, and the pathwise
//! residual of the extended Itô–Tanaka formula
//!
//! ```text
//! f(X_t) = f(X_0) + int_0^t f'_-(X_s) dX_s + 1/2 int_R L_t^x f''(dx)
//! ```
//!
//! `f` and its left derivative `f'_-` are reconstructed from the measure
//! and an anchor `(x0, f(x0), f'_-(x0))`. The measure is the source of
//! truth: `f'_-(y) - f'_-(x) = f''([x, y))`.

use statrs::function::erf::erf;

use crate::error::{invalid, Error, Result};
use crate::localtime::{band_local_time, LocalTimeField};
use crate::paths::SamplePath;

/// One term of the density part `g` of `f''`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmoothTerm {
    Zero,
    Constant(f64),
    /// `amplitude * exp(-(x - center)^2 / (2 width^2))`.
    GaussianBump { amplitude: f64, center: f64, width: f64 },
}

impl SmoothTerm {
    pub fn density(&self, x: f64) -> f64 {
        match *self {
            SmoothTerm::Zero => 0.0,
            SmoothTerm::Constant(k) => k,
            SmoothTerm::GaussianBump {
                amplitude,
                center,
                width,
            } => amplitude * (-(x - center).powi(2) / (2.0 * width * width)).exp(),
        }
    }

    /// `int_a^b g(y) dy` (oriented).
    fn first_integral(&self, a: f64, b: f64) -> f64 {
        match *self {
            SmoothTerm::Zero => 0.0,
            SmoothTerm::Constant(k) => k * (b - a),
            SmoothTerm::GaussianBump {
                amplitude,
                center,
                width,
            } => {
                let s = std::f64::consts::SQRT_2 * width;
                amplitude * width * (std::f64::consts::PI / 2.0).sqrt() * (erf((b - center) / s) - erf((a - center) / s))
            }
        }
    }

    /// `int_a^b (b - y) g(y) dy` (oriented; nonnegative for `g >= 0`).
    fn second_integral(&self, a: f64, b: f64) -> f64 {
        match *self {
            SmoothTerm::Zero => 0.0,
            SmoothTerm::Constant(k) => 0.5 * k * (b - a) * (b - a),
            SmoothTerm::GaussianBump {
                amplitude,
                center,
                width,
            } => {
                let e = |y: f64| (-(y - center).powi(2) / (2.0 * width * width)).exp();
                (b - center) * self.first_integral(a, b) - amplitude * width * width * (e(a) - e(b))
            }
        }
    }

    fn scaled(&self, s: f64) -> SmoothTerm {
        match *self {
            SmoothTerm::Zero => SmoothTerm::Zero,
            SmoothTerm::Constant(k) => SmoothTerm::Constant(s * k),
            SmoothTerm::GaussianBump {
                amplitude,
                center,
                width,
            } => SmoothTerm::GaussianBump {
                amplitude: s * amplitude,
                center,
                width,
            },
        }
    }
}

/// Point fixing the two integration constants: `f(x0)` and `f'_-(x0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub x0: f64,
    pub value: f64,
    pub left_derivative: f64,
}

/// A difference-of-convex function given by its `f''` measure and anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexCombo {
    smooth: Vec<SmoothTerm>,
    atoms: Vec<(f64, f64)>,
    anchor: Anchor,
}

impl ConvexCombo {
    pub fn new(smooth: Vec<SmoothTerm>, atoms: Vec<(f64, f64)>, anchor: Anchor) -> Result<Self> {
        for t in &smooth {
            match *t {
                SmoothTerm::Zero => {}
                SmoothTerm::Constant(k) if k.is_finite() => {}
                SmoothTerm::GaussianBump {
                    amplitude,
                    center,
                    width,
                } if amplitude.is_finite() && center.is_finite() && width.is_finite() && width > 0.0 => {}
                _ => return Err(invalid("smooth", format!("invalid density term {t:?}"))),
            }
        }
        if atoms.iter().any(|(a, c)| !a.is_finite() || !c.is_finite()) {
            return Err(invalid("atoms", "locations and masses must be finite"));
        }
        if ![anchor.x0, anchor.value, anchor.left_derivative].iter().all(|v| v.is_finite()) {
            return Err(invalid("anchor", "must be finite"));
        }
        Ok(Self { smooth, atoms, anchor })
    }

    /// `|x - a|`: a single atom of mass 2 at `a`.
    pub fn absolute_value(a: f64) -> Self {
        Self {
            smooth: Vec::new(),
            atoms: vec![(a, 2.0)],
            anchor: Anchor {
                x0: a,
                value: 0.0,
                left_derivative: -1.0,
            },
        }
    }

    /// `x^2`.
    pub fn square() -> Self {
        Self {
            smooth: vec![SmoothTerm::Constant(2.0)],
            atoms: Vec::new(),
            anchor: Anchor {
                x0: 0.0,
                value: 0.0,
                left_derivative: 0.0,
            },
        }
    }

    /// `value + slope * x`.
    pub fn linear(value: f64, slope: f64) -> Self {
        Self {
            smooth: Vec::new(),
            atoms: Vec::new(),
            anchor: Anchor {
                x0: 0.0,
                value,
                left_derivative: slope,
            },
        }
    }

    /// `alpha * f1 + beta * f2`, anchored at `f1`'s anchor point.
    pub fn combine(alpha: f64, f1: &ConvexCombo, beta: f64, f2: &ConvexCombo) -> ConvexCombo {
        let x0 = f1.anchor.x0;
        let smooth = f1
            .smooth
            .iter()
            .map(|t| t.scaled(alpha))
            .chain(f2.smooth.iter().map(|t| t.scaled(beta)))
            .collect();
        let atoms = f1
            .atoms
            .iter()
            .map(|&(a, c)| (a, alpha * c))
            .chain(f2.atoms.iter().map(|&(a, c)| (a, beta * c)))
            .collect();
        ConvexCombo {
            smooth,
            atoms,
            anchor: Anchor {
                x0,
                value: alpha * f1.anchor.value + beta * f2.eval_f(x0),
                left_derivative: alpha * f1.anchor.left_derivative + beta * f2.eval_left_derivative(x0),
            },
        }
    }

    pub fn smooth_terms(&self) -> &[SmoothTerm] {
        &self.smooth
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn anchor(&self) -> Anchor {
        self.anchor
    }

    /// Density part `g(x)` of `f''`.
    pub fn smooth_density(&self, x: f64) -> f64 {
        self.smooth.iter().map(|t| t.density(x)).sum()
    }

    /// `f''([x, y))` for `x <= y`.
    pub fn measure(&self, x: f64, y: f64) -> f64 {
        let smooth: f64 = self.smooth.iter().map(|t| t.first_integral(x, y)).sum();
        let atoms: f64 = self.atoms.iter().filter(|(a, _)| x <= *a && *a < y).map(|(_, c)| c).sum();
        smooth + atoms
    }

    pub fn eval_f(&self, x: f64) -> f64 {
        let Anchor {
            x0,
            value,
            left_derivative,
        } = self.anchor;
        let smooth: f64 = self.smooth.iter().map(|t| t.second_integral(x0, x)).sum();
        let atoms: f64 = self
            .atoms
            .iter()
            .map(|&(a, c)| {
                if a >= x0 {
                    c * (x - a).max(0.0)
                } else {
                    c * (a - x).max(0.0)
                }
            })
            .sum();
        value + left_derivative * (x - x0) + smooth + atoms
    }

    /// Left derivative; an atom at `x` itself is not yet counted.
    pub fn eval_left_derivative(&self, x: f64) -> f64 {
        let Anchor { x0, left_derivative, .. } = self.anchor;
        let smooth: f64 = self.smooth.iter().map(|t| t.first_integral(x0, x)).sum();
        let atoms: f64 = if x > x0 {
            self.atoms.iter().filter(|(a, _)| x0 <= *a && *a < x).map(|(_, c)| c).sum()
        } else if x < x0 {
            -self.atoms.iter().filter(|(a, _)| x <= *a && *a < x0).map(|(_, c)| c).sum::<f64>()
        } else {
            0.0
        };
        left_derivative + smooth + atoms
    }

    /// Second-order remainder of one step,
    /// `f(v) - f(u) - f'_-(u) (v - u)`, evaluated directly from the measure:
    /// `int_[u,v) (v - y) f''(dy)` when `v > u` and `int_[v,u) (y - v) f''(dy)`
    /// when `v < u`. It vanishes identically when `f''` does.
    pub fn step_remainder(&self, u: f64, v: f64) -> f64 {
        let smooth: f64 = self.smooth.iter().map(|t| t.second_integral(u, v)).sum();
        let atoms: f64 = if v > u {
            self.atoms
                .iter()
                .filter(|(a, _)| u <= *a && *a < v)
                .map(|&(a, c)| c * (v - a))
                .sum()
        } else if v < u {
            self.atoms
                .iter()
                .filter(|(a, _)| v <= *a && *a < u)
                .map(|&(a, c)| c * (a - v))
                .sum()
        } else {
            0.0
        };
        smooth + atoms
    }
}

/// Residual of the extended Itô–Tanaka formula on the field's time grid:
///
/// ```text
/// f(X_t) - f(X_0) - sum_i f'_-(X_{t_i}) dX_i - 1/2 (sum_j g(x_j) L_t^{x_j} w_j + sum_i c_i L_t^{a_i})
/// ```
///
/// The first three terms are accumulated as per-step remainders
/// ([`ConvexCombo::step_remainder`]). The density part is integrated with
/// the field's midpoint weights `w_j`; atom levels use band local time
/// computed at the exact atom location with the field's band and weight.
pub fn ito_tanaka_residual(path: &SamplePath, combo: &ConvexCombo, field: &LocalTimeField) -> Result<SamplePath> {
    if field.t_grid().horizon() != path.grid().horizon()
        || field.t_grid().steps() * field.time_stride() != path.grid().steps()
    {
        return Err(invalid("field", "was computed on a different time grid"));
    }
    let eps = field.band().epsilon();
    let xs = field.x_grid();
    let (lo, hi) = (path.min() - eps, path.max() + eps);
    let slack = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
    if xs[0] > lo + slack || xs[xs.len() - 1] < hi - slack {
        return Err(Error::FieldCoverage {
            grid_lo: xs[0],
            grid_hi: xs[xs.len() - 1],
            path_lo: path.min(),
            path_hi: path.max(),
        });
    }

    let density_weights: Vec<f64> = xs
        .iter()
        .zip(field.x_weights())
        .map(|(&x, w)| combo.smooth_density(x) * w)
        .collect();
    let atom_paths: Vec<(f64, SamplePath)> = combo
        .atoms
        .iter()
        .map(|&(a, c)| (c, band_local_time(path, a, &field.band(), field.weight())))
        .collect();

    let stride = field.time_stride();
    let v = path.values();
    let mut remainder = 0.0;
    let mut out = Vec::with_capacity(field.t_grid().len());
    for row in 0..field.t_grid().len() {
        let k = row * stride;
        if row > 0 {
            for i in (k - stride)..k {
                remainder += combo.step_remainder(v[i], v[i + 1]);
            }
        }
        let smooth: f64 = field.row(row).iter().zip(&density_weights).map(|(l, w)| l * w).sum();
        let atoms: f64 = atom_paths.iter().map(|(c, l)| c * l.values()[k]).sum();
        out.push(remainder - 0.5 * (smooth + atoms));
    }
    SamplePath::new(field.t_grid(), out)
}
