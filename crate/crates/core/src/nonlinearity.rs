//! Built-in reaction terms `F: R^n -> R^n`.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Nonlinearity {
    /// `F = 0`.
    Zero { components: usize },
    /// `F_i(u) = beta tanh(u_i)`; for `beta > 1` three hyperbolic equilibria per component.
    Pitchfork { beta: f64, components: usize },
    /// `F_i(u) = gamma tanh(u_i - u_i^3 / 3)`.
    SaturatedCubic { gamma: f64, components: usize },
    /// Two components coupled through a symmetric matrix:
    /// `F(u) = [[a, b], [b, a]] (tanh u_1, tanh u_2)`.
    Coupled { a: f64, b: f64 },
    /// `F(u) = c u`. Unbounded; only for tests where boundedness is waived.
    Linear { c: f64, components: usize },
}

impl Nonlinearity {
    pub fn pitchfork(beta: f64) -> Self {
        Nonlinearity::Pitchfork { beta, components: 1 }
    }

    pub fn zero(components: usize) -> Self {
        Nonlinearity::Zero { components }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Nonlinearity::Zero { .. } => "zero",
            Nonlinearity::Pitchfork { .. } => "pitchfork",
            Nonlinearity::SaturatedCubic { .. } => "saturated_cubic",
            Nonlinearity::Coupled { .. } => "coupled",
            Nonlinearity::Linear { .. } => "linear",
        }
    }

    pub fn components(&self) -> usize {
        match *self {
            Nonlinearity::Zero { components }
            | Nonlinearity::Pitchfork { components, .. }
            | Nonlinearity::SaturatedCubic { components, .. }
            | Nonlinearity::Linear { components, .. } => components,
            Nonlinearity::Coupled { .. } => 2,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Nonlinearity::Zero { .. })
    }

    pub fn is_odd(&self) -> bool {
        // every built-in is odd
        true
    }

    /// Writes `F(u)` into `out`. Both slices have length `n`.
    #[inline]
    pub fn eval_into(&self, u: &[f64], out: &mut [f64]) {
        match *self {
            Nonlinearity::Zero { .. } => out.fill(0.0),
            Nonlinearity::Pitchfork { beta, .. } => {
                for (o, x) in out.iter_mut().zip(u) {
                    *o = beta * x.tanh();
                }
            }
            Nonlinearity::SaturatedCubic { gamma, .. } => {
                for (o, x) in out.iter_mut().zip(u) {
                    *o = gamma * (x - x * x * x / 3.0).tanh();
                }
            }
            Nonlinearity::Coupled { a, b } => {
                let (t0, t1) = (u[0].tanh(), u[1].tanh());
                out[0] = a * t0 + b * t1;
                out[1] = b * t0 + a * t1;
            }
            Nonlinearity::Linear { c, .. } => {
                for (o, x) in out.iter_mut().zip(u) {
                    *o = c * x;
                }
            }
        }
    }

    pub fn eval(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.eval_into(u, &mut out);
        out
    }

    /// Row-major `n x n` Jacobian `F'(u)`.
    pub fn jacobian(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        let mut j = vec![0.0; n * n];
        match *self {
            Nonlinearity::Zero { .. } => {}
            Nonlinearity::Pitchfork { beta, .. } => {
                for i in 0..n {
                    j[i * n + i] = beta * sech2(u[i]);
                }
            }
            Nonlinearity::SaturatedCubic { gamma, .. } => {
                for i in 0..n {
                    let x = u[i];
                    j[i * n + i] = gamma * sech2(x - x * x * x / 3.0) * (1.0 - x * x);
                }
            }
            Nonlinearity::Coupled { a, b } => {
                let (s0, s1) = (sech2(u[0]), sech2(u[1]));
                j[0] = a * s0;
                j[1] = b * s1;
                j[2] = b * s0;
                j[3] = a * s1;
            }
            Nonlinearity::Linear { c, .. } => {
                for i in 0..n {
                    j[i * n + i] = c;
                }
            }
        }
        j
    }

    pub fn jacobian_matrix(&self, u: &[f64]) -> DMatrix<f64> {
        let n = u.len();
        DMatrix::from_row_slice(n, n, &self.jacobian(u))
    }

    /// Euclidean bound `B` with `|F(u)| <= B`, or `None` when unbounded.
    pub fn bound(&self) -> Option<f64> {
        let n = self.components() as f64;
        match *self {
            Nonlinearity::Zero { .. } => Some(0.0),
            Nonlinearity::Pitchfork { beta, .. } => Some(beta.abs() * n.sqrt()),
            Nonlinearity::SaturatedCubic { gamma, .. } => Some(gamma.abs() * n.sqrt()),
            Nonlinearity::Coupled { a, b } => Some((a.abs() + b.abs()) * 2f64.sqrt()),
            Nonlinearity::Linear { c, .. } => (c == 0.0).then_some(0.0),
        }
    }

    /// Global Lipschitz constant of `F` in the Euclidean norm.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Nonlinearity::Zero { .. } => 0.0,
            Nonlinearity::Pitchfork { beta, .. } => beta.abs(),
            Nonlinearity::Coupled { a, b } => a.abs() + b.abs(),
            Nonlinearity::Linear { c, .. } => c.abs(),
            Nonlinearity::SaturatedCubic { gamma, .. } => {
                // sech^2(u - u^3/3) (1 - u^2) is negligible for |u| > 4
                let mut best: f64 = 0.0;
                for i in 0..=80_000 {
                    let x = -4.0 + 8.0 * i as f64 / 80_000.0;
                    best = best.max((sech2(x - x * x * x / 3.0) * (1.0 - x * x)).abs());
                }
                gamma.abs() * best * (1.0 + 1e-6)
            }
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let n = self.components();
        let points = probe_points(n, 6.0, 41);
        let bounded = match self.bound() {
            Some(b) => points.iter().all(|u| norm(&self.eval(u)) <= b * (1.0 + 1e-12)),
            None => false,
        };
        let jacobian_error = points
            .iter()
            .map(|u| jacobian_relative_error(self, u))
            .fold(0.0, f64::max);
        let inward = match self.bound() {
            Some(b) => sphere_points(n, b + 1.0, 64).iter().all(|u| {
                let f = self.eval(u);
                u.iter().zip(&f).map(|(x, fx)| x * (-x + fx)).sum::<f64>() < 0.0
            }),
            None => false,
        };
        ValidationReport {
            bounded,
            jacobian_error,
            inward,
        }
    }

    /// Builds a nonlinearity from a name and a parameter lookup.
    pub fn from_parts(name: &str, components: usize, param: impl Fn(&str) -> Option<f64>) -> Result<Self> {
        let need = |p: &str| param(p).ok_or_else(|| Error::invalid(format!("nonlinearity '{name}' needs parameter '{p}'")));
        let f = match name {
            "zero" => Nonlinearity::Zero { components },
            "pitchfork" => Nonlinearity::Pitchfork {
                beta: need("beta")?,
                components,
            },
            "saturated_cubic" => Nonlinearity::SaturatedCubic {
                gamma: need("gamma")?,
                components,
            },
            "coupled" => {
                if components != 2 {
                    return Err(Error::invalid("nonlinearity 'coupled' needs exactly 2 components"));
                }
                Nonlinearity::Coupled {
                    a: need("a")?,
                    b: need("b")?,
                }
            }
            "linear" => Nonlinearity::Linear {
                c: need("c")?,
                components,
            },
            other => return Err(Error::invalid(format!("unknown nonlinearity '{other}'"))),
        };
        if components == 0 {
            return Err(Error::invalid("nonlinearity needs at least one component"));
        }
        Ok(f)
    }
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Nonlinearity::Zero { components } => write!(f, "zero(n={components})"),
            Nonlinearity::Pitchfork { beta, components } => write!(f, "pitchfork(beta={beta}, n={components})"),
            Nonlinearity::SaturatedCubic { gamma, components } => {
                write!(f, "saturated_cubic(gamma={gamma}, n={components})")
            }
            Nonlinearity::Coupled { a, b } => write!(f, "coupled(a={a}, b={b})"),
            Nonlinearity::Linear { c, components } => write!(f, "linear(c={c}, n={components})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationReport {
    pub bounded: bool,
    /// Largest relative Frobenius error of `F'` against central differences.
    pub jacobian_error: f64,
    /// `-u + F(u)` points inward on the sphere `|u| = B + 1`.
    pub inward: bool,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.bounded && self.inward && self.jacobian_error < 1e-6
    }
}

#[inline]
fn sech2(x: f64) -> f64 {
    let c = x.cosh();
    if c.is_finite() {
        1.0 / (c * c)
    } else {
        0.0
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn jacobian_relative_error(f: &Nonlinearity, u: &[f64]) -> f64 {
    let n = u.len();
    let jac = f.jacobian(u);
    let h = 1e-6;
    let mut err = 0.0;
    let mut scale = 0.0;
    for col in 0..n {
        let mut up = u.to_vec();
        let mut um = u.to_vec();
        up[col] += h;
        um[col] -= h;
        let (fp, fm) = (f.eval(&up), f.eval(&um));
        for row in 0..n {
            let fd = (fp[row] - fm[row]) / (2.0 * h);
            err += (fd - jac[row * n + col]).powi(2);
            scale += jac[row * n + col].powi(2);
        }
    }
    err.sqrt() / scale.sqrt().max(1.0)
}

/// Tensor grid on `[-half, half]^n` (coarsened for n > 2).
fn probe_points(n: usize, half: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let per_axis = if n > 2 { 7 } else { per_axis };
    let total = per_axis.pow(n as u32);
    (0..total)
        .map(|mut idx| {
            (0..n)
                .map(|_| {
                    let i = idx % per_axis;
                    idx /= per_axis;
                    -half + 2.0 * half * i as f64 / (per_axis - 1) as f64
                })
                .collect()
        })
        .collect()
}

fn sphere_points(n: usize, radius: f64, count: usize) -> Vec<Vec<f64>> {
    probe_points(n, 1.0, 9)
        .into_iter()
        .filter(|p| norm(p) > 0.0)
        .take(count.max(2 * n))
        .map(|p| {
            let s = radius / norm(&p);
            p.into_iter().map(|x| x * s).collect()
        })
        .collect()
}
