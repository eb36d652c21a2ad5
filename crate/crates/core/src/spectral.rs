//! Neumann cosine basis on the unit interval and the field types built on it.
//!
//! Fields are stored as coefficients in the L²-orthonormal eigenbasis of the
//! Neumann Laplacian on (0, 1):
//!
//! ```text
//! phi_0(x) = 1,   phi_k(x) = sqrt(2) cos(k pi x),   -phi_k'' = (k pi)^2 phi_k
//! ```
//!
//! Physical values live on `G` midpoint nodes `x_j = (j + 1/2) / G`. With
//! `G >= 2K + 2` the discrete cosine sums are exact for products of two
//! band-limited fields, so quadratic nonlinearities are projected without
//! aliasing.

use std::f64::consts::{PI, SQRT_2};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The physical domain. Length is pinned to 1 so that `|Omega| = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub length: f64,
    pub components: usize,
}

impl DomainSpec {
    pub fn new(components: usize) -> Result<Self> {
        if components == 0 {
            return Err(Error::invalid("system size n must be at least 1"));
        }
        Ok(Self {
            length: 1.0,
            components,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CosineBasis {
    modes: usize,
    nodes: Vec<f64>,
    eigenvalues: Vec<f64>,
    /// `synthesis[[k, j]] = phi_k(x_j)`.
    synthesis: Array2<f64>,
    /// `analysis[[j, k]] = phi_k(x_j) / G`.
    analysis: Array2<f64>,
}

impl CosineBasis {
    /// Basis with `K = modes` and the default `G = 2K + 2` quadrature nodes.
    pub fn new(domain: &DomainSpec, modes: usize) -> Result<Self> {
        Self::with_nodes(domain, modes, 2 * modes + 2)
    }

    pub fn with_nodes(domain: &DomainSpec, modes: usize, nodes: usize) -> Result<Self> {
        if modes < 2 {
            return Err(Error::invalid(format!("mode count K = {modes} must be >= 2")));
        }
        if nodes < 2 * modes + 2 {
            return Err(Error::invalid(format!(
                "quadrature nodes G = {nodes} must be >= 2K + 2 = {}",
                2 * modes + 2
            )));
        }
        if (domain.length - 1.0).abs() > 0.0 {
            return Err(Error::invalid("domain length must be 1"));
        }
        let g = nodes as f64;
        let xs: Vec<f64> = (0..nodes).map(|j| (j as f64 + 0.5) / g).collect();
        let eigenvalues = (0..=modes).map(|k| (k as f64 * PI).powi(2)).collect();
        let synthesis = Array2::from_shape_fn((modes + 1, nodes), |(k, j)| basis_function(k, xs[j]));
        let analysis = synthesis.t().mapv(|v| v / g);
        Ok(Self {
            modes,
            nodes: xs,
            eigenvalues,
            synthesis,
            analysis,
        })
    }

    /// `K`; coefficient arrays have `K + 1` columns.
    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// `(k pi)^2` for `k = 0..=K`.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// First nonzero Neumann eigenvalue, `pi^2`.
    pub fn lambda1(&self) -> f64 {
        self.eigenvalues[1]
    }

    /// `phi_k(x_j)`, shape `(K + 1) x G`.
    pub fn synthesis_matrix(&self) -> &Array2<f64> {
        &self.synthesis
    }

    /// `phi_k(x_j) / G`, shape `G x (K + 1)`.
    pub fn analysis_matrix(&self) -> &Array2<f64> {
        &self.analysis
    }

    pub fn quadrature_weight(&self) -> f64 {
        1.0 / self.nodes.len() as f64
    }

    /// Discrete Gram matrix `(1/G) sum_j phi_k(x_j) phi_l(x_j)`.
    pub fn gram_matrix(&self) -> Array2<f64> {
        self.synthesis.dot(&self.analysis)
    }

    /// Largest deviation of the discrete Gram matrix from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.gram_matrix();
        gram.indexed_iter()
            .map(|((k, l), v)| (v - if k == l { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_grid(&self, field: &SpectralField) -> Result<GridField> {
        self.check_field(field)?;
        Ok(GridField {
            values: field.coeffs.dot(&self.synthesis),
        })
    }

    /// Discrete L² projection onto the first `K + 1` modes.
    pub fn to_spectral(&self, grid: &GridField) -> Result<SpectralField> {
        if grid.values.ncols() != self.nodes.len() {
            return Err(Error::ShapeMismatch {
                expected: (grid.values.nrows(), self.nodes.len()),
                found: grid.values.dim(),
            });
        }
        Ok(SpectralField {
            coeffs: grid.values.dot(&self.analysis),
        })
    }

    /// Samples `f(x)` for each component at the quadrature nodes.
    pub fn sample<F>(&self, components: usize, f: F) -> GridField
    where
        F: Fn(usize, f64) -> f64,
    {
        GridField {
            values: Array2::from_shape_fn((components, self.nodes.len()), |(i, j)| f(i, self.nodes[j])),
        }
    }

    /// Evaluates a field at an arbitrary point of `[0, 1]`.
    pub fn evaluate_at(&self, field: &SpectralField, x: f64) -> Vec<f64> {
        let phis: Vec<f64> = (0..=self.modes).map(|k| basis_function(k, x)).collect();
        field
            .coeffs
            .outer_iter()
            .map(|row| row.iter().zip(&phis).map(|(c, p)| c * p).sum())
            .collect()
    }

    pub(crate) fn check_field(&self, field: &SpectralField) -> Result<()> {
        if field.coeffs.ncols() != self.modes + 1 {
            return Err(Error::ShapeMismatch {
                expected: (field.coeffs.nrows(), self.modes + 1),
                found: field.coeffs.dim(),
            });
        }
        Ok(())
    }
}

/// `phi_k(x)`: 1 for `k = 0`, `sqrt(2) cos(k pi x)` otherwise.
pub fn basis_function(k: usize, x: f64) -> f64 {
    if k == 0 {
        1.0
    } else {
        SQRT_2 * (k as f64 * PI * x).cos()
    }
}

pub fn build_basis(domain: &DomainSpec, modes: usize) -> Result<CosineBasis> {
    CosineBasis::new(domain, modes)
}

/// `E = diag(eps_1, ..., eps_n)` with the lower bound `m0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    eps: Vec<f64>,
    m0: f64,
}

impl DiffusionSpec {
    pub fn new(eps: Vec<f64>, m0: f64) -> Result<Self> {
        if eps.is_empty() {
            return Err(Error::invalid("diffusion needs at least one coefficient"));
        }
        if !(m0 > 0.0 && m0.is_finite()) {
            return Err(Error::invalid(format!("m0 = {m0} must be positive")));
        }
        if let Some(bad) = eps.iter().find(|&&e| !(e >= m0 && e.is_finite())) {
            return Err(Error::invalid(format!("eps_i = {bad} violates eps_i >= m0 = {m0}")));
        }
        Ok(Self { eps, m0 })
    }

    /// All components share the coefficient `d`; `m0 = d`.
    pub fn uniform(components: usize, d: f64) -> Result<Self> {
        Self::new(vec![d; components], d)
    }

    /// Rescales `base` so that its minimum equals `d`.
    pub fn scaled_to(base: &[f64], d: f64) -> Result<Self> {
        let min = base.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(Error::invalid("base diffusion must be positive"));
        }
        Self::new(base.iter().map(|e| e * d / min).collect(), d)
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn m0(&self) -> f64 {
        self.m0
    }

    pub fn components(&self) -> usize {
        self.eps.len()
    }

    /// `d_eps = min_i eps_i`.
    pub fn d_eps(&self) -> f64 {
        self.eps.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Eigenvalue of `A_eps` on mode `k` of component `i`: `eps_i lambda_k + 1`.
    pub fn mode_eigenvalue(&self, basis: &CosineBasis, i: usize, k: usize) -> f64 {
        self.eps[i] * basis.eigenvalues()[k] + 1.0
    }

    /// Array of `eps_i lambda_k + 1`, shaped like a coefficient array.
    pub fn operator_symbol(&self, basis: &CosineBasis) -> Array2<f64> {
        Array2::from_shape_fn((self.eps.len(), basis.modes() + 1), |(i, k)| {
            self.mode_eigenvalue(basis, i, k)
        })
    }

    /// `lambda_2^eps = d_eps lambda_1 + 1`, the smallest eigenvalue above 1.
    pub fn lambda2(&self, basis: &CosineBasis) -> f64 {
        self.d_eps() * basis.lambda1() + 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    /// `coeffs[[i, k]]`: component `i`, mode `k`.
    pub coeffs: Array2<f64>,
}

impl SpectralField {
    pub fn zeros(components: usize, basis: &CosineBasis) -> Self {
        Self {
            coeffs: Array2::zeros((components, basis.modes() + 1)),
        }
    }

    pub fn from_coeffs(coeffs: Array2<f64>) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                context: "spectral coefficients".into(),
            });
        }
        Ok(Self { coeffs })
    }

    /// The spatially constant field with value `v`.
    pub fn constant(v: &[f64], basis: &CosineBasis) -> Self {
        let mut f = Self::zeros(v.len(), basis);
        for (i, &vi) in v.iter().enumerate() {
            f.coeffs[[i, 0]] = vi;
        }
        f
    }

    /// `amplitude * phi_k` in component `component`, zero elsewhere.
    pub fn mode(components: usize, component: usize, k: usize, amplitude: f64, basis: &CosineBasis) -> Self {
        let mut f = Self::zeros(components, basis);
        f.coeffs[[component, k]] = amplitude;
        f
    }

    pub fn components(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn mode_count(&self) -> usize {
        self.coeffs.ncols()
    }

    /// Component averages `P u`; with `|Omega| = 1` these are the mode-0 coefficients.
    pub fn mean(&self) -> Vec<f64> {
        self.coeffs.column(0).to_vec()
    }

    /// `(I - P) u`.
    pub fn fluctuation(&self) -> Self {
        let mut w = self.clone();
        w.coeffs.column_mut(0).fill(0.0);
        w
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn l2_inner(&self, other: &Self) -> f64 {
        (&self.coeffs * &other.coeffs).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.coeffs
            .iter()
            .zip(other.coeffs.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            coeffs: &self.coeffs + &other.coeffs,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            coeffs: &self.coeffs - &other.coeffs,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            coeffs: &self.coeffs * s,
        }
    }

    /// Flattened row-major coefficients (component-major).
    pub fn to_flat(&self) -> Vec<f64> {
        self.coeffs.iter().copied().collect()
    }

    pub fn from_flat(components: usize, flat: Vec<f64>) -> Result<Self> {
        if components == 0 || flat.len() % components != 0 {
            return Err(Error::invalid(format!(
                "{} coefficients cannot be split into {components} components",
                flat.len()
            )));
        }
        let cols = flat.len() / components;
        let coeffs = Array2::from_shape_vec((components, cols), flat)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Self::from_coeffs(coeffs)
    }
}

/// Point values at the quadrature nodes, `n x G`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub values: Array2<f64>,
}

impl GridField {
    /// Node mean of each component (the discrete `P`).
    pub fn mean(&self) -> Vec<f64> {
        self.values.mean_axis(Axis(1)).map(|m| m.to_vec()).unwrap_or_default()
    }
}

/// The `X_eps^{1/2}` norm, `||u||^2 = sum_i sum_k (eps_i lambda_k + 1) c_ik^2`.
#[derive(Debug, Clone)]
pub struct EnergyNorm {
    weights: Array2<f64>,
}

impl EnergyNorm {
    pub fn new(diffusion: &DiffusionSpec, basis: &CosineBasis) -> Self {
        Self {
            weights: diffusion.operator_symbol(basis),
        }
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn norm_sq(&self, f: &SpectralField) -> f64 {
        self.inner(f, f)
    }

    pub fn norm(&self, f: &SpectralField) -> f64 {
        self.norm_sq(f).sqrt()
    }

    pub fn inner(&self, f: &SpectralField, g: &SpectralField) -> f64 {
        debug_assert_eq!(f.coeffs.dim(), self.weights.dim());
        f.coeffs
            .iter()
            .zip(g.coeffs.iter())
            .zip(self.weights.iter())
            .map(|((a, b), w)| w * a * b)
            .sum()
    }

    /// `int E |grad u|^2`, the part of the squared norm above the L² part.
    pub fn gradient_part_sq(&self, f: &SpectralField) -> f64 {
        f.coeffs
            .iter()
            .zip(self.weights.iter())
            .map(|(c, w)| (w - 1.0) * c * c)
            .sum()
    }

    /// Norm of the difference, without allocating it.
    pub fn distance(&self, f: &SpectralField, g: &SpectralField) -> f64 {
        f.coeffs
            .iter()
            .zip(g.coeffs.iter())
            .zip(self.weights.iter())
            .map(|((a, b), w)| w * (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn energy_norm(f: &SpectralField, diffusion: &DiffusionSpec, basis: &CosineBasis) -> f64 {
    EnergyNorm::new(diffusion, basis).norm(f)
}

pub fn average_projection(f: &SpectralField) -> Vec<f64> {
    f.mean()
}

/// `A_eps u = -E u'' + u`, diagonal in the cosine basis.
pub fn apply_operator(f: &SpectralField, diffusion: &DiffusionSpec, basis: &CosineBasis) -> Result<SpectralField> {
    basis.check_field(f)?;
    check_components(f, diffusion)?;
    Ok(SpectralField {
        coeffs: &f.coeffs * &diffusion.operator_symbol(basis),
    })
}

pub(crate) fn check_components(f: &SpectralField, diffusion: &DiffusionSpec) -> Result<()> {
    if f.components() != diffusion.components() {
        return Err(Error::ShapeMismatch {
            expected: (diffusion.components(), f.mode_count()),
            found: f.coeffs.dim(),
        });
    }
    Ok(())
}
