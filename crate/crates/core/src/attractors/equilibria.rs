//! Equilibria of the limiting ODE and of the Galerkin PDE, with linearization
//! spectra and stability classification.

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{evaluate_f, Problem};
use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;
use crate::spectral::{CosineBasis, SpectralField};

/// Default threshold on `min |Re lambda|` below which an equilibrium counts as nonhyperbolic.
pub const HYPERBOLICITY_TOL: f64 = 1e-8;
/// Newton limits closer than this are the same equilibrium.
pub const MERGE_RADIUS: f64 = 1e-8;
/// Galerkin modes kept when computing PDE linearization spectra.
pub const SPECTRUM_MODES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    /// Unstable with the given number of eigenvalues in the right half plane.
    Unstable(usize),
    Nonhyperbolic,
}

impl std::fmt::Display for Stability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stability::Stable => write!(f, "stable"),
            Stability::Unstable(k) => write!(f, "unstable({k})"),
            Stability::Nonhyperbolic => write!(f, "nonhyperbolic"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EquilibriumLocation {
    Vector(Vec<f64>),
    Field(SpectralField),
}

#[derive(Debug, Clone)]
pub struct EquilibriumPoint {
    pub location: EquilibriumLocation,
    /// Eigenvalues of the linearization of the flow, sorted by decreasing real part.
    pub spectrum: Vec<Complex<f64>>,
    pub stability: Stability,
    /// `|-u + F(u)|` (ODE) or `||A_eps u - f(u)||_{L^2}` (PDE).
    pub residual: f64,
    /// Linearization of the flow in the coordinates of `location`
    /// (flattened coefficients for fields).
    pub linearization: DMatrix<f64>,
}

impl EquilibriumPoint {
    /// Spatial average of the equilibrium.
    pub fn mean(&self) -> Vec<f64> {
        match &self.location {
            EquilibriumLocation::Vector(v) => v.clone(),
            EquilibriumLocation::Field(u) => u.mean(),
        }
    }

    pub fn as_field(&self, basis: &CosineBasis) -> SpectralField {
        match &self.location {
            EquilibriumLocation::Vector(v) => SpectralField::constant(v, basis),
            EquilibriumLocation::Field(u) => u.clone(),
        }
    }

    pub fn min_abs_real_part(&self) -> f64 {
        self.spectrum.iter().map(|z| z.re.abs()).fold(f64::INFINITY, f64::min)
    }

    pub fn unstable_dimension(&self) -> usize {
        match self.stability {
            Stability::Unstable(k) => k,
            _ => 0,
        }
    }

    /// Real unit vectors spanning the unstable eigenspace.
    pub fn unstable_directions(&self) -> Result<Vec<DVector<f64>>> {
        let mut out = Vec::new();
        let mut seen_complex = Vec::<Complex<f64>>::new();
        for &z in self.spectrum.iter().filter(|z| z.re > 0.0) {
            if z.im.abs() <= 1e-12 * z.norm().max(1.0) {
                out.push(real_eigenvector(&self.linearization, z.re)?);
            } else if !seen_complex.iter().any(|s| (s.re - z.re).abs() < 1e-12 && (s.im + z.im).abs() < 1e-12) {
                seen_complex.push(z);
                let (re, im) = complex_eigenvector(&self.linearization, z)?;
                out.push(re);
                out.push(im);
            }
        }
        Ok(out)
    }
}

/// Eigenvalues sorted by decreasing real part.
pub fn sorted_spectrum(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut ev: Vec<Complex<f64>> = m.clone().complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    ev
}

pub fn classify(spectrum: &[Complex<f64>], tol: f64) -> Stability {
    if spectrum.iter().any(|z| z.re.abs() <= tol) {
        return Stability::Nonhyperbolic;
    }
    match spectrum.iter().filter(|z| z.re > tol).count() {
        0 => Stability::Stable,
        k => Stability::Unstable(k),
    }
}

/// True iff the linearization has no eigenvalue with `|Re lambda| <= tol`.
pub fn hyperbolicity_check(eq: &EquilibriumPoint, tol: f64) -> bool {
    eq.min_abs_real_part() > tol
}

fn real_eigenvector(m: &DMatrix<f64>, lambda: f64) -> Result<DVector<f64>> {
    let n = m.nrows();
    let mut shift = lambda + 1e-10 * lambda.abs().max(1.0);
    for _ in 0..6 {
        let shifted = m - DMatrix::identity(n, n) * shift;
        if let Some(inv) = shifted.lu().try_inverse() {
            let mut x = DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64);
            for _ in 0..4 {
                x = &inv * x;
                let nx = x.norm();
                if !(nx.is_finite() && nx > 0.0) {
                    break;
                }
                x /= nx;
            }
            if x.iter().all(|v| v.is_finite()) {
                // fix the sign so the largest entry is positive
                let (imax, _) = x.iter().enumerate().fold((0, 0.0), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
                if x[imax] < 0.0 {
                    x = -x;
                }
                return Ok(x);
            }
        }
        shift += 1e-8 * lambda.abs().max(1.0);
    }
    Err(Error::invalid(format!("inverse iteration failed for eigenvalue {lambda}")))
}

fn complex_eigenvector(m: &DMatrix<f64>, z: Complex<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = m.nrows();
    let mc: DMatrix<Complex<f64>> = m.map(|v| Complex::new(v, 0.0));
    let shift = z + Complex::new(1e-10 * z.norm().max(1.0), 0.0);
    let inv = (mc - DMatrix::identity(n, n) * shift)
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::invalid(format!("inverse iteration failed for eigenvalue {z}")))?;
    let mut x = DVector::from_fn(n, |i, _| Complex::new(1.0 + 0.1 * i as f64, 0.0));
    for _ in 0..4 {
        x = &inv * x;
        let nx = x.norm();
        x /= Complex::new(nx, 0.0);
    }
    let mut re = x.map(|c| c.re);
    let mut im = x.map(|c| c.im);
    let (nr, ni) = (re.norm(), im.norm());
    re /= nr;
    im /= ni;
    Ok((re, im))
}

fn ode_linearization(u: &[f64], f: &Nonlinearity) -> DMatrix<f64> {
    let n = u.len();
    f.jacobian_matrix(u) - DMatrix::identity(n, n)
}

fn ode_residual(u: &[f64], f: &Nonlinearity) -> f64 {
    f.eval(u).iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Damped Newton on `-u + F(u) = 0`; `None` when the seed does not converge.
fn newton_ode(seed: &[f64], f: &Nonlinearity, escape: f64) -> Option<Vec<f64>> {
    let mut u = seed.to_vec();
    let mut r = ode_residual(&u, f);
    for _ in 0..100 {
        if r < 1e-13 {
            return Some(u);
        }
        let g = DVector::from_iterator(u.len(), f.eval(&u).iter().zip(&u).map(|(a, b)| a - b));
        let step = ode_linearization(&u, f).lu().solve(&(-g))?;
        let mut damping = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, s)| a + damping * s).collect();
            let rt = ode_residual(&trial, f);
            if rt < (1.0 - 1e-4 * damping) * r || damping < 1e-6 {
                u = trial;
                r = rt;
                break;
            }
            damping *= 0.5;
        }
        if !(u.iter().all(|x| x.abs() <= escape)) {
            return None;
        }
        if step.norm() * damping < 1e-15 * (1.0 + u.iter().map(|x| x * x).sum::<f64>().sqrt()) {
            break;
        }
    }
    (r < 1e-10).then_some(u)
}

fn ode_equilibrium(u: Vec<f64>, f: &Nonlinearity, tol: f64) -> EquilibriumPoint {
    let linearization = ode_linearization(&u, f);
    let spectrum = sorted_spectrum(&linearization);
    EquilibriumPoint {
        residual: ode_residual(&u, f),
        stability: classify(&spectrum, tol),
        spectrum,
        linearization,
        location: EquilibriumLocation::Vector(u),
    }
}

/// Equilibria of `v' = -v + F(v)` in the box `[-half_width, half_width]^n`,
/// from damped Newton started at every point of a uniform seed grid.
pub fn find_equilibria_ode(f: &Nonlinearity, half_width: f64, grid_density: usize) -> Result<Vec<EquilibriumPoint>> {
    find_equilibria_ode_with_tol(f, half_width, grid_density, HYPERBOLICITY_TOL)
}

pub fn find_equilibria_ode_with_tol(
    f: &Nonlinearity,
    half_width: f64,
    grid_density: usize,
    hyperbolicity_tol: f64,
) -> Result<Vec<EquilibriumPoint>> {
    let n = f.components();
    if grid_density < 2 {
        return Err(Error::invalid("equilibrium search needs at least 2 seeds per axis"));
    }
    if let Some(b) = f.bound() {
        if half_width < b {
            return Err(Error::Precondition(format!(
                "search box half-width {half_width} does not contain the ball |u| <= {b}"
            )));
        }
    }
    let total = (grid_density as f64).powi(n as i32);
    if total > 2e6 {
        return Err(Error::invalid(format!("{total} seeds is too many; lower grid_density")));
    }
    let total = total as usize;
    let seed_at = |idx: usize| -> Vec<f64> {
        let mut rem = idx;
        (0..n)
            .map(|_| {
                let j = rem % grid_density;
                rem /= grid_density;
                -half_width + 2.0 * half_width * j as f64 / (grid_density - 1) as f64
            })
            .collect()
    };
    let limits: Vec<Option<Vec<f64>>> = (0..total)
        .into_par_iter()
        .map(|i| newton_ode(&seed_at(i), f, 10.0 * half_width.max(1.0)))
        .collect();

    let mut found: Vec<Vec<f64>> = Vec::new();
    for u in limits.into_iter().flatten() {
        let dup = found
            .iter()
            .any(|p| p.iter().zip(&u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() < MERGE_RADIUS);
        if !dup {
            found.push(u);
        }
    }
    if found.is_empty() {
        return Err(Error::NoEquilibria);
    }
    found.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(found.into_iter().map(|u| ode_equilibrium(u, f, hyperbolicity_tol)).collect())
}

/// Galerkin matrix of `v -> f'(u) v` on flattened coefficients
/// (index `i * (K + 1) + k`), restricted to the first `modes` modes.
pub fn nemytskii_jacobian(u: &SpectralField, basis: &CosineBasis, f: &Nonlinearity, modes: usize) -> Result<DMatrix<f64>> {
    let n = u.components();
    let m = modes.min(basis.modes() + 1);
    let grid = basis.to_grid(u)?;
    let g = basis.node_count();
    let syn = basis.synthesis_matrix();
    let ana = basis.analysis_matrix();
    // per-node Jacobians, row-major n x n
    let jac: Vec<Vec<f64>> = (0..g)
        .map(|j| {
            let uj: Vec<f64> = (0..n).map(|i| grid.values[[i, j]]).collect();
            f.jacobian(&uj)
        })
        .collect();
    let mut out = DMatrix::zeros(n * m, n * m);
    for a in 0..n {
        for b in 0..n {
            for k in 0..m {
                for l in 0..m {
                    let mut acc = 0.0;
                    for j in 0..g {
                        acc += ana[[j, k]] * jac[j][a * n + b] * syn[[l, j]];
                    }
                    out[(a * m + k, b * m + l)] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Linearization `-A_eps + f'(u)` of the Galerkin PDE at `u`, truncated to `modes` modes.
pub fn pde_linearization(u: &SpectralField, problem: &Problem<'_>, modes: usize) -> Result<DMatrix<f64>> {
    let n = u.components();
    let m = modes.min(problem.basis.modes() + 1);
    let mut lin = nemytskii_jacobian(u, problem.basis, problem.f, m)?;
    let sym = problem.diffusion.operator_symbol(problem.basis);
    for i in 0..n {
        for k in 0..m {
            lin[(i * m + k, i * m + k)] -= sym[[i, k]];
        }
    }
    Ok(lin)
}

fn pde_residual_field(u: &SpectralField, problem: &Problem<'_>) -> Result<SpectralField> {
    let fu = evaluate_f(u, problem.basis, problem.f)?;
    let au = &u.coeffs * &problem.diffusion.operator_symbol(problem.basis);
    Ok(SpectralField { coeffs: au - fu.coeffs })
}

/// `||A_eps u - f(u)||_{L^2}`.
pub fn pde_residual(u: &SpectralField, problem: &Problem<'_>) -> Result<f64> {
    Ok(pde_residual_field(u, problem)?.l2_norm())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeNewtonParams {
    pub residual_tol: f64,
    pub max_iterations: usize,
    pub hyperbolicity_tol: f64,
}

impl Default for PdeNewtonParams {
    fn default() -> Self {
        Self {
            residual_tol: 1e-8,
            max_iterations: 60,
            hyperbolicity_tol: HYPERBOLICITY_TOL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeedFailure {
    pub seed_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct PdeEquilibria {
    pub points: Vec<EquilibriumPoint>,
    pub failures: Vec<SeedFailure>,
}

fn newton_pde(seed: &SpectralField, problem: &Problem<'_>, params: &PdeNewtonParams) -> Result<SpectralField> {
    let n = seed.components();
    let cols = problem.basis.modes() + 1;
    let sym = problem.diffusion.operator_symbol(problem.basis);
    let mut u = seed.clone();
    let mut res = pde_residual_field(&u, problem)?;
    let mut r = res.l2_norm();
    for it in 0..params.max_iterations {
        if r < params.residual_tol * 1e-4 {
            break;
        }
        // Newton on A^{-1} (A u - f(u)) = 0, preconditioned by the diagonal A_eps
        let mut jac = -pde_linearization(&u, problem, cols)?;
        for row in 0..n * cols {
            let scale = 1.0 / sym[[row / cols, row % cols]];
            for c in 0..n * cols {
                jac[(row, c)] *= scale;
            }
        }
        let rhs = DVector::from_iterator(n * cols, res.coeffs.iter().enumerate().map(|(idx, v)| -v / sym[[idx / cols, idx % cols]]));
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::invalid(format!("singular Newton matrix at iteration {it}")))?;
        let mut damping = 1.0;
        loop {
            let mut trial = u.clone();
            for (c, s) in trial.coeffs.iter_mut().zip(step.iter()) {
                *c += damping * s;
            }
            let tres = pde_residual_field(&trial, problem)?;
            let rt = tres.l2_norm();
            if rt < (1.0 - 1e-4 * damping) * r || damping < 1e-6 {
                u = trial;
                res = tres;
                r = rt;
                break;
            }
            damping *= 0.5;
        }
        if !(u.l2_norm() < 1e6) {
            return Err(Error::invalid("Newton iterate diverged"));
        }
    }
    if r < params.residual_tol {
        Ok(u)
    } else {
        Err(Error::invalid(format!("Newton stalled at residual {r:e}")))
    }
}

/// Builds the equilibrium record for a PDE state, spectrum from the leading
/// [`SPECTRUM_MODES`] Galerkin modes with the diagonal tail appended.
pub fn pde_equilibrium(u: SpectralField, problem: &Problem<'_>, tol: f64) -> Result<EquilibriumPoint> {
    let n = u.components();
    let cols = problem.basis.modes() + 1;
    let m = SPECTRUM_MODES.min(cols);
    let truncated = pde_linearization(&u, problem, m)?;
    let mut spectrum = sorted_spectrum(&truncated);
    if cols > m {
        let diag = nemytskii_jacobian(&u, problem.basis, problem.f, cols)?;
        let sym = problem.diffusion.operator_symbol(problem.basis);
        for i in 0..n {
            for k in m..cols {
                spectrum.push(Complex::new(-sym[[i, k]] + diag[(i * cols + k, i * cols + k)], 0.0));
            }
        }
        spectrum.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    }
    let linearization = pde_linearization(&u, problem, cols)?;
    Ok(EquilibriumPoint {
        residual: pde_residual(&u, problem)?,
        stability: classify(&spectrum, tol),
        spectrum,
        linearization,
        location: EquilibriumLocation::Field(u),
    })
}

/// Newton on `A_eps u - f(u) = 0` from each seed; failures are reported per seed.
pub fn find_equilibria_pde(problem: &Problem<'_>, seeds: &[SpectralField], params: &PdeNewtonParams) -> Result<PdeEquilibria> {
    for s in seeds {
        problem.basis.check_field(s)?;
    }
    let outcomes: Vec<Result<SpectralField>> = seeds.par_iter().map(|s| newton_pde(s, problem, params)).collect();
    let norm = problem.energy_norm();
    let mut fields: Vec<SpectralField> = Vec::new();
    let mut failures = Vec::new();
    for (seed_index, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(u) => {
                if !fields.iter().any(|p| norm.distance(p, &u) < MERGE_RADIUS) {
                    fields.push(u);
                }
            }
            Err(e) => failures.push(SeedFailure {
                seed_index,
                reason: e.to_string(),
            }),
        }
    }
    let points = fields
        .into_iter()
        .map(|u| pde_equilibrium(u, problem, params.hyperbolicity_tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(PdeEquilibria { points, failures })
}
