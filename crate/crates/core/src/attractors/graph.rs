//! Fixed-point iteration for the graph map whose graph over the constants is
//! the invariant manifold, restricted to a grid of averages.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::Problem;
use crate::error::{Error, Result};
use crate::spectral::{EnergyNorm, GridField, SpectralField};

/// Tensor-product grid of averages `v in R^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphGrid {
    pub axes: Vec<Vec<f64>>,
}

impl GraphGrid {
    /// Uniform grid over the box `[lo, hi]` inflated by `inflate` of its width
    /// on each side (a degenerate axis is widened to unit width first).
    pub fn uniform(lo: &[f64], hi: &[f64], points_per_axis: usize, inflate: f64) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::invalid("grid bounds must be nonempty and of equal length"));
        }
        if points_per_axis < 2 {
            return Err(Error::invalid("graph grid needs at least 2 points per axis"));
        }
        let axes = lo
            .iter()
            .zip(hi)
            .map(|(&a, &b)| {
                let (a, b) = if b - a > 1e-12 { (a, b) } else { (a - 0.5, b + 0.5) };
                let pad = inflate * (b - a);
                let (a, b) = (a - pad, b + pad);
                (0..points_per_axis)
                    .map(|j| a + (b - a) * j as f64 / (points_per_axis - 1) as f64)
                    .collect()
            })
            .collect();
        Ok(Self { axes })
    }

    pub fn dimension(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid points in row-major order (last axis fastest).
    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|idx| self.point(idx)).collect()
    }

    fn point(&self, mut idx: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension()];
        for (d, axis) in self.axes.iter().enumerate().rev() {
            out[d] = axis[idx % axis.len()];
            idx /= axis.len();
        }
        out
    }

    /// Multilinear interpolation weights `(flat index, weight)`; the flag is
    /// set when `v` lies outside the grid and was clamped.
    fn stencil(&self, v: &[f64]) -> (Vec<(usize, f64)>, bool) {
        let mut clamped = false;
        let mut out = vec![(0usize, 1.0)];
        for (d, axis) in self.axes.iter().enumerate() {
            let m = axis.len();
            let (lo, hi) = (axis[0], axis[m - 1]);
            let x = if v[d] < lo || v[d] > hi {
                clamped = true;
                v[d].clamp(lo, hi)
            } else {
                v[d]
            };
            let cell = ((x - lo) / (hi - lo) * (m - 1) as f64).floor().clamp(0.0, (m - 2) as f64) as usize;
            let t = ((x - axis[cell]) / (axis[cell + 1] - axis[cell])).clamp(0.0, 1.0);
            let mut next = Vec::with_capacity(out.len() * 2);
            for (idx, w) in out {
                next.push((idx * m + cell, w * (1.0 - t)));
                next.push((idx * m + cell + 1, w * t));
            }
            out = next;
        }
        (out, clamped)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphParams {
    /// Operational `mu` entering the spectral-gap condition.
    pub mu: f64,
    pub max_iterations: usize,
    /// Stop once successive iterates differ by less than this (sup of energy norms).
    pub tol: f64,
    /// Initial guess `amplitude * phi_1` in every component.
    pub initial_amplitude: f64,
    /// Backward horizon is `horizon_factor / gap`.
    pub horizon_factor: f64,
    /// Backward-flow steps over the horizon.
    pub steps: usize,
}

impl GraphParams {
    pub fn new(mu: f64) -> Self {
        Self {
            mu,
            max_iterations: 60,
            tol: 1e-13,
            initial_amplitude: 0.1,
            horizon_factor: 10.0,
            steps: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GraphEstimate {
    pub v_grid: Vec<Vec<f64>>,
    pub w_values: Vec<SpectralField>,
    /// `max_v ||s(v)||_{X_eps^{1/2}}` over the grid.
    pub sup_norm: f64,
    /// Ratio of successive iterate differences.
    pub factors: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when a backward orbit left the grid and was clamped for interpolation.
    pub clamped: bool,
    pub horizon: f64,
    /// `d_eps lambda_1 + 1 - mu - Lip(F)`.
    pub gap: f64,
}

impl GraphEstimate {
    pub fn max_factor(&self) -> f64 {
        self.factors.iter().copied().fold(0.0, f64::max)
    }
}

/// `d_eps lambda_1 + 1 - mu - Lip(F)`.
pub fn spectral_gap(problem: &Problem<'_>, mu: f64) -> f64 {
    problem.diffusion.d_eps() * problem.basis.lambda1() + 1.0 - mu - problem.f.lipschitz()
}

/// Exact weights of `int_{-h}^0 e^{lambda s} q(s) ds` for `q` linear between
/// `q(-h)` (first) and `q(0)` (second).
fn linear_exp_weights(lambda: f64, h: f64) -> (f64, f64) {
    let x = lambda * h;
    if x < 1e-3 {
        // series in x, scaled by h
        let at_left = h * (0.5 - x / 3.0 + x * x / 8.0);
        let at_right = h * (0.5 - x / 6.0 + x * x / 24.0);
        (at_left, at_right)
    } else {
        let e = (-x).exp();
        let denom = lambda * x;
        ((-(-x).exp_m1() - x * e) / denom, (x + (-x).exp_m1()) / denom)
    }
}

struct Stepper<'a> {
    problem: Problem<'a>,
    grid: &'a GraphGrid,
    current: &'a [SpectralField],
}

impl Stepper<'_> {
    /// `s_m(v)` by interpolation, plus the clamping flag.
    fn graph_at(&self, v: &[f64]) -> (SpectralField, bool) {
        let (stencil, clamped) = self.grid.stencil(v);
        let mut out = SpectralField {
            coeffs: Array2::zeros(self.current[0].coeffs.dim()),
        };
        for (idx, w) in stencil {
            if w != 0.0 {
                out.coeffs.scaled_add(w, &self.current[idx].coeffs);
            }
        }
        (out, clamped)
    }

    /// `(S(v, s), Q(v, s))` for `s = s_m(v)`.
    fn reduced(&self, v: &[f64]) -> Result<(Vec<f64>, SpectralField, bool)> {
        let (mut u, clamped) = self.graph_at(v);
        let n = v.len();
        if self.problem.f.is_zero() {
            return Ok((vec![0.0; n], SpectralField { coeffs: Array2::zeros(u.coeffs.dim()) }, clamped));
        }
        for (i, &vi) in v.iter().enumerate() {
            u.coeffs[[i, 0]] = vi;
        }
        let basis = self.problem.basis;
        let grid = basis.to_grid(&u)?;
        let (nn, g) = grid.values.dim();
        let mut fv = GridField {
            values: Array2::zeros((nn, g)),
        };
        let mut point = vec![0.0; nn];
        let mut value = vec![0.0; nn];
        for j in 0..g {
            for i in 0..nn {
                point[i] = grid.values[[i, j]];
            }
            self.problem.f.eval_into(&point, &mut value);
            for i in 0..nn {
                fv.values[[i, j]] = value[i];
            }
        }
        let mut q = basis.to_spectral(&fv)?;
        let s: Vec<f64> = (0..n).map(|i| q.coeffs[[i, 0]]).collect();
        q.coeffs.column_mut(0).fill(0.0);
        Ok((s, q, clamped))
    }

    fn rhs(&self, v: &[f64]) -> Result<(Vec<f64>, SpectralField, bool)> {
        let (s, q, c) = self.reduced(v)?;
        Ok((v.iter().zip(&s).map(|(a, b)| -a + b).collect(), q, c))
    }

    /// New graph value at `v0`: backward RK4 flow of the reduced equation and
    /// exact exponential quadrature of `Q` along it.
    fn new_value(&self, v0: &[f64], h: f64, steps: usize, weights: &[(Array2<f64>, Array2<f64>, Array2<f64>)]) -> Result<(SpectralField, bool)> {
        let n = v0.len();
        let mut v = v0.to_vec();
        let (mut k1, mut q_right, mut clamped) = self.rhs(&v)?;
        let mut acc = Array2::<f64>::zeros(q_right.coeffs.dim());
        let (wl, wr, decay) = &weights[0];
        let mut factor = Array2::<f64>::ones(decay.dim());
        for _ in 0..steps {
            // RK4 with step -h
            let stage = |base: &[f64], k: &[f64], c: f64| -> Vec<f64> { (0..n).map(|i| base[i] - c * h * k[i]).collect() };
            let (k2, _, c2) = self.rhs(&stage(&v, &k1, 0.5))?;
            let (k3, _, c3) = self.rhs(&stage(&v, &k2, 0.5))?;
            let (k4, _, c4) = self.rhs(&stage(&v, &k3, 1.0))?;
            for i in 0..n {
                v[i] -= h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    context: "backward reduced flow".into(),
                });
            }
            let (k_next, q_left, c5) = self.rhs(&v)?;
            clamped |= c2 | c3 | c4 | c5;
            // interval [sigma - h, sigma], scaled by e^{lambda sigma}
            acc = acc + &factor * &(wl * &q_left.coeffs + wr * &q_right.coeffs);
            factor = factor * decay;
            q_right = q_left;
            k1 = k_next;
        }
        acc.column_mut(0).fill(0.0);
        Ok((SpectralField { coeffs: acc }, clamped))
    }
}

/// Picard iteration of the graph map on `grid`.
pub fn graph_iteration(problem: Problem<'_>, grid: &GraphGrid, params: &GraphParams) -> Result<GraphEstimate> {
    let n = problem.components();
    if grid.dimension() != n {
        return Err(Error::invalid(format!("grid is {}-dimensional but the system has {n} components", grid.dimension())));
    }
    if grid.axes.iter().any(|a| a.len() < 2) {
        return Err(Error::invalid("graph grid needs at least 2 points per axis"));
    }
    if params.steps == 0 || params.max_iterations == 0 {
        return Err(Error::invalid("graph iteration needs steps >= 1 and max_iterations >= 1"));
    }
    let gap = spectral_gap(&problem, params.mu);
    if !(gap > 0.0) {
        return Err(Error::Precondition(format!(
            "spectral gap d_eps lambda_1 + 1 - mu - Lip(F) = {gap:.6} is not positive (mu = {:.6}, Lip = {:.6})",
            params.mu,
            problem.f.lipschitz()
        )));
    }
    let horizon = params.horizon_factor / gap;
    let h = horizon / params.steps as f64;
    let sym = problem.diffusion.operator_symbol(problem.basis);
    let wl = sym.mapv(|l| linear_exp_weights(l, h).0);
    let wr = sym.mapv(|l| linear_exp_weights(l, h).1);
    let decay = sym.mapv(|l| (-l * h).exp());
    let weights = vec![(wl, wr, decay)];
    let norm = EnergyNorm::new(problem.diffusion, problem.basis);

    let points = grid.points();
    let mut initial = SpectralField::zeros(n, problem.basis);
    for i in 0..n {
        initial.coeffs[[i, 1]] = params.initial_amplitude;
    }
    let mut current: Vec<SpectralField> = vec![initial; points.len()];
    let mut factors = Vec::new();
    let mut previous_diff: Option<f64> = None;
    let mut clamped = false;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iterations {
        let stepper = Stepper {
            problem,
            grid,
            current: &current,
        };
        let next: Vec<(SpectralField, bool)> = points
            .par_iter()
            .map(|v| stepper.new_value(v, h, params.steps, &weights))
            .collect::<Result<_>>()?;
        iterations += 1;
        let diff = next
            .iter()
            .zip(&current)
            .map(|((a, _), b)| norm.distance(a, b))
            .fold(0.0, f64::max);
        clamped |= next.iter().any(|(_, c)| *c);
        current = next.into_iter().map(|(s, _)| s).collect();
        if diff <= params.tol {
            converged = true;
            break;
        }
        if let Some(prev) = previous_diff {
            let factor = diff / prev;
            factors.push(factor);
            if factor >= 1.0 {
                return Err(Error::NonContraction { iteration: iterations, factor });
            }
        }
        previous_diff = Some(diff);
    }
    let sup_norm = current.iter().map(|s| norm.norm(s)).fold(0.0, f64::max);
    Ok(GraphEstimate {
        v_grid: points,
        w_values: current,
        sup_norm,
        factors,
        iterations,
        converged,
        clamped,
        horizon,
        gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::compute_m_and_mu;
    use crate::nonlinearity::Nonlinearity;
    use crate::spectral::{CosineBasis, DiffusionSpec, DomainSpec};

    fn setup(k: usize, d: f64) -> (CosineBasis, DiffusionSpec) {
        (
            CosineBasis::new(&DomainSpec::new(1).unwrap(), k).unwrap(),
            DiffusionSpec::uniform(1, d).unwrap(),
        )
    }

    #[test]
    fn exponential_weights_match_quadrature() {
        for (lambda, h) in [(11.0, 0.05), (2e3, 0.02), (1.0, 1e-5)] {
            let (wl, wr) = linear_exp_weights(lambda, h);
            // composite Simpson on [-h, 0]
            let m = 20_000;
            let (mut al, mut ar) = (0.0, 0.0);
            for j in 0..=m {
                let s = -h + h * j as f64 / m as f64;
                let t = (s + h) / h;
                let c = if j == 0 || j == m { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
                al += c * (lambda * s).exp() * (1.0 - t);
                ar += c * (lambda * s).exp() * t;
            }
            al *= h / (3.0 * m as f64);
            ar *= h / (3.0 * m as f64);
            assert!((wl - al).abs() < 1e-9 * al.abs().max(1e-300) + 1e-15, "{lambda} {h}: {wl} {al}");
            assert!((wr - ar).abs() < 1e-9 * ar.abs().max(1e-300) + 1e-15, "{lambda} {h}: {wr} {ar}");
        }
    }

    #[test]
    fn stencil_interpolates_linear_functions() {
        let g = GraphGrid::uniform(&[-1.0, 0.0], &[1.0, 2.0], 5, 0.0).unwrap();
        let pts = g.points();
        let f = |p: &[f64]| 3.0 * p[0] - 2.0 * p[1] + 0.5;
        let (st, clamped) = g.stencil(&[0.3, 1.7]);
        assert!(!clamped);
        let val: f64 = st.iter().map(|(i, w)| w * f(&pts[*i])).sum();
        assert!((val - f(&[0.3, 1.7])).abs() < 1e-13);
        assert!(g.stencil(&[5.0, 1.0]).1);
    }

    #[test]
    fn zero_nonlinearity_gives_zero_graph_after_one_step() {
        let (b, d) = setup(16, 1.0);
        let f = Nonlinearity::zero(1);
        let p = Problem::new(&b, &d, &f).unwrap();
        let grid = GraphGrid::uniform(&[-1.0], &[1.0], 9, 0.2).unwrap();
        let mut params = GraphParams::new(1.9);
        params.max_iterations = 1;
        let est = graph_iteration(p, &grid, &params).unwrap();
        assert_eq!(est.iterations, 1);
        assert!(est.w_values.iter().all(|s| s.coeffs.iter().all(|&c| c == 0.0)));
        assert_eq!(est.sup_norm, 0.0);
    }

    #[test]
    fn linear_nonlinearity_has_zero_graph() {
        let (b, d) = setup(16, 2.0);
        let f = Nonlinearity::Linear { c: 0.5, components: 1 };
        let p = Problem::new(&b, &d, &f).unwrap();
        let grid = GraphGrid::uniform(&[-1.0], &[1.0], 9, 0.2).unwrap();
        let est = graph_iteration(p, &grid, &GraphParams::new(1.9)).unwrap();
        assert!(est.converged);
        assert!(est.sup_norm < 1e-12);
        assert!(est.factors.iter().all(|&q| q < 1.0));
    }

    #[test]
    fn pitchfork_iteration_contracts() {
        let (b, d) = setup(16, 1.0);
        let f = Nonlinearity::pitchfork(2.0);
        let p = Problem::new(&b, &d, &f).unwrap();
        let mu = compute_m_and_mu(&d, &b, 10.0).unwrap().mu;
        let grid = GraphGrid::uniform(&[-1.915], &[1.915], 17, 0.2).unwrap();
        let est = graph_iteration(p, &grid, &GraphParams::new(mu)).unwrap();
        assert!(est.gap > 0.0);
        assert!(est.converged);
        assert!(!est.factors.is_empty() && est.max_factor() < 1.0);
        assert!(est.sup_norm < 1e-12, "{}", est.sup_norm);
        for s in &est.w_values {
            assert!(s.mean().iter().all(|m| *m == 0.0));
        }
    }

    #[test]
    fn gap_condition_is_enforced() {
        let (b, d) = setup(16, 0.1);
        let f = Nonlinearity::pitchfork(2.0);
        let p = Problem::new(&b, &d, &f).unwrap();
        let grid = GraphGrid::uniform(&[-1.0], &[1.0], 5, 0.2).unwrap();
        assert!(matches!(graph_iteration(p, &grid, &GraphParams::new(6.0)), Err(Error::Precondition(_))));
    }
}
