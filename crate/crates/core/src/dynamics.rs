//! Time evolution of `u_t + A_eps u = f(u)` and of the limiting ODE
//! `v' + v = F(v)`, the average/fluctuation split `u = v + w`, and the
//! constants of the homogenization estimate.
//!
//! The PDE is advanced with exponential time differencing: the linear part is
//! propagated exactly mode by mode, so the step size is never limited by the
//! stiffness that large diffusion introduces.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;
use crate::rates::linear_fit;
use crate::spectral::{check_components, CosineBasis, DiffusionSpec, EnergyNorm, GridField, SpectralField};

/// Norm above which a run is declared to have blown up.
pub const BLOW_UP_NORM: f64 = 1e8;

/// A PDE instance: basis, diffusion matrix and reaction term.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub basis: &'a CosineBasis,
    pub diffusion: &'a DiffusionSpec,
    pub f: &'a Nonlinearity,
}

impl<'a> Problem<'a> {
    pub fn new(basis: &'a CosineBasis, diffusion: &'a DiffusionSpec, f: &'a Nonlinearity) -> Result<Self> {
        if diffusion.components() != f.components() {
            return Err(Error::invalid(format!(
                "diffusion has {} components but {} acts on {}",
                diffusion.components(),
                f,
                f.components()
            )));
        }
        Ok(Self { basis, diffusion, f })
    }

    pub fn components(&self) -> usize {
        self.diffusion.components()
    }

    pub fn energy_norm(&self) -> EnergyNorm {
        EnergyNorm::new(self.diffusion, self.basis)
    }
}

/// Applies `F` pointwise on the grid, `n x G`.
fn apply_on_grid(grid: &GridField, f: &Nonlinearity) -> Result<GridField> {
    let (n, g) = grid.values.dim();
    let mut out = GridField {
        values: ndarray::Array2::zeros((n, g)),
    };
    let mut u = vec![0.0; n];
    let mut fu = vec![0.0; n];
    for j in 0..g {
        for i in 0..n {
            u[i] = grid.values[[i, j]];
        }
        f.eval_into(&u, &mut fu);
        for i in 0..n {
            out.values[[i, j]] = fu[i];
        }
    }
    if out.values.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("evaluation of {f}"),
        });
    }
    Ok(out)
}

/// Pseudospectral Nemytskii map `f(u)(x) = F(u(x))`, truncated to `K` modes.
pub fn evaluate_f(u: &SpectralField, basis: &CosineBasis, f: &Nonlinearity) -> Result<SpectralField> {
    if u.components() != f.components() {
        return Err(Error::invalid(format!("field has {} components, {f} expects {}", u.components(), f.components())));
    }
    if f.is_zero() {
        basis.check_field(u)?;
        return Ok(SpectralField::zeros(u.components(), basis));
    }
    let grid = basis.to_grid(u)?;
    basis.to_spectral(&apply_on_grid(&grid, f)?)
}

/// `u = v + w` with `v = P u` and `P w = 0`.
pub fn split_vw(u: &SpectralField) -> (Vec<f64>, SpectralField) {
    (u.mean(), u.fluctuation())
}

fn check_zero_mean(w: &SpectralField) -> Result<()> {
    let scale = w.l2_norm().max(1.0);
    if let Some(m) = w.mean().into_iter().find(|m| m.abs() > 1e-12 * scale) {
        return Err(Error::Precondition(format!("w must have zero mean, found mean {m:e}")));
    }
    Ok(())
}

fn f_of_sum(v: &[f64], w: &SpectralField, basis: &CosineBasis, f: &Nonlinearity) -> Result<GridField> {
    check_zero_mean(w)?;
    let mut u = w.clone();
    for (i, &vi) in v.iter().enumerate() {
        u.coeffs[[i, 0]] = vi;
    }
    let grid = basis.to_grid(&u)?;
    apply_on_grid(&grid, f)
}

/// `S(v, w) = \int F(v + w) dx`.
pub fn s_of(v: &[f64], w: &SpectralField, basis: &CosineBasis, f: &Nonlinearity) -> Result<Vec<f64>> {
    Ok(f_of_sum(v, w, basis, f)?.mean())
}

/// `Q(v, w) = F(v + w) - \int F(v + w) dx`.
pub fn q_of(v: &[f64], w: &SpectralField, basis: &CosineBasis, f: &Nonlinearity) -> Result<SpectralField> {
    let mut q = basis.to_spectral(&f_of_sum(v, w, basis, f)?)?;
    q.coeffs.column_mut(0).fill(0.0);
    Ok(q)
}

/// `e^{-A_eps t} u`.
pub fn linear_semigroup_apply(u: &SpectralField, diffusion: &DiffusionSpec, basis: &CosineBasis, t: f64) -> Result<SpectralField> {
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("semigroup time t = {t} must be >= 0")));
    }
    basis.check_field(u)?;
    check_components(u, diffusion)?;
    Ok(SpectralField {
        coeffs: &u.coeffs * &diffusion.operator_symbol(basis).mapv(|l| (-l * t).exp()),
    })
}

/// Exact `L^2 -> X^{1/2}` norm of `e^{-A_eps t}` on the zero-mean subspace:
/// `kappa(t) = max_{i, k >= 1} e^{-lambda t} sqrt(lambda)`, `lambda = eps_i lambda_k + 1`.
pub fn semigroup_kernel_bound(diffusion: &DiffusionSpec, basis: &CosineBasis, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::invalid(format!("kernel bound needs t > 0, got {t}")));
    }
    Ok(kernel(diffusion, basis, t))
}

fn kernel(diffusion: &DiffusionSpec, basis: &CosineBasis, t: f64) -> f64 {
    log_kernel(diffusion, basis, t).exp()
}

fn log_kernel(diffusion: &DiffusionSpec, basis: &CosineBasis, t: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for &eps in diffusion.eps() {
        for &lk in &basis.eigenvalues()[1..] {
            let l = eps * lk + 1.0;
            best = best.max(-l * t + 0.5 * l.ln());
        }
    }
    best
}

/// Upper bounds on `kappa(t)`: the calculus bound `(2 e t)^{-1/2}` and the
/// two-case split `e^{-lambda_2 t} max(sqrt(lambda_2), (2 e t)^{-1/2} e^{lambda_2 t})`.
pub fn kernel_upper_bounds(diffusion: &DiffusionSpec, basis: &CosineBasis, t: f64) -> (f64, f64) {
    let l2 = diffusion.lambda2(basis);
    let calculus = (2.0 * std::f64::consts::E * t).powf(-0.5);
    let split = (-l2 * t).exp() * l2.sqrt().max(calculus * (l2 * t).exp());
    (calculus, split)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuReport {
    /// `max(1, sup_{0 < t <= T*} kappa(t) e^{lambda_2 t} sqrt(t))`.
    pub m: f64,
    /// `(2 M Gamma(1/2))^{1/2}`.
    pub mu: f64,
    /// `(mu - 1) / lambda_1`.
    pub mu_bar: f64,
    pub horizon: f64,
    /// Where the supremum was attained.
    pub t_star: f64,
}

pub fn gamma_half() -> f64 {
    PI.sqrt()
}

/// `mu = (2 M Gamma(1/2))^{1/2}`.
pub fn mu_from_m(m: f64) -> f64 {
    (2.0 * m * gamma_half()).sqrt()
}

/// `mu_bar = (mu - 1) / lambda_1`.
pub fn mu_bar_from_mu(mu: f64, lambda1: f64) -> f64 {
    (mu - 1.0) / lambda1
}

/// Operational `M`, `mu`, `mu_bar` on the horizon `(0, T*]`.
pub fn compute_m_and_mu(diffusion: &DiffusionSpec, basis: &CosineBasis, horizon: f64) -> Result<MuReport> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!("horizon T* = {horizon} must be positive")));
    }
    let l2 = diffusion.lambda2(basis);
    // evaluated in log space: e^{lambda_2 t} alone overflows for large d_eps
    let g = |t: f64| (log_kernel(diffusion, basis, t) + l2 * t + 0.5 * t.ln()).exp();

    const SAMPLES: usize = 4000;
    let t_min = horizon * 1e-10;
    let ratio = (horizon / t_min).powf(1.0 / (SAMPLES - 1) as f64);
    let ts: Vec<f64> = (0..SAMPLES)
        .map(|i| if i == SAMPLES - 1 { horizon } else { t_min * ratio.powi(i as i32) })
        .collect();
    let (mut best_i, mut best) = (0, f64::NEG_INFINITY);
    for (i, &t) in ts.iter().enumerate() {
        let v = g(t);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    // golden-section refinement on the bracketing cell
    let mut a = ts[best_i.saturating_sub(1)];
    let mut b = ts[(best_i + 1).min(SAMPLES - 1)];
    let mut t_star = ts[best_i];
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if g(c) > g(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let mid = 0.5 * (a + b);
    if g(mid) > best {
        best = g(mid);
        t_star = mid;
    }
    let m = best.max(1.0);
    let mu = mu_from_m(m);
    Ok(MuReport {
        m,
        mu,
        mu_bar: mu_bar_from_mu(mu, basis.lambda1()),
        horizon,
        t_star,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Etd1,
    Etd2rk,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "etd1" => Ok(Scheme::Etd1),
            "etd2rk" => Ok(Scheme::Etd2rk),
            other => Err(Error::invalid(format!("unknown scheme '{other}' (expected etd1 or etd2rk)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveParams {
    pub t_end: f64,
    pub dt: f64,
    pub scheme: Scheme,
    /// Record diagnostics every `stride` steps.
    pub stride: usize,
}

impl Default for EvolveParams {
    fn default() -> Self {
        Self {
            t_end: 20.0,
            dt: 1e-3,
            scheme: Scheme::Etd2rk,
            stride: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub v: Vec<f64>,
    /// `||w||_{X^{1/2}}`.
    pub w_energy: f64,
    pub w_l2: f64,
    /// `||Q(v, w)||_{L^2}`.
    pub q_l2: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SpectralField>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub d_eps: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &SpectralField {
        self.states.last().expect("trajectory has at least the initial state")
    }

    pub fn csv_header(components: usize) -> String {
        let mut h = String::from("t");
        for i in 1..=components {
            let _ = write!(h, ",v_{i}");
        }
        h.push_str(",w_xhalf,w_l2,Q_l2");
        h
    }

    pub fn to_csv(&self) -> String {
        let n = self.diagnostics.first().map_or(0, |d| d.v.len());
        let mut out = Self::csv_header(n);
        out.push('\n');
        for (t, d) in self.times.iter().zip(&self.diagnostics) {
            let _ = write!(out, "{t}");
            for v in &d.v {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{},{},{}", d.w_energy, d.w_l2, d.q_l2);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// `phi_1(z) = (e^z - 1) / z`, with a series near zero.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0
    } else {
        z.exp_m1() / z
    }
}

/// `phi_2(z) = (e^z - 1 - z) / z^2`, with a series near zero.
pub fn phi2(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        0.5 + z / 6.0 + z * z / 24.0 + z * z * z / 120.0
    } else {
        (z.exp_m1() - z) / (z * z)
    }
}

/// Precomputed ETD weights for one step size.
pub(crate) struct EtdStepper<'a> {
    problem: Problem<'a>,
    scheme: Scheme,
    decay: ndarray::Array2<f64>,
    w1: ndarray::Array2<f64>,
    w2: ndarray::Array2<f64>,
}

impl<'a> EtdStepper<'a> {
    pub(crate) fn new(problem: Problem<'a>, dt: f64, scheme: Scheme) -> Self {
        let sym = problem.diffusion.operator_symbol(problem.basis);
        Self {
            problem,
            scheme,
            decay: sym.mapv(|l| (-l * dt).exp()),
            w1: sym.mapv(|l| dt * phi1(-l * dt)),
            w2: sym.mapv(|l| dt * phi2(-l * dt)),
        }
    }

    pub(crate) fn step(&self, u: &SpectralField) -> Result<SpectralField> {
        let Problem { basis, f, .. } = self.problem;
        if f.is_zero() {
            return Ok(SpectralField {
                coeffs: &u.coeffs * &self.decay,
            });
        }
        let nu = evaluate_f(u, basis, f)?;
        let a = &u.coeffs * &self.decay + &nu.coeffs * &self.w1;
        match self.scheme {
            Scheme::Etd1 => Ok(SpectralField { coeffs: a }),
            Scheme::Etd2rk => {
                let a = SpectralField { coeffs: a };
                let na = evaluate_f(&a, basis, f)?;
                Ok(SpectralField {
                    coeffs: a.coeffs + (&na.coeffs - &nu.coeffs) * &self.w2,
                })
            }
        }
    }
}

fn diagnostics(u: &SpectralField, problem: &Problem<'_>, norm: &EnergyNorm) -> Result<StepDiagnostics> {
    let (v, w) = split_vw(u);
    let q = if problem.f.is_zero() {
        0.0
    } else {
        q_of(&v, &w, problem.basis, problem.f)?.l2_norm()
    };
    Ok(StepDiagnostics {
        w_energy: norm.norm(&w),
        w_l2: w.l2_norm(),
        q_l2: q,
        v,
    })
}

/// Number of steps and the adjusted step size that lands exactly on `t_end`.
pub(crate) fn step_plan(t_end: f64, dt: f64) -> Result<(usize, f64)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("time step dt = {dt} must be positive")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::invalid(format!("horizon T = {t_end} must be >= 0")));
    }
    let steps = (t_end / dt).round().max(1.0) as usize;
    Ok((steps, t_end / steps as f64))
}

/// Integrates the PDE from `u0` to `params.t_end`.
pub fn evolve_pde(u0: &SpectralField, problem: Problem<'_>, params: &EvolveParams) -> Result<Trajectory> {
    problem.basis.check_field(u0)?;
    check_components(u0, problem.diffusion)?;
    if params.stride == 0 {
        return Err(Error::invalid("output stride must be >= 1"));
    }
    let (steps, dt) = step_plan(params.t_end, params.dt)?;
    let stepper = EtdStepper::new(problem, dt, params.scheme);
    let norm = problem.energy_norm();

    let mut u = u0.clone();
    let mut traj = Trajectory {
        times: vec![0.0],
        diagnostics: vec![diagnostics(&u, &problem, &norm)?],
        states: vec![u.clone()],
        d_eps: problem.diffusion.d_eps(),
    };
    for step in 1..=steps {
        u = stepper.step(&u)?;
        let t = step as f64 * dt;
        let size = u.l2_norm();
        if !(size <= BLOW_UP_NORM) {
            return Err(Error::BlowUp { time: t, norm: size });
        }
        if step % params.stride == 0 || step == steps {
            traj.times.push(t);
            traj.diagnostics.push(diagnostics(&u, &problem, &norm)?);
            traj.states.push(u.clone());
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl OdeTrajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least the initial state")
    }
}

/// Vector field `-v + F(v)` of the limiting ODE.
#[inline]
pub fn ode_rhs(v: &[f64], f: &Nonlinearity, out: &mut [f64]) {
    f.eval_into(v, out);
    for (o, x) in out.iter_mut().zip(v) {
        *o -= x;
    }
}

/// One classical RK4 step of `v' = sign (-v + F(v))`.
pub(crate) fn rk4_step(v: &mut [f64], f: &Nonlinearity, h: f64, scratch: &mut [Vec<f64>; 5]) {
    let n = v.len();
    let [k1, k2, k3, k4, tmp] = scratch;
    ode_rhs(v, f, k1);
    for i in 0..n {
        tmp[i] = v[i] + 0.5 * h * k1[i];
    }
    ode_rhs(tmp, f, k2);
    for i in 0..n {
        tmp[i] = v[i] + 0.5 * h * k2[i];
    }
    ode_rhs(tmp, f, k3);
    for i in 0..n {
        tmp[i] = v[i] + h * k3[i];
    }
    ode_rhs(tmp, f, k4);
    for i in 0..n {
        v[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

pub(crate) fn rk4_scratch(n: usize) -> [Vec<f64>; 5] {
    std::array::from_fn(|_| vec![0.0; n])
}

/// Integrates `v' + v = F(v)` with classical RK4, recording every `stride` steps.
pub fn evolve_ode(v0: &[f64], f: &Nonlinearity, t_end: f64, dt: f64, stride: usize) -> Result<OdeTrajectory> {
    if v0.len() != f.components() {
        return Err(Error::invalid(format!("initial state has {} components, {f} expects {}", v0.len(), f.components())));
    }
    if stride == 0 {
        return Err(Error::invalid("output stride must be >= 1"));
    }
    let (steps, h) = step_plan(t_end, dt)?;
    let mut v = v0.to_vec();
    let mut scratch = rk4_scratch(v.len());
    let mut out = OdeTrajectory {
        times: vec![0.0],
        states: vec![v.clone()],
    };
    for step in 1..=steps {
        rk4_step(&mut v, f, h, &mut scratch);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("ODE step at t = {}", step as f64 * h),
            });
        }
        if step % stride == 0 || step == steps {
            out.times.push(step as f64 * h);
            out.states.push(v.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayQuantity {
    WNorm,
    QNorm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitWindow {
    /// Fraction of the horizon discarded as transient.
    pub start_fraction: f64,
    /// Samples below `floor_ratio * max` are treated as underflow.
    pub floor_ratio: f64,
}

impl Default for FitWindow {
    fn default() -> Self {
        Self {
            start_fraction: 0.2,
            floor_ratio: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub fitted_rate: f64,
    pub fitted_amplitude: f64,
    /// RMS residual of the log-linear fit.
    pub residual: f64,
    /// `d_eps lambda_1 + 1 - mu`.
    pub theoretical_rate: f64,
    pub points_used: usize,
    /// Set when samples under the floor were cut from the window.
    pub truncated: bool,
}

/// Least-squares fit of `log q(t) = log C - rate t` over the post-transient window.
pub fn decay_rate_fit(
    traj: &Trajectory,
    quantity: DecayQuantity,
    window: &FitWindow,
    lambda1: f64,
    mu: f64,
) -> Result<DecayFit> {
    let values: Vec<f64> = traj
        .diagnostics
        .iter()
        .map(|d| match quantity {
            DecayQuantity::WNorm => d.w_energy,
            DecayQuantity::QNorm => d.q_l2,
        })
        .collect();
    let t_end = *traj.times.last().unwrap_or(&0.0);
    let start = window.start_fraction * t_end;
    let peak = values.iter().copied().fold(0.0, f64::max);
    let floor = (peak * window.floor_ratio).max(f64::MIN_POSITIVE);

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut truncated = false;
    for (&t, &q) in traj.times.iter().zip(&values) {
        if t < start {
            continue;
        }
        if !(q > floor) {
            truncated = true;
            break;
        }
        xs.push(t);
        ys.push(q.ln());
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientPoints {
            surviving: xs.len(),
            required: 2,
        });
    }
    let fit = linear_fit(&xs, &ys)?;
    Ok(DecayFit {
        fitted_rate: -fit.slope,
        fitted_amplitude: fit.intercept.exp(),
        residual: fit.rms_residual,
        theoretical_rate: traj.d_eps * lambda1 + 1.0 - mu,
        points_used: xs.len(),
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::DomainSpec;

    fn basis(k: usize) -> CosineBasis {
        CosineBasis::new(&DomainSpec::new(1).unwrap(), k).unwrap()
    }

    #[test]
    fn evaluate_f_examples() {
        let b = basis(16);
        let f = Nonlinearity::pitchfork(2.0);
        let zero = SpectralField::zeros(1, &b);
        assert!(evaluate_f(&zero, &b, &f).unwrap().l2_norm() < 1e-15);

        let c = evaluate_f(&SpectralField::constant(&[0.7], &b), &b, &f).unwrap();
        assert!((c.coeffs[[0, 0]] - 2.0 * 0.7f64.tanh()).abs() < 1e-14);
        assert!(c.fluctuation().l2_norm() < 1e-14);

        // Taylor oracle: 2 tanh(a phi_1) = 2 a phi_1 - (2/3) a^3 phi_1^3 + ...
        let a = 1e-4;
        let u = SpectralField::mode(1, 0, 1, a, &b);
        let r = evaluate_f(&u, &b, &f).unwrap();
        assert!((r.coeffs[[0, 1]] - 2.0 * a).abs() < 10.0 * a * a * a);
        let mut rest = r.clone();
        rest.coeffs[[0, 1]] = 0.0;
        assert!(rest.l2_norm() < 10.0 * a * a * a);
    }

    #[test]
    fn split_examples() {
        let b = basis(8);
        let (v, w) = split_vw(&SpectralField::constant(&[1.5], &b));
        assert_eq!(v, vec![1.5]);
        assert_eq!(w.l2_norm(), 0.0);
        let (v, w) = split_vw(&SpectralField::mode(1, 0, 1, 1.0, &b));
        assert_eq!(v, vec![0.0]);
        assert_eq!(w.coeffs[[0, 1]], 1.0);
    }

    #[test]
    fn s_and_q_at_zero_fluctuation() {
        let b = basis(8);
        let f = Nonlinearity::pitchfork(2.0);
        let w = SpectralField::zeros(1, &b);
        let s = s_of(&[0.8], &w, &b, &f).unwrap();
        assert!((s[0] - 2.0 * 0.8f64.tanh()).abs() < 1e-14);
        assert!(q_of(&[0.8], &w, &b, &f).unwrap().l2_norm() < 1e-14);
    }

    #[test]
    fn s_vanishes_for_odd_data() {
        // phi_1 is odd about x = 1/2 and F is odd, so the average vanishes.
        let b = basis(16);
        let f = Nonlinearity::pitchfork(2.0);
        let w = SpectralField::mode(1, 0, 1, 0.9, &b).add(&SpectralField::mode(1, 0, 3, 0.2, &b));
        assert!(s_of(&[0.0], &w, &b, &f).unwrap()[0].abs() < 1e-14);
    }

    #[test]
    fn s_and_q_match_fine_quadrature() {
        let b = basis(64);
        let f = Nonlinearity::pitchfork(2.0);
        let w = SpectralField::mode(1, 0, 1, 0.3, &b);
        let s = s_of(&[1.0], &w, &b, &f).unwrap()[0];
        let q = q_of(&[1.0], &w, &b, &f).unwrap();
        let g = |x: f64| 2.0 * (1.0 + 0.3 * 2f64.sqrt() * (PI * x).cos()).tanh();
        let n = 20_000;
        let h = 1.0 / n as f64;
        let simpson = |h2: &dyn Fn(f64) -> f64| {
            let mut acc = h2(0.0) + h2(1.0);
            for i in 1..n {
                acc += if i % 2 == 1 { 4.0 } else { 2.0 } * h2(i as f64 * h);
            }
            acc * h / 3.0
        };
        let s_oracle = simpson(&g);
        assert!((s - s_oracle).abs() < 1e-10);
        for k in 1..5 {
            let qk = simpson(&|x| (g(x) - s_oracle) * crate::spectral::basis_function(k, x));
            assert!((q.coeffs[[0, k]] - qk).abs() < 1e-10, "mode {k}");
        }
        assert_eq!(q.coeffs[[0, 0]], 0.0);
    }

    #[test]
    fn q_rejects_nonzero_mean() {
        let b = basis(8);
        let f = Nonlinearity::pitchfork(2.0);
        let w = SpectralField::constant(&[0.5], &b);
        assert!(matches!(q_of(&[0.0], &w, &b, &f), Err(Error::Precondition(_))));
    }

    #[test]
    fn semigroup_examples() {
        let b = basis(8);
        let d = DiffusionSpec::uniform(1, 1.0).unwrap();
        let u = SpectralField::constant(&[2.0], &b).add(&SpectralField::mode(1, 0, 2, 0.5, &b));
        assert_eq!(linear_semigroup_apply(&u, &d, &b, 0.0).unwrap(), u);
        let c = linear_semigroup_apply(&SpectralField::constant(&[1.0], &b), &d, &b, 1.0).unwrap();
        assert!((c.coeffs[[0, 0]] - (-1f64).exp()).abs() < 1e-16);
        let ts = linear_semigroup_apply(&linear_semigroup_apply(&u, &d, &b, 0.03).unwrap(), &d, &b, 0.05).unwrap();
        let direct = linear_semigroup_apply(&u, &d, &b, 0.08).unwrap();
        assert!(ts.max_abs_diff(&direct) < 1e-12);
        assert!(linear_semigroup_apply(&u, &d, &b, -1.0).is_err());
    }

    #[test]
    fn kernel_bound_cases() {
        let b = basis(128);
        let d = DiffusionSpec::uniform(1, 2.0).unwrap();
        let l2 = d.lambda2(&b);
        // large t: maximiser is lambda_2
        let t = 1.0;
        assert!(1.0 / (2.0 * t) < l2);
        let k = semigroup_kernel_bound(&d, &b, t).unwrap();
        assert!((k / ((-l2 * t).exp() * l2.sqrt()) - 1.0).abs() < 1e-13);
        // calculus bound and two-case bound at many t
        for i in 0..60 {
            let t = 1e-6 * 1.3f64.powi(i);
            let k = semigroup_kernel_bound(&d, &b, t).unwrap();
            let (calc, split) = kernel_upper_bounds(&d, &b, t);
            assert!(k <= calc * (1.0 + 1e-12), "t={t}");
            assert!(k <= split * (1.0 + 1e-12), "t={t}");
        }
        // worst-case field attains kappa
        let norm = EnergyNorm::new(&d, &b);
        let z = SpectralField::mode(1, 0, 1, 1.0, &b);
        let ez = linear_semigroup_apply(&z, &d, &b, t).unwrap();
        assert!((norm.norm(&ez) / k - 1.0).abs() < 1e-13);
        assert!(semigroup_kernel_bound(&d, &b, 0.0).is_err());
    }

    #[test]
    fn mu_constants() {
        assert!((gamma_half() - 1.7724539).abs() < 1e-7);
        let mu = mu_from_m(1.0);
        assert!((mu - 1.88279).abs() < 1e-5);
        // arbitrary-precision value of (sqrt(2 sqrt(pi)) - 1) / pi^2
        assert!((mu_bar_from_mu(mu, PI * PI) - 0.0894459).abs() < 1e-6);
    }

    #[test]
    fn operational_m_is_sqrt_lambda2_horizon() {
        // For t >= 1/(2 lambda_2), kappa(t) e^{lambda_2 t} sqrt(t) = sqrt(lambda_2 t),
        // increasing in t, so the sup over (0, T*] sits at T*.
        let b = basis(64);
        let mut last = 0.0;
        for d in [1.0, 2.0, 4.0, 8.0] {
            let diff = DiffusionSpec::uniform(1, d).unwrap();
            let r = compute_m_and_mu(&diff, &b, 10.0).unwrap();
            let expected = (diff.lambda2(&b) * 10.0).sqrt();
            assert!((r.m - expected).abs() < 1e-9 * expected, "d={d}: {} vs {expected}", r.m);
            assert!((r.t_star - 10.0).abs() < 1e-6);
            assert!((r.mu - mu_from_m(r.m)).abs() < 1e-15);
            assert!(r.m >= last);
            last = r.m;
        }
    }

    #[test]
    fn short_horizon_gives_m_one() {
        let b = basis(64);
        let diff = DiffusionSpec::uniform(1, 1.0).unwrap();
        let r = compute_m_and_mu(&diff, &b, 1e-3).unwrap();
        assert_eq!(r.m, 1.0);
        assert!(compute_m_and_mu(&diff, &b, 0.0).is_err());
    }

    #[test]
    fn phi_functions_are_continuous_at_switch() {
        for z in [-1e-4, 1e-4] {
            let z2 = z * (1.0 + 1e-9);
            assert!((phi1(z) - phi1(z2)).abs() < 1e-10);
            assert!((phi2(z) - phi2(z2)).abs() < 1e-10);
        }
        assert!((phi1(-1.0) - (1.0 - (-1f64).exp())).abs() < 1e-15);
        assert!((phi2(-1.0) - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn etd_is_exact_for_linear_problem() {
        let b = basis(16);
        let d = DiffusionSpec::uniform(1, 3.0).unwrap();
        let f = Nonlinearity::zero(1);
        let p = Problem::new(&b, &d, &f).unwrap();
        let a = 0.5;
        let u0 = SpectralField::constant(&[1.0], &b).add(&SpectralField::mode(1, 0, 1, a, &b));
        for scheme in [Scheme::Etd1, Scheme::Etd2rk] {
            let params = EvolveParams {
                t_end: 0.5,
                dt: 1e-2,
                scheme,
                stride: 5,
            };
            let tr = evolve_pde(&u0, p, &params).unwrap();
            for (t, s) in tr.times.iter().zip(&tr.states) {
                let v = (-t).exp();
                let w = a * (-(3.0 * PI * PI + 1.0) * t).exp();
                assert!((s.coeffs[[0, 0]] - v).abs() < 1e-14);
                assert!((s.coeffs[[0, 1]] - w).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn constant_data_stays_constant_and_tracks_ode() {
        let b = basis(32);
        let d = DiffusionSpec::uniform(1, 1.0).unwrap();
        let f = Nonlinearity::pitchfork(2.0);
        let p = Problem::new(&b, &d, &f).unwrap();
        let u0 = SpectralField::constant(&[0.3], &b);
        let mut errs = Vec::new();
        for dt in [2e-3, 1e-3] {
            let params = EvolveParams {
                t_end: 2.0,
                dt,
                scheme: Scheme::Etd2rk,
                stride: 10,
            };
            let tr = evolve_pde(&u0, p, &params).unwrap();
            for dg in &tr.diagnostics {
                assert!(dg.w_l2 < 1e-11);
            }
            let ode = evolve_ode(&[0.3], &f, 2.0, 1e-4, 100).unwrap();
            let err = (tr.final_state().coeffs[[0, 0]] - ode.final_state()[0]).abs();
            errs.push(err);
        }
        assert!(errs[0] < 1e-5, "{errs:?}");
        // second-order integrator error
        let order = (errs[0] / errs[1]).log2();
        assert!((order - 2.0).abs() < 0.2, "order {order}");
    }

    #[test]
    fn etd2rk_self_convergence_order_two() {
        let b = basis(32);
        let d = DiffusionSpec::uniform(1, 0.5).unwrap();
        let f = Nonlinearity::pitchfork(2.0);
        let p = Problem::new(&b, &d, &f).unwrap();
        let u0 = SpectralField::constant(&[0.4], &b).add(&SpectralField::mode(1, 0, 1, 0.8, &b));
        let run = |dt: f64| {
            let params = EvolveParams {
                t_end: 1.0,
                dt,
                scheme: Scheme::Etd2rk,
                stride: 1000,
            };
            evolve_pde(&u0, p, &params).unwrap().final_state().clone()
        };
        let (u1, u2, u3) = (run(0.04), run(0.02), run(0.01));
        let order = (u1.sub(&u2).l2_norm() / u2.sub(&u3).l2_norm()).log2();
        assert!((order - 2.0).abs() < 0.15, "order {order}");
    }

    #[test]
    fn blow_up_is_reported() {
        let b = basis(8);
        let d = DiffusionSpec::uniform(1, 1.0).unwrap();
        let f = Nonlinearity::Linear { c: 30.0, components: 1 };
        let p = Problem::new(&b, &d, &f).unwrap();
        let params = EvolveParams {
            t_end: 5.0,
            dt: 1e-2,
            scheme: Scheme::Etd1,
            stride: 1,
        };
        match evolve_pde(&SpectralField::constant(&[1.0], &b), p, &params) {
            Err(Error::BlowUp { time, .. }) => assert!(time > 0.0 && time < 5.0),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn ode_examples() {
        let z = Nonlinearity::zero(1);
        let tr = evolve_ode(&[1.0], &z, 1.0, 1e-3, 1).unwrap();
        assert!((tr.final_state()[0] - (-1f64).exp()).abs() < 1e-9);

        let f = Nonlinearity::pitchfork(2.0);
        assert_eq!(evolve_ode(&[0.0], &f, 5.0, 1e-3, 10).unwrap().final_state()[0], 0.0);
        let u = evolve_ode(&[0.1], &f, 40.0, 1e-3, 100).unwrap();
        // bisection oracle for u = 2 tanh u
        let (mut lo, mut hi) = (1.0, 3.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid - 2.0 * f64::tanh(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((u.final_state()[0] - lo).abs() < 1e-9);
        assert!((lo - 1.91501).abs() < 1e-5);
    }

    #[test]
    fn decay_fit_linear_and_constant() {
        let b = basis(16);
        let f = Nonlinearity::zero(1);
        for d_eps in [1.0, 4.0] {
            let d = DiffusionSpec::uniform(1, d_eps).unwrap();
            let p = Problem::new(&b, &d, &f).unwrap();
            let rate = d_eps * PI * PI + 1.0;
            let t_end = 18.0 / rate;
            let u0 = SpectralField::constant(&[1.0], &b).add(&SpectralField::mode(1, 0, 1, 0.5, &b));
            let params = EvolveParams {
                t_end,
                dt: t_end / 2000.0,
                scheme: Scheme::Etd2rk,
                stride: 10,
            };
            let tr = evolve_pde(&u0, p, &params).unwrap();
            let fit = decay_rate_fit(&tr, DecayQuantity::WNorm, &FitWindow::default(), PI * PI, 2.0).unwrap();
            assert!((fit.fitted_rate / rate - 1.0).abs() < 1e-8);
            assert!((fit.theoretical_rate - (rate - 2.0)).abs() < 1e-12);
            assert!(!fit.truncated);
        }
        // constant quantity: constant field under F = 0 has w = 0 ... use a synthetic trajectory
        let tr = Trajectory {
            times: (0..20).map(|i| i as f64 * 0.1).collect(),
            states: vec![],
            diagnostics: (0..20)
                .map(|_| StepDiagnostics {
                    v: vec![0.0],
                    w_energy: 0.25,
                    w_l2: 0.25,
                    q_l2: 0.25,
                })
                .collect(),
            d_eps: 1.0,
        };
        let fit = decay_rate_fit(&tr, DecayQuantity::QNorm, &FitWindow::default(), PI * PI, 2.0).unwrap();
        assert_eq!(fit.fitted_rate, 0.0);
        assert_eq!(fit.residual, 0.0);
    }

    #[test]
    fn decay_fit_truncates_underflow() {
        let tr = Trajectory {
            times: (0..50).map(|i| i as f64).collect(),
            states: vec![],
            diagnostics: (0..50)
                .map(|i| StepDiagnostics {
                    v: vec![0.0],
                    w_energy: if i < 30 { (-(i as f64)).exp() } else { 0.0 },
                    w_l2: 0.0,
                    q_l2: 0.0,
                })
                .collect(),
            d_eps: 1.0,
        };
        let fit = decay_rate_fit(&tr, DecayQuantity::WNorm, &FitWindow::default(), PI * PI, 2.0).unwrap();
        assert!(fit.truncated);
        assert!((fit.fitted_rate - 1.0).abs() < 1e-12);
    }
}
