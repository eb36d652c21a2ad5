//! Resolvent of `A_eps`, its distance to the average projection, the
//! spectral projection onto the eigenvalue 1, and the eigenvalue table.
//!
//! `A_eps` is diagonal in the cosine basis, so every operator norm below is
//! a maximum over scalar mode gains and is computed exactly.

use std::f64::consts::PI;

use nalgebra::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{check_components, CosineBasis, DiffusionSpec, EnergyNorm, SpectralField};

/// Solves `A_eps u = g`.
pub fn solve_resolvent(g: &SpectralField, diffusion: &DiffusionSpec, basis: &CosineBasis) -> Result<SpectralField> {
    basis.check_field(g)?;
    check_components(g, diffusion)?;
    Ok(SpectralField {
        coeffs: &g.coeffs / &diffusion.operator_symbol(basis),
    })
}

/// `||A_eps^{-1} g - P g||_{X^{1/2}}` for a single right-hand side.
pub fn resolvent_deviation(g: &SpectralField, diffusion: &DiffusionSpec, basis: &CosineBasis) -> Result<f64> {
    let u = solve_resolvent(g, diffusion, basis)?;
    let pg = SpectralField::constant(&g.mean(), basis);
    Ok(EnergyNorm::new(diffusion, basis).distance(&u, &pg))
}

/// `||A_eps^{-1} - P||_{L(L^2, X^{1/2})} = max_{i, k >= 1} (eps_i lambda_k + 1)^{-1/2}`.
pub fn resolvent_gap_exact(diffusion: &DiffusionSpec, basis: &CosineBasis) -> f64 {
    let sym = diffusion.operator_symbol(basis);
    sym.indexed_iter()
        .filter(|((_, k), _)| *k >= 1)
        .map(|(_, l)| l.powf(-0.5))
        .fold(0.0, f64::max)
}

/// Empirical lower bound on the gap: the largest deviation over `trials`
/// random right-hand sides of unit L² norm.
///
/// Coefficients are drawn with standard deviation 1 on mode 0 and `k^{-2}`
/// on mode `k`, so smooth data dominated by the first cosine (the maximiser)
/// is drawn with reasonable frequency.
pub fn resolvent_gap_sampled(diffusion: &DiffusionSpec, basis: &CosineBasis, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = diffusion.components();
    let mut best: f64 = 0.0;
    for _ in 0..trials {
        let mut g = SpectralField::zeros(n, basis);
        for ((_, k), c) in g.coeffs.indexed_iter_mut() {
            let sd = if k == 0 { 1.0 } else { (k as f64).powi(-2) };
            let z: f64 = StandardNormal.sample(&mut rng);
            *c = sd * z;
        }
        let norm = g.l2_norm();
        if norm == 0.0 {
            continue;
        }
        let g = g.scale(1.0 / norm);
        best = best.max(resolvent_deviation(&g, diffusion, basis)?);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolventGapReport {
    pub d_eps: f64,
    pub exact_gap: f64,
    pub sampled_gap: f64,
    pub sample_count: usize,
    /// `exact_gap * sqrt(d_eps)`, the constant in `gap <= C d_eps^{-1/2}`.
    pub bound_constant: f64,
}

impl ResolventGapReport {
    pub fn compute(diffusion: &DiffusionSpec, basis: &CosineBasis, trials: usize, seed: u64) -> Result<Self> {
        let exact_gap = resolvent_gap_exact(diffusion, basis);
        let sampled_gap = resolvent_gap_sampled(diffusion, basis, trials, seed)?;
        let d_eps = diffusion.d_eps();
        Ok(Self {
            d_eps,
            exact_gap,
            sampled_gap,
            sample_count: trials,
            bound_constant: exact_gap * d_eps.sqrt(),
        })
    }

    pub const CSV_HEADER: &'static str = "d_eps,exact_gap,sampled_gap,bound_constant";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.d_eps, self.exact_gap, self.sampled_gap, self.bound_constant)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectionMethod {
    /// Exact projection onto the modes whose eigenvalue lies inside the contour.
    Eigen,
    /// Trapezoid rule on the contour `|xi + 1| = delta` with the given node count.
    Contour { nodes: usize },
}

/// The Riesz projection `Q_eps = (1/2 pi i) \oint_{|xi+1|=delta} (xi + A_eps)^{-1} dxi`.
///
/// The resolvent `(xi + A_eps)^{-1}` has its poles at `xi = -lambda`, so the
/// circle around `-1` isolates the eigenvalue `lambda = 1` of `A_eps`.
#[derive(Debug, Clone)]
pub struct SpectralProjection {
    delta: f64,
    method: ProjectionMethod,
    /// Mode multipliers, shaped like a coefficient array.
    multipliers: ndarray::Array2<f64>,
    symbol: ndarray::Array2<f64>,
}

pub fn spectral_projection(
    diffusion: &DiffusionSpec,
    basis: &CosineBasis,
    delta: f64,
    method: ProjectionMethod,
) -> Result<SpectralProjection> {
    let lambda2 = diffusion.lambda2(basis);
    let limit = lambda2 - 1.0;
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("contour radius delta = {delta} must be positive")));
    }
    if delta >= limit {
        return Err(Error::ContourTooLarge { delta, lambda2, limit });
    }
    let symbol = diffusion.operator_symbol(basis);
    let multipliers = match method {
        ProjectionMethod::Eigen => symbol.mapv(|l| if (l - 1.0).abs() < delta { 1.0 } else { 0.0 }),
        ProjectionMethod::Contour { nodes } => {
            if nodes < 2 {
                return Err(Error::invalid("contour quadrature needs at least 2 nodes"));
            }
            symbol.mapv(|l| contour_multiplier(l, delta, nodes))
        }
    };
    Ok(SpectralProjection {
        delta,
        method,
        multipliers,
        symbol,
    })
}

/// Trapezoid approximation of `(1/2 pi i) \oint d xi / (xi + lambda)`.
fn contour_multiplier(lambda: f64, delta: f64, nodes: usize) -> f64 {
    let mut acc = Complex::new(0.0, 0.0);
    for j in 0..nodes {
        let theta = 2.0 * PI * j as f64 / nodes as f64;
        let r = Complex::from_polar(delta, theta);
        let xi = Complex::new(-1.0, 0.0) + r;
        // d xi = i r d theta; the i cancels the 1/(2 pi i).
        acc += r / (xi + lambda);
    }
    (acc / nodes as f64).re
}

impl SpectralProjection {
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn method(&self) -> ProjectionMethod {
        self.method
    }

    pub fn multipliers(&self) -> &ndarray::Array2<f64> {
        &self.multipliers
    }

    pub fn apply(&self, f: &SpectralField) -> Result<SpectralField> {
        if f.coeffs.dim() != self.multipliers.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.multipliers.dim(),
                found: f.coeffs.dim(),
            });
        }
        Ok(SpectralField {
            coeffs: &f.coeffs * &self.multipliers,
        })
    }

    /// Numerical rank: number of multipliers above 1/2.
    pub fn rank(&self) -> usize {
        self.multipliers.iter().filter(|&&m| m > 0.5).count()
    }

    /// `||Q_eps - P||_{L(L^2, X^{1/2})}`: mode-wise `|q - p| sqrt(lambda)`.
    pub fn distance_to_average(&self) -> f64 {
        self.multipliers
            .indexed_iter()
            .map(|((i, k), q)| {
                let p = if k == 0 { 1.0 } else { 0.0 };
                (q - p).abs() * self.symbol[[i, k]].sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Largest multiplier difference to another projection.
    pub fn max_difference(&self, other: &SpectralProjection) -> f64 {
        self.multipliers
            .iter()
            .zip(other.multipliers.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// The `count` smallest eigenvalues of `A_eps`, with multiplicity.
pub fn eigenvalue_table(diffusion: &DiffusionSpec, basis: &CosineBasis, count: usize) -> Result<Vec<f64>> {
    let total = diffusion.components() * (basis.modes() + 1);
    if count > total {
        return Err(Error::invalid(format!(
            "requested {count} eigenvalues but the discrete operator has {total}"
        )));
    }
    let mut all: Vec<f64> = diffusion.operator_symbol(basis).iter().copied().collect();
    all.sort_by(f64::total_cmp);
    all.truncate(count);
    Ok(all)
}

/// Solves `-E u'' = g` with Neumann conditions in the zero-mean subspace.
pub fn solve_pure_neumann(g: &SpectralField, diffusion: &DiffusionSpec, basis: &CosineBasis, mean_tol: f64) -> Result<SpectralField> {
    basis.check_field(g)?;
    check_components(g, diffusion)?;
    let mean = g.mean();
    if mean.iter().any(|m| m.abs() > mean_tol) {
        return Err(Error::NonzeroMean { mean });
    }
    let lambdas = basis.eigenvalues();
    let mut u = SpectralField::zeros(g.components(), basis);
    for ((i, k), c) in u.coeffs.indexed_iter_mut() {
        if k > 0 {
            *c = g.coeffs[[i, k]] / (diffusion.eps()[i] * lambdas[k]);
        }
    }
    Ok(u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalExampleReport {
    pub eps: f64,
    /// Max pointwise error against `cos(2 pi x) / (4 pi^2 eps)`.
    pub closed_form_error: f64,
    /// `int eps |u_x|^2`, the squared X^{1/2} distance from the limit `u = 0`.
    pub seminorm_sq: f64,
}

/// Solves `-eps u'' = cos(2 pi x)` on (0, 1) with Neumann conditions and
/// compares with the closed form.
pub fn optimal_example_check(eps: f64, basis: &CosineBasis) -> Result<OptimalExampleReport> {
    if basis.modes() < 2 {
        return Err(Error::invalid("example needs mode 2"));
    }
    let diffusion = DiffusionSpec::new(vec![eps], eps)?;
    let data = basis.sample(1, |_, x| (2.0 * PI * x).cos());
    let g = basis.to_spectral(&data)?;
    let u = solve_pure_neumann(&g, &diffusion, basis, 1e-12)?;
    let exact = |x: f64| (2.0 * PI * x).cos() / (4.0 * PI * PI * eps);

    let mut closed_form_error: f64 = 0.0;
    let grid = basis.to_grid(&u)?;
    for (j, &x) in basis.nodes().iter().enumerate() {
        closed_form_error = closed_form_error.max((grid.values[[0, j]] - exact(x)).abs());
    }
    for j in 0..=100 {
        let x = j as f64 / 100.0;
        closed_form_error = closed_form_error.max((basis.evaluate_at(&u, x)[0] - exact(x)).abs());
    }
    let seminorm_sq = EnergyNorm::new(&diffusion, basis).gradient_part_sq(&u);
    Ok(OptimalExampleReport {
        eps,
        closed_form_error,
        seminorm_sq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{apply_operator, DomainSpec};

    fn basis(n: usize, k: usize) -> CosineBasis {
        CosineBasis::new(&DomainSpec::new(n).unwrap(), k).unwrap()
    }

    /// Brute-force operator norm: max over every single mode of the gain.
    fn brute_force_gap(d: &DiffusionSpec, b: &CosineBasis) -> f64 {
        let norm = EnergyNorm::new(d, b);
        let mut best: f64 = 0.0;
        for i in 0..d.components() {
            for k in 0..=b.modes() {
                let g = SpectralField::mode(d.components(), i, k, 1.0, b);
                let u = solve_resolvent(&g, d, b).unwrap();
                let pg = SpectralField::constant(&g.mean(), b);
                best = best.max(norm.distance(&u, &pg));
            }
        }
        best
    }

    #[test]
    fn resolvent_examples() {
        let b = basis(2, 8);
        let d = DiffusionSpec::uniform(2, 1.0).unwrap();
        let v = SpectralField::constant(&[0.7, -1.1], &b);
        assert_eq!(solve_resolvent(&v, &d, &b).unwrap(), v);

        let d1 = DiffusionSpec::uniform(1, 1.0).unwrap();
        let phi1 = SpectralField::mode(1, 0, 1, 1.0, &b);
        let u = solve_resolvent(&phi1, &d1, &b).unwrap();
        assert!((u.coeffs[[0, 1]] - 1.0 / (PI * PI + 1.0)).abs() < 1e-15);
        let back = apply_operator(&u, &d1, &b).unwrap();
        assert!(back.max_abs_diff(&phi1) < 1e-12);
    }

    #[test]
    fn exact_gap_matches_brute_force() {
        let b = basis(1, 32);
        let d = DiffusionSpec::uniform(1, 10.0).unwrap();
        let gap = resolvent_gap_exact(&d, &b);
        assert!((gap - brute_force_gap(&d, &b)).abs() < 1e-15);
        assert!((gap - (10.0 * PI * PI + 1.0).powf(-0.5)).abs() < 1e-15);
        assert!((gap - 0.100153).abs() < 1e-6);

        let d2 = DiffusionSpec::new(vec![5.0, 50.0], 1.0).unwrap();
        let gap2 = resolvent_gap_exact(&d2, &b);
        assert!((gap2 - (5.0 * PI * PI + 1.0).powf(-0.5)).abs() < 1e-15);
        assert!((gap2 - brute_force_gap(&d2, &b)).abs() < 1e-15);

        let big = DiffusionSpec::uniform(1, 1e12).unwrap();
        assert!(resolvent_gap_exact(&big, &b) < 1e-6);
    }

    #[test]
    fn phi1_on_min_component_attains_gap() {
        let b = basis(2, 16);
        let d = DiffusionSpec::new(vec![7.0, 3.0], 1.0).unwrap();
        let g = SpectralField::mode(2, 1, 1, 1.0, &b);
        let dev = resolvent_deviation(&g, &d, &b).unwrap();
        assert!((dev - resolvent_gap_exact(&d, &b)).abs() < 1e-15);
    }

    #[test]
    fn sampled_gap_is_bounded_and_close() {
        let b = basis(1, 128);
        let d = DiffusionSpec::uniform(1, 2.0).unwrap();
        let exact = resolvent_gap_exact(&d, &b);
        for trials in [1, 5, 50] {
            assert!(resolvent_gap_sampled(&d, &b, trials, 7).unwrap() <= exact + 1e-9);
        }
        let s = resolvent_gap_sampled(&d, &b, 500, 11).unwrap();
        assert!(s <= exact + 1e-9);
        assert!(s >= 0.99 * exact, "sampled {s} exact {exact}");
        assert_eq!(s, resolvent_gap_sampled(&d, &b, 500, 11).unwrap());
        assert!(resolvent_gap_sampled(&d, &b, 0, 1).is_err());
    }

    #[test]
    fn projection_coincides_with_average() {
        let b = basis(2, 16);
        let d = DiffusionSpec::new(vec![1.0, 4.0], 1.0).unwrap();
        let q = spectral_projection(&d, &b, 0.5, ProjectionMethod::Eigen).unwrap();
        assert_eq!(q.rank(), 2);
        assert_eq!(q.distance_to_average(), 0.0);
        let mut f = SpectralField::zeros(2, &b);
        for ((i, k), c) in f.coeffs.indexed_iter_mut() {
            *c = ((i + 1) * (k + 2)) as f64 * 0.01;
        }
        let qf = q.apply(&f).unwrap();
        assert_eq!(qf, SpectralField::constant(&f.mean(), &b));
        // idempotent
        assert_eq!(q.apply(&qf).unwrap(), qf);
    }

    #[test]
    fn contour_quadrature_reproduces_eigenprojection() {
        let b = basis(1, 64);
        for d in [1.0, 4.0, 64.0] {
            let diff = DiffusionSpec::uniform(1, d).unwrap();
            let eig = spectral_projection(&diff, &b, 0.5, ProjectionMethod::Eigen).unwrap();
            let con = spectral_projection(&diff, &b, 0.5, ProjectionMethod::Contour { nodes: 64 }).unwrap();
            assert!(eig.max_difference(&con) < 1e-8);
        }
    }

    #[test]
    fn oversized_contour_is_rejected() {
        let b = basis(1, 8);
        let d = DiffusionSpec::uniform(1, 1.0).unwrap();
        match spectral_projection(&d, &b, PI * PI + 0.5, ProjectionMethod::Eigen) {
            Err(Error::ContourTooLarge { lambda2, .. }) => assert_eq!(lambda2, PI * PI + 1.0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(spectral_projection(&d, &b, 0.0, ProjectionMethod::Eigen).is_err());
    }

    #[test]
    fn eigenvalue_table_examples() {
        let b = basis(1, 8);
        let d = DiffusionSpec::uniform(1, 1.0).unwrap();
        let t = eigenvalue_table(&d, &b, 3).unwrap();
        assert_eq!(t, vec![1.0, PI * PI + 1.0, 4.0 * PI * PI + 1.0]);

        let d2 = DiffusionSpec::new(vec![1.0, 3.0], 1.0).unwrap();
        let t2 = eigenvalue_table(&d2, &b, 4).unwrap();
        assert_eq!(t2, vec![1.0, 1.0, PI * PI + 1.0, 3.0 * PI * PI + 1.0]);

        let d4 = DiffusionSpec::new(vec![2.0, 6.0], 1.0).unwrap();
        let t4 = eigenvalue_table(&d4, &b, 10).unwrap();
        let t2_10 = eigenvalue_table(&d2, &b, 10).unwrap();
        for j in 2..10 {
            assert!(((t4[j] - 1.0) - 2.0 * (t2_10[j] - 1.0)).abs() < 1e-12);
        }
        assert!(eigenvalue_table(&d2, &b, 19).is_err());
    }

    /// Composite Simpson rule on [0, 1].
    fn simpson<F: Fn(f64) -> f64>(f: F, n: usize) -> f64 {
        let h = 1.0 / n as f64;
        let mut s = f(0.0) + f(1.0);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn optimal_example_matches_closed_form() {
        let b = basis(1, 4);
        let r = optimal_example_check(1.0, &b).unwrap();
        assert!(r.closed_form_error < 1e-12);
        let oracle = simpson(|x| ((2.0 * PI * x).sin() / (2.0 * PI)).powi(2), 2000);
        assert!((r.seminorm_sq - oracle).abs() < 1e-12);
        assert!((r.seminorm_sq - 1.0 / (8.0 * PI * PI)).abs() < 1e-15);
        assert!((r.seminorm_sq - 0.0126651).abs() < 1e-7);
        for eps in [4.0, 16.0, 64.0] {
            let re = optimal_example_check(eps, &b).unwrap();
            assert!((re.seminorm_sq * eps - r.seminorm_sq).abs() < 1e-10);
            assert!(re.closed_form_error < 1e-12);
        }
    }

    #[test]
    fn pure_neumann_rejects_nonzero_mean() {
        let b = basis(1, 4);
        let d = DiffusionSpec::uniform(1, 1.0).unwrap();
        let g = SpectralField::constant(&[1.0], &b);
        assert!(matches!(solve_pure_neumann(&g, &d, &b, 1e-12), Err(Error::NonzeroMean { .. })));
    }
}
