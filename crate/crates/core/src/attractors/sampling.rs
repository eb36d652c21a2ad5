//! Attractor clouds: unstable-manifold shooting and long-time sampling, for
//! the limiting ODE and for the Galerkin PDE.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::cloud::{distance_to_cloud, AttractorCloud, CloudMetadata, CloudPoints, PointOrigin, Provenance};
use super::equilibria::{
    find_equilibria_ode_with_tol, find_equilibria_pde, EquilibriumPoint, PdeNewtonParams, Stability, HYPERBOLICITY_TOL,
};
use crate::dynamics::{rk4_scratch, rk4_step, step_plan, EtdStepper, Problem, Scheme};
use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;
use crate::spectral::{EnergyNorm, SpectralField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcParams {
    /// Distance of the first point from the equilibrium.
    pub offset: f64,
    /// Time between recorded samples.
    pub sample_dt: f64,
    /// Integrator steps per sample.
    pub substeps: usize,
    pub horizon: f64,
    /// An arc ends once it is this close to another equilibrium.
    pub capture_radius: f64,
    /// Extra shooting directions spread over the first two unstable
    /// directions, used when the unstable dimension is at least two.
    pub extra_directions: usize,
}

impl Default for ArcParams {
    fn default() -> Self {
        Self {
            offset: 1e-5,
            sample_dt: 1e-2,
            substeps: 10,
            horizon: 60.0,
            capture_radius: 1e-6,
            extra_directions: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldArc<P> {
    pub points: Vec<P>,
    /// Index of the equilibrium that captured the arc, if any.
    pub terminal: Option<usize>,
}

/// Radius of the absorbing ball `|v| <= B + 1`, or infinity for unbounded `F`.
pub fn absorbing_radius(f: &Nonlinearity) -> f64 {
    f.bound().map_or(f64::INFINITY, |b| b + 1.0)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_shootable(eq: &EquilibriumPoint) -> Result<()> {
    match eq.stability {
        Stability::Unstable(_) => Ok(()),
        Stability::Stable => Err(Error::Precondition("equilibrium is stable; its unstable manifold is trivial".into())),
        Stability::Nonhyperbolic => Err(Error::Nonhyperbolic {
            location: eq.mean(),
            min_real_part: eq.min_abs_real_part(),
        }),
    }
}

/// Unit shooting directions: `+-xi` for each unstable eigenvector, plus a ring
/// in the plane of the first two when the unstable dimension is at least two.
fn shooting_directions(eq: &EquilibriumPoint, extra: usize) -> Result<Vec<DVector<f64>>> {
    let basis = eq.unstable_directions()?;
    let mut out = Vec::new();
    for d in &basis {
        out.push(d.clone());
        out.push(-d.clone());
    }
    if basis.len() >= 2 && extra > 0 {
        let e1 = basis[0].normalize();
        let mut e2 = &basis[1] - &e1 * e1.dot(&basis[1]);
        if e2.norm() > 1e-12 {
            e2 = e2.normalize();
            for j in 0..extra {
                let th = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / extra as f64;
                out.push(&e1 * th.cos() + &e2 * th.sin());
            }
        }
    }
    Ok(out)
}

/// Shoots the unstable manifold of `eq` for `v' = -v + F(v)`.
/// `others` are the remaining equilibria, used as capture targets.
pub fn unstable_manifold_ode(
    eq: &EquilibriumPoint,
    others: &[EquilibriumPoint],
    f: &Nonlinearity,
    params: &ArcParams,
) -> Result<Vec<ManifoldArc<Vec<f64>>>> {
    check_shootable(eq)?;
    if params.substeps == 0 || !(params.sample_dt > 0.0) {
        return Err(Error::invalid("arc sampling needs sample_dt > 0 and substeps >= 1"));
    }
    let origin = eq.mean();
    let targets: Vec<Vec<f64>> = others
        .iter()
        .map(EquilibriumPoint::mean)
        .filter(|m| euclid(m, &origin) > params.capture_radius)
        .collect();
    let radius = absorbing_radius(f);
    let h = params.sample_dt / params.substeps as f64;
    let samples = (params.horizon / params.sample_dt).ceil() as usize;
    shooting_directions(eq, params.extra_directions)?
        .par_iter()
        .map(|dir| {
            let mut v: Vec<f64> = origin.iter().zip(dir.iter()).map(|(o, d)| o + params.offset * d).collect();
            let mut scratch = rk4_scratch(v.len());
            let mut arc = ManifoldArc {
                points: vec![v.clone()],
                terminal: None,
            };
            for s in 1..=samples {
                for _ in 0..params.substeps {
                    rk4_step(&mut v, f, h, &mut scratch);
                }
                let size = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if !(size <= radius) {
                    return Err(Error::EscapedAbsorbingBox {
                        time: s as f64 * params.sample_dt,
                        norm: size,
                    });
                }
                arc.points.push(v.clone());
                if let Some(t) = targets.iter().position(|m| euclid(m, &v) < params.capture_radius) {
                    arc.terminal = Some(t);
                    break;
                }
            }
            Ok(arc)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeAttractorParams {
    /// Half-width of the equilibrium search box; `None` uses the absorbing radius.
    pub search_half_width: Option<f64>,
    pub grid_density: usize,
    pub arc: ArcParams,
    pub hyperbolicity_tol: f64,
}

impl Default for OdeAttractorParams {
    fn default() -> Self {
        Self {
            search_half_width: None,
            grid_density: 41,
            arc: ArcParams::default(),
            hyperbolicity_tol: HYPERBOLICITY_TOL,
        }
    }
}

fn search_box(f: &Nonlinearity, requested: Option<f64>) -> f64 {
    requested.unwrap_or_else(|| match f.bound() {
        Some(b) => b + 1.0,
        None => 10.0,
    })
}

/// Equilibria of the limiting ODE and the points of their unstable manifolds.
#[derive(Debug, Clone)]
pub struct OdeAttractor {
    pub equilibria: Vec<EquilibriumPoint>,
    pub cloud: AttractorCloud,
}

/// `A_infinity` as the union of equilibria and their unstable manifolds.
pub fn attractor_ode(f: &Nonlinearity, params: &OdeAttractorParams) -> Result<OdeAttractor> {
    let eqs = find_equilibria_ode_with_tol(
        f,
        search_box(f, params.search_half_width),
        params.grid_density,
        params.hyperbolicity_tol,
    )?;
    if let Some(bad) = eqs.iter().find(|e| e.stability == Stability::Nonhyperbolic) {
        return Err(Error::Nonhyperbolic {
            location: bad.mean(),
            min_real_part: bad.min_abs_real_part(),
        });
    }
    let mut points: Vec<Vec<f64>> = eqs.iter().map(EquilibriumPoint::mean).collect();
    let mut origins = vec![PointOrigin::Equilibrium; points.len()];
    for (i, e) in eqs.iter().enumerate() {
        if e.unstable_dimension() == 0 {
            continue;
        }
        let others: Vec<EquilibriumPoint> = eqs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, o)| o.clone()).collect();
        for arc in unstable_manifold_ode(e, &others, f, &params.arc)? {
            origins.extend(std::iter::repeat_n(PointOrigin::UnstableManifold, arc.points.len()));
            points.extend(arc.points);
        }
    }
    let mut parameters = BTreeMap::new();
    parameters.insert("arc_offset".into(), params.arc.offset);
    parameters.insert("arc_sample_dt".into(), params.arc.sample_dt);
    parameters.insert("arc_horizon".into(), params.arc.horizon);
    let mut cloud = AttractorCloud {
        points: CloudPoints::Vectors(points),
        origins,
        metadata: CloudMetadata {
            components: f.components(),
            modes: 0,
            eps: vec![],
            nonlinearity: *f,
            provenance: Provenance::ManifoldUnion,
            resolution: 0.0,
            parameters,
        },
    };
    cloud.refresh_resolution(None)?;
    Ok(OdeAttractor { equilibria: eqs, cloud })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongTimeParams {
    pub seeds: usize,
    /// Time discarded before sampling.
    pub transient: f64,
    /// Length of the sampled tail.
    pub tail: f64,
    pub tail_sample_dt: f64,
    pub dt: f64,
    /// Fraction of seeds placed as log-uniform perturbations of unstable equilibria.
    pub perturbed_fraction: f64,
    /// Smallest perturbation radius.
    pub min_perturbation: f64,
    pub seed: u64,
}

impl Default for LongTimeParams {
    fn default() -> Self {
        Self {
            seeds: 2000,
            transient: 20.0,
            tail: 1.0,
            tail_sample_dt: 0.1,
            dt: 1e-2,
            perturbed_fraction: 0.5,
            min_perturbation: 1e-14,
            seed: 0,
        }
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Initial states: uniform in the absorbing box, and log-uniform radial
/// perturbations of the unstable equilibria. Without the latter, nearly all
/// tails sit at the stable equilibria and the connecting orbits go unsampled.
fn ode_seeds(f: &Nonlinearity, unstable: &[Vec<f64>], params: &LongTimeParams) -> Vec<Vec<f64>> {
    let n = f.components();
    let radius = absorbing_radius(f).min(10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let perturbed = if unstable.is_empty() {
        0
    } else {
        (params.seeds as f64 * params.perturbed_fraction).round() as usize
    };
    let mut seeds = Vec::with_capacity(params.seeds);
    for _ in 0..params.seeds - perturbed {
        seeds.push((0..n).map(|_| rng.random_range(-radius..=radius)).collect());
    }
    let (lo, hi) = (params.min_perturbation.ln(), radius.ln());
    for j in 0..perturbed {
        let centre = &unstable[j % unstable.len()];
        let r = rng.random_range(lo..=hi).exp();
        let dir = unit_vector(&mut rng, n);
        seeds.push(centre.iter().zip(dir).map(|(c, d)| c + r * d).collect());
    }
    seeds
}

/// Cloud of tail states of many long ODE trajectories.
pub fn long_time_sampling_ode(f: &Nonlinearity, params: &LongTimeParams) -> Result<AttractorCloud> {
    if params.seeds == 0 {
        return Err(Error::invalid("long-time sampling needs at least one seed"));
    }
    let unstable: Vec<Vec<f64>> = match find_equilibria_ode_with_tol(f, search_box(f, None), 41, HYPERBOLICITY_TOL) {
        Ok(eqs) => eqs.iter().filter(|e| e.unstable_dimension() > 0).map(EquilibriumPoint::mean).collect(),
        Err(_) => vec![],
    };
    let seeds = ode_seeds(f, &unstable, params);
    let (transient_steps, h) = step_plan(params.transient, params.dt)?;
    let per_sample = (params.tail_sample_dt / h).round().max(1.0) as usize;
    let samples = (params.tail / params.tail_sample_dt).round() as usize;
    let tails: Vec<Vec<Vec<f64>>> = seeds
        .par_iter()
        .map(|s| {
            let mut v = s.clone();
            let mut scratch = rk4_scratch(v.len());
            for _ in 0..transient_steps {
                rk4_step(&mut v, f, h, &mut scratch);
            }
            let mut out = vec![v.clone()];
            for _ in 0..samples {
                for _ in 0..per_sample {
                    rk4_step(&mut v, f, h, &mut scratch);
                }
                out.push(v.clone());
            }
            out
        })
        .collect();
    let points: Vec<Vec<f64>> = tails.into_iter().flatten().collect();
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            context: "long-time ODE sampling".into(),
        });
    }
    let mut parameters = BTreeMap::new();
    parameters.insert("seeds".into(), params.seeds as f64);
    parameters.insert("transient".into(), params.transient);
    parameters.insert("tail".into(), params.tail);
    parameters.insert("seed".into(), params.seed as f64);
    let mut cloud = AttractorCloud {
        origins: vec![PointOrigin::LongTime; points.len()],
        points: CloudPoints::Vectors(points),
        metadata: CloudMetadata {
            components: f.components(),
            modes: 0,
            eps: vec![],
            nonlinearity: *f,
            provenance: Provenance::LongTimeSampling,
            resolution: 0.0,
            parameters,
        },
    };
    cloud.refresh_resolution(None)?;
    Ok(cloud)
}

/// Unstable manifold of a PDE equilibrium, shot in coefficient space with
/// ETD2RK at step `sample_dt / substeps`.
pub fn unstable_manifold_pde(
    eq: &EquilibriumPoint,
    others: &[EquilibriumPoint],
    problem: Problem<'_>,
    params: &ArcParams,
) -> Result<Vec<ManifoldArc<SpectralField>>> {
    check_shootable(eq)?;
    if params.substeps == 0 || !(params.sample_dt > 0.0) {
        return Err(Error::invalid("arc sampling needs sample_dt > 0 and substeps >= 1"));
    }
    let basis = problem.basis;
    let n = problem.components();
    let norm = problem.energy_norm();
    let origin = eq.as_field(basis);
    let targets: Vec<SpectralField> = others
        .iter()
        .map(|o| o.as_field(basis))
        .filter(|o| norm.distance(o, &origin) > params.capture_radius)
        .collect();
    let radius = 10.0 * absorbing_radius(problem.f);
    let stepper = EtdStepper::new(problem, params.sample_dt / params.substeps as f64, Scheme::Etd2rk);
    let samples = (params.horizon / params.sample_dt).ceil() as usize;
    let cols = basis.modes() + 1;
    shooting_directions(eq, params.extra_directions)?
        .par_iter()
        .map(|dir| {
            let mut u = origin.clone();
            for (idx, d) in dir.iter().enumerate() {
                u.coeffs[[idx / cols, idx % cols]] += params.offset * d;
            }
            let mut arc = ManifoldArc {
                points: vec![u.clone()],
                terminal: None,
            };
            for s in 1..=samples {
                for _ in 0..params.substeps {
                    u = stepper.step(&u)?;
                }
                let size = u.l2_norm();
                if !(size <= radius) {
                    return Err(Error::EscapedAbsorbingBox {
                        time: s as f64 * params.sample_dt,
                        norm: size,
                    });
                }
                arc.points.push(u.clone());
                if let Some(t) = targets.iter().position(|m| norm.distance(m, &u) < params.capture_radius) {
                    arc.terminal = Some(t);
                    break;
                }
            }
            debug_assert_eq!(arc.points[0].components(), n);
            Ok(arc)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeAttractorParams {
    /// Points of the ODE cloud lifted to constant fields and evolved.
    pub lifted_samples: usize,
    pub random_fields: usize,
    pub transient: f64,
    pub tail: f64,
    pub tail_sample_dt: f64,
    pub dt: f64,
    pub arc: ArcParams,
    pub newton: PdeNewtonParams,
    /// Random Newton seeds tried in addition to the lifted ODE equilibria.
    pub newton_seeds: usize,
    pub seed: u64,
}

impl Default for PdeAttractorParams {
    fn default() -> Self {
        Self {
            lifted_samples: 64,
            random_fields: 32,
            transient: 20.0,
            tail: 1.0,
            tail_sample_dt: 0.1,
            dt: 1e-2,
            arc: ArcParams {
                substeps: 1,
                ..ArcParams::default()
            },
            newton: PdeNewtonParams::default(),
            newton_seeds: 0,
            seed: 0,
        }
    }
}

/// Random field with mean uniform in the absorbing box and a fluctuation of
/// energy norm at most `bound`, spread over the modes with `1/k` decay.
fn random_field(rng: &mut ChaCha8Rng, problem: &Problem<'_>, bound: f64, norm: &EnergyNorm) -> SpectralField {
    let n = problem.components();
    let basis = problem.basis;
    let mut u = SpectralField::zeros(n, basis);
    for i in 0..n {
        for k in 1..=basis.modes() {
            let z: f64 = StandardNormal.sample(rng);
            u.coeffs[[i, k]] = z / k as f64;
        }
    }
    let e = norm.norm(&u);
    if e > 0.0 {
        let target = bound * rng.random_range(0.0..=1.0);
        u = u.scale(target / e);
    }
    for i in 0..n {
        u.coeffs[[i, 0]] = rng.random_range(-bound..=bound);
    }
    u
}

#[derive(Debug, Clone)]
pub struct PdeAttractor {
    pub equilibria: Vec<EquilibriumPoint>,
    pub newton_failures: usize,
    pub cloud: AttractorCloud,
}

/// `A_eps`: PDE equilibria, their unstable manifolds, and tail states of a
/// battery of trajectories started from lifted ODE attractor points and
/// random fields.
pub fn attractor_pde(problem: Problem<'_>, reference: &OdeAttractor, params: &PdeAttractorParams) -> Result<PdeAttractor> {
    let basis = problem.basis;
    let n = problem.components();
    if reference.cloud.components() != n {
        return Err(Error::invalid("reference ODE attractor has the wrong dimension"));
    }
    let norm = problem.energy_norm();
    let bound = problem.f.bound().unwrap_or(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut seeds: Vec<SpectralField> = reference.equilibria.iter().map(|e| e.as_field(basis)).collect();
    for _ in 0..params.newton_seeds {
        seeds.push(random_field(&mut rng, &problem, bound, &norm));
    }
    let found = find_equilibria_pde(&problem, &seeds, &params.newton)?;
    let eqs = found.points;

    let mut points: Vec<SpectralField> = eqs.iter().map(|e| e.as_field(basis)).collect();
    let mut origins = vec![PointOrigin::Equilibrium; points.len()];
    for (i, e) in eqs.iter().enumerate() {
        if e.unstable_dimension() == 0 || e.stability == Stability::Nonhyperbolic {
            continue;
        }
        let others: Vec<EquilibriumPoint> = eqs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, o)| o.clone()).collect();
        for arc in unstable_manifold_pde(e, &others, problem, &params.arc)? {
            origins.extend(std::iter::repeat_n(PointOrigin::UnstableManifold, arc.points.len()));
            points.extend(arc.points);
        }
    }

    let ref_means = reference.cloud.means();
    let mut battery: Vec<SpectralField> = Vec::new();
    let take = params.lifted_samples.min(ref_means.len());
    for j in 0..take {
        let idx = if take <= 1 { 0 } else { j * (ref_means.len() - 1) / (take - 1) };
        battery.push(SpectralField::constant(&ref_means[idx], basis));
    }
    for _ in 0..params.random_fields {
        battery.push(random_field(&mut rng, &problem, bound, &norm));
    }
    let (transient_steps, dt) = step_plan(params.transient, params.dt)?;
    let per_sample = (params.tail_sample_dt / dt).round().max(1.0) as usize;
    let samples = (params.tail / params.tail_sample_dt).round() as usize;
    let stepper = EtdStepper::new(problem, dt, Scheme::Etd2rk);
    let tails: Vec<Result<Vec<SpectralField>>> = battery
        .par_iter()
        .map(|u0| {
            let mut u = u0.clone();
            for step in 0..transient_steps {
                u = stepper.step(&u)?;
                let size = u.l2_norm();
                if !(size <= crate::dynamics::BLOW_UP_NORM) {
                    return Err(Error::BlowUp {
                        time: (step + 1) as f64 * dt,
                        norm: size,
                    });
                }
            }
            let mut out = vec![u.clone()];
            for _ in 0..samples {
                for _ in 0..per_sample {
                    u = stepper.step(&u)?;
                }
                out.push(u.clone());
            }
            Ok(out)
        })
        .collect();
    for t in tails {
        let t = t?;
        origins.extend(std::iter::repeat_n(PointOrigin::LongTime, t.len()));
        points.extend(t);
    }

    let mut parameters = BTreeMap::new();
    parameters.insert("lifted_samples".into(), params.lifted_samples as f64);
    parameters.insert("random_fields".into(), params.random_fields as f64);
    parameters.insert("transient".into(), params.transient);
    parameters.insert("dt".into(), params.dt);
    parameters.insert("seed".into(), params.seed as f64);
    let mut cloud = AttractorCloud {
        points: CloudPoints::Fields(points),
        origins,
        metadata: CloudMetadata {
            components: n,
            modes: basis.modes(),
            eps: problem.diffusion.eps().to_vec(),
            nonlinearity: *problem.f,
            provenance: Provenance::Combined,
            resolution: 0.0,
            parameters,
        },
    };
    cloud.refresh_resolution(Some(&norm))?;
    Ok(PdeAttractor {
        equilibria: eqs,
        newton_failures: found.failures.len(),
        cloud,
    })
}

/// Evenly spaced indices, at most `max` of them.
fn probe_indices(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    (0..max).map(|j| j * (len - 1) / (max - 1).max(1)).collect()
}

/// Largest distance to the cloud of a probed point after evolving the ODE
/// for `horizon` with RK4 step `dt`.
pub fn invariance_probe_ode(cloud: &AttractorCloud, f: &Nonlinearity, horizon: f64, dt: f64, max_points: usize) -> Result<f64> {
    let CloudPoints::Vectors(points) = &cloud.points else {
        return Err(Error::invalid("ODE invariance probe needs a cloud of vectors"));
    };
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (steps, h) = step_plan(horizon, dt)?;
    let drift = probe_indices(points.len(), max_points)
        .par_iter()
        .map(|&i| {
            let mut v = points[i].clone();
            let mut scratch = rk4_scratch(v.len());
            for _ in 0..steps {
                rk4_step(&mut v, f, h, &mut scratch);
            }
            points.iter().map(|p| euclid(p, &v)).fold(f64::INFINITY, f64::min)
        })
        .reduce(|| 0.0, f64::max);
    Ok(drift)
}

/// PDE counterpart of [`invariance_probe_ode`], evolving with ETD2RK.
pub fn invariance_probe_pde(cloud: &AttractorCloud, problem: Problem<'_>, horizon: f64, dt: f64, max_points: usize) -> Result<f64> {
    let CloudPoints::Fields(points) = &cloud.points else {
        return Err(Error::invalid("PDE invariance probe needs a cloud of fields"));
    };
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (steps, h) = step_plan(horizon, dt)?;
    let stepper = EtdStepper::new(problem, h, Scheme::Etd2rk);
    let norm = problem.energy_norm();
    let drifts = probe_indices(points.len(), max_points)
        .par_iter()
        .map(|&i| {
            let mut u = points[i].clone();
            for _ in 0..steps {
                u = stepper.step(&u)?;
            }
            distance_to_cloud(&u, cloud, &norm)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(drifts.into_iter().fold(0.0, f64::max))
}
