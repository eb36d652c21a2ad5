//! Sweeps over `d_eps`, rate fits and persistent run records.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attractors::{
    attractor_ode, attractor_pde, graph_iteration, hausdorff_distance, manifold_deflection, GraphGrid, OdeAttractor,
};
use crate::config::{parse_error, Config};
use crate::dynamics::{compute_m_and_mu, decay_rate_fit, evolve_pde, DecayQuantity, EvolveParams, Problem};
use crate::elliptic::{resolvent_gap_exact, spectral_projection, ProjectionMethod, ResolventGapReport};
use crate::error::{Error, Result};
use crate::spectral::{CosineBasis, SpectralField};

/// Minimum number of usable sweep points for a fit.
pub const MIN_FIT_POINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub rms_residual: f64,
}

/// Ordinary least squares `y = slope x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return Err(Error::invalid(format!("{} abscissae but {} ordinates", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientPoints {
            surviving: xs.len(),
            required: 2,
        });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::invalid("all abscissae coincide"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
        rms_residual: (sse / n).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// `||A_eps^{-1} - P||` from `L^2` to `X_eps^{1/2}`.
    ResolventGap,
    /// `||Q_eps - P||`.
    ProjectionGap,
    /// Fitted decay rate of `||w(t)||`.
    WDecayRate,
    /// `d_H(A_eps, A_infinity)`.
    Hausdorff,
    /// Largest fluctuation norm on the PDE attractor.
    Deflection,
    /// Sup norm of the graph-iteration estimate.
    GraphSup,
}

impl Quantity {
    pub const ALL: [Quantity; 6] = [
        Quantity::ResolventGap,
        Quantity::ProjectionGap,
        Quantity::WDecayRate,
        Quantity::Hausdorff,
        Quantity::Deflection,
        Quantity::GraphSup,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Quantity::ResolventGap => "resolvent_gap",
            Quantity::ProjectionGap => "projection_gap",
            Quantity::WDecayRate => "w_decay_rate",
            Quantity::Hausdorff => "hausdorff",
            Quantity::Deflection => "deflection",
            Quantity::GraphSup => "graph_sup",
        }
    }

    pub fn fit_kind(self) -> FitKind {
        match self {
            Quantity::WDecayRate => FitKind::Linear,
            _ => FitKind::LogLog,
        }
    }

    /// The predicted slope: `-1/2` on log-log axes, or `lambda_1 = pi^2` for
    /// the decay rate against `d_eps`.
    pub fn predicted_slope(self) -> f64 {
        match self {
            Quantity::WDecayRate => PI * PI,
            _ => -0.5,
        }
    }
}

impl std::fmt::Display for Quantity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Quantity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Quantity::ALL
            .into_iter()
            .find(|q| q.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown quantity '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    /// `log value = slope log d + intercept`.
    LogLog,
    /// `value = slope d + intercept`.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FitOutcome {
    Fitted { slope: f64, intercept: f64, r_squared: f64 },
    /// Every measured value is zero: the bound holds trivially.
    IdenticallyZero,
    /// Too few usable points.
    Refused { surviving: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub kind: FitKind,
    /// Pairs `(d_eps, value)` entering the fit.
    pub pairs: Vec<(f64, f64)>,
    /// Points excluded because their value was zero.
    pub zero_count: usize,
    pub predicted_slope: Option<f64>,
    pub outcome: FitOutcome,
}

impl RateFit {
    pub fn slope(&self) -> Option<f64> {
        match self.outcome {
            FitOutcome::Fitted { slope, .. } => Some(slope),
            _ => None,
        }
    }

    /// `C` in `value = C d^slope` (log-log) or the intercept (linear).
    pub fn constant(&self) -> Option<f64> {
        match (self.outcome, self.kind) {
            (FitOutcome::Fitted { intercept, .. }, FitKind::LogLog) => Some(intercept.exp()),
            (FitOutcome::Fitted { intercept, .. }, FitKind::Linear) => Some(intercept),
            _ => None,
        }
    }

    pub fn csv(&self) -> String {
        let pred = self.predicted_slope.map_or(String::new(), |p| p.to_string());
        match self.outcome {
            FitOutcome::Fitted {
                slope,
                intercept,
                r_squared,
            } => format!("slope,intercept,r2,predicted_slope,status\n{slope},{intercept},{r_squared},{pred},fitted\n"),
            FitOutcome::IdenticallyZero => format!("slope,intercept,r2,predicted_slope,status\n,,,{pred},identically_zero\n"),
            FitOutcome::Refused { .. } => format!("slope,intercept,r2,predicted_slope,status\n,,,{pred},refused\n"),
        }
    }
}

fn fit_pairs(kind: FitKind, pairs: &[(f64, f64)], min_points: usize, predicted: Option<f64>) -> Result<RateFit> {
    let usable: Vec<(f64, f64)> = match kind {
        FitKind::LogLog => pairs.iter().copied().filter(|&(d, v)| d > 0.0 && v > 0.0).collect(),
        FitKind::Linear => pairs.iter().copied().filter(|&(_, v)| v != 0.0).collect(),
    };
    if pairs.iter().any(|&(d, v)| !(d.is_finite() && v.is_finite()) || (kind == FitKind::LogLog && v < 0.0)) {
        return Err(Error::invalid("rate fit needs finite, nonnegative values"));
    }
    let zero_count = pairs.iter().filter(|&&(_, v)| v == 0.0).count();
    let outcome = if !pairs.is_empty() && zero_count == pairs.len() {
        FitOutcome::IdenticallyZero
    } else if usable.len() < min_points {
        FitOutcome::Refused {
            surviving: usable.len(),
        }
    } else {
        let (xs, ys): (Vec<f64>, Vec<f64>) = match kind {
            FitKind::LogLog => usable.iter().map(|&(d, v)| (d.ln(), v.ln())).unzip(),
            FitKind::Linear => usable.iter().copied().unzip(),
        };
        let fit = linear_fit(&xs, &ys)?;
        FitOutcome::Fitted {
            slope: fit.slope,
            intercept: fit.intercept,
            r_squared: fit.r_squared,
        }
    };
    Ok(RateFit {
        kind,
        pairs: usable,
        zero_count,
        predicted_slope: predicted,
        outcome,
    })
}

/// Least squares on `(log d, log value)`. Zero values are excluded and counted.
pub fn loglog_fit(pairs: &[(f64, f64)]) -> Result<RateFit> {
    let fit = fit_pairs(FitKind::LogLog, pairs, 2, None)?;
    match fit.outcome {
        FitOutcome::Refused { surviving } => Err(Error::InsufficientPoints { surviving, required: 2 }),
        _ => Ok(fit),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub quantity: Quantity,
    pub d_eps_values: Vec<f64>,
    /// Full configuration; per-quantity parameters are read from it.
    pub settings: Config,
    pub seed: u64,
}

impl SweepConfig {
    pub fn from_config(cfg: &Config, quantity: Quantity) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            quantity,
            d_eps_values: cfg.sweep_values()?,
            settings: cfg.clone(),
            seed: cfg.seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_eps_values.len() < MIN_FIT_POINTS {
            return Err(Error::invalid(format!(
                "a sweep needs at least {MIN_FIT_POINTS} points, got {}",
                self.d_eps_values.len()
            )));
        }
        if self.d_eps_values.iter().any(|d| !(*d > 0.0 && d.is_finite())) || self.d_eps_values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("swept d_eps values must be positive and strictly increasing"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PointStatus {
    Ok,
    Zero,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub d_eps: f64,
    pub value: Option<f64>,
    pub status: PointStatus,
    /// Per-point details, written to the quantity's detail table.
    pub details: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub quantity: Quantity,
    pub points: Vec<SweepPoint>,
    pub fit: RateFit,
    /// `mu_bar` at the first sweep point, for flagging the threshold.
    pub mu_bar: f64,
    pub metrics: BTreeMap<String, f64>,
}

impl SweepOutcome {
    pub fn points_csv(&self) -> String {
        let mut out = String::from("d_eps,value,status\n");
        for p in &self.points {
            let v = p.value.map_or(String::new(), |v| v.to_string());
            let status = match &p.status {
                PointStatus::Ok => "ok".to_string(),
                PointStatus::Zero => "zero".to_string(),
                PointStatus::Failed(m) => format!("failed: {}", m.replace([',', '\n'], ";")),
            };
            let _ = writeln!(out, "{},{v},{status}", p.d_eps);
        }
        out
    }

    /// Two-column `d_eps value` data for plotting, with the threshold as a comment.
    pub fn plot_data(&self) -> String {
        let mut out = format!("# {} against d_eps; mu_bar = {}\n", self.quantity, self.mu_bar);
        for p in &self.points {
            if let Some(v) = p.value {
                let _ = writeln!(out, "{} {v}", p.d_eps);
            }
        }
        out
    }

    /// Per-point detail table (columns depend on the quantity).
    pub fn details_csv(&self) -> Option<String> {
        let first = self.points.iter().find(|p| !p.details.is_empty())?;
        let mut out = String::from("d_eps");
        for (k, _) in &first.details {
            let _ = write!(out, ",{k}");
        }
        out.push('\n');
        for p in self.points.iter().filter(|p| !p.details.is_empty()) {
            let _ = write!(out, "{}", p.d_eps);
            for (_, v) in &p.details {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        Some(out)
    }
}

/// Shared state computed once per sweep.
struct SweepContext {
    basis: CosineBasis,
    attractor_basis: CosineBasis,
    ode: Option<OdeAttractor>,
}

fn point_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn measure(cfg: &SweepConfig, ctx: &SweepContext, d: f64, index: usize) -> Result<(f64, Vec<(String, f64)>)> {
    let s = &cfg.settings;
    let diff = s.diffusion_at(d)?;
    let f = s.nonlinearity()?;
    let seed = point_seed(cfg.seed, index);
    match cfg.quantity {
        Quantity::ResolventGap => {
            let r = ResolventGapReport::compute(&diff, &ctx.basis, s.tolerances.resolvent_trials, seed)?;
            let details = vec![
                ("exact_gap".into(), r.exact_gap),
                ("sampled_gap".into(), r.sampled_gap),
                ("bound_constant".into(), r.bound_constant),
            ];
            Ok((resolvent_gap_exact(&diff, &ctx.basis), details))
        }
        Quantity::ProjectionGap => {
            let delta = s.tolerances.projection_delta;
            let eig = spectral_projection(&diff, &ctx.basis, delta, ProjectionMethod::Eigen)?;
            let contour = spectral_projection(
                &diff,
                &ctx.basis,
                delta,
                ProjectionMethod::Contour {
                    nodes: s.tolerances.contour_nodes,
                },
            )?;
            let details = vec![
                ("contour_minus_eigen".into(), contour.max_difference(&eig)),
                ("contour_distance".into(), contour.distance_to_average()),
            ];
            Ok((eig.distance_to_average(), details))
        }
        Quantity::WDecayRate => {
            let basis = &ctx.basis;
            let problem = Problem::new(basis, &diff, &f)?;
            let rate = d * basis.lambda1() + 1.0;
            let t_end = s.dynamics.t_end.min(25.0 / rate);
            let dt = s.dynamics.dt.min(t_end / 2000.0);
            let steps = (t_end / dt).round() as usize;
            let n = diff.components();
            let mut u0 = SpectralField::constant(&vec![1.0; n], basis);
            for i in 0..n {
                u0.coeffs[[i, 1]] = 0.5;
            }
            let params = EvolveParams {
                t_end,
                dt,
                scheme: s.dynamics.scheme,
                stride: (steps / 400).max(1),
            };
            let traj = evolve_pde(&u0, problem, &params)?;
            let mu = compute_m_and_mu(&diff, basis, s.dynamics.mu_horizon)?.mu;
            let fit = decay_rate_fit(&traj, DecayQuantity::WNorm, &s.fit_window(), basis.lambda1(), mu)?;
            let details = vec![
                ("fitted_rate".into(), fit.fitted_rate),
                ("linear_rate".into(), rate),
                ("theoretical_rate".into(), fit.theoretical_rate),
                ("residual".into(), fit.residual),
                ("truncated".into(), if fit.truncated { 1.0 } else { 0.0 }),
            ];
            Ok((fit.fitted_rate, details))
        }
        Quantity::Hausdorff | Quantity::Deflection => {
            let ode = ctx.ode.as_ref().expect("ODE attractor prepared for attractor sweeps");
            let basis = &ctx.attractor_basis;
            let problem = Problem::new(basis, &diff, &f)?;
            let pde = attractor_pde(problem, ode, &s.pde_attractor_params(seed))?;
            let norm = problem.energy_norm();
            let deflection = manifold_deflection(&pde.cloud, &norm)?;
            if cfg.quantity == Quantity::Deflection {
                return Ok((deflection, vec![("cloud_points".into(), pde.cloud.len() as f64)]));
            }
            let dh = hausdorff_distance(&pde.cloud, &ode.cloud, Some(&norm))?;
            let details = vec![
                ("pde_to_ode".into(), dh.a_to_b),
                ("ode_to_pde".into(), dh.b_to_a),
                ("resolution_pde".into(), pde.cloud.metadata.resolution),
                ("resolution_ode".into(), ode.cloud.metadata.resolution),
                ("deflection".into(), deflection),
            ];
            Ok((dh.sym, details))
        }
        Quantity::GraphSup => {
            let ode = ctx.ode.as_ref().expect("ODE attractor prepared for graph sweeps");
            let basis = &ctx.attractor_basis;
            let problem = Problem::new(basis, &diff, &f)?;
            let mu = compute_m_and_mu(&diff, basis, s.dynamics.mu_horizon)?.mu;
            let (lo, hi) = ode.cloud.bounding_box()?;
            let grid = GraphGrid::uniform(&lo, &hi, s.attractor.graph_points, s.attractor.graph_inflate)?;
            let est = graph_iteration(problem, &grid, &s.graph_params(mu))?;
            let details = vec![
                ("max_factor".into(), est.max_factor()),
                ("iterations".into(), est.iterations as f64),
                ("converged".into(), if est.converged { 1.0 } else { 0.0 }),
                ("clamped".into(), if est.clamped { 1.0 } else { 0.0 }),
                ("gap".into(), est.gap),
            ];
            Ok((est.sup_norm, details))
        }
    }
}

/// Measures the quantity at every `d_eps` (in parallel, merged in sweep order)
/// and fits the result.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let s = &cfg.settings;
    s.validate()?;
    let needs_ode = matches!(cfg.quantity, Quantity::Hausdorff | Quantity::Deflection | Quantity::GraphSup);
    let ctx = SweepContext {
        basis: s.basis()?,
        attractor_basis: s.attractor_basis()?,
        ode: if needs_ode {
            Some(attractor_ode(&s.nonlinearity()?, &s.ode_attractor_params())?)
        } else {
            None
        },
    };
    let points: Vec<SweepPoint> = cfg
        .d_eps_values
        .par_iter()
        .enumerate()
        .map(|(i, &d)| match measure(cfg, &ctx, d, i) {
            Ok((v, details)) if v.is_finite() => SweepPoint {
                d_eps: d,
                value: Some(v),
                status: if v == 0.0 { PointStatus::Zero } else { PointStatus::Ok },
                details,
            },
            Ok((v, _)) => SweepPoint {
                d_eps: d,
                value: None,
                status: PointStatus::Failed(format!("non-finite value {v}")),
                details: vec![],
            },
            Err(e) => SweepPoint {
                d_eps: d,
                value: None,
                status: PointStatus::Failed(e.to_string()),
                details: vec![],
            },
        })
        .collect();
    let pairs: Vec<(f64, f64)> = points.iter().filter_map(|p| p.value.map(|v| (p.d_eps, v))).collect();
    let q = cfg.quantity;
    let fit = fit_pairs(q.fit_kind(), &pairs, MIN_FIT_POINTS, Some(q.predicted_slope()))?;

    let base = s.diffusion_at(cfg.d_eps_values[0])?;
    let mu = compute_m_and_mu(&base, &ctx.basis, s.dynamics.mu_horizon)?;
    let mut metrics = BTreeMap::new();
    metrics.insert("points".into(), points.len() as f64);
    metrics.insert("failed_points".into(), points.iter().filter(|p| matches!(p.status, PointStatus::Failed(_))).count() as f64);
    metrics.insert("zero_points".into(), fit.zero_count as f64);
    metrics.insert("predicted_slope".into(), q.predicted_slope());
    metrics.insert("mu".into(), mu.mu);
    metrics.insert("mu_bar".into(), mu.mu_bar);
    if let FitOutcome::Fitted {
        slope,
        intercept,
        r_squared,
    } = fit.outcome
    {
        metrics.insert("slope".into(), slope);
        metrics.insert("intercept".into(), intercept);
        metrics.insert("r2".into(), r_squared);
    }
    if let Some(v) = points.iter().filter_map(|p| p.value).reduce(f64::max) {
        metrics.insert("max_value".into(), v);
    }
    Ok(SweepOutcome {
        quantity: q,
        points,
        fit,
        mu_bar: mu.mu_bar,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    /// Study name, such as `resolvent_gap` or `attractor`.
    pub quantity: String,
    pub artifact_version: String,
    pub started: String,
    pub finished: String,
    /// File names inside the run directory.
    pub outputs: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
    pub verdict: String,
    pub passed: bool,
    /// Resolved configuration; a valid input that reproduces the run.
    pub config: Config,
}

pub const RECORD_FILE: &str = "record.toml";
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

/// Writes `record.toml` into `dir`.
pub fn persist_run(record: &RunRecord, dir: &Path) -> Result<PathBuf> {
    if record.metrics.values().any(|v| !v.is_finite()) {
        return Err(Error::invalid("run metrics must be finite"));
    }
    let text = toml::to_string(record).map_err(|e| Error::invalid(format!("cannot serialise run record: {e}")))?;
    let path = dir.join(RECORD_FILE);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Loads a record from a run directory or directly from its `record.toml`.
pub fn load_run(path: &Path) -> Result<RunRecord> {
    let file = if path.is_dir() { path.join(RECORD_FILE) } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    toml::from_str(&text).map_err(|e| parse_error(&file, &text, &e))
}

/// A run directory `<root>/<timestamp>-<label>/`. It carries an
/// `INCOMPLETE` marker until [`RunDir::finish`] is called.
#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
    started: String,
    outputs: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path, label: &str) -> Result<Self> {
        let now = chrono::Local::now();
        let stamp = now.format("%Y%m%dT%H%M%S%.3f").to_string();
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let mut path = root.join(format!("{stamp}-{label}"));
        let mut suffix = 1;
        while path.exists() {
            suffix += 1;
            path = root.join(format!("{stamp}-{label}-{suffix}"));
        }
        std::fs::create_dir(&path).map_err(|e| Error::io(&path, e))?;
        let marker = path.join(INCOMPLETE_MARKER);
        std::fs::write(&marker, "run in progress or interrupted\n").map_err(|e| Error::io(&marker, e))?;
        Ok(Self {
            path,
            started: now.to_rfc3339(),
            outputs: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn started(&self) -> &str {
        &self.started
    }

    /// Writes a file inside the run directory; `name` must be a plain file name.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let p = self.file(name)?;
        std::fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    /// Registers an output and returns its path, for writers that take a path.
    pub fn file(&mut self, name: &str) -> Result<PathBuf> {
        if name.is_empty() || name.contains(['/', '\\']) || name == ".." || name == "." {
            return Err(Error::invalid(format!("'{name}' is not a plain file name")));
        }
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
        Ok(self.path.join(name))
    }

    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }

    /// Writes the record and removes the `INCOMPLETE` marker.
    pub fn finish(self, config: &Config, quantity: &str, metrics: BTreeMap<String, f64>, verdict: &str, passed: bool) -> Result<RunRecord> {
        let record = RunRecord {
            quantity: quantity.to_string(),
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            started: self.started.clone(),
            finished: chrono::Local::now().to_rfc3339(),
            outputs: self.outputs.clone(),
            metrics: metrics.into_iter().filter(|(_, v)| v.is_finite()).collect(),
            verdict: verdict.to_string(),
            passed,
            config: config.clone(),
        };
        persist_run(&record, &self.path)?;
        let marker = self.path.join(INCOMPLETE_MARKER);
        std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
        Ok(record)
    }
}

/// Writes the standard sweep files (`config.toml`, `points.csv`, `fit.csv`,
/// `plot.dat` and the per-quantity detail table) into `dir`.
pub fn write_sweep_files(dir: &mut RunDir, config: &Config, outcome: &SweepOutcome) -> Result<()> {
    dir.write("config.toml", &config.to_toml())?;
    dir.write("points.csv", &outcome.points_csv())?;
    dir.write("fit.csv", &outcome.fit.csv())?;
    dir.write("plot.dat", &outcome.plot_data())?;
    if let Some(details) = outcome.details_csv() {
        let name = match outcome.quantity {
            Quantity::ResolventGap => "resolvent.csv".to_string(),
            q => format!("{q}_details.csv"),
        };
        dir.write(&name, &details)?;
    }
    Ok(())
}
