//! Declarative run configuration, read from TOML.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attractors::{ArcParams, GraphParams, LongTimeParams, OdeAttractorParams, PdeAttractorParams, PdeNewtonParams};
use crate::dynamics::{EvolveParams, FitWindow, Scheme};
use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;
use crate::spectral::{CosineBasis, DiffusionSpec, DomainSpec};

/// Converts a TOML error into [`Error::Parse`] with a 1-based line number.
pub(crate) fn parse_error(path: &Path, text: &str, err: &toml::de::Error) -> Error {
    let line = err
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(1);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: err.message().to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainConfig {
    /// System size `n`.
    pub components: usize,
    /// Number of cosine modes `K` for elliptic and decay studies.
    pub modes: usize,
    /// Quadrature nodes `G`; omitted means `2K + 2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            components: 1,
            modes: 128,
            nodes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    /// First `d_eps` value.
    pub start: f64,
    /// Geometric ratio between consecutive values.
    pub ratio: f64,
    pub points: usize,
    /// Explicit values; when present they replace the geometric sweep.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            start: 1.0,
            ratio: 2.0,
            points: 9,
            values: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    /// Diffusion coefficients for single-point studies. Sweeps rescale this
    /// vector so that its minimum equals each swept `d_eps`.
    pub eps: Vec<f64>,
    pub m0: f64,
    pub sweep: SweepSpec,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            eps: vec![1.0],
            m0: 1.0,
            sweep: SweepSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityConfig {
    /// One of `zero`, `pitchfork`, `saturated_cubic`, `coupled`, `linear`.
    /// An omitted table means `pitchfork` with `beta = 2`.
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

impl Default for NonlinearityConfig {
    fn default() -> Self {
        Self {
            name: "pitchfork".into(),
            beta: Some(2.0),
            gamma: None,
            a: None,
            b: None,
            c: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    pub dt: f64,
    /// Integration horizon `T`.
    pub t_end: f64,
    pub scheme: Scheme,
    pub stride: usize,
    /// Horizon `T*` on which `M` and `mu` are computed.
    pub mu_horizon: f64,
    /// Fraction of the horizon discarded before decay fits.
    pub fit_start_fraction: f64,
    pub floor_ratio: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 20.0,
            scheme: Scheme::Etd2rk,
            stride: 10,
            mu_horizon: 10.0,
            fit_start_fraction: 0.2,
            floor_ratio: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttractorConfig {
    /// Cosine modes for PDE attractor computations.
    pub modes: usize,
    pub pde_dt: f64,
    pub grid_density: usize,
    pub arc_offset: f64,
    pub arc_sample_dt: f64,
    pub arc_horizon: f64,
    pub capture_radius: f64,
    pub long_time_seeds: usize,
    pub transient: f64,
    pub tail: f64,
    pub tail_sample_dt: f64,
    pub lifted_samples: usize,
    pub random_fields: usize,
    pub newton_seeds: usize,
    pub probe_horizon: f64,
    pub probe_points: usize,
    /// Smallest resolution used in verdicts; sampled clouds never resolve
    /// distances below this.
    pub resolution_floor: f64,
    pub graph_points: usize,
    pub graph_inflate: f64,
    pub graph_steps: usize,
    pub graph_max_iterations: usize,
    pub graph_initial_amplitude: f64,
}

impl Default for AttractorConfig {
    fn default() -> Self {
        Self {
            modes: 32,
            pde_dt: 1e-2,
            grid_density: 41,
            arc_offset: 1e-5,
            arc_sample_dt: 1e-2,
            arc_horizon: 60.0,
            capture_radius: 1e-6,
            long_time_seeds: 2000,
            transient: 20.0,
            tail: 1.0,
            tail_sample_dt: 0.1,
            lifted_samples: 64,
            random_fields: 32,
            newton_seeds: 0,
            probe_horizon: 1.0,
            probe_points: 200,
            resolution_floor: 1e-3,
            graph_points: 33,
            graph_inflate: 0.2,
            graph_steps: 200,
            graph_max_iterations: 60,
            graph_initial_amplitude: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Allowed deviation of a fitted log-log slope from the predicted one.
    pub slope: f64,
    /// Relative tolerance on linear-fit slopes (decay rate against `d_eps`).
    pub linear_slope_relative: f64,
    /// Relative agreement of a fitted decay rate with the linear rate when `F = 0`.
    pub decay_rate_relative: f64,
    pub hyperbolicity: f64,
    pub newton_residual: f64,
    pub invariance: f64,
    pub graph: f64,
    /// Random trials for the sampled resolvent gap.
    pub resolvent_trials: usize,
    /// Contour radius for the spectral projection.
    pub projection_delta: f64,
    pub contour_nodes: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            slope: 0.02,
            linear_slope_relative: 0.01,
            decay_rate_relative: 1e-3,
            hyperbolicity: 1e-8,
            newton_residual: 1e-8,
            invariance: 1e-4,
            graph: 1e-13,
            resolvent_trials: 64,
            projection_delta: 0.5,
            contour_nodes: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    /// Root under which run directories are created.
    pub output_dir: String,
    pub domain: DomainConfig,
    pub diffusion: DiffusionConfig,
    pub nonlinearity: NonlinearityConfig,
    pub dynamics: DynamicsConfig,
    pub attractor: AttractorConfig,
    pub tolerances: Tolerances,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 42,
            output_dir: "runs".into(),
            domain: DomainConfig::default(),
            diffusion: DiffusionConfig::default(),
            nonlinearity: NonlinearityConfig::default(),
            dynamics: DynamicsConfig::default(),
            attractor: AttractorConfig::default(),
            tolerances: Tolerances::default(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

impl Config {
    /// Parses and validates; `path` is only used in diagnostics.
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| parse_error(path, text, &e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        if d.components == 0 {
            return Err(Error::invalid("domain.components must be at least 1"));
        }
        self.basis()?;
        self.attractor_basis()?;
        DiffusionSpec::new(self.diffusion.eps.clone(), self.diffusion.m0)?;
        if self.diffusion.eps.len() != d.components {
            return Err(Error::invalid(format!(
                "diffusion.eps has {} entries but domain.components = {}",
                self.diffusion.eps.len(),
                d.components
            )));
        }
        self.sweep_values()?;
        let f = self.nonlinearity()?;
        let report = f.validate();
        if !report.is_valid() || !report.bounded {
            return Err(Error::invalid(format!("nonlinearity {f} is not a bounded C^1 map: {report:?}")));
        }
        let dy = &self.dynamics;
        positive("dynamics.dt", dy.dt)?;
        positive("dynamics.t_end", dy.t_end)?;
        positive("dynamics.mu_horizon", dy.mu_horizon)?;
        if dy.stride == 0 {
            return Err(Error::invalid("dynamics.stride must be at least 1"));
        }
        if !(0.0..1.0).contains(&dy.fit_start_fraction) {
            return Err(Error::invalid("dynamics.fit_start_fraction must lie in [0, 1)"));
        }
        positive("dynamics.floor_ratio", dy.floor_ratio)?;
        let a = &self.attractor;
        for (name, v) in [
            ("attractor.pde_dt", a.pde_dt),
            ("attractor.arc_offset", a.arc_offset),
            ("attractor.arc_sample_dt", a.arc_sample_dt),
            ("attractor.arc_horizon", a.arc_horizon),
            ("attractor.capture_radius", a.capture_radius),
            ("attractor.transient", a.transient),
            ("attractor.tail_sample_dt", a.tail_sample_dt),
            ("attractor.probe_horizon", a.probe_horizon),
            ("attractor.resolution_floor", a.resolution_floor),
        ] {
            positive(name, v)?;
        }
        if a.tail < 0.0 || a.graph_inflate < 0.0 {
            return Err(Error::invalid("attractor.tail and attractor.graph_inflate must be >= 0"));
        }
        if a.grid_density < 2 || a.graph_points < 2 || a.graph_steps == 0 || a.graph_max_iterations == 0 {
            return Err(Error::invalid(
                "attractor.grid_density and graph_points must be >= 2; graph_steps and graph_max_iterations >= 1",
            ));
        }
        if a.long_time_seeds == 0 || a.probe_points == 0 {
            return Err(Error::invalid("attractor.long_time_seeds and probe_points must be >= 1"));
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("tolerances.slope", t.slope),
            ("tolerances.linear_slope_relative", t.linear_slope_relative),
            ("tolerances.decay_rate_relative", t.decay_rate_relative),
            ("tolerances.hyperbolicity", t.hyperbolicity),
            ("tolerances.newton_residual", t.newton_residual),
            ("tolerances.invariance", t.invariance),
            ("tolerances.graph", t.graph),
            ("tolerances.projection_delta", t.projection_delta),
        ] {
            positive(name, v)?;
        }
        if t.resolvent_trials == 0 || t.contour_nodes < 4 {
            return Err(Error::invalid("tolerances.resolvent_trials must be >= 1 and contour_nodes >= 4"));
        }
        if self.output_dir.is_empty() {
            return Err(Error::invalid("output_dir must not be empty"));
        }
        Ok(())
    }

    pub fn nonlinearity(&self) -> Result<Nonlinearity> {
        let p = &self.nonlinearity;
        let lookup = |key: &str| match key {
            "beta" => p.beta,
            "gamma" => p.gamma,
            "a" => p.a,
            "b" => p.b,
            "c" => p.c,
            _ => None,
        };
        let f = Nonlinearity::from_parts(&p.name, self.domain.components, lookup)?;
        let allowed: &[&str] = match p.name.as_str() {
            "pitchfork" => &["beta"],
            "saturated_cubic" => &["gamma"],
            "coupled" => &["a", "b"],
            "linear" => &["c"],
            _ => &[],
        };
        for key in ["beta", "gamma", "a", "b", "c"] {
            if lookup(key).is_some() && !allowed.contains(&key) {
                return Err(Error::invalid(format!("nonlinearity '{}' does not take parameter '{key}'", p.name)));
            }
        }
        Ok(f)
    }

    fn domain_spec(&self) -> Result<DomainSpec> {
        DomainSpec::new(self.domain.components)
    }

    /// Basis for elliptic and decay studies.
    pub fn basis(&self) -> Result<CosineBasis> {
        let k = self.domain.modes;
        CosineBasis::with_nodes(&self.domain_spec()?, k, self.domain.nodes.unwrap_or(2 * k + 2))
    }

    /// Coarser basis for attractor studies.
    pub fn attractor_basis(&self) -> Result<CosineBasis> {
        CosineBasis::new(&self.domain_spec()?, self.attractor.modes)
    }

    pub fn diffusion(&self) -> Result<DiffusionSpec> {
        DiffusionSpec::new(self.diffusion.eps.clone(), self.diffusion.m0)
    }

    /// The configured `eps` rescaled so that its minimum is `d_eps`.
    pub fn diffusion_at(&self, d_eps: f64) -> Result<DiffusionSpec> {
        DiffusionSpec::scaled_to(&self.diffusion.eps, d_eps)
    }

    /// Swept `d_eps` values, strictly increasing and positive.
    pub fn sweep_values(&self) -> Result<Vec<f64>> {
        let s = &self.diffusion.sweep;
        let values = match &s.values {
            Some(v) => v.clone(),
            None => {
                positive("diffusion.sweep.start", s.start)?;
                if !(s.ratio > 1.0 && s.ratio.is_finite()) {
                    return Err(Error::invalid(format!("diffusion.sweep.ratio must exceed 1, got {}", s.ratio)));
                }
                (0..s.points).map(|j| s.start * s.ratio.powi(j as i32)).collect()
            }
        };
        if values.is_empty() {
            return Err(Error::invalid("the d_eps sweep is empty"));
        }
        if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("swept d_eps values must be positive"));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("swept d_eps values must be strictly increasing"));
        }
        Ok(values)
    }

    pub fn evolve_params(&self) -> EvolveParams {
        EvolveParams {
            t_end: self.dynamics.t_end,
            dt: self.dynamics.dt,
            scheme: self.dynamics.scheme,
            stride: self.dynamics.stride,
        }
    }

    pub fn fit_window(&self) -> FitWindow {
        FitWindow {
            start_fraction: self.dynamics.fit_start_fraction,
            floor_ratio: self.dynamics.floor_ratio,
        }
    }

    fn arc_params(&self, substeps: usize) -> ArcParams {
        let a = &self.attractor;
        ArcParams {
            offset: a.arc_offset,
            sample_dt: a.arc_sample_dt,
            substeps,
            horizon: a.arc_horizon,
            capture_radius: a.capture_radius,
            ..ArcParams::default()
        }
    }

    pub fn ode_attractor_params(&self) -> OdeAttractorParams {
        OdeAttractorParams {
            search_half_width: None,
            grid_density: self.attractor.grid_density,
            arc: self.arc_params(ArcParams::default().substeps),
            hyperbolicity_tol: self.tolerances.hyperbolicity,
        }
    }

    pub fn long_time_params(&self) -> LongTimeParams {
        let a = &self.attractor;
        LongTimeParams {
            seeds: a.long_time_seeds,
            transient: a.transient,
            tail: a.tail,
            tail_sample_dt: a.tail_sample_dt,
            seed: self.seed,
            ..LongTimeParams::default()
        }
    }

    pub fn pde_attractor_params(&self, seed: u64) -> PdeAttractorParams {
        let a = &self.attractor;
        let substeps = (a.arc_sample_dt / a.pde_dt).round().max(1.0) as usize;
        PdeAttractorParams {
            lifted_samples: a.lifted_samples,
            random_fields: a.random_fields,
            transient: a.transient,
            tail: a.tail,
            tail_sample_dt: a.tail_sample_dt,
            dt: a.pde_dt,
            arc: self.arc_params(substeps),
            newton: PdeNewtonParams {
                residual_tol: self.tolerances.newton_residual,
                hyperbolicity_tol: self.tolerances.hyperbolicity,
                ..PdeNewtonParams::default()
            },
            newton_seeds: a.newton_seeds,
            seed,
        }
    }

    pub fn graph_params(&self, mu: f64) -> GraphParams {
        let a = &self.attractor;
        GraphParams {
            max_iterations: a.graph_max_iterations,
            tol: self.tolerances.graph,
            initial_amplitude: a.graph_initial_amplitude,
            steps: a.graph_steps,
            ..GraphParams::new(mu)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Config> {
        Config::from_toml_str(text, Path::new("test.toml"))
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse("").unwrap(), Config::default());
        assert_eq!(Config::default().sweep_values().unwrap().len(), 9);
    }

    #[test]
    fn round_trip() {
        let mut cfg = Config::default();
        cfg.domain.nodes = Some(300);
        cfg.diffusion.sweep.values = Some(vec![1.0, 3.0, 9.0, 27.0]);
        cfg.nonlinearity = NonlinearityConfig {
            name: "saturated_cubic".into(),
            beta: None,
            gamma: Some(1.5),
            ..NonlinearityConfig::default()
        };
        let text = cfg.to_toml();
        assert_eq!(parse(&text).unwrap(), cfg);
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = parse(
            "seed = 7\n[domain]\nmodes = 16\n[diffusion.sweep]\npoints = 5\n[nonlinearity]\nname = \"zero\"\nbeta = 0.0\n",
        );
        // zero takes no beta
        assert!(cfg.is_err());
        let cfg = parse("seed = 7\n[domain]\nmodes = 16\n[diffusion.sweep]\npoints = 5\n[nonlinearity]\nname = \"zero\"\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.domain.modes, 16);
        assert_eq!(cfg.sweep_values().unwrap(), vec![1.0, 2.0, 4.0, 8.0, 16.0]);
        assert!(cfg.nonlinearity().unwrap().is_zero());
    }

    #[test]
    fn unknown_key_reports_its_line() {
        match parse("seed = 1\n[domain]\nmodes = 16\nmodez = 3\n") {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 4);
                assert!(message.contains("modez"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_and_type_errors_report_lines() {
        match parse("seed = 1\n\n[dynamics]\ndt = \"fast\"\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        match parse("seed = \n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("[dynamics]\nscheme = \"rk45\"\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn semantic_errors() {
        for bad in [
            "[domain]\ncomponents = 0\n",
            "[domain]\nmodes = 1\n",
            "[domain]\nmodes = 8\nnodes = 10\n",
            "[diffusion]\neps = [1.0, 2.0]\n",
            "[diffusion]\neps = [0.5]\nm0 = 1.0\n",
            "[diffusion.sweep]\nratio = 1.0\n",
            "[diffusion.sweep]\nvalues = [1.0, 1.0, 2.0, 3.0]\n",
            "[diffusion.sweep]\npoints = 0\n",
            "[nonlinearity]\nname = \"cubic\"\n",
            "[nonlinearity]\nname = \"pitchfork\"\nbeta = 2.0\ngamma = 1.0\n",
            "[nonlinearity]\nname = \"coupled\"\na = 1.0\nb = 0.1\n",
            "[nonlinearity]\nname = \"linear\"\nc = 0.5\n",
            "[dynamics]\ndt = 0.0\n",
            "[dynamics]\nstride = 0\n",
            "[dynamics]\nfit_start_fraction = 1.0\n",
            "[attractor]\ngraph_points = 1\n",
            "[attractor]\npde_dt = -1.0\n",
            "[tolerances]\nslope = 0.0\n",
            "[tolerances]\ncontour_nodes = 2\n",
            "output_dir = \"\"\n",
        ] {
            assert!(matches!(parse(bad), Err(Error::InvalidParameter(_))), "{bad}");
        }
    }

    #[test]
    fn coupled_system_config() {
        let cfg = parse("[domain]\ncomponents = 2\n[diffusion]\neps = [1.0, 3.0]\n[nonlinearity]\nname = \"coupled\"\na = 1.5\nb = 0.3\n").unwrap();
        assert_eq!(cfg.nonlinearity().unwrap(), Nonlinearity::Coupled { a: 1.5, b: 0.3 });
        assert_eq!(cfg.diffusion_at(4.0).unwrap().eps(), &[4.0, 12.0]);
    }

    #[test]
    fn missing_file() {
        assert!(matches!(Config::load(Path::new("/nonexistent/cfg.toml")), Err(Error::NotFound(_))));
    }
}
