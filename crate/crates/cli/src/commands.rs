use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rdlab_core::attractors::{
    attractor_ode, hausdorff_distance, invariance_probe_ode, long_time_sampling_ode, spectral_gap, CloudPoints,
};
use rdlab_core::dynamics::{compute_m_and_mu, Problem};
use rdlab_core::elliptic::{eigenvalue_table, optimal_example_check};
use rdlab_core::rates::{
    loglog_fit, run_sweep, write_sweep_files, FitKind, FitOutcome, PointStatus, Quantity, RunDir, SweepConfig,
    SweepOutcome, SweepPoint,
};

use crate::{CliError, Context, Outcome};

/// `exact_gap * sqrt(d lambda_1 + 1)` must equal 1 this closely.
const ATTAINMENT_TOL: f64 = 1e-12;
/// Pointwise error of the solver against the closed-form example.
const EXAMPLE_TOL: f64 = 1e-12;
/// Spread of `seminorm^2 * eps` across the eps ladder.
const SCALING_TOL: f64 = 1e-10;
/// Deflection times `sqrt(d)` must stay within this ratio over the sweep.
const DEFLECTION_BAND: f64 = 2.0;

fn detail(p: &SweepPoint, key: &str) -> Option<f64> {
    p.details.iter().find(|(k, _)| k == key).map(|&(_, v)| v)
}

fn failed_points(out: &SweepOutcome) -> Vec<&SweepPoint> {
    out.points.iter().filter(|p| matches!(p.status, PointStatus::Failed(_))).collect()
}

fn print_points(ctx: &Context, out: &SweepOutcome) {
    ctx.say(format!("{:>12}  {:>22}  status", "d_eps", out.quantity.as_str()));
    for p in &out.points {
        let value = p.value.map_or("-".to_string(), |v| format!("{v:.15e}"));
        let status = match &p.status {
            PointStatus::Ok => "ok".to_string(),
            PointStatus::Zero => "zero".to_string(),
            PointStatus::Failed(m) => format!("failed: {m}"),
        };
        ctx.say(format!("{:>12}  {value:>22}  {status}", p.d_eps));
    }
    match out.fit.outcome {
        FitOutcome::Fitted { slope, r_squared, .. } => ctx.say(format!(
            "fit: slope {slope:.6} (predicted {}), r2 {r_squared:.6}, {} zero points excluded",
            out.quantity.predicted_slope(),
            out.fit.zero_count
        )),
        FitOutcome::IdenticallyZero => ctx.say("fit: identically zero - bound trivially satisfied"),
        FitOutcome::Refused { surviving } => ctx.say(format!("fit: refused, only {surviving} usable points")),
    }
    ctx.say(format!("mu_bar (first sweep point) = {:.6}", out.mu_bar));
}

fn run_quantity(ctx: &Context, dir: &mut RunDir, quantity: Quantity) -> Result<SweepOutcome, CliError> {
    let sweep = SweepConfig::from_config(&ctx.config, quantity)?;
    let out = run_sweep(&sweep)?;
    write_sweep_files(dir, &ctx.config, &out)?;
    print_points(ctx, &out);
    Ok(out)
}

/// Pass/fail against the predicted slope: two-sided on log-log axes,
/// relative for linear fits.
fn slope_verdict(ctx: &Context, out: &SweepOutcome) -> (String, bool) {
    let tol = &ctx.config.tolerances;
    let predicted = out.quantity.predicted_slope();
    match out.fit.outcome {
        FitOutcome::Fitted { slope, .. } => {
            let (dev, allowed) = match out.fit.kind {
                FitKind::LogLog => ((slope - predicted).abs(), tol.slope),
                FitKind::Linear => ((slope / predicted - 1.0).abs(), tol.linear_slope_relative),
            };
            (format!("slope {slope:.6} vs predicted {predicted:.6} (deviation {dev:.3e}, tol {allowed:.3e})"), dev <= allowed)
        }
        FitOutcome::IdenticallyZero => ("identically zero - bound trivially satisfied".into(), true),
        FitOutcome::Refused { surviving } => (format!("fit refused with {surviving} usable points"), false),
    }
}

pub fn resolvent_rate(ctx: &Context, dir: &mut RunDir) -> Result<Outcome, CliError> {
    let out = run_quantity(ctx, dir, Quantity::ResolventGap)?;
    let lambda1 = ctx.config.basis()?.lambda1();
    let attainment = out
        .points
        .iter()
        .filter_map(|p| p.value.map(|v| (v * (p.d_eps * lambda1 + 1.0).sqrt() - 1.0).abs()))
        .fold(0.0, f64::max);
    let (text, slope_ok) = slope_verdict(ctx, &out);
    let passed = slope_ok && attainment <= ATTAINMENT_TOL && failed_points(&out).is_empty();
    let mut metrics = out.metrics.clone();
    metrics.insert("attainment_error".into(), attainment);
    metrics.insert("slope_tolerance".into(), ctx.config.tolerances.slope);
    ctx.say(format!("max |gap * sqrt(d lambda_1 + 1) - 1| = {attainment:.3e}"));
    Ok(Outcome {
        metrics,
        verdict: format!("{text}; attainment error {attainment:.3e}"),
        passed,
    })
}

pub fn decay(ctx: &Context, dir: &mut RunDir) -> Result<Outcome, CliError> {
    let out = run_quantity(ctx, dir, Quantity::WDecayRate)?;
    let tol = &ctx.config.tolerances;
    let zero_f = ctx.config.nonlinearity()?.is_zero();
    let mut worst_margin = f64::INFINITY;
    let mut worst_relative: f64 = 0.0;
    for p in &out.points {
        if let (Some(fitted), Some(bound), Some(linear)) = (p.value, detail(p, "theoretical_rate"), detail(p, "linear_rate")) {
            worst_margin = worst_margin.min(fitted - bound);
            worst_relative = worst_relative.max((fitted / linear - 1.0).abs());
        }
    }
    let failures = failed_points(&out).len();
    let bound_ok = worst_margin >= 0.0 && failures == 0;
    let mut metrics = out.metrics.clone();
    metrics.insert("min_rate_margin".into(), worst_margin);
    metrics.insert("max_relative_rate_error".into(), worst_relative);
    let mut verdict = format!("fitted rate - (d lambda_1 + 1 - mu) >= {worst_margin:.4} at every point");
    let mut passed = bound_ok;
    if zero_f {
        let (text, slope_ok) = slope_verdict(ctx, &out);
        let rate_ok = worst_relative <= tol.decay_rate_relative;
        let _ = write!(
            verdict,
            "; F = 0: max relative rate error {worst_relative:.3e} (tol {:.1e}); {text}",
            tol.decay_rate_relative
        );
        passed &= rate_ok && slope_ok;
    }
    Ok(Outcome { metrics, verdict, passed })
}

pub fn eigs(ctx: &Context, dir: &mut RunDir, count: usize) -> Result<Outcome, CliError> {
    let cfg = &ctx.config;
    let basis = cfg.basis()?;
    let diffusion = cfg.diffusion()?;
    let table = eigenvalue_table(&diffusion, &basis, count)?;
    // closed form: every eps_i (k pi)^2 + 1, sorted
    let mut closed: Vec<f64> = diffusion
        .eps()
        .iter()
        .flat_map(|&e| (0..=basis.modes()).map(move |k| e * (k as f64 * PI).powi(2) + 1.0))
        .collect();
    closed.sort_by(f64::total_cmp);
    closed.truncate(count);
    let max_dev = table.iter().zip(&closed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut csv = String::from("index,eigenvalue,closed_form\n");
    ctx.say("index  eigenvalue");
    for (j, (v, c)) in table.iter().zip(&closed).enumerate() {
        let _ = writeln!(csv, "{},{v},{c}", j + 1);
        ctx.say(format!("{:>5}  {v:.15}", j + 1));
    }
    dir.write("eigenvalues.csv", &csv)?;

    let n = cfg.domain.components;
    let lambda1 = basis.lambda1();
    let mut lambda2_csv = String::from("d_eps,lambda2,predicted\n");
    let mut lambda2_exact = true;
    for d in cfg.sweep_values()? {
        let diff = cfg.diffusion_at(d)?;
        let lowest_nonconstant = eigenvalue_table(&diff, &basis, n + 1)?[n];
        let predicted = diff.d_eps() * lambda1 + 1.0;
        lambda2_exact &= lowest_nonconstant == predicted && diff.lambda2(&basis) == predicted;
        let _ = writeln!(lambda2_csv, "{d},{lowest_nonconstant},{predicted}");
    }
    dir.write("lambda2.csv", &lambda2_csv)?;
    let mut metrics = BTreeMap::new();
    metrics.insert("value".into(), table.last().copied().unwrap_or(f64::NAN));
    metrics.insert("predicted".into(), closed.last().copied().unwrap_or(f64::NAN));
    metrics.insert("max_deviation".into(), max_dev);
    Ok(Outcome {
        metrics,
        verdict: format!(
            "{count} eigenvalues match eps_i lambda_k + 1 (max deviation {max_dev:.1e}); lambda_2 = d lambda_1 + 1 {} across the sweep",
            if lambda2_exact { "exactly" } else { "NOT exactly" }
        ),
        passed: max_dev == 0.0 && lambda2_exact,
    })
}

pub fn example_optimal(ctx: &Context, dir: &mut RunDir) -> Result<Outcome, CliError> {
    let basis = ctx.config.basis()?;
    let base = ctx.config.diffusion.eps[0];
    let target = 1.0 / (8.0 * PI * PI);
    let mut csv = String::from("eps,closed_form_error,seminorm_sq,seminorm_sq_times_eps\n");
    let mut pairs = Vec::new();
    let (mut worst_error, mut worst_spread): (f64, f64) = (0.0, 0.0);
    for j in 0..4 {
        let eps = base * 4f64.powi(j);
        let r = optimal_example_check(eps, &basis)?;
        let scaled = r.seminorm_sq * eps;
        worst_error = worst_error.max(r.closed_form_error);
        worst_spread = worst_spread.max((scaled - target).abs());
        pairs.push((eps, r.seminorm_sq));
        let _ = writeln!(csv, "{eps},{},{},{scaled}", r.closed_form_error, r.seminorm_sq);
        ctx.say(format!(
            "eps {eps:>6}: seminorm^2 = {:.7}, max error vs closed form {:.1e}",
            r.seminorm_sq, r.closed_form_error
        ));
    }
    dir.write("optimal.csv", &csv)?;
    let exponent = loglog_fit(&pairs)?.slope().unwrap_or(f64::NAN);
    ctx.say(format!("scaling exponent {exponent:.3}"));
    let mut metrics = BTreeMap::new();
    metrics.insert("slope".into(), exponent);
    metrics.insert("predicted_slope".into(), -1.0);
    metrics.insert("seminorm_sq_at_base".into(), pairs[0].1);
    metrics.insert("max_closed_form_error".into(), worst_error);
    metrics.insert("max_scaled_deviation".into(), worst_spread);
    let passed =
        worst_error <= EXAMPLE_TOL && worst_spread <= SCALING_TOL && (exponent + 1.0).abs() <= ctx.config.tolerances.slope;
    Ok(Outcome {
        metrics,
        verdict: format!(
            "seminorm^2 {:.7} at eps {base}, scaling exponent {exponent:.3} vs -1, solver error {worst_error:.1e}",
            pairs[0].1
        ),
        passed,
    })
}

pub fn attractor(ctx: &Context, dir: &mut RunDir) -> Result<Outcome, CliError> {
    let cfg = &ctx.config;
    let f = cfg.nonlinearity()?;
    let params = cfg.ode_attractor_params();
    let ode = attractor_ode(&f, &params)?;
    let mut csv = String::from("index");
    for i in 0..f.components() {
        let _ = write!(csv, ",u_{}", i + 1);
    }
    csv.push_str(",stability,unstable_dimension,min_abs_real_part,residual\n");
    ctx.say(format!("{} equilibria of u' = -u + {f}", ode.equilibria.len()));
    for (j, e) in ode.equilibria.iter().enumerate() {
        let mean = e.mean();
        let _ = write!(csv, "{j}");
        for m in &mean {
            let _ = write!(csv, ",{m}");
        }
        let _ = writeln!(csv, ",{},{},{},{}", e.stability, e.unstable_dimension(), e.min_abs_real_part(), e.residual);
        let top = e.spectrum.first().map_or(f64::NAN, |z| z.re);
        ctx.say(format!("  {mean:?}: {} (leading eigenvalue {top:.6})", e.stability));
    }
    dir.write("equilibria.csv", &csv)?;
    ode.cloud.write_csv(&dir.file("ode_attractor.csv")?)?;
    dir.file("ode_attractor.meta.toml")?;

    let long_time = long_time_sampling_ode(&f, &cfg.long_time_params())?;
    long_time.write_csv(&dir.file("long_time.csv")?)?;
    dir.file("long_time.meta.toml")?;
    let dh = hausdorff_distance(&ode.cloud, &long_time, None)?;
    let h = ode
        .cloud
        .metadata
        .resolution
        .max(long_time.metadata.resolution)
        .max(cfg.attractor.resolution_floor);
    let drift = invariance_probe_ode(
        &ode.cloud,
        &f,
        cfg.attractor.probe_horizon,
        params.arc.sample_dt / params.arc.substeps as f64,
        cfg.attractor.probe_points,
    )?;
    let (lo, hi) = ode.cloud.bounding_box()?;
    ctx.say(format!("cloud: {} points spanning {lo:?} to {hi:?}", ode.cloud.len()));
    ctx.say(format!(
        "manifold union vs long-time sampling: d_H = {:.3e} (one-sided {:.3e} / {:.3e}), resolution {h:.3e}",
        dh.sym, dh.a_to_b, dh.b_to_a
    ));
    ctx.say(format!("invariance drift over t = {}: {drift:.3e}", cfg.attractor.probe_horizon));
    let mut metrics = BTreeMap::new();
    metrics.insert("value".into(), dh.sym);
    metrics.insert("predicted".into(), 2.0 * h);
    metrics.insert("equilibria".into(), ode.equilibria.len() as f64);
    metrics.insert("cloud_points".into(), ode.cloud.len() as f64);
    metrics.insert("resolution".into(), h);
    metrics.insert("invariance_drift".into(), drift);
    let single = match &ode.cloud.points {
        CloudPoints::Vectors(v) if v.len() == 1 => format!("single point {:?}; ", v[0]),
        _ => String::new(),
    };
    let passed = dh.sym < 2.0 * h && drift <= cfg.tolerances.invariance;
    Ok(Outcome {
        metrics,
        verdict: format!(
            "{single}{} equilibria, d_H(manifold union, long-time) {:.3e} vs 2h {:.3e}, drift {drift:.1e}",
            ode.equilibria.len(),
            dh.sym,
            2.0 * h
        ),
        passed,
    })
}

pub fn hausdorff_sweep(ctx: &Context, dir: &mut RunDir) -> Result<Outcome, CliError> {
    let cfg = &ctx.config;
    let out = run_quantity(ctx, dir, Quantity::Hausdorff)?;
    let basis = cfg.attractor_basis()?;
    let floor = cfg.attractor.resolution_floor;
    let mut monotone = true;
    let mut all_resolved = true;
    let mut threshold_ok = true;
    let mut previous: Option<(f64, f64)> = None;
    for p in &out.points {
        let Some(v) = p.value else { continue };
        let h = detail(p, "resolution_pde")
            .unwrap_or(0.0)
            .max(detail(p, "resolution_ode").unwrap_or(0.0))
            .max(floor);
        if let Some((prev, prev_h)) = previous {
            monotone &= v <= prev + prev_h.max(h);
        }
        previous = Some((v, h));
        all_resolved &= v <= h;
        let mu = compute_m_and_mu(&cfg.diffusion_at(p.d_eps)?, &basis, cfg.dynamics.mu_horizon)?.mu;
        if p.d_eps * basis.lambda1() > mu - 1.0 {
            threshold_ok &= v <= h;
        }
    }
    let failures = failed_points(&out).len();
    let (text, _) = slope_verdict(ctx, &out);
    let steep = out.fit.slope().is_some_and(|s| s <= out.quantity.predicted_slope() + cfg.tolerances.slope);
    let rate_ok = matches!(out.fit.outcome, FitOutcome::IdenticallyZero) || steep || all_resolved;
    let mut metrics = out.metrics.clone();
    metrics.insert("monotone".into(), f64::from(u8::from(monotone)));
    metrics.insert("below_resolution".into(), f64::from(u8::from(all_resolved)));
    let regime = if all_resolved {
        "every d_H is below the cloud resolution"
    } else if steep {
        "decay at least as fast as predicted"
    } else {
        "decay slower than predicted"
    };
    Ok(Outcome {
        metrics,
        verdict: format!(
            "{text}; {regime}; {} past the coincidence threshold",
            if threshold_ok { "coincident" } else { "NOT coincident" }
        ),
        passed: failures == 0 && monotone && rate_ok && threshold_ok,
    })
}

pub fn manifold(ctx: &Context, dir: &mut RunDir) -> Result<Outcome, CliError> {
    let cfg = &ctx.config;
    let deflection = run_quantity(ctx, dir, Quantity::Deflection)?;
    let graph = run_sweep(&SweepConfig::from_config(cfg, Quantity::GraphSup)?)?;
    dir.write("graph_points.csv", &graph.points_csv())?;
    if let Some(details) = graph.details_csv() {
        dir.write("graph_details.csv", &details)?;
    }
    let floor = cfg.attractor.resolution_floor;
    let scaled: Vec<f64> = deflection
        .points
        .iter()
        .filter_map(|p| p.value.map(|v| v * p.d_eps.sqrt()))
        .collect();
    let all_below = deflection.points.iter().all(|p| p.value.is_some_and(|v| v <= floor));
    let (lo, hi) = scaled.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let band = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let band_ok = all_below || band <= DEFLECTION_BAND;

    let basis = cfg.attractor_basis()?;
    let f = cfg.nonlinearity()?;
    let mut graph_ok = true;
    let mut applicable = 0;
    let mut worst_factor: f64 = 0.0;
    ctx.say("graph iteration:");
    for p in &graph.points {
        let diff = cfg.diffusion_at(p.d_eps)?;
        let problem = Problem::new(&basis, &diff, &f)?;
        let mu = compute_m_and_mu(&diff, &basis, cfg.dynamics.mu_horizon)?.mu;
        if spectral_gap(&problem, mu) <= 0.0 {
            ctx.say(format!("  d_eps {}: gap condition fails, not applicable", p.d_eps));
            continue;
        }
        applicable += 1;
        let factor = detail(p, "max_factor").unwrap_or(f64::INFINITY);
        let converged = detail(p, "converged") == Some(1.0);
        worst_factor = worst_factor.max(factor);
        graph_ok &= p.value.is_some() && factor < 1.0 && converged;
        ctx.say(format!(
            "  d_eps {}: sup |s| = {:.3e}, max factor {factor:.3e}",
            p.d_eps,
            p.value.unwrap_or(f64::NAN)
        ));
    }
    let mut metrics = deflection.metrics.clone();
    metrics.insert("deflection_band".into(), band);
    metrics.insert("graph_max_factor".into(), worst_factor);
    metrics.insert("graph_applicable_points".into(), applicable as f64);
    let deflection_text = if all_below {
        format!("deflection below {floor:.0e} at every point")
    } else {
        format!("deflection * sqrt(d) band ratio {band:.3} (allowed {DEFLECTION_BAND})")
    };
    Ok(Outcome {
        metrics,
        verdict: format!(
            "{deflection_text}; graph iteration contracts at {applicable} applicable points (max factor {worst_factor:.3e})"
        ),
        passed: band_ok && graph_ok && failed_points(&deflection).is_empty(),
    })
}

pub fn sweep(ctx: &Context, dir: &mut RunDir, quantity: Quantity) -> Result<Outcome, CliError> {
    let out = run_quantity(ctx, dir, quantity)?;
    let (text, ok) = slope_verdict(ctx, &out);
    Ok(Outcome {
        metrics: out.metrics.clone(),
        verdict: text,
        passed: ok && failed_points(&out).is_empty(),
    })
}
