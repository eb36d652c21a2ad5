use std::path::PathBuf;

use rdlab_core::rates::{load_run, INCOMPLETE_MARKER};

use crate::CliError;

fn metric(m: &std::collections::BTreeMap<String, f64>, keys: &[&str]) -> String {
    keys.iter()
        .find_map(|k| m.get(*k))
        .map_or("-".to_string(), |v| format!("{v:.6}"))
}

/// Prints one row per run directory; returns whether every run passed.
pub fn report(runs: &[PathBuf], quiet: bool) -> Result<bool, CliError> {
    if runs.is_empty() {
        return Err(CliError::Usage("report needs at least one run directory".into()));
    }
    let mut rows = Vec::with_capacity(runs.len());
    for dir in runs {
        if !dir.is_dir() {
            return Err(CliError::Usage(format!("{} is not a run directory", dir.display())));
        }
        let name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        if dir.join(INCOMPLETE_MARKER).exists() {
            rows.push((name, "-".to_string(), "-".to_string(), "-".to_string(), "INCOMPLETE", false));
            continue;
        }
        let record = load_run(dir).map_err(CliError::Config)?;
        let measured = metric(&record.metrics, &["slope", "value"]);
        let predicted = metric(&record.metrics, &["predicted_slope", "predicted"]);
        let status = if record.passed { "PASS" } else { "FAIL" };
        rows.push((name, record.quantity, measured, predicted, status, record.passed));
    }
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(3).max(3);
    if !quiet {
        println!("{:<width$}  {:<16}  {:>12}  {:>12}  status", "run", "quantity", "measured", "predicted");
        for (name, quantity, measured, predicted, status, _) in &rows {
            println!("{name:<width$}  {quantity:<16}  {measured:>12}  {predicted:>12}  {status}");
        }
    }
    let failed = rows.iter().filter(|r| !r.5).count();
    let all = failed == 0;
    println!(
        "VERDICT: {} report: {} of {} runs passed",
        if all { "PASS" } else { "FAIL" },
        rows.len() - failed,
        rows.len()
    );
    Ok(all)
}
