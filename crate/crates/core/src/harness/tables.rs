use std::fs;
use std::path::Path;

use super::ExperimentResult;
use crate::error::{Error, Result};

/// Write `metrics.csv` (one row per strategy, mean and std per metric) and
/// `significance.csv` (one row per strategy pair). Floats use Rust's default
/// shortest-round-trip rendering, so re-parsing reproduces them exactly.
pub fn emit_tables(result: &ExperimentResult, dir: &Path) -> Result<()> {
    if result.strategies.is_empty() {
        return Err(Error::Experiment(
            "no strategies in result; nothing to tabulate".into(),
        ));
    }
    fs::create_dir_all(dir)?;

    let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
    w.write_record([
        "strategy",
        "accuracy_mean",
        "accuracy_std",
        "precision_mean",
        "precision_std",
        "recall_mean",
        "recall_std",
        "f1_mean",
        "f1_std",
    ])?;
    for s in &result.strategies {
        w.write_record([
            s.strategy.as_str().to_string(),
            s.accuracy.mean.to_string(),
            s.accuracy.std.to_string(),
            s.precision.mean.to_string(),
            s.precision.std.to_string(),
            s.recall.mean.to_string(),
            s.recall.std.to_string(),
            s.f1.mean.to_string(),
            s.f1.std.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("significance.csv"))?;
    w.write_record(["strategy_a", "strategy_b", "metric", "p_value", "stars"])?;
    for p in &result.significance {
        w.write_record([
            p.strategy_a.as_str().to_string(),
            p.strategy_b.as_str().to_string(),
            p.metric.clone(),
            p.annotation.p_value.to_string(),
            p.annotation.stars.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
