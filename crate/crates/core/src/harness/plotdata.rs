//! Smoothed learning-curve emission: per-episode mean and min..max band
//! across seeds, after a trailing moving average per seed.

use super::HarnessError;
use crate::agent::EpisodeRow;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Trailing moving average; a window of 1 is the identity.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= w {
            sum -= values[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

fn band_csv(series: &[Vec<f64>]) -> String {
    let n = series.iter().map(|s| s.len()).min().unwrap_or(0);
    let mut text = String::from("episode,mean,min,max\n");
    for t in 0..n {
        let vals: Vec<f64> = series.iter().map(|s| s[t]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(text, "{t},{mean},{lo},{hi}");
    }
    text
}

/// Writes coverage.csv, overlap.csv, and return.csv under `dir`.
pub fn emit_plotdata(
    rows_per_seed: &[(u64, Vec<EpisodeRow>)],
    window: usize,
    dir: &Path,
) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    type Extract = fn(&EpisodeRow) -> f64;
    let metrics: [(&str, Extract); 3] = [
        ("coverage.csv", |r| r.coverage_pct),
        ("overlap.csv", |r| r.overlap_pct),
        ("return.csv", |r| r.ret),
    ];
    for (file, extract) in metrics {
        let series: Vec<Vec<f64>> = rows_per_seed
            .iter()
            .map(|(_, rows)| smooth(&rows.iter().map(extract).collect::<Vec<_>>(), window))
            .collect();
        fs::write(dir.join(file), band_csv(&series))?;
    }
    Ok(())
}
