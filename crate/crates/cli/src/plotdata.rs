//! Tidy CSV tables for plotting: one observation per row, a header line.
//! [`emit_plotdata`] writes `<kind>.csv` with `-` replaced by `_`.
//!
//! | kind          | source artifact                            | columns                                      |
//! |---------------|--------------------------------------------|----------------------------------------------|
//! | `survival`    | `returns.bin`                              | `tau, survival` with `survival = P(tau >= x)` |
//! | `qq`          | `samples.csv`, `limit_report.json`         | `probability, sample, theoretical`           |
//! | `eigen-curve` | `eigen_curve.json`                         | `u, s, lambda, one_minus_lambda, pi_u`       |

use std::fs::File;
use std::path::{Path, PathBuf};

use aaflow::io::read_returns;
use aaflow::statistics::{normal_cdf, stable_quantile, StableSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const KINDS: [&str; 3] = ["survival", "qq", "eigen-curve"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRow {
    pub tau: f64,
    pub survival: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QqRow {
    pub probability: f64,
    pub sample: f64,
    pub theoretical: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenRow {
    pub u: f64,
    pub s: f64,
    pub lambda: f64,
    pub one_minus_lambda: f64,
    pub pi_u: f64,
}

/// Empirical survival `P(X >= x)` at distinct sample values, ascending in
/// `x` (so strictly decreasing in survival). Ranks are thinned to a
/// geometric grid with ratio `1 + 1/density`, all of the top `density`
/// ranks kept.
pub fn survival_rows(samples: &[f64], density: usize) -> Vec<SurvivalRow> {
    let mut v: Vec<f64> = samples.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_unstable_by(|a, b| b.total_cmp(a));
    let n = v.len();
    let mut rows = Vec::new();
    let ratio = 1.0 + 1.0 / density.max(1) as f64;
    let mut k = 1usize;
    while k <= n {
        // k = number of samples >= v[k-1]; skip ranks inside a tie block.
        let x = v[k - 1];
        let mut last = k;
        while last < n && v[last] == x {
            last += 1;
        }
        rows.push(SurvivalRow { tau: x, survival: last as f64 / n as f64 });
        let next = ((k as f64 * ratio).floor() as usize).max(k + 1);
        k = next.max(last + 1);
    }
    if let (Some(&min), Some(r)) = (v.last(), rows.last()) {
        if r.survival < 1.0 {
            rows.push(SurvivalRow { tau: min, survival: 1.0 });
        }
    }
    rows.reverse();
    rows
}

/// Sample quantiles against `quantile((i + 0.5) / n)`.
pub fn qq_rows(samples: &[f64], quantile: impl Fn(f64) -> Result<f64, CliError>) -> Result<Vec<QqRow>, CliError> {
    let mut v = samples.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let p = (i as f64 + 0.5) / n;
            Ok(QqRow { probability: p, sample: x, theoretical: quantile(p)? })
        })
        .collect()
}

/// Inverse of the normal CDF by bisection on `[-40, 40]`.
pub fn normal_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The fitted law as stored in `limit_report.json`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum FittedLaw {
    Gaussian { mean: f64, variance: f64 },
    Stable { spec: StableSpec, orientation: f64 },
    None,
}

impl FittedLaw {
    pub fn quantile(&self, p: f64) -> Result<f64, CliError> {
        match *self {
            FittedLaw::Gaussian { mean, variance } => Ok(mean + variance.sqrt() * normal_quantile(p)),
            FittedLaw::Stable { spec, orientation } => {
                // orientation * X follows `spec`.
                let q = if orientation > 0.0 { stable_quantile(&spec, p)? } else { stable_quantile(&spec, 1.0 - p)? };
                Ok(orientation * q)
            }
            FittedLaw::None => Err(CliError::Runtime("no fitted law in the limit report".into())),
        }
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<f64>, CliError> {
    #[derive(Deserialize)]
    struct Row {
        value: f64,
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    r.deserialize::<Row>().map(|row| row.map(|r| r.value).map_err(|e| CliError::Runtime(e.to_string()))).collect()
}

/// The eigen-curve artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenCurveArtifact {
    pub rows: Vec<EigenRow>,
}

fn missing(path: &Path) -> CliError {
    CliError::Runtime(format!("artifact {} does not exist", path.display()))
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|_| missing(path))
}

/// Writes `<dir>/<kind>.csv` from the artifacts in `dir`.
pub fn emit_plotdata(dir: &Path, kind: &str) -> Result<PathBuf, CliError> {
    let out = dir.join(format!("{}.csv", kind.replace('-', "_")));
    match kind {
        "survival" => {
            let recs = read_returns(open(&dir.join("returns.bin"))?)?;
            let tau: Vec<f64> = recs.iter().map(|r| r.tau).collect();
            write_csv(&out, &survival_rows(&tau, 100))?;
        }
        "qq" => {
            let report: serde_json::Value = serde_json::from_reader(open(&dir.join("limit_report.json"))?)?;
            let law: FittedLaw = serde_json::from_value(report["fit"].clone())?;
            let samples = read_samples_csv(&dir.join("samples.csv"))?;
            write_csv(&out, &qq_rows(&samples, |p| law.quantile(p))?)?;
        }
        "eigen-curve" => {
            let art: EigenCurveArtifact = serde_json::from_reader(open(&dir.join("eigen_curve.json"))?)?;
            let mut rows = art.rows;
            rows.sort_by(|a, b| a.u.total_cmp(&b.u));
            write_csv(&out, &rows)?;
        }
        other => return Err(CliError::Usage(format!("unknown plot kind `{other}` (expected one of {})", KINDS.join(", ")))),
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn survival_is_strictly_decreasing() {
        let xs = [3.0, 1.0, 2.0, 2.0, 5.0, 1.0, 4.0];
        let rows = survival_rows(&xs, 1000);
        assert_eq!(rows.first().unwrap().survival, 1.0);
        assert!(rows.windows(2).all(|w| w[0].tau < w[1].tau && w[0].survival > w[1].survival));
        assert_eq!(rows.iter().find(|r| r.tau == 2.0).unwrap().survival, 5.0 / 7.0);
        assert_eq!(rows.last().unwrap(), &SurvivalRow { tau: 5.0, survival: 1.0 / 7.0 });
    }

    #[test]
    fn survival_thinning_keeps_extremes() {
        let xs: Vec<f64> = (0..100_000).map(|i| i as f64).collect();
        let rows = survival_rows(&xs, 10);
        assert!(rows.len() < 200);
        assert_eq!(rows.last().unwrap().tau, 99_999.0);
        assert_eq!(rows.first().unwrap().survival, 1.0);
    }

    #[test]
    fn qq_endpoints_match_sample() {
        let xs = [0.3, -1.0, 2.5, 0.0];
        let rows = qq_rows(&xs, |p| Ok(normal_quantile(p))).unwrap();
        assert_eq!(rows[0].sample, -1.0);
        assert_eq!(rows[3].sample, 2.5);
        assert!((rows[0].theoretical + rows[3].theoretical).abs() < 1e-12);
    }

    #[test]
    fn normal_quantile_inverts_cdf() {
        for p in [1e-6, 0.1, 0.5, 0.975] {
            assert!((normal_cdf(normal_quantile(p)) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_kind() {
        let dir = std::env::temp_dir();
        assert!(matches!(emit_plotdata(&dir, "histogram"), Err(CliError::Usage(_))));
    }
}
