//! Experiment configuration.
//!
//! A config is a TOML file with top-level keys `preset`, `seed`, `threads`
//! and `out`, an optional `[params]` table replacing the preset, and one
//! table per subcommand. Every table rejects unknown keys; omitted keys take
//! the defaults below.

use std::path::{Path, PathBuf};

use aaflow::checks::{CheckScale, ETA_GRID};
use aaflow::flow_sim::HybridOptions;
use aaflow::model::{derive_constants, Preset};
use aaflow::operator::{log_grid, CurveModel, UlamOptions};
use aaflow::statistics::{LimitCase, Observable, TailMethod};
use aaflow::{DerivedConstants64, FlowParams64};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Label of the parameter set in reports.
    pub name: Option<String>,
    /// One of `p_stable`, `p_boundary`, `p_clt`. Ignored when `params` is set.
    pub preset: Option<String>,
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    /// Not part of the resolved config: the output location does not
    /// change any result.
    #[serde(skip_serializing)]
    pub out: PathBuf,
    pub params: Option<FlowParams64>,
    pub hybrid: HybridOptions,
    pub local: LocalConfig,
    pub tails: TailsConfig,
    pub limits: LimitsConfig,
    pub pressure: PressureConfig,
    pub report: ReportConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: None,
            preset: None,
            seed: 7,
            threads: 0,
            out: PathBuf::from("aaflow-out"),
            params: None,
            hybrid: HybridOptions::default(),
            local: LocalConfig::default(),
            tails: TailsConfig::default(),
            limits: LimitsConfig::default(),
            pressure: PressureConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalConfig {
    /// Entry heights as fractions of `eps`.
    pub eta: Vec<f64>,
    /// Passage times.
    pub t: Vec<f64>,
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self { eta: ETA_GRID.to_vec(), t: log_grid(1e1, 1e4, 7) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TailsConfig {
    /// Induced returns along one orbit.
    pub n: usize,
    pub burn_in: u64,
    pub k_frac: f64,
    /// Points of the Hill stability plot, log-spaced in `k`.
    pub stability_points: usize,
    /// Also export the return stream as CSV.
    pub returns_csv: bool,
}

impl Default for TailsConfig {
    fn default() -> Self {
        Self { n: 1_000_000, burn_in: 10_000, k_frac: 1e-3, stability_points: 40, returns_csv: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitsConfig {
    /// Limit regime; classified from the exponents when absent.
    pub case: Option<LimitCase>,
    pub t: f64,
    pub n: usize,
    pub chunk: usize,
    pub burn_in: u64,
    /// Flow time of the centring stream; `min(n t, 2e8)` when absent.
    pub estimation_time: Option<f64>,
    pub variance_returns: usize,
    pub normalizer_c: f64,
    pub threshold_gaussian: f64,
    pub threshold_stable: f64,
    pub observable: Observable,
}

impl Default for LimitsConfig {
    fn default() -> Self {
        Self {
            case: None,
            t: 1e4,
            n: 10_000,
            chunk: 100,
            burn_in: 1000,
            estimation_time: None,
            variance_returns: 4_000_000,
            normalizer_c: 1.0,
            threshold_gaussian: 0.02,
            threshold_stable: 0.05,
            observable: Observable::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PressureConfig {
    /// Ulam options; `seed` is replaced by the top-level seed.
    pub ulam: UlamOptions,
    pub u_min: f64,
    pub u_max: f64,
    pub u_points: usize,
    pub s_min: f64,
    pub s_max: f64,
    pub s_points: usize,
    /// Model of the eigenvalue curve; chosen from `beta` when absent.
    pub model: Option<CurveModel>,
    /// Returns of the Monte Carlo reference for `tau*` and `Pi(u)`.
    pub srb_returns: usize,
}

impl Default for PressureConfig {
    fn default() -> Self {
        Self {
            ulam: UlamOptions { resolution: 64, max_depth: 8, ..UlamOptions::default() },
            u_min: 1e-4,
            u_max: 1e-1,
            u_points: 13,
            s_min: 1e-4,
            s_max: 1e-1,
            s_points: 7,
            model: None,
            srb_returns: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Full,
    Desk,
    /// Seconds; for exercising the pipeline only.
    Smoke,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub profile: Profile,
}

/// Overrides from the command line or the environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| cfg_err(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = o.threads {
            self.threads = t;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        self.pressure.ulam.seed = self.seed;
    }

    pub fn preset(&self) -> Result<Option<Preset>, CliError> {
        match &self.preset {
            None => Ok(None),
            Some(name) => Preset::from_name(name).map(Some).ok_or_else(|| cfg_err(format!("unknown preset `{name}`"))),
        }
    }

    /// Explicit parameters if given, else the preset (default `p_stable`).
    pub fn flow_params(&self) -> Result<FlowParams64, CliError> {
        if let Some(p) = self.params {
            return Ok(p);
        }
        Ok(self.preset()?.unwrap_or(Preset::Stable).params())
    }

    /// Short name of the parameter set.
    pub fn params_name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match (&self.params, self.preset()) {
            (Some(_), _) => "custom".into(),
            (None, Ok(Some(p))) => p.name().into(),
            _ => Preset::Stable.name().into(),
        }
    }

    pub fn constants(&self) -> Result<DerivedConstants64, CliError> {
        derive_constants(&self.flow_params()?).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn check_scale(&self) -> CheckScale {
        let base = match self.report.profile {
            Profile::Full => CheckScale::full(),
            Profile::Desk => CheckScale::desk(),
            Profile::Smoke => CheckScale::smoke(),
        };
        CheckScale { seed: self.seed, ..base }
    }

    /// Semantic validation beyond the schema.
    pub fn validate(&self) -> Result<(), CliError> {
        self.preset()?;
        self.constants()?;
        if !(self.hybrid.chart_half_width > 0.0 && self.hybrid.chart_half_width < 0.5) {
            return Err(cfg_err("hybrid.chart_half_width must lie in (0, 0.5)"));
        }
        let positive = |name: &str, v: &[f64]| -> Result<(), CliError> {
            if v.is_empty() || v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(cfg_err(format!("{name} must be a non-empty list of positive numbers")));
            }
            Ok(())
        };
        positive("local.eta", &self.local.eta)?;
        positive("local.t", &self.local.t)?;
        if self.local.eta.iter().any(|&e| e > 1.0) {
            return Err(cfg_err("local.eta entries are fractions of eps and must be <= 1"));
        }
        if !(self.tails.k_frac > 0.0 && self.tails.k_frac <= 0.1) {
            return Err(cfg_err("tails.k_frac must lie in (0, 0.1]"));
        }
        if self.tails.n < aaflow::statistics::TAIL_MIN_SAMPLES {
            return Err(cfg_err(format!("tails.n must be at least {}", aaflow::statistics::TAIL_MIN_SAMPLES)));
        }
        let l = &self.limits;
        if !(l.t > 1.0) || l.n < 2 || l.chunk == 0 || !(l.normalizer_c > 0.0) {
            return Err(cfg_err("limits needs t > 1, n >= 2, chunk >= 1 and normalizer_c > 0"));
        }
        for (name, v) in [("limits.threshold_gaussian", l.threshold_gaussian), ("limits.threshold_stable", l.threshold_stable)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(cfg_err(format!("{name} must lie in (0, 1)")));
            }
        }
        let p = &self.pressure;
        p.ulam.validate().map_err(|e| cfg_err(format!("pressure.ulam: {e}")))?;
        for (name, lo, hi, n) in [("u", p.u_min, p.u_max, p.u_points), ("s", p.s_min, p.s_max, p.s_points)] {
            if !(lo > 0.0 && lo < hi) || n < 2 {
                return Err(cfg_err(format!("pressure.{name} grid needs 0 < min < max and at least 2 points")));
            }
        }
        if !(1e-4 * (1.0 - 1e-9) <= p.u_min && p.u_max <= 1e-1 * (1.0 + 1e-9)) {
            return Err(cfg_err("pressure u grid must lie in [1e-4, 1e-1]"));
        }
        if p.srb_returns < 1000 {
            return Err(cfg_err("pressure.srb_returns must be at least 1000"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| cfg_err(e.to_string()))
    }

    /// SHA-256 of the resolved config, hex encoded.
    pub fn hash(&self) -> Result<String, CliError> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// The tail estimator names used in artifacts.
pub fn method_name(m: TailMethod) -> &'static str {
    match m {
        TailMethod::Hill => "hill",
        TailMethod::LogLog => "loglog",
    }
}

/// Default curve model for a tail exponent.
pub fn default_model(beta: f64) -> CurveModel {
    if beta < 2.0 - 1e-9 {
        CurveModel::PowerLaw
    } else if beta <= 2.0 + 1e-9 {
        CurveModel::QuadraticLog
    } else {
        CurveModel::Quadratic
    }
}

/// Limit regime for the configured parameters.
pub fn limit_case(cfg: &ExperimentConfig) -> Result<LimitCase, CliError> {
    let dc = cfg.constants()?;
    match cfg.limits.case {
        Some(c) => Ok(c),
        None => LimitCase::classify(dc.beta, dc.kappa).map_err(|e| cfg_err(e.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::parse("sead = 3").is_err());
        assert!(ExperimentConfig::parse("[tails]\nnn = 3").is_err());
        assert!(ExperimentConfig::parse("[pressure.ulam]\nres = 3").is_err());
    }

    #[test]
    fn round_trip_and_hash() {
        let mut c = ExperimentConfig::parse("preset = \"p_clt\"\n[tails]\nn = 20000").unwrap();
        c.apply(&Overrides { seed: Some(3), ..Overrides::default() });
        let back = ExperimentConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash().unwrap(), c.hash().unwrap());
        assert_eq!(c.hash().unwrap().len(), 64);
    }

    #[test]
    fn semantic_errors() {
        let bad = ExperimentConfig::parse("preset = \"p_nope\"").unwrap();
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig::parse("[tails]\nk_frac = 0.5").unwrap();
        assert!(bad.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn model_choice() {
        assert_eq!(default_model(1.5), CurveModel::PowerLaw);
        assert_eq!(default_model(2.0), CurveModel::QuadraticLog);
        assert_eq!(default_model(3.0), CurveModel::Quadratic);
    }
}
