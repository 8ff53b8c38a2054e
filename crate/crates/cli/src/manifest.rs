//! Run manifests and the human-readable summary.

use std::path::Path;

use aaflow::checks::Check;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::CliError;

/// Everything needed to reproduce a run. Wall time is kept out of the
/// manifest (see `timing.json`) so that repeated runs give identical files.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub threads: usize,
    pub params: String,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub artifacts: Vec<String>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Timing {
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, threads: usize) -> Result<Self, CliError> {
        Ok(Self {
            command: command.into(),
            config_hash: cfg.hash()?,
            code_version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            threads,
            params: cfg.params_name(),
            checks: Vec::new(),
            passed: true,
            artifacts: Vec::new(),
            config: cfg.clone(),
        })
    }

    pub fn push(&mut self, check: Check) {
        self.passed &= check.passed;
        self.checks.push(check);
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "aaflow {} on {} (seed {}, {} threads)\nconfig hash {}\nversion {}\n\n",
            self.command, self.params, self.seed, self.threads, self.config_hash, self.code_version
        );
        for c in &self.checks {
            s.push_str(&format!("{}\n      {}\n", c.line(), c.label));
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        s.push_str(&format!("\n{} checks, {} failed\n", self.checks.len(), failed));
        if !self.artifacts.is_empty() {
            s.push_str(&format!("artifacts: {}\n", self.artifacts.join(", ")));
        }
        s
    }

    /// Writes `manifest.json`, `summary.txt`, `config.toml` and `timing.json`.
    pub fn write(&self, dir: &Path, timing: Timing) -> Result<(), CliError> {
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)? + "\n")?;
        std::fs::write(dir.join("summary.txt"), self.summary())?;
        std::fs::write(dir.join("config.toml"), self.config.to_toml()?)?;
        std::fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&timing)? + "\n")?;
        Ok(())
    }
}
