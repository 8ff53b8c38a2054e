use std::path::PathBuf;
use std::process::ExitCode;

use aaflow_cli::commands::{print, run, Command};
use aaflow_cli::config::{ExperimentConfig, Overrides};
use aaflow_cli::plotdata::emit_plotdata;
use aaflow_cli::CliError;
use clap::{Args, Parser, Subcommand};

/// Experiments on an almost Anosov flow.
///
/// Every option can also be set through the environment variable named in
/// its help text (prefix `AAF_`).
#[derive(Parser, Debug)]
#[command(name = "aaflow", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, global = true, env = "AAF_CONFIG")]
    config: Option<PathBuf>,
    /// Named parameter set, overriding the config.
    #[arg(long, global = true, env = "AAF_PRESET")]
    preset: Option<String>,
    #[arg(long, global = true, env = "AAF_SEED")]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "AAF_THREADS")]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "AAF_OUT")]
    out: Option<PathBuf>,
    /// Exit with status 1 when any check misses its tolerance.
    #[arg(long, global = true, env = "AAF_STRICT")]
    strict: bool,
    /// Suppress progress lines on stderr.
    #[arg(long, short, global = true, env = "AAF_QUIET")]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Print the derived constants of the parameter set.
    Derive,
    /// Passage geometry and weight integrals on a grid (local_check.csv).
    LocalCheck,
    /// Induced return stream and roof tail fits.
    Tails {
        /// Number of induced returns.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        k_frac: Option<f64>,
        /// Also export the return stream as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Limit law of the normalised flow Birkhoff sums.
    Limits {
        /// stable, nonstd_clt or clt.
        #[arg(long)]
        case: Option<String>,
        /// Flow time of each window.
        #[arg(long = "time")]
        t: Option<f64>,
        /// Number of windows.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        threshold_gaussian: Option<f64>,
        #[arg(long)]
        threshold_stable: Option<f64>,
    },
    /// Twisted Ulam operator: eigenvalue curve and pressure relation.
    Pressure {
        /// Boxes per axis.
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        max_depth: Option<u32>,
        #[arg(long)]
        u_points: Option<usize>,
        #[arg(long)]
        s_points: Option<usize>,
        #[arg(long)]
        srb_returns: Option<usize>,
    },
    /// Every acceptance check; exits 1 if any fails.
    FullReport {
        /// full, desk or smoke.
        #[arg(long)]
        profile: Option<String>,
    },
    /// Regenerate a plot table (survival, qq, eigen-curve) from the
    /// artifacts in the output directory.
    PlotData {
        #[arg(long)]
        kind: String,
    },
}

fn parse_enum<T: serde::de::DeserializeOwned>(key: &str, value: &str) -> Result<T, CliError> {
    T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(value))
        .map_err(|_| CliError::Config(format!("invalid value `{value}` for {key}")))
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides { seed: cli.common.seed, threads: cli.common.threads, out: cli.common.out.clone() });
    if let Some(p) = &cli.common.preset {
        cfg.preset = Some(p.clone());
        cfg.params = None;
        cfg.name = None;
    }
    match &cli.command {
        Cmd::Tails { n, k_frac, csv } => {
            let t = &mut cfg.tails;
            t.n = n.unwrap_or(t.n);
            t.k_frac = k_frac.unwrap_or(t.k_frac);
            t.returns_csv |= csv;
        }
        Cmd::Limits { case, t, n, threshold_gaussian, threshold_stable } => {
            let l = &mut cfg.limits;
            if let Some(c) = case {
                l.case = Some(parse_enum("--case", c)?);
            }
            l.t = t.unwrap_or(l.t);
            l.n = n.unwrap_or(l.n);
            l.threshold_gaussian = threshold_gaussian.unwrap_or(l.threshold_gaussian);
            l.threshold_stable = threshold_stable.unwrap_or(l.threshold_stable);
        }
        Cmd::Pressure { resolution, max_depth, u_points, s_points, srb_returns } => {
            let p = &mut cfg.pressure;
            p.ulam.resolution = resolution.unwrap_or(p.ulam.resolution);
            p.ulam.max_depth = max_depth.unwrap_or(p.ulam.max_depth);
            p.u_points = u_points.unwrap_or(p.u_points);
            p.s_points = s_points.unwrap_or(p.s_points);
            p.srb_returns = srb_returns.unwrap_or(p.srb_returns);
        }
        Cmd::FullReport { profile } => {
            if let Some(p) = profile {
                cfg.report.profile = parse_enum("--profile", p)?;
            }
        }
        Cmd::Derive | Cmd::LocalCheck | Cmd::PlotData { .. } => {}
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = cli.common.quiet;
    let result = resolve(&cli).and_then(|cfg| {
        let cmd = match &cli.command {
            Cmd::Derive => Command::Derive,
            Cmd::LocalCheck => Command::LocalCheck,
            Cmd::Tails { .. } => Command::Tails,
            Cmd::Limits { .. } => Command::Limits,
            Cmd::Pressure { .. } => Command::Pressure,
            Cmd::FullReport { .. } => Command::FullReport,
            Cmd::PlotData { kind } => {
                let path = emit_plotdata(&cfg.out, kind)?;
                print(&format!("{}\n", path.display()));
                return Ok(ExitCode::SUCCESS);
            }
        };
        let mut log = |line: &str| {
            if !quiet {
                eprintln!("{line}");
            }
        };
        let out = run(cmd, &cfg, &mut log)?;
        print(&out.stdout);
        let failed = !out.manifest.passed;
        if failed {
            eprintln!("some checks failed; see {}", cfg.out.join("summary.txt").display());
        }
        let strict = cli.common.strict || cmd == Command::FullReport;
        Ok(if failed && strict { ExitCode::from(1) } else { ExitCode::SUCCESS })
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("aaflow: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
