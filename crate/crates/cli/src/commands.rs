//! The subcommand pipelines.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use aaflow::checks::{self, limit_check, spectral_study_of, tail_check, Check, SpectralSettings};
use aaflow::flow_sim::{HybridSystem, ReturnRecord};
use aaflow::io::write_returns;
use aaflow::local_dynamics::{LocalSolver, ThetaRegime};
use aaflow::operator::{log_grid, CurveModel};
use aaflow::statistics::{sorted_tail_fit, LimitCase, LimitOptions, TailFit, TailMethod};
use serde::Serialize;

use crate::config::{default_model, limit_case, method_name, ExperimentConfig};
use crate::manifest::{RunManifest, Timing};
use crate::plotdata::{qq_rows, survival_rows, write_csv, EigenCurveArtifact, EigenRow, FittedLaw};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Derive,
    LocalCheck,
    Tails,
    Limits,
    Pressure,
    FullReport,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Derive => "derive",
            Command::LocalCheck => "local-check",
            Command::Tails => "tails",
            Command::Limits => "limits",
            Command::Pressure => "pressure",
            Command::FullReport => "full-report",
        }
    }
}

/// Result of a run: the manifest (already written) and the text for stdout.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: RunManifest,
    pub stdout: String,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    dir: &'a Path,
    manifest: RunManifest,
    stdout: String,
    log: &'a mut (dyn FnMut(&str) + Send),
}

impl Ctx<'_> {
    fn artifact(&mut self, name: &str) -> std::path::PathBuf {
        self.manifest.artifacts.push(name.into());
        self.dir.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.artifact(name);
        std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
        Ok(())
    }

    fn check(&mut self, c: Check) {
        (self.log)(&c.line());
        self.manifest.push(c);
    }
}

/// Runs `cmd` under `cfg`, writing artifacts into `cfg.out`. `log` receives
/// progress lines.
pub fn run(cmd: Command, cfg: &ExperimentConfig, log: &mut (dyn FnMut(&str) + Send)) -> Result<RunOutput, CliError> {
    let mut resolved = cfg.clone();
    resolved.pressure.ulam.seed = resolved.seed;
    let cfg = &resolved;
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build().map_err(|e| CliError::Runtime(e.to_string()))?;
    let dir = cfg.out.as_path();
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let start = Instant::now();
    let manifest = RunManifest::new(cmd.name(), cfg, pool.current_num_threads())?;
    let mut ctx = Ctx { cfg, dir, manifest, stdout: String::new(), log };
    pool.install(|| match cmd {
        Command::Derive => derive(&mut ctx),
        Command::LocalCheck => local_check(&mut ctx),
        Command::Tails => tails(&mut ctx),
        Command::Limits => limits(&mut ctx),
        Command::Pressure => pressure(&mut ctx),
        Command::FullReport => full_report(&mut ctx),
    })?;
    let timing = Timing { wall_time_s: start.elapsed().as_secs_f64() };
    ctx.manifest.write(dir, timing)?;
    Ok(RunOutput { manifest: ctx.manifest, stdout: ctx.stdout })
}

fn system(cfg: &ExperimentConfig) -> Result<HybridSystem, CliError> {
    Ok(HybridSystem::new(&cfg.flow_params()?, cfg.hybrid)?)
}

#[derive(Serialize)]
struct DeriveArtifact {
    params: aaflow::FlowParams64,
    constants: aaflow::DerivedConstants64,
    q: f64,
    limit_case: Option<LimitCase>,
}

fn derive(ctx: &mut Ctx) -> Result<(), CliError> {
    let dc = ctx.cfg.constants()?;
    let case = LimitCase::classify(dc.beta, dc.kappa).ok();
    let mut out = format!("params = {}\n", ctx.cfg.params_name());
    for (k, v) in
        [("delta", dc.delta), ("u", dc.u), ("v", dc.v), ("beta0", dc.beta0), ("beta", dc.beta), ("c0", dc.c0), ("c2", dc.c2), ("kappa", dc.kappa)]
    {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out.push_str(&format!("limit_case = {}\n", case.map_or("none", |c| c.name())));
    ctx.stdout = out;
    ctx.json("derive.json", &DeriveArtifact { params: ctx.cfg.flow_params()?, constants: dc, q: dc.q(), limit_case: case })
}

struct LocalRow {
    eta: f64,
    t: f64,
    xi: f64,
    omega: f64,
    theta: f64,
    xi_t_beta: f64,
    theta_over_prediction: f64,
}

fn local_check(ctx: &mut Ctx) -> Result<(), CliError> {
    let p = ctx.cfg.flow_params()?;
    let solver = LocalSolver::new(&p)?;
    let beta = solver.constants().beta;
    let mut rows = Vec::new();
    for &frac in &ctx.cfg.local.eta {
        let eta = frac * p.eps;
        let asym = solver.theta_asymptotic_constant(&p.w_spec, eta)?;
        for &t in &ctx.cfg.local.t {
            let pass = solver.exit_point(eta, t)?;
            let theta = solver.theta_along(&p.w_spec, &pass)?;
            let prediction = match asym.regime {
                ThetaRegime::Sub2 => asym.constant * t.powf(1.0 - p.w_spec.rho / 2.0),
                ThetaRegime::Crit2 => asym.constant * t.ln(),
                ThetaRegime::Super2 => asym.constant,
            };
            rows.push(LocalRow {
                eta,
                t,
                xi: pass.xi,
                omega: pass.omega,
                theta,
                xi_t_beta: pass.xi * t.powf(beta) / solver.xi_zero(eta),
                theta_over_prediction: theta / prediction,
            });
        }
    }
    let path = ctx.artifact("local_check.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Runtime(e.to_string()))?;
    w.write_record(["eta", "T", "xi", "omega", "theta", "xi_T_beta", "theta_over_prediction"]).map_err(|e| CliError::Runtime(e.to_string()))?;
    for r in &rows {
        w.write_record(&[r.eta, r.t, r.xi, r.omega, r.theta, r.xi_t_beta, r.theta_over_prediction].map(|v| v.to_string()))
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush()?;

    let t_max = ctx.cfg.local.t.iter().copied().fold(f64::MIN, f64::max);
    let mut c = Check::new(4, "entry asymptotics", "entry abscissa scaling xi(eta,T) T^beta / xi0(eta) at the largest T", "ratio in [0.95, 1.05]");
    let at_max: Vec<&LocalRow> = rows.iter().filter(|r| r.t == t_max).collect();
    let lo = at_max.iter().map(|r| r.xi_t_beta).fold(f64::INFINITY, f64::min);
    let hi = at_max.iter().map(|r| r.xi_t_beta).fold(0.0, f64::max);
    c.record("t", t_max);
    c.expect("ratio_min", lo, lo >= 0.95);
    c.expect("ratio_max", hi, hi <= 1.05);
    let th_lo = at_max.iter().map(|r| r.theta_over_prediction).fold(f64::INFINITY, f64::min);
    let th_hi = at_max.iter().map(|r| r.theta_over_prediction).fold(f64::MIN, f64::max);
    c.record("theta_over_prediction_min", th_lo);
    c.record("theta_over_prediction_max", th_hi);
    ctx.check(c);
    ctx.stdout = format!("{} rows written to {}\n", rows.len(), path.display());
    Ok(())
}

#[derive(Serialize)]
struct StabilityRow {
    k_frac: f64,
    k: usize,
    beta_hat: f64,
    stderr: f64,
}

#[derive(Serialize)]
struct TailsArtifact {
    n: usize,
    beta: f64,
    mean_tau: f64,
    max_tau: f64,
    neutral_fraction: f64,
    hill: TailFit,
    loglog: TailFit,
}

#[derive(Serialize)]
struct ReturnCsvRow {
    start_x: f64,
    start_y: f64,
    end_x: f64,
    end_y: f64,
    r: u64,
    tau: f64,
    psi_bar: f64,
    passed_neutral: bool,
}

fn tails(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg.tails.clone();
    let sys = system(ctx.cfg)?;
    let beta = sys.constants().beta;
    (ctx.log)(&format!("sampling {} induced returns", cfg.n));
    let recs: Vec<ReturnRecord> = sys.srb_sample(ctx.cfg.seed, cfg.burn_in, cfg.n)?;
    let path = ctx.artifact("returns.bin");
    write_returns(BufWriter::new(File::create(path)?), &recs)?;
    if cfg.returns_csv {
        let rows: Vec<ReturnCsvRow> = recs
            .iter()
            .map(|r| ReturnCsvRow {
                start_x: r.start.x,
                start_y: r.start.y,
                end_x: r.end.x,
                end_y: r.end.y,
                r: r.r,
                tau: r.tau,
                psi_bar: r.psi_bar,
                passed_neutral: r.passed_neutral,
            })
            .collect();
        let path = ctx.artifact("returns.csv");
        write_csv(&path, &rows)?;
    }
    let tau: Vec<f64> = recs.iter().map(|r| r.tau).collect();
    let neutral = recs.iter().filter(|r| r.passed_neutral).count() as f64 / recs.len() as f64;
    drop(recs);
    let mut desc = tau.clone();
    desc.sort_unstable_by(|a, b| b.total_cmp(a));
    let hill = sorted_tail_fit(&desc, TailMethod::Hill, cfg.k_frac)?;
    let loglog = sorted_tail_fit(&desc, TailMethod::LogLog, cfg.k_frac)?;
    let n = desc.len() as f64;
    let lo = (100.0 / n).max(1e-6).min(0.1);
    let stability: Vec<StabilityRow> = log_grid(lo, 0.1, cfg.stability_points.max(2))
        .into_iter()
        .filter_map(|kf| sorted_tail_fit(&desc, TailMethod::Hill, kf).ok())
        .map(|f| StabilityRow { k_frac: f.k_frac, k: f.k, beta_hat: f.beta_hat, stderr: f.stderr })
        .collect();
    let art = TailsArtifact {
        n: desc.len(),
        beta,
        mean_tau: tau.iter().sum::<f64>() / n,
        max_tau: desc[0],
        neutral_fraction: neutral,
        hill,
        loglog,
    };
    ctx.json("tails.json", &art)?;
    let path = ctx.artifact("hill_stability.csv");
    write_csv(&path, &stability)?;
    let path = ctx.artifact("survival.csv");
    write_csv(&path, &survival_rows(&tau, 100))?;
    let name = ctx.cfg.params_name();
    let c = tail_check(&[(&name, &tau, beta)], cfg.k_frac)?;
    ctx.check(c);
    ctx.stdout = format!(
        "beta = {beta}\n{} beta_hat = {:.4} (k = {})\n{} beta_hat = {:.4} (k = {})\n",
        method_name(hill.method),
        hill.beta_hat,
        hill.k,
        method_name(loglog.method),
        loglog.beta_hat,
        loglog.k
    );
    Ok(())
}

#[derive(Serialize)]
struct SampleRow {
    value: f64,
}

fn limits(ctx: &mut Ctx) -> Result<(), CliError> {
    let l = ctx.cfg.limits.clone();
    let dc = ctx.cfg.constants()?;
    let case = limit_case(ctx.cfg)?;
    if let Ok(natural) = LimitCase::classify(dc.beta, dc.kappa) {
        if natural != case {
            return Err(CliError::Config(format!(
                "limits.case = {} is inadmissible for beta = {}, kappa = {} (expected {})",
                case.name(),
                dc.beta,
                dc.kappa,
                natural.name()
            )));
        }
    }
    let threshold = match case {
        LimitCase::Stable => l.threshold_stable,
        LimitCase::Clt | LimitCase::NonstdClt => l.threshold_gaussian,
    };
    let opts = LimitOptions {
        chunk: l.chunk,
        burn_in: l.burn_in,
        variance_returns: l.variance_returns,
        normalizer_c: l.normalizer_c,
        ..LimitOptions::new(l.t, l.n, ctx.cfg.seed, threshold)
    };
    let opts = LimitOptions { estimation_time: l.estimation_time.unwrap_or(opts.estimation_time), ..opts };
    let sys = system(ctx.cfg)?;
    (ctx.log)(&format!("{} windows of flow time {} ({})", l.n, l.t, case.name()));
    let report = aaflow::statistics::limit_experiment(&sys, &l.observable, case, &opts)?;
    ctx.json("limit_report.json", &report)?;
    let rows: Vec<SampleRow> = report.samples.iter().map(|&value| SampleRow { value }).collect();
    let path = ctx.artifact("samples.csv");
    write_csv(&path, &rows)?;
    let law: FittedLaw = serde_json::from_value(serde_json::to_value(report.fit)?)?;
    if law != FittedLaw::None {
        let qq = qq_rows(&report.samples, |p| law.quantile(p))?;
        let path = ctx.artifact("qq.csv");
        write_csv(&path, &qq)?;
    }
    ctx.stdout = format!("case = {}\nks = {:.5} (threshold {})\n", case.name(), report.ks_distance, report.threshold);
    ctx.check(limit_check(&report, dc.beta, dc.kappa));
    Ok(())
}

fn pressure(ctx: &mut Ctx) -> Result<(), CliError> {
    let pc = ctx.cfg.pressure.clone();
    let sys = system(ctx.cfg)?;
    let beta = sys.constants().beta;
    let set = SpectralSettings {
        ulam: aaflow::operator::UlamOptions { seed: ctx.cfg.seed, ..pc.ulam },
        u_grid: log_grid(pc.u_min, pc.u_max, pc.u_points),
        s_grid: log_grid(pc.s_min, pc.s_max, pc.s_points),
        phase_grid: checks::phase_grid(),
        srb_returns: pc.srb_returns,
        seed: ctx.cfg.seed,
    };
    (ctx.log)(&format!("building the Ulam operator at resolution {}", set.ulam.resolution));
    let study = spectral_study_of(&ctx.cfg.params_name(), &sys, &set)?;
    let model = pc.model.unwrap_or(default_model(beta));
    let curve = match model {
        CurveModel::PowerLaw => study.power_curve.clone(),
        CurveModel::Quadratic => study.quadratic_curve.clone(),
        CurveModel::QuadraticLog => match &study.quadratic_log_curve {
            Some(c) => c.clone(),
            None => return Err(CliError::Config("pressure.model = quadratic_log needs beta = 2".into())),
        },
    };
    let rows: Vec<EigenRow> = curve
        .points
        .iter()
        .zip(&study.pi)
        .map(|(p, &pi_u)| EigenRow { u: p.u, s: p.s, lambda: p.lambda, one_minus_lambda: p.one_minus_lambda, pi_u })
        .collect();
    ctx.json("eigen_curve.json", &EigenCurveArtifact { rows: rows.clone() })?;
    let path = ctx.artifact("eigen_curve.csv");
    write_csv(&path, &rows)?;
    ctx.json("curve_fit.json", &curve.fit)?;
    ctx.json("relpres.json", &study.relpres)?;
    ctx.json("spectral.json", &study)?;
    ctx.stdout = format!(
        "states = {}\ntau_hat = {:.6} (monte carlo {:.6})\n{:?} exponent = {:.4}\n",
        study.states, study.tau_hat, study.tau_mc, model, curve.fit.exponent
    );
    let studies = [study];
    ctx.check(checks::eigenvalue_asymptotics(&studies)?);
    ctx.check(checks::pressure_relation(&studies)?);
    Ok(())
}

fn full_report(ctx: &mut Ctx) -> Result<(), CliError> {
    let scale = ctx.cfg.check_scale();
    ctx.json("scale.json", &scale)?;
    let checks = checks::run_all(&scale, |c| (ctx.log)(&c.line()))?;
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.id.to_string()).collect();
    ctx.stdout = format!("{} checks, {} failed{}\n", checks.len(), failed.len(), if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) });
    for c in checks {
        ctx.manifest.push(c);
    }
    Ok(())
}

/// Writes `text` to stdout, ignoring a closed pipe.
pub fn print(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
    let _ = out.flush();
}
