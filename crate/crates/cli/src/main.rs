use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ergocell::environment::{sample_env, EnvSpec};
use ergocell::grid::{GridField, TorusGrid};
use ergocell::harness::{
    self, fit_rate, load_csv, median, periodized_constant, point_label, reference_constant,
    resume_convergence_study, run_convergence_study, ModelConfig, StudyConfig,
};
use ergocell::validate::run_validation;
use ergocell::Error;

#[derive(Parser)]
#[command(
    name = "ergocell",
    version,
    about = "Ergodic constants of periodized random cell problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Seed; defaults to the first seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a medium and write V on a grid as a binary field.
    GenEnv {
        /// JSON environment spec.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Nodes per axis.
        #[arg(long, default_value_t = 256)]
        nodes: usize,
        /// Side of the sampled box [0, box)^d.
        #[arg(long = "box", default_value_t = 16.0)]
        box_len: f64,
    },
    /// Reference H̄(p) for every point of an HJB config.
    Hbar(Common),
    /// Periodized H̄_L(p) for every L and point of an HJB config.
    HbarL(Common),
    /// Reference F̄(P) for every point of an elliptic config.
    Fbar(Common),
    /// Periodized F̄_L(P) for every L and point of an elliptic config.
    FbarL(Common),
    /// Full sweep; writes CSV to --out (and JSON next to it) or to the config's outputs.
    Study {
        #[command(flatten)]
        common: Common,
        /// Keep rows already present in the CSV output and compute the rest.
        #[arg(long)]
        resume: bool,
    },
    /// Fit log(median error) against log L from a study CSV.
    RateFit {
        /// Study CSV.
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in fixture suite.
    Validate {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Error carrying the process exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn classify(err: anyhow::Error) -> Failure {
    let code = match err.downcast_ref::<Error>() {
        Some(Error::NonConvergence { .. }) => 2,
        Some(Error::Io(_)) => 3,
        Some(Error::Csv(e)) if e.is_io_error() => 3,
        Some(_) => 1,
        None if err.downcast_ref::<std::io::Error>().is_some() => 3,
        None => 1,
    };
    Failure { code, err }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let f = classify(e);
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(common: &Common) -> Result<StudyConfig> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(Error::from)
        .with_context(|| format!("reading {}", common.config.display()))?;
    let mut cfg: StudyConfig = serde_json::from_str(&text).map_err(Error::from)?;
    if let Some(t) = common.tol {
        cfg.solver.tol = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)
            .map_err(Error::from)
            .with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn require_model(cfg: &StudyConfig, hjb: bool) -> Result<()> {
    let is_hjb = matches!(cfg.model, ModelConfig::Hjb { .. });
    if is_hjb != hjb {
        bail!(Error::InvalidConfig(format!(
            "this command needs an {} model",
            if hjb { "hjb" } else { "elliptic" }
        )));
    }
    Ok(())
}

fn references(common: &Common, hjb: bool) -> Result<u8> {
    let cfg = load_config(common)?;
    require_model(&cfg, hjb)?;
    let seed = common.seed.unwrap_or(cfg.seeds[0]);
    let mut lines = String::new();
    let mut all_converged = true;
    for p in &cfg.points {
        let r = reference_constant(&cfg, seed, p)?;
        all_converged &= r.converged;
        lines += &format!(
            "{}\n",
            json!({"seed": seed, "p": point_label(p), "value": r.value, "spread": r.spread, "converged": r.converged})
        );
    }
    write_text(common.out.as_deref(), &lines)?;
    Ok(if all_converged { 0 } else { 2 })
}

fn periodized(common: &Common, hjb: bool) -> Result<u8> {
    let cfg = load_config(common)?;
    require_model(&cfg, hjb)?;
    let seed = common.seed.unwrap_or(cfg.seeds[0]);
    let mut lines = String::new();
    let mut all_converged = true;
    for &l in &cfg.l_list {
        let eta = cfg.eta.eta_for(l, cfg.dimension());
        for p in &cfg.points {
            let e = periodized_constant(&cfg, seed, l, p)?;
            all_converged &= e.converged;
            lines += &format!(
                "{}\n",
                json!({
                    "seed": seed, "L": l, "eta": eta.eta, "eta_clamped": eta.clamped, "p": point_label(p),
                    "value": e.value, "residual": e.residual, "iterations": e.iterations,
                    "lipschitz_estimate": e.lipschitz_estimate, "converged": e.converged,
                })
            );
        }
    }
    write_text(common.out.as_deref(), &lines)?;
    Ok(if all_converged { 0 } else { 2 })
}

fn study(common: &Common, resume: bool) -> Result<u8> {
    let mut cfg = load_config(common)?;
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        cfg.outputs.csv = Some(out.clone());
        cfg.outputs.json = Some(out.with_extension("json"));
    }
    if cfg.outputs.csv.is_none() && cfg.outputs.json.is_none() {
        bail!(Error::InvalidConfig(
            "study needs --out or outputs in the config".into()
        ));
    }
    let existing = match (&cfg.outputs.csv, resume) {
        (Some(p), true) if p.exists() => load_csv(p)?,
        (None, true) => bail!(Error::InvalidConfig("--resume needs a CSV output".into())),
        _ => Vec::new(),
    };
    let result = if existing.is_empty() {
        run_convergence_study(&cfg)?
    } else {
        resume_convergence_study(&cfg, existing)?
    };
    harness::write_outputs(&result)?;
    let failed = result.rows.iter().filter(|r| !r.converged).count();
    eprintln!("{} rows, {failed} not converged", result.rows.len());
    Ok(0)
}

fn rate_fit(input: &Path, out: Option<&Path>) -> Result<u8> {
    let rows = load_csv(input).with_context(|| format!("reading {}", input.display()))?;
    let mut ls: Vec<f64> = rows.iter().map(|r| r.l).collect();
    ls.sort_by(f64::total_cmp);
    ls.dedup();
    let pairs: Vec<(f64, f64)> = ls
        .iter()
        .filter_map(|&l| {
            let mut e: Vec<f64> = rows
                .iter()
                .filter(|r| r.l == l && r.converged)
                .filter_map(|r| r.abs_err)
                .collect();
            median(&mut e).map(|m| (l, m))
        })
        .collect();
    let fit = fit_rate(&pairs)?;
    let text = format!(
        "{}\n",
        json!({"pairs": pairs, "slope": fit.slope, "intercept": fit.intercept, "r_squared": fit.r_squared, "dropped": fit.dropped})
    );
    write_text(out, &text)?;
    Ok(0)
}

fn gen_env(config: &Path, seed: u64, out: &Path, nodes: usize, box_len: f64) -> Result<u8> {
    let text = std::fs::read_to_string(config)
        .map_err(Error::from)
        .with_context(|| format!("reading {}", config.display()))?;
    let spec: EnvSpec = serde_json::from_str(&text).map_err(Error::from)?;
    let env = sample_env(&spec, seed)?;
    let grid = TorusGrid::new(spec.dimension, nodes, box_len)?;
    let values = (0..grid.len())
        .map(|i| env.potential(&grid.coords(i)[..spec.dimension]))
        .collect();
    GridField::new(grid, values)?
        .save(out)
        .with_context(|| format!("writing {}", out.display()))?;
    Ok(0)
}

fn validate(out: Option<&Path>) -> Result<u8> {
    let report = run_validation();
    let mut text = String::new();
    for c in &report.checks {
        text += &format!(
            "{} {}: {}\n",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    write_text(out, &text)?;
    Ok(if report.all_pass() { 0 } else { 2 })
}

fn run(cmd: Command) -> Result<u8> {
    match cmd {
        Command::GenEnv {
            config,
            seed,
            out,
            nodes,
            box_len,
        } => gen_env(&config, seed, &out, nodes, box_len),
        Command::Hbar(c) => references(&c, true),
        Command::HbarL(c) => periodized(&c, true),
        Command::Fbar(c) => references(&c, false),
        Command::FbarL(c) => periodized(&c, false),
        Command::Study { common, resume } => study(&common, resume),
        Command::RateFit { input, out } => rate_fit(&input, out.as_deref()),
        Command::Validate { out } => validate(out.as_deref()),
    }
}
