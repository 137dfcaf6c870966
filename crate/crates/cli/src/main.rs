//! Command-line front end: scenario runner, background/metric builders,
//! field evolution, Fock-state exports, the velocity-field figure and the
//! config validator.
//!
//! Exit codes: 0 success, 1 validation failure, 2 numerical failure (with a
//! `diagnostics.txt` in the output directory).  Every invocation prints one
//! machine-readable line `RESULT <subcommand> <pass|fail> <elapsed_ms>` on
//! standard output.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use acsim_core::background::{temperature_bound, validate_assumptions, ValidityOptions};
use acsim_core::metric::{build_f_tensor, build_metric};
use acsim_core::scenarios::{self, build_background, Config};
use acsim_core::states::{
    even_coherent, expectation, occupation_report, two_mode_superposition, Observable,
};
use acsim_core::{io, Cplx, CoreError};

#[derive(Parser)]
#[command(
    name = "acsim",
    about = "Bose-gas backgrounds, acoustic metrics and sine-Gordon dynamics on analogue spacetimes",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named scenario from a config file
    Run(CommonArgs),
    /// Build a background family and serialize its bundle
    Background(CommonArgs),
    /// Build the acoustic metric of a configured background
    Metric(CommonArgs),
    /// Integrate a field-evolution scenario (kink, dispersion, planes)
    Evolve(CommonArgs),
    /// Build engineered Fock states and export amplitudes and reports
    Fock(CommonArgs),
    /// Render the vortex-superposition velocity figure
    Figure1(CommonArgs),
    /// Validate a config and run the background assumption suite
    Validate(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file (flat `section.key = value` lines)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; must be new or empty unless --force
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a config entry (repeatable): section.key=value
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Override the scenario seed
    #[arg(long)]
    seed: Option<u64>,
    /// Write into a non-empty output directory
    #[arg(long)]
    force: bool,
    /// Print progress details
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn main() {
    let cli = Cli::parse();
    let started = Instant::now();
    let (name, result) = match &cli.command {
        Command::Run(a) => ("run", dispatch(a, "run")),
        Command::Background(a) => ("background", dispatch(a, "background")),
        Command::Metric(a) => ("metric", dispatch(a, "metric")),
        Command::Evolve(a) => ("evolve", dispatch(a, "evolve")),
        Command::Fock(a) => ("fock", dispatch(a, "fock")),
        Command::Figure1(a) => ("figure1", dispatch(a, "figure1")),
        Command::Validate(a) => ("validate", dispatch(a, "validate")),
    };
    let elapsed_ms = started.elapsed().as_millis();
    let code = match result {
        Ok(()) => {
            println!("RESULT {name} pass {elapsed_ms}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            println!("RESULT {name} fail {elapsed_ms}");
            exit_code(&e)
        }
    };
    std::process::exit(code);
}

fn exit_code(e: &CoreError) -> i32 {
    match e {
        CoreError::NoConvergence { .. }
        | CoreError::BlowUp { .. }
        | CoreError::CflViolation { .. }
        | CoreError::NonFiniteAction => 2,
        CoreError::Config(msg) if msg.starts_with("scenario checks failed") => 2,
        _ => 1,
    }
}

fn load_config(args: &CommonArgs) -> Result<Config, CoreError> {
    let mut cfg = match &args.config {
        Some(path) => Config::from_file(path)?,
        None => Config::default(),
    };
    for pair in &args.set {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            CoreError::Config(format!("--set expects key=value, got `{pair}`"))
        })?;
        cfg.set(key.trim(), value.trim());
    }
    if let Some(seed) = args.seed {
        cfg.set("scenario.seed", &seed.to_string());
    }
    Ok(cfg)
}

/// Output directory: `--out`, else `$ACSIM_OUT/<subcommand>`, else
/// `acsim-out/<subcommand>`.  Must be fresh or empty unless `--force`.
fn prepare_out(args: &CommonArgs, subcommand: &str) -> Result<PathBuf, CoreError> {
    let out = match &args.out {
        Some(p) => p.clone(),
        None => {
            let root = std::env::var("ACSIM_OUT").unwrap_or_else(|_| "acsim-out".to_string());
            Path::new(&root).join(subcommand)
        }
    };
    if out.exists() && !args.force {
        let occupied = std::fs::read_dir(&out)
            .map(|mut d| d.next().is_some())
            .unwrap_or(false);
        if occupied {
            return Err(CoreError::Config(format!(
                "output directory `{}` is not empty (use --force)",
                out.display()
            )));
        }
    }
    std::fs::create_dir_all(&out)?;
    Ok(out)
}

fn dispatch(args: &CommonArgs, subcommand: &str) -> Result<(), CoreError> {
    let cfg = load_config(args)?;
    let out = prepare_out(args, subcommand)?;
    match subcommand {
        "run" | "evolve" => run_scenario(&cfg, &out, args.verbose),
        "background" => run_background(&cfg, &out),
        "metric" => run_metric(&cfg, &out),
        "fock" => run_fock(&cfg, &out),
        "figure1" => run_figure(&cfg, &out, args.verbose),
        "validate" => run_validate(&cfg, &out),
        _ => unreachable!(),
    }
}

fn run_scenario(cfg: &Config, out: &Path, verbose: u8) -> Result<(), CoreError> {
    let outcome = match scenarios::run(cfg, out) {
        Ok(o) => o,
        Err(e) => {
            // numerical failures leave a diagnostics file beside the partial bundle
            if exit_code(&e) == 2 {
                let _ = std::fs::write(
                    out.join("diagnostics.txt"),
                    format!("scenario failed: {e}\n"),
                );
            }
            return Err(e);
        }
    };
    if verbose > 0 {
        for (k, v) in &outcome.details {
            eprintln!("{k} = {v}");
        }
    }
    if !outcome.passed {
        let mut text = String::from("scenario checks failed:\n");
        for (k, v) in &outcome.details {
            text.push_str(&format!("{k} = {v}\n"));
        }
        std::fs::write(out.join("diagnostics.txt"), text)?;
        return Err(CoreError::Config(format!(
            "scenario checks failed for `{}` (see diagnostics.txt)",
            outcome.name
        )));
    }
    Ok(())
}

fn run_background(cfg: &Config, out: &Path) -> Result<(), CoreError> {
    let bg = build_background(cfg)?;
    let family = cfg.require("background.family")?.to_string();
    bg.write_bundle(out, &[("family".to_string(), family)])?;
    let report = validate_assumptions(&bg, &ValidityOptions::default())?;
    io::write_csv(
        &out.join("assumptions.csv"),
        "check,residual,tolerance,pass",
        &report.csv_rows(),
    )?;
    Ok(())
}

fn run_metric(cfg: &Config, out: &Path) -> Result<(), CoreError> {
    let bg = build_background(cfg)?;
    let f = build_f_tensor(&bg)?;
    for (mu, nu, field) in f.component_fields() {
        io::write_grid_dump(&out.join(format!("f_{mu}{nu}.dump")), &field)?;
    }
    if bg.grid.spatial_dims() >= 2 {
        let metric = build_metric(&bg)?;
        for (mu, nu, field) in metric.contravariant.component_fields() {
            io::write_grid_dump(&out.join(format!("g_contra_{mu}{nu}.dump")), &field)?;
        }
        for (mu, nu, field) in metric.covariant.component_fields() {
            io::write_grid_dump(&out.join(format!("g_cov_{mu}{nu}.dump")), &field)?;
        }
        io::write_grid_dump(&out.join("sqrt_neg_g.dump"), &metric.sqrt_neg_g)?;
        io::write_manifest(
            &out.join("residuals.txt"),
            &[
                (
                    "max_inverse_residual".to_string(),
                    format!("{:e}", metric.max_inverse_residual()),
                ),
                (
                    "max_defining_residual".to_string(),
                    format!("{:e}", metric.max_defining_residual(&f)),
                ),
            ],
        )?;
    }
    Ok(())
}

fn run_fock(cfg: &Config, out: &Path) -> Result<(), CoreError> {
    let alpha = Cplx::new(cfg.f64_or("fock.alpha", 1.0)?, 0.0);
    let cutoff = cfg.usize_or("fock.cutoff", 60)?;
    let cat = even_coherent(alpha, cutoff)?;
    io::write_csv(
        &out.join("cat_amplitudes.csv"),
        "j0,j1,re,im",
        &cat.amplitude_rows(),
    )?;
    let mut pairs = vec![
        ("alpha".to_string(), alpha.re.to_string()),
        ("cutoff".to_string(), cutoff.to_string()),
        (
            "a0_expectation".to_string(),
            format!("{}", expectation(&cat, Observable::A0)?.re),
        ),
        (
            "a0sq_eigen_residual".to_string(),
            format!("{:e}", cat.a0_sq_eigen_residual()),
        ),
    ];
    for line in occupation_report(alpha, cutoff)?.lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            pairs.push((k.to_string(), v.to_string()));
        }
    }
    if let Some(_) = cfg.get("fock.w") {
        let w = Cplx::new(cfg.f64_value("fock.w")?, 0.0);
        let pair_state = two_mode_superposition(alpha, w, cutoff)?;
        io::write_csv(
            &out.join("two_mode_amplitudes.csv"),
            "j0,j1,re,im",
            &pair_state.amplitude_rows(),
        )?;
        pairs.push(("w".to_string(), w.re.to_string()));
    }
    io::write_manifest(&out.join("report.txt"), &pairs)?;
    Ok(())
}

fn run_figure(cfg: &Config, out: &Path, verbose: u8) -> Result<(), CoreError> {
    let mut cfg = cfg.clone();
    if cfg.get("scenario.name").is_none() {
        cfg.set("scenario.name", "figure1");
    }
    for (key, default) in [
        ("grid.n", "161,161"),
        ("grid.dx", "0.05,0.05"),
        ("grid.bc", "f,f"),
        ("figure.w", "1.0"),
    ] {
        if cfg.get(key).is_none() {
            cfg.set(key, default);
        }
    }
    run_scenario(&cfg, out, verbose)
}

fn run_validate(cfg: &Config, out: &Path) -> Result<(), CoreError> {
    // a config must name a scenario and satisfy its key schema
    cfg.require("scenario.name")?;
    scenarios::validate_config(cfg)?;
    // when the config defines a background, run the assumption suite on it
    if cfg.get("background.family").is_some() {
        let bg = build_background(cfg)?;
        let report = validate_assumptions(&bg, &ValidityOptions::default())?;
        io::write_csv(
            &out.join("assumptions.csv"),
            "check,residual,tolerance,pass",
            &report.csv_rows(),
        )?;
        let tb = temperature_bound(&bg, cfg.f64_or("validate.kbt", 0.0)?, 0.1);
        io::write_manifest(
            &out.join("temperature.txt"),
            &[
                ("kbt_ratio".to_string(), tb.ratio.to_string()),
                ("valid".to_string(), tb.valid.to_string()),
            ],
        )?;
    }
    Ok(())
}
