//! Command-line front end: argument parsing, subcommand dispatch, artifact
//! persistence, and the exit-code contract.
//!
//! Exit codes: `0` success (and, for `check`, feasible), `2` parameters
//! parsed cleanly but no convergence guarantee applies (infeasible), `1`
//! any error (malformed config, I/O failure, solver blow-up). Sweeps and CI
//! can branch on feasibility without parsing any output.

use std::io::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{RunConfig, SweepConfig};
use crate::error::{Error, Result};
use crate::params::{Regime, RegimeReport};
use crate::stepper::{self, MmsMode, RunSummary};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_INFEASIBLE: u8 = 2;

/// Two-species chemotaxis–competition–fluid lab.
#[derive(Debug, Parser)]
#[command(name = "kslab", version, disable_help_subcommand = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify the parameter regime and search for feasibility witnesses.
    Check(CheckArgs),
    /// Integrate the system, streaming per-sample diagnostics to CSV.
    Run(RunArgs),
    /// Predict + simulate over a parameter grid, one CSV row per point.
    Sweep(SweepArgs),
    /// Manufactured-solution spatial convergence study.
    Mms(MmsArgs),
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Run config (TOML).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Where to write `check.json` (default: the config's output directory).
    #[arg(long, value_name = "DIR", env = "KSLAB_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run config (TOML).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory (overrides the config's `output.dir`).
    #[arg(long, value_name = "DIR", env = "KSLAB_OUT")]
    pub out: Option<PathBuf>,
    /// Override the initial-perturbation seed (`init.seed`).
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Override the diagnostics sampling interval (`output.sample_dt`).
    #[arg(long, value_name = "X")]
    pub sample_dt: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Sweep config (TOML): base run config, axes, shared overrides.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Directory for `sweep.csv` and per-point outputs.
    #[arg(long, value_name = "DIR", env = "KSLAB_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads for the point runs (0 = one per core).
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub threads: usize,
    /// Override `init.seed` for every point.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct MmsArgs {
    /// Cell counts per refinement level (needs at least 3).
    #[arg(long, value_delimiter = ',', default_values_t = vec![32usize, 64, 128])]
    pub levels: Vec<usize>,
    /// Which manufactured subsystem to verify.
    #[arg(long, value_enum, default_value_t = MmsModeArg::All)]
    pub mode: MmsModeArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MmsModeArg {
    /// Constant exact solution (errors must be exactly zero).
    Constant,
    /// Diffusion + competition kinetics, chemotaxis off (second order).
    DiffusionReaction,
    /// With upwinded chemotaxis (first order).
    Chemotaxis,
    /// All of the above, one table each.
    All,
}

/// Parses `argv` and runs the chosen subcommand. Errors are printed to
/// stderr and folded into the exit code.
pub fn main_from<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version via this path with status 0.
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Check(args) => cmd_check(&args),
        Command::Run(args) => cmd_run(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Mms(args) => cmd_mms(&args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            EXIT_ERROR
        }
    }
}

/// Regime classification + witness search; prints the report and writes
/// `check.json` next to the run outputs.
pub fn cmd_check(args: &CheckArgs) -> Result<u8> {
    let mut cfg = RunConfig::from_path(&args.config)?;
    if let Some(dir) = &args.out {
        cfg.output.dir = dir.clone();
    }
    cfg.validate()?;
    let p = cfg.model_params()?;
    let report = crate::params::check_auto(&p, &cfg.search)?;
    print_report(&report);

    std::fs::create_dir_all(&cfg.output.dir).map_err(|e| Error::io(&cfg.output.dir, e))?;
    let json_path = cfg.output.dir.join("check.json");
    let json = serde_json::to_string_pretty(&report)
        .expect("regime report serializes to JSON");
    std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    println!("wrote {}", json_path.display());

    Ok(if report.feasible { EXIT_OK } else { EXIT_INFEASIBLE })
}

fn print_report(r: &RegimeReport) {
    let regime = match r.regime {
        Regime::Coexistence => "coexistence",
        Regime::Exclusion => "exclusion",
        Regime::NoGuarantee => "no-guarantee",
    };
    println!("regime: {regime}");
    println!("feasible: {}", r.feasible);
    if let Some(t) = &r.target {
        println!("target: n1 = {:.6}, n2 = {:.6}, c = {:.6}", t.n1, t.n2, t.c);
    }
    if let Some(d1) = r.delta1 {
        println!("delta1 = {d1:.6e}");
    }
    if let (Some(d1p), Some(a1p)) = (r.delta1_prime, r.a1_prime) {
        println!("delta1' = {d1p:.6e}, a1' = {a1p:.6e}");
    }
    match r.delta2_window {
        Some((lo, hi)) => println!(
            "delta2 window: ({lo:.6e}, {hi:.6e}), midpoint {:.6e}",
            0.5 * (lo + hi)
        ),
        None => println!("delta2 window: none"),
    }
    println!("margin: {:.6e}", r.margin);
    if let Some(note) = &r.note {
        println!("note: {note}");
    }
}

/// Full simulation: diagnostics CSV + final snapshot + a one-line summary.
pub fn cmd_run(args: &RunArgs) -> Result<u8> {
    let mut cfg = RunConfig::from_path(&args.config)?;
    apply_run_overrides(&mut cfg, &args.out, args.seed, args.sample_dt);
    let summary = stepper::run(&cfg)?;
    print_report(&summary.report);
    println!("{}", summary_line(&summary));
    println!("csv: {}", summary.csv_path.display());
    if let Some(stem) = &summary.snapshot_stem {
        println!("snapshot: {}", stem.display());
    }
    Ok(EXIT_OK)
}

fn apply_run_overrides(
    cfg: &mut RunConfig,
    out: &Option<PathBuf>,
    seed: Option<u64>,
    sample_dt: Option<f64>,
) {
    if let Some(dir) = out {
        cfg.output.dir = dir.clone();
    }
    if let Some(seed) = seed {
        cfg.init.seed = seed;
    }
    if let Some(sdt) = sample_dt {
        cfg.output.sample_dt = sdt;
    }
}

fn summary_line(s: &RunSummary) -> String {
    let mut line = format!(
        "summary: converged={} t_final={:.6e} steps={} wall_s={:.1}",
        s.converged, s.t_final, s.steps, s.wall_secs
    );
    if let Some(d) = &s.final_distances {
        line.push_str(&format!(
            " dist_n1={:.3e} dist_n2={:.3e} dist_c={:.3e} dist_u={:.3e}",
            d.n1, d.n2, d.c, d.u
        ));
    }
    if let Some(diss) = &s.dissipation {
        line.push_str(&format!(" energy_violations={}", diss.violations.len()));
    }
    line
}

/// One sweep row; errors stay in the row so the sweep always completes.
struct SweepRow {
    coords: Vec<f64>,
    outcome: std::result::Result<PointOutcome, String>,
}

struct PointOutcome {
    regime: Regime,
    feasible: bool,
    margin: f64,
    converged: bool,
    target: String,
    dist_max: Option<f64>,
    t_final: f64,
}

/// Regime check + short run per cartesian point; rows land in `sweep.csv`
/// in point order no matter how the worker pool schedules them.
pub fn cmd_sweep(args: &SweepArgs) -> Result<u8> {
    let sweep = SweepConfig::from_path(&args.config)?;
    let base_path = resolve_base(&args.config, &sweep.base);
    let base_text =
        std::fs::read_to_string(&base_path).map_err(|e| Error::io(&base_path, e))?;
    let base_doc: toml::Table =
        toml::from_str(&base_text).map_err(|e| Error::ConfigParse(e.to_string()))?;
    // Fail fast if the base itself is broken (points would all fail anyway).
    RunConfig::from_toml_str(&base_text)?;

    let out_dir = args.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let n = sweep.num_points();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|idx| SweepRow {
                coords: sweep.point(idx),
                outcome: sweep_point(&sweep, &base_doc, idx, &out_dir, args.seed)
                    .map_err(|e| e.to_string()),
            })
            .collect()
    });

    let csv_path = out_dir.join("sweep.csv");
    let mut f = std::io::BufWriter::new(
        std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?,
    );
    let mut header = String::from("point");
    for ax in &sweep.axes {
        header.push(',');
        header.push_str(&ax.param);
    }
    header.push_str(",regime,feasible,margin,converged,target,dist_max,t_final,error");
    writeln!(f, "{header}").map_err(|e| Error::io(&csv_path, e))?;
    for (idx, row) in rows.iter().enumerate() {
        writeln!(f, "{}", sweep_csv_row(idx, row)).map_err(|e| Error::io(&csv_path, e))?;
    }
    f.flush().map_err(|e| Error::io(&csv_path, e))?;
    println!("wrote {} ({n} points)", csv_path.display());
    Ok(EXIT_OK)
}

/// `sweep.base` is relative to the sweep file's directory.
fn resolve_base(sweep_path: &std::path::Path, base: &std::path::Path) -> PathBuf {
    if base.is_absolute() {
        base.to_path_buf()
    } else {
        sweep_path.parent().unwrap_or_else(|| std::path::Path::new(".")).join(base)
    }
}

fn sweep_point(
    sweep: &SweepConfig,
    base_doc: &toml::Table,
    idx: usize,
    out_dir: &std::path::Path,
    seed: Option<u64>,
) -> Result<PointOutcome> {
    let mut cfg = sweep.run_config_at(base_doc, idx)?;
    cfg.output.dir = out_dir.join(format!("point-{idx:04}"));
    if let Some(seed) = seed {
        cfg.init.seed = seed;
    }
    let p = cfg.model_params()?;
    let report = crate::params::check_auto(&p, &cfg.search)?;
    let summary = stepper::run(&cfg)?;
    Ok(PointOutcome {
        regime: report.regime,
        feasible: report.feasible,
        margin: report.margin,
        converged: summary.converged,
        target: match &summary.target {
            Some(t) => format!("({:.4};{:.4};{:.4})", t.n1, t.n2, t.c),
            None => "none".into(),
        },
        dist_max: summary.final_distances.as_ref().map(|d| d.max_scalar().max(d.u)),
        t_final: summary.t_final,
    })
}

fn sweep_csv_row(idx: usize, row: &SweepRow) -> String {
    let mut s = format!("{idx}");
    for v in &row.coords {
        s.push_str(&format!(",{v:.16e}"));
    }
    match &row.outcome {
        Ok(o) => {
            let regime = match o.regime {
                Regime::Coexistence => "coexistence",
                Regime::Exclusion => "exclusion",
                Regime::NoGuarantee => "no-guarantee",
            };
            s.push_str(&format!(
                ",{},{},{:.16e},{},{},{},{:.16e},",
                regime,
                o.feasible,
                o.margin,
                o.converged,
                o.target,
                o.dist_max.map_or(String::new(), |d| format!("{d:.16e}")),
                o.t_final,
            ));
        }
        Err(msg) => {
            // Quote the message so commas/quotes inside stay one CSV field.
            s.push_str(&format!(",,,,,,,,\"{}\"", msg.replace('"', "\"\"")));
        }
    }
    s
}

/// Spatial-order verification against manufactured solutions.
pub fn cmd_mms(args: &MmsArgs) -> Result<u8> {
    let modes: &[MmsMode] = match args.mode {
        MmsModeArg::Constant => &[MmsMode::Constant],
        MmsModeArg::DiffusionReaction => &[MmsMode::DiffusionReaction],
        MmsModeArg::Chemotaxis => &[MmsMode::Chemotaxis],
        MmsModeArg::All => {
            &[MmsMode::Constant, MmsMode::DiffusionReaction, MmsMode::Chemotaxis]
        }
    };
    for mode in modes {
        let report = stepper::mms_study(&args.levels, *mode)?;
        let name = match report.mode {
            MmsMode::Constant => "constant",
            MmsMode::DiffusionReaction => "diffusion-reaction",
            MmsMode::Chemotaxis => "chemotaxis",
        };
        println!("mode: {name}");
        println!("{:>6} {:>13} {:>13} {:>13}", "n", "err_n1", "err_n2", "err_c");
        for lv in &report.levels {
            println!(
                "{:>6} {:>13.4e} {:>13.4e} {:>13.4e}",
                lv.n, lv.err_n1, lv.err_n2, lv.err_c
            );
        }
        let fmt = |orders: &[f64]| {
            orders.iter().map(|o| format!("{o:.2}")).collect::<Vec<_>>().join(", ")
        };
        println!(
            "orders: n1 = [{}], n2 = [{}], c = [{}]",
            fmt(&report.orders_n1),
            fmt(&report.orders_n2),
            fmt(&report.orders_c)
        );
    }
    Ok(EXIT_OK)
}
