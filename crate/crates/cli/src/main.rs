use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde_json::json;

use vpcollapse::born::run_ensemble;
use vpcollapse::checks::{run_suite, SUITES};
use vpcollapse::config::{to_toml, EnsembleConfig, ScenarioConfig};
use vpcollapse::expectations::{delta_p2, delta_x2, TwoPointOptions};
use vpcollapse::kernels::KernelChoice;
use vpcollapse::output::{self, RunManifest};
use vpcollapse::solver::{calibrate_epsilon, collapse_metrics, initialize_field, minimize_action};
use vpcollapse::weight::WeightTable;

#[derive(Parser)]
#[command(
    name = "vpcollapse",
    version,
    about = "Variational Dirac-field collapse simulator"
)]
struct Cli {
    /// Overrides the seed in the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Two-point kernel for the spread diagnostics: step, invdist or covariant.
    #[arg(long, global = true, value_parser = parse_kernel)]
    kernel: Option<KernelChoice>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize the action for a scenario and write the trajectory and diagnostics.
    Simulate { scenario: PathBuf },
    /// Run a hidden-variable ensemble and compare outcome frequencies with the initial weights.
    Born { config: PathBuf },
    /// Run a verification suite.
    Check { suite: String },
    /// Sweep epsilon over the scenario's calibration range.
    CalibrateEpsilon { scenario: PathBuf },
}

fn parse_kernel(s: &str) -> Result<KernelChoice, String> {
    KernelChoice::parse(s)
        .ok_or_else(|| format!("unknown kernel {s:?}; expected step, invdist or covariant"))
}

/// Failures attributable to the input (exit 2) versus the run (exit 1).
enum Failure {
    Input(anyhow::Error),
    Run(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Run(e.into())
    }
}

trait InputContext<T> {
    fn input(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> InputContext<T> for Result<T, E> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Input(e.into()))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Simulate { scenario } => simulate(&cli, scenario),
        Command::Born { config } => born(&cli, config),
        Command::Check { suite } => check(&cli, suite),
        Command::CalibrateEpsilon { scenario } => calibrate(&cli, scenario),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn threads(cli: &Cli) -> usize {
    cli.threads.unwrap_or_else(rayon::current_num_threads)
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .input()
}

fn load_scenario(cli: &Cli, path: &Path) -> Result<(ScenarioConfig, String), Failure> {
    let mut cfg = ScenarioConfig::parse(&read(path)?)
        .with_context(|| format!("in {}", path.display()))
        .input()?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(k) = cli.kernel {
        cfg.kernel = k;
    }
    let normalized = to_toml(&cfg).input()?;
    Ok((cfg, normalized))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn prepare_out_dir(cli: &Cli) -> Result<&Path, Failure> {
    fs::create_dir_all(&cli.out_dir)
        .with_context(|| format!("creating {}", cli.out_dir.display()))
        .input()?;
    Ok(&cli.out_dir)
}

fn finish_manifest(dir: &Path, manifest: &mut RunManifest) -> Result<(), Failure> {
    manifest.finish();
    let mut v = serde_json::to_value(&*manifest)?;
    v["id"] = json!(manifest.id());
    write_json(dir, "manifest.json", &v)
}

fn simulate(cli: &Cli, path: &Path) -> Result<ExitCode, Failure> {
    let (cfg, normalized) = load_scenario(cli, path)?;
    let built = cfg.build().input()?;
    let dir = prepare_out_dir(cli)?;
    let sc = &built.scenario;
    let mut manifest = RunManifest::new("simulate", &normalized, cfg.seed, threads(cli));
    manifest.discretization = Some(discretization(&cfg));
    manifest.kernel = Some(cfg.kernel.name().to_string());
    manifest.epsilon = Some(cfg.epsilon);
    let id = manifest.id();

    let (field0, prop) = initialize_field(sc)?;
    if prop.substeps > 1 {
        manifest.notes.push(format!(
            "initial propagation used {} substeps per slice",
            prop.substeps
        ));
    }
    let action = sc.build_action(&mut WeightTable::new())?;
    let out = minimize_action(&field0, sc, &action)?;
    let diag = collapse_metrics(
        &out.field,
        &built.basis,
        sc.dominance_threshold,
        Some(&out.final_report),
    )?;
    if !diag.reliable {
        manifest.notes.push(format!(
            "completeness residual {:e} exceeds the reliability limit",
            diag.max_residual
        ));
    }
    let opts = TwoPointOptions {
        kernel: cfg.kernel,
        seed: cfg.seed,
        ..Default::default()
    };
    let spread = |r: vpcollapse::Result<vpcollapse::expectations::Estimate>| match r {
        Ok(e) => json!({ "value": e.value, "stderr": e.stderr }),
        Err(e) => json!({ "error": e.to_string() }),
    };

    output::write_field(create(dir, "trajectory.spnf")?, &id, &out.field)?;
    output::write_diagnostics_csv(create(dir, "diagnostics.csv")?, &id, &sc.grid, &diag)?;
    output::write_iterations_jsonl(create(dir, "iterations.jsonl")?, &id, &out.log)?;
    let last = diag.populations.len() - 1;
    write_json(
        dir,
        "summary.json",
        &json!({
            "run": id,
            "status": format!("{:?}", out.status),
            "iterations": out.log.len(),
            "initial_action": out.initial,
            "final_action": out.final_report,
            "mode_ids": diag.mode_ids,
            "initial_populations": diag.populations[0],
            "final_populations": diag.populations[last],
            "final_total": diag.totals[last],
            "winner": diag.winner,
            "dominance_time": diag.dominance_time,
            "max_residual": diag.max_residual,
            "reliable": diag.reliable,
            "delta_x2": spread(delta_x2(&out.field, &opts)),
            "delta_p2": spread(delta_p2(&out.field, &sc.potential, &opts)),
        }),
    )?;
    finish_manifest(dir, &mut manifest)?;
    let mut order: Vec<usize> = (0..diag.mode_ids.len()).collect();
    order.sort_by(|&a, &b| diag.populations[last][b].total_cmp(&diag.populations[last][a]));
    println!(
        "{:?} after {} iterations: A = {:.6e} (a1 {:.6e}, a2 {:.6e})",
        out.status,
        out.log.len(),
        out.final_report.total,
        out.final_report.a1,
        out.final_report.a2
    );
    for &j in order.iter().take(3) {
        println!(
            "  mode {:>4}: final population {:.6}",
            diag.mode_ids[j], diag.populations[last][j]
        );
    }
    println!(
        "  final total {:.6}, winner {:?}",
        diag.totals[last], diag.winner
    );
    Ok(ExitCode::SUCCESS)
}

fn discretization(cfg: &ScenarioConfig) -> String {
    let g = &cfg.grid;
    format!(
        "1+1D lattice n_t={} n_x={} dt={} dx={}; centered differences, one-sided time ends, {:?} space",
        g.n_t, g.n_x, g.dt, g.dx, g.spatial_boundary
    )
}

fn born(cli: &Cli, path: &Path) -> Result<ExitCode, Failure> {
    let mut cfg = EnsembleConfig::parse(&read(path)?)
        .with_context(|| format!("in {}", path.display()))
        .input()?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let sys = cfg.system().input()?;
    let normalized = to_toml(&cfg).input()?;
    let dir = prepare_out_dir(cli)?;
    let mut manifest = RunManifest::new("born", &normalized, cfg.seed, threads(cli));
    manifest.discretization = Some(format!("Gauss-Legendre-4 panels dt={}", cfg.dt));
    let id = manifest.id();

    let r = run_ensemble(&sys, &cfg.options())?;
    output::write_ensemble_csv(create(dir, "ensemble.csv")?, &id, &r)?;
    write_json(
        dir,
        "summary.json",
        &json!({
            "run": id,
            "samples": r.samples.len(),
            "window": r.window,
            "initial_weights": r.initial_weights,
            "frequencies": r.frequencies,
            "frequency_stderr": r.frequency_stderr,
            "winner_frequencies": r.winner_frequencies,
            "winner_intervals": r.winner_intervals,
            "ties": r.ties,
        }),
    )?;
    finish_manifest(dir, &mut manifest)?;
    println!("{:>6} {:>12} {:>12} {:>12}", "group", "Y", "F", "stderr");
    for (j, (y, f)) in r.initial_weights.iter().zip(&r.frequencies).enumerate() {
        println!(
            "{j:>6} {y:>12.6} {f:>12.6} {:>12.2e}",
            r.frequency_stderr[j]
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn check(cli: &Cli, suite: &str) -> Result<ExitCode, Failure> {
    if !SUITES.contains(&suite) {
        return Err(Failure::Input(anyhow::anyhow!(
            "unknown suite {suite:?}; available suites: {}",
            SUITES.join(", ")
        )));
    }
    let report = run_suite(suite, cli.seed.unwrap_or(0))?;
    print!("{}", report.table());
    Ok(if report.passed() {
        println!("{suite}: pass");
        ExitCode::SUCCESS
    } else {
        println!("{suite}: FAIL");
        ExitCode::from(1)
    })
}

fn calibrate(cli: &Cli, path: &Path) -> Result<ExitCode, Failure> {
    let (cfg, normalized) = load_scenario(cli, path)?;
    let epsilons = cfg.calibration.values().input()?;
    let built = cfg.build().input()?;
    let dir = prepare_out_dir(cli)?;
    let mut manifest = RunManifest::new("calibrate-epsilon", &normalized, cfg.seed, threads(cli));
    manifest.discretization = Some(discretization(&cfg));
    let id = manifest.id();

    let cal = calibrate_epsilon(
        &built.scenario,
        &built.basis,
        &epsilons,
        &mut WeightTable::new(),
    )?;
    output::write_calibration_csv(create(dir, "calibration.csv")?, &id, &cal.rows)?;
    write_json(
        dir,
        "summary.json",
        &json!({ "run": id, "chosen": cal.chosen, "rows": cal.rows }),
    )?;
    manifest.epsilon = Some(cal.chosen);
    finish_manifest(dir, &mut manifest)?;
    println!(
        "{:>12} {:>10} {:>10} {:>10}",
        "epsilon", "max pop", "dominance", "norm dev"
    );
    for r in &cal.rows {
        println!(
            "{:>12.4e} {:>10.4} {:>10.4} {:>10.4}",
            r.epsilon, r.max_population, r.dominance, r.norm_deviation
        );
    }
    println!("chosen epsilon = {}", cal.chosen);
    Ok(ExitCode::SUCCESS)
}
