//! Command-line surface: scenario generation, simulation with CSV/SVG
//! artifacts, and closed-form verification against paired Monte Carlo.
//!
//! Exit codes: 0 success, 1 verification found no passing variant, 2
//! usage/config error, 3 runtime error, 4 conditioning infeasible, 5
//! refusing to overwrite.

use outformation_cli::svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use outformation::engine::{run_simulation, RunInput, SimulationTrace};
use outformation::environment::sample_path;
use outformation::experiments::{
    par_map_reps, preset, verify_theorem, TheoremId, VerifyError,
};
use outformation::io::{events_csv, metrics_csv, theory_csv, verification_json};
use outformation::model::{ArchitectureKind, Scenario};
use outformation::rng::Streams;

#[derive(Parser)]
#[command(name = "outformation", version, about = "Two-sensor IN/OUT architecture simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit a preset scenario as a JSON config file.
    Scenario(ScenarioArgs),
    /// Simulate architectures over replicated sample paths.
    Simulate(SimulateArgs),
    /// Verify a closed-form result against paired Monte Carlo runs.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// setup1 | setup2 | fig_event | fig_time | sweep
    #[arg(long)]
    preset: String,
    /// Output file.
    #[arg(long)]
    emit: PathBuf,
    /// Overwrite an existing output file.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON file (see `scenario`).
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated list: in0,in_eps,out_eps.
    #[arg(long)]
    arch: String,
    /// Root seed; overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of replications.
    #[arg(long, default_value_t = 1)]
    reps: u64,
    /// Output directory for events.csv and metrics.csv.
    #[arg(long)]
    out: PathBuf,
    /// Also render timeline_<arch>.svg for replication 0.
    #[arg(long)]
    svg: bool,
    /// Also write path_<rep>.csv change records.
    #[arg(long)]
    paths: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// power_unshared | mse_unshared | power_shared | mse_shared | mse_shared_gen
    #[arg(long)]
    theorem: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    reps: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Scenario(args) => cmd_scenario(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Verify(args) => cmd_verify(&args),
    };
    ExitCode::from(code)
}

fn cmd_scenario(args: &ScenarioArgs) -> u8 {
    let scn = match preset(&args.preset) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if args.emit.exists() && !args.force {
        eprintln!("refusing to overwrite {} (pass --force)", args.emit.display());
        return 5;
    }
    match fs::write(&args.emit, scn.to_json() + "\n") {
        Ok(()) => {
            println!("wrote {}", args.emit.display());
            0
        }
        Err(e) => {
            eprintln!("error: cannot write {}: {e}", args.emit.display());
            3
        }
    }
}

fn load_scenario(path: &Path) -> Result<Scenario, u8> {
    let text = fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        2u8
    })?;
    let scn = Scenario::from_json(&text).map_err(|e| {
        // serde_json reports line and column of the failure.
        eprintln!("error: {} is not a valid scenario: {e}", path.display());
        2u8
    })?;
    scn.validate().map_err(|e| {
        eprintln!("configuration invalid:");
        for v in &e.0 {
            eprintln!("  - {v}");
        }
        2u8
    })?;
    Ok(scn)
}

fn parse_archs(list: &str) -> Result<Vec<ArchitectureKind>, u8> {
    let mut archs = Vec::new();
    for part in list.split(',') {
        match part.trim().parse::<ArchitectureKind>() {
            Ok(a) => archs.push(a),
            Err(e) => {
                eprintln!("error: {e}");
                return Err(2);
            }
        }
    }
    if archs.is_empty() {
        eprintln!("error: --arch needs at least one architecture");
        return Err(2);
    }
    Ok(archs)
}

fn cmd_simulate(args: &SimulateArgs) -> u8 {
    let mut scn = match load_scenario(&args.config) {
        Ok(s) => s,
        Err(code) => return code,
    };
    if let Some(seed) = args.seed {
        scn.config.seed = seed;
    }
    let archs = match parse_archs(&args.arch) {
        Ok(a) => a,
        Err(code) => return code,
    };
    if let Err(e) = fs::create_dir_all(&args.out) {
        eprintln!("error: cannot create {}: {e}", args.out.display());
        return 3;
    }

    type RepOutput = (u64, Vec<(ArchitectureKind, SimulationTrace, outformation::MetricsReport)>);
    let runs: Vec<RepOutput> = {
        let scn = &scn;
        let archs = &archs;
        par_map_reps(args.reps, move |rep| {
            let streams = Streams::new(scn.config.seed, rep);
            let path = sample_path(&scn.config, &streams);
            let input = RunInput::from_path(&path, scn.config.t_sim);
            let per_arch = archs
                .iter()
                .map(|&arch| {
                    let (trace, report) =
                        run_simulation(scn, arch, &input, rep).expect("simulation");
                    (arch, trace, report)
                })
                .collect();
            (rep, per_arch)
        })
    };

    let mut event_rows = Vec::new();
    let mut metric_rows = Vec::new();
    for (rep, per_arch) in &runs {
        for (arch, trace, report) in per_arch {
            event_rows.push((*rep, *arch, trace));
            metric_rows.push((*rep, *arch, report.clone()));
        }
    }
    let ok = write_file(&args.out.join("events.csv"), &events_csv(&event_rows))
        && write_file(&args.out.join("metrics.csv"), &metrics_csv(&metric_rows, scn.config.n));
    if !ok {
        return 3;
    }

    if args.paths {
        for (rep, _) in &runs {
            let streams = Streams::new(scn.config.seed, *rep);
            let path = sample_path(&scn.config, &streams);
            if !write_file(&args.out.join(format!("path_{rep}.csv")), &path.to_csv()) {
                return 3;
            }
        }
    }

    if args.svg {
        if let Some((_, per_arch)) = runs.first() {
            for (arch, trace, _) in per_arch {
                let spec = svg::TimelinePlotSpec {
                    trace,
                    config: &scn.config,
                    title: format!("{arch} communications"),
                    axis: None,
                };
                match svg::render_timeline_svg(&spec) {
                    Ok(doc) => {
                        if !write_file(&args.out.join(format!("timeline_{arch}.svg")), &doc) {
                            return 3;
                        }
                    }
                    Err(e) => {
                        eprintln!("error: {e}");
                        return 3;
                    }
                }
            }
        }
    }

    println!(
        "simulated {} replication(s) x {} architecture(s) -> {}",
        args.reps,
        archs.len(),
        args.out.display()
    );
    0
}

fn cmd_verify(args: &VerifyArgs) -> u8 {
    let theorem: TheoremId = match args.theorem.parse() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let scn = match load_scenario(&args.config) {
        Ok(s) => s,
        Err(code) => return code,
    };
    if let Err(e) = fs::create_dir_all(&args.out) {
        eprintln!("error: cannot create {}: {e}", args.out.display());
        return 3;
    }
    let report = match verify_theorem(theorem, &scn, args.reps) {
        Ok(r) => r,
        Err(VerifyError::Conditioning(e)) => {
            eprintln!("error: {e}");
            return 4;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return 3;
        }
    };

    let ok = write_file(
        &args.out.join(format!("verify_{}.json", theorem.name())),
        &verification_json(&report),
    ) && write_file(&args.out.join("theory.csv"), &theory_csv(&report.verdicts));
    if !ok {
        return 3;
    }

    println!("theorem {} (config {}, N = {})", report.theorem, report.config_digest, report.n);
    println!("{:<42} {:<17} {:>14} {:>14} {:>12}  verdict", "formula", "variant", "closed", "mc", "stderr");
    for v in &report.verdicts {
        println!(
            "{:<42} {:<17} {:>14.8} {:>14.8} {:>12.3e}  {}",
            v.formula_id,
            v.variant,
            v.closed_form,
            v.mc_estimate,
            v.mc_stderr,
            v.verdict()
        );
    }
    for note in &report.notes {
        println!("note: {note}");
    }
    if report.any_pass() {
        0
    } else {
        1
    }
}

fn write_file(path: &Path, contents: &str) -> bool {
    match fs::write(path, contents) {
        Ok(()) => true,
        Err(e) => {
            eprintln!("error: cannot write {}: {e}", path.display());
            false
        }
    }
}
