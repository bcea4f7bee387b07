use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairsample::exec::{with_threads, Execution};
use fairsample::experiment::{self, load_run_config, ExperimentConfig, RunContext, Stage};
use fairsample::{validate, Error};

const PRESETS: [(&str, &str); 6] = [
    ("fig1", include_str!("../presets/fig1.toml")),
    ("fig2", include_str!("../presets/fig2.toml")),
    ("fig4", include_str!("../presets/fig4.toml")),
    ("fig5", include_str!("../presets/fig5.toml")),
    ("fig6", include_str!("../presets/fig6.toml")),
    ("fig7", include_str!("../presets/fig7.toml")),
];

#[derive(Parser)]
#[command(name = "fairsample", version, about = "Fair sampling of degenerate ground states with hybrid quantum-classical MCMC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (.toml or .json). Stage commands fall back to the
    /// config stored in --out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 runs sequentially, 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Recompute stages whose outputs already exist.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the oracle suite and print a pass/fail table.
    Validate(Common),
    /// Generate and enumerate the random k-SAT instance set.
    GenInstances(Common),
    /// Optimize linear QAOA schedules and derive fixed angles.
    OptimizeQaoa(Common),
    /// Train one MADE network per instance on QAOA samples.
    TrainMade(Common),
    /// Run QAOA-NMC and QAOA-HMC chains.
    RunChains(Common),
    /// Run PT-ICM and WalkSAT.
    RunBaselines(Common),
    /// Aggregate fairness and counting metrics from stored stage outputs.
    Metrics(Common),
    /// Run a whole experiment from --config.
    Run(Common),
    Fig1(Common),
    Fig2(Common),
    /// Instance sets for k = 2 and k = 3.
    Fig3(Common),
    Fig4(Common),
    Fig5(Common),
    Fig6(Common),
    Fig7(Common),
}

enum Failure {
    Validation,
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::MissingStage { .. } => Failure::Config(e.to_string()),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

fn exec_for(threads: usize) -> Execution {
    if threads == 1 {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn apply_overrides(mut cfg: ExperimentConfig, c: &Common, default_out: &str) -> (ExperimentConfig, PathBuf) {
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    let out = c
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("results").join(default_out));
    cfg.out = None;
    (cfg, out)
}

fn context(out: PathBuf, c: &Common) -> RunContext {
    RunContext {
        out,
        exec: exec_for(c.threads),
        force: c.force,
    }
}

fn preset(name: &str) -> Result<ExperimentConfig, Failure> {
    let src = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| *s)
        .expect("known preset");
    Ok(ExperimentConfig::from_toml(src)?.resolved()?)
}

fn config_from(c: &Common, fallback: Option<&str>) -> Result<ExperimentConfig, Failure> {
    if let Some(path) = &c.config {
        return Ok(ExperimentConfig::load(path)?);
    }
    if let Some(out) = &c.out {
        if out.join(experiment::CONFIG_FILE).exists() {
            return Ok(load_run_config(out)?);
        }
    }
    match fallback {
        Some(name) => preset(name),
        None => Err(Failure::Config("no config: pass --config or an --out directory from an earlier run".into())),
    }
}

fn run_validate(c: &Common) -> Result<(), Failure> {
    let seed = c.seed.unwrap_or(0);
    let report = validate::run_all(seed, exec_for(c.threads))?;
    let control = validate::corrupted_mask_control(seed)?;
    print!("{}", report.to_table());
    println!(
        "# negative control: {} -> {} (expected FAIL)",
        control.name,
        if control.passed { "PASS" } else { "FAIL" }
    );
    if let Some(out) = &c.out {
        std::fs::create_dir_all(out).map_err(Error::from)?;
        std::fs::write(out.join("validation.tsv"), report.to_table()).map_err(Error::from)?;
        std::fs::write(
            out.join("validation.json"),
            serde_json::to_string_pretty(&report).map_err(Error::from)?,
        )
        .map_err(Error::from)?;
    }
    if report.all_passed() && !control.passed {
        Ok(())
    } else {
        Err(Failure::Validation)
    }
}

fn run_stage_command(c: &Common, stage: Stage) -> Result<(), Failure> {
    let cfg = config_from(c, None)?;
    let (cfg, out) = apply_overrides(cfg, c, "ksat");
    let ctx = context(out, c);
    if experiment::run_stage(&cfg, &ctx, stage)? {
        eprintln!("{}: wrote {}", stage.command(), ctx.out.display());
    } else {
        eprintln!("{}: outputs exist in {}, skipped (use --force to recompute)", stage.command(), ctx.out.display());
    }
    Ok(())
}

fn run_experiment(c: &Common, fallback: Option<&str>, default_out: &str) -> Result<(), Failure> {
    let cfg = config_from(c, fallback)?;
    let (cfg, out) = apply_overrides(cfg, c, default_out);
    let dir = experiment::run(&cfg, &context(out, c))?;
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn run_fig3(c: &Common) -> Result<(), Failure> {
    let base = c.out.clone().unwrap_or_else(|| PathBuf::from("results/fig3"));
    let mut csv = String::new();
    // Same instance sets as fig4/fig5 (and fig6/fig7, which share their seeds).
    for (label, name) in [("k2", "fig4"), ("k3", "fig5")] {
        let cfg = preset(name)?;
        let (cfg, _) = apply_overrides(cfg, c, "fig3");
        let ctx = context(base.join(label), c);
        experiment::run_stage(&cfg, &ctx, Stage::Instances)?;
        let part = std::fs::read_to_string(ctx.out.join("instance_set.csv")).map_err(Error::from)?;
        if csv.is_empty() {
            csv.push_str(&part);
        } else {
            csv.extend(part.lines().skip(1).map(|l| format!("{l}\n")));
        }
    }
    std::fs::write(base.join("instance_set.csv"), csv).map_err(Error::from)?;
    eprintln!("wrote {}", base.display());
    Ok(())
}

fn dispatch(cmd: &Command) -> Result<(), Failure> {
    match cmd {
        Command::Validate(c) => run_validate(c),
        Command::GenInstances(c) => run_stage_command(c, Stage::Instances),
        Command::OptimizeQaoa(c) => run_stage_command(c, Stage::Schedules),
        Command::TrainMade(c) => run_stage_command(c, Stage::Nets),
        Command::RunChains(c) => run_stage_command(c, Stage::Chains),
        Command::RunBaselines(c) => run_stage_command(c, Stage::Baselines),
        Command::Metrics(c) => run_stage_command(c, Stage::Metrics),
        Command::Run(c) => run_experiment(c, None, "run"),
        Command::Fig1(c) => run_experiment(c, Some("fig1"), "fig1"),
        Command::Fig2(c) => run_experiment(c, Some("fig2"), "fig2"),
        Command::Fig3(c) => run_fig3(c),
        Command::Fig4(c) => run_experiment(c, Some("fig4"), "fig4"),
        Command::Fig5(c) => run_experiment(c, Some("fig5"), "fig5"),
        Command::Fig6(c) => run_experiment(c, Some("fig6"), "fig6"),
        Command::Fig7(c) => run_experiment(c, Some("fig7"), "fig7"),
    }
}

fn threads_of(cmd: &Command) -> usize {
    match cmd {
        Command::Validate(c)
        | Command::GenInstances(c)
        | Command::OptimizeQaoa(c)
        | Command::TrainMade(c)
        | Command::RunChains(c)
        | Command::RunBaselines(c)
        | Command::Metrics(c)
        | Command::Run(c)
        | Command::Fig1(c)
        | Command::Fig2(c)
        | Command::Fig3(c)
        | Command::Fig4(c)
        | Command::Fig5(c)
        | Command::Fig6(c)
        | Command::Fig7(c) => c.threads,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match with_threads(threads_of(&cli.command), || dispatch(&cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
