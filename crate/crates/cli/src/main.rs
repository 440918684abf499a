//! Command-line driver: plan, simulate and evaluate cooperative transport
//! scenarios.
//!
//! Exit status: 0 when the run passes, 1 when the task fails, 2 for usage or
//! configuration errors and 3 for internal errors.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use coopmanip::pipeline::{self, ArtifactMeta, Overrides, PipelineError};
use coopmanip::scenario::{load_scenario, Scenario, Team};
use coopmanip::sim::RunMetrics;

#[derive(Parser)]
#[command(
    name = "coopmanip",
    version,
    about = "Cooperative object transport by mobile manipulators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan waypoints, the smoothed object trajectory and base footprints.
    Plan(Common),
    /// Simulate the closed loop along a previously written plan.
    Simulate(Common),
    /// Evaluate a previously written simulation log.
    Evaluate(Common),
    /// Plan, simulate and evaluate.
    Pipeline(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Artifact directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the IK iteration budget.
    #[arg(long = "ik-budget")]
    ik_budget: Option<usize>,
    /// Override the control and IK rates, as `CONTROL_HZ,IK_HZ`.
    #[arg(long, value_parser = parse_rates)]
    rates: Option<(f64, f64)>,
}

fn parse_rates(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected CONTROL_HZ,IK_HZ")?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

struct Context {
    scenario: Scenario,
    team: Team,
    meta: ArtifactMeta,
    out: PathBuf,
}

fn load(c: &Common) -> Result<Context, PipelineError> {
    let (mut scenario, hash) = load_scenario(&c.scenario)?;
    Overrides {
        seed: c.seed,
        ik_budget: c.ik_budget,
        rates: c.rates,
    }
    .apply(&mut scenario)?;
    let team = scenario.build_team()?;
    let meta = ArtifactMeta::new(&scenario, &hash);
    Ok(Context {
        scenario,
        team,
        meta,
        out: c.out.clone(),
    })
}

fn note(stage: &str, start: Instant, msg: impl AsRef<str>) {
    eprintln!("[{stage}] {} ({:.1} s)", msg.as_ref(), start.elapsed().as_secs_f64());
}

fn run_plan(cx: &Context) -> Result<(), PipelineError> {
    let t = Instant::now();
    let plan = pipeline::plan(&cx.scenario, &cx.team)?;
    pipeline::write_plan(&cx.out, &cx.meta, &plan)?;
    note(
        "plan",
        t,
        format!(
            "{} knots, {} footprint steps, objective {:.4e}",
            plan.waypoints.len(),
            plan.footprint.steps(),
            plan.footprint.objective
        ),
    );
    Ok(())
}

fn run_simulate(cx: &Context) -> Result<(), PipelineError> {
    let t = Instant::now();
    let (trajectory, footprint) = pipeline::read_plan(&cx.out, &cx.meta)?;
    let log = pipeline::simulate(&cx.scenario, &cx.team, &trajectory, &footprint)?;
    for w in &log.warnings {
        eprintln!("[simulate] warning: {w}");
    }
    pipeline::write_log(&cx.out, &cx.meta, &log)?;
    note(
        "simulate",
        t,
        format!("{} logged rows over {:.1} s", log.rows.len(), log.duration()),
    );
    Ok(())
}

fn run_evaluate(cx: &Context) -> Result<RunMetrics, PipelineError> {
    let log = pipeline::read_log(&cx.out, &cx.meta)?;
    let metrics = pipeline::evaluate(&cx.scenario, &cx.team, &log)?;
    pipeline::write_metrics(&cx.out, &cx.meta, &metrics)?;
    for c in &metrics.checks {
        println!(
            "{:<16} {}  {}",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.detail
        );
    }
    println!("verdict          {}", if metrics.passed { "PASS" } else { "FAIL" });
    Ok(metrics)
}

fn verdict(m: &RunMetrics) -> ExitCode {
    if m.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn execute(command: &Command) -> Result<ExitCode, (String, PipelineError)> {
    let (stage, common) = match command {
        Command::Plan(c) => ("plan", c),
        Command::Simulate(c) => ("simulate", c),
        Command::Evaluate(c) => ("evaluate", c),
        Command::Pipeline(c) => ("pipeline", c),
    };
    fn tag(s: &'static str) -> impl Fn(PipelineError) -> (String, PipelineError) {
        move |e| (s.to_string(), e)
    }
    let cx = load(common).map_err(tag("load"))?;
    match command {
        Command::Plan(_) => run_plan(&cx).map_err(tag(stage))?,
        Command::Simulate(_) => run_simulate(&cx).map_err(tag(stage))?,
        Command::Evaluate(_) => return Ok(verdict(&run_evaluate(&cx).map_err(tag(stage))?)),
        Command::Pipeline(_) => {
            run_plan(&cx).map_err(tag("plan"))?;
            run_simulate(&cx).map_err(tag("simulate"))?;
            return Ok(verdict(&run_evaluate(&cx).map_err(tag("evaluate"))?));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(e: &PipelineError) -> u8 {
    if e.is_input_error() {
        2
    } else if e.is_task_failure() {
        1
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(code) => code,
        Err((stage, e)) => {
            eprintln!("error [{stage}]: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
