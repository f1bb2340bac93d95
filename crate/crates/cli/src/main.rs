mod settings;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedmls_core::experiment::{self, prepare, ExperimentOutput, RunConfig, SweepParam};
use fedmls_core::metrics::Algorithm;

use settings::Settings;

/// Federated non-smooth SVM experiments: FedMLS against FedAvg, Scaffold
/// and Scaffnew.
#[derive(Parser)]
#[command(name = "fedmls", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the reference optimum f* of the global objective.
    Reference(#[command(flatten)] Settings),
    /// Run one algorithm over every seed.
    Run(#[command(flatten)] Settings),
    /// Run all four algorithms against a shared f*.
    Compare(#[command(flatten)] Settings),
    /// Tune eta0, lambda0 or t0 over a grid.
    Sweep(#[command(flatten)] Settings),
    /// Write the client assignment as `row_index,client_id` CSV.
    Partition(#[command(flatten)] Settings),
}

/// Exit codes: 0 everything succeeded, 1 some run failed, 2 bad input.
enum Failure {
    Runs(String),
    Input(String),
}

impl From<fedmls_core::Error> for Failure {
    fn from(e: fedmls_core::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Reference(s) => with_settings(s, reference),
        Command::Run(s) => with_settings(s, run),
        Command::Compare(s) => with_settings(s, compare),
        Command::Sweep(s) => with_settings(s, sweep),
        Command::Partition(s) => with_settings(s, partition),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runs(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn with_settings(s: Settings, f: fn(&Settings) -> Result<(), Failure>) -> Result<(), Failure> {
    let s = s.resolve().map_err(Failure::Input)?;
    f(&s)
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.6e}"))
}

fn reference(s: &Settings) -> Result<(), Failure> {
    let mut cfg = s.run_config();
    cfg.f_star = None;
    cfg.validate()?;
    let problem = cfg.problem.build()?;
    let prepared = prepare(&cfg, problem.objectives)?;
    warn_all(&prepared.warnings);
    let sol = prepared.reference.expect("reference computed without f*");
    let x: Vec<String> = sol.x_star.iter().map(|v| format!("{v:.12e}")).collect();
    println!("f_star = {:.15e}", sol.f_star);
    println!("certificate = {:.3e}", sol.certificate);
    println!("met_target = {}", sol.met_target);
    println!("restarts = {}", sol.restarts);
    println!("radius = {}", prepared.radius);
    println!("x_star = [{}]", x.join(", "));
    Ok(())
}

fn summarize(out: &ExperimentOutput) -> usize {
    let ok = out.runs.iter().filter(|r| r.result.is_ok()).count();
    println!(
        "{:<9} {:>3}/{:<3} seeds ok  mean final subopt {}",
        out.algorithm.as_str(),
        ok,
        out.runs.len(),
        fmt_opt(out.mean_final_subopt())
    );
    for r in &out.runs {
        if let Err(e) = &r.result {
            eprintln!("{} seed {}: {e}", out.algorithm, r.seed);
        }
    }
    warn_all(&out.warnings);
    for f in &out.files {
        println!("  wrote {}", f.display());
    }
    out.runs.len() - ok
}

fn run_config_for_runs(s: &Settings) -> Result<RunConfig, Failure> {
    let cfg = s.run_config();
    cfg.validate()?;
    Ok(cfg)
}

fn run(s: &Settings) -> Result<(), Failure> {
    let cfg = run_config_for_runs(s)?;
    let out = experiment::run_experiment(&cfg)?;
    println!("f* = {:.12e}", out.f_star);
    match summarize(&out) {
        0 => Ok(()),
        n => Err(Failure::Runs(format!(
            "{n} of {} runs failed",
            out.runs.len()
        ))),
    }
}

fn compare(s: &Settings) -> Result<(), Failure> {
    let cfg = run_config_for_runs(s)?;
    let outs = experiment::compare(&cfg)?;
    if let Some(first) = outs.first() {
        println!("f* = {:.12e}", first.f_star);
    }
    let failed: usize = outs.iter().map(summarize).sum();
    match failed {
        0 => Ok(()),
        n => Err(Failure::Runs(format!("{n} runs failed"))),
    }
}

fn sweep(s: &Settings) -> Result<(), Failure> {
    let param = s
        .param
        .ok_or_else(|| Failure::Input("sweep needs --param (eta0, lambda0 or t0)".into()))?
        .0;
    let mut cfg = s.run_config();
    if s.algorithm.is_none() && param == SweepParam::Eta0 {
        cfg.algorithm = Algorithm::Fedavg;
    }
    let relevant = match param {
        SweepParam::Eta0 => cfg.algorithm != Algorithm::Fedmls,
        SweepParam::Lambda0 | SweepParam::T0 => cfg.algorithm == Algorithm::Fedmls,
    };
    if !relevant {
        return Err(Failure::Input(format!(
            "{} has no effect on {}",
            param.as_str(),
            cfg.algorithm
        )));
    }
    cfg.validate()?;
    let out = experiment::sweep(&cfg, param, &s.sweep_grid())?;
    println!("{} sweep of {}", cfg.algorithm, out.param.as_str());
    for p in &out.points {
        let mark = if p.value == out.best { "*" } else { " " };
        match &p.excluded {
            Some(why) => println!("{mark} {:>10e}  excluded: {why}", p.value),
            None => println!("{mark} {:>10e}  {}", p.value, fmt_opt(p.mean_final_subopt)),
        }
    }
    println!("best {} = {:e}", out.param.as_str(), out.best);
    warn_all(&out.warnings);
    if let Some(f) = &out.summary_file {
        println!("  wrote {}", f.display());
    }
    Ok(())
}

fn partition(s: &Settings) -> Result<(), Failure> {
    let spec = s.problem();
    let problem = spec.build()?;
    let io_err = |e: io::Error| Failure::Input(e.to_string());
    match &s.output {
        Some(path) => {
            let file = File::create(path)
                .map_err(|e| Failure::Input(format!("cannot create {}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            problem.partition.write_csv(&mut w)?;
            w.flush().map_err(io_err)?;
            eprintln!("client sizes {:?}", problem.partition.sizes());
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            problem.partition.write_csv(&mut w)?;
            w.flush().map_err(io_err)?;
        }
    }
    Ok(())
}
