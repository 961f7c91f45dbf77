use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use autolearn_core::{
    aggregate, benefit_condition_holds, parse_runs_jsonl, reuse_benefit, run_benchmark,
    runs_to_jsonl, CostProfile, MethodLibrary, MetricsReport, RunConfig,
};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

/// Closed-loop method reuse benchmark and cost analysis.
#[derive(Parser)]
#[command(name = "autolearn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run or re-aggregate benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Inspect a stored method library.
    #[command(subcommand)]
    Library(LibraryCommand),
    /// Evaluate the reuse cost model.
    #[command(subcommand)]
    Cost(CostCommand),
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Generate the corpus, run the configured policy, and write reports.
    Run(RunArgs),
    /// Recompute the report from a runs.jsonl file.
    Report {
        #[arg(long)]
        runs: PathBuf,
        /// Also write report.json and report.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config overrides as `--dotted.key value` pairs, e.g. `--planner.p_corrupt 0`.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "OVERRIDES"
    )]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum LibraryCommand {
    Inspect {
        #[arg(long)]
        path: PathBuf,
    },
}

#[derive(Subcommand)]
enum CostCommand {
    /// Report whether reuse pays off for a cost profile.
    Analyze {
        #[arg(long)]
        profile: PathBuf,
        /// Expected reuse probability.
        #[arg(long)]
        rho: f64,
        /// Expected number of future recurrences.
        #[arg(long)]
        k: u64,
    },
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut it = raw.iter();
    while let Some(flag) = it.next() {
        let Some(key) = flag.strip_prefix("--") else {
            bail!("expected an override flag like --planner.p_corrupt, got `{flag}`");
        };
        match key.split_once('=') {
            Some((k, v)) => pairs.push((k.to_string(), v.to_string())),
            None => {
                let value = it
                    .next()
                    .with_context(|| format!("override --{key} is missing a value"))?;
                pairs.push((key.to_string(), value.clone()));
            }
        }
    }
    Ok(pairs)
}

fn write_report(dir: &Path, report: &MetricsReport) -> Result<()> {
    fs::write(dir.join("report.json"), report.to_json() + "\n")
        .with_context(|| format!("cannot write {}", dir.join("report.json").display()))?;
    fs::write(dir.join("report.csv"), report.to_csv())
        .with_context(|| format!("cannot write {}", dir.join("report.csv").display()))?;
    Ok(())
}

fn bench_run(args: &RunArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("cannot read config {}", args.config.display()))?;
    let overrides = parse_overrides(&args.overrides)?;
    let mut config = RunConfig::from_json_with_overrides(&text, &overrides)
        .with_context(|| format!("invalid config {}", args.config.display()))?;
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }

    let run = run_benchmark(&config)?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    fs::write(dir.join("runs.jsonl"), runs_to_jsonl(&run.records))
        .with_context(|| format!("cannot write {}", dir.join("runs.jsonl").display()))?;
    write_report(dir, &run.report)?;
    run.library.save(&dir.join("library.json"))?;

    print!("{}", run.report.overall_table());
    if let Some(p) = run.report.policies.first() {
        let curve: Vec<String> = p
            .hit_rate_curve()
            .iter()
            .map(|h| format!("{h:.4}"))
            .collect();
        println!("hit rate by repeat: [{}]", curve.join(", "));
    }
    if config.mode == autolearn_core::PolicyMode::AlwaysLlm {
        println!("note: always_llm skips retrieval and is charged no retrieval time");
    }

    let failures: Vec<_> = run
        .records
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| (r, e)))
        .collect();
    if let Some((record, error)) = failures.first() {
        eprintln!(
            "error: {} of {} episodes failed; first at cycle {} ({}): {}",
            failures.len(),
            run.records.len(),
            record.cycle,
            record.task_id,
            error
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn bench_report(runs: &Path, out: Option<&Path>) -> Result<()> {
    let text =
        fs::read_to_string(runs).with_context(|| format!("cannot read {}", runs.display()))?;
    let records = parse_runs_jsonl(&text).with_context(|| format!("invalid {}", runs.display()))?;
    if records.is_empty() {
        bail!("{} contains no run records", runs.display());
    }
    let report = aggregate(&records)?;
    print!("{}", report.overall_table());
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        write_report(dir, &report)?;
    }
    Ok(())
}

fn library_inspect(path: &Path) -> Result<()> {
    let library = MethodLibrary::load(path)?;
    let stats = library.stats();
    println!(
        "{} method{}",
        stats.n_methods,
        if stats.n_methods == 1 { "" } else { "s" }
    );
    if stats.n_methods > 0 {
        println!(
            "{:<24}{:>8}{:>15}{:>13}",
            "id", "steps", "success_ratio", "goal_tokens"
        );
        for m in &stats.methods {
            println!(
                "{:<24}{:>8}{:>15.4}{:>13}",
                m.id, m.procedure_len, m.success_ratio, m.n_goal_tokens
            );
        }
    }
    Ok(())
}

fn cost_analyze(profile: &Path, rho: f64, k: u64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        bail!("--rho must lie in [0, 1], got {rho}");
    }
    let text = fs::read_to_string(profile)
        .with_context(|| format!("cannot read {}", profile.display()))?;
    let profile = CostProfile::from_json(&text)
        .with_context(|| format!("invalid cost profile {}", profile.display()))?;
    let b = reuse_benefit(&profile, rho, k);
    println!("delta_c     {:.4}", b.delta_c);
    println!("investment  {:.4}", b.investment);
    println!("b_reuse     {:.4}", b.b_reuse);
    println!("b_net       {:.4}", b.b_net);
    println!("condition   {}", benefit_condition_holds(&profile, rho, k));
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Bench(BenchCommand::Run(args)) => bench_run(args),
        Command::Bench(BenchCommand::Report { runs, out }) => {
            bench_report(runs, out.as_deref()).map(|_| ExitCode::SUCCESS)
        }
        Command::Library(LibraryCommand::Inspect { path }) => {
            library_inspect(path).map(|_| ExitCode::SUCCESS)
        }
        Command::Cost(CostCommand::Analyze { profile, rho, k }) => {
            cost_analyze(profile, *rho, *k).map(|_| ExitCode::SUCCESS)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(a: &[&str]) -> Vec<String> {
        a.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn overrides_in_both_forms() {
        let pairs =
            parse_overrides(&strings(&["--planner.p_corrupt", "0", "--mode=always_llm"])).unwrap();
        assert_eq!(
            pairs,
            vec![
                ("planner.p_corrupt".to_string(), "0".to_string()),
                ("mode".to_string(), "always_llm".to_string())
            ]
        );
        assert!(parse_overrides(&strings(&["--seed"])).is_err());
        assert!(parse_overrides(&strings(&["seed", "1"])).is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
