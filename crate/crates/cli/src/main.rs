use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mrreuse::bench::{q1q2_scenario, qf_scenarios, qp_scenarios, run_benchmark, BenchConfig, BenchReport};
use mrreuse::datagen::{generate_pigmix_like, generate_synthetic, PigMixSpec, SyntheticSpec};
use mrreuse::dfs::{now_nanos, Dfs};
use mrreuse::engine::{submit, EngineError, SubmitConfig, SubmitReport};
use mrreuse::exec::ExecConfig;
use mrreuse::lang::compile;
use mrreuse::plan::{render_plan, split_into_jobs, to_physical, WorkflowId};
use mrreuse::repository::{Admission, EntryId, InsertOutcome, Repository, RepositoryEntry, DEFAULT_WINDOW};
use mrreuse::subjob::Heuristic;

#[derive(Parser)]
#[command(name = "mrreuse", version, about = "Dataflow scripts on a local MapReduce engine with output reuse")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Root directory of the dataset store.
    #[arg(long, env = "RESTORE_DFS_ROOT", default_value = "dfs", global = true)]
    dfs_root: PathBuf,
    /// Root directory of the reuse repository.
    #[arg(long, env = "RESTORE_REPO_ROOT", default_value = "repo", global = true)]
    repo_root: PathBuf,
    /// Which sub-job outputs to store: conservative, aggressive, all, none
    /// (reuse but inject nothing) or off (no reuse at all).
    #[arg(long, value_enum, default_value_t = HeuristicArg::Aggressive, global = true)]
    heuristic: HeuristicArg,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    parallelism: Option<u32>,
    /// Reduce partitions per job.
    #[arg(long, default_value_t = 4, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    reducers: u32,
    /// Idle time in seconds after which `repo gc` evicts an entry.
    #[arg(long, global = true)]
    window: Option<u64>,
    /// Replace existing output datasets.
    #[arg(long, global = true)]
    overwrite: bool,
    /// Rewrite outputs as one sorted part.
    #[arg(long, global = true)]
    canonical: bool,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum HeuristicArg {
    Conservative,
    Aggressive,
    All,
    None,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Compile, rewrite, run and admit one script.
    Submit { script: PathBuf },
    /// Print the physical plan and job split of a script without running it.
    Explain { script: PathBuf },
    /// Inspect or maintain the repository.
    #[command(subcommand)]
    Repo(RepoCommand),
    /// Generate benchmark datasets.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Run a benchmark workload.
    Bench(BenchArgs),
}

#[derive(Subcommand)]
enum RepoCommand {
    /// Entries in scan order.
    List,
    /// One entry with its plan.
    Show { id: String },
    /// Evict idle and invalidated entries.
    Gc,
    /// Remove one entry.
    Rm { id: String },
}

#[derive(Subcommand)]
enum GenCommand {
    /// The twelve-field selectivity table.
    Synthetic {
        #[arg(long, default_value_t = 2_000_000)]
        rows: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "bench/synthetic")]
        path: String,
    },
    /// The page_views and users tables.
    Pigmix {
        #[arg(long, default_value_t = 100_000)]
        page_views: u64,
        #[arg(long, default_value_t = 10_000)]
        users: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Workload {
    Qp,
    Qf,
    Q1q2,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(value_enum)]
    workload: Workload,
    /// Field range, e.g. `1..5` for qp or `6..12` for qf.
    #[arg(long)]
    fields: Option<String>,
    #[arg(long, default_value_t = 3)]
    trials: usize,
    /// Generate the input datasets first.
    #[arg(long)]
    generate: bool,
    /// Use 200M synthetic rows and 10M page views when generating.
    #[arg(long)]
    full_scale: bool,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Directory for report.json, report.txt and trials.csv.
    #[arg(long, default_value = "bench-report")]
    out: PathBuf,
}

const SYNTHETIC: &str = "bench/synthetic";
const PAGE_VIEWS: &str = "bench/page_views";
const USERS: &str = "bench/users";

impl Global {
    fn exec(&self) -> ExecConfig {
        let mut exec = ExecConfig {
            reducers: self.reducers as usize,
            overwrite: self.overwrite,
            ..ExecConfig::default()
        };
        if let Some(p) = self.parallelism {
            exec.parallelism = p as usize;
        }
        exec
    }

    fn submit_config(&self) -> SubmitConfig {
        let (reuse, heuristic, admit) = match self.heuristic {
            HeuristicArg::Conservative => (true, Some(Heuristic::Conservative), true),
            HeuristicArg::Aggressive => (true, Some(Heuristic::Aggressive), true),
            HeuristicArg::All => (true, Some(Heuristic::NoHeuristic), true),
            HeuristicArg::None => (true, None, true),
            HeuristicArg::Off => (false, None, false),
        };
        SubmitConfig {
            exec: self.exec(),
            reuse,
            heuristic,
            admit,
            canonical: self.canonical,
        }
    }

    fn window(&self) -> Duration {
        self.window.map_or(DEFAULT_WINDOW, Duration::from_secs)
    }

    fn dfs(&self) -> Result<Dfs> {
        Dfs::open(&self.dfs_root).with_context(|| format!("opening dataset store {}", self.dfs_root.display()))
    }

    fn repo(&self) -> Result<Repository> {
        Repository::open(&self.repo_root).with_context(|| format!("opening repository {}", self.repo_root.display()))
    }
}

fn read_script(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn outcome_text(a: &Admission) -> String {
    match a {
        Admission::Kept(InsertOutcome::Inserted { id, position }) => format!("stored as {id} at position {position}"),
        Admission::Kept(InsertOutcome::Duplicate { id, .. }) => format!("duplicate of {id}"),
        Admission::Discarded(rule) => format!("discarded by {rule}"),
    }
}

fn print_report(r: &SubmitReport) {
    println!("workflow {}", r.workflow);
    println!(
        "jobs: {} compiled, {} executed; operators {} -> {}",
        r.jobs_compiled, r.jobs_executed, r.rewrite.ops_before, r.rewrite.ops_after
    );
    println!("matches: {}", r.rewrite.matches.len());
    for m in &r.rewrite.matches {
        println!(
            "  {} <- {} ({}, {} operators eliminated)",
            m.job_id,
            m.entry_id,
            if m.whole_job { "whole job" } else { "sub-job" },
            m.ops_eliminated
        );
    }
    println!("injections: {}", r.injected);
    for p in r.points.iter().filter(|p| !p.feeds_store) {
        println!("  {} op {} -> {}", p.job_id, p.op_id, p.store_path);
    }
    if !r.admissions.is_empty() {
        println!("admissions:");
        for a in &r.admissions {
            println!("  {} ({} bytes): {}", a.output_path, a.bytes, outcome_text(&a.outcome));
        }
    }
    println!("{:<8} {:>12} {:>12} {:>10} {:>10}", "job", "input", "output", "elapsed", "total");
    for (id, j) in &r.stats.jobs {
        let total = r.stats.t_total.get(id).copied().unwrap_or_default();
        println!(
            "{:<8} {:>12} {:>12} {:>9.3}s {:>9.3}s",
            id.0,
            j.input_bytes,
            j.output_bytes,
            j.t_elapsed.as_secs_f64(),
            total.as_secs_f64()
        );
    }
    println!(
        "critical path {:.3}s, wall time {:.3}s",
        r.stats.critical_path.as_secs_f64(),
        r.stats.wall_time.as_secs_f64()
    );
}

fn cmd_submit(g: &Global, script: &Path) -> Result<ExitCode> {
    let text = read_script(script)?;
    let (dfs, repo) = (g.dfs()?, g.repo()?);
    match submit(&dfs, &repo, &text, &g.submit_config()) {
        Ok(r) => {
            if g.json {
                print_json(&r)?;
            } else {
                print_report(&r);
            }
            Ok(ExitCode::SUCCESS)
        }
        Err(EngineError::Exec { source, report }) => {
            if g.json {
                print_json(&report)?;
            } else {
                print_report(&report);
            }
            eprintln!("error: {source}");
            Ok(ExitCode::FAILURE)
        }
        Err(e) => Err(e).with_context(|| format!("submitting {}", script.display())),
    }
}

fn cmd_explain(g: &Global, script: &Path) -> Result<ExitCode> {
    let lp = compile(&read_script(script)?).with_context(|| format!("compiling {}", script.display()))?;
    let pp = to_physical(&lp);
    let wf = split_into_jobs(&pp, &WorkflowId("explain".into()));
    if g.json {
        print_json(&wf)?;
        return Ok(ExitCode::SUCCESS);
    }
    println!("# physical plan\n{}", render_plan(&pp));
    for job in &wf.jobs {
        println!("# job {} -> {}\n{}", job.id, job.output_path, render_plan(&job.plan));
    }
    for (a, b) in &wf.deps {
        println!("# {a} before {b}");
    }
    Ok(ExitCode::SUCCESS)
}

fn entry_line(pos: usize, e: &RepositoryEntry) -> String {
    format!(
        "{:>3} {:<8} {:<36} {:>12} {:>12} {:>8.2} {:>9.3}s {:>6}",
        pos,
        e.id.0,
        e.output_path,
        e.stats.input_bytes,
        e.stats.output_bytes,
        e.stats.ratio(),
        e.stats.t_elapsed.as_secs_f64(),
        e.reuse_count
    )
}

fn cmd_repo(g: &Global, cmd: &RepoCommand) -> Result<ExitCode> {
    let repo = g.repo()?;
    match cmd {
        RepoCommand::List => {
            let entries = repo.ordered_scan()?;
            if g.json {
                return print_json(&entries).map(|_| ExitCode::SUCCESS);
            }
            println!(
                "{:>3} {:<8} {:<36} {:>12} {:>12} {:>8} {:>10} {:>6}",
                "pos", "id", "output", "in_bytes", "out_bytes", "ratio", "elapsed", "reused"
            );
            for (i, e) in entries.iter().enumerate() {
                println!("{}", entry_line(i, e));
            }
        }
        RepoCommand::Show { id } => {
            let state = repo.snapshot()?;
            let Some(e) = state.get(&EntryId(id.clone())) else {
                bail!("no repository entry '{id}'");
            };
            if g.json {
                return print_json(e).map(|_| ExitCode::SUCCESS);
            }
            print!("{}", mrreuse::repository::render_meta(e));
            println!("\n{}", render_plan(&e.plan));
        }
        RepoCommand::Gc => {
            let dfs = g.dfs()?;
            let evicted = repo.evict(&dfs, now_nanos(), g.window())?;
            if g.json {
                return print_json(&evicted).map(|_| ExitCode::SUCCESS);
            }
            for ev in &evicted {
                println!("{} evicted by {} ({})", ev.entry.id, ev.rule, ev.entry.output_path);
            }
            println!("{} entries evicted", evicted.len());
        }
        RepoCommand::Rm { id } => {
            let dfs = g.dfs()?;
            let e = repo.remove(&dfs, &EntryId(id.clone()))?;
            println!("removed {} ({})", e.id, e.output_path);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen(g: &Global, cmd: &GenCommand) -> Result<ExitCode> {
    let dfs = g.dfs()?;
    match cmd {
        GenCommand::Synthetic { rows, seed, path } => {
            if *rows == 0 {
                bail!("--rows must be at least 1");
            }
            let ds = generate_synthetic(&dfs, path, &SyntheticSpec::new(*rows, *seed), g.overwrite)?;
            println!("{}: {rows} rows, {} bytes", ds.path, ds.byte_size);
        }
        GenCommand::Pigmix { page_views, users, seed } => {
            let spec = PigMixSpec {
                page_views: *page_views,
                users: *users,
                seed: *seed,
            };
            let (v, u) = generate_pigmix_like(&dfs, PAGE_VIEWS, USERS, &spec, g.overwrite)?;
            println!("{}: {} bytes; {}: {} bytes", v.path, v.byte_size, u.path, u.byte_size);
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// `a..b` or `a..=b`, both inclusive.
fn parse_range(s: &str) -> Result<Vec<usize>> {
    let (a, b) = s.split_once("..").with_context(|| format!("range '{s}' is not of the form a..b"))?;
    let a: usize = a.trim().parse().with_context(|| format!("bad range start in '{s}'"))?;
    let b: usize = b.trim().trim_start_matches('=').parse().with_context(|| format!("bad range end in '{s}'"))?;
    if a > b {
        bail!("empty range '{s}'");
    }
    Ok((a..=b).collect())
}

fn write_report(dir: &Path, report: &BenchReport) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    std::fs::write(dir.join("report.txt"), report.to_table())?;
    std::fs::write(dir.join("trials.csv"), report.to_csv())?;
    Ok(())
}

fn cmd_bench(g: &Global, args: &BenchArgs) -> Result<ExitCode> {
    let dfs = g.dfs()?;
    let Some(heuristic) = g.submit_config().heuristic else {
        bail!("benchmarks need an injection heuristic");
    };
    let synthetic_rows = if args.full_scale { 200_000_000 } else { 2_000_000 };
    let pigmix = if args.full_scale {
        PigMixSpec {
            page_views: 10_000_000,
            users: 1_000_000,
            seed: args.seed,
        }
    } else {
        PigMixSpec {
            page_views: 100_000,
            users: 10_000,
            seed: args.seed,
        }
    };
    let (name, scenarios) = match args.workload {
        Workload::Qp | Workload::Qf => {
            if args.generate {
                generate_synthetic(&dfs, SYNTHETIC, &SyntheticSpec::new(synthetic_rows, args.seed), true)?;
            } else if !dfs.exists(SYNTHETIC) {
                bail!("{SYNTHETIC} does not exist; run with --generate or `gen synthetic` first");
            }
            if args.workload == Workload::Qp {
                let fields = parse_range(args.fields.as_deref().unwrap_or("1..5"))?;
                if fields.iter().any(|&f| !(1..=5).contains(&f)) {
                    bail!("qp projects fields 1 to 5");
                }
                ("QP", qp_scenarios(SYNTHETIC, fields))
            } else {
                let fields = parse_range(args.fields.as_deref().unwrap_or("6..12"))?;
                if fields.iter().any(|&f| !(6..=12).contains(&f)) {
                    bail!("qf filters on fields 6 to 12");
                }
                ("QF", qf_scenarios(SYNTHETIC, fields))
            }
        }
        Workload::Q1q2 => {
            if args.generate {
                generate_pigmix_like(&dfs, PAGE_VIEWS, USERS, &pigmix, true)?;
            } else if !dfs.exists(PAGE_VIEWS) || !dfs.exists(USERS) {
                bail!("{PAGE_VIEWS} or {USERS} missing; run with --generate or `gen pigmix` first");
            }
            ("Q1Q2", vec![q1q2_scenario(PAGE_VIEWS, USERS)])
        }
    };
    let cfg = BenchConfig {
        exec: g.exec(),
        heuristic,
        trials: args.trials.max(1),
        scratch: args.out.join("scratch"),
    };
    let report = run_benchmark(&dfs, name, &scenarios, &cfg)?;
    let _ = std::fs::remove_dir_all(&cfg.scratch);
    write_report(&args.out, &report)?;
    if g.json {
        print_json(&report)?;
    } else {
        print!("{}", report.to_table());
    }
    let outputs_ok = report.points.iter().all(|p| p.outputs_match);
    if !outputs_ok {
        eprintln!("error: instrumented outputs differ from plain outputs");
    }
    Ok(if report.trends_hold() && outputs_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let g = &cli.global;
    match &cli.command {
        Command::Submit { script } => cmd_submit(g, script),
        Command::Explain { script } => cmd_explain(g, script),
        Command::Repo(cmd) => cmd_repo(g, cmd),
        Command::Gen(cmd) => cmd_gen(g, cmd),
        Command::Bench(args) => cmd_bench(g, args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
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

    #[test]
    fn ranges_are_inclusive() {
        assert_eq!(parse_range("1..5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_range("6..=7").unwrap(), vec![6, 7]);
        assert!(parse_range("5..1").is_err());
        assert!(parse_range("3").is_err());
    }

    #[test]
    fn heuristic_flags() {
        let cli = Cli::parse_from(["mrreuse", "--heuristic", "off", "repo", "list"]);
        let c = cli.global.submit_config();
        assert!(!c.reuse && c.heuristic.is_none() && !c.admit);
        let cli = Cli::parse_from(["mrreuse", "repo", "list", "--heuristic", "none"]);
        let c = cli.global.submit_config();
        assert!(c.reuse && c.heuristic.is_none());
        let cli = Cli::parse_from(["mrreuse", "repo", "list"]);
        assert_eq!(cli.global.submit_config().heuristic, Some(Heuristic::Aggressive));
    }
}
