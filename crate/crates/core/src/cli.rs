//! Command-line driver. Exit codes: 0 success, 2 configuration or usage
//! error, 3 provider error, 4 data error.

use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::analysis::{
    categorize_tasks, depth_long_rows, depth_reports, depth_rows, rate_long_rows, site_depths, success_rate_by_depth,
    visit_diff, write_csv, DepthMode, GroupBy, KeywordClassifier, LlmClassifier, NodeDepthRow, TaskClassifier,
    VisitCounting,
};
use crate::baselines::{run_instruction_first, run_interaction_first, BaselineError, BaselineSummary};
use crate::config::{ConfigError, Overrides, RunConfig};
use crate::datastore::{
    compute_stats, export_sft, read_dataset, render_stats, write_atomic, DataError, DatasetRecord, DatasetWriter,
    GraphSnapshot, ManifestInfo, Phase, RunHeader, SiteSummary, TaskRecord, TrajectoryRecord,
};
use crate::explorer::{run_exploration, ExploreError};
use crate::llm::LlmError;
use crate::simenv::{load_site_spec_file, SiteOracle};
use crate::urls::UrlTemplate;

#[derive(Debug, Parser)]
#[command(name = "sitewalk", version, about = "Collect web-agent datasets by exploring sites as a graph")]
pub struct Cli {
    /// Log filter, e.g. `info` or `sitewalk=debug`. `RUST_LOG` also works.
    #[arg(long, global = true)]
    pub log: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Explore the configured sites and write a dataset.
    Explore(RunArgs),
    /// Run a comparison baseline.
    Baseline {
        #[arg(value_enum)]
        kind: BaselineKind,
        #[command(flatten)]
        run: RunArgs,
        /// Interaction-first episode count.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Print trajectory, step and task counts for a dataset.
    Stats {
        dataset: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write one fine-tuning example per step of every successful trajectory.
    ExportSft { dataset: PathBuf, destination: PathBuf },
    /// Depth, visit and success-rate tables over datasets.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Check site specification files.
    ValidateSite {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BaselineKind {
    InteractionFirst,
    InstructionFirst,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, short)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run every job on one thread so outputs are byte-stable.
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TableOut {
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a plot-ready long-format CSV here.
    #[arg(long)]
    pub long: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Histogram of URL path depth reached per trajectory.
    Depth {
        dataset: PathBuf,
        /// Second dataset; adds only-A and only-B success subsets.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Use the final URL instead of the deepest one.
        #[arg(long)]
        final_url: bool,
        #[command(flatten)]
        out: TableOut,
    },
    /// Shortest-path depth of every graph node.
    NodeDepth {
        dataset: PathBuf,
        #[command(flatten)]
        out: TableOut,
    },
    /// Per-template visit counts of successful trajectories in two datasets.
    VisitDiff {
        a: PathBuf,
        b: PathBuf,
        /// URL template such as `/catalog/{id}`; repeatable.
        #[arg(long = "template")]
        templates: Vec<String>,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        /// Count every step instead of once per trajectory.
        #[arg(long)]
        per_step: bool,
        #[command(flatten)]
        out: TableOut,
    },
    /// Task intent categories per site.
    Categories {
        dataset: PathBuf,
        /// Run config holding the provider for `--provider`.
        #[arg(long, requires = "provider")]
        config: Option<PathBuf>,
        /// Classify with this configured provider instead of keyword rules.
        #[arg(long, requires_all = ["config", "model"])]
        provider: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long, default_value_t = 50)]
        sample_size: usize,
        #[command(flatten)]
        out: TableOut,
    },
    /// Solver success rate per node-depth bucket.
    SuccessByDepth {
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = GroupArg::Prefixed)]
        group_by: GroupArg,
        #[arg(long, default_value_t = 8)]
        max_bucket: u64,
        #[command(flatten)]
        out: TableOut,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GroupArg {
    Prefixed,
    Sampler,
}

/// Exit code for an error chain.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ConfigError>() {
            return if matches!(e, ConfigError::Provider { .. }) { 3 } else { 2 };
        }
        if cause.is::<LlmError>() {
            return 3;
        }
        if cause.is::<DataError>() {
            return 4;
        }
        if let Some(e) = cause.downcast_ref::<ExploreError>() {
            return if matches!(e, ExploreError::Config(_)) { 2 } else { 4 };
        }
        if let Some(e) = cause.downcast_ref::<BaselineError>() {
            return if matches!(e, BaselineError::Config(_)) { 2 } else { 4 };
        }
    }
    4
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = cli.log.clone().unwrap_or_else(|| "warn".into());
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(filter)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Explore(args) => cmd_explore(&args),
        Command::Baseline { kind, run, episodes } => cmd_baseline(kind, &run, episodes),
        Command::Stats { dataset, json } => cmd_stats(&dataset, json),
        Command::ExportSft { dataset, destination } => {
            let n = export_sft(&dataset, &destination)?;
            println!("wrote {n} examples to {}", destination.display());
            Ok(())
        }
        Command::Analyze(a) => cmd_analyze(a),
        Command::ValidateSite { files } => cmd_validate_site(&files),
    }
}

fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply(&Overrides {
        seed: args.seed,
        deterministic: args.deterministic,
        workers: args.workers,
        output_dir: args.output_dir.clone(),
    });
    cfg.validate()?;
    Ok(cfg)
}

fn start_dataset(path: &Path, cfg: &RunConfig, kind: &str) -> Result<DatasetWriter> {
    let writer = DatasetWriter::create(path)?;
    writer.append(&DatasetRecord::RunManifest(RunHeader {
        id: format!("run:{kind}"),
        run_kind: kind.to_string(),
        config_digest: cfg.digest(),
        seed: cfg.seed,
        deterministic: cfg.deterministic,
    }))?;
    Ok(writer)
}

fn finish_dataset(writer: DatasetWriter, cfg: &RunConfig, kind: &str, sites: Vec<SiteSummary>) -> Result<()> {
    let manifest = writer.finish(ManifestInfo {
        run_kind: kind.to_string(),
        config_digest: cfg.digest(),
        seed: cfg.seed,
        deterministic: cfg.deterministic,
        sites,
    })?;
    info!("dataset {} sha256 {}", manifest.dataset_file, manifest.dataset_sha256);
    Ok(())
}

fn cmd_explore(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let (_, summaries) = explore(&cfg)?;
    for s in &summaries {
        println!(
            "{}: {} nodes discovered, {} explored, {}/{} tasks feasible, {}/{} trajectories successful",
            s.site_id,
            s.nodes_discovered,
            s.nodes_explored,
            s.tasks_feasible,
            s.tasks_proposed,
            s.success_trajectories,
            s.trajectories
        );
    }
    Ok(())
}

/// Runs exploration for a validated config, writing `dataset.jsonl` and its
/// manifest under the output directory. Returns the dataset path.
pub fn explore(cfg: &RunConfig) -> Result<(PathBuf, Vec<SiteSummary>)> {
    let sites = cfg.load_sites()?;
    let modules = cfg.modules()?;
    let path = cfg.output_dir.join("dataset.jsonl");
    let writer = start_dataset(&path, cfg, "explore")?;
    let runs = run_exploration(&sites, &modules, &cfg.explore, &writer)?;
    let summaries: Vec<SiteSummary> = runs.into_iter().map(|r| r.summary).collect();
    finish_dataset(writer, cfg, "explore", summaries.clone())?;
    Ok((path, summaries))
}

fn cmd_baseline(kind: BaselineKind, args: &RunArgs, episodes: Option<usize>) -> Result<()> {
    let mut cfg = load_config(args)?;
    if let Some(n) = episodes {
        cfg.baseline.interaction_first.episodes = n;
    }
    let sites = cfg.load_sites()?;
    let (name, file) = match kind {
        BaselineKind::InteractionFirst => ("interaction_first", "interaction_first.jsonl"),
        BaselineKind::InstructionFirst => ("instruction_first", "instruction_first.jsonl"),
    };
    // Build everything before the first write.
    let (browser, proposer, solver, reward) = (
        cfg.build_policy(&cfg.roles.browser)?,
        cfg.build_policy(&cfg.roles.instruction_proposer)?,
        cfg.build_policy(&cfg.roles.solvers[0])?,
        cfg.reward()?,
    );
    let labelers = match kind {
        BaselineKind::InteractionFirst => sites.iter().map(|s| cfg.labeler(s)).collect::<Result<Vec<_>, _>>()?,
        BaselineKind::InstructionFirst => Vec::new(),
    };
    let writer = start_dataset(&cfg.output_dir.join(file), &cfg, name)?;
    let mut summaries = Vec::new();
    for (i, site) in sites.iter().enumerate() {
        let s: BaselineSummary = match kind {
            BaselineKind::InteractionFirst => run_interaction_first(
                site,
                &browser,
                labelers[i].as_ref(),
                &cfg.baseline.interaction_first,
                &writer,
            )?,
            BaselineKind::InstructionFirst => {
                run_instruction_first(site, &proposer, &solver, &reward, &cfg.baseline.instruction_first, &writer)?
            }
        };
        println!(
            "{}: {} tasks, {}/{} trajectories successful",
            site.site_id, s.tasks, s.success_trajectories, s.trajectories
        );
        summaries.push(SiteSummary {
            site_id: site.site_id.clone(),
            tasks_proposed: s.tasks,
            trajectories: s.trajectories,
            success_trajectories: s.success_trajectories,
            ..Default::default()
        });
    }
    finish_dataset(writer, &cfg, name, summaries)
}

fn cmd_stats(dataset: &Path, json: bool) -> Result<()> {
    let (_, trajectories, _) = split(dataset)?;
    let stats = compute_stats(&trajectories);
    if json {
        println!("{}", serde_json::to_string_pretty(&stats)?);
    } else {
        print!("{}", render_stats(&stats));
    }
    Ok(())
}

type Split = (Vec<TaskRecord>, Vec<TrajectoryRecord>, Vec<GraphSnapshot>);

fn split(path: &Path) -> Result<Split> {
    let mut out: Split = Default::default();
    for r in read_dataset(path)? {
        match r {
            DatasetRecord::Task(t) => out.0.push(t),
            DatasetRecord::Trajectory(t) => out.1.push(t),
            DatasetRecord::GraphSnapshot(g) => out.2.push(g),
            _ => {}
        }
    }
    Ok(out)
}

fn emit<R: serde::Serialize>(rows: &[R], out: &TableOut, long: Vec<crate::analysis::LongRow>) -> Result<()> {
    match &out.out {
        Some(path) => write_atomic(path, |w| write_csv(&mut *w, rows).map_err(io::Error::other))?,
        None => write_csv(BufWriter::new(io::stdout().lock()), rows)?,
    }
    if let Some(path) = &out.long {
        write_atomic(path, |w| write_csv(&mut *w, &long).map_err(io::Error::other))?;
    }
    Ok(())
}

fn cmd_analyze(cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Depth {
            dataset,
            compare,
            final_url,
            out,
        } => {
            let (_, a, _) = split(&dataset)?;
            let b = compare.as_deref().map(split).transpose()?.map(|s| s.1);
            let mode = if final_url { DepthMode::Final } else { DepthMode::Max };
            let reports = depth_reports(&a, b.as_deref(), mode);
            emit(&depth_rows(&reports), &out, depth_long_rows(&reports))
        }
        AnalyzeCommand::NodeDepth { dataset, out } => {
            let (_, _, graphs) = split(&dataset)?;
            let rows: Vec<NodeDepthRow> = site_depths(&graphs)
                .into_iter()
                .flat_map(|(site, depths)| {
                    depths.into_iter().map(move |(url, depth)| NodeDepthRow {
                        site_id: site.clone(),
                        url: url.to_string(),
                        depth,
                    })
                })
                .collect();
            let long = rows
                .iter()
                .map(|r| crate::analysis::LongRow {
                    metric: "node_depth".into(),
                    series: r.site_id.clone(),
                    x: r.url.clone(),
                    y: r.depth as f64,
                })
                .collect();
            emit(&rows, &out, long)
        }
        AnalyzeCommand::VisitDiff {
            a,
            b,
            templates,
            top_k,
            per_step,
            out,
        } => {
            let templates = templates
                .iter()
                .map(|t| UrlTemplate::parse(t).with_context(|| format!("template `{t}`")))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| ConfigError::Invalid(format!("{e:#}")))?;
            let (_, ta, _) = split(&a)?;
            let (_, tb, _) = split(&b)?;
            let counting = if per_step { VisitCounting::PerStep } else { VisitCounting::PerTrajectory };
            let rows = visit_diff(&ta, &tb, &templates, top_k, counting);
            let long = rows
                .iter()
                .map(|r| crate::analysis::LongRow {
                    metric: "visit_diff".into(),
                    series: "a_minus_b".into(),
                    x: r.template.clone(),
                    y: r.diff as f64,
                })
                .collect();
            emit(&rows, &out, long)
        }
        AnalyzeCommand::Categories {
            dataset,
            config,
            provider,
            model,
            sample_size,
            out,
        } => {
            let classifier: Box<dyn TaskClassifier> = match (config, provider, model) {
                (Some(c), Some(p), Some(m)) => {
                    let cfg = RunConfig::load(&c)?;
                    Box::new(LlmClassifier::new(cfg.build_provider(&p)?, &m, sample_size))
                }
                _ => Box::new(KeywordClassifier::default()),
            };
            let (tasks, _, _) = split(&dataset)?;
            let dist = categorize_tasks(&tasks, classifier.as_ref());
            #[derive(serde::Serialize)]
            struct Row<'a> {
                site_id: &'a str,
                category: &'a str,
                tasks: usize,
            }
            let rows: Vec<Row> = dist
                .per_site
                .iter()
                .flat_map(|(s, cats)| cats.iter().map(move |(c, n)| Row { site_id: s, category: c, tasks: *n }))
                .collect();
            let long = rows
                .iter()
                .map(|r| crate::analysis::LongRow {
                    metric: "task_categories".into(),
                    series: r.site_id.to_string(),
                    x: r.category.to_string(),
                    y: r.tasks as f64,
                })
                .collect();
            emit(&rows, &out, long)
        }
        AnalyzeCommand::SuccessByDepth {
            dataset,
            group_by,
            max_bucket,
            out,
        } => {
            let (tasks, trajectories, graphs) = split(&dataset)?;
            let solver: Vec<_> = trajectories.into_iter().filter(|t| t.phase == Phase::Solver).collect();
            let group = match group_by {
                GroupArg::Prefixed => GroupBy::Prefixed,
                GroupArg::Sampler => GroupBy::Sampler,
            };
            let rows = success_rate_by_depth(&solver, &tasks, &site_depths(&graphs), group, max_bucket);
            emit(&rows, &out, rate_long_rows(&rows))
        }
    }
}

fn cmd_validate_site(files: &[PathBuf]) -> Result<()> {
    let mut failed = Vec::new();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for f in files {
        match load_site_spec_file(f) {
            Ok(site) => {
                let reachable = SiteOracle::new(&site).reachable_urls().len();
                writeln!(
                    out,
                    "{}: ok ({} ({}), {} page entries, {} reachable pages, {} tasks)",
                    f.display(),
                    site.site_id,
                    site.root_url,
                    site.pages().len(),
                    reachable,
                    site.ground_truth_tasks.len()
                )?;
            }
            Err(e) => {
                writeln!(out, "{}: {e}", f.display())?;
                failed.push(f.display().to_string());
            }
        }
    }
    if !failed.is_empty() {
        return Err(DataError::SchemaViolation(format!("invalid site spec(s): {}", failed.join(", "))).into());
    }
    info!("validated {} site spec(s)", files.len());
    Ok(())
}
