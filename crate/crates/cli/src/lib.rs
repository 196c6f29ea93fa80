//! The `concord` command line.
//!
//! Every subcommand maps onto one pipeline stage. Exit codes: 0 success,
//! 1 usage, 2 validation, 3 I/O, 4 missing dependency artifact.

use std::collections::HashMap;
use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use concord_core::config::{Config, DEFAULT_CONFIG};
use concord_core::dataset::Split;
use concord_core::fixture::{self, FixtureConfig};
use concord_core::pipeline::{ImportSource, Pipeline, ScoreSource, StageReport};
use concord_core::records::write_atomic;
use concord_core::workspace::{render_stats, Project, Workspace};
use concord_core::code_ingest::ProjectStats;
use concord_core::{Error, ErrorClass, Result};

pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "concord", version, about = "Build paper/code consistency benchmarks and train consistency classifiers")]
pub struct Cli {
    /// Workspace directory.
    #[arg(short, long, global = true, env = "CONCORD_WORKSPACE", default_value = ".")]
    pub workspace: PathBuf,
    /// Configuration file (defaults to `<workspace>/config.toml`, then built-in defaults).
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the configured base seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Redo stages whose inputs are unchanged and replace artifacts built
    /// with a different configuration.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ProjectFilter {
    /// Restrict the stage to one project.
    #[arg(long)]
    pub project: Option<String>,
}

#[derive(Debug, Args)]
pub struct DatasetArg {
    #[arg(long, default_value = "main")]
    pub dataset: String,
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Native run whose stored scores are evaluated.
    #[arg(long, conflicts_with = "scores")]
    pub run: Option<String>,
    /// External `example_id<TAB>probability` file.
    #[arg(long, requires = "name")]
    pub scores: Option<PathBuf>,
    /// Report name for external scores.
    #[arg(long)]
    pub name: Option<String>,
    /// Dataset the external scores refer to.
    #[arg(long, default_value = "main")]
    pub dataset: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a workspace and write its configuration file.
    Init,
    /// Register a project, or every project listed in a TSV file.
    Register {
        #[arg(long, required_unless_present = "from")]
        id: Option<String>,
        #[arg(long, required_unless_present = "from")]
        paper: Option<PathBuf>,
        #[arg(long, required_unless_present = "from")]
        repo: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        stars: u64,
        #[arg(long, default_value_t = 0)]
        citations: u64,
        /// `project_id<TAB>paper<TAB>repo<TAB>stars<TAB>citations` with a header line.
        #[arg(long, conflicts_with_all = ["id", "paper", "repo"])]
        from: Option<PathBuf>,
    },
    /// Extract candidate sentences from registered papers.
    IngestPaper(ProjectFilter),
    /// Extract function units from registered repositories.
    IngestCode(ProjectFilter),
    /// Recompute and print per-project code statistics.
    Stats,
    /// Embed every sentence and pool function.
    Embed,
    /// Rank each sentence's top-k functions within its project.
    Retrieve(ProjectFilter),
    /// Generate annotation tasks from top-1 candidates.
    Tasks(ProjectFilter),
    /// Run the annotation service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Show top-1 retrieval scores to annotators.
        #[arg(long)]
        show_scores: bool,
    },
    /// Import labels or resolved decisions without the service.
    DecisionsImport {
        #[arg(long, conflicts_with = "decisions", required_unless_present = "decisions")]
        labels: Option<PathBuf>,
        #[arg(long)]
        decisions: Option<PathBuf>,
    },
    /// Write the resolved decision file.
    DecisionsExport {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Discard incomplete tasks and freeze the store.
        #[arg(long)]
        finalize: bool,
    },
    /// Split projects into train, validation and test.
    Split(DatasetArg),
    /// Draw hard and random negatives for every positive.
    Sample(DatasetArg),
    /// Write the per-split example files and count table.
    Assemble(DatasetArg),
    /// Export `[CLS] sentence [SEP] code [SEP]` sequences.
    ExportSeq {
        #[command(flatten)]
        dataset: DatasetArg,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Train the native classifier for every configured seed.
    Train {
        #[command(flatten)]
        dataset: DatasetArg,
        #[arg(long, default_value = "run1")]
        run: String,
    },
    /// Rescore a split from stored checkpoints.
    Predict {
        #[arg(long, default_value = "run1")]
        run: String,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
    },
    /// Score a run or an external score file at one threshold.
    Eval {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, value_parser = parse_split)]
        split: Option<Split>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Evaluate a run over the threshold grid.
    Sweep {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, value_parser = parse_split)]
        split: Option<Split>,
        /// Permit sweeping on the test split.
        #[arg(long)]
        allow_test_sweep: bool,
    },
    /// Train and evaluate every loss variant.
    Ablate {
        #[command(flatten)]
        dataset: DatasetArg,
        #[arg(long, default_value = "run1")]
        run: String,
    },
    /// Print a stored report, e.g. `run1.sweep`.
    Report { name: String },
    /// Write the synthetic fixture corpus.
    FixtureGen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 48)]
        projects: usize,
        /// Positives per split as `train,validation,test`.
        #[arg(long, default_value = "957,90,83", value_parser = parse_triple)]
        positives: [usize; 3],
    },
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    Split::parse(s).map_err(|e| e.to_string())
}

fn parse_triple(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|_| "expected three comma-separated counts".to_string())
}

pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Validation => 2,
        ErrorClass::Io => 3,
        ErrorClass::DependencyMissing => 4,
    }
}

fn class_name(class: ErrorClass) -> &'static str {
    match class {
        ErrorClass::Usage => "usage",
        ErrorClass::Validation => "validation",
        ErrorClass::Io => "io",
        ErrorClass::DependencyMissing => "dependency_missing",
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_target(false)
        .try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let class = e.class();
            let line = serde_json::json!({"error": class_name(class), "detail": e.to_string()});
            eprintln!("{line}");
            exit_code(class)
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => {
            let p = cli.workspace.join(CONFIG_FILE);
            if p.exists() {
                Config::load(&p)?
            } else {
                Config::default()
            }
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_report(pl: &Pipeline, report: &StageReport) -> Result<()> {
    for w in report.warnings.iter().take(20) {
        log::warn!("{}: {}: {}", w.stage, w.subject, w.message);
    }
    if report.warnings.len() > 20 {
        log::warn!("{} more warnings not shown", report.warnings.len() - 20);
    }
    if !report.summary.is_empty() {
        println!("{}", report.summary.trim_end());
    }
    pl.log_event(report)
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn register(ws: &Workspace, projects: Vec<(String, PathBuf, PathBuf, u64, u64)>) -> Result<usize> {
    let mut manifest = ws.load()?;
    let n = projects.len();
    for (id, paper, repo, stars, citations) in projects {
        ws.register(
            &mut manifest,
            Project {
                project_id: id,
                paper_path: absolute(&paper),
                repo_path: absolute(&repo),
                stats: Some(ProjectStats {
                    stars,
                    citations,
                    ..Default::default()
                }),
            },
        )?;
    }
    ws.save(&manifest)?;
    Ok(n)
}

fn score_source(s: &SourceArgs) -> Result<ScoreSource> {
    match (&s.run, &s.scores) {
        (Some(run), None) => Ok(ScoreSource::Native(run.clone())),
        (None, Some(path)) => Ok(ScoreSource::External {
            name: s.name.clone().unwrap_or_else(|| "external".into()),
            dataset: s.dataset.clone(),
            path: path.clone(),
        }),
        (None, None) => Ok(ScoreSource::Native("run1".into())),
        (Some(_), Some(_)) => Err(Error::Usage("--run and --scores are exclusive".into())),
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let root = &cli.workspace;
    match &cli.command {
        Command::Init => {
            let text = match &cli.config {
                Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
                None => DEFAULT_CONFIG.to_string(),
            };
            let mut cfg = Config::parse(&text)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            Workspace::init(root, &cfg.digest())?;
            let text = if cli.seed.is_some() { cfg.to_toml()? } else { text };
            write_atomic(&root.join(CONFIG_FILE), text.as_bytes())?;
            println!("initialized workspace {}", root.display());
            return Ok(());
        }
        Command::FixtureGen {
            out,
            projects,
            positives,
        } => {
            let cfg = load_config(cli)?;
            let fx = FixtureConfig {
                projects: *projects,
                seed: cfg.seed,
                ratios: cfg.split.ratios,
                positives: *positives,
                ..Default::default()
            };
            let summary = fixture::generate(out, &fx)?;
            println!(
                "{} projects, {} labels written to {}",
                summary.projects.len(),
                summary.labels,
                out.display()
            );
            return Ok(());
        }
        _ => {}
    }

    let (ws, _) = Workspace::open(root)?;
    let read_only = matches!(
        cli.command,
        Command::Eval { .. } | Command::Report { .. } | Command::Sweep { .. }
    );
    let _lock = if read_only { None } else { Some(ws.lock()?) };

    if let Command::Register {
        id,
        paper,
        repo,
        stars,
        citations,
        from,
    } = &cli.command
    {
        let list = match from {
            Some(tsv) => fixture::read_projects(tsv)?
                .into_iter()
                .map(|p| (p.project_id, p.paper, p.repo, p.stars, p.citations))
                .collect(),
            None => vec![(
                id.clone().unwrap_or_default(),
                paper.clone().unwrap_or_default(),
                repo.clone().unwrap_or_default(),
                *stars,
                *citations,
            )],
        };
        let n = register(&ws, list)?;
        println!("registered {n} project(s)");
        return Ok(());
    }

    let mut cfg = load_config(cli)?;
    if let Command::Sweep { allow_test_sweep: true, .. } = cli.command {
        cfg.eval.allow_test_sweep = true;
    }
    let mut pl = Pipeline::open(root, cfg, cli.force)?;
    let report = match &cli.command {
        Command::IngestPaper(f) => pl.ingest_paper(f.project.as_deref())?,
        Command::IngestCode(f) => pl.ingest_code(f.project.as_deref())?,
        Command::Stats => {
            pl.project_stats()?;
            print!("{}", render_stats(&pl.manifest));
            return Ok(());
        }
        Command::Embed => pl.embed()?,
        Command::Retrieve(f) => pl.retrieve(f.project.as_deref())?,
        Command::Tasks(f) => pl.generate_tasks(f.project.as_deref())?,
        Command::Serve { addr, show_scores } => return serve(&pl, *addr, *show_scores || pl.config.annotation.show_scores),
        Command::DecisionsImport { labels, decisions } => {
            let src = match (labels, decisions) {
                (Some(l), _) => ImportSource::Labels(l.clone()),
                (None, Some(d)) => ImportSource::Decisions(d.clone()),
                (None, None) => return Err(Error::Usage("pass --labels or --decisions".into())),
            };
            pl.decisions_import(&src)?
        }
        Command::DecisionsExport { out, finalize } => pl.decisions_export(out.as_deref(), *finalize)?,
        Command::Split(d) => pl.split(&d.dataset)?,
        Command::Sample(d) => pl.sample(&d.dataset)?,
        Command::Assemble(d) => pl.assemble(&d.dataset)?,
        Command::ExportSeq { dataset, budget } => pl.export_seq(&dataset.dataset, *budget)?,
        Command::Train { dataset, run } => pl.train(&dataset.dataset, run)?,
        Command::Predict { run, split } => pl.predict(run, *split)?,
        Command::Eval {
            source,
            split,
            threshold,
        } => {
            let split = split.unwrap_or(pl.config.eval.eval_split);
            pl.eval(&score_source(source)?, split, *threshold)?
        }
        Command::Sweep { source, split, .. } => {
            let split = split.unwrap_or(pl.config.eval.sweep_split);
            pl.sweep(&score_source(source)?, split)?
        }
        Command::Ablate { dataset, run } => pl.ablate(&dataset.dataset, run)?,
        Command::Report { name } => {
            print!("{}", pl.report(name)?.render());
            return Ok(());
        }
        Command::Init | Command::FixtureGen { .. } | Command::Register { .. } => unreachable!("handled above"),
    };
    print_report(&pl, &report)
}

fn serve(pl: &Pipeline, addr: SocketAddr, show_scores: bool) -> Result<()> {
    let (store, warnings) = pl.open_store()?;
    for w in &warnings {
        log::warn!("{}: {}", w.subject, w.message);
    }
    let mut scores = HashMap::new();
    if show_scores {
        let mut top: HashMap<String, f64> = HashMap::new();
        for p in &pl.manifest.projects {
            for r in pl.load_candidates(&p.project_id)? {
                if let Some(c) = r.ranked.first() {
                    top.insert(r.sentence_id.clone(), c.score);
                }
            }
        }
        for t in store.tasks() {
            if let Some(s) = top.get(&t.sentence_id) {
                scores.insert(t.task_id.clone(), *s);
            }
        }
    }
    let state = concord_service::AppState::new(store).with_scores(scores, show_scores);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io(pl.ws.root(), e))?;
    rt.block_on(async move {
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        concord_service::serve(addr, state, shutdown).await
    })
    .map_err(|e| Error::io(pl.ws.root(), e))
}
