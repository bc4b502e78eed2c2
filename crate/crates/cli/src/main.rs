//! `envforge`: run the environment-synthesis pipeline stage by stage or end
//! to end, then inspect and export the collected trajectories.
//!
//! Exit codes: 0 success, 1 stage failure, 2 configuration or usage error.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use envforge_core::adapt::{adapt_project, Adaptation};
use envforge_core::clock::{Clock, LogicalClock, SystemClock};
use envforge_core::config::{ConfigError, PipelineConfig};
use envforge_core::gateway::{Gateway, GatewayMode};
use envforge_core::pipeline::{project_id, Orchestrator, ProjectArtifact, StageState, TaskStatus};
use envforge_core::plan::TaskId;
use envforge_core::proposal::{read_proposals_json, write_proposals_json, ProjectProposal, ProposalBatch, ProposalEngine};
use envforge_core::sandbox::Provisioner;
use envforge_core::templates::TemplateSet;
use envforge_core::trajectory::sft::export_sft;
use envforge_core::trajectory::stats::render_table;
use envforge_core::trajectory::store::TrajectoryStore;
use envforge_core::trajectory::{aggregate, Trajectory, TrajectoryFilter, TrajectoryKind};

const DEFAULT_CONFIG: &str = "envforge.toml";

#[derive(Parser)]
#[command(name = "envforge", version, about = "Synthesize verifiable coding environments and collect agent trajectories")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, short, global = true, default_value = DEFAULT_CONFIG)]
    config: PathBuf,

    /// Override `pipeline.output_dir` from the configuration.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate project proposals and write `proposals.json`.
    Propose {
        /// Number of proposals to request.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Start a project from a stored proposal and produce its plan.
    Plan {
        /// Repository name or project id of a proposal in `proposals.json`.
        #[arg(long)]
        proposal: String,
    },
    /// Build the skeleton repository of a planned project.
    Scaffold(ProjectArg),
    /// Generate and snapshot the tests of the next (or given) task.
    GenTests(TaskArgs),
    /// Implement the next (or given) task and verify it against its snapshot.
    Implement(TaskArgs),
    /// Derive issue-resolution, issue-reproduction and library instances
    /// from a completed project.
    Adapt(ProjectArg),
    /// Print trajectory statistics for a store.
    Stats(StatsArgs),
    /// Export trajectories in chat format for fine-tuning.
    Export(ExportArgs),
    /// Propose, build and adapt projects end to end.
    RunAll(RunAllArgs),
}

#[derive(Args)]
struct ProjectArg {
    /// Project id (directory name under `projects/`).
    #[arg(long)]
    project: String,
}

#[derive(Args)]
struct TaskArgs {
    #[arg(long)]
    project: String,
    /// Task id such as `1.2.3`; defaults to the next unsettled task.
    #[arg(long)]
    task: Option<TaskId>,
}

#[derive(Args)]
struct StatsArgs {
    /// Trajectory store directory; defaults to the configured store.
    store: Option<PathBuf>,
    /// Also write the full dataset manifest as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Trajectory store directory; defaults to the configured store.
    store: Option<PathBuf>,
    /// Output JSONL file.
    #[arg(long)]
    out: PathBuf,
    /// Export every trajectory instead of the finished task-solving ones.
    #[arg(long)]
    all: bool,
    /// Manifest of the exported selection; defaults to `<out>.manifest.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct RunAllArgs {
    /// Replay recorded model transcripts from this archive directory.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Number of projects to build.
    #[arg(long, default_value_t = 1)]
    projects: usize,
    /// Projects built concurrently; defaults to `pipeline.parallel`.
    #[arg(long)]
    parallel: Option<usize>,
    /// Skip the adaptation stage.
    #[arg(long)]
    no_adapt: bool,
}

/// Configuration or usage problem (exit code 2).
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// How a command that ran to completion went.
#[derive(Debug, PartialEq, Eq)]
enum Status {
    Ok,
    StageFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::StageFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let is_usage = e.chain().any(|c| c.is::<Usage>() || c.is::<ConfigError>());
            ExitCode::from(if is_usage { 2 } else { 1 })
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    if !cli.config.is_file() {
        return Err(usage(format!("configuration file {} not found", cli.config.display())));
    }
    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(dir) = &cli.output_dir {
        config.pipeline.output_dir = dir.clone();
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<Status> {
    match &cli.command {
        Command::Stats(args) => {
            let store = match &args.store {
                Some(s) => s.clone(),
                None => load_config(&cli)?.store_dir(),
            };
            cmd_stats(&store, args.json.as_deref())
        }
        Command::Export(args) => {
            let store = match &args.store {
                Some(s) => s.clone(),
                None => load_config(&cli)?.store_dir(),
            };
            cmd_export(&store, args)
        }
        Command::RunAll(args) => {
            let mut config = load_config(&cli)?;
            if let Some(archive) = &args.replay {
                if !archive.is_dir() {
                    return Err(usage(format!("replay archive {} is not a directory", archive.display())));
                }
                config.gateway.mode = GatewayMode::Replay;
                config.gateway.archive = Some(archive.clone());
            }
            if let Some(n) = args.parallel {
                config.pipeline.parallel = n;
            }
            config.validate()?;
            if args.projects == 0 {
                return Err(usage("--projects must be at least 1"));
            }
            let services = Services::new(&config)?;
            cmd_run_all(&config, &services, args)
        }
        command => {
            let config = load_config(&cli)?;
            let services = Services::new(&config)?;
            match command {
                Command::Propose { count } => cmd_propose(&config, &services, count.unwrap_or(config.proposal.batch_size)),
                Command::Plan { proposal } => cmd_plan(&config, &services, proposal),
                Command::Scaffold(p) => cmd_scaffold(&services.orchestrator(&config), &p.project),
                Command::GenTests(t) => cmd_task(&services.orchestrator(&config), t, false),
                Command::Implement(t) => cmd_task(&services.orchestrator(&config), t, true),
                Command::Adapt(p) => cmd_adapt(&config, &services.orchestrator(&config), &p.project),
                Command::Stats(_) | Command::Export(_) | Command::RunAll(_) => unreachable!(),
            }
        }
    }
}

/// Long-lived services shared by every project of a run.
struct Services {
    gateway: Gateway,
    templates: TemplateSet,
    provisioner: Box<dyn Provisioner>,
    store: TrajectoryStore,
    clock: Box<dyn Clock>,
}

impl Services {
    fn new(config: &PipelineConfig) -> Result<Self> {
        let out = &config.pipeline.output_dir;
        fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
        // Recorded and replayed runs stamp events with a logical clock so
        // their artifacts do not depend on when they ran.
        let clock: Box<dyn Clock> = match config.gateway.mode {
            GatewayMode::Live => Box::new(SystemClock),
            GatewayMode::Record | GatewayMode::Replay => Box::new(LogicalClock::new()),
        };
        Ok(Self {
            gateway: config.gateway()?,
            templates: config.templates()?,
            provisioner: config.provisioner(),
            store: TrajectoryStore::open(config.store_dir())?,
            clock,
        })
    }

    fn orchestrator(&self, config: &PipelineConfig) -> Orchestrator<'_> {
        Orchestrator {
            gateway: &self.gateway,
            templates: &self.templates,
            provisioner: self.provisioner.as_ref(),
            store: &self.store,
            clock: self.clock.as_ref(),
            settings: config.settings(),
            projects_dir: config.projects_dir(),
        }
    }
}

fn propose(config: &PipelineConfig, services: &Services, count: usize) -> Result<Vec<ProjectProposal>> {
    if count == 0 {
        return Err(usage("proposal count must be at least 1"));
    }
    let engine = ProposalEngine::new(&services.gateway, &services.templates, config.proposal_config());
    let batch_size = config.proposal.batch_size;
    let mut batches: Vec<ProposalBatch> = Vec::new();
    let mut remaining = count;
    let mut index = 0;
    while remaining > 0 {
        let n = remaining.min(batch_size);
        let batch = engine.propose_projects(n, index).with_context(|| format!("proposal batch {index}"))?;
        for r in &batch.rejected {
            eprintln!("rejected proposal block {}: {}", r.block, r.reasons.join("; "));
        }
        batches.push(batch);
        remaining -= n;
        index += 1;
    }
    write_proposals_json(&config.proposals_file(), &batches)?;
    Ok(batches.into_iter().flat_map(|b| b.proposals).collect())
}

fn cmd_propose(config: &PipelineConfig, services: &Services, count: usize) -> Result<Status> {
    let proposals = propose(config, services, count)?;
    for p in &proposals {
        println!("{}", project_id(p));
    }
    println!("wrote {} proposal(s) to {}", proposals.len(), config.proposals_file().display());
    Ok(if proposals.is_empty() { Status::StageFailed } else { Status::Ok })
}

fn cmd_plan(config: &PipelineConfig, services: &Services, name: &str) -> Result<Status> {
    let path = config.proposals_file();
    if !path.exists() {
        return Err(usage(format!("{} not found; run `envforge propose` first", path.display())));
    }
    let records = read_proposals_json(&path)?;
    let proposal = records
        .into_iter()
        .map(|r| r.proposal)
        .find(|p| p.repo_name == name || project_id(p) == name)
        .ok_or_else(|| usage(format!("no proposal named {name} in {}", path.display())))?;
    let orch = services.orchestrator(config);
    let mut session = orch.start(&proposal)?;
    let result = session.plan_project();
    report_stage(&session.state().project, session.state().state.clone(), result)
}

fn open_project<'o, 'a>(orch: &'o Orchestrator<'a>, project: &str) -> Result<envforge_core::pipeline::ProjectSession<'o, 'a>> {
    if !orch.project_dir(project).is_dir() {
        return Err(usage(format!("no project {project} under {}", orch.projects_dir.display())));
    }
    Ok(orch.open(project)?)
}

fn report_stage(project: &str, state: StageState, result: Result<impl fmt::Debug, envforge_core::pipeline::PipelineError>) -> Result<Status> {
    match result {
        Ok(_) if !matches!(state, StageState::Failed { .. }) => {
            println!("{project}: {state:?}");
            Ok(Status::Ok)
        }
        Ok(_) => {
            eprintln!("{project}: {state:?}");
            Ok(Status::StageFailed)
        }
        Err(e) => {
            eprintln!("{project}: {e}");
            Ok(Status::StageFailed)
        }
    }
}

fn cmd_scaffold(orch: &Orchestrator<'_>, project: &str) -> Result<Status> {
    let mut session = open_project(orch, project)?;
    let result = session.scaffold();
    let state = session.state().state.clone();
    report_stage(project, state, result)
}

fn cmd_task(orch: &Orchestrator<'_>, args: &TaskArgs, implement: bool) -> Result<Status> {
    let mut session = open_project(orch, &args.project)?;
    let task = match args.task.or_else(|| session.state().next_task()) {
        Some(t) => t,
        None => return Err(usage(format!("{} has no unsettled task", args.project))),
    };
    let result = if implement {
        session.implement(task)
    } else {
        session.generate_tests(task)
    };
    // A finished last task settles the project.
    if result.is_ok() && session.state().next_task().is_none() && !session.state().state.is_terminal() {
        session.finish()?;
    }
    let state = session.state().state.clone();
    match result {
        Ok(status) => {
            println!("{}: task {task} {status:?}", args.project);
            let ok = match status {
                TaskStatus::Failed { .. } => false,
                _ => !matches!(state, StageState::Failed { .. }),
            };
            Ok(if ok { Status::Ok } else { Status::StageFailed })
        }
        Err(e) => {
            eprintln!("{}: task {task}: {e}", args.project);
            Ok(Status::StageFailed)
        }
    }
}

fn print_adaptations(project: &str, adaptations: &[Adaptation]) {
    for a in adaptations {
        let verdict = if a.accepted { "accepted".to_string() } else { format!("rejected ({})", a.reason.as_deref().unwrap_or("")) };
        let solve = match &a.solve {
            Some(s) => format!(", solve reward {}", s.reward.map_or("-".to_string(), |r| r.to_string())),
            None => String::new(),
        };
        println!("{project}: {} {} {verdict}{solve}", a.kind, a.instance);
    }
}

fn cmd_adapt(config: &PipelineConfig, orch: &Orchestrator<'_>, project: &str) -> Result<Status> {
    let mut session = open_project(orch, project)?;
    match adapt_project(&mut session, &config.adapt) {
        Ok(done) => {
            print_adaptations(project, &done);
            Ok(Status::Ok)
        }
        Err(e) => {
            eprintln!("{project}: adaptation failed: {e}");
            Ok(Status::StageFailed)
        }
    }
}

fn load_store(path: &Path) -> Result<Vec<Trajectory>> {
    if !path.is_dir() {
        return Err(usage(format!("trajectory store {} not found", path.display())));
    }
    let store = TrajectoryStore::open(path)?;
    Ok(store.load_all()?)
}

fn cmd_stats(path: &Path, json: Option<&Path>) -> Result<Status> {
    let all = load_store(path)?;
    let (manifest, total) = aggregate(&all, &TrajectoryFilter::all()).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<(String, _)> = vec![("all".to_string(), total)];
    for kind in TrajectoryKind::ALL {
        if let Ok((_, agg)) = aggregate(&all, &TrajectoryFilter::all().with_kinds([kind])) {
            rows.push((kind.to_string(), agg));
        }
    }
    if let Ok((_, agg)) = aggregate(&all, &TrajectoryFilter::default_sft()) {
        rows.push(("sft".to_string(), agg));
    }
    let named: Vec<(&str, _)> = rows.iter().map(|(n, a)| (n.as_str(), a)).collect();
    print!("{}", render_table(&named));
    if let Some(out) = json {
        write_pretty(out, &manifest)?;
    }
    Ok(Status::Ok)
}

fn write_pretty(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_export(path: &Path, args: &ExportArgs) -> Result<Status> {
    let all = load_store(path)?;
    let filter = if args.all { TrajectoryFilter::all() } else { TrajectoryFilter::default_sft() };
    let file = fs::File::create(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let mut writer = BufWriter::new(file);
    let n = export_sft(&all, &filter, &mut writer)?;
    writer.flush()?;
    let manifest_path = args.manifest.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".manifest.json");
        PathBuf::from(p)
    });
    match aggregate(&all, &filter) {
        Ok((manifest, _)) => write_pretty(&manifest_path, &manifest)?,
        Err(_) => eprintln!("no trajectories match; manifest not written"),
    }
    println!("exported {n} trajectories to {}", args.out.display());
    Ok(Status::Ok)
}

/// Per-project summary written to `run.json`.
#[derive(serde::Serialize)]
struct ProjectSummary {
    project: String,
    state: StageState,
    rewards: BTreeMap<TaskId, u8>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    adaptations: Vec<Adaptation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn build_project(config: &PipelineConfig, orch: &Orchestrator<'_>, proposal: &ProjectProposal, adapt: bool) -> ProjectSummary {
    let project = project_id(proposal);
    let mut summary = ProjectSummary {
        project: project.clone(),
        state: StageState::Proposed,
        rewards: BTreeMap::new(),
        adaptations: Vec::new(),
        error: None,
    };
    let artifact: ProjectArtifact = match orch.run_pipeline(proposal) {
        Ok(a) => a,
        Err(e) => {
            summary.error = Some(e.to_string());
            return summary;
        }
    };
    summary.state = artifact.state.clone();
    summary.rewards = artifact.rewards.iter().map(|r| (r.task_id, r.reward)).collect();
    if adapt && artifact.state == StageState::Completed {
        let result = orch.open(&project).map_err(anyhow::Error::from).and_then(|mut s| Ok(adapt_project(&mut s, &config.adapt)?));
        match result {
            Ok(done) => summary.adaptations = done,
            Err(e) => summary.error = Some(format!("adaptation: {e:#}")),
        }
    }
    summary
}

fn cmd_run_all(config: &PipelineConfig, services: &Services, args: &RunAllArgs) -> Result<Status> {
    let proposals = propose(config, services, args.projects)?;
    if proposals.is_empty() {
        bail!("no usable proposals were generated");
    }
    let proposals: Vec<ProjectProposal> = proposals.into_iter().take(args.projects).collect();
    let adapt = !args.no_adapt;
    let workers = config.pipeline.parallel.clamp(1, proposals.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<ProjectSummary>>> = Mutex::new((0..proposals.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                let orch = services.orchestrator(config);
                loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(proposal) = proposals.get(i) else { break };
                    let summary = build_project(config, &orch, proposal, adapt);
                    results.lock().expect("results lock")[i] = Some(summary);
                }
            });
        }
    });
    let summaries: Vec<ProjectSummary> = results.into_inner().expect("results lock").into_iter().flatten().collect();
    let mut failed = false;
    for s in &summaries {
        let rewards: Vec<String> = s.rewards.iter().map(|(t, r)| format!("{t}={r}")).collect();
        println!("{}: {:?} rewards [{}]", s.project, s.state, rewards.join(", "));
        print_adaptations(&s.project, &s.adaptations);
        if let Some(e) = &s.error {
            eprintln!("{}: {e}", s.project);
        }
        failed |= s.state != StageState::Completed || s.error.is_some();
    }
    write_pretty(&config.pipeline.output_dir.join("run.json"), &summaries)?;
    Ok(if failed { Status::StageFailed } else { Status::Ok })
}
