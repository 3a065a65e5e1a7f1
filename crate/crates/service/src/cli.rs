//! Command-line front end. Exit codes: 0 success, 1 findings present
//! (`reason`, `lint`, `fixtures --check`), 2 errors. Errors go to stderr as
//! `file:line: message` where a line is known.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scenekg_core::fixtures::{corpus_hash, generate_fixtures, HASH_FILE};
use scenekg_core::ingestion::FusionConfig;
use scenekg_core::model::QName;
use scenekg_core::owlxml::{import_owl, import_scenario, ImportMode, OwlError};
use scenekg_core::par::Execution;
use scenekg_core::rules::{format_pack, RulePack};
use scenekg_core::taxonomy::{check_tbox_coherence, parse_taxonomy, TBox, TaxonomyIssue};
use scenekg_core::validator::{parse_oracle, SweepSpec};

use crate::api::{self, AppState};
use crate::engine::{self, EngineError, Loaded, OwlArtifact, SweepInputs};
use crate::store::{StoreError, WorkspaceStore};

pub const WORKSPACE_ENV: &str = "CAIRO_WORKSPACE";
pub const SCENARIO_MANIFEST: &str = "scenario.manifest";

#[derive(Debug, Parser)]
#[command(name = "scenekg", version, about = "Scene knowledge graphs and critical-phenomenon rules")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest a detection or scenario document into a scene graph.
    Ingest(IngestArgs),
    /// Run a rule pack and the consistency checks over a scene or scenario.
    Reason(ReasonArgs),
    /// Write a scene (or scenario) with its T-Box and rules as OWL/XML.
    ExportOwl(ExportArgs),
    /// Read an OWL/XML document (or scenario manifest) back.
    ImportOwl(ImportArgs),
    /// Sweep a target's occlusion rate and diff the CP reports.
    Sweep(SweepArgs),
    /// Lint a rule pack against a taxonomy.
    Lint(LintArgs),
    /// Serve the HTTP API over a workspace directory.
    Serve(ServeArgs),
    /// Write (or check) the fixture corpus.
    Fixtures(FixturesArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Taxonomy file; the shipped six-layer taxonomy when omitted.
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// FusionConfig JSON; defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[command(flatten)]
    pub common: Common,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReasonArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Rule pack file; the shipped pack when omitted.
    #[arg(long)]
    pub pack: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub pack: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
    /// Output file, or a directory for scenarios.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// An OWL/XML document or a scenario manifest.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Skip constructs outside the supported subset instead of failing.
    #[arg(long)]
    pub lenient: bool,
    /// Write the imported scene or scenario as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the embedded rule pack.
    #[arg(long)]
    pub pack_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub target: String,
    /// Defaults to the nearer individual with the largest overlap.
    #[arg(long)]
    pub occluder: Option<String>,
    #[arg(long)]
    pub from: f64,
    #[arg(long)]
    pub to: f64,
    #[arg(long)]
    pub step: f64,
    /// `passthrough`, `table:LO:HI,...` or `exec:COMMAND`.
    #[arg(long, default_value = "passthrough")]
    pub oracle: String,
    #[arg(long)]
    pub pack: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Evaluate sweep points one after another.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct LintArgs {
    #[arg(long)]
    pub pack: PathBuf,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Store root; falls back to $CAIRO_WORKSPACE, then `./workspace`.
    #[arg(long)]
    pub workspace: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Sweeps allowed to run at once.
    #[arg(long, default_value_t = 2)]
    pub workers: usize,
    /// Accept `exec:` oracles in sweep requests.
    #[arg(long)]
    pub allow_exec_oracle: bool,
}

#[derive(Debug, Args)]
pub struct FixturesArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "fixtures")]
    pub out: PathBuf,
    /// Compare the directory with a fresh generation instead of writing.
    #[arg(long)]
    pub check: bool,
}

/// Everything that ends a command with exit code 2.
#[derive(Debug)]
pub struct Failure(pub Vec<String>);

impl Failure {
    fn at(path: &Path, line: Option<usize>, message: impl std::fmt::Display) -> Self {
        match line {
            Some(l) => Failure(vec![format!("{}:{l}: {message}", path.display())]),
            None => Failure(vec![format!("{}: {message}", path.display())]),
        }
    }

    fn engine(path: &Path, e: EngineError) -> Self {
        let line = e.line();
        let message = match &e {
            // The position is already in the prefix.
            EngineError::Json { message, .. } => message.clone(),
            _ => e.to_string(),
        };
        Failure::at(path, line, message)
    }
}

type CmdResult = Result<u8, Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::at(path, None, e))
}

fn write(path: &Path, content: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::at(dir, None, e))?;
    }
    fs::write(path, content).map_err(|e| Failure::at(path, None, e))
}

fn emit(out: Option<&Path>, content: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write(p, content),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn load_taxonomy(path: Option<&Path>) -> Result<TBox, Failure> {
    let Some(path) = path else {
        return Ok(TBox::shipped());
    };
    parse_taxonomy(&read(path)?).map_err(|e| {
        Failure(
            e.issues
                .iter()
                .map(|issue| match issue {
                    TaxonomyIssue::Parse { line, message } => format!("{}:{line}: {message}", path.display()),
                    TaxonomyIssue::UnknownName { line, name } => {
                        format!("{}:{line}: unknown name `{name}`", path.display())
                    }
                    other => format!("{}: {other}", path.display()),
                })
                .collect(),
        )
    })
}

fn load_config(path: Option<&Path>) -> Result<FusionConfig, Failure> {
    match path {
        None => Ok(FusionConfig::default()),
        Some(p) => engine::load_config(&read(p)?).map_err(|e| Failure::engine(p, e)),
    }
}

fn load_pack(path: Option<&Path>, tbox: &TBox) -> Result<RulePack, Failure> {
    match path {
        None => Ok(RulePack::shipped(tbox)),
        Some(p) => engine::load_pack(&read(p)?, tbox).map_err(|e| Failure::engine(p, e)),
    }
}

fn load_target(path: &Path, cfg: &FusionConfig, tbox: &TBox, exec: Execution) -> Result<Loaded, Failure> {
    let (loaded, warnings) = engine::load(&read(path)?, cfg, tbox, exec).map_err(|e| Failure::engine(path, e))?;
    for w in warnings {
        eprintln!("{}: warning: {w}", path.display());
    }
    Ok(loaded)
}

fn ingest(a: &IngestArgs) -> CmdResult {
    let tbox = load_taxonomy(a.common.taxonomy.as_deref())?;
    let cfg = load_config(a.common.config.as_deref())?;
    let json = match load_target(&a.scene, &cfg, &tbox, Execution::Parallel)? {
        Loaded::Scene(s) => engine::pretty(&s),
        Loaded::Scenario(s) => engine::pretty(&s),
    };
    emit(a.out.as_deref(), &json)?;
    Ok(0)
}

fn reason(a: &ReasonArgs) -> CmdResult {
    let tbox = load_taxonomy(a.common.taxonomy.as_deref())?;
    let cfg = load_config(a.common.config.as_deref())?;
    let pack = load_pack(a.pack.as_deref(), &tbox)?;
    let target = load_target(&a.scene, &cfg, &tbox, Execution::Parallel)?;
    let report = engine::reason(&pack, &target, &tbox);
    emit(a.out.as_deref(), &report.to_json())?;
    for r in report.rules.iter().filter(|r| !r.matches.is_empty()) {
        eprintln!("{}: {} match(es)", r.id, r.matches.len());
    }
    for f in &report.consistency {
        eprintln!("finding: {}", serde_json::to_string(f).expect("finding serialises"));
    }
    Ok(u8::from(report.has_findings()))
}

fn export(a: &ExportArgs) -> CmdResult {
    let tbox = load_taxonomy(a.common.taxonomy.as_deref())?;
    let cfg = load_config(a.common.config.as_deref())?;
    let pack = load_pack(a.pack.as_deref(), &tbox)?;
    let target = load_target(&a.scene, &cfg, &tbox, Execution::Parallel)?;
    match engine::export(&tbox, &target, &pack).map_err(|e| Failure::engine(&a.scene, e))? {
        OwlArtifact::Scene(xml) => write(&a.out, &xml)?,
        OwlArtifact::Scenario(bundle) => {
            write(&a.out.join(SCENARIO_MANIFEST), &bundle.manifest)?;
            for (name, doc) in &bundle.documents {
                write(&a.out.join(name), doc)?;
            }
        }
    }
    Ok(0)
}

fn is_xml(bytes: &[u8]) -> bool {
    let text = String::from_utf8_lossy(bytes);
    text.trim_start_matches('\u{feff}').trim_start().starts_with('<')
}

fn owl_failure(path: &Path, e: OwlError) -> Failure {
    Failure::at(path, None, e)
}

fn import(a: &ImportArgs) -> CmdResult {
    let mode = if a.lenient { ImportMode::Lenient } else { ImportMode::Strict };
    let bytes = fs::read(&a.input).map_err(|e| Failure::at(&a.input, None, e))?;
    let (json, pack, warnings, summary) = if is_xml(&bytes) {
        let imp = import_owl(&bytes, mode).map_err(|e| owl_failure(&a.input, e))?;
        let summary = format!(
            "scene {}: {} individuals, {} assertions, {} rules",
            imp.scene.id,
            imp.scene.individuals.len(),
            imp.scene.assertions.len(),
            imp.pack.rules.len()
        );
        (engine::pretty(&imp.scene), imp.pack, imp.warnings, summary)
    } else {
        let manifest = String::from_utf8_lossy(&bytes).into_owned();
        let dir = a.input.parent().unwrap_or(Path::new(".")).to_path_buf();
        let load = |name: &str| {
            if name.contains(['/', '\\']) || name.starts_with('.') {
                return Err(OwlError::Malformed(format!("document name `{name}` leaves the manifest directory")));
            }
            fs::read(dir.join(name)).map_err(|e| OwlError::Malformed(format!("{name}: {e}")))
        };
        let imp = import_scenario(&manifest, load, mode).map_err(|e| owl_failure(&a.input, e))?;
        let summary = format!(
            "scenario {}: {} scenes, {} tracks, {} rules",
            imp.scenario.id,
            imp.scenario.scenes.len(),
            imp.scenario.tracks.len(),
            imp.pack.rules.len()
        );
        (engine::pretty(&imp.scenario), imp.pack, imp.warnings, summary)
    };
    for w in &warnings {
        eprintln!("{}: warning: {w}", a.input.display());
    }
    if let Some(out) = &a.out {
        write(out, &json)?;
    }
    if let Some(out) = &a.pack_out {
        write(out, &format_pack(&pack))?;
    }
    println!("{summary}");
    Ok(0)
}

fn sweep(a: &SweepArgs) -> CmdResult {
    let tbox = load_taxonomy(a.common.taxonomy.as_deref())?;
    let cfg = load_config(a.common.config.as_deref())?;
    let pack = load_pack(a.pack.as_deref(), &tbox)?;
    let oracle = parse_oracle(&a.oracle).map_err(|e| Failure(vec![format!("--oracle: {e}")]))?;
    let name = |flag: &str, s: &str| QName::parse(s).map_err(|e| Failure(vec![format!("{flag} `{s}`: {e}")]));
    let spec = SweepSpec {
        target: name("--target", &a.target)?,
        occluder: a.occluder.as_deref().map(|s| name("--occluder", s)).transpose()?,
        from: a.from,
        to: a.to,
        step: a.step,
    };
    let exec = if a.sequential { Execution::Sequential } else { Execution::Parallel };
    let target = load_target(&a.scene, &cfg, &tbox, exec)?;
    let inputs = SweepInputs {
        tbox: &tbox,
        pack: &pack,
        cfg: &cfg,
        oracle: oracle.as_ref(),
        exec,
    };
    let report = engine::sweep(&target, &spec, &inputs).map_err(|e| Failure::engine(&a.scene, e))?;
    emit(a.out.as_deref(), &report.to_json())?;
    for p in report.points.iter().filter(|p| p.error.is_some()) {
        eprintln!("{}: {}", p.value, p.error.as_deref().unwrap_or_default());
    }
    Ok(0)
}

fn lint(a: &LintArgs) -> CmdResult {
    let tbox = load_taxonomy(a.taxonomy.as_deref())?;
    let pack = load_pack(Some(&a.pack), &tbox)?;
    let mut findings = 0;
    if let Some(t) = &a.taxonomy {
        for w in check_tbox_coherence(&tbox) {
            println!("{}: warning: {w}", t.display());
            findings += 1;
        }
    }
    for (rule, d) in engine::lint_pack(&pack, &tbox) {
        println!("{}: rule {rule}: {d}", a.pack.display());
        findings += 1;
    }
    Ok(u8::from(findings > 0))
}

fn serve(a: &ServeArgs) -> CmdResult {
    let root = a
        .workspace
        .clone()
        .or_else(|| std::env::var_os(WORKSPACE_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("workspace"));
    let tbox = load_taxonomy(a.taxonomy.as_deref())?;
    let store = WorkspaceStore::on_disk(&root, tbox).map_err(|e: StoreError| Failure::at(&root, None, e))?;
    let state = AppState::new(store, a.workers, a.allow_exec_oracle);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure(vec![format!("runtime: {e}")]))?;
    rt.block_on(api::serve(a.addr, state))
        .map_err(|e| Failure(vec![format!("{}: {e}", a.addr)]))?;
    Ok(0)
}

fn fixtures(a: &FixturesArgs) -> CmdResult {
    let tbox = TBox::shipped();
    let pack = RulePack::shipped(&tbox);
    let files = generate_fixtures(a.seed, &tbox, &pack).map_err(|e| Failure(vec![format!("fixtures: {e}")]))?;
    if !a.check {
        for (path, content) in &files {
            write(&a.out.join(path), content)?;
        }
        println!("{} files, corpus {}", files.len(), corpus_hash(&files));
        return Ok(0);
    }
    let mut on_disk = BTreeMap::new();
    for path in files.keys() {
        if let Ok(content) = fs::read_to_string(a.out.join(path)) {
            on_disk.insert(path.clone(), content);
        }
    }
    let mut differing = 0;
    for (path, content) in &files {
        if on_disk.get(path) != Some(content) {
            println!("{}: differs from seed {}", a.out.join(path).display(), a.seed);
            differing += 1;
        }
    }
    let recorded = on_disk.get(HASH_FILE).map(|s| s.trim().to_owned());
    if recorded.as_deref() != Some(corpus_hash(&on_disk).as_str()) {
        println!("{}: hash does not match the files", a.out.join(HASH_FILE).display());
        differing += 1;
    }
    Ok(u8::from(differing > 0))
}

pub fn run(cli: &Cli) -> ExitCode {
    let result = match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Reason(a) => reason(a),
        Command::ExportOwl(a) => export(a),
        Command::ImportOwl(a) => import(a),
        Command::Sweep(a) => sweep(a),
        Command::Lint(a) => lint(a),
        Command::Serve(a) => serve(a),
        Command::Fixtures(a) => fixtures(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure(lines)) => {
            for l in lines {
                eprintln!("error: {l}");
            }
            ExitCode::from(2)
        }
    }
}
