//! Workspace persistence. Scenes, scenarios, reports and sweep results are
//! stored under the hex SHA-256 of their content. Rule packs are versioned:
//! each edit writes `packs/<id>/v<N>.rules` and moves `HEAD`. Every mutation
//! appends one line to `audit.jsonl`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use scenekg_core::ingestion::FusionConfig;
use scenekg_core::rules::{
    format_pack, format_rule, parse_pack, parse_rule_with, Diagnostic, RuleError, RulePack, SHIPPED_PACK,
};
use scenekg_core::taxonomy::TBox;
use scenekg_core::validator::SweepReport;

use crate::engine::{self, Loaded};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt entry {path}: {message}")]
    Corrupt { path: String, message: String },
    #[error("{kind} `{id}` not found")]
    NotFound { kind: &'static str, id: String },
    #[error("{kind} `{id}` already exists")]
    Exists { kind: &'static str, id: String },
    #[error("pack `{pack}` is at version {current}, edit was based on {base}")]
    VersionConflict { pack: String, current: u64, base: u64 },
    #[error("invalid {what}: `{value}`")]
    InvalidId { what: &'static str, value: String },
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error("rule `{rule}` has lint warnings")]
    Lint { rule: String, diagnostics: Vec<Diagnostic> },
    #[error("{0}")]
    Invalid(String),
}

// ---------------------------------------------------------------------------
// Backends

/// Byte storage keyed by `/`-separated relative paths.
pub trait Backend: Send + Sync {
    fn read(&self, path: &str) -> Result<Option<Vec<u8>>, StoreError>;
    /// Replaces the entry atomically.
    fn write(&self, path: &str, bytes: &[u8]) -> Result<(), StoreError>;
    fn remove(&self, path: &str) -> Result<(), StoreError>;
    /// Entry names directly under `dir`, sorted.
    fn list(&self, dir: &str) -> Result<Vec<String>, StoreError>;
    fn append(&self, path: &str, bytes: &[u8]) -> Result<(), StoreError>;
}

#[derive(Debug, Default)]
pub struct MemoryBackend {
    entries: RwLock<BTreeMap<String, Vec<u8>>>,
}

impl Backend for MemoryBackend {
    fn read(&self, path: &str) -> Result<Option<Vec<u8>>, StoreError> {
        Ok(self.entries.read().unwrap().get(path).cloned())
    }

    fn write(&self, path: &str, bytes: &[u8]) -> Result<(), StoreError> {
        self.entries.write().unwrap().insert(path.to_owned(), bytes.to_vec());
        Ok(())
    }

    fn remove(&self, path: &str) -> Result<(), StoreError> {
        self.entries.write().unwrap().remove(path);
        Ok(())
    }

    fn list(&self, dir: &str) -> Result<Vec<String>, StoreError> {
        let prefix = format!("{}/", dir.trim_end_matches('/'));
        let entries = self.entries.read().unwrap();
        let mut names: Vec<String> = entries
            .keys()
            .filter_map(|k| k.strip_prefix(&prefix))
            .map(|rest| rest.split('/').next().unwrap_or(rest).to_owned())
            .collect();
        names.dedup();
        Ok(names)
    }

    fn append(&self, path: &str, bytes: &[u8]) -> Result<(), StoreError> {
        self.entries
            .write()
            .unwrap()
            .entry(path.to_owned())
            .or_default()
            .extend_from_slice(bytes);
        Ok(())
    }
}

/// Directory tree rooted at `root`. Writes go through a temporary file and
/// a rename.
#[derive(Debug, Clone)]
pub struct FsBackend {
    root: PathBuf,
}

impl FsBackend {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn full(&self, path: &str) -> PathBuf {
        self.root.join(path)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl Backend for FsBackend {
    fn read(&self, path: &str) -> Result<Option<Vec<u8>>, StoreError> {
        let p = self.full(path);
        match fs::read(&p) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&p)(e)),
        }
    }

    fn write(&self, path: &str, bytes: &[u8]) -> Result<(), StoreError> {
        let p = self.full(path);
        let dir = p.parent().expect("entries live under the root");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let tmp = p.with_extension(format!("tmp{}", std::process::id()));
        fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &p).map_err(io_err(&p))
    }

    fn remove(&self, path: &str) -> Result<(), StoreError> {
        let p = self.full(path);
        match fs::remove_file(&p) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(io_err(&p)(e)),
            _ => Ok(()),
        }
    }

    fn list(&self, dir: &str) -> Result<Vec<String>, StoreError> {
        let p = self.full(dir);
        let rd = match fs::read_dir(&p) {
            Ok(rd) => rd,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&p)(e)),
        };
        let mut names = Vec::new();
        for entry in rd {
            let entry = entry.map_err(io_err(&p))?;
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
        names.sort();
        Ok(names)
    }

    fn append(&self, path: &str, bytes: &[u8]) -> Result<(), StoreError> {
        let p = self.full(path);
        let dir = p.parent().expect("entries live under the root");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&p)
            .map_err(io_err(&p))?;
        f.write_all(bytes).map_err(io_err(&p))?;
        f.sync_data().map_err(io_err(&p))
    }
}

// ---------------------------------------------------------------------------
// Records

pub const AUDIT_LOG: &str = "audit.jsonl";
pub const DEFAULT_PACK: &str = "cp_core";

pub fn content_id(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn check_content_id(id: &str) -> Result<(), StoreError> {
    if id.len() == 64 && id.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()) {
        Ok(())
    } else {
        Err(StoreError::InvalidId {
            what: "content id",
            value: id.to_owned(),
        })
    }
}

pub fn check_name(what: &'static str, id: &str) -> Result<(), StoreError> {
    if !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        Ok(())
    } else {
        Err(StoreError::InvalidId {
            what,
            value: id.to_owned(),
        })
    }
}

/// A stored scene or scenario with the configuration it was ingested under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub id: String,
    pub config: FusionConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(flatten)]
    pub target: Loaded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReportMeta {
    pub id: String,
    pub scene_id: String,
    pub pack_id: String,
    pub pack_version: String,
}

pub fn report_id(scene_id: &str, pack_id: &str, pack_version: &str) -> String {
    content_id(format!("report\n{scene_id}\n{pack_id}\n{pack_version}").as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredPack {
    pub version: u64,
    pub pack: RulePack,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SweepRequest {
    pub scene_id: String,
    #[serde(default = "default_pack")]
    pub pack_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pack_version: Option<u64>,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occluder: Option<String>,
    pub from: f64,
    pub to: f64,
    pub step: f64,
    pub oracle: String,
}

fn default_pack() -> String {
    DEFAULT_PACK.to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepJob {
    pub id: String,
    pub state: JobState,
    pub request: SweepRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<SweepReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", rename_all_fields = "camelCase")]
pub enum AuditAction {
    CreateScene { id: String },
    CreateScenario { id: String },
    CreatePack { pack: String, version: u64, text: String },
    ReplacePack { pack: String, version: u64, text: String },
    PutRule { pack: String, version: u64, rule: String, label: String, text: String },
    DeleteRule { pack: String, version: u64, rule: String },
    DeletePack { pack: String, version: u64 },
    CreateReport { id: String, scene_id: String, pack_id: String, pack_version: String },
    CreateSweep { id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub at: String,
    pub actor: String,
    #[serde(flatten)]
    pub action: AuditAction,
}

/// Rebuilds the live rule packs from the audit trail alone.
pub fn replay_packs(records: &[AuditRecord], tbox: &TBox) -> Result<BTreeMap<String, RulePack>, StoreError> {
    let mut packs: BTreeMap<String, RulePack> = BTreeMap::new();
    for r in records {
        match &r.action {
            AuditAction::CreatePack { pack, version, text } | AuditAction::ReplacePack { pack, version, text } => {
                packs.insert(pack.clone(), stamp(parse_pack(text, tbox)?, pack, *version));
            }
            AuditAction::PutRule {
                pack,
                version,
                rule,
                label,
                text,
            } => {
                let p = packs.get_mut(pack).ok_or_else(|| StoreError::Corrupt {
                    path: AUDIT_LOG.into(),
                    message: format!("record {} edits unknown pack {pack}", r.seq),
                })?;
                upsert(p, parse_rule_with(rule.as_str(), label.as_str(), text, tbox)?);
                p.version = version.to_string();
            }
            AuditAction::DeleteRule { pack, version, rule } => {
                if let Some(p) = packs.get_mut(pack) {
                    p.rules.retain(|x| &x.id != rule);
                    p.version = version.to_string();
                }
            }
            AuditAction::DeletePack { pack, .. } => {
                packs.remove(pack);
            }
            _ => {}
        }
    }
    Ok(packs)
}

fn stamp(mut pack: RulePack, id: &str, version: u64) -> RulePack {
    pack.id = id.to_owned();
    pack.version = version.to_string();
    pack
}

fn upsert(pack: &mut RulePack, rule: scenekg_core::rules::Rule) {
    match pack.rules.iter_mut().find(|r| r.id == rule.id) {
        Some(slot) => *slot = rule,
        None => pack.rules.push(rule),
    }
}

// ---------------------------------------------------------------------------
// Store

/// Whether a content-addressed put created a new entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Put {
    Created,
    Existing,
}

pub struct WorkspaceStore {
    backend: Box<dyn Backend>,
    tbox: Arc<TBox>,
    /// One writer per key; readers never take these.
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    /// Serialises audit appends and owns the next sequence number.
    audit_seq: Mutex<u64>,
}

impl WorkspaceStore {
    /// Opens a store. An empty store is seeded with the shipped pack.
    pub fn open(backend: Box<dyn Backend>, tbox: TBox) -> Result<Self, StoreError> {
        let seq = match backend.read(AUDIT_LOG)? {
            Some(b) => b.split(|&c| c == b'\n').filter(|l| !l.is_empty()).count() as u64,
            None => 0,
        };
        let store = Self {
            backend,
            tbox: Arc::new(tbox),
            key_locks: Mutex::new(HashMap::new()),
            audit_seq: Mutex::new(seq),
        };
        // A custom taxonomy may not cover the shipped pack's names; such a
        // store starts without packs.
        if seq == 0 && store.backend.list("packs")?.is_empty() {
            if let Ok(pack) = parse_pack(SHIPPED_PACK, &store.tbox) {
                store.create_pack(DEFAULT_PACK, &format_pack(&pack), "system")?;
            }
        }
        Ok(store)
    }

    pub fn in_memory(tbox: TBox) -> Result<Self, StoreError> {
        Self::open(Box::new(MemoryBackend::default()), tbox)
    }

    pub fn on_disk(root: impl Into<PathBuf>, tbox: TBox) -> Result<Self, StoreError> {
        Self::open(Box::new(FsBackend::new(root)), tbox)
    }

    pub fn tbox(&self) -> &Arc<TBox> {
        &self.tbox
    }

    fn lock(&self, key: &str) -> Arc<Mutex<()>> {
        self.key_locks
            .lock()
            .unwrap()
            .entry(key.to_owned())
            .or_default()
            .clone()
    }

    fn record(&self, actor: &str, action: AuditAction) -> Result<(), StoreError> {
        let mut seq = self.audit_seq.lock().unwrap();
        let rec = AuditRecord {
            seq: *seq + 1,
            at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            actor: actor.to_owned(),
            action,
        };
        let mut line = serde_json::to_vec(&rec).expect("audit record serialises");
        line.push(b'\n');
        self.backend.append(AUDIT_LOG, &line)?;
        *seq += 1;
        Ok(())
    }

    pub fn audit(&self) -> Result<Vec<AuditRecord>, StoreError> {
        let bytes = self.backend.read(AUDIT_LOG)?.unwrap_or_default();
        let text = String::from_utf8_lossy(&bytes);
        text.lines()
            .filter(|l| !l.is_empty())
            .map(|l| {
                serde_json::from_str(l).map_err(|e| StoreError::Corrupt {
                    path: AUDIT_LOG.into(),
                    message: e.to_string(),
                })
            })
            .collect()
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, path: &str) -> Result<Option<T>, StoreError> {
        match self.backend.read(path)? {
            None => Ok(None),
            Some(b) => serde_json::from_slice(&b).map(Some).map_err(|e| StoreError::Corrupt {
                path: path.to_owned(),
                message: e.to_string(),
            }),
        }
    }

    // -- scenes and scenarios ------------------------------------------------

    /// Stores an ingested scene or scenario under the hash of its content
    /// and configuration.
    pub fn put_target(
        &self,
        target: Loaded,
        config: FusionConfig,
        warnings: Vec<String>,
        actor: &str,
    ) -> Result<(TargetRecord, Put), StoreError> {
        let dir = dir_of(&target);
        let id = content_id(&serde_json::to_vec(&(&config, &target)).expect("target serialises"));
        let record = TargetRecord {
            id: id.clone(),
            config,
            warnings,
            target,
        };
        let path = format!("{dir}/{id}.json");
        let lock = self.lock(&path);
        let _guard = lock.lock().unwrap();
        if let Some(existing) = self.read_json::<TargetRecord>(&path)? {
            return Ok((existing, Put::Existing));
        }
        self.backend.write(&path, engine::pretty(&record).as_bytes())?;
        let action = match record.target {
            Loaded::Scene(_) => AuditAction::CreateScene { id },
            Loaded::Scenario(_) => AuditAction::CreateScenario { id },
        };
        self.record(actor, action)?;
        Ok((record, Put::Created))
    }

    pub fn scene(&self, id: &str) -> Result<TargetRecord, StoreError> {
        self.target_in("scenes", "scene", id)
    }

    pub fn scenario(&self, id: &str) -> Result<TargetRecord, StoreError> {
        self.target_in("scenarios", "scenario", id)
    }

    /// A scene or a scenario, whichever holds `id`.
    pub fn target(&self, id: &str) -> Result<TargetRecord, StoreError> {
        match self.scene(id) {
            Err(StoreError::NotFound { .. }) => self.scenario(id).map_err(|_| StoreError::NotFound {
                kind: "scene",
                id: id.to_owned(),
            }),
            other => other,
        }
    }

    fn target_in(&self, dir: &str, kind: &'static str, id: &str) -> Result<TargetRecord, StoreError> {
        check_content_id(id).map_err(|_| StoreError::NotFound { kind, id: id.to_owned() })?;
        self.read_json(&format!("{dir}/{id}.json"))?
            .ok_or_else(|| StoreError::NotFound { kind, id: id.to_owned() })
    }

    pub fn list_ids(&self, dir: &str) -> Result<Vec<String>, StoreError> {
        Ok(self
            .backend
            .list(dir)?
            .into_iter()
            .filter_map(|n| n.strip_suffix(".json").map(str::to_owned))
            .filter(|n| check_content_id(n).is_ok())
            .collect())
    }

    // -- rule packs ------------------------------------------------------------

    fn head(&self, pack: &str) -> Result<Option<u64>, StoreError> {
        let path = format!("packs/{pack}/HEAD");
        match self.backend.read(&path)? {
            None => Ok(None),
            Some(b) => String::from_utf8_lossy(&b)
                .trim()
                .parse()
                .map(Some)
                .map_err(|_| StoreError::Corrupt {
                    path,
                    message: "HEAD is not a version number".into(),
                }),
        }
    }

    fn last_version(&self, pack: &str) -> Result<u64, StoreError> {
        Ok(self
            .backend
            .list(&format!("packs/{pack}"))?
            .iter()
            .filter_map(|n| n.strip_prefix('v')?.strip_suffix(".rules")?.parse::<u64>().ok())
            .max()
            .unwrap_or(0))
    }

    pub fn pack_ids(&self) -> Result<Vec<String>, StoreError> {
        let mut out = Vec::new();
        for id in self.backend.list("packs")? {
            if self.head(&id)?.is_some() {
                out.push(id);
            }
        }
        Ok(out)
    }

    /// The head version, or a specific one (deleted packs keep their history).
    pub fn pack(&self, id: &str, version: Option<u64>) -> Result<StoredPack, StoreError> {
        check_name("pack id", id)?;
        let not_found = || StoreError::NotFound {
            kind: "pack",
            id: match version {
                Some(v) => format!("{id}@{v}"),
                None => id.to_owned(),
            },
        };
        let v = match version {
            Some(v) => v,
            None => self.head(id)?.ok_or_else(not_found)?,
        };
        let path = format!("packs/{id}/v{v}.rules");
        let bytes = self.backend.read(&path)?.ok_or_else(not_found)?;
        let text = String::from_utf8(bytes).map_err(|e| StoreError::Corrupt {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let pack = parse_pack(&text, &self.tbox).map_err(|e| StoreError::Corrupt {
            path,
            message: e.to_string(),
        })?;
        Ok(StoredPack { version: v, pack, text })
    }

    fn write_version(&self, id: &str, version: u64, pack: RulePack) -> Result<StoredPack, StoreError> {
        let pack = stamp(pack, id, version);
        let text = format_pack(&pack);
        self.backend.write(&format!("packs/{id}/v{version}.rules"), text.as_bytes())?;
        self.backend.write(&format!("packs/{id}/HEAD"), format!("{version}\n").as_bytes())?;
        Ok(StoredPack { version, pack, text })
    }

    fn check_base(&self, id: &str, base: u64) -> Result<StoredPack, StoreError> {
        let current = self.pack(id, None)?;
        if current.version != base {
            return Err(StoreError::VersionConflict {
                pack: id.to_owned(),
                current: current.version,
                base,
            });
        }
        Ok(current)
    }

    pub fn create_pack(&self, id: &str, text: &str, actor: &str) -> Result<StoredPack, StoreError> {
        check_name("pack id", id)?;
        let lock = self.lock(&format!("packs/{id}"));
        let _guard = lock.lock().unwrap();
        if self.head(id)?.is_some() {
            return Err(StoreError::Exists {
                kind: "pack",
                id: id.to_owned(),
            });
        }
        let pack = parse_pack(text, &self.tbox)?;
        let version = self.last_version(id)? + 1;
        let stored = self.write_version(id, version, pack)?;
        self.record(
            actor,
            AuditAction::CreatePack {
                pack: id.to_owned(),
                version,
                text: stored.text.clone(),
            },
        )?;
        Ok(stored)
    }

    pub fn replace_pack(&self, id: &str, text: &str, base: u64, actor: &str) -> Result<StoredPack, StoreError> {
        check_name("pack id", id)?;
        let lock = self.lock(&format!("packs/{id}"));
        let _guard = lock.lock().unwrap();
        self.check_base(id, base)?;
        let pack = parse_pack(text, &self.tbox)?;
        let stored = self.write_version(id, base + 1, pack)?;
        self.record(
            actor,
            AuditAction::ReplacePack {
                pack: id.to_owned(),
                version: base + 1,
                text: stored.text.clone(),
            },
        )?;
        Ok(stored)
    }

    pub fn delete_pack(&self, id: &str, base: u64, actor: &str) -> Result<(), StoreError> {
        check_name("pack id", id)?;
        let lock = self.lock(&format!("packs/{id}"));
        let _guard = lock.lock().unwrap();
        self.check_base(id, base)?;
        self.backend.remove(&format!("packs/{id}/HEAD"))?;
        self.record(
            actor,
            AuditAction::DeletePack {
                pack: id.to_owned(),
                version: base,
            },
        )
    }

    /// Parses, lints and stores one rule. Lint warnings reject the edit
    /// unless `accept_warnings` is set. With `create_only`, an existing rule
    /// id is a conflict.
    #[allow(clippy::too_many_arguments)]
    pub fn put_rule(
        &self,
        pack_id: &str,
        rule_id: &str,
        label: &str,
        text: &str,
        base: u64,
        accept_warnings: bool,
        create_only: bool,
        actor: &str,
    ) -> Result<(StoredPack, Vec<Diagnostic>), StoreError> {
        check_name("pack id", pack_id)?;
        check_name("rule id", rule_id)?;
        if label.contains(['\n', '\r']) {
            return Err(StoreError::Invalid("rule label must be a single line".into()));
        }
        let lock = self.lock(&format!("packs/{pack_id}"));
        let _guard = lock.lock().unwrap();
        let current = self.check_base(pack_id, base)?;
        if create_only && current.pack.get(rule_id).is_some() {
            return Err(StoreError::Exists {
                kind: "rule",
                id: rule_id.to_owned(),
            });
        }
        let rule = parse_rule_with(rule_id, label, text, &self.tbox)?;
        let diagnostics = scenekg_core::rules::lint_rule(&rule, &self.tbox);
        let warnings = diagnostics
            .iter()
            .any(|d| d.severity == scenekg_core::rules::Severity::Warning);
        if warnings && !accept_warnings {
            return Err(StoreError::Lint {
                rule: rule_id.to_owned(),
                diagnostics,
            });
        }
        let canonical = format_rule(&rule);
        let mut pack = current.pack;
        upsert(&mut pack, rule);
        let stored = self.write_version(pack_id, base + 1, pack)?;
        self.record(
            actor,
            AuditAction::PutRule {
                pack: pack_id.to_owned(),
                version: base + 1,
                rule: rule_id.to_owned(),
                label: label.to_owned(),
                text: canonical,
            },
        )?;
        Ok((stored, diagnostics))
    }

    pub fn delete_rule(&self, pack_id: &str, rule_id: &str, base: u64, actor: &str) -> Result<StoredPack, StoreError> {
        check_name("pack id", pack_id)?;
        let lock = self.lock(&format!("packs/{pack_id}"));
        let _guard = lock.lock().unwrap();
        let mut pack = self.check_base(pack_id, base)?.pack;
        if pack.get(rule_id).is_none() {
            return Err(StoreError::NotFound {
                kind: "rule",
                id: rule_id.to_owned(),
            });
        }
        pack.rules.retain(|r| r.id != rule_id);
        let stored = self.write_version(pack_id, base + 1, pack)?;
        self.record(
            actor,
            AuditAction::DeleteRule {
                pack: pack_id.to_owned(),
                version: base + 1,
                rule: rule_id.to_owned(),
            },
        )?;
        Ok(stored)
    }

    // -- reports ---------------------------------------------------------------

    /// Reasons over a stored target with a stored pack version (head when
    /// `version` is `None`). Repeating the call returns the same report.
    pub fn report(
        &self,
        scene_id: &str,
        pack_id: &str,
        version: Option<u64>,
        actor: &str,
    ) -> Result<(ReportMeta, Put), StoreError> {
        let target = self.target(scene_id)?;
        let pack = self.pack(pack_id, version)?;
        let meta = ReportMeta {
            id: report_id(scene_id, pack_id, &pack.pack.version),
            scene_id: scene_id.to_owned(),
            pack_id: pack_id.to_owned(),
            pack_version: pack.pack.version.clone(),
        };
        let path = format!("reports/{}.json", meta.id);
        let lock = self.lock(&path);
        let _guard = lock.lock().unwrap();
        if self.backend.read(&path)?.is_some() {
            return Ok((meta, Put::Existing));
        }
        let report = engine::reason(&pack.pack, &target.target, &self.tbox);
        self.backend
            .write(&format!("reports/{}.meta.json", meta.id), engine::pretty(&meta).as_bytes())?;
        self.backend.write(&path, report.to_json().as_bytes())?;
        self.record(
            actor,
            AuditAction::CreateReport {
                id: meta.id.clone(),
                scene_id: meta.scene_id.clone(),
                pack_id: meta.pack_id.clone(),
                pack_version: meta.pack_version.clone(),
            },
        )?;
        Ok((meta, Put::Created))
    }

    /// The report document exactly as the reasoner rendered it.
    pub fn report_bytes(&self, id: &str) -> Result<Vec<u8>, StoreError> {
        let not_found = || StoreError::NotFound {
            kind: "report",
            id: id.to_owned(),
        };
        check_content_id(id).map_err(|_| not_found())?;
        self.backend.read(&format!("reports/{id}.json"))?.ok_or_else(not_found)
    }

    pub fn report_meta(&self, id: &str) -> Result<ReportMeta, StoreError> {
        check_content_id(id).map_err(|_| StoreError::NotFound {
            kind: "report",
            id: id.to_owned(),
        })?;
        self.read_json(&format!("reports/{id}.meta.json"))?
            .ok_or_else(|| StoreError::NotFound {
                kind: "report",
                id: id.to_owned(),
            })
    }

    // -- sweeps ----------------------------------------------------------------

    pub fn sweep_job(&self, id: &str) -> Result<Option<SweepJob>, StoreError> {
        if check_content_id(id).is_err() {
            return Ok(None);
        }
        self.read_json(&format!("sweeps/{id}.json"))
    }

    pub fn save_sweep_job(&self, job: &SweepJob) -> Result<(), StoreError> {
        check_content_id(&job.id)?;
        self.backend
            .write(&format!("sweeps/{}.json", job.id), engine::pretty(job).as_bytes())
    }

    pub fn record_sweep(&self, id: &str, actor: &str) -> Result<(), StoreError> {
        self.record(actor, AuditAction::CreateSweep { id: id.to_owned() })
    }
}

fn dir_of(target: &Loaded) -> &'static str {
    match target {
        Loaded::Scene(_) => "scenes",
        Loaded::Scenario(_) => "scenarios",
    }
}
