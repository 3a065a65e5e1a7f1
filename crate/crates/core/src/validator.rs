//! Counterfactual edits of a scene and occlusion sweeps.
//!
//! A [`Modification`] changes one feature of one individual. The sweep
//! rescales an occluder so that a target reaches a sequence of occlusion
//! rates, asks a [`DetectorOracle`] what a detector would still see, rebuilds
//! the graph and diffs the CP report against the unmodified baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingestion::{is_nearer, overlap_fraction, rebuild_assertions, FusionConfig};
use crate::model::{BBox, DataValue, QName, Scene};
use crate::par::{self, Execution};
use crate::reasoner::{run_cp_suite, CpReport, Match, SuiteOptions, Target};
use crate::rules::RulePack;
use crate::taxonomy::{RoleKind, TBox};

/// Largest factor an occluder may be scaled by.
pub const MAX_SCALE: f64 = 4.0;
pub const BISECTION_STEPS: usize = 20;
/// Accepted gap between requested and achieved occlusion rate.
pub const RATE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidatorError {
    #[error("individual {0} is not in the scene")]
    TargetMissing(QName),
    #[error("nothing in front of {0} overlaps it; name an occluder")]
    NoOccluder(QName),
    #[error("occlusion {requested} of {target} is unreachable; at most {max_achievable:.4} by scaling {occluder}")]
    UnreachableOcclusion {
        target: QName,
        occluder: QName,
        requested: f64,
        max_achievable: f64,
    },
    #[error("invalid modification: {0}")]
    InvalidModification(String),
    #[error("invalid sweep range: {0}")]
    InvalidRange(String),
    #[error("invalid oracle spec: {0}")]
    OracleSpec(String),
    #[error("oracle failed: {0}")]
    Oracle(String),
    #[error("reports come from different packs ({before} vs {after})")]
    PackMismatch { before: String, after: String },
}

// ---------------------------------------------------------------------------
// Modifications

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeChange {
    DominantColor([u8; 3]),
    Role { role: QName, value: DataValue },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Modification {
    Attribute {
        individual: QName,
        change: AttributeChange,
    },
    /// Rescales `occluder` (default: the individual in front of `individual`
    /// covering most of it) about its centre until `individual` is covered
    /// by the requested fraction.
    Scale {
        individual: QName,
        occlusion_rate: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        occluder: Option<QName>,
    },
}

/// Result of solving for an occluder scale factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleSolution {
    pub factor: f64,
    pub achieved: f64,
}

fn rate_at(target: &BBox, occluder: &BBox, factor: f64) -> f64 {
    overlap_fraction(target, &occluder.scaled_about_center(factor))
}

/// Bisection on the scale factor. Coverage grows monotonically with the
/// factor, and the search always returns the upper end of the final
/// bracket, so a larger request never yields a smaller factor.
pub fn solve_scale(target: &BBox, occluder: &BBox, rate: f64) -> Result<ScaleSolution, f64> {
    if rate <= 0.0 {
        return Ok(ScaleSolution {
            factor: 0.0,
            achieved: rate_at(target, occluder, 0.0),
        });
    }
    let max = rate_at(target, occluder, MAX_SCALE);
    if max + RATE_TOLERANCE < rate {
        return Err(max);
    }
    if max < rate {
        return Ok(ScaleSolution {
            factor: MAX_SCALE,
            achieved: max,
        });
    }
    let (mut lo, mut hi) = (0.0, MAX_SCALE);
    for _ in 0..BISECTION_STEPS {
        let mid = (lo + hi) / 2.0;
        if rate_at(target, occluder, mid) >= rate {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(ScaleSolution {
        factor: hi,
        achieved: rate_at(target, occluder, hi),
    })
}

/// Fraction of `id` covered by the individual in front of it that covers
/// it most, as ingestion computes `occlusion_rate`.
pub fn occlusion_rate(scene: &Scene, id: &QName) -> Option<f64> {
    let target = scene.individual(id)?;
    Some(
        scene
            .individuals
            .iter()
            .filter(|o| &o.id != id && is_nearer(&o.segment, &target.segment))
            .map(|o| overlap_fraction(&target.segment.bbox, &o.segment.bbox))
            .fold(0.0, f64::max),
    )
}

/// The individual in front of `id` with the largest overlap (ties by name).
pub fn main_occluder(scene: &Scene, id: &QName) -> Option<QName> {
    let target = scene.individual(id)?;
    scene
        .individuals
        .iter()
        .filter(|o| &o.id != id && is_nearer(&o.segment, &target.segment))
        .map(|o| (overlap_fraction(&target.segment.bbox, &o.segment.bbox), &o.id))
        .filter(|(f, _)| *f > 0.0)
        .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(a.1)))
        .map(|(_, q)| q.clone())
}

/// Copy of `scene` with the change applied to its individuals. Assertions
/// are left as they were; [`apply_and_rebuild`] recomputes them.
pub fn apply_modification(scene: &Scene, m: &Modification, tbox: &TBox) -> Result<Scene, ValidatorError> {
    apply_detailed(scene, m, tbox).map(|(s, _)| s)
}

fn apply_detailed(
    scene: &Scene,
    m: &Modification,
    tbox: &TBox,
) -> Result<(Scene, Option<ScaleSolution>), ValidatorError> {
    let mut out = scene.clone();
    match m {
        Modification::Attribute { individual, change } => {
            let ind = out
                .individual_mut(individual)
                .ok_or_else(|| ValidatorError::TargetMissing(individual.clone()))?;
            match change {
                AttributeChange::DominantColor(rgb) => ind.segment.dominant_color = Some(*rgb),
                AttributeChange::Role { role, value } => {
                    let def = tbox
                        .role(role)
                        .filter(|d| d.kind == RoleKind::Data)
                        .ok_or_else(|| ValidatorError::InvalidModification(format!("{role} is not a declared data role")))?;
                    if tbox.derived_spec(role).is_some() {
                        return Err(ValidatorError::InvalidModification(format!(
                            "{role} is derived; change the features it is computed from"
                        )));
                    }
                    if let Some(dt) = def.datatype() {
                        if !dt.admits(value) {
                            return Err(ValidatorError::InvalidModification(format!("{value} does not fit {role} ({dt})")));
                        }
                    }
                    ind.attributes.insert(role.clone(), value.clone());
                }
            }
            Ok((out, None))
        }
        Modification::Scale {
            individual,
            occlusion_rate,
            occluder,
        } => {
            let rate = *occlusion_rate;
            if !(0.0..=1.0).contains(&rate) {
                return Err(ValidatorError::InvalidModification(format!("occlusion rate {rate} outside [0, 1]")));
            }
            let target = scene
                .individual(individual)
                .ok_or_else(|| ValidatorError::TargetMissing(individual.clone()))?;
            let occ_id = match occluder {
                Some(o) => o.clone(),
                None => main_occluder(scene, individual).ok_or_else(|| ValidatorError::NoOccluder(individual.clone()))?,
            };
            if &occ_id == individual {
                return Err(ValidatorError::InvalidModification("an individual cannot occlude itself".into()));
            }
            let occ = scene
                .individual(&occ_id)
                .ok_or_else(|| ValidatorError::TargetMissing(occ_id.clone()))?;
            if target.segment.bbox.area() <= 0.0 {
                return Err(ValidatorError::InvalidModification(format!("{individual} has an empty box")));
            }
            let solution = solve_scale(&target.segment.bbox, &occ.segment.bbox, rate).map_err(|max| {
                ValidatorError::UnreachableOcclusion {
                    target: individual.clone(),
                    occluder: occ_id.clone(),
                    requested: rate,
                    max_achievable: max,
                }
            })?;
            let target_depth = target.segment.depth_hint;
            let target_seg = target.segment.clone();
            let o = out.individual_mut(&occ_id).expect("looked up above");
            let new_box = o.segment.bbox.scaled_about_center(solution.factor);
            o.segment.mask_area = (o.segment.mask_area * solution.factor * solution.factor).min(new_box.area());
            o.segment.bbox = new_box;
            // Keep the occluder in front: without depth hints the order
            // follows bottom edges, which rescaling moves.
            if rate > 0.0 && !is_nearer(&o.segment, &target_seg) {
                let t = target_depth.unwrap_or(1.0);
                o.segment.depth_hint = Some(if t > 0.0 { t / 2.0 } else { t - 1.0 });
                out.individual_mut(individual).expect("looked up above").segment.depth_hint = Some(t);
            }
            Ok((out, Some(solution)))
        }
    }
}

/// Applies the change and recomputes every assertion.
pub fn apply_and_rebuild(
    scene: &Scene,
    m: &Modification,
    cfg: &FusionConfig,
    tbox: &TBox,
) -> Result<Scene, ValidatorError> {
    let modified = apply_modification(scene, m, tbox)?;
    Ok(rebuild_assertions(&modified, cfg, tbox))
}

// ---------------------------------------------------------------------------
// Oracles

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub detected: bool,
    pub confidence: f64,
}

/// Stand-in for a detector: decides which individuals of a (modified) scene
/// would still be detected.
pub trait DetectorOracle: Send + Sync {
    fn describe(&self) -> String;
    fn detect(&self, scene: &Scene) -> Result<BTreeMap<QName, Verdict>, ValidatorError>;
}

/// Detects everything with the recorded confidence.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassthroughOracle;

impl DetectorOracle for PassthroughOracle {
    fn describe(&self) -> String {
        "passthrough".into()
    }

    fn detect(&self, scene: &Scene) -> Result<BTreeMap<QName, Verdict>, ValidatorError> {
        Ok(scene
            .individuals
            .iter()
            .map(|i| {
                (
                    i.id.clone(),
                    Verdict {
                        detected: true,
                        confidence: i.segment.confidence,
                    },
                )
            })
            .collect())
    }
}

/// Detects an individual iff its occlusion rate lies in one of the closed
/// intervals (widened by [`RATE_TOLERANCE`]).
#[derive(Debug, Clone, PartialEq)]
pub struct TableOracle {
    pub intervals: Vec<(f64, f64)>,
}

impl TableOracle {
    /// `"0:0.05,0.30:0.60"`
    pub fn parse(spec: &str) -> Result<Self, ValidatorError> {
        let bad = |m: String| ValidatorError::OracleSpec(m);
        let mut intervals = Vec::new();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (lo, hi) = part
                .split_once(':')
                .ok_or_else(|| bad(format!("`{part}` is not lo:hi")))?;
            let lo: f64 = lo.trim().parse().map_err(|_| bad(format!("`{lo}` is not a number")))?;
            let hi: f64 = hi.trim().parse().map_err(|_| bad(format!("`{hi}` is not a number")))?;
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(bad(format!("interval [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1")));
            }
            intervals.push((lo, hi));
        }
        if intervals.is_empty() {
            return Err(bad("no intervals".into()));
        }
        Ok(Self { intervals })
    }

    pub fn admits(&self, rate: f64) -> bool {
        self.intervals
            .iter()
            .any(|(lo, hi)| rate >= lo - RATE_TOLERANCE && rate <= hi + RATE_TOLERANCE)
    }
}

impl DetectorOracle for TableOracle {
    fn describe(&self) -> String {
        let parts: Vec<String> = self.intervals.iter().map(|(a, b)| format!("{a}:{b}")).collect();
        format!("table:{}", parts.join(","))
    }

    fn detect(&self, scene: &Scene) -> Result<BTreeMap<QName, Verdict>, ValidatorError> {
        Ok(scene
            .individuals
            .iter()
            .map(|i| {
                let rate = occlusion_rate(scene, &i.id).unwrap_or(0.0);
                let detected = self.admits(rate);
                (
                    i.id.clone(),
                    Verdict {
                        detected,
                        confidence: if detected { i.segment.confidence } else { 0.0 },
                    },
                )
            })
            .collect())
    }
}

/// Runs a command per query: the scene JSON goes to its standard input and
/// it answers with one `<individual> <0|1> <confidence>` line per individual.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessOracle {
    pub program: String,
    pub args: Vec<String>,
}

impl ProcessOracle {
    pub fn parse(command: &str) -> Result<Self, ValidatorError> {
        let mut words = command.split_whitespace().map(str::to_owned);
        let program = words
            .next()
            .ok_or_else(|| ValidatorError::OracleSpec("empty command".into()))?;
        Ok(Self {
            program,
            args: words.collect(),
        })
    }
}

pub fn parse_verdicts(scene: &Scene, output: &str) -> Result<BTreeMap<QName, Verdict>, ValidatorError> {
    let mut out = BTreeMap::new();
    for (n, line) in output.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| ValidatorError::Oracle(format!("line {}: {m}: `{line}`", n + 1));
        let [name, flag, conf] = line.split_whitespace().collect::<Vec<_>>()[..] else {
            return Err(bad("expected `<individual> <0|1> <confidence>`"));
        };
        let id = QName::parse(name).map_err(|_| bad("bad individual name"))?;
        if scene.individual(&id).is_none() {
            return Err(bad("unknown individual"));
        }
        let detected = match flag {
            "1" => true,
            "0" => false,
            _ => return Err(bad("detected flag must be 0 or 1")),
        };
        let confidence: f64 = conf.parse().map_err(|_| bad("confidence is not a number"))?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(bad("confidence outside [0, 1]"));
        }
        if out.insert(id, Verdict { detected, confidence }).is_some() {
            return Err(bad("individual listed twice"));
        }
    }
    let missing: Vec<String> = scene
        .individuals
        .iter()
        .filter(|i| !out.contains_key(&i.id))
        .map(|i| i.id.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ValidatorError::Oracle(format!("no verdict for {}", missing.join(", "))));
    }
    Ok(out)
}

impl DetectorOracle for ProcessOracle {
    fn describe(&self) -> String {
        let mut s = format!("exec:{}", self.program);
        for a in &self.args {
            s.push(' ');
            s.push_str(a);
        }
        s
    }

    fn detect(&self, scene: &Scene) -> Result<BTreeMap<QName, Verdict>, ValidatorError> {
        let fail = |e: std::io::Error| ValidatorError::Oracle(format!("{}: {e}", self.program));
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(fail)?;
        let input = serde_json::to_vec(scene).expect("scene serialises");
        {
            let mut stdin = child.stdin.take().expect("piped");
            // A process that exits without reading is reported through its
            // status below rather than as a broken pipe.
            let _ = stdin.write_all(&input);
        }
        let output = child.wait_with_output().map_err(fail)?;
        if !output.status.success() {
            return Err(ValidatorError::Oracle(format!(
                "{} exited with {}: {}",
                self.program,
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        parse_verdicts(scene, &String::from_utf8_lossy(&output.stdout))
    }
}

/// `passthrough`, `table:<lo:hi,...>` or `exec:<command>`.
pub fn parse_oracle(spec: &str) -> Result<Box<dyn DetectorOracle>, ValidatorError> {
    if spec == "passthrough" {
        Ok(Box::new(PassthroughOracle))
    } else if let Some(t) = spec.strip_prefix("table:") {
        Ok(Box::new(TableOracle::parse(t)?))
    } else if let Some(c) = spec.strip_prefix("exec:") {
        Ok(Box::new(ProcessOracle::parse(c)?))
    } else {
        Err(ValidatorError::OracleSpec(format!(
            "`{spec}`: expected passthrough, table:SPEC or exec:CMD"
        )))
    }
}

/// Drops missed individuals and carries the oracle's confidences over.
pub fn apply_verdicts(scene: &Scene, verdicts: &BTreeMap<QName, Verdict>) -> Scene {
    let mut out = scene.clone();
    out.individuals.retain(|i| verdicts.get(&i.id).is_none_or(|v| v.detected));
    for ind in &mut out.individuals {
        if let Some(v) = verdicts.get(&ind.id) {
            ind.segment.confidence = v.confidence;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Report deltas

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleDelta {
    pub rule_id: String,
    pub added: Vec<String>,
    pub removed: Vec<String>,
    pub unchanged: usize,
}

/// Rules whose matches changed; rules without changes are omitted.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReportDelta {
    pub rules: Vec<RuleDelta>,
}

impl ReportDelta {
    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rule(&self, id: &str) -> Option<&RuleDelta> {
        self.rules.iter().find(|r| r.rule_id == id)
    }
}

/// `?a=car_1, ?b=lane_2`
pub fn match_key(m: &Match) -> String {
    let parts: Vec<String> = m.bindings.iter().map(|(k, v)| format!("{k}={v}")).collect();
    parts.join(", ")
}

pub fn diff_reports(before: &CpReport, after: &CpReport) -> Result<ReportDelta, ValidatorError> {
    let ident = |r: &CpReport| format!("{} {}", r.pack_id, r.pack_version);
    let ids = |r: &CpReport| r.rules.iter().map(|x| x.id.clone()).collect::<BTreeSet<_>>();
    if ident(before) != ident(after) || ids(before) != ids(after) {
        return Err(ValidatorError::PackMismatch {
            before: ident(before),
            after: ident(after),
        });
    }
    let mut rules = Vec::new();
    for b in &before.rules {
        let a = after.rule(&b.id).expect("same rule ids");
        let old: BTreeSet<String> = b.matches.iter().map(match_key).collect();
        let new: BTreeSet<String> = a.matches.iter().map(match_key).collect();
        let added: Vec<String> = new.difference(&old).cloned().collect();
        let removed: Vec<String> = old.difference(&new).cloned().collect();
        if added.is_empty() && removed.is_empty() {
            continue;
        }
        rules.push(RuleDelta {
            rule_id: b.id.clone(),
            added,
            removed,
            unchanged: old.intersection(&new).count(),
        });
    }
    rules.sort_by(|x, y| x.rule_id.cmp(&y.rule_id));
    Ok(ReportDelta { rules })
}

// ---------------------------------------------------------------------------
// Sweeps

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub target: QName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occluder: Option<QName>,
    pub from: f64,
    pub to: f64,
    pub step: f64,
}

impl SweepSpec {
    /// Grid values `from, from + step, ...` up to `to`, rounded to 1e-9 so
    /// that `0.05 * 6` prints as `0.3`.
    pub fn values(&self) -> Result<Vec<f64>, ValidatorError> {
        let bad = |m: &str| Err(ValidatorError::InvalidRange(m.to_owned()));
        if !(self.from.is_finite() && self.to.is_finite() && self.step.is_finite()) {
            return bad("bounds and step must be finite");
        }
        if self.from >= self.to {
            return bad("`from` must be below `to`");
        }
        if self.step <= 0.0 {
            return bad("step must be positive");
        }
        if !(0.0..=1.0).contains(&self.from) || !(0.0..=1.0).contains(&self.to) {
            return bad("occlusion rates lie in [0, 1]");
        }
        let n = ((self.to - self.from) / self.step + 1e-9).floor() as usize;
        Ok((0..=n)
            .map(|i| ((self.from + i as f64 * self.step) * 1e9).round() / 1e9)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub achieved: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detected: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    /// Rules with at least one match on the modified scene.
    #[serde(default)]
    pub fired: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<ReportDelta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub scene_id: QName,
    pub target: QName,
    pub occluder: QName,
    pub parameter: String,
    pub oracle: String,
    pub pack_id: String,
    pub pack_version: String,
    /// SHA-256 of the baseline report's JSON.
    pub baseline_report: String,
    pub baseline_fired: Vec<String>,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("sweep report serialises");
        s.push('\n');
        s
    }

    /// Values at which the oracle detected the target.
    pub fn detected_values(&self) -> Vec<f64> {
        self.points
            .iter()
            .filter(|p| p.detected == Some(true))
            .map(|p| p.value)
            .collect()
    }
}

pub fn report_digest(report: &CpReport) -> String {
    hex::encode(Sha256::digest(report.to_json().as_bytes()))
}

pub struct SweepContext<'a> {
    pub tbox: &'a TBox,
    pub pack: &'a RulePack,
    pub cfg: &'a FusionConfig,
    pub oracle: &'a dyn DetectorOracle,
    pub exec: Execution,
}

fn suite(ctx: &SweepContext<'_>, scene: &Scene) -> CpReport {
    let opts = SuiteOptions {
        exec: Execution::Sequential,
        ..SuiteOptions::default()
    };
    run_cp_suite(ctx.pack, Target::Scene(scene), ctx.tbox, opts)
}

/// Sweeps the target's occlusion rate over `spec`. The baseline is the
/// scene as given; each point starts again from it. A point that cannot be
/// reached records its error and the sweep carries on.
pub fn run_sweep(scene: &Scene, spec: &SweepSpec, ctx: &SweepContext<'_>) -> Result<SweepReport, ValidatorError> {
    let values = spec.values()?;
    if scene.individual(&spec.target).is_none() {
        return Err(ValidatorError::TargetMissing(spec.target.clone()));
    }
    let occluder = match &spec.occluder {
        Some(o) => {
            if scene.individual(o).is_none() {
                return Err(ValidatorError::TargetMissing(o.clone()));
            }
            o.clone()
        }
        None => main_occluder(scene, &spec.target).ok_or_else(|| ValidatorError::NoOccluder(spec.target.clone()))?,
    };
    let baseline = suite(ctx, scene);

    let points = par::map(ctx.exec, &values, |&value| {
        let m = Modification::Scale {
            individual: spec.target.clone(),
            occlusion_rate: value,
            occluder: Some(occluder.clone()),
        };
        let mut point = SweepPoint {
            value,
            scale_factor: None,
            achieved: None,
            detected: None,
            confidence: None,
            fired: Vec::new(),
            delta: None,
            error: None,
        };
        let (modified, solution) = match apply_detailed(scene, &m, ctx.tbox) {
            Ok(x) => x,
            Err(e) => {
                point.error = Some(e.to_string());
                return point;
            }
        };
        let solution = solution.expect("scale modifications report their solution");
        point.scale_factor = Some(solution.factor);
        point.achieved = Some(solution.achieved);
        let verdicts = match ctx.oracle.detect(&modified) {
            Ok(v) => v,
            Err(e) => {
                point.error = Some(e.to_string());
                return point;
            }
        };
        let v = verdicts.get(&spec.target).copied().unwrap_or(Verdict {
            detected: false,
            confidence: 0.0,
        });
        point.detected = Some(v.detected);
        point.confidence = Some(v.confidence);
        let seen = rebuild_assertions(&apply_verdicts(&modified, &verdicts), ctx.cfg, ctx.tbox);
        let after = suite(ctx, &seen);
        point.fired = after.fired().into_iter().map(str::to_owned).collect();
        match diff_reports(&baseline, &after) {
            Ok(d) => point.delta = Some(d),
            Err(e) => point.error = Some(e.to_string()),
        }
        point
    });

    Ok(SweepReport {
        scene_id: scene.id.clone(),
        target: spec.target.clone(),
        occluder,
        parameter: "occlusion_rate".into(),
        oracle: ctx.oracle.describe(),
        pack_id: ctx.pack.id.clone(),
        pack_version: ctx.pack.version.clone(),
        baseline_report: report_digest(&baseline),
        baseline_fired: baseline.fired().into_iter().map(str::to_owned).collect(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::{ingest_scene, parse_detection_document};

    fn q(s: &str) -> QName {
        QName::parse(s).unwrap()
    }

    /// A car with a stop sign on it, partly hidden by a truck in front.
    fn street() -> (TBox, Scene) {
        let tbox = TBox::shipped();
        let doc = r#"{"scene_id": "traf:street", "time_position": 0, "frame_ref": "street.png",
          "records": [
            {"detector": "d", "label_text": "car", "bbox": [0.30, 0.40, 0.20, 0.20], "confidence": 0.9, "depth_hint": 20},
            {"detector": "d", "label_text": "truck", "bbox": [0.45, 0.35, 0.20, 0.30], "confidence": 0.85, "depth_hint": 10},
            {"detector": "d", "label_text": "stop sign", "bbox": [0.32, 0.42, 0.04, 0.04], "confidence": 0.7, "depth_hint": 20},
            {"detector": "d", "label_text": "pedestrian", "bbox": [0.80, 0.50, 0.05, 0.15], "confidence": 0.8,
             "dominant_color": [200, 40, 40]}
          ]}"#;
        let (doc, _) = parse_detection_document(doc).unwrap();
        (tbox.clone(), ingest_scene(&doc, &FusionConfig::default(), &tbox).unwrap().scene)
    }

    fn closed_form_overlap(t: &BBox, o: &BBox) -> f64 {
        let ix = (t.x + t.w).min(o.x + o.w) - t.x.max(o.x);
        let iy = (t.y + t.h).min(o.y + o.h) - t.y.max(o.y);
        ix.max(0.0) * iy.max(0.0) / (t.w * t.h)
    }

    #[test]
    fn attribute_change_touches_one_field() {
        let (tbox, scene) = street();
        let ped = q("pedestrian_4");
        let before = scene.digest();
        let m = Modification::Attribute {
            individual: ped.clone(),
            change: AttributeChange::DominantColor([128, 128, 128]),
        };
        let changed = apply_modification(&scene, &m, &tbox).unwrap();
        assert_eq!(scene.digest(), before);
        let mut expected = scene.clone();
        expected.individual_mut(&ped).unwrap().segment.dominant_color = Some([128, 128, 128]);
        assert_eq!(changed, expected);

        let undo = Modification::Attribute {
            individual: ped,
            change: AttributeChange::DominantColor([200, 40, 40]),
        };
        assert_eq!(apply_modification(&changed, &undo, &tbox).unwrap(), scene);
    }

    #[test]
    fn attribute_role_changes_are_checked() {
        let (tbox, scene) = street();
        let set = |role: &str, value: DataValue| Modification::Attribute {
            individual: q("car_1"),
            change: AttributeChange::Role { role: q(role), value },
        };
        let ok = apply_modification(&scene, &set("phys:has_distance", DataValue::Decimal(12.0)), &tbox).unwrap();
        assert_eq!(ok.individual(&q("car_1")).unwrap().attributes[&q("phys:has_distance")], DataValue::Decimal(12.0));
        for bad in [
            set("phys:has_distance", DataValue::Boolean(true)),
            set("perc:has_high_occlusion", DataValue::Boolean(true)),
            set("phys:is_near", DataValue::Integer(1)),
        ] {
            assert!(matches!(apply_modification(&scene, &bad, &tbox), Err(ValidatorError::InvalidModification(_))));
        }
        let missing = Modification::Attribute {
            individual: q("ghost"),
            change: AttributeChange::DominantColor([0, 0, 0]),
        };
        assert_eq!(apply_modification(&scene, &missing, &tbox), Err(ValidatorError::TargetMissing(q("ghost"))));
    }

    #[test]
    fn scale_hits_requested_rate() {
        let (tbox, scene) = street();
        let car = q("car_1");
        assert_eq!(main_occluder(&scene, &car), Some(q("truck_2")));
        for rate in [0.05, 0.25, 0.40, 0.75, 1.0] {
            let m = Modification::Scale {
                individual: car.clone(),
                occlusion_rate: rate,
                occluder: None,
            };
            let s = apply_modification(&scene, &m, &tbox).unwrap();
            let t = s.individual(&car).unwrap().segment.bbox;
            let o = s.individual(&q("truck_2")).unwrap().segment.bbox;
            assert!((closed_form_overlap(&t, &o) - rate).abs() <= RATE_TOLERANCE, "rate {rate}");
            let rebuilt = rebuild_assertions(&s, &FusionConfig::default(), &tbox);
            let recorded = rebuilt
                .assertions
                .iter()
                .find_map(|a| match a {
                    crate::model::Assertion::Role(r) if r.subject == car && r.role == q("perc:occlusion_rate") => {
                        match &r.target {
                            crate::model::RoleTarget::Literal(v) => v.as_f64(),
                            _ => None,
                        }
                    }
                    _ => None,
                })
                .unwrap();
            assert!((recorded - rate).abs() <= RATE_TOLERANCE, "recorded {recorded} for {rate}");
        }
    }

    #[test]
    fn scale_to_zero_removes_occlusion() {
        let (tbox, scene) = street();
        let occluded = |s: &Scene| {
            s.assertions
                .iter()
                .any(|a| a.key() == "O|phys:is_occluded_by|car_1|truck_2")
        };
        assert!(occluded(&scene));
        let m = Modification::Scale {
            individual: q("car_1"),
            occlusion_rate: 0.0,
            occluder: None,
        };
        let s = apply_and_rebuild(&scene, &m, &FusionConfig::default(), &tbox).unwrap();
        assert!(!occluded(&s));
    }

    #[test]
    fn unreachable_rate_reports_maximum() {
        let target = BBox::new(0.0, 0.0, 1.0, 1.0);
        let occ = BBox::new(0.45, 0.45, 0.1, 0.1);
        let max = solve_scale(&target, &occ, 0.9).unwrap_err();
        assert!((max - 0.16).abs() < 1e-9, "{max}");
    }

    #[test]
    fn table_oracle_parses_and_widens() {
        let t = TableOracle::parse("0:0.05,0.30:0.60").unwrap();
        assert_eq!(t.intervals, vec![(0.0, 0.05), (0.30, 0.60)]);
        assert!(t.admits(0.0505) && t.admits(0.6004) && !t.admits(0.1) && !t.admits(0.25));
        for bad in ["", "0.5", "0.6:0.3", "0:1.5", "a:b"] {
            assert!(TableOracle::parse(bad).is_err(), "{bad}");
        }
        assert!(parse_oracle("nope").is_err());
        assert_eq!(parse_oracle("table:0:0.05,0.3:0.6").unwrap().describe(), "table:0:0.05,0.3:0.6");
    }

    #[test]
    fn sweep_detection_bands() {
        let (tbox, scene) = street();
        let pack = RulePack::shipped(&tbox);
        let cfg = FusionConfig::default();
        let oracle = TableOracle::parse("0:0.05,0.30:0.60").unwrap();
        let ctx = SweepContext {
            tbox: &tbox,
            pack: &pack,
            cfg: &cfg,
            oracle: &oracle,
            exec: Execution::Parallel,
        };
        let spec = SweepSpec {
            target: q("car_1"),
            occluder: None,
            from: 0.05,
            to: 0.80,
            step: 0.05,
        };
        let report = run_sweep(&scene, &spec, &ctx).unwrap();
        assert_eq!(report.points.len(), 16);
        assert_eq!(
            report.detected_values(),
            vec![0.05, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6]
        );
        let seq = SweepContext {
            exec: Execution::Sequential,
            ..ctx
        };
        assert_eq!(run_sweep(&scene, &spec, &seq).unwrap().to_json(), report.to_json());
    }

    #[test]
    fn sweep_flags_high_occlusion_only_above_threshold() {
        let (tbox, scene) = street();
        let pack = RulePack::shipped(&tbox);
        let cfg = FusionConfig::default();
        let ctx = SweepContext {
            tbox: &tbox,
            pack: &pack,
            cfg: &cfg,
            oracle: &PassthroughOracle,
            exec: Execution::Parallel,
        };
        let spec = SweepSpec {
            target: q("car_1"),
            occluder: Some(q("truck_2")),
            from: 0.05,
            to: 0.80,
            step: 0.05,
        };
        let report = run_sweep(&scene, &spec, &ctx).unwrap();
        assert!(report.points.iter().all(|p| p.detected == Some(true)));
        for p in &report.points {
            let fired = p.delta.as_ref().unwrap().rule("CP_ADV_SIGN").is_some_and(|d| !d.added.is_empty());
            assert_eq!(fired, p.value >= 0.5, "at {}", p.value);
        }
    }

    #[test]
    fn report_diffs() {
        let (tbox, scene) = street();
        let pack = RulePack::shipped(&tbox);
        let opts = SuiteOptions::default();
        let base = run_cp_suite(&pack, Target::Scene(&scene), &tbox, opts);
        assert!(diff_reports(&base, &base).unwrap().is_empty());
        let mut other = base.clone();
        other.pack_id = "other".into();
        assert!(matches!(diff_reports(&base, &other), Err(ValidatorError::PackMismatch { .. })));
    }

    #[test]
    fn sweep_range_checks() {
        let spec = |from, to, step| SweepSpec {
            target: q("x"),
            occluder: None,
            from,
            to,
            step,
        };
        assert!(spec(0.5, 0.5, 0.1).values().is_err());
        assert!(spec(0.1, 0.5, 0.0).values().is_err());
        assert_eq!(spec(0.0, 0.2, 0.1).values().unwrap(), vec![0.0, 0.1, 0.2]);
    }

    #[test]
    fn verdict_lines() {
        let (_, scene) = street();
        let ok = "car_1 1 0.9\ntruck_2 0 0\nstop_sign_3 1 0.5\npedestrian_4 1 0.8\n";
        let v = parse_verdicts(&scene, ok).unwrap();
        assert!(!v[&q("truck_2")].detected);
        assert!(parse_verdicts(&scene, "car_1 1 0.9\n").is_err());
        assert!(parse_verdicts(&scene, &ok.replace("truck_2 0", "truck_2 2")).is_err());
    }

    #[cfg(unix)]
    #[test]
    fn process_oracle_round_trip() {
        let (_, scene) = street();
        let script = "cat > /dev/null; printf 'car_1 0 0.1\\ntruck_2 1 0.8\\nstop_sign_3 1 0.7\\npedestrian_4 1 0.8\\n'";
        let oracle = ProcessOracle {
            program: "sh".into(),
            args: vec!["-c".into(), script.into()],
        };
        let v = oracle.detect(&scene).unwrap();
        assert!(!v[&q("car_1")].detected);
        let failing = ProcessOracle::parse("false").unwrap();
        assert!(matches!(failing.detect(&scene), Err(ValidatorError::Oracle(_))));
    }

    fn small_box() -> impl proptest::strategy::Strategy<Value = BBox> {
        use proptest::strategy::Strategy;
        (0.0..0.8f64, 0.0..0.8f64, 0.02..0.2f64, 0.02..0.2f64).prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
    }

    proptest::proptest! {
        #[test]
        fn scale_is_monotone_and_within_tolerance(t in small_box(), o in small_box(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            match (solve_scale(&t, &o, lo), solve_scale(&t, &o, hi)) {
                (Ok(x), Ok(y)) => {
                    proptest::prop_assert!(x.factor <= y.factor);
                    for (s, r) in [(x, lo), (y, hi)] {
                        let covered = closed_form_overlap(&t, &o.scaled_about_center(s.factor));
                        proptest::prop_assert!((covered - s.achieved).abs() < 1e-9);
                        proptest::prop_assert!((s.achieved - r).abs() <= RATE_TOLERANCE, "asked {r}, got {}", s.achieved);
                    }
                }
                (Ok(_), Err(max)) => proptest::prop_assert!(max + RATE_TOLERANCE < hi),
                (Err(max), Ok(_)) => proptest::prop_assert!(false, "{lo} unreachable (max {max}) but {hi} is not"),
                (Err(_), Err(_)) => {}
            }
        }
    }
}
