//! Detection records → scene A-Box.
//!
//! The pipeline per frame is: fuse overlapping records into individuals,
//! assert their concepts and pass-through attributes, derive spatial
//! relations from the boxes, then materialise the closed-world properties the
//! taxonomy declares (`derived ...` lines). Every step is a pure function of
//! `(records, config, taxonomy)`, so frames can be ingested concurrently.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    canonicalize, Assertion, BBox, ConceptScore, DataValue, ModelError, QName, RoleTarget, Scenario,
    Scene, SceneIndividual, Segment,
};
use crate::par::{self, Execution};
use crate::taxonomy::{
    subsumption_closure, Datatype, DerivedDefinition, RoleKind, RoleRange, SubsumptionClosure, TBox,
    Threshold,
};
use crate::vocab::{nearest_color, Vocab};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed document: {0}")]
    Json(String),
    #[error("record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("invalid fusion config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IngestWarning {
    UnknownField { path: String, field: String },
    UnmappedLabel { record: usize, label: String },
    UndeclaredAttribute { record: usize, key: String },
    RejectedAttribute { record: usize, key: String, reason: String },
}

impl fmt::Display for IngestWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IngestWarning::UnknownField { path, field } => {
                write!(f, "{path}: unknown field `{field}` ignored")
            }
            IngestWarning::UnmappedLabel { record, label } => write!(
                f,
                "record {record}: label `{label}` has no concept mapping; using l4_d:Unknown_Object"
            ),
            IngestWarning::UndeclaredAttribute { record, key } => {
                write!(f, "record {record}: `{key}` is not a declared data role; dropped")
            }
            IngestWarning::RejectedAttribute { record, key, reason } => {
                write!(f, "record {record}: `{key}` dropped: {reason}")
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration

const DEFAULT_LABELS: &[(&str, &str)] = &[
    ("bicycle", "l4_d:Bicycle"),
    ("bus", "l4_d:Bus"),
    ("car", "l4_d:Passenger_Car"),
    ("crosswalk", "l1_c:Crossing_Site"),
    ("lane", "l1_c:Driveable_Lane"),
    ("license plate", "l4_d:License_Plate"),
    ("motorcycle", "l4_d:Motorcycle"),
    ("pedestrian", "l4_d:Pedestrian"),
    ("person", "l4_d:Pedestrian"),
    ("sidewalk", "l1_c:Sidewalk"),
    ("stop sign", "l4_d:Stop_Sign"),
    ("stroller", "l4_d:Stroller"),
    ("suv", "l4_d:SUV"),
    ("traffic light", "l4_d:Traffic_Light"),
    ("traffic sign", "l4_d:Traffic_Sign"),
    ("truck", "l4_d:Truck"),
    ("vehicle", "l4_d:Vehicle"),
    ("wheel", "l4_d:Vehicle_Wheel"),
];

/// Thresholds and label mapping for ingestion. All thresholds lie in `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub iou_merge_threshold: f64,
    pub label_map: BTreeMap<String, QName>,
    /// Fraction of the image diagonal (√2 in normalised units).
    pub near_threshold: f64,
    pub high_occlusion_threshold: f64,
    /// Fraction of a part's area that must lie inside the whole.
    pub part_of_containment: f64,
    pub track_iou_threshold: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            iou_merge_threshold: 0.5,
            label_map: DEFAULT_LABELS
                .iter()
                .map(|(l, c)| ((*l).to_owned(), QName::parse(c).expect("valid")))
                .collect(),
            near_threshold: 0.10,
            high_occlusion_threshold: 0.50,
            part_of_containment: 0.80,
            track_iou_threshold: 0.5,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        for (name, v) in [
            ("iou_merge_threshold", self.iou_merge_threshold),
            ("near_threshold", self.near_threshold),
            ("high_occlusion_threshold", self.high_occlusion_threshold),
            ("part_of_containment", self.part_of_containment),
            ("track_iou_threshold", self.track_iou_threshold),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(IngestError::Config(format!("{name} = {v} is outside (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        let cfg: FusionConfig =
            serde_json::from_str(text).map_err(|e| IngestError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn threshold(&self, t: Threshold) -> f64 {
        match t {
            Threshold::Value(v) => v,
            Threshold::HighOcclusion => self.high_occlusion_threshold,
        }
    }
}

// ---------------------------------------------------------------------------
// Documents

/// One upstream detection, as read from a scene document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub detector: String,
    pub label_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapped_concept: Option<QName>,
    /// `[x, y, w, h]`, normalised.
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_area: Option<f64>,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dominant_color: Option<[u8; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_hint: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, DataValue>,
}

impl DetectionRecord {
    pub fn bbox(&self) -> BBox {
        let [x, y, w, h] = self.bbox;
        BBox::new(x, y, w, h)
    }

    fn validate(&self, index: usize) -> Result<(), IngestError> {
        let bad = |reason: &str| {
            Err(IngestError::InvalidRecord {
                index,
                reason: reason.to_owned(),
            })
        };
        if !self.bbox().is_valid() {
            return bad("bbox must lie within the unit square");
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return bad("confidence must lie in [0, 1]");
        }
        if let Some(m) = self.mask_area {
            if !(m >= 0.0 && m <= self.bbox().area() + 1e-6) {
                return bad("mask_area must lie in [0, w·h]");
            }
        }
        if self.depth_hint.is_some_and(|d| !d.is_finite()) {
            return bad("depth_hint must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionDocument {
    pub scene_id: QName,
    pub time_position: f64,
    pub frame_ref: String,
    pub records: Vec<DetectionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDocument {
    pub scenario_id: QName,
    pub scenes: Vec<DetectionDocument>,
}

const SCENE_FIELDS: &[&str] = &["scene_id", "time_position", "frame_ref", "records"];
const RECORD_FIELDS: &[&str] = &[
    "detector",
    "label_text",
    "mapped_concept",
    "bbox",
    "mask_area",
    "confidence",
    "logits",
    "dominant_color",
    "depth_hint",
    "track_id",
    "extra",
];

fn strip_unknown(
    value: &mut serde_json::Value,
    known: &[&str],
    path: &str,
    warnings: &mut Vec<IngestWarning>,
) {
    if let serde_json::Value::Object(map) = value {
        let unknown: Vec<String> = map.keys().filter(|k| !known.contains(&k.as_str())).cloned().collect();
        for field in unknown {
            map.remove(&field);
            warnings.push(IngestWarning::UnknownField {
                path: path.to_owned(),
                field,
            });
        }
    }
}

fn scrub_scene(value: &mut serde_json::Value, path: &str, warnings: &mut Vec<IngestWarning>) {
    strip_unknown(value, SCENE_FIELDS, path, warnings);
    if let Some(serde_json::Value::Array(records)) = value.get_mut("records") {
        for (i, r) in records.iter_mut().enumerate() {
            strip_unknown(r, RECORD_FIELDS, &format!("{path}.records[{i}]"), warnings);
        }
    }
}

/// Parses a scene detection document; unknown fields are dropped with a
/// warning.
pub fn parse_detection_document(
    text: &str,
) -> Result<(DetectionDocument, Vec<IngestWarning>), IngestError> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| IngestError::Json(e.to_string()))?;
    let mut warnings = Vec::new();
    scrub_scene(&mut value, "$", &mut warnings);
    let doc = serde_json::from_value(value).map_err(|e| IngestError::Json(e.to_string()))?;
    Ok((doc, warnings))
}

pub fn parse_scenario_document(
    text: &str,
) -> Result<(ScenarioDocument, Vec<IngestWarning>), IngestError> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| IngestError::Json(e.to_string()))?;
    let mut warnings = Vec::new();
    strip_unknown(&mut value, &["scenario_id", "scenes"], "$", &mut warnings);
    if let Some(serde_json::Value::Array(scenes)) = value.get_mut("scenes") {
        for (i, s) in scenes.iter_mut().enumerate() {
            scrub_scene(s, &format!("$.scenes[{i}]"), &mut warnings);
        }
    }
    let doc = serde_json::from_value(value).map_err(|e| IngestError::Json(e.to_string()))?;
    Ok((doc, warnings))
}

// ---------------------------------------------------------------------------
// Geometry

/// Intersection over union; 0 when the union is empty.
pub fn compute_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// `overlap(a, b) / area(a)`, 0 for degenerate `a`.
pub fn overlap_fraction(a: &BBox, b: &BBox) -> f64 {
    let area = a.area();
    if area <= 0.0 {
        0.0
    } else {
        (a.intersection_area(b) / area).clamp(0.0, 1.0)
    }
}

/// Whether `b` is in front of `a`: smaller depth hint when both carry one,
/// otherwise the box whose bottom edge is lower in the image.
pub fn is_nearer(b: &Segment, a: &Segment) -> bool {
    match (b.depth_hint, a.depth_hint) {
        (Some(db), Some(da)) => db < da,
        _ => b.bbox.bottom() > a.bbox.bottom(),
    }
}

// ---------------------------------------------------------------------------
// Fusion

fn slug(text: &str) -> String {
    let mut out = String::new();
    for c in text.trim().chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') && !out.is_empty() {
            out.push('_');
        }
    }
    while out.ends_with('_') {
        out.pop();
    }
    if out.is_empty() {
        out.push_str("object");
    }
    if out.starts_with(|c: char| c.is_ascii_digit()) {
        out.insert_str(0, "obj_");
    }
    out
}

#[derive(Debug, Clone)]
pub struct Fused {
    pub individuals: Vec<SceneIndividual>,
    pub warnings: Vec<IngestWarning>,
}

struct Cluster {
    founder: usize,
    members: Vec<usize>,
    concepts: BTreeMap<QName, f64>,
}

/// Merges records that overlap (IoU ≥ threshold) and whose concepts are
/// compatible (equal, or one subsumes the other). The highest-confidence
/// record of a cluster provides the geometry.
pub fn fuse_detections(
    records: &[DetectionRecord],
    cfg: &FusionConfig,
    tbox: &TBox,
) -> Result<Fused, IngestError> {
    cfg.validate()?;
    let closure = subsumption_closure(tbox);
    fuse_with(records, cfg, tbox, &closure, &Vocab::default())
}

fn fuse_with(
    records: &[DetectionRecord],
    cfg: &FusionConfig,
    tbox: &TBox,
    closure: &SubsumptionClosure,
    vocab: &Vocab,
) -> Result<Fused, IngestError> {
    let mut warnings = Vec::new();
    let mut concepts = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        r.validate(i)?;
        let concept = r
            .mapped_concept
            .clone()
            .or_else(|| cfg.label_map.get(&r.label_text).cloned())
            .or_else(|| cfg.label_map.get(&r.label_text.to_lowercase()).cloned());
        let concept = match concept {
            Some(c) => c,
            None => {
                warnings.push(IngestWarning::UnmappedLabel {
                    record: i,
                    label: r.label_text.clone(),
                });
                vocab.unknown_object.clone()
            }
        };
        concepts.push(concept);
    }

    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[b]
            .confidence
            .total_cmp(&records[a].confidence)
            .then(a.cmp(&b))
    });

    let mut clusters: Vec<Cluster> = Vec::new();
    for &i in &order {
        let bbox = records[i].bbox();
        let best = clusters
            .iter()
            .enumerate()
            .filter(|(_, c)| c.concepts.keys().all(|k| closure.compatible(k, &concepts[i])))
            .map(|(ci, c)| (ci, compute_iou(&records[c.founder].bbox(), &bbox)))
            .filter(|(_, iou)| *iou >= cfg.iou_merge_threshold)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        match best {
            Some((ci, _)) => {
                let c = &mut clusters[ci];
                c.members.push(i);
                let score = c.concepts.entry(concepts[i].clone()).or_insert(0.0);
                *score = score.max(records[i].confidence);
            }
            None => clusters.push(Cluster {
                founder: i,
                members: vec![i],
                concepts: BTreeMap::from([(concepts[i].clone(), records[i].confidence)]),
            }),
        }
    }
    clusters.sort_by_key(|c| c.founder);

    let mut taken = BTreeSet::new();
    let mut individuals = Vec::with_capacity(clusters.len());
    for c in clusters {
        let founder = &records[c.founder];
        let track_id = c.members.iter().find_map(|&m| records[m].track_id.clone());
        let suffix = track_id.as_deref().map(slug).unwrap_or_else(|| (c.founder + 1).to_string());
        let mut name = format!("{}_{}", slug(&founder.label_text), suffix);
        if taken.contains(&name) {
            name = format!("{name}_{}", c.founder + 1);
        }
        taken.insert(name.clone());
        let id = QName::local(&name)?;

        let bbox = founder.bbox();
        let segment = Segment {
            bbox,
            mask_area: founder.mask_area.unwrap_or(bbox.area()).min(bbox.area()),
            confidence: founder.confidence,
            logits: founder.logits.clone(),
            dominant_color: c.members.iter().find_map(|&m| records[m].dominant_color),
            depth_hint: c.members.iter().find_map(|&m| records[m].depth_hint),
            source_detector: founder.detector.clone(),
        };

        let mut candidates: Vec<ConceptScore> = c
            .concepts
            .into_iter()
            .map(|(concept, score)| ConceptScore { concept, score })
            .collect();
        candidates.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.concept.cmp(&b.concept)));

        let mut attributes = BTreeMap::new();
        for &m in &c.members {
            for (key, value) in &records[m].extra {
                if let Some((role, value)) = resolve_attribute(tbox, m, key, value, &mut warnings) {
                    attributes.entry(role).or_insert(value);
                }
            }
        }

        individuals.push(SceneIndividual {
            id,
            label: founder.label_text.clone(),
            segment,
            candidates,
            track_id,
            attributes,
        });
    }
    Ok(Fused {
        individuals,
        warnings,
    })
}

fn resolve_attribute(
    tbox: &TBox,
    record: usize,
    key: &str,
    value: &DataValue,
    warnings: &mut Vec<IngestWarning>,
) -> Option<(QName, DataValue)> {
    let role = match tbox.namespaces.resolve(key) {
        Ok(q) => q,
        Err(_) => {
            warnings.push(IngestWarning::UndeclaredAttribute {
                record,
                key: key.to_owned(),
            });
            return None;
        }
    };
    let Some(def) = tbox.role(&role).filter(|d| d.kind == RoleKind::Data) else {
        warnings.push(IngestWarning::UndeclaredAttribute {
            record,
            key: key.to_owned(),
        });
        return None;
    };
    let value = match (def.datatype(), value) {
        (Some(Datatype::Decimal), DataValue::Integer(i)) => DataValue::Decimal(*i as f64),
        _ => value.clone(),
    };
    if let Some(dt) = def.datatype() {
        if !dt.admits(&value) {
            warnings.push(IngestWarning::RejectedAttribute {
                record,
                key: key.to_owned(),
                reason: format!("{} value does not fit range {dt}", value.type_name()),
            });
            return None;
        }
    }
    Some((role, value))
}

// ---------------------------------------------------------------------------
// Assertion passes

struct Context<'a> {
    tbox: &'a TBox,
    cfg: &'a FusionConfig,
    closure: SubsumptionClosure,
    vocab: Vocab,
}

impl<'a> Context<'a> {
    fn new(tbox: &'a TBox, cfg: &'a FusionConfig) -> Self {
        Self {
            tbox,
            cfg,
            closure: subsumption_closure(tbox),
            vocab: Vocab::default(),
        }
    }

    fn declared(&self, role: &QName) -> bool {
        self.tbox.role(role).is_some()
    }

    /// Realised concept memberships implied by `assertions`.
    fn memberships(&self, assertions: &[Assertion]) -> BTreeMap<QName, BTreeSet<QName>> {
        let mut out: BTreeMap<QName, BTreeSet<QName>> = BTreeMap::new();
        for a in assertions {
            if let Assertion::Class(c) = a {
                out.entry(c.individual.clone())
                    .or_default()
                    .extend(self.closure.ancestors(&c.concept));
            }
        }
        out
    }

    fn base(&self, scene: &Scene) -> Vec<Assertion> {
        let mut out = Vec::new();
        for ind in &scene.individuals {
            for c in &ind.candidates {
                out.push(Assertion::class(ind.id.clone(), c.concept.clone()));
            }
            for (role, value) in &ind.attributes {
                out.push(Assertion::data(ind.id.clone(), role.clone(), value.clone()));
            }
            if self.declared(&self.vocab.detection_confidence) {
                out.push(Assertion::data(
                    ind.id.clone(),
                    self.vocab.detection_confidence.clone(),
                    DataValue::Decimal(ind.segment.confidence),
                ));
            }
            if let (Some(rgb), Some(def)) = (ind.segment.dominant_color, self.tbox.role(&self.vocab.has_color)) {
                let token = nearest_color(rgb);
                let admitted = match def.datatype() {
                    Some(dt) => dt.admits(&DataValue::Enum(token.clone())),
                    None => true,
                };
                if admitted {
                    out.push(Assertion::data(
                        ind.id.clone(),
                        self.vocab.has_color.clone(),
                        DataValue::Enum(token),
                    ));
                }
            }
        }
        canonicalize(&mut out);
        out
    }

    fn spatial(&self, scene: &Scene, base: &[Assertion]) -> Vec<Assertion> {
        let v = &self.vocab;
        let members = self.memberships(base);
        let part_domain = self.tbox.role(&v.is_part_of).and_then(|d| d.domain.clone());
        let is_part_type = |id: &QName| match &part_domain {
            Some(d) => members.get(id).is_some_and(|m| m.contains(d)),
            None => false,
        };
        let near_limit = self.cfg.near_threshold * std::f64::consts::SQRT_2;
        let emit = |out: &mut Vec<Assertion>, role: &QName, a: &QName, b: &QName| {
            if self.declared(role) {
                out.push(Assertion::object(a.clone(), role.clone(), b.clone()));
            }
        };

        // Canonical individual order makes the pass independent of record order.
        let mut inds: Vec<&SceneIndividual> = scene.individuals.iter().collect();
        inds.sort_by(|a, b| a.id.cmp(&b.id));

        let mut out = Vec::new();
        for a in &inds {
            let ab = a.segment.bbox;
            let mut occlusion = 0.0f64;
            for b in &inds {
                if a.id == b.id {
                    continue;
                }
                let bb = b.segment.bbox;
                if ab.right() <= bb.x {
                    emit(&mut out, &v.is_left_of, &a.id, &b.id);
                }
                if ab.x >= bb.right() {
                    emit(&mut out, &v.is_right_of, &a.id, &b.id);
                }
                let (ax, ay) = ab.center();
                let (bx, by) = bb.center();
                if (ax - bx).hypot(ay - by) <= near_limit {
                    emit(&mut out, &v.is_near, &a.id, &b.id);
                    emit(&mut out, &v.is_in_proximity, &a.id, &b.id);
                }
                let covered = overlap_fraction(&ab, &bb);
                if covered > 0.0 && is_nearer(&b.segment, &a.segment) {
                    emit(&mut out, &v.is_occluded_by, &a.id, &b.id);
                    occlusion = occlusion.max(covered);
                }
                // Parts attach to wholes that are not themselves parts.
                if ab.area() > 0.0
                    && covered >= self.cfg.part_of_containment
                    && is_part_type(&a.id)
                    && !is_part_type(&b.id)
                {
                    emit(&mut out, &v.is_part_of, &a.id, &b.id);
                    emit(&mut out, &v.has_part, &b.id, &a.id);
                    if self.declared(&v.part_height_ratio) && bb.h > 0.0 {
                        out.push(Assertion::data(
                            a.id.clone(),
                            v.part_height_ratio.clone(),
                            DataValue::Decimal(ab.h / bb.h),
                        ));
                    }
                }
            }
            if self.declared(&v.occlusion_rate) {
                out.push(Assertion::data(
                    a.id.clone(),
                    v.occlusion_rate.clone(),
                    DataValue::decimal(occlusion).expect("finite"),
                ));
            }
        }
        canonicalize(&mut out);
        out
    }

    fn flag(&self, target: &QName, on: bool) -> DataValue {
        match self.tbox.role(target).and_then(|d| d.datatype()) {
            Some(Datatype::Boolean) => DataValue::Boolean(on),
            Some(Datatype::Decimal) => DataValue::Decimal(if on { 1.0 } else { 0.0 }),
            _ => DataValue::Integer(i64::from(on)),
        }
    }

    fn in_domain(
        &self,
        target: &QName,
        members: &BTreeMap<QName, BTreeSet<QName>>,
        id: &QName,
    ) -> bool {
        match self.tbox.role(target).and_then(|d| d.domain.as_ref()) {
            Some(d) => members.get(id).is_some_and(|m| m.contains(d)),
            None => true,
        }
    }

    fn cwa(&self, scene: &Scene, known: &[Assertion]) -> Vec<Assertion> {
        let mut derived: Vec<Assertion> = Vec::new();
        let specs = &self.tbox.derived_specs;
        let phase = |d: &DerivedDefinition| match d {
            DerivedDefinition::PresenceInScene { .. } => 0,
            DerivedDefinition::ThresholdFlag { .. } => 1,
            DerivedDefinition::AbsenceOfPart { .. } => 2,
            DerivedDefinition::Independence { .. } => 3,
        };
        let mut ordered: Vec<_> = specs.iter().collect();
        ordered.sort_by_key(|s| phase(&s.definition));

        for spec in ordered {
            let mut all: Vec<Assertion> = known.iter().chain(derived.iter()).cloned().collect();
            canonicalize(&mut all);
            let members = self.memberships(&all);
            let mut ids: Vec<QName> = members.keys().cloned().collect();
            ids.sort();
            let target = &spec.target;
            match &spec.definition {
                DerivedDefinition::PresenceInScene { .. } => {
                    if scene.individuals.is_empty() {
                        continue;
                    }
                    for ind in &scene.individuals {
                        derived.push(Assertion::object(ind.id.clone(), target.clone(), scene.id.clone()));
                    }
                    if let Some(RoleRange::Concept(c)) =
                        self.tbox.role(target).and_then(|d| d.range.as_ref())
                    {
                        derived.push(Assertion::class(scene.id.clone(), c.clone()));
                    }
                }
                DerivedDefinition::ThresholdFlag {
                    source,
                    comparator,
                    threshold,
                } => {
                    let limit = self.cfg.threshold(*threshold);
                    let mut values: BTreeMap<&QName, f64> = BTreeMap::new();
                    for a in &all {
                        if let Assertion::Role(r) = a {
                            if &r.role == source {
                                if let RoleTarget::Literal(v) = &r.target {
                                    if let Some(x) = v.as_f64() {
                                        let e = values.entry(&r.subject).or_insert(x);
                                        *e = e.max(x);
                                    }
                                }
                            }
                        }
                    }
                    for (id, value) in values {
                        if self.in_domain(target, &members, id) {
                            derived.push(Assertion::data(
                                id.clone(),
                                target.clone(),
                                self.flag(target, comparator.holds(value, limit)),
                            ));
                        }
                    }
                }
                DerivedDefinition::AbsenceOfPart { part, via } => {
                    let via = via.as_ref().unwrap_or(&self.vocab.is_part_of);
                    let linked: BTreeSet<&QName> = all
                        .iter()
                        .filter_map(|a| match a {
                            Assertion::Role(r) if self.closure.is_subrole(&r.role, via) => match &r.target {
                                RoleTarget::Individual(whole)
                                    if members.get(&r.subject).is_some_and(|m| m.contains(part)) =>
                                {
                                    Some(whole)
                                }
                                _ => None,
                            },
                            _ => None,
                        })
                        .collect();
                    for id in &ids {
                        if self.in_domain(target, &members, id) {
                            derived.push(Assertion::data(
                                id.clone(),
                                target.clone(),
                                self.flag(target, !linked.contains(id)),
                            ));
                        }
                    }
                }
                DerivedDefinition::Independence { container } => {
                    let attached: BTreeSet<&QName> = all
                        .iter()
                        .filter_map(|a| match a {
                            Assertion::Role(r) if self.closure.is_subrole(&r.role, &self.vocab.is_part_of) => {
                                match &r.target {
                                    RoleTarget::Individual(whole)
                                        if members.get(whole).is_some_and(|m| m.contains(container)) =>
                                    {
                                        Some(&r.subject)
                                    }
                                    _ => None,
                                }
                            }
                            _ => None,
                        })
                        .collect();
                    for id in &ids {
                        if self.in_domain(target, &members, id) {
                            derived.push(Assertion::data(
                                id.clone(),
                                target.clone(),
                                self.flag(target, !attached.contains(id)),
                            ));
                        }
                    }
                }
            }
        }
        canonicalize(&mut derived);
        derived
    }
}

/// Spatial relations over the scene's individuals: left/right (strict
/// horizontal separation), nearness, occlusion with its rate, and part-of
/// containment for part-typed individuals.
pub fn derive_spatial_relations(scene: &Scene, cfg: &FusionConfig, tbox: &TBox) -> Vec<Assertion> {
    let ctx = Context::new(tbox, cfg);
    let base = ctx.base(scene);
    ctx.spatial(scene, &base)
}

/// Closed-world derived properties for the scene, computed from its current
/// assertions (which must already include spatial relations). Idempotent.
pub fn materialize_cwa_properties(scene: &Scene, tbox: &TBox, cfg: &FusionConfig) -> Vec<Assertion> {
    let ctx = Context::new(tbox, cfg);
    ctx.cwa(scene, &scene.assertions)
}

/// Recomputes every assertion of `scene` from its individuals.
pub fn rebuild_assertions(scene: &Scene, cfg: &FusionConfig, tbox: &TBox) -> Scene {
    let ctx = Context::new(tbox, cfg);
    let base = ctx.base(scene);
    let spatial = ctx.spatial(scene, &base);
    let mut known: Vec<Assertion> = base.into_iter().chain(spatial).collect();
    canonicalize(&mut known);
    let cwa = ctx.cwa(scene, &known);
    known.extend(cwa);
    canonicalize(&mut known);
    Scene {
        assertions: known,
        ..scene.clone()
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub scene: Scene,
    pub warnings: Vec<IngestWarning>,
}

pub fn ingest_scene(doc: &DetectionDocument, cfg: &FusionConfig, tbox: &TBox) -> Result<Ingested, IngestError> {
    cfg.validate()?;
    if !(doc.time_position.is_finite() && doc.time_position >= 0.0) {
        return Err(IngestError::Json("time_position must be a non-negative number".into()));
    }
    let closure = subsumption_closure(tbox);
    let fused = fuse_with(&doc.records, cfg, tbox, &closure, &Vocab::default())?;
    let scene = Scene {
        id: doc.scene_id.clone(),
        time_position: doc.time_position,
        frame_ref: doc.frame_ref.clone(),
        individuals: fused.individuals,
        assertions: Vec::new(),
    };
    let scene = rebuild_assertions(&scene, cfg, tbox);
    scene.validate()?;
    Ok(Ingested {
        scene,
        warnings: fused.warnings,
    })
}

// ---------------------------------------------------------------------------
// Scenarios

/// Track table plus the presence/absence assertions it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackLinks {
    pub tracks: BTreeMap<String, Vec<Option<QName>>>,
    pub assertions: Vec<Assertion>,
}

fn primary_concept(ind: &SceneIndividual) -> Option<&QName> {
    ind.candidates.first().map(|c| &c.concept)
}

/// Links individuals across consecutive scenes. Provided `track_id`s win;
/// otherwise individuals with the same primary concept are matched greedily
/// by IoU (ties: higher IoU, then higher confidence, then name).
pub fn link_tracks(scenes: &[Scene], cfg: &FusionConfig, tbox: &TBox) -> TrackLinks {
    let mut tracks: BTreeMap<String, Vec<Option<QName>>> = BTreeMap::new();
    let n = scenes.len();
    // track of each individual in the previous scene
    let mut prev: BTreeMap<QName, String> = BTreeMap::new();

    for (si, scene) in scenes.iter().enumerate() {
        let mut current: BTreeMap<QName, String> = BTreeMap::new();
        let mut claimed: BTreeSet<String> = BTreeSet::new();
        let mut pending: Vec<&SceneIndividual> = Vec::new();
        for ind in &scene.individuals {
            match &ind.track_id {
                Some(t) if !claimed.contains(t) => {
                    claimed.insert(t.clone());
                    current.insert(ind.id.clone(), t.clone());
                }
                _ => pending.push(ind),
            }
        }

        if si > 0 {
            let previous = &scenes[si - 1];
            let mut pairs: Vec<(f64, f64, &QName, &QName, &String)> = Vec::new();
            for cur in &pending {
                for old in &previous.individuals {
                    let Some(track) = prev.get(&old.id) else { continue };
                    if claimed.contains(track) || primary_concept(cur) != primary_concept(old) {
                        continue;
                    }
                    let iou = compute_iou(&cur.segment.bbox, &old.segment.bbox);
                    if iou >= cfg.track_iou_threshold {
                        pairs.push((iou, cur.segment.confidence, &cur.id, &old.id, track));
                    }
                }
            }
            pairs.sort_by(|a, b| {
                b.0.total_cmp(&a.0)
                    .then(b.1.total_cmp(&a.1))
                    .then(a.2.cmp(b.2))
                    .then(a.3.cmp(b.3))
            });
            for (_, _, cur, _, track) in pairs {
                if current.contains_key(cur) || claimed.contains(track) {
                    continue;
                }
                claimed.insert(track.clone());
                current.insert(cur.clone(), track.clone());
            }
        }

        for ind in &pending {
            if current.contains_key(&ind.id) {
                continue;
            }
            let mut name = ind.id.to_string();
            if tracks.contains_key(&name) || claimed.contains(&name) {
                name = format!("{name}@{si}");
            }
            claimed.insert(name.clone());
            current.insert(ind.id.clone(), name);
        }

        for (ind, track) in &current {
            let row = tracks.entry(track.clone()).or_insert_with(|| vec![None; n]);
            row[si] = Some(ind.clone());
        }
        prev = current;
    }

    let assertions = presence_assertions(scenes, &tracks, tbox);
    TrackLinks { tracks, assertions }
}

/// Name each track is known by in the scenario graph: the id of its first
/// individual, suffixed with the scene number (`car_1_s2`) when an earlier
/// track already uses that id.
pub fn track_names(tracks: &BTreeMap<String, Vec<Option<QName>>>) -> BTreeMap<String, QName> {
    let mut order: Vec<(usize, &QName, &String)> = tracks
        .iter()
        .filter_map(|(key, row)| {
            row.iter()
                .enumerate()
                .find_map(|(si, slot)| slot.as_ref().map(|q| (si, q, key)))
        })
        .collect();
    order.sort();
    let mut used = BTreeSet::new();
    let mut out = BTreeMap::new();
    for (si, first, key) in order {
        let mut name = first.clone();
        if used.contains(&name) {
            name = QName::new(first.prefix(), &format!("{}_s{}", first.local_name(), si + 1))
                .expect("suffix keeps the name well-formed");
        }
        used.insert(name.clone());
        out.insert(key.clone(), name);
    }
    out
}

/// `present_in`/`absent_in` facts for every track, named per [`track_names`].
pub fn presence_assertions(
    scenes: &[Scene],
    tracks: &BTreeMap<String, Vec<Option<QName>>>,
    tbox: &TBox,
) -> Vec<Assertion> {
    let names = track_names(tracks);
    let mut out = Vec::new();
    for spec in &tbox.derived_specs {
        let DerivedDefinition::PresenceInScene { absence_role } = &spec.definition else {
            continue;
        };
        let scene_concept = match tbox.role(&spec.target).and_then(|d| d.range.as_ref()) {
            Some(RoleRange::Concept(c)) => Some(c),
            _ => None,
        };
        for (key, row) in tracks {
            let Some(who) = names.get(key) else { continue };
            for (si, slot) in row.iter().enumerate() {
                let scene = &scenes[si].id;
                match (slot, absence_role) {
                    (Some(_), _) => out.push(Assertion::object(who.clone(), spec.target.clone(), scene.clone())),
                    (None, Some(absent)) => {
                        out.push(Assertion::object(who.clone(), absent.clone(), scene.clone()))
                    }
                    (None, None) => {}
                }
            }
        }
        if let Some(c) = scene_concept {
            for s in scenes {
                out.push(Assertion::class(s.id.clone(), c.clone()));
            }
        }
    }
    canonicalize(&mut out);
    out
}

pub fn ingest_scenario(
    doc: &ScenarioDocument,
    cfg: &FusionConfig,
    tbox: &TBox,
    exec: Execution,
) -> Result<(Scenario, Vec<IngestWarning>), IngestError> {
    let results = par::map(exec, &doc.scenes, |s| ingest_scene(s, cfg, tbox));
    let mut scenes = Vec::with_capacity(results.len());
    let mut warnings = Vec::new();
    for r in results {
        let ingested = r?;
        scenes.push(ingested.scene);
        warnings.extend(ingested.warnings);
    }
    let links = link_tracks(&scenes, cfg, tbox);
    let scenario = Scenario {
        id: doc.scenario_id.clone(),
        scenes,
        tracks: links.tracks,
    };
    scenario.validate()?;
    Ok((scenario, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &str) -> QName {
        QName::parse(s).unwrap()
    }

    fn rec(label: &str, bbox: [f64; 4], confidence: f64) -> DetectionRecord {
        DetectionRecord {
            detector: "test".into(),
            label_text: label.into(),
            mapped_concept: None,
            bbox,
            mask_area: None,
            confidence,
            logits: None,
            dominant_color: None,
            depth_hint: None,
            track_id: None,
            extra: BTreeMap::new(),
        }
    }

    fn scene_of(records: Vec<DetectionRecord>) -> Scene {
        let doc = DetectionDocument {
            scene_id: q("traf:scene1"),
            time_position: 0.0,
            frame_ref: "frame".into(),
            records,
        };
        ingest_scene(&doc, &FusionConfig::default(), &TBox::shipped())
            .unwrap()
            .scene
    }

    fn has(scene: &Scene, key: &str) -> bool {
        scene.assertions.iter().any(|a| a.key() == key)
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 0.5, 0.5);
        assert_eq!(compute_iou(&a, &a), 1.0);
        assert_eq!(compute_iou(&a, &BBox::new(0.6, 0.6, 0.2, 0.2)), 0.0);
        // overlap .25×.5 = .125; union .25 + .25 − .125 = .375
        let b = BBox::new(0.25, 0.0, 0.5, 0.5);
        assert!((compute_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        let z = BBox::new(0.1, 0.1, 0.0, 0.0);
        assert_eq!(compute_iou(&z, &z), 0.0);
    }

    #[test]
    fn fusion_merges_compatible_overlaps() {
        let tbox = TBox::shipped();
        let cfg = FusionConfig::default();
        // IoU: boxes 0.4×0.4 shifted by 0.02 in x: inter .38×.4=.152,
        // union .16+.16−.152=.168 → 0.9048
        let records = vec![
            rec("car", [0.10, 0.10, 0.40, 0.40], 0.80),
            rec("car", [0.12, 0.10, 0.40, 0.40], 0.95),
        ];
        let fused = fuse_detections(&records, &cfg, &tbox).unwrap();
        assert_eq!(fused.individuals.len(), 1);
        let ind = &fused.individuals[0];
        assert_eq!(ind.segment.confidence, 0.95);
        assert_eq!(ind.segment.bbox, BBox::new(0.12, 0.10, 0.40, 0.40));
        assert_eq!(ind.id.to_string(), "car_2");

        // "vehicle" subsumes Passenger_Car, so these merge too
        let records = vec![
            rec("car", [0.10, 0.10, 0.40, 0.40], 0.9),
            rec("vehicle", [0.10, 0.10, 0.40, 0.40], 0.6),
        ];
        let fused = fuse_detections(&records, &cfg, &tbox).unwrap();
        assert_eq!(fused.individuals.len(), 1);
        assert_eq!(fused.individuals[0].candidates.len(), 2);
    }

    #[test]
    fn fusion_keeps_incompatible_overlaps_apart() {
        // car .4×.4 at (.1,.1); wheel .3×.4 at (.1,.1): IoU .12/.16 = .75
        let records = vec![
            rec("car", [0.10, 0.10, 0.40, 0.40], 0.9),
            rec("wheel", [0.10, 0.10, 0.30, 0.40], 0.9),
        ];
        let fused = fuse_detections(&records, &FusionConfig::default(), &TBox::shipped()).unwrap();
        assert_eq!(fused.individuals.len(), 2);
        assert!(fuse_detections(&[], &FusionConfig::default(), &TBox::shipped())
            .unwrap()
            .individuals
            .is_empty());
    }

    #[test]
    fn unmapped_label_degrades_to_unknown_object() {
        let fused = fuse_detections(
            &[rec("hoverboard", [0.1, 0.1, 0.1, 0.1], 0.5)],
            &FusionConfig::default(),
            &TBox::shipped(),
        )
        .unwrap();
        assert_eq!(fused.individuals[0].candidates[0].concept, q("l4_d:Unknown_Object"));
        assert_eq!(
            fused.warnings,
            vec![IngestWarning::UnmappedLabel {
                record: 0,
                label: "hoverboard".into()
            }]
        );
    }

    #[test]
    fn invalid_records_are_rejected() {
        let bad = rec("car", [0.8, 0.1, 0.4, 0.1], 0.5);
        assert!(matches!(
            fuse_detections(&[bad], &FusionConfig::default(), &TBox::shipped()),
            Err(IngestError::InvalidRecord { index: 0, .. })
        ));
        let mut cfg = FusionConfig::default();
        cfg.near_threshold = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn left_right_mirror() {
        let scene = scene_of(vec![
            rec("car", [0.05, 0.40, 0.20, 0.20], 0.9),
            rec("pedestrian", [0.60, 0.40, 0.05, 0.20], 0.9),
        ]);
        assert!(has(&scene, "O|phys:is_left_of|car_1|pedestrian_2"));
        assert!(has(&scene, "O|phys:is_right_of|pedestrian_2|car_1"));
        assert!(!has(&scene, "O|phys:is_left_of|pedestrian_2|car_1"));
        assert!(has(&scene, "D|perc:occlusion_rate|car_1|0"));
        assert!(!scene.assertions.iter().any(|a| a.key().starts_with("O|phys:is_occluded_by")));
    }

    #[test]
    fn wheel_inside_car_is_part_of() {
        // wheel .1×.1 at (.30,.55); car (.2,.3,.4,.34) covers x .30–.40 and
        // y .55–.64 of it: .1×.09/.01 = 90% contained
        let mut car = rec("car", [0.20, 0.30, 0.40, 0.34], 0.9);
        car.depth_hint = Some(10.0);
        let mut wheel = rec("wheel", [0.30, 0.55, 0.10, 0.10], 0.8);
        wheel.depth_hint = Some(9.0);
        let scene = scene_of(vec![car, wheel]);
        assert!(has(&scene, "O|phys:is_part_of|wheel_2|car_1"));
        assert!(has(&scene, "O|phys:has_part|car_1|wheel_2"));
        assert!(has(&scene, "D|phys:is_independent|wheel_2|0i"));
        assert!(has(&scene, "D|phys:no_plate|car_1|1i"));
        // wheel is nearer and covers .01·.9/.136 of the car
        assert!(has(&scene, "O|phys:is_occluded_by|car_1|wheel_2"));
    }

    #[test]
    fn high_occlusion_flag() {
        let mut ped = rec("pedestrian", [0.40, 0.30, 0.10, 0.20], 0.9);
        ped.depth_hint = Some(20.0);
        // covers x .40–.50 fully and y .30–.424 → .124/.2 = 0.62
        let mut truck = rec("truck", [0.35, 0.10, 0.30, 0.324], 0.9);
        truck.depth_hint = Some(5.0);
        let scene = scene_of(vec![ped, truck]);
        assert!(has(&scene, "O|phys:is_occluded_by|pedestrian_1|truck_2"));
        let rate = scene
            .assertions
            .iter()
            .find_map(|a| match a {
                Assertion::Role(r) if r.role == q("perc:occlusion_rate") && r.subject == q("pedestrian_1") => {
                    match &r.target {
                        RoleTarget::Literal(v) => v.as_f64(),
                        _ => None,
                    }
                }
                _ => None,
            })
            .unwrap();
        assert!((rate - 0.62).abs() < 1e-9);
        assert!(has(&scene, "D|perc:has_high_occlusion|pedestrian_1|true"));
        assert!(has(&scene, "D|perc:has_high_occlusion|truck_2|false"));
    }

    #[test]
    fn cwa_materialisation_is_idempotent() {
        let scene = scene_of(vec![
            rec("car", [0.20, 0.30, 0.40, 0.34], 0.9),
            rec("wheel", [0.30, 0.55, 0.10, 0.10], 0.8),
            rec("lane", [0.0, 0.6, 1.0, 0.4], 0.7),
        ]);
        let tbox = TBox::shipped();
        let cfg = FusionConfig::default();
        let once = materialize_cwa_properties(&scene, &tbox, &cfg);
        let mut twice_scene = scene.clone();
        twice_scene.assertions.extend(once.clone());
        canonicalize(&mut twice_scene.assertions);
        assert_eq!(materialize_cwa_properties(&twice_scene, &tbox, &cfg), once);
        assert!(has(&scene, "D|traf:no_lane_markers|traf:scene1|0i"));
        assert!(has(&scene, "C|traf:Scene|traf:scene1"));
    }

    #[test]
    fn unknown_fields_warn() {
        let text = r#"{"scene_id":"traf:s","time_position":0,"frame_ref":"f","camera":"front",
            "records":[{"detector":"d","label_text":"car","bbox":[0,0,0.1,0.1],"confidence":0.5,"colour":"red"}]}"#;
        let (doc, warnings) = parse_detection_document(text).unwrap();
        assert_eq!(doc.records.len(), 1);
        assert_eq!(warnings.len(), 2);
    }

    #[test]
    fn attributes_pass_through() {
        let mut car = rec("car", [0.2, 0.3, 0.2, 0.2], 0.9);
        car.extra.insert("phys:has_distance".into(), DataValue::Integer(42));
        car.extra.insert("phys:bogus".into(), DataValue::Integer(1));
        let doc = DetectionDocument {
            scene_id: q("traf:scene1"),
            time_position: 0.0,
            frame_ref: String::new(),
            records: vec![car],
        };
        let ingested = ingest_scene(&doc, &FusionConfig::default(), &TBox::shipped()).unwrap();
        assert!(has(&ingested.scene, "D|phys:has_distance|car_1|42"));
        assert_eq!(ingested.warnings.len(), 1);
    }

    fn tracked(label: &str, bbox: [f64; 4], track: Option<&str>) -> DetectionRecord {
        let mut r = rec(label, bbox, 0.9);
        r.track_id = track.map(str::to_owned);
        r
    }

    fn scenario(frames: Vec<Vec<DetectionRecord>>) -> Scenario {
        let doc = ScenarioDocument {
            scenario_id: q("traf:scenario1"),
            scenes: frames
                .into_iter()
                .enumerate()
                .map(|(i, records)| DetectionDocument {
                    scene_id: QName::new("traf", &format!("scene{}", i + 1)).unwrap(),
                    time_position: i as f64,
                    frame_ref: String::new(),
                    records,
                })
                .collect(),
        };
        ingest_scenario(&doc, &FusionConfig::default(), &TBox::shipped(), Execution::Sequential)
            .unwrap()
            .0
    }

    #[test]
    fn provided_track_ids_link_scenes() {
        let s = scenario(vec![
            vec![
                tracked("stroller", [0.1, 0.5, 0.1, 0.2], Some("t7")),
                tracked("car", [0.5, 0.5, 0.2, 0.2], Some("t1")),
            ],
            vec![tracked("car", [0.52, 0.5, 0.2, 0.2], Some("t1"))],
        ]);
        assert_eq!(s.tracks["t7"], vec![Some(q("stroller_t7")), None]);
        assert_eq!(s.tracks["t1"], vec![Some(q("car_t1")), Some(q("car_t1"))]);
        let links = link_tracks(&s.scenes, &FusionConfig::default(), &TBox::shipped());
        let keys: Vec<String> = links.assertions.iter().map(Assertion::key).collect();
        assert!(keys.contains(&"O|traf:present_in|stroller_t7|traf:scene1".to_string()));
        assert!(keys.contains(&"O|traf:absent_in|stroller_t7|traf:scene2".to_string()));
        assert!(!keys.contains(&"O|traf:present_in|stroller_t7|traf:scene2".to_string()));
    }

    #[test]
    fn greedy_tracking_prefers_higher_iou() {
        // previous car at (.40,.40,.20,.20); candidates shifted right by
        // .05 (IoU .15·.2/(.08−.03) = .6) and down by .058 (IoU ≈ .55); the
        // two candidates overlap too little (IoU ≈ .36) to be fused
        let s = scenario(vec![
            vec![tracked("car", [0.40, 0.40, 0.20, 0.20], None)],
            vec![
                tracked("car", [0.45, 0.40, 0.20, 0.20], None),
                tracked("car", [0.40, 0.458, 0.20, 0.20], None),
            ],
        ]);
        let cur = compute_iou(&BBox::new(0.40, 0.40, 0.20, 0.20), &BBox::new(0.45, 0.40, 0.20, 0.20));
        assert!((cur - 0.6).abs() < 1e-9);
        let other = compute_iou(&BBox::new(0.40, 0.40, 0.20, 0.20), &BBox::new(0.40, 0.458, 0.20, 0.20));
        assert!((other - 0.55).abs() < 1e-3);
        let row = &s.tracks["car_1"];
        assert_eq!(row[1], Some(q("car_1")));
        assert_eq!(s.tracks.len(), 2);
        assert_eq!(s.tracks["car_2"], vec![None, Some(q("car_2"))]);
    }

    #[test]
    fn identical_scenes_share_tracks() {
        let frame = vec![
            tracked("car", [0.40, 0.40, 0.20, 0.20], None),
            tracked("pedestrian", [0.1, 0.4, 0.05, 0.2], None),
        ];
        let s = scenario(vec![frame.clone(), frame]);
        assert!(s.tracks.values().all(|row| row.iter().all(Option::is_some)));
    }

    proptest::proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(
            a in (0.0..0.9f64, 0.0..0.9f64, 0.0..0.1f64, 0.0..0.1f64),
            b in (0.0..0.9f64, 0.0..0.9f64, 0.0..0.1f64, 0.0..0.1f64),
        ) {
            let (a, b) = (BBox::new(a.0, a.1, a.2, a.3), BBox::new(b.0, b.1, b.2, b.3));
            let iou = compute_iou(&a, &b);
            proptest::prop_assert!((0.0..=1.0).contains(&iou));
            proptest::prop_assert!((iou - compute_iou(&b, &a)).abs() < 1e-12);
            let f = overlap_fraction(&a, &b);
            proptest::prop_assert!((0.0..=1.0 + 1e-9).contains(&f));
        }
    }
}
