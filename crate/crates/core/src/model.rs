//! Shared vocabulary: qualified names, the `(N_R, N_C, N_I)` name sets,
//! assertions, detection segments, scenes and scenarios.
//!
//! Everything here is a plain value. Once a [`Scene`] is built it is not
//! mutated in place; counterfactual edits produce a copy.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("prefix `{prefix}` already maps to <{existing}>, refusing <{requested}>")]
    PrefixConflict {
        prefix: String,
        existing: String,
        requested: String,
    },
    #[error("prefix `{0}` is not registered")]
    UnregisteredPrefix(String),
    #[error("invalid name `{0}`")]
    InvalidName(String),
    #[error("`{name}` is already a {existing}, cannot also be a {requested}")]
    KindConflict {
        name: QName,
        existing: NameKind,
        requested: NameKind,
    },
    #[error("decimal values must be finite")]
    NonFiniteDecimal,
    #[error("invalid segment for `{individual}`: {reason}")]
    InvalidSegment { individual: String, reason: String },
    #[error("duplicate individual `{0}` in scene")]
    DuplicateIndividual(QName),
    #[error("assertion `{key}` references `{name}`, which is not an individual of scene `{scene}`")]
    DanglingIndividual {
        scene: QName,
        key: String,
        name: QName,
    },
    #[error("scenes must be strictly ordered by time_position (`{0}` is out of order)")]
    SceneOrder(QName),
    #[error("malformed assertion key `{0}`")]
    MalformedKey(String),
}

// ---------------------------------------------------------------------------
// Names

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// A prefixed name such as `l4_d:Passenger_Car`.
///
/// The empty prefix is the scene-local default namespace, so individuals
/// print as bare local names (`car_1`).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QName {
    prefix: String,
    local: String,
}

impl QName {
    pub fn new(prefix: &str, local: &str) -> Result<Self, ModelError> {
        if !(prefix.is_empty() || is_identifier(prefix)) || !is_identifier(local) {
            return Err(ModelError::InvalidName(format!("{prefix}:{local}")));
        }
        Ok(Self {
            prefix: prefix.to_owned(),
            local: local.to_owned(),
        })
    }

    /// Name in the default (scene-local) namespace.
    pub fn local(local: &str) -> Result<Self, ModelError> {
        Self::new("", local)
    }

    /// Parses `prefix:local` or a bare `local`. Does not consult a namespace
    /// table; see [`Namespaces::resolve`] for that.
    pub fn parse(s: &str) -> Result<Self, ModelError> {
        match s.split_once(':') {
            Some((prefix, local)) => Self::new(prefix, local),
            None => Self::new("", s),
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn local_name(&self) -> &str {
        &self.local
    }
}

impl fmt::Display for QName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.prefix.is_empty() {
            f.write_str(&self.local)
        } else {
            write!(f, "{}:{}", self.prefix, self.local)
        }
    }
}

impl fmt::Debug for QName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "QName({self})")
    }
}

impl FromStr for QName {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for QName {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QName {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        QName::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Prefixes every fresh table starts with.
pub const STANDARD_PREFIXES: &[(&str, &str)] = &[
    ("", "http://example.org/scene#"),
    ("l1_c", "http://example.org/6lm/l1_core#"),
    ("l4_d", "http://example.org/6lm/l4_dynamic#"),
    ("perc", "http://example.org/perception#"),
    ("phys", "http://example.org/physics#"),
    ("sqwrl", "http://sqwrl.stanford.edu/ontologies/built-ins/3.4/sqwrl.owl#"),
    ("swrb", "http://www.w3.org/2003/11/swrlb#"),
    ("traf", "http://example.org/traffic#"),
];

/// Prefix → IRI table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Namespaces {
    entries: BTreeMap<String, String>,
}

impl Default for Namespaces {
    fn default() -> Self {
        Self::standard()
    }
}

impl Namespaces {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn standard() -> Self {
        let mut ns = Self::empty();
        for (p, iri) in STANDARD_PREFIXES {
            ns.entries.insert((*p).to_owned(), (*iri).to_owned());
        }
        ns
    }

    /// Adds `prefix → iri`. Re-registering the identical pair is a no-op.
    pub fn register(&mut self, prefix: &str, iri: &str) -> Result<(), ModelError> {
        if !(prefix.is_empty() || is_identifier(prefix)) {
            return Err(ModelError::InvalidName(prefix.to_owned()));
        }
        match self.entries.get(prefix) {
            Some(existing) if existing == iri => Ok(()),
            Some(existing) => Err(ModelError::PrefixConflict {
                prefix: prefix.to_owned(),
                existing: existing.clone(),
                requested: iri.to_owned(),
            }),
            None => {
                self.entries.insert(prefix.to_owned(), iri.to_owned());
                Ok(())
            }
        }
    }

    pub fn iri(&self, prefix: &str) -> Option<&str> {
        self.entries.get(prefix).map(String::as_str)
    }

    pub fn contains(&self, prefix: &str) -> bool {
        self.entries.contains_key(prefix)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(p, i)| (p.as_str(), i.as_str()))
    }

    /// Parses `s` and checks that its prefix is registered.
    pub fn resolve(&self, s: &str) -> Result<QName, ModelError> {
        let q = QName::parse(s)?;
        self.check(&q)?;
        Ok(q)
    }

    pub fn check(&self, q: &QName) -> Result<(), ModelError> {
        if self.contains(q.prefix()) {
            Ok(())
        } else {
            Err(ModelError::UnregisteredPrefix(q.prefix().to_owned()))
        }
    }

    pub fn expand(&self, q: &QName) -> Option<String> {
        self.iri(q.prefix()).map(|base| format!("{base}{}", q.local_name()))
    }

    /// Inverse of [`expand`](Self::expand), preferring the longest matching IRI.
    pub fn compact(&self, iri: &str) -> Option<QName> {
        self.entries
            .iter()
            .filter(|(_, base)| iri.starts_with(base.as_str()))
            .max_by_key(|(_, base)| base.len())
            .and_then(|(p, base)| QName::new(p, &iri[base.len()..]).ok())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NameKind {
    Role,
    Concept,
    Individual,
}

impl fmt::Display for NameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NameKind::Role => "role",
            NameKind::Concept => "concept",
            NameKind::Individual => "individual",
        })
    }
}

/// The name triple: role names, concept names and individual names.
/// A name lives in at most one of the three sets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Names {
    kinds: BTreeMap<QName, NameKind>,
}

impl Names {
    pub fn insert(&mut self, name: QName, kind: NameKind) -> Result<(), ModelError> {
        match self.kinds.get(&name) {
            Some(&existing) if existing != kind => Err(ModelError::KindConflict {
                name,
                existing,
                requested: kind,
            }),
            Some(_) => Ok(()),
            None => {
                self.kinds.insert(name, kind);
                Ok(())
            }
        }
    }

    pub fn kind(&self, name: &QName) -> Option<NameKind> {
        self.kinds.get(name).copied()
    }

    pub fn of_kind(&self, kind: NameKind) -> impl Iterator<Item = &QName> {
        self.kinds
            .iter()
            .filter(move |(_, k)| **k == kind)
            .map(|(q, _)| q)
    }

    pub fn roles(&self) -> BTreeSet<&QName> {
        self.of_kind(NameKind::Role).collect()
    }

    pub fn concepts(&self) -> BTreeSet<&QName> {
        self.of_kind(NameKind::Concept).collect()
    }

    pub fn individuals(&self) -> BTreeSet<&QName> {
        self.of_kind(NameKind::Individual).collect()
    }
}

// ---------------------------------------------------------------------------
// Data values

/// Literal value of a data role.
///
/// Decimals are finite; `-0.0` is normalised to `0.0` by [`DataValue::decimal`].
#[derive(Debug, Clone)]
pub enum DataValue {
    Boolean(bool),
    Integer(i64),
    Decimal(f64),
    String(String),
    Enum(QName),
}

impl DataValue {
    pub fn decimal(v: f64) -> Result<Self, ModelError> {
        if !v.is_finite() {
            return Err(ModelError::NonFiniteDecimal);
        }
        Ok(DataValue::Decimal(if v == 0.0 { 0.0 } else { v }))
    }

    fn rank(&self) -> u8 {
        match self {
            DataValue::Boolean(_) => 0,
            DataValue::Integer(_) => 1,
            DataValue::Decimal(_) => 2,
            DataValue::String(_) => 3,
            DataValue::Enum(_) => 4,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            DataValue::Boolean(_) => "boolean",
            DataValue::Integer(_) => "integer",
            DataValue::Decimal(_) => "decimal",
            DataValue::String(_) => "string",
            DataValue::Enum(_) => "enum",
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            DataValue::Integer(i) => Some(*i as f64),
            DataValue::Decimal(d) => Some(*d),
            _ => None,
        }
    }

    /// Value comparison used by rule built-ins: integers and decimals compare
    /// numerically, other types only against their own type.
    pub fn compare(&self, other: &DataValue) -> Option<Ordering> {
        match (self, other) {
            (DataValue::Integer(a), DataValue::Integer(b)) => Some(a.cmp(b)),
            (a, b) if a.as_f64().is_some() && b.as_f64().is_some() => {
                a.as_f64()?.partial_cmp(&b.as_f64()?)
            }
            (DataValue::Boolean(a), DataValue::Boolean(b)) => Some(a.cmp(b)),
            (DataValue::String(a), DataValue::String(b)) => Some(a.cmp(b)),
            (DataValue::Enum(a), DataValue::Enum(b)) => Some(a.cmp(b)),
            _ => None,
        }
    }

    /// Same value under [`compare`](Self::compare) (so `1` matches `1.0`).
    pub fn same_value(&self, other: &DataValue) -> bool {
        self.compare(other) == Some(Ordering::Equal)
    }

    /// Rendering used inside assertion keys: integers carry an `i` suffix so
    /// they never collide with decimals (`42` is the decimal 42.0).
    pub fn key_text(&self) -> String {
        match self {
            DataValue::Boolean(b) => b.to_string(),
            DataValue::Integer(i) => format!("{i}i"),
            DataValue::Decimal(d) => format!("{d}"),
            DataValue::String(s) => format!("{s:?}"),
            DataValue::Enum(q) => q.to_string(),
        }
    }

    pub fn from_key_text(s: &str) -> Result<Self, ModelError> {
        let bad = || ModelError::MalformedKey(s.to_owned());
        match s {
            "true" => return Ok(DataValue::Boolean(true)),
            "false" => return Ok(DataValue::Boolean(false)),
            _ => {}
        }
        if s.starts_with('"') {
            let parsed: String = serde_json::from_str(s).map_err(|_| bad())?;
            return Ok(DataValue::String(parsed));
        }
        if let Some(digits) = s.strip_suffix('i') {
            if let Ok(i) = digits.parse::<i64>() {
                return Ok(DataValue::Integer(i));
            }
        }
        if let Ok(d) = s.parse::<f64>() {
            return DataValue::decimal(d);
        }
        QName::parse(s).map(DataValue::Enum).map_err(|_| bad())
    }
}

impl PartialEq for DataValue {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for DataValue {}

impl PartialOrd for DataValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DataValue {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (DataValue::Boolean(a), DataValue::Boolean(b)) => a.cmp(b),
            (DataValue::Integer(a), DataValue::Integer(b)) => a.cmp(b),
            (DataValue::Decimal(a), DataValue::Decimal(b)) => a.total_cmp(b),
            (DataValue::String(a), DataValue::String(b)) => a.cmp(b),
            (DataValue::Enum(a), DataValue::Enum(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl Hash for DataValue {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            DataValue::Boolean(b) => b.hash(state),
            DataValue::Integer(i) => i.hash(state),
            DataValue::Decimal(d) => d.to_bits().hash(state),
            DataValue::String(s) => s.hash(state),
            DataValue::Enum(q) => q.hash(state),
        }
    }
}

/// Literal syntax as written in rules: decimals always keep a fractional
/// part (`50.0`), strings are quoted.
impl fmt::Display for DataValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataValue::Boolean(b) => write!(f, "{b}"),
            DataValue::Integer(i) => write!(f, "{i}"),
            DataValue::Decimal(d) => write!(f, "{d:?}"),
            DataValue::String(s) => write!(f, "{s:?}"),
            DataValue::Enum(q) => write!(f, "{q}"),
        }
    }
}

/// JSON form: plain scalars for boolean/integer/decimal/string and
/// `{"enum": "phys:Gray"}` for enum tokens.
impl Serialize for DataValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        match self {
            DataValue::Boolean(b) => s.serialize_bool(*b),
            DataValue::Integer(i) => s.serialize_i64(*i),
            DataValue::Decimal(d) => s.serialize_f64(*d),
            DataValue::String(v) => s.serialize_str(v),
            DataValue::Enum(q) => {
                let mut m = s.serialize_map(Some(1))?;
                m.serialize_entry("enum", q)?;
                m.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for DataValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::Bool(b) => Ok(DataValue::Boolean(b)),
            serde_json::Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Ok(DataValue::Integer(i))
                } else {
                    let f = n.as_f64().ok_or_else(|| D::Error::custom("number out of range"))?;
                    DataValue::decimal(f).map_err(D::Error::custom)
                }
            }
            serde_json::Value::String(s) => Ok(DataValue::String(s)),
            serde_json::Value::Object(m) if m.len() == 1 && m.contains_key("enum") => {
                let s = m["enum"]
                    .as_str()
                    .ok_or_else(|| D::Error::custom("enum token must be a string"))?;
                QName::parse(s).map(DataValue::Enum).map_err(D::Error::custom)
            }
            other => Err(D::Error::custom(format!("unsupported data value {other}"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Assertions

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassAssertion {
    pub individual: QName,
    pub concept: QName,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RoleTarget {
    Individual(QName),
    Literal(DataValue),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RoleAssertion {
    pub subject: QName,
    pub role: QName,
    pub target: RoleTarget,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Assertion {
    Class(ClassAssertion),
    Role(RoleAssertion),
}

impl Assertion {
    pub fn class(individual: QName, concept: QName) -> Self {
        Assertion::Class(ClassAssertion {
            individual,
            concept,
        })
    }

    pub fn object(subject: QName, role: QName, object: QName) -> Self {
        Assertion::Role(RoleAssertion {
            subject,
            role,
            target: RoleTarget::Individual(object),
        })
    }

    pub fn data(subject: QName, role: QName, value: DataValue) -> Self {
        Assertion::Role(RoleAssertion {
            subject,
            role,
            target: RoleTarget::Literal(value),
        })
    }

    /// Individuals this assertion mentions (subject first).
    pub fn individuals(&self) -> Vec<&QName> {
        match self {
            Assertion::Class(c) => vec![&c.individual],
            Assertion::Role(r) => match &r.target {
                RoleTarget::Individual(o) => vec![&r.subject, o],
                RoleTarget::Literal(_) => vec![&r.subject],
            },
        }
    }

    pub fn subject(&self) -> &QName {
        match self {
            Assertion::Class(c) => &c.individual,
            Assertion::Role(r) => &r.subject,
        }
    }

    pub fn key(&self) -> String {
        make_assertion_key(self)
    }

    pub fn from_key(key: &str) -> Result<Self, ModelError> {
        let bad = || ModelError::MalformedKey(key.to_owned());
        let mut parts = key.splitn(4, '|');
        let tag = parts.next().ok_or_else(bad)?;
        let name = QName::parse(parts.next().ok_or_else(bad)?).map_err(|_| bad())?;
        let subject = QName::parse(parts.next().ok_or_else(bad)?).map_err(|_| bad())?;
        let rest = parts.next();
        match (tag, rest) {
            ("C", None) => Ok(Assertion::class(subject, name)),
            ("O", Some(o)) => Ok(Assertion::object(
                subject,
                name,
                QName::parse(o).map_err(|_| bad())?,
            )),
            ("D", Some(v)) => Ok(Assertion::data(subject, name, DataValue::from_key_text(v)?)),
            _ => Err(bad()),
        }
    }
}

/// Canonical dedup/ordering key, e.g. `C|l4_d:Passenger_Car|car_1`,
/// `O|phys:is_near|wheel_3|lane_5`, `D|phys:has_distance|car_1|42`.
pub fn make_assertion_key(assertion: &Assertion) -> String {
    match assertion {
        Assertion::Class(c) => format!("C|{}|{}", c.concept, c.individual),
        Assertion::Role(r) => match &r.target {
            RoleTarget::Individual(o) => format!("O|{}|{}|{}", r.role, r.subject, o),
            RoleTarget::Literal(v) => format!("D|{}|{}|{}", r.role, r.subject, v.key_text()),
        },
    }
}

/// Sorts by canonical key and drops duplicates.
pub fn canonicalize(assertions: &mut Vec<Assertion>) {
    assertions.sort_by_cached_key(make_assertion_key);
    assertions.dedup();
}

impl Serialize for Assertion {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.key())
    }
}

impl<'de> Deserialize<'de> for Assertion {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Assertion::from_key(&s).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Geometry and segments

/// Axis-aligned box in normalised image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.right().min(other.right()) - self.x.max(other.x);
        let h = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn is_valid(&self) -> bool {
        const EPS: f64 = 1e-9;
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite())
            && self.x >= -EPS
            && self.y >= -EPS
            && self.w >= 0.0
            && self.h >= 0.0
            && self.right() <= 1.0 + EPS
            && self.bottom() <= 1.0 + EPS
    }

    /// Box with the same centre, both sides multiplied by `factor`, clipped
    /// to the unit square.
    pub fn scaled_about_center(&self, factor: f64) -> BBox {
        let (cx, cy) = self.center();
        let (hw, hh) = (self.w * factor / 2.0, self.h * factor / 2.0);
        let x0 = (cx - hw).max(0.0);
        let y0 = (cy - hh).max(0.0);
        let x1 = (cx + hw).min(1.0);
        let y1 = (cy + hh).min(1.0);
        BBox::new(x0, y0, (x1 - x0).max(0.0), (y1 - y0).max(0.0))
    }
}

/// One detected region with its model outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub bbox: BBox,
    pub mask_area: f64,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dominant_color: Option<[u8; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_hint: Option<f64>,
    pub source_detector: String,
}

impl Segment {
    pub fn validate(&self, individual: &QName) -> Result<(), ModelError> {
        let fail = |reason: &str| {
            Err(ModelError::InvalidSegment {
                individual: individual.to_string(),
                reason: reason.to_owned(),
            })
        };
        if !self.bbox.is_valid() {
            return fail("bounding box outside the unit square");
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return fail("confidence outside [0, 1]");
        }
        if !(self.mask_area >= 0.0 && self.mask_area <= self.bbox.area() + 1e-6) {
            return fail("mask area exceeds box area");
        }
        if self.depth_hint.is_some_and(|d| !d.is_finite())
            || self
                .logits
                .as_ref()
                .is_some_and(|l| l.iter().any(|v| !v.is_finite()))
        {
            return fail("non-finite model output");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptScore {
    pub concept: QName,
    pub score: f64,
}

/// A fused individual together with everything ingestion knows about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneIndividual {
    pub id: QName,
    pub label: String,
    pub segment: Segment,
    pub candidates: Vec<ConceptScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<String>,
    /// Pass-through data-role values (distance, yaw, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<QName, DataValue>,
}

/// One frame: its individuals plus the A-Box built over them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: QName,
    pub time_position: f64,
    pub frame_ref: String,
    pub individuals: Vec<SceneIndividual>,
    pub assertions: Vec<Assertion>,
}

impl Scene {
    pub fn empty(id: QName) -> Self {
        Self {
            id,
            time_position: 0.0,
            frame_ref: String::new(),
            individuals: Vec::new(),
            assertions: Vec::new(),
        }
    }

    pub fn individual(&self, id: &QName) -> Option<&SceneIndividual> {
        self.individuals.iter().find(|i| &i.id == id)
    }

    pub fn individual_mut(&mut self, id: &QName) -> Option<&mut SceneIndividual> {
        self.individuals.iter_mut().find(|i| &i.id == id)
    }

    /// Checks id uniqueness, segment invariants and assertion closure. The
    /// scene's own id counts as a member (scene-level roles point at it).
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut seen = BTreeSet::new();
        for ind in &self.individuals {
            if !seen.insert(&ind.id) {
                return Err(ModelError::DuplicateIndividual(ind.id.clone()));
            }
            ind.segment.validate(&ind.id)?;
        }
        seen.insert(&self.id);
        for a in &self.assertions {
            for name in a.individuals() {
                if !seen.contains(name) {
                    return Err(ModelError::DanglingIndividual {
                        scene: self.id.clone(),
                        key: a.key(),
                        name: name.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scene serialises");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Time-ordered scenes plus the cross-scene track table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: QName,
    pub scenes: Vec<Scene>,
    /// track id → individual in each scene (by scene index), if present.
    #[serde(default)]
    pub tracks: BTreeMap<String, Vec<Option<QName>>>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ModelError> {
        for pair in self.scenes.windows(2) {
            if pair[1].time_position <= pair[0].time_position {
                return Err(ModelError::SceneOrder(pair[1].id.clone()));
            }
        }
        for scene in &self.scenes {
            scene.validate()?;
        }
        Ok(())
    }
}
