//! T-Box loading: the line-oriented taxonomy format, subsumption closure and
//! coherence warnings.
//!
//! ```text
//! prefix ex = <http://example.org/ex#>
//! concept l4_d:Vehicle
//! l4_d:Passenger_Car is_a l4_d:Vehicle
//! disjoint l4_d:Vehicle l4_d:Vulnerable_Road_User
//! role phys:is_part_of object domain=phys:Attachable_Part range=phys:Spatial_Object
//! role phys:no_plate data domain=l4_d:Vehicle range=integer functional
//! maxcard l4_d:Passenger_Car phys:number_of_wheels 4
//! derived phys:no_plate absence_of_part l4_d:License_Plate
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::Serialize;
use thiserror::Error;

use crate::model::{DataValue, NameKind, Names, Namespaces, QName};

/// The shipped six-layer-model-lite pack.
pub const SHIPPED_TAXONOMY: &str = include_str!("../assets/six_layer_lite.tax");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleKind {
    Object,
    Data,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Datatype {
    Boolean,
    Integer,
    Decimal,
    String,
    Enum(Vec<QName>),
}

impl Datatype {
    pub fn admits(&self, value: &DataValue) -> bool {
        match (self, value) {
            (Datatype::Boolean, DataValue::Boolean(_))
            | (Datatype::Integer, DataValue::Integer(_))
            | (Datatype::Decimal, DataValue::Decimal(_) | DataValue::Integer(_))
            | (Datatype::String, DataValue::String(_)) => true,
            (Datatype::Enum(tokens), DataValue::Enum(t)) => tokens.contains(t),
            _ => false,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Datatype::Integer | Datatype::Decimal)
    }
}

impl fmt::Display for Datatype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Datatype::Boolean => f.write_str("boolean"),
            Datatype::Integer => f.write_str("integer"),
            Datatype::Decimal => f.write_str("decimal"),
            Datatype::String => f.write_str("string"),
            Datatype::Enum(tokens) => {
                f.write_str("enum(")?;
                for (i, t) in tokens.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{t}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum RoleRange {
    Concept(QName),
    Datatype(Datatype),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoleDef {
    pub kind: RoleKind,
    pub domain: Option<QName>,
    pub range: Option<RoleRange>,
    pub functional: bool,
}

impl RoleDef {
    pub fn datatype(&self) -> Option<&Datatype> {
        match &self.range {
            Some(RoleRange::Datatype(d)) => Some(d),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Comparator {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "<")]
    Lt,
}

impl Comparator {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Ge => value >= threshold,
            Comparator::Gt => value > threshold,
            Comparator::Le => value <= threshold,
            Comparator::Lt => value < threshold,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Comparator::Ge => ">=",
            Comparator::Gt => ">",
            Comparator::Le => "<=",
            Comparator::Lt => "<",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            ">=" => Comparator::Ge,
            ">" => Comparator::Gt,
            "<=" => Comparator::Le,
            "<" => Comparator::Lt,
            _ => return None,
        })
    }
}

/// A threshold is either a literal or a reference to the ingestion config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Threshold {
    Value(f64),
    /// `FusionConfig::high_occlusion_threshold`
    HighOcclusion,
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Value(v) => write!(f, "{v:?}"),
            Threshold::HighOcclusion => f.write_str("high_occlusion_threshold"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum DerivedDefinition {
    /// Flag is set when no individual of `part` is linked to the subject via
    /// `via` (part → whole direction, default `phys:is_part_of`).
    AbsenceOfPart { part: QName, via: Option<QName> },
    ThresholdFlag {
        source: QName,
        comparator: Comparator,
        threshold: Threshold,
    },
    /// Flag is set when the subject is part of no individual of `container`.
    Independence { container: QName },
    /// Links every individual to the scene it appears in; the optional role
    /// receives the closed-world complement across a scenario.
    PresenceInScene { absence_role: Option<QName> },
}

/// A closed-world property computed from the A-Box rather than detected.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivedPropertySpec {
    pub target: QName,
    pub definition: DerivedDefinition,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CardinalityBound {
    pub concept: QName,
    pub role: QName,
    pub max: i64,
}

/// Terminology: concept and role hierarchies plus the constraints and derived
/// property definitions ingestion and reasoning rely on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TBox {
    #[serde(skip)]
    pub namespaces: Namespaces,
    pub concepts: BTreeSet<QName>,
    pub subclass_axioms: BTreeSet<(QName, QName)>,
    pub role_inclusions: BTreeSet<(QName, QName)>,
    pub disjoint_groups: Vec<BTreeSet<QName>>,
    pub role_defs: BTreeMap<QName, RoleDef>,
    pub cardinality_bounds: Vec<CardinalityBound>,
    pub derived_specs: Vec<DerivedPropertySpec>,
}

impl Default for TBox {
    fn default() -> Self {
        Self {
            namespaces: Namespaces::standard(),
            concepts: BTreeSet::new(),
            subclass_axioms: BTreeSet::new(),
            role_inclusions: BTreeSet::new(),
            disjoint_groups: Vec::new(),
            role_defs: BTreeMap::new(),
            cardinality_bounds: Vec::new(),
            derived_specs: Vec::new(),
        }
    }
}

impl TBox {
    pub fn shipped() -> Self {
        parse_taxonomy(SHIPPED_TAXONOMY).expect("shipped taxonomy parses")
    }

    pub fn is_concept(&self, q: &QName) -> bool {
        self.concepts.contains(q)
    }

    pub fn role(&self, q: &QName) -> Option<&RoleDef> {
        self.role_defs.get(q)
    }

    pub fn names(&self) -> Names {
        let mut names = Names::default();
        for c in &self.concepts {
            names.insert(c.clone(), NameKind::Concept).expect("kinds checked at parse");
        }
        for r in self.role_defs.keys() {
            names.insert(r.clone(), NameKind::Role).expect("kinds checked at parse");
        }
        names
    }

    /// Enum tokens admitted by any data role range.
    pub fn value_vocabulary(&self) -> BTreeSet<&QName> {
        self.role_defs
            .values()
            .filter_map(|r| match r.datatype() {
                Some(Datatype::Enum(tokens)) => Some(tokens.iter()),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn derived_spec(&self, target: &QName) -> Option<&DerivedPropertySpec> {
        self.derived_specs.iter().find(|d| &d.target == target)
    }

    /// Canonical text form; parses back to an identical TBox.
    pub fn to_text(&self) -> String {
        let standard = Namespaces::standard();
        let mut out = String::new();
        for (p, iri) in self.namespaces.iter() {
            if standard.iri(p) != Some(iri) {
                let _ = writeln!(out, "prefix {p} = <{iri}>");
            }
        }
        for c in &self.concepts {
            let _ = writeln!(out, "concept {c}");
        }
        for (child, parent) in &self.subclass_axioms {
            let _ = writeln!(out, "{child} is_a {parent}");
        }
        for group in &self.disjoint_groups {
            let members: Vec<String> = group.iter().map(ToString::to_string).collect();
            let _ = writeln!(out, "disjoint {}", members.join(" "));
        }
        for (name, def) in &self.role_defs {
            let kind = match def.kind {
                RoleKind::Object => "object",
                RoleKind::Data => "data",
            };
            let _ = write!(out, "role {name} {kind}");
            if let Some(d) = &def.domain {
                let _ = write!(out, " domain={d}");
            }
            match &def.range {
                Some(RoleRange::Concept(c)) => {
                    let _ = write!(out, " range={c}");
                }
                Some(RoleRange::Datatype(d)) => {
                    let _ = write!(out, " range={d}");
                }
                None => {}
            }
            if def.functional {
                out.push_str(" functional");
            }
            out.push('\n');
        }
        for (child, parent) in &self.role_inclusions {
            let _ = writeln!(out, "{child} is_a {parent}");
        }
        for b in &self.cardinality_bounds {
            let _ = writeln!(out, "maxcard {} {} {}", b.concept, b.role, b.max);
        }
        for d in &self.derived_specs {
            let _ = write!(out, "derived {} ", d.target);
            match &d.definition {
                DerivedDefinition::AbsenceOfPart { part, via } => {
                    let _ = write!(out, "absence_of_part {part}");
                    if let Some(v) = via {
                        let _ = write!(out, " via {v}");
                    }
                }
                DerivedDefinition::ThresholdFlag {
                    source,
                    comparator,
                    threshold,
                } => {
                    let _ = write!(out, "threshold_flag {source} {} {threshold}", comparator.symbol());
                }
                DerivedDefinition::Independence { container } => {
                    let _ = write!(out, "independence {container}");
                }
                DerivedDefinition::PresenceInScene { absence_role } => {
                    out.push_str("presence_in_scene");
                    if let Some(r) = absence_role {
                        let _ = write!(out, " {r}");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Errors

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaxonomyIssue {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown name `{name}`")]
    UnknownName { line: usize, name: String },
    #[error("subclass cycle: {}", render_cycle(.cycle))]
    Cycle { cycle: Vec<QName> },
}

fn render_cycle(cycle: &[QName]) -> String {
    cycle
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ⊑ ")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{} taxonomy error(s); first: {}", .issues.len(), .issues[0])]
pub struct TaxonomyError {
    pub issues: Vec<TaxonomyIssue>,
}

// ---------------------------------------------------------------------------
// Parsing

enum Pending {
    IsA(usize, QName, QName),
    Disjoint(usize, Vec<QName>),
    Role(usize, QName, RoleDef, Option<(String, usize)>, Option<String>),
    MaxCard(usize, QName, QName, i64),
    Derived(usize, DerivedPropertySpec),
}

/// Drops a `#` comment, ignoring `#` inside `<...>` IRIs.
fn strip_comment(line: &str) -> &str {
    let mut in_iri = false;
    for (i, c) in line.char_indices() {
        match c {
            '<' => in_iri = true,
            '>' => in_iri = false,
            '#' if !in_iri => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Splits a directive into whitespace tokens, keeping `enum( ... )` whole.
fn tokenize(line: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut depth = 0usize;
    for c in line.chars() {
        match c {
            '(' => {
                depth += 1;
                current.push(c);
            }
            ')' => {
                depth = depth.saturating_sub(1);
                current.push(c);
            }
            c if c.is_whitespace() && depth == 0 => {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
            }
            c if c.is_whitespace() => {}
            c => current.push(c),
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

struct Parser {
    ns: Namespaces,
    issues: Vec<TaxonomyIssue>,
}

impl Parser {
    fn err(&mut self, line: usize, message: impl Into<String>) {
        self.issues.push(TaxonomyIssue::Parse {
            line,
            message: message.into(),
        });
    }

    fn name(&mut self, line: usize, s: &str) -> Option<QName> {
        match self.ns.resolve(s) {
            Ok(q) => Some(q),
            Err(e) => {
                self.err(line, format!("`{s}`: {e}"));
                None
            }
        }
    }

    fn datatype(&mut self, line: usize, s: &str) -> Option<Datatype> {
        Some(match s {
            "boolean" => Datatype::Boolean,
            "integer" => Datatype::Integer,
            "decimal" => Datatype::Decimal,
            "string" => Datatype::String,
            _ => {
                let inner = s.strip_prefix("enum(")?.strip_suffix(')')?;
                let mut tokens = Vec::new();
                for t in inner.split(',').map(str::trim).filter(|t| !t.is_empty()) {
                    tokens.push(self.name(line, t)?);
                }
                if tokens.is_empty() {
                    self.err(line, "empty enum range");
                    return None;
                }
                Datatype::Enum(tokens)
            }
        })
    }
}

/// Parses a taxonomy document. All problems are collected, each with its
/// 1-based line number.
pub fn parse_taxonomy(doc: &str) -> Result<TBox, TaxonomyError> {
    let mut p = Parser {
        ns: Namespaces::standard(),
        issues: Vec::new(),
    };
    let mut concepts: BTreeMap<QName, usize> = BTreeMap::new();
    let mut pending = Vec::new();

    for (idx, raw) in doc.lines().enumerate() {
        let line = idx + 1;
        let text = strip_comment(raw).trim();
        if text.is_empty() {
            continue;
        }
        let tokens = tokenize(text);
        let t: Vec<&str> = tokens.iter().map(String::as_str).collect();
        match t.as_slice() {
            ["prefix", rest @ ..] => {
                let joined = rest.join(" ");
                let Some((prefix, iri)) = joined.split_once('=') else {
                    p.err(line, "expected `prefix p = <iri>`");
                    continue;
                };
                let iri = iri.trim();
                let Some(iri) = iri.strip_prefix('<').and_then(|s| s.strip_suffix('>')) else {
                    p.err(line, "IRI must be written in angle brackets");
                    continue;
                };
                if let Err(e) = p.ns.register(prefix.trim(), iri) {
                    p.err(line, e.to_string());
                }
            }
            ["concept", name] => {
                if let Some(q) = p.name(line, name) {
                    concepts.entry(q).or_insert(line);
                }
            }
            [child, "is_a", parent] => {
                if let (Some(c), Some(pa)) = (p.name(line, child), p.name(line, parent)) {
                    pending.push(Pending::IsA(line, c, pa));
                }
            }
            ["disjoint", members @ ..] => {
                let names: Vec<QName> = members.iter().filter_map(|m| p.name(line, m)).collect();
                if names.len() != members.len() {
                    continue;
                }
                if names.iter().collect::<BTreeSet<_>>().len() < 2 {
                    p.err(line, "a disjoint group needs at least two distinct concepts");
                    continue;
                }
                pending.push(Pending::Disjoint(line, names));
            }
            ["role", name, kind, attrs @ ..] => {
                let Some(q) = p.name(line, name) else { continue };
                let kind = match *kind {
                    "object" => RoleKind::Object,
                    "data" => RoleKind::Data,
                    other => {
                        p.err(line, format!("role kind must be `object` or `data`, got `{other}`"));
                        continue;
                    }
                };
                let mut def = RoleDef {
                    kind,
                    domain: None,
                    range: None,
                    functional: false,
                };
                let mut domain_text = None;
                let mut range_text = None;
                let mut ok = true;
                for a in attrs {
                    if let Some(d) = a.strip_prefix("domain=") {
                        domain_text = Some((d.to_owned(), line));
                    } else if let Some(r) = a.strip_prefix("range=") {
                        range_text = Some(r.to_owned());
                    } else if *a == "functional" {
                        def.functional = true;
                    } else {
                        p.err(line, format!("unexpected role attribute `{a}`"));
                        ok = false;
                    }
                }
                if ok {
                    pending.push(Pending::Role(line, q, def, domain_text, range_text));
                }
            }
            ["maxcard", concept, role, n] => {
                let (Some(c), Some(r)) = (p.name(line, concept), p.name(line, role)) else {
                    continue;
                };
                match n.parse::<i64>() {
                    Ok(n) if n >= 0 => pending.push(Pending::MaxCard(line, c, r, n)),
                    _ => p.err(line, format!("cardinality bound must be a non-negative integer, got `{n}`")),
                }
            }
            ["derived", target, rest @ ..] => {
                let Some(target) = p.name(line, target) else { continue };
                let definition = match rest {
                    ["absence_of_part", part] => p.name(line, part).map(|part| {
                        DerivedDefinition::AbsenceOfPart { part, via: None }
                    }),
                    ["absence_of_part", part, "via", via] => {
                        match (p.name(line, part), p.name(line, via)) {
                            (Some(part), Some(via)) => Some(DerivedDefinition::AbsenceOfPart {
                                part,
                                via: Some(via),
                            }),
                            _ => None,
                        }
                    }
                    ["threshold_flag", source, cmp, threshold] => {
                        let source = p.name(line, source);
                        let comparator = Comparator::parse(cmp);
                        let threshold = match *threshold {
                            "high_occlusion_threshold" => Some(Threshold::HighOcclusion),
                            s => s.parse::<f64>().ok().filter(|v| v.is_finite()).map(Threshold::Value),
                        };
                        match (source, comparator, threshold) {
                            (Some(source), Some(comparator), Some(threshold)) => {
                                Some(DerivedDefinition::ThresholdFlag {
                                    source,
                                    comparator,
                                    threshold,
                                })
                            }
                            _ => {
                                p.err(line, "expected `threshold_flag q:src <op> <finite number>`");
                                None
                            }
                        }
                    }
                    ["independence", container] => p
                        .name(line, container)
                        .map(|container| DerivedDefinition::Independence { container }),
                    ["presence_in_scene"] => {
                        Some(DerivedDefinition::PresenceInScene { absence_role: None })
                    }
                    ["presence_in_scene", absent] => p.name(line, absent).map(|r| {
                        DerivedDefinition::PresenceInScene {
                            absence_role: Some(r),
                        }
                    }),
                    _ => {
                        p.err(line, "unrecognised derived property definition");
                        None
                    }
                };
                if let Some(definition) = definition {
                    pending.push(Pending::Derived(line, DerivedPropertySpec { target, definition }));
                }
            }
            _ => p.err(line, format!("unknown directive `{}`", t[0])),
        }
    }

    // Second pass: everything is declared now, so forward references work.
    let mut tbox = TBox {
        concepts: concepts.keys().cloned().collect(),
        ..TBox::default()
    };
    let role_names: BTreeMap<QName, usize> = pending
        .iter()
        .filter_map(|d| match d {
            Pending::Role(line, q, ..) => Some((q.clone(), *line)),
            _ => None,
        })
        .collect();
    for (r, line) in &role_names {
        if tbox.concepts.contains(r) {
            p.err(*line, format!("`{r}` is declared both as a concept and as a role"));
        }
    }
    let unknown = |issues: &mut Vec<TaxonomyIssue>, line: usize, name: &QName| {
        issues.push(TaxonomyIssue::UnknownName {
            line,
            name: name.to_string(),
        })
    };

    for d in &pending {
        if let Pending::Role(line, q, def, domain, range) = d {
            let mut def = def.clone();
            if let Some((d, _)) = domain {
                def.domain = p.name(*line, d);
            }
            if let Some(r) = range {
                def.range = match def.kind {
                    RoleKind::Object => p.name(*line, r).map(RoleRange::Concept),
                    RoleKind::Data => match p.datatype(*line, r) {
                        Some(dt) => Some(RoleRange::Datatype(dt)),
                        None => {
                            p.err(*line, format!("unknown datatype `{r}`"));
                            None
                        }
                    },
                };
            }
            if tbox.role_defs.insert(q.clone(), def).is_some() {
                p.err(*line, format!("role `{q}` declared twice"));
            }
        }
    }

    for d in pending {
        match d {
            Pending::IsA(line, child, parent) => {
                let concepts = (tbox.concepts.contains(&child), tbox.concepts.contains(&parent));
                let roles = (tbox.role_defs.get(&child), tbox.role_defs.get(&parent));
                match (concepts, roles) {
                    ((true, true), _) => {
                        tbox.subclass_axioms.insert((child, parent));
                    }
                    (_, (Some(a), Some(b))) => {
                        if a.kind != b.kind {
                            p.err(line, "role inclusion between an object and a data role");
                        } else {
                            tbox.role_inclusions.insert((child, parent));
                        }
                    }
                    ((true, false), (None, Some(_))) | ((false, true), (Some(_), None)) => {
                        p.err(line, "`is_a` mixes a concept and a role")
                    }
                    _ => {
                        for n in [&child, &parent] {
                            if !tbox.concepts.contains(n) && !tbox.role_defs.contains_key(n) {
                                unknown(&mut p.issues, line, n);
                            }
                        }
                    }
                }
            }
            Pending::Disjoint(line, members) => {
                let mut ok = true;
                for m in &members {
                    if !tbox.concepts.contains(m) {
                        unknown(&mut p.issues, line, m);
                        ok = false;
                    }
                }
                if ok {
                    tbox.disjoint_groups.push(members.into_iter().collect());
                }
            }
            Pending::MaxCard(line, concept, role, max) => {
                let mut ok = true;
                if !tbox.concepts.contains(&concept) {
                    unknown(&mut p.issues, line, &concept);
                    ok = false;
                }
                match tbox.role_defs.get(&role) {
                    None => {
                        unknown(&mut p.issues, line, &role);
                        ok = false;
                    }
                    Some(def) if def.kind == RoleKind::Data && def.datatype() != Some(&Datatype::Integer) => {
                        p.err(line, format!("maxcard on data role `{role}` needs an integer range"));
                        ok = false;
                    }
                    Some(_) => {}
                }
                if ok {
                    tbox.cardinality_bounds.push(CardinalityBound { concept, role, max });
                }
            }
            Pending::Derived(line, spec) => {
                let mut names: Vec<&QName> = vec![&spec.target];
                let mut concepts_needed: Vec<&QName> = Vec::new();
                match &spec.definition {
                    DerivedDefinition::AbsenceOfPart { part, via } => {
                        concepts_needed.push(part);
                        names.extend(via.iter());
                    }
                    DerivedDefinition::ThresholdFlag { source, .. } => names.push(source),
                    DerivedDefinition::Independence { container } => concepts_needed.push(container),
                    DerivedDefinition::PresenceInScene { absence_role } => names.extend(absence_role.iter()),
                }
                let mut ok = true;
                for n in names {
                    if !tbox.role_defs.contains_key(n) {
                        unknown(&mut p.issues, line, n);
                        ok = false;
                    }
                }
                for c in concepts_needed {
                    if !tbox.concepts.contains(c) {
                        unknown(&mut p.issues, line, c);
                        ok = false;
                    }
                }
                if ok {
                    tbox.derived_specs.push(spec);
                }
            }
            Pending::Role(..) => {}
        }
    }

    for cycle in find_cycles(&tbox.subclass_axioms)
        .into_iter()
        .chain(find_cycles(&tbox.role_inclusions))
    {
        p.issues.push(TaxonomyIssue::Cycle { cycle });
    }

    // Group and bound order carries no meaning; keep one canonical order.
    tbox.disjoint_groups.sort();
    tbox.disjoint_groups.dedup();
    tbox.cardinality_bounds
        .sort_by(|a, b| (&a.concept, &a.role, a.max).cmp(&(&b.concept, &b.role, b.max)));
    tbox.cardinality_bounds.dedup();

    tbox.namespaces = p.ns;
    if p.issues.is_empty() {
        Ok(tbox)
    } else {
        Err(TaxonomyError { issues: p.issues })
    }
}

/// Returns one representative cycle per strongly connected knot, each listed
/// from its smallest member and closed (first element repeated at the end).
fn find_cycles(edges: &BTreeSet<(QName, QName)>) -> Vec<Vec<QName>> {
    let mut adj: BTreeMap<&QName, Vec<&QName>> = BTreeMap::new();
    for (c, p) in edges {
        adj.entry(c).or_default().push(p);
    }
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }
    fn visit<'a>(
        n: &'a QName,
        adj: &BTreeMap<&'a QName, Vec<&'a QName>>,
        marks: &mut BTreeMap<&'a QName, Mark>,
        stack: &mut Vec<&'a QName>,
        out: &mut Vec<Vec<QName>>,
    ) {
        marks.insert(n, Mark::Open);
        stack.push(n);
        for &next in adj.get(n).map(Vec::as_slice).unwrap_or(&[]) {
            match marks.get(next) {
                Some(Mark::Open) => {
                    let start = stack.iter().position(|s| *s == next).expect("on stack");
                    let mut cycle: Vec<QName> = stack[start..].iter().map(|q| (*q).clone()).collect();
                    let min = cycle
                        .iter()
                        .enumerate()
                        .min_by(|a, b| a.1.cmp(b.1))
                        .map(|(i, _)| i)
                        .unwrap_or(0);
                    cycle.rotate_left(min);
                    cycle.push(cycle[0].clone());
                    out.push(cycle);
                }
                Some(Mark::Done) => {}
                None => visit(next, adj, marks, stack, out),
            }
        }
        stack.pop();
        marks.insert(n, Mark::Done);
    }
    let mut marks = BTreeMap::new();
    let mut out = Vec::new();
    let nodes: Vec<&QName> = adj.keys().copied().collect();
    for n in nodes {
        if !marks.contains_key(n) {
            visit(n, &adj, &mut marks, &mut Vec::new(), &mut out);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Closure

/// Reflexive-transitive closure of the concept and role hierarchies.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SubsumptionClosure {
    pub concepts: BTreeMap<QName, BTreeSet<QName>>,
    pub roles: BTreeMap<QName, BTreeSet<QName>>,
}

impl SubsumptionClosure {
    /// Ancestors of `c` including itself; unknown names map to `{c}`.
    pub fn ancestors(&self, c: &QName) -> BTreeSet<QName> {
        self.concepts
            .get(c)
            .cloned()
            .unwrap_or_else(|| BTreeSet::from([c.clone()]))
    }

    pub fn is_subsumed(&self, child: &QName, parent: &QName) -> bool {
        child == parent
            || self
                .concepts
                .get(child)
                .is_some_and(|a| a.contains(parent))
    }

    pub fn compatible(&self, a: &QName, b: &QName) -> bool {
        self.is_subsumed(a, b) || self.is_subsumed(b, a)
    }

    pub fn super_roles(&self, r: &QName) -> BTreeSet<QName> {
        self.roles
            .get(r)
            .cloned()
            .unwrap_or_else(|| BTreeSet::from([r.clone()]))
    }

    pub fn is_subrole(&self, child: &QName, parent: &QName) -> bool {
        child == parent || self.roles.get(child).is_some_and(|a| a.contains(parent))
    }
}

fn close<'a>(
    nodes: impl Iterator<Item = &'a QName>,
    edges: &BTreeSet<(QName, QName)>,
) -> BTreeMap<QName, BTreeSet<QName>> {
    let mut parents: BTreeMap<&QName, Vec<&QName>> = BTreeMap::new();
    for (c, p) in edges {
        parents.entry(c).or_default().push(p);
    }
    let mut memo: BTreeMap<QName, BTreeSet<QName>> = BTreeMap::new();
    fn go(
        n: &QName,
        parents: &BTreeMap<&QName, Vec<&QName>>,
        memo: &mut BTreeMap<QName, BTreeSet<QName>>,
    ) -> BTreeSet<QName> {
        if let Some(done) = memo.get(n) {
            return done.clone();
        }
        // Placeholder guards against cycles in unvalidated input.
        memo.insert(n.clone(), BTreeSet::from([n.clone()]));
        let mut acc = BTreeSet::from([n.clone()]);
        for p in parents.get(n).map(Vec::as_slice).unwrap_or(&[]) {
            acc.extend(go(p, parents, memo));
        }
        memo.insert(n.clone(), acc.clone());
        acc
    }
    for n in nodes {
        go(n, &parents, &mut memo);
    }
    memo
}

pub fn subsumption_closure(tbox: &TBox) -> SubsumptionClosure {
    SubsumptionClosure {
        concepts: close(tbox.concepts.iter(), &tbox.subclass_axioms),
        roles: close(tbox.role_defs.keys(), &tbox.role_inclusions),
    }
}

// ---------------------------------------------------------------------------
// Coherence

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoherenceWarning {
    UnsatisfiableConcept {
        concept: QName,
        clashing: Vec<QName>,
    },
    UndeclaredDomain {
        role: QName,
        concept: QName,
    },
    UndeclaredRange {
        role: QName,
        concept: QName,
    },
}

impl fmt::Display for CoherenceWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoherenceWarning::UnsatisfiableConcept { concept, clashing } => {
                let names: Vec<String> = clashing.iter().map(ToString::to_string).collect();
                write!(f, "`{concept}` is unsatisfiable: subsumed by disjoint {}", names.join(", "))
            }
            CoherenceWarning::UndeclaredDomain { role, concept } => {
                write!(f, "role `{role}` has undeclared domain `{concept}`")
            }
            CoherenceWarning::UndeclaredRange { role, concept } => {
                write!(f, "role `{role}` has undeclared range `{concept}`")
            }
        }
    }
}

pub fn check_tbox_coherence(tbox: &TBox) -> Vec<CoherenceWarning> {
    let closure = subsumption_closure(tbox);
    let mut out = Vec::new();
    for c in &tbox.concepts {
        let ancestors = closure.ancestors(c);
        for group in &tbox.disjoint_groups {
            let hit: Vec<QName> = group.intersection(&ancestors).cloned().collect();
            if hit.len() >= 2 {
                out.push(CoherenceWarning::UnsatisfiableConcept {
                    concept: c.clone(),
                    clashing: hit,
                });
            }
        }
    }
    for (role, def) in &tbox.role_defs {
        if let Some(d) = &def.domain {
            if !tbox.is_concept(d) {
                out.push(CoherenceWarning::UndeclaredDomain {
                    role: role.clone(),
                    concept: d.clone(),
                });
            }
        }
        if let Some(RoleRange::Concept(r)) = &def.range {
            if !tbox.is_concept(r) {
                out.push(CoherenceWarning::UndeclaredRange {
                    role: role.clone(),
                    concept: r.clone(),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &str) -> QName {
        QName::parse(s).unwrap()
    }

    #[test]
    fn shipped_pack_contents() {
        let tbox = TBox::shipped();
        for name in [
            "l4_d:Vehicle",
            "l4_d:Passenger_Car",
            "l4_d:Vulnerable_Road_User",
            "l4_d:Stroller",
            "l4_d:Bicycle",
            "l4_d:Vehicle_Wheel",
            "l1_c:Driveable_Lane",
            "l1_c:Crossing_Site",
            "l4_d:Traffic_Sign",
        ] {
            assert!(tbox.is_concept(&q(name)), "{name} missing");
        }
        assert!(tbox
            .subclass_axioms
            .contains(&(q("l4_d:Passenger_Car"), q("l4_d:Vehicle"))));
        assert!((35..=45).contains(&tbox.concepts.len()));
        assert!(check_tbox_coherence(&tbox).is_empty());
    }

    #[test]
    fn empty_document_is_empty_tbox() {
        let tbox = parse_taxonomy("").unwrap();
        assert!(tbox.concepts.is_empty() && tbox.role_defs.is_empty());
        let tbox = parse_taxonomy("# only a comment\n\n").unwrap();
        assert_eq!(tbox, TBox::default());
    }

    #[test]
    fn cycles_are_rejected() {
        let err = parse_taxonomy("concept l4_d:A\nconcept l4_d:B\nl4_d:A is_a l4_d:B\nl4_d:B is_a l4_d:A\n")
            .unwrap_err();
        assert_eq!(
            err.issues,
            vec![TaxonomyIssue::Cycle {
                cycle: vec![q("l4_d:A"), q("l4_d:B"), q("l4_d:A")]
            }]
        );
        let err = parse_taxonomy("concept l4_d:A\nl4_d:A is_a l4_d:A\n").unwrap_err();
        assert!(matches!(err.issues[0], TaxonomyIssue::Cycle { .. }));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_taxonomy("concept l4_d:A\nfrobnicate l4_d:A\nl4_d:A is_a l4_d:Missing\n").unwrap_err();
        assert_eq!(
            err.issues,
            vec![
                TaxonomyIssue::Parse {
                    line: 2,
                    message: "unknown directive `frobnicate`".into()
                },
                TaxonomyIssue::UnknownName {
                    line: 3,
                    name: "l4_d:Missing".into()
                },
            ]
        );
        let err = parse_taxonomy("concept zz:A\n").unwrap_err();
        assert!(matches!(err.issues[0], TaxonomyIssue::Parse { line: 1, .. }));
    }

    #[test]
    fn prefixes_and_roles() {
        let doc = "prefix ex = <http://example.org/ex#>\n\
                   concept ex:Thing\n\
                   role ex:r object domain=ex:Thing range=ex:Thing functional\n\
                   role ex:s object\n\
                   ex:r is_a ex:s\n\
                   role ex:c data range=enum(ex:Red, ex:Blue)\n";
        let tbox = parse_taxonomy(doc).unwrap();
        assert!(tbox.role(&q("ex:r")).unwrap().functional);
        assert!(tbox.role_inclusions.contains(&(q("ex:r"), q("ex:s"))));
        assert_eq!(tbox.value_vocabulary().len(), 2);
        let closure = subsumption_closure(&tbox);
        assert!(closure.is_subrole(&q("ex:r"), &q("ex:s")));
        let conflict = parse_taxonomy("prefix phys = <http://elsewhere/>\n").unwrap_err();
        assert!(matches!(conflict.issues[0], TaxonomyIssue::Parse { line: 1, .. }));
    }

    #[test]
    fn closure_examples() {
        let tbox = TBox::shipped();
        let closure = subsumption_closure(&tbox);
        let car = closure.ancestors(&q("l4_d:Passenger_Car"));
        assert!(car.contains(&q("l4_d:Passenger_Car")) && car.contains(&q("l4_d:Vehicle")));
        assert_eq!(
            closure.ancestors(&q("traf:Scene")),
            BTreeSet::from([q("traf:Scene")])
        );
        let chain = parse_taxonomy(
            "concept l4_d:A\nconcept l4_d:B\nconcept l4_d:C\nl4_d:A is_a l4_d:B\nl4_d:B is_a l4_d:C\n",
        )
        .unwrap();
        let a = subsumption_closure(&chain).ancestors(&q("l4_d:A"));
        assert_eq!(a, BTreeSet::from([q("l4_d:A"), q("l4_d:B"), q("l4_d:C")]));
    }

    #[test]
    fn coherence_warnings() {
        let doc = "concept l4_d:Vehicle\nconcept l4_d:Pedestrian\nconcept l4_d:X\n\
                   disjoint l4_d:Vehicle l4_d:Pedestrian\n\
                   l4_d:X is_a l4_d:Vehicle\nl4_d:X is_a l4_d:Pedestrian\n\
                   role phys:r object domain=l4_d:Vehicle range=l4_d:Nowhere\n";
        let tbox = parse_taxonomy(doc).unwrap();
        let warnings = check_tbox_coherence(&tbox);
        assert_eq!(
            warnings,
            vec![
                CoherenceWarning::UnsatisfiableConcept {
                    concept: q("l4_d:X"),
                    clashing: vec![q("l4_d:Pedestrian"), q("l4_d:Vehicle")],
                },
                CoherenceWarning::UndeclaredRange {
                    role: q("phys:r"),
                    concept: q("l4_d:Nowhere"),
                },
            ]
        );
    }

    #[test]
    fn shipped_pack_round_trips_through_text() {
        let tbox = TBox::shipped();
        let again = parse_taxonomy(&tbox.to_text()).unwrap();
        assert_eq!(again, tbox);
    }
}
