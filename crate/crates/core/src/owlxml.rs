//! Reader and writer for the OWL/XML subset used to share scene graphs.
//!
//! One document carries a T-Box, one scene and a rule pack. Metadata that
//! OWL has no axiom for (scene timing, fused-individual geometry, derived
//! property definitions, rule ids) travels as annotations in the
//! `urn:scenekg:meta#` namespace. Output is canonical: fixed section order,
//! entries sorted within a section, LF line ends and two-space indentation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use quick_xml::events::Event;
use quick_xml::Reader;
use thiserror::Error;

use crate::model::{
    canonicalize, Assertion, DataValue, Namespaces, QName, RoleTarget, Scenario, Scene,
    SceneIndividual,
};
use crate::rules::{format_rule, parse_rule_with, Atom, BuiltinOp, Rule, RulePack, Term};
use crate::taxonomy::{parse_taxonomy, Datatype, RoleDef, RoleKind, RoleRange, TBox};

pub const OWL_NS: &str = "http://www.w3.org/2002/07/owl#";
pub const XSD_NS: &str = "http://www.w3.org/2001/XMLSchema#";
pub const META_NS: &str = "urn:scenekg:meta#";
pub const VAR_NS: &str = "urn:swrl:var#";

/// Prefixes every document declares besides the T-Box namespaces.
const RESERVED_PREFIXES: &[(&str, &str)] = &[
    ("meta", META_NS),
    ("owl", OWL_NS),
    ("rdf", "http://www.w3.org/1999/02/22-rdf-syntax-ns#"),
    ("rdfs", "http://www.w3.org/2000/01/rdf-schema#"),
    ("xml", "http://www.w3.org/XML/1998/namespace"),
    ("xsd", XSD_NS),
];

const SQWRL_SELECT: &str = "sqwrl:select";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OwlError {
    #[error("XML syntax error at byte {offset}: {message}")]
    XmlSyntax { offset: usize, message: String },
    #[error("unsupported OWL construct(s): {}", .constructs.join("; "))]
    UnsupportedConstruct { constructs: Vec<String> },
    #[error("referenced but not declared: {}", .names.join(", "))]
    DanglingReference { names: Vec<String> },
    #[error("malformed document: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImportMode {
    /// Any construct outside the subset fails the import.
    #[default]
    Strict,
    /// Constructs outside the subset are skipped and reported as warnings.
    Lenient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OwlImport {
    pub tbox: TBox,
    pub scene: Scene,
    pub pack: RulePack,
    pub warnings: Vec<String>,
}

// ---------------------------------------------------------------------------
// Mini DOM

#[derive(Debug, Clone, PartialEq, Default)]
struct Elem {
    name: String,
    attrs: Vec<(String, String)>,
    children: Vec<Elem>,
    text: Option<String>,
}

impl Elem {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_owned(),
            ..Self::default()
        }
    }

    fn attr(mut self, k: &str, v: impl Into<String>) -> Self {
        self.attrs.push((k.to_owned(), v.into()));
        self
    }

    fn child(mut self, c: Elem) -> Self {
        self.children.push(c);
        self
    }

    fn text(mut self, t: impl Into<String>) -> Self {
        self.text = Some(t.into());
        self
    }

    fn get(&self, k: &str) -> Option<&str> {
        self.attrs.iter().find(|(n, _)| n == k).map(|(_, v)| v.as_str())
    }

    fn write(&self, out: &mut String, depth: usize) {
        let pad = "  ".repeat(depth);
        let _ = write!(out, "{pad}<{}", self.name);
        for (k, v) in &self.attrs {
            let _ = write!(out, " {k}=\"{}\"", escape(v));
        }
        match (&self.text, self.children.is_empty()) {
            (None, true) => out.push_str("/>\n"),
            (Some(t), _) => {
                let _ = writeln!(out, ">{}</{}>", escape(t), self.name);
            }
            (None, false) => {
                out.push_str(">\n");
                for c in &self.children {
                    c.write(out, depth + 1);
                }
                let _ = writeln!(out, "{pad}</{}>", self.name);
            }
        }
    }

    fn render(&self) -> String {
        let mut s = String::new();
        self.write(&mut s, 0);
        s
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            '\r' => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
    out
}

fn local_tag(raw: &[u8]) -> String {
    let s = String::from_utf8_lossy(raw);
    match s.rsplit_once(':') {
        Some((_, l)) => l.to_owned(),
        None => s.into_owned(),
    }
}

fn parse_dom(bytes: &[u8]) -> Result<Elem, OwlError> {
    let text = std::str::from_utf8(bytes).map_err(|e| OwlError::XmlSyntax {
        offset: e.valid_up_to(),
        message: "invalid UTF-8".into(),
    })?;
    let mut reader = Reader::from_str(text);
    reader.config_mut().trim_text(false);
    let syntax = |offset: u64, message: String| OwlError::XmlSyntax {
        offset: offset as usize,
        message,
    };

    let mut stack: Vec<(Elem, String)> = Vec::new();
    let mut root: Option<Elem> = None;
    loop {
        let event = reader
            .read_event()
            .map_err(|e| syntax(reader.error_position(), e.to_string()))?;
        let pos = reader.buffer_position();
        let open = |e: &quick_xml::events::BytesStart<'_>| -> Result<Elem, OwlError> {
            let mut el = Elem::new(&local_tag(e.name().as_ref()));
            for a in e.attributes() {
                let a = a.map_err(|err| syntax(pos, err.to_string()))?;
                let key = String::from_utf8_lossy(a.key.as_ref()).into_owned();
                let value = a
                    .unescape_value()
                    .map_err(|err| syntax(pos, err.to_string()))?
                    .into_owned();
                el.attrs.push((key, value));
            }
            Ok(el)
        };
        match event {
            Event::Start(e) => {
                let el = open(&e)?;
                stack.push((el, String::new()));
            }
            Event::Empty(e) => {
                let el = open(&e)?;
                match stack.last_mut() {
                    Some((parent, _)) => parent.children.push(el),
                    None if root.is_none() => root = Some(el),
                    None => return Err(syntax(pos, "content after the root element".into())),
                }
            }
            Event::Text(t) => {
                let s = t.unescape().map_err(|err| syntax(pos, err.to_string()))?;
                match stack.last_mut() {
                    Some((_, acc)) => acc.push_str(&s),
                    None if s.trim().is_empty() => {}
                    None => return Err(syntax(pos, "text outside the root element".into())),
                }
            }
            Event::CData(t) => {
                if let Some((_, acc)) = stack.last_mut() {
                    acc.push_str(&String::from_utf8_lossy(&t));
                }
            }
            Event::End(_) => {
                let (mut el, acc) = stack.pop().expect("reader checks end tags");
                if el.children.is_empty() {
                    el.text = Some(acc);
                }
                match stack.last_mut() {
                    Some((parent, _)) => parent.children.push(el),
                    None if root.is_none() => root = Some(el),
                    None => return Err(syntax(pos, "content after the root element".into())),
                }
            }
            Event::Eof => break,
            Event::Decl(_) | Event::Comment(_) | Event::PI(_) | Event::DocType(_) => {}
        }
    }
    if !stack.is_empty() {
        return Err(syntax(
            text.len() as u64,
            format!("unexpected end of input inside <{}>", stack.last().unwrap().0.name),
        ));
    }
    root.ok_or_else(|| syntax(text.len() as u64, "document has no root element".into()))
}

// ---------------------------------------------------------------------------
// Export

fn abbrev(q: &QName) -> String {
    format!("{}:{}", q.prefix(), q.local_name())
}

fn ent(kind: &str, q: &QName) -> Elem {
    Elem::new(kind).attr("abbreviatedIRI", abbrev(q))
}

fn meta(name: &str) -> Elem {
    Elem::new("AnnotationProperty").attr("abbreviatedIRI", format!("meta:{name}"))
}

fn xsd(name: &str) -> String {
    format!("{XSD_NS}{name}")
}

/// xsd:decimal has no exponent form; `Display` for f64 never produces one.
fn decimal_text(d: f64) -> String {
    format!("{d}")
}

fn literal(v: &DataValue) -> Elem {
    let (ty, text) = match v {
        DataValue::Boolean(b) => ("boolean", b.to_string()),
        DataValue::Integer(i) => ("integer", i.to_string()),
        DataValue::Decimal(d) => ("decimal", decimal_text(*d)),
        DataValue::String(s) => ("string", s.clone()),
        DataValue::Enum(q) => ("QName", abbrev(q)),
    };
    Elem::new("Literal").attr("datatypeIRI", xsd(ty)).text(text)
}

fn string_literal(s: &str) -> Elem {
    literal(&DataValue::String(s.to_owned()))
}

fn annotation(name: &str, value: Elem) -> Elem {
    Elem::new("Annotation").child(meta(name)).child(value)
}

fn datatype_name(d: &Datatype) -> Option<&'static str> {
    Some(match d {
        Datatype::Boolean => "boolean",
        Datatype::Integer => "integer",
        Datatype::Decimal => "decimal",
        Datatype::String => "string",
        Datatype::Enum(_) => return None,
    })
}

fn datarange(d: &Datatype) -> Elem {
    match d {
        Datatype::Enum(tokens) => tokens.iter().fold(Elem::new("DataOneOf"), |e, t| {
            e.child(literal(&DataValue::Enum(t.clone())))
        }),
        other => Elem::new("Datatype").attr(
            "abbreviatedIRI",
            format!("xsd:{}", datatype_name(other).expect("not an enum")),
        ),
    }
}

fn role_tags(kind: RoleKind) -> (&'static str, &'static str) {
    match kind {
        RoleKind::Object => ("ObjectProperty", "Object"),
        RoleKind::Data => ("DataProperty", "Data"),
    }
}

fn term(t: &Term) -> Elem {
    match t {
        Term::Var(v) => Elem::new("Variable").attr("IRI", format!("{VAR_NS}{v}")),
        Term::Individual(q) => ent("NamedIndividual", q),
        Term::Literal(v) => literal(v),
    }
}

fn atom(a: &Atom) -> Elem {
    match a {
        Atom::Class { concept, arg } => Elem::new("ClassAtom").child(ent("Class", concept)).child(term(arg)),
        Atom::ObjectProp { role, subject, object } => Elem::new("ObjectPropertyAtom")
            .child(ent("ObjectProperty", role))
            .child(term(subject))
            .child(term(object)),
        Atom::DataProp { role, subject, value } => Elem::new("DataPropertyAtom")
            .child(ent("DataProperty", role))
            .child(term(subject))
            .child(term(value)),
        Atom::Builtin { op, left, right } => Elem::new("BuiltInAtom")
            .attr("abbreviatedIRI", format!("swrb:{}", op.name()))
            .child(term(left))
            .child(term(right)),
        Atom::DifferentFrom(a, b) => Elem::new("DifferentIndividualsAtom").child(term(a)).child(term(b)),
        Atom::Select(vars) => vars.iter().fold(
            Elem::new("BuiltInAtom").attr("abbreviatedIRI", SQWRL_SELECT),
            |e, v| e.child(term(&Term::Var(v.clone()))),
        ),
    }
}

/// Everything a document mentions, for declarations and subset checks.
#[derive(Default)]
struct Usage {
    classes: BTreeSet<QName>,
    object_roles: BTreeSet<QName>,
    data_roles: BTreeSet<QName>,
    individuals: BTreeSet<QName>,
    problems: BTreeSet<String>,
}

impl Usage {
    fn class(&mut self, tbox: &TBox, q: &QName, ctx: &str) {
        if !tbox.is_concept(q) {
            self.problems.insert(format!("{ctx}: undeclared class {q}"));
        }
        self.classes.insert(q.clone());
    }

    fn role(&mut self, tbox: &TBox, q: &QName, kind: RoleKind, ctx: &str) {
        match tbox.role(q) {
            Some(def) if def.kind == kind => {}
            Some(_) => {
                self.problems.insert(format!("{ctx}: {q} used with the wrong property kind"));
            }
            None => {
                self.problems.insert(format!("{ctx}: undeclared property {q}"));
            }
        }
        match kind {
            RoleKind::Object => self.object_roles.insert(q.clone()),
            RoleKind::Data => self.data_roles.insert(q.clone()),
        };
    }

    fn term(&mut self, t: &Term) {
        if let Term::Individual(q) = t {
            self.individuals.insert(q.clone());
        }
    }
}

fn sorted(mut v: Vec<Elem>) -> Vec<Elem> {
    v.sort_by_cached_key(Elem::render);
    v.dedup();
    v
}

/// Serializes a T-Box, one scene and a rule pack as a single OWL/XML document.
pub fn export_owl(tbox: &TBox, scene: &Scene, pack: &RulePack) -> Result<String, OwlError> {
    let ns = &tbox.namespaces;
    let mut use_ = Usage::default();

    let mut prefixes: BTreeMap<&str, &str> = ns.iter().collect();
    for (p, iri) in RESERVED_PREFIXES {
        match prefixes.insert(p, iri) {
            Some(existing) if existing != *iri => {
                use_.problems.insert(format!("Prefix `{p}` is reserved for <{iri}>"));
            }
            _ => {}
        }
    }
    let check_prefix = |q: &QName, problems: &mut BTreeSet<String>| {
        if ns.iri(q.prefix()).is_none() {
            problems.insert(format!("{q}: prefix `{}` is not declared", q.prefix()));
        }
    };
    let ontology_iri = match ns.expand(&scene.id) {
        Some(iri) => iri,
        None => {
            use_.problems.insert(format!("scene id {}: prefix not declared", scene.id));
            String::new()
        }
    };

    // T-Box axioms
    use_.classes.extend(tbox.concepts.iter().cloned());
    for (name, def) in &tbox.role_defs {
        match def.kind {
            RoleKind::Object => use_.object_roles.insert(name.clone()),
            RoleKind::Data => use_.data_roles.insert(name.clone()),
        };
    }
    let mut subclass = Vec::new();
    for (child, parent) in &tbox.subclass_axioms {
        subclass.push(Elem::new("SubClassOf").child(ent("Class", child)).child(ent("Class", parent)));
    }
    for b in &tbox.cardinality_bounds {
        let restriction = match tbox.role(&b.role).map(|d| d.kind) {
            Some(RoleKind::Data) => Elem::new("DataAllValuesFrom").child(ent("DataProperty", &b.role)).child(
                Elem::new("DatatypeRestriction")
                    .child(Elem::new("Datatype").attr("abbreviatedIRI", "xsd:integer"))
                    .child(
                        Elem::new("FacetRestriction")
                            .attr("facet", xsd("maxInclusive"))
                            .child(literal(&DataValue::Integer(b.max))),
                    ),
            ),
            _ => Elem::new("ObjectMaxCardinality")
                .attr("cardinality", b.max.to_string())
                .child(ent("ObjectProperty", &b.role)),
        };
        subclass.push(Elem::new("SubClassOf").child(ent("Class", &b.concept)).child(restriction));
    }
    let disjoint: Vec<Elem> = tbox
        .disjoint_groups
        .iter()
        .map(|g| g.iter().fold(Elem::new("DisjointClasses"), |e, c| e.child(ent("Class", c))))
        .collect();
    let mut subprop = Vec::new();
    let mut functional = Vec::new();
    let mut domain_range = Vec::new();
    for (child, parent) in &tbox.role_inclusions {
        let kind = tbox.role(child).map(|d| d.kind).unwrap_or(RoleKind::Object);
        let (tag, word) = role_tags(kind);
        subprop.push(
            Elem::new(&format!("Sub{word}PropertyOf"))
                .child(ent(tag, child))
                .child(ent(tag, parent)),
        );
    }
    for (name, RoleDef { kind, domain, range, functional: f }) in &tbox.role_defs {
        let (tag, word) = role_tags(*kind);
        if *f {
            functional.push(Elem::new(&format!("Functional{word}Property")).child(ent(tag, name)));
        }
        if let Some(d) = domain {
            domain_range.push(Elem::new(&format!("{word}PropertyDomain")).child(ent(tag, name)).child(ent("Class", d)));
        }
        let range = match range {
            Some(RoleRange::Concept(c)) => ent("Class", c),
            Some(RoleRange::Datatype(d)) => datarange(d),
            None => continue,
        };
        domain_range.push(Elem::new(&format!("{word}PropertyRange")).child(ent(tag, name)).child(range));
    }

    // A-Box
    let mut class_asserts = Vec::new();
    let mut object_asserts = Vec::new();
    let mut data_asserts = Vec::new();
    for a in &scene.assertions {
        match a {
            Assertion::Class(c) => {
                use_.class(tbox, &c.concept, "ClassAssertion");
                use_.individuals.insert(c.individual.clone());
                class_asserts.push(
                    Elem::new("ClassAssertion")
                        .child(ent("Class", &c.concept))
                        .child(ent("NamedIndividual", &c.individual)),
                );
            }
            Assertion::Role(r) => {
                use_.individuals.insert(r.subject.clone());
                match &r.target {
                    RoleTarget::Individual(o) => {
                        use_.role(tbox, &r.role, RoleKind::Object, "ObjectPropertyAssertion");
                        use_.individuals.insert(o.clone());
                        object_asserts.push(
                            Elem::new("ObjectPropertyAssertion")
                                .child(ent("ObjectProperty", &r.role))
                                .child(ent("NamedIndividual", &r.subject))
                                .child(ent("NamedIndividual", o)),
                        );
                    }
                    RoleTarget::Literal(v) => {
                        use_.role(tbox, &r.role, RoleKind::Data, "DataPropertyAssertion");
                        data_asserts.push(
                            Elem::new("DataPropertyAssertion")
                                .child(ent("DataProperty", &r.role))
                                .child(ent("NamedIndividual", &r.subject))
                                .child(literal(v)),
                        );
                    }
                }
            }
        }
    }
    let mut annotations = Vec::new();
    for ind in &scene.individuals {
        use_.individuals.insert(ind.id.clone());
        let json = serde_json::to_string(ind).expect("individual serialises");
        annotations.push(
            Elem::new("AnnotationAssertion")
                .child(meta("individual"))
                .child(Elem::new("AbbreviatedIRI").text(abbrev(&ind.id)))
                .child(string_literal(&json)),
        );
    }

    // Rules stay in pack order: a pack is an ordered list.
    let mut rules = Vec::new();
    for rule in &pack.rules {
        for a in rule.body.iter().chain(&rule.head) {
            match a {
                Atom::Class { concept, .. } => use_.class(tbox, concept, &rule.id),
                Atom::ObjectProp { role, .. } => use_.role(tbox, role, RoleKind::Object, &rule.id),
                Atom::DataProp { role, .. } => use_.role(tbox, role, RoleKind::Data, &rule.id),
                _ => {}
            }
            for t in a.terms() {
                use_.term(t);
            }
        }
        let body = rule.body.iter().fold(Elem::new("Body"), |e, a| e.child(atom(a)));
        let head = rule.head.iter().fold(Elem::new("Head"), |e, a| e.child(atom(a)));
        rules.push(
            Elem::new("DLSafeRule")
                .child(annotation("ruleId", string_literal(&rule.id)))
                .child(
                    Elem::new("Annotation")
                        .child(Elem::new("AnnotationProperty").attr("abbreviatedIRI", "rdfs:label"))
                        .child(string_literal(&rule.label)),
                )
                .child(body)
                .child(head),
        );
    }

    for q in use_
        .classes
        .iter()
        .chain(&use_.object_roles)
        .chain(&use_.data_roles)
        .chain(&use_.individuals)
    {
        check_prefix(q, &mut use_.problems);
    }
    if !use_.problems.is_empty() {
        return Err(OwlError::UnsupportedConstruct {
            constructs: use_.problems.into_iter().collect(),
        });
    }

    let mut declarations = Vec::new();
    for (kind, names) in [
        ("Class", &use_.classes),
        ("ObjectProperty", &use_.object_roles),
        ("DataProperty", &use_.data_roles),
        ("NamedIndividual", &use_.individuals),
    ] {
        for q in names {
            declarations.push(Elem::new("Declaration").child(ent(kind, q)));
        }
    }
    for name in META_PROPERTIES {
        declarations.push(Elem::new("Declaration").child(meta(name)));
    }

    let mut root = Elem::new("Ontology")
        .attr("xmlns", OWL_NS)
        .attr("ontologyIRI", ontology_iri);
    for (p, iri) in &prefixes {
        root = root.child(Elem::new("Prefix").attr("name", *p).attr("IRI", *iri));
    }
    let order: Vec<String> = scene.individuals.iter().map(|i| abbrev(&i.id)).collect();
    root = root
        .child(annotation("scene", string_literal(&abbrev(&scene.id))))
        .child(annotation("timePosition", literal(&DataValue::Decimal(scene.time_position))))
        .child(annotation("frameRef", string_literal(&scene.frame_ref)))
        .child(annotation("individualOrder", string_literal(&order.join(" "))))
        .child(annotation("packId", string_literal(&pack.id)))
        .child(annotation("packVersion", string_literal(&pack.version)));
    for line in derived_lines(tbox) {
        root = root.child(annotation("derived", string_literal(&line)));
    }
    for section in [
        declarations,
        subclass,
        disjoint,
        subprop,
        functional,
        domain_range,
        class_asserts,
        object_asserts,
        data_asserts,
        annotations,
    ] {
        root.children.extend(sorted(section));
    }
    root.children.extend(rules);

    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    root.write(&mut out, 0);
    Ok(out)
}

const META_PROPERTIES: &[&str] = &[
    "derived",
    "frameRef",
    "individual",
    "individualOrder",
    "packId",
    "packVersion",
    "ruleId",
    "scene",
    "timePosition",
];

fn derived_lines(tbox: &TBox) -> Vec<String> {
    tbox.to_text()
        .lines()
        .filter(|l| l.starts_with("derived "))
        .map(str::to_owned)
        .collect()
}

// ---------------------------------------------------------------------------
// Import

enum Bad {
    Unsupported(String),
    Malformed(String),
}

type R<T> = Result<T, Bad>;

fn malformed<T>(msg: impl Into<String>) -> R<T> {
    Err(Bad::Malformed(msg.into()))
}

struct Importer {
    ns: Namespaces,
    tbox: TBox,
    assertions: Vec<Assertion>,
    individuals: BTreeMap<QName, SceneIndividual>,
    rules: Vec<Rule>,
    meta: BTreeMap<String, Vec<String>>,
    declared: BTreeSet<(&'static str, QName)>,
    referenced: BTreeSet<(&'static str, QName)>,
}

fn children<'a>(e: &'a Elem, n: usize, ctx: &str) -> R<&'a [Elem]> {
    if e.children.len() == n {
        Ok(&e.children)
    } else {
        malformed(format!("<{ctx}> expects {n} children, found {}", e.children.len()))
    }
}

impl Importer {
    fn name(&self, e: &Elem) -> R<QName> {
        if let Some(a) = e.get("abbreviatedIRI") {
            let (p, l) = a.split_once(':').unwrap_or(("", a));
            if self.ns.iri(p).is_none() {
                return malformed(format!("undeclared prefix in `{a}`"));
            }
            return QName::new(p, l).map_err(|err| Bad::Malformed(err.to_string()));
        }
        if let Some(iri) = e.get("IRI") {
            return self
                .ns
                .compact(iri)
                .ok_or_else(|| Bad::Malformed(format!("IRI <{iri}> is not covered by a prefix")));
        }
        malformed(format!("<{}> without an IRI", e.name))
    }

    fn entity(&mut self, e: &Elem, kind: &'static str, ctx: &str) -> R<QName> {
        if e.name != kind {
            return Err(Bad::Unsupported(format!("{} inside {ctx}", e.name)));
        }
        let q = self.name(e)?;
        self.referenced.insert((kind, q.clone()));
        Ok(q)
    }

    fn role_entity(&mut self, e: &Elem, ctx: &str) -> R<(QName, RoleKind)> {
        match e.name.as_str() {
            "ObjectProperty" => Ok((self.entity(e, "ObjectProperty", ctx)?, RoleKind::Object)),
            "DataProperty" => Ok((self.entity(e, "DataProperty", ctx)?, RoleKind::Data)),
            other => Err(Bad::Unsupported(format!("{other} inside {ctx}"))),
        }
    }

    fn literal(&self, e: &Elem, ctx: &str) -> R<DataValue> {
        if e.name != "Literal" {
            return Err(Bad::Unsupported(format!("{} inside {ctx}", e.name)));
        }
        let text = e.text.clone().unwrap_or_default();
        let ty = e.get("datatypeIRI").unwrap_or("");
        let ty = ty.strip_prefix(XSD_NS).or_else(|| ty.strip_prefix("xsd:")).unwrap_or(ty);
        let bad = |what: &str| Bad::Malformed(format!("`{text}` is not a valid {what}"));
        Ok(match ty {
            "boolean" => match text.as_str() {
                "true" | "1" => DataValue::Boolean(true),
                "false" | "0" => DataValue::Boolean(false),
                _ => return Err(bad("boolean")),
            },
            "integer" | "int" | "long" => DataValue::Integer(text.trim().parse().map_err(|_| bad("integer"))?),
            "decimal" | "double" | "float" => {
                let d: f64 = text.trim().parse().map_err(|_| bad("decimal"))?;
                DataValue::decimal(d).map_err(|_| bad("decimal"))?
            }
            "QName" => DataValue::Enum(QName::parse(text.trim()).map_err(|_| bad("QName"))?),
            "string" | "" | "http://www.w3.org/1999/02/22-rdf-syntax-ns#PlainLiteral" => DataValue::String(text),
            other => return Err(Bad::Unsupported(format!("literal datatype {other} in {ctx}"))),
        })
    }

    fn string(&self, e: &Elem, ctx: &str) -> R<String> {
        match self.literal(e, ctx)? {
            DataValue::String(s) => Ok(s),
            other => malformed(format!("{ctx}: expected a string literal, found {other}")),
        }
    }

    fn declaration(&mut self, e: &Elem) -> R<()> {
        let [inner] = children(e, 1, "Declaration")? else { unreachable!() };
        let kind: &'static str = match inner.name.as_str() {
            "Class" => "Class",
            "ObjectProperty" => "ObjectProperty",
            "DataProperty" => "DataProperty",
            "NamedIndividual" => "NamedIndividual",
            "AnnotationProperty" => return Ok(()),
            other => return Err(Bad::Unsupported(format!("Declaration of {other}"))),
        };
        let q = self.name(inner)?;
        match kind {
            "Class" => {
                self.tbox.concepts.insert(q.clone());
            }
            "ObjectProperty" | "DataProperty" => {
                let kind = if kind == "ObjectProperty" { RoleKind::Object } else { RoleKind::Data };
                let def = self.tbox.role_defs.entry(q.clone()).or_insert(RoleDef {
                    kind,
                    domain: None,
                    range: None,
                    functional: false,
                });
                if def.kind != kind {
                    return malformed(format!("{q} declared as both object and data property"));
                }
            }
            _ => {}
        }
        self.declared.insert((kind, q));
        Ok(())
    }

    fn ontology_annotation(&mut self, e: &Elem) -> R<()> {
        let [prop, value] = children(e, 2, "Annotation")? else { unreachable!() };
        let name = prop.get("abbreviatedIRI").unwrap_or_default();
        let Some(key) = name.strip_prefix("meta:") else {
            return Err(Bad::Unsupported(format!("ontology annotation {name}")));
        };
        let text = match self.literal(value, "Annotation")? {
            DataValue::String(s) => s,
            DataValue::Decimal(d) => decimal_text(d),
            other => other.to_string(),
        };
        self.meta.entry(key.to_owned()).or_default().push(text);
        Ok(())
    }

    fn axiom(&mut self, e: &Elem) -> R<()> {
        let tag = e.name.as_str();
        match tag {
            "Declaration" | "Prefix" | "Annotation" => Ok(()),
            "SubClassOf" => {
                let [sub, sup] = children(e, 2, tag)? else { unreachable!() };
                let sub = self.entity(sub, "Class", tag)?;
                match sup.name.as_str() {
                    "Class" => {
                        let sup = self.entity(sup, "Class", tag)?;
                        self.tbox.subclass_axioms.insert((sub, sup));
                    }
                    "ObjectMaxCardinality" => {
                        let [r] = children(sup, 1, "ObjectMaxCardinality")? else { unreachable!() };
                        let role = self.entity(r, "ObjectProperty", tag)?;
                        let max = sup
                            .get("cardinality")
                            .and_then(|c| c.parse().ok())
                            .ok_or_else(|| Bad::Malformed("ObjectMaxCardinality without cardinality".into()))?;
                        self.bound(sub, role, max);
                    }
                    "DataAllValuesFrom" => {
                        let [r, range] = children(sup, 2, "DataAllValuesFrom")? else { unreachable!() };
                        let role = self.entity(r, "DataProperty", tag)?;
                        let max = self.max_inclusive(range)?;
                        self.bound(sub, role, max);
                    }
                    other => return Err(Bad::Unsupported(format!("{other} in SubClassOf"))),
                }
                Ok(())
            }
            "DisjointClasses" => {
                let mut group = BTreeSet::new();
                for c in &e.children {
                    group.insert(self.entity(c, "Class", tag)?);
                }
                if group.len() < 2 {
                    return malformed("DisjointClasses needs two classes");
                }
                self.tbox.disjoint_groups.push(group);
                Ok(())
            }
            "SubObjectPropertyOf" | "SubDataPropertyOf" => {
                let kind = if tag == "SubObjectPropertyOf" { "ObjectProperty" } else { "DataProperty" };
                let [a, b] = children(e, 2, tag)? else { unreachable!() };
                let a = self.entity(a, kind, tag)?;
                let b = self.entity(b, kind, tag)?;
                self.tbox.role_inclusions.insert((a, b));
                Ok(())
            }
            "FunctionalObjectProperty" | "FunctionalDataProperty" => {
                let [r] = children(e, 1, tag)? else { unreachable!() };
                let (role, _) = self.role_entity(r, tag)?;
                if let Some(def) = self.tbox.role_defs.get_mut(&role) {
                    def.functional = true;
                }
                Ok(())
            }
            "ObjectPropertyDomain" | "DataPropertyDomain" => {
                let [r, c] = children(e, 2, tag)? else { unreachable!() };
                let (role, _) = self.role_entity(r, tag)?;
                let class = self.entity(c, "Class", tag)?;
                if let Some(def) = self.tbox.role_defs.get_mut(&role) {
                    def.domain = Some(class);
                }
                Ok(())
            }
            "ObjectPropertyRange" => {
                let [r, c] = children(e, 2, tag)? else { unreachable!() };
                let role = self.entity(r, "ObjectProperty", tag)?;
                let class = self.entity(c, "Class", tag)?;
                if let Some(def) = self.tbox.role_defs.get_mut(&role) {
                    def.range = Some(RoleRange::Concept(class));
                }
                Ok(())
            }
            "DataPropertyRange" => {
                let [r, d] = children(e, 2, tag)? else { unreachable!() };
                let role = self.entity(r, "DataProperty", tag)?;
                let dt = self.datarange(d)?;
                if let Some(def) = self.tbox.role_defs.get_mut(&role) {
                    def.range = Some(RoleRange::Datatype(dt));
                }
                Ok(())
            }
            "ClassAssertion" => {
                let [c, i] = children(e, 2, tag)? else { unreachable!() };
                let c = self.entity(c, "Class", tag)?;
                let i = self.entity(i, "NamedIndividual", tag)?;
                self.assertions.push(Assertion::class(i, c));
                Ok(())
            }
            "ObjectPropertyAssertion" => {
                let [r, s, o] = children(e, 3, tag)? else { unreachable!() };
                let r = self.entity(r, "ObjectProperty", tag)?;
                let s = self.entity(s, "NamedIndividual", tag)?;
                let o = self.entity(o, "NamedIndividual", tag)?;
                self.assertions.push(Assertion::object(s, r, o));
                Ok(())
            }
            "DataPropertyAssertion" => {
                let [r, s, v] = children(e, 3, tag)? else { unreachable!() };
                let r = self.entity(r, "DataProperty", tag)?;
                let s = self.entity(s, "NamedIndividual", tag)?;
                let v = self.literal(v, tag)?;
                self.assertions.push(Assertion::data(s, r, v));
                Ok(())
            }
            "AnnotationAssertion" => {
                let [p, subject, value] = children(e, 3, tag)? else { unreachable!() };
                if p.get("abbreviatedIRI") != Some("meta:individual") {
                    return Err(Bad::Unsupported(format!(
                        "AnnotationAssertion with property {}",
                        p.get("abbreviatedIRI").or(p.get("IRI")).unwrap_or("?")
                    )));
                }
                let subject = match subject.name.as_str() {
                    "AbbreviatedIRI" => {
                        let text = subject.text.clone().unwrap_or_default();
                        self.name(&Elem::new("NamedIndividual").attr("abbreviatedIRI", text.trim()))?
                    }
                    "IRI" => self.name(&Elem::new("NamedIndividual").attr("IRI", subject.text.clone().unwrap_or_default()))?,
                    other => return Err(Bad::Unsupported(format!("{other} as annotation subject"))),
                };
                self.referenced.insert(("NamedIndividual", subject.clone()));
                let json = self.string(value, tag)?;
                let ind: SceneIndividual = serde_json::from_str(&json)
                    .map_err(|err| Bad::Malformed(format!("individual {subject}: {err}")))?;
                if ind.id != subject {
                    return malformed(format!("annotation on {subject} describes {}", ind.id));
                }
                self.individuals.insert(subject, ind);
                Ok(())
            }
            "DLSafeRule" => self.rule(e),
            other => Err(Bad::Unsupported(other.to_owned())),
        }
    }

    fn bound(&mut self, concept: QName, role: QName, max: i64) {
        self.tbox
            .cardinality_bounds
            .push(crate::taxonomy::CardinalityBound { concept, role, max });
    }

    fn max_inclusive(&self, e: &Elem) -> R<i64> {
        let shape = || Bad::Unsupported(format!("{} in DataAllValuesFrom", e.name));
        if e.name != "DatatypeRestriction" || e.children.len() != 2 {
            return Err(shape());
        }
        let facet = &e.children[1];
        let is_max = facet.name == "FacetRestriction"
            && facet.get("facet").is_some_and(|f| f == xsd("maxInclusive") || f == "xsd:maxInclusive");
        if !is_max || facet.children.len() != 1 {
            return Err(shape());
        }
        match self.literal(&facet.children[0], "FacetRestriction")? {
            DataValue::Integer(i) => Ok(i),
            other => malformed(format!("maxInclusive bound {other} is not an integer")),
        }
    }

    fn datarange(&self, e: &Elem) -> R<Datatype> {
        match e.name.as_str() {
            "Datatype" => {
                let name = e.get("abbreviatedIRI").map(str::to_owned).or_else(|| e.get("IRI").map(str::to_owned)).unwrap_or_default();
                let local = name.strip_prefix("xsd:").or_else(|| name.strip_prefix(XSD_NS)).unwrap_or(&name);
                Ok(match local {
                    "boolean" => Datatype::Boolean,
                    "integer" => Datatype::Integer,
                    "decimal" => Datatype::Decimal,
                    "string" => Datatype::String,
                    other => return Err(Bad::Unsupported(format!("datatype {other}"))),
                })
            }
            "DataOneOf" => {
                let mut tokens = Vec::new();
                for l in &e.children {
                    match self.literal(l, "DataOneOf")? {
                        DataValue::Enum(q) => tokens.push(q),
                        other => return malformed(format!("DataOneOf member {other} is not a QName")),
                    }
                }
                Ok(Datatype::Enum(tokens))
            }
            other => Err(Bad::Unsupported(format!("{other} as data range"))),
        }
    }

    fn term(&mut self, e: &Elem, ctx: &str) -> R<Term> {
        match e.name.as_str() {
            "Variable" => {
                let iri = e.get("IRI").unwrap_or_default();
                match iri.strip_prefix(VAR_NS) {
                    Some(v) if !v.is_empty() => Ok(Term::Var(v.to_owned())),
                    _ => malformed(format!("variable IRI <{iri}> outside {VAR_NS}")),
                }
            }
            "NamedIndividual" => Ok(Term::Individual(self.entity(e, "NamedIndividual", ctx)?)),
            "Literal" => Ok(Term::Literal(self.literal(e, ctx)?)),
            other => Err(Bad::Unsupported(format!("{other} as rule argument"))),
        }
    }

    fn atom(&mut self, e: &Elem) -> R<Atom> {
        let tag = e.name.as_str();
        Ok(match tag {
            "ClassAtom" => {
                let [c, a] = children(e, 2, tag)? else { unreachable!() };
                Atom::Class {
                    concept: self.entity(c, "Class", tag)?,
                    arg: self.term(a, tag)?,
                }
            }
            "ObjectPropertyAtom" => {
                let [r, s, o] = children(e, 3, tag)? else { unreachable!() };
                Atom::ObjectProp {
                    role: self.entity(r, "ObjectProperty", tag)?,
                    subject: self.term(s, tag)?,
                    object: self.term(o, tag)?,
                }
            }
            "DataPropertyAtom" => {
                let [r, s, v] = children(e, 3, tag)? else { unreachable!() };
                Atom::DataProp {
                    role: self.entity(r, "DataProperty", tag)?,
                    subject: self.term(s, tag)?,
                    value: self.term(v, tag)?,
                }
            }
            "DifferentIndividualsAtom" => {
                let [a, b] = children(e, 2, tag)? else { unreachable!() };
                Atom::DifferentFrom(self.term(a, tag)?, self.term(b, tag)?)
            }
            "BuiltInAtom" => {
                let iri = match (e.get("abbreviatedIRI"), e.get("IRI")) {
                    (Some(a), _) => a.to_owned(),
                    (None, Some(full)) => self
                        .ns
                        .compact(full)
                        .map(|q| abbrev(&q))
                        .unwrap_or_else(|| full.to_owned()),
                    _ => return malformed("BuiltInAtom without an IRI"),
                };
                if iri == SQWRL_SELECT {
                    let mut vars = Vec::new();
                    for c in &e.children {
                        match self.term(c, tag)? {
                            Term::Var(v) => vars.push(v),
                            other => return malformed(format!("select argument {other} is not a variable")),
                        }
                    }
                    Atom::Select(vars)
                } else {
                    let op = iri
                        .strip_prefix("swrb:")
                        .and_then(BuiltinOp::from_name)
                        .ok_or_else(|| Bad::Unsupported(format!("built-in {iri}")))?;
                    let [l, r] = children(e, 2, tag)? else { unreachable!() };
                    Atom::Builtin {
                        op,
                        left: self.term(l, tag)?,
                        right: self.term(r, tag)?,
                    }
                }
            }
            other => return Err(Bad::Unsupported(format!("{other} in DLSafeRule"))),
        })
    }

    fn rule(&mut self, e: &Elem) -> R<()> {
        let mut id = None;
        let mut label = String::new();
        let mut body = None;
        let mut head = None;
        for c in &e.children {
            match c.name.as_str() {
                "Annotation" => {
                    let [p, v] = children(c, 2, "Annotation")? else { unreachable!() };
                    match p.get("abbreviatedIRI") {
                        Some("meta:ruleId") => id = Some(self.string(v, "DLSafeRule")?),
                        Some("rdfs:label") => label = self.string(v, "DLSafeRule")?,
                        other => return Err(Bad::Unsupported(format!("rule annotation {}", other.unwrap_or("?")))),
                    }
                }
                "Body" => body = Some(c.children.iter().map(|a| self.atom(a)).collect::<R<Vec<_>>>()?),
                "Head" => head = Some(c.children.iter().map(|a| self.atom(a)).collect::<R<Vec<_>>>()?),
                other => return Err(Bad::Unsupported(format!("{other} in DLSafeRule"))),
            }
        }
        let id = id.unwrap_or_else(|| format!("rule_{}", self.rules.len() + 1));
        self.rules.push(Rule {
            id,
            label,
            body: body.unwrap_or_default(),
            head: head.unwrap_or_default(),
        });
        Ok(())
    }
}

/// Reads a document written by [`export_owl`] (or any document inside the
/// same subset).
pub fn import_owl(bytes: &[u8], mode: ImportMode) -> Result<OwlImport, OwlError> {
    let root = parse_dom(bytes)?;
    if root.name != "Ontology" {
        return Err(OwlError::Malformed(format!("root element is <{}>, expected <Ontology>", root.name)));
    }
    let mut ns = Namespaces::empty();
    let reserved: BTreeMap<&str, &str> = RESERVED_PREFIXES.iter().copied().collect();
    for p in root.children.iter().filter(|c| c.name == "Prefix") {
        let (Some(name), Some(iri)) = (p.get("name"), p.get("IRI")) else {
            return Err(OwlError::Malformed("Prefix needs name and IRI".into()));
        };
        if reserved.contains_key(name) {
            continue;
        }
        ns.register(name, iri).map_err(|e| OwlError::Malformed(e.to_string()))?;
    }
    let mut imp = Importer {
        ns: ns.clone(),
        tbox: TBox::default(),
        assertions: Vec::new(),
        individuals: BTreeMap::new(),
        rules: Vec::new(),
        meta: BTreeMap::new(),
        declared: BTreeSet::new(),
        referenced: BTreeSet::new(),
    };
    // The importer's own table also resolves the reserved prefixes.
    for (p, iri) in RESERVED_PREFIXES {
        let _ = imp.ns.register(p, iri);
    }

    let mut unsupported = Vec::new();
    let report = |bad: Bad, unsupported: &mut Vec<String>| -> Result<(), OwlError> {
        match bad {
            Bad::Unsupported(what) => {
                unsupported.push(what);
                Ok(())
            }
            Bad::Malformed(msg) => Err(OwlError::Malformed(msg)),
        }
    };
    for c in &root.children {
        let r = match c.name.as_str() {
            "Declaration" => imp.declaration(c),
            "Annotation" => imp.ontology_annotation(c),
            _ => Ok(()),
        };
        if let Err(bad) = r {
            report(bad, &mut unsupported)?;
        }
    }
    for c in &root.children {
        if let Err(bad) = imp.axiom(c) {
            report(bad, &mut unsupported)?;
        }
    }
    let mut warnings = Vec::new();
    if !unsupported.is_empty() {
        match mode {
            ImportMode::Strict => return Err(OwlError::UnsupportedConstruct { constructs: unsupported }),
            ImportMode::Lenient => {
                warnings.extend(unsupported.into_iter().map(|u| format!("skipped unsupported construct: {u}")))
            }
        }
    }
    let dangling: Vec<String> = imp
        .referenced
        .iter()
        .filter(|r| !imp.declared.contains(*r))
        .map(|(kind, q)| format!("{kind} {q}"))
        .collect();
    if !dangling.is_empty() {
        return Err(OwlError::DanglingReference { names: dangling });
    }

    // Re-parse the T-Box through its text form: this validates it and
    // attaches the derived-property definitions carried as annotations.
    let mut tbox = imp.tbox;
    tbox.namespaces = Namespaces::standard();
    for (p, iri) in ns.iter() {
        tbox.namespaces
            .register(p, iri)
            .map_err(|e| OwlError::Malformed(e.to_string()))?;
    }
    let mut text = tbox.to_text();
    let meta_values = |key: &str| imp.meta.get(key).cloned().unwrap_or_default();
    for line in meta_values("derived") {
        text.push_str(&line);
        text.push('\n');
    }
    let tbox = parse_taxonomy(&text).map_err(|e| OwlError::Malformed(format!("taxonomy: {e}")))?;

    let single = |key: &str| -> Result<Option<String>, OwlError> {
        match imp.meta.get(key).map(Vec::as_slice) {
            None | Some([]) => Ok(None),
            Some([v]) => Ok(Some(v.clone())),
            Some(_) => Err(OwlError::Malformed(format!("meta:{key} given more than once"))),
        }
    };
    let scene_id = match single("scene")? {
        Some(s) => QName::parse(&s).map_err(|e| OwlError::Malformed(e.to_string()))?,
        None => {
            let iri = root.get("ontologyIRI").unwrap_or_default();
            ns.compact(iri)
                .ok_or_else(|| OwlError::Malformed(format!("cannot name the scene from <{iri}>")))?
        }
    };
    let mut scene = Scene::empty(scene_id);
    if let Some(t) = single("timePosition")? {
        scene.time_position = t
            .parse()
            .map_err(|_| OwlError::Malformed(format!("timePosition `{t}`")))?;
    }
    scene.frame_ref = single("frameRef")?.unwrap_or_default();
    let mut individuals = imp.individuals;
    for name in single("individualOrder")?.unwrap_or_default().split_whitespace() {
        let q = QName::parse(name).map_err(|e| OwlError::Malformed(e.to_string()))?;
        let ind = individuals
            .remove(&q)
            .ok_or_else(|| OwlError::Malformed(format!("individualOrder names {q} without an annotation")))?;
        scene.individuals.push(ind);
    }
    scene.individuals.extend(individuals.into_values());
    scene.assertions = imp.assertions;
    canonicalize(&mut scene.assertions);
    scene
        .validate()
        .map_err(|e| OwlError::Malformed(e.to_string()))?;

    let mut rules = Vec::with_capacity(imp.rules.len());
    for rule in imp.rules {
        let parsed = parse_rule_with(rule.id.clone(), rule.label.clone(), &format_rule(&rule), &tbox)
            .map_err(|e| OwlError::Malformed(format!("rule {}: {e}", rule.id)))?;
        rules.push(parsed);
    }
    let pack = RulePack {
        id: single("packId")?.unwrap_or_else(|| "pack".into()),
        version: single("packVersion")?.unwrap_or_else(|| "0".into()),
        rules,
    };
    Ok(OwlImport {
        tbox,
        scene,
        pack,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// Scenarios

/// A scenario as files: a manifest plus one document per scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioExport {
    pub manifest: String,
    /// `(file name, document)` in scene order.
    pub documents: Vec<(String, String)>,
}

pub fn scene_file_name(index: usize, scene: &QName) -> String {
    format!("{:03}_{}.owl", index + 1, scene.local_name())
}

/// Manifest lines:
///
/// ```text
/// scenario <iri>
/// scene <iri> time <decimal>
/// track <id> <individual or -> ...
/// ```
pub fn export_scenario(tbox: &TBox, scenario: &Scenario, pack: &RulePack) -> Result<ScenarioExport, OwlError> {
    let ns = &tbox.namespaces;
    let iri = |q: &QName| {
        ns.expand(q).ok_or_else(|| OwlError::UnsupportedConstruct {
            constructs: vec![format!("{q}: prefix `{}` is not declared", q.prefix())],
        })
    };
    let mut manifest = format!("scenario {}\n", iri(&scenario.id)?);
    let mut documents = Vec::new();
    for (i, scene) in scenario.scenes.iter().enumerate() {
        let _ = writeln!(manifest, "scene {} time {}", iri(&scene.id)?, decimal_text(scene.time_position));
        documents.push((scene_file_name(i, &scene.id), export_owl(tbox, scene, pack)?));
    }
    for (track, slots) in &scenario.tracks {
        let _ = write!(manifest, "track {track}");
        for s in slots {
            match s {
                Some(q) => {
                    let _ = write!(manifest, " {}", abbrev(q));
                }
                None => manifest.push_str(" -"),
            }
        }
        manifest.push('\n');
    }
    Ok(ScenarioExport { manifest, documents })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioImport {
    pub tbox: TBox,
    pub scenario: Scenario,
    pub pack: RulePack,
    pub warnings: Vec<String>,
}

/// Reads a manifest; `load` returns the bytes of a scene document by file name.
pub fn import_scenario(
    manifest: &str,
    mut load: impl FnMut(&str) -> Result<Vec<u8>, OwlError>,
    mode: ImportMode,
) -> Result<ScenarioImport, OwlError> {
    let bad = |line: usize, msg: &str| OwlError::Malformed(format!("manifest line {line}: {msg}"));
    let mut scenario_iri = None;
    let mut scenes: Vec<(String, f64)> = Vec::new();
    let mut tracks: Vec<(String, Vec<String>)> = Vec::new();
    for (i, line) in manifest.lines().enumerate() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            [] => {}
            ["scenario", iri] => scenario_iri = Some((*iri).to_owned()),
            ["scene", iri, "time", t] => {
                let t: f64 = t.parse().map_err(|_| bad(i + 1, "time is not a decimal"))?;
                scenes.push(((*iri).to_owned(), t));
            }
            ["track", id, slots @ ..] => {
                tracks.push(((*id).to_owned(), slots.iter().map(|s| (*s).to_owned()).collect()))
            }
            _ => return Err(bad(i + 1, "unrecognised line")),
        }
    }
    let mut shared: Option<(TBox, RulePack)> = None;
    let mut out_scenes = Vec::new();
    let mut warnings = Vec::new();
    for (i, (iri, time)) in scenes.iter().enumerate() {
        let local = iri.rsplit(['#', '/']).next().unwrap_or(iri);
        let local = QName::local(local).map_err(|e| OwlError::Malformed(e.to_string()))?;
        let doc = import_owl(&load(&scene_file_name(i, &local))?, mode)?;
        let expanded = doc.tbox.namespaces.expand(&doc.scene.id);
        if expanded.as_deref() != Some(iri.as_str()) {
            return Err(OwlError::Malformed(format!("document for {iri} describes {}", doc.scene.id)));
        }
        if doc.scene.time_position != *time {
            return Err(OwlError::Malformed(format!("{iri}: manifest time {time} disagrees with the document")));
        }
        match &shared {
            None => shared = Some((doc.tbox, doc.pack)),
            Some((t, p)) if *t == doc.tbox && *p == doc.pack => {}
            Some(_) => return Err(OwlError::Malformed(format!("{iri}: taxonomy or rule pack differs from the first scene"))),
        }
        warnings.extend(doc.warnings);
        out_scenes.push(doc.scene);
    }
    let (tbox, pack) = shared.ok_or_else(|| OwlError::Malformed("manifest lists no scenes".into()))?;
    let scenario_iri = scenario_iri.ok_or_else(|| OwlError::Malformed("manifest has no scenario line".into()))?;
    let id = tbox
        .namespaces
        .compact(&scenario_iri)
        .ok_or_else(|| OwlError::Malformed(format!("scenario IRI <{scenario_iri}> is not covered by a prefix")))?;
    let mut track_map = BTreeMap::new();
    for (track, slots) in tracks {
        let slots = slots
            .iter()
            .map(|s| match s.as_str() {
                "-" => Ok(None),
                s => QName::parse(s.strip_prefix(':').unwrap_or(s))
                    .map(Some)
                    .map_err(|e| OwlError::Malformed(e.to_string())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        track_map.insert(track, slots);
    }
    let scenario = Scenario {
        id,
        scenes: out_scenes,
        tracks: track_map,
    };
    scenario
        .validate()
        .map_err(|e| OwlError::Malformed(e.to_string()))?;
    Ok(ScenarioImport {
        tbox,
        scenario,
        pack,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::{ingest_scene, parse_detection_document, FusionConfig};
    use crate::rules::parse_pack;

    fn desert() -> (TBox, Scene, RulePack) {
        desert_at("traf:desert", 1.5)
    }

    fn desert_at(id: &str, time: f64) -> (TBox, Scene, RulePack) {
        let tbox = TBox::shipped();
        let doc = r#"{"scene_id": "ID", "time_position": TIME, "frame_ref": "desert.png",
          "records": [
            {"detector": "det", "label_text": "car", "bbox": [0.2, 0.4, 0.5, 0.3], "confidence": 0.9,
             "mask_area": 0.1, "dominant_color": [200, 30, 30], "extra": {"distance": 42.0}},
            {"detector": "det", "label_text": "pedestrian", "bbox": [0.75, 0.45, 0.05, 0.2], "confidence": 0.8,
             "mask_area": 0.004}
          ]}"#;
        let doc = doc.replace("ID", id).replace("TIME", &time.to_string());
        let (doc, _) = parse_detection_document(&doc).unwrap();
        let scene = ingest_scene(&doc, &FusionConfig::default(), &tbox).unwrap().scene;
        let pack = RulePack::shipped(&tbox);
        (tbox, scene, pack)
    }

    #[test]
    fn round_trip_is_structural_and_byte_stable() {
        let (tbox, scene, pack) = desert();
        let xml = export_owl(&tbox, &scene, &pack).unwrap();
        assert!(xml.contains("<ClassAssertion>"));
        assert!(xml.contains("<NamedIndividual abbreviatedIRI=\":car_1\"/>"));
        assert!(xml.contains("<Literal datatypeIRI=\"http://www.w3.org/2001/XMLSchema#string\">CP_0004</Literal>"));
        let back = import_owl(xml.as_bytes(), ImportMode::Strict).unwrap();
        assert!(back.warnings.is_empty());
        assert_eq!(back.tbox, tbox);
        assert_eq!(back.scene, scene);
        assert_eq!(back.pack, pack);
        let again = export_owl(&back.tbox, &back.scene, &back.pack).unwrap();
        assert_eq!(again, xml);
        assert_eq!(export_owl(&tbox, &scene, &pack).unwrap(), xml);
    }

    #[test]
    fn empty_scene_and_pack_have_no_assertions_or_rules() {
        let tbox = TBox::shipped();
        let scene = Scene::empty(QName::parse("traf:empty").unwrap());
        let pack = RulePack {
            id: "empty".into(),
            version: "0".into(),
            rules: vec![],
        };
        let xml = export_owl(&tbox, &scene, &pack).unwrap();
        for tag in ["<ClassAssertion", "<ObjectPropertyAssertion", "<DataPropertyAssertion", "<DLSafeRule", "<NamedIndividual"] {
            assert!(!xml.contains(tag), "{tag} present");
        }
        assert!(xml.contains("<Declaration>"));
        let back = import_owl(xml.as_bytes(), ImportMode::Strict).unwrap();
        assert_eq!(back.scene, scene);
        assert_eq!(back.pack, pack);
    }

    #[test]
    fn output_is_canonical_text() {
        let (tbox, scene, pack) = desert();
        let xml = export_owl(&tbox, &scene, &pack).unwrap();
        assert!(!xml.contains('\r'));
        assert!(xml.ends_with("</Ontology>\n"));
        for line in xml.lines().skip(1) {
            let indent = line.len() - line.trim_start().len();
            assert_eq!(indent % 2, 0, "{line}");
        }
        // Sections appear in the fixed order.
        let first = |tag: &str| xml.find(&format!("\n  <{tag}>")).unwrap();
        let order = ["Declaration", "SubClassOf", "DisjointClasses", "SubObjectPropertyOf", "ClassAssertion", "ObjectPropertyAssertion", "DataPropertyAssertion", "DLSafeRule"];
        for w in order.windows(2) {
            assert!(first(w[0]) < first(w[1]), "{} before {}", w[0], w[1]);
        }
    }

    #[test]
    fn truncated_input_reports_offset() {
        let (tbox, scene, pack) = desert();
        let xml = export_owl(&tbox, &scene, &pack).unwrap();
        let cut = &xml.as_bytes()[..xml.len() / 2];
        match import_owl(cut, ImportMode::Strict) {
            Err(OwlError::XmlSyntax { offset, .. }) => assert!(offset <= cut.len() && offset > 0),
            other => panic!("expected XmlSyntax, got {other:?}"),
        }
    }

    const INVERSE: &str = "  <InverseObjectProperties>\n    <ObjectProperty abbreviatedIRI=\"phys:is_left_of\"/>\n    <ObjectProperty abbreviatedIRI=\"phys:is_right_of\"/>\n  </InverseObjectProperties>\n";

    #[test]
    fn constructs_outside_the_subset() {
        let (tbox, scene, pack) = desert();
        let xml = export_owl(&tbox, &scene, &pack).unwrap();
        let bad = xml.replace("</Ontology>", &format!("{INVERSE}</Ontology>"));
        match import_owl(bad.as_bytes(), ImportMode::Strict) {
            Err(OwlError::UnsupportedConstruct { constructs }) => {
                assert_eq!(constructs, vec!["InverseObjectProperties".to_owned()])
            }
            other => panic!("expected UnsupportedConstruct, got {other:?}"),
        }
        let lenient = import_owl(bad.as_bytes(), ImportMode::Lenient).unwrap();
        assert_eq!(lenient.warnings.len(), 1);
        assert_eq!(lenient.scene, scene);
    }

    #[test]
    fn undeclared_entities_are_dangling() {
        let (tbox, scene, pack) = desert();
        let xml = export_owl(&tbox, &scene, &pack).unwrap();
        let bad = xml.replace(
            "  <Declaration>\n    <NamedIndividual abbreviatedIRI=\":car_1\"/>\n  </Declaration>\n",
            "",
        );
        assert_ne!(bad, xml);
        match import_owl(bad.as_bytes(), ImportMode::Strict) {
            Err(OwlError::DanglingReference { names }) => assert_eq!(names, vec!["NamedIndividual car_1".to_owned()]),
            other => panic!("expected DanglingReference, got {other:?}"),
        }
    }

    #[test]
    fn export_rejects_undeclared_names() {
        let tbox = TBox::shipped();
        let mut scene = Scene::empty(QName::parse("traf:s").unwrap());
        scene.assertions.push(Assertion::class(
            QName::local("x").unwrap(),
            QName::parse("l4_d:Hovercraft").unwrap(),
        ));
        let pack = parse_pack("pack p 1\n", &tbox).unwrap();
        assert!(matches!(
            export_owl(&tbox, &scene, &pack),
            Err(OwlError::UnsupportedConstruct { .. })
        ));
    }

    #[test]
    fn literal_text_survives_escaping() {
        let tbox = TBox::shipped();
        let (_, mut scene, pack) = desert();
        scene.frame_ref = "a <b> & \"c\"\r\n\td".into();
        let xml = export_owl(&tbox, &scene, &pack).unwrap();
        let back = import_owl(xml.as_bytes(), ImportMode::Strict).unwrap();
        assert_eq!(back.scene.frame_ref, scene.frame_ref);
    }

    #[test]
    fn scenario_manifest_round_trip() {
        let (tbox, scene, pack) = desert();
        let (_, second, _) = desert_at("traf:desert_2", 2.5);
        let mut tracks = BTreeMap::new();
        tracks.insert("car_1".to_owned(), vec![Some(QName::local("car_1").unwrap()), None]);
        let scenario = Scenario {
            id: QName::parse("traf:desert_run").unwrap(),
            scenes: vec![scene, second],
            tracks,
        };
        let out = export_scenario(&tbox, &scenario, &pack).unwrap();
        assert!(out.manifest.contains("scene http://example.org/traffic#desert time 1.5\n"));
        let files: BTreeMap<String, String> = out.documents.iter().cloned().collect();
        let back = import_scenario(
            &out.manifest,
            |name| files.get(name).map(|d| d.clone().into_bytes()).ok_or_else(|| OwlError::Malformed(name.into())),
            ImportMode::Strict,
        )
        .unwrap();
        assert_eq!(back.scenario, scenario);
        assert_eq!(back.pack, pack);
        assert_eq!(back.tbox, tbox);
    }
}
