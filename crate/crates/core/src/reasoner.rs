//! Realization, rule evaluation, DL queries and consistency checking over a
//! scene or scenario A-Box.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ingestion::{presence_assertions, track_names};
use crate::model::{canonicalize, Assertion, DataValue, QName, RoleTarget, Scenario, Scene};
use crate::par::{self, Execution};
use crate::rules::{Atom, BuiltinOp, Rule, RulePack, Term};
use crate::taxonomy::{subsumption_closure, RoleKind, RoleRange, SubsumptionClosure, TBox};

// ---------------------------------------------------------------------------
// Graph

type Adjacency = BTreeMap<QName, BTreeMap<QName, BTreeSet<QName>>>;

/// A-Box closed under concept subsumption and role inclusion, with indices
/// for rule evaluation. Immutable once built.
#[derive(Debug, Clone)]
pub struct MaterializedGraph {
    tbox: Arc<TBox>,
    closure: Arc<SubsumptionClosure>,
    assertions: Vec<Assertion>,
    keys: BTreeSet<String>,
    asserted: BTreeSet<String>,
    individuals: BTreeSet<QName>,
    members: BTreeMap<QName, BTreeSet<QName>>,
    by_concept: BTreeMap<QName, BTreeSet<QName>>,
    forward: Adjacency,
    backward: Adjacency,
    data: BTreeMap<QName, BTreeMap<QName, BTreeSet<DataValue>>>,
}

impl PartialEq for MaterializedGraph {
    fn eq(&self, other: &Self) -> bool {
        self.assertions == other.assertions && self.individuals == other.individuals
    }
}

impl MaterializedGraph {
    pub fn new(
        tbox: Arc<TBox>,
        assertions: impl IntoIterator<Item = Assertion>,
        individuals: impl IntoIterator<Item = QName>,
    ) -> Self {
        let closure = Arc::new(subsumption_closure(&tbox));
        Self::with_closure(tbox, closure, assertions, individuals)
    }

    pub fn with_closure(
        tbox: Arc<TBox>,
        closure: Arc<SubsumptionClosure>,
        assertions: impl IntoIterator<Item = Assertion>,
        individuals: impl IntoIterator<Item = QName>,
    ) -> Self {
        let mut base: Vec<Assertion> = assertions.into_iter().collect();
        canonicalize(&mut base);
        let asserted: BTreeSet<String> = base.iter().map(Assertion::key).collect();

        let mut all = Vec::with_capacity(base.len() * 2);
        for a in &base {
            match a {
                Assertion::Class(c) => {
                    for d in closure.ancestors(&c.concept) {
                        all.push(Assertion::class(c.individual.clone(), d));
                    }
                }
                Assertion::Role(r) => {
                    for s in closure.super_roles(&r.role) {
                        let mut inferred = r.clone();
                        inferred.role = s;
                        all.push(Assertion::Role(inferred));
                    }
                }
            }
        }
        canonicalize(&mut all);

        let mut g = MaterializedGraph {
            tbox,
            closure,
            keys: all.iter().map(Assertion::key).collect(),
            asserted,
            individuals: individuals.into_iter().collect(),
            members: BTreeMap::new(),
            by_concept: BTreeMap::new(),
            forward: BTreeMap::new(),
            backward: BTreeMap::new(),
            data: BTreeMap::new(),
            assertions: Vec::new(),
        };
        for a in &all {
            for i in a.individuals() {
                g.individuals.insert(i.clone());
            }
            match a {
                Assertion::Class(c) => {
                    g.members
                        .entry(c.individual.clone())
                        .or_default()
                        .insert(c.concept.clone());
                    g.by_concept
                        .entry(c.concept.clone())
                        .or_default()
                        .insert(c.individual.clone());
                }
                Assertion::Role(r) => match &r.target {
                    RoleTarget::Individual(o) => {
                        g.forward
                            .entry(r.role.clone())
                            .or_default()
                            .entry(r.subject.clone())
                            .or_default()
                            .insert(o.clone());
                        g.backward
                            .entry(r.role.clone())
                            .or_default()
                            .entry(o.clone())
                            .or_default()
                            .insert(r.subject.clone());
                    }
                    RoleTarget::Literal(v) => {
                        g.data
                            .entry(r.role.clone())
                            .or_default()
                            .entry(r.subject.clone())
                            .or_default()
                            .insert(v.clone());
                    }
                },
            }
        }
        g.assertions = all;
        g
    }

    pub fn tbox(&self) -> &Arc<TBox> {
        &self.tbox
    }

    pub fn closure(&self) -> &SubsumptionClosure {
        &self.closure
    }

    /// Every assertion, asserted or inferred, in canonical order.
    pub fn assertions(&self) -> &[Assertion] {
        &self.assertions
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.keys.contains(key)
    }

    /// Whether the assertion was given rather than inferred by realization.
    pub fn is_asserted(&self, key: &str) -> bool {
        self.asserted.contains(key)
    }

    pub fn individuals(&self) -> &BTreeSet<QName> {
        &self.individuals
    }

    pub fn memberships(&self, x: &QName) -> Option<&BTreeSet<QName>> {
        self.members.get(x)
    }

    pub fn is_member(&self, x: &QName, c: &QName) -> bool {
        self.members.get(x).is_some_and(|m| m.contains(c))
    }

    pub fn instances(&self, c: &QName) -> impl Iterator<Item = &QName> {
        self.by_concept.get(c).into_iter().flatten()
    }

    pub fn successors(&self, role: &QName, x: &QName) -> impl Iterator<Item = &QName> {
        self.forward.get(role).and_then(|m| m.get(x)).into_iter().flatten()
    }

    pub fn predecessors(&self, role: &QName, y: &QName) -> impl Iterator<Item = &QName> {
        self.backward.get(role).and_then(|m| m.get(y)).into_iter().flatten()
    }

    pub fn object_pairs(&self, role: &QName) -> impl Iterator<Item = (&QName, &QName)> {
        self.forward
            .get(role)
            .into_iter()
            .flat_map(|m| m.iter().flat_map(|(s, os)| os.iter().map(move |o| (s, o))))
    }

    pub fn values(&self, role: &QName, x: &QName) -> impl Iterator<Item = &DataValue> {
        self.data.get(role).and_then(|m| m.get(x)).into_iter().flatten()
    }

    pub fn data_pairs(&self, role: &QName) -> impl Iterator<Item = (&QName, &DataValue)> {
        self.data
            .get(role)
            .into_iter()
            .flat_map(|m| m.iter().flat_map(|(s, vs)| vs.iter().map(move |v| (s, v))))
    }

    /// Every literal occurring in the graph.
    pub fn literals(&self) -> BTreeSet<&DataValue> {
        self.data.values().flat_map(|m| m.values().flatten()).collect()
    }

    /// Realizes the graph's own assertions again; equal to `self`.
    pub fn realize_again(&self) -> MaterializedGraph {
        Self::with_closure(
            self.tbox.clone(),
            self.closure.clone(),
            self.assertions.iter().cloned(),
            self.individuals.iter().cloned(),
        )
    }
}

/// Closes the scene's assertions under subsumption and role inclusion.
pub fn realize(scene: &Scene, tbox: &TBox) -> MaterializedGraph {
    realize_shared(scene, Arc::new(tbox.clone()))
}

pub fn realize_shared(scene: &Scene, tbox: Arc<TBox>) -> MaterializedGraph {
    MaterializedGraph::new(
        tbox,
        scene.assertions.iter().cloned(),
        scene.individuals.iter().map(|i| i.id.clone()),
    )
}

fn rename(a: &Assertion, names: &BTreeMap<&QName, &QName>) -> Assertion {
    let n = |q: &QName| names.get(q).map(|x| (*x).clone()).unwrap_or_else(|| q.clone());
    match a {
        Assertion::Class(c) => Assertion::class(n(&c.individual), c.concept.clone()),
        Assertion::Role(r) => match &r.target {
            RoleTarget::Individual(o) => Assertion::object(n(&r.subject), r.role.clone(), n(o)),
            RoleTarget::Literal(v) => Assertion::data(n(&r.subject), r.role.clone(), v.clone()),
        },
    }
}

/// Assertions of every scene with individuals renamed to their track name,
/// plus the cross-scene presence/absence facts.
pub fn scenario_assertions(scenario: &Scenario, tbox: &TBox) -> (Vec<Assertion>, BTreeSet<QName>) {
    let names = track_names(&scenario.tracks);
    let mut out = Vec::new();
    let mut individuals = BTreeSet::new();
    for (si, scene) in scenario.scenes.iter().enumerate() {
        let mut map: BTreeMap<&QName, &QName> = BTreeMap::new();
        for (key, row) in &scenario.tracks {
            if let (Some(Some(id)), Some(name)) = (row.get(si), names.get(key)) {
                map.insert(id, name);
            }
        }
        for ind in &scene.individuals {
            individuals.insert(map.get(&ind.id).map(|q| (*q).clone()).unwrap_or_else(|| ind.id.clone()));
        }
        out.extend(scene.assertions.iter().map(|a| rename(a, &map)));
    }
    out.extend(presence_assertions(&scenario.scenes, &scenario.tracks, tbox));
    canonicalize(&mut out);
    (out, individuals)
}

pub fn scenario_graph(scenario: &Scenario, tbox: &TBox) -> MaterializedGraph {
    let (assertions, individuals) = scenario_assertions(scenario, tbox);
    MaterializedGraph::new(Arc::new(tbox.clone()), assertions, individuals)
}

// ---------------------------------------------------------------------------
// Rule evaluation

/// What a rule variable is bound to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Individual(QName),
    Literal(DataValue),
}

impl Value {
    /// Same individual (by name, under the unique name assumption) or same
    /// literal value (numerically across integer/decimal).
    pub fn same(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Individual(a), Value::Individual(b)) => a == b,
            (Value::Literal(a), Value::Literal(b)) => a.same_value(b),
            _ => false,
        }
    }

    /// Unambiguous text form: individual names as-is, literals in their
    /// assertion-key form.
    pub fn key_text(&self) -> String {
        match self {
            Value::Individual(q) => q.to_string(),
            Value::Literal(v) => v.key_text(),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Individual(q) => write!(f, "{q}"),
            Value::Literal(v) => write!(f, "{v}"),
        }
    }
}

/// Builtin semantics over bound values.
pub fn builtin_holds(op: BuiltinOp, a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Literal(x), Value::Literal(y)) => op.holds(x, y),
        _ => match op {
            BuiltinOp::Equal => a.same(b),
            BuiltinOp::NotEqual => !a.same(b),
            _ => false,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    /// Index of the body atom.
    pub atom: usize,
    /// Key of the graph assertion it matched.
    pub assertion: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binding {
    pub values: BTreeMap<String, Value>,
    pub provenance: Vec<Provenance>,
}

impl Binding {
    pub fn key(&self) -> String {
        binding_key(self.values.iter().map(|(k, v)| (k.as_str(), v)))
    }

    pub fn get(&self, var: &str) -> Option<&Value> {
        self.values.get(var)
    }
}

fn binding_key<'a>(pairs: impl Iterator<Item = (&'a str, &'a Value)>) -> String {
    pairs
        .map(|(k, v)| format!("?{k}={}", v.key_text()))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy)]
enum Step {
    Match(usize),
    Filter(usize),
}

struct Plan {
    steps: Vec<Step>,
    /// Variables no graph atom binds, with whether they range over
    /// individuals and/or literals.
    free: Vec<(String, bool, bool)>,
}

fn plan(body: &[Atom]) -> Plan {
    let mut bound: BTreeSet<&str> = BTreeSet::new();
    let mut steps = Vec::new();
    let mut deferred: Vec<usize> = Vec::new();
    let ready = |i: usize, bound: &BTreeSet<&str>| body[i].variables().iter().all(|v| bound.contains(v));
    for (i, atom) in body.iter().enumerate() {
        match atom {
            Atom::Builtin { .. } | Atom::DifferentFrom(..) => deferred.push(i),
            Atom::Select(_) => {}
            _ => {
                steps.push(Step::Match(i));
                bound.extend(atom.variables());
                deferred.retain(|&d| {
                    if ready(d, &bound) {
                        steps.push(Step::Filter(d));
                        false
                    } else {
                        true
                    }
                });
            }
        }
    }
    let mut free: BTreeMap<String, (bool, bool)> = BTreeMap::new();
    for &d in &deferred {
        let as_individual = matches!(body[d], Atom::DifferentFrom(..));
        for v in body[d].variables() {
            if !bound.contains(v) {
                let e = free.entry(v.to_owned()).or_default();
                e.0 |= as_individual;
                e.1 |= !as_individual;
            }
        }
    }
    steps.extend(deferred.into_iter().map(Step::Filter));
    Plan {
        steps,
        free: free.into_iter().map(|(v, (i, l))| (v, i, l)).collect(),
    }
}

struct Solver<'g> {
    g: &'g MaterializedGraph,
    body: &'g [Atom],
    steps: Vec<Step>,
    out: Vec<Binding>,
}

impl<'g> Solver<'g> {
    fn resolve(term: &Term, b: &BTreeMap<String, Value>) -> Option<Value> {
        match term {
            Term::Var(v) => b.get(v).cloned(),
            Term::Individual(q) => Some(Value::Individual(q.clone())),
            Term::Literal(l) => Some(Value::Literal(l.clone())),
        }
    }

    /// Binds or checks `term` against `value`; returns the variable newly
    /// bound, if any, so the caller can undo it.
    fn unify(term: &Term, value: Value, b: &mut BTreeMap<String, Value>) -> Result<Option<String>, ()> {
        match term {
            Term::Var(v) => match b.get(v) {
                Some(existing) => {
                    if existing.same(&value) {
                        Ok(None)
                    } else {
                        Err(())
                    }
                }
                None => {
                    b.insert(v.clone(), value);
                    Ok(Some(v.clone()))
                }
            },
            constant => {
                let c = Self::resolve(constant, b).expect("constants resolve");
                if c.same(&value) {
                    Ok(None)
                } else {
                    Err(())
                }
            }
        }
    }

    fn run(&mut self, step: usize, b: &mut BTreeMap<String, Value>, prov: &mut Vec<Provenance>) {
        let Some(&s) = self.steps.get(step) else {
            self.out.push(Binding {
                values: b.clone(),
                provenance: prov.clone(),
            });
            return;
        };
        match s {
            Step::Filter(i) => {
                let ok = match &self.body[i] {
                    Atom::Builtin { op, left, right } => {
                        match (Self::resolve(left, b), Self::resolve(right, b)) {
                            (Some(l), Some(r)) => builtin_holds(*op, &l, &r),
                            _ => false,
                        }
                    }
                    Atom::DifferentFrom(x, y) => match (Self::resolve(x, b), Self::resolve(y, b)) {
                        (Some(l), Some(r)) => !l.same(&r),
                        _ => false,
                    },
                    _ => unreachable!("only builtins are filters"),
                };
                if ok {
                    self.run(step + 1, b, prov);
                }
            }
            Step::Match(i) => {
                for (values, key) in self.candidates(i, b) {
                    let terms = self.body[i].terms();
                    let mut newly = Vec::new();
                    let mut ok = true;
                    for (t, v) in terms.into_iter().zip(values) {
                        match Self::unify(t, v, b) {
                            Ok(Some(var)) => newly.push(var),
                            Ok(None) => {}
                            Err(()) => {
                                ok = false;
                                break;
                            }
                        }
                    }
                    if ok {
                        prov.push(Provenance { atom: i, assertion: key });
                        self.run(step + 1, b, prov);
                        prov.pop();
                    }
                    for v in newly {
                        b.remove(&v);
                    }
                }
            }
        }
    }

    /// Graph facts that could match atom `i` given the current binding, as
    /// (argument values, assertion key).
    fn candidates(&self, i: usize, b: &BTreeMap<String, Value>) -> Vec<(Vec<Value>, String)> {
        let g = self.g;
        let ind = |t: &Term| match Self::resolve(t, b) {
            Some(Value::Individual(q)) => Some(Some(q)),
            Some(Value::Literal(_)) => None,
            None => Some(None),
        };
        let mut out = Vec::new();
        match &self.body[i] {
            Atom::Class { concept, arg } => match ind(arg) {
                None => {}
                Some(Some(x)) => {
                    if g.is_member(&x, concept) {
                        out.push((vec![Value::Individual(x.clone())], Assertion::class(x, concept.clone()).key()));
                    }
                }
                Some(None) => {
                    for x in g.instances(concept) {
                        out.push((
                            vec![Value::Individual(x.clone())],
                            Assertion::class(x.clone(), concept.clone()).key(),
                        ));
                    }
                }
            },
            Atom::ObjectProp { role, subject, object } => {
                let mut push = |s: &QName, o: &QName| {
                    out.push((
                        vec![Value::Individual(s.clone()), Value::Individual(o.clone())],
                        Assertion::object(s.clone(), role.clone(), o.clone()).key(),
                    ))
                };
                match (ind(subject), ind(object)) {
                    (None, _) | (_, None) => {}
                    (Some(Some(s)), Some(Some(o))) => {
                        if g.successors(role, &s).any(|x| *x == o) {
                            push(&s, &o);
                        }
                    }
                    (Some(Some(s)), Some(None)) => {
                        for o in g.successors(role, &s) {
                            push(&s, o);
                        }
                    }
                    (Some(None), Some(Some(o))) => {
                        for s in g.predecessors(role, &o) {
                            push(s, &o);
                        }
                    }
                    (Some(None), Some(None)) => {
                        for (s, o) in g.object_pairs(role) {
                            push(s, o);
                        }
                    }
                }
            }
            Atom::DataProp { role, subject, value } => {
                let wanted = Self::resolve(value, b);
                let mut push = |s: &QName, v: &DataValue| {
                    let lit = Value::Literal(v.clone());
                    if wanted.as_ref().map_or(true, |w| w.same(&lit)) {
                        out.push((
                            vec![Value::Individual(s.clone()), lit],
                            Assertion::data(s.clone(), role.clone(), v.clone()).key(),
                        ));
                    }
                };
                match ind(subject) {
                    None => {}
                    Some(Some(s)) => {
                        for v in g.values(role, &s) {
                            push(&s, v);
                        }
                    }
                    Some(None) => {
                        for (s, v) in g.data_pairs(role) {
                            push(s, v);
                        }
                    }
                }
            }
            _ => {}
        }
        out
    }
}

/// All bindings of the rule's body variables that satisfy every body atom,
/// duplicate-free and sorted by [`Binding::key`].
pub fn evaluate_rule(rule: &Rule, graph: &MaterializedGraph) -> Vec<Binding> {
    let Plan { steps, free } = plan(&rule.body);
    let mut solver = Solver {
        g: graph,
        body: &rule.body,
        steps,
        out: Vec::new(),
    };
    // Variables bound only by builtins or differentFrom range over the
    // active domain.
    let mut seeds: Vec<BTreeMap<String, Value>> = vec![BTreeMap::new()];
    for (var, individuals, literals) in &free {
        let mut domain: Vec<Value> = Vec::new();
        if *individuals {
            domain.extend(graph.individuals().iter().cloned().map(Value::Individual));
        }
        if *literals {
            domain.extend(graph.literals().into_iter().cloned().map(Value::Literal));
            for atom in &rule.body {
                for t in atom.terms() {
                    if let Term::Literal(l) = t {
                        domain.push(Value::Literal(l.clone()));
                    }
                }
            }
        }
        domain.sort();
        domain.dedup();
        seeds = seeds
            .into_iter()
            .flat_map(|s| {
                domain.iter().map(move |v| {
                    let mut s = s.clone();
                    s.insert(var.clone(), v.clone());
                    s
                })
            })
            .collect();
    }
    for mut seed in seeds {
        solver.run(0, &mut seed, &mut Vec::new());
    }
    let mut out = solver.out;
    for b in &mut out {
        b.provenance.sort();
    }
    out.sort_by_key(Binding::key);
    out.dedup_by(|a, b| a.key() == b.key());
    out
}

/// Variables a rule reports: its `select` list, then any other head
/// variables, in first-occurrence order.
pub fn projection_variables(rule: &Rule) -> Vec<&str> {
    let mut vars: Vec<&str> = Vec::new();
    for atom in &rule.head {
        for v in atom.variables() {
            if !vars.contains(&v) {
                vars.push(v);
            }
        }
    }
    vars
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Match {
    /// `?var` → value text, over the projected variables.
    pub bindings: BTreeMap<String, String>,
    pub provenance: Vec<Provenance>,
}

/// Projects bindings onto the reported variables; bindings that project to
/// the same tuple collapse to the canonically first one.
pub fn project(rule: &Rule, bindings: &[Binding]) -> Vec<Match> {
    let vars = projection_variables(rule);
    let mut seen: BTreeMap<String, Match> = BTreeMap::new();
    for b in bindings {
        let pairs: Vec<(&str, &Value)> = vars.iter().filter_map(|v| b.values.get(*v).map(|x| (*v, x))).collect();
        let key = binding_key(pairs.iter().copied());
        seen.entry(key).or_insert_with(|| Match {
            bindings: pairs.iter().map(|(k, v)| (format!("?{k}"), v.to_string())).collect(),
            provenance: b.provenance.clone(),
        });
    }
    seen.into_values().collect()
}

/// Facts asserted by the rule's head for each binding (single pass; the
/// results do not feed back into evaluation).
pub fn head_assertions(rule: &Rule, bindings: &[Binding]) -> Vec<Assertion> {
    let mut out = Vec::new();
    for b in bindings {
        let value = |t: &Term| Solver::resolve(t, &b.values);
        for atom in rule.head_assertions() {
            let fact = match atom {
                Atom::Class { concept, arg } => match value(arg) {
                    Some(Value::Individual(x)) => Some(Assertion::class(x, concept.clone())),
                    _ => None,
                },
                Atom::ObjectProp { role, subject, object } => match (value(subject), value(object)) {
                    (Some(Value::Individual(s)), Some(Value::Individual(o))) => {
                        Some(Assertion::object(s, role.clone(), o))
                    }
                    _ => None,
                },
                Atom::DataProp { role, subject, value: v } => match (value(subject), value(v)) {
                    (Some(Value::Individual(s)), Some(Value::Literal(l))) => Some(Assertion::data(s, role.clone(), l)),
                    _ => None,
                },
                _ => None,
            };
            out.extend(fact);
        }
    }
    canonicalize(&mut out);
    out
}

pub fn evaluate_rule_on_scenario(rule: &Rule, scenario: &Scenario, tbox: &TBox) -> Vec<Binding> {
    evaluate_rule(rule, &scenario_graph(scenario, tbox))
}

/// Checks that every name the rule uses is declared in `tbox` with the
/// right kind; packs may be evaluated against a different taxonomy than
/// they were written for.
pub fn check_rule_names(rule: &Rule, tbox: &TBox) -> Result<(), String> {
    for atom in rule.body.iter().chain(&rule.head) {
        match atom {
            Atom::Class { concept, .. } if !tbox.is_concept(concept) => {
                return Err(format!("unknown concept {concept}"))
            }
            Atom::ObjectProp { role, .. } if tbox.role(role).map(|d| d.kind) != Some(RoleKind::Object) => {
                return Err(format!("{role} is not an object role"))
            }
            Atom::DataProp { role, .. } if tbox.role(role).map(|d| d.kind) != Some(RoleKind::Data) => {
                return Err(format!("{role} is not a data role"))
            }
            _ => {}
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// DL queries

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClassExpression {
    /// Every individual.
    Thing,
    Named(QName),
    And(Vec<ClassExpression>),
    Or(Vec<ClassExpression>),
    Not(Box<ClassExpression>),
    Exists(QName, Box<ClassExpression>),
    ForAll(QName, Box<ClassExpression>),
}

impl ClassExpression {
    pub fn named(s: &str) -> Self {
        ClassExpression::Named(QName::parse(s).expect("well-formed concept name"))
    }

    pub fn not(e: ClassExpression) -> Self {
        ClassExpression::Not(Box::new(e))
    }

    pub fn exists(role: &str, e: ClassExpression) -> Self {
        ClassExpression::Exists(QName::parse(role).expect("well-formed role name"), Box::new(e))
    }

    pub fn for_all(role: &str, e: ClassExpression) -> Self {
        ClassExpression::ForAll(QName::parse(role).expect("well-formed role name"), Box::new(e))
    }
}

impl fmt::Display for ClassExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, items: &[ClassExpression], op: &str| {
            write!(f, "(")?;
            for (i, e) in items.iter().enumerate() {
                if i > 0 {
                    write!(f, " {op} ")?;
                }
                write!(f, "{e}")?;
            }
            write!(f, ")")
        };
        match self {
            ClassExpression::Thing => write!(f, "Thing"),
            ClassExpression::Named(q) => write!(f, "{q}"),
            ClassExpression::And(items) => list(f, items, "and"),
            ClassExpression::Or(items) => list(f, items, "or"),
            ClassExpression::Not(e) => write!(f, "not {e}"),
            ClassExpression::Exists(r, e) => write!(f, "({r} some {e})"),
            ClassExpression::ForAll(r, e) => write!(f, "({r} only {e})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum WorldAssumption {
    /// Open world: negation only where disjointness proves it.
    Owa,
    /// Closed world: what is not asserted is false.
    Cwa,
}

/// Parses a Manchester-style expression such as
/// `l4_d:Passenger_Car and not (phys:has_part some l4_d:License_Plate)`.
/// `not` binds tighter than `some`/`only`, which bind tighter than `and`,
/// then `or`.
pub fn parse_class_expression(text: &str, tbox: &TBox) -> Result<ClassExpression, String> {
    let mut toks: Vec<String> = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if !cur.is_empty() {
                toks.push(std::mem::take(&mut cur));
            }
            if !c.is_whitespace() {
                toks.push(c.to_string());
            }
        } else {
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        toks.push(cur);
    }

    struct P<'a> {
        toks: Vec<String>,
        pos: usize,
        tbox: &'a TBox,
    }
    impl P<'_> {
        fn peek(&self) -> Option<&str> {
            self.toks.get(self.pos).map(String::as_str)
        }
        fn next(&mut self) -> Option<String> {
            let t = self.toks.get(self.pos).cloned();
            self.pos += 1;
            t
        }
        fn name(&self, t: &str) -> Result<QName, String> {
            self.tbox.namespaces.resolve(t).map_err(|e| e.to_string())
        }
        fn or(&mut self) -> Result<ClassExpression, String> {
            let mut items = vec![self.and()?];
            while self.peek() == Some("or") {
                self.pos += 1;
                items.push(self.and()?);
            }
            Ok(if items.len() == 1 { items.pop().unwrap() } else { ClassExpression::Or(items) })
        }
        fn and(&mut self) -> Result<ClassExpression, String> {
            let mut items = vec![self.restriction()?];
            while self.peek() == Some("and") {
                self.pos += 1;
                items.push(self.restriction()?);
            }
            Ok(if items.len() == 1 { items.pop().unwrap() } else { ClassExpression::And(items) })
        }
        fn restriction(&mut self) -> Result<ClassExpression, String> {
            if let (Some(role), Some(q @ ("some" | "only"))) =
                (self.toks.get(self.pos).cloned(), self.toks.get(self.pos + 1).map(String::as_str))
            {
                let some = q == "some";
                let role = self.name(&role)?;
                match self.tbox.role(&role) {
                    Some(d) if d.kind == RoleKind::Object => {}
                    _ => return Err(format!("{role} is not an object role")),
                }
                self.pos += 2;
                let filler = Box::new(self.unary()?);
                return Ok(if some {
                    ClassExpression::Exists(role, filler)
                } else {
                    ClassExpression::ForAll(role, filler)
                });
            }
            self.unary()
        }
        fn unary(&mut self) -> Result<ClassExpression, String> {
            match self.next().as_deref() {
                Some("not") => Ok(ClassExpression::Not(Box::new(self.unary()?))),
                Some("(") => {
                    let e = self.or()?;
                    if self.next().as_deref() != Some(")") {
                        return Err("expected `)`".into());
                    }
                    Ok(e)
                }
                Some("Thing" | "owl:Thing") => Ok(ClassExpression::Thing),
                Some(t) if !matches!(t, ")" | "and" | "or" | "some" | "only") => {
                    let q = self.name(t)?;
                    if !self.tbox.is_concept(&q) {
                        return Err(format!("unknown concept {q}"));
                    }
                    Ok(ClassExpression::Named(q))
                }
                Some(t) => Err(format!("unexpected `{t}`")),
                None => Err("unexpected end of expression".into()),
            }
        }
    }
    let mut p = P { toks, pos: 0, tbox };
    let e = p.or()?;
    match p.peek() {
        None => Ok(e),
        Some(t) => Err(format!("unexpected `{t}`")),
    }
}

/// Individuals of the graph satisfying `expr`.
pub fn dl_query(expr: &ClassExpression, graph: &MaterializedGraph, mode: WorldAssumption) -> BTreeSet<QName> {
    let all = graph.individuals();
    match expr {
        ClassExpression::Thing => all.clone(),
        ClassExpression::Named(c) => graph.instances(c).cloned().collect(),
        ClassExpression::And(items) => {
            let mut it = items.iter();
            let Some(first) = it.next() else { return all.clone() };
            let mut acc = dl_query(first, graph, mode);
            for e in it {
                let next = dl_query(e, graph, mode);
                acc.retain(|x| next.contains(x));
            }
            acc
        }
        ClassExpression::Or(items) => items.iter().flat_map(|e| dl_query(e, graph, mode)).collect(),
        ClassExpression::Exists(r, e) => {
            let fillers = dl_query(e, graph, mode);
            all.iter()
                .filter(|x| graph.successors(r, x).any(|y| fillers.contains(y)))
                .cloned()
                .collect()
        }
        ClassExpression::ForAll(r, e) => match mode {
            WorldAssumption::Cwa => {
                let fillers = dl_query(e, graph, mode);
                all.iter()
                    .filter(|x| graph.successors(r, x).all(|y| fillers.contains(y)))
                    .cloned()
                    .collect()
            }
            // Emptiness of the successor set is never entailed here.
            WorldAssumption::Owa => BTreeSet::new(),
        },
        ClassExpression::Not(e) => match mode {
            WorldAssumption::Cwa => {
                let inner = dl_query(e, graph, mode);
                all.iter().filter(|x| !inner.contains(*x)).cloned().collect()
            }
            WorldAssumption::Owa => match e.as_ref() {
                ClassExpression::Named(c) => provably_not(graph, c),
                _ => BTreeSet::new(),
            },
        },
    }
}

/// Individuals whose realized types include a concept declared disjoint with
/// `c` or one of its ancestors.
fn provably_not(graph: &MaterializedGraph, c: &QName) -> BTreeSet<QName> {
    let ancestors = graph.closure().ancestors(c);
    let mut clashing: BTreeSet<&QName> = BTreeSet::new();
    for group in &graph.tbox().disjoint_groups {
        for a in ancestors.iter().filter(|a| group.contains(*a)) {
            clashing.extend(group.iter().filter(|d| *d != a));
        }
    }
    graph
        .individuals()
        .iter()
        .filter(|x| graph.memberships(x).is_some_and(|m| m.iter().any(|d| clashing.contains(d))))
        .cloned()
        .collect()
}

// ---------------------------------------------------------------------------
// Consistency

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingCategory {
    Disjointness,
    DomainRange,
    Functional,
    Cardinality,
    MissingAttribute,
}

impl fmt::Display for FindingCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FindingCategory::Disjointness => "disjointness",
            FindingCategory::DomainRange => "domain_range",
            FindingCategory::Functional => "functional",
            FindingCategory::Cardinality => "cardinality",
            FindingCategory::MissingAttribute => "missing_attribute",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Finding {
    pub category: FindingCategory,
    pub level: Level,
    pub individual: QName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<QName>,
    pub message: String,
    /// Keys of the assertions involved.
    pub assertions: Vec<String>,
}

/// Disjointness, domain/range, functionality and cardinality violations,
/// plus a warning for each functional data role an individual's type
/// declares but no assertion supplies. One finding per violation.
pub fn check_consistency(graph: &MaterializedGraph, tbox: &TBox) -> Vec<Finding> {
    let mut out = Vec::new();
    let finding = |category, level, x: &QName, message: String, assertions: Vec<String>| Finding {
        category,
        level,
        individual: x.clone(),
        scene: None,
        message,
        assertions,
    };

    for (x, members) in &graph.members {
        for group in &tbox.disjoint_groups {
            let hit: Vec<&QName> = group.iter().filter(|c| members.contains(*c)).collect();
            if hit.len() > 1 {
                let names: Vec<String> = hit.iter().map(|c| c.to_string()).collect();
                out.push(finding(
                    FindingCategory::Disjointness,
                    Level::Error,
                    x,
                    format!("{x} is an instance of disjoint concepts {}", names.join(", ")),
                    hit.iter().map(|c| Assertion::class(x.clone(), (*c).clone()).key()).collect(),
                ));
            }
        }
    }

    for a in graph.assertions() {
        let Assertion::Role(r) = a else { continue };
        let key = a.key();
        if !graph.is_asserted(&key) {
            continue;
        }
        let Some(def) = tbox.role(&r.role) else { continue };
        if let Some(d) = &def.domain {
            if !graph.is_member(&r.subject, d) {
                out.push(finding(
                    FindingCategory::DomainRange,
                    Level::Error,
                    &r.subject,
                    format!("{} is used on {}, which is not a {d}", r.role, r.subject),
                    vec![key.clone()],
                ));
            }
        }
        match (&def.range, &r.target) {
            (Some(RoleRange::Concept(c)), RoleTarget::Individual(o)) if !graph.is_member(o, c) => {
                out.push(finding(
                    FindingCategory::DomainRange,
                    Level::Error,
                    &r.subject,
                    format!("{} points {} at {o}, which is not a {c}", r.role, r.subject),
                    vec![key.clone()],
                ))
            }
            (Some(RoleRange::Datatype(dt)), RoleTarget::Literal(v)) if !dt.admits(v) => out.push(finding(
                FindingCategory::DomainRange,
                Level::Error,
                &r.subject,
                format!("{} value {v} of {} is outside its range {dt}", r.role, r.subject),
                vec![key.clone()],
            )),
            (Some(RoleRange::Concept(_)), RoleTarget::Literal(v)) => out.push(finding(
                FindingCategory::DomainRange,
                Level::Error,
                &r.subject,
                format!("object role {} has literal value {v}", r.role),
                vec![key.clone()],
            )),
            (Some(RoleRange::Datatype(_)), RoleTarget::Individual(o)) => out.push(finding(
                FindingCategory::DomainRange,
                Level::Error,
                &r.subject,
                format!("data role {} points at individual {o}", r.role),
                vec![key.clone()],
            )),
            _ => {}
        }
    }

    for (role, def) in &tbox.role_defs {
        if !def.functional {
            continue;
        }
        match def.kind {
            RoleKind::Object => {
                for (s, os) in graph.forward.get(role).into_iter().flatten() {
                    if os.len() > 1 {
                        out.push(finding(
                            FindingCategory::Functional,
                            Level::Error,
                            s,
                            format!("functional role {role} has {} values on {s}", os.len()),
                            os.iter().map(|o| Assertion::object(s.clone(), role.clone(), o.clone()).key()).collect(),
                        ));
                    }
                }
            }
            RoleKind::Data => {
                for (s, vs) in graph.data.get(role).into_iter().flatten() {
                    let mut distinct: Vec<&DataValue> = Vec::new();
                    for v in vs {
                        if !distinct.iter().any(|d| d.same_value(v)) {
                            distinct.push(v);
                        }
                    }
                    if distinct.len() > 1 {
                        let shown: Vec<String> = distinct.iter().map(|v| v.to_string()).collect();
                        out.push(finding(
                            FindingCategory::Functional,
                            Level::Error,
                            s,
                            format!("functional role {role} has values {} on {s}", shown.join(", ")),
                            vs.iter().map(|v| Assertion::data(s.clone(), role.clone(), v.clone()).key()).collect(),
                        ));
                    }
                }
            }
        }
    }

    for bound in &tbox.cardinality_bounds {
        let Some(def) = tbox.role(&bound.role) else { continue };
        for x in graph.instances(&bound.concept) {
            match def.kind {
                RoleKind::Data => {
                    for v in graph.values(&bound.role, x) {
                        if v.as_f64().is_some_and(|n| n > bound.max as f64) {
                            out.push(finding(
                                FindingCategory::Cardinality,
                                Level::Error,
                                x,
                                format!("{x} has {} {v}, above the bound {} for {}", bound.role, bound.max, bound.concept),
                                vec![Assertion::data(x.clone(), bound.role.clone(), v.clone()).key()],
                            ));
                        }
                    }
                }
                RoleKind::Object => {
                    let n = graph.successors(&bound.role, x).count();
                    if n as i64 > bound.max {
                        out.push(finding(
                            FindingCategory::Cardinality,
                            Level::Error,
                            x,
                            format!("{x} has {n} {} links, above the bound {} for {}", bound.role, bound.max, bound.concept),
                            graph
                                .successors(&bound.role, x)
                                .map(|o| Assertion::object(x.clone(), bound.role.clone(), o.clone()).key())
                                .collect(),
                        ));
                    }
                }
            }
        }
    }

    for (role, def) in &tbox.role_defs {
        if !(def.functional && def.kind == RoleKind::Data) {
            continue;
        }
        let Some(domain) = &def.domain else { continue };
        for x in graph.instances(domain) {
            if graph.values(role, x).next().is_none() {
                out.push(finding(
                    FindingCategory::MissingAttribute,
                    Level::Warning,
                    x,
                    format!("{x} is a {domain} but has no {role}"),
                    Vec::new(),
                ));
            }
        }
    }

    out.sort();
    out.dedup();
    out
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleReport {
    pub id: String,
    pub label: String,
    pub matches: Vec<Match>,
    /// Facts the rule head asserted, tagged with this rule as `inferred_by`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inferred: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpReport {
    pub target_id: String,
    pub pack_id: String,
    pub pack_version: String,
    pub rules: Vec<RuleReport>,
    pub consistency: Vec<Finding>,
    /// Wall time of the evaluation; `null` unless timing was requested, so
    /// that reports stay byte-identical across runs.
    pub elapsed_ms: Option<f64>,
}

impl CpReport {
    pub fn rule(&self, id: &str) -> Option<&RuleReport> {
        self.rules.iter().find(|r| r.id == id)
    }

    /// Ids of rules with at least one match.
    pub fn fired(&self) -> Vec<&str> {
        self.rules
            .iter()
            .filter(|r| !r.matches.is_empty())
            .map(|r| r.id.as_str())
            .collect()
    }

    pub fn has_findings(&self) -> bool {
        !self.fired().is_empty() || !self.consistency.is_empty()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Scene(&'a Scene),
    Scenario(&'a Scenario),
}

impl Target<'_> {
    pub fn id(&self) -> String {
        match self {
            Target::Scene(s) => s.id.to_string(),
            Target::Scenario(s) => s.id.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub exec: Execution,
    pub timing: bool,
    pub consistency: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            exec: Execution::Parallel,
            timing: false,
            consistency: true,
        }
    }
}

/// Evaluates each rule of the pack independently against one graph.
pub fn evaluate_pack(pack: &RulePack, graph: &MaterializedGraph, exec: Execution) -> Vec<RuleReport> {
    let mut reports = par::map(exec, &pack.rules, |rule| match check_rule_names(rule, graph.tbox()) {
        Err(e) => RuleReport {
            id: rule.id.clone(),
            label: rule.label.clone(),
            matches: Vec::new(),
            inferred: Vec::new(),
            error: Some(e),
        },
        Ok(()) => {
            let bindings = evaluate_rule(rule, graph);
            RuleReport {
                id: rule.id.clone(),
                label: rule.label.clone(),
                matches: project(rule, &bindings),
                inferred: head_assertions(rule, &bindings).iter().map(Assertion::key).collect(),
                error: None,
            }
        }
    });
    reports.sort_by(|a, b| a.id.cmp(&b.id));
    reports
}

/// Runs every rule of the pack and the consistency checks against a scene
/// or scenario. Output order is deterministic: rules by id, matches by
/// binding key, findings by category then individual.
pub fn run_cp_suite(pack: &RulePack, target: Target<'_>, tbox: &TBox, opts: SuiteOptions) -> CpReport {
    let start = Instant::now();
    let shared = Arc::new(tbox.clone());
    let (graph, consistency) = match target {
        Target::Scene(scene) => {
            let g = realize_shared(scene, shared.clone());
            let findings = if opts.consistency { check_consistency(&g, tbox) } else { Vec::new() };
            (g, findings)
        }
        Target::Scenario(scenario) => {
            let (assertions, individuals) = scenario_assertions(scenario, tbox);
            let g = MaterializedGraph::new(shared.clone(), assertions, individuals);
            // Per-frame attributes legitimately differ across scenes, so
            // consistency is judged frame by frame.
            let mut findings = Vec::new();
            if opts.consistency {
                let per_scene = par::map(opts.exec, &scenario.scenes, |s| {
                    let mut f = check_consistency(&realize_shared(s, shared.clone()), tbox);
                    for x in &mut f {
                        x.scene = Some(s.id.clone());
                    }
                    f
                });
                findings = per_scene.into_iter().flatten().collect();
                findings.sort();
            }
            (g, findings)
        }
    };
    let rules = evaluate_pack(pack, &graph, opts.exec);
    CpReport {
        target_id: target.id(),
        pack_id: pack.id.clone(),
        pack_version: pack.version.clone(),
        rules,
        consistency,
        elapsed_ms: opts.timing.then(|| start.elapsed().as_secs_f64() * 1e3),
    }
}
