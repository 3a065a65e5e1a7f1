//! Brute-force conjunctive matcher used as a test oracle. It shares nothing
//! with the reasoner beyond the data types: its own closure (naive
//! fixpoint), its own fact sets, and full enumeration of every assignment
//! of every body variable over its typed domain.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use scenekg_core::model::{Assertion, DataValue, QName, RoleTarget};
use scenekg_core::rules::{Atom, BuiltinOp, Rule, Term};
use scenekg_core::taxonomy::TBox;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Val {
    Ind(String),
    /// Key text plus the value itself (kept for numeric comparison).
    Lit(String, LitVal),
}

#[derive(Debug, Clone, PartialEq, PartialOrd)]
pub enum LitVal {
    Num(f64),
    Other(String),
}

impl Eq for LitVal {}

impl Ord for LitVal {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.partial_cmp(other).unwrap_or(std::cmp::Ordering::Equal)
    }
}

fn lit(v: &DataValue) -> Val {
    let inner = match v {
        DataValue::Integer(i) => LitVal::Num(*i as f64),
        DataValue::Decimal(d) => LitVal::Num(*d),
        DataValue::Boolean(b) => LitVal::Other(format!("b:{b}")),
        DataValue::String(s) => LitVal::Other(format!("s:{s}")),
        DataValue::Enum(q) => LitVal::Other(format!("e:{q}")),
    };
    Val::Lit(v.key_text(), inner)
}

impl Val {
    pub fn text(&self) -> &str {
        match self {
            Val::Ind(s) | Val::Lit(s, _) => s,
        }
    }

    /// Value equality: numbers numerically, everything else exactly.
    fn equals(&self, other: &Val) -> bool {
        match (self, other) {
            (Val::Ind(a), Val::Ind(b)) => a == b,
            (Val::Lit(_, LitVal::Num(a)), Val::Lit(_, LitVal::Num(b))) => a == b,
            (Val::Lit(_, LitVal::Other(a)), Val::Lit(_, LitVal::Other(b))) => a == b,
            _ => false,
        }
    }
}

pub struct Facts {
    members: BTreeSet<(String, String)>,
    objects: BTreeSet<(String, String, String)>,
    data: BTreeSet<(String, String, Val)>,
    individuals: BTreeSet<String>,
    literals: BTreeSet<Val>,
}

impl Facts {
    pub fn new(tbox: &TBox, assertions: &[Assertion], individuals: impl IntoIterator<Item = QName>) -> Self {
        let mut f = Facts {
            members: BTreeSet::new(),
            objects: BTreeSet::new(),
            data: BTreeSet::new(),
            individuals: individuals.into_iter().map(|q| q.to_string()).collect(),
            literals: BTreeSet::new(),
        };
        for a in assertions {
            match a {
                Assertion::Class(c) => {
                    f.members.insert((c.individual.to_string(), c.concept.to_string()));
                }
                Assertion::Role(r) => match &r.target {
                    RoleTarget::Individual(o) => {
                        f.objects.insert((r.subject.to_string(), r.role.to_string(), o.to_string()));
                    }
                    RoleTarget::Literal(v) => {
                        f.data.insert((r.subject.to_string(), r.role.to_string(), lit(v)));
                    }
                },
            }
        }
        let sub: Vec<(String, String)> =
            tbox.subclass_axioms.iter().map(|(c, d)| (c.to_string(), d.to_string())).collect();
        let inc: Vec<(String, String)> =
            tbox.role_inclusions.iter().map(|(r, s)| (r.to_string(), s.to_string())).collect();
        loop {
            let before = (f.members.len(), f.objects.len(), f.data.len());
            let mut add_m = Vec::new();
            for (x, c) in &f.members {
                for (c2, d) in &sub {
                    if c == c2 {
                        add_m.push((x.clone(), d.clone()));
                    }
                }
            }
            f.members.extend(add_m);
            let mut add_o = Vec::new();
            for (s, r, o) in &f.objects {
                for (r2, p) in &inc {
                    if r == r2 {
                        add_o.push((s.clone(), p.clone(), o.clone()));
                    }
                }
            }
            f.objects.extend(add_o);
            let mut add_d = Vec::new();
            for (s, r, v) in &f.data {
                for (r2, p) in &inc {
                    if r == r2 {
                        add_d.push((s.clone(), p.clone(), v.clone()));
                    }
                }
            }
            f.data.extend(add_d);
            if before == (f.members.len(), f.objects.len(), f.data.len()) {
                break;
            }
        }
        for (x, _) in &f.members {
            f.individuals.insert(x.clone());
        }
        for (s, _, o) in &f.objects {
            f.individuals.insert(s.clone());
            f.individuals.insert(o.clone());
        }
        for (s, _, v) in &f.data {
            f.individuals.insert(s.clone());
            f.literals.insert(v.clone());
        }
        f
    }
}

fn term_val(t: &Term, a: &BTreeMap<&str, Val>) -> Val {
    match t {
        Term::Var(v) => a[v.as_str()].clone(),
        Term::Individual(q) => Val::Ind(q.to_string()),
        Term::Literal(l) => lit(l),
    }
}

fn holds(atom: &Atom, a: &BTreeMap<&str, Val>, f: &Facts) -> bool {
    match atom {
        Atom::Class { concept, arg } => match term_val(arg, a) {
            Val::Ind(x) => f.members.contains(&(x, concept.to_string())),
            _ => false,
        },
        Atom::ObjectProp { role, subject, object } => match (term_val(subject, a), term_val(object, a)) {
            (Val::Ind(s), Val::Ind(o)) => f.objects.contains(&(s, role.to_string(), o)),
            _ => false,
        },
        Atom::DataProp { role, subject, value } => {
            let Val::Ind(s) = term_val(subject, a) else { return false };
            let v = term_val(value, a);
            let role = role.to_string();
            f.data.iter().any(|(s2, r2, w)| {
                *s2 == s
                    && *r2 == role
                    && match value {
                        // A variable takes the fact's own value.
                        Term::Var(_) => *w == v,
                        _ => w.equals(&v),
                    }
            })
        }
        Atom::Builtin { op, left, right } => {
            let (l, r) = (term_val(left, a), term_val(right, a));
            match op {
                BuiltinOp::Equal => l.equals(&r),
                BuiltinOp::NotEqual => !l.equals(&r),
                _ => match (&l, &r) {
                    (Val::Lit(_, LitVal::Num(x)), Val::Lit(_, LitVal::Num(y))) => match op {
                        BuiltinOp::LessThan => x < y,
                        BuiltinOp::LessThanOrEqual => x <= y,
                        BuiltinOp::GreaterThan => x > y,
                        BuiltinOp::GreaterThanOrEqual => x >= y,
                        _ => unreachable!(),
                    },
                    _ => false,
                },
            }
        }
        Atom::DifferentFrom(x, y) => !term_val(x, a).equals(&term_val(y, a)),
        Atom::Select(_) => true,
    }
}

/// Domain of each body variable: individuals where a class or role atom
/// uses it as an individual, graph literals where a data atom uses it as a
/// value; variables only builtins or differentFrom mention range over
/// literals (plus the rule's own) and individuals respectively.
fn domains<'r>(rule: &'r Rule, f: &Facts) -> Vec<(&'r str, Vec<Val>)> {
    let mut ind: BTreeSet<&str> = BTreeSet::new();
    let mut litv: BTreeSet<&str> = BTreeSet::new();
    let mut loose_ind: BTreeSet<&str> = BTreeSet::new();
    let mut loose_lit: BTreeSet<&str> = BTreeSet::new();
    let mut rule_lits: BTreeSet<Val> = BTreeSet::new();
    for atom in &rule.body {
        let var = |t: &'r Term| if let Term::Var(v) = t { Some(v.as_str()) } else { None };
        match atom {
            Atom::Class { arg, .. } => ind.extend(var(arg)),
            Atom::ObjectProp { subject, object, .. } => {
                ind.extend(var(subject));
                ind.extend(var(object));
            }
            Atom::DataProp { subject, value, .. } => {
                ind.extend(var(subject));
                litv.extend(var(value));
            }
            Atom::Builtin { left, right, .. } => {
                loose_lit.extend(var(left));
                loose_lit.extend(var(right));
            }
            Atom::DifferentFrom(x, y) => {
                loose_ind.extend(var(x));
                loose_ind.extend(var(y));
            }
            Atom::Select(_) => {}
        }
        for t in atom.terms() {
            if let Term::Literal(l) = t {
                rule_lits.insert(lit(l));
            }
        }
    }
    let all: BTreeSet<&str> = ind.iter().chain(&litv).chain(&loose_ind).chain(&loose_lit).copied().collect();
    all.into_iter()
        .map(|v| {
            let mut d: BTreeSet<Val> = BTreeSet::new();
            let grounded = ind.contains(v) || litv.contains(v);
            if ind.contains(v) || (!grounded && loose_ind.contains(v)) {
                d.extend(f.individuals.iter().cloned().map(Val::Ind));
            }
            if litv.contains(v) || (!grounded && loose_lit.contains(v)) {
                d.extend(f.literals.iter().cloned());
            }
            if !grounded && loose_lit.contains(v) {
                d.extend(rule_lits.iter().cloned());
            }
            (v, d.into_iter().collect())
        })
        .collect()
}

/// Every satisfying assignment of the body variables, as `var → key text`.
pub fn brute_force(rule: &Rule, f: &Facts) -> BTreeSet<BTreeMap<String, String>> {
    let doms = domains(rule, f);
    let mut out = BTreeSet::new();
    if doms.iter().any(|(_, d)| d.is_empty()) {
        return out;
    }
    let mut idx = vec![0usize; doms.len()];
    loop {
        let a: BTreeMap<&str, Val> = doms.iter().zip(&idx).map(|((v, d), &i)| (*v, d[i].clone())).collect();
        if rule.body.iter().all(|atom| holds(atom, &a, f)) {
            out.insert(a.iter().map(|(k, v)| ((*k).to_owned(), v.text().to_owned())).collect());
        }
        // Odometer increment.
        let mut k = 0;
        loop {
            if k == idx.len() {
                return out;
            }
            idx[k] += 1;
            if idx[k] < doms[k].1.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Assignments restricted to the variables the rule head mentions.
pub fn brute_force_projected(rule: &Rule, f: &Facts) -> BTreeSet<BTreeMap<String, String>> {
    let head: BTreeSet<&str> = rule.head.iter().flat_map(|a| a.variables()).collect();
    brute_force(rule, f)
        .into_iter()
        .map(|m| m.into_iter().filter(|(k, _)| head.contains(k.as_str())).collect())
        .collect()
}
