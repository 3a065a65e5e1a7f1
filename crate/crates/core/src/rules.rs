//! The CP rule language: Horn rules over the taxonomy's names with
//! comparison builtins, `differentFrom`, and a `sqwrl:select` projection.
//!
//! ```text
//! l4_d:Passenger_Car(?car) ^ phys:no_plate(?car, ?p) ^ swrb:equal(?p, 1)
//!     ^ phys:has_distance(?car, ?distance) ^ swrb:lessThan(?distance, 50.0)
//!     -> sqwrl:select(?car)
//! ```
//!
//! `∧`/`^` and `→`/`->` are interchangeable. Whether a role atom is an object
//! or a data atom is decided by the role's declared kind.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::model::{DataValue, QName};
use crate::taxonomy::{subsumption_closure, Datatype, RoleKind, RoleRange, TBox};

/// The shipped CP rule pack.
pub const SHIPPED_PACK: &str = include_str!("../assets/cp_pack.rules");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error("{line}:{col}: syntax error: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("{line}:{col}: unknown name `{name}`")]
    UnknownName { line: usize, col: usize, name: String },
    #[error("unsafe rule: head variables {} do not occur in the body", fmt_vars(.vars))]
    UnsafeRule { vars: Vec<String> },
    #[error("rule has an empty body")]
    EmptyBody,
    #[error("{line}:{col}: {message}")]
    InvalidAtom {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("duplicate rule id `{0}`")]
    DuplicateRuleId(String),
    #[error("rule {id}: {source}")]
    InRule {
        id: String,
        #[source]
        source: Box<RuleError>,
    },
}

fn fmt_vars(vars: &[String]) -> String {
    vars.iter().map(|v| format!("?{v}")).collect::<Vec<_>>().join(", ")
}

// ---------------------------------------------------------------------------
// AST

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Var(String),
    Individual(QName),
    Literal(DataValue),
}

impl Term {
    pub fn var(&self) -> Option<&str> {
        match self {
            Term::Var(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "?{v}"),
            Term::Individual(q) => write!(f, "{q}"),
            Term::Literal(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum BuiltinOp {
    Equal,
    NotEqual,
    LessThan,
    LessThanOrEqual,
    GreaterThan,
    GreaterThanOrEqual,
}

impl BuiltinOp {
    pub const ALL: [BuiltinOp; 6] = [
        BuiltinOp::Equal,
        BuiltinOp::NotEqual,
        BuiltinOp::LessThan,
        BuiltinOp::LessThanOrEqual,
        BuiltinOp::GreaterThan,
        BuiltinOp::GreaterThanOrEqual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinOp::Equal => "equal",
            BuiltinOp::NotEqual => "notEqual",
            BuiltinOp::LessThan => "lessThan",
            BuiltinOp::LessThanOrEqual => "lessThanOrEqual",
            BuiltinOp::GreaterThan => "greaterThan",
            BuiltinOp::GreaterThanOrEqual => "greaterThanOrEqual",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.name() == s)
    }

    pub fn is_ordering(self) -> bool {
        !matches!(self, BuiltinOp::Equal | BuiltinOp::NotEqual)
    }

    /// Numbers compare numerically across integer/decimal; other values
    /// support only (in)equality. Incomparable operands never satisfy.
    pub fn holds(self, a: &DataValue, b: &DataValue) -> bool {
        use std::cmp::Ordering::*;
        match self {
            BuiltinOp::Equal => a.same_value(b),
            BuiltinOp::NotEqual => !a.same_value(b),
            _ => {
                if a.as_f64().is_none() || b.as_f64().is_none() {
                    return false;
                }
                match (self, a.compare(b)) {
                    (_, None) => false,
                    (BuiltinOp::LessThan, Some(o)) => o == Less,
                    (BuiltinOp::LessThanOrEqual, Some(o)) => o != Greater,
                    (BuiltinOp::GreaterThan, Some(o)) => o == Greater,
                    (BuiltinOp::GreaterThanOrEqual, Some(o)) => o != Less,
                    _ => unreachable!(),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Atom {
    Class { concept: QName, arg: Term },
    ObjectProp { role: QName, subject: Term, object: Term },
    DataProp { role: QName, subject: Term, value: Term },
    Builtin { op: BuiltinOp, left: Term, right: Term },
    DifferentFrom(Term, Term),
    Select(Vec<String>),
}

impl Atom {
    pub fn terms(&self) -> Vec<&Term> {
        match self {
            Atom::Class { arg, .. } => vec![arg],
            Atom::ObjectProp { subject, object, .. } => vec![subject, object],
            Atom::DataProp { subject, value, .. } => vec![subject, value],
            Atom::Builtin { left, right, .. } => vec![left, right],
            Atom::DifferentFrom(a, b) => vec![a, b],
            Atom::Select(_) => Vec::new(),
        }
    }

    pub fn variables(&self) -> Vec<&str> {
        match self {
            Atom::Select(vars) => vars.iter().map(String::as_str).collect(),
            _ => self.terms().into_iter().filter_map(Term::var).collect(),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Class { concept, arg } => write!(f, "{concept}({arg})"),
            Atom::ObjectProp { role, subject, object } => write!(f, "{role}({subject}, {object})"),
            Atom::DataProp { role, subject, value } => write!(f, "{role}({subject}, {value})"),
            Atom::Builtin { op, left, right } => write!(f, "swrb:{}({left}, {right})", op.name()),
            Atom::DifferentFrom(a, b) => write!(f, "differentFrom({a}, {b})"),
            Atom::Select(vars) => write!(f, "sqwrl:select({})", fmt_vars(vars)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub id: String,
    pub label: String,
    pub body: Vec<Atom>,
    pub head: Vec<Atom>,
}

impl Rule {
    pub fn body_variables(&self) -> BTreeSet<&str> {
        self.body.iter().flat_map(Atom::variables).collect()
    }

    pub fn head_variables(&self) -> BTreeSet<&str> {
        self.head.iter().flat_map(Atom::variables).collect()
    }

    /// Variables projected by `sqwrl:select`, in order.
    pub fn select_variables(&self) -> Vec<&str> {
        self.head
            .iter()
            .filter_map(|a| match a {
                Atom::Select(v) => Some(v.iter().map(String::as_str)),
                _ => None,
            })
            .flatten()
            .collect()
    }

    /// Head atoms that assert facts (everything but `select`).
    pub fn head_assertions(&self) -> impl Iterator<Item = &Atom> {
        self.head.iter().filter(|a| !matches!(a, Atom::Select(_)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RulePack {
    pub id: String,
    pub version: String,
    pub rules: Vec<Rule>,
}

impl RulePack {
    pub fn get(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn shipped(tbox: &TBox) -> RulePack {
        parse_pack(SHIPPED_PACK, tbox).expect("shipped pack parses against the shipped taxonomy")
    }
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Name(String),
    Var(String),
    Int(i64),
    Dec(f64),
    Str(String),
    LParen,
    RParen,
    Comma,
    And,
    Arrow,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn err(&self, line: usize, col: usize, message: impl Into<String>) -> RuleError {
        RuleError::Syntax {
            line,
            col,
            message: message.into(),
        }
    }

    fn take_while(&mut self, out: &mut String, f: impl Fn(char) -> bool) {
        while let Some(c) = self.peek() {
            if !f(c) {
                break;
            }
            out.push(c);
            self.bump();
        }
    }

    fn number(&mut self, line: usize, col: usize) -> Result<Tok, RuleError> {
        let mut text = String::new();
        if let Some(c @ ('-' | '+')) = self.peek() {
            text.push(c);
            self.bump();
        }
        let digit = |c: char| c.is_ascii_digit();
        self.take_while(&mut text, digit);
        let mut decimal = false;
        if self.peek() == Some('.') {
            decimal = true;
            text.push('.');
            self.bump();
            self.take_while(&mut text, digit);
        }
        if let Some(e @ ('e' | 'E')) = self.peek() {
            decimal = true;
            text.push(e);
            self.bump();
            if let Some(c @ ('-' | '+')) = self.peek() {
                text.push(c);
                self.bump();
            }
            self.take_while(&mut text, digit);
        }
        if decimal {
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Tok::Dec(if v == 0.0 { 0.0 } else { v })),
                _ => Err(self.err(line, col, format!("malformed number `{text}`"))),
            }
        } else {
            text.parse::<i64>()
                .map(Tok::Int)
                .map_err(|_| self.err(line, col, format!("malformed integer `{text}`")))
        }
    }

    fn string(&mut self, line: usize, col: usize) -> Result<Tok, RuleError> {
        self.bump();
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(self.err(line, col, "unterminated string")),
                Some('"') => return Ok(Tok::Str(out)),
                Some('\\') => match self.bump() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some('r') => out.push('\r'),
                    Some('0') => out.push('\0'),
                    Some(c @ ('"' | '\\' | '\'')) => out.push(c),
                    Some('u') => {
                        let mut hex = String::new();
                        if self.bump() != Some('{') {
                            return Err(self.err(line, col, "expected `{` after \\u"));
                        }
                        self.take_while(&mut hex, |c| c != '}');
                        self.bump();
                        let c = u32::from_str_radix(&hex, 16)
                            .ok()
                            .and_then(char::from_u32)
                            .ok_or_else(|| self.err(line, col, "bad unicode escape"))?;
                        out.push(c);
                    }
                    _ => return Err(self.err(line, col, "unknown escape in string")),
                },
                Some(c) => out.push(c),
            }
        }
    }

    fn tokens(mut self) -> Result<Vec<Spanned>, RuleError> {
        let mut out = Vec::new();
        while let Some(c) = self.peek() {
            let (line, col) = (self.line, self.col);
            let tok = match c {
                c if c.is_whitespace() => {
                    self.bump();
                    continue;
                }
                '#' => {
                    while self.peek().is_some_and(|c| c != '\n') {
                        self.bump();
                    }
                    continue;
                }
                '(' | ')' | ',' | '^' | '∧' | '→' => {
                    self.bump();
                    match c {
                        '(' => Tok::LParen,
                        ')' => Tok::RParen,
                        ',' => Tok::Comma,
                        '^' | '∧' => Tok::And,
                        _ => Tok::Arrow,
                    }
                }
                '-' => {
                    let mut ahead = self.chars.clone();
                    ahead.next();
                    if ahead.peek() == Some(&'>') {
                        self.bump();
                        self.bump();
                        Tok::Arrow
                    } else {
                        self.number(line, col)?
                    }
                }
                '+' => self.number(line, col)?,
                c if c.is_ascii_digit() => self.number(line, col)?,
                '"' => self.string(line, col)?,
                '?' => {
                    self.bump();
                    let mut name = String::new();
                    self.take_while(&mut name, |c| c.is_ascii_alphanumeric() || c == '_');
                    if name.is_empty() {
                        return Err(self.err(line, col, "expected a variable name after `?`"));
                    }
                    Tok::Var(name)
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let mut name = String::new();
                    self.take_while(&mut name, |c| c.is_ascii_alphanumeric() || c == '_' || c == ':');
                    Tok::Name(name)
                }
                other => return Err(self.err(line, col, format!("unexpected character `{other}`"))),
            };
            out.push(Spanned { tok, line, col });
        }
        Ok(out)
    }
}

fn lex(text: &str, first_line: usize) -> Result<Vec<Spanned>, RuleError> {
    Lexer {
        chars: text.chars().peekable(),
        line: first_line,
        col: 1,
    }
    .tokens()
}

// ---------------------------------------------------------------------------
// Parser

enum Slot {
    /// Subject of any atom, argument of a class atom, object-role object.
    Individual,
    /// Value position of a data atom, builtin operands.
    Value,
}

struct RawAtom {
    name: String,
    args: Vec<Spanned>,
    line: usize,
    col: usize,
}

struct Parser<'a> {
    toks: Vec<Spanned>,
    pos: usize,
    tbox: &'a TBox,
    end: (usize, usize),
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn here(&self) -> (usize, usize) {
        self.peek().map(|t| (t.line, t.col)).unwrap_or(self.end)
    }

    fn syntax(&self, message: impl Into<String>) -> RuleError {
        let (line, col) = self.here();
        RuleError::Syntax {
            line,
            col,
            message: message.into(),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), RuleError> {
        match self.peek() {
            Some(t) if t.tok == tok => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.syntax(format!("expected {what}"))),
        }
    }

    fn raw_atom(&mut self) -> Result<RawAtom, RuleError> {
        let (line, col) = self.here();
        let name = match self.peek().map(|t| &t.tok) {
            Some(Tok::Name(n)) => n.clone(),
            _ => return Err(self.syntax("expected an atom")),
        };
        self.pos += 1;
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        loop {
            match self.peek() {
                Some(t) if matches!(t.tok, Tok::Var(_) | Tok::Name(_) | Tok::Int(_) | Tok::Dec(_) | Tok::Str(_)) => {
                    args.push(t.clone());
                    self.pos += 1;
                }
                _ => return Err(self.syntax("expected a variable or constant")),
            }
            match self.peek().map(|t| &t.tok) {
                Some(Tok::Comma) => self.pos += 1,
                Some(Tok::RParen) => {
                    self.pos += 1;
                    break;
                }
                _ => return Err(self.syntax("expected `,` or `)`")),
            }
        }
        Ok(RawAtom { name, args, line, col })
    }

    /// `atom (AND atom)*`, tolerating one dangling `AND` before the arrow or
    /// the end of input.
    fn conjunction(&mut self) -> Result<Vec<RawAtom>, RuleError> {
        let mut atoms = vec![self.raw_atom()?];
        while self.peek().is_some_and(|t| t.tok == Tok::And) {
            self.pos += 1;
            match self.peek().map(|t| &t.tok) {
                None | Some(Tok::Arrow) => break,
                _ => atoms.push(self.raw_atom()?),
            }
        }
        Ok(atoms)
    }

    fn resolve(&self, name: &str, line: usize, col: usize) -> Result<QName, RuleError> {
        let unknown = || RuleError::UnknownName {
            line,
            col,
            name: name.to_owned(),
        };
        let q = QName::parse(name).map_err(|_| unknown())?;
        // Table II spells the physics prefix `phvs` once.
        let q = if q.prefix() == "phvs" {
            QName::new("phys", q.local_name()).map_err(|_| unknown())?
        } else {
            q
        };
        if !self.tbox.namespaces.contains(q.prefix()) {
            return Err(unknown());
        }
        Ok(q)
    }

    fn term(&self, t: &Spanned, slot: Slot) -> Result<Term, RuleError> {
        let invalid = |message: &str| RuleError::InvalidAtom {
            line: t.line,
            col: t.col,
            message: message.to_owned(),
        };
        let literal = |v: DataValue| match slot {
            Slot::Value => Ok(Term::Literal(v)),
            Slot::Individual => Err(invalid("a literal cannot stand for an individual")),
        };
        match &t.tok {
            Tok::Var(v) => Ok(Term::Var(v.clone())),
            Tok::Int(i) => literal(DataValue::Integer(*i)),
            Tok::Dec(d) => literal(DataValue::Decimal(*d)),
            Tok::Str(s) => literal(DataValue::String(s.clone())),
            Tok::Name(n) if n == "true" || n == "false" => literal(DataValue::Boolean(n == "true")),
            Tok::Name(n) => {
                let q = self.resolve(n, t.line, t.col)?;
                Ok(match slot {
                    Slot::Individual => Term::Individual(q),
                    Slot::Value => Term::Literal(DataValue::Enum(q)),
                })
            }
            _ => Err(invalid("expected a term")),
        }
    }

    fn atom(&self, raw: &RawAtom) -> Result<Atom, RuleError> {
        let RawAtom { name, args, line, col } = raw;
        let (line, col) = (*line, *col);
        let arity = |n: usize| -> Result<(), RuleError> {
            if args.len() == n {
                Ok(())
            } else {
                Err(RuleError::InvalidAtom {
                    line,
                    col,
                    message: format!("`{name}` takes {n} argument(s), got {}", args.len()),
                })
            }
        };
        if name == "differentFrom" {
            arity(2)?;
            return Ok(Atom::DifferentFrom(
                self.term(&args[0], Slot::Individual)?,
                self.term(&args[1], Slot::Individual)?,
            ));
        }
        let q = self.resolve(name, line, col)?;
        match q.prefix() {
            "sqwrl" if q.local_name() == "select" => {
                let mut vars = Vec::new();
                for a in args {
                    match &a.tok {
                        Tok::Var(v) => vars.push(v.clone()),
                        _ => {
                            return Err(RuleError::InvalidAtom {
                                line: a.line,
                                col: a.col,
                                message: "sqwrl:select takes variables only".into(),
                            })
                        }
                    }
                }
                return Ok(Atom::Select(vars));
            }
            "swrb" => {
                let op = BuiltinOp::from_name(q.local_name()).ok_or_else(|| RuleError::UnknownName {
                    line,
                    col,
                    name: name.clone(),
                })?;
                arity(2)?;
                return Ok(Atom::Builtin {
                    op,
                    left: self.term(&args[0], Slot::Value)?,
                    right: self.term(&args[1], Slot::Value)?,
                });
            }
            _ => {}
        }
        if self.tbox.is_concept(&q) {
            arity(1)?;
            return Ok(Atom::Class {
                concept: q,
                arg: self.term(&args[0], Slot::Individual)?,
            });
        }
        if let Some(def) = self.tbox.role(&q) {
            arity(2)?;
            let subject = self.term(&args[0], Slot::Individual)?;
            return Ok(match def.kind {
                RoleKind::Object => Atom::ObjectProp {
                    role: q,
                    subject,
                    object: self.term(&args[1], Slot::Individual)?,
                },
                RoleKind::Data => Atom::DataProp {
                    role: q,
                    subject,
                    value: self.term(&args[1], Slot::Value)?,
                },
            });
        }
        Err(RuleError::UnknownName {
            line,
            col,
            name: name.clone(),
        })
    }

    fn rule(&mut self) -> Result<(Vec<Atom>, Vec<Atom>), RuleError> {
        if self.toks.is_empty() {
            return Err(RuleError::EmptyBody);
        }
        let body_raw = self.conjunction()?;
        let head_raw = if self.peek().is_some_and(|t| t.tok == Tok::Arrow) {
            self.pos += 1;
            Some(self.conjunction()?)
        } else {
            None
        };
        if self.peek().is_some() {
            return Err(self.syntax("expected `^` or `->`"));
        }
        let mut body = Vec::new();
        let mut head = Vec::new();
        let check_head = |raw: &RawAtom, a: &Atom| match a {
            Atom::Builtin { .. } | Atom::DifferentFrom(..) => Err(RuleError::InvalidAtom {
                line: raw.line,
                col: raw.col,
                message: "builtins and differentFrom may only appear in the body".into(),
            }),
            _ => Ok(()),
        };
        for raw in &body_raw {
            let atom = self.atom(raw)?;
            match (&atom, &head_raw) {
                // Arrow-less rules put the projection in the conjunction.
                (Atom::Select(_), None) => head.push(atom),
                (Atom::Select(_), Some(_)) => {
                    return Err(RuleError::InvalidAtom {
                        line: raw.line,
                        col: raw.col,
                        message: "sqwrl:select may only appear in the head".into(),
                    })
                }
                _ => body.push(atom),
            }
        }
        if head_raw.is_none() && head.is_empty() {
            return Err(self.syntax("expected `->` and a head"));
        }
        for raw in head_raw.iter().flatten() {
            let atom = self.atom(raw)?;
            check_head(raw, &atom)?;
            head.push(atom);
        }
        if body.is_empty() {
            return Err(RuleError::EmptyBody);
        }
        Ok((body, head))
    }
}

fn parse_at(text: &str, tbox: &TBox, first_line: usize) -> Result<(Vec<Atom>, Vec<Atom>), RuleError> {
    let toks = lex(text, first_line)?;
    let end = match toks.last() {
        Some(t) => (t.line, t.col + 1),
        None => (first_line, 1),
    };
    let (body, head) = Parser {
        toks,
        pos: 0,
        tbox,
        end,
    }
    .rule()?;
    let body_vars: BTreeSet<&str> = body.iter().flat_map(Atom::variables).collect();
    let unsafe_vars: BTreeSet<&str> = head
        .iter()
        .flat_map(Atom::variables)
        .filter(|v| !body_vars.contains(v))
        .collect();
    if !unsafe_vars.is_empty() {
        return Err(RuleError::UnsafeRule {
            vars: unsafe_vars.into_iter().map(str::to_owned).collect(),
        });
    }
    Ok((body, head))
}

/// Parses one rule; `id` and `label` are left empty.
pub fn parse_rule(text: &str, tbox: &TBox) -> Result<Rule, RuleError> {
    parse_rule_with(String::new(), String::new(), text, tbox)
}

pub fn parse_rule_with(
    id: impl Into<String>,
    label: impl Into<String>,
    text: &str,
    tbox: &TBox,
) -> Result<Rule, RuleError> {
    let (body, head) = parse_at(text, tbox, 1)?;
    Ok(Rule {
        id: id.into(),
        label: label.into(),
        body,
        head,
    })
}

/// Canonical one-line form with ASCII connectives.
pub fn format_rule(rule: &Rule) -> String {
    let join = |atoms: &[Atom]| atoms.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ^ ");
    format!("{} -> {}", join(&rule.body), join(&rule.head))
}

// ---------------------------------------------------------------------------
// Packs

fn quote(label: &str) -> String {
    format!("{label:?}")
}

fn parse_header(line: &str, lineno: usize) -> Result<(String, String), RuleError> {
    let syntax = |message: &str| RuleError::Syntax {
        line: lineno,
        col: 1,
        message: message.to_owned(),
    };
    let rest = line.strip_prefix("rule").unwrap_or_default().trim();
    let (id, label) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Err(syntax("expected `rule <ID> \"<label>\"`"));
    }
    let label = label.trim();
    let label = if label.is_empty() {
        String::new()
    } else {
        match lex(label, lineno)?.as_slice() {
            [Spanned { tok: Tok::Str(s), .. }] => s.clone(),
            _ => return Err(syntax("rule label must be a quoted string")),
        }
    };
    Ok((id.to_owned(), label))
}

/// Parses a rule-pack file:
///
/// ```text
/// pack cp_core 1
/// # comment
/// rule CP_0001 "Gray occluded vulnerable road user"
/// l4_d:Vulnerable_Road_User(?v) ^ ... -> sqwrl:select(?v)
/// ```
///
/// Rules are separated by blank lines or by the next `rule` header.
pub fn parse_pack(text: &str, tbox: &TBox) -> Result<RulePack, RuleError> {
    let mut id = "pack".to_owned();
    let mut version = "0".to_owned();
    let mut rules: Vec<Rule> = Vec::new();
    let mut current: Option<(String, String, usize, String)> = None;

    let finish = |current: &mut Option<(String, String, usize, String)>, rules: &mut Vec<Rule>| -> Result<(), RuleError> {
        if let Some((rid, label, first, body)) = current.take() {
            if rules.iter().any(|r| r.id == rid) {
                return Err(RuleError::DuplicateRuleId(rid));
            }
            let (b, h) = parse_at(&body, tbox, first).map_err(|e| RuleError::InRule {
                id: rid.clone(),
                source: Box::new(e),
            })?;
            rules.push(Rule {
                id: rid,
                label,
                body: b,
                head: h,
            });
        }
        Ok(())
    };

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.starts_with('#') {
            continue;
        }
        if trimmed.is_empty() {
            finish(&mut current, &mut rules)?;
            continue;
        }
        let keyword = trimmed.split_whitespace().next().unwrap_or_default();
        if keyword == "pack" && current.is_none() && rules.is_empty() {
            let parts: Vec<&str> = trimmed.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(RuleError::Syntax {
                    line: lineno,
                    col: 1,
                    message: "expected `pack <id> <version>`".into(),
                });
            }
            id = parts[1].to_owned();
            version = parts[2].to_owned();
        } else if keyword == "rule" {
            finish(&mut current, &mut rules)?;
            let (rid, label) = parse_header(trimmed, lineno)?;
            current = Some((rid, label, lineno + 1, String::new()));
        } else {
            match current.as_mut() {
                Some((_, _, _, body)) => {
                    body.push_str(line);
                    body.push('\n');
                }
                None => {
                    return Err(RuleError::Syntax {
                        line: lineno,
                        col: 1,
                        message: "rule text outside a `rule` block".into(),
                    })
                }
            }
        }
    }
    finish(&mut current, &mut rules)?;
    Ok(RulePack { id, version, rules })
}

pub fn format_pack(pack: &RulePack) -> String {
    let mut out = format!("pack {} {}\n", pack.id, pack.version);
    for rule in &pack.rules {
        out.push('\n');
        out.push_str(&format!("rule {} {}\n", rule.id, quote(&rule.label)));
        out.push_str(&format_rule(rule));
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Lint

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LintCode {
    DomainMismatch,
    RangeMismatch,
    UnusedVariable,
    IncompatibleComparison,
    LiteralOutOfRange,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: LintCode,
    /// Index into the body, when the finding is tied to one atom.
    pub atom: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Info => "info",
            Severity::Warning => "warning",
        };
        match self.atom {
            Some(i) => write!(f, "{sev}: atom {}: {}", i + 1, self.message),
            None => write!(f, "{sev}: {}", self.message),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ValueKind {
    Number,
    Boolean,
    String,
    Token,
}

fn value_kind_of(v: &DataValue) -> ValueKind {
    match v {
        DataValue::Integer(_) | DataValue::Decimal(_) => ValueKind::Number,
        DataValue::Boolean(_) => ValueKind::Boolean,
        DataValue::String(_) => ValueKind::String,
        DataValue::Enum(_) => ValueKind::Token,
    }
}

fn datatype_kind(dt: &Datatype) -> ValueKind {
    match dt {
        Datatype::Integer | Datatype::Decimal => ValueKind::Number,
        Datatype::Boolean => ValueKind::Boolean,
        Datatype::String => ValueKind::String,
        Datatype::Enum(_) => ValueKind::Token,
    }
}

/// Static checks beyond parsing: class constraints that contradict a role's
/// declared domain or range, variables used once, literal values outside a
/// role's range, and comparisons between unrelated datatypes.
pub fn lint_rule(rule: &Rule, tbox: &TBox) -> Vec<Diagnostic> {
    let closure = subsumption_closure(tbox);
    let mut out = Vec::new();

    let mut typed: BTreeMap<&str, BTreeSet<&QName>> = BTreeMap::new();
    for atom in &rule.body {
        if let Atom::Class { concept, arg: Term::Var(v) } = atom {
            typed.entry(v).or_default().insert(concept);
        }
    }
    let check_bound = |out: &mut Vec<Diagnostic>, i: usize, v: &str, bound: &QName, role: &QName, code: LintCode| {
        for c in typed.get(v).into_iter().flatten() {
            if !closure.compatible(c, bound) {
                let what = if code == LintCode::DomainMismatch { "domain" } else { "range" };
                out.push(Diagnostic {
                    severity: Severity::Warning,
                    code,
                    atom: Some(i),
                    message: format!("?{v} is typed {c}, outside the {what} {bound} of {role}"),
                });
            }
        }
    };

    let mut value_kinds: BTreeMap<&str, ValueKind> = BTreeMap::new();
    for (i, atom) in rule.body.iter().enumerate() {
        let (role, subject, second) = match atom {
            Atom::ObjectProp { role, subject, object } => (role, subject, object),
            Atom::DataProp { role, subject, value } => (role, subject, value),
            _ => continue,
        };
        let Some(def) = tbox.role(role) else { continue };
        if let (Some(d), Term::Var(v)) = (&def.domain, subject) {
            check_bound(&mut out, i, v, d, role, LintCode::DomainMismatch);
        }
        match (&def.range, second) {
            (Some(RoleRange::Concept(r)), Term::Var(v)) => {
                check_bound(&mut out, i, v, r, role, LintCode::RangeMismatch)
            }
            (Some(RoleRange::Datatype(dt)), Term::Var(v)) => {
                value_kinds.insert(v, datatype_kind(dt));
            }
            (Some(RoleRange::Datatype(dt)), Term::Literal(lit)) if !dt.admits(lit) => out.push(Diagnostic {
                severity: Severity::Warning,
                code: LintCode::LiteralOutOfRange,
                atom: Some(i),
                message: format!("{lit} is not a value of {role}'s range {dt}"),
            }),
            _ => {}
        }
    }

    for (i, atom) in rule.body.iter().enumerate() {
        let Atom::Builtin { op, left, right } = atom else { continue };
        let kind = |t: &Term| match t {
            Term::Var(v) => value_kinds.get(v.as_str()).copied(),
            Term::Literal(l) => Some(value_kind_of(l)),
            Term::Individual(_) => Some(ValueKind::Token),
        };
        let (a, b) = (kind(left), kind(right));
        let mismatch = matches!((a, b), (Some(x), Some(y)) if x != y);
        let unordered = op.is_ordering() && [a, b].iter().any(|k| matches!(k, Some(k) if *k != ValueKind::Number));
        if mismatch || unordered {
            out.push(Diagnostic {
                severity: Severity::Warning,
                code: LintCode::IncompatibleComparison,
                atom: Some(i),
                message: format!("swrb:{} compares {left} with {right}, which have incompatible datatypes", op.name()),
            });
        }
    }

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for atom in &rule.body {
        for v in atom.variables() {
            *counts.entry(v).or_default() += 1;
        }
    }
    let head = rule.head_variables();
    for (v, n) in counts {
        if n == 1 && !head.contains(v) {
            out.push(Diagnostic {
                severity: Severity::Info,
                code: LintCode::UnusedVariable,
                atom: None,
                message: format!("unused variable ?{v}: it occurs once and takes part in no join"),
            });
        }
    }
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tbox() -> TBox {
        TBox::shipped()
    }

    const CP_0004: &str = "l4_d:Passenger_Car(?car) ∧ phys:no_plate(?car, ?p) ∧ swrb:equal(?p, 1) ∧ \
        phys:has_distance(?car, ?distance) ∧ swrb:lessThan(?distance, 50.0) → sqwrl:select(?car)";

    #[test]
    fn parses_table_rule() {
        let r = parse_rule(CP_0004, &tbox()).unwrap();
        assert_eq!(r.body.len(), 5);
        assert_eq!(r.head, vec![Atom::Select(vec!["car".into()])]);
        assert!(matches!(&r.body[1], Atom::DataProp { .. }));
        assert_eq!(
            r.body[4],
            Atom::Builtin {
                op: BuiltinOp::LessThan,
                left: Term::Var("distance".into()),
                right: Term::Literal(DataValue::Decimal(50.0)),
            }
        );
    }

    #[test]
    fn dangling_conjunction_before_arrow() {
        let text = "l4_d:Vehicle_Wheel(?w) ∧ phys:is_independent(?w, 1) ∧ phys:is_near(?w, ?l) ∧ \
            l1_c:Driveable_Lane(?l) ∧ → sqwrl:select(?w)";
        let r = parse_rule(text, &tbox()).unwrap();
        assert_eq!(r.body.len(), 4);
    }

    #[test]
    fn arrowless_select_form() {
        let text = "l4_d:Passenger_Car(?c) ∧ phys:no_plate(?c,?p) ∧ swrb:equal(?p, 1) ∧ sqwrl:select(?c)";
        let r = parse_rule(text, &tbox()).unwrap();
        assert_eq!(r.body.len(), 3);
        assert_eq!(r.select_variables(), vec!["c"]);
    }

    #[test]
    fn phvs_alias() {
        let r = parse_rule("l4_d:Pedestrian(?v) ^ phys:has_color(?v, phvs:Gray) -> sqwrl:select(?v)", &tbox()).unwrap();
        assert_eq!(
            r.body[1],
            Atom::DataProp {
                role: QName::parse("phys:has_color").unwrap(),
                subject: Term::Var("v".into()),
                value: Term::Literal(DataValue::Enum(QName::parse("phys:Gray").unwrap())),
            }
        );
    }

    #[test]
    fn unsafe_rule_lists_head_only_vars() {
        assert_eq!(
            parse_rule("l4_d:Bicycle(?b) -> sqwrl:select(?x)", &tbox()),
            Err(RuleError::UnsafeRule { vars: vec!["x".into()] })
        );
    }

    #[test]
    fn errors_carry_positions() {
        match parse_rule("l4_d:Bicycle(?b) ^\n  l4_d:Unicycle(?b) -> sqwrl:select(?b)", &tbox()) {
            Err(RuleError::UnknownName { line: 2, col: 3, name }) => assert_eq!(name, "l4_d:Unicycle"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_rule("l4_d:Bicycle(?b ^ x", &tbox()),
            Err(RuleError::Syntax { line: 1, col: 17, .. })
        ));
        assert!(matches!(
            parse_rule("l4_d:Bicycle(?b) -> swrb:lessThan(?b, 1)", &tbox()),
            Err(RuleError::InvalidAtom { .. })
        ));
        assert_eq!(parse_rule("  # nothing\n", &tbox()), Err(RuleError::EmptyBody));
    }

    #[test]
    fn format_round_trips() {
        let r = parse_rule(CP_0004, &tbox()).unwrap();
        let text = format_rule(&r);
        assert!(text.contains("swrb:lessThan(?distance, 50.0)"));
        assert!(!text.contains('\n'));
        assert_eq!(parse_rule(&text, &tbox()).unwrap(), r);
        let single = parse_rule("l4_d:Bicycle(?b) -> sqwrl:select(?b)", &tbox()).unwrap();
        assert_eq!(format_rule(&single), "l4_d:Bicycle(?b) -> sqwrl:select(?b)");
    }

    #[test]
    fn lint_domain_and_unused() {
        let t = tbox();
        let r = parse_rule("l4_d:Bicycle(?x) ^ phys:no_plate(?x, 1) -> sqwrl:select(?x)", &t).unwrap();
        let d = lint_rule(&r, &t);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, LintCode::DomainMismatch);

        let r = parse_rule("l4_d:Bicycle(?b) ^ phys:is_near(?b, ?y) -> sqwrl:select(?b)", &t).unwrap();
        let d = lint_rule(&r, &t);
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].code, d[0].severity), (LintCode::UnusedVariable, Severity::Info));

        let r = parse_rule(
            "l4_d:Pedestrian(?v) ^ perc:has_high_occlusion(?v, ?h) ^ swrb:lessThan(?h, 0.5) -> sqwrl:select(?v)",
            &t,
        )
        .unwrap();
        assert_eq!(lint_rule(&r, &t)[0].code, LintCode::IncompatibleComparison);
    }

    #[test]
    fn shipped_pack_is_clean() {
        let t = tbox();
        let pack = RulePack::shipped(&t);
        let ids: Vec<&str> = pack.rules.iter().map(|r| r.id.as_str()).collect();
        for id in ["CP_0001", "CP_0002", "CP_0003", "CP_0004", "CP_0005", "CP_ADV_SIGN", "CP_WHEEL_PROP", "CP_NO_LANES"] {
            assert!(ids.contains(&id), "{id} missing");
        }
        for r in &pack.rules {
            assert_eq!(lint_rule(r, &t), vec![], "{}", r.id);
        }
        let again = parse_pack(&format_pack(&pack), &t).unwrap();
        assert_eq!(again, pack);
    }

    #[test]
    fn pack_errors() {
        let t = tbox();
        let dup = "rule A \"a\"\nl4_d:Bicycle(?b) -> sqwrl:select(?b)\n\nrule A \"b\"\nl4_d:Bicycle(?b) -> sqwrl:select(?b)\n";
        assert_eq!(parse_pack(dup, &t), Err(RuleError::DuplicateRuleId("A".into())));
        let bad = "rule A \"a\"\nl4_d:Bicycle(?b) ->\n";
        match parse_pack(bad, &t) {
            Err(RuleError::InRule { id, source }) => {
                assert_eq!(id, "A");
                assert!(matches!(*source, RuleError::Syntax { line: 2, .. }));
            }
            other => panic!("{other:?}"),
        }
    }
}
