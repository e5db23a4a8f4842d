//! Declarative protocol descriptions for the symbolic engine.
//!
//! One declaration per line, `#` starts a comment:
//!
//! ```text
//! protocol NAME
//! concrete KEY                      # registry protocol for cross-checks
//! roles A B
//! hash NAME WIDTH                   # public function, output width
//! atom NAME WIDTH ROLE...           # long-term value known to ROLEs
//! identity ATOM                     # who agreement goals are about
//! nonce NAME WIDTH OWNER            # fresh per session, made by OWNER
//! let NAME = TERM
//! msg N FROM -> TO [@step] : TERM, TERM...
//! agree GOAL RUNNER N COMMITTER N : VAR...
//! secret ATOM...
//! ```
//!
//! Terms: names, `f(t)` for declared hashes, `xor(t, ...)`, `left(t)`,
//! `right(t)`, and `a . b` for concatenation (left associative). Widths are
//! in half-l units.

use std::collections::BTreeMap;

use super::term::{self, normalize, Term, Width};
use crate::channel::StepLabel;
use crate::error::{Error, Result};
use crate::registry::ProtocolKey;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomDecl {
    pub name: String,
    pub width: Width,
    pub known_by: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NonceDecl {
    pub name: String,
    pub width: Width,
    pub owner: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageSpec {
    pub index: u32,
    pub from: String,
    pub to: String,
    pub step: Option<StepLabel>,
    pub fields: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Agreement {
    pub goal: String,
    pub runner: String,
    pub runner_msg: u32,
    pub committer: String,
    pub committer_msg: u32,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolSpec {
    pub name: String,
    pub concrete: Option<ProtocolKey>,
    pub roles: Vec<String>,
    pub hashes: BTreeMap<String, Width>,
    pub atoms: Vec<AtomDecl>,
    pub identity: Option<String>,
    pub nonces: Vec<NonceDecl>,
    pub messages: Vec<MessageSpec>,
    pub agreements: Vec<Agreement>,
    pub secrets: Vec<String>,
}

pub const PROPOSED_SPEC: &str = include_str!("../../specs/proposed.spec");
pub const RHLS_SPEC: &str = include_str!("../../specs/rhls.spec");
pub const CH_SPEC: &str = include_str!("../../specs/ch.spec");

/// The shipped corpus as `(name, source)`.
pub const CORPUS: [(&str, &str); 3] = [
    ("proposed", PROPOSED_SPEC),
    ("rhls", RHLS_SPEC),
    ("ch", CH_SPEC),
];

pub fn corpus_spec(name: &str) -> Result<ProtocolSpec> {
    let (_, src) = CORPUS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::UnknownProtocol(name.to_string()))?;
    ProtocolSpec::parse(src)
}

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::SpecParse {
        line,
        message: message.into(),
    }
}

impl ProtocolSpec {
    pub fn parse(src: &str) -> Result<Self> {
        let mut spec = ProtocolSpec {
            name: String::new(),
            concrete: None,
            roles: Vec::new(),
            hashes: BTreeMap::new(),
            atoms: Vec::new(),
            identity: None,
            nonces: Vec::new(),
            messages: Vec::new(),
            agreements: Vec::new(),
            secrets: Vec::new(),
        };
        let mut lets: BTreeMap<String, Term> = BTreeMap::new();
        for (i, raw) in src.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (kw, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let words: Vec<&str> = rest.split_whitespace().collect();
            match kw {
                "protocol" => spec.name = one(&words, n)?.to_string(),
                "concrete" => {
                    spec.concrete = Some(
                        ProtocolKey::parse(one(&words, n)?).map_err(|e| err(n, e.to_string()))?,
                    )
                }
                "roles" => spec.roles = words.iter().map(|s| s.to_string()).collect(),
                "hash" => {
                    let [name, w] = words[..] else {
                        return Err(err(n, "expected: hash NAME WIDTH"));
                    };
                    spec.hashes.insert(name.into(), width(w, n)?);
                }
                "atom" => {
                    if words.len() < 2 {
                        return Err(err(n, "expected: atom NAME WIDTH ROLE..."));
                    }
                    spec.check_roles(&words[2..], n)?;
                    spec.atoms.push(AtomDecl {
                        name: words[0].into(),
                        width: width(words[1], n)?,
                        known_by: words[2..].iter().map(|s| s.to_string()).collect(),
                    });
                }
                "identity" => spec.identity = Some(one(&words, n)?.to_string()),
                "nonce" => {
                    let [name, w, owner] = words[..] else {
                        return Err(err(n, "expected: nonce NAME WIDTH OWNER"));
                    };
                    spec.check_roles(&[owner], n)?;
                    spec.nonces.push(NonceDecl {
                        name: name.into(),
                        width: width(w, n)?,
                        owner: owner.into(),
                    });
                }
                "let" => {
                    let (name, body) = rest
                        .split_once('=')
                        .ok_or_else(|| err(n, "expected: let NAME = TERM"))?;
                    let t = TermParser::new(body, &spec, &lets, n)?.parse_all()?;
                    lets.insert(name.trim().to_string(), t);
                }
                "msg" => spec.messages.push(spec.parse_msg(rest, &lets, n)?),
                "agree" => spec.agreements.push(spec.parse_agree(rest, n)?),
                "secret" => {
                    for w in &words {
                        if !spec.atoms.iter().any(|a| a.name == *w) {
                            return Err(err(n, format!("secret {w} is not an atom")));
                        }
                    }
                    spec.secrets.extend(words.iter().map(|s| s.to_string()));
                }
                other => return Err(err(n, format!("unknown declaration {other:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    fn check_roles(&self, roles: &[&str], line: usize) -> Result<()> {
        for r in roles {
            if !self.roles.iter().any(|x| x == r) {
                return Err(err(line, format!("unknown role {r}")));
            }
        }
        Ok(())
    }

    fn parse_msg(
        &self,
        rest: &str,
        lets: &BTreeMap<String, Term>,
        n: usize,
    ) -> Result<MessageSpec> {
        let (head, body) = rest
            .split_once(':')
            .ok_or_else(|| err(n, "missing ':' in msg"))?;
        let head: Vec<&str> = head.split_whitespace().collect();
        let (index, from, to, step) = match head[..] {
            [i, f, "->", t] => (i, f, t, None),
            [i, f, "->", t, s] => {
                let label = s
                    .strip_prefix('@')
                    .and_then(StepLabel::parse)
                    .ok_or_else(|| err(n, format!("bad step label {s}")))?;
                (i, f, t, Some(label))
            }
            _ => return Err(err(n, "expected: msg N FROM -> TO [@step] : FIELDS")),
        };
        self.check_roles(&[from, to], n)?;
        let index: u32 = index.parse().map_err(|_| err(n, "bad message number"))?;
        let mut p = TermParser::new(body, self, lets, n)?;
        let fields = p.parse_fields()?;
        Ok(MessageSpec {
            index,
            from: from.into(),
            to: to.into(),
            step,
            fields,
        })
    }

    fn parse_agree(&self, rest: &str, n: usize) -> Result<Agreement> {
        let (head, vals) = rest
            .split_once(':')
            .ok_or_else(|| err(n, "missing ':' in agree"))?;
        let [goal, runner, rm, committer, cm] = head.split_whitespace().collect::<Vec<_>>()[..]
        else {
            return Err(err(n, "expected: agree GOAL RUNNER N COMMITTER N : VARS"));
        };
        self.check_roles(&[runner, committer], n)?;
        let values: Vec<String> = vals.split_whitespace().map(String::from).collect();
        for v in &values {
            if !self.nonces.iter().any(|x| x.name == *v) && !self.atoms.iter().any(|x| x.name == *v)
            {
                return Err(err(n, format!("unknown agreement value {v}")));
            }
        }
        Ok(Agreement {
            goal: goal.into(),
            runner: runner.into(),
            runner_msg: rm.parse().map_err(|_| err(n, "bad message number"))?,
            committer: committer.into(),
            committer_msg: cm.parse().map_err(|_| err(n, "bad message number"))?,
            values,
        })
    }

    /// Role programs must only send what they can compute, and may only
    /// bind new variables through bare fields.
    fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(err(0, "missing protocol name"));
        }
        if self.roles.len() < 2 {
            return Err(err(0, "need at least two roles"));
        }
        for (i, m) in self.messages.iter().enumerate() {
            if m.index != i as u32 + 1 {
                return Err(err(
                    0,
                    format!("messages must be numbered 1.. in order, got {}", m.index),
                ));
            }
        }
        for role in &self.roles {
            let mut bound: Vec<String> = self
                .nonces
                .iter()
                .filter(|x| x.owner == *role)
                .map(|x| x.name.clone())
                .collect();
            for m in &self.messages {
                if m.from == *role {
                    for f in &m.fields {
                        let mut vs = Vec::new();
                        f.vars(&mut vs);
                        if let Some(v) = vs.iter().find(|v| !bound.contains(v)) {
                            return Err(err(
                                0,
                                format!("role {role} sends unbound {v} in message {}", m.index),
                            ));
                        }
                    }
                } else if m.to == *role {
                    for f in &m.fields {
                        match f {
                            Term::Var { name, .. } if !bound.contains(name) => {
                                bound.push(name.clone())
                            }
                            _ => {
                                let mut vs = Vec::new();
                                f.vars(&mut vs);
                                if let Some(v) = vs.iter().find(|v| !bound.contains(v)) {
                                    return Err(err(0, format!(
                                        "role {role} cannot parse {f}: {v} unbound in message {}", m.index
                                    )));
                                }
                            }
                        }
                    }
                }
            }
            for a in &self.atoms {
                if a.known_by.contains(role) {
                    continue;
                }
                for m in self.messages.iter().filter(|m| m.from == *role) {
                    if m.fields.iter().any(|f| mentions_atom(f, &a.name)) {
                        return Err(err(
                            0,
                            format!("role {role} uses {} without knowing it", a.name),
                        ));
                    }
                }
            }
        }
        for a in &self.agreements {
            for (role, msg) in [(&a.runner, a.runner_msg), (&a.committer, a.committer_msg)] {
                let Some(m) = self.messages.get(msg as usize - 1) else {
                    return Err(err(
                        0,
                        format!("agreement {} refers to missing message {msg}", a.goal),
                    ));
                };
                if m.from != *role && m.to != *role {
                    return Err(err(0, format!("{role} takes no part in message {msg}")));
                }
            }
        }
        Ok(())
    }

    pub fn atom(&self, name: &str) -> Option<&AtomDecl> {
        self.atoms.iter().find(|a| a.name == name)
    }

    pub fn nonce_widths(&self) -> Vec<Width> {
        let mut ws: Vec<Width> = self.nonces.iter().map(|n| n.width).collect();
        ws.sort_unstable();
        ws.dedup();
        ws
    }
}

fn mentions_atom(t: &Term, name: &str) -> bool {
    match t {
        Term::Atom { name: n, .. } => n == name,
        Term::Hash { arg, .. } | Term::Left(arg) | Term::Right(arg) => mentions_atom(arg, name),
        Term::Concat(a, b) => mentions_atom(a, name) || mentions_atom(b, name),
        Term::Xor(ts) => ts.iter().any(|t| mentions_atom(t, name)),
        _ => false,
    }
}

fn one<'a>(words: &[&'a str], line: usize) -> Result<&'a str> {
    match words {
        [w] => Ok(w),
        _ => Err(err(line, "expected exactly one argument")),
    }
}

fn width(s: &str, line: usize) -> Result<Width> {
    match s.parse::<Width>() {
        Ok(w) if w > 0 => Ok(w),
        _ => Err(err(line, format!("bad width {s:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Open,
    Close,
    Comma,
    Dot,
}

struct TermParser<'a> {
    toks: Vec<Tok>,
    pos: usize,
    spec: &'a ProtocolSpec,
    lets: &'a BTreeMap<String, Term>,
    line: usize,
}

impl<'a> TermParser<'a> {
    fn new(
        src: &str,
        spec: &'a ProtocolSpec,
        lets: &'a BTreeMap<String, Term>,
        line: usize,
    ) -> Result<Self> {
        let mut toks = Vec::new();
        let mut chars = src.chars().peekable();
        while let Some(&c) = chars.peek() {
            match c {
                c if c.is_whitespace() => {
                    chars.next();
                }
                '(' | ')' | ',' | '.' => {
                    chars.next();
                    toks.push(match c {
                        '(' => Tok::Open,
                        ')' => Tok::Close,
                        ',' => Tok::Comma,
                        _ => Tok::Dot,
                    });
                }
                c if c.is_alphanumeric() || c == '_' => {
                    let mut s = String::new();
                    while let Some(&c) = chars.peek().filter(|c| c.is_alphanumeric() || **c == '_')
                    {
                        s.push(c);
                        chars.next();
                    }
                    toks.push(Tok::Ident(s));
                }
                c => return Err(err(line, format!("unexpected character {c:?}"))),
            }
        }
        Ok(TermParser {
            toks,
            pos: 0,
            spec,
            lets,
            line,
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn expect(&mut self, t: Tok) -> Result<()> {
        if self.peek() == Some(&t) {
            self.pos += 1;
            Ok(())
        } else {
            Err(err(
                self.line,
                format!("expected {t:?}, found {:?}", self.peek()),
            ))
        }
    }

    fn parse_all(&mut self) -> Result<Term> {
        let t = self.expr()?;
        if self.pos != self.toks.len() {
            return Err(err(self.line, "trailing input"));
        }
        Ok(t)
    }

    fn parse_fields(&mut self) -> Result<Vec<Term>> {
        let mut out = vec![self.expr()?];
        while self.peek() == Some(&Tok::Comma) {
            self.pos += 1;
            out.push(self.expr()?);
        }
        if self.pos != self.toks.len() {
            return Err(err(self.line, "trailing input"));
        }
        Ok(out)
    }

    fn expr(&mut self) -> Result<Term> {
        let mut t = self.primary()?;
        while self.peek() == Some(&Tok::Dot) {
            self.pos += 1;
            let r = self.primary()?;
            t = term::concat(t, r);
        }
        t.well_formed().map_err(|m| err(self.line, m))?;
        Ok(t)
    }

    fn args(&mut self) -> Result<Vec<Term>> {
        self.expect(Tok::Open)?;
        let mut out = vec![self.expr()?];
        while self.peek() == Some(&Tok::Comma) {
            self.pos += 1;
            out.push(self.expr()?);
        }
        self.expect(Tok::Close)?;
        Ok(out)
    }

    fn primary(&mut self) -> Result<Term> {
        let line = self.line;
        match self.toks.get(self.pos).cloned() {
            Some(Tok::Open) => {
                self.pos += 1;
                let t = self.expr()?;
                self.expect(Tok::Close)?;
                Ok(t)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::Open) {
                    let args = self.args()?;
                    let single = |args: Vec<Term>| -> Result<Term> {
                        match <[Term; 1]>::try_from(args) {
                            Ok([t]) => Ok(t),
                            Err(_) => Err(err(line, format!("{name} takes one argument"))),
                        }
                    };
                    let t = match name.as_str() {
                        "xor" => {
                            if args.len() < 2 {
                                return Err(err(line, "xor takes at least two arguments"));
                            }
                            term::xor(args)
                        }
                        "left" => term::left(single(args)?),
                        "right" => term::right(single(args)?),
                        f => match self.spec.hashes.get(f) {
                            Some(&w) => term::hash(f, w, single(args)?),
                            None => return Err(err(line, format!("unknown function {f}"))),
                        },
                    };
                    t.well_formed().map_err(|m| err(line, m))?;
                    return Ok(t);
                }
                if let Some(t) = self.lets.get(&name) {
                    return Ok(t.clone());
                }
                if let Some(a) = self.spec.atom(&name) {
                    return Ok(term::atom(name, a.width));
                }
                if let Some(n) = self.spec.nonces.iter().find(|n| n.name == name) {
                    return Ok(term::var(name, n.width));
                }
                Err(err(line, format!("unknown name {name}")))
            }
            other => Err(err(line, format!("unexpected {other:?}"))),
        }
    }
}

/// One protocol instance in a scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionSpec {
    /// 1-based.
    pub index: u32,
    /// Roles played by the intruder, who then knows that role's atoms.
    pub intruder_roles: Vec<String>,
    /// Appended to atom names: sessions sharing a suffix share long-term
    /// values.
    pub atom_suffix: String,
}

impl SessionSpec {
    pub fn atom_instance(&self, spec: &ProtocolSpec, name: &str) -> Option<Term> {
        spec.atom(name)
            .map(|a| term::atom(format!("{}{}", a.name, self.atom_suffix), a.width))
    }

    pub fn is_honest(&self, role: &str) -> bool {
        !self.intruder_roles.iter().any(|r| r == role)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub sessions: Vec<SessionSpec>,
}

impl Scenario {
    /// Two honest sessions between the same pair.
    pub fn two_session_replay() -> Self {
        Scenario {
            name: "two-session replay".into(),
            sessions: (1..=2)
                .map(|index| SessionSpec {
                    index,
                    intruder_roles: Vec::new(),
                    atom_suffix: String::new(),
                })
                .collect(),
        }
    }

    /// An honest session, a session where the intruder plays the second
    /// role, and one where it plays the first, each with its own long-term
    /// values.
    pub fn three_session_mitm(spec: &ProtocolSpec) -> Self {
        let (first, second) = (spec.roles[0].clone(), spec.roles[1].clone());
        Scenario {
            name: "three-session man-in-the-middle".into(),
            sessions: vec![
                SessionSpec {
                    index: 1,
                    intruder_roles: Vec::new(),
                    atom_suffix: String::new(),
                },
                SessionSpec {
                    index: 2,
                    intruder_roles: vec![second],
                    atom_suffix: format!("_{}i", first.to_lowercase()),
                },
                SessionSpec {
                    index: 3,
                    intruder_roles: vec![first],
                    atom_suffix: format!("_i{}", spec.roles[1].to_lowercase()),
                },
            ],
        }
    }

    pub fn for_sessions(spec: &ProtocolSpec, sessions: usize) -> Result<Self> {
        match sessions {
            2 => Ok(Self::two_session_replay()),
            3 => Ok(Self::three_session_mitm(spec)),
            n => Err(Error::Precondition(format!(
                "scenarios have 2 or 3 sessions, not {n}"
            ))),
        }
    }
}

/// Instantiates a spec term for one session: atoms get the session suffix,
/// variables their bindings.
pub fn instantiate(
    spec: &ProtocolSpec,
    session: &SessionSpec,
    t: &Term,
    bindings: &BTreeMap<String, Term>,
) -> Term {
    normalize(&t.substitute(&|leaf| match leaf {
        Term::Atom { name, .. } => session.atom_instance(spec, name),
        Term::Var { name, .. } => bindings.get(name).cloned(),
        _ => None,
    }))
}
