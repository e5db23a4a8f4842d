use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::Serialize;

use super::knowledge::KnowledgeSet;
use super::spec::{instantiate, ProtocolSpec, Scenario};
use super::term::{nonce, xor, Term, Width};
use crate::error::{Error, Result};

pub const DEFAULT_DEPTH: usize = 8;
pub const DEFAULT_MAX_STATES: usize = 200_000;
pub const MAX_SESSIONS: usize = 3;
/// Intruder-chosen values for a bare variable are drawn from known terms
/// and XORs of up to this many known nonces.
pub const XOR_ARITY: usize = 3;
/// Name of the intruder's own nonce.
pub const INTRUDER_NONCE: &str = "NI";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchConfig {
    pub depth: usize,
    pub max_states: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            depth: DEFAULT_DEPTH,
            max_states: DEFAULT_MAX_STATES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceStep {
    Send {
        session: u32,
        role: String,
        msg: u32,
        fields: Vec<Term>,
    },
    Receive {
        session: u32,
        role: String,
        msg: u32,
        fields: Vec<Term>,
        /// Exactly what the partner in the same session sent.
        honest: bool,
    },
    Running {
        session: u32,
        role: String,
        goal: String,
        id: Term,
        values: Vec<Term>,
    },
    Commit {
        session: u32,
        role: String,
        goal: String,
        id: Term,
        values: Vec<Term>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Secrecy {
        session: u32,
        secret: Term,
    },
    Agreement {
        session: u32,
        role: String,
        goal: String,
        id: Term,
        values: Vec<Term>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttackTrace {
    pub protocol: String,
    pub scenario: String,
    pub steps: Vec<TraceStep>,
    pub violation: Violation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SearchResult {
    pub protocol: String,
    pub scenario: String,
    pub depth: usize,
    pub trace: Option<AttackTrace>,
    /// A `None` trace with this set is not a safety claim.
    pub incomplete: bool,
    pub states: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Action {
    Send(usize),
    Recv(usize),
}

#[derive(Debug, Clone)]
struct Inst {
    session: usize,
    role: String,
    pc: usize,
    bindings: BTreeMap<String, Term>,
}

type WitnessKey = (String, Term, Vec<Term>);

#[derive(Debug, Clone)]
struct State {
    insts: Vec<Inst>,
    knowledge: KnowledgeSet,
    steps: Vec<TraceStep>,
    runnings: BTreeMap<WitnessKey, usize>,
    commits: BTreeMap<WitnessKey, usize>,
}

type MemoKey = Vec<(usize, Vec<(String, Term)>)>;

struct Searcher<'a> {
    spec: &'a ProtocolSpec,
    scenario: &'a Scenario,
    cfg: SearchConfig,
    programs: BTreeMap<String, Vec<Action>>,
    visited: HashSet<MemoKey>,
    incomplete: bool,
    secrets: Vec<(u32, Term)>,
}

/// Bounded search for a secrecy or injective-agreement violation. Honest
/// roles send as soon as they can; the intruder picks what each receive
/// gets from what it can derive.
pub fn search_attacks(
    spec: &ProtocolSpec,
    scenario: &Scenario,
    cfg: SearchConfig,
) -> Result<SearchResult> {
    if scenario.sessions.is_empty() || scenario.sessions.len() > MAX_SESSIONS {
        return Err(Error::Precondition(format!(
            "scenarios have 1 to {MAX_SESSIONS} sessions, got {}",
            scenario.sessions.len()
        )));
    }
    let programs = spec
        .roles
        .iter()
        .map(|r| {
            let prog = spec
                .messages
                .iter()
                .enumerate()
                .filter_map(|(i, m)| {
                    if m.from == *r {
                        Some(Action::Send(i))
                    } else if m.to == *r {
                        Some(Action::Recv(i))
                    } else {
                        None
                    }
                })
                .collect();
            (r.clone(), prog)
        })
        .collect();

    let mut secrets = Vec::new();
    for s in scenario
        .sessions
        .iter()
        .filter(|s| s.intruder_roles.is_empty())
    {
        for name in &spec.secrets {
            if let Some(t) = s.atom_instance(spec, name) {
                if !secrets.iter().any(|(_, x)| *x == t) {
                    secrets.push((s.index, t));
                }
            }
        }
    }

    let mut knowledge = KnowledgeSet::new();
    let mut insts = Vec::new();
    for w in spec.nonce_widths() {
        knowledge.insert(nonce(INTRUDER_NONCE, 0, w));
    }
    for (si, s) in scenario.sessions.iter().enumerate() {
        for role in &spec.roles {
            if s.is_honest(role) {
                let bindings = spec
                    .nonces
                    .iter()
                    .filter(|n| n.owner == *role)
                    .map(|n| (n.name.clone(), nonce(n.name.clone(), s.index, n.width)))
                    .collect();
                insts.push(Inst {
                    session: si,
                    role: role.clone(),
                    pc: 0,
                    bindings,
                });
            } else {
                for a in spec.atoms.iter().filter(|a| a.known_by.contains(role)) {
                    knowledge.extend(s.atom_instance(spec, &a.name));
                }
            }
        }
    }

    let mut searcher = Searcher {
        spec,
        scenario,
        cfg,
        programs,
        visited: HashSet::new(),
        incomplete: false,
        secrets,
    };
    let state = State {
        insts,
        knowledge,
        steps: Vec::new(),
        runnings: BTreeMap::new(),
        commits: BTreeMap::new(),
    };
    let trace = searcher.explore(state);
    Ok(SearchResult {
        protocol: spec.name.clone(),
        scenario: scenario.name.clone(),
        depth: cfg.depth,
        trace,
        incomplete: searcher.incomplete,
        states: searcher.visited.len(),
    })
}

impl Searcher<'_> {
    fn next_action(&self, inst: &Inst) -> Option<Action> {
        self.programs[&inst.role].get(inst.pc).copied()
    }

    fn trace(&self, st: State, violation: Violation) -> AttackTrace {
        AttackTrace {
            protocol: self.spec.name.clone(),
            scenario: self.scenario.name.clone(),
            steps: st.steps,
            violation,
        }
    }

    fn explore(&mut self, mut st: State) -> Option<AttackTrace> {
        if self.visited.len() >= self.cfg.max_states {
            self.incomplete = true;
            return None;
        }
        // Sends never hurt the sender's peers, so take them eagerly.
        let mut progressed = true;
        while progressed {
            progressed = false;
            for i in 0..st.insts.len() {
                while let Some(Action::Send(m)) = self.next_action(&st.insts[i]) {
                    let inst = &st.insts[i];
                    let session = &self.scenario.sessions[inst.session];
                    let fields: Vec<Term> = self.spec.messages[m]
                        .fields
                        .iter()
                        .map(|f| instantiate(self.spec, session, f, &inst.bindings))
                        .collect();
                    st.knowledge.extend(fields.clone());
                    st.steps.push(TraceStep::Send {
                        session: session.index,
                        role: inst.role.clone(),
                        msg: m as u32 + 1,
                        fields,
                    });
                    st.insts[i].pc += 1;
                    if let Some(v) = self.witness(&mut st, i, m) {
                        return Some(self.trace(st, v));
                    }
                    progressed = true;
                }
            }
        }

        let key: MemoKey = st
            .insts
            .iter()
            .map(|i| {
                (
                    i.pc,
                    i.bindings
                        .iter()
                        .map(|(k, v)| (k.clone(), v.clone()))
                        .collect(),
                )
            })
            .collect();
        if !self.visited.insert(key) {
            return None;
        }

        let closed = st.knowledge.close(self.cfg.depth);
        if closed.is_incomplete() {
            self.incomplete = true;
        }
        for (session, secret) in &self.secrets {
            if closed.derive(secret, self.cfg.depth) {
                let v = Violation::Secrecy {
                    session: *session,
                    secret: secret.clone(),
                };
                return Some(self.trace(st, v));
            }
        }

        for i in 0..st.insts.len() {
            let Some(Action::Recv(m)) = self.next_action(&st.insts[i]) else {
                continue;
            };
            for (bindings, fields) in self.receive_options(&st, i, m, &closed) {
                let mut next = st.clone();
                let session = self.scenario.sessions[next.insts[i].session].index;
                let honest = next.steps.iter().any(|s| {
                    matches!(s, TraceStep::Send { session: ss, msg, fields: f, .. }
                        if *ss == session && *msg == m as u32 + 1 && *f == fields)
                });
                next.insts[i].bindings = bindings;
                next.insts[i].pc += 1;
                next.steps.push(TraceStep::Receive {
                    session,
                    role: next.insts[i].role.clone(),
                    msg: m as u32 + 1,
                    fields,
                    honest,
                });
                if let Some(v) = self.witness(&mut next, i, m) {
                    return Some(self.trace(next, v));
                }
                if let Some(t) = self.explore(next) {
                    return Some(t);
                }
                if self.visited.len() >= self.cfg.max_states {
                    self.incomplete = true;
                    return None;
                }
            }
        }
        None
    }

    /// Every way the intruder can satisfy instance `i` receiving message
    /// `m`: new bindings plus the fields delivered.
    fn receive_options(
        &self,
        st: &State,
        i: usize,
        m: usize,
        closed: &KnowledgeSet,
    ) -> Vec<(BTreeMap<String, Term>, Vec<Term>)> {
        let inst = &st.insts[i];
        let session = &self.scenario.sessions[inst.session];
        let sent: Option<&Vec<Term>> = st.steps.iter().find_map(|s| match s {
            TraceStep::Send {
                session: ss,
                msg,
                fields,
                ..
            } if *ss == session.index && *msg == m as u32 + 1 => Some(fields),
            _ => None,
        });
        let mut partial = vec![(inst.bindings.clone(), Vec::new())];
        for (j, f) in self.spec.messages[m].fields.iter().enumerate() {
            let mut next = Vec::new();
            for (b, got) in partial {
                match f {
                    Term::Var { name, width } if !b.contains_key(name) => {
                        let hint = sent.and_then(|s| s.get(j));
                        for c in self.candidates(closed, *width, hint) {
                            let mut b2 = b.clone();
                            b2.insert(name.clone(), c.clone());
                            let mut g2 = got.clone();
                            g2.push(c);
                            next.push((b2, g2));
                        }
                    }
                    _ => {
                        let t = instantiate(self.spec, session, f, &b);
                        if closed.derive(&t, self.cfg.depth) {
                            let mut g2 = got;
                            g2.push(t);
                            next.push((b, g2));
                        }
                    }
                }
            }
            partial = next;
        }
        partial
    }

    /// Known terms of the right width plus XORs of known nonces; the
    /// partner's honest value first.
    fn candidates(&self, closed: &KnowledgeSet, width: Width, hint: Option<&Term>) -> Vec<Term> {
        let mut pool: BTreeSet<Term> = closed
            .terms()
            .filter(|t| t.width() == width)
            .cloned()
            .collect();
        let nonces: Vec<Term> = pool
            .iter()
            .filter(|t| matches!(t, Term::Nonce { .. }))
            .cloned()
            .collect();
        for a in 0..nonces.len() {
            for b in a + 1..nonces.len() {
                pool.insert(xor([nonces[a].clone(), nonces[b].clone()]));
                if XOR_ARITY >= 3 {
                    for c in b + 1..nonces.len() {
                        pool.insert(xor([
                            nonces[a].clone(),
                            nonces[b].clone(),
                            nonces[c].clone(),
                        ]));
                    }
                }
            }
        }
        let mut out = Vec::with_capacity(pool.len());
        if let Some(h) = hint {
            if pool.remove(h) {
                out.push(h.clone());
            }
        }
        out.extend(pool);
        out
    }

    /// Records running/commit events for instance `i` finishing message
    /// `m`; returns a violation if a commit has no unused matching run.
    fn witness(&self, st: &mut State, i: usize, m: usize) -> Option<Violation> {
        let inst = &st.insts[i];
        let session = &self.scenario.sessions[inst.session];
        let msg = m as u32 + 1;
        let id = self
            .spec
            .identity
            .as_deref()
            .and_then(|n| session.atom_instance(self.spec, n))
            .unwrap_or(Term::Zero(0));
        let mut violation = None;
        let mut new_steps = Vec::new();
        for a in &self.spec.agreements {
            let values: Vec<Term> = a
                .values
                .iter()
                .map(|v| {
                    inst.bindings
                        .get(v)
                        .cloned()
                        .or_else(|| session.atom_instance(self.spec, v))
                        .unwrap_or(Term::Zero(0))
                })
                .collect();
            let key = (a.goal.clone(), id.clone(), values.clone());
            if a.runner == inst.role && a.runner_msg == msg {
                *st.runnings.entry(key.clone()).or_default() += 1;
                new_steps.push(TraceStep::Running {
                    session: session.index,
                    role: inst.role.clone(),
                    goal: a.goal.clone(),
                    id: id.clone(),
                    values: values.clone(),
                });
            }
            if a.committer == inst.role && a.committer_msg == msg {
                new_steps.push(TraceStep::Commit {
                    session: session.index,
                    role: inst.role.clone(),
                    goal: a.goal.clone(),
                    id: id.clone(),
                    values: values.clone(),
                });
                if session.is_honest(&a.runner) {
                    let c = st.commits.entry(key.clone()).or_default();
                    *c += 1;
                    if *c > st.runnings.get(&key).copied().unwrap_or(0) && violation.is_none() {
                        violation = Some(Violation::Agreement {
                            session: session.index,
                            role: inst.role.clone(),
                            goal: a.goal.clone(),
                            id: id.clone(),
                            values,
                        });
                    }
                }
            }
        }
        st.steps.extend(new_steps);
        violation
    }
}

#[cfg(test)]
mod tests {
    use super::super::spec::{corpus_spec, SessionSpec};
    use super::*;

    fn run(name: &str, sessions: usize) -> SearchResult {
        let spec = corpus_spec(name).unwrap();
        let scenario = Scenario::for_sessions(&spec, sessions).unwrap();
        search_attacks(&spec, &scenario, SearchConfig::default()).unwrap()
    }

    #[test]
    fn proposed_two_sessions_safe() {
        let r = run("proposed", 2);
        assert!(r.trace.is_none(), "{:?}", r.trace);
        assert!(!r.incomplete);
    }

    #[test]
    fn proposed_three_sessions_safe() {
        let r = run("proposed", 3);
        assert!(r.trace.is_none(), "{:?}", r.trace);
        assert!(!r.incomplete);
    }

    #[test]
    fn rhls_replay_found() {
        let r = run("rhls", 2);
        let t = r.trace.expect("replay trace");
        assert!(matches!(t.violation, Violation::Agreement { ref goal, .. } if goal == "tag_auth"));
        // The violating receive reuses fields sent in the other session.
        let Some(TraceStep::Receive { honest, .. }) = t
            .steps
            .iter()
            .rev()
            .find(|s| matches!(s, TraceStep::Receive { .. }))
        else {
            panic!("no receive");
        };
        assert!(!honest);
    }

    #[test]
    fn ch_algebraic_replay_found() {
        let t = run("ch", 2).trace.expect("trace");
        let forged = t
            .steps
            .iter()
            .rev()
            .find_map(|s| match s {
                TraceStep::Receive {
                    fields,
                    honest: false,
                    ..
                } => Some(fields[0].clone()),
                _ => None,
            })
            .unwrap();
        assert!(
            matches!(forged, Term::Xor(ref ts) if ts.len() == 3),
            "{forged}"
        );
    }

    #[test]
    fn too_many_sessions_rejected() {
        let spec = corpus_spec("rhls").unwrap();
        let s = Scenario {
            name: "big".into(),
            sessions: (1..=4)
                .map(|index| SessionSpec {
                    index,
                    intruder_roles: vec![],
                    atom_suffix: String::new(),
                })
                .collect(),
        };
        assert!(search_attacks(&spec, &s, SearchConfig::default()).is_err());
    }

    #[test]
    fn tiny_budget_is_incomplete() {
        let spec = corpus_spec("proposed").unwrap();
        let s = Scenario::two_session_replay();
        let r = search_attacks(
            &spec,
            &s,
            SearchConfig {
                depth: 8,
                max_states: 3,
            },
        )
        .unwrap();
        assert!(r.trace.is_none() && r.incomplete);
    }

    #[test]
    fn leaky_protocol_loses_secrecy() {
        let src = "protocol leak\nroles A B\nhash h 2\natom K 2 A B\natom S 2 A B\nnonce N 2 A\n\
                   msg 1 A -> B : N, xor(K, N)\nmsg 2 B -> A : xor(S, K)\nsecret S\n";
        let spec = ProtocolSpec::parse(src).unwrap();
        let r = search_attacks(
            &spec,
            &Scenario::two_session_replay(),
            SearchConfig::default(),
        )
        .unwrap();
        assert!(matches!(
            r.trace.unwrap().violation,
            Violation::Secrecy { .. }
        ));
    }
}
