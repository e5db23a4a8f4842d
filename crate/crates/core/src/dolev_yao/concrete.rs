//! Replays a symbolic attack trace against an executable deployment.

use std::collections::BTreeMap;

use serde::Serialize;

use super::search::{AttackTrace, TraceStep, Violation, INTRUDER_NONCE};
use super::spec::{ProtocolSpec, Scenario};
use super::term::Term;
use crate::adversary::{fresh_deployment, ScriptedAdversary, HONEST_CAPTURE};
use crate::channel::{Channel, Direction, InFlight, Link, StepLabel, Transcript, Verdict};
use crate::error::{Error, Result};
use crate::primitives::{BitString, Rng, SystemParams};
use crate::registry::Capture;

#[derive(Debug, Clone, Serialize)]
pub struct CrossCheck {
    pub protocol: String,
    pub reproduced: bool,
    /// Why the trace could not be replayed, if it could not.
    pub reason: Option<String>,
    pub agreement_violations: usize,
    #[serde(skip)]
    pub transcript: Transcript,
}

/// Where a symbolic term was observed: `session == None` is the attacked
/// session, whose number is only known at interception time.
#[derive(Debug, Clone)]
struct Source {
    term: Term,
    session: Option<u32>,
    step: StepLabel,
    field: usize,
}

struct Evaluator {
    table: Vec<Source>,
    half: usize,
    rng: Rng,
    /// One intruder nonce per width, drawn on first use.
    own_nonces: BTreeMap<u32, BitString>,
}

impl Evaluator {
    fn lookup(&self, t: &Term, m: &InFlight<'_>, tr: &Transcript) -> Option<BitString> {
        let s = self.table.iter().find(|s| s.term == *t)?;
        let payload = match s.session {
            None if s.step == m.step => m.payload?.to_vec(),
            session => {
                let e = tr.find(session.unwrap_or(m.session), s.step)?;
                e.intercepted.clone().unwrap_or_else(|| e.payload.clone())
            }
        };
        payload.get(s.field).cloned()
    }

    fn eval(&mut self, t: &Term, m: &InFlight<'_>, tr: &Transcript) -> Option<BitString> {
        if let Some(b) = self.lookup(t, m, tr) {
            return Some(b);
        }
        match t {
            Term::Zero(w) => Some(BitString::zeros(*w as usize * self.half)),
            Term::Nonce { name, width, .. } if name == INTRUDER_NONCE => {
                let bits = *width as usize * self.half;
                let rng = &mut self.rng;
                Some(
                    self.own_nonces
                        .entry(*width)
                        .or_insert_with(|| BitString::random(bits, rng))
                        .clone(),
                )
            }
            Term::Xor(ts) => {
                let mut acc: Option<BitString> = None;
                for s in ts {
                    let v = self.eval(s, m, tr)?;
                    acc = Some(match acc {
                        None => v,
                        Some(a) => a.xor(&v).ok()?,
                    });
                }
                acc
            }
            _ => None,
        }
    }
}

fn unsupported(spec: &ProtocolSpec, reason: impl Into<String>) -> CrossCheck {
    CrossCheck {
        protocol: spec.name.clone(),
        reproduced: false,
        reason: Some(reason.into()),
        agreement_violations: 0,
        transcript: Transcript::new(spec.name.clone(), 0),
    }
}

/// Runs the other sessions the attack draws on as honest sessions, then
/// drives the attacked session with a scripted adversary that delivers what
/// the trace says each party received, computed from recorded messages.
pub fn replay_concretely(
    spec: &ProtocolSpec,
    scenario: &Scenario,
    trace: &AttackTrace,
    params: &SystemParams,
    rng: &mut Rng,
) -> Result<CrossCheck> {
    let key = spec.concrete.ok_or_else(|| {
        Error::NotExecutable(format!("spec {} names no concrete protocol", spec.name))
    })?;
    let Violation::Agreement {
        session: target,
        role,
        ..
    } = &trace.violation
    else {
        return Ok(unsupported(
            spec,
            "secrecy violations have no concrete replay",
        ));
    };
    let target = *target;
    let tag_role = &spec.roles[0];
    let reader_role = &spec.roles[1];
    let attacks_reader = role == reader_role;
    if !attacks_reader && role != tag_role {
        return Ok(unsupported(
            spec,
            format!("committer {role} is neither endpoint"),
        ));
    }
    let session_of = |i: u32| scenario.sessions.iter().find(|s| s.index == i);
    match session_of(target) {
        Some(s) if s.atom_suffix.is_empty() && s.intruder_roles.is_empty() => {}
        _ => {
            return Ok(unsupported(
                spec,
                "attacked session is not between the honest tag and reader",
            ))
        }
    }

    // What each party of the attacked session received, keyed by step.
    let mut forged: Vec<(StepLabel, Direction, Vec<Term>)> = Vec::new();
    let mut tag_engaged = false;
    for st in &trace.steps {
        if let TraceStep::Receive {
            session,
            role: r,
            msg,
            fields,
            ..
        } = st
        {
            if *session != target {
                continue;
            }
            let Some(step) = spec.messages[*msg as usize - 1].step else {
                return Ok(unsupported(
                    spec,
                    format!("message {msg} has no step label"),
                ));
            };
            let dir = if r == tag_role {
                tag_engaged = true;
                Direction::ReaderToTag
            } else {
                Direction::TagToReader
            };
            forged.push((step, dir, fields.clone()));
        }
    }

    let own: Vec<&Term> = sent_terms(trace, |s, _| s == target).collect();
    let mut needed = Vec::new();
    for t in forged.iter().flat_map(|(_, _, f)| f) {
        if let Err(leaf) = sources(trace, t, &own, &mut needed) {
            return Ok(unsupported(spec, format!("no concrete source for {leaf}")));
        }
    }
    needed.sort_unstable();
    needed.dedup();
    for &i in &needed {
        let clean = session_of(i)
            .is_some_and(|s| s.intruder_roles.is_empty() && s.atom_suffix.is_empty())
            && trace.steps.iter().all(|st| match st {
                TraceStep::Receive {
                    session, honest, ..
                } => *session != i || *honest,
                _ => true,
            });
        if !clean {
            return Ok(unsupported(
                spec,
                format!("session {i} is not an honest run"),
            ));
        }
    }

    let mut d = fresh_deployment(key, params, rng)?;
    let mut ch = Channel::new(key.name(), params.rng_seed);
    let mut table = Vec::new();
    for &s in &needed {
        d.run_session(Some(0), &HONEST_CAPTURE, &mut ch, rng)?;
        record_sends(spec, trace, s, Some(ch.session()), &mut table);
    }
    record_sends(spec, trace, target, None, &mut table);

    let mut ev = Evaluator {
        table,
        half: params.l / 2,
        rng: rng.substream("dy-intruder"),
        own_nonces: BTreeMap::new(),
    };
    let adversary = ScriptedAdversary(move |m: InFlight<'_>, tr: &Transcript| {
        let Some((_, _, fields)) = forged
            .iter()
            .find(|(s, d, _)| *s == m.step && *d == m.direction)
        else {
            return Verdict::Forward;
        };
        let payload: Option<Vec<BitString>> = fields.iter().map(|f| ev.eval(f, &m, tr)).collect();
        match payload {
            Some(p) => Verdict::Replace(p),
            None => Verdict::Block,
        }
    });
    ch.install(Link::TagReader, Box::new(adversary))?;
    let accepted = if attacks_reader {
        let tag = tag_engaged.then_some(0);
        d.run_session(tag, &Capture::Absent, &mut ch, rng)?
            .tag_authenticated
    } else {
        d.tag_probe(0, &mut ch, rng)?
    };
    ch.clear_adversary();
    let violations = ch.agreement_violations().len();
    Ok(CrossCheck {
        protocol: spec.name.clone(),
        reproduced: accepted && violations > 0,
        reason: None,
        agreement_violations: violations,
        transcript: ch.observe().clone(),
    })
}

fn sent_terms<'a>(
    trace: &'a AttackTrace,
    pick: impl Fn(u32, &String) -> bool + 'a,
) -> impl Iterator<Item = &'a Term> {
    trace.steps.iter().flat_map(move |st| match st {
        TraceStep::Send {
            session,
            role,
            fields,
            ..
        } if pick(*session, role) => fields.as_slice(),
        _ => &[],
    })
}

/// Other sessions whose sent messages `t` is assembled from; `Err` names a
/// leaf with no concrete counterpart.
fn sources(
    trace: &AttackTrace,
    t: &Term,
    own: &[&Term],
    out: &mut Vec<u32>,
) -> std::result::Result<(), Term> {
    if own.contains(&t) {
        return Ok(());
    }
    let from = trace.steps.iter().find_map(|st| match st {
        TraceStep::Send {
            session, fields, ..
        } if fields.contains(t) => Some(*session),
        _ => None,
    });
    if let Some(s) = from {
        out.push(s);
        return Ok(());
    }
    match t {
        Term::Zero(_) => Ok(()),
        Term::Nonce { name, .. } if name == INTRUDER_NONCE => Ok(()),
        Term::Xor(ts) => ts.iter().try_for_each(|x| sources(trace, x, own, out)),
        other => Err(other.clone()),
    }
}

fn record_sends(
    spec: &ProtocolSpec,
    trace: &AttackTrace,
    session: u32,
    concrete: Option<u32>,
    table: &mut Vec<Source>,
) {
    for st in &trace.steps {
        let TraceStep::Send {
            session: s,
            msg,
            fields,
            ..
        } = st
        else {
            continue;
        };
        if *s != session {
            continue;
        }
        let Some(step) = spec.messages[*msg as usize - 1].step else {
            continue;
        };
        for (field, term) in fields.iter().enumerate() {
            table.push(Source {
                term: term.clone(),
                session: concrete,
                step,
                field,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::search::{search_attacks, SearchConfig};
    use super::super::spec::corpus_spec;
    use super::*;

    fn check(name: &str) -> CrossCheck {
        let spec = corpus_spec(name).unwrap();
        let scenario = Scenario::two_session_replay();
        let trace = search_attacks(&spec, &scenario, SearchConfig::default())
            .unwrap()
            .trace
            .expect("attack trace");
        let params = SystemParams::default();
        let mut rng = Rng::from_seed(params.rng_seed);
        replay_concretely(&spec, &scenario, &trace, &params, &mut rng).unwrap()
    }

    #[test]
    fn rhls_trace_replays() {
        let c = check("rhls");
        assert!(c.reproduced, "{c:?}");
    }

    #[test]
    fn ch_trace_replays() {
        let c = check("ch");
        assert!(c.reproduced, "{c:?}");
    }
}
