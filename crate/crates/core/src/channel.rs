//! The simulated network: an insecure tag-reader radio link the adversary
//! controls, and secure reader-server and sensor-server links it cannot touch.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::primitives::BitString;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepLabel {
    /// Reader nonce to the tag.
    Challenge,
    /// Tag's identifying response.
    TagResponse,
    /// Reader forwards the tag response (and its nonce) to the server.
    ForwardResponse,
    /// Server's reader proof to the reader.
    ServerProof,
    /// Reader proof relayed to the tag.
    ReaderProof,
    /// Tag's masked biometric hash.
    BioMessage,
    ForwardBio,
    SensorCapture,
    /// Server's final decision back to the reader.
    Verdict,
}

impl StepLabel {
    pub fn name(self) -> &'static str {
        match self {
            StepLabel::Challenge => "challenge",
            StepLabel::TagResponse => "tag_response",
            StepLabel::ForwardResponse => "forward_response",
            StepLabel::ServerProof => "server_proof",
            StepLabel::ReaderProof => "reader_proof",
            StepLabel::BioMessage => "bio_message",
            StepLabel::ForwardBio => "forward_bio",
            StepLabel::SensorCapture => "sensor_capture",
            StepLabel::Verdict => "verdict",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ALL_STEPS.iter().copied().find(|st| st.name() == s)
    }
}

pub const ALL_STEPS: [StepLabel; 9] = [
    StepLabel::Challenge,
    StepLabel::TagResponse,
    StepLabel::ForwardResponse,
    StepLabel::ServerProof,
    StepLabel::ReaderProof,
    StepLabel::BioMessage,
    StepLabel::ForwardBio,
    StepLabel::SensorCapture,
    StepLabel::Verdict,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    TagToReader,
    ReaderToTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Tag,
    Reader,
    Server,
    Sensor,
    Adversary,
}

impl Party {
    pub fn name(self) -> &'static str {
        match self {
            Party::Tag => "tag",
            Party::Reader => "reader",
            Party::Server => "server",
            Party::Sensor => "sensor",
            Party::Adversary => "adversary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    TagReader,
    ReaderServer,
    SensorServer,
}

impl Link {
    pub fn is_secure(self) -> bool {
        !matches!(self, Link::TagReader)
    }
}

impl Direction {
    fn endpoints(self) -> (Party, Party) {
        match self {
            Direction::TagToReader => (Party::Tag, Party::Reader),
            Direction::ReaderToTag => (Party::Reader, Party::Tag),
        }
    }
}

/// One message on the insecure link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelEvent {
    pub session: u32,
    pub step: StepLabel,
    pub direction: Direction,
    /// `Adversary` when the payload was injected or rewritten in flight.
    pub sender: Party,
    pub payload: Vec<BitString>,
    pub delivered: bool,
    /// The honest payload an adversary replaced, if any.
    pub intercepted: Option<Vec<BitString>>,
}

impl ChannelEvent {
    pub fn receiver(&self) -> Party {
        self.direction.endpoints().1
    }

    pub fn bit_width(&self) -> usize {
        self.payload.iter().map(BitString::width).sum()
    }

    pub fn payload_concat(&self) -> BitString {
        self.payload
            .iter()
            .fold(BitString::empty(), |acc, p| acc.concat(p))
    }
}

#[derive(Serialize)]
struct EventLine<'a> {
    session: u32,
    step: &'a str,
    direction: Direction,
    sender: &'a str,
    receiver: &'a str,
    payload_hex: String,
    bit_width: usize,
    fields: Vec<String>,
    delivered: bool,
}

/// Ordered record of insecure-link events.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Transcript {
    pub protocol: String,
    pub seed: u64,
    events: Vec<ChannelEvent>,
}

impl Transcript {
    pub fn new(protocol: impl Into<String>, seed: u64) -> Self {
        Transcript {
            protocol: protocol.into(),
            seed,
            events: Vec::new(),
        }
    }

    pub fn events(&self) -> &[ChannelEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn session(&self, session: u32) -> impl Iterator<Item = &ChannelEvent> {
        self.events.iter().filter(move |e| e.session == session)
    }

    /// Most recent event of `step` in `session`.
    pub fn find(&self, session: u32, step: StepLabel) -> Option<&ChannelEvent> {
        self.events
            .iter()
            .rev()
            .find(|e| e.session == session && e.step == step)
    }

    /// One JSON object per line, oldest first.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let line = EventLine {
                session: e.session,
                step: e.step.name(),
                direction: e.direction,
                sender: e.sender.name(),
                receiver: e.receiver().name(),
                payload_hex: e.payload_concat().to_hex(),
                bit_width: e.bit_width(),
                fields: e.payload.iter().map(BitString::to_hex).collect(),
                delivered: e.delivered,
            };
            out.push_str(&serde_json::to_string(&line).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    fn push(&mut self, e: ChannelEvent) {
        self.events.push(e);
    }
}

/// A message about to cross the insecure link. `payload` is `None` when the
/// honest sender is absent and only an injection can fill the slot.
#[derive(Debug, Clone, Copy)]
pub struct InFlight<'a> {
    pub session: u32,
    pub step: StepLabel,
    pub direction: Direction,
    pub payload: Option<&'a [BitString]>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Forward,
    Block,
    Replace(Vec<BitString>),
}

/// Dolev-Yao network attacker acting on the insecure link.
pub trait Adversary: Send {
    fn intercept(&mut self, msg: InFlight<'_>, transcript: &Transcript) -> Verdict;
}

type Predicate = Box<dyn Fn(&InFlight<'_>) -> bool + Send>;
type Transform = Box<dyn FnMut(&InFlight<'_>, &[BitString]) -> Option<Vec<BitString>> + Send>;

enum Rule {
    Block(Predicate),
    Modify(Transform),
    Inject {
        session: Option<u32>,
        step: StepLabel,
        payload: Vec<BitString>,
    },
    Custom(Box<dyn Adversary>),
}

/// Which side of an authentication goal a witness event records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    /// Server authenticates the tag.
    TagAuth,
    /// Tag authenticates the reader/server.
    ReaderAuth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WitnessKind {
    /// The authenticated party ran with these values.
    Running,
    /// The verifying party accepted these values.
    Commit,
}

/// Agreement bookkeeping, kept on the secure side of the simulator and
/// never visible to the adversary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    pub session: u32,
    pub goal: Goal,
    pub kind: WitnessKind,
    pub id: BitString,
    pub values: Vec<BitString>,
}

/// A commit without a distinct matching running event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgreementViolation {
    pub goal: Goal,
    pub id: BitString,
    pub values: Vec<BitString>,
    pub commits: usize,
    pub runnings: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecureEvent {
    pub session: u32,
    pub link: Link,
    pub step: StepLabel,
    pub payload: Vec<BitString>,
}

pub struct Channel {
    transcript: Transcript,
    rules: Vec<Rule>,
    session: u32,
    cut_after: Option<StepLabel>,
    cut_active: bool,
    secure_log: Vec<SecureEvent>,
    witnesses: Vec<Witness>,
}

impl fmt::Debug for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Channel")
            .field("session", &self.session)
            .field("events", &self.transcript.len())
            .field("rules", &self.rules.len())
            .finish()
    }
}

impl Channel {
    pub fn new(protocol: impl Into<String>, seed: u64) -> Self {
        Channel {
            transcript: Transcript::new(protocol, seed),
            rules: Vec::new(),
            session: 0,
            cut_after: None,
            cut_active: false,
            secure_log: Vec::new(),
            witnesses: Vec::new(),
        }
    }

    pub fn session(&self) -> u32 {
        self.session
    }

    /// Starts the next session; the first call returns 1.
    pub fn begin_session(&mut self) -> u32 {
        self.session += 1;
        self.cut_active = false;
        self.session
    }

    pub fn observe(&self) -> &Transcript {
        &self.transcript
    }

    pub fn install(&mut self, link: Link, adversary: Box<dyn Adversary>) -> Result<()> {
        if link.is_secure() {
            return Err(Error::AdversaryOnSecureLink(link));
        }
        self.rules.push(Rule::Custom(adversary));
        Ok(())
    }

    pub fn block<F>(&mut self, link: Link, predicate: F) -> Result<()>
    where
        F: Fn(&InFlight<'_>) -> bool + Send + 'static,
    {
        if link.is_secure() {
            return Err(Error::AdversaryOnSecureLink(link));
        }
        self.rules.push(Rule::Block(Box::new(predicate)));
        Ok(())
    }

    /// Rewrites payloads in flight; returning `None` leaves the message as is.
    pub fn modify<F>(&mut self, link: Link, transform: F) -> Result<()>
    where
        F: FnMut(&InFlight<'_>, &[BitString]) -> Option<Vec<BitString>> + Send + 'static,
    {
        if link.is_secure() {
            return Err(Error::AdversaryOnSecureLink(link));
        }
        self.rules.push(Rule::Modify(Box::new(transform)));
        Ok(())
    }

    /// Delivers `payload` at `step` (of `session`, or of every session when
    /// `None`), whether or not an honest sender produced a message there.
    pub fn inject(
        &mut self,
        link: Link,
        session: Option<u32>,
        step: StepLabel,
        payload: Vec<BitString>,
    ) -> Result<()> {
        if link.is_secure() {
            return Err(Error::AdversaryOnSecureLink(link));
        }
        self.rules.push(Rule::Inject {
            session,
            step,
            payload,
        });
        Ok(())
    }

    pub fn clear_adversary(&mut self) {
        self.rules.clear();
    }

    /// Kills the current and later sessions right after `step` completes:
    /// nothing further is delivered on any link until the next session.
    pub fn interrupt_after(&mut self, step: Option<StepLabel>) {
        self.cut_after = step;
    }

    /// Sends over the insecure link. Returns what the receiver gets.
    pub fn transmit(
        &mut self,
        step: StepLabel,
        direction: Direction,
        payload: Option<Vec<BitString>>,
    ) -> Option<Vec<BitString>> {
        if self.cut_active {
            return None;
        }
        let honest = payload.clone();
        let mut current = payload;
        let mut tampered = false;
        let mut blocked = false;
        for rule in &mut self.rules {
            let msg = InFlight {
                session: self.session,
                step,
                direction,
                payload: current.as_deref(),
            };
            let verdict = match rule {
                Rule::Block(pred) => {
                    if current.is_some() && pred(&msg) {
                        Verdict::Block
                    } else {
                        Verdict::Forward
                    }
                }
                Rule::Modify(f) => match current.as_deref() {
                    Some(p) => f(&msg, p).map_or(Verdict::Forward, Verdict::Replace),
                    None => Verdict::Forward,
                },
                Rule::Inject {
                    session,
                    step: s,
                    payload,
                } => {
                    if *s == step && session.is_none_or(|x| x == self.session) {
                        Verdict::Replace(payload.clone())
                    } else {
                        Verdict::Forward
                    }
                }
                Rule::Custom(adv) => adv.intercept(msg, &self.transcript),
            };
            match verdict {
                Verdict::Forward => {}
                Verdict::Block => {
                    blocked = true;
                    break;
                }
                Verdict::Replace(p) => {
                    tampered = current.as_ref() != Some(&p);
                    current = Some(p);
                }
            }
        }
        let payload = current?;
        let (honest_sender, _) = direction.endpoints();
        let sender = if tampered || honest.is_none() {
            Party::Adversary
        } else {
            honest_sender
        };
        self.transcript.push(ChannelEvent {
            session: self.session,
            step,
            direction,
            sender,
            payload: payload.clone(),
            delivered: !blocked,
            intercepted: if tampered { honest } else { None },
        });
        self.after(step);
        if blocked {
            None
        } else {
            Some(payload)
        }
    }

    /// Sends over a secure link: never observed or altered, but still
    /// subject to interruption.
    pub fn send_secure(
        &mut self,
        link: Link,
        step: StepLabel,
        payload: Vec<BitString>,
    ) -> Option<Vec<BitString>> {
        debug_assert!(link.is_secure());
        if self.cut_active {
            return None;
        }
        self.secure_log.push(SecureEvent {
            session: self.session,
            link,
            step,
            payload: payload.clone(),
        });
        self.after(step);
        Some(payload)
    }

    fn after(&mut self, step: StepLabel) {
        if self.cut_after == Some(step) {
            self.cut_active = true;
        }
    }

    pub fn secure_log(&self) -> &[SecureEvent] {
        &self.secure_log
    }

    pub fn witness(&mut self, goal: Goal, kind: WitnessKind, id: &BitString, values: &[BitString]) {
        self.witnesses.push(Witness {
            session: self.session,
            goal,
            kind,
            id: id.clone(),
            values: values.to_vec(),
        });
    }

    pub fn witnesses(&self) -> &[Witness] {
        &self.witnesses
    }

    /// Injective agreement check over every session on this channel.
    pub fn agreement_violations(&self) -> Vec<AgreementViolation> {
        agreement_violations(&self.witnesses)
    }
}

pub fn agreement_violations(witnesses: &[Witness]) -> Vec<AgreementViolation> {
    let mut tally: BTreeMap<(Goal, BitString, Vec<BitString>), (usize, usize)> = BTreeMap::new();
    for w in witnesses {
        let entry = tally
            .entry((w.goal, w.id.clone(), w.values.clone()))
            .or_default();
        match w.kind {
            WitnessKind::Commit => entry.0 += 1,
            WitnessKind::Running => entry.1 += 1,
        }
    }
    tally
        .into_iter()
        .filter(|(_, (c, r))| c > r)
        .map(
            |((goal, id, values), (commits, runnings))| AgreementViolation {
                goal,
                id,
                values,
                commits,
                runnings,
            },
        )
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(s: &str) -> BitString {
        BitString::parse_binary(s).unwrap()
    }

    #[test]
    fn secure_links_reject_adversaries() {
        let mut ch = Channel::new("test", 0);
        assert_eq!(
            ch.block(Link::ReaderServer, |_| true),
            Err(Error::AdversaryOnSecureLink(Link::ReaderServer))
        );
        assert!(ch.modify(Link::SensorServer, |_, _| None).is_err());
        assert!(ch
            .inject(Link::SensorServer, None, StepLabel::SensorCapture, vec![])
            .is_err());
        assert!(ch.block(Link::TagReader, |_| true).is_ok());
    }

    #[test]
    fn transmit_records_and_delivers() {
        let mut ch = Channel::new("test", 0);
        ch.begin_session();
        let got = ch.transmit(
            StepLabel::Challenge,
            Direction::ReaderToTag,
            Some(vec![b("1010")]),
        );
        assert_eq!(got, Some(vec![b("1010")]));
        let e = &ch.observe().events()[0];
        assert_eq!(
            (e.sender, e.receiver(), e.delivered),
            (Party::Reader, Party::Tag, true)
        );
        ch.send_secure(Link::ReaderServer, StepLabel::ForwardResponse, vec![b("1")]);
        assert_eq!(ch.observe().len(), 1);
        assert_eq!(ch.secure_log().len(), 1);
    }

    #[test]
    fn block_modify_inject() {
        let mut ch = Channel::new("test", 0);
        ch.begin_session();
        ch.block(Link::TagReader, |m| m.step == StepLabel::ReaderProof)
            .unwrap();
        ch.modify(Link::TagReader, |m, p| {
            (m.step == StepLabel::TagResponse).then(|| vec![p[0].xor(&p[0]).unwrap()])
        })
        .unwrap();
        ch.inject(
            Link::TagReader,
            Some(1),
            StepLabel::BioMessage,
            vec![b("11")],
        )
        .unwrap();
        assert_eq!(
            ch.transmit(
                StepLabel::ReaderProof,
                Direction::ReaderToTag,
                Some(vec![b("1")])
            ),
            None
        );
        assert_eq!(
            ch.transmit(
                StepLabel::TagResponse,
                Direction::TagToReader,
                Some(vec![b("101")])
            ),
            Some(vec![b("000")])
        );
        assert_eq!(
            ch.transmit(StepLabel::BioMessage, Direction::TagToReader, None),
            Some(vec![b("11")])
        );
        assert_eq!(
            ch.transmit(StepLabel::Verdict, Direction::TagToReader, None),
            None
        );
        let ev = ch.observe().events();
        assert_eq!(ev.len(), 3);
        assert!(!ev[0].delivered);
        assert_eq!(ev[1].sender, Party::Adversary);
        assert_eq!(ev[1].intercepted, Some(vec![b("101")]));
        assert_eq!(ev[2].sender, Party::Adversary);
    }

    #[test]
    fn interruption_cuts_all_links_until_next_session() {
        let mut ch = Channel::new("test", 0);
        ch.interrupt_after(Some(StepLabel::Challenge));
        ch.begin_session();
        assert!(ch
            .transmit(
                StepLabel::Challenge,
                Direction::ReaderToTag,
                Some(vec![b("1")])
            )
            .is_some());
        assert!(ch
            .transmit(
                StepLabel::TagResponse,
                Direction::TagToReader,
                Some(vec![b("1")])
            )
            .is_none());
        assert!(ch
            .send_secure(Link::ReaderServer, StepLabel::ForwardResponse, vec![])
            .is_none());
        ch.interrupt_after(None);
        ch.begin_session();
        assert!(ch
            .transmit(
                StepLabel::TagResponse,
                Direction::TagToReader,
                Some(vec![b("1")])
            )
            .is_some());
    }

    #[test]
    fn jsonl_has_one_line_per_event() {
        let mut ch = Channel::new("p", 3);
        ch.begin_session();
        ch.transmit(
            StepLabel::Challenge,
            Direction::ReaderToTag,
            Some(vec![b("11110000")]),
        );
        ch.transmit(
            StepLabel::TagResponse,
            Direction::TagToReader,
            Some(vec![b("1111"), b("0000")]),
        );
        let text = ch.observe().to_jsonl();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let v: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(v["payload_hex"], "f0");
        assert_eq!(v["bit_width"], 8);
        assert_eq!(v["sender"], "tag");
        assert_eq!(v["receiver"], "reader");
    }

    #[test]
    fn injective_agreement() {
        let id = b("1010");
        let v = vec![b("01")];
        let mut ch = Channel::new("p", 0);
        ch.witness(Goal::TagAuth, WitnessKind::Running, &id, &v);
        ch.witness(Goal::TagAuth, WitnessKind::Commit, &id, &v);
        assert!(ch.agreement_violations().is_empty());
        ch.witness(Goal::TagAuth, WitnessKind::Commit, &id, &v);
        let viol = ch.agreement_violations();
        assert_eq!(viol.len(), 1);
        assert_eq!((viol[0].commits, viol[0].runnings), (2, 1));
    }
}
