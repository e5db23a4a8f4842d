//! The combined RFID-biometric mutual authentication protocol.
//!
//! Registration writes `{ID, GB}` to the tag over a secure channel and the
//! matching record to the server database. A session then runs:
//!
//! ```text
//! R -> T : Nr
//! T -> R : Nt, P          P = left(h((ID ^ Nt) || Nr))
//! R -> S : Nt, P, Nr      (secure)
//! S      : find ID_i with left(h((ID_i ^ Nt) || Nr)) == P
//! S -> R : Q              Q = right(h((ID_i ^ Nt) || Nr))
//! R -> T : Q
//! T      : check Q against its cached hash
//! T -> R : M              M = h(ID || Nt || Nr) ^ GB ^ Nt
//! R -> S : M; sensor -> S : B'  (secure)
//! S      : GB = M ^ h(ID_i || Nt || Nr) ^ Nt; accept iff g(B') ~ GB
//! ```
//!
//! The tag evaluates `h` exactly twice per session: once for `P` (the full
//! digest is cached to check `Q`) and once for the mask of `M`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::biohash::{
    capture, enroll_template, fuzzy_match, subject_label, BioHashKey, BioHasher, BiometricTemplate,
};
use crate::channel::{Channel, Direction, Goal, Link, StepLabel, WitnessKind};
use crate::error::{Error, Result};
use crate::primitives::{next_nonce, BitString, MeteredHash, Rng, SystemParams};
use crate::registry::{Capture, Deployment, ProtocolKey};

const MAX_ID_DRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TagPhase {
    AwaitingQ,
    BioPhase,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSession {
    pub nt: BitString,
    pub nr: BitString,
    /// `h((ID ^ Nt) || Nr)`, kept between the response and the reader proof.
    pub cached_hash: BitString,
    pub phase: TagPhase,
}

#[derive(Debug, Clone)]
pub struct TagState {
    id: BitString,
    gb: BitString,
    session: Option<TagSession>,
    hash: MeteredHash,
}

impl TagState {
    pub fn new(id: BitString, gb: BitString, params: &SystemParams) -> Result<Self> {
        if id.width() != params.l || gb.width() != params.l {
            return Err(Error::width(format!(
                "tag secrets must be {} bits, got ID {} and GB {}",
                params.l,
                id.width(),
                gb.width()
            )));
        }
        Ok(TagState {
            id,
            gb,
            session: None,
            hash: MeteredHash::new(params),
        })
    }

    pub fn id(&self) -> &BitString {
        &self.id
    }

    pub fn gb(&self) -> &BitString {
        &self.gb
    }

    pub fn session(&self) -> Option<&TagSession> {
        self.session.as_ref()
    }

    pub fn phase_name(&self) -> &'static str {
        match &self.session {
            None => "idle",
            Some(s) if s.phase == TagPhase::AwaitingQ => "awaiting_q",
            Some(_) => "bio_phase",
        }
    }

    pub fn hash_evaluations(&self) -> u64 {
        self.hash.count()
    }

    pub fn reset_counter(&self) {
        self.hash.reset();
    }

    /// Serialized `{ID, GB}`; session scratch state is excluded.
    pub fn persistent_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.id.write_to(&mut out);
        self.gb.write_to(&mut out);
        out
    }

    /// Answers the reader challenge with `(Nt, P)`.
    pub fn respond(
        &mut self,
        nr: &BitString,
        rng: &mut Rng,
        params: &SystemParams,
    ) -> Result<(BitString, BitString)> {
        if self.session.is_some() {
            return Err(Error::Phase {
                expected: "idle",
                found: self.phase_name(),
            });
        }
        if nr.width() != self.id.width() || params.nonce_width != self.id.width() {
            return Err(Error::width(format!(
                "nonces must match the {}-bit ID, got Nr {} and nonce width {}",
                self.id.width(),
                nr.width(),
                params.nonce_width
            )));
        }
        let nt = next_nonce(rng, params);
        let full = self.hash.eval(&self.id.xor(&nt)?.concat(nr));
        let p = full.left_half()?;
        self.session = Some(TagSession {
            nt: nt.clone(),
            nr: nr.clone(),
            cached_hash: full,
            phase: TagPhase::AwaitingQ,
        });
        Ok((nt, p))
    }

    /// Checks the reader proof against the cached digest. A failed check
    /// aborts the session.
    pub fn verify_reader(&mut self, q: &BitString) -> Result<bool> {
        let session = match &mut self.session {
            Some(s) if s.phase == TagPhase::AwaitingQ => s,
            _ => {
                return Err(Error::Phase {
                    expected: "awaiting_q",
                    found: self.phase_name(),
                })
            }
        };
        let expected = session.cached_hash.right_half()?;
        if *q == expected {
            session.phase = TagPhase::BioPhase;
            Ok(true)
        } else {
            self.session = None;
            Ok(false)
        }
    }

    /// `M = h(ID || Nt || Nr) ^ GB ^ Nt`; ends the session.
    pub fn bio_message(&mut self) -> Result<BitString> {
        let session = match self.session.take() {
            Some(s) if s.phase == TagPhase::BioPhase => s,
            other => {
                let found = match &other {
                    None => "idle",
                    Some(_) => "awaiting_q",
                };
                self.session = other;
                return Err(Error::Phase {
                    expected: "bio_phase",
                    found,
                });
            }
        };
        let mask = self
            .hash
            .eval(&self.id.concat(&session.nt).concat(&session.nr));
        mask.xor(&self.gb)?.xor(&session.nt)
    }

    pub fn abort(&mut self) {
        self.session = None;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ServerRecord {
    pub id: BitString,
    pub gb_ref: BitString,
    pub label: String,
}

/// Static list of enrolled tags, scanned in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServerDb {
    records: Vec<ServerRecord>,
}

impl ServerDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ServerRecord] {
        &self.records
    }

    pub fn contains_id(&self, id: &BitString) -> bool {
        self.records.iter().any(|r| r.id == *id)
    }

    pub fn find(&self, id: &BitString) -> Option<&ServerRecord> {
        self.records.iter().find(|r| r.id == *id)
    }

    pub fn insert(&mut self, record: ServerRecord) -> Result<()> {
        if self.contains_id(&record.id) {
            return Err(Error::Registration(format!("duplicate ID {}", record.id)));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn persistent_bytes(&self) -> Vec<u8> {
        let mut out = (self.records.len() as u32).to_be_bytes().to_vec();
        for r in &self.records {
            r.id.write_to(&mut out);
            r.gb_ref.write_to(&mut out);
            out.extend_from_slice(&(r.label.len() as u32).to_be_bytes());
            out.extend_from_slice(r.label.as_bytes());
        }
        out
    }
}

/// Enrolls a subject: fresh unique ID, `GB = g(B)`, database record, and the
/// tag contents handed over the secure registration channel.
pub fn register(
    subject_seed: u64,
    params: &SystemParams,
    db: &mut ServerDb,
    bio: &BioHasher,
    rng: &mut Rng,
) -> Result<TagState> {
    let id = (0..MAX_ID_DRAWS)
        .map(|_| BitString::random(params.l, rng))
        .find(|id| !db.contains_id(id))
        .ok_or_else(|| Error::Registration(format!("no unused ID after {MAX_ID_DRAWS} draws")))?;
    let gb = bio.hash(&enroll_template(subject_seed, params))?;
    db.insert(ServerRecord {
        id: id.clone(),
        gb_ref: gb.clone(),
        label: subject_label(subject_seed),
    })?;
    TagState::new(id, gb, params)
}

pub fn reader_challenge(rng: &mut Rng, params: &SystemParams) -> BitString {
    next_nonce(rng, params)
}

fn response_digest(
    hash: &MeteredHash,
    id: &BitString,
    nt: &BitString,
    nr: &BitString,
) -> Result<BitString> {
    Ok(hash.eval(&id.xor(nt)?.concat(nr)))
}

/// Linear scan for the first ID whose left half digest equals `p`.
pub fn server_identify(
    db: &ServerDb,
    hash: &MeteredHash,
    nt: &BitString,
    nr: &BitString,
    p: &BitString,
) -> Option<BitString> {
    for r in db.records() {
        let Ok(full) = response_digest(hash, &r.id, nt, nr) else {
            return None;
        };
        if full.left_half().ok().as_ref() == Some(p) {
            return Some(r.id.clone());
        }
    }
    None
}

pub fn server_prove(
    hash: &MeteredHash,
    id: &BitString,
    nt: &BitString,
    nr: &BitString,
) -> Result<BitString> {
    response_digest(hash, id, nt, nr)?.right_half()
}

/// `GB = M ^ h(ID || Nt || Nr) ^ Nt`.
pub fn server_extract_gb(
    hash: &MeteredHash,
    id: &BitString,
    nt: &BitString,
    nr: &BitString,
    m: &BitString,
) -> Result<BitString> {
    let m2 = hash.eval(&id.concat(nt).concat(nr)).xor(nt)?;
    m.xor(&m2)
}

pub fn server_verify_bio(
    extracted_gb: &BitString,
    live: &BiometricTemplate,
    bio: &BioHasher,
    epsilon: usize,
) -> Result<bool> {
    fuzzy_match(&bio.hash(live)?, extracted_gb, epsilon)
}

#[derive(Debug)]
pub struct Server {
    pub db: ServerDb,
    pub hash: MeteredHash,
    pub bio: Arc<BioHasher>,
    pub epsilon: usize,
}

impl Server {
    pub fn new(params: &SystemParams, bio: Arc<BioHasher>) -> Self {
        Server {
            db: ServerDb::new(),
            hash: MeteredHash::new(params),
            bio,
            epsilon: params.epsilon,
        }
    }

    pub fn identify(&self, nt: &BitString, nr: &BitString, p: &BitString) -> Option<BitString> {
        server_identify(&self.db, &self.hash, nt, nr, p)
    }

    pub fn prove(&self, id: &BitString, nt: &BitString, nr: &BitString) -> Result<BitString> {
        server_prove(&self.hash, id, nt, nr)
    }

    pub fn extract_gb(
        &self,
        id: &BitString,
        nt: &BitString,
        nr: &BitString,
        m: &BitString,
    ) -> Result<BitString> {
        server_extract_gb(&self.hash, id, nt, nr, m)
    }

    pub fn verify_bio(&self, gb: &BitString, live: &BiometricTemplate) -> Result<bool> {
        server_verify_bio(gb, live, &self.bio, self.epsilon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureStage {
    Identify,
    ReaderProof,
    BioVerify,
    ChannelLoss,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct SessionOutcome {
    pub tag_authenticated: bool,
    pub reader_authenticated: bool,
    pub bio_verified: bool,
    pub identified_id: Option<BitString>,
    pub failure_stage: Option<FailureStage>,
}

impl SessionOutcome {
    pub(crate) fn failed(stage: FailureStage) -> Self {
        SessionOutcome {
            failure_stage: Some(stage),
            ..Default::default()
        }
    }

    pub(crate) fn with_failure(mut self, stage: FailureStage) -> Self {
        self.failure_stage = Some(stage);
        self
    }

    pub fn fully_accepted(&self) -> bool {
        self.tag_authenticated && self.reader_authenticated && self.bio_verified
    }
}

fn width_ok(payload: &[BitString], widths: &[usize]) -> bool {
    payload.len() == widths.len() && payload.iter().zip(widths).all(|(p, &w)| p.width() == w)
}

/// Drives one full session. `tag` is `None` when no genuine tag is in the
/// field, in which case only adversary injections can answer the reader.
/// `live` is what the sensor captures, if anything.
pub fn run_session(
    mut tag: Option<&mut TagState>,
    server: &Server,
    live: Option<&BiometricTemplate>,
    channel: &mut Channel,
    rng: &mut Rng,
    params: &SystemParams,
) -> Result<SessionOutcome> {
    let l = params.l;
    channel.begin_session();
    let nr = reader_challenge(rng, params);

    let at_tag = channel.transmit(
        StepLabel::Challenge,
        Direction::ReaderToTag,
        Some(vec![nr.clone()]),
    );
    let reply = match (tag.as_deref_mut(), at_tag) {
        (Some(t), Some(msg)) if msg.len() == 1 => match t.respond(&msg[0], rng, params) {
            Ok((nt, p)) => {
                channel.witness(
                    Goal::TagAuth,
                    WitnessKind::Running,
                    &t.id,
                    &[nt.clone(), msg[0].clone()],
                );
                Some(vec![nt, p])
            }
            Err(_) => None,
        },
        _ => None,
    };
    let abort = |tag: Option<&mut TagState>| {
        if let Some(t) = tag {
            t.abort();
        }
    };

    let Some(resp) = channel.transmit(StepLabel::TagResponse, Direction::TagToReader, reply) else {
        abort(tag);
        return Ok(SessionOutcome::failed(FailureStage::ChannelLoss));
    };
    if channel
        .send_secure(Link::ReaderServer, StepLabel::ForwardResponse, {
            let mut v = resp.clone();
            v.push(nr.clone());
            v
        })
        .is_none()
    {
        abort(tag);
        return Ok(SessionOutcome::failed(FailureStage::ChannelLoss));
    }
    let identified = if width_ok(&resp, &[params.nonce_width, l / 2]) {
        server.identify(&resp[0], &nr, &resp[1])
    } else {
        None
    };
    let Some(id) = identified else {
        abort(tag);
        return Ok(SessionOutcome::failed(FailureStage::Identify));
    };
    let (nt, _) = (resp[0].clone(), &resp[1]);
    channel.witness(
        Goal::TagAuth,
        WitnessKind::Commit,
        &id,
        &[nt.clone(), nr.clone()],
    );
    let mut outcome = SessionOutcome {
        tag_authenticated: true,
        identified_id: Some(id.clone()),
        ..Default::default()
    };

    let q = server.prove(&id, &nt, &nr)?;
    channel.witness(
        Goal::ReaderAuth,
        WitnessKind::Running,
        &id,
        &[nt.clone(), nr.clone()],
    );
    if channel
        .send_secure(Link::ReaderServer, StepLabel::ServerProof, vec![q.clone()])
        .is_none()
    {
        abort(tag);
        return Ok(outcome.with_failure(FailureStage::ChannelLoss));
    }
    let at_tag = channel.transmit(
        StepLabel::ReaderProof,
        Direction::ReaderToTag,
        Some(vec![q]),
    );

    let bio_reply = match tag {
        Some(t) => {
            let Some(msg) = at_tag else {
                t.abort();
                return Ok(outcome.with_failure(FailureStage::ChannelLoss));
            };
            let accepted = if msg.len() == 1 && t.session().is_some() {
                t.verify_reader(&msg[0])?
            } else {
                t.abort();
                false
            };
            if !accepted {
                return Ok(outcome.with_failure(FailureStage::ReaderProof));
            }
            let s = t.session().expect("session survives a successful check");
            let values = [s.nt.clone(), s.nr.clone()];
            channel.witness(Goal::ReaderAuth, WitnessKind::Commit, &t.id, &values);
            outcome.reader_authenticated = true;
            Some(vec![t.bio_message()?])
        }
        None => None,
    };

    let Some(m) = channel.transmit(StepLabel::BioMessage, Direction::TagToReader, bio_reply) else {
        return Ok(outcome.with_failure(FailureStage::ChannelLoss));
    };
    if channel
        .send_secure(Link::ReaderServer, StepLabel::ForwardBio, m.clone())
        .is_none()
    {
        return Ok(outcome.with_failure(FailureStage::ChannelLoss));
    }
    let Some(live) = live else {
        return Ok(outcome.with_failure(FailureStage::ChannelLoss));
    };
    let live_hash = server.bio.hash(live)?;
    if channel
        .send_secure(
            Link::SensorServer,
            StepLabel::SensorCapture,
            vec![live_hash],
        )
        .is_none()
    {
        return Ok(outcome.with_failure(FailureStage::ChannelLoss));
    }
    let verified = if width_ok(&m, &[l]) {
        let gb = server.extract_gb(&id, &nt, &nr, &m[0])?;
        server.verify_bio(&gb, live)?
    } else {
        false
    };
    let verdict = BitString::from_bits(&[verified]);
    if channel
        .send_secure(Link::ReaderServer, StepLabel::Verdict, vec![verdict])
        .is_none()
    {
        return Ok(outcome.with_failure(FailureStage::ChannelLoss));
    }
    outcome.bio_verified = verified && outcome.reader_authenticated;
    if !verified {
        outcome.failure_stage = Some(FailureStage::BioVerify);
    } else if !outcome.reader_authenticated {
        outcome.failure_stage = Some(FailureStage::ReaderProof);
    }
    Ok(outcome)
}

/// A complete deployment of the proposed protocol: server, issued tags and
/// the people holding them.
#[derive(Debug)]
pub struct ProposedSystem {
    params: SystemParams,
    pub server: Server,
    tags: Vec<TagState>,
    holders: Vec<u64>,
}

impl ProposedSystem {
    pub fn new(params: &SystemParams) -> Result<Self> {
        params.validate()?;
        let bio = Arc::new(BioHasher::new(BioHashKey::from_params(params), params));
        Ok(Self::with_hasher(params, bio))
    }

    pub fn with_hasher(params: &SystemParams, bio: Arc<BioHasher>) -> Self {
        ProposedSystem {
            params: params.clone(),
            server: Server::new(params, bio),
            tags: Vec::new(),
            holders: Vec::new(),
        }
    }

    pub fn tag(&self, index: usize) -> &TagState {
        &self.tags[index]
    }

    pub fn tag_mut(&mut self, index: usize) -> &mut TagState {
        &mut self.tags[index]
    }

    pub fn holder(&self, index: usize) -> u64 {
        self.holders[index]
    }

    /// Adds an already-issued tag (e.g. loaded from an enrollment file).
    pub fn install(&mut self, id: BitString, gb: BitString, subject_seed: u64) -> Result<usize> {
        self.server.db.insert(ServerRecord {
            id: id.clone(),
            gb_ref: gb.clone(),
            label: subject_label(subject_seed),
        })?;
        self.tags.push(TagState::new(id, gb, &self.params)?);
        self.holders.push(subject_seed);
        Ok(self.tags.len() - 1)
    }

    pub(crate) fn live_template(
        &self,
        tag: Option<usize>,
        sensor: &Capture,
        rng: &mut Rng,
    ) -> Result<Option<BiometricTemplate>> {
        resolve_capture(&self.params, tag.map(|i| self.holders[i]), sensor, rng)
    }
}

pub(crate) fn resolve_capture(
    params: &SystemParams,
    holder: Option<u64>,
    sensor: &Capture,
    rng: &mut Rng,
) -> Result<Option<BiometricTemplate>> {
    Ok(match sensor {
        Capture::Absent => None,
        Capture::Genuine { noise_sigma } => match holder {
            Some(seed) => Some(capture(&enroll_template(seed, params), *noise_sigma, rng)?),
            None => None,
        },
        Capture::Impostor {
            subject_seed,
            noise_sigma,
        } => Some(capture(
            &enroll_template(*subject_seed, params),
            *noise_sigma,
            rng,
        )?),
        Capture::Template(t) => Some(t.clone()),
    })
}

impl Deployment for ProposedSystem {
    fn key(&self) -> ProtocolKey {
        ProtocolKey::Proposed
    }

    fn params(&self) -> &SystemParams {
        &self.params
    }

    fn register(&mut self, subject_seed: u64, rng: &mut Rng) -> Result<usize> {
        let tag = register(
            subject_seed,
            &self.params,
            &mut self.server.db,
            &self.server.bio,
            rng,
        )?;
        self.tags.push(tag);
        self.holders.push(subject_seed);
        Ok(self.tags.len() - 1)
    }

    fn install_tag(
        &mut self,
        id: BitString,
        gb: BitString,
        subject_seed: u64,
        _rng: &mut Rng,
    ) -> Result<usize> {
        self.install(id, gb, subject_seed)
    }

    fn tag_count(&self) -> usize {
        self.tags.len()
    }

    fn tag_secrets(&self, index: usize) -> Vec<BitString> {
        vec![self.tags[index].id.clone(), self.tags[index].gb.clone()]
    }

    fn run_session(
        &mut self,
        tag: Option<usize>,
        sensor: &Capture,
        channel: &mut Channel,
        rng: &mut Rng,
    ) -> Result<SessionOutcome> {
        let live = self.live_template(tag, sensor, rng)?;
        let tag_state = match tag {
            Some(i) => Some(
                self.tags
                    .get_mut(i)
                    .ok_or_else(|| Error::Precondition(format!("no tag with index {i}")))?,
            ),
            None => None,
        };
        run_session(
            tag_state,
            &self.server,
            live.as_ref(),
            channel,
            rng,
            &self.params,
        )
    }

    fn tag_probe(&mut self, tag: usize, channel: &mut Channel, rng: &mut Rng) -> Result<bool> {
        let params = &self.params;
        let t = self
            .tags
            .get_mut(tag)
            .ok_or_else(|| Error::Precondition(format!("no tag with index {tag}")))?;
        channel.begin_session();
        let Some(msg) = channel.transmit(StepLabel::Challenge, Direction::ReaderToTag, None) else {
            return Ok(false);
        };
        if msg.len() != 1 {
            return Ok(false);
        }
        let Ok((nt, p)) = t.respond(&msg[0], rng, params) else {
            return Ok(false);
        };
        channel.witness(
            Goal::TagAuth,
            WitnessKind::Running,
            &t.id,
            &[nt.clone(), msg[0].clone()],
        );
        channel.transmit(
            StepLabel::TagResponse,
            Direction::TagToReader,
            Some(vec![nt.clone(), p]),
        );
        let q = channel.transmit(StepLabel::ReaderProof, Direction::ReaderToTag, None);
        let accepted = match q {
            Some(q) if q.len() == 1 => t.verify_reader(&q[0])?,
            _ => {
                t.abort();
                false
            }
        };
        if accepted {
            channel.witness(
                Goal::ReaderAuth,
                WitnessKind::Commit,
                &t.id,
                &[nt, msg[0].clone()],
            );
            let m = t.bio_message()?;
            channel.transmit(StepLabel::BioMessage, Direction::TagToReader, Some(vec![m]));
        }
        Ok(accepted)
    }

    fn persistent_state(&self) -> Vec<u8> {
        let mut out = self.server.db.persistent_bytes();
        for t in &self.tags {
            out.extend(t.persistent_bytes());
        }
        out
    }

    fn tag_hash_count(&self, index: usize) -> u64 {
        self.tags[index].hash_evaluations()
    }

    fn server_hash_count(&self) -> u64 {
        self.server.hash.count()
    }

    fn reset_counters(&mut self) {
        self.server.hash.reset();
        for t in &self.tags {
            t.reset_counter();
        }
    }

    fn tag_storage_bits(&self) -> usize {
        self.params.l * 2
    }

    fn interruption_points(&self) -> Vec<StepLabel> {
        vec![
            StepLabel::Challenge,
            StepLabel::TagResponse,
            StepLabel::ReaderProof,
            StepLabel::BioMessage,
            StepLabel::SensorCapture,
        ]
    }

    fn session_complete(&self, outcome: &SessionOutcome) -> bool {
        outcome.fully_accepted()
    }
}
