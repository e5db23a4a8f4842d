//! Baseline static-ID protocols used as attack targets: the randomized hash
//! lock (RHLS), Chien-Huang (CH), and a clear-ID strawman that broadcasts
//! its identifier.

use serde::Serialize;

use crate::channel::{Channel, Direction, Goal, Link, StepLabel, WitnessKind};
use crate::error::{Error, Result};
use crate::primitives::{next_nonce, BitString, MeteredHash, Rng, SystemParams};
use crate::protocol::{FailureStage, SessionOutcome};
use crate::registry::{Capture, Deployment, ProtocolKey};

fn fresh_id(ids: &[BitString], params: &SystemParams, rng: &mut Rng) -> Result<BitString> {
    (0..100)
        .map(|_| BitString::random(params.l, rng))
        .find(|id| !ids.contains(id))
        .ok_or_else(|| Error::Registration("no unused ID after 100 draws".into()))
}

fn write_ids(ids: &[BitString]) -> Vec<u8> {
    let mut out = (ids.len() as u32).to_be_bytes().to_vec();
    for id in ids {
        id.write_to(&mut out);
    }
    out
}

fn tag_index(i: Option<usize>, count: usize) -> Result<Option<usize>> {
    match i {
        Some(i) if i >= count => Err(Error::Precondition(format!("no tag with index {i}"))),
        other => Ok(other),
    }
}

// ---------------------------------------------------------------------------
// RHLS

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RhlsTag {
    pub id: BitString,
}

/// `(nt, h(ID || nt))`. Nothing from the reader enters the digest.
pub fn rhls_tag_respond(
    tag: &RhlsTag,
    hash: &MeteredHash,
    rng: &mut Rng,
    params: &SystemParams,
) -> (BitString, BitString) {
    let nt = next_nonce(rng, params);
    let h1 = hash.eval(&tag.id.concat(&nt));
    (nt, h1)
}

pub fn rhls_server_verify(
    ids: &[BitString],
    hash: &MeteredHash,
    nt: &BitString,
    h1: &BitString,
) -> Option<BitString> {
    ids.iter()
        .find(|id| hash.eval(&id.concat(nt)) == *h1)
        .cloned()
}

#[derive(Debug)]
pub struct RhlsSystem {
    params: SystemParams,
    ids: Vec<BitString>,
    tags: Vec<RhlsTag>,
    tag_hash: Vec<MeteredHash>,
    server_hash: MeteredHash,
}

impl RhlsSystem {
    pub fn new(params: &SystemParams) -> Self {
        RhlsSystem {
            params: params.clone(),
            ids: Vec::new(),
            tags: Vec::new(),
            tag_hash: Vec::new(),
            server_hash: MeteredHash::new(params),
        }
    }

    pub fn server_ids(&self) -> &[BitString] {
        &self.ids
    }

    pub fn tag(&self, i: usize) -> &RhlsTag {
        &self.tags[i]
    }

    fn add(&mut self, id: BitString) -> usize {
        self.ids.push(id.clone());
        self.tags.push(RhlsTag { id });
        self.tag_hash.push(MeteredHash::new(&self.params));
        self.tags.len() - 1
    }
}

impl Deployment for RhlsSystem {
    fn key(&self) -> ProtocolKey {
        ProtocolKey::Rhls
    }

    fn params(&self) -> &SystemParams {
        &self.params
    }

    fn register(&mut self, _subject_seed: u64, rng: &mut Rng) -> Result<usize> {
        let id = fresh_id(&self.ids, &self.params, rng)?;
        Ok(self.add(id))
    }

    fn install_tag(
        &mut self,
        id: BitString,
        _gb: BitString,
        _subject_seed: u64,
        _rng: &mut Rng,
    ) -> Result<usize> {
        if self.ids.contains(&id) {
            return Err(Error::Registration(format!("duplicate ID {id}")));
        }
        Ok(self.add(id))
    }

    fn tag_count(&self) -> usize {
        self.tags.len()
    }

    fn tag_secrets(&self, index: usize) -> Vec<BitString> {
        vec![self.tags[index].id.clone()]
    }

    fn run_session(
        &mut self,
        tag: Option<usize>,
        _sensor: &Capture,
        channel: &mut Channel,
        rng: &mut Rng,
    ) -> Result<SessionOutcome> {
        let tag = tag_index(tag, self.tags.len())?;
        channel.begin_session();
        let reply = tag.map(|i| {
            let (nt, h1) = rhls_tag_respond(&self.tags[i], &self.tag_hash[i], rng, &self.params);
            channel.witness(
                Goal::TagAuth,
                WitnessKind::Running,
                &self.tags[i].id,
                std::slice::from_ref(&nt),
            );
            vec![nt, h1]
        });
        let Some(resp) = channel.transmit(StepLabel::TagResponse, Direction::TagToReader, reply)
        else {
            return Ok(SessionOutcome::failed(FailureStage::ChannelLoss));
        };
        if channel
            .send_secure(Link::ReaderServer, StepLabel::ForwardResponse, resp.clone())
            .is_none()
        {
            return Ok(SessionOutcome::failed(FailureStage::ChannelLoss));
        }
        let shape_ok = resp.len() == 2
            && resp[0].width() == self.params.nonce_width
            && resp[1].width() == self.params.l;
        let found = if shape_ok {
            rhls_server_verify(&self.ids, &self.server_hash, &resp[0], &resp[1])
        } else {
            None
        };
        let Some(id) = found else {
            return Ok(SessionOutcome::failed(FailureStage::Identify));
        };
        channel.witness(Goal::TagAuth, WitnessKind::Commit, &id, &[resp[0].clone()]);
        let outcome = SessionOutcome {
            tag_authenticated: true,
            identified_id: Some(id),
            ..Default::default()
        };
        if channel
            .send_secure(
                Link::ReaderServer,
                StepLabel::Verdict,
                vec![BitString::from_bits(&[true])],
            )
            .is_none()
        {
            return Ok(outcome.with_failure(FailureStage::ChannelLoss));
        }
        Ok(outcome)
    }

    fn tag_probe(&mut self, tag: usize, channel: &mut Channel, rng: &mut Rng) -> Result<bool> {
        tag_index(Some(tag), self.tags.len())?;
        channel.begin_session();
        channel.transmit(StepLabel::Challenge, Direction::ReaderToTag, None);
        let reply = {
            let (nt, h1) =
                rhls_tag_respond(&self.tags[tag], &self.tag_hash[tag], rng, &self.params);
            vec![nt, h1]
        };
        channel.witness(
            Goal::TagAuth,
            WitnessKind::Running,
            &self.tags[tag].id,
            &reply[..1],
        );
        channel.transmit(StepLabel::TagResponse, Direction::TagToReader, Some(reply));
        Ok(false)
    }

    fn persistent_state(&self) -> Vec<u8> {
        let mut out = write_ids(&self.ids);
        out.extend(write_ids(
            &self.tags.iter().map(|t| t.id.clone()).collect::<Vec<_>>(),
        ));
        out
    }

    fn tag_hash_count(&self, index: usize) -> u64 {
        self.tag_hash[index].count()
    }

    fn server_hash_count(&self) -> u64 {
        self.server_hash.count()
    }

    fn reset_counters(&mut self) {
        self.server_hash.reset();
        self.tag_hash.iter().for_each(MeteredHash::reset);
    }

    fn tag_storage_bits(&self) -> usize {
        self.params.l
    }

    fn interruption_points(&self) -> Vec<StepLabel> {
        vec![StepLabel::TagResponse, StepLabel::ForwardResponse]
    }

    fn session_complete(&self, outcome: &SessionOutcome) -> bool {
        outcome.tag_authenticated
    }
}

// ---------------------------------------------------------------------------
// Chien-Huang

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChTag {
    pub id: BitString,
    pub k: BitString,
}

/// `rotate(ID, g) ^ g`, rotating left by `g mod l`.
pub fn ch_response_value(id: &BitString, g: &BitString) -> Result<BitString> {
    id.rotate_left(g.mod_small(id.width())).xor(g)
}

fn ch_g(hash: &MeteredHash, id: &BitString, nt: &BitString, nr: &BitString) -> Result<BitString> {
    Ok(hash.eval(&nr.xor(nt)?.xor(id)?))
}

/// CH tag state between the response and the reader proof.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChPending {
    pub nt: BitString,
    pub nr: BitString,
    pub value: BitString,
}

/// Returns `(nt, left half of rotate(ID, g) ^ g)` with `g = h(nr ^ nt ^ ID)`.
pub fn ch_tag_respond(
    tag: &ChTag,
    nr: &BitString,
    hash: &MeteredHash,
    rng: &mut Rng,
    params: &SystemParams,
) -> Result<(BitString, BitString, ChPending)> {
    if nr.width() != tag.id.width() || params.nonce_width != tag.id.width() {
        return Err(Error::width("CH nonces must match the ID width"));
    }
    let nt = next_nonce(rng, params);
    let value = ch_response_value(&tag.id, &ch_g(hash, &tag.id, &nt, nr)?)?;
    let left = value.left_half()?;
    Ok((
        nt.clone(),
        left,
        ChPending {
            nt,
            nr: nr.clone(),
            value,
        },
    ))
}

/// Scans the database for the tag whose left half matches and returns its
/// ID with the right half as the reader proof.
pub fn ch_server_respond(
    tags: &[ChTag],
    hash: &MeteredHash,
    nr: &BitString,
    nt: &BitString,
    left_part: &BitString,
) -> Option<(BitString, BitString)> {
    for t in tags {
        let value = ch_g(hash, &t.id, nt, nr)
            .and_then(|g| ch_response_value(&t.id, &g))
            .ok()?;
        let (l, r) = value.split_halves().ok()?;
        if l == *left_part {
            return Some((t.id.clone(), r));
        }
    }
    None
}

#[derive(Debug)]
pub struct ChSystem {
    params: SystemParams,
    db: Vec<ChTag>,
    tags: Vec<ChTag>,
    tag_hash: Vec<MeteredHash>,
    server_hash: MeteredHash,
}

impl ChSystem {
    pub fn new(params: &SystemParams) -> Self {
        ChSystem {
            params: params.clone(),
            db: Vec::new(),
            tags: Vec::new(),
            tag_hash: Vec::new(),
            server_hash: MeteredHash::new(params),
        }
    }

    pub fn tag(&self, i: usize) -> &ChTag {
        &self.tags[i]
    }

    pub fn db(&self) -> &[ChTag] {
        &self.db
    }

    fn add(&mut self, id: BitString, rng: &mut Rng) -> usize {
        let t = ChTag {
            id,
            k: BitString::random(self.params.l, rng),
        };
        self.db.push(t.clone());
        self.tags.push(t);
        self.tag_hash.push(MeteredHash::new(&self.params));
        self.tags.len() - 1
    }
}

impl Deployment for ChSystem {
    fn key(&self) -> ProtocolKey {
        ProtocolKey::Ch
    }

    fn params(&self) -> &SystemParams {
        &self.params
    }

    fn register(&mut self, _subject_seed: u64, rng: &mut Rng) -> Result<usize> {
        let ids: Vec<_> = self.db.iter().map(|t| t.id.clone()).collect();
        let id = fresh_id(&ids, &self.params, rng)?;
        Ok(self.add(id, rng))
    }

    fn install_tag(
        &mut self,
        id: BitString,
        _gb: BitString,
        _subject_seed: u64,
        rng: &mut Rng,
    ) -> Result<usize> {
        if self.db.iter().any(|t| t.id == id) {
            return Err(Error::Registration(format!("duplicate ID {id}")));
        }
        Ok(self.add(id, rng))
    }

    fn tag_count(&self) -> usize {
        self.tags.len()
    }

    fn tag_secrets(&self, index: usize) -> Vec<BitString> {
        vec![self.tags[index].id.clone(), self.tags[index].k.clone()]
    }

    fn run_session(
        &mut self,
        tag: Option<usize>,
        _sensor: &Capture,
        channel: &mut Channel,
        rng: &mut Rng,
    ) -> Result<SessionOutcome> {
        let tag = tag_index(tag, self.tags.len())?;
        channel.begin_session();
        let nr = next_nonce(rng, &self.params);
        let at_tag = channel.transmit(
            StepLabel::Challenge,
            Direction::ReaderToTag,
            Some(vec![nr.clone()]),
        );
        let mut pending = None;
        let reply = match (tag, at_tag) {
            (Some(i), Some(msg)) if msg.len() == 1 => {
                match ch_tag_respond(&self.tags[i], &msg[0], &self.tag_hash[i], rng, &self.params) {
                    Ok((nt, left, p)) => {
                        channel.witness(
                            Goal::TagAuth,
                            WitnessKind::Running,
                            &self.tags[i].id,
                            &[nt.clone(), msg[0].clone()],
                        );
                        pending = Some(p);
                        Some(vec![nt, left])
                    }
                    Err(_) => None,
                }
            }
            _ => None,
        };
        let Some(resp) = channel.transmit(StepLabel::TagResponse, Direction::TagToReader, reply)
        else {
            return Ok(SessionOutcome::failed(FailureStage::ChannelLoss));
        };
        let mut fwd = resp.clone();
        fwd.push(nr.clone());
        if channel
            .send_secure(Link::ReaderServer, StepLabel::ForwardResponse, fwd)
            .is_none()
        {
            return Ok(SessionOutcome::failed(FailureStage::ChannelLoss));
        }
        let shape_ok = resp.len() == 2
            && resp[0].width() == self.params.nonce_width
            && resp[1].width() == self.params.l / 2;
        let found = if shape_ok {
            ch_server_respond(&self.db, &self.server_hash, &nr, &resp[0], &resp[1])
        } else {
            None
        };
        let Some((id, right)) = found else {
            return Ok(SessionOutcome::failed(FailureStage::Identify));
        };
        let values = [resp[0].clone(), nr.clone()];
        channel.witness(Goal::TagAuth, WitnessKind::Commit, &id, &values);
        channel.witness(Goal::ReaderAuth, WitnessKind::Running, &id, &values);
        let mut outcome = SessionOutcome {
            tag_authenticated: true,
            identified_id: Some(id),
            ..Default::default()
        };
        if channel
            .send_secure(
                Link::ReaderServer,
                StepLabel::ServerProof,
                vec![right.clone()],
            )
            .is_none()
        {
            return Ok(outcome.with_failure(FailureStage::ChannelLoss));
        }
        let at_tag = channel.transmit(
            StepLabel::ReaderProof,
            Direction::ReaderToTag,
            Some(vec![right]),
        );
        let Some(i) = tag else {
            return Ok(outcome.with_failure(FailureStage::ReaderProof));
        };
        let (Some(msg), Some(p)) = (at_tag, pending) else {
            return Ok(outcome.with_failure(FailureStage::ChannelLoss));
        };
        if msg.len() == 1 && p.value.right_half()? == msg[0] {
            channel.witness(
                Goal::ReaderAuth,
                WitnessKind::Commit,
                &self.tags[i].id,
                &[p.nt, p.nr],
            );
            outcome.reader_authenticated = true;
            Ok(outcome)
        } else {
            Ok(outcome.with_failure(FailureStage::ReaderProof))
        }
    }

    fn tag_probe(&mut self, tag: usize, channel: &mut Channel, rng: &mut Rng) -> Result<bool> {
        tag_index(Some(tag), self.tags.len())?;
        channel.begin_session();
        let Some(msg) = channel.transmit(StepLabel::Challenge, Direction::ReaderToTag, None) else {
            return Ok(false);
        };
        if msg.len() != 1 {
            return Ok(false);
        }
        let Ok((nt, left, pending)) = ch_tag_respond(
            &self.tags[tag],
            &msg[0],
            &self.tag_hash[tag],
            rng,
            &self.params,
        ) else {
            return Ok(false);
        };
        let id = self.tags[tag].id.clone();
        channel.witness(
            Goal::TagAuth,
            WitnessKind::Running,
            &id,
            &[nt.clone(), msg[0].clone()],
        );
        channel.transmit(
            StepLabel::TagResponse,
            Direction::TagToReader,
            Some(vec![nt, left]),
        );
        let accepted = match channel.transmit(StepLabel::ReaderProof, Direction::ReaderToTag, None)
        {
            Some(q) => q.len() == 1 && pending.value.right_half()? == q[0],
            None => false,
        };
        if accepted {
            channel.witness(
                Goal::ReaderAuth,
                WitnessKind::Commit,
                &id,
                &[pending.nt, pending.nr],
            );
        }
        Ok(accepted)
    }

    fn persistent_state(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for t in self.db.iter().chain(&self.tags) {
            t.id.write_to(&mut out);
            t.k.write_to(&mut out);
        }
        out
    }

    fn tag_hash_count(&self, index: usize) -> u64 {
        self.tag_hash[index].count()
    }

    fn server_hash_count(&self) -> u64 {
        self.server_hash.count()
    }

    fn reset_counters(&mut self) {
        self.server_hash.reset();
        self.tag_hash.iter().for_each(MeteredHash::reset);
    }

    fn tag_storage_bits(&self) -> usize {
        self.params.l * 2
    }

    fn interruption_points(&self) -> Vec<StepLabel> {
        vec![
            StepLabel::Challenge,
            StepLabel::TagResponse,
            StepLabel::ReaderProof,
        ]
    }

    fn session_complete(&self, outcome: &SessionOutcome) -> bool {
        outcome.tag_authenticated && outcome.reader_authenticated
    }
}

// ---------------------------------------------------------------------------
// Clear-ID strawman

pub fn clear_id_tag_respond(id: &BitString) -> BitString {
    id.clone()
}

#[derive(Debug)]
pub struct ClearIdSystem {
    params: SystemParams,
    ids: Vec<BitString>,
    tags: Vec<BitString>,
}

impl ClearIdSystem {
    pub fn new(params: &SystemParams) -> Self {
        ClearIdSystem {
            params: params.clone(),
            ids: Vec::new(),
            tags: Vec::new(),
        }
    }
}

impl Deployment for ClearIdSystem {
    fn key(&self) -> ProtocolKey {
        ProtocolKey::ClearId
    }

    fn params(&self) -> &SystemParams {
        &self.params
    }

    fn register(&mut self, _subject_seed: u64, rng: &mut Rng) -> Result<usize> {
        let id = fresh_id(&self.ids, &self.params, rng)?;
        self.ids.push(id.clone());
        self.tags.push(id);
        Ok(self.tags.len() - 1)
    }

    fn install_tag(
        &mut self,
        id: BitString,
        _gb: BitString,
        _subject_seed: u64,
        _rng: &mut Rng,
    ) -> Result<usize> {
        if self.ids.contains(&id) {
            return Err(Error::Registration(format!("duplicate ID {id}")));
        }
        self.ids.push(id.clone());
        self.tags.push(id);
        Ok(self.tags.len() - 1)
    }

    fn tag_count(&self) -> usize {
        self.tags.len()
    }

    fn tag_secrets(&self, index: usize) -> Vec<BitString> {
        vec![self.tags[index].clone()]
    }

    fn run_session(
        &mut self,
        tag: Option<usize>,
        _sensor: &Capture,
        channel: &mut Channel,
        _rng: &mut Rng,
    ) -> Result<SessionOutcome> {
        let tag = tag_index(tag, self.tags.len())?;
        channel.begin_session();
        let reply = tag.map(|i| {
            let id = clear_id_tag_respond(&self.tags[i]);
            channel.witness(Goal::TagAuth, WitnessKind::Running, &id, &[]);
            vec![id]
        });
        let Some(resp) = channel.transmit(StepLabel::TagResponse, Direction::TagToReader, reply)
        else {
            return Ok(SessionOutcome::failed(FailureStage::ChannelLoss));
        };
        if channel
            .send_secure(Link::ReaderServer, StepLabel::ForwardResponse, resp.clone())
            .is_none()
        {
            return Ok(SessionOutcome::failed(FailureStage::ChannelLoss));
        }
        match resp
            .first()
            .filter(|id| resp.len() == 1 && self.ids.contains(id))
        {
            Some(id) => {
                channel.witness(Goal::TagAuth, WitnessKind::Commit, id, &[]);
                Ok(SessionOutcome {
                    tag_authenticated: true,
                    identified_id: Some(id.clone()),
                    ..Default::default()
                })
            }
            None => Ok(SessionOutcome::failed(FailureStage::Identify)),
        }
    }

    fn tag_probe(&mut self, tag: usize, channel: &mut Channel, _rng: &mut Rng) -> Result<bool> {
        tag_index(Some(tag), self.tags.len())?;
        channel.begin_session();
        channel.transmit(StepLabel::Challenge, Direction::ReaderToTag, None);
        let reply = vec![clear_id_tag_respond(&self.tags[tag])];
        channel.witness(
            Goal::TagAuth,
            WitnessKind::Running,
            &self.tags[tag],
            &reply[..0],
        );
        channel.transmit(StepLabel::TagResponse, Direction::TagToReader, Some(reply));
        Ok(false)
    }

    fn persistent_state(&self) -> Vec<u8> {
        let mut out = write_ids(&self.ids);
        out.extend(write_ids(&self.tags));
        out
    }

    fn tag_hash_count(&self, _index: usize) -> u64 {
        0
    }

    fn server_hash_count(&self) -> u64 {
        0
    }

    fn reset_counters(&mut self) {}

    fn tag_storage_bits(&self) -> usize {
        self.params.l
    }

    fn interruption_points(&self) -> Vec<StepLabel> {
        vec![StepLabel::TagResponse, StepLabel::ForwardResponse]
    }

    fn session_complete(&self, outcome: &SessionOutcome) -> bool {
        outcome.tag_authenticated
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::hash;
    use std::collections::HashSet;

    fn params() -> SystemParams {
        SystemParams::default()
    }

    #[test]
    fn rhls_response_formula_and_width() {
        let p = params();
        let mut rng = Rng::from_seed(1);
        let tag = RhlsTag {
            id: BitString::random(p.l, &mut rng),
        };
        let h = MeteredHash::new(&p);
        let (nt, h1) = rhls_tag_respond(&tag, &h, &mut rng, &p);
        assert_eq!(h1, hash(&tag.id.concat(&nt), &p));
        assert_eq!(h1.width(), p.l);
        assert_eq!(h.count(), 1);
    }

    #[test]
    fn rhls_verify_accepts_honest_and_replayed_rejects_random() {
        let p = params();
        let mut rng = Rng::from_seed(2);
        let mut sys = RhlsSystem::new(&p);
        for s in 0..10 {
            sys.register(s, &mut rng).unwrap();
        }
        let h = MeteredHash::new(&p);
        let (nt, h1) = rhls_tag_respond(sys.tag(4), &h, &mut rng, &p);
        let ids = sys.server_ids().to_vec();
        assert_eq!(
            rhls_server_verify(&ids, &h, &nt, &h1).as_ref(),
            Some(&sys.tag(4).id)
        );
        // Same message again, later: still accepted.
        assert_eq!(
            rhls_server_verify(&ids, &h, &nt, &h1).as_ref(),
            Some(&sys.tag(4).id)
        );
        for _ in 0..10_000 {
            let junk = BitString::random(p.l, &mut rng);
            assert_eq!(rhls_server_verify(&ids, &h, &nt, &junk), None);
        }
    }

    #[test]
    fn ch_response_formula() {
        let p = params();
        let mut rng = Rng::from_seed(3);
        let tag = ChTag {
            id: BitString::random(p.l, &mut rng),
            k: BitString::random(p.l, &mut rng),
        };
        let h = MeteredHash::new(&p);
        let nr = next_nonce(&mut rng, &p);
        let (nt, left, pending) = ch_tag_respond(&tag, &nr, &h, &mut rng, &p).unwrap();
        let g = hash(&nr.xor(&nt).unwrap().xor(&tag.id).unwrap(), &p);
        // Bitwise rotation written out independently of rotate_left.
        let shift = g.bits().fold(0usize, |acc, b| (acc * 2 + b as usize) % p.l);
        let rotated = BitString::from_bits(
            &(0..p.l)
                .map(|i| tag.id.bit((i + shift) % p.l))
                .collect::<Vec<_>>(),
        );
        let value = rotated.xor(&g).unwrap();
        assert_eq!(left, value.split_halves().unwrap().0);
        assert_eq!(pending.value, value);
        assert_eq!(h.count(), 1);
    }

    #[test]
    fn ch_zero_rotation_is_identity() {
        let p = params();
        let mut rng = Rng::from_seed(4);
        let id = BitString::random(p.l, &mut rng);
        let h = MeteredHash::new(&p);
        let nr = next_nonce(&mut rng, &p);
        let mut found = false;
        for _ in 0..5000 {
            let nt = next_nonce(&mut rng, &p);
            let g = ch_g(&h, &id, &nt, &nr).unwrap();
            if g.mod_small(p.l) == 0 {
                let left = ch_response_value(&id, &g).unwrap().left_half().unwrap();
                assert_eq!(left, id.xor(&g).unwrap().left_half().unwrap());
                found = true;
                break;
            }
        }
        assert!(found);
    }

    #[test]
    fn ch_left_parts_are_fresh() {
        let p = params();
        let mut rng = Rng::from_seed(5);
        let tag = ChTag {
            id: BitString::random(p.l, &mut rng),
            k: BitString::random(p.l, &mut rng),
        };
        let h = MeteredHash::new(&p);
        let nr = next_nonce(&mut rng, &p);
        let mut seen = HashSet::new();
        for _ in 0..1000 {
            let (_, left, _) = ch_tag_respond(&tag, &nr, &h, &mut rng, &p).unwrap();
            assert!(seen.insert(left));
        }
    }

    #[test]
    fn ch_server_no_match() {
        let p = params();
        let mut rng = Rng::from_seed(6);
        let mut sys = ChSystem::new(&p);
        for s in 0..5 {
            sys.register(s, &mut rng).unwrap();
        }
        let h = MeteredHash::new(&p);
        let nr = next_nonce(&mut rng, &p);
        let nt = next_nonce(&mut rng, &p);
        assert_eq!(
            ch_server_respond(sys.db(), &h, &nr, &nt, &BitString::zeros(64)),
            None
        );
    }

    #[test]
    fn honest_baseline_sessions_complete() {
        let p = params();
        for seed in 0..100 {
            let mut rng = Rng::from_seed(seed);
            let mut systems: Vec<Box<dyn Deployment>> = vec![
                Box::new(RhlsSystem::new(&p)),
                Box::new(ChSystem::new(&p)),
                Box::new(ClearIdSystem::new(&p)),
            ];
            for sys in &mut systems {
                for s in 0..3 {
                    sys.register(s, &mut rng).unwrap();
                }
                let before = sys.persistent_state();
                let mut ch = Channel::new(sys.key().name(), seed);
                sys.reset_counters();
                let out = sys
                    .run_session(Some(1), &Capture::Absent, &mut ch, &mut rng)
                    .unwrap();
                assert!(
                    sys.session_complete(&out),
                    "{} seed {seed}: {out:?}",
                    sys.key()
                );
                assert_eq!(out.identified_id.as_ref(), Some(&sys.tag_secrets(1)[0]));
                assert_eq!(sys.persistent_state(), before);
                assert!(ch.agreement_violations().is_empty());
            }
        }
    }

    #[test]
    fn baseline_transcript_shapes() {
        let p = params();
        let mut rng = Rng::from_seed(7);
        let mut rhls = RhlsSystem::new(&p);
        rhls.register(0, &mut rng).unwrap();
        let mut ch = Channel::new("rhls", 7);
        rhls.run_session(Some(0), &Capture::Absent, &mut ch, &mut rng)
            .unwrap();
        assert_eq!(ch.observe().len(), 1);
        assert_eq!(ch.observe().events()[0].direction, Direction::TagToReader);
        assert_eq!(rhls.tag_hash_count(0), 1);

        let mut chs = ChSystem::new(&p);
        chs.register(0, &mut rng).unwrap();
        let mut ch = Channel::new("ch", 7);
        chs.run_session(Some(0), &Capture::Absent, &mut ch, &mut rng)
            .unwrap();
        assert_eq!(ch.observe().len(), 3);
        assert_eq!(chs.tag_hash_count(0), 1);
    }

    #[test]
    fn clear_id_is_constant() {
        let p = params();
        let mut rng = Rng::from_seed(8);
        let mut sys = ClearIdSystem::new(&p);
        sys.register(0, &mut rng).unwrap();
        let mut ch = Channel::new("clear_id", 8);
        for _ in 0..3 {
            sys.run_session(Some(0), &Capture::Absent, &mut ch, &mut rng)
                .unwrap();
        }
        let payloads: HashSet<_> = ch
            .observe()
            .events()
            .iter()
            .map(|e| e.payload.clone())
            .collect();
        assert_eq!(payloads.len(), 1);
        assert_eq!(ch.observe().events()[0].payload[0].width(), p.l);
    }
}
