//! Executable attack games run against any deployment in the registry.

use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::biohash::BioHasher;
use crate::channel::{
    Adversary, Channel, Direction, Goal, InFlight, Link, StepLabel, Transcript, Verdict,
};
use crate::error::{Error, Result};
use crate::primitives::{BitString, Rng, SystemParams};
use crate::registry::{deployment_with, shared_hasher, Capture, Deployment, ProtocolKey};

/// Sensor input for honest sessions inside the games.
pub const HONEST_CAPTURE: Capture = Capture::Genuine { noise_sigma: 0.0 };

/// Largest distinguishing advantage still counted as untraceable.
pub const TRACE_ADVANTAGE_BOUND: f64 = 0.05;

pub const MIN_TRACE_TRIALS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Claim {
    ImpersonatedTag,
    ImpersonatedReader,
    LearnedSecret,
    LinkedTags,
    Desynchronized,
    DeniedService,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Attack {
    #[serde(rename = "replay")]
    Replay,
    #[serde(rename = "ch-algebraic")]
    ChAlgebraic,
    #[serde(rename = "mitm")]
    Mitm,
    #[serde(rename = "trace")]
    Trace,
    #[serde(rename = "desync")]
    Desync,
    #[serde(rename = "dos")]
    Dos,
    #[serde(rename = "dy-search")]
    DySearch,
}

impl Attack {
    pub const ALL: [Attack; 7] = [
        Attack::Replay,
        Attack::ChAlgebraic,
        Attack::Mitm,
        Attack::Trace,
        Attack::Desync,
        Attack::Dos,
        Attack::DySearch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attack::Replay => "replay",
            Attack::ChAlgebraic => "ch-algebraic",
            Attack::Mitm => "mitm",
            Attack::Trace => "trace",
            Attack::Desync => "desync",
            Attack::Dos => "dos",
            Attack::DySearch => "dy-search",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

impl fmt::Display for Attack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub protocol: ProtocolKey,
    pub attack: Attack,
    pub succeeded: bool,
    pub claim: Claim,
    pub seed: u64,
    pub trace: Transcript,
    /// Game-specific report.
    pub detail: serde_json::Value,
}

impl AttackOutcome {
    pub fn to_json(&self, trace_ref: Option<&str>) -> serde_json::Value {
        serde_json::json!({
            "protocol": self.protocol,
            "attack": self.attack,
            "succeeded": self.succeeded,
            "claim": self.claim,
            "seed": self.seed,
            "trace_ref": trace_ref,
            "detail": self.detail,
        })
    }
}

/// Wraps a closure as an [`Adversary`].
pub struct ScriptedAdversary<F>(pub F);

impl<F> Adversary for ScriptedAdversary<F>
where
    F: FnMut(InFlight<'_>, &Transcript) -> Verdict + Send,
{
    fn intercept(&mut self, msg: InFlight<'_>, transcript: &Transcript) -> Verdict {
        (self.0)(msg, transcript)
    }
}

fn populate(
    key: ProtocolKey,
    params: &SystemParams,
    bio: Arc<BioHasher>,
    count: usize,
    rng: &mut Rng,
) -> Result<Box<dyn Deployment>> {
    let mut d = deployment_with(key, params, bio)?;
    for _ in 0..count {
        let subject = rng.next_u64();
        d.register(subject, rng)?;
    }
    Ok(d)
}

pub(crate) fn fresh_deployment(
    key: ProtocolKey,
    params: &SystemParams,
    rng: &mut Rng,
) -> Result<Box<dyn Deployment>> {
    params.validate()?;
    populate(key, params, shared_hasher(params), params.n.max(2), rng)
}

/// Tag-to-reader messages of one session, in order.
pub fn tag_messages(t: &Transcript, session: u32) -> Vec<(StepLabel, Vec<BitString>)> {
    t.session(session)
        .filter(|e| e.direction == Direction::TagToReader)
        .map(|e| (e.step, e.payload.clone()))
        .collect()
}

fn challenge_of(t: &Transcript, session: u32) -> Option<BitString> {
    t.find(session, StepLabel::Challenge)
        .and_then(|e| e.payload.first().cloned())
}

/// `nt ^ nr ^ nr2`: the tag nonce that makes `nr2 ^ nt' == nr ^ nt`.
pub fn shift_nonce(nt: &BitString, nr: &BitString, nr2: &BitString) -> Result<BitString> {
    nt.xor(nr)?.xor(nr2)
}

fn inject_all(ch: &mut Channel, session: u32, msgs: &[(StepLabel, Vec<BitString>)]) -> Result<()> {
    for (step, payload) in msgs {
        ch.inject(Link::TagReader, Some(session), *step, payload.clone())?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Replay

/// Records one honest session, then answers a fresh challenge with the
/// recorded tag messages while the genuine tag is absent.
pub fn replay_attack(
    key: ProtocolKey,
    params: &SystemParams,
    rng: &mut Rng,
) -> Result<AttackOutcome> {
    let mut d = fresh_deployment(key, params, rng)?;
    let mut ch = Channel::new(key.name(), params.rng_seed);
    let honest = d.run_session(Some(0), &HONEST_CAPTURE, &mut ch, rng)?;
    let recorded = tag_messages(ch.observe(), ch.session());
    let target = ch.session() + 1;
    inject_all(&mut ch, target, &recorded)?;
    let out = d.run_session(None, &Capture::Absent, &mut ch, rng)?;
    ch.clear_adversary();
    Ok(AttackOutcome {
        protocol: key,
        attack: Attack::Replay,
        succeeded: out.tag_authenticated,
        claim: Claim::ImpersonatedTag,
        seed: params.rng_seed,
        trace: ch.observe().clone(),
        detail: serde_json::json!({
            "honest_accepted": d.session_complete(&honest),
            "replayed": out,
            "agreement_violations": ch.agreement_violations().len(),
        }),
    })
}

// ---------------------------------------------------------------------------
// Algebraic replay

/// Replays a recorded response against a new challenge `nr'`, shifting the
/// tag nonce to `nt ^ nr ^ nr'`. Protocols without a reader challenge
/// reduce to plain replay.
pub fn algebraic_replay(
    key: ProtocolKey,
    params: &SystemParams,
    rng: &mut Rng,
) -> Result<AttackOutcome> {
    let mut d = fresh_deployment(key, params, rng)?;
    let mut ch = Channel::new(key.name(), params.rng_seed);
    d.run_session(Some(0), &HONEST_CAPTURE, &mut ch, rng)?;
    let s1 = ch.session();
    let recorded = tag_messages(ch.observe(), s1);
    let old_nr = challenge_of(ch.observe(), s1);
    let target = s1 + 1;
    let mut forged_nt = None;
    let script = recorded.clone();
    ch.install(
        Link::TagReader,
        Box::new(ScriptedAdversary(
            move |msg: InFlight<'_>, t: &Transcript| {
                if msg.session != target || msg.direction != Direction::TagToReader {
                    return Verdict::Forward;
                }
                let Some((_, payload)) = script.iter().find(|(s, _)| *s == msg.step) else {
                    return Verdict::Forward;
                };
                let mut payload = payload.clone();
                if msg.step == StepLabel::TagResponse {
                    if let (Some(nr), Some(nr2)) = (&old_nr, challenge_of(t, target)) {
                        if let Ok(nt2) = shift_nonce(&payload[0], nr, &nr2) {
                            payload[0] = nt2;
                        }
                    }
                }
                Verdict::Replace(payload)
            },
        )),
    )?;
    let out = d.run_session(None, &Capture::Absent, &mut ch, rng)?;
    ch.clear_adversary();
    if let Some(e) = ch.observe().find(target, StepLabel::TagResponse) {
        forged_nt = e.payload.first().map(BitString::to_hex);
    }
    Ok(AttackOutcome {
        protocol: key,
        attack: Attack::ChAlgebraic,
        succeeded: out.tag_authenticated,
        claim: Claim::ImpersonatedTag,
        seed: params.rng_seed,
        trace: ch.observe().clone(),
        detail: serde_json::json!({
            "forged_nt": forged_nt,
            "outcome": out,
        }),
    })
}

pub fn ch_algebraic_replay(params: &SystemParams, rng: &mut Rng) -> Result<AttackOutcome> {
    algebraic_replay(ProtocolKey::Ch, params, rng)
}

// ---------------------------------------------------------------------------
// Man in the middle

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Forward everything unchanged. Never counted.
    Relay,
    /// Look for secrets in observed traffic.
    Eavesdrop,
    Replay,
    NonceShift,
    /// Query the tag with an adversary nonce, replay the answer later.
    PrePlay,
    /// Combine fields from different recorded sessions.
    ResponseMix,
    /// Replay a reader challenge and proof to the tag.
    ReaderImpersonation,
    /// Carry a recorded biometric message into a session with an impostor
    /// at the sensor.
    BioSplice,
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategyResult {
    pub strategy: Strategy,
    pub counted: bool,
    pub accepted: bool,
    pub succeeded: bool,
    pub claim: Option<Claim>,
}

fn victim_violations(ch: &Channel, id: &BitString) -> Vec<Goal> {
    ch.agreement_violations()
        .into_iter()
        .filter(|v| v.id == *id)
        .map(|v| v.goal)
        .collect()
}

/// Whether any observed field, or the XOR of two equal-width fields of one
/// session, equals a secret.
pub fn leaks_secret(t: &Transcript, secrets: &[BitString]) -> bool {
    let mut sessions: Vec<u32> = t.events().iter().map(|e| e.session).collect();
    sessions.dedup();
    sessions.into_iter().any(|s| {
        let fields: Vec<&BitString> = t.session(s).flat_map(|e| e.payload.iter()).collect();
        fields.iter().enumerate().any(|(i, a)| {
            secrets.contains(a)
                || fields[i + 1..]
                    .iter()
                    .filter(|b| b.width() == a.width())
                    .any(|b| a.xor(b).is_ok_and(|x| secrets.contains(&x)))
        })
    })
}

/// Runs the scripted interleavings between a victim tag and the reader.
/// The adversary owns a registered tag of its own; acceptances for that tag
/// are legitimate.
pub fn mitm_relay(key: ProtocolKey, params: &SystemParams, rng: &mut Rng) -> Result<AttackOutcome> {
    let mut d = fresh_deployment(key, params, rng)?;
    let victim = 0;
    let victim_id = d.tag_secrets(victim)[0].clone();
    let secrets = d.tag_secrets(victim);
    let mut adv_rng = rng.substream("mitm-adversary");
    let mut ch = Channel::new(key.name(), params.rng_seed);
    let mut results = Vec::new();

    // Relay.
    ch.install(
        Link::TagReader,
        Box::new(ScriptedAdversary(|_: InFlight<'_>, _: &Transcript| {
            Verdict::Forward
        })),
    )?;
    let relay = d.run_session(Some(victim), &HONEST_CAPTURE, &mut ch, rng)?;
    ch.clear_adversary();
    let relay_session = ch.session();
    results.push(StrategyResult {
        strategy: Strategy::Relay,
        counted: false,
        accepted: d.session_complete(&relay),
        succeeded: false,
        claim: None,
    });
    let recorded = tag_messages(ch.observe(), relay_session);
    let relay_nr = challenge_of(ch.observe(), relay_session);
    let relay_q = ch
        .observe()
        .find(relay_session, StepLabel::ReaderProof)
        .map(|e| e.payload.clone());

    let mut judge =
        |ch: &Channel, strategy: Strategy, accepted: bool, extra: Option<Claim>, before: usize| {
            let violations = victim_violations(ch, &victim_id);
            let claim = extra.or_else(|| {
                violations[before.min(violations.len())..]
                    .first()
                    .map(|g| match g {
                        Goal::TagAuth => Claim::ImpersonatedTag,
                        Goal::ReaderAuth => Claim::ImpersonatedReader,
                    })
            });
            results.push(StrategyResult {
                strategy,
                counted: true,
                accepted,
                succeeded: claim.is_some(),
                claim,
            });
        };

    let leaked = leaks_secret(ch.observe(), &secrets);
    judge(
        &ch,
        Strategy::Eavesdrop,
        false,
        leaked.then_some(Claim::LearnedSecret),
        0,
    );

    // Replay.
    let before = victim_violations(&ch, &victim_id).len();
    let target = ch.session() + 1;
    inject_all(&mut ch, target, &recorded)?;
    let out = d.run_session(None, &Capture::Absent, &mut ch, rng)?;
    ch.clear_adversary();
    judge(&ch, Strategy::Replay, out.tag_authenticated, None, before);

    // Nonce shift.
    let before = victim_violations(&ch, &victim_id).len();
    let target = ch.session() + 1;
    let script = recorded.clone();
    let nr = relay_nr.clone();
    ch.install(
        Link::TagReader,
        Box::new(ScriptedAdversary(
            move |msg: InFlight<'_>, t: &Transcript| {
                if msg.session != target || msg.direction != Direction::TagToReader {
                    return Verdict::Forward;
                }
                match script.iter().find(|(s, _)| *s == msg.step) {
                    Some((step, payload)) => {
                        let mut payload = payload.clone();
                        if *step == StepLabel::TagResponse {
                            if let (Some(nr), Some(nr2)) = (&nr, challenge_of(t, target)) {
                                if let Ok(x) = shift_nonce(&payload[0], nr, &nr2) {
                                    payload[0] = x;
                                }
                            }
                        }
                        Verdict::Replace(payload)
                    }
                    None => Verdict::Forward,
                }
            },
        )),
    )?;
    let out = d.run_session(None, &Capture::Absent, &mut ch, rng)?;
    ch.clear_adversary();
    judge(
        &ch,
        Strategy::NonceShift,
        out.tag_authenticated,
        None,
        before,
    );

    // Pre-play: query the tag with an adversary nonce, replay the answer.
    let before = victim_violations(&ch, &victim_id).len();
    let target = ch.session() + 1;
    if let Some(nr) = &relay_nr {
        let fake = BitString::random(nr.width(), &mut adv_rng);
        ch.inject(
            Link::TagReader,
            Some(target),
            StepLabel::Challenge,
            vec![fake],
        )?;
    }
    d.run_session(Some(victim), &HONEST_CAPTURE, &mut ch, rng)?;
    ch.clear_adversary();
    let preplayed = tag_messages(ch.observe(), target);
    let target = ch.session() + 1;
    inject_all(&mut ch, target, &preplayed)?;
    let out = d.run_session(None, &Capture::Absent, &mut ch, rng)?;
    ch.clear_adversary();
    judge(&ch, Strategy::PrePlay, out.tag_authenticated, None, before);

    // Response mix: first field from the relayed session, the rest from the
    // pre-played one.
    let before = victim_violations(&ch, &victim_id).len();
    let mixed: Vec<(StepLabel, Vec<BitString>)> = preplayed
        .iter()
        .map(|(step, payload)| {
            let mut p = payload.clone();
            if let Some((_, r)) = recorded.iter().find(|(s, _)| s == step) {
                if let (Some(dst), Some(src)) = (p.first_mut(), r.first()) {
                    *dst = src.clone();
                }
            }
            (*step, p)
        })
        .collect();
    let target = ch.session() + 1;
    inject_all(&mut ch, target, &mixed)?;
    let out = d.run_session(None, &Capture::Absent, &mut ch, rng)?;
    ch.clear_adversary();
    judge(
        &ch,
        Strategy::ResponseMix,
        out.tag_authenticated,
        None,
        before,
    );

    // Reader impersonation against the tag.
    let before = victim_violations(&ch, &victim_id).len();
    let target = ch.session() + 1;
    let nr = relay_nr
        .clone()
        .unwrap_or_else(|| BitString::random(params.nonce_width, &mut adv_rng));
    ch.inject(
        Link::TagReader,
        Some(target),
        StepLabel::Challenge,
        vec![nr],
    )?;
    let q = relay_q.unwrap_or_else(|| vec![BitString::random(params.l / 2, &mut adv_rng)]);
    ch.inject(Link::TagReader, Some(target), StepLabel::ReaderProof, q)?;
    let accepted = d.tag_probe(victim, &mut ch, rng)?;
    ch.clear_adversary();
    judge(&ch, Strategy::ReaderImpersonation, accepted, None, before);

    // Biometric splice, only where a biometric message exists.
    if let Some((_, m)) = recorded.iter().find(|(s, _)| *s == StepLabel::BioMessage) {
        let before = victim_violations(&ch, &victim_id).len();
        let target = ch.session() + 1;
        ch.inject(
            Link::TagReader,
            Some(target),
            StepLabel::BioMessage,
            m.clone(),
        )?;
        let impostor = Capture::Impostor {
            subject_seed: adv_rng.next_u64(),
            noise_sigma: 0.0,
        };
        let out = d.run_session(Some(victim), &impostor, &mut ch, rng)?;
        ch.clear_adversary();
        judge(
            &ch,
            Strategy::BioSplice,
            out.bio_verified,
            out.bio_verified.then_some(Claim::ImpersonatedTag),
            before,
        );
    }

    let first = results.iter().find(|r| r.counted && r.succeeded);
    Ok(AttackOutcome {
        protocol: key,
        attack: Attack::Mitm,
        succeeded: first.is_some(),
        claim: first
            .and_then(|r| r.claim)
            .unwrap_or(Claim::ImpersonatedTag),
        seed: params.rng_seed,
        trace: ch.observe().clone(),
        detail: serde_json::json!({ "strategies": results }),
    })
}

// ---------------------------------------------------------------------------
// Traceability

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceResult {
    pub protocol: ProtocolKey,
    pub trials: usize,
    pub wins: usize,
    pub advantage: f64,
}

/// Generic linker: "same tag" iff some tag-sent field repeats between the
/// two sessions, or the tag-sent bits are far closer than chance.
pub fn distinguish(t: &Transcript, s1: u32, s2: u32) -> bool {
    let a = tag_messages(t, s1);
    let b = tag_messages(t, s2);
    let mut bits = 0usize;
    let mut distance = 0usize;
    for ((sa, pa), (sb, pb)) in a.iter().zip(&b) {
        if sa != sb {
            continue;
        }
        for (x, y) in pa.iter().zip(pb) {
            if x == y {
                return true;
            }
            if let Ok(dist) = x.hamming_distance(y) {
                bits += x.width();
                distance += dist;
            }
        }
    }
    if bits == 0 {
        return false;
    }
    let n = bits as f64;
    (distance as f64) < n / 2.0 - 2.0 * n.sqrt()
}

fn trace_trial(
    key: ProtocolKey,
    params: &SystemParams,
    bio: &Arc<BioHasher>,
    base: &Rng,
    index: u64,
) -> Result<(bool, Transcript)> {
    let mut r = base.substream_indexed("trace-trial", index);
    let mut d = populate(key, params, bio.clone(), 2, &mut r)?;
    let mut ch = Channel::new(key.name(), params.rng_seed);
    d.run_session(Some(0), &HONEST_CAPTURE, &mut ch, &mut r)?;
    let same = r.next_u32() & 1 == 0;
    d.run_session(
        Some(if same { 0 } else { 1 }),
        &HONEST_CAPTURE,
        &mut ch,
        &mut r,
    )?;
    let guess = distinguish(ch.observe(), 1, 2);
    Ok((guess == same, ch.observe().clone()))
}

/// The adversary sees tag A once, then A or B on a fair coin, and guesses.
pub fn trace_game(
    key: ProtocolKey,
    trials: usize,
    params: &SystemParams,
    rng: &mut Rng,
) -> Result<TraceResult> {
    trace_game_with_trace(key, trials, params, rng).map(|(r, _)| r)
}

/// [`trace_game`] plus the first trial's transcript.
pub fn trace_game_with_trace(
    key: ProtocolKey,
    trials: usize,
    params: &SystemParams,
    rng: &mut Rng,
) -> Result<(TraceResult, Transcript)> {
    if trials < MIN_TRACE_TRIALS {
        return Err(Error::Precondition(format!(
            "trace game needs at least {MIN_TRACE_TRIALS} trials, got {trials}"
        )));
    }
    params.validate()?;
    let bio = shared_hasher(params);
    let base = rng.substream("trace-game");
    let (first_win, first_trace) = trace_trial(key, params, &bio, &base, 0)?;
    let rest: Vec<bool> = (1..trials as u64)
        .into_par_iter()
        .map(|i| trace_trial(key, params, &bio, &base, i).map(|(w, _)| w))
        .collect::<Result<_>>()?;
    let wins = rest.iter().filter(|&&w| w).count() + first_win as usize;
    let rate = wins as f64 / trials as f64;
    Ok((
        TraceResult {
            protocol: key,
            trials,
            wins,
            advantage: (2.0 * rate - 1.0).abs(),
        },
        first_trace,
    ))
}

// ---------------------------------------------------------------------------
// Desynchronization

#[derive(Debug, Clone, Serialize)]
pub struct DesyncReport {
    pub protocol: ProtocolKey,
    pub passed: bool,
    /// Per point: whether the follow-up honest session fully succeeded with
    /// persistent state unchanged.
    pub points: Vec<(StepLabel, bool)>,
}

/// Kills a session at each point, then checks a fresh honest session.
pub fn desync_test(
    key: ProtocolKey,
    points: &[StepLabel],
    params: &SystemParams,
    rng: &mut Rng,
) -> Result<DesyncReport> {
    desync_test_with_trace(key, points, params, rng).map(|(r, _)| r)
}

pub fn desync_test_with_trace(
    key: ProtocolKey,
    points: &[StepLabel],
    params: &SystemParams,
    rng: &mut Rng,
) -> Result<(DesyncReport, Transcript)> {
    let mut d = fresh_deployment(key, params, rng)?;
    let snapshot = d.persistent_state();
    let mut ch = Channel::new(key.name(), params.rng_seed);
    let mut results = Vec::new();
    for &point in points {
        ch.interrupt_after(Some(point));
        d.run_session(Some(0), &HONEST_CAPTURE, &mut ch, rng)?;
        let kept = d.persistent_state() == snapshot;
        ch.interrupt_after(None);
        let fresh = d.run_session(Some(0), &HONEST_CAPTURE, &mut ch, rng)?;
        let ok = kept && d.session_complete(&fresh) && d.persistent_state() == snapshot;
        results.push((point, ok));
    }
    Ok((
        DesyncReport {
            protocol: key,
            passed: results.iter().all(|(_, ok)| *ok),
            points: results,
        },
        ch.observe().clone(),
    ))
}

// ---------------------------------------------------------------------------
// Denial of service

#[derive(Debug, Clone, Serialize)]
pub struct DosReport {
    pub protocol: ProtocolKey,
    pub passed: bool,
    pub bogus_sessions: usize,
    pub db_size: usize,
    pub max_server_hashes: u64,
    /// Bogus sessions whose server work was exactly one full database scan.
    pub full_scan_sessions: usize,
    pub state_identical: bool,
    pub honest_accepted: bool,
}

/// Floods the reader with adversary sessions carrying random, correctly
/// shaped tag messages, then runs one honest session.
pub fn dos_flood_test(
    key: ProtocolKey,
    bogus: usize,
    params: &SystemParams,
    rng: &mut Rng,
) -> Result<DosReport> {
    dos_flood_test_with_trace(key, bogus, params, rng).map(|(r, _)| r)
}

pub fn dos_flood_test_with_trace(
    key: ProtocolKey,
    bogus: usize,
    params: &SystemParams,
    rng: &mut Rng,
) -> Result<(DosReport, Transcript)> {
    let mut d = fresh_deployment(key, params, rng)?;

    // Learn message shapes from one honest session on a scratch channel.
    let mut scratch = Channel::new(key.name(), params.rng_seed);
    d.run_session(Some(0), &HONEST_CAPTURE, &mut scratch, rng)?;
    let shapes: Vec<(StepLabel, Vec<usize>)> = tag_messages(scratch.observe(), 1)
        .into_iter()
        .map(|(s, p)| (s, p.iter().map(BitString::width).collect()))
        .collect();

    let snapshot = d.persistent_state();
    let db_size = d.tag_count();
    let mut adv_rng = rng.substream("dos-adversary");
    let mut ch = Channel::new(key.name(), params.rng_seed);
    ch.install(
        Link::TagReader,
        Box::new(ScriptedAdversary(
            move |msg: InFlight<'_>, _: &Transcript| {
                if msg.direction != Direction::TagToReader {
                    return Verdict::Forward;
                }
                match shapes.iter().find(|(s, _)| *s == msg.step) {
                    Some((_, widths)) => Verdict::Replace(
                        widths
                            .iter()
                            .map(|&w| BitString::random(w, &mut adv_rng))
                            .collect(),
                    ),
                    None => Verdict::Forward,
                }
            },
        )),
    )?;
    let mut max = 0;
    let mut full = 0;
    for _ in 0..bogus {
        let before = d.server_hash_count();
        d.run_session(None, &Capture::Absent, &mut ch, rng)?;
        let work = d.server_hash_count() - before;
        max = max.max(work);
        full += usize::from(work == db_size as u64);
    }
    ch.clear_adversary();
    let state_identical = d.persistent_state() == snapshot;
    let honest = d.run_session(Some(0), &HONEST_CAPTURE, &mut ch, rng)?;
    let honest_accepted = d.session_complete(&honest);
    Ok((
        DosReport {
            protocol: key,
            passed: honest_accepted && state_identical && max <= db_size as u64 + 1,
            bogus_sessions: bogus,
            db_size,
            max_server_hashes: max,
            full_scan_sessions: full,
            state_identical,
            honest_accepted,
        },
        ch.observe().clone(),
    ))
}

// ---------------------------------------------------------------------------

fn report_json<T: Serialize>(r: &T) -> serde_json::Value {
    serde_json::to_value(r).expect("reports serialize")
}

/// Knobs for [`run_attack`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GameConfig {
    pub trials: usize,
    pub bogus_sessions: usize,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            trials: 10_000,
            bogus_sessions: 10_000,
        }
    }
}

/// Runs one concrete game and wraps its result. `dy-search` is symbolic and
/// lives in [`crate::dolev_yao`].
pub fn run_attack(
    attack: Attack,
    key: ProtocolKey,
    params: &SystemParams,
    cfg: GameConfig,
    rng: &mut Rng,
) -> Result<AttackOutcome> {
    let wrap = |succeeded, claim, trace, detail| AttackOutcome {
        protocol: key,
        attack,
        succeeded,
        claim,
        seed: params.rng_seed,
        trace,
        detail,
    };
    match attack {
        Attack::Replay => replay_attack(key, params, rng),
        Attack::ChAlgebraic => algebraic_replay(key, params, rng),
        Attack::Mitm => mitm_relay(key, params, rng),
        Attack::Trace => {
            let (r, t) = trace_game_with_trace(key, cfg.trials, params, rng)?;
            Ok(wrap(
                r.advantage > TRACE_ADVANTAGE_BOUND,
                Claim::LinkedTags,
                t,
                report_json(&r),
            ))
        }
        Attack::Desync => {
            let points =
                fresh_deployment(key, params, &mut rng.substream("points"))?.interruption_points();
            let (r, t) = desync_test_with_trace(key, &points, params, rng)?;
            Ok(wrap(!r.passed, Claim::Desynchronized, t, report_json(&r)))
        }
        Attack::Dos => {
            let (r, t) = dos_flood_test_with_trace(key, cfg.bogus_sessions, params, rng)?;
            Ok(wrap(!r.passed, Claim::DeniedService, t, report_json(&r)))
        }
        Attack::DySearch => Err(Error::Precondition("dy-search is a symbolic search".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SystemParams {
        SystemParams::default()
    }

    #[test]
    fn attack_names_round_trip() {
        for a in Attack::ALL {
            assert_eq!(Attack::parse(a.name()), Some(a));
        }
        assert_eq!(Attack::parse("nope"), None);
    }

    #[test]
    fn shift_nonce_identities() {
        let mut rng = Rng::from_seed(1);
        let nt = BitString::random(128, &mut rng);
        let nr = BitString::random(128, &mut rng);
        let nr2 = BitString::random(128, &mut rng);
        assert_eq!(shift_nonce(&nt, &nr, &nr).unwrap(), nt);
        let shifted = shift_nonce(&nt, &nr, &nr2).unwrap();
        assert_eq!(nr2.xor(&shifted).unwrap(), nr.xor(&nt).unwrap());
    }

    #[test]
    fn replay_outcomes_by_protocol() {
        let p = params();
        for (key, expect) in [
            (ProtocolKey::Rhls, true),
            (ProtocolKey::ClearId, true),
            (ProtocolKey::Proposed, false),
            (ProtocolKey::Ch, false),
        ] {
            for seed in 0..20 {
                let out = replay_attack(key, &p, &mut Rng::from_seed(seed)).unwrap();
                assert_eq!(out.succeeded, expect, "{key} seed {seed}");
            }
        }
    }

    #[test]
    fn algebraic_replay_breaks_ch_only() {
        let p = params();
        for seed in 0..20 {
            assert!(
                ch_algebraic_replay(&p, &mut Rng::from_seed(seed))
                    .unwrap()
                    .succeeded
            );
            assert!(
                !algebraic_replay(ProtocolKey::Proposed, &p, &mut Rng::from_seed(seed))
                    .unwrap()
                    .succeeded
            );
        }
    }

    #[test]
    fn mitm_results() {
        let p = params();
        let prop = mitm_relay(ProtocolKey::Proposed, &p, &mut Rng::from_seed(3)).unwrap();
        assert!(!prop.succeeded, "{}", prop.detail);
        let strategies = prop.detail["strategies"].as_array().unwrap();
        // Relay is accepted but not counted.
        assert_eq!(strategies[0]["strategy"], "relay");
        assert_eq!(strategies[0]["accepted"], true);
        assert_eq!(strategies[0]["counted"], false);
        assert_eq!(strategies.len(), 8);

        let rhls = mitm_relay(ProtocolKey::Rhls, &p, &mut Rng::from_seed(3)).unwrap();
        assert!(rhls.succeeded);
        assert_eq!(rhls.detail["strategies"][2]["strategy"], "replay");
        assert_eq!(rhls.detail["strategies"][2]["succeeded"], true);

        let clear = mitm_relay(ProtocolKey::ClearId, &p, &mut Rng::from_seed(3)).unwrap();
        assert_eq!(clear.claim, Claim::LearnedSecret);

        let ch = mitm_relay(ProtocolKey::Ch, &p, &mut Rng::from_seed(3)).unwrap();
        assert!(ch.succeeded);
        assert_eq!(ch.detail["strategies"][3]["succeeded"], true);
    }

    #[test]
    fn trace_game_calibration() {
        let p = params();
        let clear = trace_game(ProtocolKey::ClearId, 400, &p, &mut Rng::from_seed(1)).unwrap();
        assert!(clear.advantage >= 0.95, "{clear:?}");
        let prop = trace_game(ProtocolKey::Proposed, 2000, &p, &mut Rng::from_seed(1)).unwrap();
        assert!(prop.advantage <= 0.08, "{prop:?}");
        assert!(trace_game(ProtocolKey::Proposed, 0, &p, &mut Rng::from_seed(1)).is_err());
    }

    #[test]
    fn trace_game_is_deterministic() {
        let p = params();
        let a = trace_game(ProtocolKey::Ch, 150, &p, &mut Rng::from_seed(9)).unwrap();
        let b = trace_game(ProtocolKey::Ch, 150, &p, &mut Rng::from_seed(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn distinguisher_on_identical_fields() {
        let mut t = Channel::new("x", 0);
        for _ in 0..2 {
            t.begin_session();
            t.transmit(
                StepLabel::TagResponse,
                Direction::TagToReader,
                Some(vec![BitString::from_hex("abcd", 16).unwrap()]),
            );
        }
        assert!(distinguish(t.observe(), 1, 2));
    }

    #[test]
    fn desync_all_points() {
        let p = params();
        for key in ProtocolKey::EXECUTABLE {
            let mut rng = Rng::from_seed(4);
            let points = deployment_with(key, &p, shared_hasher(&p))
                .unwrap()
                .interruption_points();
            let r = desync_test(key, &points, &p, &mut rng).unwrap();
            assert!(r.passed, "{key}: {r:?}");
            assert!(desync_test(key, &[], &p, &mut rng).unwrap().passed);
        }
    }

    #[test]
    fn dos_flood_counts_full_scans() {
        let p = params();
        let r = dos_flood_test(ProtocolKey::Proposed, 200, &p, &mut Rng::from_seed(5)).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.full_scan_sessions, 200);
        assert_eq!(r.max_server_hashes, p.n as u64);
        assert!(
            dos_flood_test(ProtocolKey::Proposed, 0, &p, &mut Rng::from_seed(5))
                .unwrap()
                .passed
        );
    }

    #[test]
    fn leak_detection() {
        let mut ch = Channel::new("x", 0);
        let mut rng = Rng::from_seed(6);
        let secret = BitString::random(64, &mut rng);
        let mask = BitString::random(64, &mut rng);
        ch.begin_session();
        ch.transmit(
            StepLabel::TagResponse,
            Direction::TagToReader,
            Some(vec![mask.clone(), secret.xor(&mask).unwrap()]),
        );
        assert!(leaks_secret(ch.observe(), &[secret]));
        assert!(!leaks_secret(
            ch.observe(),
            &[BitString::random(64, &mut rng)]
        ));
    }

    #[test]
    fn outcome_json_shape() {
        let out = replay_attack(ProtocolKey::Rhls, &params(), &mut Rng::from_seed(1)).unwrap();
        let v = out.to_json(Some("trace.jsonl"));
        for k in ["protocol", "attack", "succeeded", "seed", "trace_ref"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert_eq!(v["protocol"], "rhls");
        assert_eq!(v["attack"], "replay");
    }
}
