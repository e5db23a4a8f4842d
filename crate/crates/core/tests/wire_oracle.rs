//! Recomputes every wire message from the tag secrets with SHA-256 called
//! directly, independent of the library's bit-string and hash helpers.

use bioauth_core::adversary::HONEST_CAPTURE;
use bioauth_core::channel::{Channel, StepLabel, Transcript};
use bioauth_core::primitives::{Rng, SystemParams};
use bioauth_core::registry::{deployment, Deployment, ProtocolKey};
use rand::RngCore;
use sha2::{Digest, Sha256};

fn unhex(s: &str) -> Vec<u8> {
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
        .collect()
}

fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

fn xor(a: &[u8], b: &[u8]) -> Vec<u8> {
    a.iter().zip(b).map(|(x, y)| x ^ y).collect()
}

/// First 128 bits of SHA-256.
fn h(parts: &[&[u8]]) -> Vec<u8> {
    let mut d = Sha256::new();
    for p in parts {
        d.update(p);
    }
    d.finalize()[..16].to_vec()
}

fn field(t: &Transcript, session: u32, step: StepLabel, i: usize) -> Vec<u8> {
    unhex(
        &t.find(session, step)
            .unwrap_or_else(|| panic!("{step:?} missing"))
            .payload[i]
            .to_hex(),
    )
}

fn setup(key: ProtocolKey, seed: u64) -> (Box<dyn Deployment>, Channel, Rng) {
    let params = SystemParams::default();
    let mut rng = Rng::from_seed(seed);
    let mut d = deployment(key, &params).unwrap();
    for _ in 0..3 {
        let s = rng.next_u64();
        d.register(s, &mut rng).unwrap();
    }
    (d, Channel::new(key.name(), seed), rng)
}

#[test]
fn proposed_messages() {
    for seed in 0..20 {
        let (mut d, mut ch, mut rng) = setup(ProtocolKey::Proposed, seed);
        let tag = (seed % 3) as usize;
        let out = d
            .run_session(Some(tag), &HONEST_CAPTURE, &mut ch, &mut rng)
            .unwrap();
        assert!(out.fully_accepted());
        let secrets = d.tag_secrets(tag);
        let (id, gb) = (unhex(&secrets[0].to_hex()), unhex(&secrets[1].to_hex()));
        let t = ch.observe();
        let nr = field(t, 1, StepLabel::Challenge, 0);
        let nt = field(t, 1, StepLabel::TagResponse, 0);
        let core = h(&[&xor(&id, &nt), &nr]);
        assert_eq!(
            hex(&field(t, 1, StepLabel::TagResponse, 1)),
            hex(&core[..8])
        );
        assert_eq!(
            hex(&field(t, 1, StepLabel::ReaderProof, 0)),
            hex(&core[8..])
        );
        let m = xor(&xor(&h(&[&id, &nt, &nr]), &gb), &nt);
        assert_eq!(hex(&field(t, 1, StepLabel::BioMessage, 0)), hex(&m));
    }
}

#[test]
fn rhls_messages() {
    for seed in 0..20 {
        let (mut d, mut ch, mut rng) = setup(ProtocolKey::Rhls, seed);
        d.run_session(Some(1), &HONEST_CAPTURE, &mut ch, &mut rng)
            .unwrap();
        let id = unhex(&d.tag_secrets(1)[0].to_hex());
        let t = ch.observe();
        let nt = field(t, 1, StepLabel::TagResponse, 0);
        assert_eq!(
            hex(&field(t, 1, StepLabel::TagResponse, 1)),
            hex(&h(&[&id, &nt]))
        );
    }
}

#[test]
fn ch_messages() {
    for seed in 0..20 {
        let (mut d, mut ch, mut rng) = setup(ProtocolKey::Ch, seed);
        let out = d
            .run_session(Some(2), &HONEST_CAPTURE, &mut ch, &mut rng)
            .unwrap();
        assert!(out.tag_authenticated && out.reader_authenticated);
        let id = unhex(&d.tag_secrets(2)[0].to_hex());
        let t = ch.observe();
        let nr = field(t, 1, StepLabel::Challenge, 0);
        let nt = field(t, 1, StepLabel::TagResponse, 0);
        let g = u128::from_be_bytes(h(&[&xor(&xor(&nr, &nt), &id)]).try_into().unwrap());
        let id = u128::from_be_bytes(id.try_into().unwrap());
        let value = (id.rotate_left((g % 128) as u32) ^ g).to_be_bytes();
        assert_eq!(
            hex(&field(t, 1, StepLabel::TagResponse, 1)),
            hex(&value[..8])
        );
        assert_eq!(
            hex(&field(t, 1, StepLabel::ReaderProof, 0)),
            hex(&value[8..])
        );
    }
}

#[test]
fn clear_id_sends_the_id() {
    let (mut d, mut ch, mut rng) = setup(ProtocolKey::ClearId, 5);
    d.run_session(Some(0), &HONEST_CAPTURE, &mut ch, &mut rng)
        .unwrap();
    assert_eq!(
        field(ch.observe(), 1, StepLabel::TagResponse, 0),
        unhex(&d.tag_secrets(0)[0].to_hex())
    );
}
