//! Enrollment database file.
//!
//! ```text
//! bioauthdb v1 l=128
//! subject-00000000000000ff <id_hex> <gb_hex>
//! ```

use std::fmt::Write as _;

use bioauth_core::biohash::{enroll_template, parse_subject_label, subject_label};
use bioauth_core::primitives::{BitString, Rng, SystemParams};
use bioauth_core::registry::{deployment_with, shared_hasher, Deployment, ProtocolKey};
use rand::RngCore;

use crate::error::CliError;

pub const HEADER: &str = "bioauthdb v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnrollmentRecord {
    pub subject_seed: u64,
    pub id: BitString,
    pub gb: BitString,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Enrollment {
    pub l: usize,
    pub records: Vec<EnrollmentRecord>,
}

impl Enrollment {
    pub fn to_text(&self) -> String {
        let mut s = format!("{HEADER} l={}\n", self.l);
        for r in &self.records {
            let _ = writeln!(
                s,
                "{} {} {}",
                subject_label(r.subject_seed),
                r.id.to_hex(),
                r.gb.to_hex()
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let l = header
            .strip_prefix(HEADER)
            .and_then(|rest| rest.strip_prefix(" l="))
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| CliError::usage(format!("not an enrollment file: header `{header}`")))?;
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| CliError::usage(format!("enrollment line {}: {what}", i + 2));
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [label, id, gb] = parts[..] else {
                return Err(bad("expected `<label> <id_hex> <gb_hex>`"));
            };
            let subject_seed =
                parse_subject_label(label).ok_or_else(|| bad("bad subject label"))?;
            let id = BitString::from_hex(id, l).map_err(|e| bad(&e.to_string()))?;
            let gb = BitString::from_hex(gb, l).map_err(|e| bad(&e.to_string()))?;
            records.push(EnrollmentRecord {
                subject_seed,
                id,
                gb,
            });
        }
        Ok(Enrollment { l, records })
    }
}

/// Registers `count` subjects on a fresh deployment of `key`.
pub fn enroll(
    key: ProtocolKey,
    params: &SystemParams,
    count: usize,
    rng: &mut Rng,
) -> Result<Enrollment, CliError> {
    let bio = shared_hasher(params);
    let mut d = deployment_with(key, params, bio.clone())?;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let subject_seed = rng.next_u64();
        let i = d.register(subject_seed, rng)?;
        let id = d.tag_secrets(i)[0].clone();
        let gb = bio.hash(&enroll_template(subject_seed, params))?;
        records.push(EnrollmentRecord {
            subject_seed,
            id,
            gb,
        });
    }
    Ok(Enrollment {
        l: params.l,
        records,
    })
}

/// A deployment of `key` holding exactly the enrolled tags.
pub fn deploy(
    key: ProtocolKey,
    params: &SystemParams,
    db: &Enrollment,
    rng: &mut Rng,
) -> Result<Box<dyn Deployment>, CliError> {
    if db.l != params.l {
        return Err(CliError::usage(format!(
            "enrollment file has l={}, run configured with l={}",
            db.l, params.l
        )));
    }
    let mut d = deployment_with(key, params, shared_hasher(params))?;
    for r in &db.records {
        d.install_tag(r.id.clone(), r.gb.clone(), r.subject_seed, rng)?;
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let params = SystemParams::default();
        let db = enroll(ProtocolKey::Proposed, &params, 4, &mut Rng::from_seed(9)).unwrap();
        let text = db.to_text();
        assert!(text.starts_with("bioauthdb v1 l=128\n"));
        assert_eq!(text.lines().count(), 5);
        assert_eq!(Enrollment::parse(&text).unwrap(), db);
    }

    #[test]
    fn empty_database() {
        let db = enroll(
            ProtocolKey::Proposed,
            &SystemParams::default(),
            0,
            &mut Rng::from_seed(1),
        )
        .unwrap();
        assert_eq!(db.to_text(), "bioauthdb v1 l=128\n");
        assert!(Enrollment::parse(&db.to_text()).unwrap().records.is_empty());
    }

    #[test]
    fn malformed_files_rejected() {
        assert!(Enrollment::parse("").is_err());
        assert!(Enrollment::parse("bioauthdb v2 l=128\n").is_err());
        assert!(Enrollment::parse("bioauthdb v1 l=128\nsubject-01 abc\n").is_err());
        assert!(Enrollment::parse("bioauthdb v1 l=128\nperson 00 00\n").is_err());
    }

    #[test]
    fn width_mismatch_rejected() {
        let db = Enrollment {
            l: 64,
            records: vec![],
        };
        let err = deploy(
            ProtocolKey::Proposed,
            &SystemParams::default(),
            &db,
            &mut Rng::from_seed(0),
        )
        .err()
        .expect("width mismatch");
        assert_eq!(err.exit_code(), crate::error::EXIT_USAGE);
    }
}
