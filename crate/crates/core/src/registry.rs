//! Protocol registry: every executable protocol behind one `Deployment`
//! interface, addressed by a string key.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{ChSystem, ClearIdSystem, RhlsSystem};
use crate::biohash::{BioHashKey, BioHasher, BiometricTemplate};
use crate::channel::{Channel, StepLabel};
use crate::error::{Error, Result};
use crate::primitives::{BitString, Rng, SystemParams};
use crate::protocol::{ProposedSystem, SessionOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKey {
    Proposed,
    Rhls,
    Ch,
    ClearId,
    /// Reference data only.
    Lcap,
    /// Reference data only.
    Lhyc,
}

impl ProtocolKey {
    pub const EXECUTABLE: [ProtocolKey; 4] = [
        ProtocolKey::Proposed,
        ProtocolKey::Rhls,
        ProtocolKey::Ch,
        ProtocolKey::ClearId,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolKey::Proposed => "proposed",
            ProtocolKey::Rhls => "rhls",
            ProtocolKey::Ch => "ch",
            ProtocolKey::ClearId => "clear_id",
            ProtocolKey::Lcap => "lcap",
            ProtocolKey::Lhyc => "lhyc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "proposed" => Ok(ProtocolKey::Proposed),
            "rhls" => Ok(ProtocolKey::Rhls),
            "ch" => Ok(ProtocolKey::Ch),
            "clear_id" => Ok(ProtocolKey::ClearId),
            "lcap" => Ok(ProtocolKey::Lcap),
            "lhyc" => Ok(ProtocolKey::Lhyc),
            _ => Err(Error::UnknownProtocol(s.to_string())),
        }
    }

    pub fn is_executable(self) -> bool {
        Self::EXECUTABLE.contains(&self)
    }
}

impl fmt::Display for ProtocolKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What the biometric sensor sees during a session.
#[derive(Debug, Clone, PartialEq)]
pub enum Capture {
    /// The tag's rightful holder, re-captured with noise.
    Genuine {
        noise_sigma: f64,
    },
    /// Somebody else.
    Impostor {
        subject_seed: u64,
        noise_sigma: f64,
    },
    Template(BiometricTemplate),
    Absent,
}

/// A running installation of one protocol: server state, issued tags and
/// their holders, plus hash-evaluation counters.
pub trait Deployment: Send {
    fn key(&self) -> ProtocolKey;
    fn params(&self) -> &SystemParams;

    fn register(&mut self, subject_seed: u64, rng: &mut Rng) -> Result<usize>;
    /// Re-installs a tag issued earlier (`gb` is ignored by protocols
    /// without a biometric stage).
    fn install_tag(
        &mut self,
        id: BitString,
        gb: BitString,
        subject_seed: u64,
        rng: &mut Rng,
    ) -> Result<usize>;
    fn tag_count(&self) -> usize;
    /// Long-term secrets stored on tag `index`.
    fn tag_secrets(&self, index: usize) -> Vec<BitString>;

    /// Runs one session on `channel`. `tag == None` means no genuine tag is
    /// present and only the adversary can answer the reader.
    fn run_session(
        &mut self,
        tag: Option<usize>,
        sensor: &Capture,
        channel: &mut Channel,
        rng: &mut Rng,
    ) -> Result<SessionOutcome>;

    /// A session in which the adversary plays the reader: the challenge and
    /// the reader proof reaching the tag are whatever the channel injects.
    /// Returns whether the tag accepted the reader.
    fn tag_probe(&mut self, tag: usize, channel: &mut Channel, rng: &mut Rng) -> Result<bool>;

    /// Serialized long-term state of the server and all tags.
    fn persistent_state(&self) -> Vec<u8>;

    fn tag_hash_count(&self, index: usize) -> u64;
    fn server_hash_count(&self) -> u64;
    fn reset_counters(&mut self);
    fn tag_storage_bits(&self) -> usize;

    /// Message boundaries at which a session can be killed.
    fn interruption_points(&self) -> Vec<StepLabel>;

    /// Whether `outcome` is a full success for this protocol's stages.
    fn session_complete(&self, outcome: &SessionOutcome) -> bool;
}

pub fn shared_hasher(params: &SystemParams) -> Arc<BioHasher> {
    Arc::new(BioHasher::new(BioHashKey::from_params(params), params))
}

pub fn deployment(key: ProtocolKey, params: &SystemParams) -> Result<Box<dyn Deployment>> {
    params.validate()?;
    deployment_with(key, params, shared_hasher(params))
}

/// Like [`deployment`], reusing a precomputed BioHash projection.
pub fn deployment_with(
    key: ProtocolKey,
    params: &SystemParams,
    bio: Arc<BioHasher>,
) -> Result<Box<dyn Deployment>> {
    Ok(match key {
        ProtocolKey::Proposed => Box::new(ProposedSystem::with_hasher(params, bio)),
        ProtocolKey::Rhls => Box::new(RhlsSystem::new(params)),
        ProtocolKey::Ch => Box::new(ChSystem::new(params)),
        ProtocolKey::ClearId => Box::new(ClearIdSystem::new(params)),
        ProtocolKey::Lcap | ProtocolKey::Lhyc => {
            return Err(Error::NotExecutable(key.name().into()))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_round_trip() {
        for k in ProtocolKey::EXECUTABLE {
            assert_eq!(ProtocolKey::parse(k.name()).unwrap(), k);
        }
        assert_eq!(
            ProtocolKey::parse("clear-id").unwrap(),
            ProtocolKey::ClearId
        );
        assert!(ProtocolKey::parse("nope").is_err());
    }

    #[test]
    fn reference_only_protocols_do_not_deploy() {
        let p = SystemParams::default();
        assert!(matches!(
            deployment(ProtocolKey::Lhyc, &p),
            Err(Error::NotExecutable(_))
        ));
        for k in ProtocolKey::EXECUTABLE {
            assert_eq!(deployment(k, &p).unwrap().key(), k);
        }
    }
}
