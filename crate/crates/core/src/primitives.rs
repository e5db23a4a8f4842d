//! Bit-exact building blocks: fixed-width bit strings, the one-way hash used
//! by every protocol, and the seedable generator all randomness flows from.

use std::cell::Cell;
use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256, Sha512};

use crate::error::{Error, Result};

/// Fixed-width bit vector, most significant bit first.
///
/// Bits are packed big-endian into bytes; the unused low bits of the final
/// byte are always zero so that byte equality is bit equality.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitString {
    bytes: Vec<u8>,
    width: usize,
}

impl BitString {
    pub fn zeros(width: usize) -> Self {
        BitString {
            bytes: vec![0; width.div_ceil(8)],
            width,
        }
    }

    pub fn empty() -> Self {
        Self::zeros(0)
    }

    /// Builds from packed big-endian bytes, keeping the first `width` bits.
    pub fn from_bytes(bytes: &[u8], width: usize) -> Result<Self> {
        if bytes.len() * 8 < width {
            return Err(Error::width(format!(
                "{} bytes cannot hold {width} bits",
                bytes.len()
            )));
        }
        let mut out = BitString {
            bytes: bytes[..width.div_ceil(8)].to_vec(),
            width,
        };
        out.clear_padding();
        Ok(out)
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut out = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            out.set(i, b);
        }
        out
    }

    /// Parses a string of `0`/`1` characters.
    pub fn parse_binary(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::width(format!("invalid binary digit {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_bits(&bits))
    }

    /// Parses lowercase or uppercase hex (no prefix) of `width` bits.
    pub fn from_hex(s: &str, width: usize) -> Result<Self> {
        if !s.len().is_multiple_of(2) {
            return Err(Error::width(format!("odd-length hex string {s:?}")));
        }
        let bytes = (0..s.len())
            .step_by(2)
            .map(|i| {
                u8::from_str_radix(&s[i..i + 2], 16)
                    .map_err(|_| Error::width(format!("invalid hex {s:?}")))
            })
            .collect::<Result<Vec<u8>>>()?;
        if bytes.len() != width.div_ceil(8) {
            return Err(Error::width(format!(
                "hex of {} bytes does not encode {width} bits",
                bytes.len()
            )));
        }
        let out = Self::from_bytes(&bytes, width)?;
        if out.bytes != bytes {
            return Err(Error::width("non-zero padding bits in hex".to_string()));
        }
        Ok(out)
    }

    pub fn random(width: usize, rng: &mut Rng) -> Self {
        let mut bytes = vec![0u8; width.div_ceil(8)];
        rng.fill_bytes(&mut bytes);
        let mut out = BitString { bytes, width };
        out.clear_padding();
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.width, "bit index {i} out of range {}", self.width);
        self.bytes[i / 8] & (0x80 >> (i % 8)) != 0
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.width, "bit index {i} out of range {}", self.width);
        let mask = 0x80 >> (i % 8);
        if value {
            self.bytes[i / 8] |= mask;
        } else {
            self.bytes[i / 8] &= !mask;
        }
    }

    pub fn flip(&mut self, i: usize) {
        let b = self.bit(i);
        self.set(i, !b);
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.width).map(|i| self.bit(i))
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.bytes.iter().all(|&b| b == 0)
    }

    pub fn hamming_distance(&self, other: &BitString) -> Result<usize> {
        self.check_same_width(other)?;
        Ok(self
            .bytes
            .iter()
            .zip(&other.bytes)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    pub fn xor(&self, other: &BitString) -> Result<BitString> {
        self.check_same_width(other)?;
        Ok(BitString {
            bytes: self
                .bytes
                .iter()
                .zip(&other.bytes)
                .map(|(a, b)| a ^ b)
                .collect(),
            width: self.width,
        })
    }

    pub fn concat(&self, other: &BitString) -> BitString {
        if self.width.is_multiple_of(8) {
            let mut bytes = self.bytes.clone();
            bytes.extend_from_slice(&other.bytes);
            return BitString {
                bytes,
                width: self.width + other.width,
            };
        }
        let mut out = BitString::zeros(self.width + other.width);
        out.bytes[..self.bytes.len()].copy_from_slice(&self.bytes);
        for (i, b) in other.bits().enumerate() {
            if b {
                out.set(self.width + i, true);
            }
        }
        out
    }

    /// Bits `[start, start + len)` as a new string.
    pub fn slice(&self, start: usize, len: usize) -> BitString {
        assert!(start + len <= self.width, "slice out of range");
        if start.is_multiple_of(8) {
            return BitString::from_bytes(&self.bytes[start / 8..], len)
                .expect("slice fits in source");
        }
        let mut out = BitString::zeros(len);
        for i in 0..len {
            if self.bit(start + i) {
                out.set(i, true);
            }
        }
        out
    }

    /// Splits into (left, right) halves; the left half holds the leading bits.
    pub fn split_halves(&self) -> Result<(BitString, BitString)> {
        if !self.width.is_multiple_of(2) {
            return Err(Error::width(format!(
                "cannot split odd width {} into halves",
                self.width
            )));
        }
        let half = self.width / 2;
        Ok((self.slice(0, half), self.slice(half, half)))
    }

    pub fn left_half(&self) -> Result<BitString> {
        self.split_halves().map(|(l, _)| l)
    }

    pub fn right_half(&self) -> Result<BitString> {
        self.split_halves().map(|(_, r)| r)
    }

    /// Cyclic left rotation by `k` positions (taken modulo the width).
    pub fn rotate_left(&self, k: usize) -> BitString {
        if self.width == 0 {
            return self.clone();
        }
        let k = k % self.width;
        let mut out = BitString::zeros(self.width);
        for i in 0..self.width {
            if self.bit((i + k) % self.width) {
                out.set(i, true);
            }
        }
        out
    }

    /// Interprets the bits as an unsigned big-endian integer and reduces it
    /// modulo `m`.
    pub fn mod_small(&self, m: usize) -> usize {
        assert!(m > 0, "modulus must be positive");
        let m = m as u128;
        let mut acc: u128 = 0;
        for b in self.bits() {
            acc = (acc * 2 + b as u128) % m;
        }
        acc as usize
    }

    /// Lowercase hex of the packed bytes, no prefix.
    pub fn to_hex(&self) -> String {
        self.bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_binary(&self) -> String {
        self.bits().map(|b| if b { '1' } else { '0' }).collect()
    }

    /// True when `needle` occurs as a contiguous run of bits anywhere in self.
    pub fn contains_bits(&self, needle: &BitString) -> bool {
        if needle.width > self.width {
            return false;
        }
        if needle.width == 0 {
            return true;
        }
        (0..=self.width - needle.width).any(|start| self.slice(start, needle.width) == *needle)
    }

    /// Width-prefixed byte encoding used for state snapshots.
    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.width as u32).to_be_bytes());
        out.extend_from_slice(&self.bytes);
    }

    fn check_same_width(&self, other: &BitString) -> Result<()> {
        if self.width != other.width {
            return Err(Error::width(format!(
                "operands have widths {} and {}",
                self.width, other.width
            )));
        }
        Ok(())
    }

    fn clear_padding(&mut self) {
        let rem = self.width % 8;
        if rem != 0 {
            if let Some(last) = self.bytes.last_mut() {
                *last &= 0xffu8 << (8 - rem);
            }
        }
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for BitString {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.width <= 32 {
            write!(f, "BitString({}b:{})", self.width, self.to_binary())
        } else {
            write!(f, "BitString({}b:{})", self.width, self.to_hex())
        }
    }
}

pub fn xor(a: &BitString, b: &BitString) -> Result<BitString> {
    a.xor(b)
}

pub fn concat(a: &BitString, b: &BitString) -> BitString {
    a.concat(b)
}

pub fn split_halves(h: &BitString) -> Result<(BitString, BitString)> {
    h.split_halves()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DigestAlgorithm {
    #[default]
    Sha256,
    Sha512,
}

impl DigestAlgorithm {
    pub fn name(self) -> &'static str {
        match self {
            DigestAlgorithm::Sha256 => "sha256",
            DigestAlgorithm::Sha512 => "sha512",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sha256" | "sha-256" => Ok(DigestAlgorithm::Sha256),
            "sha512" | "sha-512" => Ok(DigestAlgorithm::Sha512),
            other => Err(Error::InvalidParams(format!("unknown digest `{other}`"))),
        }
    }

    fn digest(self, chunks: &[&[u8]]) -> Vec<u8> {
        match self {
            DigestAlgorithm::Sha256 => {
                let mut h = Sha256::new();
                for c in chunks {
                    h.update(c);
                }
                h.finalize().to_vec()
            }
            DigestAlgorithm::Sha512 => {
                let mut h = Sha512::new();
                for c in chunks {
                    h.update(c);
                }
                h.finalize().to_vec()
            }
        }
    }
}

/// Deployment-wide parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Hash output width in bits; the protocols' unit `l`.
    pub l: usize,
    pub nonce_width: usize,
    /// Number of enrolled tags used by games that build their own deployment.
    pub n: usize,
    /// Biometric feature dimension.
    pub d: usize,
    /// Hamming-distance match threshold in bits.
    pub epsilon: usize,
    pub rng_seed: u64,
    pub digest: DigestAlgorithm,
    /// Seed of the deployment-wide BioHash projection.
    pub biohash_key: u64,
}

pub const DEFAULT_BIOHASH_KEY: u64 = 0x05ee_db10_4a54;

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams {
            l: 128,
            nonce_width: 128,
            n: 10,
            d: 256,
            epsilon: 19,
            rng_seed: 0,
            digest: DigestAlgorithm::Sha256,
            biohash_key: DEFAULT_BIOHASH_KEY,
        }
    }
}

impl SystemParams {
    /// Default parameters at hash width `l` (nonce width and epsilon follow l).
    pub fn with_l(l: usize) -> Self {
        SystemParams {
            l,
            nonce_width: l,
            epsilon: default_epsilon(l),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l == 0 || !self.l.is_multiple_of(2) {
            return Err(Error::InvalidParams(format!(
                "l must be positive and even, got {}",
                self.l
            )));
        }
        if self.epsilon > self.l {
            return Err(Error::InvalidParams(format!(
                "epsilon {} exceeds l {}",
                self.epsilon, self.l
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidParams("n must be at least 1".into()));
        }
        if self.d == 0 {
            return Err(Error::InvalidParams("d must be at least 1".into()));
        }
        if self.nonce_width == 0 {
            return Err(Error::InvalidParams("nonce width must be positive".into()));
        }
        Ok(())
    }
}

/// Default match threshold: 15% of the hash width, rounded down.
pub fn default_epsilon(l: usize) -> usize {
    l * 15 / 100
}

/// One-way hash of `data` to exactly `params.l` bits.
///
/// The configured digest is applied to the packed bytes; inputs whose width
/// is not a whole number of bytes get their bit width appended so that
/// padding cannot collide. Outputs longer than one digest block are
/// extended in counter mode.
pub fn hash(data: &BitString, params: &SystemParams) -> BitString {
    hash_to(data, params.l, params.digest)
}

pub fn hash_to(data: &BitString, out_width: usize, digest: DigestAlgorithm) -> BitString {
    let suffix = if data.width().is_multiple_of(8) {
        Vec::new()
    } else {
        (data.width() as u64).to_be_bytes().to_vec()
    };
    let mut out = digest.digest(&[data.as_bytes(), &suffix]);
    let mut counter: u32 = 1;
    while out.len() * 8 < out_width {
        let block = digest.digest(&[data.as_bytes(), &suffix, &counter.to_be_bytes()]);
        out.extend_from_slice(&block);
        counter += 1;
    }
    BitString::from_bytes(&out, out_width).expect("digest output covers width")
}

/// Hash function that counts its evaluations, one instance per party.
#[derive(Debug, Clone)]
pub struct MeteredHash {
    l: usize,
    digest: DigestAlgorithm,
    count: Cell<u64>,
}

impl MeteredHash {
    pub fn new(params: &SystemParams) -> Self {
        MeteredHash {
            l: params.l,
            digest: params.digest,
            count: Cell::new(0),
        }
    }

    pub fn eval(&self, data: &BitString) -> BitString {
        self.count.set(self.count.get() + 1);
        hash_to(data, self.l, self.digest)
    }

    pub fn count(&self) -> u64 {
        self.count.get()
    }

    pub fn reset(&self) {
        self.count.set(0);
    }
}

/// Deterministic generator keyed by a 32-byte seed, with named substreams
/// derived from that seed (not from the current position).
#[derive(Clone)]
pub struct Rng {
    key: [u8; 32],
    inner: ChaCha20Rng,
}

impl Rng {
    pub fn from_seed(seed: u64) -> Self {
        let key: [u8; 32] =
            Sha256::digest([b"bioauth-rng/".as_slice(), &seed.to_be_bytes()].concat()).into();
        Self::from_key(key)
    }

    fn from_key(key: [u8; 32]) -> Self {
        Rng {
            key,
            inner: ChaCha20Rng::from_seed(key),
        }
    }

    pub fn substream(&self, label: &str) -> Rng {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update(b"/");
        h.update(label.as_bytes());
        Self::from_key(h.finalize().into())
    }

    pub fn substream_indexed(&self, label: &str, index: u64) -> Rng {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update(b"/");
        h.update(label.as_bytes());
        h.update(b"#");
        h.update(index.to_be_bytes());
        Self::from_key(h.finalize().into())
    }
}

impl fmt::Debug for Rng {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Rng").finish_non_exhaustive()
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

pub fn next_nonce(rng: &mut Rng, params: &SystemParams) -> BitString {
    BitString::random(params.nonce_width, rng)
}
