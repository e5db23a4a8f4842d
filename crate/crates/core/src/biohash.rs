//! Simulated biometrics: enrollment templates, noisy re-captures, the BioHash
//! transform and tolerant comparison.
//!
//! Features are standard-normal vectors; the BioHash projects them onto `l`
//! pseudo-random unit directions derived from a deployment-wide key and
//! keeps the sign of each projection. Directions are orthonormalised when
//! `l <= d`.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::primitives::{BitString, Rng, SystemParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiometricTemplate {
    pub subject_id: String,
    pub features: Vec<f64>,
}

impl BiometricTemplate {
    pub fn new(subject_id: impl Into<String>, features: Vec<f64>) -> Result<Self> {
        if features.iter().any(|f| !f.is_finite()) {
            return Err(Error::InvalidParams(
                "template features must be finite".into(),
            ));
        }
        Ok(BiometricTemplate {
            subject_id: subject_id.into(),
            features,
        })
    }

    pub fn dimension(&self) -> usize {
        self.features.len()
    }

    pub fn squared_distance(&self, other: &BiometricTemplate) -> f64 {
        self.features
            .iter()
            .zip(&other.features)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn negated(&self) -> BiometricTemplate {
        BiometricTemplate {
            subject_id: self.subject_id.clone(),
            features: self.features.iter().map(|f| -f).collect(),
        }
    }
}

pub fn subject_label(subject_seed: u64) -> String {
    format!("subject-{subject_seed:016x}")
}

pub fn parse_subject_label(label: &str) -> Option<u64> {
    let hex = label.strip_prefix("subject-")?;
    u64::from_str_radix(hex, 16).ok()
}

/// Enrollment template of a subject. Depends only on `subject_seed` and the
/// dimension, so the same person is regenerated identically by any party.
pub fn enroll_template(subject_seed: u64, params: &SystemParams) -> BiometricTemplate {
    let mut rng = Rng::from_seed(subject_seed).substream("biometric-subject");
    let features = (0..params.d).map(|_| rng.sample(StandardNormal)).collect();
    BiometricTemplate {
        subject_id: subject_label(subject_seed),
        features,
    }
}

/// A fresh capture of `enrolled` with i.i.d. Gaussian noise of scale `noise_sigma`.
pub fn capture(
    enrolled: &BiometricTemplate,
    noise_sigma: f64,
    rng: &mut Rng,
) -> Result<BiometricTemplate> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "noise sigma must be finite and non-negative, got {noise_sigma}"
        )));
    }
    if noise_sigma == 0.0 {
        return Ok(enrolled.clone());
    }
    let features = enrolled
        .features
        .iter()
        .map(|f| f + noise_sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(BiometricTemplate {
        subject_id: enrolled.subject_id.clone(),
        features,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BioHashKey {
    pub projection_seed: u64,
}

impl BioHashKey {
    pub fn new(projection_seed: u64) -> Self {
        BioHashKey { projection_seed }
    }

    pub fn from_params(params: &SystemParams) -> Self {
        BioHashKey::new(params.biohash_key)
    }

    /// `l` unit directions in `d` dimensions, row-major.
    pub fn projection(&self, d: usize, l: usize) -> Vec<Vec<f64>> {
        let mut rng = Rng::from_seed(self.projection_seed).substream("biohash-projection");
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(l);
        for _ in 0..l {
            let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            if l <= d {
                for r in &rows {
                    let dot: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
                    for (x, y) in v.iter_mut().zip(r) {
                        *x -= dot * y;
                    }
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in &mut v {
                *x /= norm;
            }
            rows.push(v);
        }
        rows
    }
}

/// BioHash transform with its projection precomputed.
#[derive(Debug, Clone)]
pub struct BioHasher {
    key: BioHashKey,
    d: usize,
    rows: Vec<Vec<f64>>,
}

impl BioHasher {
    pub fn new(key: BioHashKey, params: &SystemParams) -> Self {
        BioHasher {
            key,
            d: params.d,
            rows: key.projection(params.d, params.l),
        }
    }

    pub fn key(&self) -> BioHashKey {
        self.key
    }

    pub fn width(&self) -> usize {
        self.rows.len()
    }

    pub fn projections(&self, t: &BiometricTemplate) -> Result<Vec<f64>> {
        if t.dimension() != self.d {
            return Err(Error::Dimension {
                expected: self.d,
                found: t.dimension(),
            });
        }
        Ok(self
            .rows
            .iter()
            .map(|r| r.iter().zip(&t.features).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Bit i is 1 iff projection i is >= 0.
    pub fn hash(&self, t: &BiometricTemplate) -> Result<BitString> {
        let bits: Vec<bool> = self.projections(t)?.into_iter().map(|p| p >= 0.0).collect();
        Ok(BitString::from_bits(&bits))
    }
}

pub fn biohash(t: &BiometricTemplate, key: BioHashKey, params: &SystemParams) -> Result<BitString> {
    BioHasher::new(key, params).hash(t)
}

/// Tolerant comparison: Hamming distance at most `epsilon` bits.
pub fn fuzzy_match(a: &BitString, b: &BitString, epsilon: usize) -> Result<bool> {
    Ok(a.hamming_distance(b)? <= epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    pub far: f64,
    pub frr: f64,
}

/// Genuine and impostor Hamming distances of a simulated population.
///
/// Subject `i` is compared with a noisy re-capture of itself (genuine) and
/// with a noisy capture of subject `i + 1 mod N` (impostor).
#[derive(Debug, Clone)]
pub struct DistanceSample {
    pub genuine: Vec<usize>,
    pub impostor: Vec<usize>,
}

impl DistanceSample {
    pub fn collect(
        population_size: usize,
        noise_sigma: f64,
        hasher: &BioHasher,
        params: &SystemParams,
        rng: &Rng,
    ) -> Result<Self> {
        if population_size < 2 {
            return Err(Error::Precondition(
                "population size must be at least 2".into(),
            ));
        }
        let subjects = rng.substream("population");
        let seeds: Vec<u64> = (0..population_size as u64)
            .map(|i| rand::RngCore::next_u64(&mut subjects.substream_indexed("subject", i)))
            .collect();
        let enrolled: Vec<BitString> = seeds
            .par_iter()
            .map(|&s| hasher.hash(&enroll_template(s, params)))
            .collect::<Result<_>>()?;
        let pairs: Vec<(usize, usize)> = (0..population_size)
            .into_par_iter()
            .map(|i| {
                let mut noise = rng.substream_indexed("capture", i as u64);
                let genuine = capture(&enroll_template(seeds[i], params), noise_sigma, &mut noise)?;
                let other = (i + 1) % population_size;
                let impostor = capture(
                    &enroll_template(seeds[other], params),
                    noise_sigma,
                    &mut noise,
                )?;
                Ok((
                    hasher.hash(&genuine)?.hamming_distance(&enrolled[i])?,
                    hasher.hash(&impostor)?.hamming_distance(&enrolled[i])?,
                ))
            })
            .collect::<Result<_>>()?;
        let (genuine, impostor) = pairs.into_iter().unzip();
        Ok(DistanceSample { genuine, impostor })
    }

    pub fn rates(&self, epsilon: usize) -> ErrorRates {
        let rejected = self.genuine.iter().filter(|&&d| d > epsilon).count();
        let accepted = self.impostor.iter().filter(|&&d| d <= epsilon).count();
        ErrorRates {
            frr: rejected as f64 / self.genuine.len() as f64,
            far: accepted as f64 / self.impostor.len() as f64,
        }
    }
}

/// Monte Carlo FAR/FRR at threshold `epsilon`.
pub fn estimate_error_rates(
    population_size: usize,
    noise_sigma: f64,
    epsilon: usize,
    params: &SystemParams,
    rng: &Rng,
) -> Result<ErrorRates> {
    let hasher = BioHasher::new(BioHashKey::from_params(params), params);
    Ok(DistanceSample::collect(population_size, noise_sigma, &hasher, params, rng)?.rates(epsilon))
}

/// Shipped default sensor noise.
pub const DEFAULT_NOISE_SIGMA: f64 = 0.05;
/// Population used when freezing the default FAR/FRR.
pub const DEFAULT_POPULATION: usize = 500;

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SystemParams {
        SystemParams::default()
    }

    #[test]
    fn enrollment_is_deterministic_per_subject() {
        let p = params();
        assert_eq!(enroll_template(42, &p), enroll_template(42, &p));
        let a = enroll_template(1, &p);
        let b = enroll_template(2, &p);
        assert!(a.squared_distance(&b) > 0.0);
        assert_eq!(a.dimension(), p.d);
    }

    #[test]
    fn enrollment_features_are_centered() {
        let p = SystemParams {
            d: 1024,
            ..params()
        };
        let t = enroll_template(7, &p);
        let mean = t.features.iter().sum::<f64>() / 1024.0;
        assert!(mean.abs() < 0.2, "mean {mean}");
    }

    #[test]
    fn zero_noise_capture_is_identity() {
        let t = enroll_template(3, &params());
        let mut rng = Rng::from_seed(0);
        assert_eq!(capture(&t, 0.0, &mut rng).unwrap(), t);
        assert!(capture(&t, -1.0, &mut rng).is_err());
    }

    #[test]
    fn capture_noise_energy_matches_chi_square_mean() {
        let p = params();
        let t = enroll_template(9, &p);
        let mut rng = Rng::from_seed(10);
        let sigma = 0.1;
        let expected = p.d as f64 * sigma * sigma;
        let mean = (0..100)
            .map(|_| capture(&t, sigma, &mut rng).unwrap().squared_distance(&t))
            .sum::<f64>()
            / 100.0;
        assert!((mean - expected).abs() <= 0.3 * expected, "mean {mean}");
        assert_eq!(
            capture(&t, sigma, &mut rng).unwrap().subject_id,
            t.subject_id
        );
    }

    #[test]
    fn biohash_determinism_and_width() {
        let p = params();
        let key = BioHashKey::from_params(&p);
        let t = enroll_template(5, &p);
        let h = biohash(&t, key, &p).unwrap();
        assert_eq!(h, biohash(&t, key, &p).unwrap());
        assert_eq!(h.width(), p.l);
    }

    #[test]
    fn projection_rows_are_orthonormal_when_l_le_d() {
        let rows = BioHashKey::new(1).projection(64, 32);
        for (i, a) in rows.iter().enumerate() {
            for (j, b) in rows.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn negation_flips_every_bit() {
        let p = params();
        let hasher = BioHasher::new(BioHashKey::from_params(&p), &p);
        for seed in 0..20 {
            let t = enroll_template(seed, &p);
            let proj = hasher.projections(&t).unwrap();
            assert!(proj.iter().all(|&x| x != 0.0));
            let a = hasher.hash(&t).unwrap();
            let b = hasher.hash(&t.negated()).unwrap();
            assert_eq!(a.hamming_distance(&b).unwrap(), p.l);
        }
    }

    #[test]
    fn independent_subjects_are_near_half_distance() {
        let p = params();
        let hasher = BioHasher::new(BioHashKey::from_params(&p), &p);
        let l = p.l as f64;
        for i in 0..200u64 {
            let a = hasher.hash(&enroll_template(1000 + 2 * i, &p)).unwrap();
            let b = hasher.hash(&enroll_template(1001 + 2 * i, &p)).unwrap();
            let dist = a.hamming_distance(&b).unwrap() as f64;
            assert!(dist >= 0.3 * l && dist <= 0.7 * l, "pair {i}: {dist}");
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = params();
        let t = BiometricTemplate::new("x", vec![0.5; 10]).unwrap();
        assert!(matches!(
            biohash(&t, BioHashKey::new(1), &p),
            Err(Error::Dimension {
                expected: 256,
                found: 10
            })
        ));
    }

    #[test]
    fn fuzzy_match_boundaries() {
        let mut rng = Rng::from_seed(12);
        let x = BitString::random(128, &mut rng);
        assert!(fuzzy_match(&x, &x, 0).unwrap());
        let eps = 10;
        let mut y = x.clone();
        for i in 0..eps {
            y.flip(i * 3);
        }
        assert!(fuzzy_match(&x, &y, eps).unwrap());
        assert!(fuzzy_match(&y, &x, eps).unwrap());
        y.flip(127);
        assert!(!fuzzy_match(&x, &y, eps).unwrap());
        assert!(fuzzy_match(&x, &BitString::zeros(64), 200).is_err());
    }

    #[test]
    fn error_rate_edge_cases() {
        let p = params();
        let rng = Rng::from_seed(13);
        let r = estimate_error_rates(50, 0.0, 0, &p, &rng).unwrap();
        assert_eq!(r.frr, 0.0);
        let all = estimate_error_rates(50, 0.3, p.l, &p, &rng).unwrap();
        assert_eq!((all.far, all.frr), (1.0, 0.0));
        assert!(estimate_error_rates(1, 0.0, 0, &p, &rng).is_err());
    }

    #[test]
    fn error_rates_are_monotone_in_epsilon() {
        let p = params();
        let hasher = BioHasher::new(BioHashKey::from_params(&p), &p);
        let sample = DistanceSample::collect(200, 0.3, &hasher, &p, &Rng::from_seed(14)).unwrap();
        let sweep: Vec<ErrorRates> = [0, 10, 20, 40, 64]
            .iter()
            .map(|&e| sample.rates(e))
            .collect();
        for w in sweep.windows(2) {
            assert!(w[1].frr <= w[0].frr);
            assert!(w[1].far >= w[0].far);
        }
    }
}
