//! Synthetic identities, sequences and a similarity law.
//!
//! The world replaces frozen backbones and real datasets. Each sample carries
//! per-modality quality; the frame descriptors expose that quality (plus an
//! identity signature and clutter) so the agent can learn quality-conditioned
//! selection. Similarities follow
//!
//! ```text
//! matched:     s = tanh(gain * D * min(q_probe, q_gallery) + eps)
//! non-matched: s = tanh(eps)
//! ```
//!
//! with `eps ~ N(0, sigma^2)` drawn from a stream keyed by the world seed,
//! both sample ids and the model, so repeated queries agree exactly.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{Modality, ModelSpec, PoolSet};

/// How a sample's per-modality quality is drawn. Each modality is drawn
/// independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QualityModel {
    Uniform {
        low: f64,
        high: f64,
    },
    /// With probability `p_good` the modality is usable (uniform in the good
    /// range), otherwise degraded (uniform in the bad range).
    Mixture {
        p_good: f64,
        good: [f64; 2],
        bad: [f64; 2],
    },
}

impl QualityModel {
    fn validate(&self) -> Result<()> {
        let in_unit =
            |lo: f64, hi: f64| (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi;
        let ok = match *self {
            QualityModel::Uniform { low, high } => in_unit(low, high),
            QualityModel::Mixture { p_good, good, bad } => {
                (0.0..=1.0).contains(&p_good)
                    && in_unit(good[0], good[1])
                    && in_unit(bad[0], bad[1])
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "quality ranges must lie in [0, 1]: {self:?}"
            )))
        }
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            QualityModel::Uniform { low, high } => uniform(rng, low, high),
            QualityModel::Mixture { p_good, good, bad } => {
                let r = if rng.random::<f64>() < p_good {
                    good
                } else {
                    bad
                };
                uniform(rng, r[0], r[1])
            }
        }
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub identities: usize,
    pub samples_per_identity: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Descriptor width `d`; the last `modalities.len()` entries carry quality.
    pub descriptor_dim: usize,
    pub modalities: Vec<Modality>,
    pub quality: QualityModel,
    /// Standard deviation of the similarity noise.
    pub noise_sigma: f64,
    /// Gain applied to `D * q_eff` inside the tanh.
    pub gain: f64,
    /// Per-frame Gaussian clutter added to every descriptor entry.
    pub frame_clutter: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            identities: 50,
            samples_per_identity: 4,
            min_frames: 4,
            max_frames: 8,
            descriptor_dim: 16,
            modalities: vec![Modality::face(), Modality::gait(), Modality::body()],
            quality: QualityModel::Uniform {
                low: 0.0,
                high: 1.0,
            },
            noise_sigma: 0.25,
            gain: 2.0,
            frame_clutter: 0.05,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.identities < 2 {
            return fail(format!(
                "need at least 2 identities, got {}",
                self.identities
            ));
        }
        if self.samples_per_identity < 2 {
            return fail(format!(
                "need at least 2 samples per identity, got {}",
                self.samples_per_identity
            ));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return fail(format!(
                "frame range must satisfy 1 <= min <= max, got {}..={}",
                self.min_frames, self.max_frames
            ));
        }
        if self.modalities.is_empty() {
            return fail("world needs at least one modality".into());
        }
        if self.descriptor_dim == 0 || self.descriptor_dim < self.modalities.len() {
            return fail(format!(
                "descriptor_dim {} cannot hold {} quality channels",
                self.descriptor_dim,
                self.modalities.len()
            ));
        }
        let mut seen = self.modalities.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.modalities.len() {
            return fail("duplicate modality in world config".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail("noise_sigma must be a finite non-negative number".into());
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return fail("gain must be positive".into());
        }
        if !(self.frame_clutter >= 0.0 && self.frame_clutter.is_finite()) {
            return fail("frame_clutter must be non-negative".into());
        }
        self.quality.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One synthetic video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub sample_id: String,
    pub identity: usize,
    /// `T` descriptors, each of width `d`.
    pub frames: Vec<Vec<f64>>,
    pub quality: BTreeMap<Modality, f64>,
}

impl SequenceSample {
    pub fn dim(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    pub fn quality_of(&self, modality: &Modality) -> Option<f64> {
        self.quality.get(modality).copied()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PairSample<'w> {
    pub probe: &'w SequenceSample,
    pub gallery: &'w SequenceSample,
    /// True iff probe and gallery share an identity.
    pub matched: bool,
}

impl<'w> PairSample<'w> {
    pub fn new(probe: &'w SequenceSample, gallery: &'w SequenceSample) -> Self {
        Self {
            probe,
            gallery,
            matched: probe.identity == gallery.identity,
        }
    }

    pub fn label(&self) -> f64 {
        if self.matched {
            1.0
        } else {
            0.0
        }
    }
}

/// Anything that can score a probe/gallery pair through one model. The same
/// model embeds both sides.
pub trait SimilaritySource: Sync {
    fn similarity(&self, model: &ModelSpec, pair: &PairSample<'_>) -> Result<f64>;
}

/// The deterministic similarity law with the noise draw supplied.
pub fn similarity_law(
    gain: f64,
    discriminability: f64,
    q_eff: f64,
    matched: bool,
    eps: f64,
) -> f64 {
    if matched {
        (gain * discriminability * q_eff + eps).tanh()
    } else {
        eps.tanh()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub seed: u64,
    pub config: WorldConfig,
    pub samples: Vec<SequenceSample>,
}

const SNAPSHOT_FORMAT: &str = "modelpick-world";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Snapshot<W> {
    format: String,
    version: u32,
    world: W,
}

impl World {
    pub fn generate(seed: u64, config: &WorldConfig) -> Result<World> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sig_dim = config.descriptor_dim - config.modalities.len();
        let clutter = Normal::new(0.0, config.frame_clutter)
            .map_err(|e| Error::Config(format!("frame_clutter: {e}")))?;

        let signatures: Vec<Vec<f64>> = (0..config.identities)
            .map(|_| (0..sig_dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();

        let mut samples = Vec::with_capacity(config.identities * config.samples_per_identity);
        for (identity, signature) in signatures.iter().enumerate() {
            for k in 0..config.samples_per_identity {
                let quality: BTreeMap<Modality, f64> = config
                    .modalities
                    .iter()
                    .map(|m| (m.clone(), config.quality.draw(&mut rng)))
                    .collect();
                let t = rng.random_range(config.min_frames..=config.max_frames);
                let frames = (0..t)
                    .map(|_| {
                        let mut f: Vec<f64> = signature.clone();
                        f.extend(config.modalities.iter().map(|m| quality[m]));
                        for x in &mut f {
                            *x += clutter.sample(&mut rng);
                        }
                        f
                    })
                    .collect();
                samples.push(SequenceSample {
                    sample_id: format!("id{identity:04}_s{k:02}"),
                    identity,
                    frames,
                    quality,
                });
            }
        }
        Ok(World {
            seed,
            config: config.clone(),
            samples,
        })
    }

    pub fn identities(&self) -> usize {
        self.config.identities
    }

    pub fn descriptor_dim(&self) -> usize {
        self.config.descriptor_dim
    }

    /// Every pool modality must have a quality channel in this world.
    pub fn check_pools(&self, pools: &PoolSet) -> Result<()> {
        for m in pools.modalities() {
            if !self.config.modalities.contains(&m) {
                return Err(Error::Config(format!(
                    "pool modality {m} has no quality channel in the world"
                )));
            }
        }
        Ok(())
    }

    pub fn to_snapshot_json(&self) -> Result<String> {
        let snap = Snapshot {
            format: SNAPSHOT_FORMAT.to_string(),
            version: SNAPSHOT_VERSION,
            world: self,
        };
        Ok(serde_json::to_string(&snap)?)
    }

    pub fn from_snapshot_json(text: &str) -> Result<World> {
        let snap: Snapshot<World> = serde_json::from_str(text)?;
        if snap.format != SNAPSHOT_FORMAT || snap.version != SNAPSHOT_VERSION {
            return Err(Error::Config(format!(
                "unsupported world snapshot {} v{}",
                snap.format, snap.version
            )));
        }
        snap.world.config.validate()?;
        Ok(snap.world)
    }

    fn noise(&self, model: &ModelSpec, pair: &PairSample<'_>) -> f64 {
        if self.config.noise_sigma == 0.0 {
            return 0.0;
        }
        let key = stream_key(
            self.seed,
            &[
                pair.probe.sample_id.as_bytes(),
                pair.gallery.sample_id.as_bytes(),
                model.modality.as_str().as_bytes(),
                model.id.as_bytes(),
            ],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let z: f64 = rng.sample(StandardNormal);
        self.config.noise_sigma * z
    }
}

impl SimilaritySource for World {
    fn similarity(&self, model: &ModelSpec, pair: &PairSample<'_>) -> Result<f64> {
        let qp = pair.probe.quality_of(&model.modality);
        let qg = pair.gallery.quality_of(&model.modality);
        let (Some(qp), Some(qg)) = (qp, qg) else {
            return Err(Error::InvalidPair(format!(
                "{} / {} missing quality for modality {}",
                pair.probe.sample_id, pair.gallery.sample_id, model.modality
            )));
        };
        let eps = self.noise(model, pair);
        Ok(similarity_law(
            self.config.gain,
            model.discriminability,
            qp.min(qg),
            pair.matched,
            eps,
        ))
    }
}

/// Stable 64-bit key from a seed and byte fields (FNV-1a, splitmix finalizer).
pub(crate) fn stream_key(seed: u64, fields: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for field in fields {
        for &b in *field {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Draws `n` labelled pairs; exactly `round(n * positive_fraction)` match.
pub fn make_pairs(
    world: &World,
    n: usize,
    positive_fraction: f64,
    seed: u64,
) -> Result<Vec<PairSample<'_>>> {
    if !(positive_fraction > 0.0 && positive_fraction < 1.0) {
        return Err(Error::Config(format!(
            "positive_fraction must lie in (0, 1), got {positive_fraction}"
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut by_identity: Vec<Vec<usize>> = vec![Vec::new(); world.identities()];
    for (i, s) in world.samples.iter().enumerate() {
        by_identity[s.identity].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pos = (n as f64 * positive_fraction).round() as usize;
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n_pos {
        let id = rng.random_range(0..by_identity.len());
        let members = &by_identity[id];
        let a = rng.random_range(0..members.len());
        let mut b = rng.random_range(0..members.len() - 1);
        if b >= a {
            b += 1;
        }
        pairs.push(PairSample::new(
            &world.samples[members[a]],
            &world.samples[members[b]],
        ));
    }
    for _ in n_pos..n {
        let p = rng.random_range(0..world.samples.len());
        let probe = &world.samples[p];
        let mut other = rng.random_range(0..by_identity.len() - 1);
        if other >= probe.identity {
            other += 1;
        }
        let members = &by_identity[other];
        let g = members[rng.random_range(0..members.len())];
        pairs.push(PairSample::new(probe, &world.samples[g]));
    }
    pairs.shuffle(&mut rng);
    Ok(pairs)
}
