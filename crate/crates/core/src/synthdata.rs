//! Synthetic overlapped multi-speaker task.
//!
//! Each speaker has a fixed unit vector; its feature-space signature is a
//! fixed random projection of that vector. An utterance is a random word
//! sequence rendered as `frames_per_token` frames per word, each frame the
//! word signature plus the speaker signature. Utterances of a mixture are
//! added at their start offsets and Gaussian noise is added everywhere.
//!
//! Mixture constraints:
//! 1. consecutive start offsets differ by at least `min_offset` frames
//!    (training split only);
//! 2. every utterance overlaps at least one other (all splits).
//!
//! References are serialized in start-time order.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{
    validate_reference, FeatureSequence, SerializedReference, SpeakerId, SpeakerInventory,
    SpeakerProfile, TokenId, Vocabulary,
};
use crate::error::{Error, Result};
use crate::jsonl;

pub const SOT_ORDER: &str = "start_time";
const MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    /// Word tokens; `<sc>` and `<eos>` come on top.
    pub vocab_words: usize,
    pub num_speakers: usize,
    pub feat_dim: usize,
    pub profile_dim: usize,
    pub frames_per_token: usize,
    pub s_max: usize,
    pub min_offset: usize,
    pub inventory_max: usize,
    pub noise: f64,
    pub profile_noise: f64,
    pub min_words: usize,
    pub max_words: usize,
    /// Orthonormal word and speaker signatures (needs
    /// `vocab_words + num_speakers <= feat_dim`).
    pub orthogonal: bool,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            vocab_words: 20,
            num_speakers: 40,
            feat_dim: 24,
            profile_dim: 16,
            frames_per_token: 3,
            s_max: 3,
            min_offset: 2,
            inventory_max: 8,
            noise: 0.1,
            profile_noise: 0.1,
            min_words: 2,
            max_words: 4,
            orthogonal: false,
            train_size: 2000,
            dev_size: 300,
            test_size: 300,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.vocab_words == 0 || self.feat_dim == 0 || self.profile_dim == 0 {
            return fail("vocab_words, feat_dim and profile_dim must be positive");
        }
        if self.frames_per_token == 0 {
            return fail("frames_per_token must be positive");
        }
        if self.s_max == 0 {
            return fail("s_max must be at least 1");
        }
        if self.min_offset == 0 {
            return fail("min_offset must be at least 1");
        }
        if self.inventory_max < self.s_max {
            return fail("inventory_max must be at least s_max");
        }
        if self.num_speakers < self.inventory_max {
            return fail("num_speakers must be at least inventory_max");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail("noise must be a nonnegative number");
        }
        if !(self.profile_noise >= 0.0 && self.profile_noise.is_finite()) {
            return fail("profile_noise must be a nonnegative number");
        }
        if self.min_words == 0 || self.max_words < self.min_words {
            return fail("need 1 <= min_words <= max_words");
        }
        if self.orthogonal && self.vocab_words + self.num_speakers > self.feat_dim {
            return fail("orthogonal signatures need vocab_words + num_speakers <= feat_dim");
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::with_words(self.vocab_words).expect("validated")
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        hex_sha256(serde_json::to_string(self).expect("plain data").as_bytes())
    }
}

fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Seed of the named substream `name` under `seed`.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Fixed signatures shared by every split.
#[derive(Debug, Clone)]
pub struct World {
    /// Word signatures, unit norm, indexed by token id.
    pub word_signatures: Vec<Vec<f64>>,
    /// Unit speaker vectors (profile space).
    pub speaker_vectors: Vec<Vec<f64>>,
    /// Speaker signatures in feature space, unit norm.
    pub speaker_signatures: Vec<Vec<f64>>,
}

impl World {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "world"));
        let (v, n, f, p) = (cfg.vocab_words, cfg.num_speakers, cfg.feat_dim, cfg.profile_dim);
        let speaker_vectors: Vec<Vec<f64>> =
            (0..n).map(|_| normalized(gaussian_vec(&mut rng, p, 1.0))).collect();
        let (word_signatures, speaker_signatures) = if cfg.orthogonal {
            let basis = orthonormal(&mut rng, v + n, f);
            (basis[..v].to_vec(), basis[v..].to_vec())
        } else {
            let words = (0..v).map(|_| normalized(gaussian_vec(&mut rng, f, 1.0))).collect();
            let proj: Vec<Vec<f64>> = (0..f).map(|_| gaussian_vec(&mut rng, p, 1.0)).collect();
            let speakers = speaker_vectors
                .iter()
                .map(|sv| {
                    normalized(proj.iter().map(|row| dot(row, sv)).collect())
                })
                .collect();
            (words, speakers)
        };
        Ok(World {
            word_signatures,
            speaker_vectors,
            speaker_signatures,
        })
    }

    /// Clean frames of one utterance.
    pub fn render(&self, speaker: usize, words: &[TokenId], frames_per_token: usize) -> Vec<Vec<f64>> {
        let spk = &self.speaker_signatures[speaker];
        words
            .iter()
            .flat_map(|&w| {
                let frame: Vec<f64> = self.word_signatures[w]
                    .iter()
                    .zip(spk)
                    .map(|(a, b)| a + b)
                    .collect();
                std::iter::repeat_n(frame, frames_per_token)
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `count` orthonormal vectors in `dim` dimensions (Gram-Schmidt).
fn orthonormal(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v = gaussian_vec(rng, dim, 1.0);
        for b in &out {
            let d = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            out.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn size(self, cfg: &SynthConfig) -> usize {
        match self {
            Split::Train => cfg.train_size,
            Split::Dev => cfg.dev_size,
            Split::Test => cfg.test_size,
        }
    }

    /// Whether the minimum start-offset constraint applies.
    pub fn min_offset_enforced(self) -> bool {
        self == Split::Train
    }
}

/// One mixture with its reference and profile inventory.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub x: FeatureSequence,
    pub reference: SerializedReference,
    pub inventory: SpeakerInventory,
    pub true_count: usize,
    /// Start frame of each utterance, in reference order.
    pub offsets: Vec<usize>,
    /// Frame count of each utterance, in reference order.
    pub lengths: Vec<usize>,
    pub seed: u64,
}

impl Sample {
    /// Frames `[start, end)` of each utterance.
    pub fn spans(&self) -> Vec<(usize, usize)> {
        self.offsets
            .iter()
            .zip(&self.lengths)
            .map(|(&s, &l)| (s, s + l))
            .collect()
    }
}

/// Draw one mixture of `count` speakers.
pub fn generate_sample(
    cfg: &SynthConfig,
    world: &World,
    split: Split,
    count: usize,
    seed: u64,
    id: String,
) -> Result<Sample> {
    if count == 0 || count > cfg.s_max {
        return Err(Error::Config(format!("speaker count {count} outside 1..={}", cfg.s_max)));
    }
    let vocab = cfg.vocabulary();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speakers: Vec<usize> = sample_indices(&mut rng, cfg.num_speakers, count).into_vec();

    let (words, offsets) = (0..MAX_RETRIES)
        .find_map(|_| draw_layout(cfg, split, &mut rng, count))
        .ok_or_else(|| {
            Error::Config(format!(
                "cannot satisfy min_offset {} with utterances of {}..={} words",
                cfg.min_offset, cfg.min_words, cfg.max_words
            ))
        })?;
    let lengths: Vec<usize> = words.iter().map(|w| w.len() * cfg.frames_per_token).collect();

    let frames = offsets.iter().zip(&lengths).map(|(o, l)| o + l).max().unwrap_or(0);
    let f = cfg.feat_dim;
    let mut data = vec![0.0; frames * f];
    for ((&spk, w), &start) in speakers.iter().zip(&words).zip(&offsets) {
        for (i, frame) in world.render(spk, w, cfg.frames_per_token).iter().enumerate() {
            let row = &mut data[(start + i) * f..(start + i + 1) * f];
            row.iter_mut().zip(frame).for_each(|(d, v)| *d += v);
        }
    }
    for d in data.iter_mut() {
        *d += cfg.noise * rng.sample::<f64, _>(StandardNormal);
    }

    // Offsets are non-decreasing, so draw order is start-time order.
    let ids: Vec<SpeakerId> = speakers.iter().map(|&s| SpeakerId(s as u32)).collect();
    let utterances: Vec<(SpeakerId, Vec<TokenId>)> =
        ids.iter().copied().zip(words.iter().cloned()).collect();
    let reference = SerializedReference::from_utterances(&utterances, &vocab);

    let size = rng.random_range(count..=cfg.inventory_max);
    let mut members = speakers.clone();
    let others: Vec<usize> = (0..cfg.num_speakers).filter(|s| !speakers.contains(s)).collect();
    for i in sample_indices(&mut rng, others.len(), size - count) {
        members.push(others[i]);
    }
    members.shuffle(&mut rng);
    let profiles = members
        .iter()
        .map(|&s| {
            let v: Vec<f64> = world.speaker_vectors[s]
                .iter()
                .map(|x| x + cfg.profile_noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            SpeakerProfile::new(SpeakerId(s as u32), v)
        })
        .collect::<Result<Vec<_>>>()?;
    let inventory = SpeakerInventory::new(profiles)?;

    let sample = Sample {
        id,
        x: FeatureSequence::new(frames, f, data)?,
        reference,
        inventory,
        true_count: count,
        offsets,
        lengths,
        seed,
    };
    debug_assert!(validate_reference(&sample.reference, &vocab, &sample.inventory).is_empty());
    Ok(sample)
}

/// Word sequences and start offsets; `None` when the offset constraint
/// cannot be met for the drawn lengths.
fn draw_layout(
    cfg: &SynthConfig,
    split: Split,
    rng: &mut ChaCha8Rng,
    count: usize,
) -> Option<(Vec<Vec<TokenId>>, Vec<usize>)> {
    let words: Vec<Vec<TokenId>> = (0..count)
        .map(|_| {
            let n = rng.random_range(cfg.min_words..=cfg.max_words);
            (0..n).map(|_| rng.random_range(0..cfg.vocab_words)).collect()
        })
        .collect();
    let min_gap = if split.min_offset_enforced() { cfg.min_offset } else { 0 };
    let mut offsets = vec![0];
    for u in 1..count {
        // Starting before the previous utterance ends guarantees overlap.
        let prev_len = words[u - 1].len() * cfg.frames_per_token;
        if prev_len < min_gap + 1 {
            return None;
        }
        let gap = rng.random_range(min_gap..prev_len);
        offsets.push(offsets[u - 1] + gap);
    }
    Some((words, offsets))
}

/// All samples of one split, speaker counts cycling through `1..=s_max`.
pub fn generate_split(cfg: &SynthConfig, world: &World, split: Split) -> Result<Vec<Sample>> {
    let split_seed = derive_seed(cfg.seed, split.name());
    (0..split.size(cfg))
        .map(|i| {
            let seed = derive_seed(split_seed, &i.to_string());
            let id = format!("{}-{i:05}", split.name());
            generate_sample(cfg, world, split, 1 + i % cfg.s_max, seed, id)
        })
        .collect()
}

/// Row-major matrix with its shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// On-disk form of a [`Sample`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub frames: Matrix,
    pub tokens: Vec<TokenId>,
    pub speakers: Vec<SpeakerId>,
    pub inventory: Vec<SpeakerProfile>,
    pub true_count: usize,
    pub offsets: Vec<usize>,
    pub lengths: Vec<usize>,
    pub seed: u64,
}

impl From<&Sample> for SampleRecord {
    fn from(s: &Sample) -> Self {
        let t = s.x.frames();
        SampleRecord {
            id: s.id.clone(),
            frames: Matrix {
                shape: [t.rows(), t.cols()],
                data: t.data().to_vec(),
            },
            tokens: s.reference.tokens.clone(),
            speakers: s.reference.speakers.clone(),
            inventory: s.inventory.profiles().to_vec(),
            true_count: s.true_count,
            offsets: s.offsets.clone(),
            lengths: s.lengths.clone(),
            seed: s.seed,
        }
    }
}

impl SampleRecord {
    pub fn into_sample(self, vocab: &Vocabulary) -> Result<Sample> {
        let [t, f] = self.frames.shape;
        let x = FeatureSequence::new(t, f, self.frames.data)?;
        let reference = SerializedReference {
            tokens: self.tokens,
            speakers: self.speakers,
        };
        let inventory = SpeakerInventory::new(self.inventory)?;
        if let Some(v) = validate_reference(&reference, vocab, &inventory).first() {
            return Err(Error::Contract(format!(
                "invalid reference: {}",
                serde_json::to_string(v)?
            )));
        }
        if self.offsets.len() != self.lengths.len() {
            return Err(Error::Contract("offsets and lengths differ in count".into()));
        }
        Ok(Sample {
            id: self.id,
            x,
            reference,
            inventory,
            true_count: self.true_count,
            offsets: self.offsets,
            lengths: self.lengths,
            seed: self.seed,
        })
    }
}

pub fn write_samples(path: &Path, samples: &[Sample]) -> Result<()> {
    let recs: Vec<SampleRecord> = samples.iter().map(SampleRecord::from).collect();
    jsonl::write(path, &recs)
}

/// Read and validate a dataset file; failures name the offending line.
pub fn read_samples(path: &Path, vocab: &Vocabulary) -> Result<Vec<Sample>> {
    jsonl::read::<SampleRecord>(path)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.into_sample(vocab).map_err(|e| jsonl::at_line(path, i, e)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub file: String,
    pub count: usize,
    /// Samples per true speaker count `1..=s_max`.
    pub speaker_counts: Vec<usize>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: SynthConfig,
    pub config_hash: String,
    pub sot_order: String,
    pub vocabulary: Vocabulary,
    pub splits: BTreeMap<String, SplitSummary>,
    /// Hash over the split hashes in split order.
    pub content_hash: String,
}

impl Manifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(Self::FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Write `train.jsonl`, `dev.jsonl`, `test.jsonl` and the manifest.
pub fn generate_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    let world = World::new(cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut splits = BTreeMap::new();
    let mut content = Sha256::new();
    for split in Split::ALL {
        let samples = generate_split(cfg, &world, split)?;
        let file = format!("{}.jsonl", split.name());
        let path = out_dir.join(&file);
        write_samples(&path, &samples)?;
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let sha = hex_sha256(&bytes);
        content.update(sha.as_bytes());
        let mut speaker_counts = vec![0; cfg.s_max];
        samples.iter().for_each(|s| speaker_counts[s.true_count - 1] += 1);
        splits.insert(
            split.name().to_string(),
            SplitSummary {
                file,
                count: samples.len(),
                speaker_counts,
                sha256: sha,
            },
        );
    }
    let manifest = Manifest {
        format: "sambr-synth".into(),
        config: cfg.clone(),
        config_hash: cfg.hash(),
        sot_order: SOT_ORDER.into(),
        vocabulary: cfg.vocabulary(),
        splits,
        content_hash: content.finalize().iter().map(|b| format!("{b:02x}")).collect(),
    };
    let path = out_dir.join(Manifest::FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
