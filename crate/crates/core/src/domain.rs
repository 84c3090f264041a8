//! Shared domain types: vocabulary with the speaker-change and end symbols,
//! serialized multi-speaker references, speaker inventories, decode
//! hypotheses and speaker-attributed transcripts.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const SC_SYMBOL: &str = "<sc>";
pub const EOS_SYMBOL: &str = "<eos>";

/// Dense token index in `0..V`.
pub type TokenId = usize;

/// Global speaker identity, independent of inventory position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpeakerId(pub u32);

impl fmt::Display for SpeakerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "spk{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    sc_id: TokenId,
    eos_id: TokenId,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &tokens {
            if !seen.insert(t.as_str()) {
                return Err(Error::Config(format!("duplicate token {t:?}")));
            }
        }
        let find = |sym: &str| {
            tokens
                .iter()
                .position(|t| t == sym)
                .ok_or_else(|| Error::Config(format!("vocabulary lacks {sym}")))
        };
        let sc_id = find(SC_SYMBOL)?;
        let eos_id = find(EOS_SYMBOL)?;
        if tokens.len() < 3 {
            return Err(Error::Config("vocabulary needs at least 3 tokens".into()));
        }
        Ok(Vocabulary {
            tokens,
            sc_id,
            eos_id,
        })
    }

    /// `n_words` word tokens `w00, w01, …` followed by `<sc>` and `<eos>`.
    pub fn with_words(n_words: usize) -> Result<Self> {
        let mut tokens: Vec<String> = (0..n_words).map(|i| format!("w{i:02}")).collect();
        tokens.push(SC_SYMBOL.into());
        tokens.push(EOS_SYMBOL.into());
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sc_id(&self) -> TokenId {
        self.sc_id
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn is_special(&self, t: TokenId) -> bool {
        t == self.sc_id || t == self.eos_id
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Word (non-special) token ids in index order.
    pub fn word_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.len()).filter(|&t| !self.is_special(t))
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::from_tokens(v)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// `T × F` acoustic-feature matrix.
#[derive(Debug, Clone)]
pub struct FeatureSequence {
    frames: Tensor,
}

impl FeatureSequence {
    pub fn new(frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 {
            return Err(Error::Config("feature sequence needs at least one frame".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "FeatureSequence" });
        }
        Ok(FeatureSequence {
            frames: Tensor::from_vec(frames, dim, data)?,
        })
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

/// A speaker's enrollment embedding, stored unit-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub speaker_id: SpeakerId,
    pub vector: Vec<f64>,
}

impl SpeakerProfile {
    pub fn new(speaker_id: SpeakerId, vector: Vec<f64>) -> Result<Self> {
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Config(format!(
                "profile for {speaker_id} has zero or non-finite norm"
            )));
        }
        Ok(SpeakerProfile {
            speaker_id,
            vector: vector.into_iter().map(|v| v / norm).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<SpeakerProfile>", into = "Vec<SpeakerProfile>")]
pub struct SpeakerInventory {
    profiles: Vec<SpeakerProfile>,
}

impl SpeakerInventory {
    pub fn new(profiles: Vec<SpeakerProfile>) -> Result<Self> {
        let first = profiles
            .first()
            .ok_or_else(|| Error::Config("speaker inventory is empty".into()))?;
        let dim = first.vector.len();
        let mut seen = HashSet::new();
        for p in &profiles {
            if !seen.insert(p.speaker_id) {
                return Err(Error::Config(format!("duplicate profile for {}", p.speaker_id)));
            }
            if p.vector.len() != dim {
                return Err(Error::Config("profiles differ in dimension".into()));
            }
        }
        Ok(SpeakerInventory { profiles })
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.profiles[0].vector.len()
    }

    pub fn profiles(&self) -> &[SpeakerProfile] {
        &self.profiles
    }

    pub fn speaker(&self, k: usize) -> SpeakerId {
        self.profiles[k].speaker_id
    }

    pub fn index_of(&self, id: SpeakerId) -> Option<usize> {
        self.profiles.iter().position(|p| p.speaker_id == id)
    }

    pub fn contains(&self, id: SpeakerId) -> bool {
        self.index_of(id).is_some()
    }

    /// Profiles stacked as a `K × P` matrix.
    pub fn matrix(&self) -> Tensor {
        let data = self.profiles.iter().flat_map(|p| p.vector.iter().copied()).collect();
        Tensor::from_vec(self.len(), self.dim(), data).expect("profiles share a dimension")
    }

    /// Same profiles in a different order; `order[i]` is the old index of new slot `i`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        Self::new(order.iter().map(|&i| self.profiles[i].clone()).collect())
    }
}

impl TryFrom<Vec<SpeakerProfile>> for SpeakerInventory {
    type Error = Error;
    fn try_from(v: Vec<SpeakerProfile>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SpeakerInventory> for Vec<SpeakerProfile> {
    fn from(v: SpeakerInventory) -> Self {
        v.profiles
    }
}

/// Serialized multi-speaker reference: every speaker's tokens joined with
/// `<sc>`, terminated by `<eos>`, with one speaker label per token. The
/// `<sc>`/`<eos>` token carries the label of the segment it closes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializedReference {
    pub tokens: Vec<TokenId>,
    pub speakers: Vec<SpeakerId>,
}

impl SerializedReference {
    /// Serialize per-speaker utterances in the given order.
    pub fn from_utterances(utterances: &[(SpeakerId, Vec<TokenId>)], vocab: &Vocabulary) -> Self {
        let mut tokens = Vec::new();
        let mut speakers = Vec::new();
        for (i, (spk, words)) in utterances.iter().enumerate() {
            tokens.extend_from_slice(words);
            speakers.extend(std::iter::repeat_n(*spk, words.len()));
            tokens.push(if i + 1 == utterances.len() {
                vocab.eos_id()
            } else {
                vocab.sc_id()
            });
            speakers.push(*spk);
        }
        SerializedReference { tokens, speakers }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Distinct speakers, in order of first appearance.
    pub fn distinct_speakers(&self) -> Vec<SpeakerId> {
        let mut out = Vec::new();
        for s in &self.speakers {
            if !out.contains(s) {
                out.push(*s);
            }
        }
        out
    }

    /// Word count (special symbols excluded).
    pub fn word_count(&self, vocab: &Vocabulary) -> usize {
        self.tokens.iter().filter(|&&t| !vocab.is_special(t)).count()
    }

    /// Per-speaker transcript with segments of the same speaker concatenated.
    pub fn to_transcript(&self, vocab: &Vocabulary) -> Result<AttributedTranscript> {
        let segments = segment_by_sc(&self.tokens, vocab)?;
        let mut pos = 0;
        let mut pieces = Vec::with_capacity(segments.len());
        for seg in segments {
            let speaker = *self.speakers.get(pos).ok_or_else(|| {
                Error::MalformedHypothesis("reference speaker labels are too short".into())
            })?;
            pos += seg.len() + 1;
            pieces.push((speaker, seg));
        }
        Ok(AttributedTranscript::merged(pieces))
    }
}

/// One speaker's utterance in an [`AttributedTranscript`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: SpeakerId,
    pub tokens: Vec<TokenId>,
}

/// Per-speaker transcription with pairwise distinct speakers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributedTranscript {
    pub utterances: Vec<Utterance>,
}

impl AttributedTranscript {
    /// Merge `(speaker, tokens)` pieces: pieces of the same speaker are
    /// concatenated in emission order; the utterance order follows each
    /// speaker's first piece.
    pub fn merged(pieces: impl IntoIterator<Item = (SpeakerId, Vec<TokenId>)>) -> Self {
        let mut utterances: Vec<Utterance> = Vec::new();
        for (speaker, tokens) in pieces {
            match utterances.iter_mut().find(|u| u.speaker == speaker) {
                Some(u) => u.tokens.extend(tokens),
                None => utterances.push(Utterance { speaker, tokens }),
            }
        }
        AttributedTranscript { utterances }
    }

    pub fn speakers(&self) -> Vec<SpeakerId> {
        self.utterances.iter().map(|u| u.speaker).collect()
    }

    pub fn word_count(&self) -> usize {
        self.utterances.iter().map(|u| u.tokens.len()).sum()
    }

    /// Tokens attributed to `speaker` (empty if absent).
    pub fn tokens_of(&self, speaker: SpeakerId) -> &[TokenId] {
        self.utterances
            .iter()
            .find(|u| u.speaker == speaker)
            .map(|u| u.tokens.as_slice())
            .unwrap_or(&[])
    }
}

/// A decode hypothesis: emitted tokens with the per-step model outputs
/// needed to rescore it.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    /// Per-step log speaker posteriors `log β_n` over the inventory.
    pub log_betas: Vec<Vec<f64>>,
    /// Per-step log probability of the emitted token.
    pub token_log_probs: Vec<f64>,
    /// Accumulated raw log joint score.
    pub log_joint: f64,
    pub finished: bool,
    /// `<eos>` was forced at the step cap.
    pub truncated: bool,
}

impl Hypothesis {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Speaker posterior `β_n` of step `n`.
    pub fn beta(&self, n: usize) -> Vec<f64> {
        self.log_betas[n].iter().map(|v| v.exp()).collect()
    }
}

/// Split a finished token sequence at `<sc>` markers, dropping the markers
/// and the final `<eos>`. Adjacent markers yield empty segments.
pub fn segment_by_sc(tokens: &[TokenId], vocab: &Vocabulary) -> Result<Vec<Vec<TokenId>>> {
    let Some((&last, body)) = tokens.split_last() else {
        return Err(Error::MalformedHypothesis("empty token sequence".into()));
    };
    if last != vocab.eos_id() {
        return Err(Error::MalformedHypothesis("missing terminal <eos>".into()));
    }
    if body.contains(&vocab.eos_id()) {
        return Err(Error::MalformedHypothesis("<eos> before the final position".into()));
    }
    Ok(body
        .split(|&t| t == vocab.sc_id())
        .map(<[TokenId]>::to_vec)
        .collect())
}

/// One broken reference invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    LengthMismatch { tokens: usize, speakers: usize },
    EosPlacement,
    TokenOutOfRange { position: usize, token: TokenId },
    SegmentSpeaker { segment: usize },
    AdjacentSameSpeaker { segment: usize },
    UnknownSpeaker { speaker: SpeakerId },
}

/// Collect every invariant violation of `reference`; empty means valid.
pub fn validate_reference(
    reference: &SerializedReference,
    vocab: &Vocabulary,
    inventory: &SpeakerInventory,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let (tokens, speakers) = (&reference.tokens, &reference.speakers);
    if tokens.len() != speakers.len() {
        out.push(Violation::LengthMismatch {
            tokens: tokens.len(),
            speakers: speakers.len(),
        });
    }
    let eos_count = tokens.iter().filter(|&&t| t == vocab.eos_id()).count();
    if eos_count != 1 || tokens.last() != Some(&vocab.eos_id()) {
        out.push(Violation::EosPlacement);
    }
    for (position, &token) in tokens.iter().enumerate() {
        if token >= vocab.len() {
            out.push(Violation::TokenOutOfRange { position, token });
        }
    }

    // Segment labels: every token up to and including the closing symbol
    // shares one speaker.
    let n = tokens.len().min(speakers.len());
    let mut segment = 0;
    let mut seg_speaker: Option<SpeakerId> = None;
    let mut prev_speaker: Option<SpeakerId> = None;
    let mut flagged = false;
    for i in 0..n {
        let s = speakers[i];
        match seg_speaker {
            None => {
                seg_speaker = Some(s);
                if prev_speaker == Some(s) {
                    out.push(Violation::AdjacentSameSpeaker { segment });
                }
            }
            Some(cur) if cur != s && !flagged => {
                out.push(Violation::SegmentSpeaker { segment });
                flagged = true;
            }
            _ => {}
        }
        if tokens[i] == vocab.sc_id() || tokens[i] == vocab.eos_id() {
            prev_speaker = seg_speaker;
            seg_speaker = None;
            segment += 1;
            flagged = false;
        }
    }

    let mut reported = HashSet::new();
    for &s in speakers {
        if !inventory.contains(s) && reported.insert(s) {
            out.push(Violation::UnknownSpeaker { speaker: s });
        }
    }
    out
}
