//! Training objectives.
//!
//! * SA-MMI: negative teacher-forced joint log-probability of the reference.
//! * SA-MBR: expected speaker-attributed error count over an N-best list,
//!   under a posterior renormalized over the list from length-normalized
//!   joint scores (speaker scale 1.0).
//!
//! For the expected error `Ē = Σ_h P̂_h E_h` with `P̂ = softmax(s)` and
//! `s_h = log P_h / |Y_h|`, the derivative with respect to every realized
//! `log o_{n,y_n}` and `log β_{n,s_n}` of hypothesis `h` is
//! `P̂_h (E_h − Ē) / |Y_h|` and zero for unrealized entries.
//! [`mbr_closed_form_errors`] builds exactly those seeds so that injecting
//! them reproduces `backward(Ē)`.

use std::collections::HashMap;

use crate::autodiff::{Axis, Gradients, Tape, Tensor};
use crate::decode::{attribute_speakers, NBestList};
use crate::domain::{
    AttributedTranscript, FeatureSequence, Hypothesis, SerializedReference, SpeakerInventory,
    TokenId, Vocabulary,
};
use crate::error::{Error, Result};
use crate::metrics::sa_error_count;
use crate::model::{
    decoder_step, encode, initial_state, joint_log_prob, picked_scores, start_token, sum_scalars,
    Encoded, ModelParams, GAMMA_MBR,
};

/// SA-MMI loss `-log P(Y_r, S_r | X_r, D_r)` on the tape.
pub fn sa_mmi_loss(
    tape: &mut Tape,
    reference: &SerializedReference,
    x: &FeatureSequence,
    inventory: &SpeakerInventory,
    params: &ModelParams,
    gamma: f64,
) -> Result<Tensor> {
    let lp = joint_log_prob(tape, reference, x, inventory, params, gamma)?;
    tape.scale(&lp, -1.0)
}

/// Softmax over `log_joint_h / len_h`.
pub fn normalized_posterior(log_joints: &[f64], lengths: &[usize]) -> Result<Vec<f64>> {
    if log_joints.is_empty() || log_joints.len() != lengths.len() {
        return Err(Error::Contract("posterior needs N ≥ 1 scores with lengths".into()));
    }
    if lengths.contains(&0) {
        return Err(Error::Contract("hypothesis length must be at least 1".into()));
    }
    let s: Vec<f64> = log_joints
        .iter()
        .zip(lengths)
        .map(|(l, &n)| l / n as f64)
        .collect();
    let mut tape = Tape::new();
    Ok(tape.softmax(&Tensor::row(&s), Axis::Cols)?.data().to_vec())
}

/// One N-best hypothesis prepared for the expected-risk computation.
#[derive(Debug, Clone, PartialEq)]
pub struct MbrHypothesis {
    pub tokens: Vec<TokenId>,
    /// Attributed inventory index per step.
    pub step_speakers: Vec<usize>,
    pub transcript: AttributedTranscript,
    /// Speaker-attributed error count against the reference.
    pub error: usize,
    /// Raw log joint score reported by the search (used for deduplication).
    pub search_score: f64,
}

/// N-best list of one training sample with its error counts.
#[derive(Debug, Clone, PartialEq)]
pub struct MbrBatchItem {
    pub hyps: Vec<MbrHypothesis>,
    /// Divide joint scores by hypothesis length before the softmax.
    pub length_norm: bool,
}

impl MbrBatchItem {
    /// Build from a decoded N-best list, scoring each entry against
    /// `reference`. Entries identical in tokens and per-segment speakers are
    /// merged, keeping the higher search score.
    pub fn from_nbest(
        nbest: &NBestList,
        reference: &SerializedReference,
        vocab: &Vocabulary,
    ) -> Result<Self> {
        let ref_tr = reference.to_transcript(vocab)?;
        let hyps = nbest
            .entries
            .iter()
            .map(|e| MbrHypothesis {
                tokens: e.hypothesis.tokens.clone(),
                step_speakers: e.attribution.step_speakers.clone(),
                error: sa_error_count(&e.attribution.transcript, &ref_tr),
                transcript: e.attribution.transcript.clone(),
                search_score: e.hypothesis.log_joint,
            })
            .collect();
        Ok(Self::new(hyps)?.with_length_norm(nbest.length_norm))
    }

    pub fn new(hyps: Vec<MbrHypothesis>) -> Result<Self> {
        if hyps.is_empty() {
            return Err(Error::Contract("MBR needs at least one hypothesis".into()));
        }
        let mut out: Vec<MbrHypothesis> = Vec::with_capacity(hyps.len());
        let mut seen: HashMap<(Vec<TokenId>, Vec<usize>), usize> = HashMap::new();
        for h in hyps {
            if h.tokens.is_empty() || h.tokens.len() != h.step_speakers.len() {
                return Err(Error::MalformedHypothesis(
                    "hypothesis needs one speaker per token".into(),
                ));
            }
            let key = (h.tokens.clone(), h.step_speakers.clone());
            match seen.get(&key) {
                Some(&i) => {
                    if h.search_score > out[i].search_score {
                        out[i] = h;
                    }
                }
                None => {
                    seen.insert(key, out.len());
                    out.push(h);
                }
            }
        }
        Ok(MbrBatchItem {
            hyps: out,
            length_norm: true,
        })
    }

    pub fn with_length_norm(mut self, on: bool) -> Self {
        self.length_norm = on;
        self
    }

    fn score_scale(&self, h: &MbrHypothesis) -> f64 {
        if self.length_norm {
            1.0 / h.tokens.len() as f64
        } else {
            1.0
        }
    }

    pub fn len(&self) -> usize {
        self.hyps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hyps.is_empty()
    }

    pub fn errors(&self) -> Vec<usize> {
        self.hyps.iter().map(|h| h.error).collect()
    }
}

/// Taped forward of the SA-MBR loss for one sample.
#[derive(Debug, Clone)]
pub struct MbrForward {
    /// `Ē_r` on the tape.
    pub loss: Tensor,
    pub expected_error: f64,
    pub posterior: Vec<f64>,
    /// Length-normalized joint scores `s_h`.
    pub norm_scores: Vec<f64>,
    /// `log o_n` (`1×V`) per hypothesis and step.
    pub log_token_dists: Vec<Vec<Tensor>>,
    /// `log β_n` (`1×K`) per hypothesis and step.
    pub log_speaker_dists: Vec<Vec<Tensor>>,
}

/// Rescore every hypothesis teacher-forced on `tape` (sharing one encoder
/// pass) and form `Ē_r = Σ_h P̂_h E_h` with the errors held constant.
pub fn sa_mbr_loss(
    tape: &mut Tape,
    item: &MbrBatchItem,
    x: &FeatureSequence,
    inventory: &SpeakerInventory,
    params: &ModelParams,
) -> Result<MbrForward> {
    let enc = encode(tape, x, params)?;
    sa_mbr_loss_encoded(tape, item, &enc, inventory, params)
}

pub fn sa_mbr_loss_encoded(
    tape: &mut Tape,
    item: &MbrBatchItem,
    enc: &Encoded,
    inventory: &SpeakerInventory,
    params: &ModelParams,
) -> Result<MbrForward> {
    let profiles = inventory.matrix();
    let mut scores = Vec::with_capacity(item.len());
    let mut log_token_dists = Vec::with_capacity(item.len());
    let mut log_speaker_dists = Vec::with_capacity(item.len());
    for h in &item.hyps {
        if let Some(&k) = h.step_speakers.iter().find(|&&k| k >= inventory.len()) {
            return Err(Error::Contract(format!("speaker index {k} outside inventory")));
        }
        let picked = picked_scores(tape, params, enc, &profiles, &h.tokens, &h.step_speakers)?;
        let tok = sum_scalars(tape, &picked.token_terms)?;
        let spk = sum_scalars(tape, &picked.speaker_terms)?;
        let spk = tape.scale(&spk, GAMMA_MBR)?;
        let raw = tape.add(&tok, &spk)?;
        scores.push(tape.scale(&raw, item.score_scale(h))?);
        log_token_dists.push(picked.steps.iter().map(|s| s.log_token_dist.clone()).collect());
        log_speaker_dists.push(picked.steps.iter().map(|s| s.log_speaker_dist.clone()).collect());
    }
    let refs: Vec<&Tensor> = scores.iter().collect();
    let s = tape.concat(&refs, Axis::Cols)?;
    let posterior = tape.softmax(&s, Axis::Cols)?;

    // Errors are offset by their minimum: identical risk then yields an
    // exactly zero upstream gradient, and the value is unchanged.
    let min_error = item.hyps.iter().map(|h| h.error).min().unwrap_or(0);
    let centered: Vec<f64> = item
        .hyps
        .iter()
        .map(|h| (h.error - min_error) as f64)
        .collect();
    let centered = Tensor::from_vec(item.len(), 1, centered)?;
    let weighted = tape.matmul(&posterior, &centered)?;
    let loss = tape.add(&weighted, &Tensor::scalar(min_error as f64))?;

    Ok(MbrForward {
        expected_error: loss.item(),
        posterior: posterior.data().to_vec(),
        norm_scores: s.data().to_vec(),
        loss,
        log_token_dists,
        log_speaker_dists,
    })
}

/// Closed-form upstream gradient at one realized step of one hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSeed {
    pub token: TokenId,
    pub speaker: usize,
    /// Same value for `∂/∂ log o_{n,token}` and `∂/∂ log β_{n,speaker}`.
    pub value: f64,
}

/// `P̂_h (E_h − Ē) / |Y_h|` at every realized token/speaker position
/// (without the length factor when length normalization is off).
pub fn mbr_closed_form_errors(item: &MbrBatchItem, fwd: &MbrForward) -> Vec<Vec<StepSeed>> {
    item.hyps
        .iter()
        .zip(&fwd.posterior)
        .map(|(h, &p)| {
            let value = p * (h.error as f64 - fwd.expected_error) * item.score_scale(h);
            h.tokens
                .iter()
                .zip(&h.step_speakers)
                .map(|(&token, &speaker)| StepSeed {
                    token,
                    speaker,
                    value,
                })
                .collect()
        })
        .collect()
}

/// Backpropagate the closed-form seeds from the `log o` / `log β` nodes.
pub fn inject_closed_form(
    tape: &Tape,
    fwd: &MbrForward,
    seeds: &[Vec<StepSeed>],
) -> Result<Gradients> {
    let mut owned: Vec<(Tensor, Tensor)> = Vec::new();
    for (h, steps) in seeds.iter().enumerate() {
        for (n, seed) in steps.iter().enumerate() {
            let lo = &fwd.log_token_dists[h][n];
            let mut g = vec![0.0; lo.cols()];
            g[seed.token] = seed.value;
            owned.push((lo.clone(), Tensor::row(&g)));
            let lb = &fwd.log_speaker_dists[h][n];
            let mut g = vec![0.0; lb.cols()];
            g[seed.speaker] = GAMMA_MBR * seed.value;
            owned.push((lb.clone(), Tensor::row(&g)));
        }
    }
    let pairs: Vec<(&Tensor, &Tensor)> = owned.iter().map(|(a, b)| (a, b)).collect();
    tape.inject_gradients(&pairs)
}

/// Expected error over *every* `<eos>`-terminated sequence of length up to
/// `max_len`, with speakers attributed from the model's own `β` and the
/// same length-normalized posterior. Oracle for N-best truncation.
pub fn expected_error_exhaustive(
    x: &FeatureSequence,
    inventory: &SpeakerInventory,
    params: &ModelParams,
    reference: &SerializedReference,
    max_len: usize,
    vocab: &Vocabulary,
) -> Result<f64> {
    if vocab.len() > 5 || max_len > 4 {
        return Err(Error::CostBound(format!(
            "V = {} and max_len = {max_len} (limits 5 and 4)",
            vocab.len()
        )));
    }
    if max_len == 0 {
        return Err(Error::Contract("max_len must be at least 1".into()));
    }
    let ref_tr = reference.to_transcript(vocab)?;
    let mut tape = Tape::new();
    let enc = encode(&mut tape, x, params)?;
    let profiles = inventory.matrix();

    let mut complete: Vec<Hypothesis> = Vec::new();
    let root = Hypothesis {
        tokens: vec![],
        log_betas: vec![],
        token_log_probs: vec![],
        log_joint: 0.0,
        finished: false,
        truncated: false,
    };
    let mut stack = vec![(root, initial_state(params, enc.frames()))];
    while let Some((prefix, state)) = stack.pop() {
        let prev = prefix.tokens.last().copied().unwrap_or_else(|| start_token(params));
        let out = decoder_step(&mut tape, params, &enc, &profiles, prev, &state)?;
        for y in 0..vocab.len() {
            let is_eos = y == vocab.eos_id();
            if !is_eos && prefix.len() + 1 >= max_len {
                continue;
            }
            let mut h = prefix.clone();
            h.tokens.push(y);
            h.token_log_probs.push(out.log_token_dist.data()[y]);
            h.log_betas.push(out.log_speaker_dist.data().to_vec());
            if is_eos {
                h.finished = true;
                complete.push(h);
            } else {
                stack.push((h, out.next_state.clone()));
            }
        }
    }

    let mut log_joints = Vec::with_capacity(complete.len());
    let mut lengths = Vec::with_capacity(complete.len());
    let mut errors = Vec::with_capacity(complete.len());
    for h in &complete {
        log_joints.push(crate::decode::trace_log_joint(h, vocab, GAMMA_MBR));
        lengths.push(h.len());
        let a = attribute_speakers(h, inventory, vocab)?;
        errors.push(sa_error_count(&a.transcript, &ref_tr) as f64);
    }
    let post = normalized_posterior(&log_joints, &lengths)?;
    Ok(post.iter().zip(&errors).map(|(p, e)| p * e).sum())
}
