//! Randomized SA-MBR gradient verification on tiny models.
//!
//! Each instance draws a vocabulary, inventory, model and input, decodes an
//! N-best list and then compares, for every parameter entry,
//! * backpropagation of `Ē` against injection of the closed-form seeds, and
//! * backpropagation of `Ē` against central finite differences with the
//!   N-best list held fixed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::decode::{beam_search, BeamConfig};
use crate::domain::{
    FeatureSequence, SerializedReference, SpeakerId, SpeakerInventory, SpeakerProfile, TokenId,
    Vocabulary,
};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, ParamGrads};
use crate::risk::{inject_closed_form, mbr_closed_form_errors, sa_mbr_loss, MbrBatchItem};
use crate::synthdata::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub seed: u64,
    /// Upper bound on word tokens (the vocabulary adds `<sc>`, `<eos>`).
    pub max_words: usize,
    pub max_speakers: usize,
    pub nbest: usize,
    pub max_len: usize,
    pub fd_step: f64,
    pub closed_form_tol: f64,
    pub fd_tol: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            instances: 20,
            seed: 0,
            max_words: 6,
            max_speakers: 4,
            nbest: 4,
            max_len: 8,
            fd_step: 1e-5,
            closed_form_tol: 1e-6,
            fd_tol: 1e-3,
        }
    }
}

impl GradcheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 || self.max_words < 1 || self.max_speakers < 1 {
            return Err(Error::Config("gradcheck needs instances, words and speakers".into()));
        }
        if self.nbest == 0 || self.max_len < 2 {
            return Err(Error::Config("gradcheck needs nbest >= 1 and max_len >= 2".into()));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::Config("fd_step must be positive".into()));
        }
        Ok(())
    }
}

/// A randomly drawn problem with its decoded N-best list.
#[derive(Debug, Clone)]
pub struct Instance {
    pub vocab: Vocabulary,
    pub params: ModelParams,
    pub x: FeatureSequence,
    pub inventory: SpeakerInventory,
    pub reference: SerializedReference,
    pub item: MbrBatchItem,
}

/// Draw instance `index` of the stream seeded by `cfg.seed`.
pub fn tiny_instance(cfg: &GradcheckConfig, index: usize) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("instance-{index}")));
    let words = rng.random_range(1..=cfg.max_words);
    let vocab = Vocabulary::with_words(words)?;
    let k = rng.random_range(1..=cfg.max_speakers);
    let (feat, spk) = (4, 3);
    let profiles = (0..k)
        .map(|i| {
            let v: Vec<f64> = (0..spk).map(|_| rng.random_range(-1.0..1.0)).collect();
            SpeakerProfile::new(SpeakerId(i as u32 + 1), v)
        })
        .collect::<Result<Vec<_>>>()?;
    let inventory = SpeakerInventory::new(profiles)?;
    let config = ModelConfig {
        feat_dim: feat,
        enc_dim: 2 * rng.random_range(1..=2),
        spk_dim: spk,
        dec_dim: rng.random_range(2..=4),
        vocab_size: vocab.len(),
        start_token: vocab.eos_id(),
        embed_dim: 3,
        att_dim: 3,
        out_dim: rng.random_range(2..=4),
        gamma: 0.1,
    };
    let params = ModelParams::init_scaled(config, rng.random(), 0.8)?;
    let frames = rng.random_range(3..=7);
    let x = FeatureSequence::new(
        frames,
        feat,
        (0..frames * feat).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;

    let utts = rng.random_range(1..=k.min(2));
    let mut pieces: Vec<(SpeakerId, Vec<TokenId>)> = Vec::new();
    for u in 0..utts {
        let n = rng.random_range(1..=2);
        let spk_id = inventory.speaker((u + rng.random_range(0..k)) % k);
        if pieces.last().is_some_and(|p| p.0 == spk_id) {
            continue;
        }
        pieces.push((spk_id, (0..n).map(|_| rng.random_range(0..words)).collect()));
    }
    let reference = SerializedReference::from_utterances(&pieces, &vocab);

    let beam = BeamConfig {
        beam_size: cfg.nbest,
        nbest_size: cfg.nbest,
        max_steps: cfg.max_len,
        length_norm: true,
        gamma_decode: 1.0,
    };
    let nbest = beam_search(&x, &inventory, &params, &vocab, &beam)?;
    let item = MbrBatchItem::from_nbest(&nbest, &reference, &vocab)?;
    Ok(Instance {
        vocab,
        params,
        x,
        inventory,
        reference,
        item,
    })
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Backpropagated and closed-form-injected gradients of `Ē`.
pub fn dual_gradients(inst: &Instance) -> Result<(f64, ParamGrads, ParamGrads)> {
    let mut tape = Tape::new();
    let tracked = inst.params.track(&mut tape);
    let fwd = sa_mbr_loss(&mut tape, &inst.item, &inst.x, &inst.inventory, &tracked)?;
    let auto = tracked.gradients(&tape.backward(&fwd.loss)?);
    let seeds = mbr_closed_form_errors(&inst.item, &fwd);
    let closed = tracked.gradients(&inject_closed_form(&tape, &fwd, &seeds)?);
    Ok((fwd.expected_error, auto, closed))
}

/// Central finite differences of `Ē` over every parameter entry.
pub fn finite_differences(inst: &Instance, step: f64) -> Result<ParamGrads> {
    let eval = |p: &ModelParams| -> Result<f64> {
        Ok(sa_mbr_loss(&mut Tape::new(), &inst.item, &inst.x, &inst.inventory, p)?.expected_error)
    };
    let mut out = ParamGrads::zeros_like(&inst.params);
    for (i, g) in out.0.iter_mut().enumerate() {
        for (j, slot) in g.iter_mut().enumerate() {
            let bumped = |d: f64| {
                let mut q = inst.params.clone();
                q.update(|k, data| {
                    if k == i {
                        data[j] += d;
                    }
                });
                q
            };
            *slot = (eval(&bumped(step))? - eval(&bumped(-step))?) / (2.0 * step);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceReport {
    pub index: usize,
    pub vocab_size: usize,
    pub speakers: usize,
    pub hypotheses: usize,
    pub max_hyp_len: usize,
    pub expected_error: f64,
    pub closed_form_max_rel: f64,
    pub fd_max_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub pass: bool,
    pub closed_form_max_rel: f64,
    pub fd_max_rel: f64,
    pub closed_form_tol: f64,
    pub fd_tol: f64,
    pub instances: Vec<InstanceReport>,
}

fn max_rel(a: &ParamGrads, b: &ParamGrads, floor: f64) -> f64 {
    a.flat().zip(b.flat()).map(|(x, y)| rel_err(x, y, floor)).fold(0.0, f64::max)
}

pub fn run(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    cfg.validate()?;
    let mut instances = Vec::with_capacity(cfg.instances);
    for index in 0..cfg.instances {
        let inst = tiny_instance(cfg, index)?;
        let (e, auto, closed) = dual_gradients(&inst)?;
        let fd = finite_differences(&inst, cfg.fd_step)?;
        instances.push(InstanceReport {
            index,
            vocab_size: inst.vocab.len(),
            speakers: inst.inventory.len(),
            hypotheses: inst.item.len(),
            max_hyp_len: inst.item.hyps.iter().map(|h| h.tokens.len()).max().unwrap_or(0),
            expected_error: e,
            closed_form_max_rel: max_rel(&auto, &closed, 1e-8),
            fd_max_rel: max_rel(&auto, &fd, 1e-6),
        });
    }
    let cf = instances.iter().map(|r| r.closed_form_max_rel).fold(0.0, f64::max);
    let fd = instances.iter().map(|r| r.fd_max_rel).fold(0.0, f64::max);
    Ok(GradcheckReport {
        pass: cf < cfg.closed_form_tol && fd < cfg.fd_tol,
        closed_form_max_rel: cf,
        fd_max_rel: fd,
        closed_form_tol: cfg.closed_form_tol,
        fd_tol: cfg.fd_tol,
        instances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_respect_bounds() {
        let cfg = GradcheckConfig::default();
        for i in 0..10 {
            let inst = tiny_instance(&cfg, i).unwrap();
            assert!(inst.vocab.len() <= 8 && inst.inventory.len() <= 4);
            assert!(inst.item.len() <= 4);
            assert!(inst.item.hyps.iter().all(|h| h.tokens.len() <= 8));
        }
    }

    #[test]
    fn small_run_passes() {
        let cfg = GradcheckConfig {
            instances: 3,
            ..GradcheckConfig::default()
        };
        let r = run(&cfg).unwrap();
        assert!(r.pass, "{r:?}");
    }
}
