//! Toy-scale joint ASR / speaker-identification encoder-decoder.
//!
//! ASR block: a bidirectional recurrent encoder produces `H_enc`; at each
//! decoder step a recurrent state `u_n` drives additive, location-aware
//! attention `α_n` over `H_enc`, giving the context `c_n`.
//!
//! Speaker block: a projection plus recurrent layer produces `H_spk`; the
//! *same* `α_n` pools it into `p_n`, a speaker-query recurrence turns
//! `(p_n, y_{n-1}, q_{n-1})` into `q_n`, and dot-product attention of `q_n`
//! over the inventory gives `β_n` and the weighted profile `d̄_n`.
//!
//! The output recurrence reads `(c_n, u_n, d̄_n)` and emits `log o_n`.
//! All recurrent layers are single-layer `tanh` cells.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Gradients, Tape, Tensor};
use crate::domain::{FeatureSequence, SerializedReference, SpeakerInventory, TokenId, Vocabulary};
use crate::error::{Error, Result};

/// SA-MMI speaker-probability scale.
pub const GAMMA_MMI: f64 = 0.1;
/// Speaker scale inside the SA-MBR posterior.
pub const GAMMA_MBR: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feat_dim: usize,
    /// Encoder output width; split evenly between the two directions.
    pub enc_dim: usize,
    /// Speaker embedding / profile width.
    pub spk_dim: usize,
    pub dec_dim: usize,
    pub vocab_size: usize,
    /// Token fed to the first decoder step (the vocabulary's `<eos>`).
    pub start_token: TokenId,
    pub embed_dim: usize,
    pub att_dim: usize,
    pub out_dim: usize,
    /// Speaker-probability scale in the joint score.
    pub gamma: f64,
}

impl ModelConfig {
    /// Default toy dimensions for a given feature/profile/vocabulary size.
    pub fn small(feat_dim: usize, spk_dim: usize, vocab: &Vocabulary) -> Self {
        ModelConfig {
            feat_dim,
            enc_dim: 32,
            spk_dim,
            dec_dim: 32,
            vocab_size: vocab.len(),
            start_token: vocab.eos_id(),
            embed_dim: 16,
            att_dim: 24,
            out_dim: 32,
            gamma: GAMMA_MMI,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.feat_dim,
            self.enc_dim,
            self.spk_dim,
            self.dec_dim,
            self.vocab_size,
            self.embed_dim,
            self.att_dim,
            self.out_dim,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.start_token >= self.vocab_size {
            return Err(Error::Config("start token outside vocabulary".into()));
        }
        if self.enc_dim % 2 != 0 {
            return Err(Error::Config("enc_dim must be even (bidirectional)".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        Ok(())
    }
}

macro_rules! model_params {
    ($($name:ident),* $(,)?) => {
        /// Named parameter tensors of the model.
        #[derive(Debug, Clone)]
        pub struct ModelParams {
            pub config: ModelConfig,
            $(pub $name: Tensor,)*
        }

        impl ModelParams {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($name)),*];

            pub fn tensors(&self) -> Vec<&Tensor> {
                vec![$(&self.$name),*]
            }

            fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
                vec![$(&mut self.$name),*]
            }
        }
    };
}

model_params!(
    enc_fw_w, enc_fw_u, enc_fw_b, enc_bw_w, enc_bw_u, enc_bw_b,
    spk_proj_w, spk_proj_b, spk_rnn_w, spk_rnn_u, spk_rnn_b,
    embed,
    dec_w, dec_u, dec_b,
    att_h, att_u, att_loc, att_b, att_v,
    query_w, query_u, query_b, inv_w,
    out_w, out_u, out_b, proj_w, proj_b,
);

impl ModelParams {
    fn shapes(c: &ModelConfig) -> Vec<[usize; 2]> {
        let h = c.enc_dim / 2;
        let (f, e, p, u, m, a, r, v) = (
            c.feat_dim, c.enc_dim, c.spk_dim, c.dec_dim, c.embed_dim, c.att_dim, c.out_dim,
            c.vocab_size,
        );
        vec![
            [f, h], [h, h], [1, h], [f, h], [h, h], [1, h],
            [f, p], [1, p], [p, p], [p, p], [1, p],
            [v, m],
            [m + e, u], [u, u], [1, u],
            [e, a], [u, a], [1, a], [1, a], [a, 1],
            [p + m, p], [p, p], [1, p], [p, p],
            [e + u + p, r], [r, r], [1, r], [r, v], [1, v],
        ]
    }

    fn from_fn(config: ModelConfig, mut fill: impl FnMut([usize; 2]) -> Tensor) -> Result<Self> {
        config.validate()?;
        let shapes = Self::shapes(&config);
        let mut params = ModelParams::zeros_unchecked(config);
        for (t, shape) in params.tensors_mut().into_iter().zip(shapes) {
            *t = fill(shape);
        }
        Ok(params)
    }

    fn zeros_unchecked(config: ModelConfig) -> Self {
        let z = Tensor::zeros(1, 1);
        ModelParams {
            config,
            enc_fw_w: z.clone(), enc_fw_u: z.clone(), enc_fw_b: z.clone(),
            enc_bw_w: z.clone(), enc_bw_u: z.clone(), enc_bw_b: z.clone(),
            spk_proj_w: z.clone(), spk_proj_b: z.clone(),
            spk_rnn_w: z.clone(), spk_rnn_u: z.clone(), spk_rnn_b: z.clone(),
            embed: z.clone(),
            dec_w: z.clone(), dec_u: z.clone(), dec_b: z.clone(),
            att_h: z.clone(), att_u: z.clone(), att_loc: z.clone(), att_b: z.clone(), att_v: z.clone(),
            query_w: z.clone(), query_u: z.clone(), query_b: z.clone(), inv_w: z.clone(),
            out_w: z.clone(), out_u: z.clone(), out_b: z.clone(), proj_w: z.clone(), proj_b: z,
        }
    }

    /// All-zero parameters (uniform output and speaker distributions).
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        Self::from_fn(config, |[r, c]| Tensor::zeros(r, c))
    }

    /// Uniform `[-0.1, 0.1]` initialization from a seed.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::init_scaled(config, seed, 0.1)
    }

    pub fn init_scaled(config: ModelConfig, seed: u64, range: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::from_fn(config, |[r, c]| {
            let data = (0..r * c).map(|_| rng.random_range(-range..=range)).collect();
            Tensor::from_vec(r, c, data).expect("shape matches")
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Register every parameter on `tape`, returning the tracked copy.
    pub fn track(&self, tape: &mut Tape) -> ModelParams {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            *t = tape.track(t);
        }
        out
    }

    /// Gradients of a tracked copy, zero-filled where nothing flowed.
    pub fn gradients(&self, grads: &Gradients) -> ParamGrads {
        ParamGrads(
            self.tensors()
                .iter()
                .map(|t| grads.get(t).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
                .collect(),
        )
    }

    /// Apply `f(param_index, values)` to each tensor's data.
    pub fn update(&mut self, mut f: impl FnMut(usize, &mut [f64])) {
        for (i, t) in self.tensors_mut().into_iter().enumerate() {
            let mut data = t.data().to_vec();
            f(i, &mut data);
            *t = Tensor::from_vec(t.rows(), t.cols(), data).expect("same shape");
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params: Self::NAMES
                .iter()
                .zip(self.tensors())
                .map(|(n, t)| {
                    (
                        n.to_string(),
                        NamedTensor {
                            shape: t.shape().to_vec(),
                            data: t.data().to_vec(),
                        },
                    )
                })
                .collect(),
        };
        let text = serde_json::to_string(&ckpt)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let shapes = Self::shapes(&ckpt.config);
        let mut params = ModelParams::zeros_unchecked(ckpt.config.clone());
        ckpt.config.validate()?;
        for ((name, slot), shape) in Self::NAMES.iter().zip(params.tensors_mut()).zip(shapes) {
            let nt = ckpt
                .params
                .get(*name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks {name}")))?;
            if nt.shape != shape {
                return Err(Error::Config(format!(
                    "{name}: expected shape {shape:?}, found {:?}",
                    nt.shape
                )));
            }
            *slot = Tensor::from_vec(shape[0], shape[1], nt.data.clone())?;
        }
        Ok(params)
    }
}

const CHECKPOINT_FORMAT: &str = "sambr-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    params: BTreeMap<String, NamedTensor>,
}

/// Per-parameter gradient buffers, aligned with [`ModelParams::NAMES`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub Vec<Vec<f64>>);

impl ParamGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        ParamGrads(params.tensors().iter().map(|t| vec![0.0; t.len()]).collect())
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, f: f64) {
        self.0.iter_mut().flatten().for_each(|x| *x *= f);
    }

    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().flatten().copied()
    }

    pub fn norm(&self) -> f64 {
        self.flat().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_all_zero(&self) -> bool {
        self.flat().all(|x| x == 0.0)
    }
}

/// Encoder outputs for one input, plus the attention key projection.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub h_enc: Tensor,
    pub h_spk: Tensor,
    att_keys: Tensor,
}

impl Encoded {
    pub fn frames(&self) -> usize {
        self.h_enc.rows()
    }
}

/// Recurrent carries between decoder steps.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub u: Tensor,
    pub q: Tensor,
    pub r: Tensor,
    pub c: Tensor,
    pub alpha: Tensor,
}

/// One decoder step's outputs.
#[derive(Debug, Clone)]
pub struct DecoderStepOutput {
    /// `log o_n`, `1×V`.
    pub log_token_dist: Tensor,
    /// `log β_n`, `1×K`.
    pub log_speaker_dist: Tensor,
    /// `α_n`, `1×T`.
    pub attention: Tensor,
    /// The weights actually used to pool `H_spk` into `p_n`.
    pub speaker_pooling: Tensor,
    /// `d̄_n`, `1×P`.
    pub weighted_profile: Tensor,
    pub next_state: DecoderState,
}

fn rnn_step(tape: &mut Tape, x_proj: &Tensor, h: &Tensor, u: &Tensor) -> Result<Tensor> {
    let hu = tape.matmul(h, u)?;
    let pre = tape.add(x_proj, &hu)?;
    tape.tanh(&pre)
}

/// `X W + b` for every row of `x`.
fn affine_rows(tape: &mut Tape, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let xw = tape.matmul(x, w)?;
    let bb = tape.broadcast_rows(b, x.rows())?;
    tape.add(&xw, &bb)
}

fn affine(tape: &mut Tape, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let xw = tape.matmul(x, w)?;
    tape.add(&xw, b)
}

/// Run a `tanh` recurrence over the rows of pre-projected inputs.
fn recur(tape: &mut Tape, x_proj: &Tensor, u: &Tensor, reverse: bool) -> Result<Tensor> {
    let (t_len, hid) = (x_proj.rows(), x_proj.cols());
    let mut h = Tensor::zeros(1, hid);
    let mut outs = vec![None; t_len];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..t_len).rev())
    } else {
        Box::new(0..t_len)
    };
    for t in order {
        let xt = tape.slice(x_proj, t..t + 1, 0..hid)?;
        h = rnn_step(tape, &xt, &h, u)?;
        outs[t] = Some(h.clone());
    }
    let rows: Vec<Tensor> = outs.into_iter().map(|o| o.expect("every frame visited")).collect();
    let refs: Vec<&Tensor> = rows.iter().collect();
    tape.concat(&refs, Axis::Rows)
}

/// Frame-synchronous ASR and speaker encoders.
pub fn encode(tape: &mut Tape, x: &FeatureSequence, params: &ModelParams) -> Result<Encoded> {
    let cfg = &params.config;
    if x.dim() != cfg.feat_dim {
        return Err(Error::Config(format!(
            "feature dim {} does not match model feat_dim {}",
            x.dim(),
            cfg.feat_dim
        )));
    }
    let frames = x.frames();
    let fw_in = affine_rows(tape, frames, &params.enc_fw_w, &params.enc_fw_b)?;
    let fw = recur(tape, &fw_in, &params.enc_fw_u, false)?;
    let bw_in = affine_rows(tape, frames, &params.enc_bw_w, &params.enc_bw_b)?;
    let bw = recur(tape, &bw_in, &params.enc_bw_u, true)?;
    let h_enc = tape.concat(&[&fw, &bw], Axis::Cols)?;

    let proj = affine_rows(tape, frames, &params.spk_proj_w, &params.spk_proj_b)?;
    let proj = tape.tanh(&proj)?;
    let spk_in = affine_rows(tape, &proj, &params.spk_rnn_w, &params.spk_rnn_b)?;
    let h_spk = recur(tape, &spk_in, &params.spk_rnn_u, false)?;

    let att_keys = affine_rows(tape, &h_enc, &params.att_h, &params.att_b)?;
    Ok(Encoded {
        h_enc,
        h_spk,
        att_keys,
    })
}

/// Decoder state before the first token.
pub fn initial_state(params: &ModelParams, frames: usize) -> DecoderState {
    let c = &params.config;
    DecoderState {
        u: Tensor::zeros(1, c.dec_dim),
        q: Tensor::zeros(1, c.spk_dim),
        r: Tensor::zeros(1, c.out_dim),
        c: Tensor::zeros(1, c.enc_dim),
        alpha: Tensor::zeros(1, frames),
    }
}

/// Token fed to the first decoder step.
pub fn start_token(params: &ModelParams) -> TokenId {
    params.config.start_token
}

/// One step of the joint decoder. `profiles` is the `K × P` inventory matrix.
pub fn decoder_step(
    tape: &mut Tape,
    params: &ModelParams,
    enc: &Encoded,
    profiles: &Tensor,
    prev_token: TokenId,
    prev: &DecoderState,
) -> Result<DecoderStepOutput> {
    let cfg = &params.config;
    if prev_token >= cfg.vocab_size {
        return Err(Error::Config(format!("token {prev_token} outside vocabulary")));
    }
    if profiles.cols() != cfg.spk_dim || profiles.rows() == 0 {
        return Err(Error::Config(format!(
            "inventory is {}x{}, model expects K x {}",
            profiles.rows(),
            profiles.cols(),
            cfg.spk_dim
        )));
    }
    let t_len = enc.frames();
    let emb = tape.slice(&params.embed, prev_token..prev_token + 1, 0..cfg.embed_dim)?;

    // u_n = DecoderRNN(y_{n-1}, c_{n-1}, u_{n-1})
    let dec_in = tape.concat(&[&emb, &prev.c], Axis::Cols)?;
    let dec_x = affine(tape, &dec_in, &params.dec_w, &params.dec_b)?;
    let u = rnn_step(tape, &dec_x, &prev.u, &params.dec_u)?;

    // α_n from content (u_n against H_enc keys) and location (α_{n-1}).
    let uq = tape.matmul(&u, &params.att_u)?;
    let uq = tape.broadcast_rows(&uq, t_len)?;
    let prev_alpha = tape.reshape(&prev.alpha, t_len, 1)?;
    let loc = tape.matmul(&prev_alpha, &params.att_loc)?;
    let pre = tape.add(&enc.att_keys, &uq)?;
    let pre = tape.add(&pre, &loc)?;
    let act = tape.tanh(&pre)?;
    let energy = tape.matmul(&act, &params.att_v)?;
    let energy = tape.reshape(&energy, 1, t_len)?;
    let alpha = tape.softmax(&energy, Axis::Cols)?;
    let c = tape.matmul(&alpha, &enc.h_enc)?;

    // p_n pools H_spk with the same α_n.
    let p = tape.matmul(&alpha, &enc.h_spk)?;
    let q_in = tape.concat(&[&p, &emb], Axis::Cols)?;
    let q_x = affine(tape, &q_in, &params.query_w, &params.query_b)?;
    let q = rnn_step(tape, &q_x, &prev.q, &params.query_u)?;

    // β_n = softmax over dot products with the profiles.
    let key = tape.matmul(&q, &params.inv_w)?;
    let profiles_t = tape.transpose(profiles)?;
    let scores = tape.matmul(&key, &profiles_t)?;
    let log_beta = tape.log_softmax(&scores, Axis::Cols)?;
    let beta = tape.exp(&log_beta)?;
    let d_bar = tape.matmul(&beta, profiles)?;

    // o_n = DecoderOut(c_n, u_n, d̄_n)
    let out_in = tape.concat(&[&c, &u, &d_bar], Axis::Cols)?;
    let out_x = affine(tape, &out_in, &params.out_w, &params.out_b)?;
    let r = rnn_step(tape, &out_x, &prev.r, &params.out_u)?;
    let logits = affine(tape, &r, &params.proj_w, &params.proj_b)?;
    let log_o = tape.log_softmax(&logits, Axis::Cols)?;

    Ok(DecoderStepOutput {
        log_token_dist: log_o,
        log_speaker_dist: log_beta,
        attention: alpha.clone(),
        speaker_pooling: alpha.clone(),
        weighted_profile: d_bar,
        next_state: DecoderState {
            u,
            q,
            r,
            c,
            alpha,
        },
    })
}

/// Teacher-forced decoder pass over `tokens`, returning every step output.
pub fn teacher_forced(
    tape: &mut Tape,
    params: &ModelParams,
    enc: &Encoded,
    profiles: &Tensor,
    tokens: &[TokenId],
) -> Result<Vec<DecoderStepOutput>> {
    let mut state = initial_state(params, enc.frames());
    let mut prev = start_token(params);
    let mut outs = Vec::with_capacity(tokens.len());
    for &y in tokens {
        let step = decoder_step(tape, params, enc, profiles, prev, &state)?;
        state = step.next_state.clone();
        outs.push(step);
        prev = y;
    }
    Ok(outs)
}

/// Per-step picked log-probabilities `log o_{n,y_n}` and `log β_{n,s_n}`.
#[derive(Debug, Clone)]
pub struct PickedScores {
    pub token_terms: Vec<Tensor>,
    pub speaker_terms: Vec<Tensor>,
    /// Full step outputs (for gradient injection).
    pub steps: Vec<DecoderStepOutput>,
}

/// Teacher-forced per-step log-probabilities of `tokens` with speakers given
/// as inventory indices.
pub fn picked_scores(
    tape: &mut Tape,
    params: &ModelParams,
    enc: &Encoded,
    profiles: &Tensor,
    tokens: &[TokenId],
    speaker_idx: &[usize],
) -> Result<PickedScores> {
    if tokens.len() != speaker_idx.len() {
        return Err(Error::Contract("token and speaker sequences differ in length".into()));
    }
    let steps = teacher_forced(tape, params, enc, profiles, tokens)?;
    let mut token_terms = Vec::with_capacity(steps.len());
    let mut speaker_terms = Vec::with_capacity(steps.len());
    for ((step, &y), &k) in steps.iter().zip(tokens).zip(speaker_idx) {
        token_terms.push(tape.pick(&step.log_token_dist, 0, y)?);
        speaker_terms.push(tape.pick(&step.log_speaker_dist, 0, k)?);
    }
    Ok(PickedScores {
        token_terms,
        speaker_terms,
        steps,
    })
}

/// Sum of `1×1` tensors.
pub fn sum_scalars(tape: &mut Tape, terms: &[Tensor]) -> Result<Tensor> {
    let mut iter = terms.iter();
    let Some(first) = iter.next() else {
        return Ok(Tensor::scalar(0.0));
    };
    let mut acc = first.clone();
    for t in iter {
        acc = tape.add(&acc, t)?;
    }
    Ok(acc)
}

/// Map reference speaker ids to inventory indices.
pub fn speaker_indices(
    reference: &SerializedReference,
    inventory: &SpeakerInventory,
) -> Result<Vec<usize>> {
    reference
        .speakers
        .iter()
        .map(|&s| inventory.index_of(s).ok_or(Error::MissingProfile(s.0)))
        .collect()
}

/// Teacher-forced `log P(Y,S|X,D) = Σ_n [log o_{n,y_n} + γ log β_{n,s_n}]`.
pub fn joint_log_prob(
    tape: &mut Tape,
    reference: &SerializedReference,
    x: &FeatureSequence,
    inventory: &SpeakerInventory,
    params: &ModelParams,
    gamma: f64,
) -> Result<Tensor> {
    let idx = speaker_indices(reference, inventory)?;
    let enc = encode(tape, x, params)?;
    let picked = picked_scores(tape, params, &enc, &inventory.matrix(), &reference.tokens, &idx)?;
    let tok = sum_scalars(tape, &picked.token_terms)?;
    let spk = sum_scalars(tape, &picked.speaker_terms)?;
    let spk = tape.scale(&spk, gamma)?;
    tape.add(&tok, &spk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{SpeakerId, SpeakerProfile, Vocabulary};

    fn cfg() -> ModelConfig {
        ModelConfig {
            feat_dim: 5,
            enc_dim: 6,
            spk_dim: 4,
            dec_dim: 5,
            vocab_size: 5,
            start_token: 4,
            embed_dim: 3,
            att_dim: 4,
            out_dim: 5,
            gamma: 0.1,
        }
    }

    fn features(t: usize, f: usize, seed: u64) -> FeatureSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureSequence::new(t, f, (0..t * f).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn inventory(vectors: &[Vec<f64>]) -> SpeakerInventory {
        SpeakerInventory::new(
            vectors
                .iter()
                .enumerate()
                .map(|(i, v)| SpeakerProfile::new(SpeakerId(10 + i as u32), v.clone()).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn inv3() -> SpeakerInventory {
        inventory(&[
            vec![1.0, 0.2, 0.0, -0.3],
            vec![0.0, 1.0, 0.5, 0.1],
            vec![-0.4, 0.0, 0.2, 1.0],
        ])
    }

    #[test]
    fn encode_shapes_and_determinism() {
        let p = ModelParams::init(cfg(), 1).unwrap();
        let x = features(10, 5, 2);
        let a = encode(&mut Tape::new(), &x, &p).unwrap();
        assert_eq!(a.h_enc.shape(), [10, 6]);
        assert_eq!(a.h_spk.shape(), [10, 4]);
        let b = encode(&mut Tape::new(), &x, &p).unwrap();
        assert_eq!(a.h_enc.data(), b.h_enc.data());
        assert_eq!(a.h_spk.data(), b.h_spk.data());
        assert!(encode(&mut Tape::new(), &features(4, 3, 0), &p).is_err());
    }

    #[test]
    fn zero_params_give_zero_embeddings() {
        let p = ModelParams::zeros(cfg()).unwrap();
        let e = encode(&mut Tape::new(), &features(7, 5, 3), &p).unwrap();
        assert!(e.h_enc.data().iter().chain(e.h_spk.data()).all(|v| *v == 0.0));
    }

    #[test]
    fn single_profile_inventory() {
        let p = ModelParams::init(cfg(), 4).unwrap();
        let inv = inventory(&[vec![0.3, -0.2, 0.9, 0.1]]);
        let enc = encode(&mut Tape::new(), &features(6, 5, 5), &p).unwrap();
        let init = initial_state(&p, 6);
        let out = decoder_step(&mut Tape::new(), &p, &enc, &inv.matrix(), 0, &init).unwrap();
        assert_eq!(out.log_speaker_dist.data(), &[0.0]);
        for (a, b) in out.weighted_profile.data().iter().zip(&inv.profiles()[0].vector) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_profiles_split_evenly() {
        let p = ModelParams::init(cfg(), 4).unwrap();
        let v = vec![0.5, 0.5, -0.5, 0.5];
        let inv = inventory(&[v.clone(), v.clone()]);
        let enc = encode(&mut Tape::new(), &features(6, 5, 5), &p).unwrap();
        let out =
            decoder_step(&mut Tape::new(), &p, &enc, &inv.matrix(), 1, &initial_state(&p, 6)).unwrap();
        for lb in out.log_speaker_dist.data() {
            assert!((lb.exp() - 0.5).abs() < 1e-15);
        }
        for (a, b) in out.weighted_profile.data().iter().zip(&v) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn step_distributions_normalize_and_alpha_is_shared() {
        let p = ModelParams::init_scaled(cfg(), 8, 0.5).unwrap();
        let inv = inv3();
        let enc = encode(&mut Tape::new(), &features(9, 5, 9), &p).unwrap();
        let outs = teacher_forced(&mut Tape::new(), &p, &enc, &inv.matrix(), &[0, 1, 3, 2, 4]).unwrap();
        for o in &outs {
            let so: f64 = o.log_token_dist.data().iter().map(|v| v.exp()).sum();
            let sb: f64 = o.log_speaker_dist.data().iter().map(|v| v.exp()).sum();
            let sa: f64 = o.attention.data().iter().sum();
            assert!((so - 1.0).abs() < 1e-9 && (sb - 1.0).abs() < 1e-9 && (sa - 1.0).abs() < 1e-9);
            assert!(o.attention.data().iter().all(|a| *a >= 0.0));
            assert!(std::ptr::eq(o.attention.data(), o.speaker_pooling.data()));
        }
    }

    #[test]
    fn inventory_permutation_permutes_beta_only() {
        let p = ModelParams::init_scaled(cfg(), 12, 0.5).unwrap();
        let inv = inv3();
        let perm = [2, 0, 1];
        let inv_p = inv.permuted(&perm).unwrap();
        let x = features(8, 5, 13);
        let enc = encode(&mut Tape::new(), &x, &p).unwrap();
        let tokens = [1, 0, 3, 2, 4];
        let a = teacher_forced(&mut Tape::new(), &p, &enc, &inv.matrix(), &tokens).unwrap();
        let b = teacher_forced(&mut Tape::new(), &p, &enc, &inv_p.matrix(), &tokens).unwrap();
        for (sa, sb) in a.iter().zip(&b) {
            for (new, &old) in perm.iter().enumerate() {
                let (x, y) = (sb.log_speaker_dist.data()[new], sa.log_speaker_dist.data()[old]);
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
            for (x, y) in sa.log_token_dist.data().iter().zip(sb.log_token_dist.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_model_joint_log_prob() {
        let p = ModelParams::zeros(cfg()).unwrap();
        let v = Vocabulary::with_words(3).unwrap();
        let inv = inv3();
        let r = SerializedReference::from_utterances(
            &[(SpeakerId(10), vec![0, 1]), (SpeakerId(12), vec![2])],
            &v,
        );
        let n = r.len() as f64;
        let lp = joint_log_prob(&mut Tape::new(), &r, &features(6, 5, 1), &inv, &p, 0.1).unwrap();
        let expected = n * (-(5f64).ln() - 0.1 * (3f64).ln());
        assert!((lp.item() - expected).abs() < 1e-12);
    }

    #[test]
    fn gamma_zero_drops_speaker_terms_and_prefix_is_additive() {
        let p = ModelParams::init_scaled(cfg(), 3, 0.4).unwrap();
        let inv = inv3();
        let x = features(7, 5, 21);
        let tokens = vec![0, 2, 3, 1, 4];
        let idx = vec![0, 0, 0, 2, 2];
        let mut tape = Tape::new();
        let enc = encode(&mut tape, &x, &p).unwrap();
        let picked = picked_scores(&mut tape, &p, &enc, &inv.matrix(), &tokens, &idx).unwrap();
        let tok_total: f64 = picked.token_terms.iter().map(Tensor::item).sum();
        let r = SerializedReference {
            tokens: tokens.clone(),
            speakers: idx.iter().map(|&k| inv.speaker(k)).collect(),
        };
        let lp0 = joint_log_prob(&mut Tape::new(), &r, &x, &inv, &p, 0.0).unwrap();
        assert_eq!(lp0.item(), sum_of(&picked.token_terms));
        assert!((lp0.item() - tok_total).abs() < 1e-12);

        // Prefix steps are unchanged by later tokens.
        let short = teacher_forced(&mut Tape::new(), &p, &enc, &inv.matrix(), &tokens[..3]).unwrap();
        for (a, b) in short.iter().zip(&picked.steps) {
            assert_eq!(a.log_token_dist.data(), b.log_token_dist.data());
        }
    }

    fn sum_of(terms: &[Tensor]) -> f64 {
        let mut tape = Tape::new();
        sum_scalars(&mut tape, terms).unwrap().item()
    }

    #[test]
    fn scalar_joint_example() {
        // token prob 0.5, speaker prob 0.25, γ = 0.1
        let expected = (0.5f64 * 0.25f64.powf(0.1)).ln();
        let direct = 0.5f64.ln() + 0.1 * 0.25f64.ln();
        assert!((expected - direct).abs() < 1e-15);
        assert!((direct - (-0.8318)).abs() < 5e-5);
    }

    #[test]
    fn missing_profile_error() {
        let p = ModelParams::zeros(cfg()).unwrap();
        let v = Vocabulary::with_words(3).unwrap();
        let r = SerializedReference::from_utterances(&[(SpeakerId(99), vec![0])], &v);
        assert!(matches!(
            joint_log_prob(&mut Tape::new(), &r, &features(4, 5, 0), &inv3(), &p, 0.1),
            Err(Error::MissingProfile(99))
        ));
    }

    #[test]
    fn log_token_prob_matches_finite_difference() {
        let p = ModelParams::init_scaled(cfg(), 31, 0.5).unwrap();
        let inv = inv3();
        let x = features(6, 5, 32);
        let tokens = [2, 0, 3];
        let f = |params: &ModelParams| -> f64 {
            let mut tape = Tape::new();
            let enc = encode(&mut tape, &x, params).unwrap();
            let steps = teacher_forced(&mut tape, params, &enc, &inv.matrix(), &tokens).unwrap();
            steps[2].log_token_dist.data()[1]
        };
        let mut tape = Tape::new();
        let tracked = p.track(&mut tape);
        let enc = encode(&mut tape, &x, &tracked).unwrap();
        let steps = teacher_forced(&mut tape, &tracked, &enc, &inv.matrix(), &tokens).unwrap();
        let target = tape.pick(&steps[2].log_token_dist, 0, 1).unwrap();
        let grads = tracked.gradients(&tape.backward(&target).unwrap());
        let h = 1e-5;
        for (pi, ei) in [(0usize, 3usize), (12, 5), (16, 2), (20, 7), (27, 4)] {
            let mut plus = p.clone();
            plus.update(|i, d| if i == pi { d[ei] += h });
            let mut minus = p.clone();
            minus.update(|i, d| if i == pi { d[ei] -= h });
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let an = grads.0[pi][ei];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(rel < 1e-4 || (fd - an).abs() < 1e-7, "{}[{ei}]: fd {fd} vs {an}", ModelParams::NAMES[pi]);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let p = ModelParams::init(cfg(), 77).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        p.save(&path).unwrap();
        let q = ModelParams::load(&path).unwrap();
        assert_eq!(p.config, q.config);
        for (a, b) in p.tensors().iter().zip(q.tensors()) {
            assert_eq!(a.shape(), b.shape());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
