//! Byte-level tokenizer, toy Mamba-2 language model and greedy generation.
//!
//! The model input is `[V_out rows] ++ [boundary] ++ embed(tokenize(query))`.
//! Decoding runs in recurrent mode: a [`LmSession`] keeps one
//! [`Mamba2State`] per layer and feeds one token per step.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mamba2::{mamba2_block, mamba2_block_from, rmsnorm, Mamba2BlockWeights, Mamba2Config, Mamba2State};
use crate::tensor::{matmul_into, Element, Tensor};

pub const BOS: u32 = 256;
pub const EOS: u32 = 257;
pub const VOCAB: usize = 258;

/// `[BOS, bytes…, EOS]`.
pub fn tokenize(q: &[u8]) -> Vec<u32> {
    let mut ids = Vec::with_capacity(q.len() + 2);
    ids.push(BOS);
    ids.extend(q.iter().map(|&b| b as u32));
    ids.push(EOS);
    ids
}

/// Byte tokens back to bytes; specials and out-of-range ids are dropped.
pub fn detokenize(ids: &[u32]) -> Vec<u8> {
    ids.iter().filter(|&&id| id < 256).map(|&id| id as u8).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyLmConfig {
    pub d_llm: usize,
    pub n_layers: usize,
    pub d_state: usize,
    pub n_heads: usize,
    pub max_gen: usize,
}

impl Default for ToyLmConfig {
    fn default() -> Self {
        ToyLmConfig {
            d_llm: 64,
            n_layers: 4,
            d_state: 16,
            n_heads: 4,
            max_gen: 32,
        }
    }
}

impl ToyLmConfig {
    pub fn block(&self) -> Result<Mamba2Config> {
        if self.n_layers == 0 {
            return Err(Error::domain("the language model needs at least one layer"));
        }
        Mamba2Config::new(self.d_llm, self.d_state, self.n_heads)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyLmWeights<T> {
    pub cfg: ToyLmConfig,
    /// `VOCAB × d_llm`, also used transposed as the output projection.
    pub embed: Tensor<T>,
    /// Separates image tokens from text.
    pub boundary: Vec<T>,
    pub layers: Vec<Mamba2BlockWeights<T>>,
    pub final_norm: Vec<T>,
    unembed: Tensor<T>,
}

impl<T: Element> ToyLmWeights<T> {
    pub fn new(
        cfg: ToyLmConfig,
        embed: Tensor<T>,
        boundary: Vec<T>,
        layers: Vec<Mamba2BlockWeights<T>>,
        final_norm: Vec<T>,
    ) -> Result<Self> {
        let block = cfg.block()?;
        if embed.shape() != [VOCAB, cfg.d_llm] || boundary.len() != cfg.d_llm || final_norm.len() != cfg.d_llm {
            return Err(Error::shape("ToyLmWeights", embed.shape(), &[VOCAB, cfg.d_llm]));
        }
        if layers.len() != cfg.n_layers || layers.iter().any(|l| l.cfg != block) {
            return Err(Error::domain(format!("expected {} layers of {block:?}", cfg.n_layers)));
        }
        let unembed = embed.transpose()?;
        Ok(ToyLmWeights {
            cfg,
            embed,
            boundary,
            layers,
            final_norm,
            unembed,
        })
    }

    /// Embeddings are uniform in `±0.02`. With tied output weights, larger
    /// embeddings make every step predict its own input token.
    pub fn random<R: Rng>(cfg: ToyLmConfig, rng: &mut R) -> Result<Self> {
        let block = cfg.block()?;
        let scale = 0.02;
        let embed = Tensor::from_fn(VOCAB, cfg.d_llm, |_, _| T::from_f64(rng.gen_range(-scale..scale)))?;
        let boundary = (0..cfg.d_llm).map(|_| T::from_f64(rng.gen_range(-1.0..1.0))).collect();
        let layers = (0..cfg.n_layers)
            .map(|_| Mamba2BlockWeights::random(block, rng))
            .collect::<Result<_>>()?;
        Self::new(cfg, embed, boundary, layers, vec![T::one(); cfg.d_llm])
    }

    pub fn embed_tokens(&self, ids: &[u32]) -> Result<Tensor<T>> {
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        self.embed.gather_rows(&idx)
    }

    pub fn boundary_row(&self) -> Tensor<T> {
        Tensor::new([1, self.cfg.d_llm], self.boundary.clone()).expect("finite boundary")
    }

    fn logits(&self, hidden: &Tensor<T>) -> Result<Tensor<T>> {
        let h = rmsnorm(hidden, &self.final_norm)?;
        let (rows, d) = h.dims2()?;
        let mut out = vec![T::zero(); rows * VOCAB];
        matmul_into(h.data(), rows, d, self.unembed.data(), VOCAB, &mut out);
        Tensor::new([rows, VOCAB], out)
    }

    pub fn to_named(&self) -> Vec<(String, Tensor<T>)> {
        let v = |b: &Vec<T>| Tensor::new([b.len()], b.clone()).expect("finite");
        let mut out = vec![
            ("lm.embed".to_string(), self.embed.clone()),
            ("lm.boundary".to_string(), v(&self.boundary)),
            ("lm.final_norm".to_string(), v(&self.final_norm)),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(l.to_named(&format!("lm.layers.{i}.")));
        }
        out
    }

    pub fn from_named(cfg: ToyLmConfig, named: &BTreeMap<String, Tensor<T>>) -> Result<Self> {
        let get = |k: &str| {
            named
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Bundle(format!("missing array {k}")))
        };
        let block = cfg.block()?;
        let layers = (0..cfg.n_layers)
            .map(|i| Mamba2BlockWeights::from_named(block, &format!("lm.layers.{i}."), named))
            .collect::<Result<_>>()?;
        Self::new(
            cfg,
            get("lm.embed")?,
            get("lm.boundary")?.into_data(),
            layers,
            get("lm.final_norm")?.into_data(),
        )
    }
}

/// Full-sequence forward: `L × d_llm` embeddings to `L × VOCAB` logits.
pub fn lm_forward<T: Element>(prefix: &Tensor<T>, w: &ToyLmWeights<T>) -> Result<Tensor<T>> {
    let (len, d) = prefix.dims2()?;
    if len == 0 || d != w.cfg.d_llm {
        return Err(Error::shape("lm_forward", prefix.shape(), &[len.max(1), w.cfg.d_llm]));
    }
    let mut h = prefix.clone();
    for layer in &w.layers {
        h = mamba2_block(&h, layer)?;
    }
    w.logits(&h)
}

/// Lowest id among the maximal logits.
pub fn argmax<T: Element>(logits: &[T]) -> u32 {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// Recurrent inference state over all layers. Memory is fixed regardless
/// of how many tokens have been fed.
#[derive(Debug, Clone)]
pub struct LmSession<'w, T> {
    weights: &'w ToyLmWeights<T>,
    states: Vec<Mamba2State<T>>,
    consumed: usize,
}

impl<'w, T: Element> LmSession<'w, T> {
    pub fn new(weights: &'w ToyLmWeights<T>) -> Self {
        let states = weights.layers.iter().map(|l| Mamba2State::new(&l.cfg)).collect();
        LmSession {
            weights,
            states,
            consumed: 0,
        }
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    /// Feeds `rows` embeddings and returns the logits of the last one.
    pub fn feed(&mut self, rows: &Tensor<T>) -> Result<Vec<T>> {
        let (len, d) = rows.dims2()?;
        if len == 0 || d != self.weights.cfg.d_llm {
            return Err(Error::shape(
                "LmSession::feed",
                rows.shape(),
                &[len.max(1), self.weights.cfg.d_llm],
            ));
        }
        let mut h = rows.clone();
        for (layer, state) in self.weights.layers.iter().zip(&mut self.states) {
            h = mamba2_block_from(&h, layer, state)?;
        }
        self.consumed += len;
        let last = h.slice_rows(len - 1, len)?;
        Ok(self.weights.logits(&last)?.into_data())
    }

    pub fn feed_token(&mut self, id: u32) -> Result<Vec<T>> {
        let e = self.weights.embed_tokens(&[id])?;
        self.feed(&e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    /// Emitted ids, including a terminating EOS when one was produced.
    pub tokens: Vec<u32>,
    pub text: Vec<u8>,
    /// Wall time of each decode step in seconds; step 0 includes the prefix.
    pub step_times: Vec<f64>,
}

impl GenerationResult {
    pub fn total_time(&self) -> f64 {
        self.step_times.iter().sum()
    }
}

/// Builds `[V_out] ++ [boundary] ++ embed(tokenize(query))`.
pub fn build_prefix<T: Element>(v_out: &Tensor<T>, query: &[u8], w: &ToyLmWeights<T>) -> Result<Tensor<T>> {
    let (_, d) = v_out.dims2()?;
    if d != w.cfg.d_llm {
        return Err(Error::shape("generate", v_out.shape(), &[v_out.rows(), w.cfg.d_llm]));
    }
    v_out
        .concat_rows(&w.boundary_row())?
        .concat_rows(&w.embed_tokens(&tokenize(query))?)
}

/// Greedy decoding in recurrent mode, stopping at EOS or `max_gen` tokens.
pub fn generate<T: Element>(v_out: &Tensor<T>, query: &[u8], w: &ToyLmWeights<T>) -> Result<GenerationResult> {
    let prefix = build_prefix(v_out, query, w)?;
    let mut result = GenerationResult {
        tokens: Vec::new(),
        text: Vec::new(),
        step_times: Vec::new(),
    };
    if w.cfg.max_gen == 0 {
        return Ok(result);
    }
    let mut session = LmSession::new(w);
    let start = Instant::now();
    let mut logits = session.feed(&prefix)?;
    let mut step_start = start;
    loop {
        let id = argmax(&logits);
        result.tokens.push(id);
        if id == EOS || result.tokens.len() >= w.cfg.max_gen {
            result.step_times.push(step_start.elapsed().as_secs_f64());
            break;
        }
        logits = session.feed_token(id)?;
        let now = Instant::now();
        result.step_times.push((now - step_start).as_secs_f64());
        step_start = now;
    }
    result.text = detokenize(&result.tokens);
    Ok(result)
}
