//! Latency measurement against a quadratic attention baseline.
//!
//! Timed sections run on the calling thread with a monotonic clock. Each
//! configuration gets two untimed warm-ups, then `repeats` timed runs whose
//! min/median/max are recorded. Scaling is summarised by the least-squares
//! slope of `log(t_median)` against `log(L)`.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lm::{LmSession, ToyLmConfig, ToyLmWeights, VOCAB};
use crate::mamba2::{mamba2_block, Mamba2BlockWeights, Mamba2Config};
use crate::rng::{component_rng, labels};
use crate::tensor::{matmul_into, Element, Tensor};

pub const WARMUPS: usize = 2;
pub const MIN_REPEATS: usize = 3;
pub const DEFAULT_LENGTHS: [usize; 6] = [256, 512, 1024, 2048, 4096, 8192];
pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_REPEATS: usize = 5;

/// Accepted log-log slope of the SSM path.
pub const SSM_SLOPE_WINDOW: (f64, f64) = (0.8, 1.3);
/// Minimum log-log slope of the attention baseline.
pub const ATTENTION_MIN_SLOPE: f64 = 1.7;
/// Decode time at the long context over the short one.
pub const SSM_DECODE_MAX_RATIO: f64 = 1.5;
pub const ATTENTION_DECODE_MIN_RATIO: f64 = 2.0;

/// Generated tokens per second, `n_tokens / t_total`.
pub fn eval_avg(n_tokens: usize, t_total: f64) -> Result<f64> {
    if !(t_total > 0.0) || !t_total.is_finite() {
        return Err(Error::Bench(format!("total time must be positive, got {t_total}")));
    }
    Ok(n_tokens as f64 / t_total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Ssm,
    Attention,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Ssm => "ssm",
            ModelKind::Attention => "attention",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssm" => Ok(ModelKind::Ssm),
            "attention" => Ok(ModelKind::Attention),
            _ => Err(Error::Bench(format!("unknown model kind {s:?}"))),
        }
    }
}

/// Single-layer causal multi-head self-attention.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T> {
    pub n_heads: usize,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
}

impl<T: Element> AttentionWeights<T> {
    pub fn random<R: Rng>(d_model: usize, n_heads: usize, rng: &mut R) -> Result<Self> {
        if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
            return Err(Error::domain(format!("{n_heads} heads do not divide width {d_model}")));
        }
        let bound = 1.0 / (d_model as f64).sqrt();
        let mut m = || Tensor::from_fn(d_model, d_model, |_, _| T::from_f64(rng.gen_range(-bound..bound)));
        Ok(AttentionWeights {
            n_heads,
            wq: m()?,
            wk: m()?,
            wv: m()?,
            wo: m()?,
        })
    }

    pub fn d_model(&self) -> usize {
        self.wq.rows()
    }

    fn head_dim(&self) -> usize {
        self.d_model() / self.n_heads
    }
}

fn softmax_in_place<T: Element>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// `softmax(QKᵀ/√d_head + causal mask)·V`, out-projected. The full `L × L`
/// score matrix of each head is materialised.
pub fn attention_forward<T: Element>(x: &Tensor<T>, w: &AttentionWeights<T>) -> Result<Tensor<T>> {
    let (len, d) = x.dims2()?;
    if d != w.d_model() || len == 0 {
        return Err(Error::shape("attention_forward", x.shape(), w.wq.shape()));
    }
    let q = x.matmul(&w.wq)?;
    let k = x.matmul(&w.wk)?;
    let v = x.matmul(&w.wv)?;
    let dh = w.head_dim();
    let scale = T::one() / T::from_f64(dh as f64).sqrt();

    let mut scores = vec![T::zero(); len * len];
    let mut kt = vec![T::zero(); dh * len];
    let mut merged = vec![T::zero(); len * d];
    for h in 0..w.n_heads {
        let off = h * dh;
        for j in 0..len {
            for c in 0..dh {
                kt[c * len + j] = k.data()[j * d + off + c];
            }
        }
        for i in 0..len {
            let row = &mut scores[i * len..(i + 1) * len];
            row.fill(T::zero());
            let visible = &mut row[..=i];
            for c in 0..dh {
                let qc = q.data()[i * d + off + c] * scale;
                for (s, &kv) in visible.iter_mut().zip(&kt[c * len..c * len + i + 1]) {
                    *s = *s + qc * kv;
                }
            }
            softmax_in_place(visible);
            let out = &mut merged[i * d + off..i * d + off + dh];
            for (j, &p) in visible.iter().enumerate() {
                let vr = &v.data()[j * d + off..j * d + off + dh];
                for (o, &vv) in out.iter_mut().zip(vr) {
                    *o = *o + p * vv;
                }
            }
        }
    }
    Tensor::new([len, d], merged)?.matmul(&w.wo)
}

/// Key/value cache for step-wise attention decoding.
#[derive(Debug, Clone)]
pub struct KvCache<T> {
    d_model: usize,
    keys: Vec<T>,
    values: Vec<T>,
}

impl<T: Element> KvCache<T> {
    pub fn new(d_model: usize) -> Self {
        KvCache {
            d_model,
            keys: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len() / self.d_model
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn truncate(&mut self, len: usize) {
        self.keys.truncate(len * self.d_model);
        self.values.truncate(len * self.d_model);
    }
}

/// Appends `x_t` to the cache and returns its attention output.
pub fn attention_step<T: Element>(x_t: &[T], w: &AttentionWeights<T>, cache: &mut KvCache<T>) -> Result<Vec<T>> {
    let d = w.d_model();
    if x_t.len() != d || cache.d_model != d {
        return Err(Error::shape("attention_step", &[x_t.len()], &[d]));
    }
    let project = |m: &Tensor<T>| {
        let mut out = vec![T::zero(); d];
        matmul_into(x_t, 1, d, m.data(), d, &mut out);
        out
    };
    let q = project(&w.wq);
    cache.keys.extend(project(&w.wk));
    cache.values.extend(project(&w.wv));
    let len = cache.len();
    let dh = w.head_dim();
    let scale = T::one() / T::from_f64(dh as f64).sqrt();
    let mut scores = vec![T::zero(); len];
    let mut merged = vec![T::zero(); d];
    for h in 0..w.n_heads {
        let off = h * dh;
        for (j, s) in scores.iter_mut().enumerate() {
            let kr = &cache.keys[j * d + off..j * d + off + dh];
            *s = q[off..off + dh].iter().zip(kr).fold(T::zero(), |a, (&x, &y)| a + x * y) * scale;
        }
        softmax_in_place(&mut scores);
        for (j, &p) in scores.iter().enumerate() {
            let vr = &cache.values[j * d + off..j * d + off + dh];
            for (o, &vv) in merged[off..off + dh].iter_mut().zip(vr) {
                *o = *o + p * vv;
            }
        }
    }
    let mut out = vec![T::zero(); d];
    matmul_into(&merged, 1, d, w.wo.data(), d, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub model_kind: ModelKind,
    pub seq_len: usize,
    pub dim: usize,
    pub repeats: usize,
    pub t_min: f64,
    pub t_median: f64,
    pub t_max: f64,
    /// `seq_len / t_median`.
    pub tokens_per_sec: f64,
}

pub const CSV_HEADER: &str = "model_kind,L,D,repeats,t_min,t_median,t_max,tokens_per_sec";

impl BenchRecord {
    pub fn from_times(model_kind: ModelKind, seq_len: usize, dim: usize, mut times: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Bench("wall times must be positive".into()));
        }
        times.sort_by(f64::total_cmp);
        let n = times.len();
        let t_median = if n % 2 == 1 {
            times[n / 2]
        } else {
            0.5 * (times[n / 2 - 1] + times[n / 2])
        };
        Ok(BenchRecord {
            model_kind,
            seq_len,
            dim,
            repeats: n,
            t_min: times[0],
            t_median,
            t_max: times[n - 1],
            tokens_per_sec: eval_avg(seq_len, t_median)?,
        })
    }

    /// One CSV row. Floats use shortest round-trip formatting.
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:?},{:?},{:?},{:?}",
            self.model_kind,
            self.seq_len,
            self.dim,
            self.repeats,
            self.t_min,
            self.t_median,
            self.t_max,
            self.tokens_per_sec
        )
    }

    pub fn from_csv_row(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Bench(format!("expected 8 CSV fields, got {}", fields.len())));
        }
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Bench(format!("bad integer {s:?}: {e}")))
        };
        let real = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Bench(format!("bad number {s:?}: {e}")))
        };
        Ok(BenchRecord {
            model_kind: fields[0].parse()?,
            seq_len: int(fields[1])?,
            dim: int(fields[2])?,
            repeats: int(fields[3])?,
            t_min: real(fields[4])?,
            t_median: real(fields[5])?,
            t_max: real(fields[6])?,
            tokens_per_sec: real(fields[7])?,
        })
    }
}

pub fn write_csv<W: Write>(records: &[BenchRecord], mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.to_csv_row())?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(input: R) -> Result<Vec<BenchRecord>> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != CSV_HEADER {
        return Err(Error::Bench(format!("CSV must start with header `{CSV_HEADER}`")));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(BenchRecord::from_csv_row(&line)?);
        }
    }
    Ok(out)
}

/// A seeded model of either kind at width `dim`, in f32.
pub enum BenchModel {
    Ssm(Mamba2BlockWeights<f32>),
    Attention(AttentionWeights<f32>),
}

pub fn bench_block_config(dim: usize) -> Result<Mamba2Config> {
    Mamba2Config::new(dim, 16, 4)
}

impl BenchModel {
    pub fn new(kind: ModelKind, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = component_rng(seed, &format!("{}/{kind}", labels::BENCH));
        Ok(match kind {
            ModelKind::Ssm => BenchModel::Ssm(Mamba2BlockWeights::random(bench_block_config(dim)?, &mut rng)?),
            ModelKind::Attention => BenchModel::Attention(AttentionWeights::random(dim, 4, &mut rng)?),
        })
    }

    pub fn forward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        match self {
            BenchModel::Ssm(w) => mamba2_block(x, w),
            BenchModel::Attention(w) => attention_forward(x, w),
        }
    }
}

/// Input shared by both model kinds at equal `(len, dim, seed)`.
pub fn bench_input(len: usize, dim: usize, seed: u64) -> Result<Tensor<f32>> {
    let mut rng: ChaCha8Rng = component_rng(seed, &format!("{}/input/{len}", labels::BENCH));
    Tensor::from_fn(len, dim, |_, _| rng.gen_range(-1.0f32..1.0))
}

/// Times `repeats` forward passes after [`WARMUPS`] untimed ones. Fails if
/// any repeat computes a different output from the first.
pub fn measure_forward(kind: ModelKind, len: usize, dim: usize, repeats: usize, seed: u64) -> Result<BenchRecord> {
    if repeats < MIN_REPEATS {
        return Err(Error::Bench(format!(
            "need at least {MIN_REPEATS} repeats, got {repeats}"
        )));
    }
    let model = BenchModel::new(kind, dim, seed)?;
    let x = bench_input(len, dim, seed)?;
    let reference = model.forward(&x)?;
    for _ in 1..WARMUPS {
        model.forward(&x)?;
    }
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        let y = model.forward(&x)?;
        times.push(start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
        if y != reference {
            return Err(Error::Bench(format!(
                "{kind} output changed between repeats at L={len}"
            )));
        }
    }
    BenchRecord::from_times(kind, len, dim, times)
}

/// Lengths `min_len, 2·min_len, …` up to `max_len`.
pub fn doubling_lengths(min_len: usize, max_len: usize) -> Result<Vec<usize>> {
    if min_len == 0 || max_len < min_len {
        return Err(Error::Bench(format!("invalid length range {min_len}..{max_len}")));
    }
    Ok(std::iter::successors(Some(min_len), |&l| l.checked_mul(2))
        .take_while(|&l| l <= max_len)
        .collect())
}

/// Both model kinds at every length; attention first at each length.
pub fn sweep(lengths: &[usize], dim: usize, repeats: usize, seed: u64) -> Result<Vec<BenchRecord>> {
    let mut out = Vec::new();
    for kind in [ModelKind::Ssm, ModelKind::Attention] {
        for &len in lengths {
            out.push(measure_forward(kind, len, dim, repeats, seed)?);
        }
    }
    Ok(out)
}

/// Least-squares slope of `ln t_median` on `ln L`.
pub fn scaling_slope(records: &[BenchRecord]) -> Result<f64> {
    let mut lens: Vec<usize> = records.iter().map(|r| r.seq_len).collect();
    lens.sort_unstable();
    lens.dedup();
    if lens.len() < 4 || lens[0] == 0 || lens[lens.len() - 1] < 8 * lens[0] {
        return Err(Error::Bench(format!(
            "slope needs at least 4 distinct lengths spanning 8x, got {lens:?}"
        )));
    }
    if records.iter().any(|r| !(r.t_median > 0.0)) {
        return Err(Error::Bench("wall times must be positive".into()));
    }
    let pts: Vec<(f64, f64)> = records
        .iter()
        .map(|r| ((r.seq_len as f64).ln(), r.t_median.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeReport {
    pub ssm: f64,
    pub attention: f64,
}

impl SlopeReport {
    pub fn from_records(records: &[BenchRecord]) -> Result<Self> {
        let of = |kind| {
            let subset: Vec<BenchRecord> = records.iter().filter(|r| r.model_kind == kind).cloned().collect();
            scaling_slope(&subset)
        };
        Ok(SlopeReport {
            ssm: of(ModelKind::Ssm)?,
            attention: of(ModelKind::Attention)?,
        })
    }

    pub fn ssm_ok(&self) -> bool {
        (SSM_SLOPE_WINDOW.0..=SSM_SLOPE_WINDOW.1).contains(&self.ssm)
    }

    pub fn attention_ok(&self) -> bool {
        self.attention >= ATTENTION_MIN_SLOPE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeRecord {
    pub model_kind: ModelKind,
    pub context: usize,
    pub steps: usize,
    /// Median seconds per decoded token.
    pub per_token: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median time of one decode step after `context` tokens. The SSM path is
/// the toy language model in recurrent mode; the attention path is one
/// layer with a KV cache, reset to `context` entries after every step.
pub fn measure_decode(kind: ModelKind, context: usize, dim: usize, steps: usize, seed: u64) -> Result<DecodeRecord> {
    if steps == 0 || context == 0 {
        return Err(Error::Bench("decode needs a context and at least one step".into()));
    }
    let mut rng = component_rng(seed, &format!("{}/decode/{kind}", labels::BENCH));
    let ids: Vec<u32> = (0..context + steps + WARMUPS)
        .map(|_| rng.gen_range(0..VOCAB as u32))
        .collect();
    let mut times = Vec::with_capacity(steps);
    match kind {
        ModelKind::Ssm => {
            let cfg = ToyLmConfig {
                d_llm: dim,
                ..ToyLmConfig::default()
            };
            let w = ToyLmWeights::<f32>::random(cfg, &mut rng)?;
            let mut session = LmSession::new(&w);
            session.feed(&w.embed_tokens(&ids[..context])?)?;
            for (i, &id) in ids[context..].iter().enumerate() {
                let state = session.clone();
                let start = Instant::now();
                session.feed_token(id)?;
                let dt = start.elapsed().as_secs_f64();
                session = state;
                if i >= WARMUPS {
                    times.push(dt);
                }
            }
        }
        ModelKind::Attention => {
            let w = AttentionWeights::<f32>::random(dim, 4, &mut rng)?;
            let x = bench_input(context + steps + WARMUPS, dim, seed)?;
            let mut cache = KvCache::new(dim);
            for t in 0..context {
                attention_step(x.row(t), &w, &mut cache)?;
            }
            for i in 0..steps + WARMUPS {
                let start = Instant::now();
                attention_step(x.row(context + i), &w, &mut cache)?;
                let dt = start.elapsed().as_secs_f64();
                cache.truncate(context);
                if i >= WARMUPS {
                    times.push(dt);
                }
            }
        }
    }
    Ok(DecodeRecord {
        model_kind: kind,
        context,
        steps,
        per_token: median(times).max(f64::MIN_POSITIVE),
    })
}
