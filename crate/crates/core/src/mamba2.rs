//! A toy Mamba-2 block.
//!
//! ```text
//! u        = rmsnorm(x) ⊙ norm
//! z|xi|B|C|dt = u · in_proj
//! xc       = silu(causal_depthwise_conv4(xi) + conv_bias)
//! Δ        = softplus(dt + dt_bias)
//! y        = selective_scan(xc, Δ, B, C, a = −exp(a_log), d_skip)
//! out      = (y ⊙ silu(z)) · out_proj + x
//! ```
//!
//! `B` and `C` are shared by all heads (a single group). The block can run
//! over a whole sequence or continue from a [`Mamba2State`], and both paths
//! perform the same arithmetic in the same order.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ssm::{selective_scan_from, ScanState, SelectiveInputs};
use crate::tensor::{matmul_into, Element, Tensor};

pub const CONV_WIDTH: usize = 4;
pub const RMS_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mamba2Config {
    pub d_model: usize,
    pub d_inner: usize,
    pub d_state: usize,
    pub n_heads: usize,
}

impl Mamba2Config {
    /// Expansion factor 2, `n_heads` heads over the inner width.
    pub fn new(d_model: usize, d_state: usize, n_heads: usize) -> Result<Self> {
        let cfg = Mamba2Config {
            d_model,
            d_inner: 2 * d_model,
            d_state,
            n_heads,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_inner == 0 || self.d_state == 0 || self.n_heads == 0 {
            return Err(Error::domain(format!("mamba2 dimensions must be positive: {self:?}")));
        }
        if !self.d_inner.is_multiple_of(self.n_heads) {
            return Err(Error::domain(format!(
                "{} heads do not divide inner width {}",
                self.n_heads, self.d_inner
            )));
        }
        Ok(())
    }

    /// Width of the fused input projection: z, x, B, C, dt.
    pub fn proj_width(&self) -> usize {
        2 * self.d_inner + 2 * self.d_state + self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mamba2BlockWeights<T> {
    pub cfg: Mamba2Config,
    /// `d_model` pre-norm scale.
    pub norm: Vec<T>,
    /// `d_model × proj_width`.
    pub in_proj: Tensor<T>,
    /// `d_inner × CONV_WIDTH`; tap `CONV_WIDTH − 1` multiplies the current step.
    pub conv_weight: Tensor<T>,
    pub conv_bias: Vec<T>,
    pub dt_bias: Vec<T>,
    pub a_log: Vec<T>,
    pub d_skip: Vec<T>,
    /// `d_inner × d_model`.
    pub out_proj: Tensor<T>,
}

pub fn silu<T: Element>(v: T) -> T {
    v / (T::one() + (-v).exp())
}

pub fn softplus<T: Element>(v: T) -> T {
    if v > T::from_f64(20.0) {
        v
    } else {
        v.exp().ln_1p()
    }
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// `x / rms(x) ⊙ scale`, one row.
pub fn rmsnorm_row<T: Element>(x: &[T], scale: &[T], out: &mut [T]) {
    let n = T::from_f64(x.len() as f64);
    let ms = x.iter().fold(T::zero(), |acc, &v| acc + v * v) / n;
    let inv = T::one() / (ms + T::from_f64(RMS_EPS)).sqrt();
    for ((o, &v), &s) in out.iter_mut().zip(x).zip(scale) {
        *o = v * inv * s;
    }
}

pub fn rmsnorm<T: Element>(x: &Tensor<T>, scale: &[T]) -> Result<Tensor<T>> {
    let (rows, cols) = x.dims2()?;
    if scale.len() != cols {
        return Err(Error::shape("rmsnorm", x.shape(), &[scale.len()]));
    }
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        rmsnorm_row(x.row(r), scale, &mut out[r * cols..(r + 1) * cols]);
    }
    Tensor::new([rows, cols], out)
}

impl<T: Element> Mamba2BlockWeights<T> {
    pub fn zeros(cfg: Mamba2Config) -> Result<Self> {
        cfg.validate()?;
        Ok(Mamba2BlockWeights {
            cfg,
            norm: vec![T::zero(); cfg.d_model],
            in_proj: Tensor::zeros([cfg.d_model, cfg.proj_width()]),
            conv_weight: Tensor::zeros([cfg.d_inner, CONV_WIDTH]),
            conv_bias: vec![T::zero(); cfg.d_inner],
            dt_bias: vec![T::zero(); cfg.n_heads],
            a_log: vec![T::zero(); cfg.n_heads],
            d_skip: vec![T::zero(); cfg.n_heads],
            out_proj: Tensor::zeros([cfg.d_inner, cfg.d_model]),
        })
    }

    /// Random initialisation: uniform fan-in scaled projections, step sizes
    /// log-uniform in `[1e-3, 1e-1]` at zero input, decay rates
    /// `a = −exp(u)` with `u` uniform in `[ln 0.5, ln 2]`.
    pub fn random<R: Rng>(cfg: Mamba2Config, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut uniform = |rows: usize, cols: usize, bound: f64| {
            Tensor::from_fn(rows, cols, |_, _| T::from_f64(rng.gen_range(-bound..bound)))
        };
        let in_proj = uniform(cfg.d_model, cfg.proj_width(), 1.0 / (cfg.d_model as f64).sqrt())?;
        let conv_weight = uniform(cfg.d_inner, CONV_WIDTH, 1.0 / (CONV_WIDTH as f64).sqrt())?;
        let out_proj = uniform(cfg.d_inner, cfg.d_model, 1.0 / (cfg.d_inner as f64).sqrt())?;
        let conv_bias = (0..cfg.d_inner)
            .map(|_| T::from_f64(rng.gen_range(-0.1..0.1)))
            .collect();
        let dt_bias = (0..cfg.n_heads)
            .map(|_| {
                let dt = rng.gen_range(1e-3f64.ln()..1e-1f64.ln()).exp();
                T::from_f64(inverse_softplus(dt))
            })
            .collect();
        let a_log = (0..cfg.n_heads)
            .map(|_| T::from_f64(rng.gen_range(0.5f64.ln()..2f64.ln())))
            .collect();
        Ok(Mamba2BlockWeights {
            cfg,
            norm: vec![T::one(); cfg.d_model],
            in_proj,
            conv_weight,
            conv_bias,
            dt_bias,
            a_log,
            d_skip: vec![T::one(); cfg.n_heads],
            out_proj,
        })
    }

    /// Per-head decay rates `a_h = −exp(a_log_h) < 0`.
    pub fn decay_rates(&self) -> Vec<T> {
        self.a_log.iter().map(|&v| -v.exp()).collect()
    }

    pub fn check(&self) -> Result<()> {
        let c = &self.cfg;
        c.validate()?;
        let checks: [(&[usize], [usize; 2]); 4] = [
            (self.in_proj.shape(), [c.d_model, c.proj_width()]),
            (self.conv_weight.shape(), [c.d_inner, CONV_WIDTH]),
            (self.out_proj.shape(), [c.d_inner, c.d_model]),
            (&[self.norm.len(), self.conv_bias.len()], [c.d_model, c.d_inner]),
        ];
        for (got, want) in checks {
            if got != want {
                return Err(Error::shape("Mamba2BlockWeights", got, &want));
            }
        }
        for v in [&self.dt_bias, &self.a_log, &self.d_skip] {
            if v.len() != c.n_heads {
                return Err(Error::shape("Mamba2BlockWeights", &[v.len()], &[c.n_heads]));
            }
        }
        Ok(())
    }

    pub fn to_named(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        let vec1 = |v: &Vec<T>| Tensor::new([v.len()], v.clone()).expect("finite weights");
        vec![
            (format!("{prefix}norm"), vec1(&self.norm)),
            (format!("{prefix}in_proj"), self.in_proj.clone()),
            (format!("{prefix}conv_weight"), self.conv_weight.clone()),
            (format!("{prefix}conv_bias"), vec1(&self.conv_bias)),
            (format!("{prefix}dt_bias"), vec1(&self.dt_bias)),
            (format!("{prefix}a_log"), vec1(&self.a_log)),
            (format!("{prefix}d_skip"), vec1(&self.d_skip)),
            (format!("{prefix}out_proj"), self.out_proj.clone()),
        ]
    }

    pub fn from_named(cfg: Mamba2Config, prefix: &str, named: &BTreeMap<String, Tensor<T>>) -> Result<Self> {
        let get = |name: &str| {
            named
                .get(&format!("{prefix}{name}"))
                .cloned()
                .ok_or_else(|| Error::Bundle(format!("missing array {prefix}{name}")))
        };
        let w = Mamba2BlockWeights {
            cfg,
            norm: get("norm")?.into_data(),
            in_proj: get("in_proj")?,
            conv_weight: get("conv_weight")?,
            conv_bias: get("conv_bias")?.into_data(),
            dt_bias: get("dt_bias")?.into_data(),
            a_log: get("a_log")?.into_data(),
            d_skip: get("d_skip")?.into_data(),
            out_proj: get("out_proj")?,
        };
        w.check()?;
        Ok(w)
    }
}

/// Inference state of one block: the last `CONV_WIDTH − 1` pre-filter inner
/// activations and the scan state. Its size does not depend on how many
/// tokens have been consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct Mamba2State<T> {
    /// `(CONV_WIDTH − 1) × d_inner`, oldest row first.
    pub conv: Vec<T>,
    pub scan: ScanState<T>,
}

impl<T: Element> Mamba2State<T> {
    pub fn new(cfg: &Mamba2Config) -> Self {
        Mamba2State {
            conv: vec![T::zero(); (CONV_WIDTH - 1) * cfg.d_inner],
            scan: ScanState::zeros(cfg.d_inner, cfg.d_state),
        }
    }
}

pub fn mamba2_block<T: Element>(x: &Tensor<T>, w: &Mamba2BlockWeights<T>) -> Result<Tensor<T>> {
    let mut state = Mamba2State::new(&w.cfg);
    mamba2_block_from(x, w, &mut state)
}

/// Runs the block over `x`, continuing from `state` and leaving it at the
/// end of the sequence.
pub fn mamba2_block_from<T: Element>(
    x: &Tensor<T>,
    w: &Mamba2BlockWeights<T>,
    state: &mut Mamba2State<T>,
) -> Result<Tensor<T>> {
    let cfg = w.cfg;
    let (len, width) = x.dims2()?;
    if width != cfg.d_model {
        return Err(Error::shape("mamba2_block", x.shape(), &[len, cfg.d_model]));
    }
    if state.conv.len() != (CONV_WIDTH - 1) * cfg.d_inner {
        return Err(Error::shape(
            "mamba2_block",
            &[state.conv.len()],
            &[(CONV_WIDTH - 1) * cfg.d_inner],
        ));
    }
    let (di, n, heads) = (cfg.d_inner, cfg.d_state, cfg.n_heads);
    let pw = cfg.proj_width();

    let u = rmsnorm(x, &w.norm)?;
    let mut proj = vec![T::zero(); len * pw];
    matmul_into(u.data(), len, cfg.d_model, w.in_proj.data(), pw, &mut proj);

    let split = |start: usize, cols: usize| -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(len * cols);
        for t in 0..len {
            data.extend_from_slice(&proj[t * pw + start..t * pw + start + cols]);
        }
        Tensor::new([len, cols], data)
    };
    let z = split(0, di)?;
    let b = split(2 * di, n)?;
    let c = split(2 * di + n, n)?;

    // Causal depthwise filter over [carried rows; new rows].
    let hist = CONV_WIDTH - 1;
    let mut padded = Vec::with_capacity((hist + len) * di);
    padded.extend_from_slice(&state.conv);
    for t in 0..len {
        padded.extend_from_slice(&proj[t * pw + di..t * pw + 2 * di]);
    }
    let mut xc = vec![T::zero(); len * di];
    for t in 0..len {
        for ch in 0..di {
            let taps = w.conv_weight.row(ch);
            let mut acc = w.conv_bias[ch];
            for (j, &wj) in taps.iter().enumerate() {
                acc = acc + wj * padded[(t + j) * di + ch];
            }
            xc[t * di + ch] = silu(acc);
        }
    }
    state.conv.copy_from_slice(&padded[len * di..]);
    let xc = Tensor::new([len, di], xc)?;

    let mut delta = Vec::with_capacity(len * heads);
    for t in 0..len {
        let raw = &proj[t * pw + 2 * di + 2 * n..(t + 1) * pw];
        delta.extend(raw.iter().zip(&w.dt_bias).map(|(&r, &bias)| softplus(r + bias)));
    }
    let delta = Tensor::new([len, heads], delta)?;

    let a = w.decay_rates();
    let y = selective_scan_from(
        &xc,
        SelectiveInputs {
            delta: &delta,
            b: &b,
            c: &c,
        },
        &a,
        &w.d_skip,
        &mut state.scan,
    )?;

    let gated: Vec<T> = y.data().iter().zip(z.data()).map(|(&yv, &zv)| yv * silu(zv)).collect();
    let mut out = x.data().to_vec();
    let mut projected = vec![T::zero(); len * cfg.d_model];
    matmul_into(&gated, len, di, w.out_proj.data(), cfg.d_model, &mut projected);
    for (o, p) in out.iter_mut().zip(projected) {
        *o = p + *o;
    }
    Tensor::new([len, cfg.d_model], out)
}
