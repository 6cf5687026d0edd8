//! SwiGLU and the three-layer GELU projector, with analytic backward passes.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mamba2::silu;
use crate::tensor::{Element, Tensor};

fn sigmoid<T: Element>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

fn silu_grad<T: Element>(v: T) -> T {
    let s = sigmoid(v);
    s * (T::one() + v * (T::one() - s))
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu<T: Element>(v: T) -> T {
    let x = v.as_f64();
    T::from_f64(0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)))
}

pub fn gelu_grad<T: Element>(v: T) -> T {
    let x = v.as_f64();
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    T::from_f64(cdf + x * pdf)
}

fn uniform<T: Element, R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Result<Tensor<T>> {
    let bound = 1.0 / (rows.max(1) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| T::from_f64(rng.gen_range(-bound..bound)))
}

fn column_sums<T: Element>(t: &Tensor<T>) -> Vec<T> {
    let mut out = vec![T::zero(); t.cols()];
    for r in 0..t.rows() {
        for (o, &v) in out.iter_mut().zip(t.row(r)) {
            *o = *o + v;
        }
    }
    out
}

fn named_get<T: Element>(named: &BTreeMap<String, Tensor<T>>, key: String) -> Result<Tensor<T>> {
    named
        .get(&key)
        .cloned()
        .ok_or_else(|| Error::Bundle(format!("missing array {key}")))
}

/// `y = (silu(x·W_g) ⊙ (x·W_u)) · W_d` over row tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct SwigluWeights<T> {
    /// `D × D_ff`
    pub w_gate: Tensor<T>,
    /// `D × D_ff`
    pub w_up: Tensor<T>,
    /// `D_ff × D`
    pub w_down: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwigluGrads<T> {
    pub x: Tensor<T>,
    pub w_gate: Tensor<T>,
    pub w_up: Tensor<T>,
    pub w_down: Tensor<T>,
}

impl<T: Element> SwigluWeights<T> {
    pub fn zeros(d: usize, d_ff: usize) -> Self {
        SwigluWeights {
            w_gate: Tensor::zeros([d, d_ff]),
            w_up: Tensor::zeros([d, d_ff]),
            w_down: Tensor::zeros([d_ff, d]),
        }
    }

    pub fn random<R: Rng>(d: usize, d_ff: usize, rng: &mut R) -> Result<Self> {
        Ok(SwigluWeights {
            w_gate: uniform(rng, d, d_ff)?,
            w_up: uniform(rng, d, d_ff)?,
            w_down: uniform(rng, d_ff, d)?,
        })
    }

    pub fn check(&self) -> Result<()> {
        let (d, ff) = self.w_gate.dims2()?;
        if self.w_up.shape() != [d, ff] || self.w_down.shape() != [ff, d] {
            return Err(Error::shape("SwigluWeights", self.w_up.shape(), self.w_down.shape()));
        }
        Ok(())
    }

    pub fn to_named(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        vec![
            (format!("{prefix}w_gate"), self.w_gate.clone()),
            (format!("{prefix}w_up"), self.w_up.clone()),
            (format!("{prefix}w_down"), self.w_down.clone()),
        ]
    }

    pub fn from_named(prefix: &str, named: &BTreeMap<String, Tensor<T>>) -> Result<Self> {
        let w = SwigluWeights {
            w_gate: named_get(named, format!("{prefix}w_gate"))?,
            w_up: named_get(named, format!("{prefix}w_up"))?,
            w_down: named_get(named, format!("{prefix}w_down"))?,
        };
        w.check()?;
        Ok(w)
    }
}

pub fn swiglu<T: Element>(x: &Tensor<T>, w: &SwigluWeights<T>) -> Result<Tensor<T>> {
    w.check()?;
    let gate = x.matmul(&w.w_gate)?;
    let up = x.matmul(&w.w_up)?;
    gate.zip_with(&up, "swiglu", |g, u| silu(g) * u)?.matmul(&w.w_down)
}

/// Gradients of `Σ grad_out ⊙ swiglu(x)` with respect to `x` and every weight.
pub fn swiglu_backward<T: Element>(
    x: &Tensor<T>,
    w: &SwigluWeights<T>,
    grad_out: &Tensor<T>,
) -> Result<SwigluGrads<T>> {
    w.check()?;
    let gate = x.matmul(&w.w_gate)?;
    let up = x.matmul(&w.w_up)?;
    let hidden = gate.zip_with(&up, "swiglu", |g, u| silu(g) * u)?;

    let d_down = hidden.transpose()?.matmul(grad_out)?;
    let d_hidden = grad_out.matmul(&w.w_down.transpose()?)?;
    let d_gate = d_hidden
        .zip_with(&gate, "swiglu_backward", |dh, g| dh * silu_grad(g))?
        .hadamard(&up)?;
    let d_up = d_hidden.zip_with(&gate, "swiglu_backward", |dh, g| dh * silu(g))?;

    let xt = x.transpose()?;
    Ok(SwigluGrads {
        x: d_gate
            .matmul(&w.w_gate.transpose()?)?
            .add(&d_up.matmul(&w.w_up.transpose()?)?)?,
        w_gate: xt.matmul(&d_gate)?,
        w_up: xt.matmul(&d_up)?,
        w_down: d_down,
    })
}

/// Three affine layers with GELU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights<T> {
    pub w1: Tensor<T>,
    pub b1: Vec<T>,
    pub w2: Tensor<T>,
    pub b2: Vec<T>,
    pub w3: Tensor<T>,
    pub b3: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T> {
    pub x: Tensor<T>,
    pub w1: Tensor<T>,
    pub b1: Vec<T>,
    pub w2: Tensor<T>,
    pub b2: Vec<T>,
    pub w3: Tensor<T>,
    pub b3: Vec<T>,
}

impl<T: Element> MlpWeights<T> {
    pub fn zeros(d_in: usize, d_hidden: usize, d_out: usize) -> Self {
        MlpWeights {
            w1: Tensor::zeros([d_in, d_hidden]),
            b1: vec![T::zero(); d_hidden],
            w2: Tensor::zeros([d_hidden, d_hidden]),
            b2: vec![T::zero(); d_hidden],
            w3: Tensor::zeros([d_hidden, d_out]),
            b3: vec![T::zero(); d_out],
        }
    }

    pub fn random<R: Rng>(d_in: usize, d_hidden: usize, d_out: usize, rng: &mut R) -> Result<Self> {
        let mut bias = |n: usize| {
            (0..n)
                .map(|_| T::from_f64(rng.gen_range(-0.05..0.05)))
                .collect::<Vec<_>>()
        };
        let (b1, b2, b3) = (bias(d_hidden), bias(d_hidden), bias(d_out));
        Ok(MlpWeights {
            w1: uniform(rng, d_in, d_hidden)?,
            b1,
            w2: uniform(rng, d_hidden, d_hidden)?,
            b2,
            w3: uniform(rng, d_hidden, d_out)?,
            b3,
        })
    }

    pub fn d_in(&self) -> usize {
        self.w1.rows()
    }

    pub fn d_out(&self) -> usize {
        self.w3.cols()
    }

    pub fn check(&self) -> Result<()> {
        let (_, h) = self.w1.dims2()?;
        let (h2, h3) = self.w2.dims2()?;
        let (h4, out) = self.w3.dims2()?;
        if h != h2 || h2 != h3 || h3 != h4 || self.b1.len() != h || self.b2.len() != h || self.b3.len() != out {
            return Err(Error::shape("MlpWeights", self.w2.shape(), self.w3.shape()));
        }
        Ok(())
    }

    pub fn to_named(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        let v = |b: &Vec<T>| Tensor::new([b.len()], b.clone()).expect("finite bias");
        vec![
            (format!("{prefix}w1"), self.w1.clone()),
            (format!("{prefix}b1"), v(&self.b1)),
            (format!("{prefix}w2"), self.w2.clone()),
            (format!("{prefix}b2"), v(&self.b2)),
            (format!("{prefix}w3"), self.w3.clone()),
            (format!("{prefix}b3"), v(&self.b3)),
        ]
    }

    pub fn from_named(prefix: &str, named: &BTreeMap<String, Tensor<T>>) -> Result<Self> {
        let get = |k: &str| named_get(named, format!("{prefix}{k}"));
        let w = MlpWeights {
            w1: get("w1")?,
            b1: get("b1")?.into_data(),
            w2: get("w2")?,
            b2: get("b2")?.into_data(),
            w3: get("w3")?,
            b3: get("b3")?.into_data(),
        };
        w.check()?;
        Ok(w)
    }
}

struct MlpActivations<T> {
    h1: Tensor<T>,
    a1: Tensor<T>,
    h2: Tensor<T>,
    a2: Tensor<T>,
    y: Tensor<T>,
}

fn mlp_activations<T: Element>(x: &Tensor<T>, w: &MlpWeights<T>) -> Result<MlpActivations<T>> {
    w.check()?;
    let h1 = x.matmul(&w.w1)?.add_row(&w.b1)?;
    let a1 = h1.map(gelu)?;
    let h2 = a1.matmul(&w.w2)?.add_row(&w.b2)?;
    let a2 = h2.map(gelu)?;
    let y = a2.matmul(&w.w3)?.add_row(&w.b3)?;
    Ok(MlpActivations { h1, a1, h2, a2, y })
}

/// `y = gelu(gelu(x·W1 + b1)·W2 + b2)·W3 + b3`.
pub fn mlp_project<T: Element>(x: &Tensor<T>, w: &MlpWeights<T>) -> Result<Tensor<T>> {
    Ok(mlp_activations(x, w)?.y)
}

pub fn mlp_backward<T: Element>(x: &Tensor<T>, w: &MlpWeights<T>, grad_out: &Tensor<T>) -> Result<MlpGrads<T>> {
    let act = mlp_activations(x, w)?;
    if grad_out.shape() != act.y.shape() {
        return Err(Error::shape("mlp_backward", grad_out.shape(), act.y.shape()));
    }
    let d_w3 = act.a2.transpose()?.matmul(grad_out)?;
    let d_b3 = column_sums(grad_out);
    let d_h2 = grad_out
        .matmul(&w.w3.transpose()?)?
        .zip_with(&act.h2, "mlp_backward", |g, h| g * gelu_grad(h))?;
    let d_w2 = act.a1.transpose()?.matmul(&d_h2)?;
    let d_b2 = column_sums(&d_h2);
    let d_h1 = d_h2
        .matmul(&w.w2.transpose()?)?
        .zip_with(&act.h1, "mlp_backward", |g, h| g * gelu_grad(h))?;
    let d_w1 = x.transpose()?.matmul(&d_h1)?;
    let d_b1 = column_sums(&d_h1);
    Ok(MlpGrads {
        x: d_h1.matmul(&w.w1.transpose()?)?,
        w1: d_w1,
        b1: d_b1,
        w2: d_w2,
        b2: d_b2,
        w3: d_w3,
        b3: d_b3,
    })
}
