//! Brute-force reference implementations for checking the fast paths.
//!
//! Each oracle uses a different algorithm from the code it checks: gather
//! loops against scatter loops, explicit matrix powers against state
//! propagation, full re-evaluation against recurrent state. None of these
//! are meant to be fast.

use rand::Rng;

use crate::error::{Error, Result};
use crate::lm::{argmax, build_prefix, lm_forward, ToyLmWeights, EOS};
use crate::ssm::{ssm_recurrent, DiscreteSsm, SsmKernel, StateMatrix};
use crate::tensor::Tensor;

/// Largest kernel length [`kernel_by_matrix_power`] accepts.
pub const MATRIX_POWER_MAX_LEN: usize = 64;

/// Textbook `i, j, k` triple loop.
pub fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape("naive_matmul", a.shape(), b.shape()));
    }
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.at(i, p) * b.at(p, j);
            }
            out.push(s);
        }
    }
    Tensor::new([m, n], out)
}

/// `y_t = Σ_{j≤t} k[j]·x_{t−j}` summed directly for each output.
pub fn naive_conv(x: &[f64], k: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|t| {
            let mut s = 0.0;
            for j in 0..=t {
                if j < k.len() {
                    s += k[j] * x[t - j];
                }
            }
            s
        })
        .collect()
}

/// `k[j] = C·Āʲ·B̄` with `Āʲ` formed as an explicit dense matrix.
pub fn kernel_by_matrix_power(sys: &DiscreteSsm<f64>, len: usize) -> Result<SsmKernel<f64>> {
    if len > MATRIX_POWER_MAX_LEN {
        return Err(Error::domain(format!(
            "matrix-power oracle is limited to length {MATRIX_POWER_MAX_LEN}, got {len}"
        )));
    }
    let a = sys.a_bar.to_dense();
    let n = a.rows();
    let b = Tensor::new([n, 1], sys.b_bar.clone())?;
    let c = Tensor::new([1, n], sys.c.clone())?;
    let mut power = Tensor::eye(n);
    let mut k = Vec::with_capacity(len);
    for _ in 0..len {
        k.push(naive_matmul(&naive_matmul(&c, &power)?, &b)?.at(0, 0));
        power = naive_matmul(&power, &a)?;
    }
    Ok(SsmKernel { k })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteDiffSpec {
    pub h: f64,
}

impl Default for FiniteDiffSpec {
    fn default() -> Self {
        FiniteDiffSpec { h: 1e-5 }
    }
}

impl FiniteDiffSpec {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::domain(format!(
                "finite-difference step must be positive, got {h}"
            )));
        }
        Ok(FiniteDiffSpec { h })
    }
}

/// Central differences `(f(x + h·e_i) − f(x − h·e_i)) / 2h`.
pub fn finite_diff_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], spec: FiniteDiffSpec) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + spec.h;
            let up = f(&probe);
            probe[i] = x[i] - spec.h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * spec.h)
        })
        .collect()
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, zero when both are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CausalityReport {
    /// Largest output change at rows before the perturbed one.
    pub before: f64,
    /// Largest output change at the perturbed row and after.
    pub after: f64,
}

/// Adds `eps` to every entry of row `t` and compares outputs.
pub fn causality_probe(
    f: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
    x: &Tensor<f64>,
    t: usize,
    eps: f64,
) -> Result<CausalityReport> {
    let (len, d) = x.dims2()?;
    if t >= len {
        return Err(Error::domain(format!("probe row {t} out of range for length {len}")));
    }
    let base = f(x)?;
    let mut data = x.data().to_vec();
    for v in &mut data[t * d..(t + 1) * d] {
        *v += eps;
    }
    let moved = f(&Tensor::new(x.shape().to_vec(), data)?)?;
    let cols = base.cols();
    let mut report = CausalityReport {
        before: 0.0,
        after: 0.0,
    };
    for (i, (a, b)) in base.data().iter().zip(moved.data()).enumerate() {
        let slot = if i / cols < t {
            &mut report.before
        } else {
            &mut report.after
        };
        *slot = slot.max((a - b).abs());
    }
    Ok(report)
}

/// Selective scan with `Δ`, `B`, `C` held constant in time, evaluated as
/// one time-invariant system per channel through [`ssm_recurrent`].
/// `delta`, `a` and `d_skip` hold one value per head.
pub fn time_invariant_scan(
    x: &Tensor<f64>,
    delta: &[f64],
    b: &[f64],
    c: &[f64],
    a: &[f64],
    d_skip: &[f64],
) -> Result<Tensor<f64>> {
    let (len, channels) = x.dims2()?;
    let heads = a.len();
    if heads == 0 || channels % heads != 0 || delta.len() != heads || d_skip.len() != heads {
        return Err(Error::shape("time_invariant_scan", &[channels], &[heads]));
    }
    let head_dim = channels / heads;
    let mut y = vec![0.0; len * channels];
    for ch in 0..channels {
        let h = ch / head_dim;
        let sys = DiscreteSsm::new(
            StateMatrix::Diagonal(vec![(delta[h] * a[h]).exp(); b.len()]),
            b.iter().map(|&bi| delta[h] * bi).collect(),
            c.to_vec(),
        )?;
        let column: Vec<f64> = (0..len).map(|t| x.at(t, ch)).collect();
        for (t, v) in ssm_recurrent(&sys, &column)?.into_iter().enumerate() {
            y[t * channels + ch] = v + d_skip[h] * column[t];
        }
    }
    Tensor::new([len, channels], y)
}

/// `x·Φ(x)` with the normal CDF integrated by composite Simpson's rule.
pub fn gelu_by_quadrature(x: f64) -> f64 {
    const INTERVALS: usize = 4000;
    let density = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let h = x / INTERVALS as f64;
    let mut s = density(0.0) + density(x);
    for i in 1..INTERVALS {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * density(i as f64 * h);
    }
    x * (0.5 + s * h / 3.0)
}

/// Greedy decoding that re-runs the whole sequence for every token.
pub fn reforward_generate(v_out: &Tensor<f64>, query: &[u8], w: &ToyLmWeights<f64>) -> Result<Vec<u32>> {
    let mut seq = build_prefix(v_out, query, w)?;
    let mut out = Vec::new();
    while out.len() < w.cfg.max_gen {
        let logits = lm_forward(&seq, w)?;
        let id = argmax(logits.row(logits.rows() - 1));
        out.push(id);
        if id == EOS {
            break;
        }
        seq = seq.concat_rows(&w.embed_tokens(&[id])?)?;
    }
    Ok(out)
}

/// Diagonal system with `Ā_ii ∈ (−0.95, 0.95)` and unit-scale `B̄`, `C`.
pub fn random_diagonal_system<R: Rng>(n: usize, rng: &mut R) -> Result<DiscreteSsm<f64>> {
    DiscreteSsm::new(
        StateMatrix::Diagonal((0..n).map(|_| rng.gen_range(-0.95..0.95)).collect()),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
}

pub fn random_sequence<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Result<Tensor<f64>> {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}
