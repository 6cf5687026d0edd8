//! State-space sequence kernels.
//!
//! A continuous system `h' = A h + B x`, `y = C h` with step `Δ` is turned
//! into a discrete recurrence by zero-order hold:
//!
//! ```text
//! Ā = exp(ΔA)
//! B̄ = (ΔA)⁻¹ (exp(ΔA) − I) · ΔB
//! h_t = Ā h_{t−1} + B̄ x_t,   y_t = C h_t
//! ```
//!
//! For a time-invariant system the same map is a causal convolution with
//! kernel `K̄ = (CB̄, CĀB̄, …, CĀ^{L−1}B̄)`. Both forms are provided here
//! together with the selective scan, where `Δ`, `B` and `C` vary per step.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// The state transition `A` (or `Ā`). Diagonal storage is the common case.
#[derive(Debug, Clone, PartialEq)]
pub enum StateMatrix<T> {
    Diagonal(Vec<T>),
    Dense(Tensor<T>),
}

impl<T: Element> StateMatrix<T> {
    pub fn size(&self) -> usize {
        match self {
            StateMatrix::Diagonal(d) => d.len(),
            StateMatrix::Dense(m) => m.rows(),
        }
    }

    /// `out = self · v`.
    pub fn apply(&self, v: &[T], out: &mut [T]) {
        match self {
            StateMatrix::Diagonal(d) => {
                for ((o, &a), &x) in out.iter_mut().zip(d).zip(v) {
                    *o = a * x;
                }
            }
            StateMatrix::Dense(m) => {
                let n = v.len();
                for (i, o) in out.iter_mut().enumerate() {
                    *o = m.data()[i * n..(i + 1) * n]
                        .iter()
                        .zip(v)
                        .fold(T::zero(), |acc, (&a, &x)| acc + a * x);
                }
            }
        }
    }

    pub fn to_dense(&self) -> Tensor<T> {
        match self {
            StateMatrix::Dense(m) => m.clone(),
            StateMatrix::Diagonal(d) => {
                let n = d.len();
                let mut data = vec![T::zero(); n * n];
                for (i, &v) in d.iter().enumerate() {
                    data[i * n + i] = v;
                }
                Tensor::new([n, n], data).expect("finite diagonal")
            }
        }
    }
}

/// `A`, `B`, `C` and the step size `Δ` of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSsm<T> {
    pub a: StateMatrix<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
    pub delta: T,
}

impl<T: Element> ContinuousSsm<T> {
    pub fn new(a: StateMatrix<T>, b: Vec<T>, c: Vec<T>, delta: T) -> Result<Self> {
        let n = a.size();
        if n == 0 {
            return Err(Error::domain("state size must be at least 1"));
        }
        if let StateMatrix::Dense(m) = &a {
            if m.shape() != [n, n] {
                return Err(Error::shape("ContinuousSsm::new", m.shape(), &[n, n]));
            }
        }
        if b.len() != n || c.len() != n {
            return Err(Error::shape("ContinuousSsm::new", &[b.len(), c.len()], &[n, n]));
        }
        Ok(ContinuousSsm { a, b, c, delta })
    }

    pub fn state_size(&self) -> usize {
        self.a.size()
    }
}

/// `Ā`, `B̄`, `C` after discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSsm<T> {
    pub a_bar: StateMatrix<T>,
    pub b_bar: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Element> DiscreteSsm<T> {
    pub fn new(a_bar: StateMatrix<T>, b_bar: Vec<T>, c: Vec<T>) -> Result<Self> {
        let n = a_bar.size();
        if n == 0 || b_bar.len() != n || c.len() != n {
            return Err(Error::shape("DiscreteSsm::new", &[n], &[b_bar.len(), c.len()]));
        }
        Ok(DiscreteSsm { a_bar, b_bar, c })
    }

    pub fn state_size(&self) -> usize {
        self.a_bar.size()
    }
}

/// Convolution kernel `K̄` of a time-invariant system.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmKernel<T> {
    pub k: Vec<T>,
}

impl<T> SsmKernel<T> {
    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }
}

pub fn zoh_discretize<T: Element>(sys: &ContinuousSsm<T>) -> Result<DiscreteSsm<T>> {
    let delta = sys.delta;
    if !(delta > T::zero()) {
        return Err(Error::domain(format!("step size must be positive, got {delta}")));
    }
    match &sys.a {
        StateMatrix::Diagonal(a) => {
            let mut a_bar = Vec::with_capacity(a.len());
            let mut b_bar = Vec::with_capacity(a.len());
            for (&ai, &bi) in a.iter().zip(&sys.b) {
                let z = delta * ai;
                a_bar.push(z.exp());
                // (e^z − 1)/z · ΔB, with the z = 0 limit ΔB.
                let phi = if z == T::zero() { T::one() } else { z.exp_m1() / z };
                b_bar.push(phi * delta * bi);
            }
            DiscreteSsm::new(StateMatrix::Diagonal(a_bar), b_bar, sys.c.clone())
        }
        StateMatrix::Dense(a) => {
            let n = a.rows();
            let m = a.scale(delta)?;
            let e = expm(&m)?;
            let rhs_mat = e.sub(&Tensor::eye(n))?;
            let db: Vec<T> = sys.b.iter().map(|&b| delta * b).collect();
            let mut rhs = vec![T::zero(); n];
            StateMatrix::Dense(rhs_mat).apply(&db, &mut rhs);
            let b_bar = lu_solve(&m, &rhs)?;
            DiscreteSsm::new(StateMatrix::Dense(e), b_bar, sys.c.clone())
        }
    }
}

fn norm1<T: Element>(m: &Tensor<T>) -> T {
    let n = m.cols();
    (0..n)
        .map(|j| (0..m.rows()).map(|i| m.at(i, j).abs()).sum::<T>())
        .fold(T::zero(), T::max)
}

/// Matrix exponential by scaling and squaring with a degree-18 Taylor
/// polynomial on the scaled matrix (1-norm ≤ 1/2).
pub fn expm<T: Element>(m: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = m.dims2()?;
    if r != c {
        return Err(Error::shape("expm", m.shape(), &[r, r]));
    }
    let norm = norm1(m).as_f64();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = m.scale(T::from_f64(0.5f64.powi(squarings)))?;

    let mut result = Tensor::eye(r);
    let mut term = Tensor::eye(r);
    for k in 1..=18 {
        term = term.matmul(&scaled)?.scale(T::from_f64(1.0 / k as f64))?;
        result = result.add(&term)?;
    }
    for _ in 0..squarings {
        result = result.matmul(&result)?;
    }
    Ok(result)
}

/// Solves `m x = rhs` by LU with partial pivoting.
pub fn lu_solve<T: Element>(m: &Tensor<T>, rhs: &[T]) -> Result<Vec<T>> {
    let n = m.rows();
    let mut a = m.data().to_vec();
    let mut x = rhs.to_vec();
    let scale = m.data().iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let tiny = T::epsilon() * T::from_f64(n as f64) * scale;
    for col in 0..n {
        let (piv, pmax) = (col..n)
            .map(|i| (i, a[i * n + col].abs()))
            .fold((col, T::zero()), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pmax <= tiny {
            return Err(Error::Singular { pivot: col });
        }
        if piv != col {
            for j in 0..n {
                a.swap(col * n + j, piv * n + j);
            }
            x.swap(col, piv);
        }
        let d = a[col * n + col];
        for i in col + 1..n {
            let f = a[i * n + col] / d;
            if f == T::zero() {
                continue;
            }
            for j in col..n {
                a[i * n + j] = a[i * n + j] - f * a[col * n + j];
            }
            x[i] = x[i] - f * x[col];
        }
    }
    for i in (0..n).rev() {
        let s = (i + 1..n).fold(x[i], |acc, j| acc - a[i * n + j] * x[j]);
        x[i] = s / a[i * n + i];
    }
    Ok(x)
}

fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Runs the recurrence from a zero state.
pub fn ssm_recurrent<T: Element>(sys: &DiscreteSsm<T>, x: &[T]) -> Result<Vec<T>> {
    if x.is_empty() {
        return Err(Error::domain("sequence length must be at least 1"));
    }
    let n = sys.state_size();
    let mut h = vec![T::zero(); n];
    let mut next = vec![T::zero(); n];
    let mut y = Vec::with_capacity(x.len());
    for &xt in x {
        sys.a_bar.apply(&h, &mut next);
        for ((hi, &ai), &bi) in h.iter_mut().zip(&next).zip(&sys.b_bar) {
            *hi = ai + bi * xt;
        }
        y.push(dot(&sys.c, &h));
    }
    Ok(y)
}

/// Kernel of length `len`, built by propagating `B̄` through `Ā` one step at a time.
pub fn ssm_kernel<T: Element>(sys: &DiscreteSsm<T>, len: usize) -> Result<SsmKernel<T>> {
    if len == 0 {
        return Err(Error::domain("kernel length must be at least 1"));
    }
    let mut v = sys.b_bar.clone();
    let mut next = vec![T::zero(); v.len()];
    let mut k = Vec::with_capacity(len);
    for _ in 0..len {
        k.push(dot(&sys.c, &v));
        sys.a_bar.apply(&v, &mut next);
        std::mem::swap(&mut v, &mut next);
    }
    Ok(SsmKernel { k })
}

/// Causal convolution `y_t = Σ_{j≤t} k[j]·x_{t−j}`. A kernel shorter than the
/// input is treated as zero-padded; extra kernel taps are ignored.
pub fn ssm_conv<T: Element>(x: &[T], kernel: &SsmKernel<T>) -> Result<Vec<T>> {
    if x.is_empty() {
        return Err(Error::domain("sequence length must be at least 1"));
    }
    let len = x.len();
    let k = &kernel.k[..kernel.len().min(len)];
    let mut y = vec![T::zero(); len];
    // Input-stationary: each x_s spreads k into y[s..].
    for (s, &xs) in x.iter().enumerate() {
        let span = (len - s).min(k.len());
        for (yt, &kj) in y[s..s + span].iter_mut().zip(k) {
            *yt = *yt + kj * xs;
        }
    }
    Ok(y)
}

/// Per-step parameters of the selective scan, all row-major over time.
#[derive(Debug, Clone, Copy)]
pub struct SelectiveInputs<'a, T> {
    /// `L × H`, strictly positive.
    pub delta: &'a Tensor<T>,
    /// `L × N`.
    pub b: &'a Tensor<T>,
    /// `L × N`.
    pub c: &'a Tensor<T>,
}

/// Hidden state of a selective scan: one length-N vector per inner channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanState<T> {
    pub channels: usize,
    pub state_size: usize,
    pub h: Vec<T>,
}

impl<T: Element> ScanState<T> {
    pub fn zeros(channels: usize, state_size: usize) -> Self {
        ScanState {
            channels,
            state_size,
            h: vec![T::zero(); channels * state_size],
        }
    }

    /// Advances one step and writes `y_t`. `a` and `d_skip` hold one value
    /// per head; heads own contiguous, equal-width channel ranges.
    #[allow(clippy::too_many_arguments)]
    pub fn step(&mut self, x_t: &[T], delta_t: &[T], b_t: &[T], c_t: &[T], a: &[T], d_skip: &[T], y_t: &mut [T]) {
        let n = self.state_size;
        let head_dim = self.channels / a.len();
        for (head, ((&dt, &ah), &dh)) in delta_t.iter().zip(a).zip(d_skip).enumerate() {
            let decay = (dt * ah).exp();
            for ch in head * head_dim..(head + 1) * head_dim {
                let xc = x_t[ch];
                let h = &mut self.h[ch * n..(ch + 1) * n];
                let mut acc = T::zero();
                for ((hi, &bi), &ci) in h.iter_mut().zip(b_t).zip(c_t) {
                    *hi = decay * *hi + (dt * bi) * xc;
                    acc = acc + ci * *hi;
                }
                y_t[ch] = acc + dh * xc;
            }
        }
    }
}

fn check_selective<T: Element>(x: &Tensor<T>, inputs: &SelectiveInputs<'_, T>, a: &[T], d_skip: &[T]) -> Result<()> {
    let (len, channels) = x.dims2()?;
    let heads = a.len();
    if heads == 0 || d_skip.len() != heads || channels % heads != 0 {
        return Err(Error::shape("selective_scan", &[channels], &[heads, d_skip.len()]));
    }
    let (dl, dh) = inputs.delta.dims2()?;
    if dl != len || dh != heads {
        return Err(Error::shape("selective_scan", x.shape(), inputs.delta.shape()));
    }
    let (bl, bn) = inputs.b.dims2()?;
    if bl != len || inputs.c.shape() != [bl, bn] {
        return Err(Error::shape("selective_scan", inputs.b.shape(), inputs.c.shape()));
    }
    if let Some(bad) = inputs.delta.data().iter().find(|&&d| !(d > T::zero())) {
        return Err(Error::domain(format!(
            "selective scan step size must be positive, got {bad}"
        )));
    }
    Ok(())
}

/// Selective scan over `L × D_inner` inputs. Per head `h` and channel `c` in
/// that head:
///
/// ```text
/// s_t = exp(Δ_{t,h} a_h) · s_{t−1} + Δ_{t,h} B_t x_{t,c}
/// y_{t,c} = C_t · s_t + d_h x_{t,c}
/// ```
///
/// `Ā` uses the exact exponential; `B̄` is the first-order `Δ·B`.
pub fn selective_scan<T: Element>(
    x: &Tensor<T>,
    inputs: SelectiveInputs<'_, T>,
    a: &[T],
    d_skip: &[T],
) -> Result<Tensor<T>> {
    let mut state = ScanState::zeros(x.cols(), inputs.b.cols());
    selective_scan_from(x, inputs, a, d_skip, &mut state)
}

/// As [`selective_scan`], continuing from (and updating) `state`.
pub fn selective_scan_from<T: Element>(
    x: &Tensor<T>,
    inputs: SelectiveInputs<'_, T>,
    a: &[T],
    d_skip: &[T],
    state: &mut ScanState<T>,
) -> Result<Tensor<T>> {
    check_selective(x, &inputs, a, d_skip)?;
    let (len, channels) = x.dims2()?;
    if state.channels != channels || state.state_size != inputs.b.cols() {
        return Err(Error::shape(
            "selective_scan",
            &[state.channels, state.state_size],
            &[channels, inputs.b.cols()],
        ));
    }
    let mut y = vec![T::zero(); len * channels];
    for t in 0..len {
        state.step(
            x.row(t),
            inputs.delta.row(t),
            inputs.b.row(t),
            inputs.c.row(t),
            a,
            d_skip,
            &mut y[t * channels..(t + 1) * channels],
        );
    }
    Tensor::new([len, channels], y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, b: f64, c: f64) -> DiscreteSsm<f64> {
        DiscreteSsm::new(StateMatrix::Diagonal(vec![a]), vec![b], vec![c]).unwrap()
    }

    #[test]
    fn zoh_scalar_closed_form() {
        let sys = ContinuousSsm::new(StateMatrix::Diagonal(vec![-1.0]), vec![1.0], vec![1.0], 2f64.ln()).unwrap();
        let d = zoh_discretize(&sys).unwrap();
        let StateMatrix::Diagonal(a) = &d.a_bar else { panic!() };
        assert!((a[0] - 0.5).abs() < 1e-12);
        assert!((d.b_bar[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zoh_small_step_limit() {
        let delta = 1e-8f64;
        let sys = ContinuousSsm::new(
            StateMatrix::Diagonal(vec![-1.0, -3.0]),
            vec![2.0, 0.5],
            vec![1.0, 1.0],
            delta,
        )
        .unwrap();
        let d = zoh_discretize(&sys).unwrap();
        let StateMatrix::Diagonal(a) = &d.a_bar else { panic!() };
        for (i, &ai) in a.iter().enumerate() {
            assert!((ai - 1.0).abs() < 1e-7);
            let expect = delta * sys.b[i];
            assert!(((d.b_bar[i] - expect) / expect).abs() < 1e-7);
        }
    }

    #[test]
    fn zoh_diagonal_exponential_and_zero_entry() {
        let sys = ContinuousSsm::new(
            StateMatrix::Diagonal(vec![-1.0, -2.0, 0.0]),
            vec![1.0, 1.0, 3.0],
            vec![1.0; 3],
            1.0,
        )
        .unwrap();
        let d = zoh_discretize(&sys).unwrap();
        let StateMatrix::Diagonal(a) = &d.a_bar else { panic!() };
        assert!((a[0] - (-1f64).exp()).abs() < 1e-15);
        assert!((a[1] - (-2f64).exp()).abs() < 1e-15);
        assert_eq!(a[2], 1.0);
        assert_eq!(d.b_bar[2], 3.0);
    }

    #[test]
    fn zoh_dense_matches_diagonal_path() {
        let diag = vec![-0.7, -1.3, -2.1];
        let b: Vec<f64> = vec![0.3, -1.0, 2.0];
        let dense = StateMatrix::Diagonal(diag.clone()).to_dense();
        let d1 =
            zoh_discretize(&ContinuousSsm::new(StateMatrix::Diagonal(diag), b.clone(), vec![1.0; 3], 0.4).unwrap())
                .unwrap();
        let d2 = zoh_discretize(&ContinuousSsm::new(StateMatrix::Dense(dense), b, vec![1.0; 3], 0.4).unwrap()).unwrap();
        assert!(d1.a_bar.to_dense().max_abs_diff(&d2.a_bar.to_dense()).unwrap() < 1e-13);
        for (x, y) in d1.b_bar.iter().zip(&d2.b_bar) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn expm_of_rotation_generator() {
        // exp([[0, -t], [t, 0]]) is a rotation by t.
        let t = 2.5f64;
        let m = Tensor::from_rows(&[vec![0.0, -t], vec![t, 0.0]]).unwrap();
        let e = expm(&m).unwrap();
        let expect = Tensor::from_rows(&[vec![t.cos(), -t.sin()], vec![t.sin(), t.cos()]]).unwrap();
        assert!(e.max_abs_diff(&expect).unwrap() < 1e-13);
    }

    #[test]
    fn zoh_errors() {
        let bad_step = ContinuousSsm::new(StateMatrix::Diagonal(vec![-1.0]), vec![1.0], vec![1.0], 0.0).unwrap();
        assert!(matches!(zoh_discretize(&bad_step), Err(Error::Domain(_))));

        let singular = Tensor::from_rows(&[vec![-1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let sys = ContinuousSsm::new(StateMatrix::Dense(singular), vec![1.0, 1.0], vec![1.0, 1.0], 0.5).unwrap();
        assert!(matches!(zoh_discretize(&sys), Err(Error::Singular { pivot: 1 })));
    }

    #[test]
    fn recurrent_impulse_response() {
        let y = ssm_recurrent(&scalar(0.5, 1.0, 1.0), &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(y, vec![1.0, 0.5, 0.25]);
    }

    #[test]
    fn memoryless_when_transition_is_zero() {
        let x = [0.3, -2.0, 5.0, 1.5];
        let y = ssm_recurrent(&scalar(0.0, 2.0, 3.0), &x).unwrap();
        for (yt, xt) in y.iter().zip(x) {
            assert_eq!(*yt, 6.0 * xt);
        }
        let k = ssm_kernel(&scalar(0.0, 2.0, 3.0), 4).unwrap();
        assert_eq!(k.k, vec![6.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn kernel_of_scalar_system() {
        assert_eq!(ssm_kernel(&scalar(0.5, 1.0, 1.0), 3).unwrap().k, vec![1.0, 0.5, 0.25]);
    }

    #[test]
    fn conv_identity_and_impulse() {
        let x = [1.5, -2.0, 0.25, 4.0];
        let id = SsmKernel {
            k: vec![1.0, 0.0, 0.0, 0.0],
        };
        assert_eq!(ssm_conv(&x, &id).unwrap(), x.to_vec());
        let k = SsmKernel {
            k: vec![0.3, 0.2, -0.1, 0.7],
        };
        assert_eq!(ssm_conv(&[1.0, 0.0, 0.0, 0.0], &k).unwrap(), k.k);
        // Short kernels are zero-padded.
        let short = SsmKernel { k: vec![2.0] };
        assert_eq!(ssm_conv(&x, &short).unwrap(), vec![3.0, -4.0, 0.5, 8.0]);
    }

    #[test]
    fn empty_sequences_rejected() {
        assert!(ssm_recurrent(&scalar(0.5, 1.0, 1.0), &[]).is_err());
        assert!(ssm_kernel(&scalar(0.5, 1.0, 1.0), 0).is_err());
    }

    fn selective_fixture(len: usize) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>, Tensor<f64>) {
        let x = Tensor::from_fn(len, 4, |t, c| ((t * 4 + c) as f64 * 0.37).sin()).unwrap();
        let delta = Tensor::from_fn(len, 2, |_, _| 0.1).unwrap();
        let b = Tensor::from_fn(len, 3, |_, n| 0.5 + n as f64 * 0.1).unwrap();
        let c = Tensor::from_fn(len, 3, |_, n| 1.0 - n as f64 * 0.2).unwrap();
        (x, delta, b, c)
    }

    #[test]
    fn selective_zero_input_gives_zero() {
        let (_, delta, b, c) = selective_fixture(5);
        let x = Tensor::zeros([5, 4]);
        let y = selective_scan(
            &x,
            SelectiveInputs {
                delta: &delta,
                b: &b,
                c: &c,
            },
            &[-1.0, -2.0],
            &[0.5, 0.5],
        )
        .unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn selective_without_memory_limit() {
        let (x, delta, b, c) = selective_fixture(6);
        let a = [-1e6, -1e6];
        let d = [0.25, -0.5];
        let y = selective_scan(
            &x,
            SelectiveInputs {
                delta: &delta,
                b: &b,
                c: &c,
            },
            &a,
            &d,
        )
        .unwrap();
        let bc: f64 = b.row(0).iter().zip(c.row(0)).map(|(p, q)| p * q).sum();
        for t in 0..6 {
            for ch in 0..4 {
                let xv = x.at(t, ch);
                let expect = 0.1 * bc * xv + d[ch / 2] * xv;
                assert!((y.at(t, ch) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn selective_rejects_nonpositive_step() {
        let (x, _, b, c) = selective_fixture(3);
        let delta = Tensor::from_fn(3, 2, |t, _| if t == 1 { 0.0 } else { 0.1 }).unwrap();
        let r = selective_scan(
            &x,
            SelectiveInputs {
                delta: &delta,
                b: &b,
                c: &c,
            },
            &[-1.0, -1.0],
            &[0.0, 0.0],
        );
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn selective_rejects_uneven_heads() {
        let (x, _, b, c) = selective_fixture(3);
        let delta = Tensor::from_fn(3, 3, |_, _| 0.1).unwrap();
        let r = selective_scan(
            &x,
            SelectiveInputs {
                delta: &delta,
                b: &b,
                c: &c,
            },
            &[-1.0; 3],
            &[0.0; 3],
        );
        assert!(matches!(r, Err(Error::Shape { .. })));
    }
}
