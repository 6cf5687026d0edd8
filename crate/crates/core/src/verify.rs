//! Self-check suites run by `mlmamba verify`.
//!
//! Every suite pairs a fast path with an oracle from [`crate::testkit`] or
//! with an algebraic identity. The fast level caps grids at 8×8 and
//! random instances at 20 per suite.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bench::{eval_avg, read_csv, write_csv, BenchRecord, ModelKind};
use crate::connector::{
    apply_scan, connector_forward, inverse_scan, mlp_backward, mlp_project, mvss_forward, swiglu, swiglu_backward,
    ConnectorDims, ConnectorKind, ConnectorVariant, ConnectorWeights, MlpWeights, ScanMechanism, SwigluWeights,
};
use crate::error::Error;
use crate::format::{encode, read_tensor};
use crate::lm::{detokenize, generate, tokenize, ToyLmConfig, ToyLmWeights};
use crate::mamba2::{mamba2_block, Mamba2BlockWeights, Mamba2Config};
use crate::ssm::{
    selective_scan, ssm_conv, ssm_kernel, ssm_recurrent, zoh_discretize, ContinuousSsm, SelectiveInputs, StateMatrix,
};
use crate::tensor::Tensor;
use crate::testkit::{
    causality_probe, finite_diff_grad, kernel_by_matrix_power, naive_conv, naive_matmul, random_diagonal_system,
    random_matrix, random_sequence, reforward_generate, relative_error, time_invariant_scan, FiniteDiffSpec,
};
use crate::vision::{fuse_encoders, patchify, stub_encode, unpatchify, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Fast,
    Full,
}

impl Level {
    pub fn instances(self) -> usize {
        match self {
            Level::Fast => 20,
            Level::Full => 100,
        }
    }

    pub fn max_grid(self) -> usize {
        match self {
            Level::Fast => 8,
            Level::Full => 12,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Fast => "fast",
            Level::Full => "full",
        })
    }
}

impl FromStr for Level {
    type Err = Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "fast" => Ok(Level::Fast),
            "full" => Ok(Level::Full),
            _ => Err(Error::domain(format!(
                "unknown verify level {s:?} (expected fast or full)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyOptions {
    pub level: Level,
    pub seed: u64,
    /// Perturbs one convolution-kernel tap by 1e-6 inside the dual-form suite.
    pub inject_fault: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            level: Level::Fast,
            seed: 0,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub suites: Vec<SuiteResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.suites {
            let status = if s.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{status}  {:<18} {:>8.3}s  {}", s.name, s.seconds, s.detail)?;
        }
        let failed = self.suites.iter().filter(|s| !s.passed).count();
        write!(f, "{} suites, {failed} failed", self.suites.len())
    }
}

#[derive(Debug)]
struct Failure(String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(format!("error: {e}"))
    }
}

type Outcome = std::result::Result<String, Failure>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), Failure> {
    if cond {
        Ok(())
    } else {
        Err(Failure(msg()))
    }
}

struct Ctx {
    opts: VerifyOptions,
}

impl Ctx {
    fn rng(&self, suite: &str) -> ChaCha8Rng {
        crate::rng::component_rng(self.opts.seed, &format!("verify/{suite}"))
    }

    fn n(&self) -> usize {
        self.opts.level.instances()
    }
}

type Suite = (&'static str, fn(&Ctx) -> Outcome);

const SUITES: [Suite; 12] = [
    ("tensor", suite_tensor),
    ("tensor-file", suite_tensor_file),
    ("zoh", suite_zoh),
    ("ssm-dual-form", suite_dual_form),
    ("selective-scan", suite_selective),
    ("mamba2-block", suite_mamba2),
    ("vision", suite_vision),
    ("scan-algebra", suite_scan_algebra),
    ("connector", suite_connector),
    ("gradients", suite_gradients),
    ("generation", suite_generation),
    ("bench-format", suite_bench_format),
];

pub fn suite_names() -> Vec<&'static str> {
    SUITES.iter().map(|s| s.0).collect()
}

pub fn run(opts: VerifyOptions) -> Report {
    let ctx = Ctx { opts };
    let suites = SUITES
        .iter()
        .map(|&(name, f)| {
            let start = Instant::now();
            let outcome = f(&ctx);
            let seconds = start.elapsed().as_secs_f64();
            let (passed, detail) = match outcome {
                Ok(d) => (true, d),
                Err(Failure(d)) => (false, d),
            };
            SuiteResult {
                name,
                passed,
                detail,
                seconds,
            }
        })
        .collect();
    Report { suites }
}

fn suite_tensor(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng("tensor");
    let mut worst = 0.0f64;
    for _ in 0..ctx.n() {
        let a = random_matrix(8, 8, &mut rng)?;
        let b = random_matrix(8, 8, &mut rng)?;
        let c = random_matrix(8, 8, &mut rng)?;
        worst = worst.max(a.matmul(&b)?.max_abs_diff(&naive_matmul(&a, &b)?)?);
        let assoc = a.matmul(&b)?.matmul(&c)?.max_abs_diff(&a.matmul(&b.matmul(&c)?)?)?;
        ensure(assoc < 1e-10, || format!("associativity error {assoc:e}"))?;
    }
    ensure(worst < 1e-12, || format!("matmul vs triple loop {worst:e}"))?;
    Ok(format!("max matmul error {worst:.1e}"))
}

fn suite_tensor_file(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng("tensor-file");
    let mut count = 0;
    for rank in 0..=4usize {
        let shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..4)).collect();
        let len = shape.iter().product();
        let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-1e3..1e3)).collect();
        let t64 = Tensor::new(shape.clone(), data)?;
        let back = read_tensor(&encode(&t64)?[..])?.into_f64()?;
        ensure(back.shape() == t64.shape(), || format!("rank {rank} f64 shape changed"))?;
        ensure(
            back.data()
                .iter()
                .zip(t64.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()),
            || format!("rank {rank} f64 payload changed"),
        )?;
        let t32: Tensor<f32> = t64.cast()?;
        let back = read_tensor(&encode(&t32)?[..])?.into_f32()?;
        ensure(
            back.data()
                .iter()
                .zip(t32.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()),
            || format!("rank {rank} f32 payload changed"),
        )?;
        count += 2;
    }
    let good = encode(&Tensor::new([2], vec![1.0f64, 2.0])?)?;
    let mut bad = good.clone();
    bad[0] = b'X';
    ensure(matches!(read_tensor(&bad[..]), Err(Error::BadMagic(_))), || {
        "bad magic accepted".into()
    })?;
    ensure(
        matches!(read_tensor(&good[..good.len() - 1]), Err(Error::Truncated { .. })),
        || "truncated payload accepted".into(),
    )?;
    Ok(format!("{count} round-trips bit-exact"))
}

fn suite_zoh(_: &Ctx) -> Outcome {
    let sys = ContinuousSsm::new(StateMatrix::Diagonal(vec![-1.0]), vec![1.0], vec![1.0], 2f64.ln())?;
    let d = zoh_discretize(&sys)?;
    let a = d.a_bar.to_dense().at(0, 0);
    ensure((a - 0.5).abs() < 1e-12 && (d.b_bar[0] - 0.5).abs() < 1e-12, || {
        format!("scalar case gave A={a}, B={}", d.b_bar[0])
    })?;

    let a_mat = Tensor::from_rows(&[vec![-1.0, 0.5], vec![0.2, -2.0]])?;
    let mut ratios = Vec::new();
    for delta in [1e-2, 1e-3, 1e-4] {
        let sys = ContinuousSsm::new(StateMatrix::Dense(a_mat.clone()), vec![1.0, 0.5], vec![1.0, 1.0], delta)?;
        let a_bar = zoh_discretize(&sys)?.a_bar.to_dense();
        let first_order = Tensor::eye(2).add(&a_mat.scale(delta)?)?;
        ratios.push(a_bar.sub(&first_order)?.frobenius() / (delta * delta));
    }
    // ‖ΔA‖²/2 bounds the second-order term; allow a factor of 2 on top.
    let c = a_mat.matmul(&a_mat)?.frobenius();
    ensure(ratios.iter().all(|&r| r <= c), || {
        format!("limit ratios {ratios:?} exceed {c}")
    })?;
    Ok(format!(
        "limit ratios {:.3}, {:.3}, {:.3}",
        ratios[0], ratios[1], ratios[2]
    ))
}

fn suite_dual_form(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng("ssm-dual-form");
    let mut worst = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for _ in 0..ctx.n() {
        let n = rng.gen_range(1..=8);
        let len = rng.gen_range(1..=64);
        let sys = random_diagonal_system(n, &mut rng)?;
        let x = random_sequence(len, &mut rng);
        let mut kernel = ssm_kernel(&sys, len)?;
        if ctx.opts.inject_fault {
            kernel.k[0] += 1e-6;
        }
        let rec = ssm_recurrent(&sys, &x)?;
        let conv = ssm_conv(&x, &kernel)?;
        let naive = naive_conv(&x, &kernel.k);
        let powered = kernel_by_matrix_power(&sys, len)?;
        for t in 0..len {
            worst = worst.max((rec[t] - conv[t]).abs());
            worst_oracle = worst_oracle
                .max((conv[t] - naive[t]).abs())
                .max((kernel.k[t] - powered.k[t]).abs());
        }
    }
    ensure(worst < 1e-9, || format!("recurrent vs convolution {worst:e}"))?;
    ensure(worst_oracle < 1e-10, || format!("oracle mismatch {worst_oracle:e}"))?;
    Ok(format!("{} systems, max diff {worst:.1e}", ctx.n()))
}

fn suite_selective(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng("selective-scan");
    let (len, heads, head_dim, n) = (24, 2, 3, 4);
    let ch = heads * head_dim;
    let mut worst = 0.0f64;
    for _ in 0..ctx.n() {
        let delta: Vec<f64> = (0..heads).map(|_| rng.gen_range(0.01..0.5)).collect();
        let b: Vec<f64> = random_sequence(n, &mut rng);
        let c: Vec<f64> = random_sequence(n, &mut rng);
        let a: Vec<f64> = (0..heads).map(|_| -rng.gen_range(0.5..2.0)).collect();
        let d: Vec<f64> = random_sequence(heads, &mut rng);
        let x = random_matrix(len, ch, &mut rng)?;
        let dt = Tensor::from_fn(len, heads, |_, h| delta[h])?;
        let bt = Tensor::from_fn(len, n, |_, i| b[i])?;
        let ct = Tensor::from_fn(len, n, |_, i| c[i])?;
        let inputs = SelectiveInputs {
            delta: &dt,
            b: &bt,
            c: &ct,
        };
        let fast = selective_scan(&x, inputs, &a, &d)?;
        worst = worst.max(fast.max_abs_diff(&time_invariant_scan(&x, &delta, &b, &c, &a, &d)?)?);

        let x2 = random_matrix(len, ch, &mut rng)?;
        let (al, be) = (0.7, -1.3);
        let mix = x.scale(al)?.add(&x2.scale(be)?)?;
        let lhs = selective_scan(&mix, inputs, &a, &d)?;
        let rhs = fast.scale(al)?.add(&selective_scan(&x2, inputs, &a, &d)?.scale(be)?)?;
        let lin = lhs.max_abs_diff(&rhs)?;
        ensure(lin < 1e-10, || format!("linearity error {lin:e}"))?;
    }
    ensure(worst < 1e-9, || format!("time-invariant reduction error {worst:e}"))?;
    Ok(format!("reduction max diff {worst:.1e}"))
}

fn suite_mamba2(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng("mamba2-block");
    let cfg = Mamba2Config::new(8, 4, 2)?;
    let zero = Mamba2BlockWeights::<f64>::zeros(cfg)?;
    let x = random_matrix(10, 8, &mut rng)?;
    ensure(mamba2_block(&x, &zero)? == x, || {
        "zero block is not a passthrough".into()
    })?;
    let mut worst = 0.0f64;
    for _ in 0..ctx.n().min(20) {
        let w = Mamba2BlockWeights::random(cfg, &mut rng)?;
        let len = rng.gen_range(2..=16);
        let x = random_matrix(len, 8, &mut rng)?;
        let t = rng.gen_range(0..len);
        let r = causality_probe(|v| mamba2_block(v, &w), &x, t, 0.25)?;
        worst = worst.max(r.before);
        ensure(r.after > 0.0, || format!("perturbation at {t} had no effect"))?;
    }
    ensure(worst == 0.0, || format!("causality violated by {worst:e}"))?;
    Ok("causal, residual passthrough".into())
}

fn suite_vision(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng("vision");
    for _ in 0..ctx.n() {
        let p = rng.gen_range(1..=4);
        let (h, w) = (p * rng.gen_range(1..=4), p * rng.gen_range(1..=4));
        let ch = if rng.gen_bool(0.5) { 1 } else { 3 };
        let pixels = (0..h * w * ch)
            .map(|_| rng.gen_range(0..=255u8) as f64 / 255.0)
            .collect();
        let img = Image::new(h, w, ch, pixels)?;
        let grid = patchify(&img, p)?;
        ensure(unpatchify(&grid, ch)? == img, || {
            format!("patch round-trip failed at {h}x{w}x{ch}, P={p}")
        })?;
        let a = stub_encode(&grid, 11, 4)?;
        ensure(stub_encode(&grid, 11, 4)? == a, || {
            "stub encoder is not deterministic".into()
        })?;
        let b = stub_encode(&grid, 12, 6)?;
        let fused = fuse_encoders(&a, &b)?;
        ensure(
            fused.tokens.slice_cols(0, 4)? == a.tokens && fused.tokens.slice_cols(4, 10)? == b.tokens,
            || "fusion does not slice back".into(),
        )?;
    }
    Ok(format!("{} images", ctx.n()))
}

fn suite_scan_algebra(ctx: &Ctx) -> Outcome {
    let max = ctx.opts.level.max_grid();
    let mut rng = ctx.rng("scan-algebra");
    let mut checked = 0;
    for rows in 1..=max {
        for cols in 1..=max {
            let x = random_matrix(rows * cols, 3, &mut rng)?;
            for scan in [ScanMechanism::Bsm, ScanMechanism::Csm] {
                for order in scan.orders(rows, cols) {
                    let mut seen = vec![false; rows * cols];
                    for &i in order.forward() {
                        seen[i] = true;
                    }
                    ensure(seen.iter().all(|&s| s), || {
                        format!("{scan} order on {rows}x{cols} is not onto")
                    })?;
                    let back = inverse_scan(&apply_scan(&x, &order)?, &order)?;
                    ensure(
                        back.data()
                            .iter()
                            .zip(x.data())
                            .all(|(a, b)| a.to_bits() == b.to_bits()),
                        || format!("{scan} round-trip on {rows}x{cols}"),
                    )?;
                    checked += 1;
                }
            }
        }
    }
    let csm: Vec<Vec<usize>> = ScanMechanism::Csm
        .orders(2, 2)
        .iter()
        .map(|o| o.forward().to_vec())
        .collect();
    ensure(
        csm == [vec![0, 1, 2, 3], vec![3, 2, 1, 0], vec![0, 2, 1, 3], vec![3, 1, 2, 0]],
        || format!("CSM 2x2 orders {csm:?}"),
    )?;
    Ok(format!("{checked} orders up to {max}x{max}"))
}

fn suite_connector(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng("connector");
    let dims = ConnectorDims::new(8, 12, 4, 2);
    let w = ConnectorWeights::<f64>::random(dims, &mut rng)?;
    let side = ctx.opts.level.max_grid().min(8);
    for (rows, cols) in [(4, 4), (side, side), (3, 5)] {
        let x = random_matrix(rows * cols, 8, &mut rng)?;
        for kind in [ConnectorKind::Mlp, ConnectorKind::MscBasic, ConnectorKind::MscAdvanced] {
            for scan in [ScanMechanism::Bsm, ScanMechanism::Csm] {
                let y = connector_forward(&x, rows, cols, ConnectorVariant { kind, scan }, &w)?;
                ensure(y.shape() == [rows * cols, 12], || {
                    format!("{kind} output shape {:?}", y.shape())
                })?;
            }
        }
    }

    let mut zeroed = w.clone();
    zeroed.mvss = Mamba2BlockWeights::zeros(dims.mamba()?)?;
    let x = random_matrix(12, 8, &mut rng)?;
    let basic = connector_forward(
        &x,
        3,
        4,
        ConnectorVariant {
            kind: ConnectorKind::MscBasic,
            scan: ScanMechanism::Csm,
        },
        &zeroed,
    )?;
    let diff = basic.max_abs_diff(&mlp_project(&x, &w.mlp)?)?;
    ensure(diff < 1e-12, || format!("zero-MVSS basic vs MLP {diff:e}"))?;

    let rev: Vec<usize> = (0..12).rev().collect();
    let lhs = mvss_forward(&x.gather_rows(&rev)?, 3, 4, ScanMechanism::Bsm, &w.mvss)?;
    let rhs = mvss_forward(&x, 3, 4, ScanMechanism::Bsm, &w.mvss)?.gather_rows(&rev)?;
    let eq = lhs.max_abs_diff(&rhs)?;
    ensure(eq < 1e-10, || format!("reversal equivariance error {eq:e}"))?;
    Ok(format!("reversal equivariance {eq:.1e}"))
}

fn flat(ts: &[&Tensor<f64>]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn unflat(p: &[f64], like: &[&Tensor<f64>]) -> Vec<Tensor<f64>> {
    let mut at = 0;
    like.iter()
        .map(|t| {
            let part = p[at..at + t.len()].to_vec();
            at += t.len();
            Tensor::new(t.shape().to_vec(), part).expect("same shape")
        })
        .collect()
}

fn weighted_sum(y: &Tensor<f64>, g: &Tensor<f64>) -> f64 {
    y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
}

/// Largest relative error over all parameter groups of SwiGLU and the MLP.
pub fn gradient_errors(seed: u64, instances: usize) -> crate::Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = FiniteDiffSpec::default();
    let (mut sw_err, mut mlp_err) = (0.0f64, 0.0f64);
    for _ in 0..instances {
        let (n, d, d_ff) = (3, 4, 6);
        let x = random_matrix(n, d, &mut rng)?;
        let w = SwigluWeights::random(d, d_ff, &mut rng)?;
        let g = random_matrix(n, d, &mut rng)?;
        let grads = swiglu_backward(&x, &w, &g)?;
        let like = [&x, &w.w_gate, &w.w_up, &w.w_down];
        let f = |p: &[f64]| {
            let t = unflat(p, &like);
            let w = SwigluWeights {
                w_gate: t[1].clone(),
                w_up: t[2].clone(),
                w_down: t[3].clone(),
            };
            weighted_sum(&swiglu(&t[0], &w).expect("shapes"), &g)
        };
        let numeric = finite_diff_grad(f, &flat(&like), spec);
        let analytic = flat(&[&grads.x, &grads.w_gate, &grads.w_up, &grads.w_down]);
        sw_err = sw_err.max(relative_error(&analytic, &numeric));

        let (d_in, d_h, d_out) = (4, 5, 3);
        let x = random_matrix(n, d_in, &mut rng)?;
        let w = MlpWeights::random(d_in, d_h, d_out, &mut rng)?;
        let g = random_matrix(n, d_out, &mut rng)?;
        let grads = mlp_backward(&x, &w, &g)?;
        let bias = |b: &[f64]| Tensor::new([b.len()], b.to_vec()).expect("finite");
        let (b1, b2, b3) = (bias(&w.b1), bias(&w.b2), bias(&w.b3));
        let like = [&x, &w.w1, &b1, &w.w2, &b2, &w.w3, &b3];
        let f = |p: &[f64]| {
            let t = unflat(p, &like);
            let w = MlpWeights {
                w1: t[1].clone(),
                b1: t[2].data().to_vec(),
                w2: t[3].clone(),
                b2: t[4].data().to_vec(),
                w3: t[5].clone(),
                b3: t[6].data().to_vec(),
            };
            weighted_sum(&mlp_project(&t[0], &w).expect("shapes"), &g)
        };
        let numeric = finite_diff_grad(f, &flat(&like), spec);
        let (gb1, gb2, gb3) = (bias(&grads.b1), bias(&grads.b2), bias(&grads.b3));
        let analytic = flat(&[&grads.x, &grads.w1, &gb1, &grads.w2, &gb2, &grads.w3, &gb3]);
        mlp_err = mlp_err.max(relative_error(&analytic, &numeric));
    }
    Ok((sw_err, mlp_err))
}

fn suite_gradients(ctx: &Ctx) -> Outcome {
    let seed = crate::rng::derive_seed(ctx.opts.seed, "verify/gradients");
    let (sw, mlp) = gradient_errors(seed, ctx.n().min(20))?;
    ensure(sw < 1e-6, || format!("SwiGLU relative error {sw:e}"))?;
    ensure(mlp < 1e-6, || format!("MLP relative error {mlp:e}"))?;
    Ok(format!("swiglu {sw:.1e}, mlp {mlp:.1e}"))
}

fn suite_generation(ctx: &Ctx) -> Outcome {
    let bytes: Vec<u8> = (0..=255).collect();
    ensure(detokenize(&tokenize(&bytes)) == bytes, || {
        "byte tokenizer round-trip".into()
    })?;
    let mut rng = ctx.rng("generation");
    let cfg = ToyLmConfig {
        d_llm: 16,
        n_layers: 2,
        d_state: 4,
        n_heads: 2,
        max_gen: 16,
    };
    let runs = if ctx.opts.level == Level::Fast { 3 } else { 10 };
    for _ in 0..runs {
        let w = ToyLmWeights::<f64>::random(cfg, &mut rng)?;
        let v_out = random_matrix(4, 16, &mut rng)?;
        let fast = generate(&v_out, b"describe", &w)?.tokens;
        let slow = reforward_generate(&v_out, b"describe", &w)?;
        ensure(fast == slow, || format!("recurrent {fast:?} vs re-forward {slow:?}"))?;
    }
    Ok(format!("{runs} generations agree"))
}

fn suite_bench_format(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng("bench-format");
    let records = (0..ctx.n())
        .map(|i| {
            let times = (0..3).map(|_| rng.gen_range(1e-6..10.0)).collect();
            let kind = if i % 2 == 0 {
                ModelKind::Ssm
            } else {
                ModelKind::Attention
            };
            BenchRecord::from_times(kind, 256 << (i % 6), 64, times)
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let mut buf = Vec::new();
    write_csv(&records, &mut buf)?;
    ensure(read_csv(&buf[..])? == records, || {
        "CSV round-trip changed a record".into()
    })?;
    let a = eval_avg(256, 1.47)?;
    ensure((a - 174.1).abs() <= 0.1, || format!("eval_avg(256, 1.47) = {a}"))?;
    Ok(format!("{} records round-trip", records.len()))
}
