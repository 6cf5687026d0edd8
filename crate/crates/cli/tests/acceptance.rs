//! End-to-end acceptance run. Prints one line per criterion and exits
//! nonzero if any criterion fails. A criterion that cannot be reached
//! without pretrained weights reports UNATTAINABLE once its structural
//! check has run cleanly; it is neither a pass nor a failure.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mlmamba::bench::{
    eval_avg, measure_decode, read_csv, sweep, write_csv, BenchRecord, ModelKind, SlopeReport, DEFAULT_LENGTHS,
};
use mlmamba::connector::{
    apply_scan, connector_forward, inverse_scan, mlp_project, mvss_forward, ConnectorDims, ConnectorKind,
    ConnectorVariant, ConnectorWeights, ScanMechanism,
};
use mlmamba::format::{encode, read_tensor};
use mlmamba::lm::{
    argmax, build_prefix, detokenize, generate, lm_forward, tokenize, LmSession, ToyLmConfig, ToyLmWeights,
};
use mlmamba::mamba2::Mamba2BlockWeights;
use mlmamba::rng::{component_rng, labels};
use mlmamba::ssm::{ssm_conv, ssm_kernel, ssm_recurrent, zoh_discretize, ContinuousSsm, StateMatrix};
use mlmamba::testkit::{
    kernel_by_matrix_power, naive_conv, random_diagonal_system, random_matrix, random_sequence, reforward_generate,
};
use mlmamba::verify::gradient_errors;
use mlmamba::vision::{load_pnm, Image};
use mlmamba::{Error, Tensor};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e(err: Error) -> String {
    err.to_string()
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let spent = start.elapsed();
    check(spent < limit, || {
        format!("took {:.1}s, limit {}s", spent.as_secs_f64(), limit.as_secs())
    })
}

fn dual_form() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut dual, mut conv_oracle, mut kernel_oracle) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.gen_range(1..=8);
        let len = rng.gen_range(1..=64);
        let sys = random_diagonal_system(n, &mut rng).map_err(e)?;
        let x = random_sequence(len, &mut rng);
        let kernel = ssm_kernel(&sys, len).map_err(e)?;
        let rec = ssm_recurrent(&sys, &x).map_err(e)?;
        let conv = ssm_conv(&x, &kernel).map_err(e)?;
        let naive = naive_conv(&x, &kernel.k);
        let powered = kernel_by_matrix_power(&sys, len).map_err(e)?;
        for t in 0..len {
            dual = dual.max((rec[t] - conv[t]).abs());
            conv_oracle = conv_oracle.max((conv[t] - naive[t]).abs());
            kernel_oracle = kernel_oracle.max((kernel.k[t] - powered.k[t]).abs());
        }
    }
    check(dual < 1e-9, || format!("recurrent vs convolution {dual:e}"))?;
    check(conv_oracle < 1e-10, || {
        format!("convolution vs naive loop {conv_oracle:e}")
    })?;
    check(kernel_oracle < 1e-10, || {
        format!("kernel vs matrix powers {kernel_oracle:e}")
    })?;
    within(start, Duration::from_secs(10))?;
    Ok(format!(
        "100 systems: dual {dual:.1e}, naive conv {conv_oracle:.1e}, matrix power {kernel_oracle:.1e}"
    ))
}

fn zoh() -> Outcome {
    let sys = ContinuousSsm::new(StateMatrix::Diagonal(vec![-1.0]), vec![1.0], vec![1.0], 2f64.ln()).map_err(e)?;
    let d = zoh_discretize(&sys).map_err(e)?;
    let a_bar = d.a_bar.to_dense().at(0, 0);
    check((a_bar - 0.5).abs() < 1e-12, || format!("A_bar = {a_bar}"))?;
    check((d.b_bar[0] - 0.5).abs() < 1e-12, || format!("B_bar = {}", d.b_bar[0]))?;

    let systems = [
        StateMatrix::Dense(
            Tensor::from_rows(&[vec![-1.0, 0.5, 0.0], vec![0.2, -2.0, 0.3], vec![0.0, -0.4, -0.5]]).map_err(e)?,
        ),
        StateMatrix::Diagonal(vec![-0.3, -1.0, -4.0]),
    ];
    let mut worst = 0.0f64;
    for a in systems {
        let a_dense = a.to_dense();
        // The remainder is Δ²A²/2 + O(Δ³); c = ‖A²‖_F bounds it with room to spare.
        let c = a_dense.matmul(&a_dense).map_err(e)?.frobenius();
        for delta in [1e-2, 1e-3, 1e-4] {
            let sys = ContinuousSsm::new(a.clone(), vec![1.0; 3], vec![1.0; 3], delta).map_err(e)?;
            let a_bar = zoh_discretize(&sys).map_err(e)?.a_bar.to_dense();
            let remainder = a_bar
                .sub(&Tensor::eye(3).add(&a_dense.scale(delta).map_err(e)?).map_err(e)?)
                .map_err(e)?
                .frobenius();
            let ratio = remainder / (c * delta * delta);
            check(ratio <= 1.0, || {
                format!("remainder {remainder:e} exceeds c*delta^2 at delta={delta}")
            })?;
            worst = worst.max(ratio);
        }
    }
    Ok(format!(
        "scalar case exact to 1e-12; remainder / (c*delta^2) <= {worst:.3}"
    ))
}

fn scan_algebra() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut orders = 0;
    for rows in 1..=12 {
        for cols in 1..=12 {
            let n = rows * cols;
            let x = random_matrix(n, 5, &mut rng).map_err(e)?;
            for scan in [ScanMechanism::Bsm, ScanMechanism::Csm] {
                for order in scan.orders(rows, cols) {
                    let mut seen = vec![0u8; n];
                    for &i in order.forward() {
                        seen[i] += 1;
                    }
                    check(order.len() == n && seen.iter().all(|&c| c == 1), || {
                        format!("{scan} order on {rows}x{cols} is not a bijection")
                    })?;
                    let back = inverse_scan(&apply_scan(&x, &order).map_err(e)?, &order).map_err(e)?;
                    check(
                        back.data()
                            .iter()
                            .zip(x.data())
                            .all(|(a, b)| a.to_bits() == b.to_bits()),
                        || format!("{scan} round-trip on {rows}x{cols} not bit-exact"),
                    )?;
                    orders += 1;
                }
            }
        }
    }
    let csm: Vec<Vec<usize>> = ScanMechanism::Csm
        .orders(2, 2)
        .iter()
        .map(|o| o.forward().to_vec())
        .collect();
    let expected = vec![vec![0, 1, 2, 3], vec![3, 2, 1, 0], vec![0, 2, 1, 3], vec![3, 1, 2, 0]];
    check(csm == expected, || format!("CSM 2x2 gave {csm:?}"))?;
    within(start, Duration::from_secs(5))?;
    Ok(format!("{orders} orders over 144 grids; CSM 2x2 exact"))
}

fn connector_contract() -> Outcome {
    let (d_v, d_llm) = (16, 24);
    let dims = ConnectorDims::new(d_v, d_llm, 8, 2);
    let w = ConnectorWeights::<f64>::random(dims, &mut ChaCha8Rng::seed_from_u64(4)).map_err(e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for side in [4, 8, 27] {
        let x = random_matrix(side * side, d_v, &mut rng).map_err(e)?;
        for kind in [ConnectorKind::Mlp, ConnectorKind::MscBasic, ConnectorKind::MscAdvanced] {
            for scan in [ScanMechanism::Bsm, ScanMechanism::Csm] {
                let y = connector_forward(&x, side, side, ConnectorVariant { kind, scan }, &w).map_err(e)?;
                check(y.shape() == [side * side, d_llm], || {
                    format!("{kind}/{scan} on N_v={} gave {:?}", side * side, y.shape())
                })?;
            }
        }
    }

    let mut zeroed = w.clone();
    zeroed.mvss = Mamba2BlockWeights::zeros(dims.mamba().map_err(e)?).map_err(e)?;
    let x = random_matrix(64, d_v, &mut rng).map_err(e)?;
    let mlp = mlp_project(&x, &w.mlp).map_err(e)?;
    let mut basic_gap = 0.0f64;
    for scan in [ScanMechanism::Bsm, ScanMechanism::Csm] {
        let basic = connector_forward(
            &x,
            8,
            8,
            ConnectorVariant {
                kind: ConnectorKind::MscBasic,
                scan,
            },
            &zeroed,
        )
        .map_err(e)?;
        basic_gap = basic_gap.max(basic.max_abs_diff(&mlp).map_err(e)?);
    }
    check(basic_gap < 1e-12, || format!("zero-MVSS basic vs MLP {basic_gap:e}"))?;

    let mut equiv = 0.0f64;
    for (rows, cols) in [(8, 8), (3, 7)] {
        let x = random_matrix(rows * cols, d_v, &mut rng).map_err(e)?;
        let rev: Vec<usize> = (0..rows * cols).rev().collect();
        let lhs = mvss_forward(
            &x.gather_rows(&rev).map_err(e)?,
            rows,
            cols,
            ScanMechanism::Bsm,
            &w.mvss,
        )
        .map_err(e)?;
        let rhs = mvss_forward(&x, rows, cols, ScanMechanism::Bsm, &w.mvss)
            .map_err(e)?
            .gather_rows(&rev)
            .map_err(e)?;
        equiv = equiv.max(lhs.max_abs_diff(&rhs).map_err(e)?);
    }
    check(equiv < 1e-10, || format!("BSM reversal equivariance {equiv:e}"))?;
    Ok(format!(
        "3 variants x 2 scans at N_v 16/64/729; zero-MVSS gap {basic_gap:.1e}; reversal {equiv:.1e}"
    ))
}

fn gradients() -> Outcome {
    let (sw, mlp) = gradient_errors(6, 20).map_err(e)?;
    check(sw < 1e-6, || format!("SwiGLU relative error {sw:e}"))?;
    check(mlp < 1e-6, || format!("MLP relative error {mlp:e}"))?;
    Ok(format!("20 instances each: SwiGLU {sw:.1e}, MLP {mlp:.1e}"))
}

/// Decodes exactly `steps` tokens, continuing past EOS, both ways.
fn forced_decode(v_out: &Tensor<f64>, w: &ToyLmWeights<f64>, steps: usize) -> Result<(Vec<u32>, Vec<u32>), Error> {
    let prefix = build_prefix(v_out, b"describe the image", w)?;
    let mut session = LmSession::new(w);
    let mut logits = session.feed(&prefix)?;
    let mut recurrent = Vec::new();
    for _ in 0..steps {
        let id = argmax(&logits);
        recurrent.push(id);
        logits = session.feed_token(id)?;
    }
    let mut seq = prefix;
    let mut reforward = Vec::new();
    for _ in 0..steps {
        let all = lm_forward(&seq, w)?;
        let id = argmax(all.row(all.rows() - 1));
        reforward.push(id);
        seq = seq.concat_rows(&w.embed_tokens(&[id])?)?;
    }
    Ok((recurrent, reforward))
}

fn generation() -> Outcome {
    let cfg = ToyLmConfig {
        max_gen: 16,
        ..ToyLmConfig::default()
    };
    let mut generated = Vec::new();
    for seed in 0..10u64 {
        let w = ToyLmWeights::<f64>::random(cfg, &mut component_rng(seed, labels::LM)).map_err(e)?;
        let mut rng = component_rng(seed, "acceptance/v_out");
        let v_out = random_matrix(16, cfg.d_llm, &mut rng).map_err(e)?;
        let fast = generate(&v_out, b"describe the image", &w).map_err(e)?.tokens;
        let slow = reforward_generate(&v_out, b"describe the image", &w).map_err(e)?;
        check(fast == slow, || {
            format!("seed {seed}: recurrent {fast:?} vs re-forward {slow:?}")
        })?;
        generated.push(fast.len());
        let (recurrent, reforward) = forced_decode(&v_out, &w, 16).map_err(e)?;
        check(recurrent == reforward, || {
            format!("seed {seed}: forced 16 steps {recurrent:?} vs {reforward:?}")
        })?;
    }
    let bytes: Vec<u8> = (0..=255).collect();
    check(detokenize(&tokenize(&bytes)) == bytes, || {
        "byte tokenizer round-trip".into()
    })?;
    Ok(format!(
        "10 seeds agree; generate lengths {generated:?}, forced 16-step decodes agree; 256 bytes round-trip"
    ))
}

fn scaling() -> Outcome {
    let start = Instant::now();
    let records = sweep(&DEFAULT_LENGTHS, 64, 5, 0).map_err(e)?;
    let slopes = SlopeReport::from_records(&records).map_err(e)?;
    let mut ratios = Vec::new();
    for kind in [ModelKind::Ssm, ModelKind::Attention] {
        let short = measure_decode(kind, 256, 64, 64, 0).map_err(e)?;
        let long = measure_decode(kind, 2048, 64, 64, 0).map_err(e)?;
        ratios.push(long.per_token / short.per_token);
    }
    let detail = format!(
        "slope ssm {:.3}, attention {:.3}; decode 2048/256 ssm {:.2}x, attention {:.2}x; {:.0}s",
        slopes.ssm,
        slopes.attention,
        ratios[0],
        ratios[1],
        start.elapsed().as_secs_f64()
    );
    check(slopes.ssm_ok(), || format!("ssm slope out of window: {detail}"))?;
    check(slopes.attention_ok(), || format!("attention slope too low: {detail}"))?;
    check(ratios[0] <= 1.5, || format!("ssm decode grows with context: {detail}"))?;
    check(ratios[1] >= 2.0, || format!("attention decode flat: {detail}"))?;
    within(start, Duration::from_secs(300))?;
    Ok(detail)
}

fn eval_avg_formula() -> Outcome {
    let a = eval_avg(256, 1.47).map_err(e)?;
    let b = eval_avg(256, 6.45).map_err(e)?;
    check((a - 174.1).abs() <= 0.1, || format!("eval_avg(256, 1.47) = {a}"))?;
    check((b - 39.7).abs() <= 0.1, || format!("eval_avg(256, 6.45) = {b}"))?;
    Ok(format!(
        "256/1.47 = {a:.2} (published 171, not reconciled); 256/6.45 = {b:.2}"
    ))
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mlmamba"))
}

fn test_image() -> String {
    format!("{}/assets/test32.ppm", env!("CARGO_MANIFEST_DIR"))
}

fn ablation_surface() -> Outcome {
    let image = test_image();
    let mut runs = 0;
    for variant in ["mlp", "basic", "advanced"] {
        for scan in ["bsm", "csm"] {
            for encoders in ["1", "2"] {
                let out = bin()
                    .args(["demo", "--image", &image, "--prompt", "describe", "--max-gen", "4"])
                    .args(["--variant", variant, "--scan", scan, "--encoders", encoders])
                    .output()
                    .map_err(|err| err.to_string())?;
                check(out.status.success(), || {
                    format!(
                        "{variant}/{scan}/{encoders} exited {:?}: {}",
                        out.status.code(),
                        String::from_utf8_lossy(&out.stderr)
                    )
                })?;
                runs += 1;
            }
        }
    }
    Ok(format!(
        "accuracy tables not reproducible without pretrained weights and datasets; {runs} variant/scan/encoder combinations run"
    ))
}

fn file_formats() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for rank in 0..=4usize {
        let shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..=4)).collect();
        let len = shape.iter().product();
        let values: Vec<f64> = (0..len).map(|_| rng.gen_range(-1e6..1e6) * rng.gen::<f64>()).collect();
        let t64 = Tensor::new(shape.clone(), values).map_err(e)?;
        let back = read_tensor(&encode(&t64).map_err(e)?[..])
            .map_err(e)?
            .into_f64()
            .map_err(e)?;
        check(
            back.shape() == t64.shape()
                && back
                    .data()
                    .iter()
                    .zip(t64.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits()),
            || format!("f64 rank {rank} not bit-exact"),
        )?;
        let t32: Tensor<f32> = t64.cast().map_err(e)?;
        let back = read_tensor(&encode(&t32).map_err(e)?[..])
            .map_err(e)?
            .into_f32()
            .map_err(e)?;
        check(
            back.shape() == t32.shape()
                && back
                    .data()
                    .iter()
                    .zip(t32.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits()),
            || format!("f32 rank {rank} not bit-exact"),
        )?;
    }

    let records: Vec<BenchRecord> = (0..12)
        .map(|i| {
            let kind = if i < 6 { ModelKind::Ssm } else { ModelKind::Attention };
            let times = (0..5).map(|_| rng.gen_range(1e-5..3.0)).collect();
            BenchRecord::from_times(kind, 256 << (i % 6), 64, times)
        })
        .collect::<Result<_, _>>()
        .map_err(e)?;
    let mut csv = Vec::new();
    write_csv(&records, &mut csv).map_err(e)?;
    check(read_csv(&csv[..]).map_err(e)? == records, || {
        "bench CSV round-trip".into()
    })?;

    let good = Image::new(2, 2, 1, vec![0.0, 1.0, 0.0, 1.0]).map_err(e)?.to_pnm();
    check(load_pnm(&good[..]).is_ok(), || "valid PGM rejected".into())?;
    let dir = tempfile::tempdir().map_err(|err| err.to_string())?;
    let cases: [(&str, Vec<u8>); 4] = [
        ("bad magic", b"P3\n2 2\n255\n0000".to_vec()),
        ("truncated", good[..good.len() - 1].to_vec()),
        ("bad maxval", b"P5\n2 2\n65535\n\0\0\0\0\0\0\0\0".to_vec()),
        ("overflow", b"P6\n99999999 99999999\n255\n".to_vec()),
    ];
    for (name, bytes) in cases {
        check(load_pnm(&bytes[..]).is_err(), || format!("{name} PNM accepted"))?;
        let path = dir.path().join(format!("{}.pnm", name.replace(' ', "_")));
        std::fs::write(&path, &bytes).map_err(|err| err.to_string())?;
        let out = bin()
            .args(["demo", "--prompt", "x", "--image"])
            .arg(&path)
            .output()
            .map_err(|err| err.to_string())?;
        check(out.status.code() == Some(2), || {
            format!("{name} PNM gave exit {:?}", out.status.code())
        })?;
    }
    Ok("TensorFile ranks 0-4 x f32/f64 bit-exact; CSV lossless; 4 malformed PNMs exit 2".into())
}

type Criterion = (&'static str, bool, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("dual-form SSM equivalence", true, dual_form),
        ("ZOH correctness", true, zoh),
        ("scan algebra", true, scan_algebra),
        ("connector contract", true, connector_contract),
        ("gradient checks", true, gradients),
        ("pipeline determinism and state inference", true, generation),
        ("scaling property", true, scaling),
        ("Eval_avg formula", true, eval_avg_formula),
        ("accuracy results", false, ablation_surface),
        ("file-format round-trips", true, file_formats),
    ];
    let (mut failed, mut unattainable) = (0, 0);
    for (i, &(name, attainable, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) if attainable => println!("criterion {:>2} PASS  {name} ({secs:.2}s): {detail}", i + 1),
            Ok(detail) => {
                unattainable += 1;
                println!("criterion {:>2} UNATTAINABLE  {name} ({secs:.2}s): {detail}", i + 1);
            }
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} ({secs:.2}s): {detail}", i + 1);
            }
        }
    }
    println!(
        "{} criteria, {failed} failed, {unattainable} unattainable",
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
