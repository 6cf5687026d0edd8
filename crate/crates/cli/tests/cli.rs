use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use mlmamba::bench::{write_csv, BenchRecord, ModelKind, DEFAULT_LENGTHS};
use mlmamba::format::save;
use mlmamba::verify::suite_names;
use mlmamba::Tensor;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mlmamba"))
}

fn image() -> String {
    format!("{}/assets/test32.ppm", env!("CARGO_MANIFEST_DIR"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn mlmamba")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn line<'a>(text: &'a str, prefix: &str) -> &'a str {
    text.lines()
        .find(|l| l.starts_with(prefix))
        .unwrap_or_else(|| panic!("no {prefix} line in {text}"))
}

#[test]
fn demo_is_deterministic() {
    let img = image();
    let args = ["demo", "--image", &img, "--prompt", "describe", "--seed", "7"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    let (sa, sb) = (stdout(&a), stdout(&b));
    for key in ["variant:", "visual tokens:", "response:", "tokens:"] {
        assert_eq!(line(&sa, key), line(&sb, key));
    }
    assert_eq!(line(&sa, "visual tokens:"), "visual tokens: 16 x 64 -> 16 x 64");
}

#[test]
fn seeds_change_the_response() {
    let img = image();
    let outs: Vec<String> = ["1", "2", "5"]
        .iter()
        .map(|s| stdout(&run(&["demo", "--image", &img, "--prompt", "describe", "--seed", s])))
        .collect();
    let responses: Vec<&str> = outs.iter().map(|o| line(o, "response:")).collect();
    assert!(
        responses[0] != responses[1] || responses[1] != responses[2],
        "{responses:?}"
    );
}

#[test]
fn mlp_variant_warns_about_scan() {
    let img = image();
    let o = run(&[
        "demo",
        "--image",
        &img,
        "--prompt",
        "x",
        "--variant",
        "mlp",
        "--scan",
        "csm",
    ]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("--scan is ignored"), "{}", stderr(&o));
    let o = run(&["demo", "--image", &img, "--prompt", "x", "--variant", "mlp"]);
    assert!(!stderr(&o).contains("ignored"));
}

#[test]
fn exit_codes() {
    let img = image();
    assert_eq!(
        run(&["demo", "--image", "/no/such/file.ppm", "--prompt", "x"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["demo", "--image", &img, "--prompt", "x", "--variant", "huge"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        run(&["demo", "--image", &img, "--prompt", "x", "--patch-size", "5"])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(
        run(&["demo", "--image", &img, "--prompt", "x", "--encoders", "3"])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(run(&["demo", "--image", &img]).status.code(), Some(3));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_file_and_flags_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# toy run\nseed = 11\nvariant = basic\nscan = bsm\nmax_gen = 5\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let o = run(&["--config", cfg, "--print-config", "demo", "--seed", "12"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("seed = 12\n"), "{text}");
    assert!(text.contains("variant = basic\n"));
    assert!(text.contains("scan = bsm\n"));
    assert!(text.contains("max_gen = 5\n"));

    // The printed config is itself a valid config file.
    let echoed = dir.path().join("echo.conf");
    fs::write(&echoed, &text).unwrap();
    let again = run(&["--config", echoed.to_str().unwrap(), "--print-config", "demo"]);
    assert_eq!(stdout(&again), text);

    let bad = dir.path().join("bad.conf");
    fs::write(&bad, "colour = blue\n").unwrap();
    assert_eq!(run(&["--config", bad.to_str().unwrap(), "demo"]).status.code(), Some(3));
    assert_eq!(run(&["--config", "/no/such.conf", "demo"]).status.code(), Some(2));
}

#[test]
fn config_file_drives_demo() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(
        &cfg,
        format!(
            "image = \"{}\"\nprompt = \"describe\"\nvariant = basic\nencoders = 1\n",
            image()
        ),
    )
    .unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "demo"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(line(&text, "variant:"), "variant: msc-mlp-basic/csm");
    assert_eq!(line(&text, "visual tokens:"), "visual tokens: 16 x 32 -> 16 x 64");
}

#[test]
fn prompt_from_stdin_matches_flag() {
    let img = image();
    let mut child = bin()
        .args(["demo", "--image", &img, "--prompt", "-", "--seed", "3"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"describe\n").unwrap();
    let piped = child.wait_with_output().unwrap();
    let direct = run(&["demo", "--image", &img, "--prompt", "describe", "--seed", "3"]);
    assert_eq!(line(&stdout(&piped), "response:"), line(&stdout(&direct), "response:"));
}

#[test]
fn connector_bundle_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = dir.path().join("connector");
    let img = image();
    let saved = run(&[
        "demo",
        "--image",
        &img,
        "--prompt",
        "hi",
        "--seed",
        "4",
        "--save-connector",
        bundle.to_str().unwrap(),
    ]);
    assert!(saved.status.success(), "{}", stderr(&saved));
    assert!(bundle.join("manifest.txt").exists());
    let loaded = run(&[
        "demo",
        "--image",
        &img,
        "--prompt",
        "hi",
        "--seed",
        "4",
        "--load-connector",
        bundle.to_str().unwrap(),
    ]);
    assert_eq!(line(&stdout(&saved), "response:"), line(&stdout(&loaded), "response:"));

    let mismatch = run(&[
        "demo",
        "--image",
        &img,
        "--prompt",
        "hi",
        "--d-llm",
        "32",
        "--load-connector",
        bundle.to_str().unwrap(),
    ]);
    assert_eq!(mismatch.status.code(), Some(3), "{}", stderr(&mismatch));
    fs::write(bundle.join("manifest.txt"), "mvss.in_proj = ../../etc/passwd\n").unwrap();
    let broken = run(&[
        "demo",
        "--image",
        &img,
        "--prompt",
        "hi",
        "--load-connector",
        bundle.to_str().unwrap(),
    ]);
    assert_eq!(broken.status.code(), Some(2), "{}", stderr(&broken));
}

#[test]
fn timing_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("timing.jsonl");
    let img = image();
    let o = run(&[
        "demo",
        "--image",
        &img,
        "--prompt",
        "x",
        "--max-gen",
        "6",
        "--timing-json",
        path.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(&path).unwrap();
    let events: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let summary = events.last().unwrap();
    assert_eq!(summary["event"], "summary");
    let tokens = summary["tokens"].as_u64().unwrap() as usize;
    assert!((1..=6).contains(&tokens));
    assert_eq!(events.len(), tokens + 1);
    assert!(events[..tokens].iter().all(|e| e["seconds"].as_f64().unwrap() >= 0.0));
}

#[test]
fn verify_reports_every_suite() {
    let o = run(&["verify", "--level", "fast"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    for name in suite_names() {
        assert!(
            text.lines().any(|l| l.starts_with("PASS") && l.contains(name)),
            "{name} missing:\n{text}"
        );
    }
}

#[test]
fn verify_catches_injected_fault() {
    let o = run(&["verify", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(4));
    let text = stdout(&o);
    assert!(
        text.lines()
            .any(|l| l.starts_with("FAIL") && l.contains("ssm-dual-form")),
        "{text}"
    );
}

fn synthetic_csv(dir: &Path, ssm_power: f64) -> String {
    let mut records = Vec::new();
    for (kind, power) in [(ModelKind::Ssm, ssm_power), (ModelKind::Attention, 2.0)] {
        for &l in &DEFAULT_LENGTHS {
            let t = 1e-8 * (l as f64).powf(power);
            records.push(BenchRecord::from_times(kind, l, 64, vec![t, t, t]).unwrap());
        }
    }
    let path = dir.join(format!("synthetic-{ssm_power}.csv"));
    write_csv(&records, fs::File::create(&path).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn bench_assert_uses_slope_windows() {
    let dir = tempfile::tempdir().unwrap();
    let linear = synthetic_csv(dir.path(), 1.0);
    let o = run(&["bench", "--from-csv", &linear, "--assert"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 13);
    let quadratic = synthetic_csv(dir.path(), 2.0);
    let o = run(&["bench", "--from-csv", &quadratic, "--assert"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("ssm slope"), "{}", stderr(&o));
    // Without --assert the sweep is only reported.
    assert!(run(&["bench", "--from-csv", &quadratic]).status.success());
}

#[test]
fn bench_sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out.csv");
    let o = run(&[
        "bench",
        "--min-len",
        "16",
        "--max-len",
        "128",
        "--dim",
        "16",
        "--repeats",
        "3",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "model_kind,L,D,repeats,t_min,t_median,t_max,tokens_per_sec"
    );
    assert_eq!(text.lines().count(), 1 + 2 * 4);
    assert_eq!(
        run(&["bench", "--repeats", "2", "--max-len", "512"]).status.code(),
        Some(3)
    );
}

#[test]
fn dump_tensor_both_dtypes() {
    let dir = tempfile::tempdir().unwrap();
    let p64 = dir.path().join("a.mlmt");
    save(
        &Tensor::new([2, 3], vec![1.0f64, -2.0, 3.0, 4.0, 5.0, 7.0]).unwrap(),
        &p64,
    )
    .unwrap();
    let o = run(&["dump-tensor", p64.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("dtype: f64"));
    assert!(text.contains("shape: [2, 3]"));
    assert!(
        text.contains("min: -2\n") && text.contains("max: 7\n") && text.contains("mean: 3\n"),
        "{text}"
    );

    let p32 = dir.path().join("b.mlmt");
    save(&Tensor::new([4], vec![0.5f32, 1.5, 2.5, 3.5]).unwrap(), &p32).unwrap();
    let text = stdout(&run(&["dump-tensor", p32.to_str().unwrap()]));
    assert!(text.contains("dtype: f32") && text.contains("mean: 2\n"), "{text}");

    let bad = dir.path().join("bad.mlmt");
    fs::write(&bad, b"NOPE\x01\x01\x00").unwrap();
    let o = run(&["dump-tensor", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("magic"), "{}", stderr(&o));
}
