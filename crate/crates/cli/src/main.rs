//! `mlmamba`: demo inference, self-verification, benchmarks and tensor dumps.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O or malformed input, 3 config,
//! 4 numeric failure (including failed checks and benchmark assertions).

mod config;

use std::fs::{self, File};
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mlmamba::bench::{
    doubling_lengths, measure_decode, read_csv, sweep, write_csv, ModelKind, SlopeReport, ATTENTION_DECODE_MIN_RATIO,
    ATTENTION_MIN_SLOPE, SSM_DECODE_MAX_RATIO, SSM_SLOPE_WINDOW,
};
use mlmamba::bundle::{load_bundle_as, save_bundle};
use mlmamba::connector::{connector_forward, ConnectorKind, ConnectorWeights};
use mlmamba::format::load;
use mlmamba::lm::{generate, ToyLmWeights};
use mlmamba::rng::{component_rng, derive_seed, labels};
use mlmamba::verify::{self, Level, VerifyOptions};
use mlmamba::vision::{fuse_encoders, load_pnm, patchify, stub_encode};
use mlmamba::Error;

use config::{ConfigError, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exit {
    Usage = 1,
    Io = 2,
    Config = 3,
    Numeric = 4,
}

#[derive(Debug)]
struct CliError {
    exit: Exit,
    msg: String,
}

impl CliError {
    fn new(exit: Exit, msg: impl Into<String>) -> Self {
        CliError { exit, msg: msg.into() }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::new(Exit::Config, format!("config: {e}"))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let mut root = &e;
        while let Error::Connector { source, .. } = root {
            root = source;
        }
        let exit = if root.is_input_error() { Exit::Io } else { Exit::Numeric };
        CliError::new(exit, e.to_string())
    }
}

fn io_error(path: &Path, e: io::Error) -> CliError {
    CliError::new(Exit::Io, format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(name = "mlmamba", version, about = "Mamba-2 scan connector toolkit")]
struct Cli {
    /// Config file of `key = value` lines; flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Print the effective run configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run image + prompt through encoders, connector and the toy language model.
    Demo(DemoArgs),
    /// Run the invariant suites.
    Verify(VerifyArgs),
    /// Forward-latency sweep of the SSM path against the attention baseline.
    Bench(BenchArgs),
    /// Print shape, dtype and summary statistics of a tensor file.
    DumpTensor { path: PathBuf },
}

#[derive(Args, Debug)]
struct DemoArgs {
    /// Binary PGM or PPM image.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Prompt text; `-` reads it from stdin.
    #[arg(long)]
    prompt: Option<String>,
    #[arg(long, value_parser = ["mlp", "basic", "advanced"])]
    variant: Option<String>,
    /// Ignored with `--variant mlp`.
    #[arg(long, value_parser = ["bsm", "csm"])]
    scan: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of stub encoders (1 or 2).
    #[arg(long)]
    encoders: Option<usize>,
    #[arg(long)]
    patch_size: Option<usize>,
    /// Output width of each stub encoder.
    #[arg(long)]
    d_v: Option<usize>,
    #[arg(long)]
    d_llm: Option<usize>,
    #[arg(long)]
    lm_layers: Option<usize>,
    #[arg(long)]
    max_gen: Option<usize>,
    /// Read connector weights from a bundle directory.
    #[arg(long, value_name = "DIR")]
    load_connector: Option<PathBuf>,
    /// Write the connector weights used to a bundle directory.
    #[arg(long, value_name = "DIR")]
    save_connector: Option<PathBuf>,
    /// Append per-step timings as JSON lines.
    #[arg(long, value_name = "PATH")]
    timing_json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value = "fast", value_parser = ["fast", "full"])]
    level: String,
    /// Perturb one convolution-kernel tap by 1e-6; the dual-form suite must fail.
    #[arg(long)]
    inject_fault: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 256)]
    min_len: usize,
    #[arg(long, default_value_t = 8192)]
    max_len: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Write CSV here instead of stdout.
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
    /// Read records from a CSV file instead of measuring.
    #[arg(long, value_name = "PATH")]
    from_csv: Option<PathBuf>,
    /// Also measure per-token decode time at contexts 256 and 2048.
    #[arg(long)]
    decode: bool,
    /// Fail unless the slope (and decode) criteria hold.
    #[arg(long)]
    assert: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(Exit::Usage as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.exit as u8)
        }
    }
}

fn base_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        cfg.apply_file(&text)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = base_config(&cli)?;
    if let Command::Demo(args) = &cli.command {
        apply_demo_flags(&mut cfg, args)?;
    }
    if cli.print_config {
        print!("{cfg}");
        return Ok(());
    }
    match cli.command {
        Command::Demo(_) => cmd_demo(&cfg),
        Command::Verify(args) => cmd_verify(&cfg, args),
        Command::Bench(args) => cmd_bench(&cfg, args),
        Command::DumpTensor { path } => cmd_dump_tensor(&path),
    }
}

fn apply_demo_flags(cfg: &mut RunConfig, a: &DemoArgs) -> Result<(), ConfigError> {
    let numbers = [
        ("encoders", a.encoders),
        ("patch_size", a.patch_size),
        ("d_v", a.d_v),
        ("d_llm", a.d_llm),
        ("lm_layers", a.lm_layers),
        ("max_gen", a.max_gen),
    ];
    for (key, v) in numbers {
        if let Some(v) = v {
            cfg.set(key, &v.to_string())?;
        }
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(v) = &a.variant {
        cfg.set("variant", v)?;
    }
    if let Some(v) = &a.scan {
        cfg.set("scan", v)?;
    }
    if let Some(p) = &a.prompt {
        cfg.prompt = Some(p.clone());
    }
    let paths = [
        (&a.image, &mut cfg.image),
        (&a.load_connector, &mut cfg.load_connector),
        (&a.save_connector, &mut cfg.save_connector),
        (&a.timing_json, &mut cfg.timing_json),
    ];
    for (flag, slot) in paths {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    Ok(())
}

fn connector_weights(cfg: &RunConfig) -> Result<ConnectorWeights<f64>, CliError> {
    let dims = cfg.connector_dims();
    let Some(dir) = &cfg.load_connector else {
        let mut rng = component_rng(cfg.seed, labels::CONNECTOR);
        return Ok(ConnectorWeights::random(dims, &mut rng)?);
    };
    let named = load_bundle_as::<f64>(dir)?;
    let w = ConnectorWeights::from_named(&named, cfg.d_state, cfg.n_heads)?;
    if w.dims() != dims {
        return Err(CliError::new(
            Exit::Config,
            format!(
                "config: connector bundle {} has dims {:?}, configuration expects {dims:?}",
                dir.display(),
                w.dims()
            ),
        ));
    }
    Ok(w)
}

fn read_prompt(cfg: &RunConfig) -> Result<String, CliError> {
    match cfg.prompt.as_deref() {
        Some("-") => {
            let mut s = String::new();
            io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| CliError::new(Exit::Io, format!("stdin: {e}")))?;
            Ok(s.trim_end_matches('\n').to_string())
        }
        Some(p) => Ok(p.to_string()),
        None => Err(CliError::new(Exit::Config, "config: no prompt given (use --prompt)")),
    }
}

fn cmd_demo(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate()?;
    if cfg.variant == ConnectorKind::Mlp && cfg.scan_explicit {
        eprintln!("warning: --scan is ignored for --variant mlp");
    }
    let image_path = cfg
        .image
        .as_ref()
        .ok_or_else(|| CliError::new(Exit::Config, "config: no image given (use --image)"))?;
    let prompt = read_prompt(cfg)?;
    let file = File::open(image_path).map_err(|e| io_error(image_path, e))?;
    let image = load_pnm(BufReader::new(file))
        .map_err(|e| CliError::new(Exit::Io, format!("{}: {e}", image_path.display())))?
        .to_rgb();
    let p = cfg.patch_size;
    if image.height() % p != 0 || image.width() % p != 0 {
        return Err(CliError::new(
            Exit::Config,
            format!(
                "config: patch_size {p} does not divide the {}x{} image",
                image.height(),
                image.width()
            ),
        ));
    }

    let grid = patchify(&image, p)?;
    let mut visual = stub_encode(&grid, derive_seed(cfg.seed, labels::ENCODER_A), cfg.d_v)?;
    if cfg.encoders == 2 {
        let second = stub_encode(&grid, derive_seed(cfg.seed, labels::ENCODER_B), cfg.d_v)?;
        visual = fuse_encoders(&visual, &second)?;
    }
    let weights = connector_weights(cfg)?;
    if let Some(dir) = &cfg.save_connector {
        save_bundle(dir, &weights.to_named())?;
    }
    let variant = cfg.connector_variant();
    let v_out = connector_forward(&visual.tokens, visual.rows, visual.cols, variant, &weights)?;
    let lm = ToyLmWeights::<f64>::random(cfg.lm(), &mut component_rng(cfg.seed, labels::LM))?;
    let result = generate(&v_out, prompt.as_bytes(), &lm)?;

    let total = result.total_time();
    let eval = mlmamba::bench::eval_avg(result.tokens.len(), total).ok();
    println!("variant: {variant}");
    println!(
        "visual tokens: {} x {} -> {} x {}",
        visual.num_tokens(),
        visual.dim(),
        v_out.rows(),
        v_out.cols()
    );
    println!("response: {}", result.text.escape_ascii());
    println!("tokens: {}", result.tokens.len());
    println!("total time: {total:.6} s");
    match eval {
        Some(v) => println!("eval_avg: {v:.1} tokens/s"),
        None => println!("eval_avg: n/a"),
    }

    if let Some(path) = &cfg.timing_json {
        let mut out = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_error(path, e))?;
        let mut lines = Vec::new();
        for (step, (tok, secs)) in result.tokens.iter().zip(&result.step_times).enumerate() {
            lines.push(json!({ "event": "step", "step": step, "token": tok, "seconds": secs }));
        }
        lines.push(json!({
            "event": "summary",
            "variant": variant.to_string(),
            "tokens": result.tokens.len(),
            "total_seconds": total,
            "eval_avg": eval,
        }));
        for line in lines {
            writeln!(out, "{line}").map_err(|e| io_error(path, e))?;
        }
    }
    Ok(())
}

fn cmd_verify(cfg: &RunConfig, args: VerifyArgs) -> Result<(), CliError> {
    let level: Level = args.level.parse()?;
    let report = verify::run(VerifyOptions {
        level,
        seed: args.seed.unwrap_or(cfg.seed),
        inject_fault: args.inject_fault,
    });
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::new(Exit::Numeric, "verification failed"))
    }
}

fn cmd_bench(cfg: &RunConfig, args: BenchArgs) -> Result<(), CliError> {
    let seed = args.seed.unwrap_or(cfg.seed);
    let records = match &args.from_csv {
        Some(path) => {
            let file = File::open(path).map_err(|e| io_error(path, e))?;
            read_csv(BufReader::new(file)).map_err(|e| CliError::new(Exit::Io, format!("{}: {e}", path.display())))?
        }
        None => {
            let lengths = doubling_lengths(args.min_len, args.max_len)
                .map_err(|e| CliError::new(Exit::Config, format!("config: {e}")))?;
            sweep(&lengths, args.dim, args.repeats, seed)
                .map_err(|e| CliError::new(Exit::Config, format!("config: {e}")))?
        }
    };
    match &args.csv {
        Some(path) => {
            let file = File::create(path).map_err(|e| io_error(path, e))?;
            write_csv(&records, io::BufWriter::new(file))?;
        }
        None => write_csv(&records, io::stdout().lock())?,
    }

    let mut failures = Vec::new();
    match SlopeReport::from_records(&records) {
        Ok(s) => {
            eprintln!("slope ssm {:.3}, attention {:.3}", s.ssm, s.attention);
            if !s.ssm_ok() {
                failures.push(format!(
                    "ssm slope {:.3} outside [{}, {}]",
                    s.ssm, SSM_SLOPE_WINDOW.0, SSM_SLOPE_WINDOW.1
                ));
            }
            if !s.attention_ok() {
                failures.push(format!(
                    "attention slope {:.3} below {ATTENTION_MIN_SLOPE}",
                    s.attention
                ));
            }
        }
        Err(e) => failures.push(e.to_string()),
    }

    if args.decode {
        for kind in [ModelKind::Ssm, ModelKind::Attention] {
            let short = measure_decode(kind, 256, args.dim, 64, seed)?;
            let long = measure_decode(kind, 2048, args.dim, 64, seed)?;
            let ratio = long.per_token / short.per_token;
            eprintln!(
                "decode {kind}: {:.3e} s/token at 256, {:.3e} at 2048, ratio {ratio:.2}",
                short.per_token, long.per_token
            );
            let ok = match kind {
                ModelKind::Ssm => ratio <= SSM_DECODE_MAX_RATIO,
                ModelKind::Attention => ratio >= ATTENTION_DECODE_MIN_RATIO,
            };
            if !ok {
                failures.push(format!("{kind} decode ratio {ratio:.2}"));
            }
        }
    }

    if args.assert && !failures.is_empty() {
        return Err(CliError::new(
            Exit::Numeric,
            format!("bench assertion failed: {}", failures.join("; ")),
        ));
    }
    Ok(())
}

fn cmd_dump_tensor(path: &Path) -> Result<(), CliError> {
    let t = load(path).map_err(|e| CliError::new(Exit::Io, format!("{}: {e}", path.display())))?;
    let values = t.values_f64();
    println!("path: {}", path.display());
    println!("dtype: {}", t.dtype().name());
    println!("shape: {:?}", t.shape());
    println!("elements: {}", values.len());
    if values.is_empty() {
        println!("min: n/a\nmax: n/a\nmean: n/a");
    } else {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        println!("min: {min}\nmax: {max}\nmean: {mean}");
    }
    Ok(())
}
