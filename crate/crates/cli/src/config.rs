//! Run configuration: defaults, then a config file, then command-line flags.
//!
//! The config file is line oriented. Blank lines and lines whose first
//! non-blank character is `#` are ignored; every other line is
//! `key = value`. Values may be wrapped in double quotes. Keys are the
//! field names printed by `--print-config`.

use std::fmt;
use std::path::PathBuf;

use mlmamba::connector::{ConnectorDims, ConnectorKind, ConnectorVariant, ScanMechanism};
use mlmamba::lm::ToyLmConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: ConnectorKind,
    pub scan: ScanMechanism,
    /// Set when the scan mechanism came from a file or a flag.
    pub scan_explicit: bool,
    /// 1 or 2 stub encoders.
    pub encoders: usize,
    /// Output width of each stub encoder.
    pub d_v: usize,
    pub d_llm: usize,
    pub d_m: Option<usize>,
    pub d_ff: Option<usize>,
    pub d_state: usize,
    pub n_heads: usize,
    pub patch_size: usize,
    pub lm_layers: usize,
    pub max_gen: usize,
    pub image: Option<PathBuf>,
    pub prompt: Option<String>,
    pub load_connector: Option<PathBuf>,
    pub save_connector: Option<PathBuf>,
    pub timing_json: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            variant: ConnectorKind::MscAdvanced,
            scan: ScanMechanism::Csm,
            scan_explicit: false,
            encoders: 2,
            d_v: 32,
            d_llm: 64,
            d_m: None,
            d_ff: None,
            d_state: 16,
            n_heads: 4,
            patch_size: 8,
            lm_layers: 4,
            max_gen: 32,
            image: None,
            prompt: None,
            load_connector: None,
            save_connector: None,
            timing_json: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| ConfigError(format!("invalid value {value:?} for {key}: {e}")))
}

impl RunConfig {
    /// Sets one key. Used for both file entries and flags.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "variant" => self.variant = parse(key, value)?,
            "scan" => {
                self.scan = parse(key, value)?;
                self.scan_explicit = true;
            }
            "encoders" => self.encoders = parse(key, value)?,
            "d_v" => self.d_v = parse(key, value)?,
            "d_llm" => self.d_llm = parse(key, value)?,
            "d_m" => self.d_m = Some(parse(key, value)?),
            "d_ff" => self.d_ff = Some(parse(key, value)?),
            "d_state" => self.d_state = parse(key, value)?,
            "n_heads" => self.n_heads = parse(key, value)?,
            "patch_size" => self.patch_size = parse(key, value)?,
            "lm_layers" => self.lm_layers = parse(key, value)?,
            "max_gen" => self.max_gen = parse(key, value)?,
            "image" => self.image = Some(value.into()),
            "prompt" => self.prompt = Some(value.into()),
            "load_connector" => self.load_connector = Some(value.into()),
            "save_connector" => self.save_connector = Some(value.into()),
            "timing_json" => self.timing_json = Some(value.into()),
            _ => return Err(ConfigError(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn apply_file(&mut self, text: &str) -> Result<(), ConfigError> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected `key = value`", no + 1)))?;
            let value = value.trim();
            let value = value
                .strip_prefix('"')
                .and_then(|v| v.strip_suffix('"'))
                .unwrap_or(value);
            self.set(key.trim(), value)
                .map_err(|e| ConfigError(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    /// Width of the fused visual tokens.
    pub fn fused_width(&self) -> usize {
        self.encoders * self.d_v
    }

    pub fn connector_variant(&self) -> ConnectorVariant {
        ConnectorVariant {
            kind: self.variant,
            scan: self.scan,
        }
    }

    pub fn connector_dims(&self) -> ConnectorDims {
        let mut dims = ConnectorDims::new(self.fused_width(), self.d_llm, self.d_state, self.n_heads);
        if let Some(d_m) = self.d_m {
            dims.d_m = d_m;
        }
        if let Some(d_ff) = self.d_ff {
            dims.d_ff = d_ff;
        }
        dims
    }

    pub fn lm(&self) -> ToyLmConfig {
        ToyLmConfig {
            d_llm: self.d_llm,
            n_layers: self.lm_layers,
            d_state: self.d_state,
            n_heads: self.n_heads,
            max_gen: self.max_gen,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(1..=2).contains(&self.encoders) {
            return Err(ConfigError(format!("encoders must be 1 or 2, got {}", self.encoders)));
        }
        let dims = self.connector_dims();
        for (name, v) in [
            ("d_v", self.d_v),
            ("d_llm", self.d_llm),
            ("d_m", dims.d_m),
            ("d_ff", dims.d_ff),
            ("d_state", self.d_state),
            ("n_heads", self.n_heads),
            ("patch_size", self.patch_size),
            ("lm_layers", self.lm_layers),
        ] {
            if v == 0 {
                return Err(ConfigError(format!("{name} must be positive")));
            }
        }
        dims.mamba().map_err(|e| ConfigError(format!("connector: {e}")))?;
        self.lm()
            .block()
            .map_err(|e| ConfigError(format!("language model: {e}")))?;
        Ok(())
    }
}

impl fmt::Display for RunConfig {
    /// The effective configuration in config-file syntax.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims = self.connector_dims();
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "variant = {}", self.variant)?;
        writeln!(f, "scan = {}", self.scan)?;
        writeln!(f, "encoders = {}", self.encoders)?;
        writeln!(f, "d_v = {}", self.d_v)?;
        writeln!(f, "d_llm = {}", self.d_llm)?;
        writeln!(f, "d_m = {}", dims.d_m)?;
        writeln!(f, "d_ff = {}", dims.d_ff)?;
        writeln!(f, "d_state = {}", self.d_state)?;
        writeln!(f, "n_heads = {}", self.n_heads)?;
        writeln!(f, "patch_size = {}", self.patch_size)?;
        writeln!(f, "lm_layers = {}", self.lm_layers)?;
        writeln!(f, "max_gen = {}", self.max_gen)?;
        let paths = [
            ("image", &self.image),
            ("load_connector", &self.load_connector),
            ("save_connector", &self.save_connector),
            ("timing_json", &self.timing_json),
        ];
        for (key, path) in paths {
            if let Some(p) = path {
                writeln!(f, "{key} = \"{}\"", p.display())?;
            }
        }
        if let Some(p) = &self.prompt {
            writeln!(f, "prompt = \"{p}\"")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let mut cfg = RunConfig::default();
        cfg.apply_file("# comment\n\nseed = 9\nvariant = basic\nprompt = \"a # b\"\n")
            .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.variant, ConnectorKind::MscBasic);
        assert_eq!(cfg.prompt.as_deref(), Some("a # b"));
        assert!(!cfg.scan_explicit);
        cfg.set("seed", "3").unwrap();
        assert_eq!(cfg.seed, 3);
    }

    #[test]
    fn bad_entries_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_file("seed 3").is_err());
        assert!(cfg.apply_file("colour = red").is_err());
        assert!(cfg.apply_file("seed = -1").is_err());
        assert!(cfg.apply_file("scan = diagonal").is_err());
    }

    #[test]
    fn printed_config_parses_back() {
        let mut cfg = RunConfig::default();
        cfg.set("image", "/tmp/x.ppm").unwrap();
        cfg.set("d_ff", "48").unwrap();
        let mut again = RunConfig::default();
        again.apply_file(&cfg.to_string()).unwrap();
        assert_eq!(again.to_string(), cfg.to_string());
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        for (key, value) in [("encoders", "3"), ("n_heads", "3"), ("lm_layers", "0")] {
            let mut cfg = RunConfig::default();
            cfg.set(key, value).unwrap();
            assert!(cfg.validate().is_err(), "{key} = {value}");
        }
    }
}
