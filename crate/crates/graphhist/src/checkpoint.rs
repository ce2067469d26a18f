//! Plain-text model checkpoints.
//!
//! ```text
//! graphhist-checkpoint 1
//! config {"k":25,"h":2,...}
//! tensor gcn.0.weight 2x8
//! 1.2e-1 -3.4e-2 ...
//! ```
//!
//! Values use the shortest exponent notation that parses back to the same
//! bits, so a reload is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use graphhist_core::model::{ModelConfig, ModelParams};

const MAGIC: &str = "graphhist-checkpoint 1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}:{line}: {detail}", path.display())]
    Format {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("checkpoint config {found} does not match expected {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error(transparent)]
    Core(#[from] graphhist_core::Error),
}

type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
}

fn config_json(config: &ModelConfig) -> String {
    serde_json::to_string(config).expect("config serializes")
}

pub fn to_string(config: &ModelConfig, params: &ModelParams) -> String {
    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "config {}", config_json(config)).unwrap();
    for (name, t) in params.named_tensors() {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        writeln!(out, "tensor {name} {}", dims.join("x")).unwrap();
        let values: Vec<String> = t.data().iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", values.join(" ")).unwrap();
    }
    out
}

pub fn save(path: &Path, config: &ModelConfig, params: &ModelParams) -> Result<()> {
    fs::write(path, to_string(config, params)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse(text: &str, path: &Path) -> Result<Checkpoint> {
    let err = |line: usize, detail: String| CheckpointError::Format {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, MAGIC)) => {}
        _ => return Err(err(1, format!("expected header {MAGIC:?}"))),
    }
    let (n, line) = lines
        .next()
        .ok_or_else(|| err(2, "missing config line".into()))?;
    let json = line
        .strip_prefix("config ")
        .ok_or_else(|| err(n, "expected `config {...}`".into()))?;
    let config: ModelConfig = serde_json::from_str(json).map_err(|e| err(n, e.to_string()))?;
    config.validate()?;

    let mut params = ModelParams::zeros(&config);
    let expected: Vec<(String, Vec<usize>)> = params
        .named_tensors()
        .into_iter()
        .map(|(name, t)| (name, t.shape().to_vec()))
        .collect();
    for ((name, shape), slot) in expected.iter().zip(params.tensors_mut()) {
        let (n, header) = lines
            .next()
            .ok_or_else(|| err(0, format!("missing tensor {name}")))?;
        let mut parts = header.split(' ');
        if parts.next() != Some("tensor") || parts.next() != Some(name.as_str()) {
            return Err(err(n, format!("expected `tensor {name} ...`")));
        }
        let dims: Vec<usize> = parts
            .next()
            .unwrap_or("")
            .split('x')
            .map(|d| {
                d.parse()
                    .map_err(|_| err(n, format!("bad dimension {d:?}")))
            })
            .collect::<Result<_>>()?;
        if &dims != shape {
            return Err(err(
                n,
                format!("{name} has shape {dims:?}, config implies {shape:?}"),
            ));
        }
        let (n, body) = lines
            .next()
            .ok_or_else(|| err(n + 1, format!("missing values for {name}")))?;
        let values: Vec<f64> = body
            .split(' ')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse().map_err(|_| err(n, format!("bad value {t:?}"))))
            .collect::<Result<_>>()?;
        if values.len() != slot.len() {
            return Err(err(
                n,
                format!("{name}: {} values for {} entries", values.len(), slot.len()),
            ));
        }
        slot.data_mut().copy_from_slice(&values);
    }
    if let Some((n, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(err(n, format!("unexpected trailing content {extra:?}")));
    }
    Ok(Checkpoint { config, params })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse(&text, path)
}

/// Loads a checkpoint and rejects it unless its config equals `expected`.
pub fn load_matching(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let ck = load(path)?;
    if &ck.config != expected {
        return Err(CheckpointError::ConfigMismatch {
            expected: config_json(expected),
            found: config_json(&ck.config),
        });
    }
    Ok(ck)
}
