//! Report files: a JSON envelope with the resolved configuration and a
//! SHA-256 digest, or plain CSV tables.

use std::path::{Path, PathBuf};

use ergosde::stein_check::Verdict;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

#[derive(Serialize)]
struct Body<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    verdict: Verdict,
    config: &'a RunConfig,
    result: &'a T,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    #[serde(flatten)]
    body: Body<'a, T>,
    /// SHA-256 of the compact JSON of every other field, in field order.
    digest: String,
}

pub fn digest_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Pretty JSON of the envelope. Non-finite numbers serialize as `null`.
/// The output directory is left out of the embedded configuration so the
/// digest depends only on what was computed.
pub fn envelope_json<T: Serialize>(command: &str, verdict: Verdict, config: &RunConfig, result: &T) -> String {
    let config = RunConfig {
        out_dir: None,
        ..config.clone()
    };
    let body = Body {
        command,
        version: env!("CARGO_PKG_VERSION"),
        verdict,
        config: &config,
        result,
    };
    let compact = serde_json::to_vec(&body).expect("report serializes");
    let env = Envelope {
        digest: digest_hex(&compact),
        body,
    };
    serde_json::to_string_pretty(&env).expect("report serializes")
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<PathBuf> {
    std::fs::write(path, text).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(path.to_path_buf())
}

pub fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes a header row and string records.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(path.to_path_buf())
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}
