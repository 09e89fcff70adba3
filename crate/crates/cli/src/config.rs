//! Configuration ingestion, output plumbing and run manifests.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::{DeserializeOwned, Error as _, MapAccess, SeqAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// Usage errors exit with 2, failures with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Failure(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Failure(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<instabilitylab::Error> for CliError {
    fn from(e: instabilitylab::Error) -> Self {
        Self::Failure(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Failure(format!("i/o: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Failure(format!("csv: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// JSON value whose objects reject repeated keys at any depth.
struct Strict(Value);

impl<'de> Deserialize<'de> for Strict {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(StrictVisitor).map(Strict)
    }
}

struct StrictVisitor;

impl<'de> Visitor<'de> for StrictVisitor {
    type Value = Value;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a JSON value")
    }

    fn visit_bool<E>(self, v: bool) -> Result<Value, E> {
        Ok(Value::Bool(v))
    }

    fn visit_i64<E>(self, v: i64) -> Result<Value, E> {
        Ok(Value::from(v))
    }

    fn visit_u64<E>(self, v: u64) -> Result<Value, E> {
        Ok(Value::from(v))
    }

    fn visit_f64<E: serde::de::Error>(self, v: f64) -> Result<Value, E> {
        serde_json::Number::from_f64(v).map(Value::Number).ok_or_else(|| E::custom("non-finite number"))
    }

    fn visit_str<E>(self, v: &str) -> Result<Value, E> {
        Ok(Value::String(v.to_owned()))
    }

    fn visit_unit<E>(self) -> Result<Value, E> {
        Ok(Value::Null)
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Value, A::Error> {
        let mut out = Vec::new();
        while let Some(Strict(v)) = seq.next_element()? {
            out.push(v);
        }
        Ok(Value::Array(out))
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Value, A::Error> {
        let mut out = Map::new();
        while let Some(k) = map.next_key::<String>()? {
            if out.contains_key(&k) {
                return Err(A::Error::custom(format!("duplicate key `{k}`")));
            }
            let Strict(v) = map.next_value()?;
            out.insert(k, v);
        }
        Ok(Value::Object(out))
    }
}

/// Reads a JSON object, rejecting duplicate keys.
pub fn read_object(path: &Path) -> CliResult<Map<String, Value>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    let Strict(v) = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("malformed config file {}: {e}", path.display())))?;
    match v {
        Value::Object(m) => Ok(m),
        _ => usage(format!("config file {} must hold a JSON object", path.display())),
    }
}

/// Flag values (unset flags omitted) laid over file values.
pub fn merge_flags<P: Serialize>(mut base: Map<String, Value>, flags: &P) -> CliResult<Map<String, Value>> {
    match serde_json::to_value(flags).map_err(|e| CliError::Failure(e.to_string()))? {
        Value::Object(m) => {
            for (k, v) in m {
                if !v.is_null() {
                    base.insert(k, v);
                }
            }
            Ok(base)
        }
        _ => unreachable!("parameter structs serialize to objects"),
    }
}

/// Typed parameters from a merged object; unknown keys are usage errors.
pub fn parse_params<P: DeserializeOwned>(obj: Map<String, Value>) -> CliResult<P> {
    serde_json::from_value(Value::Object(obj)).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
}

/// SHA-256 of the canonical resolved configuration without its seed.
pub fn config_hash<C: Serialize>(cfg: &C) -> String {
    let mut v = serde_json::to_value(cfg).expect("configs serialize");
    if let Value::Object(m) = &mut v {
        m.remove("seed");
    }
    let digest = Sha256::digest(serde_json::to_vec(&v).expect("values serialize"));
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn required<T>(v: Option<T>, key: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::Usage(format!("missing required key `{key}`")))
}

/// Canonical path of an existing input file.
pub fn resolve_input(path: &Path, key: &str) -> CliResult<PathBuf> {
    fs::canonicalize(path).map_err(|e| CliError::Usage(format!("`{key}`: cannot resolve {}: {e}", path.display())))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Failure(format!("output dir {} not writable: {e}", dir.display())))
}

/// Writes via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Failure(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn unix_millis() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// Per-job status as recorded in manifests and merged tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum JobStatus {
    Ok,
    Diverged,
    CheckFailed,
    Failed,
}

impl JobStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::Diverged => "diverged",
            Self::CheckFailed => "check-failed",
            Self::Failed => "failed",
        }
    }
}

/// Outcome of one job: status, a one-row summary and warnings.
#[derive(Debug, Clone)]
pub struct JobReport {
    pub status: JobStatus,
    pub summary: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

impl JobReport {
    pub fn ok(summary: Vec<(String, String)>) -> Self {
        Self {
            status: JobStatus::Ok,
            summary,
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestJob {
    pub index: usize,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    pub status: JobStatus,
    pub message: Option<String>,
}

/// Written once, atomically, when a run ends.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub config_hash: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub jobs: Vec<ManifestJob>,
}

/// Shortest round-trip decimal; identical bytes for identical values.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_lines(path: &Path, lines: &[String]) -> CliResult<()> {
    let mut s = String::new();
    for l in lines {
        s.push_str(l);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}
