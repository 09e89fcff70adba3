use std::collections::BTreeMap;
use std::path::Path;

use instabilitylab::derive_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::prepare_named;
use crate::config::{
    config_hash, ensure_dir, parse_params, usage, write_csv, write_json_pretty, CliResult, JobStatus, ManifestJob,
};

pub const MAX_JOBS: usize = 10_000;

pub const HELP: &str = "\
The manifest is a JSON object:
  subcommand  any subcommand except sweep
  base        parameters shared by every job (same keys as the config file)
  grid        axis name -> list of values; axes are taken in name order and
              jobs enumerate the grid lexicographically, last axis fastest
  repeats     runs per grid point (default 1)
  seed        master seed for repeats (default 0)
A job's seed is the explicit `seed` of base or grid when repeats is 1, and
derive_seed(seed, repeat) otherwise. At most 10000 jobs. Failed jobs are
recorded and the sweep continues; each job writes into jobs/NNNN/.

Output merged.csv columns:
  job          job index
  <axis>...    the grid values of the job
  repeat       repeat index
  seed         seed the job ran with
  config_hash  SHA-256 of the resolved job configuration without its seed
  status       ok, diverged, check-failed or failed
  message      error or warning text
  <summary>... per-subcommand summary columns (empty when failed)";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepManifest {
    pub subcommand: String,
    #[serde(default)]
    pub base: Map<String, Value>,
    #[serde(default)]
    pub grid: BTreeMap<String, Vec<Value>>,
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

/// One row of the merged table.
#[derive(Debug, Clone)]
pub struct JobRow {
    pub job: ManifestJob,
    pub axes: Vec<Value>,
    pub repeat: usize,
    pub summary: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

pub struct SweepOutcome {
    pub config_hash: String,
    pub rows: Vec<JobRow>,
}

/// Parameter objects in job order, with their axis values and repeat index.
fn expand(m: &SweepManifest) -> CliResult<Vec<(Vec<Value>, usize, Map<String, Value>)>> {
    if m.subcommand == "sweep" {
        return usage("a sweep cannot run sweeps");
    }
    if m.repeats == 0 {
        return usage("`repeats` must be at least 1");
    }
    if let Some((axis, _)) = m.grid.iter().find(|(_, v)| v.is_empty()) {
        return usage(format!("grid axis `{axis}` is empty"));
    }
    let total = m
        .grid
        .values()
        .try_fold(m.repeats, |acc, v| acc.checked_mul(v.len()))
        .filter(|&n| n <= MAX_JOBS);
    if total.is_none() {
        return usage(format!("sweep exceeds {MAX_JOBS} jobs"));
    }
    let axes: Vec<(&String, &Vec<Value>)> = m.grid.iter().collect();
    let mut points: Vec<Vec<Value>> = vec![Vec::new()];
    for (_, values) in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(v.clone());
                    q
                })
            })
            .collect();
    }
    let mut jobs = Vec::new();
    for point in points {
        let mut obj = m.base.clone();
        for ((name, _), v) in axes.iter().zip(&point) {
            obj.insert((*name).clone(), v.clone());
        }
        for rep in 0..m.repeats {
            let mut o = obj.clone();
            if m.repeats > 1 {
                let master = o.get("seed").and_then(Value::as_u64).unwrap_or(m.seed);
                o.insert("seed".into(), Value::from(derive_seed(master, rep as u64)));
            }
            jobs.push((point.clone(), rep, o));
        }
    }
    Ok(jobs)
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Runs every job of the manifest under `out`, writing `config.json`,
/// `jobs/NNNN/` and `merged.csv`.
pub fn run_sweep(manifest: Map<String, Value>, out: &Path) -> CliResult<SweepOutcome> {
    let m: SweepManifest = parse_params(manifest)?;
    let jobs = expand(&m)?;
    // Resolve everything up front so configuration errors surface before any work.
    let prepared: Vec<_> = jobs
        .into_iter()
        .enumerate()
        .map(|(i, (axes, rep, obj))| (i, axes, rep, prepare_named(&m.subcommand, obj)))
        .collect();
    if let Some((i, _, _, Err(e))) = prepared.iter().find(|p| p.3.is_err()) {
        return usage(format!("job {i}: {e}"));
    }
    ensure_dir(out)?;
    write_json_pretty(&out.join("config.json"), &m)?;
    let rows: Vec<JobRow> = prepared
        .into_par_iter()
        .map(|(index, axes, repeat, p)| {
            let p = p.expect("checked above");
            let (seed, hash) = (p.seed, p.hash.clone());
            let dir = out.join("jobs").join(format!("{index:04}"));
            let (status, summary, warnings, message) = match p.run(&dir) {
                Ok(r) => {
                    let msg = (!r.warnings.is_empty()).then(|| r.warnings.join("; "));
                    (r.status, r.summary, r.warnings, msg)
                }
                Err(e) => (JobStatus::Failed, Vec::new(), Vec::new(), Some(e.to_string())),
            };
            JobRow {
                job: ManifestJob {
                    index,
                    seed: Some(seed),
                    config_hash: Some(hash),
                    status,
                    message,
                },
                axes,
                repeat,
                summary,
                warnings,
            }
        })
        .collect();

    let mut summary_keys: Vec<String> = Vec::new();
    for r in &rows {
        for (k, _) in &r.summary {
            if !summary_keys.contains(k) {
                summary_keys.push(k.clone());
            }
        }
    }
    let mut header: Vec<String> = vec!["job".into()];
    header.extend(m.grid.keys().cloned());
    header.extend(["repeat", "seed", "config_hash", "status", "message"].map(String::from));
    header.extend(summary_keys.iter().cloned());
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![r.job.index.to_string()];
            row.extend(r.axes.iter().map(cell));
            row.push(r.repeat.to_string());
            row.push(r.job.seed.map(|s| s.to_string()).unwrap_or_default());
            row.push(r.job.config_hash.clone().unwrap_or_default());
            row.push(r.job.status.as_str().into());
            row.push(r.job.message.clone().unwrap_or_default());
            for k in &summary_keys {
                row.push(r.summary.iter().find(|(sk, _)| sk == k).map(|(_, v)| v.clone()).unwrap_or_default());
            }
            row
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&out.join("merged.csv"), &header_refs, &table)?;
    Ok(SweepOutcome {
        config_hash: config_hash(&m),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(text: &str) -> Map<String, Value> {
        match serde_json::from_str(text).unwrap() {
            Value::Object(m) => m,
            _ => unreachable!(),
        }
    }

    #[test]
    fn grid_is_lexicographic_in_axis_name_order() {
        let m: SweepManifest = parse_params(manifest(
            r#"{"subcommand": "dln", "base": {"theta1": 1, "theta2": 2}, "grid": {"steps": [1, 2], "eta": [0.1, 0.2]}}"#,
        ))
        .unwrap();
        let jobs = expand(&m).unwrap();
        let pts: Vec<String> = jobs.iter().map(|j| format!("{}/{}", j.0[0], j.0[1])).collect();
        assert_eq!(pts, ["0.1/1", "0.1/2", "0.2/1", "0.2/2"]);
    }

    #[test]
    fn job_cap_and_empty_axis() {
        let big = manifest(r#"{"subcommand": "dln", "grid": {"eta": [1], "steps": [1]}, "repeats": 10001}"#);
        assert!(run_sweep(big, Path::new("/nonexistent")).is_err());
        let empty = manifest(r#"{"subcommand": "dln", "grid": {"eta": []}}"#);
        assert!(run_sweep(empty, Path::new("/nonexistent")).is_err());
    }

    #[test]
    fn repeats_share_hash_with_distinct_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_sweep(
            manifest(r#"{"subcommand": "dln", "base": {"theta1": -0.1, "theta2": 10, "eta": 0.01, "steps": 5}, "repeats": 3}"#),
            dir.path(),
        )
        .unwrap();
        assert_eq!(out.rows.len(), 3);
        let mut seeds: Vec<u64> = out.rows.iter().map(|r| r.job.seed.unwrap()).collect();
        seeds.dedup();
        assert_eq!(seeds.len(), 3);
        assert!(out.rows.iter().all(|r| r.job.config_hash == out.rows[0].job.config_hash));
        let merged = std::fs::read_to_string(dir.path().join("merged.csv")).unwrap();
        assert_eq!(merged.lines().count(), 4);
    }

    #[test]
    fn diverged_and_failed_jobs_are_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_sweep(
            manifest(r#"{"subcommand": "dln", "base": {"theta1": -0.1, "theta2": 10, "steps": 40}, "grid": {"eta": [0.001, 5.0]}}"#),
            dir.path(),
        )
        .unwrap();
        let statuses: Vec<JobStatus> = out.rows.iter().map(|r| r.job.status).collect();
        assert_eq!(statuses, [JobStatus::Ok, JobStatus::Diverged]);
        let merged = std::fs::read_to_string(dir.path().join("merged.csv")).unwrap();
        assert!(merged.lines().nth(2).unwrap().contains(",diverged,"));

        // Mismatched widths only fail when the job runs; the sweep keeps going.
        let dir2 = tempfile::tempdir().unwrap();
        let out = run_sweep(
            manifest(r#"{"subcommand": "train", "base": {"data": "blobs:16,2", "epochs": 2}, "grid": {"dims": ["4,3,3", "4,3,2"]}}"#),
            dir2.path(),
        )
        .unwrap();
        let statuses: Vec<JobStatus> = out.rows.iter().map(|r| r.job.status).collect();
        assert_eq!(statuses, [JobStatus::Failed, JobStatus::Ok]);
        assert!(out.rows[0].job.message.as_deref().unwrap().contains("do not fit"));
    }
}
