use std::collections::BTreeMap;
use std::path::Path;

use clap::Args;
use instabilitylab::walk::checks::{
    check_band_monotonicity, check_envelope_drift, check_mass_conditions, check_median_mode_drift, check_pmc,
    check_uniform_gap, CheckStatus,
};
use instabilitylab::walk::stats::{dist_stats, kde_grid};
use instabilitylab::walk::{simulate_ensemble, AlphaFn, InitDist, WalkConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{parse_list, Command};
use crate::config::{fmt_f64, usage, write_csv, write_json_pretty, write_lines, CliError, CliResult, JobReport, JobStatus};

pub const HELP: &str = "\
Random walk X_{t+1} = X_t + xi_t alpha(X_t) with fair signs xi_t.
--alpha is sigmoid:BETA or affine:A,B. --init is point:U, unimodal:M,SD (or
normal:M,SD), skew:SHAPE,SCALE,MODE, bimodal:L,R[,SD] or uniform:LO,HI.
--check takes a comma list of pmc, gap, mass, envelope, drift, band, or all
or none. Exact checks run at t = min(horizon, 16); pmc and gap start from the
initial median; gap needs --gap-bounds C0,C1 (alpha >= C0, alpha' >= C1).
The drift check certifies a median decrease between consecutive checkpoints
spaced --drift-every apart (default min(50, horizon)).

Output walk.jsonl: one object per checkpoint with t, median, mode, q05, q95,
mean and check_results (the drift row for t, plus every check status on the
last line). Full check reports go to checks.json.

Output densities.csv columns:
  t        checkpoint
  x        grid point
  density  Gaussian KDE with Silverman bandwidth (at most 256 points per t)";

pub const CHECKS: [&str; 6] = ["pmc", "gap", "mass", "envelope", "drift", "band"];

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct WalkParams {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    /// Even number of steps.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check: Option<String>,
    /// Checkpoint spacing (even); default every even time up to 200 steps.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub every: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_bounds: Option<String>,
    /// Checkpoint spacing of the drift check (even); default min(50, horizon).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift_every: Option<usize>,
    /// Family-wise confidence of the drift check.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    /// Quantile atoms approximating a continuous initial law.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atoms: Option<usize>,
    /// Window width of the band check.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band_w: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band_kappa: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct WalkCliConfig {
    pub alpha: AlphaFn,
    pub init: InitDist,
    pub paths: usize,
    pub horizon: usize,
    pub seed: u64,
    pub checks: Vec<String>,
    pub checkpoints: Vec<usize>,
    pub drift_checkpoints: Vec<usize>,
    pub gap_bounds: Option<(f64, f64)>,
    pub confidence: f64,
    pub atoms: usize,
    pub band_w: f64,
    pub band_kappa: f64,
}

fn parse_alpha(spec: &str) -> CliResult<AlphaFn> {
    let bad = || usage(format!("`alpha` must be sigmoid:BETA or affine:A,B, got `{spec}`"));
    let Some((name, args)) = spec.split_once(':') else {
        return bad();
    };
    match (name, parse_list(args, "alpha")?.as_slice()) {
        ("sigmoid", [b]) => Ok(AlphaFn::sigmoid(*b)),
        ("affine", [a, b]) => Ok(AlphaFn::affine(*a, *b)),
        _ => bad(),
    }
}

fn parse_init(spec: &str) -> CliResult<InitDist> {
    let bad = || usage(format!("unrecognised `init` `{spec}`"));
    let Some((name, args)) = spec.split_once(':') else {
        return bad();
    };
    let init = match (name, parse_list(args, "init")?.as_slice()) {
        ("point", [u]) => InitDist::Point { u: *u },
        ("unimodal" | "normal", [mean, sd]) => InitDist::Normal { mean: *mean, sd: *sd },
        ("skew", [shape, scale, mode]) => InitDist::SkewGamma {
            shape: *shape,
            scale: *scale,
            mode: *mode,
        },
        ("bimodal", [left, right]) => InitDist::Bimodal {
            left: *left,
            right: *right,
            sd: 0.5,
        },
        ("bimodal", [left, right, sd]) => InitDist::Bimodal {
            left: *left,
            right: *right,
            sd: *sd,
        },
        ("uniform", [lo, hi]) => InitDist::Uniform { lo: *lo, hi: *hi },
        _ => return bad(),
    };
    if let Err(e) = init.validate() {
        return usage(e.to_string());
    }
    Ok(init)
}

fn parse_checks(spec: &str) -> CliResult<Vec<String>> {
    match spec {
        "none" => return Ok(Vec::new()),
        "all" => return Ok(CHECKS.iter().map(|s| s.to_string()).collect()),
        _ => {}
    }
    let mut out = Vec::new();
    for c in spec.split(',').map(str::trim) {
        if !CHECKS.contains(&c) {
            return usage(format!("unknown check `{c}`; expected {}, all or none", CHECKS.join(", ")));
        }
        if !out.iter().any(|o| o == c) {
            out.push(c.to_string());
        }
    }
    out.sort_by_key(|c| CHECKS.iter().position(|k| k == c));
    Ok(out)
}

fn status_str(s: CheckStatus) -> &'static str {
    match s {
        CheckStatus::Pass => "pass",
        CheckStatus::Fail => "fail",
        CheckStatus::PreconditionViolated => "precondition-violated",
    }
}

/// Serialises a check report and pulls out its status.
fn record<R: Serialize>(result: instabilitylab::Result<R>, status: impl Fn(&R) -> CheckStatus) -> (String, Value) {
    match result {
        Ok(r) => {
            let s = status_str(status(&r)).to_string();
            (s, serde_json::to_value(&r).unwrap_or(Value::Null))
        }
        Err(e) => ("not-applicable".into(), json!({ "error": e.to_string() })),
    }
}

pub struct Walk;

impl Command for Walk {
    const NAME: &'static str = "walk";
    type Params = WalkParams;
    type Resolved = WalkCliConfig;

    fn resolve(p: WalkParams) -> CliResult<WalkCliConfig> {
        let horizon = p.horizon.unwrap_or(200);
        if horizon < 2 || horizon % 2 != 0 {
            return usage(format!("`horizon` must be even and >= 2, got {horizon}"));
        }
        let every = p.every.unwrap_or(if horizon <= 200 { 2 } else { 2 * (horizon / 200).max(1) });
        if every == 0 || every % 2 != 0 {
            return usage("`every` must be a positive even number");
        }
        let drift_every = p.drift_every.unwrap_or(50.min(horizon));
        if drift_every == 0 || drift_every % 2 != 0 {
            return usage("`drift-every` must be a positive even number");
        }
        let grid = |step: usize| {
            let mut ts: Vec<usize> = (0..=horizon).step_by(step).collect();
            if ts.last() != Some(&horizon) {
                ts.push(horizon);
            }
            ts
        };
        let (checkpoints, drift_checkpoints) = (grid(every), grid(drift_every));
        let gap_bounds = match p.gap_bounds {
            Some(s) => match parse_list(&s, "gap-bounds")?.as_slice() {
                [c0, c1] => Some((*c0, *c1)),
                _ => return usage("`gap-bounds` must be C0,C1"),
            },
            None => None,
        };
        let checks = parse_checks(p.check.as_deref().unwrap_or("none"))?;
        if p.check.as_deref() != Some("all") && checks.iter().any(|c| c == "gap") && gap_bounds.is_none() {
            return usage("missing required key `gap-bounds` for the gap check");
        }
        let confidence = p.confidence.unwrap_or(0.99);
        if !(confidence > 0.0 && confidence < 1.0) {
            return usage("`confidence` must lie in (0, 1)");
        }
        let cfg = WalkCliConfig {
            alpha: parse_alpha(p.alpha.as_deref().unwrap_or("sigmoid:0.01"))?,
            init: parse_init(p.init.as_deref().unwrap_or("point:0"))?,
            paths: p.paths.unwrap_or(10_000),
            horizon,
            seed: p.seed.unwrap_or(0),
            checks,
            checkpoints,
            drift_checkpoints,
            gap_bounds,
            confidence,
            atoms: p.atoms.unwrap_or(41).max(1),
            band_w: p.band_w.unwrap_or(0.5),
            band_kappa: p.band_kappa.unwrap_or(3.0),
        };
        if let Err(e) = cfg.walk_config().validate() {
            return usage(e.to_string());
        }
        Ok(cfg)
    }

    fn seed(cfg: &WalkCliConfig) -> u64 {
        cfg.seed
    }

    fn run(cfg: &WalkCliConfig, out: &Path) -> CliResult<JobReport> {
        let wc = cfg.walk_config();
        let ens = simulate_ensemble(&wc)?;
        let t_exact = cfg.horizon.min(16);
        let u = cfg.init.median();

        let mut statuses: BTreeMap<String, String> = BTreeMap::new();
        let mut reports: BTreeMap<String, Value> = BTreeMap::new();
        let mut drift_rows: BTreeMap<usize, Value> = BTreeMap::new();
        for check in &cfg.checks {
            let (status, report) = match check.as_str() {
                "pmc" => record(check_pmc(&cfg.alpha, u, t_exact), |r| r.status),
                "gap" => match cfg.gap_bounds {
                    Some((c0, c1)) => record(check_uniform_gap(&cfg.alpha, u, t_exact, c0, c1), |r| r.status),
                    None => ("skipped".into(), json!({ "error": "no gap-bounds given" })),
                },
                "mass" => record(check_mass_conditions(&cfg.init, &cfg.alpha, cfg.atoms), |r| r.status),
                "envelope" => record(check_envelope_drift(&cfg.init, &cfg.alpha, cfg.horizon.min(12), cfg.atoms), |r| r.status),
                "drift" => {
                    // Consecutive drift checkpoints must be far enough apart for the decrease to be certifiable.
                    let dc = WalkConfig {
                        checkpoints: cfg.drift_checkpoints.clone(),
                        ..wc.clone()
                    };
                    let result = check_median_mode_drift(&dc, cfg.confidence);
                    if let Ok(r) = &result {
                        for row in &r.rows {
                            drift_rows.insert(row.t, serde_json::to_value(row).unwrap_or(Value::Null));
                        }
                    }
                    record(result, |r| r.status)
                }
                "band" => record(
                    check_band_monotonicity(&cfg.init, &cfg.alpha, t_exact, cfg.band_w, cfg.band_kappa, 200),
                    |r| r.status,
                ),
                other => unreachable!("validated check {other}"),
            };
            statuses.insert(check.clone(), status);
            reports.insert(check.clone(), report);
        }

        let mut lines = Vec::new();
        let mut density_rows = Vec::new();
        let last_t = *cfg.checkpoints.last().expect("nonempty");
        for &t in &cfg.checkpoints {
            let xs = ens.at(t).ok_or_else(|| CliError::Failure(format!("checkpoint {t} not recorded")))?;
            let s = dist_stats(xs, None);
            let mut results = serde_json::Map::new();
            if let Some(row) = drift_rows.get(&t) {
                results.insert("drift_row".into(), row.clone());
            }
            if t == last_t {
                for (k, v) in &statuses {
                    results.insert(k.clone(), Value::String(v.clone()));
                }
            }
            let line = json!({
                "t": t,
                "median": s.median,
                "mode": s.mode,
                "q05": s.q05,
                "q95": s.q95,
                "mean": s.mean,
                "check_results": results,
            });
            lines.push(line.to_string());
            if s.bandwidth > 0.0 && s.bandwidth.is_finite() {
                let (grid, dens) = kde_grid(xs, s.bandwidth);
                let stride = grid.len().div_ceil(256).max(1);
                for i in (0..grid.len()).step_by(stride) {
                    density_rows.push(vec![t.to_string(), fmt_f64(grid[i]), fmt_f64(dens[i])]);
                }
            }
        }
        write_lines(&out.join("walk.jsonl"), &lines)?;
        write_csv(&out.join("densities.csv"), &["t", "x", "density"], &density_rows)?;
        write_json_pretty(&out.join("checks.json"), &reports)?;

        let last = dist_stats(ens.at(last_t).expect("recorded"), None);
        let mut summary = vec![
            ("final_median".into(), fmt_f64(last.median)),
            ("final_mean".into(), fmt_f64(last.mean)),
        ];
        let mut report = JobReport::ok(Vec::new());
        for (k, v) in &statuses {
            summary.push((format!("check_{k}"), v.clone()));
            match v.as_str() {
                "fail" => report.status = JobStatus::CheckFailed,
                "pass" => {}
                other => report.warnings.push(format!("check {k}: {other}")),
            }
        }
        report.summary = summary;
        Ok(report)
    }
}

impl WalkCliConfig {
    fn walk_config(&self) -> WalkConfig {
        WalkConfig {
            alpha: self.alpha.clone(),
            init: self.init.clone(),
            horizon: self.horizon,
            n_paths: self.paths,
            master_seed: self.seed,
            checkpoints: self.checkpoints.clone(),
        }
    }
}
