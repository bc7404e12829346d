//! Command-line front end: tabulate formulas, run verification suites,
//! dump simulated paths and estimate the inverse-clock constant.
//!
//! The run configuration is a TOML document with sections `[model]`,
//! `[params]`, `[grid]`, `[mc]`, `[output]` and `[verify]`; `inf` is a
//! valid value for `lambda_a` and `lambda_b`. Every section is optional and
//! falls back to the Brownian desk configuration.
//!
//! Exit status: 0 success, 1 a check failed, 2 configuration or usage
//! error, 3 numerical failure, 4 filesystem error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path as FsPath, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{LevyModel, ModelError, ModelKind};
use crate::pathsim::{path_rng, simulate_path, SimError, SimGrid};
use crate::penalization::{
    estimate_h_const, hitting_prob, phi, HEstimate, PenalizationParams, PenaltyError, Weights,
};
use crate::resolvent::{HFunction, ResolventError};
use crate::verify::{
    check_identity_hb, check_identity_hc, check_inverse_clock_martingale, check_inverse_lt_laplace,
    check_martingale, check_penalization_limit, reports_to_json, CheckReport, LimitClock, LimitOptions,
    MCConfig, TestFunctional, VerifyError,
};

/// Header of the `table` CSV document.
pub const TABLE_HEADER: &str = "x,h,h_gamma,phi,hitting_prob";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ChecksFailed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<ResolventError> for CliError {
    fn from(e: ResolventError) -> Self {
        match e {
            ResolventError::Config(m) => CliError::Config(m),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<PenaltyError> for CliError {
    fn from(e: PenaltyError) -> Self {
        match e {
            PenaltyError::Resolvent(r) => r.into(),
            PenaltyError::Domain(m) => CliError::Config(m),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<VerifyError> for CliError {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::Penalty(p) => p.into(),
            VerifyError::Resolvent(r) => r.into(),
            VerifyError::Precondition(m) | VerifyError::Degenerate(m) => CliError::Config(m),
            VerifyError::Sim(s) => CliError::Config(s.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn io_err(path: &FsPath, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsSection {
    pub a: f64,
    pub b: f64,
    pub lambda_a: f64,
    pub lambda_b: f64,
    pub gamma: f64,
}

impl Default for ParamsSection {
    fn default() -> Self {
        ParamsSection {
            a: 0.0,
            b: 1.0,
            lambda_a: f64::INFINITY,
            lambda_b: f64::INFINITY,
            gamma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub dt: f64,
    pub horizon: f64,
    /// Local-time window half-width; `5√dt` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            dt: 1e-4,
            horizon: 50.0,
            eps: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub n_paths: usize,
    /// At most `i64::MAX`, the TOML integer range.
    pub seed: u64,
    pub z: f64,
    pub censor_budget: f64,
}

impl Default for McSection {
    fn default() -> Self {
        McSection {
            n_paths: 10_000,
            seed: 1,
            z: 3.0,
            censor_budget: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: String,
    /// Subset of `csv` and `json`.
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: "out".into(),
            formats: vec!["csv".into(), "json".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    /// Subset of `identities`, `martingales`, `limits`, `inverse-clock`.
    pub suites: Vec<String>,
    /// Starting point for martingale and limit checks and path dumps.
    pub x0: f64,
    pub t_grid: Vec<f64>,
    /// Points tabulated by `table`.
    pub x_grid: Vec<f64>,
    pub hb_level: f64,
    pub hc_levels: [f64; 2],
    pub laplace_q: f64,
    pub laplace_l: f64,
    pub limit_t: f64,
    pub limit_horizon: f64,
    pub coarse_dt: f64,
    /// Level of the inverse-local-time clock for `estimate-h`.
    pub c: f64,
    pub u0: f64,
    pub h_estimate_dt: f64,
    pub h_estimate_horizon: f64,
    pub tol_occupation: f64,
    pub tol_laplace: f64,
    pub tol_martingale: f64,
    pub tol_limit: f64,
    pub tol_inverse_clock: f64,
    pub functional: TestFunctional,
    pub limits: Vec<LimitClock>,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            suites: vec!["identities".into()],
            x0: 2.0,
            t_grid: vec![0.1, 0.5],
            x_grid: vec![-1.0, 0.5, 2.0],
            hb_level: 1.0,
            hc_levels: [1.0, -2.0],
            laplace_q: 1.0,
            laplace_l: 0.5,
            limit_t: 0.5,
            limit_horizon: 1e4,
            coarse_dt: 1e-2,
            c: -1.0,
            u0: 0.5,
            h_estimate_dt: 1e-3,
            h_estimate_horizon: 500.0,
            tol_occupation: 0.01,
            tol_laplace: 0.02,
            tol_martingale: 0.03,
            tol_limit: 0.05,
            tol_inverse_clock: 0.05,
            functional: TestFunctional::AboveMedian,
            limits: vec![LimitClock::Exponential { q: 1e-3 }, LimitClock::Hitting { c: 50.0 }],
        }
    }
}

fn default_model() -> ModelKind {
    ModelKind::StandardBrownian { sigma: 1.0 }
}

/// Parsed run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_model")]
    pub model: ModelKind,
    #[serde(default)]
    pub params: ParamsSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub verify: VerifySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: default_model(),
            params: ParamsSection::default(),
            grid: GridSection::default(),
            mc: McSection::default(),
            output: OutputSection::default(),
            verify: VerifySection::default(),
        }
    }
}

/// 1-based line of `key` inside `[section]`, else of the section header.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let header = format!("[{section}]");
    let mut in_section = false;
    let mut header_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            in_section = line == header;
            if in_section {
                header_line = Some(i + 1);
            }
            continue;
        }
        if in_section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    header_line
}

impl RunConfig {
    /// Parse and validate; errors carry the offending line when it exists.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            let msg = e.message().trim().to_string();
            CliError::Config(match line {
                Some(l) => format!("line {l}: {msg}"),
                None => msg,
            })
        })?;
        cfg.validate().map_err(|(section, key, msg)| {
            CliError::Config(match locate(text, section, key) {
                Some(l) => format!("line {l}: [{section}] {key}: {msg}"),
                None => format!("[{section}] {key}: {msg}"),
            })
        })?;
        Ok(cfg)
    }

    pub fn load(path: &FsPath) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        RunConfig::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    fn validate(&self) -> Result<(), (&'static str, &'static str, String)> {
        LevyModel::from_kind(self.model).map_err(|e| {
            let key = match e {
                ModelError::Volatility(_) => "sigma",
                ModelError::StableIndex(_) => "alpha",
                ModelError::JumpRate(_) => "jump_rate",
                ModelError::JumpShape { .. } => "rate_up",
            };
            ("model", key, e.to_string())
        })?;
        let p = &self.params;
        PenalizationParams::new(p.a, p.b, p.lambda_a, p.lambda_b, p.gamma)
            .map_err(|e| ("params", "a", e.to_string()))?;
        self.sim_grid().map_err(|e| ("grid", "dt", e.to_string()))?;
        self.mc_config()
            .map_err(|e| ("grid", "dt", e))?
            .validate()
            .map_err(|e| {
                // Messages lead with the offending field.
                let key = ["z", "censor_budget"].into_iter().find(|k| e.starts_with(k)).unwrap_or("n_paths");
                ("mc", key, e)
            })?;
        for f in &self.output.formats {
            if f != "csv" && f != "json" {
                return Err(("output", "formats", format!("unknown format `{f}`")));
            }
        }
        parse_selector(&self.verify.suites.join(",")).map_err(|e| ("verify", "suites", e.to_string()))?;
        let v = &self.verify;
        if !(v.coarse_dt > 0.0 && v.h_estimate_dt > 0.0) {
            return Err(("verify", "coarse_dt", "step sizes must be positive".into()));
        }
        if !(v.u0 > 0.0) {
            return Err(("verify", "u0", format!("must be positive, got {}", v.u0)));
        }
        Ok(())
    }

    pub fn model(&self) -> LevyModel {
        LevyModel::from_kind(self.model).expect("validated model")
    }

    pub fn params(&self) -> PenalizationParams {
        let p = &self.params;
        PenalizationParams::new(p.a, p.b, p.lambda_a, p.lambda_b, p.gamma).expect("validated params")
    }

    pub fn sim_grid(&self) -> Result<SimGrid, SimError> {
        match self.grid.eps {
            Some(eps) => SimGrid::new(self.grid.dt, self.grid.horizon, eps),
            None => SimGrid::with_default_eps(self.grid.dt, self.grid.horizon),
        }
    }

    pub fn mc_config(&self) -> Result<MCConfig, String> {
        Ok(MCConfig {
            n_paths: self.mc.n_paths,
            master_seed: self.mc.seed,
            z: self.mc.z,
            grid: self.sim_grid().map_err(|e| e.to_string())?,
            censor_budget: self.mc.censor_budget,
        })
    }

    fn wants(&self, format: &str) -> bool {
        self.output.formats.iter().any(|f| f == format)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Identities,
    Martingales,
    Limits,
    InverseClock,
}

/// Comma-separated suite names; the empty string selects nothing.
pub fn parse_selector(s: &str) -> Result<Vec<Suite>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| match t {
            "identities" => Ok(Suite::Identities),
            "martingales" => Ok(Suite::Martingales),
            "limits" => Ok(Suite::Limits),
            "inverse-clock" => Ok(Suite::InverseClock),
            other => Err(CliError::Config(format!(
                "unknown suite `{other}` (expected identities, martingales, limits, inverse-clock)"
            ))),
        })
        .collect()
}

/// One CSV row per point of `xs` under the fixed [`TABLE_HEADER`].
pub fn cmd_table(cfg: &RunConfig, xs: &[f64]) -> Result<String, CliError> {
    let hf = HFunction::direct(cfg.model());
    let p = cfg.params();
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for &x in xs {
        let row = [
            x,
            hf.h(x)?,
            hf.h_gamma(p.gamma, x)?,
            phi(&hf, &p, x)?.value,
            hitting_prob(&hf, x, p.a, p.b)?.value,
        ];
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", cells.join(",")).expect("write to string");
    }
    Ok(out)
}

fn weights_of(cfg: &RunConfig) -> Result<Weights, CliError> {
    Ok(Weights::new(cfg.params.lambda_a, cfg.params.lambda_b)?)
}

/// `Ĥ` for the inverse-local-time clock at `[verify] c`.
pub fn cmd_estimate_h(cfg: &RunConfig) -> Result<HEstimate, CliError> {
    let v = &cfg.verify;
    let mc = cfg
        .mc_config()
        .map_err(CliError::Config)?
        .with_grid(SimGrid::with_default_eps(v.h_estimate_dt, v.h_estimate_horizon)?);
    let p = cfg.params();
    Ok(estimate_h_const(&cfg.model(), p.a, p.b, v.c, &weights_of(cfg)?, v.u0, &mc)?)
}

/// Run the selected suites in a fixed order.
pub fn cmd_verify(cfg: &RunConfig, suites: &[Suite]) -> Result<Vec<CheckReport>, CliError> {
    let v = &cfg.verify;
    let mc = cfg.mc_config().map_err(CliError::Config)?;
    let hf = HFunction::direct(cfg.model());
    let p = cfg.params();
    let mut reports = Vec::new();
    for suite in [Suite::Identities, Suite::Martingales, Suite::Limits, Suite::InverseClock] {
        if !suites.contains(&suite) {
            continue;
        }
        match suite {
            Suite::Identities => {
                reports.push(check_identity_hb(&hf, v.hb_level, &mc, v.tol_occupation)?);
                let [a, b] = v.hc_levels;
                reports.push(check_identity_hc(&hf, a, b, &mc, v.tol_occupation)?);
                reports.push(check_inverse_lt_laplace(&hf, v.laplace_q, v.laplace_l, &mc, v.tol_laplace)?);
            }
            Suite::Martingales => {
                reports.extend(check_martingale(&hf, &p, &v.t_grid, v.x0, &mc, v.tol_martingale)?);
            }
            Suite::Limits => {
                let grid = SimGrid::new(mc.grid.dt, v.limit_horizon, mc.grid.eps)?;
                let opts = LimitOptions {
                    t: v.limit_t,
                    x0: v.x0,
                    coarse_dt: v.coarse_dt,
                    tol_rel: v.tol_limit,
                };
                reports.extend(check_penalization_limit(&hf, &p, &v.limits, v.functional, &opts, &mc.with_grid(grid))?);
            }
            Suite::InverseClock => {
                let est = cmd_estimate_h(cfg)?;
                reports.extend(check_inverse_clock_martingale(
                    &cfg.model(),
                    p.a,
                    p.b,
                    v.c,
                    &weights_of(cfg)?,
                    &est,
                    &v.t_grid,
                    v.c,
                    &mc,
                    v.tol_inverse_clock,
                )?);
            }
        }
    }
    Ok(reports)
}

/// Write `n` path dumps from `[verify] x0`, tracking `a` and `b`.
pub fn cmd_simulate(cfg: &RunConfig, n: usize, dir: &FsPath) -> Result<Vec<PathBuf>, CliError> {
    if n == 0 {
        return Err(CliError::Config("simulate needs n >= 1".into()));
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let model = cfg.model();
    let grid = cfg.sim_grid()?;
    let levels = [cfg.params.a, cfg.params.b];
    let mut written = Vec::with_capacity(n);
    for i in 0..n {
        let path = simulate_path(&model, cfg.verify.x0, &grid, &levels, &mut path_rng(cfg.mc.seed, i as u64))?;
        let file = dir.join(format!("path_{i:04}.csv"));
        let mut buf = Vec::new();
        path.write_csv(&mut buf).map_err(|e| io_err(&file, e))?;
        fs::write(&file, buf).map_err(|e| io_err(&file, e))?;
        written.push(file);
    }
    Ok(written)
}

#[derive(Debug, Parser)]
#[command(name = "levypen", version, about = "Penalization of recurrent Lévy processes by local times")]
pub struct Cli {
    /// Run configuration (TOML); defaults apply when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding `[mc] seed`.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    pub seed: Option<u64>,
    /// Output directory, overriding `[output] directory`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate h, h^(γ), φ and the hitting probability.
    Table {
        /// Comma-separated points, overriding `[verify] x_grid`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
    },
    /// Run verification suites and write `report.json`.
    Verify {
        /// Comma-separated subset of identities, martingales, limits, inverse-clock.
        #[arg(long)]
        suite: Option<String>,
    },
    /// Dump simulated paths as CSV.
    Simulate {
        #[arg(long, default_value_t = 1)]
        n: usize,
    },
    /// Estimate the inverse-clock constant and write `h_estimate.json`.
    EstimateH,
    /// Print the effective configuration.
    ShowConfig,
}

fn write_file(path: &FsPath, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

/// Execute a parsed command line, returning the text for stdout.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.mc.seed = seed;
    }
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
    match &cli.command {
        Command::Table { x } => {
            let xs = x.clone().unwrap_or_else(|| cfg.verify.x_grid.clone());
            let csv = cmd_table(&cfg, &xs)?;
            if cfg.wants("csv") {
                write_file(&out_dir.join("table.csv"), &csv)?;
            }
            Ok(csv)
        }
        Command::Verify { suite } => {
            let suites = match suite {
                Some(s) => parse_selector(s)?,
                None => parse_selector(&cfg.verify.suites.join(","))?,
            };
            let reports = cmd_verify(&cfg, &suites)?;
            let json = reports_to_json(&reports);
            if cfg.wants("json") {
                write_file(&out_dir.join("report.json"), &(json.clone() + "\n"))?;
            }
            let mut text = String::new();
            for r in &reports {
                writeln!(text, "{}", r.summary()).expect("write to string");
            }
            let failed = reports.iter().filter(|r| !r.pass).count();
            if failed > 0 {
                eprint!("{text}");
                return Err(CliError::ChecksFailed(failed));
            }
            Ok(text)
        }
        Command::Simulate { n } => {
            let files = cmd_simulate(&cfg, *n, &out_dir)?;
            Ok(files.iter().map(|f| format!("{}\n", f.display())).collect())
        }
        Command::EstimateH => {
            let est = cmd_estimate_h(&cfg)?;
            let json = serde_json::to_string_pretty(&est).expect("estimate serializes");
            if cfg.wants("json") {
                write_file(&out_dir.join("h_estimate.json"), &(json.clone() + "\n"))?;
            }
            Ok(json + "\n")
        }
        Command::ShowConfig => Ok(cfg.to_toml_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let text = RunConfig::default().to_toml_string();
        assert!(text.contains("lambda_a = inf"), "{text}");
        let parsed = RunConfig::parse(&text).unwrap();
        assert_eq!(parsed, RunConfig::default());
        assert_eq!(parsed.to_toml_string(), text);
    }

    #[test]
    fn sections_and_inf_token() {
        let cfg = RunConfig::parse(
            "[model]\nkind = \"stable\"\nalpha = 1.5\n\n[params]\na = -1.0\nb = 2.0\nlambda_a = 1\nlambda_b = inf\n",
        )
        .unwrap();
        assert_eq!(cfg.model, ModelKind::SymmetricStable { alpha: 1.5 });
        assert_eq!(cfg.params.lambda_b, f64::INFINITY);
        assert_eq!(cfg.params.lambda_a, 1.0);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = RunConfig::parse("[model]\nkind = \"stable\"\nalpha = 0.9\n").unwrap_err();
        assert!(matches!(&err, CliError::Config(m) if m.starts_with("line 3:")), "{err}");
        let err = RunConfig::parse("[grid]\ndt = 1e-4\nhorizon = -1\n").unwrap_err();
        assert!(matches!(&err, CliError::Config(m) if m.starts_with("line ")), "{err}");
        let err = RunConfig::parse("[mc]\nn_paths = 100\nbogus = 1\n").unwrap_err();
        assert!(matches!(&err, CliError::Config(m) if m.starts_with("line 3:")), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn selector_tokens() {
        assert_eq!(parse_selector("").unwrap(), vec![]);
        assert_eq!(
            parse_selector("limits, identities").unwrap(),
            vec![Suite::Limits, Suite::Identities]
        );
        assert!(parse_selector("identities,bogus").is_err());
    }

    #[test]
    fn table_examples() {
        let cfg = RunConfig::default();
        let csv = cmd_table(&cfg, &[-1.0, 0.5, 2.0, 0.0]).unwrap();
        let rows: Vec<Vec<f64>> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
            .collect();
        let phis: Vec<f64> = rows.iter().map(|r| r[3]).collect();
        for (got, want) in phis.iter().zip([1.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-9, "{phis:?}");
        }
        assert_eq!(rows[3][4], 1.0);
        assert_eq!(cmd_table(&cfg, &[]).unwrap(), format!("{TABLE_HEADER}\n"));
    }
}
