//! Command-line front end: sweep presets with CSV/JSON artifacts, plus
//! single-instance solves for debugging.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::{self, ExactStatus, MiqcpInstance};
use crate::harness::{
    self, calibrate_epsilon, debias, default_gamma0, run_sweep, ExperimentSpec, PointAggregate,
    SolverKind, TrialRecord,
};
use crate::model::{generate_scenario, row_group_norms};
use crate::prox::{self, ProxConfig};

const NOISELESS_NODE_LIMIT: usize = 50_000;
const NOISY_NODE_LIMIT: usize = 200_000;

#[derive(Parser)]
#[command(
    name = "jadce",
    version,
    about = "Group-sparse recovery for joint activity detection and channel estimation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a Monte-Carlo sweep and write curve/trial files plus a manifest
    Run(RunArgs),
    /// Solve a single random instance and print the recovery summary
    Solve(SolveArgs),
    /// Brute-force minimum-support oracle on a single small instance
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Success probability vs pilot length, noiseless
    Fig1,
    /// NMSE vs pilot length, noiseless
    Fig2,
    /// Minimum pilot length vs number of active devices, noiseless
    Fig3,
    /// NMSE vs pilot length at 30 dB SNR
    Fig4,
}

impl Preset {
    fn token(&self) -> &'static str {
        match self {
            Preset::Fig1 => "fig1",
            Preset::Fig2 => "fig2",
            Preset::Fig3 => "fig3",
            Preset::Fig4 => "fig4",
        }
    }

    fn parse(s: &str) -> Result<Preset> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fig1" => Ok(Preset::Fig1),
            "fig2" => Ok(Preset::Fig2),
            "fig3" => Ok(Preset::Fig3),
            "fig4" => Ok(Preset::Fig4),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Args)]
struct RunArgs {
    /// Flat key = value config file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Figure preset; pins the scenario fields it defines
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Total number of devices N
    #[arg(long)]
    n: Option<usize>,
    /// Number of active devices K
    #[arg(long)]
    k: Option<usize>,
    /// Number of receive antennas M
    #[arg(long)]
    m: Option<usize>,
    /// Pilot lengths, comma separated
    #[arg(long, value_delimiter = ',')]
    l: Option<Vec<usize>>,
    /// Inclusive pilot-length range lo:hi
    #[arg(long = "l-range")]
    l_range: Option<String>,
    /// SNR in dB; omit for the noiseless case
    #[arg(long)]
    snr: Option<f64>,
    /// Trials per sweep point
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed for the per-trial seed derivation
    #[arg(long)]
    seed: Option<u64>,
    /// Subset of bnb,reweighted,grouplasso (comma separated)
    #[arg(long, value_delimiter = ',')]
    solvers: Option<Vec<String>>,
    /// Node budget per exact solve
    #[arg(long = "node-limit")]
    node_limit: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, default_value_t = 30)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 6)]
    l: usize,
    /// SNR in dB; omit for the noiseless case
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = SolverChoice::Bnb)]
    solver: SolverChoice,
    #[arg(long = "node-limit")]
    node_limit: Option<usize>,
    /// Emit the report as JSON instead of the human-readable summary
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 4)]
    l: usize,
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SolverChoice {
    Bnb,
    Grouplasso,
    Reweighted,
    Oracle,
}

/// Fully resolved run configuration (defaults <- config file <- flags,
/// with preset-pinned fields applied last).
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    pub n_devices: usize,
    pub n_active: usize,
    pub n_antennas: usize,
    pub pilot_lengths: Vec<usize>,
    pub snr_db: Option<f64>,
    pub trials: usize,
    pub base_seed: u64,
    pub solvers: Vec<SolverKind>,
    pub node_limit: usize,
    pub out_dir: PathBuf,
    pub format: OutputFormat,
    /// Active-device counts scanned by the fig3 preset.
    pub k_range: Vec<usize>,
    pub success_target: f64,
    pub l_scan_max: usize,
}

impl RunConfig {
    pub fn generic(pilot_lengths: Vec<usize>, out_dir: PathBuf) -> Self {
        RunConfig {
            preset: None,
            n_devices: 30,
            n_active: 5,
            n_antennas: 2,
            pilot_lengths,
            snr_db: None,
            trials: 100,
            base_seed: 0,
            solvers: SolverKind::ALL.to_vec(),
            node_limit: NOISELESS_NODE_LIMIT,
            out_dir,
            format: OutputFormat::Csv,
            k_range: (1..=6).collect(),
            success_target: 0.95,
            l_scan_max: 12,
        }
    }

    pub fn preset(preset: Preset, out_dir: PathBuf) -> Self {
        let mut cfg = RunConfig::generic(Vec::new(), out_dir);
        cfg.preset = Some(preset);
        apply_preset(&mut cfg, preset, false);
        cfg
    }
}

/// Unresolved option layer shared by the config file and the flags.
#[derive(Debug, Default)]
struct Options {
    preset: Option<Preset>,
    n: Option<usize>,
    k: Option<usize>,
    m: Option<usize>,
    l: Option<Vec<usize>>,
    snr: Option<f64>,
    trials: Option<usize>,
    seed: Option<u64>,
    solvers: Option<Vec<SolverKind>>,
    node_limit: Option<usize>,
    out: Option<PathBuf>,
    format: Option<OutputFormat>,
}

fn parse_l_range(s: &str) -> Result<Vec<usize>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 2 {
        return Err(Error::Config(format!(
            "l-range must look like lo:hi, got '{s}'"
        )));
    }
    let lo: usize = parts[0]
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad l-range lower bound '{}'", parts[0])))?;
    let hi: usize = parts[1]
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad l-range upper bound '{}'", parts[1])))?;
    if lo == 0 || hi < lo {
        return Err(Error::Config(format!("empty l-range '{s}'")));
    }
    Ok((lo..=hi).collect())
}

fn parse_solver_list(items: &[String]) -> Result<Vec<SolverKind>> {
    let mut out = Vec::new();
    for item in items {
        for tok in item.split(',') {
            if tok.trim().is_empty() {
                continue;
            }
            out.push(SolverKind::parse(tok)?);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("empty solver list".into()));
    }
    Ok(out)
}

fn parse_config_file(path: &Path) -> Result<Options> {
    let text = fs::read_to_string(path)?;
    let mut opts = Options::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{}: line {}: expected key = value",
                path.display(),
                lineno + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| {
            Error::Config(format!(
                "{}: line {}: bad {what} '{value}'",
                path.display(),
                lineno + 1
            ))
        };
        match key {
            "preset" => opts.preset = Some(Preset::parse(value)?),
            "n" => opts.n = Some(value.parse().map_err(|_| bad("n"))?),
            "k" => opts.k = Some(value.parse().map_err(|_| bad("k"))?),
            "m" => opts.m = Some(value.parse().map_err(|_| bad("m"))?),
            "l" => {
                let mut ls = Vec::new();
                for tok in value.split(',') {
                    ls.push(tok.trim().parse().map_err(|_| bad("l"))?);
                }
                opts.l = Some(ls);
            }
            "l_range" => opts.l = Some(parse_l_range(value)?),
            "snr" => opts.snr = Some(value.parse().map_err(|_| bad("snr"))?),
            "trials" => opts.trials = Some(value.parse().map_err(|_| bad("trials"))?),
            "seed" => opts.seed = Some(value.parse().map_err(|_| bad("seed"))?),
            "solvers" => {
                opts.solvers = Some(parse_solver_list(&[value.to_string()])?);
            }
            "node_limit" => opts.node_limit = Some(value.parse().map_err(|_| bad("node_limit"))?),
            "out" => opts.out = Some(PathBuf::from(value)),
            "format" => {
                opts.format = Some(match value.to_ascii_lowercase().as_str() {
                    "csv" => OutputFormat::Csv,
                    "json" => OutputFormat::Json,
                    _ => return Err(bad("format")),
                })
            }
            other => {
                return Err(Error::Config(format!(
                    "{}: line {}: unknown key '{other}'",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    Ok(opts)
}

fn overlay(base: &mut Options, over: Options) {
    macro_rules! take {
        ($field:ident) => {
            if over.$field.is_some() {
                base.$field = over.$field;
            }
        };
    }
    take!(preset);
    take!(n);
    take!(k);
    take!(m);
    take!(l);
    take!(snr);
    take!(trials);
    take!(seed);
    take!(solvers);
    take!(node_limit);
    take!(out);
    take!(format);
}

fn apply_preset(cfg: &mut RunConfig, preset: Preset, warn: bool) {
    let pin = |name: &str, changed: bool| {
        if warn && changed {
            eprintln!(
                "warning: --{name} ignored; preset {} pins it",
                preset.token()
            );
        }
    };
    match preset {
        Preset::Fig1 | Preset::Fig2 => {
            pin("n", cfg.n_devices != 30);
            pin("k", cfg.n_active != 5);
            pin("m", cfg.n_antennas != 2);
            pin("trials", cfg.trials != 100);
            pin("snr", cfg.snr_db.is_some());
            cfg.n_devices = 30;
            cfg.n_active = 5;
            cfg.n_antennas = 2;
            cfg.trials = 100;
            cfg.snr_db = None;
            cfg.pilot_lengths = (2..=20).collect();
            cfg.solvers = SolverKind::ALL.to_vec();
        }
        Preset::Fig3 => {
            pin("n", cfg.n_devices != 30);
            pin("m", cfg.n_antennas != 2);
            pin("trials", cfg.trials != 100);
            pin("snr", cfg.snr_db.is_some());
            cfg.n_devices = 30;
            cfg.n_antennas = 2;
            cfg.trials = 100;
            cfg.snr_db = None;
            cfg.solvers = vec![SolverKind::Bnb];
            cfg.k_range = (1..=6).collect();
            cfg.success_target = 0.95;
            cfg.l_scan_max = 12;
        }
        Preset::Fig4 => {
            pin("n", cfg.n_devices != 30);
            pin("k", cfg.n_active != 5);
            pin("m", cfg.n_antennas != 2);
            pin("trials", cfg.trials != 100);
            pin("snr", cfg.snr_db != Some(30.0));
            cfg.n_devices = 30;
            cfg.n_active = 5;
            cfg.n_antennas = 2;
            cfg.trials = 100;
            cfg.snr_db = Some(30.0);
            cfg.pilot_lengths = (6..=20).step_by(2).collect();
            cfg.solvers = SolverKind::ALL.to_vec();
        }
    }
}

fn resolve_run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut opts = Options::default();
    if let Some(path) = &args.config {
        overlay(&mut opts, parse_config_file(path)?);
    }
    let flag_opts = Options {
        preset: args.preset,
        n: args.n,
        k: args.k,
        m: args.m,
        l: match (&args.l, &args.l_range) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("--l and --l-range are mutually exclusive".into()))
            }
            (Some(l), None) => Some(l.clone()),
            (None, Some(r)) => Some(parse_l_range(r)?),
            (None, None) => None,
        },
        snr: args.snr,
        trials: args.trials,
        seed: args.seed,
        solvers: match &args.solvers {
            Some(items) => Some(parse_solver_list(items)?),
            None => None,
        },
        node_limit: args.node_limit,
        out: args.out.clone(),
        format: args.format,
    };
    overlay(&mut opts, flag_opts);

    let mut cfg = RunConfig::generic(Vec::new(), PathBuf::from("results"));
    cfg.preset = opts.preset;
    if let Some(n) = opts.n {
        cfg.n_devices = n;
    }
    if let Some(k) = opts.k {
        cfg.n_active = k;
    }
    if let Some(m) = opts.m {
        cfg.m_set(m);
    }
    if let Some(l) = opts.l.clone() {
        cfg.pilot_lengths = l;
    }
    cfg.snr_db = opts.snr;
    if let Some(t) = opts.trials {
        cfg.trials = t;
    }
    if let Some(s) = opts.seed {
        cfg.base_seed = s;
    }
    if let Some(sv) = opts.solvers.clone() {
        cfg.solvers = sv;
    }
    if let Some(out) = opts.out.clone() {
        cfg.out_dir = out;
    }
    if let Some(f) = opts.format {
        cfg.format = f;
    }

    if let Some(preset) = cfg.preset {
        apply_preset(&mut cfg, preset, true);
    } else if cfg.pilot_lengths.is_empty() {
        return Err(Error::Config(
            "no pilot lengths: pass --l, --l-range or --preset".into(),
        ));
    }

    cfg.node_limit = opts.node_limit.unwrap_or(if cfg.snr_db.is_none() {
        NOISELESS_NODE_LIMIT
    } else {
        NOISY_NODE_LIMIT
    });
    Ok(cfg)
}

impl RunConfig {
    fn m_set(&mut self, m: usize) {
        self.n_antennas = m;
    }

    fn experiment_spec(&self) -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(self.n_devices, self.n_antennas, self.n_active);
        spec.pilot_lengths = self.pilot_lengths.clone();
        spec.snr_db = self.snr_db;
        spec.trials = self.trials;
        spec.base_seed = self.base_seed;
        spec.solvers = self.solvers.clone();
        spec.node_limit = self.node_limit;
        spec
    }
}

#[derive(Debug, Clone)]
enum Cell {
    U(usize),
    F(f64),
    S(String),
    B(bool),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::U(v) => v.to_string(),
            Cell::F(v) => v.to_string(),
            Cell::S(v) => v.clone(),
            Cell::B(v) => v.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::U(v) => serde_json::json!(v),
            Cell::F(v) => serde_json::json!(v),
            Cell::S(v) => serde_json::json!(v),
            Cell::B(v) => serde_json::json!(v),
            Cell::Empty => serde_json::Value::Null,
        }
    }
}

fn write_table(
    dir: &Path,
    name: &str,
    format: OutputFormat,
    header: &[&str],
    rows: &[Vec<Cell>],
) -> Result<PathBuf> {
    match format {
        OutputFormat::Csv => {
            let path = dir.join(format!("{name}.csv"));
            let mut text = String::new();
            text.push_str(&header.join(","));
            text.push('\n');
            for row in rows {
                let cells: Vec<String> = row.iter().map(Cell::csv).collect();
                text.push_str(&cells.join(","));
                text.push('\n');
            }
            fs::write(&path, text)?;
            Ok(path)
        }
        OutputFormat::Json => {
            let path = dir.join(format!("{name}.json"));
            let objects: Vec<serde_json::Value> = rows
                .iter()
                .map(|row| {
                    let map: serde_json::Map<String, serde_json::Value> = header
                        .iter()
                        .zip(row)
                        .map(|(k, c)| (k.to_string(), c.json()))
                        .collect();
                    serde_json::Value::Object(map)
                })
                .collect();
            let mut text = serde_json::to_string_pretty(&objects).expect("serializable");
            text.push('\n');
            fs::write(&path, text)?;
            Ok(path)
        }
    }
}

fn curve_rows(preset: Option<Preset>, aggs: &[&PointAggregate]) -> (Vec<&'static str>, Vec<Vec<Cell>>) {
    match preset {
        Some(Preset::Fig1) => (
            vec!["L", "success_rate", "trials"],
            aggs.iter()
                .map(|a| {
                    vec![
                        Cell::U(a.pilot_len),
                        Cell::F(a.success_rate),
                        Cell::U(a.trials),
                    ]
                })
                .collect(),
        ),
        Some(Preset::Fig2) | Some(Preset::Fig4) => (
            vec!["L", "nmse_db", "trials"],
            aggs.iter()
                .map(|a| vec![Cell::U(a.pilot_len), Cell::F(a.nmse_db), Cell::U(a.trials)])
                .collect(),
        ),
        _ => (
            vec![
                "L",
                "success_rate",
                "nmse_db",
                "mean_miss",
                "mean_false",
                "trials",
            ],
            aggs.iter()
                .map(|a| {
                    vec![
                        Cell::U(a.pilot_len),
                        Cell::F(a.success_rate),
                        Cell::F(a.nmse_db),
                        Cell::F(a.mean_miss),
                        Cell::F(a.mean_false),
                        Cell::U(a.trials),
                    ]
                })
                .collect(),
        ),
    }
}

fn trial_rows(records: &[TrialRecord]) -> Vec<Vec<Cell>> {
    records
        .iter()
        .map(|r| {
            vec![
                Cell::U(r.pilot_len),
                Cell::U(r.trial),
                Cell::S(r.solver.token().to_string()),
                Cell::F(r.nmse_db),
                Cell::B(r.success),
                Cell::U(r.detect_miss),
                Cell::U(r.detect_false),
                Cell::F(r.runtime_ms),
                Cell::S(r.status.to_string()),
            ]
        })
        .collect()
}

/// Executes a resolved run configuration; returns the files written.
pub fn execute_run(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&cfg.out_dir)?;
    let stem = cfg.preset.map_or("run", |p| p.token());
    let mut files = Vec::new();
    let mut points = Vec::new();

    if cfg.preset == Some(Preset::Fig3) {
        let spec = cfg.experiment_spec();
        let result =
            harness::min_pilot_length(&spec, &cfg.k_range, cfg.success_target, cfg.l_scan_max)?;
        let rows: Vec<Vec<Cell>> = result
            .iter()
            .map(|&(k, lmin)| {
                vec![
                    Cell::U(k),
                    lmin.map_or(Cell::Empty, Cell::U),
                ]
            })
            .collect();
        files.push(write_table(
            &cfg.out_dir,
            stem,
            cfg.format,
            &["K", "L_min"],
            &rows,
        )?);
        for &(k, lmin) in &result {
            points.push(serde_json::json!({
                "k": k,
                "l_min": lmin,
                "trials": cfg.trials,
            }));
        }
    } else {
        let spec = cfg.experiment_spec();
        let outcome = run_sweep(&spec)?;
        for &solver in &cfg.solvers {
            let aggs: Vec<&PointAggregate> = outcome
                .aggregates
                .iter()
                .filter(|a| a.solver == solver)
                .collect();
            let (header, rows) = curve_rows(cfg.preset, &aggs);
            files.push(write_table(
                &cfg.out_dir,
                &format!("{stem}_{}", solver.token()),
                cfg.format,
                &header,
                &rows,
            )?);
            for a in &aggs {
                points.push(serde_json::json!({
                    "pilot_len": a.pilot_len,
                    "solver": a.solver.token(),
                    "trials": a.trials,
                }));
            }
        }
        let trials_header = [
            "L",
            "trial",
            "solver",
            "nmse_db",
            "success",
            "detect_miss",
            "detect_false",
            "runtime_ms",
            "status",
        ];
        files.push(write_table(
            &cfg.out_dir,
            &format!("{stem}_trials"),
            cfg.format,
            &trials_header,
            &trial_rows(&outcome.records),
        )?);
    }

    let trial_seeds: Vec<u64> = (0..cfg.trials)
        .map(|t| harness::trial_seed(cfg.base_seed, t))
        .collect();
    let manifest = serde_json::json!({
        "tool": "jadce",
        "version": env!("CARGO_PKG_VERSION"),
        "command": "run",
        "config": cfg,
        "trial_seeds": trial_seeds,
        "points": points,
        "files": files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect::<Vec<_>>(),
    });
    let manifest_path = cfg.out_dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("serializable");
    text.push('\n');
    fs::write(&manifest_path, text)?;
    files.push(manifest_path);
    Ok(files)
}

/// Report printed by `solve` and `oracle`.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub l: usize,
    pub snr_db: Option<f64>,
    pub seed: u64,
    pub solver: String,
    pub status: String,
    pub objective: Option<usize>,
    pub support: Vec<usize>,
    pub success: bool,
    pub nmse_db: f64,
    pub residual_fro: f64,
    pub nodes_explored: Option<usize>,
    pub iterations: Option<usize>,
    pub runtime_ms: f64,
    pub note: Option<String>,
}

fn solve_instance(
    n: usize,
    k: usize,
    m: usize,
    l: usize,
    snr: Option<f64>,
    seed: u64,
    solver: SolverChoice,
    node_limit: usize,
) -> Result<SolveReport> {
    let sc = generate_scenario(n, m, l, k, snr, seed)?;
    let epsilon = calibrate_epsilon(sc.noise_var, l, m);
    let start = Instant::now();

    let (estimate, support, status, objective, nodes, iterations) = match solver {
        SolverChoice::Bnb => {
            let beta = exact::compute_beta(&sc.pilots, &sc.observation, epsilon);
            let inst = MiqcpInstance::from_complex(&sc.pilots, &sc.observation, epsilon, beta)?;
            let res = exact::bnb_solve(&inst, node_limit)?;
            let status = match res.status {
                ExactStatus::Optimal => "optimal",
                ExactStatus::NodeLimit => "node-limit",
                ExactStatus::Infeasible => "infeasible",
            };
            (
                res.estimate,
                res.support,
                status.to_string(),
                Some(res.objective),
                Some(res.nodes_explored),
                None,
            )
        }
        SolverChoice::Oracle => {
            let beta = exact::compute_beta(&sc.pilots, &sc.observation, epsilon);
            let inst = MiqcpInstance::from_complex(&sc.pilots, &sc.observation, epsilon, beta)?;
            let res = exact::brute_force_min_support(&inst)?;
            let status = match res.status {
                ExactStatus::Optimal => "optimal",
                _ => "infeasible",
            };
            (
                res.estimate,
                res.support,
                status.to_string(),
                Some(res.objective),
                Some(res.nodes_explored),
                None,
            )
        }
        SolverChoice::Grouplasso | SolverChoice::Reweighted => {
            let cfg = ProxConfig::default();
            let solved = match solver {
                SolverChoice::Grouplasso => {
                    prox::solve_constrained(&sc.pilots, &sc.observation, epsilon, &cfg)
                }
                _ => prox::solve_reweighted(&sc.pilots, &sc.observation, epsilon, 5, &cfg),
            };
            let (raw, status, iters) = match solved {
                Ok(r) => {
                    let status = if r.converged { "converged" } else { "max-iter" };
                    let iters = r.iterations;
                    (r.estimate, status.to_string(), iters)
                }
                Err(Error::Convergence { best, .. }) => {
                    (best.estimate, "failed".to_string(), best.iterations)
                }
                Err(e) => return Err(e),
            };
            let gamma0 = default_gamma0(&row_group_norms(&raw));
            let (debiased, support) = debias(&sc.pilots, &sc.observation, &raw, gamma0)?;
            (debiased, support, status, None, None, Some(iters))
        }
    };

    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    let diff = (&estimate - &sc.ground_truth).norm();
    let success = diff <= 1e-5;
    let nmse = if sc.ground_truth.norm() > 0.0 {
        harness::nmse_db(&estimate, &sc.ground_truth)?
    } else if diff == 0.0 {
        harness::NMSE_FLOOR_DB
    } else {
        0.0
    };
    let residual = (&sc.observation - &sc.pilots * &estimate).norm();
    let note = (l <= k).then(|| {
        format!(
            "pilot length L={l} is at most the number of active devices K={k}; \
             exact recovery requires L >= K+1"
        )
    });

    Ok(SolveReport {
        n,
        k,
        m,
        l,
        snr_db: snr,
        seed,
        solver: match solver {
            SolverChoice::Bnb => "bnb",
            SolverChoice::Grouplasso => "grouplasso",
            SolverChoice::Reweighted => "reweighted",
            SolverChoice::Oracle => "oracle",
        }
        .to_string(),
        status,
        objective,
        support,
        success,
        nmse_db: nmse,
        residual_fro: residual,
        nodes_explored: nodes,
        iterations,
        runtime_ms,
        note,
    })
}

fn print_report(report: &SolveReport, json: bool) {
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(report).expect("serializable")
        );
        return;
    }
    let snr = report
        .snr_db
        .map_or("noiseless".to_string(), |s| format!("{s} dB"));
    println!(
        "instance: N={} K={} M={} L={} snr={} seed={}",
        report.n, report.k, report.m, report.l, snr, report.seed
    );
    println!("solver:   {}", report.solver);
    println!("status:   {}", report.status);
    if let Some(obj) = report.objective {
        println!("objective: {obj}   support: {:?}", report.support);
    } else {
        println!("support:  {:?}", report.support);
    }
    println!(
        "nmse:     {:.2} dB   residual: {:.3e}",
        report.nmse_db, report.residual_fro
    );
    println!("success (‖X̂−X*‖_F ≤ 1e-5): {}", report.success);
    if let Some(nodes) = report.nodes_explored {
        println!("nodes:    {nodes}");
    }
    if let Some(iters) = report.iterations {
        println!("iterations: {iters}");
    }
    println!("runtime:  {:.1} ms", report.runtime_ms);
    if let Some(note) = &report.note {
        println!("note:     {note}");
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run(args) => {
            let cfg = resolve_run_config(&args)?;
            let files = execute_run(&cfg)?;
            for f in &files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Cmd::Solve(args) => {
            let node_limit = args.node_limit.unwrap_or(if args.snr.is_none() {
                NOISELESS_NODE_LIMIT
            } else {
                NOISY_NODE_LIMIT
            });
            let report = solve_instance(
                args.n,
                args.k,
                args.m,
                args.l,
                args.snr,
                args.seed,
                args.solver,
                node_limit,
            )?;
            print_report(&report, args.json);
            Ok(())
        }
        Cmd::Oracle(args) => {
            let report = solve_instance(
                args.n,
                args.k,
                args.m,
                args.l,
                args.snr,
                args.seed,
                SolverChoice::Oracle,
                1,
            )?;
            print_report(&report, args.json);
            Ok(())
        }
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) => 2,
                _ => 1,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l_range_parses_inclusive() {
        assert_eq!(parse_l_range("2:5").unwrap(), vec![2, 3, 4, 5]);
        assert!(parse_l_range("5:2").is_err());
        assert!(parse_l_range("0:3").is_err());
        assert!(parse_l_range("abc").is_err());
    }

    #[test]
    fn preset_pins_core_fields() {
        let cfg = RunConfig::preset(Preset::Fig1, PathBuf::from("out"));
        assert_eq!(cfg.n_devices, 30);
        assert_eq!(cfg.n_active, 5);
        assert_eq!(cfg.n_antennas, 2);
        assert_eq!(cfg.trials, 100);
        assert_eq!(cfg.pilot_lengths, (2..=20).collect::<Vec<_>>());
        assert!(cfg.snr_db.is_none());

        let cfg = RunConfig::preset(Preset::Fig4, PathBuf::from("out"));
        assert_eq!(cfg.snr_db, Some(30.0));
        assert_eq!(cfg.pilot_lengths, vec![6, 8, 10, 12, 14, 16, 18, 20]);
    }

    #[test]
    fn config_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(
            &path,
            "# comment\nn = 8\nk = 2\nm = 1\nl = 4,6\ntrials = 3\nseed = 9\nsolvers = bnb\n",
        )
        .unwrap();
        let opts = parse_config_file(&path).unwrap();
        assert_eq!(opts.n, Some(8));
        assert_eq!(opts.l, Some(vec![4, 6]));
        assert_eq!(opts.solvers, Some(vec![SolverKind::Bnb]));

        fs::write(&path, "bogus_key = 1\n").unwrap();
        assert!(parse_config_file(&path).is_err());
        fs::write(&path, "n 8\n").unwrap();
        assert!(parse_config_file(&path).is_err());
    }
}
