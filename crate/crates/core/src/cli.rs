//! Command-line front end: JSON run configs, the `simulate`, `wigner` and
//! `compare` commands, and the artifacts they write.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::ensemble::{
    compare_meanfield, path_distance, run_ensemble, Classification, DivergencePoint, Engine, EnsembleResult,
    EnsembleSpec, SmallState,
};
use crate::error::Error;
use crate::grid::AxisSpec;
use crate::model::{derive_constants, report_from, ModelParams, CLASSICAL_REGIME_THRESHOLD};
use crate::phase_space::WignerGrid;
use crate::qstate::{wigner_transform, GaussianPacket, GridWavefunction, SuperpositionState, WignerSource};
use crate::sampling::{build_smearing, smear, smear_state, NEGATIVITY_TOL};
use crate::sse::SseOptions;
use crate::trajectories::{CouplingSpec, InitialClassicalState};

pub const SCHEMA_VERSION: u32 = 1;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "semiclass", version, about = "Semiclassical pointer/oscillator simulations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an ensemble and write paths, histograms and a summary.
    Simulate(Overrides),
    /// Write raw and smeared Wigner grids with a positivity report.
    Wigner(Overrides),
    /// Compare two configurations (pass --config twice).
    Compare(Overrides),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long = "config", required = true)]
    pub config: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "n-runs")]
    pub n_runs: Option<usize>,
}

/// Failure with its exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseGrid {
    pub q: AxisSpec,
    pub p: AxisSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketSpec {
    /// Complex amplitude `[re, im]`.
    #[serde(default = "unit_amplitude")]
    pub amplitude: [f64; 2],
    pub q0: f64,
    #[serde(default)]
    pub p0: f64,
    pub s: f64,
    #[serde(default)]
    pub phase: f64,
}

fn unit_amplitude() -> [f64; 2] {
    [1.0, 0.0]
}

/// Initial small-particle state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StateSpec {
    Packets(Vec<PacketSpec>),
    /// Packets of width `s` at `-q0` and `+q0`.
    Cat {
        q0: f64,
        s: f64,
        weights: [f64; 2],
    },
    /// Coherent state of the small oscillator.
    Coherent {
        q0: f64,
        #[serde(default)]
        p0: f64,
    },
    /// Oscillator-basis amplitudes `[re, im]`; needs `position_grid`.
    Energy {
        amplitudes: Vec<[f64; 2]>,
    },
    /// CSV of `x,re,im` rows on a uniform power-of-two grid, relative to the
    /// config file.
    GridFile {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: ModelParams,
    pub state: StateSpec,
    #[serde(default)]
    pub classical: InitialClassicalState,
    /// Defaults to `g(X) = lambda X`, `f(x) = x`.
    #[serde(default)]
    pub coupling: Option<CouplingSpec>,
    #[serde(default)]
    pub engine: Engine,
    #[serde(default = "one")]
    pub n_runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub position_grid: Option<AxisSpec>,
    #[serde(default)]
    pub phase_grid: Option<PhaseGrid>,
    #[serde(default = "default_max_points")]
    pub max_points: usize,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    #[serde(default)]
    pub classification: Classification,
    #[serde(default)]
    pub sse: SseOptions,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    /// Coupling strengths for the mean-field divergence sweep in `compare`.
    #[serde(default)]
    pub lambda_sweep: Vec<f64>,
    /// Grid for `wigner`; chosen from the state when absent.
    #[serde(default)]
    pub wigner_grid: Option<PhaseGrid>,
    /// Individual runs written to `paths.csv`.
    #[serde(default = "default_path_columns")]
    pub path_columns: usize,
}

fn one() -> usize {
    1
}
fn default_max_points() -> usize {
    201
}
fn default_bins() -> usize {
    50
}
fn default_n_max() -> usize {
    40
}
fn default_path_columns() -> usize {
    32
}

/// A parsed config with what is needed to anchor errors and reproduce it.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub text: String,
    pub config: RunConfig,
    /// Effective config (after overrides) as JSON.
    pub value: Value,
    pub hash: String,
}

/// 1-based line of the first `"key":` in `text`.
fn key_line(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines().enumerate().find_map(|(i, l)| {
        let pos = l.find(&needle)?;
        l[pos + needle.len()..].trim_start().starts_with(':').then_some(i + 1)
    })
}

fn anchor_key(e: &Error) -> Option<&str> {
    Some(match e {
        Error::InvalidParameter { name, .. } => name.rsplit('.').next().unwrap_or(name),
        Error::StepResolution { .. } => "dt",
        Error::InfiniteSmearing => "lambda",
        Error::Span { .. } | Error::Resolution { .. } => "phase_grid",
        Error::EnergySpan { .. } | Error::Truncation { .. } => "n_max",
        Error::CostGuard { .. } | Error::Leakage { .. } => "position_grid",
        Error::MismatchedGrids(_) => "duration",
        _ => return None,
    })
}

fn is_config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidParameter { .. }
            | Error::Config(_)
            | Error::StepResolution { .. }
            | Error::InfiniteSmearing
            | Error::Span { .. }
            | Error::Resolution { .. }
            | Error::EnergySpan { .. }
            | Error::Truncation { .. }
            | Error::CostGuard { .. }
            | Error::MismatchedGrids(_)
            | Error::EmptyTemplates
    )
}

fn config_error(path: &Path, line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError {
        code: EXIT_CONFIG,
        message: format!("{}:{line}: {msg}", path.display()),
    }
}

impl LoadedConfig {
    fn fail(&self, e: Error) -> CliError {
        if is_config_error(&e) {
            let line = anchor_key(&e).and_then(|k| key_line(&self.text, k)).unwrap_or(1);
            config_error(&self.path, line, e)
        } else {
            runtime_error(e)
        }
    }
}

fn runtime_error(e: Error) -> CliError {
    let message = match &e {
        Error::Run { seed, .. } => format!("{e}; replay with the recorded seed {seed}"),
        _ => e.to_string(),
    };
    CliError {
        code: EXIT_RUNTIME,
        message,
    }
}

/// Reads, parses and validates a config, then applies command-line overrides.
pub fn load_config(path: &Path, ov: &Overrides) -> CliResult<LoadedConfig> {
    let text = fs::read_to_string(path).map_err(|e| config_error(path, 1, format!("cannot read config: {e}")))?;
    parse_config(path, text, ov)
}

/// [`load_config`] on config text; `path` labels messages and anchors
/// relative grid-file paths.
pub fn parse_config(path: &Path, text: String, ov: &Overrides) -> CliResult<LoadedConfig> {
    let mut value: Value = serde_json::from_str(&text).map_err(|e| config_error(path, e.line().max(1), e))?;
    if let Some(obj) = value.as_object_mut() {
        if let Some(s) = ov.seed {
            obj.insert("seed".into(), json!(s));
        }
        if let Some(n) = ov.n_runs {
            obj.insert("n_runs".into(), json!(n));
        }
    }
    let config: RunConfig = serde_json::from_value(value.clone()).map_err(|e| {
        // serde_json reports no position for values; anchor on the field it names
        let msg = e.to_string();
        let line = msg.split('`').nth(1).and_then(|k| key_line(&text, k)).unwrap_or(1);
        config_error(path, line, msg)
    })?;
    let value = serde_json::to_value(&config).expect("config serializes");
    let canonical = serde_json::to_string(&value).expect("value serializes");
    let hash = hex(&Sha256::digest(canonical.as_bytes()));
    let loaded = LoadedConfig {
        path: path.to_path_buf(),
        text,
        config,
        value,
        hash,
    };
    validate_config(&loaded)?;
    Ok(loaded)
}

fn validate_config(c: &LoadedConfig) -> CliResult<()> {
    let cfg = &c.config;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(config_error(
            &c.path,
            key_line(&c.text, "schema_version").unwrap_or(1),
            format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            ),
        ));
    }
    if cfg.n_runs == 0 {
        return Err(config_error(
            &c.path,
            key_line(&c.text, "n_runs").unwrap_or(1),
            "n_runs must be at least 1",
        ));
    }
    cfg.model.validate_structure().map_err(|e| c.fail(e))?;
    derive_constants(&cfg.model).map_err(|e| c.fail(e))?;
    cfg.classical.check().map_err(|e| c.fail(e))?;
    if let Some(coupling) = &cfg.coupling {
        if let Some(l) = coupling.linear_lambda() {
            if l != cfg.model.lambda {
                return Err(config_error(
                    &c.path,
                    key_line(&c.text, "g").unwrap_or(1),
                    format!("coupling slope {l} differs from model.lambda = {}", cfg.model.lambda),
                ));
            }
        }
    }
    for a in [
        cfg.position_grid,
        cfg.phase_grid.map(|g| g.q),
        cfg.phase_grid.map(|g| g.p),
    ]
    .into_iter()
    .flatten()
    {
        a.check().map_err(|e| c.fail(e))?;
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn read_grid_file(path: &Path, hbar: f64) -> crate::Result<GridWavefunction> {
    let text = fs::read_to_string(path)?;
    let mut xs = Vec::new();
    let mut vals = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('x') {
            continue;
        }
        let f: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if f.len() != 3 {
            return Err(Error::Config(format!("{}:{}: expected x,re,im", path.display(), i + 1)));
        }
        xs.push(f[0]);
        vals.push(Complex64::new(f[1], f[2]));
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::Config(format!("{}: fewer than two grid rows", path.display())));
    }
    let axis = AxisSpec::new(xs[0], xs[n - 1], n)?;
    if xs
        .iter()
        .enumerate()
        .any(|(i, &x)| (x - axis.node(i)).abs() > 1e-9 * axis.step())
    {
        return Err(Error::Config(format!("{}: grid is not uniform", path.display())));
    }
    Ok(GridWavefunction::new(axis, vals, hbar)?.normalized())
}

fn build_state(c: &LoadedConfig) -> crate::Result<SmallState> {
    let m = &c.config.model;
    let h = m.hbar;
    Ok(match &c.config.state {
        StateSpec::Packets(ps) => SmallState::Packets(SuperpositionState::new(
            ps.iter()
                .map(|p| {
                    (
                        Complex64::new(p.amplitude[0], p.amplitude[1]),
                        GaussianPacket {
                            q0: p.q0,
                            p0: p.p0,
                            s: p.s,
                            phase: p.phase,
                        },
                    )
                })
                .collect(),
            h,
        )?),
        StateSpec::Cat { q0, s, weights } => {
            SmallState::Packets(SuperpositionState::cat(*q0, *s, weights[0], weights[1], h)?)
        }
        StateSpec::Coherent { q0, p0 } => SmallState::Packets(SuperpositionState::single(
            GaussianPacket::coherent(*q0, *p0, m.mass_small, m.omega, h),
            h,
        )?),
        StateSpec::Energy { amplitudes } => {
            let axis = c
                .config
                .position_grid
                .ok_or_else(|| crate::error::invalid("position_grid", "required for an energy-basis state"))?;
            let amps: Vec<Complex64> = amplitudes.iter().map(|a| Complex64::new(a[0], a[1])).collect();
            SmallState::Grid(GridWavefunction::from_energy_amplitudes(
                axis,
                &amps,
                m.mass_small,
                m.omega,
                h,
            )?)
        }
        StateSpec::GridFile { path } => {
            let base = c.path.parent().unwrap_or(Path::new("."));
            SmallState::Grid(read_grid_file(&base.join(path), h)?)
        }
    })
}

/// Ensemble specification described by a config.
pub fn build_spec(c: &LoadedConfig) -> CliResult<EnsembleSpec> {
    let cfg = &c.config;
    let state = build_state(c).map_err(|e| c.fail(e))?;
    let coupling = cfg
        .coupling
        .clone()
        .unwrap_or_else(|| CouplingSpec::linear(cfg.model.lambda));
    let mut spec = EnsembleSpec::new(cfg.model, coupling, state, cfg.engine);
    spec.init = cfg.classical;
    spec.n_runs = cfg.n_runs;
    spec.seed = cfg.seed;
    spec.position_grid = cfg.position_grid;
    spec.phase_grid = cfg.phase_grid.map(|g| (g.q, g.p));
    spec.max_points = cfg.max_points;
    spec.histogram_bins = cfg.histogram_bins;
    spec.sse = cfg.sse;
    spec.n_max = cfg.n_max;
    spec.classification = cfg.classification;
    Ok(spec)
}

/// Formats floats with 17 significant digits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv(header: &[String], cols: &[Vec<f64>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    let rows = cols.iter().map(Vec::len).max().unwrap_or(0);
    for r in 0..rows {
        let line: Vec<String> = cols
            .iter()
            .map(|c| c.get(r).map_or(String::new(), |&v| num(v)))
            .collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl Artifacts {
    fn new(dir: PathBuf) -> CliResult<Self> {
        fs::create_dir_all(&dir).map_err(|e| runtime_error(e.into()))?;
        Ok(Self { dir, files: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        fs::write(self.dir.join(name), contents).map_err(|e| runtime_error(e.into()))?;
        self.files
            .push((name.to_string(), hex(&Sha256::digest(contents.as_bytes()))));
        Ok(())
    }

    fn json(&mut self, name: &str, v: &impl Serialize) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(v).expect("serializable");
        s.push('\n');
        self.write(name, &s)
    }

    /// Writes `manifest.json` listing every artifact written so far.
    fn finish(mut self, mut manifest: Value) -> CliResult<PathBuf> {
        manifest["tool"] = json!("semiclass");
        manifest["version"] = json!(env!("CARGO_PKG_VERSION"));
        manifest["files"] = Value::Array(
            self.files
                .iter()
                .map(|(n, h)| json!({ "name": n, "sha256": h }))
                .collect(),
        );
        let files = std::mem::take(&mut self.files);
        self.json("manifest.json", &manifest)?;
        self.files = files;
        Ok(self.dir)
    }
}

fn out_dir(c: &LoadedConfig, ov: &Overrides) -> PathBuf {
    ov.out
        .clone()
        .or_else(|| c.config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn schema() -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "float_format": "scientific, 17 significant digits",
        "paths.csv": {
            "t": "time",
            "mean_q": "ensemble mean of Q(t)",
            "var_q": "ensemble variance of Q(t)",
            "template_<k>": "noiseless branch k",
            "run_<i>": "Q(t) of run i"
        },
        "runs.csv": {
            "index": "run index",
            "seed": "run seed; replays the run on its own",
            "q0": "sampled small-particle position (level energy for the energy engine)",
            "p0": "sampled small-particle momentum",
            "final_q": "Q at the final time",
            "final_p": "P at the final time",
            "label": "branch label, -1 if unclassified or unlabelled",
            "distance": "time-averaged L2 distance to the nearest template",
            "diagnostic": "largest norm defect (sse) or edge probability (meanfield)"
        },
        "histograms.csv": {
            "bin_lo": "lower bin edge of final Q",
            "bin_hi": "upper bin edge",
            "count": "runs in the bin"
        },
        "energy_weight.csv": { "ebar": "measured energy", "w": "weight density" },
        "wigner.csv": { "q": "position", "p": "momentum", "raw": "Wigner function", "smeared": "smeared Wigner function" },
        "compare.csv": {
            "kind": "divergence | sweep | branch_fraction",
            "key": "a-vs-b, coupling strength, or branch index",
            "value": "divergence or fraction difference",
            "error": "Monte Carlo error of value",
            "a": "value for config A (fractions)",
            "b": "value for config B (fractions)"
        }
    })
}

#[derive(Debug, Clone, Serialize)]
struct SimulateSummary<'a> {
    engine: Engine,
    n_runs: usize,
    master_seed: u64,
    config_hash: &'a str,
    final_q: &'a crate::ensemble::Moments,
    branch_fractions: Option<&'a [f64]>,
    branch_std_errors: Option<&'a [f64]>,
    branch_counts: Option<&'a [u64]>,
    unclassified_fraction: Option<f64>,
    classification_threshold: Option<f64>,
    energy_table: &'a [crate::energy::BranchFrequency],
    max_diagnostic: f64,
    warnings: &'a [String],
}

/// Pretty-printed `summary.json` contents for an ensemble.
pub fn summary_json(r: &EnsembleResult, hash: &str) -> String {
    let b = r.branches.as_ref();
    let mut s = serde_json::to_string_pretty(&SimulateSummary {
        engine: r.engine,
        n_runs: r.n_runs,
        master_seed: r.master_seed,
        config_hash: hash,
        final_q: &r.final_q,
        branch_fractions: b.map(|b| b.fractions.as_slice()),
        branch_std_errors: b.map(|b| b.std_errors.as_slice()),
        branch_counts: b.map(|b| b.counts.as_slice()),
        unclassified_fraction: b.map(|b| b.unclassified_fraction),
        classification_threshold: b.map(|b| b.threshold),
        energy_table: &r.energy_table,
        max_diagnostic: r.runs.iter().map(|x| x.diagnostic).fold(0.0, f64::max),
        warnings: &r.warnings,
    })
    .expect("serializable");
    s.push('\n');
    s
}

fn write_ensemble(art: &mut Artifacts, r: &EnsembleResult, hash: &str, path_columns: usize) -> CliResult<()> {
    art.write("summary.json", &summary_json(r, hash))?;

    let mut header = vec!["t".to_string(), "mean_q".into(), "var_q".into()];
    let mut cols = vec![r.t.clone(), r.mean_q.clone(), r.var_q.clone()];
    for (k, tpl) in r.templates.iter().enumerate() {
        header.push(format!("template_{k}"));
        cols.push(tpl.clone());
    }
    for (i, p) in r.paths.iter().take(path_columns).enumerate() {
        header.push(format!("run_{i}"));
        cols.push(p.clone());
    }
    art.write("paths.csv", &csv(&header, &cols))?;

    let mut runs = String::from("index,seed,q0,p0,final_q,final_p,label,distance,diagnostic\n");
    for x in &r.runs {
        let _ = writeln!(
            runs,
            "{},{},{},{},{},{},{},{},{}",
            x.index,
            x.seed,
            num(x.q0),
            num(x.p0),
            num(x.final_q),
            num(x.final_p),
            x.label.map_or(-1, |l| l as i64),
            num(x.distance.unwrap_or(f64::NAN)),
            num(x.diagnostic)
        );
    }
    art.write("runs.csv", &runs)?;

    let h = &r.histogram;
    let mut hist = String::from("bin_lo,bin_hi,count\n");
    for (k, c) in h.counts.iter().enumerate() {
        let _ = writeln!(hist, "{},{},{c}", num(h.edges[k]), num(h.edges[k + 1]));
    }
    art.write("histograms.csv", &hist)?;

    if let Some(e) = &r.energy {
        if !e.weight.is_empty() {
            art.write(
                "energy_weight.csv",
                &csv(&["ebar".into(), "w".into()], &[e.ebar.clone(), e.weight.clone()]),
            )?;
        }
    }
    art.json("schema.json", &schema())
}

fn base_manifest(c: &LoadedConfig, command: &str) -> Value {
    let consts = derive_constants(&c.config.model).ok();
    let report = consts
        .as_ref()
        .map(|k| report_from(&c.config.model, k, CLASSICAL_REGIME_THRESHOLD));
    json!({
        "command": command,
        "config_path": c.path.display().to_string(),
        "config_hash": c.hash,
        "config": c.value,
        "master_seed": c.config.seed,
        "derived_constants": consts,
        "validation": report,
    })
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError {
            code: EXIT_CONFIG,
            message: "--threads must be at least 1".into(),
        }),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError {
                    code: EXIT_RUNTIME,
                    message: e.to_string(),
                })?;
            Ok(pool.install(f))
        }
    }
}

fn single_config<'a>(ov: &'a Overrides, cmd: &str) -> CliResult<&'a Path> {
    match ov.config.as_slice() {
        [p] => Ok(p),
        _ => Err(CliError {
            code: EXIT_CONFIG,
            message: format!("{cmd} takes exactly one --config"),
        }),
    }
}

/// Runs the configured engine; returns the artifact directory.
pub fn cmd_simulate(ov: &Overrides, threads: Option<usize>) -> CliResult<PathBuf> {
    let c = load_config(single_config(ov, "simulate")?, ov)?;
    let spec = build_spec(&c)?;
    let result = with_threads(threads, || run_ensemble(&spec))?.map_err(|e| c.fail(e))?;
    let mut art = Artifacts::new(out_dir(&c, ov))?;
    write_ensemble(&mut art, &result, &c.hash, c.config.path_columns)?;
    let mut m = base_manifest(&c, "simulate");
    m["engine"] = json!(result.engine);
    m["run_seeds"] = json!(result.seeds());
    m["smearing"] = json!(result.smearing);
    m["warnings"] = json!(result.warnings);
    art.finish(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub raw_min: f64,
    pub raw_max: f64,
    pub raw_integral: f64,
    pub smeared_min: Option<f64>,
    pub smeared_integral: Option<f64>,
    /// `sqrt(det cov)` of the smearing kernel.
    pub sqrt_det_cov: Option<f64>,
    pub hbar_half: f64,
    /// Smeared minimum is nonnegative up to round-off.
    pub smeared_positive: Option<bool>,
}

fn wigner_grid_for(c: &LoadedConfig, state: &SmallState, cov: [[f64; 2]; 2]) -> crate::Result<PhaseGrid> {
    if let Some(g) = c.config.wigner_grid {
        return Ok(g);
    }
    let h = c.config.model.hbar;
    match state {
        SmallState::Packets(s) => {
            let (mut qlo, mut qhi, mut plo, mut phi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
            let (mut dq, mut dp) = (0.0f64, 0.0f64);
            for (_, a) in &s.terms {
                // wide enough for the smeared function too
                let sq = (a.s * a.s + cov[0][0]).sqrt();
                let sp = ((h / (2.0 * a.s)).powi(2) + cov[1][1]).sqrt();
                qlo = qlo.min(a.q0 - 8.0 * sq);
                qhi = qhi.max(a.q0 + 8.0 * sq);
                plo = plo.min(a.p0 - 8.0 * sp);
                phi = phi.max(a.p0 + 8.0 * sp);
                for (_, b) in &s.terms {
                    dq = dq.max((a.q0 - b.q0).abs());
                    dp = dp.max((a.p0 - b.p0).abs());
                }
            }
            // interference fringes have period 2 pi hbar / separation
            let nodes = |range: f64, sep: f64| {
                let fringe = if sep > 0.0 {
                    range * sep / (2.0 * std::f64::consts::PI * h)
                } else {
                    0.0
                };
                ((16.0 * fringe).ceil() as usize).clamp(201, 2001)
            };
            Ok(PhaseGrid {
                q: AxisSpec::new(qlo, qhi, nodes(qhi - qlo, dp))?,
                p: AxisSpec::new(plo, phi, nodes(phi - plo, dq))?,
            })
        }
        SmallState::Grid(g) => {
            let (t, p) = g.kinetic_and_momentum(c.config.model.mass_small);
            let rms = (2.0 * c.config.model.mass_small * t).sqrt();
            let half = p.abs() + 8.0 * rms.max(h / (g.axis.max - g.axis.min));
            Ok(PhaseGrid {
                q: g.axis,
                p: AxisSpec::symmetric(half, 256)?,
            })
        }
    }
}

fn wigner_grids(c: &LoadedConfig, state: &SmallState) -> crate::Result<(WignerGrid, Option<(WignerGrid, f64)>)> {
    let kernel = if c.config.model.lambda == 0.0 {
        None
    } else {
        Some(build_smearing(&c.config.model, &derive_constants(&c.config.model)?)?)
    };
    let grid = wigner_grid_for(c, state, kernel.as_ref().map_or([[0.0; 2]; 2], |k| k.cov))?;
    let raw = match state {
        SmallState::Packets(s) => wigner_transform(WignerSource::Analytic { state: s, q: grid.q }, grid.p)?,
        SmallState::Grid(g) => wigner_transform(WignerSource::Grid(g), grid.p)?,
    };
    let Some(kernel) = kernel else {
        return Ok((raw, None));
    };
    let smeared = match state {
        SmallState::Packets(s) => smear_state(s, &kernel).sample_grid(raw.q, raw.p),
        SmallState::Grid(_) => smear(&raw, &kernel)?,
    };
    Ok((raw, Some((smeared, kernel.det().sqrt()))))
}

/// Raw and smeared Wigner grids of the configured state.
pub fn cmd_wigner(ov: &Overrides, threads: Option<usize>) -> CliResult<(PathBuf, PositivityReport)> {
    let c = load_config(single_config(ov, "wigner")?, ov)?;
    let state = build_state(&c).map_err(|e| c.fail(e))?;
    let (raw, smeared) = with_threads(threads, || wigner_grids(&c, &state))?.map_err(|e| c.fail(e))?;
    let report = PositivityReport {
        raw_min: raw.min(),
        raw_max: raw.max(),
        raw_integral: raw.integral(),
        smeared_min: smeared.as_ref().map(|s| s.0.min()),
        smeared_integral: smeared.as_ref().map(|s| s.0.integral()),
        sqrt_det_cov: smeared.as_ref().map(|s| s.1),
        hbar_half: c.config.model.hbar / 2.0,
        smeared_positive: smeared
            .as_ref()
            .map(|s| s.0.min() >= -NEGATIVITY_TOL * s.0.max().max(1.0)),
    };
    let mut art = Artifacts::new(out_dir(&c, ov))?;
    let mut body = String::from("q,p,raw,smeared\n");
    for (k, (q, p, w)) in raw.rows().enumerate() {
        let s = smeared.as_ref().map_or(f64::NAN, |s| s.0.values[k]);
        let _ = writeln!(body, "{},{},{},{}", num(q), num(p), num(w), num(s));
    }
    art.write("wigner.csv", &body)?;
    art.json("summary.json", &report)?;
    art.json("schema.json", &schema())?;
    let m = base_manifest(&c, "wigner");
    let dir = art.finish(m)?;
    Ok((dir, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub config_hash_a: String,
    pub config_hash_b: String,
    pub divergence: f64,
    pub divergence_error: f64,
    pub fractions_a: Vec<f64>,
    pub fractions_b: Vec<f64>,
    pub joint_errors: Vec<f64>,
    /// Every branch fraction agrees within 5 joint standard errors.
    pub fractions_agree: Option<bool>,
    pub sweep: Vec<DivergencePoint>,
    /// Sweep divergence decreases with the coupling strength.
    pub sweep_monotone: Option<bool>,
}

/// Compares the ensembles of two configs, and runs config A's mean-field
/// sweep if it lists one.
pub fn cmd_compare(ov: &Overrides, threads: Option<usize>) -> CliResult<(PathBuf, CompareReport)> {
    let [pa, pb] = ov.config.as_slice() else {
        return Err(CliError {
            code: EXIT_CONFIG,
            message: "compare takes exactly two --config".into(),
        });
    };
    let a = load_config(pa, ov)?;
    let b = load_config(pb, ov)?;
    let (ma, mb) = (&a.config.model, &b.config.model);
    if ma.dt != mb.dt || ma.duration != mb.duration || a.config.max_points != b.config.max_points {
        return Err(b.fail(Error::MismatchedGrids(format!(
            "A has dt = {}, duration = {}, max_points = {}; B has dt = {}, duration = {}, max_points = {}",
            ma.dt, ma.duration, a.config.max_points, mb.dt, mb.duration, b.config.max_points
        ))));
    }
    let sa = build_spec(&a)?;
    let sb = build_spec(&b)?;
    let (ra, rb, sweep) = with_threads(threads, || {
        let ra = run_ensemble(&sa).map_err(|e| a.fail(e))?;
        let rb = run_ensemble(&sb).map_err(|e| b.fail(e))?;
        let sweep = if a.config.lambda_sweep.is_empty() {
            Vec::new()
        } else {
            compare_meanfield(&sa, &a.config.lambda_sweep).map_err(|e| a.fail(e))?
        };
        Ok::<_, CliError>((ra, rb, sweep))
    })??;

    let (divergence, divergence_error) = if ra.mean_q.is_empty() || rb.mean_q.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let se: Vec<f64> = ra
            .var_q
            .iter()
            .zip(&rb.var_q)
            .map(|(va, vb)| (va / ra.n_runs as f64 + vb / rb.n_runs as f64).sqrt())
            .collect();
        (
            path_distance(&ra.t, &ra.mean_q, &rb.mean_q),
            path_distance(&ra.t, &se, &vec![0.0; se.len()]),
        )
    };
    let fa = ra.branches.as_ref().map(|x| x.fractions.clone()).unwrap_or_default();
    let fb = rb.branches.as_ref().map(|x| x.fractions.clone()).unwrap_or_default();
    let (joint, agree) = match (&ra.branches, &rb.branches) {
        (Some(x), Some(y)) if x.fractions.len() == y.fractions.len() => {
            let j: Vec<f64> = x
                .std_errors
                .iter()
                .zip(&y.std_errors)
                .map(|(u, v)| (u * u + v * v).sqrt())
                .collect();
            let ok = fa.iter().zip(&fb).zip(&j).all(|((u, v), e)| (u - v).abs() <= 5.0 * e);
            (j, Some(ok))
        }
        _ => (Vec::new(), None),
    };
    let sweep_monotone = (!sweep.is_empty()).then(|| {
        let mut pts: Vec<&DivergencePoint> = sweep.iter().collect();
        pts.sort_by(|x, y| x.lambda.total_cmp(&y.lambda));
        pts.windows(2).all(|w| w[0].divergence <= w[1].divergence)
    });
    let report = CompareReport {
        config_hash_a: a.hash.clone(),
        config_hash_b: b.hash.clone(),
        divergence,
        divergence_error,
        fractions_a: fa,
        fractions_b: fb,
        joint_errors: joint,
        fractions_agree: agree,
        sweep,
        sweep_monotone,
    };

    let mut body = String::from("kind,key,value,error,a,b\n");
    let _ = writeln!(
        body,
        "divergence,a-vs-b,{},{},,",
        num(divergence),
        num(divergence_error)
    );
    for p in &report.sweep {
        let _ = writeln!(
            body,
            "sweep,{},{},{},,",
            num(p.lambda),
            num(p.divergence),
            num(p.mc_error)
        );
    }
    for (k, e) in report.joint_errors.iter().enumerate() {
        let (x, y) = (report.fractions_a[k], report.fractions_b[k]);
        let _ = writeln!(
            body,
            "branch_fraction,{k},{},{},{},{}",
            num(x - y),
            num(*e),
            num(x),
            num(y)
        );
    }
    let mut art = Artifacts::new(out_dir(&a, ov))?;
    art.write("compare.csv", &body)?;
    art.json("summary.json", &report)?;
    art.json("schema.json", &schema())?;
    let mut m = base_manifest(&a, "compare");
    m["config_b"] = b.value.clone();
    m["config_hash_b"] = json!(b.hash);
    m["run_seeds_a"] = json!(ra.seeds());
    m["run_seeds_b"] = json!(rb.seeds());
    let dir = art.finish(m)?;
    Ok((dir, report))
}

/// Dispatches a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Simulate(ov) => cmd_simulate(ov, cli.threads).map(|d| format!("wrote {}", d.display())),
        Command::Wigner(ov) => cmd_wigner(ov, cli.threads).map(|(d, r)| {
            let mut s = format!("normalization raw = {:.12}", r.raw_integral);
            if let Some(x) = r.smeared_integral {
                let _ = write!(s, ", smeared = {x:.12}");
            }
            let _ = write!(s, "\nmin raw = {:.6e}", r.raw_min);
            if let Some(x) = r.smeared_min {
                let _ = write!(s, ", min smeared = {x:.6e}");
            }
            let _ = write!(s, "\nwrote {}", d.display());
            s
        }),
        Command::Compare(ov) => cmd_compare(ov, cli.threads).map(|(d, r)| {
            format!(
                "divergence = {:.6e} +/- {:.6e}\nwrote {}",
                r.divergence,
                r.divergence_error,
                d.display()
            )
        }),
    };
    match outcome {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
