//! Monte Carlo ensembles over the branch, stochastic-Schrödinger, energy and
//! mean-field engines; branch classification; mean-field divergence sweeps.
//!
//! Run `i` of an ensemble with master seed `s` uses seed `run_seed(s, i)` and
//! nothing else, and aggregates are folded in run-index order, so results are
//! identical for any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{run_energy_ensemble, BranchFrequency, EnergyBranchSet, EnergyEnsembleSpec};
use crate::error::{invalid, Error, Result};
use crate::grid::AxisSpec;
use crate::model::{derive_constants, DerivedConstants, ModelParams};
use crate::phase_space::WignerGrid;
use crate::qstate::{wigner_transform, GridWavefunction, SuperpositionState, WignerSource};
use crate::rng;
use crate::sampling::{build_smearing, smear, smear_state, GridSampler, SmearingKernel};
use crate::sse::{coupled_run, SseOptions};
use crate::trajectories::{
    integrate_branch, integrate_meanfield, thin_indices, BranchNoise, ClassicalPath, CouplingSpec,
    InitialClassicalState, Poly, STREAM_PHASE,
};

/// Multiple of the calibration RMS spread used as the default threshold.
pub const THRESHOLD_FACTOR: f64 = 3.0;
/// Unclassified fraction above which a warning is attached.
pub const UNCLASSIFIED_WARNING: f64 = 0.1;
/// Phase-space sampling grid: nodes per standard deviation of the narrowest
/// smeared component, and the padding in standard deviations.
const SAMPLE_NODES_PER_SD: f64 = 8.0;
const SAMPLE_PAD_SD: f64 = 10.0;
const SAMPLE_MAX_NODES: usize = 2049;
/// Calibration runs draw from a separate seed family.
const CALIBRATION_SALT: u64 = 0xC0FF_EE00_D15C_A11B;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    #[default]
    PhaseSpace,
    Sse,
    #[serde(rename = "meanfield")]
    MeanField,
    Energy,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SmallState {
    Packets(SuperpositionState),
    Grid(GridWavefunction),
}

impl SmallState {
    fn on_grid(&self, axis: Option<AxisSpec>) -> Result<GridWavefunction> {
        match self {
            SmallState::Grid(g) => Ok(g.clone()),
            SmallState::Packets(s) => {
                let axis = axis.ok_or_else(|| invalid("position_grid", "required by this engine for packet states"))?;
                s.to_grid(axis)
            }
        }
    }

    fn mean(&self) -> (f64, f64) {
        match self {
            SmallState::Packets(s) => s.mean_position_momentum(),
            SmallState::Grid(g) => (g.expect_position_fn(|x| x), g.kinetic_and_momentum(1.0).1),
        }
    }
}

/// How runs are labelled by branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    /// No labels.
    Off,
    /// Threshold from single-branch calibration runs.
    Auto {
        calibration_runs: usize,
    },
    Threshold(f64),
}

impl Default for Classification {
    fn default() -> Self {
        Classification::Auto { calibration_runs: 32 }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub params: ModelParams,
    pub coupling: CouplingSpec,
    pub init: InitialClassicalState,
    pub state: SmallState,
    pub engine: Engine,
    pub n_runs: usize,
    pub seed: u64,
    /// Position grid for the engines that evolve a wavefunction.
    pub position_grid: Option<AxisSpec>,
    /// Sampling grid for the phase-space engine; chosen from the state when absent.
    pub phase_grid: Option<(AxisSpec, AxisSpec)>,
    /// Stored points per path.
    pub max_points: usize,
    pub histogram_bins: usize,
    pub sse: SseOptions,
    /// Highest oscillator level for the energy engine.
    pub n_max: usize,
    pub classification: Classification,
}

impl EnsembleSpec {
    pub fn new(params: ModelParams, coupling: CouplingSpec, state: SmallState, engine: Engine) -> Self {
        Self {
            params,
            coupling,
            init: InitialClassicalState::default(),
            state,
            engine,
            n_runs: 1,
            seed: 0,
            position_grid: None,
            phase_grid: None,
            max_points: 201,
            histogram_bins: 50,
            sse: SseOptions::default(),
            n_max: 40,
            classification: Classification::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub index: usize,
    pub seed: u64,
    /// Sampled small-particle initial data (level energy for the energy engine).
    pub q0: f64,
    pub p0: f64,
    pub final_q: f64,
    pub final_p: f64,
    pub label: Option<usize>,
    /// Distance to the nearest template, if any.
    pub distance: Option<f64>,
    /// Engine-specific health figure: largest SSE norm defect, else 0.
    pub diagnostic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub mean_std_error: f64,
    /// Standard error of the variance under a normal approximation.
    pub variance_std_error: f64,
}

impl Moments {
    pub fn of(x: &[f64]) -> Self {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        let variance = if x.len() > 1 { m2 / (n - 1.0) } else { 0.0 };
        Self {
            mean,
            variance,
            mean_std_error: (variance / n).sqrt(),
            variance_std_error: ((m4 - variance * variance).max(0.0) / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn of(x: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0u64; bins];
        for &v in x {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Self {
            edges: (0..=bins).map(|k| lo + width * k as f64).collect(),
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchReport {
    pub labels: Vec<Option<usize>>,
    /// Fractions over classified runs.
    pub fractions: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub counts: Vec<u64>,
    pub unclassified_fraction: f64,
    pub threshold: f64,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub engine: Engine,
    pub master_seed: u64,
    pub n_runs: usize,
    pub runs: Vec<RunSummary>,
    /// Stored time nodes shared by `paths`, `mean_q`, `var_q` and `templates`.
    pub t: Vec<f64>,
    pub paths: Vec<Vec<f64>>,
    pub mean_q: Vec<f64>,
    pub var_q: Vec<f64>,
    pub final_q: Moments,
    pub histogram: Histogram,
    pub templates: Vec<Vec<f64>>,
    pub branches: Option<BranchReport>,
    pub smearing: Option<SmearingKernel>,
    pub energy: Option<EnergyBranchSet>,
    pub energy_table: Vec<BranchFrequency>,
    pub warnings: Vec<String>,
}

impl EnsembleResult {
    pub fn seeds(&self) -> Vec<u64> {
        self.runs.iter().map(|r| r.seed).collect()
    }
}

/// Time-averaged L2 distance `sqrt((1/T) int (a - b)^2 dt)` by the trapezoid rule.
pub fn path_distance(t: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let n = t.len().min(a.len()).min(b.len());
    if n < 2 {
        return a.first().zip(b.first()).map_or(f64::NAN, |(x, y)| (x - y).abs());
    }
    let mut acc = 0.0;
    for k in 1..n {
        let d0 = (a[k - 1] - b[k - 1]).powi(2);
        let d1 = (a[k] - b[k]).powi(2);
        acc += 0.5 * (t[k] - t[k - 1]) * (d0 + d1);
    }
    (acc / (t[n - 1] - t[0])).sqrt()
}

/// Labels each run by the template it is within `threshold` of. Runs beyond
/// the threshold of every template, or within it of several, stay
/// unclassified. `distances[i][k]` is run `i`'s distance to template `k`.
pub fn classify_distances(distances: &[Vec<f64>], n_templates: usize, threshold: f64) -> Result<BranchReport> {
    if n_templates == 0 {
        return Err(Error::EmptyTemplates);
    }
    let labels: Vec<Option<usize>> = distances
        .iter()
        .map(|d| {
            let mut within = d.iter().enumerate().filter(|(_, &x)| x <= threshold);
            match (within.next(), within.next()) {
                (Some((k, _)), None) => Some(k),
                _ => None,
            }
        })
        .collect();
    Ok(report_from_labels(labels, n_templates, threshold))
}

fn report_from_labels(labels: Vec<Option<usize>>, n_templates: usize, threshold: f64) -> BranchReport {
    let mut counts = vec![0u64; n_templates];
    for l in labels.iter().flatten() {
        counts[*l] += 1;
    }
    let classified: u64 = counts.iter().sum();
    let n = labels.len().max(1) as f64;
    let unclassified_fraction = 1.0 - classified as f64 / n;
    let nc = classified.max(1) as f64;
    let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / nc).collect();
    let std_errors = fractions.iter().map(|f| (f * (1.0 - f) / nc).sqrt()).collect();
    let warning = (unclassified_fraction > UNCLASSIFIED_WARNING).then(|| {
        format!(
            "{:.1}% of runs are unclassified at threshold {threshold:.3e}; branches are not well separated",
            100.0 * unclassified_fraction
        )
    });
    BranchReport {
        labels,
        fractions,
        std_errors,
        counts,
        unclassified_fraction,
        threshold,
        warning,
    }
}

/// [`classify_distances`] on full paths.
pub fn classify_branches(paths: &[ClassicalPath], templates: &[ClassicalPath], threshold: f64) -> Result<BranchReport> {
    if templates.is_empty() {
        return Err(Error::EmptyTemplates);
    }
    let d: Vec<Vec<f64>> = paths
        .iter()
        .map(|p| {
            templates
                .iter()
                .map(|t| path_distance(&p.t, &p.q_large, &t.q_large))
                .collect()
        })
        .collect();
    classify_distances(&d, templates.len(), threshold)
}

struct Context {
    consts: DerivedConstants,
    kernel: Option<SmearingKernel>,
    sampler: Option<GridSampler>,
    psi: Option<GridWavefunction>,
    keep: Vec<usize>,
    templates: Vec<ClassicalPath>,
}

struct RunOutput {
    summary: RunSummary,
    path: Vec<f64>,
    distances: Vec<f64>,
}

fn auto_phase_grid(state: &SuperpositionState, kernel: &SmearingKernel) -> Result<(AxisSpec, AxisSpec)> {
    let h = state.hbar;
    let mut q_rng = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY);
    let mut p_rng = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY);
    for (_, pk) in &state.terms {
        let sq = (pk.s * pk.s + kernel.cov[0][0]).sqrt();
        let sp = ((h / (2.0 * pk.s)).powi(2) + kernel.cov[1][1]).sqrt();
        q_rng = (
            q_rng.0.min(pk.q0 - SAMPLE_PAD_SD * sq),
            q_rng.1.max(pk.q0 + SAMPLE_PAD_SD * sq),
            q_rng.2.min(sq),
        );
        p_rng = (
            p_rng.0.min(pk.p0 - SAMPLE_PAD_SD * sp),
            p_rng.1.max(pk.p0 + SAMPLE_PAD_SD * sp),
            p_rng.2.min(sp),
        );
    }
    let axis = |(lo, hi, sd): (f64, f64, f64)| {
        let n = (((hi - lo) / sd * SAMPLE_NODES_PER_SD).ceil() as usize + 1).clamp(64, SAMPLE_MAX_NODES);
        AxisSpec::new(lo, hi, n)
    };
    Ok((axis(q_rng)?, axis(p_rng)?))
}

fn phase_sampler(spec: &EnsembleSpec, kernel: &SmearingKernel) -> Result<GridSampler> {
    let grid: WignerGrid = match &spec.state {
        SmallState::Packets(s) => {
            let (q, p) = match spec.phase_grid {
                Some(g) => g,
                None => auto_phase_grid(s, kernel)?,
            };
            smear_state(s, kernel).sample_grid(q, p)
        }
        SmallState::Grid(g) => {
            let (_, p) = spec
                .phase_grid
                .ok_or_else(|| invalid("phase_grid", "required by the phase-space engine for gridded states"))?;
            let raw = wigner_transform(WignerSource::Grid(g), p)?;
            smear(&raw, kernel)?
        }
    };
    GridSampler::new(&grid)
}

/// The coordinate runs are clustered on: the large particle for the branch
/// engines, the small particle's position expectation for the stochastic
/// Schrödinger engine, where it is the quantity that localizes.
fn branch_coordinate(engine: Engine, path: &ClassicalPath) -> &[f64] {
    match engine {
        Engine::Sse => &path.q_small,
        _ => &path.q_large,
    }
}

fn templates_for(spec: &EnsembleSpec, consts: &DerivedConstants) -> Result<Vec<ClassicalPath>> {
    let SmallState::Packets(state) = &spec.state else {
        return Ok(Vec::new());
    };
    if !matches!(spec.engine, Engine::PhaseSpace | Engine::Sse) || spec.classification == Classification::Off {
        return Ok(Vec::new());
    }
    let init = InitialClassicalState { cov: None, ..spec.init };
    state
        .terms
        .iter()
        .map(|(_, pk)| {
            integrate_branch(
                &init,
                (pk.q0, pk.p0),
                &spec.coupling,
                &spec.params,
                consts,
                spec.seed,
                BranchNoise::Off,
            )
        })
        .collect()
}

fn prepare(spec: &EnsembleSpec) -> Result<Context> {
    spec.params.validate_structure()?;
    spec.init.check()?;
    if spec.n_runs == 0 {
        return Err(invalid("n_runs", "must be at least 1"));
    }
    let consts = derive_constants(&spec.params)?;
    let n = spec.params.n_steps();
    let keep = thin_indices(n + 1, spec.max_points);
    let (kernel, sampler, psi) = match spec.engine {
        Engine::PhaseSpace if spec.params.lambda != 0.0 => {
            let k = build_smearing(&spec.params, &consts)?;
            let s = phase_sampler(spec, &k)?;
            (Some(k), Some(s), None)
        }
        Engine::PhaseSpace => (None, None, None),
        Engine::Sse | Engine::MeanField | Engine::Energy => (None, None, Some(spec.state.on_grid(spec.position_grid)?)),
    };
    let templates = templates_for(spec, &consts)?;
    Ok(Context {
        consts,
        kernel,
        sampler,
        psi,
        keep,
        templates,
    })
}

fn run_one(spec: &EnsembleSpec, ctx: &Context, index: usize, seed: u64) -> Result<RunOutput> {
    let (path, diagnostic) = match spec.engine {
        Engine::PhaseSpace => {
            let (sample, noise) = match (&ctx.sampler, &ctx.kernel) {
                (Some(s), Some(k)) => {
                    let x = s.sample(&mut rng::stream(seed, STREAM_PHASE));
                    ((x.q0, x.p0), BranchNoise::ForceAndRecord(k))
                }
                // no coupling: the small particle cannot act on Q, so its
                // mean stands in for a phase-space sample
                _ => (spec.state.mean(), BranchNoise::Force),
            };
            let p = integrate_branch(
                &spec.init,
                sample,
                &spec.coupling,
                &spec.params,
                &ctx.consts,
                seed,
                noise,
            )?;
            (p, 0.0)
        }
        Engine::Sse => {
            let psi = ctx.psi.as_ref().expect("prepared");
            let r = coupled_run(
                psi,
                &spec.init,
                &spec.coupling,
                &spec.params,
                &ctx.consts,
                seed,
                spec.sse,
                2,
            )?;
            (r.path, r.state.max_norm_error)
        }
        Engine::MeanField => {
            let psi = ctx.psi.as_ref().expect("prepared");
            let r = integrate_meanfield(&spec.init, &spec.coupling, &spec.params, psi)?;
            (r.path, r.max_edge_probability)
        }
        Engine::Energy => unreachable!("energy runs are delegated"),
    };
    let distances: Vec<f64> = ctx
        .templates
        .iter()
        .map(|t| {
            path_distance(
                &path.t,
                branch_coordinate(spec.engine, &path),
                branch_coordinate(spec.engine, t),
            )
        })
        .collect();
    let n = path.len() - 1;
    Ok(RunOutput {
        summary: RunSummary {
            index,
            seed,
            q0: path.q0,
            p0: path.p0,
            final_q: path.q_large[n],
            final_p: spec.params.mass_large * path.qdot_large[n],
            label: None,
            distance: distances.iter().copied().reduce(f64::min),
            diagnostic,
        },
        path: ctx.keep.iter().map(|&k| path.q_large[k]).collect(),
        distances,
    })
}

fn wrap(index: usize, seed: u64) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Run { source, .. } => Error::Run {
            run: index,
            seed,
            source,
        },
        other => Error::Run {
            run: index,
            seed,
            source: Box::new(other),
        },
    }
}

/// Threshold from runs seeded with each template's packet alone.
fn calibrate(spec: &EnsembleSpec, ctx: &Context, runs: usize) -> Result<f64> {
    let SmallState::Packets(state) = &spec.state else {
        return Err(Error::EmptyTemplates);
    };
    let mut worst: f64 = 0.0;
    for (k, (_, pk)) in state.terms.iter().enumerate() {
        let single = EnsembleSpec {
            state: SmallState::Packets(SuperpositionState::single(*pk, state.hbar)?),
            classification: Classification::Off,
            ..spec.clone()
        };
        let mut sctx = prepare(&single)?;
        sctx.templates = vec![ctx.templates[k].clone()];
        let family = rng::run_seed(spec.seed ^ CALIBRATION_SALT, k as u64);
        let d: Vec<f64> = (0..runs.max(2))
            .into_par_iter()
            .map(|j| {
                let s = rng::run_seed(family, j as u64);
                run_one(&single, &sctx, j, s)
                    .map(|o| o.distances[0])
                    .map_err(wrap(j, s))
            })
            .collect::<Result<Vec<_>>>()?;
        let rms = (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt();
        worst = worst.max(rms);
    }
    Ok(THRESHOLD_FACTOR * worst)
}

/// Runs the configured engine `n_runs` times and aggregates.
pub fn run_ensemble(spec: &EnsembleSpec) -> Result<EnsembleResult> {
    if spec.engine == Engine::Energy {
        return run_energy(spec);
    }
    let ctx = prepare(spec)?;
    let mut warnings = Vec::new();
    if let Some(w) = ctx.kernel.as_ref().and_then(|k| k.warning.clone()) {
        warnings.push(w);
    }
    let n_runs = if spec.engine == Engine::MeanField {
        if spec.n_runs > 1 {
            warnings.push("the mean-field engine is deterministic; running once".into());
        }
        1
    } else {
        spec.n_runs
    };
    let outputs = (0..n_runs)
        .into_par_iter()
        .map(|i| {
            let seed = rng::run_seed(spec.seed, i as u64);
            run_one(spec, &ctx, i, seed).map_err(wrap(i, seed))
        })
        .collect::<Result<Vec<_>>>()?;

    let t: Vec<f64> = ctx.keep.iter().map(|&k| k as f64 * spec.params.dt).collect();
    let mut runs: Vec<RunSummary> = outputs.iter().map(|o| o.summary).collect();
    let paths: Vec<Vec<f64>> = outputs.iter().map(|o| o.path.clone()).collect();
    let nt = t.len();
    let nf = n_runs as f64;
    let mut mean_q = vec![0.0; nt];
    for p in &paths {
        for (m, v) in mean_q.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean_q.iter_mut().for_each(|m| *m /= nf);
    let mut var_q = vec![0.0; nt];
    if n_runs > 1 {
        for p in &paths {
            for ((s, v), m) in var_q.iter_mut().zip(p).zip(&mean_q) {
                *s += (v - m).powi(2);
            }
        }
        var_q.iter_mut().for_each(|s| *s /= nf - 1.0);
    }
    let finals: Vec<f64> = runs.iter().map(|r| r.final_q).collect();

    let branches = if ctx.templates.is_empty() {
        None
    } else {
        let threshold = match spec.classification {
            Classification::Threshold(x) => x,
            Classification::Auto { calibration_runs } => calibrate(spec, &ctx, calibration_runs)?,
            Classification::Off => unreachable!("no templates when classification is off"),
        };
        let d: Vec<Vec<f64>> = outputs.iter().map(|o| o.distances.clone()).collect();
        let report = classify_distances(&d, ctx.templates.len(), threshold)?;
        for (r, l) in runs.iter_mut().zip(&report.labels) {
            r.label = *l;
        }
        if let Some(w) = &report.warning {
            warnings.push(w.clone());
        }
        Some(report)
    };

    Ok(EnsembleResult {
        engine: spec.engine,
        master_seed: spec.seed,
        n_runs,
        runs,
        templates: ctx
            .templates
            .iter()
            .map(|p| ctx.keep.iter().map(|&k| p.q_large[k]).collect())
            .collect(),
        t,
        paths,
        mean_q,
        var_q,
        final_q: Moments::of(&finals),
        histogram: Histogram::of(&finals, spec.histogram_bins),
        branches,
        smearing: ctx.kernel,
        energy: None,
        energy_table: Vec::new(),
        warnings,
    })
}

fn run_energy(spec: &EnsembleSpec) -> Result<EnsembleResult> {
    spec.params.validate_structure()?;
    let consts = derive_constants(&spec.params)?;
    let psi = spec.state.on_grid(spec.position_grid)?;
    let e = run_energy_ensemble(
        &EnergyEnsembleSpec {
            state: &psi,
            g: &spec.coupling.g,
            potential: &spec.coupling.potential,
            init: &spec.init,
            n_max: spec.n_max,
        },
        &spec.params,
        &consts,
        spec.n_runs,
        spec.seed,
    )?;
    let runs: Vec<RunSummary> = e
        .runs
        .iter()
        .enumerate()
        .map(|(i, r)| RunSummary {
            index: i,
            seed: r.seed,
            q0: e.table[r.level].energy,
            p0: 0.0,
            final_q: r.final_q,
            final_p: f64::NAN,
            label: Some(r.level),
            distance: None,
            diagnostic: 0.0,
        })
        .collect();
    let finals: Vec<f64> = runs.iter().map(|r| r.final_q).collect();
    let labels = runs.iter().map(|r| r.label).collect();
    let keep = thin_indices(spec.params.n_steps() + 1, spec.max_points);
    let templates = e
        .set
        .branches
        .iter()
        .map(|b| keep.iter().map(|&k| b.path.q_large[k]).collect())
        .collect();
    Ok(EnsembleResult {
        engine: Engine::Energy,
        master_seed: spec.seed,
        n_runs: spec.n_runs,
        runs,
        t: keep.iter().map(|&k| k as f64 * spec.params.dt).collect(),
        paths: Vec::new(),
        mean_q: Vec::new(),
        var_q: Vec::new(),
        final_q: Moments::of(&finals),
        histogram: Histogram::of(&finals, spec.histogram_bins),
        templates,
        branches: Some(report_from_labels(labels, e.table.len(), 0.0)),
        smearing: None,
        energy: Some(e.set),
        energy_table: e.table,
        warnings: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergencePoint {
    pub lambda: f64,
    pub divergence: f64,
    /// Value the divergence takes from Monte Carlo noise alone.
    pub mc_error: f64,
    pub branch_fractions: Vec<f64>,
}

/// `D = sqrt(mean_t (mean_Q(t) - Q_mf(t))^2)` and its noise floor
/// `sqrt(mean_t Var Q(t) / n)`.
pub fn divergence(result: &EnsembleResult, meanfield: &ClassicalPath) -> Result<(f64, f64)> {
    let keep = thin_indices(meanfield.len(), result.t.len());
    let tm: Vec<f64> = keep.iter().map(|&k| meanfield.t[k]).collect();
    let same = tm.len() == result.t.len()
        && tm
            .iter()
            .zip(&result.t)
            .all(|(a, b)| (a - b).abs() <= 1e-9 * b.abs().max(1.0));
    if !same || result.mean_q.is_empty() {
        return Err(Error::MismatchedGrids(format!(
            "ensemble stores {} nodes up to t = {:?}; mean-field path has {} nodes up to t = {:?}",
            result.t.len(),
            result.t.last(),
            meanfield.len(),
            meanfield.t.last()
        )));
    }
    let qm: Vec<f64> = keep.iter().map(|&k| meanfield.q_large[k]).collect();
    let d = path_distance(&result.t, &result.mean_q, &qm);
    let se2: Vec<f64> = result.var_q.iter().map(|v| v / result.n_runs as f64).collect();
    let zero = vec![0.0; se2.len()];
    let floor = path_distance(&result.t, &se2.iter().map(|v| v.sqrt()).collect::<Vec<_>>(), &zero);
    Ok((d, floor))
}

/// Coupling and parameters with the interaction strength replaced by `lambda`
/// (`g` is rescaled, so its shape is kept).
pub fn with_coupling_strength(
    params: &ModelParams,
    coupling: &CouplingSpec,
    lambda: f64,
) -> Result<(ModelParams, CouplingSpec)> {
    let g = match coupling.linear_lambda() {
        Some(_) => Poly(vec![0.0, lambda]),
        None if params.lambda != 0.0 => Poly(coupling.g.0.iter().map(|c| c * lambda / params.lambda).collect()),
        None => {
            return Err(invalid(
                "lambda",
                "cannot rescale a nonlinear coupling from zero strength",
            ))
        }
    };
    Ok((params.with_lambda(lambda), CouplingSpec { g, ..coupling.clone() }))
}

/// Ensemble-mean versus mean-field divergence over a sweep of coupling
/// strengths, with identical initial data and seeds at every point.
pub fn compare_meanfield(spec: &EnsembleSpec, lambdas: &[f64]) -> Result<Vec<DivergencePoint>> {
    let axis = match &spec.state {
        SmallState::Grid(g) => g.axis,
        SmallState::Packets(_) => spec
            .position_grid
            .ok_or_else(|| invalid("position_grid", "required for the mean-field comparison"))?,
    };
    let psi = spec.state.on_grid(Some(axis))?;
    // one sampling grid for the whole sweep, sized for the widest kernel, so
    // the same seed maps to the same initial data at every coupling
    let phase_grid = match (&spec.state, spec.phase_grid, spec.engine) {
        (SmallState::Packets(s), None, Engine::PhaseSpace) => {
            match lambdas
                .iter()
                .copied()
                .filter(|l| *l != 0.0)
                .min_by(|a, b| a.abs().total_cmp(&b.abs()))
            {
                Some(weakest) => {
                    let (params, _) = with_coupling_strength(&spec.params, &spec.coupling, weakest)?;
                    let kernel = build_smearing(&params, &derive_constants(&params)?)?;
                    Some(auto_phase_grid(s, &kernel)?)
                }
                None => None,
            }
        }
        (_, g, _) => g,
    };
    lambdas
        .iter()
        .map(|&lambda| {
            let (params, coupling) = with_coupling_strength(&spec.params, &spec.coupling, lambda)?;
            let s = EnsembleSpec {
                params,
                coupling: coupling.clone(),
                phase_grid,
                ..spec.clone()
            };
            let result = run_ensemble(&s)?;
            let mf = integrate_meanfield(&spec.init, &coupling, &params, &psi)?;
            let (divergence, mc_error) = divergence(&result, &mf.path)?;
            Ok(DivergencePoint {
                lambda,
                divergence,
                mc_error,
                branch_fractions: result.branches.map(|b| b.fractions).unwrap_or_default(),
            })
        })
        .collect()
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lam = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k as f64 * lam).powi(2)).exp();
        p += term;
        if term.abs() < 1e-12 {
            return (d, p.clamp(0.0, 1.0));
        }
    }
    // the series only fails to converge for tiny statistics
    (d, 1.0)
}
