//! Energy-coupled model: the large particle feels `g'(Q) E` for a definite
//! small-particle energy `E`, branches are weighted by the level populations,
//! and a finite-time energy measurement resolves them with a Gaussian weight.

use std::f64::consts::PI;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, Error, Result};
use crate::model::{DerivedConstants, ModelParams};
use crate::qstate::{energy_decompose_with_tol, EnergyLevel, GridWavefunction};
use crate::rng;
use crate::trajectories::{
    ClassicalPath, InitialClassicalState, PathVariant, Poly, STEPS_PER_PERIOD, STREAM_FORCE, STREAM_INITIAL,
};

/// Stream used to draw the energy level of a run.
pub const STREAM_LEVEL: u64 = 4;
/// Norm the level truncation must capture before an ensemble is run.
pub const ENSEMBLE_TRUNCATION_TOL: f64 = 1e-6;
/// Half-width of the energy grid around each level, in resolution standard deviations.
pub const SPAN_WIDTHS: f64 = 5.0;

/// Gaussian resolution of a finite-time energy measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyResolution {
    /// Variance `2 hbar^2 D~ eta / (lambda^2 tau)` of each level's peak in `Ebar`.
    pub variance: f64,
    pub sd: f64,
    pub tau: f64,
}

impl EnergyResolution {
    pub fn new(params: &ModelParams, consts: &DerivedConstants, tau: f64) -> Result<Self> {
        if params.lambda == 0.0 {
            return Err(Error::InfiniteSmearing);
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(invalid("tau", format!("must be positive, got {tau}")));
        }
        let h2 = params.hbar * params.hbar;
        let variance = 2.0 * h2 * consts.d_tilde * params.eta / (params.lambda * params.lambda * tau);
        Ok(Self {
            variance,
            sd: variance.sqrt(),
            tau,
        })
    }
}

/// `w(Ebar) = sum_n rho_nn N(Ebar; E_n, variance)` on `ebar`.
///
/// Each level contributes a normalized Gaussian, so `w` integrates to the
/// captured population. Only the bilinear coupling has this weight; callers
/// pass `params.lambda` as its strength.
pub fn energy_weight(
    populations: &[EnergyLevel],
    params: &ModelParams,
    consts: &DerivedConstants,
    tau: f64,
    ebar: &[f64],
) -> Result<(Vec<f64>, EnergyResolution)> {
    let res = EnergyResolution::new(params, consts, tau)?;
    let (lo, hi) = match (ebar.first(), ebar.last()) {
        (Some(&a), Some(&b)) if ebar.len() >= 2 => (a, b),
        _ => return Err(invalid("ebar", "need at least two grid points")),
    };
    for l in populations {
        if l.energy - SPAN_WIDTHS * res.sd < lo || l.energy + SPAN_WIDTHS * res.sd > hi {
            return Err(Error::EnergySpan { level: l.n });
        }
    }
    let norm = 1.0 / (2.0 * PI * res.variance).sqrt();
    let w = ebar
        .iter()
        .map(|&e| {
            populations
                .iter()
                .map(|l| {
                    let d = e - l.energy;
                    l.population * norm * (-d * d / (2.0 * res.variance)).exp()
                })
                .sum()
        })
        .collect();
    Ok((w, res))
}

/// Uniform `Ebar` grid covering every level by `SPAN_WIDTHS + 1` resolution widths.
pub fn energy_grid(levels: &[EnergyLevel], res: &EnergyResolution, n: usize) -> Vec<f64> {
    let pad = (SPAN_WIDTHS + 1.0) * res.sd;
    let lo = levels.iter().map(|l| l.energy).fold(f64::INFINITY, f64::min) - pad;
    let hi = levels.iter().map(|l| l.energy).fold(f64::NEG_INFINITY, f64::max) + pad;
    let n = n.max(2);
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn check_resolution(g: &Poly, potential: &Poly, energy: f64, q: f64, params: &ModelParams) -> Result<()> {
    let k = (potential.derivative().derivative().eval(q) + g.derivative().derivative().eval(q) * energy).abs();
    let w = (k / params.mass_large).sqrt();
    if w > 0.0 {
        let period = 2.0 * PI / w;
        let suggested = period / STEPS_PER_PERIOD;
        if params.dt > suggested * (1.0 + 1e-12) {
            return Err(Error::StepResolution {
                dt: params.dt,
                period,
                suggested,
            });
        }
    }
    Ok(())
}

/// Integrates `M Q'' + V'(Q) + g'(Q) E = xi` with `xi` of spectral density
/// `2 hbar^2 D~` (or zero), by the same Störmer scheme as the position branch.
#[allow(clippy::too_many_arguments)]
pub fn branch_trajectory(
    energy: f64,
    g: &Poly,
    potential: &Poly,
    init: &InitialClassicalState,
    params: &ModelParams,
    consts: &DerivedConstants,
    seed: u64,
    with_noise: bool,
) -> Result<ClassicalPath> {
    params.validate_structure()?;
    init.check()?;
    if !energy.is_finite() {
        return Err(invalid("energy", "must be finite"));
    }
    let (q0, p0) = init.sample(&mut rng::stream(seed, STREAM_INITIAL));
    check_resolution(g, potential, energy, q0, params)?;
    let n = params.n_steps();
    let dt = params.dt;
    let mm = params.mass_large;
    let dg = g.derivative();
    let dv = potential.derivative();
    let sd = if with_noise {
        (2.0 * params.hbar * params.hbar * consts.d_tilde / dt).sqrt()
    } else {
        0.0
    };
    let mut noise = rng::stream(seed, STREAM_FORCE);
    let h2 = dt * dt;
    let mut q = Vec::with_capacity(n + 1);
    q.push(q0);
    for k in 0..n {
        let xi = if with_noise {
            sd * noise.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        let a = (-dv.eval(q[k]) - dg.eval(q[k]) * energy + xi) / mm;
        let next = if k == 0 {
            q[0] + dt * p0 / mm + 0.5 * h2 * a
        } else {
            2.0 * q[k] - q[k - 1] + h2 * a
        };
        q.push(next);
    }
    let end_a = (-dv.eval(q[n]) - dg.eval(q[n]) * energy) / mm;
    let mut qdot = Vec::with_capacity(n + 1);
    qdot.push(p0 / mm);
    for k in 1..n {
        qdot.push((q[k + 1] - q[k - 1]) / (2.0 * dt));
    }
    if n > 0 {
        qdot.push((q[n] - q[n - 1]) / dt + 0.5 * dt * end_a);
    }
    Ok(ClassicalPath {
        t: (0..=n).map(|k| k as f64 * dt).collect(),
        q_large: q,
        qdot_large: qdot,
        q_small: Vec::new(),
        qbar: vec![energy; n],
        q0: energy,
        p0: 0.0,
        seed,
        variant: PathVariant::Energy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBranch {
    pub level: EnergyLevel,
    /// Noiseless trajectory for this energy.
    pub path: ClassicalPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBranchSet {
    pub branches: Vec<EnergyBranch>,
    pub ebar: Vec<f64>,
    /// Empty unless the coupling is bilinear.
    pub weight: Vec<f64>,
    pub resolution: Option<EnergyResolution>,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchFrequency {
    pub n: usize,
    pub energy: f64,
    pub population: f64,
    pub count: u64,
    pub frequency: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyRunSummary {
    pub level: usize,
    pub final_q: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyEnsemble {
    pub set: EnergyBranchSet,
    pub table: Vec<BranchFrequency>,
    pub runs: Vec<EnergyRunSummary>,
}

#[derive(Debug, Clone)]
pub struct EnergyEnsembleSpec<'a> {
    pub state: &'a GridWavefunction,
    pub g: &'a Poly,
    pub potential: &'a Poly,
    pub init: &'a InitialClassicalState,
    /// Highest oscillator level kept.
    pub n_max: usize,
}

/// Draws a level per run from the populations and integrates a noisy branch
/// for it. Runs are independent and seeded by `run_seed(seed, i)`.
pub fn run_energy_ensemble(
    spec: &EnergyEnsembleSpec<'_>,
    params: &ModelParams,
    consts: &DerivedConstants,
    n: usize,
    seed: u64,
) -> Result<EnergyEnsemble> {
    if n == 0 {
        return Err(invalid("n_runs", "must be at least 1"));
    }
    let levels = energy_decompose_with_tol(
        spec.state,
        params.mass_small,
        params.omega,
        spec.n_max,
        ENSEMBLE_TRUNCATION_TOL,
    )?;
    let chooser = WeightedIndex::new(levels.iter().map(|l| l.population.max(0.0)))
        .map_err(|e| Error::Precondition(e.to_string()))?;

    let runs = (0..n)
        .into_par_iter()
        .map(|i| {
            let rs = rng::run_seed(seed, i as u64);
            let level = chooser.sample(&mut rng::stream(rs, STREAM_LEVEL));
            let path = branch_trajectory(
                levels[level].energy,
                spec.g,
                spec.potential,
                spec.init,
                params,
                consts,
                rs,
                true,
            )
            .map_err(|e| Error::Run {
                run: i,
                seed: rs,
                source: Box::new(e),
            })?;
            Ok(EnergyRunSummary {
                level,
                final_q: path.final_q(),
                seed: rs,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut counts = vec![0u64; levels.len()];
    for r in &runs {
        counts[r.level] += 1;
    }
    let table = levels
        .iter()
        .zip(&counts)
        .map(|(l, &c)| {
            let f = c as f64 / n as f64;
            BranchFrequency {
                n: l.n,
                energy: l.energy,
                population: l.population,
                count: c,
                frequency: f,
                std_error: (f * (1.0 - f) / n as f64).sqrt(),
            }
        })
        .collect();

    let deterministic = InitialClassicalState {
        cov: None,
        ..*spec.init
    };
    let branches = levels
        .iter()
        .filter(|l| l.population > ENSEMBLE_TRUNCATION_TOL)
        .map(|l| {
            Ok(EnergyBranch {
                level: *l,
                path: branch_trajectory(
                    l.energy,
                    spec.g,
                    spec.potential,
                    &deterministic,
                    params,
                    consts,
                    seed,
                    false,
                )?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let linear = spec.potential.is_zero() && spec.g.trimmed().len() == 2 && spec.g.0[0] == 0.0;
    let (ebar, weight, resolution) = if linear && params.lambda != 0.0 {
        let lp = params.with_lambda(spec.g.0[1]);
        let res = EnergyResolution::new(&lp, consts, params.duration)?;
        let ebar = energy_grid(&levels, &res, 2001);
        let (w, res) = energy_weight(&levels, &lp, consts, params.duration, &ebar)?;
        (ebar, w, Some(res))
    } else {
        (Vec::new(), Vec::new(), None)
    };

    Ok(EnergyEnsemble {
        set: EnergyBranchSet {
            branches,
            ebar,
            weight,
            resolution,
            tau: params.duration,
        },
        table,
        runs,
    })
}

/// Pearson chi-square test that two count vectors come from the same
/// distribution. Cells empty in both are dropped. Returns `(statistic, dof, p)`.
pub fn homogeneity_test(a: &[u64], b: &[u64]) -> (f64, usize, f64) {
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let total = (na + nb) as f64;
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        cells += 1;
        for (obs, rowtot) in [(x, na), (y, nb)] {
            let e = rowtot as f64 * col / total;
            stat += (obs as f64 - e).powi(2) / e;
        }
    }
    let dof = cells.saturating_sub(1);
    let p = if dof == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(stat)
    };
    (stat, dof, p)
}

/// Random draw helper for tests and the CLI: uniform phases in `[0, 2 pi)`.
pub fn random_phases<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.0..2.0 * PI)).collect()
}
