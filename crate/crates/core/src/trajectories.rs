//! Large-particle trajectories: noisy branch integration, the retarded
//! oscillator Green function, the mean-field baseline and the discrete
//! Onsager–Machlup path functional.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{DerivedConstants, ModelParams};
use crate::qstate::GridWavefunction;
use crate::rng::{self, StreamRng};
use crate::sampling::{scaled_basis, SmearingKernel};
use crate::spectral::KineticOperator;

/// Stream indices within one run's seed.
pub const STREAM_FORCE: u64 = 0;
pub const STREAM_RECORD: u64 = 1;
pub const STREAM_INITIAL: u64 = 2;
pub const STREAM_PHASE: u64 = 3;

/// Minimum steps per fastest period.
pub const STEPS_PER_PERIOD: f64 = 20.0;
/// Largest tolerated probability in the outer grid region during mean-field runs.
pub const MEANFIELD_LEAKAGE_LIMIT: f64 = 1e-4;

/// Polynomial with ascending coefficients.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Poly {
        Poly(self.0.iter().enumerate().skip(1).map(|(k, &c)| k as f64 * c).collect())
    }

    pub fn trimmed(&self) -> &[f64] {
        let n = self.0.iter().rposition(|&c| c != 0.0).map_or(0, |i| i + 1);
        &self.0[..n]
    }

    pub fn is_zero(&self) -> bool {
        self.trimmed().is_empty()
    }
}

/// `H = P^2/2M + V(X) + p^2/2m + m w^2 x^2/2 + g(X) f(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    #[serde(default)]
    pub potential: Poly,
    pub g: Poly,
    pub f: Poly,
}

/// Coupling polynomials with their derivatives, precomputed for integration.
#[derive(Debug, Clone)]
struct Derived {
    dv: Poly,
    g: Poly,
    dg: Poly,
    f: Poly,
    df: Poly,
}

impl CouplingSpec {
    /// `g(X) = lambda X`, `f(x) = x`, no external potential.
    pub fn linear(lambda: f64) -> Self {
        Self {
            potential: Poly::default(),
            g: Poly(vec![0.0, lambda]),
            f: Poly(vec![0.0, 1.0]),
        }
    }

    /// Coupling constant if this is the bilinear model.
    pub fn linear_lambda(&self) -> Option<f64> {
        let g = self.g.trimmed();
        let lin_f = self.f.trimmed() == [0.0, 1.0];
        let lin_g = g.is_empty() || (g.len() == 2 && g[0] == 0.0);
        (self.potential.is_zero() && lin_f && lin_g).then(|| g.get(1).copied().unwrap_or(0.0))
    }

    /// Effective linear coupling `g'(Q)` at the initial position.
    pub fn effective_lambda(&self, q_large: f64) -> f64 {
        self.g.derivative().eval(q_large)
    }

    fn derived(&self) -> Derived {
        Derived {
            dv: self.potential.derivative(),
            g: self.g.clone(),
            dg: self.g.derivative(),
            f: self.f.clone(),
            df: self.f.derivative(),
        }
    }

    /// Fastest angular frequency of the coupled system linearized about `(Q, q)`.
    pub fn fastest_frequency(&self, params: &ModelParams, q_large: f64, q_small: f64) -> f64 {
        let (mm, m, w) = (params.mass_large, params.mass_small, params.omega);
        let d2v = self.potential.derivative().derivative().eval(q_large);
        let dg = self.g.derivative();
        let d2g = dg.derivative().eval(q_large);
        let df = self.f.derivative();
        let d2f = df.derivative().eval(q_small);
        let k11 = (d2v + d2g * self.f.eval(q_small)) / mm;
        let k12 = dg.eval(q_large) * df.eval(q_small) / mm;
        let k21 = dg.eval(q_large) * df.eval(q_small) / m;
        let k22 = w * w + self.g.eval(q_large) * d2f / m;
        let tr = k11 + k22;
        let det = k11 * k22 - k12 * k21;
        let disc = Complex64::new(tr * tr / 4.0 - det, 0.0).sqrt();
        let hi = (Complex64::new(tr / 2.0, 0.0) + disc).norm();
        let lo = (Complex64::new(tr / 2.0, 0.0) - disc).norm();
        hi.max(lo).sqrt()
    }
}

/// Initial large-particle phase-space point, optionally spread.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct InitialClassicalState {
    pub q: f64,
    pub p: f64,
    /// Covariance of `(Q0, P0)`; absent for a sharply peaked state.
    #[serde(default)]
    pub cov: Option<[[f64; 2]; 2]>,
}

impl InitialClassicalState {
    pub fn at(q: f64, p: f64) -> Self {
        Self { q, p, cov: None }
    }

    pub fn check(&self) -> Result<()> {
        if let Some(c) = self.cov {
            let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
            if c[0][0] < 0.0 || c[1][1] < 0.0 || det < 0.0 || c[0][1] != c[1][0] {
                return Err(invalid("initial.cov", "must be symmetric positive semidefinite"));
            }
        }
        Ok(())
    }

    /// Draws `(Q0, P0)`; independent of the record noise.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match self.cov {
            None => (self.q, self.p),
            Some(c) => {
                let a = c[0][0].sqrt();
                let b = if a > 0.0 { c[0][1] / a } else { 0.0 };
                let d = (c[1][1] - b * b).max(0.0).sqrt();
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                (self.q + a * z1, self.p + b * z1 + d * z2)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathVariant {
    #[default]
    Branch,
    MeanField,
    Sse,
    Energy,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassicalPath {
    pub t: Vec<f64>,
    pub q_large: Vec<f64>,
    pub qdot_large: Vec<f64>,
    /// Small-particle coordinate (or its expectation value).
    pub q_small: Vec<f64>,
    /// Quantity multiplying `g'(Q)` in the large-particle force at each step,
    /// i.e. the record `f(q) + noise`; one entry per step.
    pub qbar: Vec<f64>,
    /// Sampled small-particle initial data.
    pub q0: f64,
    pub p0: f64,
    pub seed: u64,
    pub variant: PathVariant,
}

impl ClassicalPath {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn final_q(&self) -> f64 {
        *self.q_large.last().unwrap_or(&f64::NAN)
    }

    /// Step of a uniform grid, or an error.
    pub fn uniform_step(&self) -> Result<f64> {
        if self.t.len() < 2 {
            return Err(Error::NonUniformGrid);
        }
        let dt = self.t[1] - self.t[0];
        let tol = 1e-9 * dt.abs().max(1e-300);
        let ok = dt > 0.0
            && self
                .t
                .iter()
                .enumerate()
                .all(|(k, &t)| (t - self.t[0] - k as f64 * dt).abs() <= tol * (k as f64 + 1.0));
        if ok {
            Ok(dt)
        } else {
            Err(Error::NonUniformGrid)
        }
    }

    /// Every `stride`-th node of `(t, Q)`, always including the last one.
    pub fn thinned(&self, max_points: usize) -> (Vec<f64>, Vec<f64>) {
        let idx = thin_indices(self.t.len(), max_points);
        (
            idx.iter().map(|&i| self.t[i]).collect(),
            idx.iter().map(|&i| self.q_large[i]).collect(),
        )
    }
}

/// Evenly strided indices into `0..n`, at most about `max_points`, including
/// both ends.
pub fn thin_indices(n: usize, max_points: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let stride = (n - 1).div_ceil(max_points.max(2) - 1).max(1);
    let mut idx: Vec<usize> = (0..n).step_by(stride).collect();
    if *idx.last().unwrap() != n - 1 {
        idx.push(n - 1);
    }
    idx
}

/// Retarded Green function `G(t, t')` of `m d^2/dt^2 + m w^2`, with
/// `m q'' + m w^2 q = -delta(t - t')` and zero for `t < t'`.
pub fn green_function(params: &ModelParams, t: f64, t_prime: f64) -> f64 {
    if t < t_prime {
        return 0.0;
    }
    let s = t - t_prime;
    let (m, w) = (params.mass_small, params.omega);
    if w * s < 1e-8 {
        -s / m
    } else {
        -(w * s).sin() / (m * w)
    }
}

fn check_resolution(coupling: &CouplingSpec, params: &ModelParams, q_large: f64, q_small: f64) -> Result<()> {
    let w = coupling.fastest_frequency(params, q_large, q_small);
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

/// Noise sources driving a branch.
#[derive(Debug, Clone, Copy)]
pub enum BranchNoise<'a> {
    /// Deterministic branch.
    Off,
    /// Langevin force only, spectral density `2 hbar^2 D~ (1 - eta)`.
    Force,
    /// Langevin force plus the record fluctuation left over after the
    /// phase-space smearing has absorbed its projection onto the free
    /// small-particle solutions.
    ForceAndRecord(&'a SmearingKernel),
}

/// White record noise of spectral density `kernel.record_noise`, with its
/// component along `cos wt` and `sin wt / (m w)` removed.
pub fn projected_record_noise(
    n: usize,
    params: &ModelParams,
    kernel: &SmearingKernel,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    let dt = params.dt;
    if (kernel.dt - dt).abs() > 1e-12 * dt || (kernel.duration - params.duration).abs() > 1e-9 * params.duration {
        return Err(Error::MismatchedGrids(format!(
            "kernel built for dt = {}, duration = {}; path uses dt = {dt}, duration = {}",
            kernel.dt, kernel.duration, params.duration
        )));
    }
    let sd = (kernel.record_noise / dt).sqrt();
    let (m, w) = (params.mass_small, params.omega);
    let mut r: Vec<f64> = (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut b = [0.0; 2];
    for (k, v) in r.iter().enumerate() {
        let f = scaled_basis(k as f64 * dt, m, w);
        b[0] += dt * f[0] * v;
        b[1] += dt * f[1] * v;
    }
    let g = kernel.gram;
    let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    let c = [
        (g[1][1] * b[0] - g[0][1] * b[1]) / det,
        (g[0][0] * b[1] - g[1][0] * b[0]) / det,
    ];
    for (k, v) in r.iter_mut().enumerate() {
        let f = scaled_basis(k as f64 * dt, m, w);
        *v -= f[0] * c[0] + f[1] * c[1];
    }
    Ok(r)
}

/// Integrates
/// `M Q'' + V'(Q) + g'(Q) qbar = xi`, `m q'' + m w^2 q + g(Q) f'(q) = 0`
/// with `qbar = f(q) + record noise`, by a two-step Störmer scheme started
/// from a second-order Taylor step.
pub fn integrate_branch(
    init: &InitialClassicalState,
    phase_sample: (f64, f64),
    coupling: &CouplingSpec,
    params: &ModelParams,
    consts: &DerivedConstants,
    seed: u64,
    noise: BranchNoise<'_>,
) -> Result<ClassicalPath> {
    params.validate_structure()?;
    init.check()?;
    let (big_q0, big_p0) = init.sample(&mut rng::stream(seed, STREAM_INITIAL));
    let (q0, p0) = phase_sample;
    check_resolution(coupling, params, big_q0, q0)?;
    let n = params.n_steps();
    let dt = params.dt;
    let (mm, m, w) = (params.mass_large, params.mass_small, params.omega);
    let d = coupling.derived();

    let force_sd = match noise {
        BranchNoise::Off => 0.0,
        _ => (consts.force_noise_var / dt).sqrt(),
    };
    let record = match noise {
        BranchNoise::ForceAndRecord(k) => Some(projected_record_noise(
            n,
            params,
            k,
            &mut rng::stream(seed, STREAM_RECORD),
        )?),
        _ => None,
    };
    let mut force_rng = rng::stream(seed, STREAM_FORCE);

    let mut big_q = Vec::with_capacity(n + 1);
    let mut small = Vec::with_capacity(n + 1);
    let mut qbar = Vec::with_capacity(n);
    big_q.push(big_q0);
    small.push(q0);
    let h2 = dt * dt;
    for k in 0..n {
        let (qk, xk) = (big_q[k], small[k]);
        let drive = d.f.eval(xk) + record.as_ref().map_or(0.0, |r| r[k]);
        let xi = if force_sd > 0.0 {
            force_sd * force_rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        let big_a = (-d.dv.eval(qk) - d.dg.eval(qk) * drive + xi) / mm;
        let small_a = -w * w * xk - d.g.eval(qk) * d.df.eval(xk) / m;
        qbar.push(drive);
        if k == 0 {
            big_q.push(qk + dt * big_p0 / mm + 0.5 * h2 * big_a);
            small.push(xk + dt * p0 / m + 0.5 * h2 * small_a);
        } else {
            big_q.push(2.0 * qk - big_q[k - 1] + h2 * big_a);
            small.push(2.0 * xk - small[k - 1] + h2 * small_a);
        }
    }
    let qend = big_q[n];
    let end_accel = (-d.dv.eval(qend) - d.dg.eval(qend) * d.f.eval(small[n])) / mm;
    let mut qdot = Vec::with_capacity(n + 1);
    qdot.push(big_p0 / mm);
    for k in 1..n {
        qdot.push((big_q[k + 1] - big_q[k - 1]) / (2.0 * dt));
    }
    qdot.push((big_q[n] - big_q[n - 1]) / dt + 0.5 * dt * end_accel);

    Ok(ClassicalPath {
        t: (0..=n).map(|k| k as f64 * dt).collect(),
        q_large: big_q,
        qdot_large: qdot,
        q_small: small,
        qbar,
        q0,
        p0,
        seed,
        variant: PathVariant::Branch,
    })
}

/// Discrete Onsager–Machlup log density (up to normalization):
/// `-(1 / (4 hbar^2 D~ (1-eta))) sum dt (M Q'' + V'(Q) + g'(Q) qbar)^2` over
/// interior nodes, with `Q''` the central second difference.
pub fn onsager_machlup_check(
    path: &ClassicalPath,
    coupling: &CouplingSpec,
    params: &ModelParams,
    consts: &DerivedConstants,
) -> Result<f64> {
    let dt = path.uniform_step()?;
    let n = path.q_large.len();
    if n < 5 {
        return Err(Error::Precondition(format!(
            "path has {} interior nodes; need at least 3",
            n.saturating_sub(2)
        )));
    }
    if path.qbar.len() < n - 1 {
        return Err(Error::MismatchedGrids(format!(
            "record has {} entries for {} interior nodes",
            path.qbar.len(),
            n - 2
        )));
    }
    let d = coupling.derived();
    let q = &path.q_large;
    let mut sum = 0.0;
    for k in 1..n - 1 {
        let acc = (q[k + 1] - 2.0 * q[k] + q[k - 1]) / (dt * dt);
        let r = params.mass_large * acc + d.dv.eval(q[k]) + d.dg.eval(q[k]) * path.qbar[k];
        sum += dt * r * r;
    }
    Ok(-sum / (2.0 * consts.force_noise_var))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySample {
    pub t: f64,
    pub energy: f64,
}

#[derive(Debug, Clone)]
pub struct MeanFieldRun {
    pub path: ClassicalPath,
    pub final_state: GridWavefunction,
    /// Total energy at checkpoints.
    pub energy: Vec<EnergySample>,
    /// Largest `|E - E0| / |E0|`.
    pub energy_drift: f64,
    pub max_edge_probability: f64,
}

/// Mean-field evolution: `M Q'' + V'(Q) + g'(Q) <f(x)> = 0` alongside the
/// Schrödinger equation with source `g(Q) f(x)`. Velocity-Verlet for `Q`,
/// Strang splitting for the wavefunction.
pub fn integrate_meanfield(
    init: &InitialClassicalState,
    coupling: &CouplingSpec,
    params: &ModelParams,
    psi0: &GridWavefunction,
) -> Result<MeanFieldRun> {
    params.validate_structure()?;
    psi0.check_normalized()?;
    let q_mean0 = psi0.expect_position_fn(|x| x);
    check_resolution(coupling, params, init.q, q_mean0)?;
    let d = coupling.derived();
    let n = params.n_steps();
    let dt = params.dt;
    let (mm, m, w, hbar) = (params.mass_large, params.mass_small, params.omega, params.hbar);
    let x = psi0.axis.nodes();
    let mut psi = psi0.values.clone();
    let dx = psi0.dq();
    let mut kin = KineticOperator::new(psi.len(), dx, m, hbar);
    let kin_phases = kin.phases(dt);
    let fx: Vec<f64> = x.iter().map(|&v| d.f.eval(v)).collect();
    let osc: Vec<f64> = x.iter().map(|&v| 0.5 * m * w * w * v * v).collect();

    let expect =
        |psi: &[Complex64], f: &[f64]| -> f64 { psi.iter().zip(f).map(|(a, v)| a.norm_sqr() * v).sum::<f64>() * dx };
    let half_potential = |psi: &mut [Complex64], q: f64| {
        let gq = d.g.eval(q);
        for ((a, o), f) in psi.iter_mut().zip(&osc).zip(&fx) {
            *a *= Complex64::from_polar(1.0, -(o + gq * f) * dt / (2.0 * hbar));
        }
    };
    let checkpoints = thin_indices(n + 1, 512);
    let mut next_cp = 0;
    let mut energy = Vec::with_capacity(checkpoints.len());
    let mut max_edge: f64 = 0.0;

    let mut q = init.q;
    let mut p = init.p;
    let mut mean_f = expect(&psi, &fx);
    let mut big_q = Vec::with_capacity(n + 1);
    let mut qdot = Vec::with_capacity(n + 1);
    let mut small = Vec::with_capacity(n + 1);
    let mut qbar = Vec::with_capacity(n);
    let xs = x.clone();
    for k in 0..=n {
        big_q.push(q);
        qdot.push(p / mm);
        small.push(expect(&psi, &xs));
        if next_cp < checkpoints.len() && checkpoints[next_cp] == k {
            next_cp += 1;
            let (t_kin, _) = kin.kinetic_and_momentum(&psi);
            let e = p * p / (2.0 * mm) + coupling.potential.eval(q) + t_kin + expect(&psi, &osc) + d.g.eval(q) * mean_f;
            energy.push(EnergySample {
                t: k as f64 * dt,
                energy: e,
            });
            let edge = GridWavefunction {
                axis: psi0.axis,
                values: psi.clone(),
                hbar,
            }
            .edge_probability();
            max_edge = max_edge.max(edge);
            if edge > MEANFIELD_LEAKAGE_LIMIT {
                return Err(Error::Leakage {
                    leakage: edge,
                    limit: MEANFIELD_LEAKAGE_LIMIT,
                });
            }
        }
        if k == n {
            break;
        }
        qbar.push(mean_f);
        p += 0.5 * dt * (-d.dv.eval(q) - d.dg.eval(q) * mean_f);
        let q_new = q + dt * p / mm;
        half_potential(&mut psi, q);
        kin.apply_phases(&mut psi, &kin_phases);
        half_potential(&mut psi, q_new);
        q = q_new;
        mean_f = expect(&psi, &fx);
        p += 0.5 * dt * (-d.dv.eval(q) - d.dg.eval(q) * mean_f);
    }
    let e0 = energy[0].energy;
    let energy_drift =
        energy.iter().map(|e| (e.energy - e0).abs()).fold(0.0, f64::max) / e0.abs().max(f64::MIN_POSITIVE);
    let (_, p0) = psi0.kinetic_and_momentum(m);
    let q0 = q_mean0;
    Ok(MeanFieldRun {
        path: ClassicalPath {
            t: (0..=n).map(|k| k as f64 * dt).collect(),
            q_large: big_q,
            qdot_large: qdot,
            q_small: small,
            qbar,
            q0,
            p0,
            seed: 0,
            variant: PathVariant::MeanField,
        },
        final_state: GridWavefunction {
            axis: psi0.axis,
            values: psi,
            hbar,
        },
        energy,
        energy_drift,
        max_edge_probability: max_edge,
    })
}
