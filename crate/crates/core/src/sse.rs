//! Nonlinear stochastic Schrödinger equation for the monitored small particle,
//! its measurement record, and the classical equation driven by that record.
//!
//! The update is
//! `dpsi = [-(i/hbar) H - a/sigma1^2 (q - <q>)^2] psi dt + b/sigma1 (q - <q>) psi dW`
//! with `a = b = 1` by default, followed by renormalization. The state is
//! advanced by Strang splitting: kinetic half step in momentum space, then the
//! potential and the measurement update (both diagonal in position), then the
//! second kinetic half step.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DerivedConstants, ModelParams};
use crate::qstate::GridWavefunction;
use crate::rng;
use crate::spectral::KineticOperator;
use crate::trajectories::{
    thin_indices, ClassicalPath, CouplingSpec, InitialClassicalState, PathVariant, Poly, STREAM_FORCE, STREAM_RECORD,
};

type C = Complex64;

/// Position spread below this many grid cells is considered unresolved.
pub const LOCALIZATION_CELLS: f64 = 4.0;

/// Multipliers of the decay (`1/sigma1^2`) and diffusion (`1/sigma1`) terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SseCoefficients {
    pub decay: f64,
    pub diffusion: f64,
}

impl Default for SseCoefficients {
    fn default() -> Self {
        Self {
            decay: 1.0,
            diffusion: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SseOptions {
    #[serde(default)]
    pub coefficients: SseCoefficients,
    /// Drive the record (and hence the classical force) with a noise process
    /// independent of the one in the state update.
    #[serde(default)]
    pub independent_noise: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SseState {
    pub psi: GridWavefunction,
    pub t: f64,
    pub record: Vec<f64>,
    pub seed: u64,
    pub mean_q: f64,
    pub mean_p: f64,
    pub var_q: f64,
    /// `| ||psi||^2 - 1 |` before the last renormalization.
    pub last_defect: f64,
    /// Largest `| ||psi||^2 - 1 |` after renormalization so far.
    pub max_norm_error: f64,
}

impl SseState {
    pub fn new(psi: GridWavefunction, seed: u64) -> Result<Self> {
        psi.check_normalized()?;
        let (mean_q, var_q) = position_moments(&psi.values, &psi.axis.nodes());
        let (_, mean_p) = psi.kinetic_and_momentum(1.0);
        Ok(Self {
            psi,
            t: 0.0,
            record: Vec::new(),
            seed,
            mean_q,
            mean_p,
            var_q,
            last_defect: 0.0,
            max_norm_error: 0.0,
        })
    }
}

fn position_moments(psi: &[C], x: &[f64]) -> (f64, f64) {
    let (mut n, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (a, &v) in psi.iter().zip(x) {
        let w = a.norm_sqr();
        n += w;
        m1 += w * v;
        m2 += w * v * v;
    }
    let mean = m1 / n;
    (mean, (m2 / n - mean * mean).max(0.0))
}

/// Reusable propagator for one grid and parameter set.
pub struct SseStepper {
    kinetic: KineticOperator,
    half_phases: Vec<C>,
    x: Vec<f64>,
    osc: Vec<f64>,
    fx: Vec<f64>,
    g: Poly,
    dt: f64,
    hbar: f64,
    decay: f64,
    diffusion: f64,
    min_std: f64,
}

impl SseStepper {
    pub fn new(
        psi: &GridWavefunction,
        coupling: &CouplingSpec,
        params: &ModelParams,
        consts: &DerivedConstants,
        coefficients: SseCoefficients,
    ) -> Result<Self> {
        if !consts.sigma1_sq.is_finite() {
            return Err(Error::InfiniteSmearing);
        }
        let n = psi.axis.n;
        let dx = psi.dq();
        let decay = coefficients.decay / consts.sigma1_sq;
        // the explicit measurement factor 1 - a d^2 dt must not flip sign
        // anywhere on the grid, or the tails grow without bound
        let width = psi.axis.max - psi.axis.min;
        let stiffness = decay * width * width * params.dt;
        if stiffness > 1.0 {
            return Err(Error::Precondition(format!(
                "measurement step unstable: dt * width^2 / sigma1^2 = {stiffness:.3} > 1; use dt <= {:.3e}",
                params.dt / stiffness
            )));
        }
        let kinetic = KineticOperator::new(n, dx, params.mass_small, params.hbar);
        let half_phases = kinetic.phases(0.5 * params.dt);
        let x = psi.axis.nodes();
        let m = params.mass_small;
        let w = params.omega;
        Ok(Self {
            kinetic,
            half_phases,
            osc: x.iter().map(|&v| 0.5 * m * w * w * v * v).collect(),
            fx: x.iter().map(|&v| coupling.f.eval(v)).collect(),
            x,
            g: coupling.g.clone(),
            dt: params.dt,
            hbar: params.hbar,
            decay,
            diffusion: coefficients.diffusion / consts.sigma1_sq.sqrt(),
            min_std: LOCALIZATION_CELLS * dx,
        })
    }

    /// Advances `s` by one step with the classical source at `q_large` and
    /// Wiener increment `dw`.
    pub fn step(&mut self, s: &mut SseState, q_large: f64, dw: f64) -> Result<()> {
        let psi = &mut s.psi.values;
        self.kinetic.apply_phases(psi, &self.half_phases);
        let (mean, _) = position_moments(psi, &self.x);
        let gq = self.g.eval(q_large);
        let dt = self.dt;
        for ((a, &x), (o, f)) in psi.iter_mut().zip(&self.x).zip(self.osc.iter().zip(&self.fx)) {
            let d = x - mean;
            let meas = 1.0 - self.decay * d * d * dt + self.diffusion * d * dw;
            *a *= C::from_polar(meas, -(o + gq * f) * dt / self.hbar);
        }
        let p = self.kinetic.apply_phases_with_momentum(psi, &self.half_phases);
        let dx = s.psi.axis.step();
        let norm = psi.iter().map(|a| a.norm_sqr()).sum::<f64>() * dx;
        s.last_defect = (norm - 1.0).abs();
        let scale = norm.sqrt().recip();
        for a in psi.iter_mut() {
            *a *= scale;
        }
        let after = psi.iter().map(|a| a.norm_sqr()).sum::<f64>() * dx;
        s.max_norm_error = s.max_norm_error.max((after - 1.0).abs());
        let (mq, vq) = position_moments(psi, &self.x);
        s.mean_q = mq;
        s.var_q = vq;
        s.mean_p = p;
        s.t += dt;
        if vq.sqrt() < self.min_std {
            return Err(Error::LocalizationResolution {
                std: vq.sqrt(),
                cells: LOCALIZATION_CELLS,
            });
        }
        Ok(())
    }
}

/// One step of the stochastic Schrödinger equation (builds a fresh stepper;
/// use [`SseStepper`] in loops).
pub fn sse_step(
    s: &mut SseState,
    q_large: f64,
    coupling: &CouplingSpec,
    params: &ModelParams,
    consts: &DerivedConstants,
    dw: f64,
) -> Result<()> {
    SseStepper::new(&s.psi, coupling, params, consts, SseCoefficients::default())?.step(s, q_large, dw)
}

/// `qbar = <q> + (sigma1 / 2) eta` with `eta` a white-noise sample of
/// variance `1/dt`; appended to the record.
pub fn measurement_record(s: &mut SseState, consts: &DerivedConstants, eta_sample: f64) -> f64 {
    let qbar = s.mean_q + 0.5 * consts.sigma1() * eta_sample;
    s.record.push(qbar);
    qbar
}

/// Per-run time series at thinned checkpoints.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SseSeries {
    pub t: Vec<f64>,
    pub q_large: Vec<f64>,
    pub mean_q: Vec<f64>,
    pub var_q: Vec<f64>,
    pub mean_p: Vec<f64>,
    pub qbar: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SseRun {
    pub path: ClassicalPath,
    pub state: SseState,
    pub series: SseSeries,
    pub max_pre_defect: f64,
}

/// Couples the stochastic Schrödinger equation to
/// `M Q'' + lambda <q> + (lambda sigma1 / 2) eta = 0`, sharing `eta` between
/// the record and the force unless `options.independent_noise`.
#[allow(clippy::too_many_arguments)]
pub fn coupled_run(
    psi0: &GridWavefunction,
    init: &InitialClassicalState,
    coupling: &CouplingSpec,
    params: &ModelParams,
    consts: &DerivedConstants,
    seed: u64,
    options: SseOptions,
    max_points: usize,
) -> Result<SseRun> {
    let lambda = coupling.linear_lambda().ok_or_else(|| {
        Error::Precondition("the stochastic Schrödinger engine needs g(X) = lambda X and f(x) = x".into())
    })?;
    params.validate_structure()?;
    let mut stepper = SseStepper::new(psi0, coupling, params, consts, options.coefficients)?;
    let mut s = SseState::new(psi0.clone(), seed)?;
    let n = params.n_steps();
    let dt = params.dt;
    let sqdt = dt.sqrt();
    let mm = params.mass_large;
    let mut noise = rng::stream(seed, STREAM_FORCE);
    let mut record_noise = rng::stream(seed, STREAM_RECORD);
    let (big_q0, big_p0) = init.sample(&mut rng::stream(seed, crate::trajectories::STREAM_INITIAL));
    let keep = thin_indices(n + 1, max_points);
    let mut next = 0;
    let mut series = SseSeries::default();
    let mut big_q = Vec::with_capacity(n + 1);
    let mut small = Vec::with_capacity(n + 1);
    let mut qbar_all = Vec::with_capacity(n);
    big_q.push(big_q0);
    let mut max_pre: f64 = 0.0;
    let h2 = dt * dt;
    for k in 0..=n {
        small.push(s.mean_q);
        let qk = big_q[k];
        if k == n {
            if next < keep.len() && keep[next] == k {
                push_series(&mut series, &s, qk, f64::NAN);
            }
            break;
        }
        let z: f64 = noise.sample(StandardNormal);
        let dw = z * sqdt;
        let eta = if options.independent_noise {
            record_noise.sample::<f64, _>(StandardNormal) / sqdt
        } else {
            dw / dt
        };
        let qbar = measurement_record(&mut s, consts, eta);
        qbar_all.push(qbar);
        if next < keep.len() && keep[next] == k {
            next += 1;
            push_series(&mut series, &s, qk, qbar);
        }
        let acc = -lambda * qbar / mm;
        let q_next = if k == 0 {
            qk + dt * big_p0 / mm + 0.5 * h2 * acc
        } else {
            2.0 * qk - big_q[k - 1] + h2 * acc
        };
        stepper.step(&mut s, qk, dw).map_err(|e| Error::Run {
            run: 0,
            seed,
            source: Box::new(e),
        })?;
        max_pre = max_pre.max(s.last_defect);
        big_q.push(q_next);
    }
    let mut qdot = Vec::with_capacity(n + 1);
    qdot.push(big_p0 / mm);
    for k in 1..n {
        qdot.push((big_q[k + 1] - big_q[k - 1]) / (2.0 * dt));
    }
    qdot.push((big_q[n] - big_q[n - 1]) / dt);
    let path = ClassicalPath {
        t: (0..=n).map(|k| k as f64 * dt).collect(),
        q_large: big_q,
        qdot_large: qdot,
        q_small: small,
        qbar: qbar_all,
        q0: psi0.expect_position_fn(|x| x),
        p0: s.mean_p,
        seed,
        variant: PathVariant::Sse,
    };
    Ok(SseRun {
        path,
        state: s,
        series,
        max_pre_defect: max_pre,
    })
}

fn push_series(series: &mut SseSeries, s: &SseState, q_large: f64, qbar: f64) {
    series.t.push(s.t);
    series.q_large.push(q_large);
    series.mean_q.push(s.mean_q);
    series.var_q.push(s.var_q);
    series.mean_p.push(s.mean_p);
    series.qbar.push(qbar);
}
