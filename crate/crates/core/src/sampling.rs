//! Smearing of the small particle's Wigner function by the measurement record,
//! sampling of initial phase-space data, and brute-force path-sum evaluators
//! of the weight function on tiny grids.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DerivedConstants, ModelParams};
use crate::phase_space::{WignerGrid, WignerMixture};
use crate::qstate::{GridWavefunction, SuperpositionState};
use crate::rng;
use crate::spectral::wavenumbers;

type C = Complex64;

/// Minimum grid nodes per kernel standard deviation for gridded smearing.
pub const NODES_PER_SD: f64 = 8.0;
/// Gram condition number above which the kernel carries a warning.
pub const CONDITION_WARNING: f64 = 1e8;
/// Largest value treated as round-off when checking a density for negativity.
pub const NEGATIVITY_TOL: f64 = 1e-10;
pub const SMALLGRID_MAX_SLICES: usize = 4;
pub const SMALLGRID_MAX_POINTS: usize = 64;

/// Gaussian smearing of the initial `(q0, p0)` induced by the record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmearingKernel {
    pub cov: [[f64; 2]; 2],
    /// Variance of one record sample about the classical path.
    pub record_var_per_step: f64,
    /// Record noise spectral density.
    pub record_noise: f64,
    /// `sum dt phi phi^T` with `phi = (cos wt, sin wt / (m w))`.
    pub gram: [[f64; 2]; 2],
    pub condition_number: f64,
    pub duration: f64,
    pub dt: f64,
    pub warning: Option<String>,
}

impl SmearingKernel {
    /// A kernel with an explicit covariance and no record noise.
    pub fn from_cov(cov: [[f64; 2]; 2]) -> Self {
        Self {
            cov,
            record_var_per_step: 0.0,
            record_noise: 0.0,
            gram: [[0.0; 2]; 2],
            condition_number: 1.0,
            duration: 0.0,
            dt: 0.0,
            warning: None,
        }
    }

    pub fn det(&self) -> f64 {
        self.cov[0][0] * self.cov[1][1] - self.cov[0][1] * self.cov[1][0]
    }
}

pub(crate) fn scaled_basis(t: f64, mass: f64, omega: f64) -> [f64; 2] {
    if omega == 0.0 {
        [1.0, t / mass]
    } else {
        [(omega * t).cos(), (omega * t).sin() / (mass * omega)]
    }
}

fn gram_direct(n: usize, dt: f64, mass: f64, omega: f64) -> [[f64; 2]; 2] {
    let mut g = [[0.0; 2]; 2];
    for k in 0..n {
        let f = scaled_basis(k as f64 * dt, mass, omega);
        g[0][0] += f[0] * f[0];
        g[0][1] += f[0] * f[1];
        g[1][1] += f[1] * f[1];
    }
    g[1][0] = g[0][1];
    g.map(|r| r.map(|v| v * dt))
}

/// Left-Riemann Gram matrix over `n` steps of length `dt`, from closed-form
/// trigonometric sums.
pub fn gram_matrix(n: usize, dt: f64, mass: f64, omega: f64) -> [[f64; 2]; 2] {
    let nf = n as f64;
    if omega == 0.0 {
        // sum k, sum k^2 over 0..n
        let s1 = nf * (nf - 1.0) / 2.0;
        let s2 = (nf - 1.0) * nf * (2.0 * nf - 1.0) / 6.0;
        let off = dt * dt * s1 / mass;
        return [[dt * nf, off], [off, dt * dt * dt * s2 / (mass * mass)]];
    }
    let theta = 2.0 * omega * dt;
    let half = (theta / 2.0).sin();
    if omega * nf * dt < 1e-3 || half.abs() < 1e-6 {
        return gram_direct(n, dt, mass, omega);
    }
    // Dirichlet-kernel sums of cos(k theta) and sin(k theta), k = 0..n-1
    let amp = (nf * theta / 2.0).sin() / half;
    let mid = (nf - 1.0) * theta / 2.0;
    let sum_cos = amp * mid.cos();
    let sum_sin = amp * mid.sin();
    let mw = mass * omega;
    let cc = 0.5 * (nf + sum_cos) * dt;
    let ss = 0.5 * (nf - sum_cos) * dt / (mw * mw);
    let cs = 0.5 * sum_sin * dt / mw;
    [[cc, cs], [cs, ss]]
}

fn inv2(a: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]]
}

fn condition_number(a: [[f64; 2]; 2]) -> f64 {
    let tr = a[0][0] + a[1][1];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let hi = tr / 2.0 + disc;
    let lo = tr / 2.0 - disc;
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

pub fn build_smearing(params: &ModelParams, consts: &DerivedConstants) -> Result<SmearingKernel> {
    if params.lambda == 0.0 || !consts.record_noise_var.is_finite() {
        return Err(Error::InfiniteSmearing);
    }
    let n = params.n_steps();
    if n < 2 {
        return Err(Error::Precondition(
            "need at least two time steps for the smearing kernel".into(),
        ));
    }
    let gram = gram_matrix(n, params.dt, params.mass_small, params.omega);
    let cond = condition_number(gram);
    let gi = inv2(gram);
    let s = consts.record_noise_var;
    let warning = (cond > CONDITION_WARNING)
        .then(|| format!("Gram matrix is nearly singular (condition number {cond:.3e}); smearing is very anisotropic"));
    Ok(SmearingKernel {
        cov: gi.map(|r| r.map(|v| v * s)),
        record_var_per_step: s / params.dt,
        record_noise: s,
        gram,
        condition_number: cond,
        duration: params.duration,
        dt: params.dt,
        warning,
    })
}

/// Closed-form smearing of an analytic state.
pub fn smear_state(state: &SuperpositionState, kernel: &SmearingKernel) -> WignerMixture {
    state.wigner().smeared(kernel.cov)
}

/// Gaussian convolution of a gridded phase-space function, by FFT on a
/// zero-padded grid.
pub fn smear(w: &WignerGrid, kernel: &SmearingKernel) -> Result<WignerGrid> {
    let cov = kernel.cov;
    let (dq, dp) = (w.q.step(), w.p.step());
    let (sq, sp) = (cov[0][0].sqrt(), cov[1][1].sqrt());
    for (axis, sd, step) in [("q", sq, dq), ("p", sp, dp)] {
        if !(sd / step >= NODES_PER_SD) {
            return Err(Error::Resolution {
                axis,
                nodes_per_sd: sd / step,
                required: NODES_PER_SD,
            });
        }
    }
    let pad = |n: usize, sd: f64, step: f64| (n + 2 * (6.0 * sd / step).ceil() as usize).next_power_of_two();
    let (nq, np) = (pad(w.q.n, sq, dq), pad(w.p.n, sp, dp));
    let mut buf = vec![C::new(0.0, 0.0); nq * np];
    for i in 0..w.q.n {
        for j in 0..w.p.n {
            buf[i * np + j] = C::new(w.at(i, j), 0.0);
        }
    }
    let kq = wavenumbers(nq, dq);
    let kp = wavenumbers(np, dp);
    let mut planner = FftPlanner::new();
    fft2(&mut planner, &mut buf, nq, np, false);
    let scale = 1.0 / (nq * np) as f64;
    for (i, &a) in kq.iter().enumerate() {
        for (j, &b) in kp.iter().enumerate() {
            let quad = cov[0][0] * a * a + 2.0 * cov[0][1] * a * b + cov[1][1] * b * b;
            buf[i * np + j] *= (-0.5 * quad).exp() * scale;
        }
    }
    fft2(&mut planner, &mut buf, nq, np, true);
    let mut out = WignerGrid::zeros(w.q, w.p);
    out.imag_residue = w.imag_residue;
    for i in 0..w.q.n {
        for j in 0..w.p.n {
            out.values[i * w.p.n + j] = buf[i * np + j].re;
        }
    }
    Ok(out)
}

fn fft2(planner: &mut FftPlanner<f64>, buf: &mut [C], rows: usize, cols: usize, inverse: bool) {
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(cols), planner.plan_fft_inverse(rows))
    } else {
        (planner.plan_fft_forward(cols), planner.plan_fft_forward(rows))
    };
    row_fft.process(buf);
    let mut col = vec![C::new(0.0, 0.0); rows];
    for j in 0..cols {
        for i in 0..rows {
            col[i] = buf[i * cols + j];
        }
        col_fft.process(&mut col);
        for i in 0..rows {
            buf[i * cols + j] = col[i];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSample {
    pub q0: f64,
    pub p0: f64,
    pub sign: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSampleSet {
    pub samples: Vec<PhaseSample>,
    pub seed: u64,
    pub acceptance_rate: f64,
}

/// Draws `n` samples from a nonnegative gridded density: inverse CDF over the
/// nodes, then uniform jitter within the node's cell.
pub fn sample_phase_space(w: &WignerGrid, n: usize, seed: u64) -> Result<PhaseSampleSet> {
    let sampler = GridSampler::new(w)?;
    let samples = (0..n)
        .map(|i| sampler.sample(&mut rng::stream(seed, i as u64)))
        .collect();
    Ok(PhaseSampleSet {
        samples,
        seed,
        acceptance_rate: 1.0,
    })
}

/// Reusable inverse-CDF sampler over a gridded density.
#[derive(Debug, Clone)]
pub struct GridSampler {
    cdf: Vec<f64>,
    q: crate::grid::AxisSpec,
    p: crate::grid::AxisSpec,
}

impl GridSampler {
    pub fn new(w: &WignerGrid) -> Result<Self> {
        let max = w.max();
        let min = w.min();
        if min < -NEGATIVITY_TOL * max.max(1.0) {
            return Err(Error::NotAProbability { min });
        }
        let mut acc = 0.0;
        let cdf: Vec<f64> = w
            .values
            .iter()
            .map(|&v| {
                acc += v.max(0.0);
                acc
            })
            .collect();
        if !(acc > 0.0) {
            return Err(Error::NotAProbability { min });
        }
        Ok(Self { cdf, q: w.q, p: w.p })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PhaseSample {
        let total = *self.cdf.last().unwrap();
        let u: f64 = rng.gen::<f64>() * total;
        let k = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        let (i, j) = (k / self.p.n, k % self.p.n);
        let jq: f64 = rng.gen::<f64>() - 0.5;
        let jp: f64 = rng.gen::<f64>() - 0.5;
        PhaseSample {
            q0: self.q.node(i) + jq * self.q.step(),
            p0: self.p.node(j) + jp * self.p.step(),
            sign: 1.0,
        }
    }
}

fn check_small_grid(psi: &GridWavefunction, slices: usize) -> Result<()> {
    if slices > SMALLGRID_MAX_SLICES || psi.axis.n > SMALLGRID_MAX_POINTS {
        return Err(Error::CostGuard {
            slices,
            points: psi.axis.n,
            max_slices: SMALLGRID_MAX_SLICES,
            max_points: SMALLGRID_MAX_POINTS,
        });
    }
    Ok(())
}

/// One-slice propagator `exp(-i h dt / hbar)` of the finite-difference grid
/// Hamiltonian with a linear source `lambda Q x`.
fn slice_propagator(psi: &GridWavefunction, params: &ModelParams, q_large: f64) -> DMatrix<C> {
    let n = psi.axis.n;
    let dx = psi.dq();
    let (m, w, hbar) = (params.mass_small, params.omega, params.hbar);
    let kin = hbar * hbar / (2.0 * m * dx * dx);
    let mut h = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let x = psi.axis.node(i);
        h[(i, i)] = 2.0 * kin + 0.5 * m * w * w * x * x + params.lambda * q_large * x;
        if i + 1 < n {
            h[(i, i + 1)] = -kin;
            h[(i + 1, i)] = -kin;
        }
    }
    let eig = SymmetricEigen::new(h);
    let v = eig.eigenvectors.map(|x| C::new(x, 0.0));
    let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| C::from_polar(1.0, -e * params.dt / hbar)));
    &v * phases * v.adjoint()
}

/// Dense sum over all grid paths `(x_k, y_k)` of
/// `rho0(x0, y0) prod_k factor(k, x_k, y_k) U(x_{k+1}, x_k) U*(y_{k+1}, y_k)`,
/// traced at the end. The source `Q` is piecewise constant per slice.
pub fn dense_path_sum(
    psi: &GridWavefunction,
    q_path: &[f64],
    params: &ModelParams,
    factor: impl Fn(usize, f64, f64) -> f64,
) -> Result<f64> {
    check_small_grid(psi, q_path.len())?;
    let n = psi.axis.n;
    let dx = psi.dq();
    let x = psi.axis.nodes();
    let mut rho = DMatrix::<C>::from_fn(n, n, |i, j| psi.values[i] * psi.values[j].conj() * dx);
    for (k, &qk) in q_path.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                rho[(i, j)] *= factor(k, x[i], x[j]);
            }
        }
        let u = slice_propagator(psi, params, qk);
        rho = &u * rho * u.adjoint();
    }
    Ok(rho.trace().re)
}

fn check_lengths(qbar: &[f64], q_path: &[f64]) -> Result<()> {
    if qbar.len() != q_path.len() || qbar.is_empty() {
        return Err(Error::MismatchedGrids(format!(
            "record has {} samples, path has {}",
            qbar.len(),
            q_path.len()
        )));
    }
    Ok(())
}

/// Unnormalized weight of the record `qbar` given the large-particle path,
/// by dense path summation.
pub fn weight_direct_smallgrid(
    psi: &GridWavefunction,
    qbar: &[f64],
    q_path: &[f64],
    params: &ModelParams,
    consts: &DerivedConstants,
) -> Result<f64> {
    check_lengths(qbar, q_path)?;
    let s1 = consts.sigma1_sq;
    let dt = params.dt;
    dense_path_sum(psi, q_path, params, |k, x, y| weight_factor(dt, s1, qbar[k], x, y))
}

#[inline]
fn weight_factor(dt: f64, sigma1_sq: f64, qbar: f64, x: f64, y: f64) -> f64 {
    let q = 0.5 * (x + y);
    (-dt * (q - qbar) * (q - qbar) / sigma1_sq).exp()
}

/// Continuous-measurement probability density of the record with
/// imprecision `sigma1_sq`. With `include_offdiagonal = false` the extra
/// `exp(-dt (x-y)^2 / (4 sigma1^2))` factor is dropped, which reproduces the
/// weight function exactly.
pub fn cm_probability_smallgrid_with(
    psi: &GridWavefunction,
    qbar: &[f64],
    q_path: &[f64],
    params: &ModelParams,
    sigma1_sq: f64,
    include_offdiagonal: bool,
) -> Result<f64> {
    check_lengths(qbar, q_path)?;
    let dt = params.dt;
    dense_path_sum(psi, q_path, params, |k, x, y| {
        let w = weight_factor(dt, sigma1_sq, qbar[k], x, y);
        if include_offdiagonal {
            let xi = x - y;
            w * (-dt * xi * xi / (4.0 * sigma1_sq)).exp()
        } else {
            w
        }
    })
}

pub fn cm_probability_smallgrid(
    psi: &GridWavefunction,
    qbar: &[f64],
    q_path: &[f64],
    params: &ModelParams,
    sigma1_sq: f64,
) -> Result<f64> {
    cm_probability_smallgrid_with(psi, qbar, q_path, params, sigma1_sq, true)
}

/// Normalization of a single-slice Gaussian record factor, `sqrt(pi sigma1^2 / dt)`.
pub fn record_factor_norm(sigma1_sq: f64, dt: f64) -> f64 {
    (PI * sigma1_sq / dt).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::AxisSpec;
    use crate::model::{derive_constants, unit_params};
    use crate::qstate::GaussianPacket;
    use proptest::prelude::*;

    #[test]
    fn free_particle_gram_matches_polynomial_integrals() {
        let n = 100_000;
        let g = gram_matrix(n, 1.0 / n as f64, 1.0, 0.0);
        // int_0^1 (1, t)(1, t)^T dt, left-Riemann error O(dt)
        let exact = [[1.0, 0.5], [0.5, 1.0 / 3.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((g[i][j] - exact[i][j]).abs() < 2e-5);
            }
        }
        let d = gram_direct(1000, 1e-3, 1.0, 0.0);
        let c = gram_matrix(1000, 1e-3, 1.0, 0.0);
        for i in 0..2 {
            for j in 0..2 {
                assert!((d[i][j] - c[i][j]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn full_period_gram_is_diagonal() {
        let n = 6283;
        let dt = 2.0 * PI / n as f64;
        let g = gram_matrix(n, dt, 1.0, 1.0);
        assert!((g[0][0] - PI).abs() < 1e-12);
        assert!((g[1][1] - PI).abs() < 1e-12);
        assert!(g[0][1].abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn closed_form_gram_matches_direct_sum(
            n in 2usize..3000, dt in 1e-3f64..0.5, m in 0.2f64..5.0, w in 0.0f64..4.0
        ) {
            let a = gram_matrix(n, dt, m, w);
            let b = gram_direct(n, dt, m, w);
            let scale = b[0][0].abs().max(b[1][1].abs()).max(1e-300);
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!((a[i][j] - b[i][j]).abs() <= 1e-9 * scale, "{a:?} vs {b:?}");
                }
            }
        }

        #[test]
        fn closed_form_gram_matches_quadrature(w in 0.1f64..3.0, tau in 0.5f64..8.0) {
            // midpoint-free check against the continuum integrals; left-Riemann bias O(dt)
            let n = 200_000;
            let dt = tau / n as f64;
            let g = gram_matrix(n, dt, 1.0, w);
            let (s2, c2) = ((2.0 * w * tau).sin(), (2.0 * w * tau).cos());
            let cc = tau / 2.0 + s2 / (4.0 * w);
            let ss = (tau / 2.0 - s2 / (4.0 * w)) / (w * w);
            let cs = (1.0 - c2) / (4.0 * w * w);
            prop_assert!((g[0][0] - cc).abs() < 1e-4);
            prop_assert!((g[1][1] - ss).abs() < 1e-4 * (1.0 + ss));
            prop_assert!((g[0][1] - cs).abs() < 1e-4 * (1.0 + cs.abs()));
        }
    }

    #[test]
    fn kernel_scales_with_eta_and_rejects_zero_coupling() {
        let p = unit_params();
        let k1 = build_smearing(&p, &derive_constants(&p).unwrap()).unwrap();
        let pa = p.with_eta(0.25);
        let pb = p.with_eta(0.5);
        let ka = build_smearing(&pa, &derive_constants(&pa).unwrap()).unwrap();
        let kb = build_smearing(&pb, &derive_constants(&pb).unwrap()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((kb.cov[i][j] - 2.0 * ka.cov[i][j]).abs() < 1e-12 * kb.cov[i][j].abs().max(1.0));
            }
        }
        assert!(k1.det() > 0.0 && k1.cov[0][1] == k1.cov[1][0]);
        let z = p.with_lambda(0.0);
        assert_eq!(
            build_smearing(&z, &derive_constants(&z).unwrap()),
            Err(Error::InfiniteSmearing)
        );
    }

    #[test]
    fn short_window_warns() {
        let mut p = unit_params();
        p.duration = 1e-4;
        p.dt = 1e-6;
        let k = build_smearing(&p, &derive_constants(&p).unwrap()).unwrap();
        assert!(k.warning.is_some());
    }

    fn cat(q0: f64) -> SuperpositionState {
        SuperpositionState::cat(q0, 0.5f64.sqrt(), 0.5, 0.5, 1.0).unwrap()
    }

    #[test]
    fn grid_smearing_matches_analytic() {
        let st = cat(3.0);
        let kernel = SmearingKernel::from_cov([[0.5, 0.1], [0.1, 0.6]]);
        let q = AxisSpec::symmetric(10.0, 321).unwrap();
        let p = AxisSpec::symmetric(8.0, 257).unwrap();
        let g = smear(&st.wigner().sample_grid(q, p), &kernel).unwrap();
        let a = smear_state(&st, &kernel).sample_grid(q, p);
        let diff = g
            .values
            .iter()
            .zip(&a.values)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-8, "{diff}");
        assert!((g.integral() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn narrow_packet_reproduces_kernel() {
        let st = SuperpositionState::single(
            GaussianPacket {
                q0: 0.0,
                p0: 0.0,
                s: 1e-3,
                phase: 0.0,
            },
            1e-6,
        )
        .unwrap();
        let cov = [[1.0, 0.3], [0.3, 2.0]];
        let w = smear_state(&st, &SmearingKernel::from_cov(cov));
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[0][1];
        for &(q, p) in &[(0.0, 0.0), (1.0, -0.5), (-0.7, 1.9)] {
            let quad = (cov[1][1] * q * q - 2.0 * cov[0][1] * q * p + cov[0][0] * p * p) / det;
            let g = (-0.5 * quad).exp() / (2.0 * PI * det.sqrt());
            assert!((w.eval(q, p) - g).abs() < 1e-5 * g.max(1e-3));
        }
    }

    #[test]
    fn positivity_threshold() {
        let st = cat(3.0);
        let q = AxisSpec::symmetric(8.0, 321).unwrap();
        let p = AxisSpec::symmetric(6.0, 241).unwrap();
        let s = 0.5f64.sqrt();
        let minimal = smear_state(&st, &SmearingKernel::from_cov([[s * s, 0.0], [0.0, 0.25 / (s * s)]]));
        assert!(minimal.sample_grid(q, p).min() >= -1e-10);
        // sqrt det = hbar / 8
        let e = 0.125f64.sqrt();
        let weak = smear_state(
            &st,
            &SmearingKernel::from_cov([[e * s * s, 0.0], [0.0, e * 0.25 / (s * s)]]),
        );
        assert!(weak.sample_grid(q, p).min() < -1e-3);
    }

    #[test]
    fn grid_resolution_guard() {
        let q = AxisSpec::symmetric(8.0, 33).unwrap();
        let w = cat(3.0).wigner().sample_grid(q, q);
        assert!(matches!(
            smear(&w, &SmearingKernel::from_cov([[0.1, 0.0], [0.0, 0.1]])),
            Err(Error::Resolution { .. })
        ));
    }

    #[test]
    fn smearing_commutes_with_translation() {
        let st = cat(2.5);
        let k = SmearingKernel::from_cov([[0.4, 0.05], [0.05, 0.7]]);
        let a = smear_state(&st, &k).translated(0.7, -0.4);
        let b = st.wigner().translated(0.7, -0.4).smeared(k.cov);
        for &(q, p) in &[(0.0, 0.0), (3.2, -0.4), (-1.8, 0.9)] {
            assert!((a.eval(q, p) - b.eval(q, p)).abs() < 1e-12);
        }
        // and on the grid, with a whole-cell shift
        let q = AxisSpec::symmetric(10.0, 401).unwrap();
        let p = AxisSpec::symmetric(6.0, 241).unwrap();
        let shift = 20.0 * q.step();
        let g1 = smear(&st.wigner().translated(shift, 0.0).sample_grid(q, p), &k).unwrap();
        let g2 = smear(&st.wigner().sample_grid(q, p), &k).unwrap();
        for i in 20..q.n {
            for j in 0..p.n {
                assert!((g1.at(i, j) - g2.at(i - 20, j)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn interference_suppressed_as_kernel_widens() {
        let st = cat(3.0);
        let full = st.wigner();
        let auto = st.wigner_auto_terms();
        let mut prev = f64::INFINITY;
        for scale in [0.6, 1.0, 1.6] {
            let cov = [[0.25 * scale, 0.0], [0.0, 1.0 * scale]];
            let a = full.smeared(cov);
            let b = auto.smeared(cov);
            let (h, mut l1) = (0.01, 0.0);
            for i in 0..=150 {
                let q = -0.75 + i as f64 * h;
                for j in -600..=600 {
                    let p = j as f64 * h;
                    l1 += (a.eval(q, p) - b.eval(q, p)).abs() * h * h;
                }
            }
            assert!(l1 < prev, "{l1} !< {prev}");
            prev = l1;
        }
    }

    #[test]
    fn sampling_moments_and_reproducibility() {
        let st = SuperpositionState::single(
            GaussianPacket {
                q0: 1.0,
                p0: -0.5,
                s: 0.7,
                phase: 0.0,
            },
            1.0,
        )
        .unwrap();
        let q = AxisSpec::symmetric(7.0, 281).unwrap();
        let p = AxisSpec::symmetric(7.0, 281).unwrap();
        let w = smear_state(&st, &SmearingKernel::from_cov([[0.3, 0.0], [0.0, 0.3]])).sample_grid(q, p);
        let n = 100_000;
        let set = sample_phase_space(&w, n, 42).unwrap();
        let again = sample_phase_space(&w, 10, 42).unwrap();
        assert_eq!(&set.samples[..10], &again.samples[..]);
        let (mean, cov) = w.moments();
        let mq = set.samples.iter().map(|s| s.q0).sum::<f64>() / n as f64;
        let mp = set.samples.iter().map(|s| s.p0).sum::<f64>() / n as f64;
        assert!((mq - mean[0]).abs() < 5.0 * (cov[0][0] / n as f64).sqrt());
        assert!((mp - mean[1]).abs() < 5.0 * (cov[1][1] / n as f64).sqrt());
        let vq = set.samples.iter().map(|s| (s.q0 - mq).powi(2)).sum::<f64>() / n as f64;
        // jitter adds step^2/12
        let expect = cov[0][0] + q.step().powi(2) / 12.0;
        assert!((vq - expect).abs() < 5.0 * expect * (2.0 / n as f64).sqrt());
        assert!(sample_phase_space(&w, 0, 1).unwrap().samples.is_empty());
    }

    #[test]
    fn cat_branch_fractions_from_auto_terms() {
        let st = SuperpositionState::cat(4.0, 0.5f64.sqrt(), 0.3, 0.7, 1.0).unwrap();
        let q = AxisSpec::symmetric(10.0, 201).unwrap();
        let p = AxisSpec::symmetric(6.0, 121).unwrap();
        let w = smear_state(&st, &SmearingKernel::from_cov([[0.5, 0.0], [0.0, 0.6]])).sample_grid(q, p);
        let n = 20_000;
        let set = sample_phase_space(&w, n, 9).unwrap();
        let frac = set.samples.iter().filter(|s| s.q0 > 0.0).count() as f64 / n as f64;
        assert!((frac - 0.7).abs() < 5.0 * (0.21 / n as f64).sqrt());
    }

    #[test]
    fn unsmeared_cat_is_rejected() {
        let q = AxisSpec::symmetric(8.0, 161).unwrap();
        let w = cat(3.0).wigner().sample_grid(q, q);
        assert!(matches!(
            sample_phase_space(&w, 5, 1),
            Err(Error::NotAProbability { .. })
        ));
    }

    fn small_params(lambda: f64) -> ModelParams {
        ModelParams {
            lambda,
            dt: 0.2,
            duration: 0.8,
            ..unit_params()
        }
    }

    fn small_state(st: &SuperpositionState) -> GridWavefunction {
        st.to_grid(AxisSpec::new(-9.0, 9.0, 64).unwrap()).unwrap()
    }

    #[test]
    fn single_slice_collapses_to_smeared_density() {
        let p = small_params(1.0);
        let c = derive_constants(&p).unwrap();
        let psi = small_state(&cat(2.0));
        for qbar in [-1.5, 0.0, 0.8] {
            let w = weight_direct_smallgrid(&psi, &[qbar], &[0.3], &p, &c).unwrap();
            let direct: f64 = psi
                .values
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let x = psi.axis.node(i);
                    v.norm_sqr() * psi.dq() * (-p.dt * (x - qbar).powi(2) / c.sigma1_sq).exp()
                })
                .sum();
            assert!((w - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn peak_follows_classical_response() {
        // coherent state at rest at q0 = 1; the record peak tracks the classical
        // solution including the response to the large particle
        let mut p = small_params(1.0);
        p.dt = 0.3;
        let c = derive_constants(&p).unwrap();
        let packet = GaussianPacket::coherent(1.0, 0.0, 1.0, 1.0, 1.0);
        let psi = small_state(&SuperpositionState::single(packet, 1.0).unwrap());
        let cells = psi.dq();
        for big_q in [0.0, 1.5] {
            let classical: Vec<f64> = (0..3)
                .map(|k| {
                    let t = k as f64 * p.dt;
                    // constant source lambda Q shifts the equilibrium to -lambda Q / (m w^2)
                    let eq = -p.lambda * big_q;
                    eq + (1.0 - eq) * t.cos()
                })
                .collect();
            let path = [big_q; 3];
            let mut best = (f64::NEG_INFINITY, 0.0);
            for s in -40..=40 {
                let shift = s as f64 * cells / 8.0;
                let qbar: Vec<f64> = classical.iter().map(|v| v + shift).collect();
                let w = weight_direct_smallgrid(&psi, &qbar, &path, &p, &c).unwrap();
                if w > best.0 {
                    best = (w, shift);
                }
            }
            assert!(best.1.abs() <= cells, "Q = {big_q}: peak offset {}", best.1);
        }
    }

    #[test]
    fn continuous_measurement_identity() {
        let p = small_params(0.7);
        let c = derive_constants(&p).unwrap();
        let psi = small_state(&cat(2.0));
        let qbar = [0.4, -0.2, 1.1];
        let path = [0.2, 0.5, -0.3];
        let w = weight_direct_smallgrid(&psi, &qbar, &path, &p, &c).unwrap();
        let stripped = cm_probability_smallgrid_with(&psi, &qbar, &path, &p, c.sigma1_sq, false).unwrap();
        assert_eq!(w.to_bits(), stripped.to_bits());
        // literal two-Gaussian form of the measurement factor
        let dt = p.dt;
        let s1 = c.sigma1_sq;
        let literal = dense_path_sum(&psi, &path, &p, |k, x, y| {
            (-dt * (x - qbar[k]).powi(2) / (2.0 * s1) - dt * (y - qbar[k]).powi(2) / (2.0 * s1)).exp()
        })
        .unwrap();
        let cm = cm_probability_smallgrid(&psi, &qbar, &path, &p, s1).unwrap();
        assert!((literal - cm).abs() < 1e-12 * literal.abs().max(1e-300));
    }

    #[test]
    fn measurement_and_weight_are_close_for_weak_measurement() {
        // the extra factor dephases the cat; it shows where the packets interfere
        let p = ModelParams {
            dt: 0.6,
            duration: 2.4,
            ..small_params(0.7)
        };
        let psi = small_state(&cat(2.5));
        let qbar = [0.0; 4];
        let path = [0.0; 4];
        let rel = |s1: f64| {
            let mut c = derive_constants(&p).unwrap();
            c.sigma1_sq = s1;
            let w = weight_direct_smallgrid(&psi, &qbar, &path, &p, &c).unwrap();
            let cm = cm_probability_smallgrid(&psi, &qbar, &path, &p, s1).unwrap();
            (cm - w).abs() / w
        };
        assert!(rel(1e4) < 0.01);
        assert!(rel(1.0) > 0.10);
    }

    #[test]
    fn cost_guard() {
        let p = small_params(1.0);
        let c = derive_constants(&p).unwrap();
        let psi = small_state(&cat(2.0));
        assert!(matches!(
            weight_direct_smallgrid(&psi, &[0.0; 5], &[0.0; 5], &p, &c),
            Err(Error::CostGuard { .. })
        ));
        let big = cat(2.0).to_grid(AxisSpec::new(-9.0, 9.0, 128).unwrap()).unwrap();
        assert!(matches!(
            weight_direct_smallgrid(&big, &[0.0], &[0.0], &p, &c),
            Err(Error::CostGuard { .. })
        ));
    }
}
