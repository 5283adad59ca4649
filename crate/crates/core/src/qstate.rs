//! Initial quantum states of the small particle: analytic Gaussian-packet
//! superpositions and gridded wavefunctions, their Wigner functions and their
//! decomposition in the harmonic-oscillator energy basis.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::AxisSpec;
use crate::phase_space::{ComplexGaussian2, WignerGrid, WignerMixture};
use crate::spectral::KineticOperator;

type C = Complex64;

/// Normalization tolerance for analytic superpositions.
pub const PACKET_NORM_TOL: f64 = 1e-12;
/// Normalization tolerance for gridded states.
pub const GRID_NORM_TOL: f64 = 1e-10;
/// Largest admissible amplitude at either boundary node.
pub const BOUNDARY_TOL: f64 = 1e-6;
/// Largest admissible momentum density at the edges of a Wigner momentum axis.
pub const MOMENTUM_SPAN_TOL: f64 = 1e-6;

/// Normalized Gaussian wavepacket
/// `(2 pi s^2)^(-1/4) exp(-(q-q0)^2/(4 s^2) + i p0 (q-q0)/hbar + i phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPacket {
    pub q0: f64,
    pub p0: f64,
    /// Position standard deviation of `|psi|^2`.
    pub s: f64,
    #[serde(default)]
    pub phase: f64,
}

impl GaussianPacket {
    /// Coherent-state packet of the oscillator `(m, omega)`.
    pub fn coherent(q0: f64, p0: f64, mass: f64, omega: f64, hbar: f64) -> Self {
        Self {
            q0,
            p0,
            s: (hbar / (2.0 * mass * omega)).sqrt(),
            phase: 0.0,
        }
    }

    /// Exponent coefficients `(a, b, c)` with `psi(x) = exp(-a x^2 + b x + c)`.
    fn exponent(&self, hbar: f64) -> (f64, C, C) {
        let a = 1.0 / (4.0 * self.s * self.s);
        let k = self.p0 / hbar;
        let b = C::new(2.0 * a * self.q0, k);
        let norm = -0.25 * (2.0 * PI * self.s * self.s).ln();
        let cc = C::new(-a * self.q0 * self.q0 + norm, -k * self.q0 + self.phase);
        (a, b, cc)
    }
}

/// `int exp(-alpha x^2 + beta x + gamma) dx` for `Re alpha > 0`.
fn gauss_integral(alpha: C, beta: C, gamma: C) -> C {
    (C::new(PI, 0.0) / alpha).sqrt() * (beta * beta / (4.0 * alpha) + gamma).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperpositionState {
    pub terms: Vec<(C, GaussianPacket)>,
    pub hbar: f64,
}

impl SuperpositionState {
    /// Normalizes the amplitudes, including packet overlaps.
    pub fn new(terms: Vec<(C, GaussianPacket)>, hbar: f64) -> Result<Self> {
        if terms.is_empty() {
            return Err(invalid("state", "superposition needs at least one packet"));
        }
        if !(hbar > 0.0) {
            return Err(invalid("hbar", "must be > 0"));
        }
        for (_, p) in &terms {
            if !(p.s > 0.0 && p.s.is_finite()) {
                return Err(invalid("packet.s", format!("width must be > 0, got {}", p.s)));
            }
        }
        let mut st = Self { terms, hbar };
        let n2 = st.raw_norm_sqr();
        if !(n2 > 0.0 && n2.is_finite()) {
            return Err(invalid("state", "amplitudes give zero norm"));
        }
        let scale = n2.sqrt().recip();
        for (a, _) in &mut st.terms {
            *a *= scale;
        }
        Ok(st)
    }

    pub fn single(packet: GaussianPacket, hbar: f64) -> Result<Self> {
        Self::new(vec![(C::new(1.0, 0.0), packet)], hbar)
    }

    /// Two packets of width `s` at `-q0` and `+q0` with populations `w1`, `w2`
    /// (before overlap correction).
    pub fn cat(q0: f64, s: f64, w1: f64, w2: f64, hbar: f64) -> Result<Self> {
        let pk = |q| GaussianPacket {
            q0: q,
            p0: 0.0,
            s,
            phase: 0.0,
        };
        Self::new(
            vec![(C::new(w1.sqrt(), 0.0), pk(-q0)), (C::new(w2.sqrt(), 0.0), pk(q0))],
            hbar,
        )
    }

    fn overlap(&self, a: &GaussianPacket, b: &GaussianPacket) -> C {
        let (aa, ba, ca) = a.exponent(self.hbar);
        let (ab, bb, cb) = b.exponent(self.hbar);
        gauss_integral(C::new(aa + ab, 0.0), ba.conj() + bb, ca.conj() + cb)
    }

    fn raw_norm_sqr(&self) -> f64 {
        let mut s = C::new(0.0, 0.0);
        for (ca, a) in &self.terms {
            for (cb, b) in &self.terms {
                s += ca.conj() * cb * self.overlap(a, b);
            }
        }
        s.re
    }

    pub fn norm_sqr(&self) -> f64 {
        self.raw_norm_sqr()
    }

    pub fn eval(&self, x: f64) -> C {
        self.terms
            .iter()
            .map(|(amp, p)| {
                let (a, b, c) = p.exponent(self.hbar);
                amp * (-a * x * x + b * x + c).exp()
            })
            .sum()
    }

    /// `<q>` and `<p>` in closed form.
    pub fn mean_position_momentum(&self) -> (f64, f64) {
        let mut q = C::new(0.0, 0.0);
        let mut p = C::new(0.0, 0.0);
        for (ca, a) in &self.terms {
            let (aa, ba, ga) = a.exponent(self.hbar);
            for (cb, b) in &self.terms {
                let (ab, bb, gb) = b.exponent(self.hbar);
                let alpha = C::new(aa + ab, 0.0);
                let beta = ba.conj() + bb;
                let i0 = gauss_integral(alpha, beta, ga.conj() + gb);
                let i1 = i0 * beta / (2.0 * alpha);
                let w = ca.conj() * cb;
                q += w * i1;
                // -i hbar d/dx psi_b = -i hbar (-2 a_b x + b_b) psi_b
                p += w * C::new(0.0, -self.hbar) * (-2.0 * ab * i1 + bb * i0);
            }
        }
        (q.re, p.re)
    }

    /// Closed-form Wigner function including the oscillatory cross terms.
    pub fn wigner(&self) -> WignerMixture {
        let hbar = self.hbar;
        let mut terms = Vec::with_capacity(self.terms.len() * self.terms.len());
        for (ca, a) in &self.terms {
            let (aa, ba, ga) = a.exponent(hbar);
            for (cb, b) in &self.terms {
                let (ab, bb, gb) = b.exponent(hbar);
                let alpha = (aa + ab) / 4.0;
                let u = [C::new(ab - aa, 0.0), C::new(0.0, -1.0 / hbar)];
                let beta0 = (ba - bb.conj()) / 2.0;
                let mut p = [[C::new(0.0, 0.0); 2]; 2];
                for i in 0..2 {
                    for j in 0..2 {
                        p[i][j] = -u[i] * u[j] / (2.0 * alpha);
                    }
                }
                p[0][0] += 2.0 * (aa + ab);
                let bvec = [
                    beta0 / (2.0 * alpha) * u[0] + ba + bb.conj(),
                    beta0 / (2.0 * alpha) * u[1],
                ];
                let prefactor = ((PI / alpha).sqrt() / (2.0 * PI * hbar)).ln();
                let c = beta0 * beta0 / (4.0 * alpha) + ga + gb.conj() + prefactor;
                terms.push((ca * cb.conj(), ComplexGaussian2 { p, b: bvec, c }));
            }
        }
        WignerMixture { terms }
    }

    /// Wigner function of the incoherent mixture of the packets, weighted by
    /// `|amplitude|^2`, i.e. the auto terms only.
    pub fn wigner_auto_terms(&self) -> WignerMixture {
        let n = self.terms.len();
        let full = self.wigner();
        WignerMixture {
            terms: full
                .terms
                .into_iter()
                .enumerate()
                .filter(|(k, _)| k / n == k % n)
                .map(|(_, t)| t)
                .collect(),
        }
    }

    /// Momentum density `|phi(p)|^2`.
    pub fn momentum_density(&self, p: f64) -> f64 {
        let k = p / self.hbar;
        let amp: C = self
            .terms
            .iter()
            .map(|(amp, pk)| {
                let (a, b, c) = pk.exponent(self.hbar);
                amp * gauss_integral(C::new(a, 0.0), b - C::new(0.0, k), c)
            })
            .sum();
        amp.norm_sqr() / (2.0 * PI * self.hbar)
    }

    /// Samples the state on `axis`, which must be a power-of-two grid.
    pub fn to_grid(&self, axis: AxisSpec) -> Result<GridWavefunction> {
        let values = axis.nodes().into_iter().map(|x| self.eval(x)).collect();
        let g = GridWavefunction::new(axis, values, self.hbar)?;
        g.check_boundary()?;
        Ok(g.normalized())
    }
}

/// Wavefunction on a uniform power-of-two grid with both endpoints as nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridWavefunction {
    pub axis: AxisSpec,
    pub values: Vec<C>,
    pub hbar: f64,
}

impl GridWavefunction {
    pub fn new(axis: AxisSpec, values: Vec<C>, hbar: f64) -> Result<Self> {
        axis.check()?;
        if !axis.n.is_power_of_two() {
            return Err(invalid("grid.n", format!("must be a power of two, got {}", axis.n)));
        }
        if values.len() != axis.n {
            return Err(invalid("grid.values", "length does not match the axis"));
        }
        Ok(Self { axis, values, hbar })
    }

    /// Any node count; only for the dense path-sum evaluators, which never
    /// transform to momentum space.
    pub fn dense(axis: AxisSpec, values: Vec<C>, hbar: f64) -> Result<Self> {
        axis.check()?;
        if values.len() != axis.n {
            return Err(invalid("grid.values", "length does not match the axis"));
        }
        Ok(Self { axis, values, hbar })
    }

    pub fn dq(&self) -> f64 {
        self.axis.step()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.dq()
    }

    pub fn normalized(mut self) -> Self {
        let s = self.norm_sqr().sqrt().recip();
        for v in &mut self.values {
            *v *= s;
        }
        self
    }

    pub fn check_normalized(&self) -> Result<()> {
        let n = self.norm_sqr();
        if (n - 1.0).abs() > GRID_NORM_TOL {
            return Err(Error::Precondition(format!("grid state norm {n} deviates from 1")));
        }
        Ok(())
    }

    pub fn check_boundary(&self) -> Result<()> {
        let n = self.values.len();
        let edge = self.values[0].norm().max(self.values[n - 1].norm());
        if edge > BOUNDARY_TOL {
            return Err(Error::Leakage {
                leakage: edge,
                limit: BOUNDARY_TOL,
            });
        }
        Ok(())
    }

    /// Probability in the outer `1/32` of the grid on each side.
    pub fn edge_probability(&self) -> f64 {
        let n = self.values.len();
        let w = (n / 32).max(1);
        let s: f64 = self.values[..w]
            .iter()
            .chain(&self.values[n - w..])
            .map(|v| v.norm_sqr())
            .sum();
        s * self.dq()
    }

    pub fn density(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }

    /// `<f(q)>` for a normalized state.
    pub fn expect_position_fn(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v.norm_sqr() * f(self.axis.node(i)))
            .sum::<f64>()
            * self.dq()
    }

    /// Momentum density `|phi(p)|^2` by direct Fourier sum.
    pub fn momentum_density(&self, p: f64) -> f64 {
        let k = p / self.hbar;
        let dq = self.dq();
        let amp: C = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| v * C::from_polar(1.0, -k * self.axis.node(i)))
            .sum();
        (amp * dq).norm_sqr() / (2.0 * PI * self.hbar)
    }

    /// `<T>` and `<p>` via FFT.
    pub fn kinetic_and_momentum(&self, mass: f64) -> (f64, f64) {
        KineticOperator::new(self.axis.n, self.dq(), mass, self.hbar).kinetic_and_momentum(&self.values)
    }

    /// Oscillator energy `<p^2/2m + m omega^2 q^2/2>`.
    pub fn oscillator_energy(&self, mass: f64, omega: f64) -> f64 {
        let (t, _) = self.kinetic_and_momentum(mass);
        t + self.expect_position_fn(|x| 0.5 * mass * omega * omega * x * x)
    }

    /// State with the given energy-basis amplitudes.
    pub fn from_energy_amplitudes(axis: AxisSpec, amps: &[C], mass: f64, omega: f64, hbar: f64) -> Result<Self> {
        let basis = hermite_functions(&axis.nodes(), amps.len().saturating_sub(1), mass, omega, hbar);
        let values = (0..axis.n)
            .map(|i| amps.iter().zip(&basis).map(|(a, phi)| a * phi[i]).sum())
            .collect();
        Ok(Self::new(axis, values, hbar)?.normalized())
    }
}

/// Where a Wigner function comes from.
pub enum WignerSource<'a> {
    Grid(&'a GridWavefunction),
    Analytic { state: &'a SuperpositionState, q: AxisSpec },
}

/// `W(q, p) = (1/2 pi hbar) int dxi exp(-i p xi/hbar) psi(q + xi/2) psi*(q - xi/2)`.
pub fn wigner_transform(source: WignerSource<'_>, p_axis: AxisSpec) -> Result<WignerGrid> {
    p_axis.check()?;
    match source {
        WignerSource::Analytic { state, q } => {
            let n2 = state.norm_sqr();
            if (n2 - 1.0).abs() > PACKET_NORM_TOL {
                return Err(Error::Precondition(format!("state norm {n2} deviates from 1")));
            }
            let leak = state
                .momentum_density(p_axis.min)
                .max(state.momentum_density(p_axis.max));
            if leak > MOMENTUM_SPAN_TOL {
                return Err(Error::Span {
                    leakage: leak,
                    limit: MOMENTUM_SPAN_TOL,
                });
            }
            Ok(state.wigner().sample_grid(q, p_axis))
        }
        WignerSource::Grid(psi) => {
            psi.check_normalized()?;
            let leak = psi.momentum_density(p_axis.min).max(psi.momentum_density(p_axis.max));
            if leak > MOMENTUM_SPAN_TOL {
                return Err(Error::Span {
                    leakage: leak,
                    limit: MOMENTUM_SPAN_TOL,
                });
            }
            Ok(grid_wigner(psi, p_axis))
        }
    }
}

fn grid_wigner(psi: &GridWavefunction, p_axis: AxisSpec) -> WignerGrid {
    let n = psi.axis.n;
    let dq = psi.dq();
    let hbar = psi.hbar;
    let kmax = n / 2;
    // xi = 2 k dq, so each momentum needs phases exp(-2 i p k dq / hbar)
    let phases: Vec<Vec<C>> = p_axis
        .nodes()
        .iter()
        .map(|&p| {
            (0..=kmax)
                .map(|k| C::from_polar(1.0, -2.0 * p * k as f64 * dq / hbar))
                .collect()
        })
        .collect();
    let pref = dq / (PI * hbar);
    let mut out = WignerGrid::zeros(psi.axis, p_axis);
    let mut residue: f64 = 0.0;
    let mut plus = vec![C::new(0.0, 0.0); kmax + 1];
    let mut minus = vec![C::new(0.0, 0.0); kmax + 1];
    for j in 0..n {
        let kk = j.min(n - 1 - j);
        for k in 0..=kk {
            plus[k] = psi.values[j + k] * psi.values[j - k].conj();
            minus[k] = psi.values[j - k] * psi.values[j + k].conj();
        }
        for (l, ph) in phases.iter().enumerate() {
            let mut acc = plus[0];
            for k in 1..=kk {
                acc += plus[k] * ph[k] + minus[k] * ph[k].conj();
            }
            let w = acc * pref;
            residue = residue.max(w.im.abs());
            out.values[j * p_axis.n + l] = w.re;
        }
    }
    out.imag_residue = residue;
    out
}

/// Oscillator eigenfunctions `phi_0..=phi_nmax` sampled at `x`.
pub fn hermite_functions(x: &[f64], n_max: usize, mass: f64, omega: f64, hbar: f64) -> Vec<Vec<f64>> {
    let scale = (mass * omega / hbar).sqrt();
    let norm0 = (mass * omega / (PI * hbar)).powf(0.25);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n_max + 1);
    out.push(
        x.iter()
            .map(|&xi| norm0 * (-0.5 * (scale * xi).powi(2)).exp())
            .collect(),
    );
    if n_max >= 1 {
        out.push(
            x.iter()
                .zip(&out[0])
                .map(|(&xi, &p0)| 2f64.sqrt() * scale * xi * p0)
                .collect(),
        );
    }
    for n in 1..n_max {
        let a = (2.0 / (n + 1) as f64).sqrt();
        let b = (n as f64 / (n + 1) as f64).sqrt();
        let next = x
            .iter()
            .enumerate()
            .map(|(i, &xi)| a * scale * xi * out[n][i] - b * out[n - 1][i])
            .collect();
        out.push(next);
    }
    out
}

/// Energy level and population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyLevel {
    pub n: usize,
    pub energy: f64,
    pub population: f64,
}

/// Populations of the oscillator levels `0..=n_max`.
///
/// Fails with a truncation error when the levels hold less than `1 - 1e-8` of
/// the norm.
pub fn energy_decompose(psi: &GridWavefunction, mass: f64, omega: f64, n_max: usize) -> Result<Vec<EnergyLevel>> {
    energy_decompose_with_tol(psi, mass, omega, n_max, 1e-8)
}

pub fn energy_decompose_with_tol(
    psi: &GridWavefunction,
    mass: f64,
    omega: f64,
    n_max: usize,
    tol: f64,
) -> Result<Vec<EnergyLevel>> {
    psi.check_normalized()?;
    let hbar = psi.hbar;
    let basis = hermite_functions(&psi.axis.nodes(), n_max, mass, omega, hbar);
    let dq = psi.dq();
    let levels: Vec<EnergyLevel> = basis
        .iter()
        .enumerate()
        .map(|(n, phi)| {
            let c: C = phi.iter().zip(&psi.values).map(|(f, v)| v * *f).sum::<C>() * dq;
            EnergyLevel {
                n,
                energy: hbar * omega * (n as f64 + 0.5),
                population: c.norm_sqr(),
            }
        })
        .collect();
    let captured: f64 = levels.iter().map(|l| l.population).sum();
    if captured < 1.0 - tol {
        return Err(Error::Truncation {
            captured,
            required: 1.0 - tol,
        });
    }
    Ok(levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::marginals;

    fn ground() -> SuperpositionState {
        SuperpositionState::single(GaussianPacket::coherent(0.0, 0.0, 1.0, 1.0, 1.0), 1.0).unwrap()
    }

    fn cat4() -> SuperpositionState {
        SuperpositionState::cat(4.0, 0.5f64.sqrt(), 0.5, 0.5, 1.0).unwrap()
    }

    #[test]
    fn ground_state_wigner_peak_on_grid() {
        let psi = ground().to_grid(AxisSpec::new(-10.0, 10.0, 512).unwrap()).unwrap();
        let p = AxisSpec::symmetric(6.0, 121).unwrap();
        let w = wigner_transform(WignerSource::Grid(&psi), p).unwrap();
        let iq = psi.axis.nearest(0.0);
        // nodes are symmetric, so q = 0 lies halfway between the two central nodes
        let q0 = psi.axis.node(iq);
        let w00 = w.at(iq, p.nearest(0.0));
        let expect = (-(q0 * q0)).exp() / PI;
        assert!((w00 - expect).abs() < 1e-10, "{w00} vs {expect}");
        assert!((1.0 / PI - w00).abs() < 2e-3);
        assert!((w.integral() - 1.0).abs() < 1e-8);
        assert!(w.imag_residue < 1e-10);
        assert!(w.min() > -1e-10);
    }

    #[test]
    fn analytic_peak_value() {
        let w = ground().wigner();
        assert!((w.eval(0.0, 0.0) - 1.0 / PI).abs() < 1e-14);
        assert!((w.integral() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn analytic_matches_grid_transform() {
        let cat = cat4();
        let q = AxisSpec::new(-10.0, 10.0, 256).unwrap();
        let p = AxisSpec::symmetric(6.0, 97).unwrap();
        let psi = cat.to_grid(q).unwrap();
        let wg = wigner_transform(WignerSource::Grid(&psi), p).unwrap();
        let wa = wigner_transform(WignerSource::Analytic { state: &cat, q }, p).unwrap();
        let max_diff = wg
            .values
            .iter()
            .zip(&wa.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-6, "{max_diff}");
    }

    #[test]
    fn cat_fringes_have_period_pi_over_four() {
        // cross term ~ cos(2 q0 p / hbar) at q = 0 for packets at +-4
        let w = cat4().wigner();
        let period = PI / 4.0;
        for &p in &[0.0, 0.13, 0.37, 0.9] {
            let a = w.eval(0.0, p);
            let b = w.eval(0.0, p + period);
            // envelope exp(-p^2) differs; compare the ratio to the envelope ratio
            let env = |p: f64| (-(p * p)).exp();
            assert!((a / env(p) - b / env(p + period)).abs() < 1e-9);
        }
        let half = w.eval(0.0, period / 2.0);
        assert!(w.eval(0.0, 0.0) > 0.0 && half < 0.0);
    }

    #[test]
    fn marginals_match_density() {
        let cat = SuperpositionState::cat(2.0, 0.5f64.sqrt(), 0.5, 0.5, 1.0).unwrap();
        let q = AxisSpec::new(-8.0, 8.0, 256).unwrap();
        let psi = cat.to_grid(q).unwrap();
        let w = wigner_transform(WignerSource::Grid(&psi), AxisSpec::symmetric(8.0, 161).unwrap()).unwrap();
        let (pos, mom) = marginals(&w);
        for (i, v) in psi.values.iter().enumerate() {
            assert!((pos[i] - v.norm_sqr()).abs() < 1e-6);
        }
        let dq = q.step();
        let dp = w.p.step();
        assert!((crate::grid::trapezoid(&pos, dq) - 1.0).abs() < 1e-8);
        assert!((crate::grid::trapezoid(&mom, dp) - 1.0).abs() < 1e-8);
        // real wavefunction: momentum marginal is even
        let n = mom.len();
        for j in 0..n / 2 {
            assert!((mom[j] - mom[n - 1 - j]).abs() < 1e-10);
        }
    }

    #[test]
    fn ground_position_marginal_is_gaussian() {
        let q = AxisSpec::new(-8.0, 8.0, 128).unwrap();
        let psi = ground().to_grid(q).unwrap();
        let w = wigner_transform(WignerSource::Grid(&psi), AxisSpec::symmetric(7.0, 141).unwrap()).unwrap();
        let (pos, _) = marginals(&w);
        for (i, x) in q.nodes().into_iter().enumerate() {
            assert!((pos[i] - (-(x * x)).exp() / PI.sqrt()).abs() < 1e-6);
        }
    }

    #[test]
    fn mixture_linearity() {
        // W of the superposition = auto terms + cross terms; the mixture is the auto part
        let cat = cat4();
        let full = cat.wigner();
        let auto = cat.wigner_auto_terms();
        let a = SuperpositionState::single(cat.terms[0].1, 1.0).unwrap().wigner();
        let b = SuperpositionState::single(cat.terms[1].1, 1.0).unwrap().wigner();
        let pa = cat.terms[0].0.norm_sqr();
        let pb = cat.terms[1].0.norm_sqr();
        for &(q, p) in &[(-4.0, 0.0), (4.0, 0.3), (1.0, -0.5), (0.0, 0.0)] {
            let mix = pa * a.eval(q, p) + pb * b.eval(q, p);
            assert!((auto.eval(q, p) - mix).abs() < 1e-14);
        }
        // cross terms are ~ exp(-q^2/2s^2)/pi away from the midpoint and dominate at it
        let cross = (full.eval(4.0, 0.0) - auto.eval(4.0, 0.0)).abs();
        assert!(cross <= 1.0001 * (-16f64).exp() / PI, "{cross}");
        assert!((full.eval(0.0, 0.0) - auto.eval(0.0, 0.0)).abs() > 0.1);
    }

    #[test]
    fn parity_symmetric_state() {
        let cat = cat4();
        let w = cat.wigner();
        for &(q, p) in &[(0.5, 0.2), (3.9, -0.7), (1.2, 1.1)] {
            assert!((w.eval(q, p) - w.eval(-q, -p)).abs() < 1e-10);
        }
        let q = AxisSpec::new(-10.0, 10.0, 256).unwrap();
        let psi = cat.to_grid(q).unwrap();
        let pax = AxisSpec::symmetric(6.0, 61).unwrap();
        let g = wigner_transform(WignerSource::Grid(&psi), pax).unwrap();
        for i in 0..q.n {
            for j in 0..pax.n {
                assert!((g.at(i, j) - g.at(q.n - 1 - i, pax.n - 1 - j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn precondition_errors() {
        let q = AxisSpec::new(-10.0, 10.0, 128).unwrap();
        let psi = ground().to_grid(q).unwrap();
        let narrow = AxisSpec::symmetric(1.0, 21).unwrap();
        assert!(matches!(
            wigner_transform(WignerSource::Grid(&psi), narrow),
            Err(Error::Span { .. })
        ));
        let mut bad = psi.clone();
        bad.values[64] *= 2.0;
        assert!(matches!(
            wigner_transform(WignerSource::Grid(&bad), AxisSpec::symmetric(8.0, 41).unwrap()),
            Err(Error::Precondition(_))
        ));
        assert!(
            GridWavefunction::new(AxisSpec::new(0.0, 1.0, 100).unwrap(), vec![C::new(0.0, 0.0); 100], 1.0).is_err()
        );
        let small = AxisSpec::new(-2.0, 2.0, 64).unwrap();
        assert!(matches!(ground().to_grid(small), Err(Error::Leakage { .. })));
    }

    #[test]
    fn overlap_corrected_normalization() {
        let close = SuperpositionState::cat(0.3, 0.5f64.sqrt(), 0.5, 0.5, 1.0).unwrap();
        assert!((close.norm_sqr() - 1.0).abs() < PACKET_NORM_TOL);
        let psi = close.to_grid(AxisSpec::new(-8.0, 8.0, 256).unwrap()).unwrap();
        let raw: f64 = close.eval(0.1).norm_sqr();
        let gi = psi.axis.nearest(0.1);
        let _ = raw;
        assert!((psi.values[gi].norm_sqr() - close.eval(psi.axis.node(gi)).norm_sqr()).abs() < 1e-9);
    }

    #[test]
    fn closed_form_moments() {
        let st = SuperpositionState::single(
            GaussianPacket {
                q0: 1.5,
                p0: -0.7,
                s: 0.6,
                phase: 0.3,
            },
            1.0,
        )
        .unwrap();
        let (q, p) = st.mean_position_momentum();
        assert!((q - 1.5).abs() < 1e-13 && (p + 0.7).abs() < 1e-13);
        let psi = st.to_grid(AxisSpec::new(-8.0, 10.0, 512).unwrap()).unwrap();
        let (_, pg) = psi.kinetic_and_momentum(1.0);
        assert!((pg + 0.7).abs() < 1e-10);
    }

    #[test]
    fn energy_ground_and_superposition() {
        let q = AxisSpec::new(-10.0, 10.0, 256).unwrap();
        let psi = ground().to_grid(q).unwrap();
        let lv = energy_decompose(&psi, 1.0, 1.0, 10).unwrap();
        assert!((lv[0].energy - 0.5).abs() < 1e-15);
        assert!((lv[0].population - 1.0).abs() < 1e-10);
        let s = 0.5f64.sqrt();
        let sup =
            GridWavefunction::from_energy_amplitudes(q, &[C::new(s, 0.0), C::new(0.0, s)], 1.0, 1.0, 1.0).unwrap();
        let lv = energy_decompose(&sup, 1.0, 1.0, 10).unwrap();
        assert!((lv[0].population - 0.5).abs() < 1e-10);
        assert!((lv[1].population - 0.5).abs() < 1e-10);
        assert!(lv.iter().all(|l| l.population >= 0.0));
    }

    #[test]
    fn coherent_state_poisson_populations() {
        // |alpha|^2 = 1: q0 = sqrt(2 hbar / m omega) |alpha|
        let q = AxisSpec::new(-12.0, 12.0, 512).unwrap();
        let st = SuperpositionState::single(GaussianPacket::coherent(2f64.sqrt(), 0.0, 1.0, 1.0, 1.0), 1.0).unwrap();
        let psi = st.to_grid(q).unwrap();
        // oracle: overlaps with grid eigenfunctions by direct quadrature
        let basis = hermite_functions(&q.nodes(), 3, 1.0, 1.0, 1.0);
        let overlap0: f64 = basis[0].iter().zip(&psi.values).map(|(f, v)| f * v.re).sum::<f64>() * q.step();
        assert!((overlap0 * overlap0 - (-1f64).exp()).abs() < 1e-10);
        let lv = energy_decompose(&psi, 1.0, 1.0, 30).unwrap();
        let mut fact = 1.0;
        for l in lv.iter().take(8) {
            if l.n > 0 {
                fact *= l.n as f64;
            }
            assert!((l.population - (-1f64).exp() / fact).abs() < 1e-10);
        }
        // resynthesis of <h>
        let e_sum: f64 = lv.iter().map(|l| l.energy * l.population).sum();
        assert!((e_sum - psi.oscillator_energy(1.0, 1.0)).abs() < 1e-8);
        assert!(matches!(
            energy_decompose(&psi, 1.0, 1.0, 3),
            Err(Error::Truncation { .. })
        ));
    }
}
