//! FFT-backed kinetic-energy operators on a uniform position grid.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Angular wavenumbers for an `n`-point grid with spacing `dq`, in FFT order.
pub fn wavenumbers(n: usize, dq: f64) -> Vec<f64> {
    let l = n as f64 * dq;
    (0..n)
        .map(|j| {
            let m = if j < n / 2 { j as f64 } else { j as f64 - n as f64 };
            2.0 * std::f64::consts::PI * m / l
        })
        .collect()
}

#[derive(Clone)]
pub struct KineticOperator {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    k: Vec<f64>,
    mass: f64,
    hbar: f64,
    scratch: Vec<Complex64>,
}

impl KineticOperator {
    pub fn new(n: usize, dq: f64, mass: f64, hbar: f64) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
        Self {
            forward,
            inverse,
            k: wavenumbers(n, dq),
            mass,
            hbar,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        }
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.k
    }

    /// Phases `exp(-i hbar k^2 t / 2m)` for a kinetic step of length `t`.
    pub fn phases(&self, t: f64) -> Vec<Complex64> {
        self.k
            .iter()
            .map(|&k| Complex64::from_polar(1.0, -self.hbar * k * k * t / (2.0 * self.mass)))
            .collect()
    }

    /// Multiplies `psi` by precomputed kinetic `phases` in momentum space.
    pub fn apply_phases(&mut self, psi: &mut [Complex64], phases: &[Complex64]) {
        let n = psi.len() as f64;
        self.forward.process_with_scratch(psi, &mut self.scratch);
        for (a, ph) in psi.iter_mut().zip(phases) {
            *a *= ph / n;
        }
        self.inverse.process_with_scratch(psi, &mut self.scratch);
    }

    /// Like [`apply_phases`](Self::apply_phases), also returning `<p>` (which
    /// the kinetic phases leave unchanged).
    pub fn apply_phases_with_momentum(&mut self, psi: &mut [Complex64], phases: &[Complex64]) -> f64 {
        let n = psi.len() as f64;
        self.forward.process_with_scratch(psi, &mut self.scratch);
        let mut norm = 0.0;
        let mut p = 0.0;
        for ((a, ph), &k) in psi.iter_mut().zip(phases).zip(&self.k) {
            let w = a.norm_sqr();
            norm += w;
            p += w * k;
            *a *= ph / n;
        }
        self.inverse.process_with_scratch(psi, &mut self.scratch);
        self.hbar * p / norm
    }

    /// `<T>` and `<p>` for a state normalized on the grid.
    pub fn kinetic_and_momentum(&mut self, psi: &[Complex64]) -> (f64, f64) {
        let mut buf = psi.to_vec();
        self.forward.process_with_scratch(&mut buf, &mut self.scratch);
        let mut norm = 0.0;
        let mut t = 0.0;
        let mut p = 0.0;
        for (a, &k) in buf.iter().zip(&self.k) {
            let w = a.norm_sqr();
            norm += w;
            t += w * k * k;
            p += w * k;
        }
        (
            self.hbar * self.hbar * t / (2.0 * self.mass * norm),
            self.hbar * p / norm,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_wave_momentum() {
        let n = 64;
        let dq = 0.1;
        let mut op = KineticOperator::new(n, dq, 1.0, 1.0);
        let k0 = wavenumbers(n, dq)[3];
        let psi: Vec<Complex64> = (0..n).map(|j| Complex64::from_polar(1.0, k0 * j as f64 * dq)).collect();
        let (t, p) = op.kinetic_and_momentum(&psi);
        assert!((p - k0).abs() < 1e-12);
        assert!((t - k0 * k0 / 2.0).abs() < 1e-12);
        let mut evolved = psi.clone();
        let ph = op.phases(0.3);
        op.apply_phases(&mut evolved, &ph);
        let expect = Complex64::from_polar(1.0, -k0 * k0 * 0.3 / 2.0);
        for (a, b) in evolved.iter().zip(&psi) {
            assert!((a - b * expect).norm() < 1e-12);
        }
    }
}
