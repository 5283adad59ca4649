//! Phase-space objects: analytic complex Gaussians over `(q, p)` and gridded
//! Wigner functions.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::grid::{trapezoid, AxisSpec};

type C = Complex64;
type M2 = [[C; 2]; 2];

fn c(re: f64) -> C {
    C::new(re, 0.0)
}

fn mul(a: &M2, b: &M2) -> M2 {
    let mut out = [[c(0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn inv(a: &M2) -> M2 {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]]
}

fn mat_vec(a: &M2, v: &[C; 2]) -> [C; 2] {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

fn dot(a: &[C; 2], b: &[C; 2]) -> C {
    a[0] * b[0] + a[1] * b[1]
}

/// `ln det(a)^(1/2)` on the branch continuous from the identity, valid when
/// every eigenvalue has positive real part.
fn half_log_det(a: &M2) -> C {
    let tr = a[0][0] + a[1][1];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = (tr * tr / 4.0 - det).sqrt();
    let mu1 = tr / 2.0 + disc;
    let mu2 = tr / 2.0 - disc;
    0.5 * (mu1.ln() + mu2.ln())
}

/// `exp(-1/2 z^T P z + b^T z + c)` with `z = (q, p)` and complex symmetric `P`
/// whose real part is positive definite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexGaussian2 {
    pub p: M2,
    pub b: [C; 2],
    pub c: C,
}

impl ComplexGaussian2 {
    pub fn eval(&self, q: f64, p: f64) -> C {
        let z = [c(q), c(p)];
        let pz = mat_vec(&self.p, &z);
        (-0.5 * dot(&z, &pz) + dot(&self.b, &z) + self.c).exp()
    }

    /// Integral over the whole plane.
    pub fn integral(&self) -> C {
        let pinv = inv(&self.p);
        let quad = dot(&self.b, &mat_vec(&pinv, &self.b));
        (c((2.0 * std::f64::consts::PI).ln()) - half_log_det(&self.p) + 0.5 * quad + self.c).exp()
    }

    /// Convolution with the normalized Gaussian of covariance `cov`.
    pub fn convolve(&self, cov: [[f64; 2]; 2]) -> Self {
        let sigma = [[c(cov[0][0]), c(cov[0][1])], [c(cov[1][0]), c(cov[1][1])]];
        let ident = [[c(1.0), c(0.0)], [c(0.0), c(1.0)]];
        // K = (P + Sigma^-1)^-1 = Sigma (P Sigma + I)^-1
        let mut ps_i = mul(&self.p, &sigma);
        ps_i[0][0] += 1.0;
        ps_i[1][1] += 1.0;
        let k = mul(&sigma, &inv(&ps_i));
        let pkp = mul(&mul(&self.p, &k), &self.p);
        let mut p_new = self.p;
        for i in 0..2 {
            for j in 0..2 {
                p_new[i][j] -= pkp[i][j];
            }
        }
        let pk = mul(&self.p, &k);
        let pkb = mat_vec(&pk, &self.b);
        let b_new = [self.b[0] - pkb[0], self.b[1] - pkb[1]];
        let mut sp = mul(&sigma, &self.p);
        sp[0][0] += ident[0][0];
        sp[1][1] += ident[1][1];
        let c_new = self.c + 0.5 * dot(&self.b, &mat_vec(&k, &self.b)) - half_log_det(&sp);
        Self {
            p: p_new,
            b: b_new,
            c: c_new,
        }
    }

    /// The same function shifted by `(dq, dp)` in phase space.
    pub fn translated(&self, dq: f64, dp: f64) -> Self {
        // f(z - a): -1/2 (z-a)^T P (z-a) + b^T (z-a) + c
        let a = [c(dq), c(dp)];
        let pa = mat_vec(&self.p, &a);
        Self {
            p: self.p,
            b: [self.b[0] + pa[0], self.b[1] + pa[1]],
            c: self.c - 0.5 * dot(&a, &pa) - dot(&self.b, &a),
        }
    }
}

/// Analytic Wigner function `Re sum_k w_k G_k(q, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerMixture {
    pub terms: Vec<(C, ComplexGaussian2)>,
}

impl WignerMixture {
    pub fn eval(&self, q: f64, p: f64) -> f64 {
        self.terms.iter().map(|(w, g)| (w * g.eval(q, p)).re).sum()
    }

    pub fn integral(&self) -> f64 {
        self.terms.iter().map(|(w, g)| (w * g.integral()).re).sum()
    }

    pub fn smeared(&self, cov: [[f64; 2]; 2]) -> Self {
        Self {
            terms: self.terms.iter().map(|(w, g)| (*w, g.convolve(cov))).collect(),
        }
    }

    pub fn translated(&self, dq: f64, dp: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|(w, g)| (*w, g.translated(dq, dp))).collect(),
        }
    }

    pub fn sample_grid(&self, q: AxisSpec, p: AxisSpec) -> WignerGrid {
        let mut values = Vec::with_capacity(q.n * p.n);
        for i in 0..q.n {
            let qi = q.node(i);
            for j in 0..p.n {
                values.push(self.eval(qi, p.node(j)));
            }
        }
        WignerGrid {
            q,
            p,
            values,
            imag_residue: 0.0,
        }
    }
}

/// Real phase-space function sampled on a `(q, p)` grid, row-major in `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WignerGrid {
    pub q: AxisSpec,
    pub p: AxisSpec,
    pub values: Vec<f64>,
    /// Largest imaginary part discarded when the values were produced.
    pub imag_residue: f64,
}

impl WignerGrid {
    pub fn zeros(q: AxisSpec, p: AxisSpec) -> Self {
        Self {
            q,
            p,
            values: vec![0.0; q.n * p.n],
            imag_residue: 0.0,
        }
    }

    #[inline]
    pub fn at(&self, iq: usize, ip: usize) -> f64 {
        self.values[iq * self.p.n + ip]
    }

    pub fn integral(&self) -> f64 {
        let rows: Vec<f64> = self
            .values
            .chunks(self.p.n)
            .map(|row| trapezoid(row, self.p.step()))
            .collect();
        trapezoid(&rows, self.q.step())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `(q, p, W)` rows.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.q.n).flat_map(move |i| (0..self.p.n).map(move |j| (self.q.node(i), self.p.node(j), self.at(i, j))))
    }

    /// First and second moments `(mean_q, mean_p, cov)` by trapezoid quadrature.
    pub fn moments(&self) -> ([f64; 2], [[f64; 2]; 2]) {
        let (dq, dp) = (self.q.step(), self.p.step());
        let w = |i: usize, n: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        let mut m0 = 0.0;
        let mut m1 = [0.0; 2];
        let mut m2 = [[0.0; 2]; 2];
        for i in 0..self.q.n {
            let q = self.q.node(i);
            for j in 0..self.p.n {
                let p = self.p.node(j);
                let v = self.at(i, j) * w(i, self.q.n) * w(j, self.p.n) * dq * dp;
                m0 += v;
                m1[0] += v * q;
                m1[1] += v * p;
                m2[0][0] += v * q * q;
                m2[0][1] += v * q * p;
                m2[1][1] += v * p * p;
            }
        }
        let mean = [m1[0] / m0, m1[1] / m0];
        let cqq = m2[0][0] / m0 - mean[0] * mean[0];
        let cqp = m2[0][1] / m0 - mean[0] * mean[1];
        let cpp = m2[1][1] / m0 - mean[1] * mean[1];
        (mean, [[cqq, cqp], [cqp, cpp]])
    }
}

/// Position and momentum marginals of a gridded Wigner function.
pub fn marginals(w: &WignerGrid) -> (Vec<f64>, Vec<f64>) {
    let position: Vec<f64> = w.values.chunks(w.p.n).map(|row| trapezoid(row, w.p.step())).collect();
    let momentum: Vec<f64> = (0..w.p.n)
        .map(|j| {
            let col: Vec<f64> = (0..w.q.n).map(|i| w.at(i, j)).collect();
            trapezoid(&col, w.q.step())
        })
        .collect();
    (position, momentum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn real_gaussian(cov: [[f64; 2]; 2], mean: [f64; 2]) -> ComplexGaussian2 {
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let p = [
            [c(cov[1][1] / det), c(-cov[0][1] / det)],
            [c(-cov[1][0] / det), c(cov[0][0] / det)],
        ];
        let g = ComplexGaussian2 {
            p,
            b: [c(0.0); 2],
            c: c(-(2.0 * PI * det.sqrt()).ln()),
        };
        g.translated(mean[0], mean[1])
    }

    #[test]
    fn normalized_real_gaussian_integrates_to_one() {
        let g = real_gaussian([[0.7, 0.2], [0.2, 1.3]], [0.5, -1.0]);
        assert!((g.integral() - c(1.0)).norm() < 1e-13);
    }

    #[test]
    fn convolution_adds_covariances() {
        let a = [[0.7, 0.2], [0.2, 1.3]];
        let k = [[0.4, -0.1], [-0.1, 0.9]];
        let g = real_gaussian(a, [1.0, 2.0]).convolve(k);
        let sum = [
            [a[0][0] + k[0][0], a[0][1] + k[0][1]],
            [a[1][0] + k[1][0], a[1][1] + k[1][1]],
        ];
        let expect = real_gaussian(sum, [1.0, 2.0]);
        for &(q, p) in &[(0.0, 0.0), (1.0, 2.0), (-1.5, 3.0), (2.2, -0.7)] {
            assert!((g.eval(q, p) - expect.eval(q, p)).norm() < 1e-14);
        }
    }

    #[test]
    fn oscillating_term_convolution_matches_quadrature() {
        // cos(k p) exp(-q^2 - p^2) as a complex Gaussian with imaginary linear term
        let g = ComplexGaussian2 {
            p: [[c(2.0), c(0.0)], [c(0.0), c(2.0)]],
            b: [c(0.0), C::new(0.0, 3.0)],
            c: c(0.0),
        };
        let cov = [[0.3, 0.05], [0.05, 0.2]];
        let s = g.convolve(cov);
        // brute force 2D quadrature of the convolution at one point
        let (q0, p0) = (0.4, -0.3);
        let det: f64 = cov[0][0] * cov[1][1] - cov[0][1] * cov[0][1];
        let h = 0.01;
        let mut acc = c(0.0);
        let n = 600;
        for i in 0..=2 * n {
            for j in 0..=2 * n {
                let y = [(i as f64 - n as f64) * h, (j as f64 - n as f64) * h];
                let quad = (cov[1][1] * y[0] * y[0] - 2.0 * cov[0][1] * y[0] * y[1] + cov[0][0] * y[1] * y[1]) / det;
                let kern = (-0.5 * quad).exp() / (2.0 * PI * det.sqrt());
                acc += g.eval(q0 - y[0], p0 - y[1]) * kern * h * h;
            }
        }
        assert!((acc - s.eval(q0, p0)).norm() < 1e-8, "{acc} vs {}", s.eval(q0, p0));
    }
}
