//! Physical parameters of the coupled large/small particle model and the
//! constants derived from them.
//!
//! Everything is in dimensionless simulation units with a configurable `hbar`.
//! The large particle is in the high-temperature, negligible-dissipation limit
//! of its thermal environment, so `gamma` only enters through the decoherence
//! coefficient `D = 2 M gamma kT / hbar^2`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Default `Delta / hbar` above which the classical regime is reported.
pub const CLASSICAL_REGIME_THRESHOLD: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Large-particle mass `M`.
    pub mass_large: f64,
    /// Small-particle mass `m`.
    pub mass_small: f64,
    /// Small-particle angular frequency.
    pub omega: f64,
    /// Coupling strength.
    pub lambda: f64,
    /// Dissipation rate of the large particle's environment.
    pub gamma: f64,
    /// Thermal energy of the environment.
    pub kt: f64,
    #[serde(default = "default_hbar")]
    pub hbar: f64,
    /// Width of the Gaussian projectors on the large particle's position.
    pub sigma: f64,
    /// Deconvolution split between record noise and force noise, in (0, 1).
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// History length.
    pub duration: f64,
    /// Integration step.
    pub dt: f64,
}

fn default_hbar() -> f64 {
    1.0
}

fn default_eta() -> f64 {
    0.5
}

impl ModelParams {
    pub fn validate_structure(&self) -> Result<()> {
        let positive = [
            ("mass_large", self.mass_large),
            ("mass_small", self.mass_small),
            ("omega", self.omega),
            ("hbar", self.hbar),
            ("sigma", self.sigma),
            ("kt", self.kt),
            ("gamma", self.gamma),
            ("duration", self.duration),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if !self.lambda.is_finite() {
            return Err(invalid("lambda", "must be finite"));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(invalid("eta", format!("must lie in (0, 1), got {}", self.eta)));
        }
        if self.dt >= self.duration {
            return Err(invalid("dt", "must be smaller than duration"));
        }
        Ok(())
    }

    /// Number of integration steps covering the history.
    pub fn n_steps(&self) -> usize {
        ((self.duration / self.dt).round() as usize).max(1)
    }

    /// The same parameters with the coupling replaced.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..*self }
    }

    pub fn with_eta(&self, eta: f64) -> Self {
        Self { eta, ..*self }
    }

    /// Projector width at maximal refinement, `sigma = D^(-1/2)`.
    pub fn maximal_refinement_sigma(&self) -> f64 {
        decoherence_coefficient(self).powf(-0.5)
    }
}

fn decoherence_coefficient(p: &ModelParams) -> f64 {
    2.0 * p.mass_large * p.gamma * p.kt / (p.hbar * p.hbar)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    /// Decoherence coefficient `D`.
    pub d: f64,
    /// `D + 1/(4 sigma^2)`.
    pub d_tilde: f64,
    /// Continuous-measurement imprecision `sigma_1^2`; infinite for zero coupling.
    pub sigma1_sq: f64,
    /// Phase-space smearing scale (action units), unit prefactor.
    pub delta: f64,
    /// Spectral density of the Langevin force, `2 hbar^2 D~ (1 - eta)`.
    pub force_noise_var: f64,
    /// Spectral density of the record about the classical path, `2 hbar^2 D~ eta / lambda^2`.
    pub record_noise_var: f64,
}

impl DerivedConstants {
    /// Spectral density of the total force noise, `2 hbar^2 D~`, independent of eta.
    pub fn total_force_noise_var(&self, params: &ModelParams) -> f64 {
        2.0 * params.hbar * params.hbar * self.d_tilde
    }

    pub fn sigma1(&self) -> f64 {
        self.sigma1_sq.sqrt()
    }
}

pub fn derive_constants(params: &ModelParams) -> Result<DerivedConstants> {
    params.validate_structure()?;
    let hbar2 = params.hbar * params.hbar;
    let d = decoherence_coefficient(params);
    let d_tilde = d + 1.0 / (4.0 * params.sigma * params.sigma);
    let lambda2 = params.lambda * params.lambda;
    let (sigma1_sq, delta, record_noise_var) = if params.lambda == 0.0 {
        (f64::INFINITY, f64::INFINITY, f64::INFINITY)
    } else {
        (
            4.0 * hbar2 * d_tilde * params.eta / lambda2,
            hbar2 * d_tilde * params.mass_small * params.omega * params.omega / lambda2,
            2.0 * hbar2 * d_tilde * params.eta / lambda2,
        )
    };
    Ok(DerivedConstants {
        d,
        d_tilde,
        sigma1_sq,
        delta,
        force_noise_var: 2.0 * hbar2 * d_tilde * (1.0 - params.eta),
        record_noise_var,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// `D sigma^2 > 1`.
    pub decoherent: bool,
    /// `Delta / hbar`.
    pub positivity_margin: f64,
    pub classical_regime: bool,
    pub messages: Vec<String>,
}

/// Regime checks. Violations produce warnings, never errors.
pub fn validate(params: &ModelParams) -> Result<ValidationReport> {
    let c = derive_constants(params)?;
    Ok(report_from(params, &c, CLASSICAL_REGIME_THRESHOLD))
}

pub fn report_from(params: &ModelParams, c: &DerivedConstants, threshold: f64) -> ValidationReport {
    let decoherent = c.d * params.sigma * params.sigma > 1.0;
    let positivity_margin = c.delta / params.hbar;
    let classical_regime = positivity_margin >= threshold;
    let mut messages = Vec::new();
    if !decoherent {
        messages.push(format!(
            "D*sigma^2 = {:.4} <= 1: large-particle histories are not decoherent",
            c.d * params.sigma * params.sigma
        ));
    }
    if !classical_regime {
        messages.push(format!(
            "Delta/hbar = {positivity_margin:.4} < {threshold}: smearing may not dominate quantum scale"
        ));
    }
    if params.lambda == 0.0 {
        messages.push("lambda = 0: sigma_1 and Delta are infinite".to_string());
    }
    ValidationReport {
        decoherent,
        positivity_margin,
        classical_regime,
        messages,
    }
}

#[cfg(test)]
pub(crate) fn unit_params() -> ModelParams {
    ModelParams {
        mass_large: 1.0,
        mass_small: 1.0,
        omega: 1.0,
        lambda: 1.0,
        gamma: 1.0,
        kt: 1.0,
        hbar: 1.0,
        sigma: 1.0,
        eta: 0.5,
        duration: 10.0,
        dt: 1e-3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    #[test]
    fn decoherence_coefficient_example() {
        let c = derive_constants(&unit_params()).unwrap();
        assert_eq!(c.d, 2.0);
        assert_eq!(c.d_tilde, 2.25);
        assert_eq!(c.sigma1_sq, 4.5);
        assert_eq!(c.force_noise_var, 2.25);
        assert_eq!(c.record_noise_var, 2.25);
        assert_eq!(c.delta, 2.25);
    }

    #[test]
    fn decoherence_flag() {
        let p = unit_params();
        assert!(validate(&p).unwrap().decoherent);
        let p = ModelParams { sigma: 0.5, ..p };
        let r = validate(&p).unwrap();
        assert!(!r.decoherent);
        assert!(!r.messages.is_empty());
    }

    #[test]
    fn classical_regime_threshold() {
        let p = unit_params();
        let mut c = derive_constants(&p).unwrap();
        c.delta = 50.0;
        assert!(report_from(&p, &c, CLASSICAL_REGIME_THRESHOLD).classical_regime);
        c.delta = 9.9;
        assert!(!report_from(&p, &c, CLASSICAL_REGIME_THRESHOLD).classical_regime);
    }

    #[test]
    fn zero_coupling_marks_infinite() {
        let c = derive_constants(&unit_params().with_lambda(0.0)).unwrap();
        assert!(c.sigma1_sq.is_infinite());
        assert!(c.delta.is_infinite());
        assert!(c.force_noise_var.is_finite());
    }

    #[test]
    fn rejects_bad_parameters() {
        let p = ModelParams {
            mass_large: 0.0,
            ..unit_params()
        };
        assert!(matches!(
            derive_constants(&p),
            Err(Error::InvalidParameter { name: "mass_large", .. })
        ));
        let p = unit_params().with_eta(1.0);
        assert!(derive_constants(&p).is_err());
        let p = ModelParams {
            dt: 20.0,
            ..unit_params()
        };
        assert!(derive_constants(&p).is_err());
    }

    #[test]
    fn maximal_refinement_default() {
        let p = unit_params();
        assert!((p.maximal_refinement_sigma() - 2f64.powf(-0.5)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn pure_function(kt in 0.01f64..10.0, lambda in 0.1f64..3.0) {
            let p = ModelParams { kt, lambda, ..unit_params() };
            let a = derive_constants(&p).unwrap();
            let b = derive_constants(&p).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn temperature_scaling(kt in 0.01f64..10.0, scale in 0.1f64..10.0) {
            // Exact only when the projector term is negligible or scaled along:
            // D~ - 1/(4 sigma^2) = D is what scales linearly.
            let p = ModelParams { kt, ..unit_params() };
            let q = ModelParams { kt: kt * scale, ..p };
            let a = derive_constants(&p).unwrap();
            let b = derive_constants(&q).unwrap();
            let rel = |x: f64, y: f64| (x - y).abs() / y.abs();
            prop_assert!(rel(b.d, a.d * scale) < 1e-14);
            let proj = 1.0 / (4.0 * p.sigma * p.sigma);
            prop_assert!(rel(b.d_tilde - proj, (a.d_tilde - proj) * scale) < 1e-12);
            let hb2 = p.hbar * p.hbar;
            let l2 = p.lambda * p.lambda;
            let s_a = a.sigma1_sq * l2 / p.eta - 4.0 * hb2 * proj;
            let s_b = b.sigma1_sq * l2 / p.eta - 4.0 * hb2 * proj;
            prop_assert!(rel(s_b, s_a * scale) < 1e-11);
            let mw2 = p.mass_small * p.omega * p.omega;
            let dl_a = a.delta * l2 / mw2 - hb2 * proj;
            let dl_b = b.delta * l2 / mw2 - hb2 * proj;
            prop_assert!(rel(dl_b, dl_a * scale) < 1e-11);
        }

        #[test]
        fn decoherent_monotone(kt in 0.001f64..5.0, sigma in 0.05f64..3.0, bump in 0.0f64..5.0) {
            let p = ModelParams { kt, sigma, ..unit_params() };
            let d0 = validate(&p).unwrap().decoherent;
            let d_kt = validate(&ModelParams { kt: kt + bump, ..p }).unwrap().decoherent;
            let d_sigma = validate(&ModelParams { sigma: sigma + bump, ..p }).unwrap().decoherent;
            prop_assert!(!d0 || d_kt);
            prop_assert!(!d0 || d_sigma);
        }
    }
}
