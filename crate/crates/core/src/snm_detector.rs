//! Per-sensor two-sided GLRT on the ML estimate of the feature.

use crate::covariance::{build_temporal, estimator_weights, precision, sigma_d, TemporalCorrelation};
use crate::error::{invalid, NadsError, Result};
use crate::ncc_channel::AbnormalityModel;
use crate::normal;
use crate::Hypothesis;
use nalgebra::{DMatrix, DVector};

/// N̂R = Σ_{l,i} y_l ψ_il / Σ_{l,i} ψ_il.
pub fn estimate_feature(y: &[f64], psi: &DMatrix<f64>) -> Result<f64> {
    if psi.nrows() != y.len() || psi.ncols() != y.len() {
        return Err(NadsError::DimensionMismatch(format!(
            "{} observations against a {}x{} precision matrix",
            y.len(),
            psi.nrows(),
            psi.ncols()
        )));
    }
    let w = estimator_weights(psi)?;
    Ok(w.iter().zip(y).map(|(a, b)| a * b).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnmDetector {
    nh: f64,
    eta1: f64,
    sigma_d: f64,
    tau_prime: f64,
    /// τ′/σ_D kept separately so tail probabilities avoid a divide.
    z: f64,
    weights: DVector<f64>,
}

impl SnmDetector {
    /// τ′ = σ_D·Φ⁻¹(1 − η₁/2). The detector estimates from a single
    /// observation (weight 1); use [`SnmDetector::for_channel`] for n > 1.
    pub fn calibrate(nh: f64, eta1: f64, sigma_d: f64) -> Result<Self> {
        Self::with_weights(nh, eta1, sigma_d, DVector::from_element(1, 1.0))
    }

    /// Calibrates against the temporal correlation of n observations.
    pub fn for_channel(nh: f64, eta1: f64, temporal: &TemporalCorrelation, sigma_ncc: f64) -> Result<Self> {
        let omega = build_temporal(temporal)?;
        let psi = precision(&omega)?;
        let sd = sigma_d(&psi, &omega, sigma_ncc)?;
        Self::with_weights(nh, eta1, sd, estimator_weights(&psi)?)
    }

    fn with_weights(nh: f64, eta1: f64, sigma_d: f64, weights: DVector<f64>) -> Result<Self> {
        // η₁ = 1 is allowed: τ′ = 0 and every sensor always alarms
        if !(eta1 > 0.0 && eta1 <= 1.0) {
            return Err(invalid("eta1", format!("must lie in (0, 1], got {eta1}")));
        }
        if !(sigma_d > 0.0 && sigma_d.is_finite()) {
            return Err(invalid("sigma_d", format!("must be finite and > 0, got {sigma_d}")));
        }
        if !nh.is_finite() {
            return Err(invalid("nh", "must be finite"));
        }
        // Φ⁻¹(1 − η/2) = −Φ⁻¹(η/2), the latter without cancellation
        let z = -normal::quantile(0.5 * eta1);
        let z = if z < 0.0 { 0.0 } else { z };
        Ok(Self { nh, eta1, sigma_d, tau_prime: sigma_d * z, z, weights })
    }

    pub fn nh(&self) -> f64 {
        self.nh
    }
    pub fn eta1(&self) -> f64 {
        self.eta1
    }
    pub fn sigma_d(&self) -> f64 {
        self.sigma_d
    }
    pub fn tau_prime(&self) -> f64 {
        self.tau_prime
    }
    /// Half-width of the acceptance interval in σ_D units.
    pub fn z(&self) -> f64 {
        self.z
    }
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// Weighted estimate wᵀy with this detector's weights.
    pub fn estimate(&self, y: &[f64]) -> f64 {
        debug_assert_eq!(y.len(), self.weights.len());
        self.weights.iter().zip(y).map(|(a, b)| a * b).sum()
    }

    /// H0 iff NH − τ′ < N̂R < NH + τ′; the boundary decides H1.
    pub fn decide(&self, nr_hat: f64) -> Hypothesis {
        if nr_hat > self.nh - self.tau_prime && nr_hat < self.nh + self.tau_prime {
            Hypothesis::H0
        } else {
            Hypothesis::H1
        }
    }

    /// Standardised shift of the estimate under H1: (NR − NH)/σ_D.
    pub fn shift(&self, model: &AbnormalityModel) -> f64 {
        model.deviation() / self.sigma_d
    }

    /// Single-sensor detection probability under the abnormality model.
    pub fn p_d_ncc(&self, model: &AbnormalityModel) -> f64 {
        alarm_probability(self.z, self.shift(model))
    }

    /// Single-sensor false-alarm probability; η₁ by construction.
    pub fn p_f_ncc(&self) -> f64 {
        self.eta1
    }
}

/// P(|Z + shift| ≥ z) = Φ(−z − shift) + Q(z − shift).
pub fn alarm_probability(z: f64, shift: f64) -> f64 {
    (normal::cdf(-z - shift) + normal::q(z - shift)).min(1.0)
}
