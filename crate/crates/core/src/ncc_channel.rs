//! Ligand-binding channel between the transmitting nano-machine and an SNM.
//!
//! Downstream modules only need the feature values NH / NR, so this layer is
//! optional: NH = 1 is a valid input on its own.

use crate::error::{invalid, NadsError, Result};
use serde::{Deserialize, Serialize};

/// Physical constants of the channel. Units are documentation only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NccParams {
    /// Binding rate κ₁ (µmol/L/s).
    pub kappa1: f64,
    /// Zero-force release rate κ₋₁⁰ (1/s).
    pub kappa_minus1_zero: f64,
    /// Transmitter–SNM distance χ (m).
    pub chi: f64,
    /// Molecular energy factor υ (J/m).
    pub upsilon: f64,
    /// Boltzmann constant (J/K).
    pub k_bc: f64,
    /// Temperature θ (K).
    pub theta: f64,
    /// Pulse duration (s).
    pub t_tn: f64,
    /// Transmitted concentration of bit A (µmol/L).
    pub c_a: f64,
    /// Receptor concentration (µmol/L).
    pub c_r: f64,
    /// Probability of transmitting bit A.
    pub p_a: f64,
}

impl Default for NccParams {
    fn default() -> Self {
        Self {
            kappa1: 1.0,
            kappa_minus1_zero: 1.0,
            chi: 0.0,
            upsilon: 0.0,
            k_bc: 1.380649e-23,
            theta: 300.0,
            t_tn: 1.0,
            c_a: 1.0,
            c_r: 1.0,
            p_a: 1.0,
        }
    }
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be finite and > 0, got {v}")))
    }
}

fn non_negative(field: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be finite and >= 0, got {v}")))
    }
}

impl NccParams {
    pub fn validate(&self) -> Result<()> {
        positive("kappa1", self.kappa1)?;
        positive("kappa_minus1_zero", self.kappa_minus1_zero)?;
        non_negative("chi", self.chi)?;
        non_negative("upsilon", self.upsilon)?;
        positive("k_bc", self.k_bc)?;
        positive("theta", self.theta)?;
        positive("t_tn", self.t_tn)?;
        // c_a = 0 is the "no molecules sent" limit and is allowed.
        non_negative("c_a", self.c_a)?;
        positive("c_r", self.c_r)?;
        if !(0.0..=1.0).contains(&self.p_a) {
            return Err(invalid("p_a", format!("must lie in [0, 1], got {}", self.p_a)));
        }
        Ok(())
    }
}

/// κ₋₁ = κ₋₁⁰·exp(χυ / (k_B θ)).
pub fn release_rate(params: &NccParams) -> Result<f64> {
    params.validate()?;
    let rate = params.kappa_minus1_zero * (params.chi * params.upsilon / (params.k_bc * params.theta)).exp();
    if !rate.is_finite() || rate <= 0.0 {
        return Err(invalid("kappa_minus1", format!("release rate is not a positive finite number ({rate})")));
    }
    Ok(rate)
}

/// Steady-state bound-receptor concentration and the approach rate r.
fn binding_constants(params: &NccParams) -> Result<(f64, f64)> {
    let k_m1 = release_rate(params)?;
    let r = k_m1 + params.kappa1 * params.c_a;
    if !(r > 0.0) {
        return Err(invalid("kappa_minus1 + kappa1*c_a", format!("must be > 0, got {r}")));
    }
    Ok((params.kappa1 * params.c_a * params.c_r / r, r))
}

/// Bound-receptor concentration C_B(t) during the pulse, 0 ≤ t ≤ t_tn.
pub fn bound_concentration(params: &NccParams, t: f64) -> Result<f64> {
    let (c_inf, r) = binding_constants(params)?;
    Ok(c_inf * (-(-t * r).exp_m1()))
}

/// N_A = ∫₀^t_tn C_B(t) dt in closed form.
pub fn received_molecules_current(params: &NccParams) -> Result<f64> {
    let (c_inf, r) = binding_constants(params)?;
    let t = params.t_tn;
    // 1 - e^{-rt} via expm1 keeps small rt accurate
    Ok(c_inf * (t + (-r * t).exp_m1() / r))
}

/// N′_A = ∫₀^t_tn n_a·e^{−κ₋₁t} dt, the tail of the previous pulse.
pub fn received_molecules_previous(n_a: f64, params: &NccParams) -> Result<f64> {
    non_negative("n_a", n_a)?;
    let k = release_rate(params)?;
    Ok(n_a * (-(-k * params.t_tn).exp_m1()) / k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// The transmitter always (p_a = 1) or never (p_a = 0) sends bit A.
    Deterministic,
    /// Bits are i.i.d. with P(A) = p_a; the feature is the expectation.
    Probabilistic,
}

/// Noise-free detection feature NR.
pub fn detection_feature(params: &NccParams, scenario: Scenario) -> Result<f64> {
    params.validate()?;
    let full = || -> Result<f64> {
        let n_a = received_molecules_current(params)?;
        Ok(n_a + received_molecules_previous(n_a, params)?)
    };
    match scenario {
        Scenario::Deterministic => {
            if params.p_a == 1.0 {
                full()
            } else if params.p_a == 0.0 {
                Ok(0.0)
            } else {
                Err(NadsError::InvalidConfiguration(format!(
                    "deterministic scenario needs p_a in {{0, 1}}, got {}",
                    params.p_a
                )))
            }
        }
        Scenario::Probabilistic => {
            if params.p_a == 1.0 {
                return full();
            }
            Ok(params.p_a * full()?)
        }
    }
}

/// Direction of the abnormal deviation of NR from NH.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// NR = (1 ± kσ_NCC)·NH.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AbnormalityModel {
    k: f64,
    sign: Sign,
    nh: f64,
    sigma_ncc: f64,
}

impl AbnormalityModel {
    pub fn new(k: f64, sign: Sign, nh: f64, sigma_ncc: f64) -> Result<Self> {
        non_negative("k", k)?;
        if !nh.is_finite() {
            return Err(invalid("nh", "must be finite"));
        }
        non_negative("sigma_ncc", sigma_ncc)?;
        let factor = 1.0 + sign.value() * k * sigma_ncc;
        if factor < 0.0 {
            return Err(invalid(
                "k",
                format!("1 {} k*sigma_ncc = {factor} is negative", if sign == Sign::Plus { "+" } else { "-" }),
            ));
        }
        Ok(Self { k, sign, nh, sigma_ncc })
    }

    pub fn k(&self) -> f64 {
        self.k
    }
    pub fn sign(&self) -> Sign {
        self.sign
    }
    pub fn nh(&self) -> f64 {
        self.nh
    }
    pub fn sigma_ncc(&self) -> f64 {
        self.sigma_ncc
    }

    /// Signed deviation NR − NH.
    pub fn deviation(&self) -> f64 {
        self.sign.value() * self.k * self.sigma_ncc * self.nh
    }
}

pub fn abnormal_feature(model: &AbnormalityModel) -> f64 {
    if model.k == 0.0 {
        return model.nh;
    }
    (1.0 + model.sign.value() * model.k * model.sigma_ncc) * model.nh
}
