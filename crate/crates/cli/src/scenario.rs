//! The scenario file: one TOML document per operating point, with an
//! optional `[grid]` table of axes to sweep.

use crate::CliError;
use nads::mvn::MvnOptions;
use nads::ncc_channel::{detection_feature, NccParams, Scenario as BitScenario, Sign};
use nads::system_perf::{DesignSpec, Method, SpatialSpec, SystemModel};
use nads::NadsError;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub method: Method,
    /// Exponent of the lemma2 approximation.
    pub alpha: f64,
    /// Optional physics layer; when present it supplies NH.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel: Option<Channel>,
    pub abnormality: Abnormality,
    pub noise: Noise,
    pub detector: Detector,
    pub fusion: Fusion,
    pub design: Design,
    pub integration: Integration,
    /// Sweep axes in file order; never part of the config hash.
    #[serde(skip_serializing)]
    pub grid: Option<toml::Table>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub scenario: BitScenario,
    #[serde(flatten)]
    pub params: NccParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Abnormality {
    pub k: f64,
    pub sign: Sign,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nh: Option<f64>,
    pub sigma_ncc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Noise {
    /// Observation window length.
    pub n: usize,
    /// Temporal lag correlations ρ_1..ρ_p; lags past n − 1 are dropped.
    pub rho: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spatial_base: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spatial_matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Detector {
    pub eta1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fusion {
    pub m: usize,
    pub g: f64,
    pub sigma_mcc: f64,
    pub prior_h1: f64,
    pub vote_m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Design {
    pub xi: f64,
    pub gamma: f64,
    /// Sample volume, nm³.
    pub vol: f64,
    pub m_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Integration {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub randomizations: usize,
    pub min_points: usize,
    pub max_points: usize,
    pub seed: u64,
}

const DEFAULT_SPATIAL_BASE: f64 = 0.25;

impl Default for Scenario {
    fn default() -> Self {
        let model = SystemModel::default();
        Self {
            method: model.method,
            alpha: model.alpha,
            channel: None,
            abnormality: Abnormality::default(),
            noise: Noise::default(),
            detector: Detector::default(),
            fusion: Fusion::default(),
            design: Design::default(),
            integration: Integration::default(),
            grid: None,
        }
    }
}

impl Default for Abnormality {
    fn default() -> Self {
        Self { k: 2.0, sign: Sign::Plus, nh: None, sigma_ncc: 0.1 }
    }
}

impl Default for Noise {
    fn default() -> Self {
        Self { n: 9, rho: vec![0.0], spatial_base: None, spatial_matrix: None }
    }
}

impl Default for Detector {
    fn default() -> Self {
        Self { eta1: 1e-6 }
    }
}

impl Default for Fusion {
    fn default() -> Self {
        Self { m: 1, g: 1.0, sigma_mcc: 0.1, prior_h1: 0.5, vote_m: 1 }
    }
}

impl Default for Design {
    fn default() -> Self {
        Self { xi: 1.0 - 1e-6, gamma: 1e-5, vol: 1000.0, m_max: 64 }
    }
}

impl Default for Integration {
    fn default() -> Self {
        let o = MvnOptions::default();
        Self {
            abs_tol: o.abs_tol,
            rel_tol: o.rel_tol,
            randomizations: o.randomizations,
            min_points: o.min_points,
            max_points: o.max_points,
            seed: o.seed,
        }
    }
}

/// 1-based line of the first `key = ...` assignment, if any.
pub fn locate(src: &str, key: &str) -> Option<usize> {
    src.lines().position(|line| {
        let t = line.trim_start();
        t.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

impl Scenario {
    pub fn parse(src: &str, origin: &str) -> Result<Self, CliError> {
        let mut s: Scenario = toml::from_str(src).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
        s.normalize();
        s.validate().map_err(|e| match e {
            CliError::Config(msg) => {
                let field = msg.split('`').nth(1).unwrap_or("");
                match locate(src, field) {
                    Some(line) if !field.is_empty() => CliError::Config(format!("{origin}, line {line}: {msg}")),
                    _ => CliError::Config(format!("{origin}: {msg}")),
                }
            }
            other => other,
        })?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&src, &path.display().to_string())
    }

    /// Makes implicit defaults explicit so equal operating points hash equally.
    pub fn normalize(&mut self) {
        if self.noise.spatial_matrix.is_none() && self.noise.spatial_base.is_none() {
            self.noise.spatial_base = Some(DEFAULT_SPATIAL_BASE);
        }
    }

    /// Cross-field checks, then a full build of every component.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |msg: String| CliError::Config(msg);
        if self.channel.is_some() && self.abnormality.nh.is_some() {
            return Err(cfg("invalid parameter `nh`: set either abnormality.nh or a [channel] table, not both".into()));
        }
        if let Some(rows) = &self.noise.spatial_matrix {
            if self.noise.spatial_base.is_some() {
                return Err(cfg("invalid parameter `spatial_base`: give spatial_base or spatial_matrix, not both".into()));
            }
            if rows.len() != self.fusion.m || rows.iter().any(|r| r.len() != self.fusion.m) {
                return Err(cfg(format!(
                    "invalid parameter `spatial_matrix`: must be {m}x{m} to match fusion.m = {m}",
                    m = self.fusion.m
                )));
            }
        }
        self.model().map(|_| ())
    }

    pub fn nh(&self) -> Result<f64, CliError> {
        match &self.channel {
            Some(c) => Ok(detection_feature(&c.params, c.scenario)?),
            None => Ok(self.abnormality.nh.unwrap_or(1.0)),
        }
    }

    pub fn model(&self) -> Result<SystemModel, CliError> {
        let spatial = match &self.noise.spatial_matrix {
            Some(rows) => {
                let m = rows.len();
                SpatialSpec::Explicit(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
            }
            None => SpatialSpec::Geometric { base: self.noise.spatial_base.unwrap_or(DEFAULT_SPATIAL_BASE) },
        };
        let lags = self.noise.n.saturating_sub(1).min(self.noise.rho.len());
        let i = &self.integration;
        let model = SystemModel {
            n: self.noise.n,
            rho: self.noise.rho[..lags].to_vec(),
            sigma_ncc: self.abnormality.sigma_ncc,
            nh: self.nh()?,
            k: self.abnormality.k,
            sign: self.abnormality.sign,
            eta1: self.detector.eta1,
            m: self.fusion.m,
            spatial,
            g: self.fusion.g,
            sigma_mcc: self.fusion.sigma_mcc,
            prior_h1: self.fusion.prior_h1,
            vote_m: self.fusion.vote_m,
            alpha: self.alpha,
            method: self.method,
            mvn: MvnOptions {
                abs_tol: i.abs_tol,
                rel_tol: i.rel_tol,
                randomizations: i.randomizations,
                min_points: i.min_points,
                max_points: i.max_points,
                seed: i.seed,
            },
        };
        model.validate()?;
        Ok(model)
    }

    pub fn design(&self, xi: Option<f64>, gamma: Option<f64>) -> Result<DesignSpec, CliError> {
        let mut spec = DesignSpec::new(xi.unwrap_or(self.design.xi), gamma.unwrap_or(self.design.gamma), self.model()?);
        spec.vol = self.design.vol;
        spec.m_max = self.design.m_max;
        spec.validate()?;
        Ok(spec)
    }

    /// Canonical JSON of the resolved scenario (grid excluded, keys sorted).
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("scenario serializes");
        serde_json::to_string(&value).expect("json value serializes")
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// TOML for this single point, loadable on its own.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes to toml")
    }
}

impl From<NadsError> for CliError {
    fn from(e: NadsError) -> Self {
        match e {
            NadsError::CapExceeded { .. } => CliError::Cap(e.to_string()),
            NadsError::DegeneratePrecision(_) => CliError::Runtime(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}
