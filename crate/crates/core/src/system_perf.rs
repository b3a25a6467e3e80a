//! End-to-end rates after the MAP decision at the DGN, the lemma2 fast
//! path and the minimum-concentration design search.

use crate::covariance::{NoiseModel, SpatialCorrelation, TemporalCorrelation};
use crate::error::{invalid, NadsError, Result};
use crate::fusion::{
    alarm_distribution_approx, alarm_distribution_exact, alarm_distribution_hybrid, alarm_distribution_independent,
    alarm_distribution_paper_literal, map_threshold, q_rates, AlarmDistribution, AlarmMethod, FusionConfig,
    MapThreshold, SensorLaw,
};
use crate::mvn::MvnOptions;
use crate::ncc_channel::{AbnormalityModel, Sign};
use crate::normal;
use crate::snm_detector::SnmDetector;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerformanceReport {
    pub method: AlarmMethod,
    pub m: usize,
    pub q_d: f64,
    pub q_f: f64,
    /// ±∞ for the degenerate always-H0 / always-H1 rules.
    pub v_thr: f64,
    pub p_d: f64,
    pub p_f: f64,
    pub p_m: f64,
    /// Largest integration error on any alarm-count entry.
    pub integration_error: f64,
    pub low_confidence: bool,
    /// p′₀ = 1: no SNM can alarm under H1.
    pub no_alarm_possible: bool,
}

/// Probability that the DGN decides H1 and its complement, for one
/// alarm-count vector. Each vote group (l < m, l ≥ m) is weighted by its
/// own normalized shape.
fn decision_pair(v: &[f64], vote_m: usize, v_thr: f64, cfg: &FusionConfig) -> (f64, f64) {
    let sigma = cfg.sigma_mcc();
    let lower_mass: f64 = v[..vote_m].iter().sum::<f64>().clamp(0.0, 1.0);
    let upper_mass = 1.0 - lower_mass;
    let mut h1 = 0.0;
    let mut h0 = 0.0;
    for (range, weight) in [(0..vote_m, lower_mass), (vote_m..v.len(), upper_mass)] {
        let mass: f64 = v[range.clone()].iter().sum();
        if !(mass > 0.0) || weight == 0.0 {
            continue;
        }
        for l in range {
            let x = (v_thr - l as f64 * cfg.g()) / sigma;
            h1 += weight * v[l] / mass * normal::q(x);
            h0 += weight * v[l] / mass * normal::cdf(x);
        }
    }
    (h1, h0)
}

/// P_D, P_F and P_M from count distributions, network rates and a threshold.
pub fn system_rates(dist: &AlarmDistribution, q_d: f64, q_f: f64, v_thr: f64, cfg: &FusionConfig) -> PerformanceReport {
    let vote_m = cfg.vote_m();
    // P_M from the complementary tails keeps its precision near 1e-7
    let (_, p_m) = decision_pair(&dist.p_prime, vote_m, v_thr, cfg);
    let (p_f, _) = decision_pair(&dist.p_doubleprime, vote_m, v_thr, cfg);
    let p_m = p_m.clamp(0.0, 1.0);
    PerformanceReport {
        method: dist.method,
        m: dist.m(),
        q_d,
        q_f,
        v_thr,
        p_d: 1.0 - p_m,
        p_f: p_f.clamp(0.0, 1.0),
        p_m,
        integration_error: dist.error,
        low_confidence: dist.low_confidence,
        no_alarm_possible: dist.p_prime[1..].iter().all(|&x| x == 0.0),
    }
}

/// Direct sums P_D = Σ p′_l Q((V − lG)/σ), P_F = Σ p″_l Q((V − lG)/σ).
pub fn direct_sum_rates(dist: &AlarmDistribution, v_thr: f64, cfg: &FusionConfig) -> (f64, f64) {
    let sum = |v: &[f64]| -> f64 {
        v.iter()
            .enumerate()
            .map(|(l, p)| p * normal::q((v_thr - l as f64 * cfg.g()) / cfg.sigma_mcc()))
            .sum()
    };
    (sum(&dist.p_prime), sum(&dist.p_doubleprime))
}

fn finish(dist: &AlarmDistribution, cfg: &FusionConfig) -> PerformanceReport {
    let (q_d, q_f) = q_rates(dist, cfg.vote_m());
    let thr = map_threshold(dist, q_d, q_f, cfg);
    system_rates(dist, q_d, q_f, thr.value(), cfg)
}

/// Full evaluation with the lemma2 alarm-count approximation.
pub fn fast_rates(
    p_ncc_d: f64,
    p_ncc_f: f64,
    spatial: &SpatialCorrelation,
    alpha: f64,
    cfg: &FusionConfig,
) -> Result<PerformanceReport> {
    let dist = alarm_distribution_approx(p_ncc_d, p_ncc_f, spatial, alpha, cfg)?;
    Ok(finish(&dist, cfg))
}

/// Which alarm-count computation to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Exact up to [`AUTO_EXACT_LIMIT`] SNMs, lemma2 above.
    #[default]
    Auto,
    Exact,
    PaperLiteral,
    Independent,
    Lemma2,
    Hybrid,
}

pub const AUTO_EXACT_LIMIT: usize = 12;

impl Method {
    pub fn resolve(self, m: usize) -> AlarmMethod {
        match self {
            Method::Auto if m <= AUTO_EXACT_LIMIT => AlarmMethod::ExactMvn,
            Method::Auto => AlarmMethod::Lemma2Approx,
            Method::Exact => AlarmMethod::ExactMvn,
            Method::PaperLiteral => AlarmMethod::PaperLiteral,
            Method::Independent => AlarmMethod::IndependentClosedForm,
            Method::Lemma2 => AlarmMethod::Lemma2Approx,
            Method::Hybrid => AlarmMethod::Hybrid,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Auto => "auto",
            Method::Exact => "exact",
            Method::PaperLiteral => "paper_literal",
            Method::Independent => "independent",
            Method::Lemma2 => "lemma2",
            Method::Hybrid => "hybrid",
        }
    }
}

/// Spatial correlation generator; the geometric form follows M.
#[derive(Debug, Clone, PartialEq)]
pub enum SpatialSpec {
    Geometric { base: f64 },
    Explicit(DMatrix<f64>),
}

impl SpatialSpec {
    pub fn build(&self, m: usize) -> Result<SpatialCorrelation> {
        match self {
            SpatialSpec::Geometric { base } => SpatialCorrelation::geometric(m, *base),
            SpatialSpec::Explicit(omega) => {
                if omega.nrows() != m {
                    return Err(NadsError::DimensionMismatch(format!(
                        "explicit spatial matrix is {}x{} but m = {m}",
                        omega.nrows(),
                        omega.ncols()
                    )));
                }
                SpatialCorrelation::explicit(omega.clone())
            }
        }
    }
}

/// Every parameter of one NADS operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub n: usize,
    /// Temporal lag correlations ρ_1..ρ_p.
    pub rho: Vec<f64>,
    pub sigma_ncc: f64,
    pub nh: f64,
    pub k: f64,
    pub sign: Sign,
    pub eta1: f64,
    pub m: usize,
    pub spatial: SpatialSpec,
    pub g: f64,
    pub sigma_mcc: f64,
    pub prior_h1: f64,
    pub vote_m: usize,
    pub alpha: f64,
    pub method: Method,
    pub mvn: MvnOptions,
}

impl Default for SystemModel {
    /// The reference operating point: G = NH = 1, η₁ = 1e-6, n = 9, k = 2,
    /// σ_NCC = σ_MCC = 0.1, spatial base 1/4, ρ = 0, equal priors, α = 1.2.
    fn default() -> Self {
        Self {
            n: 9,
            rho: vec![0.0],
            sigma_ncc: 0.1,
            nh: 1.0,
            k: 2.0,
            sign: Sign::Plus,
            eta1: 1e-6,
            m: 1,
            spatial: SpatialSpec::Geometric { base: 0.25 },
            g: 1.0,
            sigma_mcc: 0.1,
            prior_h1: 0.5,
            vote_m: 1,
            alpha: 1.2,
            method: Method::Auto,
            mvn: MvnOptions::default(),
        }
    }
}

impl SystemModel {
    pub fn with_m(&self, m: usize) -> Self {
        Self { m, ..self.clone() }
    }

    pub fn temporal(&self) -> Result<TemporalCorrelation> {
        TemporalCorrelation::new(self.n, self.rho.clone())
    }

    pub fn spatial_correlation(&self) -> Result<SpatialCorrelation> {
        self.spatial.build(self.m)
    }

    pub fn abnormality(&self) -> Result<AbnormalityModel> {
        AbnormalityModel::new(self.k, self.sign, self.nh, self.sigma_ncc)
    }

    pub fn detector(&self) -> Result<SnmDetector> {
        SnmDetector::for_channel(self.nh, self.eta1, &self.temporal()?, self.sigma_ncc)
    }

    pub fn fusion(&self) -> Result<FusionConfig> {
        FusionConfig::new(self.m, self.g, self.sigma_mcc, self.prior_h1, self.vote_m)
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        NoiseModel::new(self.temporal()?, self.spatial_correlation()?, self.sigma_ncc)
    }

    pub fn sensor_law(&self) -> Result<SensorLaw> {
        Ok(SensorLaw::new(&self.detector()?, &self.abnormality()?))
    }

    /// Builds every component once, surfacing the first invalid field.
    pub fn validate(&self) -> Result<()> {
        self.noise_model()?;
        self.sensor_law()?;
        self.fusion()?;
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha", format!("must be finite and > 0, got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn alarm_distribution(&self) -> Result<AlarmDistribution> {
        let law = self.sensor_law()?;
        let spatial = self.spatial_correlation()?;
        let cfg = self.fusion()?;
        match self.method.resolve(self.m) {
            AlarmMethod::ExactMvn => alarm_distribution_exact(&law, &spatial, &cfg, &self.mvn),
            AlarmMethod::PaperLiteral => alarm_distribution_paper_literal(&law, &spatial, &cfg, &self.mvn),
            AlarmMethod::IndependentClosedForm => alarm_distribution_independent(law.p_d(), law.p_f(), &cfg),
            AlarmMethod::Lemma2Approx => alarm_distribution_approx(law.p_d(), law.p_f(), &spatial, self.alpha, &cfg),
            AlarmMethod::Hybrid => alarm_distribution_hybrid(&law, &spatial, self.alpha, &cfg, &self.mvn),
        }
    }

    pub fn evaluate(&self) -> Result<PerformanceReport> {
        self.validate()?;
        let dist = self.alarm_distribution()?;
        Ok(finish(&dist, &self.fusion()?))
    }

    /// The threshold rule alone, for simulation.
    pub fn threshold(&self) -> Result<MapThreshold> {
        let dist = self.alarm_distribution()?;
        let cfg = self.fusion()?;
        let (q_d, q_f) = q_rates(&dist, cfg.vote_m());
        Ok(map_threshold(&dist, q_d, q_f, &cfg))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    /// Detection floor ξ.
    pub xi: f64,
    /// False-alarm ceiling γ.
    pub gamma: f64,
    /// Sample volume in nm³.
    pub vol: f64,
    pub m_max: usize,
    pub model: SystemModel,
}

impl DesignSpec {
    pub fn new(xi: f64, gamma: f64, model: SystemModel) -> Self {
        Self { xi, gamma, vol: 1000.0, m_max: 64, model }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.gamma && self.gamma < self.xi && self.xi < 1.0) {
            return Err(invalid("xi", format!("need 0 < gamma < xi < 1, got gamma = {}, xi = {}", self.gamma, self.xi)));
        }
        if !(self.vol > 0.0 && self.vol.is_finite()) {
            return Err(invalid("vol", format!("must be finite and > 0, got {}", self.vol)));
        }
        if self.m_max == 0 {
            return Err(invalid("m_max", "must be >= 1"));
        }
        Ok(())
    }

    /// Feasibility is judged on P_M ≤ 1 − ξ, which keeps the precision of
    /// the small miss probability.
    pub fn feasible(&self, r: &PerformanceReport) -> bool {
        r.p_m <= 1.0 - self.xi && r.p_f <= self.gamma
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignResult {
    /// Smallest feasible M, if any within m_max.
    pub m_star: Option<usize>,
    /// M* / vol in SNMs per nm³.
    pub concentration: Option<f64>,
    /// One report per scanned M, in M order.
    pub rows: Vec<PerformanceReport>,
}

/// Scans M = 1..=m_max, checking both constraints at every M.
pub fn optimize_concentration(spec: &DesignSpec) -> Result<DesignResult> {
    spec.validate()?;
    spec.model.with_m(1).validate()?;
    let rows: Vec<PerformanceReport> = (1..=spec.m_max)
        .into_par_iter()
        .map(|m| spec.model.with_m(m).evaluate())
        .collect::<Result<_>>()?;
    let m_star = rows.iter().find(|r| spec.feasible(r)).map(|r| r.m);
    Ok(DesignResult { m_star, concentration: m_star.map(|m| m as f64 / spec.vol), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_point(q_d: f64, q_f: f64, cfg: &FusionConfig) -> AlarmDistribution {
        let (p1, p0) = (cfg.prior_h1(), cfg.prior_h0());
        AlarmDistribution {
            p_prime: vec![1.0 - q_d, q_d],
            p_doubleprime: vec![1.0 - q_f, q_f],
            p: vec![p1 * (1.0 - q_d) + p0 * (1.0 - q_f), p1 * q_d + p0 * q_f],
            method: AlarmMethod::ExactMvn,
            error: 0.0,
            low_confidence: false,
        }
    }

    #[test]
    fn scalar_examples() {
        let cfg = FusionConfig::or_rule(1, 1.0, 0.1).unwrap();
        let r = system_rates(&two_point(0.9, 0.1, &cfg), 0.9, 0.1, 0.5, &cfg);
        let oracle = normal::q(5.0) * 0.1 + normal::q(-5.0) * 0.9;
        assert!((r.p_d - oracle).abs() < 1e-15);
        assert!((r.p_d - 0.9).abs() < 1e-6);
        assert_eq!(r.p_d + r.p_m, 1.0);

        let r = system_rates(&two_point(1.0, 0.0, &cfg), 1.0, 0.0, 0.5, &cfg);
        assert!((r.p_m - normal::cdf(-5.0)).abs() < 1e-20);
        assert!((r.p_m - 2.87e-7).abs() < 1e-9);
    }

    #[test]
    fn noiseless_mcc_passes_rates_through() {
        let cfg = FusionConfig::or_rule(1, 1.0, 1e-6).unwrap();
        let r = system_rates(&two_point(0.73, 0.04, &cfg), 0.73, 0.04, 0.4, &cfg);
        assert!((r.p_d - 0.73).abs() < 1e-12 && (r.p_f - 0.04).abs() < 1e-12);
    }

    #[test]
    fn no_alarm_collapses_to_mcc_noise() {
        let cfg = FusionConfig::or_rule(2, 1.0, 0.1).unwrap();
        let d = alarm_distribution_independent(0.0, 0.0, &cfg).unwrap();
        let r = system_rates(&d, 0.0, 0.0, 0.2, &cfg);
        assert!(r.no_alarm_possible);
        assert!((r.p_d - normal::q(2.0)).abs() < 1e-15);
    }

    #[test]
    fn diagonal_methods_agree() {
        let base = SystemModel { spatial: SpatialSpec::Geometric { base: 0.0 }, alpha: 1.0, n: 3, rho: vec![0.1], ..Default::default() };
        for m in 1..=8 {
            let reports: Vec<PerformanceReport> = [Method::Exact, Method::Independent, Method::Lemma2]
                .iter()
                .map(|&method| SystemModel { method, ..base.with_m(m) }.evaluate().unwrap())
                .collect();
            for r in &reports[1..] {
                assert!((r.p_d - reports[0].p_d).abs() < 1e-6, "M = {m}");
                assert!((r.p_f - reports[0].p_f).abs() < 1e-6, "M = {m}");
            }
        }
    }

    #[test]
    fn fast_path_is_fast_where_exact_refuses() {
        let model = SystemModel { method: Method::Lemma2, ..SystemModel::default().with_m(30) };
        let t = std::time::Instant::now();
        let r = model.evaluate().unwrap();
        assert!(t.elapsed().as_secs_f64() < 1.0);
        assert!(r.p_m < 1e-6);
        let exact = SystemModel { method: Method::Exact, ..model };
        assert!(matches!(exact.evaluate(), Err(NadsError::CapExceeded { .. })));
    }

    #[test]
    fn fast_rates_diagonal_matches_closed_form() {
        let cfg = FusionConfig::or_rule(5, 1.0, 0.1).unwrap();
        let spatial = SpatialCorrelation::independent(5).unwrap();
        let a = fast_rates(0.8, 1e-3, &spatial, 1.0, &cfg).unwrap();
        let d = alarm_distribution_independent(0.8, 1e-3, &cfg).unwrap();
        let (q_d, q_f) = q_rates(&d, 1);
        let b = system_rates(&d, q_d, q_f, map_threshold(&d, q_d, q_f, &cfg).value(), &cfg);
        assert!((a.p_d - b.p_d).abs() < 1e-14 && (a.p_f - b.p_f).abs() < 1e-14);
    }

    #[test]
    fn optimizer_matches_sequential_scan() {
        let model = SystemModel { method: Method::Independent, ..Default::default() };
        let spec = DesignSpec { m_max: 20, ..DesignSpec::new(1.0 - 1e-6, 1e-5, model.clone()) };
        let res = optimize_concentration(&spec).unwrap();
        let mut oracle = None;
        for m in 1..=20 {
            let r = model.with_m(m).evaluate().unwrap();
            if r.p_m <= 1e-6 && r.p_f <= 1e-5 {
                oracle = Some(m);
                break;
            }
        }
        assert_eq!(res.m_star, oracle);
        assert_eq!(res.concentration, oracle.map(|m| m as f64 / 1000.0));
        assert_eq!(res.rows.len(), 20);
    }

    #[test]
    fn unattainable_design_is_infeasible() {
        let model = SystemModel { sigma_mcc: 5.0, method: Method::Lemma2, ..Default::default() };
        let res = optimize_concentration(&DesignSpec { m_max: 30, ..DesignSpec::new(1.0 - 1e-12, 1e-12, model) }).unwrap();
        assert_eq!(res.m_star, None);
        assert!(DesignSpec::new(0.1, 0.2, SystemModel::default()).validate().is_err());
    }

    #[test]
    fn correlation_costs_detection() {
        let corr = SystemModel::default().with_m(8);
        let ind = SystemModel { spatial: SpatialSpec::Geometric { base: 0.0 }, ..corr.clone() };
        let (a, b) = (corr.evaluate().unwrap(), ind.evaluate().unwrap());
        assert!(a.p_m > b.p_m);
    }

    fn normalized(raw: &[f64]) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.iter().map(|x| x / s).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn group_form_equals_direct_sums(
            a in proptest::collection::vec(1e-6f64..1.0, 2..8),
            b in proptest::collection::vec(1e-6f64..1.0, 8),
            v in -0.5f64..6.0,
            sigma in 0.05f64..1.0,
            vote in 1usize..4,
        ) {
            let m = a.len() - 1;
            let vote = vote.min(m);
            let cfg = FusionConfig::new(m, 1.0, sigma, 0.5, vote).unwrap();
            let pp = normalized(&a);
            let pd = normalized(&b[..=m]);
            let d = AlarmDistribution {
                p: pp.iter().zip(&pd).map(|(x, y)| 0.5 * x + 0.5 * y).collect(),
                p_prime: pp,
                p_doubleprime: pd,
                method: AlarmMethod::ExactMvn,
                error: 0.0,
                low_confidence: false,
            };
            let (q_d, q_f) = q_rates(&d, vote);
            let r = system_rates(&d, q_d, q_f, v, &cfg);
            let (p_d, p_f) = direct_sum_rates(&d, v, &cfg);
            prop_assert!((r.p_d - p_d).abs() < 1e-12);
            prop_assert!((r.p_f - p_f).abs() < 1e-12);
        }
    }
}
