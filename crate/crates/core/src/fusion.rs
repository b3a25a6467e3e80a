//! Second tier: alarm counts, network rates Q_D / Q_F and the MAP
//! threshold at the DGN.
//!
//! Each SNM alarm is sent as amplitude G; the DGN sees V = lG + N(0, σ²_MCC)
//! where l is the number of alarming SNMs.

use crate::covariance::SpatialCorrelation;
use crate::error::{invalid, NadsError, Result};
use crate::mvn::{binomial_table, box_probability, chain_outside_counts, outside_count_distribution, pattern_probability_capped};
use crate::mvn::{BoxRegion, GaussianVector, MvnEstimate, MvnOptions, OUTSIDE_CAP};
use crate::ncc_channel::AbnormalityModel;
use crate::snm_detector::{alarm_probability, SnmDetector};
use crate::Hypothesis;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    m_snm: usize,
    g: f64,
    sigma_mcc: f64,
    prior_h1: f64,
    vote_m: usize,
}

impl FusionConfig {
    pub fn new(m_snm: usize, g: f64, sigma_mcc: f64, prior_h1: f64, vote_m: usize) -> Result<Self> {
        if m_snm == 0 {
            return Err(invalid("m", "need at least one SNM"));
        }
        if !(g > 0.0 && g.is_finite()) {
            return Err(invalid("g", format!("must be finite and > 0, got {g}")));
        }
        if !(sigma_mcc > 0.0 && sigma_mcc.is_finite()) {
            return Err(invalid("sigma_mcc", format!("must be finite and > 0, got {sigma_mcc}")));
        }
        if !(prior_h1 > 0.0 && prior_h1 < 1.0) {
            return Err(invalid("prior_h1", format!("must lie in (0, 1), got {prior_h1}")));
        }
        if vote_m == 0 || vote_m > m_snm {
            return Err(invalid("vote_m", format!("must lie in 1..={m_snm}, got {vote_m}")));
        }
        Ok(Self { m_snm, g, sigma_mcc, prior_h1, vote_m })
    }

    /// OR rule with equal priors.
    pub fn or_rule(m_snm: usize, g: f64, sigma_mcc: f64) -> Result<Self> {
        Self::new(m_snm, g, sigma_mcc, 0.5, 1)
    }

    pub fn m_snm(&self) -> usize {
        self.m_snm
    }
    pub fn g(&self) -> f64 {
        self.g
    }
    pub fn sigma_mcc(&self) -> f64 {
        self.sigma_mcc
    }
    pub fn prior_h1(&self) -> f64 {
        self.prior_h1
    }
    pub fn prior_h0(&self) -> f64 {
        1.0 - self.prior_h1
    }
    pub fn vote_m(&self) -> usize {
        self.vote_m
    }

    pub fn with_m(self, m_snm: usize) -> Result<Self> {
        Self::new(m_snm, self.g, self.sigma_mcc, self.prior_h1, self.vote_m.min(m_snm))
    }
}

/// How the alarm-count distribution was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmMethod {
    /// Sum over every alarm subset of the exact MVN pattern probability.
    ExactMvn,
    /// C(M, l) × the pattern with the first l sensors alarming; exact only
    /// for exchangeable correlation.
    PaperLiteral,
    /// Binomial counts, ignoring spatial correlation.
    IndependentClosedForm,
    /// Per-term approximation with fitting exponent α.
    Lemma2Approx,
    /// Exact no-alarm probability from one box integral, lemma2 shape for
    /// l ≥ 1 rescaled to the remaining mass.
    Hybrid,
}

impl AlarmMethod {
    pub fn label(self) -> &'static str {
        match self {
            AlarmMethod::ExactMvn => "exact",
            AlarmMethod::PaperLiteral => "paper_literal",
            AlarmMethod::IndependentClosedForm => "independent",
            AlarmMethod::Lemma2Approx => "lemma2",
            AlarmMethod::Hybrid => "hybrid",
        }
    }
}

/// Standardized law of one SNM decision variable: acceptance half-width z
/// (in σ_D) and the H1 mean shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorLaw {
    pub z: f64,
    pub shift: f64,
}

impl SensorLaw {
    pub fn new(det: &SnmDetector, model: &AbnormalityModel) -> Self {
        Self { z: det.z(), shift: det.shift(model) }
    }

    pub fn p_d(&self) -> f64 {
        alarm_probability(self.z, self.shift)
    }

    pub fn p_f(&self) -> f64 {
        alarm_probability(self.z, 0.0)
    }

    fn vector(&self, spatial: &SpatialCorrelation, truth: Hypothesis) -> Result<GaussianVector> {
        let mean = match truth {
            Hypothesis::H0 => 0.0,
            Hypothesis::H1 => self.shift,
        };
        GaussianVector::new(DVector::from_element(spatial.m(), mean), spatial.matrix().clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlarmDistribution {
    /// p′_l = P(l alarms | H1).
    pub p_prime: Vec<f64>,
    /// p″_l = P(l alarms | H0).
    pub p_doubleprime: Vec<f64>,
    /// Mixture P(H1)p′_l + P(H0)p″_l.
    pub p: Vec<f64>,
    pub method: AlarmMethod,
    /// Integration error bound on the p′ / p″ entries (zero when closed form).
    pub error: f64,
    pub low_confidence: bool,
}

impl AlarmDistribution {
    fn assemble(p_prime: Vec<f64>, p_doubleprime: Vec<f64>, cfg: &FusionConfig, method: AlarmMethod) -> Self {
        let p = p_prime
            .iter()
            .zip(&p_doubleprime)
            .map(|(a, b)| cfg.prior_h1 * a + cfg.prior_h0() * b)
            .collect();
        Self { p_prime, p_doubleprime, p, method, error: 0.0, low_confidence: false }
    }

    pub fn m(&self) -> usize {
        self.p_prime.len() - 1
    }

    /// 1 − Σ p′_l; negative values are excess mass (the lemma2 approximation overshoots).
    pub fn mass_deficit(&self) -> (f64, f64) {
        (1.0 - self.p_prime.iter().sum::<f64>(), 1.0 - self.p_doubleprime.iter().sum::<f64>())
    }
}

fn clamp_probs(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect()
}

/// Exact count distributions. Geometric spatial correlation makes the
/// sensors an AR(1) chain and uses the forward recursion; any other matrix
/// goes through the 2^M marginal box integrals.
pub fn alarm_distribution_exact(
    law: &SensorLaw,
    spatial: &SpatialCorrelation,
    cfg: &FusionConfig,
    opts: &MvnOptions,
) -> Result<AlarmDistribution> {
    check_m(spatial, cfg)?;
    let m = spatial.m();
    if m > OUTSIDE_CAP {
        return Err(NadsError::CapExceeded { needed: m, cap: OUTSIDE_CAP });
    }
    let interval = (-law.z, law.z);
    let (h1, h0) = match spatial.geometric_base() {
        Some(r) => (
            chain_outside_counts(m, r, law.shift, interval)?,
            chain_outside_counts(m, r, 0.0, interval)?,
        ),
        None => (
            outside_count_distribution(&law.vector(spatial, Hypothesis::H1)?, interval, opts, OUTSIDE_CAP)?,
            outside_count_distribution(&law.vector(spatial, Hypothesis::H0)?, interval, &opts.with_seed(opts.seed ^ 1), OUTSIDE_CAP)?,
        ),
    };
    let err = h1.errors.iter().chain(&h0.errors).cloned().fold(0.0, f64::max);
    let mut d = AlarmDistribution::assemble(clamp_probs(h1.probs), clamp_probs(h0.probs), cfg, AlarmMethod::ExactMvn);
    d.error = err;
    d.low_confidence = h1.low_confidence || h0.low_confidence;
    Ok(d)
}

/// P(no SNM alarms) under `truth`.
fn no_alarm_probability(law: &SensorLaw, spatial: &SpatialCorrelation, truth: Hypothesis, opts: &MvnOptions) -> Result<MvnEstimate> {
    let m = spatial.m();
    if let Some(r) = spatial.geometric_base() {
        let mean = if truth == Hypothesis::H1 { law.shift } else { 0.0 };
        let c = chain_outside_counts(m, r, mean, (-law.z, law.z))?;
        return Ok(MvnEstimate { value: c.probs[0], error: c.errors[0], low_confidence: false });
    }
    box_probability(&law.vector(spatial, truth)?, &BoxRegion::cube(m, -law.z, law.z)?, opts)
}

/// The literal product form: C(M, l) times the probability that the first
/// l sensors alarm and the rest do not.
pub fn alarm_distribution_paper_literal(
    law: &SensorLaw,
    spatial: &SpatialCorrelation,
    cfg: &FusionConfig,
    opts: &MvnOptions,
) -> Result<AlarmDistribution> {
    check_m(spatial, cfg)?;
    let m = spatial.m();
    let binom = binomial_table(m);
    let mut out = [vec![0.0; m + 1], vec![0.0; m + 1]];
    let mut err: f64 = 0.0;
    let mut low = false;
    for (slot, truth) in [Hypothesis::H1, Hypothesis::H0].into_iter().enumerate() {
        let g = law.vector(spatial, truth)?;
        for l in 0..=m {
            let inside: Vec<usize> = (l..m).collect();
            let o = opts.with_seed(crate::streams::mix(opts.seed, (slot * (m + 1) + l) as u64));
            let e = pattern_probability_capped(&g, &inside, (-law.z, law.z), &o, OUTSIDE_CAP)?;
            out[slot][l] = (binom[m][l] * e.value).clamp(0.0, 1.0);
            err = err.max(binom[m][l] * e.error);
            low |= e.low_confidence;
        }
    }
    let [h1, h0] = out;
    let mut d = AlarmDistribution::assemble(h1, h0, cfg, AlarmMethod::PaperLiteral);
    d.error = err;
    d.low_confidence = low;
    Ok(d)
}

fn binomial_vector(p: f64, m: usize) -> Vec<f64> {
    let binom = binomial_table(m);
    (0..=m)
        .map(|l| binom[m][l] * p.powi(l as i32) * (1.0 - p).powi((m - l) as i32))
        .collect()
}

/// Binomial counts for spatially independent sensors.
pub fn alarm_distribution_independent(p_ncc_d: f64, p_ncc_f: f64, cfg: &FusionConfig) -> Result<AlarmDistribution> {
    for (name, p) in [("p_ncc_d", p_ncc_d), ("p_ncc_f", p_ncc_f)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid(name, format!("must lie in [0, 1], got {p}")));
        }
    }
    let m = cfg.m_snm;
    Ok(AlarmDistribution::assemble(
        binomial_vector(p_ncc_d, m),
        binomial_vector(p_ncc_f, m),
        cfg,
        AlarmMethod::IndependentClosedForm,
    ))
}

fn lemma2_vector(p: f64, m: usize, alpha: f64, s: f64) -> Vec<f64> {
    let binom = binomial_table(m);
    let mf = m as f64;
    (0..=m)
        .map(|l| {
            let lf = l as f64;
            let miss = (1.0 - p).powf(alpha * (mf - lf) / mf * s);
            let hit = p.powf(alpha * lf / mf * s);
            (binom[m][l] * miss * hit).clamp(0.0, 1.0)
        })
        .collect()
}

/// p̃′_l = C(M,l)(1 − P_D)^{α(M−l)s/M}(P_D)^{αls/M}, s = 1ᵀ(Ω^SC)⁻¹1.
/// The vectors are not renormalized.
pub fn alarm_distribution_approx(
    p_ncc_d: f64,
    p_ncc_f: f64,
    spatial: &SpatialCorrelation,
    alpha: f64,
    cfg: &FusionConfig,
) -> Result<AlarmDistribution> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(invalid("alpha", format!("must be finite and > 0, got {alpha}")));
    }
    check_m(spatial, cfg)?;
    let s = spatial.effective_count()?;
    let m = cfg.m_snm;
    Ok(AlarmDistribution::assemble(
        lemma2_vector(p_ncc_d, m, alpha, s),
        lemma2_vector(p_ncc_f, m, alpha, s),
        cfg,
        AlarmMethod::Lemma2Approx,
    ))
}

/// Exact P(no alarm) from one box per hypothesis; the l ≥ 1 shape is taken
/// from the lemma2 approximation and rescaled to the remaining mass.
pub fn alarm_distribution_hybrid(
    law: &SensorLaw,
    spatial: &SpatialCorrelation,
    alpha: f64,
    cfg: &FusionConfig,
    opts: &MvnOptions,
) -> Result<AlarmDistribution> {
    let approx = alarm_distribution_approx(law.p_d(), law.p_f(), spatial, alpha, cfg)?;
    let mut err: f64 = 0.0;
    let mut low = false;
    let mut rescale = |shape: &[f64], truth: Hypothesis, seed: u64| -> Result<Vec<f64>> {
        let e = no_alarm_probability(law, spatial, truth, &opts.with_seed(seed))?;
        err = err.max(e.error);
        low |= e.low_confidence;
        let p0 = e.value;
        let tail: f64 = shape[1..].iter().sum();
        let mut v = vec![p0];
        v.extend(shape[1..].iter().map(|x| if tail > 0.0 { (1.0 - p0) * x / tail } else { 0.0 }));
        Ok(v)
    };
    let h1 = rescale(&approx.p_prime, Hypothesis::H1, opts.seed)?;
    let h0 = rescale(&approx.p_doubleprime, Hypothesis::H0, opts.seed ^ 1)?;
    let mut d = AlarmDistribution::assemble(h1, h0, cfg, AlarmMethod::Hybrid);
    d.error = err;
    d.low_confidence = low;
    Ok(d)
}

fn check_m(spatial: &SpatialCorrelation, cfg: &FusionConfig) -> Result<()> {
    if spatial.m() != cfg.m_snm {
        return Err(NadsError::DimensionMismatch(format!(
            "spatial correlation is for {} SNMs, fusion for {}",
            spatial.m(),
            cfg.m_snm
        )));
    }
    Ok(())
}

/// Q_D = Σ_{l ≥ m} p′_l and Q_F likewise, taken as 1 − Σ_{l<m} so that the
/// OR rule gives 1 − p′₀ even when the vector is not normalized.
pub fn q_rates(dist: &AlarmDistribution, vote_m: usize) -> (f64, f64) {
    let q = |v: &[f64]| (1.0 - v[..vote_m.min(v.len())].iter().sum::<f64>()).clamp(0.0, 1.0);
    (q(&dist.p_prime), q(&dist.p_doubleprime))
}

/// MAP threshold on V, or a degenerate always-H0 / always-H1 rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MapThreshold {
    Finite(f64),
    /// The decision statistic never favours H1: threshold +∞.
    AlwaysH0,
    /// Never favours H0: threshold −∞.
    AlwaysH1,
}

impl MapThreshold {
    pub fn value(self) -> f64 {
        match self {
            MapThreshold::Finite(v) => v,
            MapThreshold::AlwaysH0 => f64::INFINITY,
            MapThreshold::AlwaysH1 => f64::NEG_INFINITY,
        }
    }

    pub fn is_degenerate(self) -> bool {
        !matches!(self, MapThreshold::Finite(_))
    }
}

/// Log-domain evaluator of the MAP statistic
/// A·E[φ(V − lG) | l < m] + B·E[φ(V − lG) | l ≥ m], positive favouring H0.
struct MapStatistic {
    coef: [f64; 2],
    groups: [Vec<(f64, f64)>; 2],
    sigma: f64,
}

impl MapStatistic {
    fn new(dist: &AlarmDistribution, q_d: f64, q_f: f64, cfg: &FusionConfig) -> Self {
        let (p0, p1) = (cfg.prior_h0(), cfg.prior_h1);
        let coef = [(1.0 - q_f) * p0 - (1.0 - q_d) * p1, q_f * p0 - q_d * p1];
        let m = cfg.vote_m;
        let mut groups = [Vec::new(), Vec::new()];
        for (g, range) in [(0usize, 0..m), (1, m..dist.p.len())] {
            let mass: f64 = dist.p[range.clone()].iter().sum();
            if mass > 0.0 {
                for l in range {
                    if dist.p[l] > 0.0 {
                        groups[g].push(((dist.p[l] / mass).ln(), l as f64 * cfg.g));
                    }
                }
            }
        }
        Self { coef, groups, sigma: cfg.sigma_mcc }
    }

    fn log_group(&self, g: usize, v: f64) -> f64 {
        let terms: Vec<f64> = self.groups[g]
            .iter()
            .map(|(lp, c)| lp - (v - c) * (v - c) / (2.0 * self.sigma * self.sigma))
            .collect();
        let mx = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if mx == f64::NEG_INFINITY {
            return mx;
        }
        mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln()
    }

    /// Sign-preserving value scaled by the larger exponential.
    fn eval(&self, v: f64) -> f64 {
        let (la, lb) = (self.log_group(0, v), self.log_group(1, v));
        let mx = la.max(lb);
        if mx == f64::NEG_INFINITY {
            return 0.0;
        }
        let term = |c: f64, l: f64| if c == 0.0 || l == f64::NEG_INFINITY { 0.0 } else { c * (l - mx).exp() };
        term(self.coef[0], la) + term(self.coef[1], lb)
    }
}

/// Grid step as a fraction of σ_MCC.
pub const DEFAULT_GRID_STEP: f64 = 0.01;
const MAX_GRID_POINTS: f64 = 1e6;

/// Smallest V where the MAP statistic turns from > 0 (H0) to ≤ 0 (H1):
/// scan [−4σ, MG + 4σ] at `step`·σ, then 60 bisection steps.
pub fn map_threshold(dist: &AlarmDistribution, q_d: f64, q_f: f64, cfg: &FusionConfig) -> MapThreshold {
    map_threshold_with_step(dist, q_d, q_f, cfg, DEFAULT_GRID_STEP)
}

pub fn map_threshold_with_step(
    dist: &AlarmDistribution,
    q_d: f64,
    q_f: f64,
    cfg: &FusionConfig,
    step: f64,
) -> MapThreshold {
    let stat = MapStatistic::new(dist, q_d, q_f, cfg);
    let sigma = cfg.sigma_mcc;
    let lo = -4.0 * sigma;
    let hi = cfg.m_snm as f64 * cfg.g + 4.0 * sigma;
    // for tiny σ the sign regions are ~G wide, so a million points suffice
    let n = ((hi - lo) / (step * sigma)).ceil().min(MAX_GRID_POINTS) as usize;
    let at = |k: usize| lo + (hi - lo) * k as f64 / n as f64;
    let first = stat.eval(lo);
    let mut prev = first;
    for k in 1..=n {
        let v = at(k);
        let cur = stat.eval(v);
        if prev > 0.0 && cur <= 0.0 {
            let (mut a, mut b) = (at(k - 1), v);
            for _ in 0..60 {
                let mid = 0.5 * (a + b);
                if stat.eval(mid) > 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            return MapThreshold::Finite(b);
        }
        prev = cur;
    }
    if first > 0.0 {
        MapThreshold::AlwaysH0
    } else {
        MapThreshold::AlwaysH1
    }
}

/// H1 iff v ≥ threshold.
pub fn dgn_decide(v: f64, v_thr: f64) -> Hypothesis {
    if v >= v_thr {
        Hypothesis::H1
    } else {
        Hypothesis::H0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::TemporalCorrelation;
    use crate::ncc_channel::Sign;
    use crate::normal;
    use proptest::prelude::*;

    fn cfg(m: usize) -> FusionConfig {
        FusionConfig::or_rule(m, 1.0, 0.1).unwrap()
    }

    fn paper_law(n: usize, rho: f64) -> SensorLaw {
        let det = SnmDetector::for_channel(1.0, 1e-6, &TemporalCorrelation::lag_one(n, rho).unwrap(), 0.1).unwrap();
        SensorLaw::new(&det, &AbnormalityModel::new(2.0, Sign::Plus, 1.0, 0.1).unwrap())
    }

    fn two_point(q_d: f64, q_f: f64) -> AlarmDistribution {
        AlarmDistribution::assemble(vec![1.0 - q_d, q_d], vec![1.0 - q_f, q_f], &cfg(1), AlarmMethod::ExactMvn)
    }

    #[test]
    fn independent_examples() {
        let d = alarm_distribution_independent(0.0, 0.0, &cfg(3)).unwrap();
        assert_eq!(d.p_prime, vec![1.0, 0.0, 0.0, 0.0]);
        let d = alarm_distribution_independent(0.5, 0.1, &cfg(2)).unwrap();
        assert_eq!(d.p_prime, vec![0.25, 0.5, 0.25]);
        let d = alarm_distribution_independent(0.3, 0.1, &cfg(4)).unwrap();
        assert!((d.p_prime[2] - 6.0 * 0.09 * 0.49).abs() < 1e-15);
        assert!((d.p_prime[2] - 0.2646).abs() < 1e-12);
    }

    #[test]
    fn exact_single_sensor() {
        let law = paper_law(9, 0.0);
        let d = alarm_distribution_exact(&law, &SpatialCorrelation::independent(1).unwrap(), &cfg(1), &MvnOptions::default()).unwrap();
        assert!((d.p_prime[1] - law.p_d()).abs() < 1e-15);
        assert!((d.p_prime[0] - (1.0 - law.p_d())).abs() < 1e-15);
    }

    #[test]
    fn exact_matches_binomial_when_diagonal() {
        let law = paper_law(5, 0.1);
        for m in 1..=6 {
            let d = alarm_distribution_exact(&law, &SpatialCorrelation::independent(m).unwrap(), &cfg(m), &MvnOptions::default()).unwrap();
            let b = alarm_distribution_independent(law.p_d(), law.p_f(), &cfg(m)).unwrap();
            for l in 0..=m {
                assert!((d.p_prime[l] - b.p_prime[l]).abs() < 1e-8);
                assert!((d.p_doubleprime[l] - b.p_doubleprime[l]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn exact_against_simulated_decision_vector() {
        use crate::streams::substream;
        use rand::Rng;
        // moderate law so every count has visible mass
        let law = SensorLaw { z: 1.2, shift: 0.8 };
        let spatial = SpatialCorrelation::geometric(3, 0.25).unwrap();
        let opts = MvnOptions { abs_tol: 1e-7, rel_tol: 0.0, max_points: 1 << 19, ..Default::default() };
        let d = alarm_distribution_exact(&law, &spatial, &cfg(3), &opts).unwrap();
        let l = crate::covariance::cholesky(spatial.matrix(), "x").unwrap();
        let trials = 10_000_000usize;
        let mut counts = [0u64; 4];
        let mut rng = substream(404, 0);
        for _ in 0..trials {
            let z: [f64; 3] = std::array::from_fn(|_| rng.sample(rand_distr::StandardNormal));
            let mut alarms = 0;
            for i in 0..3 {
                let x = law.shift + (0..=i).map(|k| l[(i, k)] * z[k]).sum::<f64>();
                if !(x > -law.z && x < law.z) {
                    alarms += 1;
                }
            }
            counts[alarms] += 1;
        }
        for k in 0..4 {
            let p = counts[k] as f64 / trials as f64;
            let se = (p * (1.0 - p) / trials as f64).sqrt();
            assert!((p - d.p_prime[k]).abs() < 4.0 * se + d.error, "l = {k}: {p} vs {}", d.p_prime[k]);
        }
    }

    #[test]
    fn approx_reduces_to_binomial() {
        let law = paper_law(3, 0.1);
        for m in 1..=8 {
            let spatial = SpatialCorrelation::independent(m).unwrap();
            let a = alarm_distribution_approx(law.p_d(), law.p_f(), &spatial, 1.0, &cfg(m)).unwrap();
            let b = alarm_distribution_independent(law.p_d(), law.p_f(), &cfg(m)).unwrap();
            for l in 0..=m {
                assert!((a.p_prime[l] - b.p_prime[l]).abs() < 1e-14);
                assert!((a.p_doubleprime[l] - b.p_doubleprime[l]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn approx_two_sensors_against_exact() {
        let law = paper_law(3, 0.1);
        let spatial = SpatialCorrelation::geometric(2, 0.25).unwrap();
        let a = alarm_distribution_approx(law.p_d(), law.p_f(), &spatial, 1.2, &cfg(2)).unwrap();
        // s = 1.6, exponent on (1 − P_D) at l = 0 is α·s = 1.92
        assert!((a.p_prime[0] - (1.0 - law.p_d()).powf(1.92)).abs() < 1e-15);
        let e = alarm_distribution_exact(&law, &spatial, &cfg(2), &MvnOptions::default()).unwrap();
        assert!((a.p_prime[0] - e.p_prime[0]).abs() < 0.05);
    }

    #[test]
    fn paper_literal_equals_exact_when_exchangeable() {
        let law = SensorLaw { z: 1.5, shift: 1.0 };
        let m = 4;
        let omega = nalgebra::DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { 0.3 });
        let spatial = SpatialCorrelation::explicit(omega).unwrap();
        let opts = MvnOptions { abs_tol: 1e-5, rel_tol: 0.0, ..Default::default() };
        let a = alarm_distribution_exact(&law, &spatial, &cfg(m), &opts).unwrap();
        let b = alarm_distribution_paper_literal(&law, &spatial, &cfg(m), &opts).unwrap();
        for l in 0..=m {
            assert!((a.p_prime[l] - b.p_prime[l]).abs() < a.error + b.error + 1e-5, "l = {l}");
        }
        // Toeplitz: the ordering matters and the two differ
        let spatial = SpatialCorrelation::geometric(m, 0.6).unwrap();
        let a = alarm_distribution_exact(&law, &spatial, &cfg(m), &opts).unwrap();
        let b = alarm_distribution_paper_literal(&law, &spatial, &cfg(m), &opts).unwrap();
        assert!((a.p_prime[1] - b.p_prime[1]).abs() > 1e-3);
    }

    #[test]
    fn q_rate_examples() {
        let d = alarm_distribution_independent(0.5, 0.1, &cfg(2)).unwrap();
        assert_eq!(q_rates(&d, 1).0, 0.75);
        let point = AlarmDistribution::assemble(vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0], &cfg(2), AlarmMethod::ExactMvn);
        assert_eq!(q_rates(&point, 2).0, 1.0);

        let law = paper_law(3, 0.1);
        let corr = alarm_distribution_exact(&law, &SpatialCorrelation::geometric(2, 0.25).unwrap(), &cfg(2), &MvnOptions::default()).unwrap();
        let ind = alarm_distribution_independent(law.p_d(), law.p_f(), &cfg(2)).unwrap();
        assert!(q_rates(&corr, 1).0 <= q_rates(&ind, 1).0 + corr.error);
    }

    #[test]
    fn or_rule_q_matches_single_box() {
        let law = paper_law(5, 0.2);
        let m = 5;
        let spatial = SpatialCorrelation::geometric(m, 0.25).unwrap();
        let opts = MvnOptions::default();
        let d = alarm_distribution_exact(&law, &spatial, &cfg(m), &opts).unwrap();
        let g = law.vector(&spatial, Hypothesis::H1).unwrap();
        let b = box_probability(&g, &BoxRegion::cube(m, -law.z, law.z).unwrap(), &opts).unwrap();
        assert!((q_rates(&d, 1).0 - (1.0 - b.value)).abs() <= d.error + b.error + 1e-12);
        assert_eq!(q_rates(&d, 1).0, (1.0 - d.p_prime[0]).clamp(0.0, 1.0));
    }

    #[test]
    fn threshold_midpoint() {
        let d = two_point(0.9, 0.1);
        match map_threshold(&d, 0.9, 0.1, &cfg(1)) {
            MapThreshold::Finite(v) => assert!((v - 0.5).abs() < 1e-12, "{v}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn uninformative_channel_is_degenerate() {
        let d = two_point(0.3, 0.3);
        assert!(map_threshold(&d, 0.3, 0.3, &cfg(1)).is_degenerate());
        let d = two_point(1.0, 1.0);
        assert!(map_threshold(&d, 1.0, 1.0, &cfg(1)).is_degenerate());
    }

    #[test]
    fn extreme_priors_always_decide_h0() {
        let c = FusionConfig::new(1, 1.0, 0.1, 1e-9, 1).unwrap();
        let d = AlarmDistribution::assemble(vec![0.1, 0.9], vec![0.9, 0.1], &c, AlarmMethod::ExactMvn);
        assert_eq!(map_threshold(&d, 0.9, 0.1, &c), MapThreshold::AlwaysH0);
        assert_eq!(dgn_decide(1e300, MapThreshold::AlwaysH0.value()), Hypothesis::H0);
    }

    #[test]
    fn table3_threshold_against_fine_grid() {
        let law = paper_law(9, 0.0);
        let m = 7;
        let c = cfg(m);
        let d = alarm_distribution_approx(law.p_d(), law.p_f(), &SpatialCorrelation::geometric(m, 0.25).unwrap(), 1.2, &c).unwrap();
        let (q_d, q_f) = q_rates(&d, 1);
        let v = map_threshold(&d, q_d, q_f, &c).value();
        assert!(v > 0.0 && v < 1.0, "{v}");
        let fine = map_threshold_with_step(&d, q_d, q_f, &c, 1e-4).value();
        assert!((v - fine).abs() < 1e-9);
        // direct linear-space evaluation changes sign across v
        let direct = |x: f64| {
            let e = |l: usize| (-(x - l as f64).powi(2) / (2.0 * 0.01)).exp();
            let tail: f64 = (1..=m).map(|l| d.p[l] * e(l)).sum::<f64>() / d.p[1..].iter().sum::<f64>();
            0.5 * ((1.0 - q_f) - (1.0 - q_d)) * e(0) + 0.5 * (q_f - q_d) * tail
        };
        assert!(direct(v - 1e-7) > 0.0 && direct(v + 1e-7) < 0.0);
    }

    #[test]
    fn dgn_boundaries() {
        assert_eq!(dgn_decide(0.5 - 1e-12, 0.5), Hypothesis::H0);
        assert_eq!(dgn_decide(0.5, 0.5), Hypothesis::H1);
        assert_eq!(dgn_decide(1e10, f64::INFINITY), Hypothesis::H0);
    }

    #[test]
    fn exact_pattern_tail_precision() {
        // the no-alarm probability of nine sensors is ~1e-8; it must not vanish
        let law = paper_law(9, 0.0);
        let spatial = SpatialCorrelation::geometric(9, 0.25).unwrap();
        let d = alarm_distribution_hybrid(&law, &spatial, 1.2, &cfg(9), &MvnOptions::default()).unwrap();
        assert!(d.p_prime[0] > 1e-8 && d.p_prime[0] < 1e-5);
        assert!((d.p_prime.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let _ = normal::q(0.0);
    }

    #[test]
    fn chain_and_box_routes_agree() {
        let law = SensorLaw { z: 1.2, shift: 0.8 };
        let chain = SpatialCorrelation::geometric(5, 0.25).unwrap();
        let boxed = SpatialCorrelation::explicit(chain.matrix().clone()).unwrap();
        let opts = MvnOptions { abs_tol: 1e-6, rel_tol: 0.0, ..Default::default() };
        let a = alarm_distribution_exact(&law, &chain, &cfg(5), &opts).unwrap();
        let b = alarm_distribution_exact(&law, &boxed, &cfg(5), &opts).unwrap();
        for l in 0..=5 {
            assert!((a.p_prime[l] - b.p_prime[l]).abs() < b.error + 1e-6, "l = {l}");
            assert!((a.p_doubleprime[l] - b.p_doubleprime[l]).abs() < b.error + 1e-6, "l = {l}");
        }
    }

    #[test]
    fn exact_refuses_beyond_cap() {
        let law = paper_law(9, 0.0);
        let err = alarm_distribution_exact(&law, &SpatialCorrelation::geometric(30, 0.25).unwrap(), &cfg(30), &MvnOptions::default());
        assert!(matches!(err, Err(NadsError::CapExceeded { needed: 30, .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn threshold_scales_with_channel(q_d in 0.3f64..0.999, q_f in 1e-6f64..0.2, m in 1usize..6, sigma in 0.05f64..0.5, prior in 0.05f64..0.95) {
            let c = FusionConfig::new(m, 1.0, sigma, prior, 1).unwrap();
            let p1 = alarm_distribution_independent(1.0 - (1.0 - q_d).powf(1.0 / m as f64), 1.0 - (1.0 - q_f).powf(1.0 / m as f64), &c).unwrap();
            let (qd, qf) = q_rates(&p1, 1);
            let a = map_threshold(&p1, qd, qf, &c);
            let c10 = FusionConfig::new(m, 10.0, 10.0 * sigma, prior, 1).unwrap();
            let b = map_threshold(&p1, qd, qf, &c10);
            match (a, b) {
                (MapThreshold::Finite(x), MapThreshold::Finite(y)) => prop_assert!((y - 10.0 * x).abs() <= 1e-9 * (1.0 + y.abs())),
                (x, y) => prop_assert_eq!(x, y),
            }
        }
    }
}
