//! Box probabilities of a correlated Gaussian vector by randomized
//! quasi-Monte Carlo over Genz's sequential-conditioning transform.
//!
//! Everything runs in standardized coordinates: limits are shifted by the
//! mean and scaled by the marginal standard deviation, and the covariance
//! becomes a correlation matrix.

use crate::covariance::cholesky;
use crate::error::{invalid, NadsError, Result};
use crate::normal;
use gauss_quad::legendre::GaussLegendre;
use crate::streams::{mix, substream};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::HashMap;
use std::num::NonZeroUsize;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianVector {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl GaussianVector {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(NadsError::DimensionMismatch(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if (&covariance - covariance.transpose()).amax() > 1e-12 * covariance.amax() {
            return Err(invalid("covariance", "not symmetric"));
        }
        cholesky(&covariance, "covariance")?;
        Ok(Self { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    fn std_devs(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().map(|v| v.sqrt()).collect()
    }

    fn correlation(&self) -> DMatrix<f64> {
        let s = self.std_devs();
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            if i == j {
                1.0
            } else {
                self.covariance[(i, j)] / (s[i] * s[j])
            }
        })
    }
}

/// Axis-aligned box; limits may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRegion {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(NadsError::DimensionMismatch(format!(
                "{} lower limits vs {} upper limits",
                lower.len(),
                upper.len()
            )));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i]) || lower[i].is_nan()) {
            return Err(invalid("box", format!("lower > upper in coordinate {}", i + 1)));
        }
        Ok(Self { lower, upper })
    }

    /// The same interval on every coordinate.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }
    pub fn upper(&self) -> &[f64] {
        &self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvnOptions {
    /// Absolute error target.
    pub abs_tol: f64,
    /// Relative error target; the looser of the two wins.
    pub rel_tol: f64,
    pub randomizations: usize,
    /// Lattice points per randomization on the first pass; doubled until
    /// the target or `max_points` is reached.
    pub min_points: usize,
    pub max_points: usize,
    pub seed: u64,
}

impl Default for MvnOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-8,
            rel_tol: 1e-4,
            randomizations: 8,
            min_points: 256,
            max_points: 1 << 17,
            seed: 0x6d76_6e00,
        }
    }
}

impl MvnOptions {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.abs_tol <= 0.1) {
            return Err(invalid("abs_tol", format!("must lie in (0, 0.1], got {}", self.abs_tol)));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(invalid("rel_tol", "must be >= 0"));
        }
        if self.randomizations < 2 {
            return Err(invalid("randomizations", "need at least 2 for an error estimate"));
        }
        if self.min_points == 0 || self.max_points < self.min_points {
            return Err(invalid("max_points", "must be >= min_points > 0"));
        }
        Ok(())
    }

    fn target(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }
}

/// Probability with a ~99% error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvnEstimate {
    pub value: f64,
    pub error: f64,
    /// Set when the iteration cap was hit before the error target.
    pub low_confidence: bool,
}

impl MvnEstimate {
    fn exact(value: f64) -> Self {
        Self { value, error: 0.0, low_confidence: false }
    }
}

/// P(lower < X < upper).
pub fn box_probability(g: &GaussianVector, b: &BoxRegion, opts: &MvnOptions) -> Result<MvnEstimate> {
    opts.validate()?;
    if b.lower.len() != g.dim() {
        return Err(NadsError::DimensionMismatch(format!("box has {} coordinates, vector {}", b.lower.len(), g.dim())));
    }
    let s = g.std_devs();
    let a: Vec<f64> = (0..g.dim()).map(|i| (b.lower[i] - g.mean[i]) / s[i]).collect();
    let bb: Vec<f64> = (0..g.dim()).map(|i| (b.upper[i] - g.mean[i]) / s[i]).collect();
    Ok(standardized(&g.correlation(), &a, &bb, opts, opts.seed))
}

/// Default cap on the number of outside coordinates in inclusion–exclusion.
pub const OUTSIDE_CAP: usize = 20;

/// P(coordinates in `inside` fall in (lo, hi), all others outside it),
/// by inclusion–exclusion over subsets of the outside set.
pub fn pattern_probability(
    g: &GaussianVector,
    inside: &[usize],
    interval: (f64, f64),
    opts: &MvnOptions,
) -> Result<MvnEstimate> {
    pattern_probability_capped(g, inside, interval, opts, OUTSIDE_CAP)
}

pub fn pattern_probability_capped(
    g: &GaussianVector,
    inside: &[usize],
    interval: (f64, f64),
    opts: &MvnOptions,
    cap: usize,
) -> Result<MvnEstimate> {
    opts.validate()?;
    let m = g.dim();
    let mut is_inside = vec![false; m];
    for &i in inside {
        if i >= m {
            return Err(invalid("inside", format!("index {i} out of range for dimension {m}")));
        }
        is_inside[i] = true;
    }
    let outside: Vec<usize> = (0..m).filter(|&i| !is_inside[i]).collect();
    if outside.len() > cap {
        return Err(NadsError::CapExceeded { needed: outside.len(), cap });
    }
    let problem = Standardized::new(g, interval);
    let base: Vec<usize> = (0..m).filter(|&i| is_inside[i]).collect();
    let masks: Vec<u64> = (0..1u64 << outside.len()).collect();
    let terms: Vec<(f64, MvnEstimate)> = masks
        .par_iter()
        .map(|&mask| {
            let mut coords = base.clone();
            coords.extend(outside.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, &i)| i));
            coords.sort_unstable();
            let sign = if mask.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            (sign, problem.sub_box(&coords, opts, mix(opts.seed, mask)))
        })
        .collect();
    let value: f64 = terms.iter().map(|(s, e)| s * e.value).sum();
    let error: f64 = terms.iter().map(|(_, e)| e.error).sum();
    let low = terms.iter().any(|(_, e)| e.low_confidence);
    Ok(MvnEstimate { value: value.clamp(0.0, 1.0), error, low_confidence: low })
}

/// Distribution of the number of coordinates outside (lo, hi).
#[derive(Debug, Clone, PartialEq)]
pub struct OutsideCounts {
    /// `probs[l]` = P(exactly l coordinates outside).
    pub probs: Vec<f64>,
    /// Accumulated error bound per entry.
    pub errors: Vec<f64>,
    pub low_confidence: bool,
}

/// All M + 1 exactly-l probabilities from the 2^M marginal boxes B(T):
/// P(exactly k inside) = Σ_{|T| ≥ k} (−1)^{|T|−k} C(|T|, k) B(T).
pub fn outside_count_distribution(
    g: &GaussianVector,
    interval: (f64, f64),
    opts: &MvnOptions,
    cap: usize,
) -> Result<OutsideCounts> {
    opts.validate()?;
    let m = g.dim();
    if m > cap {
        return Err(NadsError::CapExceeded { needed: m, cap });
    }
    let problem = Standardized::new(g, interval);

    // Identical sub-problems (same limits and same correlation block) share
    // one integration; with Toeplitz correlation this folds translates.
    let mut unique: Vec<(u64, Vec<usize>)> = Vec::new();
    let mut slot_of_mask = vec![0usize; 1 << m];
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    for mask in 0..1u64 << m {
        let coords: Vec<usize> = (0..m).filter(|&i| mask >> i & 1 == 1).collect();
        let key = problem.key(&coords);
        let slot = *seen.entry(key).or_insert_with(|| {
            unique.push((mask, coords));
            unique.len() - 1
        });
        slot_of_mask[mask as usize] = slot;
    }
    let boxes: Vec<MvnEstimate> = unique
        .par_iter()
        .map(|(mask, coords)| problem.sub_box(coords, opts, mix(opts.seed, *mask)))
        .collect();

    let binom = binomial_table(m);
    let mut inside_probs = vec![0.0; m + 1];
    let mut inside_errs = vec![0.0; m + 1];
    for mask in 0..1usize << m {
        let t = mask.count_ones() as usize;
        let est = boxes[slot_of_mask[mask]];
        for k in 0..=t {
            let c = binom[t][k];
            let sign = if (t - k).is_multiple_of(2) { 1.0 } else { -1.0 };
            inside_probs[k] += sign * c * est.value;
            inside_errs[k] += c * est.error;
        }
    }
    let probs: Vec<f64> = (0..=m).map(|l| inside_probs[m - l]).collect();
    let errors: Vec<f64> = (0..=m).map(|l| inside_errs[m - l]).collect();
    Ok(OutsideCounts { probs, errors, low_confidence: boxes.iter().any(|e| e.low_confidence) })
}

/// Count law for a stationary unit-variance AR(1) chain
/// X_j − μ = r(X_{j−1} − μ) + √(1 − r²)·W_j, i.e. correlation r^{|i−j|}.
///
/// Forward recursion over the joint (x, count) density on composite
/// Gauss–Legendre panels that break at the interval ends. All terms are
/// positive, so tiny counts keep their relative accuracy. `errors` holds
/// the quadrature mass defect.
pub fn chain_outside_counts(m: usize, r: f64, mean: f64, (lo, hi): (f64, f64)) -> Result<OutsideCounts> {
    if m == 0 {
        return Err(invalid("m", "need at least one coordinate"));
    }
    if !(0.0..1.0).contains(&r) {
        return Err(invalid("base", format!("must lie in [0, 1), got {r}")));
    }
    if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
        return Err(invalid("interval", format!("need finite lo <= hi, got ({lo}, {hi})")));
    }
    let s = (1.0 - r * r).sqrt();
    let panel = 1.5 * s;
    let reach = 12.0;
    let rule = GaussLegendre::new(NonZeroUsize::new(16).unwrap());
    let mut x = Vec::new();
    let mut w = Vec::new();
    let mut out = Vec::new();
    // every X_j is marginally N(μ, 1), so μ ± 12 holds all the mass
    let (left, right) = (mean - reach, mean + reach);
    for (a, b, outside) in [
        (left, lo.min(right), true),
        (lo.max(left), hi.min(right), false),
        (hi.max(left), right, true),
    ] {
        if !(b > a) {
            continue;
        }
        let k = ((b - a) / panel).ceil() as usize;
        for p in 0..k {
            let (pa, pb) = (a + (b - a) * p as f64 / k as f64, a + (b - a) * (p + 1) as f64 / k as f64);
            for &(node, weight) in rule.as_node_weight_pairs() {
                x.push(0.5 * (pb - pa) * node + 0.5 * (pa + pb));
                w.push(0.5 * (pb - pa) * weight);
                out.push(outside);
            }
        }
    }
    let n = x.len();
    // kernel[b * n + a]: weighted transition density from node a to node b
    let mut kernel = vec![0.0; n * n];
    kernel.par_chunks_mut(n).enumerate().for_each(|(b, row)| {
        for a in 0..n {
            let c = mean + r * (x[a] - mean);
            row[a] = w[b] * normal::pdf((x[b] - c) / s) / s;
        }
    });
    // u[l][a] = mass at node a with l outside so far
    let mut u = vec![vec![0.0; n]; m + 1];
    for a in 0..n {
        u[out[a] as usize][a] = w[a] * normal::pdf(x[a] - mean);
    }
    for step in 1..m {
        let mut next = vec![vec![0.0; n]; m + 1];
        for l in 0..=step.min(m) {
            if u[l].iter().all(|&v| v == 0.0) {
                continue;
            }
            let moved: Vec<f64> = kernel
                .par_chunks(n)
                .map(|row| row.iter().zip(&u[l]).map(|(k, v)| k * v).sum())
                .collect();
            for b in 0..n {
                next[l + out[b] as usize][b] += moved[b];
            }
        }
        u = next;
    }
    let probs: Vec<f64> = u.iter().map(|v| v.iter().sum::<f64>()).collect();
    let defect = (1.0 - probs.iter().sum::<f64>()).abs();
    Ok(OutsideCounts { probs, errors: vec![defect; m + 1], low_confidence: false })
}

pub(crate) fn binomial_table(m: usize) -> Vec<Vec<f64>> {
    let mut t = vec![vec![0.0; m + 1]; m + 1];
    for n in 0..=m {
        t[n][0] = 1.0;
        for k in 1..=n {
            t[n][k] = t[n - 1][k - 1] + if k < n { t[n - 1][k] } else { 0.0 };
        }
    }
    t
}

/// A Gaussian vector and one interval shared by all coordinates, in
/// standardized form.
struct Standardized {
    corr: DMatrix<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Standardized {
    fn new(g: &GaussianVector, (lo, hi): (f64, f64)) -> Self {
        let s = g.std_devs();
        Self {
            corr: g.correlation(),
            a: (0..g.dim()).map(|i| (lo - g.mean[i]) / s[i]).collect(),
            b: (0..g.dim()).map(|i| (hi - g.mean[i]) / s[i]).collect(),
        }
    }

    fn key(&self, coords: &[usize]) -> Vec<u64> {
        let mut k = Vec::with_capacity(coords.len() * (coords.len() + 5) / 2);
        for (p, &i) in coords.iter().enumerate() {
            k.push(self.a[i].to_bits());
            k.push(self.b[i].to_bits());
            for &j in &coords[..p] {
                k.push(self.corr[(i, j)].to_bits());
            }
        }
        k
    }

    fn sub_box(&self, coords: &[usize], opts: &MvnOptions, seed: u64) -> MvnEstimate {
        let d = coords.len();
        let corr = DMatrix::from_fn(d, d, |i, j| self.corr[(coords[i], coords[j])]);
        let a: Vec<f64> = coords.iter().map(|&i| self.a[i]).collect();
        let b: Vec<f64> = coords.iter().map(|&i| self.b[i]).collect();
        standardized(&corr, &a, &b, opts, seed)
    }
}

/// Core integrator on a correlation matrix with standardized limits.
fn standardized(corr: &DMatrix<f64>, a: &[f64], b: &[f64], opts: &MvnOptions, seed: u64) -> MvnEstimate {
    // unconstrained coordinates integrate out
    let keep: Vec<usize> = (0..a.len())
        .filter(|&i| !(a[i] == f64::NEG_INFINITY && b[i] == f64::INFINITY))
        .collect();
    if keep.iter().any(|&i| !(a[i] < b[i])) {
        return MvnEstimate::exact(0.0);
    }
    let d = keep.len();
    if d == 0 {
        return MvnEstimate::exact(1.0);
    }
    let mut a: Vec<f64> = keep.iter().map(|&i| a[i]).collect();
    let mut b: Vec<f64> = keep.iter().map(|&i| b[i]).collect();
    let corr = DMatrix::from_fn(d, d, |i, j| corr[(keep[i], keep[j])]);

    let independent = (0..d).all(|i| (0..i).all(|j| corr[(i, j)] == 0.0));
    if independent {
        return MvnEstimate::exact((0..d).map(|i| normal::interval(a[i], b[i])).product());
    }

    let l = match prioritised_cholesky(corr, &mut a, &mut b) {
        Some(l) => l,
        None => return MvnEstimate { value: 0.0, error: 1.0, low_confidence: true },
    };
    let first = normal::interval(a[0] / l[0], b[0] / l[0]);
    if first == 0.0 {
        return MvnEstimate::exact(0.0);
    }
    let integrand = Conditioned { d, l, a, b };
    lattice_rule(&integrand, opts, seed)
}

/// Lower Cholesky factor (row-major) with Genz–Bretz variable ordering:
/// at each step the most constrained remaining variable goes next.
fn prioritised_cholesky(mut c: DMatrix<f64>, a: &mut [f64], b: &mut [f64]) -> Option<Vec<f64>> {
    let d = a.len();
    let mut l = DMatrix::<f64>::zeros(d, d);
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut best = i;
        let mut best_p = f64::INFINITY;
        for j in i..d {
            let s: f64 = (0..i).map(|k| l[(j, k)] * y[k]).sum();
            let v = c[(j, j)] - (0..i).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
            let sd = v.max(1e-300).sqrt();
            let p = normal::interval((a[j] - s) / sd, (b[j] - s) / sd);
            if p < best_p {
                best_p = p;
                best = j;
            }
        }
        if best != i {
            c.swap_rows(i, best);
            c.swap_columns(i, best);
            l.swap_rows(i, best);
            a.swap(i, best);
            b.swap(i, best);
        }
        let v = c[(i, i)] - (0..i).map(|k| l[(i, k)] * l[(i, k)]).sum::<f64>();
        if !(v > 1e-14) {
            return None;
        }
        let lii = v.sqrt();
        l[(i, i)] = lii;
        for j in i + 1..d {
            let s: f64 = (0..i).map(|k| l[(j, k)] * l[(i, k)]).sum();
            l[(j, i)] = (c[(j, i)] - s) / lii;
        }
        let s: f64 = (0..i).map(|k| l[(i, k)] * y[k]).sum();
        let (lo, hi) = ((a[i] - s) / lii, (b[i] - s) / lii);
        let p = normal::interval(lo, hi);
        y[i] = if p > 1e-300 {
            (normal::pdf(lo) - normal::pdf(hi)) / p
        } else if lo.is_finite() && hi.is_finite() {
            0.5 * (lo + hi)
        } else if lo.is_finite() {
            lo
        } else {
            hi
        };
    }
    Some((0..d * d).map(|idx| l[(idx / d, idx % d)]).collect())
}

struct Conditioned {
    d: usize,
    l: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Conditioned {
    /// Product of conditional interval probabilities along one sample path;
    /// `w` holds d − 1 uniforms.
    fn eval(&self, w: &[f64], y: &mut [f64]) -> f64 {
        let d = self.d;
        let mut f = 1.0;
        for i in 0..d {
            let row = &self.l[i * d..i * d + i + 1];
            let s: f64 = row[..i].iter().zip(&y[..i]).map(|(p, q)| p * q).sum();
            let lii = row[i];
            let (lo, hi) = ((self.a[i] - s) / lii, (self.b[i] - s) / lii);
            let e = normal::interval(lo, hi);
            f *= e;
            if f == 0.0 {
                return 0.0;
            }
            if i + 1 < d {
                // sample inside (lo, hi) from the tail that keeps precision
                y[i] = if lo > 0.0 {
                    let u = (normal::q(lo) - w[i] * e).max(f64::MIN_POSITIVE);
                    -normal::quantile(u)
                } else {
                    let u = (normal::cdf(lo) + w[i] * e).min(1.0 - f64::EPSILON / 2.0).max(f64::MIN_POSITIVE);
                    normal::quantile(u)
                };
                y[i] = y[i].clamp(lo, hi);
            }
        }
        f
    }
}

fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut n = 2u64;
    while out.len() < count {
        if out.iter().take_while(|&&p| p * p <= n).all(|&p| !n.is_multiple_of(p)) {
            out.push(n);
        }
        n += 1;
    }
    out
}

/// Randomly shifted Richtmyer lattice (generators √p mod 1) with the
/// baker's transform, repeated over independent shifts.
fn lattice_rule(f: &Conditioned, opts: &MvnOptions, seed: u64) -> MvnEstimate {
    let dims = f.d - 1;
    debug_assert!(dims > 0);
    let alpha: Vec<f64> = primes(dims).iter().map(|&p| (p as f64).sqrt().fract()).collect();
    let r = opts.randomizations;
    let t_crit = StudentsT::new(0.0, 1.0, (r - 1) as f64)
        .map(|t| t.inverse_cdf(0.995))
        .unwrap_or(3.5);
    let mut rng = substream(seed, 0);
    let shifts: Vec<Vec<f64>> = (0..r).map(|_| (0..dims).map(|_| rng.random::<f64>()).collect()).collect();

    let mut w = vec![0.0; dims];
    let mut y = vec![0.0; f.d];
    let mut n = opts.min_points;
    loop {
        let mut means = Vec::with_capacity(r);
        for shift in &shifts {
            let mut acc = 0.0;
            for k in 0..n {
                let kf = k as f64;
                for j in 0..dims {
                    let x = (kf * alpha[j] + shift[j]).fract();
                    w[j] = 1.0 - (2.0 * x - 1.0).abs();
                }
                acc += f.eval(&w, &mut y);
            }
            means.push(acc / n as f64);
        }
        let mean = means.iter().sum::<f64>() / r as f64;
        let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / ((r - 1) * r) as f64;
        let error = t_crit * var.sqrt();
        let done = error <= opts.target(mean);
        if done || n * 2 > opts.max_points {
            return MvnEstimate { value: mean.clamp(0.0, 1.0), error, low_confidence: !done };
        }
        n *= 2;
    }
}
