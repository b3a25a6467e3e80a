//! Temporal and spatial correlation of the channel noise.
//!
//! The full noise covariance is σ²(Ω^SC ⊗ Ω^T): SNM j's observation i
//! correlates with SNM l's observation t by ω^SC_jl · ω^T_it.

use crate::error::{invalid, NadsError, Result};
use crate::streams::substream;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Lag-limited stationary correlation of the n observations one SNM takes.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalCorrelation {
    n: usize,
    rho_profile: Vec<f64>,
}

impl TemporalCorrelation {
    /// `rho_profile[k]` is the lag-(k+1) coefficient; its length is p − 1.
    pub fn new(n: usize, rho_profile: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "need at least one observation"));
        }
        if rho_profile.len() > n - 1 {
            return Err(invalid(
                "rho_profile",
                format!("span p = {} exceeds n = {n}", rho_profile.len() + 1),
            ));
        }
        if let Some(r) = rho_profile.iter().find(|r| !r.is_finite() || r.abs() > 1.0) {
            return Err(invalid("rho_profile", format!("coefficient {r} is outside [-1, 1]")));
        }
        let spec = Self { n, rho_profile };
        build_temporal(&spec)?;
        Ok(spec)
    }

    /// Span-2 correlation with a single lag-one coefficient (span 1 when n = 1).
    pub fn lag_one(n: usize, rho: f64) -> Result<Self> {
        if n <= 1 {
            return Self::new(n, vec![]);
        }
        Self::new(n, vec![rho])
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn span(&self) -> usize {
        self.rho_profile.len() + 1
    }
    pub fn rho_profile(&self) -> &[f64] {
        &self.rho_profile
    }
}

/// Banded symmetric Toeplitz Ω^T with unit diagonal.
pub fn build_temporal(spec: &TemporalCorrelation) -> Result<DMatrix<f64>> {
    let n = spec.n;
    let omega = DMatrix::from_fn(n, n, |i, j| {
        let lag = i.abs_diff(j);
        match lag {
            0 => 1.0,
            l if l <= spec.rho_profile.len() => spec.rho_profile[l - 1],
            _ => 0.0,
        }
    });
    cholesky(&omega, "temporal correlation")?;
    Ok(omega)
}

/// Lower Cholesky factor; on failure names the first leading minor that is
/// not positive (1-based).
pub fn cholesky(a: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(NadsError::DimensionMismatch(format!("{what} is {}x{}", n, a.ncols())));
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        // relative floor: a pivot this small means the minor is numerically singular
        if !(d > 1e-12 * a[(j, j)].abs().max(f64::MIN_POSITIVE)) {
            return Err(NadsError::NotPositiveDefinite { what, minor: j + 1 });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Correlation of the noise across the M sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCorrelation {
    omega: DMatrix<f64>,
    base: Option<f64>,
}

impl SpatialCorrelation {
    /// ω_jl = base^{|j−l|}.
    pub fn geometric(m: usize, base: f64) -> Result<Self> {
        if m == 0 {
            return Err(invalid("m", "need at least one SNM"));
        }
        if !(0.0..1.0).contains(&base) {
            return Err(invalid("base", format!("must lie in [0, 1), got {base}")));
        }
        let omega = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                1.0
            } else {
                base.powi(i.abs_diff(j) as i32)
            }
        });
        let mut out = Self::explicit(omega)?;
        out.base = Some(base);
        Ok(out)
    }

    pub fn independent(m: usize) -> Result<Self> {
        Self::geometric(m, 0.0)
    }

    pub fn explicit(omega: DMatrix<f64>) -> Result<Self> {
        let m = omega.nrows();
        if m == 0 || omega.ncols() != m {
            return Err(NadsError::DimensionMismatch(format!(
                "spatial matrix must be square and non-empty, got {}x{}",
                m,
                omega.ncols()
            )));
        }
        for i in 0..m {
            if omega[(i, i)] != 1.0 {
                return Err(invalid("omega_sc", format!("diagonal entry {} is {}, not 1", i + 1, omega[(i, i)])));
            }
            for j in 0..i {
                if omega[(i, j)] != omega[(j, i)] {
                    return Err(invalid("omega_sc", format!("not symmetric at ({}, {})", i + 1, j + 1)));
                }
            }
        }
        cholesky(&omega, "spatial correlation")?;
        Ok(Self { omega, base: None })
    }

    pub fn m(&self) -> usize {
        self.omega.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.omega
    }

    /// Set when built by [`SpatialCorrelation::geometric`]; the sensors then
    /// form a stationary AR(1) chain.
    pub fn geometric_base(&self) -> Option<f64> {
        self.base
    }

    pub fn is_diagonal(&self) -> bool {
        let m = self.m();
        (0..m).all(|i| (0..m).all(|j| i == j || self.omega[(i, j)] == 0.0))
    }

    /// s = 1ᵀ(Ω^SC)⁻¹1, the effective number of independent sensors.
    pub fn effective_count(&self) -> Result<f64> {
        let psi = precision(&self.omega)?;
        Ok(psi.sum())
    }
}

/// Ψ = Ω⁻¹, checked by multiplying back.
pub fn precision(omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = omega.nrows();
    let l = cholesky(omega, "correlation matrix").map_err(|e| match e {
        NadsError::NotPositiveDefinite { minor, .. } => {
            NadsError::DegeneratePrecision(format!("matrix is singular or indefinite at leading minor {minor}"))
        }
        other => other,
    })?;
    // Ψ = L⁻ᵀL⁻¹
    let l_inv = l
        .solve_lower_triangular(&DMatrix::<f64>::identity(n, n))
        .ok_or_else(|| NadsError::DegeneratePrecision("triangular solve failed".into()))?;
    let mut psi = l_inv.transpose() * l_inv;
    // enforce exact symmetry
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (psi[(i, j)] + psi[(j, i)]);
            psi[(i, j)] = v;
            psi[(j, i)] = v;
        }
    }
    let residual = (omega * &psi - DMatrix::<f64>::identity(n, n)).amax();
    if !(residual < 1e-10) {
        return Err(NadsError::DegeneratePrecision(format!("inverse residual {residual:e} exceeds 1e-10")));
    }
    Ok(psi)
}

/// Estimator weights w_l = Σ_i ψ_il / Σ_{i,l} ψ_il.
pub fn estimator_weights(psi: &DMatrix<f64>) -> Result<DVector<f64>> {
    let total = psi.sum();
    if total == 0.0 || !total.is_finite() {
        return Err(NadsError::DegeneratePrecision(format!("sum of precision entries is {total}")));
    }
    Ok(DVector::from_iterator(psi.ncols(), psi.column_iter().map(|c| c.sum() / total)))
}

/// Standard deviation of the weighted estimate: σ_NCC·sqrt(wᵀΩw).
pub fn sigma_d(psi: &DMatrix<f64>, omega_t: &DMatrix<f64>, sigma_ncc: f64) -> Result<f64> {
    if psi.shape() != omega_t.shape() {
        return Err(NadsError::DimensionMismatch(format!(
            "precision is {:?} but correlation is {:?}",
            psi.shape(),
            omega_t.shape()
        )));
    }
    let w = estimator_weights(psi)?;
    let quad = (omega_t * &w).dot(&w);
    Ok(sigma_ncc * quad.max(0.0).sqrt())
}

/// Separable space-time noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub temporal: TemporalCorrelation,
    pub spatial: SpatialCorrelation,
    pub sigma_ncc: f64,
}

impl NoiseModel {
    pub fn new(temporal: TemporalCorrelation, spatial: SpatialCorrelation, sigma_ncc: f64) -> Result<Self> {
        if !(sigma_ncc >= 0.0 && sigma_ncc.is_finite()) {
            return Err(invalid("sigma_ncc", format!("must be finite and >= 0, got {sigma_ncc}")));
        }
        Ok(Self { temporal, spatial, sigma_ncc })
    }

    pub fn sampler(&self) -> Result<NoiseSampler> {
        NoiseSampler::new(self)
    }
}

/// Draws ε = σ·L_S·Z·L_Tᵀ for Z an M×n block of i.i.d. standard normals.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    m: usize,
    n: usize,
    sigma: f64,
    // row-major lower factors
    l_s: Vec<f64>,
    l_t: Vec<f64>,
    z: Vec<f64>,
    w: Vec<f64>,
}

impl NoiseSampler {
    pub fn new(model: &NoiseModel) -> Result<Self> {
        let omega_t = build_temporal(&model.temporal)?;
        let l_t = cholesky(&omega_t, "temporal correlation")?;
        let l_s = cholesky(model.spatial.matrix(), "spatial correlation")?;
        let (m, n) = (l_s.nrows(), l_t.nrows());
        let row_major = |a: &DMatrix<f64>| -> Vec<f64> {
            let k = a.nrows();
            (0..k * k).map(|idx| a[(idx / k, idx % k)]).collect()
        };
        Ok(Self {
            m,
            n,
            sigma: model.sigma_ncc,
            l_s: row_major(&l_s),
            l_t: row_major(&l_t),
            z: vec![0.0; m * n],
            w: vec![0.0; m * n],
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }
    pub fn n(&self) -> usize {
        self.n
    }

    /// Fills `out` (row-major M×n: sensor j, observation i) with one draw.
    pub fn fill<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut [f64]) {
        let (m, n) = (self.m, self.n);
        assert_eq!(out.len(), m * n, "noise buffer must hold M*n values");
        for v in self.z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        // W = Z L_Tᵀ
        for j in 0..m {
            let zrow = &self.z[j * n..(j + 1) * n];
            for i in 0..n {
                let lrow = &self.l_t[i * n..i * n + i + 1];
                self.w[j * n + i] = lrow.iter().zip(zrow).map(|(a, b)| a * b).sum();
            }
        }
        // ε = σ L_S W
        for j in 0..m {
            for i in 0..n {
                let mut s = 0.0;
                for k in 0..=j {
                    s += self.l_s[j * m + k] * self.w[k * n + i];
                }
                out[j * n + i] = self.sigma * s;
            }
        }
    }
}

const SAMPLE_BLOCK: usize = 4096;

/// `count` independent noise draws, flattened as count × M × n.
/// Block b of 4096 draws uses stream (seed, b), so the result does not
/// depend on the rayon pool size.
pub fn sample_noise(model: &NoiseModel, count: usize, seed: u64) -> Result<Vec<f64>> {
    let proto = model.sampler()?;
    let stride = proto.m * proto.n;
    let mut out = vec![0.0; count * stride];
    out.par_chunks_mut(SAMPLE_BLOCK * stride.max(1))
        .enumerate()
        .for_each(|(b, chunk)| {
            let mut sampler = proto.clone();
            let mut rng = substream(seed, b as u64);
            for draw in chunk.chunks_mut(stride.max(1)) {
                sampler.fill(&mut rng, draw);
            }
        });
    Ok(out)
}

/// Debug dump of a matrix as CSV.
pub fn matrix_to_csv(a: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for row in a.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}
