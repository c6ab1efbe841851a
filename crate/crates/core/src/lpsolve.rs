//! Interior-point LP solver in the style of Lee and Sidford: weighted path
//! following with regularized Lewis weights, approximate leverage scores via
//! a shared-bits Johnson–Lindenstrauss sketch, and a mixed-norm-ball
//! projection for the multiplicative weight updates.
//!
//! Two constant profiles exist. `Faithful` uses the exact numeric constants
//! of the source algorithms; these make desk-scale runs take astronomically
//! many iterations, so they are exercised only in unit-level formula checks.
//! `Practical` keeps every formula but replaces the large numeric prefactors
//! with small ones and uses exact leverage scores inside the iteration loop;
//! end-to-end runs use this profile and are validated against oracles.
//!
//! The JL matrix entries are `±1/√k` signs drawn from a hash family keyed by
//! the broadcast shared bits; any family that is a pure function of few
//! shared bits satisfies the contract, and the specific 4-wise-independent
//! construction is not prescribed here.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::netsim::{default_bandwidth, Network};

#[derive(Debug, Error)]
pub enum LpError {
    #[error("coordinate {i} is outside the barrier domain")]
    OutOfDomain { i: usize },
    #[error("insufficient shared bits: need {needed} bytes, got {got}")]
    InsufficientBits { needed: usize, got: usize },
    #[error("constraint matrix is rank deficient")]
    RankDeficient,
    #[error("initial weights violate the trust-region precondition: {gap:e} > {radius:e}")]
    BadInitialWeight { gap: f64, radius: f64 },
    #[error("Newton step left the domain at coordinate {i}")]
    LeftDomain { i: usize },
    #[error("infeasible instance: {reason}")]
    Infeasible { reason: String },
    #[error("projection objective is zero")]
    ZeroObjective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Faithful,
    Practical,
}

// ---------------------------------------------------------------------------
// Instance and barriers.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LPInstance {
    /// m×n constraint matrix with rank n; the program is
    /// `min c^T x  s.t.  A^T x = b,  l ≤ x ≤ u`.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
    pub x0: DVector<f64>,
}

impl LPInstance {
    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let m = self.m();
        for &(len, name) in &[
            (self.c.len(), "c"),
            (self.l.len(), "l"),
            (self.u.len(), "u"),
            (self.x0.len(), "x0"),
        ] {
            if len != m {
                return Err(LpError::Infeasible {
                    reason: format!("{name} has length {len}, expected {m}"),
                });
            }
        }
        if self.b.len() != self.n() {
            return Err(LpError::Infeasible {
                reason: "b has wrong length".into(),
            });
        }
        for i in 0..m {
            if self.l[i] == f64::NEG_INFINITY && self.u[i] == f64::INFINITY {
                return Err(LpError::Infeasible {
                    reason: format!("coordinate {i} is unbounded on both sides"),
                });
            }
            if !(self.l[i] < self.x0[i] && self.x0[i] < self.u[i]) {
                return Err(LpError::Infeasible {
                    reason: format!("x0[{i}] = {} not strictly inside [{}, {}]", self.x0[i], self.l[i], self.u[i]),
                });
            }
        }
        let residual = self.a.transpose() * &self.x0 - &self.b;
        if residual.norm() > 1e-12 * (self.b.norm() + 1.0) {
            return Err(LpError::Infeasible {
                reason: format!("A^T x0 - b has norm {:e}", residual.norm()),
            });
        }
        Ok(())
    }

    /// `U = max{‖1/(u-x0)‖∞, ‖1/(x0-l)‖∞, ‖u-l‖∞, ‖c‖∞}`.
    pub fn u_param(&self) -> f64 {
        let mut u = self.c.amax();
        for i in 0..self.m() {
            if self.u[i].is_finite() {
                u = u.max(1.0 / (self.u[i] - self.x0[i]));
            }
            if self.l[i].is_finite() {
                u = u.max(1.0 / (self.x0[i] - self.l[i]));
            }
            if self.u[i].is_finite() && self.l[i].is_finite() {
                u = u.max(self.u[i] - self.l[i]);
            }
        }
        u.max(1.0)
    }
}

#[derive(Debug, Clone)]
pub enum BarrierKind {
    /// `φ(x) = -log(x - l)`
    LogLower { l: f64 },
    /// `φ(x) = -log(u - x)`
    LogUpper { u: f64 },
    /// `φ(x) = -log cos(a x + b)` with `a = π/(u-l)`,
    /// `b = -(π/2)(u+l)/(u-l)`
    Trig { l: f64, u: f64, a: f64, b: f64 },
}

#[derive(Debug, Clone)]
pub struct BarrierSet {
    pub kinds: Vec<BarrierKind>,
}

impl BarrierSet {
    pub fn for_bounds(l: &DVector<f64>, u: &DVector<f64>) -> Self {
        let kinds = l
            .iter()
            .zip(u.iter())
            .map(|(&l, &u)| {
                if l.is_finite() && u.is_finite() {
                    let a = std::f64::consts::PI / (u - l);
                    let b = -std::f64::consts::FRAC_PI_2 * (u + l) / (u - l);
                    BarrierKind::Trig { l, u, a, b }
                } else if l.is_finite() {
                    BarrierKind::LogLower { l }
                } else {
                    BarrierKind::LogUpper { u }
                }
            })
            .collect();
        BarrierSet { kinds }
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.kinds.iter().zip(x.iter()).all(|(k, &xi)| match *k {
            BarrierKind::LogLower { l } => xi > l,
            BarrierKind::LogUpper { u } => xi < u,
            BarrierKind::Trig { l, u, .. } => l < xi && xi < u,
        })
    }
}

/// Coordinate-wise barrier values and first two derivatives; entirely
/// vertex-local.
pub fn barrier_eval(
    set: &BarrierSet,
    x: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>), LpError> {
    let m = set.kinds.len();
    let mut phi = DVector::zeros(m);
    let mut dphi = DVector::zeros(m);
    let mut ddphi = DVector::zeros(m);
    for i in 0..m {
        let xi = x[i];
        match set.kinds[i] {
            BarrierKind::LogLower { l } => {
                if xi <= l {
                    return Err(LpError::OutOfDomain { i });
                }
                phi[i] = -(xi - l).ln();
                dphi[i] = -1.0 / (xi - l);
                ddphi[i] = 1.0 / ((xi - l) * (xi - l));
            }
            BarrierKind::LogUpper { u } => {
                if xi >= u {
                    return Err(LpError::OutOfDomain { i });
                }
                phi[i] = -(u - xi).ln();
                dphi[i] = 1.0 / (u - xi);
                ddphi[i] = 1.0 / ((u - xi) * (u - xi));
            }
            BarrierKind::Trig { l, u, a, b } => {
                if xi <= l || xi >= u {
                    return Err(LpError::OutOfDomain { i });
                }
                // cos(ax+b) = sin(a(x-l)) = sin(a(u-x)); evaluating from the
                // nearer bound avoids the cancellation of cos near ±π/2 that
                // destroys all accuracy once a margin shrinks below ~1e-14
                let _ = b;
                let mlo = xi - l;
                let mhi = u - xi;
                let (near, sign) = if mlo <= mhi { (mlo, 1.0) } else { (mhi, -1.0) };
                let s = (a * near).sin();
                if s <= 0.0 {
                    return Err(LpError::OutOfDomain { i });
                }
                let c = sign * (a * near).cos();
                phi[i] = -s.ln();
                dphi[i] = -a * c / s;
                ddphi[i] = a * a / (s * s);
            }
        }
    }
    Ok((phi, dphi, ddphi))
}

// ---------------------------------------------------------------------------
// Constants and profiles.
// ---------------------------------------------------------------------------

/// Weight-function constants for the regularized Lewis weights:
/// `c1 ≤ (3/2)n`, `cs ≤ 4`, `ck ≤ 2 log(4m)`, `C_norm = 24 √cs ck`,
/// `p = 1 - 1/log(4m)`, `c0 = n/(2m)`.
#[derive(Debug, Clone, Copy)]
pub struct WeightConfig {
    pub c1: f64,
    pub cs: f64,
    pub ck: f64,
    pub c_norm: f64,
    pub p: f64,
    pub c0: f64,
}

impl WeightConfig {
    pub fn new(m: usize, n: usize) -> Self {
        let log4m = (4.0 * m.max(2) as f64).ln();
        let ck = 2.0 * log4m;
        let cs = 4.0;
        WeightConfig {
            c1: 1.5 * n as f64,
            cs,
            ck,
            c_norm: 24.0 * cs.sqrt() * ck,
            p: 1.0 - 1.0 / log4m,
            c0: n as f64 / (2.0 * m as f64),
        }
    }
}

/// All profile-dependent derived constants in one place.
#[derive(Debug, Clone, Copy)]
pub struct LpConstants {
    pub profile: Profile,
    pub m: usize,
    pub n: usize,
    pub cfg: WeightConfig,
    /// centering trust parameter R
    pub big_r: f64,
    /// t multiplier step
    pub alpha: f64,
}

impl LpConstants {
    pub fn new(profile: Profile, m: usize, n: usize) -> Self {
        let cfg = WeightConfig::new(m, n);
        let logm = (m.max(2) as f64).ln();
        let inner = (36.0 * cfg.c1 * cfg.cs * cfg.ck * m as f64).ln();
        let (big_r, alpha) = match profile {
            Profile::Faithful => {
                let r = 1.0 / (768.0 * cfg.ck * cfg.ck * inner);
                (r, r / (1600.0 * (n as f64).sqrt() * logm * logm))
            }
            Profile::Practical => (0.1, 0.5 / (n as f64).sqrt()),
        };
        LpConstants {
            profile,
            m,
            n,
            cfg,
            big_r,
            alpha,
        }
    }

    /// Iteration count of ComputeApxWeights:
    /// `T = ⌈80(p/2 + 2/p) log(pn/(32η))⌉` with the prefactor shrunk in the
    /// practical profile.
    pub fn apx_weight_iterations(&self, p: f64, eta: f64) -> usize {
        let base = (p / 2.0 + 2.0 / p) * (p * self.n as f64 / (32.0 * eta)).ln().max(1.0);
        match self.profile {
            Profile::Faithful => (80.0 * base).ceil() as usize,
            Profile::Practical => ((2.0 * base).ceil() as usize).clamp(2, 30),
        }
    }

    /// Trust radius `r = p²(4-p)/2²⁰`.
    pub fn trust_radius(&self, p: f64) -> f64 {
        match self.profile {
            Profile::Faithful => p * p * (4.0 - p) / (1 << 20) as f64,
            Profile::Practical => 0.5,
        }
    }

    /// Leverage-score precision `δ = (4-p)η/256` inside ComputeApxWeights.
    pub fn leverage_delta(&self, p: f64, eta: f64) -> f64 {
        match self.profile {
            Profile::Faithful => (4.0 - p) * eta / 256.0,
            Profile::Practical => (eta / 4.0).min(0.25),
        }
    }

    /// Homotopy step `h = min{2,p}/(√n log(me²/n)) · r` of
    /// ComputeInitialWeights.
    pub fn homotopy_step(&self, p: f64) -> f64 {
        let denom = (self.n as f64).sqrt()
            * (self.m as f64 * std::f64::consts::E.powi(2) / self.n as f64).ln();
        p.min(2.0) / denom * self.trust_radius(p)
    }

    /// `t₁ = (2²⁷ m^{3/2} U² log⁴ m)⁻¹` and the phase precisions
    /// `η₁ = 1/(2¹⁸ log³ m)`, `η₂ = ε/(8U²)`, `t₂ = 2m/η₂`.
    pub fn schedule(&self, eps: f64, u: f64) -> (f64, f64, f64, f64) {
        let m = self.m as f64;
        let logm = m.max(2.0).ln();
        let (t1, eta1) = match self.profile {
            Profile::Faithful => (
                1.0 / ((1u64 << 27) as f64 * m.powf(1.5) * u * u * logm.powi(4)),
                1.0 / ((1u64 << 18) as f64 * logm.powi(3)),
            ),
            Profile::Practical => (1.0 / (10.0 * m.powf(1.5) * u * u), 0.1),
        };
        let eta2 = eps / (8.0 * u * u);
        // the total weight is at most c1 + m c0 ≤ 2m, so the duality gap at
        // t is about 2m/t; the practical profile stops once the gap bound
        // clears ε instead of paying for the faithful 2m/η₂ overshoot
        let t2 = match self.profile {
            Profile::Faithful => 2.0 * m / eta2,
            Profile::Practical => 8.0 * m / eps,
        };
        (t1, eta1, t2, eta2)
    }

    pub fn initial_weight_eta(&self) -> f64 {
        let logm = (self.m.max(2) as f64).ln();
        match self.profile {
            Profile::Faithful => 1.0 / ((1u64 << 16) as f64 * logm.powi(3)),
            Profile::Practical => 0.1,
        }
    }

    /// Extra centering passes at `t_end`: `4 ck log(1/η)`.
    pub fn final_centering_count(&self, eta: f64) -> usize {
        let base = (1.0 / eta).ln().max(1.0);
        match self.profile {
            Profile::Faithful => (4.0 * self.cfg.ck * base).ceil() as usize,
            Profile::Practical => ((2.0 * base).ceil() as usize).clamp(2, 40),
        }
    }
}

// ---------------------------------------------------------------------------
// JL sketch from shared bits.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct JLSketch {
    pub k: usize,
    pub m: usize,
    keys: [u64; 4],
}

/// Bytes of shared randomness expected for an m-column sketch:
/// `4⌈log₂ m⌉²` bits.
pub fn jl_shared_bits_len(m: usize) -> usize {
    let lg = (usize::BITS - m.max(2).leading_zeros()) as usize;
    (4 * lg * lg).div_ceil(8)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl JLSketch {
    /// Entry `(j, i)` of `Q`, equal to `±1/√k`; a pure function of the
    /// shared bits.
    pub fn entry(&self, j: usize, i: usize) -> f64 {
        let mut h = self.keys[(j ^ i) & 3];
        h = splitmix(h ^ (j as u64).wrapping_mul(0x9e3779b97f4a7c15));
        h = splitmix(h ^ (i as u64).wrapping_mul(0xc2b2ae3d27d4eb4f));
        let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
        sign / (self.k as f64).sqrt()
    }

    /// Row `j` of `Q` as a dense vector.
    pub fn row(&self, j: usize) -> DVector<f64> {
        DVector::from_fn(self.m, |i, _| self.entry(j, i))
    }
}

pub fn jl_sketch_build(
    m: usize,
    eta: f64,
    delta: f64,
    shared_bits: &[u8],
) -> Result<JLSketch, LpError> {
    assert!(eta > 0.0 && delta > 0.0 && delta < 0.5);
    let needed = jl_shared_bits_len(m);
    if shared_bits.len() < needed {
        return Err(LpError::InsufficientBits {
            needed,
            got: shared_bits.len(),
        });
    }
    let k = ((8.0 * (1.0 / delta).ln() / (eta * eta)).ceil() as usize).max(1);
    let mut keys = [0xcbf29ce484222325u64; 4];
    for (idx, &byte) in shared_bits.iter().enumerate() {
        let slot = idx & 3;
        keys[slot] = splitmix(keys[slot] ^ ((byte as u64) << ((idx % 8) * 8)));
    }
    Ok(JLSketch { k, m, keys })
}

/// Deterministic shared bits as a leader would broadcast them: a pure
/// function of the seed.
pub fn leader_shared_bits(m: usize, seed: u64) -> Vec<u8> {
    let len = jl_shared_bits_len(m);
    let mut out = Vec::with_capacity(len);
    let mut state = splitmix(seed ^ 0x5851f42d4c957f2d);
    for _ in 0..len {
        state = splitmix(state);
        out.push((state & 0xff) as u8);
    }
    out
}

// ---------------------------------------------------------------------------
// Leverage scores and Lewis weights.
// ---------------------------------------------------------------------------

/// Thin orthonormal basis of the column space via Householder QR;
/// rank-deficiency is detected on the diagonal of `R`. QR keeps the
/// projection stable even when rows are scaled across many orders of
/// magnitude, which the Lewis-weight iteration does for `p < 2`.
fn thin_q(m_mat: &DMatrix<f64>) -> Result<DMatrix<f64>, LpError> {
    // leverage scores depend only on the column space, which is invariant
    // under column scaling; normalizing first keeps the QR well conditioned
    // when row scaling makes column norms wildly uneven
    let mut scaled = m_mat.clone();
    for j in 0..scaled.ncols() {
        let norm = scaled.column(j).norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(LpError::RankDeficient);
        }
        scaled.column_mut(j).scale_mut(1.0 / norm);
    }
    let qr = scaled.clone().qr();
    let r = qr.r();
    let diag_max = (0..r.nrows()).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if diag_max > 0.0
        && (0..r.nrows()).all(|i| r[(i, i)].abs() >= 1e-13 * diag_max)
    {
        return Ok(qr.q());
    }
    // near-parallel columns: fall back to a rank-revealing SVD basis
    let svd = scaled.svd(true, false);
    let u = svd.u.ok_or(LpError::RankDeficient)?;
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return Err(LpError::RankDeficient);
    }
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&j| svd.singular_values[j] > 1e-12 * smax)
        .collect();
    let mut basis = DMatrix::zeros(u.nrows(), keep.len());
    for (out_j, &j) in keep.iter().enumerate() {
        basis.set_column(out_j, &u.column(j));
    }
    Ok(basis)
}

/// Exact leverage scores `σ(M) = diag(M (M^T M)^{-1} M^T)`; the dense
/// oracle, also used directly by the practical profile.
pub fn leverage_scores_exact(m_mat: &DMatrix<f64>) -> Result<DVector<f64>, LpError> {
    let q = thin_q(m_mat)?;
    Ok(DVector::from_fn(m_mat.nrows(), |i, _| {
        q.row(i).norm_squared()
    }))
}

/// Sketched leverage scores:
/// `σ_apx = Σ_j (M (M^T M)^{-1} M^T Q^{(j)})²` with the sketch built at
/// internal precision `η/4`.
pub fn compute_leverage_scores(
    m_mat: &DMatrix<f64>,
    eta: f64,
    delta: f64,
    shared_bits: &[u8],
) -> Result<DVector<f64>, LpError> {
    let m = m_mat.nrows();
    let sketch = jl_sketch_build(m, eta / 4.0, delta, shared_bits)?;
    let q_basis = thin_q(m_mat)?;
    let mut sigma = DVector::zeros(m);
    for j in 0..sketch.k {
        let q = sketch.row(j);
        let coeffs = q_basis.transpose() * &q;
        let p = &q_basis * coeffs;
        for i in 0..m {
            sigma[i] += p[i] * p[i];
        }
    }
    Ok(sigma)
}

/// Exact `ℓ_p` Lewis weights by fixed-point iteration
/// `w ← σ(W^{1/2 - 1/p} M)`; the reference oracle.
pub fn lewis_weights_fixed_point(m_mat: &DMatrix<f64>, p: f64) -> Result<DVector<f64>, LpError> {
    let m = m_mat.nrows();
    let mut w = leverage_scores_exact(m_mat)?;
    for i in 0..m {
        w[i] = w[i].max(1e-12);
    }
    for _ in 0..100_000 {
        let exponent = 0.5 - 1.0 / p;
        let scaled = DMatrix::from_fn(m, m_mat.ncols(), |i, j| {
            w[i].max(1e-30).powf(exponent) * m_mat[(i, j)]
        });
        let sigma = leverage_scores_exact(&scaled)?;
        // damped update w ← σ^{p/2} w^{1-p/2}: same fixed point as w = σ,
        // but a contraction for 0 < p < 4
        let mut diff = 0.0f64;
        let mut next = DVector::zeros(m);
        for i in 0..m {
            next[i] = sigma[i].powf(p / 2.0) * w[i].powf(1.0 - p / 2.0);
            diff = diff.max((next[i] - w[i]).abs() / w[i].max(1e-300));
        }
        w = next.map(|v: f64| v.max(1e-300));
        if diff < 1e-13 {
            break;
        }
    }
    Ok(w)
}

fn three_way_median(a: f64, b: f64, c: f64) -> f64 {
    a.max(b).min(a.max(c)).min(b.max(c))
}

/// Backend for leverage-score queries inside the weight computations.
pub enum LeverageBackend<'a> {
    Exact,
    Sketched { shared_bits: &'a [u8], delta: f64 },
}

impl LeverageBackend<'_> {
    fn scores(&self, m_mat: &DMatrix<f64>, eta: f64) -> Result<DVector<f64>, LpError> {
        match self {
            LeverageBackend::Exact => leverage_scores_exact(m_mat),
            LeverageBackend::Sketched { shared_bits, delta } => {
                compute_leverage_scores(m_mat, eta, *delta, shared_bits)
            }
        }
    }
}

/// ComputeApxWeights: `T` clamped fixed-point iterations with a three-way
/// median against the `(1 ± r) w⁰` trust box.
pub fn compute_apx_weights(
    m_mat: &DMatrix<f64>,
    p: f64,
    w0: &DVector<f64>,
    eta: f64,
    consts: &LpConstants,
    backend: &LeverageBackend,
) -> Result<DVector<f64>, LpError> {
    let m = m_mat.nrows();
    let l_step = 4.0f64.max(8.0 / p);
    let r = consts.trust_radius(p);
    let delta = consts.leverage_delta(p, eta);
    let t_iters = consts.apx_weight_iterations(p, eta);
    let mut w = w0.clone();
    for _ in 0..t_iters.saturating_sub(1) {
        let exponent = 0.5 - 1.0 / p;
        let scaled = DMatrix::from_fn(m, m_mat.ncols(), |i, j| {
            w[i].max(1e-30).powf(exponent) * m_mat[(i, j)]
        });
        let sigma = backend.scores(&scaled, delta / 2.0)?;
        let mut next = DVector::zeros(m);
        for i in 0..m {
            let step = w[i] - (w0[i] - w0[i] / w[i].max(1e-300) * sigma[i]) / l_step;
            next[i] = three_way_median((1.0 - r) * w0[i], step, (1.0 + r) * w0[i]);
        }
        w = next;
    }
    Ok(w)
}

/// ComputeInitialWeights: homotopy in `p` from 2 down to `p_target`.
///
/// The published pseudocode starts from `w = 12 c_k 𝟙`, which the trust-box
/// median can never move toward the Lewis weights; we start from the `p = 2`
/// Lewis weights (the leverage scores) instead, which is the fixed point the
/// first homotopy step expects.
pub fn compute_initial_weights(
    m_mat: &DMatrix<f64>,
    p_target: f64,
    eta: f64,
    consts: &LpConstants,
    backend: &LeverageBackend,
) -> Result<DVector<f64>, LpError> {
    let mut p = 2.0f64;
    let mut w = backend
        .scores(m_mat, consts.leverage_delta(p, eta))?
        .map(|v| v.max(1e-12));
    let mut guard = 0usize;
    while p != p_target {
        let h = consts.homotopy_step(p);
        let p_new = three_way_median(p - h, p_target, p + h);
        let w_start = DVector::from_fn(w.len(), |i, _| w[i].powf(p_new / p));
        let step_eta = p * p * (4.0 - p) / (1u64 << 22) as f64;
        let step_eta = match consts.profile {
            Profile::Faithful => step_eta,
            Profile::Practical => step_eta.max(0.05),
        };
        w = compute_apx_weights(m_mat, p_new, &w_start, step_eta, consts, backend)?;
        p = p_new;
        guard += 1;
        if guard > 5_000_000 {
            break;
        }
    }
    w = compute_apx_weights(m_mat, p_target, &w, eta, consts, backend)?;
    if consts.profile == Profile::Practical {
        // the short practical iteration count leaves the trust box anchored
        // one step behind the fixed point; re-anchoring it a few times
        // closes the remaining gap at negligible cost (this runs once per
        // LP solve, not per centering step)
        for _ in 0..5 {
            w = compute_apx_weights(m_mat, p_target, &w, eta, consts, backend)?;
        }
    }
    Ok(w)
}

// ---------------------------------------------------------------------------
// Mixed-norm-ball projection.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MixedBallResult {
    pub x: DVector<f64>,
    pub value: f64,
    /// Threshold probes performed by the index search; each probe stands for
    /// one round of prefix-sum broadcasts.
    pub probes: usize,
}

/// Value of `g_i(t)` for a clamp prefix with sums
/// `P = Σ|a_k| l_k`, `L = Σ l_k²`, `Q = ‖a‖² - Σ a_k²`.
fn g_value(t: f64, p_sum: f64, l_sum: f64, q_sum: f64) -> f64 {
    let slack = (1.0 - t) * (1.0 - t) - t * t * l_sum;
    if slack < 0.0 {
        return f64::NEG_INFINITY;
    }
    t * p_sum + slack.sqrt() * q_sum.max(0.0).sqrt()
}

/// `max_t g_i(t)` by ternary search over the feasible interval; `g` is
/// concave in `t`. `ratio` is `|a_j|/l_j` of the first unclamped
/// coordinate: values of `t` where the unscaled solution would exceed the
/// clamp there are infeasible for this prefix, which lower-bounds `t`.
fn maximize_over_t(p_sum: f64, l_sum: f64, q_sum: f64, ratio: f64) -> (f64, f64) {
    let t_hi = 1.0 / (1.0 + l_sum.sqrt());
    // feasibility: ratio²((1-t)² - t² L) ≤ t² Q, LHS-RHS strictly
    // decreasing in t on [0, t_hi]
    let infeas = |t: f64| ratio * ratio * ((1.0 - t) * (1.0 - t) - t * t * l_sum) - t * t * q_sum;
    let t_lo = if ratio <= 0.0 || infeas(0.0) <= 0.0 {
        0.0
    } else if infeas(t_hi) > 1e-18 {
        return (t_hi, f64::NEG_INFINITY);
    } else {
        let (mut a, mut b) = (0.0f64, t_hi);
        for _ in 0..100 {
            let mid = 0.5 * (a + b);
            if infeas(mid) > 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        b
    };
    let (mut lo, mut hi) = (t_lo, t_hi);
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if g_value(m1, p_sum, l_sum, q_sum) < g_value(m2, p_sum, l_sum, q_sum) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let t = 0.5 * (lo + hi);
    (t, g_value(t, p_sum, l_sum, q_sum))
}

/// `argmax { a^T x : ‖x‖₂ + ‖l⁻¹ x‖∞ ≤ 1 }`.
///
/// Coordinates are ranked by `|a_i|/l_i` decreasing; the best clamp count is
/// found by searching the unimodal per-prefix optimum, each evaluation
/// costing one prefix-sum probe.
pub fn project_mixed_ball(a: &DVector<f64>, l: &DVector<f64>) -> Result<MixedBallResult, LpError> {
    let m = a.len();
    assert_eq!(l.len(), m);
    assert!(l.iter().all(|&v| v > 0.0), "l must be positive");
    if a.norm() == 0.0 {
        return Err(LpError::ZeroObjective);
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| {
        (a[j].abs() / l[j])
            .partial_cmp(&(a[i].abs() / l[i]))
            .expect("finite ratios")
    });
    // prefix sums over the sorted order; index i = number of clamped coords
    let mut p_pref = vec![0.0; m + 1];
    let mut l_pref = vec![0.0; m + 1];
    let mut a_pref = vec![0.0; m + 1];
    for (rank, &idx) in order.iter().enumerate() {
        p_pref[rank + 1] = p_pref[rank] + a[idx].abs() * l[idx];
        l_pref[rank + 1] = l_pref[rank] + l[idx] * l[idx];
        a_pref[rank + 1] = a_pref[rank] + a[idx] * a[idx];
    }
    let a_norm2 = a.norm_squared();
    let mut probes = 0usize;
    let ratio_at = |i: usize| -> f64 {
        if i < m {
            let idx = order[i];
            a[idx].abs() / l[idx]
        } else {
            0.0
        }
    };
    let mut eval = |i: usize| -> (f64, f64) {
        probes += 1;
        maximize_over_t(p_pref[i], l_pref[i], a_norm2 - a_pref[i], ratio_at(i))
    };
    // binary search for the peak of the unimodal value sequence
    let (mut lo, mut hi) = (0usize, m);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        let (_, v_mid) = eval(mid);
        let (_, v_next) = eval(mid + 1);
        if v_mid < v_next {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    let (t_lo, v_lo) = eval(lo);
    let (t_hi, v_hi) = eval(hi);
    let (best_i, best_t, value) = if v_lo >= v_hi {
        (lo, t_lo, v_lo)
    } else {
        (hi, t_hi, v_hi)
    };
    assert!(probes <= 64, "probe budget exceeded: {probes}");

    let mut x = DVector::zeros(m);
    let slack = ((1.0 - best_t) * (1.0 - best_t) - best_t * best_t * l_pref[best_i]).max(0.0);
    let q_sum = (a_norm2 - a_pref[best_i]).max(0.0);
    let scale = if q_sum > 0.0 {
        (slack / q_sum).sqrt()
    } else {
        0.0
    };
    for (rank, &idx) in order.iter().enumerate() {
        if rank < best_i {
            x[idx] = best_t * a[idx].signum() * l[idx];
        } else {
            x[idx] = scale * a[idx];
        }
    }
    Ok(MixedBallResult { x, value, probes })
}

/// Brute-force oracle: grid over `t`, exact box-plus-ball inner solve per
/// grid point.
pub fn project_mixed_ball_grid_oracle(
    a: &DVector<f64>,
    l: &DVector<f64>,
    grid: usize,
) -> (DVector<f64>, f64) {
    let m = a.len();
    let mut best = (DVector::zeros(m), 0.0f64);
    for step in 0..=grid {
        let t = step as f64 / grid as f64;
        // max a^T x s.t. ‖x‖₂ ≤ 1-t, |x_i| ≤ t l_i: clamp against a scaled
        // copy of a, binary search on the scale
        let mut lo = 0.0f64;
        let mut hi = 1e12;
        for _ in 0..200 {
            let mu = 0.5 * (lo + hi);
            let norm2: f64 = (0..m)
                .map(|i| (mu * a[i].abs()).min(t * l[i]).powi(2))
                .sum();
            if norm2 < (1.0 - t) * (1.0 - t) {
                lo = mu;
            } else {
                hi = mu;
            }
        }
        let mu = lo;
        let x = DVector::from_fn(m, |i, _| a[i].signum() * (mu * a[i].abs()).min(t * l[i]));
        let val = a.dot(&x);
        if val > best.1 {
            best = (x, val);
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Centering, path following, LPSolve.
// ---------------------------------------------------------------------------

/// Pluggable inner solver for `(A^T D A) s = rhs` with positive diagonal
/// `D`; `rounds_per_solve` feeds the ledger.
pub trait InnerSolver {
    fn solve(&self, a: &DMatrix<f64>, d: &DVector<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, LpError>;
    fn rounds_per_solve(&self) -> u64 {
        1
    }
}

/// Dense LDLᵀ-style backend (via Cholesky of the normal matrix).
pub struct DenseInner;

impl InnerSolver for DenseInner {
    fn solve(
        &self,
        a: &DMatrix<f64>,
        d: &DVector<f64>,
        rhs: &DVector<f64>,
    ) -> Result<DVector<f64>, LpError> {
        let m = a.nrows();
        let scaled = DMatrix::from_fn(m, a.ncols(), |i, j| d[i] * a[(i, j)]);
        let normal = a.transpose() * scaled;
        let chol = normal.cholesky().ok_or(LpError::RankDeficient)?;
        Ok(chol.solve(rhs))
    }
}

#[derive(Debug, Clone)]
pub struct PathState {
    pub x: DVector<f64>,
    pub w: DVector<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, Default)]
pub struct CenteringTrace {
    pub delta: f64,
    pub probes: usize,
    pub inner_solves: usize,
    pub rounds: u64,
}

pub struct LpDriver<'a> {
    pub inst: &'a LPInstance,
    pub barriers: BarrierSet,
    pub consts: LpConstants,
    pub backend: LeverageBackend<'a>,
    pub inner: &'a dyn InnerSolver,
    pub net: Network,
    pub trace: Vec<CenteringTrace>,
}

impl<'a> LpDriver<'a> {
    pub fn new(
        inst: &'a LPInstance,
        profile: Profile,
        backend: LeverageBackend<'a>,
        inner: &'a dyn InnerSolver,
    ) -> Self {
        let n = inst.n();
        let consts = LpConstants::new(profile, inst.m(), n);
        let net = Network::new_clique(n.max(2), default_bandwidth(n.max(2)), 0);
        LpDriver {
            inst,
            barriers: BarrierSet::for_bounds(&inst.l, &inst.u),
            consts,
            backend,
            inner,
            net,
            trace: Vec::new(),
        }
    }

    /// `P_{x,w} y = y - W^{-1} A_x (A_x^T W^{-1} A_x)^{-1} A_x^T y`, costing
    /// one inner solve.
    fn project(
        &self,
        y: &DVector<f64>,
        w: &DVector<f64>,
        ddphi: &DVector<f64>,
    ) -> Result<DVector<f64>, LpError> {
        let m = self.inst.m();
        let inv_sqrt_dd = ddphi.map(|v| 1.0 / v.sqrt());
        // A_x^T y = A^T Φ''^{-1/2} y
        let rhs = self.inst.a.transpose()
            * DVector::from_fn(m, |i, _| inv_sqrt_dd[i] * y[i]);
        // D = Φ''^{-1/2} W^{-1} Φ''^{-1/2}
        let d = DVector::from_fn(m, |i, _| inv_sqrt_dd[i] * inv_sqrt_dd[i] / w[i]);
        let s = self.inner.solve(&self.inst.a, &d, &rhs)?;
        let back = &self.inst.a * s;
        Ok(DVector::from_fn(m, |i, _| {
            y[i] - inv_sqrt_dd[i] / w[i] * back[i]
        }))
    }

    fn mixed_norm(&self, v: &DVector<f64>, w: &DVector<f64>) -> f64 {
        let w_norm = v
            .iter()
            .zip(w.iter())
            .map(|(&vi, &wi)| wi * vi * vi)
            .sum::<f64>()
            .sqrt();
        v.amax() + self.consts.cfg.c_norm * w_norm
    }

    fn scaled_matrix(&self, ddphi: &DVector<f64>) -> DMatrix<f64> {
        let m = self.inst.m();
        DMatrix::from_fn(m, self.inst.a.ncols(), |i, j| {
            self.inst.a[(i, j)] / ddphi[i].sqrt()
        })
    }

    /// One CenteringInexact step at path parameter `t` with cost vector `c`.
    pub fn centering_inexact(
        &mut self,
        state: &PathState,
        t: f64,
        c: &DVector<f64>,
    ) -> Result<PathState, LpError> {
        let m = self.inst.m();
        let cfg = self.consts.cfg;
        let big_r = self.consts.big_r;
        let eta_c = 1.0 / (2.0 * cfg.ck);
        let rounds_before = self.net.rounds();

        let (_, dphi, ddphi) = barrier_eval(&self.barriers, &state.x)?;
        // gradient direction in the scaled coordinates; the same vector
        // drives both the centrality measure and the Newton step
        let y = DVector::from_fn(m, |i, _| {
            (t * c[i] + state.w[i] * dphi[i]) / (state.w[i] * ddphi[i].sqrt())
        });
        let pv = self.project(&y, &state.w, &ddphi)?;
        let mut inner_solves = 1;
        let delta = self.mixed_norm(&pv, &state.w);
        // broadcast cost of the constant number of matrix-vector products
        self.net.charge_broadcast(4 * self.net.bandwidth_bits());

        let full_step = DVector::from_fn(m, |i, _| pv[i] / ddphi[i].sqrt());
        let mut step_scale = 1.0f64;
        if self.consts.profile == Profile::Practical {
            // damped Newton phase: far from the central path a full step is
            // unreliable, so shorten it as the centrality measure grows; the
            // measure carries a factor C_norm in its ℓ₂ part, so thresholds
            // are taken relative to it
            let eff = delta / self.consts.cfg.c_norm;
            if eff > 0.5 {
                step_scale = 1.0 / (0.5 + eff);
            }
            // fraction-to-the-boundary rule: the loose practical constants
            // leave residual miscentering, so full Newton steps can
            // overshoot; cap the step at 95% of the distance to the nearest
            // bound instead of erroring out
            for i in 0..m {
                let s = full_step[i];
                let margin = if s > 0.0 {
                    state.x[i] - self.inst.l[i]
                } else if s < 0.0 {
                    self.inst.u[i] - state.x[i]
                } else {
                    continue;
                };
                if margin.is_finite() {
                    step_scale = step_scale.min(0.95 * margin / s.abs());
                }
            }
        }
        let x_new = &state.x - &(&full_step * step_scale);
        if !self.barriers.contains(&x_new) {
            let i = (0..m)
                .find(|&i| {
                    !(self.inst.l[i] < x_new[i] && x_new[i] < self.inst.u[i])
                })
                .unwrap_or(0);
            return Err(LpError::LeftDomain { i });
        }

        // weight refresh: approximate Lewis weights at the new point,
        // then a mixed-ball-projected multiplicative update
        let (_, _, ddphi_new) = barrier_eval(&self.barriers, &x_new)?;
        let a_new = self.scaled_matrix(&ddphi_new);
        let z_w = compute_apx_weights(
            &a_new,
            cfg.p,
            &state.w,
            (big_r.exp() - 1.0).min(0.5),
            &self.consts,
            &self.backend,
        )?;
        inner_solves += 0; // weight refresh is charged as broadcasts below
        self.net.charge_broadcast(2 * self.net.bandwidth_bits());
        let z = z_w.map(|v| v.max(1e-300).ln());
        let log_w = state.w.map(|v| v.max(1e-300).ln());
        let a_pm = DVector::from_fn(m, |i, _| eta_c / (12.0 * big_r) * (z[i] - log_w[i]));
        let l_pm = state.w.map(|v| cfg.c_norm * v.sqrt());
        let (u_step, probes) = match project_mixed_ball(&a_pm, &l_pm) {
            Ok(res) => {
                let coef = (1.0 - 6.0 / (7.0 * cfg.ck)) * delta;
                (res.x * coef, res.probes)
            }
            Err(LpError::ZeroObjective) => (DVector::zeros(m), 0),
            Err(e) => return Err(e),
        };
        let u_step = match self.consts.profile {
            Profile::Faithful => u_step,
            // the δ-scaled projected update assumes δ ≤ η, which the loose
            // practical constants do not maintain; track the approximate
            // Lewis weights (kept above the additive c0 floor, matching the
            // initial weights) under a fixed trust clamp instead so the
            // weights settle and the Newton iteration can contract
            Profile::Practical => {
                let c0 = self.consts.cfg.c0;
                DVector::from_fn(m, |i, _| {
                    let target = (z[i].exp() + c0).ln();
                    (target - log_w[i]).clamp(-0.3, 0.3)
                })
            }
        };
        self.net.charge_broadcast(probes as u64 * self.net.bandwidth_bits());
        let w_new = DVector::from_fn(m, |i, _| (log_w[i] + u_step[i]).exp());

        let rounds = self.net.rounds() - rounds_before + self.inner.rounds_per_solve();
        self.trace.push(CenteringTrace {
            delta,
            probes,
            inner_solves,
            rounds,
        });
        Ok(PathState {
            x: x_new,
            w: w_new,
            t,
        })
    }

    /// PathFollowing: geometric `t` schedule clamped at `t_end`, one
    /// centering per step, then the fixed number of extra centerings.
    pub fn path_following(
        &mut self,
        mut state: PathState,
        t_start: f64,
        t_end: f64,
        eta: f64,
        c: &DVector<f64>,
    ) -> Result<PathState, LpError> {
        let alpha = self.consts.alpha;
        let mut t = t_start;
        let mut guard = 0usize;
        while t != t_end {
            state = self.centering_inexact(&state, t, c)?;
            if self.consts.profile == Profile::Practical {
                // advance t only once recentered: repeat the corrector at
                // fixed t while the centrality measure is large and still
                // shrinking; without the improvement check the corrector can
                // push margins into floating-point underflow
                let mut reps = 0;
                let gate = 0.5 * self.consts.cfg.c_norm;
                let mut prev = self.trace.last().map_or(0.0, |tr| tr.delta);
                while prev > gate && reps < 100 {
                    state = self.centering_inexact(&state, t, c)?;
                    let cur = self.trace.last().map_or(0.0, |tr| tr.delta);
                    if cur > 0.99 * prev {
                        break;
                    }
                    prev = cur;
                    reps += 1;
                }
            }
            t = three_way_median((1.0 - alpha) * t, t_end, (1.0 + alpha) * t);
            state.t = t;
            guard += 1;
            if guard > 2_000_000 {
                return Err(LpError::Infeasible {
                    reason: "path following failed to reach t_end".into(),
                });
            }
        }
        for _ in 0..self.consts.final_centering_count(eta) {
            state = self.centering_inexact(&state, t_end, c)?;
        }
        state.t = t_end;
        Ok(state)
    }
}

#[derive(Debug, Clone)]
pub struct LpOutcome {
    pub x: DVector<f64>,
    pub objective: f64,
    pub rounds: u64,
    pub centering_steps: usize,
    pub profile: Profile,
    /// Per-centering-step measurements, in execution order.
    pub trace: Vec<CenteringTrace>,
}

/// LPSolve: phase 1 recenters from `x₀` along `d = -w φ'(x₀)`; phase 2
/// follows the true cost to `t₂`.
pub fn lp_solve(
    inst: &LPInstance,
    eps: f64,
    profile: Profile,
    inner: &dyn InnerSolver,
    seed: u64,
) -> Result<LpOutcome, LpError> {
    inst.validate()?;
    let m = inst.m();
    let shared_bits = leader_shared_bits(m, seed);
    let backend = match profile {
        Profile::Faithful => LeverageBackend::Sketched {
            shared_bits: &shared_bits,
            delta: 1.0 / (m as f64).powi(2).max(4.0),
        },
        Profile::Practical => LeverageBackend::Exact,
    };
    let mut driver = LpDriver::new(inst, profile, backend, inner);
    let consts = driver.consts;
    let cfg = consts.cfg;
    let u = inst.u_param();
    let (t1, eta1, t2, eta2) = consts.schedule(eps, u);

    let (_, dphi0, ddphi0) = barrier_eval(&driver.barriers, &inst.x0)?;
    let a_x0 = driver.scaled_matrix(&ddphi0);
    let w0 = compute_initial_weights(
        &a_x0,
        cfg.p,
        consts.initial_weight_eta(),
        &consts,
        &driver.backend,
    )?;
    let w0 = w0.map(|v| v + cfg.c0);
    let d = DVector::from_fn(m, |i, _| -w0[i] * dphi0[i]);

    let state = PathState {
        x: inst.x0.clone(),
        w: w0,
        t: 1.0,
    };
    let state = driver.path_following(state, 1.0, t1, eta1, &d)?;
    let state = driver.path_following(state, t1, t2, eta2, &inst.c)?;

    let objective = inst.c.dot(&state.x);
    Ok(LpOutcome {
        x: state.x,
        objective,
        rounds: driver.net.rounds(),
        centering_steps: driver.trace.len(),
        profile,
        trace: driver.trace,
    })
}
