//! Closed-form building blocks of the symmetric reduction.
//!
//! A Calabi-invariant metric on the surface is `i∂∂̄ v(ρ)` for a single convex
//! potential of the fiber log-norm coordinate `ρ`; this module provides the
//! uniform ρ-grid, the reference potential `v̂_t`, the section norm `|σ|²`,
//! the conical regularizer `χ`, the ε-factor `θ` with its log-derivatives,
//! and the regularized initial profile. All evaluations are overflow-safe for
//! |ρ| ≤ 700.

use crate::cohomology::{class_at_f64, SurfaceParams};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("grid needs an odd node count >= 3, got {0}")]
    InvalidNodeCount(usize),
    #[error("grid half-width must be positive, got {0}")]
    InvalidHalfWidth(f64),
    #[error("regularization parameters must be positive (epsilon={epsilon}, delta={delta})")]
    InvalidRegularization { epsilon: f64, delta: f64 },
    #[error("chi argument {s} lies below epsilon^2 = {eps_sq}")]
    ChiDomain { s: f64, eps_sq: f64 },
    #[error(
        "initial profile loses positivity at rho={rho}: v''={v2} (delta too large for this epsilon)"
    )]
    PositivityViolation { rho: f64, v2: f64 },
}

/// Uniform grid on `[−R, R]` with an odd node count, so that `ρ = 0` is a
/// node. The center node carries the normalization `v(t, 0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    half_width: f64,
    n: usize,
    h: f64,
    center: usize,
    nodes: Vec<f64>,
}

impl Grid {
    pub fn new(half_width: f64, n: usize) -> Result<Self, ProfileError> {
        if n < 3 || n % 2 == 0 {
            return Err(ProfileError::InvalidNodeCount(n));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(ProfileError::InvalidHalfWidth(half_width));
        }
        let center = (n - 1) / 2;
        let h = half_width / center as f64;
        // (i − center)·h makes the center exactly 0 and the grid exactly odd-symmetric
        let nodes = (0..n).map(|i| (i as f64 - center as f64) * h).collect();
        Ok(Self {
            half_width,
            n,
            h,
            center,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn spacing(&self) -> f64 {
        self.h
    }
    pub fn half_width(&self) -> f64 {
        self.half_width
    }
    pub fn center(&self) -> usize {
        self.center
    }
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    pub fn rho(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    /// Index of the last node with `ρ_i <= rho` (clamped to the grid).
    pub fn index_at_or_below(&self, rho: f64) -> usize {
        if rho <= self.nodes[0] {
            return 0;
        }
        let steps = ((rho - self.nodes[0]) / self.h).floor() as usize;
        steps.min(self.n - 1)
    }
}

/// The flow state: momentum potential values on the grid at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub grid: Arc<Grid>,
    pub v: Vec<f64>,
    pub t: f64,
}

impl Profile {
    pub fn new(grid: Arc<Grid>, v: Vec<f64>, t: f64) -> Self {
        debug_assert_eq!(grid.len(), v.len());
        Self { grid, v, t }
    }
}

/// Conical regularization parameters. The smooth approximants use
/// `χ(|σ|² + ε²)` with bump amplitude `δ`; both must be positive and `δ`
/// small enough that the initial profile stays convex (checked at
/// construction time).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Regularization {
    pub epsilon: f64,
    pub delta: f64,
}

impl Regularization {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self, ProfileError> {
        if !(epsilon > 0.0 && delta > 0.0 && epsilon.is_finite() && delta.is_finite()) {
            return Err(ProfileError::InvalidRegularization { epsilon, delta });
        }
        Ok(Self { epsilon, delta })
    }
}

/// Logistic sigmoid `e^ρ/(1 + e^ρ)`, overflow-safe on the whole line.
pub fn sigma_norm(rho: f64) -> f64 {
    if rho >= 0.0 {
        1.0 / (1.0 + (-rho).exp())
    } else {
        let e = rho.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^ρ)` without overflow.
fn log1p_exp(rho: f64) -> f64 {
    if rho > 0.0 {
        rho + (-rho).exp().ln_1p()
    } else {
        rho.exp().ln_1p()
    }
}

/// Reference potential value and its first three ρ-derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefPotential {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

/// Reference potential for class coefficients `(a_t, b_t)`:
///
/// ```text
///   v̂(ρ) = a_t·ρ + (b_t − a_t)·log(1 + e^ρ)
///   v̂′   = a_t + (b_t − a_t)·s,        s = e^ρ/(1+e^ρ)
///   v̂″   = (b_t − a_t)·s(1−s)
///   v̂‴   = (b_t − a_t)·s(1−s)(1−2s)
/// ```
pub fn reference_potential_class(a_t: f64, b_t: f64, rho: f64) -> RefPotential {
    let width = b_t - a_t;
    let s = sigma_norm(rho);
    let s1 = s * (1.0 - s);
    RefPotential {
        v: a_t * rho + width * log1p_exp(rho),
        d1: a_t + width * s,
        d2: width * s1,
        d3: width * s1 * (1.0 - 2.0 * s),
    }
}

/// Reference potential at flow time `t` (class coefficients from the exact
/// evolution).
pub fn reference_potential(p: &SurfaceParams, t: f64, rho: f64) -> RefPotential {
    let (a_t, b_t) = class_at_f64(p, t);
    reference_potential_class(a_t, b_t, rho)
}

/// The ε-regularization factor `θ = 1 + ε²(1 + e^{−ρ})` and its first three
/// log-derivatives. Writing `m = ε²e^{−ρ}/θ ∈ (0,1)`:
///
/// ```text
///   (log θ)′  = −m
///   (log θ)″  = m(1−m)
///   (log θ)‴  = −m(1−m)(1−2m)
/// ```
///
/// so all three are bounded by constants independent of ε (by 1, 1/4 and
/// 1/(6√3) respectively), which is the uniformity the flow estimates rely on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaDerivs {
    pub theta: f64,
    pub log_d1: f64,
    pub log_d2: f64,
    pub log_d3: f64,
}

pub fn theta_and_logderivs(rho: f64, epsilon: f64) -> ThetaDerivs {
    let eps_sq = epsilon * epsilon;
    // m = ε²e^{−ρ} / (1 + ε² + ε²e^{−ρ}) = 1/(1 + q), q = e^ρ(1+ε²)/ε²
    let q = rho.exp() * (1.0 + eps_sq) / eps_sq;
    let m = if q.is_infinite() { 0.0 } else { 1.0 / (1.0 + q) };
    let theta = if rho < 0.0 {
        1.0 + eps_sq + eps_sq * (-rho).exp()
    } else {
        1.0 + eps_sq * (1.0 + (-rho).exp())
    };
    ThetaDerivs {
        theta,
        log_d1: -m,
        log_d2: m * (1.0 - m),
        log_d3: -m * (1.0 - m) * (1.0 - 2.0 * m),
    }
}

/// `log θ` without overflow: for `ρ < 0` use
/// `−ρ + log(ε² + (1+ε²)e^ρ)`.
pub fn log_theta(rho: f64, epsilon: f64) -> f64 {
    let eps_sq = epsilon * epsilon;
    if rho < 0.0 {
        -rho + (eps_sq + (1.0 + eps_sq) * rho.exp()).ln()
    } else {
        (eps_sq * (1.0 + (-rho).exp())).ln_1p()
    }
}

/// Integrand of the conical regularizer, extended continuously at `r = 0` by
/// its limit `α·ε^{2(α−1)}`.
fn chi_integrand(r: f64, eps_sq: f64, alpha: f64) -> f64 {
    if r == 0.0 {
        return alpha * eps_sq.powf(alpha - 1.0);
    }
    ((r + eps_sq).powf(alpha) - eps_sq.powf(alpha)) / r
}

/// Adaptive Simpson on `[lo, hi]` with absolute tolerance budget `tol`.
fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    flo: f64,
    fmid: f64,
    fhi: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let mid = 0.5 * (lo + hi);
    let lmid = 0.5 * (lo + mid);
    let rmid = 0.5 * (mid + hi);
    let flm = f(lmid);
    let frm = f(rmid);
    let hl = (mid - lo) / 6.0;
    let hr = (hi - mid) / 6.0;
    let left = hl * (flo + 4.0 * flm + fmid);
    let right = hr * (fmid + 4.0 * frm + fhi);
    let err = left + right - whole;
    if depth == 0 || err.abs() <= 15.0 * tol {
        return left + right + err / 15.0;
    }
    adaptive_simpson(f, lo, mid, flo, flm, fmid, left, 0.5 * tol, depth - 1)
        + adaptive_simpson(f, mid, hi, fmid, frm, fhi, right, 0.5 * tol, depth - 1)
}

fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, rel_tol: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let mid = 0.5 * (lo + hi);
    let (flo, fmid, fhi) = (f(lo), f(mid), f(hi));
    let whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
    let tol = rel_tol * whole.abs().max(1e-300);
    adaptive_simpson(&f, lo, hi, flo, fmid, fhi, whole, tol, 52)
}

/// Relative tolerance of the χ quadrature.
pub const CHI_REL_TOL: f64 = 1e-10;

/// The conical regularizer
///
/// ```text
///   χ(s) = (1/α) ∫₀^{s−ε²} ((r + ε²)^α − ε^{2α}) / r  dr,    s ≥ ε²,
/// ```
///
/// evaluated by adaptive quadrature with relative tolerance [`CHI_REL_TOL`].
/// `χ(ε²) = 0`; χ is increasing and concave in `s`.
pub fn chi(s: f64, epsilon: f64, alpha: f64) -> Result<f64, ProfileError> {
    let eps_sq = epsilon * epsilon;
    if s < eps_sq {
        return Err(ProfileError::ChiDomain { s, eps_sq });
    }
    let upper = s - eps_sq;
    if upper == 0.0 {
        return Ok(0.0);
    }
    // The integrand's curvature concentrates near r ~ ε²; splitting there
    // keeps the adaptive recursion shallow.
    let split = eps_sq.min(upper);
    let f = |r: f64| chi_integrand(r, eps_sq, alpha);
    let head = integrate(f, 0.0, split, CHI_REL_TOL);
    let tail = integrate(f, split, upper, CHI_REL_TOL);
    Ok((head + tail) / alpha)
}

/// Regularized initial profile
///
/// ```text
///   v(0,ρ) = v̂(ρ) + δ·χ(|σ|²(ρ) + ε²),  recentred so v(0,0) = 0,
/// ```
///
/// with discrete positivity `v′ > 0`, `v″ > 0` verified on the grid
/// (second-order interior stencils). Fails with `PositivityViolation` when
/// `δ` is too large for the given `ε`.
pub fn initial_profile(
    p: &SurfaceParams,
    reg: &Regularization,
    grid: &Arc<Grid>,
) -> Result<Profile, ProfileError> {
    let mut v: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|&rho| {
            let base = reference_potential(p, 0.0, rho).v;
            let bump = chi(sigma_norm(rho) + reg.epsilon * reg.epsilon, reg.epsilon, p.alpha_f64())
                .expect("sigma_norm + eps^2 is inside the chi domain");
            base + reg.delta * bump
        })
        .collect();
    let pin = v[grid.center()];
    for x in v.iter_mut() {
        *x -= pin;
    }
    v[grid.center()] = 0.0;

    let h = grid.spacing();
    for i in 1..grid.len() - 1 {
        let d1 = (v[i + 1] - v[i - 1]) / (2.0 * h);
        let d2 = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h);
        if d1 <= 0.0 {
            return Err(ProfileError::PositivityViolation {
                rho: grid.rho(i),
                v2: d1,
            });
        }
        if d2 <= 0.0 {
            return Err(ProfileError::PositivityViolation {
                rho: grid.rho(i),
                v2: d2,
            });
        }
    }
    Ok(Profile::new(grid.clone(), v, 0.0))
}
