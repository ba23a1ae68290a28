//! Exact class arithmetic on a degree-`k` Hirzebruch surface.
//!
//! The Kähler class is written as `2π(b·[D∞] − a·[D₀])` on the lattice spanned
//! by the zero section `D₀` (self-intersection `−k`) and the infinity section
//! `D∞` (self-intersection `+k`). Along the flow the coefficients evolve
//! affinely,
//!
//! ```text
//!   a_t = a − (2/k − α)·t,      b_t = b − (1 + 2/k)·t,
//! ```
//!
//! and the regime trichotomy, singular times, limit constants and volumes are
//! closed-form functions of `(k, a, b, α)`. Everything here is evaluated in
//! exact rational arithmetic: the threshold case sits on a measure-zero set
//! and must not be misclassified by rounding. Floating point appears only in
//! the `f64` convenience views consumed by the PDE solver.

use num::{BigInt, BigRational, FromPrimitive, One, Signed, ToPrimitive, Zero};
use std::f64::consts::PI;
use std::fmt;
use thiserror::Error;

/// Shorthand used throughout the crate.
pub type Rat = BigRational;

/// Build a rational from an integer pair.
pub fn rat(num: i64, den: i64) -> Rat {
    Rat::new(BigInt::from(num), BigInt::from(den))
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParamError {
    #[error("degree k must be >= 1, got {0}")]
    InvalidDegree(u32),
    #[error("class coefficients must satisfy 0 < a < b, got a={a}, b={b}")]
    InvalidClass { a: String, b: String },
    #[error("cone angle fraction must satisfy 0 < alpha < 1, got {0}")]
    InvalidAngle(String),
    #[error("operation requires the {expected:?} regime, parameters are {actual:?}")]
    WrongRegime { expected: Regime, actual: Regime },
}

/// Validated scenario parameters: degree, initial class, cone angle fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceParams {
    k: u32,
    a: Rat,
    b: Rat,
    alpha: Rat,
}

impl SurfaceParams {
    pub fn new(k: u32, a: Rat, b: Rat, alpha: Rat) -> Result<Self, ParamError> {
        if k < 1 {
            return Err(ParamError::InvalidDegree(k));
        }
        if !(a.is_positive() && a < b) {
            return Err(ParamError::InvalidClass {
                a: a.to_string(),
                b: b.to_string(),
            });
        }
        if !(alpha.is_positive() && alpha < Rat::one()) {
            return Err(ParamError::InvalidAngle(alpha.to_string()));
        }
        Ok(Self { k, a, b, alpha })
    }

    /// Convenience constructor from integer pairs.
    pub fn from_ints(
        k: u32,
        a: (i64, i64),
        b: (i64, i64),
        alpha: (i64, i64),
    ) -> Result<Self, ParamError> {
        Self::new(k, rat(a.0, a.1), rat(b.0, b.1), rat(alpha.0, alpha.1))
    }

    pub fn k(&self) -> u32 {
        self.k
    }
    pub fn a(&self) -> &Rat {
        &self.a
    }
    pub fn b(&self) -> &Rat {
        &self.b
    }
    pub fn alpha(&self) -> &Rat {
        &self.alpha
    }

    pub fn k_f64(&self) -> f64 {
        f64::from(self.k)
    }
    pub fn a_f64(&self) -> f64 {
        rat_to_f64(&self.a)
    }
    pub fn b_f64(&self) -> f64 {
        rat_to_f64(&self.b)
    }
    pub fn alpha_f64(&self) -> f64 {
        rat_to_f64(&self.alpha)
    }

    /// Rate `2/k − α` at which `a_t` decreases.
    pub fn a_rate(&self) -> Rat {
        rat(2, i64::from(self.k)) - &self.alpha
    }

    /// Rate `1 + 2/k` at which `b_t` decreases.
    pub fn b_rate(&self) -> Rat {
        rat(1, 1) + rat(2, i64::from(self.k))
    }
}

pub fn rat_to_f64(r: &Rat) -> f64 {
    r.to_f64()
        .unwrap_or_else(|| r.numer().to_f64().unwrap() / r.denom().to_f64().unwrap())
}

/// The trichotomy of flow behaviors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Regime {
    /// The cone divisor `D₀` contracts to a point at `T = ak/(2−αk)`.
    Contracting,
    /// Total volume collapses onto the base `ℙ¹` at `T = (b−a)/(1+α)`.
    Collapsing,
    /// The class is proportional to the log-anticanonical class; both
    /// degenerations happen at the same time and the space collapses to a
    /// point.
    LogFano,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::Contracting => write!(f, "Contracting"),
            Regime::Collapsing => write!(f, "Collapsing"),
            Regime::LogFano => write!(f, "LogFano"),
        }
    }
}

/// Threshold `τ = 2/k − (1 + 2/k)·a/b` separating the regimes.
///
/// With `0 < α < 1` enforced by the type, the contracting condition
/// `α < min(τ, 1)` reduces to `α < τ` and the collapsing condition
/// `α > max(τ, 0)` to `α > τ`.
pub fn contracting_threshold(k: u32, a: &Rat, b: &Rat) -> Rat {
    let k = i64::from(k);
    rat(2, k) - (rat(1, 1) + rat(2, k)) * a / b
}

/// Classify the flow regime in exact arithmetic.
pub fn classify_regime(p: &SurfaceParams) -> Regime {
    let tau = contracting_threshold(p.k, &p.a, &p.b);
    match p.alpha.cmp(&tau) {
        std::cmp::Ordering::Less => Regime::Contracting,
        std::cmp::Ordering::Greater => Regime::Collapsing,
        std::cmp::Ordering::Equal => Regime::LogFano,
    }
}

/// The evolved class coefficients `(a_t, b_t)`, exact.
pub fn class_at(p: &SurfaceParams, t: &Rat) -> (Rat, Rat) {
    let a_t = &p.a - p.a_rate() * t;
    let b_t = &p.b - p.b_rate() * t;
    (a_t, b_t)
}

/// Floating-point view of `(a_t, b_t)` for the solver.
pub fn class_at_f64(p: &SurfaceParams, t: f64) -> (f64, f64) {
    let kf = p.k_f64();
    let a_t = p.a_f64() - (2.0 / kf - p.alpha_f64()) * t;
    let b_t = p.b_f64() - (1.0 + 2.0 / kf) * t;
    (a_t, b_t)
}

/// Predicted singular time, exact.
///
/// Contracting: the root of `a_t`, i.e. `ak/(2−αk)`. Collapsing: the root of
/// `b_t − a_t`, i.e. `(b−a)/(1+α)`. At the log-Fano threshold the two roots
/// coincide (both equal `kb/(k+2)`) and the common value is returned; see
/// [`logfano_roots`].
pub fn singularity_time(p: &SurfaceParams) -> Rat {
    match classify_regime(p) {
        Regime::Contracting => &p.a / p.a_rate(),
        Regime::Collapsing => (&p.b - &p.a) / (Rat::one() + &p.alpha),
        Regime::LogFano => {
            let (ra, rw) = logfano_roots(p);
            debug_assert_eq!(ra, rw);
            ra
        }
    }
}

/// Both candidate roots at the log-Fano threshold: the root of `a_t` and the
/// root of `b_t − a_t`. They agree exactly when `α` equals the threshold.
pub fn logfano_roots(p: &SurfaceParams) -> (Rat, Rat) {
    (
        &p.a / p.a_rate(),
        (&p.b - &p.a) / (Rat::one() + &p.alpha),
    )
}

pub fn singularity_time_f64(p: &SurfaceParams) -> f64 {
    rat_to_f64(&singularity_time(p))
}

/// Scale `λ` of the collapsed base metric: `((k+2)a + (αk−2)b)/(1+α)`.
///
/// Equals `k·a_T` exactly, with `T` the collapsing time.
pub fn limit_lambda(p: &SurfaceParams) -> Result<Rat, ParamError> {
    let regime = classify_regime(p);
    if regime != Regime::Collapsing {
        return Err(ParamError::WrongRegime {
            expected: Regime::Collapsing,
            actual: regime,
        });
    }
    let k = rat(i64::from(p.k), 1);
    let lam = ((&k + rat(2, 1)) * &p.a + (&k * &p.alpha - rat(2, 1)) * &p.b)
        / (Rat::one() + &p.alpha);
    Ok(lam)
}

/// Snapshot of the class data at flow time `t` (floating-point view).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassState {
    pub t: f64,
    pub a_t: f64,
    pub b_t: f64,
    pub regime: Regime,
    pub singular_time: f64,
}

impl ClassState {
    pub fn at(p: &SurfaceParams, t: f64) -> Self {
        let (a_t, b_t) = class_at_f64(p, t);
        ClassState {
            t,
            a_t,
            b_t,
            regime: classify_regime(p),
            singular_time: singularity_time_f64(p),
        }
    }
}

/// Curves whose volumes along the flow have closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curve {
    ZeroSection,
    InfinitySection,
    Fiber,
}

/// Pairing `([ω_t]/2π)·E` of the evolved class with a curve, exact.
///
/// Uses `D₀² = −k`, `D∞² = k`, `D₀·D∞ = 0`, `F·D₀ = F·D∞ = 1`, `F² = 0`.
pub fn curve_pairing(p: &SurfaceParams, t: &Rat, curve: Curve) -> Rat {
    let (a_t, b_t) = class_at(p, t);
    let k = rat(i64::from(p.k), 1);
    match curve {
        Curve::ZeroSection => k * a_t,
        Curve::InfinitySection => k * b_t,
        Curve::Fiber => b_t - a_t,
    }
}

/// Curve volume `2π·([ω_t]/2π)·E`; the `2π` normalization is kept explicit.
pub fn curve_volume(p: &SurfaceParams, t: f64, curve: Curve) -> f64 {
    let (a_t, b_t) = class_at_f64(p, t);
    let k = p.k_f64();
    let pairing = match curve {
        Curve::ZeroSection => k * a_t,
        Curve::InfinitySection => k * b_t,
        Curve::Fiber => b_t - a_t,
    };
    2.0 * PI * pairing
}

/// Rational coefficient of `(2π)²` in the total volume: `k(b_t² − a_t²)/2`.
pub fn total_volume_coeff(p: &SurfaceParams, t: &Rat) -> Rat {
    let (a_t, b_t) = class_at(p, t);
    rat(i64::from(p.k), 2) * (&b_t * &b_t - &a_t * &a_t)
}

/// Total volume `[ω_t]²/2 = (2π)²·k·(b_t² − a_t²)/2`.
pub fn total_volume(p: &SurfaceParams, t: f64) -> f64 {
    let (a_t, b_t) = class_at_f64(p, t);
    let tau = 2.0 * PI;
    tau * tau * p.k_f64() * (b_t * b_t - a_t * a_t) / 2.0
}

/// Parse a rational from "p/q", an integer string, or a plain decimal such as
/// "0.75" (exact base-10 reading).
pub fn parse_rational(s: &str) -> Result<Rat, String> {
    let s = s.trim();
    if let Ok(r) = s.parse::<Rat>() {
        return Ok(r);
    }
    if let Some((int, frac)) = s.split_once('.') {
        let sign = if int.starts_with('-') { -1 } else { 1 };
        let int: BigInt = int.parse().map_err(|e| format!("{e}"))?;
        let num: BigInt = frac.parse().map_err(|e| format!("{e}"))?;
        if num.is_negative() {
            return Err(format!("malformed decimal: {s}"));
        }
        let den = BigInt::from(10u32).pow(frac.len() as u32);
        return Ok(Rat::from(int) + Rat::new(num * sign, den));
    }
    Err(format!("cannot parse rational from {s:?}"))
}

/// Rational from an `f64` (exact binary expansion); used only for config
/// round-trips, never in regime arithmetic.
pub fn rat_from_f64(x: f64) -> Option<Rat> {
    Rat::from_f64(x)
}
