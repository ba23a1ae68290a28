//! Per-snapshot verification of the quantitative bounds the flow is expected
//! to satisfy, as falsifiable numerical checks.
//!
//! Each "uniform constant C" is operationalized as 1.1× the initial-snapshot
//! value of the monitored quantity, frozen for the rest of the run, with a 5%
//! slack on the comparison. Freezing at t = 0 turns an existence claim into a
//! testable monotonicity-style claim; constants are never refitted.
//!
//! The H statistic `H = log( v″ / ((v′−a_t)(b_t−v′)) )` tends to
//! `−log(b_t − a_t)` at the ends of the grid for any profile with the
//! standard tail structure, so its raw maximum grows by exactly
//! `log(width_0/width_t)` as the class narrows, independent of solver
//! quality. The drift budget is therefore applied to the width-normalized
//! statistic `H + log(b_t − a_t)`, with `log 2` of headroom.

use crate::cohomology::{ClassState, Regime, SurfaceParams};
use crate::discrete::{derivatives, trapezoid, Derivs, Stencil};
use crate::profile::{theta_and_logderivs, Profile, Regularization};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Multiplier applied to initial-snapshot values when freezing constants.
pub const FIT_FACTOR: f64 = 1.1;
/// Relative slack on frozen-constant comparisons.
pub const SLACK: f64 = 0.05;
/// Relative distance from the band edges below which nodes are excluded from
/// the H statistic (log of ~0/0).
pub const BAND_EXCLUSION: f64 = 1e-8;
/// Q-monitor drift rate: with ψ ≡ 0 the θ log-derivative bound is 1, plus 1.
pub const Q_DRIFT_RATE: f64 = 2.0;

/// Check names as they appear in reports and CSV output.
pub mod names {
    pub const MASS: &str = "mass_conservation";
    pub const VPRIME_RANGE: &str = "vprime_range";
    pub const VPRIME_ENVELOPE: &str = "vprime_envelope";
    pub const H_STATISTIC: &str = "h_statistic";
    pub const VOLUME_FORM: &str = "volume_form_envelope";
    pub const BAND_UPPER: &str = "vprime_band_upper";
    pub const BAND_LOWER: &str = "vprime_band_lower";
    pub const LINEAR_CONV: &str = "linear_profile_convergence";
    pub const V2_ENVELOPE: &str = "v2_envelope";
    pub const V2_TIME_DECAY: &str = "v2_time_decay";
    pub const V3_RATIO: &str = "v3_ratio";
    pub const Q_UPPER: &str = "q_drift_upper";
    pub const Q_LOWER: &str = "q_drift_lower";
    pub const V3_LEFT_LIMIT: &str = "v3_ratio_left_limit";
}

/// One evaluated bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub observed: f64,
    pub bound: f64,
    pub margin: f64,
    pub pass: bool,
}

impl Check {
    fn with_slack(name: &'static str, observed: f64, bound: f64, slack: f64) -> Self {
        let limit = bound * (1.0 + slack);
        Check {
            name,
            observed,
            bound,
            margin: limit - observed,
            pass: observed <= limit,
        }
    }

    fn absolute(name: &'static str, observed: f64, bound: f64) -> Self {
        Check {
            name,
            observed,
            bound,
            margin: bound - observed,
            pass: observed <= bound,
        }
    }
}

/// Ledger of every check evaluated on one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorReport {
    pub t: f64,
    pub checks: Vec<Check>,
    /// Constants fitted on the initial snapshot, frozen thereafter.
    pub constants: Arc<BTreeMap<&'static str, f64>>,
    /// Measured-but-not-asserted quantities (boundary residuals, exclusion
    /// counts, raw extrema).
    pub diagnostics: BTreeMap<&'static str, f64>,
}

impl MonitorReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

// ---------------------------------------------------------------------------
// Individual observables (pure; exposed for the falsifiability fixtures).
// ---------------------------------------------------------------------------

/// `max_ρ (v′ − a_t)·e^{−αρ/2}`.
pub fn vprime_envelope_observed(rho: &[f64], d1: &[f64], a_t: f64, alpha: f64) -> f64 {
    rho.iter()
        .zip(d1)
        .map(|(&r, &v1)| (v1 - a_t) * (-alpha * r / 2.0).exp())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `max_ρ v′v″·e^{−αρ}`.
pub fn volume_form_observed(rho: &[f64], d1: &[f64], d2: &[f64], alpha: f64) -> f64 {
    rho.iter()
        .zip(d1.iter().zip(d2))
        .map(|(&r, (&v1, &v2))| v1 * v2 * (-alpha * r).exp())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Maximum of `H = log(v″/((v′−a_t)(b_t−v′)))` over nodes with `v′` at
/// relative distance > `BAND_EXCLUSION` from both band edges, together with
/// the number of excluded nodes.
pub fn h_statistic(d1: &[f64], d2: &[f64], a_t: f64, b_t: f64) -> (f64, usize) {
    let width = b_t - a_t;
    let floor = BAND_EXCLUSION * width;
    let mut h_max = f64::NEG_INFINITY;
    let mut excluded = 0usize;
    for (&v1, &v2) in d1.iter().zip(d2) {
        let lo = v1 - a_t;
        let hi = b_t - v1;
        if lo <= floor || hi <= floor || v2 <= 0.0 {
            excluded += 1;
            continue;
        }
        h_max = h_max.max((v2 / (lo * hi)).ln());
    }
    (h_max, excluded)
}

/// `|trapezoid(v″) − (b_t − a_t)|`.
pub fn mass_error(d2: &[f64], h: f64, width_t: f64) -> f64 {
    (trapezoid(d2, h) - width_t).abs()
}

/// Envelope `e^{αρ}/(1+e^ρ)^{1+α}`, overflow-safe.
pub fn collapse_envelope(rho: f64, alpha: f64) -> f64 {
    let l = if rho > 0.0 {
        rho + (-rho).exp().ln_1p()
    } else {
        rho.exp().ln_1p()
    };
    (alpha * rho - (1.0 + alpha) * l).exp()
}

/// Extrema of `Q = v‴/v″ + (1−α)(log θ)′` over nodes with `v″` above a tiny
/// floor; returns `(Q_max, Q_min, excluded)`.
pub fn q_values(
    rho: &[f64],
    d2: &[f64],
    d3: &[f64],
    epsilon: f64,
    alpha: f64,
) -> (f64, f64, usize) {
    let mut q_max = f64::NEG_INFINITY;
    let mut q_min = f64::INFINITY;
    let mut excluded = 0usize;
    for i in 0..rho.len() {
        if d2[i] <= 1e-10 {
            excluded += 1;
            continue;
        }
        let l1 = theta_and_logderivs(rho[i], epsilon).log_d1;
        let q = d3[i] / d2[i] + (1.0 - alpha) * l1;
        q_max = q_max.max(q);
        q_min = q_min.min(q);
    }
    (q_max, q_min, excluded)
}

/// `sup |v − a_T·ρ|` over the window `|ρ| ≤ 5`.
pub fn linear_profile_deviation(rho: &[f64], v: &[f64], a_cap: f64) -> f64 {
    rho.iter()
        .zip(v)
        .filter(|(&r, _)| r.abs() <= 5.0)
        .map(|(&r, &vv)| (vv - a_cap * r).abs())
        .fold(0.0, f64::max)
}

fn max_slice(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}
fn min_slice(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::INFINITY, f64::min)
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

/// Evaluates every applicable check on successive snapshots of one run.
/// Constants are fitted on the profile passed to [`MonitorEngine::new`].
pub struct MonitorEngine {
    p: SurfaceParams,
    reg: Regularization,
    stencil: Stencil,
    regime: Regime,
    t_sing: f64,
    /// `a_T` (the zero-section coefficient at the singular time).
    a_cap: f64,
    width0: f64,
    constants: Arc<BTreeMap<&'static str, f64>>,
    running_min_linear: f64,
}

impl MonitorEngine {
    pub fn new(
        p: &SurfaceParams,
        reg: &Regularization,
        initial: &Profile,
        stencil: Stencil,
    ) -> Self {
        let state = ClassState::at(p, initial.t);
        let regime = state.regime;
        let t_sing = state.singular_time;
        let a_cap = p.a_f64() - (2.0 / p.k_f64() - p.alpha_f64()) * t_sing;
        let d = derivatives(initial, p, stencil);
        let rho = initial.grid.nodes();
        let alpha = p.alpha_f64();

        let mut c: BTreeMap<&'static str, f64> = BTreeMap::new();
        c.insert("q_drift_rate", Q_DRIFT_RATE);
        match regime {
            Regime::Contracting => {
                c.insert(
                    names::VPRIME_ENVELOPE,
                    FIT_FACTOR * vprime_envelope_observed(rho, &d.d1, state.a_t, alpha),
                );
                let (h0, _) = h_statistic(&d.d1, &d.d2, state.a_t, state.b_t);
                c.insert(names::H_STATISTIC, h0);
                c.insert(
                    names::VOLUME_FORM,
                    FIT_FACTOR * volume_form_observed(rho, &d.d1, &d.d2, alpha),
                );
            }
            Regime::Collapsing => {
                let mut env_ratio: f64 = 0.0;
                for (i, &r) in rho.iter().enumerate() {
                    let env = collapse_envelope(r, alpha).min(t_sing - initial.t);
                    env_ratio = env_ratio.max(d.d2[i] / env);
                }
                c.insert(names::V2_ENVELOPE, FIT_FACTOR * env_ratio);
                let mut v3r: f64 = 0.0;
                for i in 0..rho.len() {
                    if d.d2[i] > 1e-10 {
                        v3r = v3r.max(d.d3[i].abs() / d.d2[i]);
                    }
                }
                c.insert(names::V3_RATIO, FIT_FACTOR * v3r);
                let (q_max, q_min, _) = q_values(rho, &d.d2, &d.d3, reg.epsilon, alpha);
                c.insert("q_max_initial", q_max);
                c.insert("q_min_initial", q_min);
                c.insert(
                    "linear_profile_initial",
                    linear_profile_deviation(rho, &initial.v, a_cap),
                );
            }
            Regime::LogFano => {}
        }

        MonitorEngine {
            p: p.clone(),
            reg: *reg,
            stencil,
            regime,
            t_sing,
            a_cap,
            width0: state.b_t - state.a_t,
            constants: Arc::new(c),
            running_min_linear: f64::INFINITY,
        }
    }

    pub fn constants(&self) -> &Arc<BTreeMap<&'static str, f64>> {
        &self.constants
    }
    pub fn regime(&self) -> Regime {
        self.regime
    }

    /// Evaluate all applicable checks on one snapshot.
    pub fn report(&mut self, profile: &Profile) -> MonitorReport {
        let d = derivatives(profile, &self.p, self.stencil);
        self.report_with_derivs(profile, &d)
    }

    pub fn report_with_derivs(&mut self, profile: &Profile, d: &Derivs) -> MonitorReport {
        let t = profile.t;
        let state = ClassState::at(&self.p, t);
        let (a_t, b_t) = (state.a_t, state.b_t);
        let width_t = b_t - a_t;
        let rho = profile.grid.nodes();
        let h = profile.grid.spacing();
        let r_half = profile.grid.half_width();
        let alpha = self.p.alpha_f64();
        let eps = self.reg.epsilon;
        let n = rho.len();

        let mut checks = Vec::new();
        let mut diag: BTreeMap<&'static str, f64> = BTreeMap::new();

        // mass conservation: the discrete integral of v″ tracks the class width
        let tail = 2.0 * (-r_half).exp()
            * (width_t.abs() + self.reg.delta * eps.powf(2.0 * (alpha - 1.0)));
        let mass_bound = tail + 10.0 * h * h * self.width0;
        checks.push(Check::absolute(
            names::MASS,
            mass_error(&d.d2, h, width_t),
            mass_bound,
        ));

        // v′ stays inside the class band up to the boundary-closure residual
        let band_tol = 1e-6 + tail;
        let range_obs = (max_slice(&d.d1) - b_t).max(a_t - min_slice(&d.d1));
        checks.push(Check::absolute(names::VPRIME_RANGE, range_obs, band_tol));

        match self.regime {
            Regime::Contracting => {
                checks.push(Check::with_slack(
                    names::VPRIME_ENVELOPE,
                    vprime_envelope_observed(rho, &d.d1, a_t, alpha),
                    self.constants[names::VPRIME_ENVELOPE],
                    SLACK,
                ));
                let (h_max, excluded) = h_statistic(&d.d1, &d.d2, a_t, b_t);
                diag.insert("h_excluded_nodes", excluded as f64);
                diag.insert("h_max_raw", h_max);
                // width-normalized drift budget; see module docs
                let bound =
                    self.constants[names::H_STATISTIC] + 2.0_f64.ln() + (self.width0 / width_t).ln();
                checks.push(Check::absolute(names::H_STATISTIC, h_max, bound));
                checks.push(Check::with_slack(
                    names::VOLUME_FORM,
                    volume_form_observed(rho, &d.d1, &d.d2, alpha),
                    self.constants[names::VOLUME_FORM],
                    SLACK,
                ));
            }
            Regime::Collapsing => {
                let remaining = self.t_sing - t;
                checks.push(Check::with_slack(
                    names::BAND_UPPER,
                    max_slice(&d.d1) - a_t,
                    (1.0 + alpha) * remaining,
                    SLACK,
                ));
                checks.push(Check::absolute(
                    names::BAND_LOWER,
                    a_t - min_slice(&d.d1),
                    1e-8 * self.width0,
                ));

                let lin = linear_profile_deviation(rho, &profile.v, self.a_cap);
                let trend_ok = lin <= self.running_min_linear * (1.0 + SLACK);
                self.running_min_linear = self.running_min_linear.min(lin);
                checks.push(Check {
                    name: names::LINEAR_CONV,
                    observed: lin,
                    bound: 0.1 * self.constants["linear_profile_initial"],
                    margin: self.running_min_linear * (1.0 + SLACK) - lin,
                    pass: trend_ok,
                });

                let mut env_ratio: f64 = 0.0;
                for (i, &r) in rho.iter().enumerate() {
                    let env = collapse_envelope(r, alpha).min(remaining);
                    env_ratio = env_ratio.max(d.d2[i] / env);
                }
                checks.push(Check::with_slack(
                    names::V2_ENVELOPE,
                    env_ratio,
                    self.constants[names::V2_ENVELOPE],
                    SLACK,
                ));
                checks.push(Check::with_slack(
                    names::V2_TIME_DECAY,
                    max_slice(&d.d2) / remaining,
                    self.constants[names::V2_ENVELOPE],
                    SLACK,
                ));

                let mut v3r: f64 = 0.0;
                let mut v3_excluded = 0usize;
                for i in 0..n {
                    if d.d2[i] > 1e-10 {
                        v3r = v3r.max(d.d3[i].abs() / d.d2[i]);
                    } else {
                        v3_excluded += 1;
                    }
                }
                diag.insert("v3_excluded_nodes", v3_excluded as f64);
                checks.push(Check::with_slack(
                    names::V3_RATIO,
                    v3r,
                    self.constants[names::V3_RATIO],
                    SLACK,
                ));

                let (q_max, q_min, _) = q_values(rho, &d.d2, &d.d3, eps, alpha);
                checks.push(Check::absolute(
                    names::Q_UPPER,
                    q_max,
                    self.constants["q_max_initial"] + Q_DRIFT_RATE * t + 1.0,
                ));
                checks.push(Check::absolute(
                    names::Q_LOWER,
                    -q_min,
                    -self.constants["q_min_initial"] + Q_DRIFT_RATE * t + 1.0,
                ));

                // the tail limit v‴/v″ → 1 toward the cone divisor
                if d.d2[0] > 0.0 {
                    checks.push(Check::absolute(
                        names::V3_LEFT_LIMIT,
                        (d.d3[0] / d.d2[0] - 1.0).abs(),
                        0.05,
                    ));
                }
            }
            Regime::LogFano => {}
        }

        // boundary residuals: measured, never asserted
        diag.insert("boundary_w1_left", (d.d1[0] - a_t).abs());
        diag.insert("boundary_w1_right", (b_t - d.d1[n - 1]).abs());
        diag.insert("sup_v2", max_slice(&d.d2));

        MonitorReport {
            t,
            checks,
            constants: self.constants.clone(),
            diagnostics: diag,
        }
    }
}

/// Final-smallness verdict for the linear-profile convergence check: the last
/// deviation must fall below 10% of the initial one.
pub fn final_convergence_pass(reports: &[MonitorReport]) -> Option<bool> {
    let initial = reports
        .first()?
        .constants
        .get("linear_profile_initial")
        .copied()?;
    let last = reports.last()?.check(names::LINEAR_CONV)?.observed;
    Some(last < 0.1 * initial)
}
