//! Geometric observables behind the Gromov–Hausdorff statements: fiber
//! lengths, base diameters, δ-neighborhood diameters, the orbifold model
//! distance, and extrapolation of observables to the singular time.
//!
//! Length convention, fixed once: the Riemannian metric is `2·Re` of the
//! Hermitian form of `ω`. Under it,
//!   * a radial fiber path has element `√(v″/2)·dρ`, so the full fiber
//!     radial length on the reference potential is `π√((b−a)/2)`;
//!   * `(ℙ¹, κ·ω_fs)` with `Ric(ω_fs) = 2ω_fs` is the curvature-`2/κ` round
//!     sphere of diameter `π√(κ/2)`;
//!   * the orbifold model metric `k²r^{αk−2}·eucl` has radial distance
//!     `(2/α)·δ^{αk/2}` from the apex to radius δ.
//! Exponents and ratios are convention-free; absolute constants are
//! documented here and asserted against quadrature oracles.

use crate::cohomology::SurfaceParams;
use crate::discrete::{derivatives, Stencil};
use crate::profile::{Grid, Profile};
use std::collections::BTreeMap;
use thiserror::Error;

/// Riemannian metric = `RIEMANNIAN_FACTOR · Re(h)` for the Hermitian form h.
pub const RIEMANNIAN_FACTOR: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("wdelta requires 0 < delta < 1/2, got {0}")]
    DeltaRange(f64),
    #[error("orbifold model requires 0 < alpha*k < 2, got {0}")]
    ConeExponent(f64),
    #[error("extrapolation needs at least {need} samples in the fit window, have {have}")]
    InsufficientData { have: usize, need: usize },
}

/// Radial geodesic length of a fiber: `(1/√2)·∫√(v″) dρ` over the grid.
pub fn fiber_radial_length(grid: &Grid, d2: &[f64]) -> f64 {
    let vals: Vec<f64> = d2.iter().map(|&x| x.max(0.0).sqrt()).collect();
    crate::discrete::trapezoid(&vals, grid.spacing()) / std::f64::consts::SQRT_2
}

/// Diameter of `(ℙ¹, κ·ω_fs)`: `π·√(κ/2)`.
pub fn sphere_diameter(kappa: f64) -> f64 {
    std::f64::consts::PI * (kappa / 2.0).max(0.0).sqrt()
}

/// Base diameter proxy: the infinity-section pullback scale is `κ = k·v′(+R)`.
pub fn base_diameter_proxy(d1: &[f64], k: u32) -> f64 {
    sphere_diameter(f64::from(k) * d1[d1.len() - 1])
}

/// Interpolated `v′` at an off-node coordinate (linear).
fn interp(grid: &Grid, values: &[f64], rho: f64) -> f64 {
    let i = grid.index_at_or_below(rho).min(grid.len() - 2);
    let frac = (rho - grid.rho(i)) / grid.spacing();
    values[i] * (1.0 - frac) + values[i + 1] * frac
}

/// Diameter proxy of the neighborhood `W_δ = { |σ|² < δ }`: cross it
/// radially from the left edge to `ρ_δ = log(δ/(1−δ))`, then go around the
/// base at the outer edge:
///
/// ```text
///   (1/√2)·∫_{−R}^{ρ_δ} √(v″) dρ  +  π·√(k·v′(ρ_δ)/2)
/// ```
pub fn wdelta_diameter(
    grid: &Grid,
    d1: &[f64],
    d2: &[f64],
    delta: f64,
    k: u32,
) -> Result<f64, DiagnosticsError> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(DiagnosticsError::DeltaRange(delta));
    }
    let rho_delta = (delta / (1.0 - delta)).ln();
    let h = grid.spacing();
    let last = grid.index_at_or_below(rho_delta).min(grid.len() - 2);
    let mut radial = 0.0;
    let f = |i: usize| d2[i].max(0.0).sqrt();
    for i in 1..=last {
        radial += 0.5 * (f(i - 1) + f(i)) * h;
    }
    // fractional cell up to ρ_δ
    let frac = (rho_delta - grid.rho(last)) / h;
    if frac > 0.0 {
        let f_end = f(last) * (1.0 - frac) + f(last + 1) * frac;
        radial += 0.5 * (f(last) + f_end) * frac * h;
    }
    let base = sphere_diameter(f64::from(k) * interp(grid, d1, rho_delta));
    Ok(radial / std::f64::consts::SQRT_2 + base)
}

/// Radial distance to the orbifold point in the model metric
/// `k²·r^{αk−2}·eucl`: the closed form `∫₀^δ k·r^{(αk−2)/2} dr = (2/α)·δ^{αk/2}`.
pub fn orbifold_model_distance(delta: f64, alpha: f64, k: u32) -> Result<f64, DiagnosticsError> {
    let ak = alpha * f64::from(k);
    if !(ak > 0.0 && ak < 2.0) {
        return Err(DiagnosticsError::ConeExponent(ak));
    }
    Ok((2.0 / alpha) * delta.powf(ak / 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FitModel {
    PowerLaw,
    Linear,
}

/// Result of extrapolating an observable to the singular time.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Extrapolation {
    pub value_at_t: f64,
    /// Power-law exponent `p` in `c·(T−t)^p`, or the slope of the affine fit.
    pub exponent: f64,
    /// R² of the fit (log-log for the power law).
    pub quality: f64,
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

/// Minimum sample count in the fit window.
pub const FIT_MIN_SAMPLES: usize = 8;

/// Fit `value ≈ c·(T−t)^p` (power law) or `value ≈ m·t + q` (linear) over
/// the samples with `t` in the final 20% of `[0, T]`, and extrapolate to `T`.
pub fn extrapolate_to_singular_time(
    series: &[(f64, f64)],
    t_sing: f64,
    model: FitModel,
) -> Result<Extrapolation, DiagnosticsError> {
    let window: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|&(t, _)| t >= 0.8 * t_sing && t < t_sing)
        .collect();
    if window.len() < FIT_MIN_SAMPLES {
        return Err(DiagnosticsError::InsufficientData {
            have: window.len(),
            need: FIT_MIN_SAMPLES,
        });
    }
    match model {
        FitModel::PowerLaw => {
            let pts: Vec<(f64, f64)> = window
                .iter()
                .filter(|&&(t, v)| v > 0.0 && t_sing - t > 0.0)
                .map(|&(t, v)| ((t_sing - t).ln(), v.ln()))
                .collect();
            if pts.len() < FIT_MIN_SAMPLES {
                return Err(DiagnosticsError::InsufficientData {
                    have: pts.len(),
                    need: FIT_MIN_SAMPLES,
                });
            }
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let (p, _c, r2) = least_squares(&xs, &ys);
            Ok(Extrapolation {
                value_at_t: 0.0,
                exponent: p,
                quality: r2,
            })
        }
        FitModel::Linear => {
            let xs: Vec<f64> = window.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = window.iter().map(|p| p.1).collect();
            let (m, q, r2) = least_squares(&xs, &ys);
            Ok(Extrapolation {
                value_at_t: m * t_sing + q,
                exponent: m,
                quality: r2,
            })
        }
    }
}

/// Root of the linear fit of a series (where the affine extrapolation
/// crosses zero).
pub fn linear_crossing(series: &[(f64, f64)], t_sing: f64) -> Result<f64, DiagnosticsError> {
    let window: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|&(t, _)| t >= 0.8 * t_sing)
        .collect();
    if window.len() < FIT_MIN_SAMPLES {
        return Err(DiagnosticsError::InsufficientData {
            have: window.len(),
            need: FIT_MIN_SAMPLES,
        });
    }
    let xs: Vec<f64> = window.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = window.iter().map(|p| p.1).collect();
    let (m, q, _) = least_squares(&xs, &ys);
    Ok(-q / m)
}

/// Per-snapshot geometric observables.
#[derive(Debug, Clone, PartialEq)]
pub struct GhReport {
    pub t: f64,
    pub fiber_radial_length: f64,
    pub base_diameter_proxy: f64,
    /// δ ↦ diameter proxy, ordered by δ.
    pub wdelta_diameters: BTreeMap<String, f64>,
    pub wdelta: Vec<(f64, f64)>,
}

/// Default δ ladder for the neighborhood diameters.
pub const WDELTA_LADDER: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

impl GhReport {
    pub fn compute(
        profile: &Profile,
        p: &SurfaceParams,
        stencil: Stencil,
        deltas: &[f64],
    ) -> Result<Self, DiagnosticsError> {
        let d = derivatives(profile, p, stencil);
        let grid = &profile.grid;
        let mut wdelta = Vec::with_capacity(deltas.len());
        let mut map = BTreeMap::new();
        for &delta in deltas {
            let diam = wdelta_diameter(grid, &d.d1, &d.d2, delta, p.k())?;
            wdelta.push((delta, diam));
            map.insert(format!("{delta:e}"), diam);
        }
        Ok(GhReport {
            t: profile.t,
            fiber_radial_length: fiber_radial_length(grid, &d.d2),
            base_diameter_proxy: base_diameter_proxy(&d.d1, p.k()),
            wdelta_diameters: map,
            wdelta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohomology::rat;
    use crate::profile::reference_potential;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn params() -> SurfaceParams {
        SurfaceParams::new(2, rat(1, 1), rat(4, 1), rat(1, 4)).unwrap()
    }

    fn reference_profile(grid: &Arc<Grid>, p: &SurfaceParams, t: f64) -> Profile {
        let v = grid
            .nodes()
            .iter()
            .map(|&rho| reference_potential(p, t, rho).v)
            .collect();
        Profile::new(grid.clone(), v, t)
    }

    #[test]
    fn fiber_length_oracle_on_reference() {
        // (1/√2)∫√((b−a)e^ρ)/(1+e^ρ) dρ = π√((b−a)/2) (substitute u = e^{ρ/2})
        let p = params();
        let grid = Arc::new(Grid::new(32.0, 32769).unwrap());
        let prof = reference_profile(&grid, &p, 0.0);
        let d = derivatives(&prof, &p, Stencil::Central4);
        let got = fiber_radial_length(&grid, &d.d2);
        let want = std::f64::consts::PI * (1.5_f64).sqrt();
        assert_relative_eq!(got, want, max_relative = 1e-6);
    }

    #[test]
    fn fiber_length_vanishes_with_v2() {
        let grid = Grid::new(10.0, 101).unwrap();
        assert_eq!(fiber_radial_length(&grid, &vec![0.0; 101]), 0.0);
    }

    #[test]
    fn base_diameter_oracle() {
        // κ = k·b = 8 at t=0 gives π√(8/2) = 2π; verified against the
        // great-circle quadrature ∫₀^∞ √(2κ)/(1+r²) dr = π√(κ/2).
        let p = params();
        let grid = Arc::new(Grid::new(15.0, 2049).unwrap());
        let prof = reference_profile(&grid, &p, 0.0);
        let d = derivatives(&prof, &p, Stencil::Central4);
        let got = base_diameter_proxy(&d.d1, p.k());
        assert_relative_eq!(got, 2.0 * std::f64::consts::PI, max_relative = 1e-6);

        let kappa = 3.7;
        let mut quad = 0.0;
        let n = 4_000_000;
        let rmax = 4000.0;
        let dr = rmax / n as f64;
        for i in 0..n {
            let r = (i as f64 + 0.5) * dr;
            quad += (2.0 * kappa).sqrt() / (1.0 + r * r) * dr;
        }
        assert_relative_eq!(sphere_diameter(kappa), quad, max_relative = 1e-3);
    }

    #[test]
    fn base_diameter_scales_as_sqrt_kappa() {
        let a = sphere_diameter(2.0 * 1.23);
        let b = sphere_diameter(1.23);
        assert_relative_eq!(a / b, 2.0_f64.sqrt(), max_relative = 1e-14);
        assert_eq!(sphere_diameter(0.0), 0.0);
    }

    #[test]
    fn orbifold_distance_examples_and_oracle() {
        // α=1/4, k=2, δ=0.01 → 8·0.01^{1/4}
        let got = orbifold_model_distance(0.01, 0.25, 2).unwrap();
        assert_relative_eq!(got, 2.5298221281347035, max_relative = 1e-12);
        assert!(orbifold_model_distance(0.01, 0.9, 3).is_err());

        // quadrature oracle over a grid of (α, k, δ)
        for &alpha in &[0.2, 0.4, 0.6] {
            for k in 1..=3u32 {
                if alpha * f64::from(k) >= 2.0 {
                    continue;
                }
                for &delta in &[0.3, 0.05, 0.004] {
                    let closed = orbifold_model_distance(delta, alpha, k).unwrap();
                    // ∫₀^δ k r^{(αk−2)/2} dr with an analytic head below η
                    let s = (alpha * f64::from(k) - 2.0) / 2.0;
                    let eta = delta * 1e-6;
                    let head = f64::from(k) * eta.powf(s + 1.0) / (s + 1.0);
                    let n = 200_000;
                    let dr = (delta - eta) / n as f64;
                    let mut quad = head;
                    for i in 0..n {
                        let r = eta + (i as f64 + 0.5) * dr;
                        quad += f64::from(k) * r.powf(s) * dr;
                    }
                    assert_relative_eq!(closed, quad, max_relative = 1e-10);
                }
            }
        }
        // δ → 0 contracts to the point
        assert!(orbifold_model_distance(1e-30, 0.25, 2).unwrap() < 1e-6);
    }

    #[test]
    fn wdelta_monotone_and_continuous_at_half() {
        let p = params();
        let grid = Arc::new(Grid::new(15.0, 2049).unwrap());
        let prof = reference_profile(&grid, &p, 0.0);
        let d = derivatives(&prof, &p, Stencil::Central4);
        let mut prev = 0.0;
        for &delta in &[1e-4, 1e-3, 1e-2, 1e-1, 0.3, 0.49] {
            let w = wdelta_diameter(&grid, &d.d1, &d.d2, delta, 2).unwrap();
            assert!(w > prev, "wdelta not monotone at {delta}");
            prev = w;
        }
        // endpoint continuity at δ → 1/2⁻: radial half-profile + base at ρ=0
        let w_half = wdelta_diameter(&grid, &d.d1, &d.d2, 0.5 - 1e-12, 2).unwrap();
        let c = grid.center();
        let radial: f64 = (1..=c)
            .map(|i| 0.5 * (d.d2[i - 1].sqrt() + d.d2[i].sqrt()) * grid.spacing())
            .sum::<f64>()
            / std::f64::consts::SQRT_2;
        let base = sphere_diameter(2.0 * d.d1[c]);
        assert_relative_eq!(w_half, radial + base, max_relative = 1e-6);
        assert!(wdelta_diameter(&grid, &d.d1, &d.d2, 0.6, 2).is_err());
    }

    #[test]
    fn power_law_fit_recovers_exponent() {
        let t_sing = 4.0 / 3.0;
        let series: Vec<(f64, f64)> = (0..200)
            .map(|i| {
                let t = t_sing * (0.5 + 0.49 * i as f64 / 199.0);
                (t, 2.7 * (t_sing - t).powf(0.5))
            })
            .collect();
        let fit = extrapolate_to_singular_time(&series, t_sing, FitModel::PowerLaw).unwrap();
        assert_relative_eq!(fit.exponent, 0.5, epsilon = 1e-6);
        assert!(fit.quality > 1.0 - 1e-9);
    }

    #[test]
    fn linear_fit_finds_class_crossing() {
        let t_sing = 4.0 / 3.0;
        // a_t series: slope −3/4, crossing exactly at T
        let series: Vec<(f64, f64)> = (0..50)
            .map(|i| {
                let t = t_sing * (0.7 + 0.29 * i as f64 / 49.0);
                (t, 1.0 - 0.75 * t)
            })
            .collect();
        let crossing = linear_crossing(&series, t_sing).unwrap();
        assert_relative_eq!(crossing, t_sing, epsilon = 1e-9);
        let fit = extrapolate_to_singular_time(&series, t_sing, FitModel::Linear).unwrap();
        assert_relative_eq!(fit.exponent, -0.75, epsilon = 1e-9);
        assert!(fit.value_at_t.abs() < 1e-9);
    }

    #[test]
    fn insufficient_samples_is_an_error() {
        let series = vec![(0.1, 1.0), (0.2, 0.9)];
        assert!(matches!(
            extrapolate_to_singular_time(&series, 1.0, FitModel::Linear),
            Err(DiagnosticsError::InsufficientData { .. })
        ));
    }
}
