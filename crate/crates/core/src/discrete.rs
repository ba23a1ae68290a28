//! Finite-difference machinery on the uniform ρ-grid.
//!
//! Boundary closure: the deviation `w = v − v̂_t` from the reference potential
//! decays like `e^{∓ρ}` toward `±R`, so ghost nodes extrapolate `w`
//! geometrically with ratio `e^{−h}`. On tails of that exact form the
//! extension is exact; constant ("zero first difference") extrapolation would
//! inject an `O(w′/h)` error into the boundary second derivative, which can
//! overwhelm its exponentially small true value.

use crate::cohomology::{class_at_f64, SurfaceParams};
use crate::profile::{Grid, Profile};

/// Spatial derivative stencils. `Central4` is the production default;
/// `Central2` is the fallback for convergence studies. Third derivatives
/// always use the second-order five-point stencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Stencil {
    Central2,
    Central4,
}

/// Ghost values extending a profile two layers past each end of the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ghosts {
    /// `v` at `ρ = −R−h` and `ρ = −R−2h`.
    pub left: [f64; 2],
    /// `v` at `ρ = R+h` and `ρ = R+2h`.
    pub right: [f64; 2],
}

fn log1p_exp(rho: f64) -> f64 {
    if rho > 0.0 {
        rho + (-rho).exp().ln_1p()
    } else {
        rho.exp().ln_1p()
    }
}

fn reference_value(a_t: f64, b_t: f64, rho: f64) -> f64 {
    a_t * rho + (b_t - a_t) * log1p_exp(rho)
}

/// Compute the ghost extension of `v` at time `t`.
pub fn boundary_ghosts(grid: &Grid, v: &[f64], p: &SurfaceParams, t: f64) -> Ghosts {
    let (a_t, b_t) = class_at_f64(p, t);
    let n = grid.len();
    let h = grid.spacing();
    let q = (-h).exp();
    let r_edge = grid.rho(n - 1);
    let l_edge = grid.rho(0);

    let wr0 = v[n - 1] - reference_value(a_t, b_t, r_edge);
    let wr1 = v[n - 2] - reference_value(a_t, b_t, grid.rho(n - 2));
    let dr = wr0 - wr1;
    let right = [
        reference_value(a_t, b_t, r_edge + h) + wr0 + dr * q,
        reference_value(a_t, b_t, r_edge + 2.0 * h) + wr0 + dr * (q + q * q),
    ];

    let wl0 = v[0] - reference_value(a_t, b_t, l_edge);
    let wl1 = v[1] - reference_value(a_t, b_t, grid.rho(1));
    let dl = wl0 - wl1;
    let left = [
        reference_value(a_t, b_t, l_edge - h) + wl0 + dl * q,
        reference_value(a_t, b_t, l_edge - 2.0 * h) + wl0 + dl * (q + q * q),
    ];

    Ghosts { left, right }
}

/// Profile extended by two ghost layers: `ext[i+2] = v[i]`.
pub fn extend(grid: &Grid, v: &[f64], p: &SurfaceParams, t: f64, ext: &mut Vec<f64>) {
    let g = boundary_ghosts(grid, v, p, t);
    ext.clear();
    ext.reserve(v.len() + 4);
    ext.push(g.left[1]);
    ext.push(g.left[0]);
    ext.extend_from_slice(v);
    ext.push(g.right[0]);
    ext.push(g.right[1]);
}

/// First three discrete ρ-derivatives at every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivs {
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub d3: Vec<f64>,
}

pub fn first_two_from_ext(ext: &[f64], h: f64, stencil: Stencil, d1: &mut Vec<f64>, d2: &mut Vec<f64>) {
    let n = ext.len() - 4;
    d1.clear();
    d2.clear();
    d1.reserve(n);
    d2.reserve(n);
    match stencil {
        Stencil::Central2 => {
            let ih = 1.0 / (2.0 * h);
            let ih2 = 1.0 / (h * h);
            for i in 0..n {
                let j = i + 2;
                d1.push((ext[j + 1] - ext[j - 1]) * ih);
                d2.push((ext[j + 1] - 2.0 * ext[j] + ext[j - 1]) * ih2);
            }
        }
        Stencil::Central4 => {
            let ih = 1.0 / (12.0 * h);
            let ih2 = 1.0 / (12.0 * h * h);
            for i in 0..n {
                let j = i + 2;
                d1.push((-ext[j + 2] + 8.0 * ext[j + 1] - 8.0 * ext[j - 1] + ext[j - 2]) * ih);
                d2.push(
                    (-ext[j + 2] + 16.0 * ext[j + 1] - 30.0 * ext[j] + 16.0 * ext[j - 1]
                        - ext[j - 2])
                        * ih2,
                );
            }
        }
    }
}

fn third_from_ext(ext: &[f64], h: f64, d3: &mut Vec<f64>) {
    let n = ext.len() - 4;
    d3.clear();
    d3.reserve(n);
    let ih3 = 1.0 / (2.0 * h * h * h);
    for i in 0..n {
        let j = i + 2;
        d3.push((ext[j + 2] - 2.0 * ext[j + 1] + 2.0 * ext[j - 1] - ext[j - 2]) * ih3);
    }
}

/// Discrete derivatives of a profile, ghost-extended with the reference
/// potential at the profile's own time.
pub fn derivatives(profile: &Profile, p: &SurfaceParams, stencil: Stencil) -> Derivs {
    let mut ext = Vec::new();
    extend(&profile.grid, &profile.v, p, profile.t, &mut ext);
    let h = profile.grid.spacing();
    let mut d1 = Vec::new();
    let mut d2 = Vec::new();
    let mut d3 = Vec::new();
    first_two_from_ext(&ext, h, stencil, &mut d1, &mut d2);
    third_from_ext(&ext, h, &mut d3);
    Derivs { d1, d2, d3 }
}

/// Trapezoid rule over the whole grid.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let sum: f64 = values.iter().sum();
    h * (sum - 0.5 * (values[0] + values[values.len() - 1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohomology::{rat, SurfaceParams};
    use crate::profile::{reference_potential, Grid};
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
    fn ghosts_are_exact_on_the_reference_potential() {
        let p = params();
        let grid = Arc::new(Grid::new(15.0, 257).unwrap());
        let prof = reference_profile(&grid, &p, 0.3);
        let g = boundary_ghosts(&grid, &prof.v, &p, 0.3);
        let h = grid.spacing();
        let r = grid.half_width();
        // w ≡ 0, so ghosts must reproduce v̂ at the ghost coordinates exactly
        assert_relative_eq!(
            g.right[0],
            reference_potential(&p, 0.3, grid.rho(256) + h).v,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            g.left[1],
            reference_potential(&p, 0.3, -r - 2.0 * h).v,
            max_relative = 1e-13
        );
    }

    #[test]
    fn ghosts_reproduce_exponential_tails_exactly() {
        // v = v̂ + (A + B e^{−ρ}) near the right edge is the model tail form;
        // the geometric extension must continue it without error.
        let p = params();
        let grid = Arc::new(Grid::new(15.0, 257).unwrap());
        let (a_b, b_b) = (1.0, 4.0);
        let v: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&rho| {
                reference_value(a_b, b_b, rho) + 0.7 + 0.3 * (-(rho - 13.0)).exp().min(1e3)
            })
            .collect();
        let g = boundary_ghosts(&grid, &v, &p, 0.0);
        let h = grid.spacing();
        let rho_g = grid.rho(256) + h;
        let want = reference_value(a_b, b_b, rho_g) + 0.7 + 0.3 * (-(rho_g - 13.0)).exp();
        assert_relative_eq!(g.right[0], want, max_relative = 1e-11);
    }

    #[test]
    fn stencil_orders_on_reference_potential() {
        let p = params();
        for (n, tol2, tol4) in [(513usize, 3e-4, 2e-7), (1025, 8e-5, 2e-8)] {
            let grid = Arc::new(Grid::new(15.0, n).unwrap());
            let prof = reference_profile(&grid, &p, 0.0);
            let c2 = derivatives(&prof, &p, Stencil::Central2);
            let c4 = derivatives(&prof, &p, Stencil::Central4);
            let mut err2: f64 = 0.0;
            let mut err4: f64 = 0.0;
            let mut err3: f64 = 0.0;
            for (i, &rho) in grid.nodes().iter().enumerate() {
                let r = reference_potential(&p, 0.0, rho);
                err2 = err2.max((c2.d2[i] - r.d2).abs());
                err4 = err4.max((c4.d2[i] - r.d2).abs());
                err3 = err3.max((c4.d3[i] - r.d3).abs());
            }
            assert!(err2 < tol2, "central2 err {err2} at n={n}");
            assert!(err4 < tol4, "central4 err {err4} at n={n}");
            assert!(err3 < 10.0 * tol2, "third-derivative err {err3} at n={n}");
        }
    }

    #[test]
    fn boundary_first_derivative_tracks_class_edges() {
        // v′(±R) from the ghost-closed stencil stays within the reference
        // tail bound of the class coefficients.
        let p = params();
        let grid = Arc::new(Grid::new(15.0, 513).unwrap());
        let prof = reference_profile(&grid, &p, 0.0);
        let d = derivatives(&prof, &p, Stencil::Central4);
        let tail = 3.0 * (-15.0_f64).exp();
        assert!((d.d1[512] - 4.0).abs() <= 2.0 * tail);
        assert!((d.d1[0] - 1.0).abs() <= 2.0 * tail);
    }

    #[test]
    fn trapezoid_mass_of_reference_second_derivative() {
        // ∫ v̂″ over [−R, R] = (b−a)(1 − 2e^{−R}/(1+e^{−R})): truncation-tail small
        let p = params();
        let grid = Arc::new(Grid::new(15.0, 2049).unwrap());
        let prof = reference_profile(&grid, &p, 0.0);
        let d = derivatives(&prof, &p, Stencil::Central4);
        let mass = trapezoid(&d.d2, grid.spacing());
        let tail = 2.0 * 3.0 * (-15.0_f64).exp();
        let h = grid.spacing();
        assert!((mass - 3.0).abs() <= tail + 10.0 * h * h * 3.0);
    }
}
