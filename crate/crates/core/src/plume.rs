//! Classic and line-source Gaussian plume concentration formulas with their
//! analytic partial derivatives.
//!
//! The line-source form integrates a y-aligned source over its length, so the
//! resulting concentration depends on height z and wind speed u only.

use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};
use crate::grid::DEFAULT_WIND_FLOOR;

const SQRT_2PI: f64 = 2.506628274631000502415765284811;

/// Physical parameters of the line-source plume.
///
/// `sigma_y`/`sigma_z` are empirically given diffusion parameters; `h` is the
/// effective source height, fitted within `[0, h0]`. The defaults keep
/// `sigma_z^2 > max(2 z^2, 2 h0^2)` for grids up to 50 m, which is the
/// condition making the fit residual convex in `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlumeParams {
    /// Source particle density lambda.
    pub lambda: f64,
    /// Length L of the polluted line source.
    pub source_length: f64,
    /// Horizontal diffusion parameter sigma_y (m).
    pub sigma_y: f64,
    /// Vertical diffusion parameter sigma_z (m).
    pub sigma_z: f64,
    /// Effective source height H (m), within [0, h0].
    pub h: f64,
    /// Upper bound H0 for the fitted height (m).
    pub h0: f64,
    /// Lower clamp for wind speeds entering denominators (m/s).
    #[serde(default = "default_wind_floor")]
    pub wind_floor: f64,
}

fn default_wind_floor() -> f64 {
    DEFAULT_WIND_FLOOR
}

impl Default for PlumeParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            source_length: 20.0,
            sigma_y: 50.0,
            sigma_z: 75.0,
            h: 25.0,
            h0: 50.0,
            wind_floor: DEFAULT_WIND_FLOOR,
        }
    }
}

impl PlumeParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("source_length", self.source_length),
            ("sigma_y", self.sigma_y),
            ("sigma_z", self.sigma_z),
            ("h0", self.h0),
            ("wind_floor", self.wind_floor),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidPlumeParams(format!("{name} = {v} must be > 0")));
            }
        }
        if !self.h.is_finite() || self.h < 0.0 || self.h > self.h0 {
            return Err(Error::InvalidPlumeParams(format!(
                "h = {} must lie in [0, h0 = {}]",
                self.h, self.h0
            )));
        }
        Ok(())
    }

    /// Checks the convexity guard `sigma_z^2 > max(2 z_max^2, 2 h0^2)` for
    /// the tallest height `z_max` the model will be evaluated at.
    pub fn check_convexity_guard(&self, z_max: f64) -> Result<()> {
        let sigma_z_sq = self.sigma_z * self.sigma_z;
        let bound = (2.0 * z_max * z_max).max(2.0 * self.h0 * self.h0);
        if sigma_z_sq > bound {
            Ok(())
        } else {
            Err(Error::ConvexityGuard { sigma_z_sq, bound, z_max, h0: self.h0 })
        }
    }

    /// Clamped wind speed and whether clamping occurred.
    pub fn effective_wind(&self, u: f64) -> (f64, bool) {
        if u < self.wind_floor {
            (self.wind_floor, true)
        } else {
            (u, false)
        }
    }
}

/// Standard normal tail function Q(t) = P(Z > t).
pub fn gaussian_q(t: f64) -> f64 {
    0.5 * erfc(t / std::f64::consts::SQRT_2)
}

/// Point-source concentration at `pos` for source strength `q_src`.
pub fn classic_gpm(pos: [f64; 3], params: &PlumeParams, q_src: f64, u: f64) -> Result<f64> {
    params.validate()?;
    if !(u > 0.0) {
        return Err(Error::NonPositiveWind(u));
    }
    let [_, y, z] = pos;
    let sy = params.sigma_y;
    let sz = params.sigma_z;
    let dz = z - params.h;
    Ok(q_src / (2.0 * std::f64::consts::PI * sy * sz * u)
        * (-dz * dz / (2.0 * sz * sz)).exp()
        * (-y * y / (2.0 * sy * sy)).exp())
}

/// Line-source concentration; depends on `pos` only through its height.
///
/// Wind below the floor is clamped; call [`PlumeParams::effective_wind`] when
/// the clamping flag is needed.
pub fn revised_gpm(pos: [f64; 3], u: f64, params: &PlumeParams) -> f64 {
    revised_gpm_z(pos[2], u, params)
}

/// Same as [`revised_gpm`] with the height passed directly.
pub fn revised_gpm_z(z: f64, u: f64, params: &PlumeParams) -> f64 {
    let (u, _) = params.effective_wind(u);
    let sz = params.sigma_z;
    let dz = z - params.h;
    let bracket = 1.0 - 2.0 * gaussian_q(params.source_length / (2.0 * params.sigma_y));
    params.lambda / (SQRT_2PI * sz * u) * (-dz * dz / (2.0 * sz * sz)).exp() * bracket
}

/// Analytic partials (dC/dx, dC/dy, dC/dz, dC/du) of [`revised_gpm`].
///
/// x and y partials are identically zero; they are kept so the interface has
/// the same four variables as the model input.
pub fn revised_gpm_grad(pos: [f64; 3], u: f64, params: &PlumeParams) -> [f64; 4] {
    let (u_eff, _) = params.effective_wind(u);
    let c = revised_gpm_z(pos[2], u_eff, params);
    let sz2 = params.sigma_z * params.sigma_z;
    [0.0, 0.0, c * (params.h - pos[2]) / sz2, -c / u_eff]
}

/// Second derivative of [`revised_gpm`] with respect to the source height.
pub(crate) fn revised_gpm_d2h(z: f64, u: f64, params: &PlumeParams) -> f64 {
    let c = revised_gpm_z(z, u, params);
    let sz2 = params.sigma_z * params.sigma_z;
    let dz = z - params.h;
    c * (dz * dz / (sz2 * sz2) - 1.0 / sz2)
}

/// First derivative of [`revised_gpm`] with respect to the source height.
pub(crate) fn revised_gpm_dh(z: f64, u: f64, params: &PlumeParams) -> f64 {
    let c = revised_gpm_z(z, u, params);
    c * (z - params.h) / (params.sigma_z * params.sigma_z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_q_fixtures() {
        assert_relative_eq!(gaussian_q(0.0), 0.5, max_relative = 1e-15);
        assert!(gaussian_q(8.0) < 1e-15);
        // Frozen from numerical quadrature of the standard normal density.
        assert_relative_eq!(gaussian_q(1.0), 0.15865525393145705, max_relative = 1e-12);
    }

    #[test]
    fn classic_gpm_centerline() {
        let p = PlumeParams { sigma_y: 10.0, sigma_z: 10.0, h: 20.0, ..Default::default() };
        let c = classic_gpm([0.0, 0.0, 20.0], &p, 1.0, 1.0).unwrap();
        assert_relative_eq!(c, 1.0 / (2.0 * std::f64::consts::PI * 100.0), max_relative = 1e-14);
    }

    #[test]
    fn classic_gpm_wind_scaling() {
        let p = PlumeParams::default();
        let c1 = classic_gpm([0.0, 3.0, 12.0], &p, 2.0, 1.0).unwrap();
        let c2 = classic_gpm([0.0, 3.0, 12.0], &p, 2.0, 2.0).unwrap();
        assert_relative_eq!(c1, 2.0 * c2, max_relative = 1e-14);
    }

    #[test]
    fn classic_gpm_one_sigma_offset() {
        let p = PlumeParams { sigma_y: 10.0, sigma_z: 10.0, h: 20.0, ..Default::default() };
        let c = classic_gpm([0.0, 10.0, 30.0], &p, 1.0, 1.0).unwrap();
        // Hand-evaluated: 1/(2*pi*100) * e^-1
        assert_relative_eq!(
            c,
            (-1.0f64).exp() / (2.0 * std::f64::consts::PI * 100.0),
            max_relative = 1e-14
        );
        assert_relative_eq!(c, 5.8550e-4, max_relative = 1e-4);
    }

    #[test]
    fn classic_gpm_rejects_nonpositive_wind() {
        let p = PlumeParams::default();
        assert!(classic_gpm([0.0; 3], &p, 1.0, 0.0).is_err());
    }

    #[test]
    fn revised_gpm_wide_source_limit() {
        // L -> infinity makes the bracket 1; at z = H the exponential is 1.
        let p = PlumeParams {
            lambda: 1.0,
            source_length: 1e6,
            sigma_y: 10.0,
            sigma_z: 10.0,
            h: 20.0,
            ..Default::default()
        };
        let c = revised_gpm([0.0, 0.0, 20.0], 1.0, &p);
        assert_relative_eq!(c, 1.0 / (SQRT_2PI * 10.0), max_relative = 1e-12);
    }

    #[test]
    fn revised_gpm_zero_source() {
        let p = PlumeParams { lambda: 0.0, ..Default::default() };
        // lambda = 0 fails validation for fitting but evaluates to zero.
        assert_eq!(revised_gpm([3.0, 7.0, 11.0], 2.0, &p), 0.0);
    }

    /// Quadrature of the integral form of the line-source model over
    /// y in [-L/2, L/2], independent of the closed form.
    fn line_source_quadrature(z: f64, u: f64, p: &PlumeParams) -> f64 {
        let (u, _) = p.effective_wind(u);
        let integrand = |y: f64| {
            p.lambda / (2.0 * std::f64::consts::PI * p.sigma_y * p.sigma_z * u)
                * (-(z - p.h) * (z - p.h) / (2.0 * p.sigma_z * p.sigma_z)
                    - y * y / (2.0 * p.sigma_y * p.sigma_y))
                    .exp()
        };
        // Composite Simpson.
        let a = -p.source_length / 2.0;
        let b = p.source_length / 2.0;
        let n = 4000;
        let h = (b - a) / n as f64;
        let mut sum = integrand(a) + integrand(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            sum += integrand(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        sum * h / 3.0
    }

    #[test]
    fn closed_form_matches_quadrature() {
        let p = PlumeParams {
            lambda: 1.0,
            source_length: 20.0,
            sigma_y: 50.0,
            sigma_z: 75.0,
            h: 5.0,
            h0: 50.0,
            wind_floor: 0.1,
        };
        let c = revised_gpm([0.0, 0.0, 10.0], 2.0, &p);
        let q = line_source_quadrature(10.0, 2.0, &p);
        assert_relative_eq!(c, q, max_relative = 1e-10);
    }

    #[test]
    fn grad_zero_at_source_height() {
        let p = PlumeParams::default();
        let g = revised_gpm_grad([0.0, 0.0, p.h], 2.0, &p);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1], 0.0);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn grad_du_at_unit_wind() {
        let p = PlumeParams::default();
        let c = revised_gpm([0.0, 0.0, 10.0], 1.0, &p);
        let g = revised_gpm_grad([0.0, 0.0, 10.0], 1.0, &p);
        assert_relative_eq!(g[3], -c, max_relative = 1e-14);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let p = PlumeParams { h: 18.0, ..Default::default() };
        for &(z, u) in &[(3.0, 0.7), (22.0, 1.9), (41.0, 4.2)] {
            let g = revised_gpm_grad([1.0, 2.0, z], u, &p);
            let hz = 1e-5 * z.abs().max(1.0);
            let dz =
                (revised_gpm_z(z + hz, u, &p) - revised_gpm_z(z - hz, u, &p)) / (2.0 * hz);
            let hu = 1e-5 * u;
            let du =
                (revised_gpm_z(z, u + hu, &p) - revised_gpm_z(z, u - hu, &p)) / (2.0 * hu);
            assert_relative_eq!(g[2], dz, max_relative = 1e-6);
            assert_relative_eq!(g[3], du, max_relative = 1e-6);
        }
    }

    #[test]
    fn even_about_source_height() {
        let p = PlumeParams { h: 20.0, ..Default::default() };
        for d in [1.0, 5.0, 13.0] {
            assert_relative_eq!(
                revised_gpm_z(20.0 + d, 2.0, &p),
                revised_gpm_z(20.0 - d, 2.0, &p),
                max_relative = 1e-14
            );
        }
        assert!(revised_gpm_z(21.0, 2.0, &p) > revised_gpm_z(25.0, 2.0, &p));
    }

    #[test]
    fn bracket_monotone_in_length() {
        let mut last = 0.0;
        for l in [1.0, 5.0, 20.0, 100.0, 400.0] {
            let b = 1.0 - 2.0 * gaussian_q(l / (2.0 * 50.0));
            assert!(b > last && b < 1.0);
            last = b;
        }
    }

    #[test]
    fn guard_check() {
        let p = PlumeParams::default(); // sigma_z = 75, h0 = 50
        assert!(p.check_convexity_guard(50.0).is_ok());
        assert!(p.check_convexity_guard(60.0).is_err());
        let tight = PlumeParams { sigma_z: 5.0, ..Default::default() };
        assert!(tight.check_convexity_guard(50.0).is_err());
    }
}
