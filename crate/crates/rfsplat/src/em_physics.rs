//! Closed-form frequency-dependent propagation quantities.
//!
//! Free-space path loss, interface reflection/transmission/absorption,
//! Snell refraction, wavenumber, and single-knife-edge diffraction loss.
//! Two interface models coexist:
//!
//! * `paper_literal_coefficients` evaluates the sqrt-impedance-ratio forms
//!   verbatim; its T is a field-coefficient square without the impedance
//!   correction, so A = 1 - R - T can come out negative. Kept for
//!   documentation and comparison, never used by the tracer.
//! * `physical_coefficients` uses the complex intrinsic impedance of the
//!   slab and splits the non-reflected power between transmission and
//!   absorption with the slab's attenuation constant, so R + T + A = 1
//!   by construction. This is the model the oracle traces with.

use num_complex::Complex64;
use thiserror::Error;

use crate::scene::Material;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Vacuum permeability, H/m.
pub const MU_0: f64 = 4.0e-7 * std::f64::consts::PI;
/// Vacuum permittivity, F/m.
pub const EPS_0: f64 = 1.0 / (MU_0 * SPEED_OF_LIGHT * SPEED_OF_LIGHT);

#[derive(Debug, Error, PartialEq)]
pub enum PhysicsError {
    #[error("domain error: {0}")]
    Domain(String),
}

/// Power fractions at a material interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceCoefficients {
    /// Reflected power fraction.
    pub r: f64,
    /// Transmitted power fraction.
    pub t: f64,
    /// Absorbed power fraction. May be negative in the paper-literal model.
    pub a: f64,
}

/// Free-space path loss in dB: 20*log10(4*pi*d*f/c).
pub fn free_space_path_loss(d: f64, f: f64) -> Result<f64, PhysicsError> {
    if d <= 0.0 {
        return Err(PhysicsError::Domain(format!("distance must be > 0, got {d}")));
    }
    if f <= 0.0 {
        return Err(PhysicsError::Domain(format!("frequency must be > 0, got {f}")));
    }
    Ok(20.0 * (4.0 * std::f64::consts::PI * d * f / SPEED_OF_LIGHT).log10())
}

/// Wavenumber k = 2*pi*f/c in rad/m.
pub fn wavenumber(f: f64) -> Result<f64, PhysicsError> {
    if f <= 0.0 {
        return Err(PhysicsError::Domain(format!("frequency must be > 0, got {f}")));
    }
    Ok(2.0 * std::f64::consts::PI * f / SPEED_OF_LIGHT)
}

/// Interface fractions from the sqrt-impedance-ratio forms, evaluated
/// verbatim with eta = mu/eps. A is reported as 1 - R - T without clamping
/// and can be negative away from the matched case.
pub fn paper_literal_coefficients(
    eps_m: f64,
    mu_m: f64,
    eps_0: f64,
    mu_0: f64,
) -> Result<InterfaceCoefficients, PhysicsError> {
    for (name, v) in [("eps_m", eps_m), ("mu_m", mu_m), ("eps_0", eps_0), ("mu_0", mu_0)] {
        if v <= 0.0 {
            return Err(PhysicsError::Domain(format!("{name} must be > 0, got {v}")));
        }
    }
    let eta_m = mu_m / eps_m;
    let eta_0 = mu_0 / eps_0;
    let sm = eta_m.sqrt();
    let s0 = eta_0.sqrt();
    let r = ((sm - s0) / (sm + s0)).powi(2);
    let t = (2.0 * s0 / (sm + s0)).powi(2);
    Ok(InterfaceCoefficients { r, t, a: 1.0 - r - t })
}

/// Snell refraction angle for a wave entering a medium with relative
/// constants (eps_m, mu_m) from (eps_0, mu_0):
/// sin(theta_t) = sin(theta_i) / sqrt(eps_m*mu_m / (eps_0*mu_0)).
/// `None` signals total internal reflection (rarer-medium entry past the
/// critical angle).
pub fn refraction_angle(theta_i: f64, eps_m: f64, mu_m: f64, eps_0: f64, mu_0: f64) -> Option<f64> {
    let n = (eps_m * mu_m / (eps_0 * mu_0)).sqrt();
    let s = theta_i.sin() / n;
    if s > 1.0 {
        None
    } else {
        Some(s.asin())
    }
}

/// Power fractions for a slab of `material` at `freq`, incidence angle
/// `theta_i` (TE convention). Energy-conserving: R + T + A = 1.
pub fn physical_coefficients(
    material: &Material,
    freq: f64,
    theta_i: f64,
) -> InterfaceCoefficients {
    let (eps_r, mu_r, sigma) = material.at_frequency(freq);
    let omega = 2.0 * std::f64::consts::PI * freq;
    let eps = eps_r * EPS_0;
    let mu = mu_r * MU_0;

    if sigma.is_infinite() {
        return InterfaceCoefficients { r: 1.0, t: 0.0, a: 0.0 };
    }

    let theta_t = match refraction_angle(theta_i, eps_r, mu_r, 1.0, 1.0) {
        Some(t) => t,
        None => return InterfaceCoefficients { r: 1.0, t: 0.0, a: 0.0 },
    };

    let j = Complex64::new(0.0, 1.0);
    // Intrinsic impedance of the slab and of free space.
    let eta = (j * omega * mu / (Complex64::new(sigma, omega * eps))).sqrt();
    let eta_0 = (MU_0 / EPS_0).sqrt();

    let gamma = (eta * theta_i.cos() - eta_0 * theta_t.cos())
        / (eta * theta_i.cos() + eta_0 * theta_t.cos());
    let r = gamma.norm_sqr().min(1.0);

    // Propagation constant inside the slab; its real part attenuates the
    // field, so power decays with twice that rate over the slant path.
    let prop = (j * omega * mu * Complex64::new(sigma, omega * eps)).sqrt();
    let alpha = prop.re.max(0.0);
    let path = material.thickness / theta_t.cos();
    let through = (-2.0 * alpha * path).exp();

    let t = (1.0 - r) * through;
    let a = ((1.0 - r) - t).max(0.0);
    InterfaceCoefficients { r, t, a }
}

/// Single-knife-edge diffraction loss in dB for Fresnel parameter `v`:
/// 0 for v <= -0.78, else 6.9 + 20*log10(sqrt((v-0.1)^2+1) + v - 0.1).
pub fn knife_edge_loss(v: f64) -> f64 {
    if v <= -0.78 {
        0.0
    } else {
        let u = v - 0.1;
        6.9 + 20.0 * ((u * u + 1.0).sqrt() + u).log10()
    }
}
