//! Cheeseman ground-effect law.
//!
//! Physical form: `f = ΣΩ²·k_T·μ(r/4d)² / (1 − μ(r/4d)²)`, singular at
//! `d = r√μ/4`. Identified form: `f = α·ΣΩ² / (d² − β)` with `β = μr²/16`
//! and `α = k_T·β`. Both saturate at a ceiling force `f_cap`.

use crate::dynamics::{DroneParams, RotorCommand, GRAVITY};
use crate::error::{Error, Result};

/// Default guard on `d² − β` for the identified law (m²).
pub const DEFAULT_SINGULARITY_EPS: f64 = 1e-6;

/// Default μ for a rotor count.
pub fn default_mu(n_rotors: usize) -> f64 {
    if n_rotors >= 6 {
        6.0
    } else {
        4.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundEffectParams {
    /// Propeller radius (m).
    pub radius: f64,
    /// Rotor-count coefficient.
    pub mu: f64,
    /// Thrust coefficient, shared with the vehicle.
    pub k_thrust: f64,
    /// Saturation force (N).
    pub f_cap: f64,
}

impl GroundEffectParams {
    /// Law for `drone` with propeller radius `radius`: μ from the rotor
    /// count, ceiling at a tenth of the vehicle weight.
    pub fn for_drone(drone: &DroneParams, radius: f64) -> Self {
        Self {
            radius,
            mu: default_mu(drone.n_rotors()),
            k_thrust: drone.k_thrust,
            f_cap: 0.1 * drone.mass * GRAVITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("radius", self.radius),
            ("mu", self.mu),
            ("k_thrust", self.k_thrust),
            ("f_cap", self.f_cap),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("ground effect {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Height below which the physical law is singular: `r√μ/4`.
    pub fn singular_distance(&self) -> f64 {
        self.radius * self.mu.sqrt() / 4.0
    }

    /// `β = μr²/16`, `α = k_T·β`.
    pub fn identified(&self) -> IdentifiedGroundEffect {
        let beta = self.mu * self.radius * self.radius / 16.0;
        IdentifiedGroundEffect {
            alpha: self.k_thrust * beta,
            beta,
            f_cap: self.f_cap,
            eps: DEFAULT_SINGULARITY_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifiedGroundEffect {
    /// Scale (N·s²/rad² · m²).
    pub alpha: f64,
    /// Offset (m²).
    pub beta: f64,
    /// Saturation force (N).
    pub f_cap: f64,
    /// Guard on `d² − β` (m²).
    pub eps: f64,
}

impl IdentifiedGroundEffect {
    pub fn new(alpha: f64, beta: f64, f_cap: f64) -> Self {
        Self {
            alpha,
            beta,
            f_cap,
            eps: DEFAULT_SINGULARITY_EPS,
        }
    }

    /// Unclipped `α·S / (d² − β)` for a given `S = ΣΩ²`.
    pub fn raw(&self, sum_sq: f64, d: f64) -> f64 {
        self.alpha * sum_sq / (d * d - self.beta)
    }
}

/// Physical Cheeseman law, clipped to `f_cap`.
pub fn cheeseman(gep: &GroundEffectParams, cmd: &RotorCommand, d: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::Domain(format!("height over ground must be positive, got {d}")));
    }
    if d <= gep.singular_distance() {
        return Ok(gep.f_cap);
    }
    let ratio = gep.radius / (4.0 * d);
    let x = gep.mu * ratio * ratio;
    let f = cmd.sum_squares() * gep.k_thrust * x / (1.0 - x);
    Ok(f.min(gep.f_cap))
}

/// Identified law, clipped to `f_cap`; saturates when `d² ≤ β + eps`.
pub fn cheeseman_identified(ige: &IdentifiedGroundEffect, cmd: &RotorCommand, d: f64) -> f64 {
    if d * d <= ige.beta + ige.eps {
        return ige.f_cap;
    }
    ige.raw(cmd.sum_squares(), d).min(ige.f_cap)
}
