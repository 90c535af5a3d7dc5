//! Communication weights: how strongly two particles at a given distance
//! align their velocities.
//!
//! Three families are supported: a singular power law `s^-a`, its capped
//! (bounded) regularization `min(s^-a, cap)`, and the classical smooth
//! rational weight `K / (1 + s^2)^(b/2)`. The power-law exponent is
//! restricted to `(0, 1/2)`, the range in which colliding trajectories may
//! stick but the particle flow stays well posed.

use crate::error::{Error, Result};
use crate::geom::powf;
use alloc::format;

/// Which communication weight governs the interaction.
///
/// Construct through [`WeightSpec::singular`], [`WeightSpec::capped`] or
/// [`WeightSpec::regular_cs`]; they reject parameters outside the supported
/// ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightSpec {
    /// `s^-exponent`, infinite at contact.
    Singular { exponent: f64 },
    /// `min(s^-exponent, cap)`: the singular law truncated at height `cap`.
    Capped { exponent: f64, cap: f64 },
    /// `amplitude / (1 + s^2)^(decay/2)`: smooth, bounded, nonincreasing.
    RegularCs { amplitude: f64, decay: f64 },
}

impl WeightSpec {
    /// Singular power-law weight. Requires `0 < exponent < 1/2`.
    pub fn singular(exponent: f64) -> Result<Self> {
        check_exponent(exponent)?;
        Ok(WeightSpec::Singular { exponent })
    }

    /// Capped power-law weight. Requires `0 < exponent < 1/2` and `cap > 0`.
    pub fn capped(exponent: f64, cap: f64) -> Result<Self> {
        check_exponent(exponent)?;
        if !(cap > 0.0) || !cap.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "cap must be positive and finite, got {cap}"
            )));
        }
        Ok(WeightSpec::Capped { exponent, cap })
    }

    /// Smooth rational weight. Requires `amplitude > 0` and `decay >= 0`.
    pub fn regular_cs(amplitude: f64, decay: f64) -> Result<Self> {
        if !(amplitude > 0.0) || !amplitude.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "amplitude must be positive and finite, got {amplitude}"
            )));
        }
        if !(decay >= 0.0) || !decay.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "decay must be nonnegative and finite, got {decay}"
            )));
        }
        Ok(WeightSpec::RegularCs { amplitude, decay })
    }

    /// Evaluates the weight at separation `s >= 0`. Total: the singular law
    /// returns `f64::INFINITY` at `s = 0` rather than erroring; callers in
    /// the dynamics never reach that point because sticking detection fires
    /// first.
    pub fn evaluate(&self, s: f64) -> f64 {
        debug_assert!(s >= 0.0, "separation must be nonnegative");
        match *self {
            WeightSpec::Singular { exponent } => {
                if s == 0.0 {
                    f64::INFINITY
                } else {
                    powf(s, -exponent)
                }
            }
            // powf(0, -e) = +inf, so min() makes the cap take over at contact.
            WeightSpec::Capped { exponent, cap } => powf(s, -exponent).min(cap),
            WeightSpec::RegularCs { amplitude, decay } => {
                amplitude / powf(1.0 + s * s, decay / 2.0)
            }
        }
    }

    /// For a capped weight, the separation below which the cap is active:
    /// `cap^(-1/exponent)`. At or beyond this radius the capped and singular
    /// laws agree exactly. `None` for the other variants.
    pub fn cap_activation_radius(&self) -> Option<f64> {
        match *self {
            WeightSpec::Capped { exponent, cap } => Some(powf(cap, -1.0 / exponent)),
            _ => None,
        }
    }

    /// True if evaluation at zero separation is infinite.
    pub fn is_singular(&self) -> bool {
        matches!(self, WeightSpec::Singular { .. })
    }

    /// The power-law exponent, if this is a (possibly capped) power law.
    pub fn power_exponent(&self) -> Option<f64> {
        match *self {
            WeightSpec::Singular { exponent } | WeightSpec::Capped { exponent, .. } => {
                Some(exponent)
            }
            WeightSpec::RegularCs { .. } => None,
        }
    }
}

fn check_exponent(exponent: f64) -> Result<()> {
    if !(exponent > 0.0 && exponent < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "power-law exponent must lie in (0, 1/2), got {exponent}"
        )));
    }
    Ok(())
}
