//! Switching nonlinearities `f(x)` in normalized units, and the dimensional
//! diode currents they are derived from.
//!
//! Normalization: `x = v / v_gamma`, `f = R i / v_gamma`, slope `a = R / R_D`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Normalized device characteristic placed across the resonator capacitor
/// (series) or inside the inductor branch (parallel).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Nonlinearity {
    /// `f = 0`: the circuit is linear.
    None,
    /// One diode: `a (x - 1)` above the unit threshold, zero below.
    SingleDiode {
        #[serde(alias = "a")]
        slope: f64,
    },
    /// Two diodes in opposite polarity: dead zone on `|x| < 1`.
    AntiParallel {
        #[serde(alias = "a")]
        slope: f64,
    },
    /// `k x^3`.
    Cubic {
        #[serde(alias = "k")]
        coefficient: f64,
    },
}

impl Nonlinearity {
    pub fn validate(&self) -> Result<()> {
        let (name, value) = match *self {
            Nonlinearity::None => return Ok(()),
            Nonlinearity::SingleDiode { slope } | Nonlinearity::AntiParallel { slope } => {
                ("slope a", slope)
            }
            Nonlinearity::Cubic { coefficient } => ("cubic coefficient k", coefficient),
        };
        if value.is_finite() && value >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "{name} must be finite and >= 0, got {value}"
            )))
        }
    }

    /// Evaluates `f(x)`. Piecewise kinds use the exact breakpoints `x = ±1`.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Nonlinearity::None => 0.0,
            Nonlinearity::SingleDiode { slope } => {
                if x >= 1.0 {
                    slope * (x - 1.0)
                } else {
                    0.0
                }
            }
            Nonlinearity::AntiParallel { slope } => {
                if x >= 1.0 {
                    slope * (x - 1.0)
                } else if x <= -1.0 {
                    slope * (x + 1.0)
                } else {
                    0.0
                }
            }
            Nonlinearity::Cubic { coefficient } => coefficient * x * x * x,
        }
    }

    /// True for characteristics with `f(-x) = -f(x)`.
    pub fn is_odd(&self) -> bool {
        matches!(
            self,
            Nonlinearity::None | Nonlinearity::AntiParallel { .. } | Nonlinearity::Cubic { .. }
        )
    }

    /// Slope of the conducting branches, if this is a diode kind.
    pub fn diode_slope(&self) -> Option<f64> {
        match *self {
            Nonlinearity::SingleDiode { slope } | Nonlinearity::AntiParallel { slope } => {
                Some(slope)
            }
            _ => None,
        }
    }

    /// Harmonic order expected to produce the pinch: 3 for odd
    /// characteristics, 2 otherwise.
    pub fn pinch_harmonic(&self) -> usize {
        if self.is_odd() {
            3
        } else {
            2
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Nonlinearity::None => "none",
            Nonlinearity::SingleDiode { .. } => "single_diode",
            Nonlinearity::AntiParallel { .. } => "anti_parallel",
            Nonlinearity::Cubic { .. } => "cubic",
        }
    }
}

/// Ideal switching diode with on-resistance `r_on` and switch-on voltage
/// `v_gamma`. With `antiparallel` set, a second diode of opposite polarity
/// conducts for `v_d <= -v_gamma`.
pub fn diode_current(v_d: f64, v_gamma: f64, r_on: f64, antiparallel: bool) -> Result<f64> {
    if !(v_gamma > 0.0 && v_gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "switch-on voltage must be > 0, got {v_gamma}"
        )));
    }
    if !(r_on > 0.0 && r_on.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "diode on-resistance must be > 0, got {r_on}"
        )));
    }
    let i = if v_d >= v_gamma {
        (v_d - v_gamma) / r_on
    } else if antiparallel && v_d <= -v_gamma {
        (v_d + v_gamma) / r_on
    } else {
        0.0
    };
    Ok(i)
}
