// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::fixed_point::{quantize, FixedSpec, Overflow, Rounding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QuantMode {
    #[default]
    Fixed,
    Binary,
    Ternary,
}

/// Forward-pass quantizer for a dense layer's weights and biases.
///
/// `q(w) = alpha * Q(w / alpha)` where `Q` is round-to-nearest saturating
/// fixed point (`Fixed`), sign (`Binary`, codomain {-1, +1}) or a three
/// level step with cut points at +-0.5 (`Ternary`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    pub bits: u32,
    pub integer_bits: i32,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default)]
    pub mode: QuantMode,
}

fn one() -> f64 {
    1.0
}

impl QuantizerSpec {
    pub fn fixed(bits: u32, integer_bits: i32) -> Self {
        Self {
            bits,
            integer_bits,
            alpha: 1.0,
            mode: QuantMode::Fixed,
        }
    }

    pub fn binary(alpha: f64) -> Self {
        Self {
            bits: 1,
            integer_bits: 1,
            alpha,
            mode: QuantMode::Binary,
        }
    }

    pub fn ternary(alpha: f64) -> Self {
        Self {
            bits: 2,
            integer_bits: 2,
            alpha,
            mode: QuantMode::Ternary,
        }
    }

    pub fn effective_bits(&self) -> u32 {
        match self.mode {
            QuantMode::Fixed => self.bits,
            QuantMode::Binary => 1,
            QuantMode::Ternary => 2,
        }
    }

    /// The fixed-point format `Q` rounds into (fixed mode only).
    pub fn fixed_spec(&self) -> Option<FixedSpec> {
        match self.mode {
            QuantMode::Fixed => FixedSpec::with_modes(
                self.bits,
                self.integer_bits,
                true,
                Rounding::RoundHalfUp,
                Overflow::Saturate,
            )
            .ok(),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.mode == QuantMode::Fixed && self.fixed_spec().is_none() {
            return Err(format!(
                "invalid fixed quantizer bits={} integer_bits={}",
                self.bits, self.integer_bits
            ));
        }
        Ok(())
    }

    pub fn apply(&self, w: f64) -> f64 {
        let u = w / self.alpha;
        let q = match self.mode {
            QuantMode::Fixed => quantize(u, self.fixed_spec().expect("validated quantizer")).to_f64(),
            QuantMode::Binary => {
                if u >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            QuantMode::Ternary => {
                if u > 0.5 {
                    1.0
                } else if u <= -0.5 {
                    -1.0
                } else {
                    0.0
                }
            }
        };
        self.alpha * q
    }

    /// Whether the straight-through gradient passes at `w`. Outside the
    /// quantizer's range the gradient is zeroed.
    pub fn passes_gradient(&self, w: f64) -> bool {
        let u = w / self.alpha;
        match self.mode {
            QuantMode::Fixed => {
                let s = self.fixed_spec().expect("validated quantizer");
                u >= s.min_value() && u <= s.max_value()
            }
            QuantMode::Binary | QuantMode::Ternary => u.abs() <= 1.0,
        }
    }
}
