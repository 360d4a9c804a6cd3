use serde::{Deserialize, Serialize};

/// Outcome of a numerical assumption check.
///
/// `arg_x`/`arg_y` locate the worst case; their meaning depends on the check
/// (a grid pair for spatial conditions, a radius for the Lyapunov check).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub pass: bool,
    pub max_violation: f64,
    pub arg_x: f64,
    pub arg_y: f64,
}

/// Running maximum that remembers where it was attained.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Worst {
    pub value: f64,
    pub x: f64,
    pub y: f64,
}

impl Worst {
    pub fn new() -> Self {
        Self {
            value: f64::NEG_INFINITY,
            x: f64::NAN,
            y: f64::NAN,
        }
    }

    pub fn offer(&mut self, value: f64, x: f64, y: f64) {
        // NaN violations must not be silently dropped.
        if value > self.value || value.is_nan() && !self.value.is_nan() {
            *self = Self { value, x, y };
        }
    }

    pub fn report(self, tolerance: f64) -> VerificationReport {
        let pass = !self.value.is_nan() && self.value <= tolerance;
        VerificationReport {
            pass,
            max_violation: self.value,
            arg_x: self.x,
            arg_y: self.y,
        }
    }
}
