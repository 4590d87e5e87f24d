use serde::{Deserialize, Serialize};

/// A nonnegative quantity that may be `+∞`.
///
/// Divergence is represented explicitly, never as a floating-point overflow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extended {
    Finite(f64),
    Infinite,
}

impl Extended {
    pub fn is_finite(&self) -> bool {
        matches!(self, Extended::Finite(_))
    }

    /// The finite value, if any.
    pub fn value(&self) -> Option<f64> {
        match *self {
            Extended::Finite(v) => Some(v),
            Extended::Infinite => None,
        }
    }

    /// `f64::INFINITY` stands in for the marker; only for display and arithmetic.
    pub fn to_f64(&self) -> f64 {
        self.value().unwrap_or(f64::INFINITY)
    }
}

impl std::fmt::Display for Extended {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Extended::Finite(v) => write!(f, "{v}"),
            Extended::Infinite => f.write_str("inf"),
        }
    }
}
