use serde::{Deserialize, Serialize};

/// Liveness class of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Real,
    Spoof,
}

impl Class {
    pub const BOTH: [Class; 2] = [Class::Real, Class::Spoof];

    /// Binary target: real = 1, spoof = 0.
    pub fn target(self) -> f64 {
        match self {
            Class::Real => 1.0,
            Class::Spoof => 0.0,
        }
    }

    pub fn is_real(self) -> bool {
        self == Class::Real
    }
}
