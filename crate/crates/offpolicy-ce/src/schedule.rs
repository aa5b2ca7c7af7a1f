//! Deterministic step-size and gain sequences indexed by iteration.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant { value: f64 },
    /// scale / (j + offset)^exponent
    Power {
        scale: f64,
        exponent: f64,
        #[serde(default)]
        offset: f64,
    },
}

impl Schedule {
    pub const fn constant(value: f64) -> Self {
        Schedule::Constant { value }
    }

    /// 1/j.
    pub const fn harmonic() -> Self {
        Schedule::Power {
            scale: 1.0,
            exponent: 1.0,
            offset: 0.0,
        }
    }

    pub const fn power(scale: f64, exponent: f64) -> Self {
        Schedule::Power {
            scale,
            exponent,
            offset: 0.0,
        }
    }

    /// Value at index `j`; indices below 1 are treated as 1.
    pub fn at(&self, j: usize) -> f64 {
        match *self {
            Schedule::Constant { value } => value,
            Schedule::Power {
                scale,
                exponent,
                offset,
            } => {
                let j = (j.max(1) as f64) + offset;
                scale / j.powf(exponent)
            }
        }
    }

    pub fn validate(&self, name: &str, lo: f64, hi: f64) -> crate::Result<()> {
        let bad = match *self {
            Schedule::Constant { value } => !(value > lo && value <= hi),
            Schedule::Power {
                scale,
                exponent,
                offset,
            } => !(scale > lo && scale <= hi) || exponent < 0.0 || offset < 0.0 || !exponent.is_finite(),
        };
        if bad {
            return Err(crate::Error::Config(format!(
                "schedule `{name}` must take values in ({lo}, {hi}]"
            )));
        }
        Ok(())
    }
}
