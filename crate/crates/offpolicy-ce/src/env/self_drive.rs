use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdp::FiniteMdp;

pub const SELF_DRIVE_TEMPERATURE: f64 = 10.0;
pub const SELF_DRIVE_LAMBDA: f64 = 0.00125;
pub const HALT: usize = 0;
pub const PROCEED: usize = 1;
pub const FINISH: usize = 3;

/// What happens once the vehicle reaches the destination F.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelfDriveTerminal {
    /// F returns to the source 0 under both actions; the chain stays ergodic.
    #[default]
    Restart,
    /// F loops on itself under both actions.
    Absorbing,
}

/// Four states 0, 1, 2, F = 3 with actions halt (0) and proceed (1).
/// Halting keeps the vehicle in place; proceeding advances it one state.
pub fn build_self_drive(terminal: SelfDriveTerminal, discount: f64, reward: f64) -> Result<FiniteMdp> {
    FiniteMdp::from_fn(
        4,
        2,
        discount,
        |s, a, t| {
            let next = if s == FINISH {
                match terminal {
                    SelfDriveTerminal::Restart => 0,
                    SelfDriveTerminal::Absorbing => FINISH,
                }
            } else if a == PROCEED {
                s + 1
            } else {
                s
            };
            if t == next {
                1.0
            } else {
                0.0
            }
        },
        |_, _, _| reward,
    )
}

/// Prediction features Φ = (1, 0, 1, 0)ᵀ.
pub fn self_drive_features() -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_column_slice(4, 1, &[1.0, 0.0, 1.0, 0.0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn caption_transitions() {
        let m = build_self_drive(SelfDriveTerminal::Restart, 0.99, 0.0).unwrap();
        assert_eq!(m.p(0, PROCEED, 1), 1.0);
        assert_eq!(m.p(1, PROCEED, 2), 1.0);
        assert_eq!(m.p(2, PROCEED, 3), 1.0);
        for s in 0..3 {
            assert_eq!(m.p(s, HALT, s), 1.0);
        }
        assert_eq!(m.p(3, HALT, 0), 1.0);
        let a = build_self_drive(SelfDriveTerminal::Absorbing, 0.99, 0.0).unwrap();
        assert_eq!(a.p(3, PROCEED, 3), 1.0);
    }
}
