//! The 729-way discrete action set.

use serde::{Deserialize, Serialize};

use super::QnetError;
use crate::geom::Vec3;

pub const TRANSLATION_STEP_M: f64 = 0.05;
pub const ROTATION_STEP_DEG: f64 = 22.5;
pub const NUM_ACTIONS: usize = 729;
/// Index of the all-zero delta.
pub const IDENTITY_ACTION: ActionIndex = ActionIndex(364);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActionIndex(u16);

impl ActionIndex {
    pub fn new(value: usize) -> Result<Self, QnetError> {
        if value >= NUM_ACTIONS {
            return Err(QnetError::ActionOutOfRange(value));
        }
        Ok(Self(value as u16))
    }

    pub fn get(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = ActionIndex> {
        (0..NUM_ACTIONS as u16).map(ActionIndex)
    }
}

/// Relative end-effector motion. Each axis in `{-1, 0, +1}` steps, ordered
/// `(dx, dy, dz, droll, dpitch, dyaw)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActionDelta {
    steps: [i8; 6],
}

impl ActionDelta {
    pub fn new(steps: [i8; 6]) -> Result<Self, QnetError> {
        if steps.iter().any(|s| !(-1..=1).contains(s)) {
            return Err(QnetError::InvalidDelta(steps));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> [i8; 6] {
        self.steps
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::new(
            self.steps[0] as f64 * TRANSLATION_STEP_M,
            self.steps[1] as f64 * TRANSLATION_STEP_M,
            self.steps[2] as f64 * TRANSLATION_STEP_M,
        )
    }

    pub fn rotation_degrees(&self) -> [f64; 3] {
        [3, 4, 5].map(|i| self.steps[i] as f64 * ROTATION_STEP_DEG)
    }

    pub fn rotation_radians(&self) -> [f64; 3] {
        self.rotation_degrees().map(f64::to_radians)
    }

    /// Network-facing encoding: signed unit per axis.
    pub fn unit_encoding(&self) -> [f64; 6] {
        self.steps.map(|s| s as f64)
    }
}

/// Base-3 code, `dx` most significant; digit `d` means `(d - 1)` steps.
pub fn encode_action(index: ActionIndex) -> ActionDelta {
    let mut v = index.get();
    let mut steps = [0i8; 6];
    for slot in steps.iter_mut().rev() {
        *slot = (v % 3) as i8 - 1;
        v /= 3;
    }
    ActionDelta { steps }
}

pub fn decode_action(delta: &ActionDelta) -> ActionIndex {
    let v = delta.steps.iter().fold(0usize, |acc, &s| acc * 3 + (s + 1) as usize);
    ActionIndex(v as u16)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_index_is_364() {
        assert_eq!((3usize.pow(6) - 1) / 2, 364);
        assert_eq!(encode_action(ActionIndex::new(364).unwrap()).steps(), [0; 6]);
        assert_eq!(decode_action(&ActionDelta::new([0; 6]).unwrap()), IDENTITY_ACTION);
    }

    #[test]
    fn index_zero_is_all_negative() {
        let d = encode_action(ActionIndex::new(0).unwrap());
        assert_eq!(d.steps(), [-1; 6]);
        assert_eq!(d.translation(), Vec3::new(-0.05, -0.05, -0.05));
        assert_eq!(d.rotation_degrees(), [-22.5; 3]);
    }

    #[test]
    fn bijection_over_all_indices() {
        let mut seen = std::collections::HashSet::new();
        for i in ActionIndex::all() {
            let d = encode_action(i);
            assert_eq!(decode_action(&d), i);
            assert!(seen.insert(d.steps()));
        }
        assert_eq!(seen.len(), NUM_ACTIONS);
    }

    #[test]
    fn dz_digit_position() {
        // +dz only: digits (1,1,2,1,1,1)
        let d = ActionDelta::new([0, 0, 1, 0, 0, 0]).unwrap();
        assert_eq!(decode_action(&d).get(), 364 + 27);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ActionIndex::new(729).is_err());
        assert!(ActionDelta::new([2, 0, 0, 0, 0, 0]).is_err());
    }
}
