//! Truncated OAM mode spaces.
//!
//! A single photon lives in the span of `|ℓ⟩` for `-L ≤ ℓ ≤ L`; a photon pair
//! lives in the tensor product of two such spaces. Pair `(ℓs, ℓi)` maps to the
//! flat index `(ℓs + L)(2L + 1) + (ℓi + L)`, signal-major.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quanta of orbital angular momentum carried by one photon.
pub type Oam = i32;

pub const DEFAULT_TRUNCATION: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeSpace {
    truncation: u32,
}

impl Default for ModeSpace {
    fn default() -> Self {
        ModeSpace::new(DEFAULT_TRUNCATION)
    }
}

impl ModeSpace {
    pub const fn new(truncation: u32) -> Self {
        ModeSpace { truncation }
    }

    pub fn truncation(&self) -> u32 {
        self.truncation
    }

    /// Number of modes per photon, `2L + 1`.
    pub fn dim(&self) -> usize {
        2 * self.truncation as usize + 1
    }

    /// Dimension of the two-photon space, `(2L + 1)²`.
    pub fn joint_dim(&self) -> usize {
        self.dim() * self.dim()
    }

    pub fn contains(&self, ell: Oam) -> bool {
        ell.unsigned_abs() <= self.truncation
    }

    pub fn check(&self, ell: Oam) -> Result<()> {
        if self.contains(ell) {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                ell: ell as i64,
                bound: self.truncation,
            })
        }
    }

    /// Per-photon index of `ell`.
    pub fn index(&self, ell: Oam) -> Option<usize> {
        self.contains(ell)
            .then(|| (ell + self.truncation as i32) as usize)
    }

    pub fn ell(&self, index: usize) -> Oam {
        debug_assert!(index < self.dim());
        index as i32 - self.truncation as i32
    }

    /// Flat index of the pair `|ℓs, ℓi⟩`.
    pub fn pair_index(&self, signal: Oam, idler: Oam) -> Option<usize> {
        Some(self.index(signal)? * self.dim() + self.index(idler)?)
    }

    pub fn pair(&self, index: usize) -> (Oam, Oam) {
        debug_assert!(index < self.joint_dim());
        let d = self.dim();
        (self.ell(index / d), self.ell(index % d))
    }

    /// All OAM values in ascending order.
    pub fn modes(&self) -> impl Iterator<Item = Oam> {
        let l = self.truncation as i32;
        -l..=l
    }

    pub(crate) fn same_as(&self, other: &ModeSpace) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "truncation {} vs {}",
                self.truncation, other.truncation
            )))
        }
    }
}
