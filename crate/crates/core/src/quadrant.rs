//! The four knowledge quadrants and their fixed index order.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Number of knowledge quadrants.
pub const K: usize = 4;

/// Crossing of parametric knowledge (Known/Unknown) with retrieval
/// quality (Gold/Noisy).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quadrant {
    KG,
    KN,
    UG,
    UN,
}

/// Index order used by every evidence vector, dataset and checkpoint.
pub const QUADRANT_ORDER: [Quadrant; K] = [Quadrant::KG, Quadrant::KN, Quadrant::UG, Quadrant::UN];

impl Quadrant {
    pub fn from_flags(known_param: bool, gold_in_context: bool) -> Self {
        match (known_param, gold_in_context) {
            (true, true) => Quadrant::KG,
            (true, false) => Quadrant::KN,
            (false, true) => Quadrant::UG,
            (false, false) => Quadrant::UN,
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        QUADRANT_ORDER.get(i).copied()
    }

    pub fn known_param(self) -> bool {
        matches!(self, Quadrant::KG | Quadrant::KN)
    }

    pub fn gold_in_context(self) -> bool {
        matches!(self, Quadrant::KG | Quadrant::UG)
    }

    /// Member of the Supported hypothesis {KG, UG}.
    pub fn supported(self) -> bool {
        self.gold_in_context()
    }

    /// Sources agree on supportedness (KG, UN) rather than conflict (KN, UG).
    pub fn consistent(self) -> bool {
        matches!(self, Quadrant::KG | Quadrant::UN)
    }

    pub fn one_hot<T: num_traits::Float>(self) -> [T; K] {
        let mut y = [T::zero(); K];
        y[self.index()] = T::one();
        y
    }

    pub fn name(self) -> &'static str {
        match self {
            Quadrant::KG => "KG",
            Quadrant::KN => "KN",
            Quadrant::UG => "UG",
            Quadrant::UN => "UN",
        }
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Quadrant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        QUADRANT_ORDER
            .iter()
            .copied()
            .find(|q| q.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown quadrant `{s}`")))
    }
}

/// The serialized form of [`QUADRANT_ORDER`], written into file headers.
pub fn quadrant_order_names() -> Vec<String> {
    QUADRANT_ORDER.iter().map(|q| q.name().to_string()).collect()
}
