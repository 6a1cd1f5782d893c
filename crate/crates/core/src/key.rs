use std::fmt;

/// Level of an element in the skip list, `1..=beta`.
pub type Level = u8;

/// Index of a slot in the external-memory table.
pub type SlotIndex = u64;

/// An element of the ordered universe. Value 0 is the front sentinel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ElementKey(pub u64);

impl ElementKey {
    pub const FRONT: ElementKey = ElementKey(0);

    pub fn is_front(self) -> bool {
        self.0 == 0
    }

    pub fn get(self) -> u64 {
        self.0
    }
}

impl From<u64> for ElementKey {
    fn from(v: u64) -> Self {
        ElementKey(v)
    }
}

impl fmt::Display for ElementKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_front() {
            f.write_str("front")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Names one partition: its smallest node and the level it lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PartitionLabel {
    pub min_element: ElementKey,
    pub level: Level,
}

impl PartitionLabel {
    pub const ENCODED_LEN: usize = 9;

    pub fn new(min_element: ElementKey, level: Level) -> Self {
        PartitionLabel { min_element, level }
    }

    /// Canonical encoding: element big-endian, then the level byte.
    pub fn encode(&self) -> [u8; Self::ENCODED_LEN] {
        let mut out = [0u8; Self::ENCODED_LEN];
        out[..8].copy_from_slice(&self.min_element.0.to_be_bytes());
        out[8] = self.level;
        out
    }
}

impl fmt::Display for PartitionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.min_element, self.level)
    }
}
