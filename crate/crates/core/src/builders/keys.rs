use serde::{Deserialize, Serialize};

/// Binary keys for `(block, index)` pairs: the block code `block + 1`
/// followed by the index code `index - 1`, each least-significant bit
/// first. Distinct pairs in range get distinct keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEncoding {
    #[serde(rename = "blockBits")]
    pub block_bits: u32,
    #[serde(rename = "indexBits")]
    pub index_bits: u32,
}

/// Bits needed to write `count` distinct codes (at least one).
pub fn bits_for(count: u64) -> u32 {
    if count <= 2 {
        1
    } else {
        64 - (count - 1).leading_zeros()
    }
}

impl KeyEncoding {
    /// Covers blocks `-1..=max_block` and indices `1..=max_index`.
    pub fn new(max_block: i32, max_index: u64) -> Self {
        Self {
            block_bits: bits_for((max_block + 2) as u64),
            index_bits: bits_for(max_index),
        }
    }

    /// Key width `D`.
    pub fn width(&self) -> usize {
        (self.block_bits + self.index_bits) as usize
    }

    /// The key as 0/1 integers. Out-of-range arguments are clamped into
    /// the representable range so garbage never panics.
    pub fn encode(&self, block: i32, index: u64) -> Vec<i64> {
        let bmax = (1u64 << self.block_bits) - 1;
        let imax = (1u64 << self.index_bits) - 1;
        let bcode = ((block as i64 + 1).max(0) as u64).min(bmax);
        let icode = index.saturating_sub(1).min(imax);
        let mut out = Vec::with_capacity(self.width());
        out.extend((0..self.block_bits).map(|b| ((bcode >> b) & 1) as i64));
        out.extend((0..self.index_bits).map(|b| ((icode >> b) & 1) as i64));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widths() {
        assert_eq!(bits_for(1), 1);
        assert_eq!(bits_for(2), 1);
        assert_eq!(bits_for(3), 2);
        assert_eq!(bits_for(4), 2);
        assert_eq!(bits_for(5), 3);
        // L = 1, max N = 2: blocks -1..=1 need 2 bits, indices 1 bit.
        assert_eq!(KeyEncoding::new(1, 2).width(), 3);
    }

    #[test]
    fn keys_are_distinct() {
        let enc = KeyEncoding::new(3, 6);
        let mut seen = std::collections::BTreeSet::new();
        for block in -1..=3 {
            for index in 1..=6 {
                assert!(seen.insert(enc.encode(block, index)));
            }
        }
    }
}
