//! Contiguous partitions of the frequency axis.
//!
//! Basis matrices are restricted to block-diagonal form over a partition
//! {E_l} of the bins, which bounds the cost of every matrix operation by the
//! cube of the largest block instead of the full bin count.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How to split `bins` frequency bins into contiguous blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockScheme {
    /// Blocks of two bins; an odd trailing bin is merged into the final block,
    /// so the last block has two or three bins.
    Pairs,
    /// One block spanning every bin. Cost of matrix operations is cubic in the
    /// bin count; only sensible for small problems.
    SingleBlock,
    /// Blocks of `size` bins; a shorter remainder becomes the final block.
    Uniform { size: usize },
    /// Explicit `(start, len)` runs, validated against the partition rules.
    Explicit(Vec<(usize, usize)>),
}

impl std::str::FromStr for BlockScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairs" => Ok(BlockScheme::Pairs),
            "single" => Ok(BlockScheme::SingleBlock),
            other => {
                if let Some(size) = other.strip_prefix("uniform:") {
                    let size: usize = size.parse().map_err(|_| {
                        Error::InvalidConfig(format!("bad uniform block size in '{other}'"))
                    })?;
                    Ok(BlockScheme::Uniform { size })
                } else {
                    Err(Error::InvalidConfig(format!(
                        "unknown block scheme '{other}' (expected pairs, single, or uniform:N)"
                    )))
                }
            }
        }
    }
}

/// An ordered partition of `0..bins` into disjoint, contiguous, nonempty
/// blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyPartition {
    blocks: Vec<Range<usize>>,
    bin_to_block: Vec<usize>,
}

impl FrequencyPartition {
    pub fn from_blocks(blocks: Vec<Range<usize>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidPartition {
                reason: "no blocks".into(),
            });
        }
        if blocks[0].start != 0 {
            return Err(Error::InvalidPartition {
                reason: format!("first block starts at {}, not 0", blocks[0].start),
            });
        }
        let mut cursor = 0usize;
        for (l, b) in blocks.iter().enumerate() {
            if b.is_empty() {
                return Err(Error::InvalidPartition {
                    reason: format!("block {l} is empty"),
                });
            }
            if b.start != cursor {
                return Err(Error::InvalidPartition {
                    reason: format!("block {l} starts at {}, expected {cursor}", b.start),
                });
            }
            cursor = b.end;
        }
        let mut bin_to_block = vec![0usize; cursor];
        for (l, b) in blocks.iter().enumerate() {
            for i in b.clone() {
                bin_to_block[i] = l;
            }
        }
        Ok(Self {
            blocks,
            bin_to_block,
        })
    }

    pub fn pair_blocks(bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidPartition {
                reason: "zero bins".into(),
            });
        }
        let mut blocks = Vec::new();
        if bins <= 3 {
            blocks.push(0..bins);
        } else if bins % 2 == 0 {
            for start in (0..bins).step_by(2) {
                blocks.push(start..start + 2);
            }
        } else {
            let full_pairs = (bins - 3) / 2;
            for k in 0..full_pairs {
                blocks.push(2 * k..2 * k + 2);
            }
            blocks.push(bins - 3..bins);
        }
        Self::from_blocks(blocks)
    }

    pub fn uniform(bins: usize, size: usize) -> Result<Self> {
        if bins == 0 || size == 0 {
            return Err(Error::InvalidPartition {
                reason: format!("bins={bins}, block size={size}"),
            });
        }
        let mut blocks = Vec::new();
        let mut start = 0;
        while start < bins {
            let end = (start + size).min(bins);
            blocks.push(start..end);
            start = end;
        }
        Self::from_blocks(blocks)
    }

    pub fn single_block(bins: usize) -> Result<Self> {
        Self::from_blocks(vec![0..bins])
    }

    pub fn num_bins(&self) -> usize {
        self.bin_to_block.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    pub fn block(&self, l: usize) -> Range<usize> {
        self.blocks[l].clone()
    }

    pub fn block_of_bin(&self, bin: usize) -> usize {
        self.bin_to_block[bin]
    }

    pub fn max_block_len(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).max().unwrap_or(0)
    }
}

/// Build a partition of `bins` bins according to `scheme`.
pub fn build_partition(bins: usize, scheme: &BlockScheme) -> Result<FrequencyPartition> {
    match scheme {
        BlockScheme::Pairs => FrequencyPartition::pair_blocks(bins),
        BlockScheme::SingleBlock => FrequencyPartition::single_block(bins),
        BlockScheme::Uniform { size } => FrequencyPartition::uniform(bins, *size),
        BlockScheme::Explicit(runs) => {
            let blocks: Vec<Range<usize>> = runs.iter().map(|&(s, l)| s..s + l).collect();
            let p = FrequencyPartition::from_blocks(blocks)?;
            if p.num_bins() != bins {
                return Err(Error::InvalidPartition {
                    reason: format!("explicit blocks cover {} bins, expected {bins}", p.num_bins()),
                });
            }
            Ok(p)
        }
    }
}
