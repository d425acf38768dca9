use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::AdError;

/// A row-major `rows x cols` tensor inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutEntry {
    /// `network/layer/tensor`
    pub name: String,
    pub block: Block,
}

/// Maps named tensors onto contiguous slices of a flat vector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    entries: Vec<LayoutEntry>,
}

impl Layout {
    /// Appends a tensor directly after the last one.
    pub fn push(&mut self, name: &str, rows: usize, cols: usize) -> Block {
        let block = Block {
            offset: self.len(),
            rows,
            cols,
        };
        self.entries.push(LayoutEntry {
            name: name.to_string(),
            block,
        });
        block
    }

    pub fn len(&self) -> usize {
        self.entries
            .last()
            .map_or(0, |e| e.block.offset + e.block.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<Block> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.block)
    }

    /// Checks that the entries tile `0..total` exactly once.
    pub fn validate(&self, total: usize) -> Result<(), AdError> {
        let mut blocks: Vec<Block> = self.entries.iter().map(|e| e.block).collect();
        blocks.sort_by_key(|b| b.offset);
        let mut cursor = 0;
        for b in &blocks {
            if b.offset != cursor {
                return Err(AdError::Layout { at: cursor });
            }
            cursor += b.len();
        }
        if cursor != total {
            return Err(AdError::Layout { at: cursor });
        }
        Ok(())
    }
}

/// Flat trainable weights plus their layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: Layout) -> Self {
        let values = vec![0.0; layout.len()];
        ParamVector { layout, values }
    }

    pub fn from_parts(layout: Layout, values: Vec<f64>) -> Result<Self, AdError> {
        layout.validate(values.len())?;
        Ok(ParamVector { layout, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slice(&self, b: Block) -> &[f64] {
        &self.values[b.range()]
    }

    pub fn slice_mut(&mut self, b: Block) -> &mut [f64] {
        &mut self.values[b.range()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_tiles_vector() {
        let mut l = Layout::default();
        let a = l.push("net/0/w", 3, 4);
        let b = l.push("net/0/b", 3, 1);
        assert_eq!(a.offset, 0);
        assert_eq!(b.offset, 12);
        assert_eq!(l.len(), 15);
        assert!(l.validate(15).is_ok());
        assert!(l.validate(16).is_err());
        assert_eq!(l.get("net/0/b"), Some(b));
    }

    #[test]
    fn overlapping_layout_rejected() {
        let mut l = Layout::default();
        l.push("a", 2, 2);
        l.entries.push(LayoutEntry {
            name: "dup".into(),
            block: Block {
                offset: 2,
                rows: 2,
                cols: 1,
            },
        });
        assert!(l.validate(4).is_err());
    }
}
