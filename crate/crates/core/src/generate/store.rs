use std::collections::{BTreeMap, VecDeque};

use crate::error::{invalid, Error, Result};
use crate::model::LatentBlock;

/// Bounded per-level storage of context latents, the analogue of a
/// sliding-window KV cache.
///
/// Each level keeps at most `window` blocks; inserting beyond that evicts the
/// lowest block index.
#[derive(Debug, Clone, Default)]
pub struct ContextStore {
    window: Option<usize>,
    levels: BTreeMap<usize, VecDeque<LatentBlock>>,
}

impl ContextStore {
    /// `None` keeps every block.
    pub fn new(window: Option<usize>) -> Result<Self> {
        if window == Some(0) {
            return Err(invalid("context window must be positive"));
        }
        Ok(Self {
            window,
            levels: BTreeMap::new(),
        })
    }

    pub fn window(&self) -> Option<usize> {
        self.window
    }

    /// Writes `block` as context for schedule level `level`.
    pub fn insert(&mut self, level: usize, block: LatentBlock) -> Result<()> {
        let entries = self.levels.entry(level).or_default();
        if let Some(last) = entries.back() {
            if block.index <= last.index {
                return Err(Error::InvalidState(format!(
                    "context for block {} written after block {}",
                    block.index, last.index
                )));
            }
        }
        entries.push_back(block);
        if let Some(w) = self.window {
            while entries.len() > w {
                entries.pop_front();
            }
        }
        Ok(())
    }

    pub fn len(&self, level: usize) -> usize {
        self.levels.get(&level).map_or(0, VecDeque::len)
    }

    pub fn is_empty(&self) -> bool {
        self.levels.values().all(VecDeque::is_empty)
    }

    /// Indices of the blocks that condition block `n`: the last `window`
    /// predecessors.
    pub fn visible_range(&self, n: usize) -> std::ops::Range<usize> {
        let lo = self.window.map_or(0, |w| n.saturating_sub(w));
        lo..n
    }

    /// Blocks `visible_range(n)` at `level`, ascending. Every one must be present.
    pub fn before(&self, level: usize, n: usize) -> Result<Vec<LatentBlock>> {
        let range = self.visible_range(n);
        let empty = VecDeque::new();
        let entries = self.levels.get(&level).unwrap_or(&empty);
        let found: Vec<LatentBlock> = entries
            .iter()
            .filter(|b| range.contains(&b.index))
            .cloned()
            .collect();
        if found.len() != range.len() {
            return Err(Error::InvalidState(format!(
                "context store holds {} of the {} blocks {:?} needed at level {level}",
                found.len(),
                range.len(),
                range
            )));
        }
        Ok(found)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(n: usize) -> LatentBlock {
        LatentBlock::new(n, n, 1, 1, 0.0, vec![n as f64]).unwrap()
    }

    #[test]
    fn window_evicts_oldest() {
        let mut s = ContextStore::new(Some(2)).unwrap();
        for n in 0..4 {
            s.insert(7, block(n)).unwrap();
        }
        assert_eq!(s.len(7), 2);
        let got: Vec<usize> = s.before(7, 4).unwrap().iter().map(|b| b.index).collect();
        assert_eq!(got, vec![2, 3]);
        assert!(s.before(7, 3).is_err());
    }

    #[test]
    fn unbounded_keeps_everything() {
        let mut s = ContextStore::new(None).unwrap();
        for n in 0..5 {
            s.insert(0, block(n)).unwrap();
        }
        assert_eq!(s.before(0, 5).unwrap().len(), 5);
        assert!(s.before(0, 0).unwrap().is_empty());
        assert!(s.before(1, 2).is_err());
    }

    #[test]
    fn out_of_order_writes_rejected() {
        let mut s = ContextStore::new(None).unwrap();
        s.insert(0, block(2)).unwrap();
        assert!(s.insert(0, block(1)).is_err());
        assert!(ContextStore::new(Some(0)).is_err());
    }
}
