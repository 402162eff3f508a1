use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::LatentBlock;

/// The `N x (S + 1)` lattice of block latents.
///
/// Cell `(n, j)` holds block `n` at schedule level `j` (0-based): column 0 is
/// the initial noise at time 1 and column `S` the clean output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationGrid {
    blocks: usize,
    times: Vec<f64>,
    cells: Vec<Option<LatentBlock>>,
    fill_order: Vec<(usize, usize)>,
}

impl GenerationGrid {
    pub fn new(blocks: usize, times: &[f64]) -> Self {
        Self {
            blocks,
            times: times.to_vec(),
            cells: vec![None; blocks * times.len()],
            fill_order: Vec::new(),
        }
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    /// Number of denoising steps `S`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    fn slot(&self, n: usize, j: usize) -> Result<usize> {
        if n >= self.blocks || j >= self.times.len() {
            return Err(invalid(format!(
                "cell ({n}, {j}) outside a {}x{} grid",
                self.blocks,
                self.times.len()
            )));
        }
        Ok(n * self.times.len() + j)
    }

    pub fn get(&self, n: usize, j: usize) -> Option<&LatentBlock> {
        self.slot(n, j).ok().and_then(|s| self.cells[s].as_ref())
    }

    pub fn require(&self, n: usize, j: usize) -> Result<&LatentBlock> {
        self.get(n, j)
            .ok_or_else(|| Error::InvalidState(format!("cell ({n}, {j}) is not populated")))
    }

    pub fn is_filled(&self, n: usize, j: usize) -> bool {
        self.get(n, j).is_some()
    }

    /// Populates cell `(n, j)`; level `j > 0` requires `(n, j - 1)` first.
    pub fn set(&mut self, n: usize, j: usize, block: LatentBlock) -> Result<()> {
        let slot = self.slot(n, j)?;
        if self.cells[slot].is_some() {
            return Err(Error::InvalidState(format!(
                "cell ({n}, {j}) already populated"
            )));
        }
        if j > 0 && !self.is_filled(n, j - 1) {
            return Err(Error::InvalidState(format!(
                "cell ({n}, {j}) populated before its predecessor ({n}, {})",
                j - 1
            )));
        }
        if block.level != self.times[j] || block.index != n {
            return Err(Error::InvalidState(format!(
                "block {} at level {} does not belong in cell ({n}, {j}) at level {}",
                block.index, block.level, self.times[j]
            )));
        }
        self.cells[slot] = Some(block);
        self.fill_order.push((n, j));
        Ok(())
    }

    /// Cells in the order they were populated.
    pub fn fill_order(&self) -> &[(usize, usize)] {
        &self.fill_order
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(Option::is_some)
    }

    /// Column `j` as blocks, in index order.
    pub fn column(&self, j: usize) -> Result<Vec<&LatentBlock>> {
        (0..self.blocks).map(|n| self.require(n, j)).collect()
    }

    /// Final-level output flattened to a frame sequence.
    pub fn final_frames(&self) -> Result<Vec<Vec<f64>>> {
        let mut frames = Vec::new();
        for b in self.column(self.steps())? {
            for f in 0..b.frames {
                frames.push(b.frame(f).to_vec());
            }
        }
        Ok(frames)
    }

    /// Numerical equality of all cells, ignoring the fill order.
    pub fn same_cells(&self, other: &GenerationGrid) -> bool {
        self.blocks == other.blocks && self.times == other.times && self.cells == other.cells
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
