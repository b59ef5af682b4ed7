use crate::error::Result;
use crate::model::Hyperparameters;
use crate::spatial::{BlockCoord, BlockProcessor, BlockTable};

/// The measured field: block processors behind the spatial hash, plus the
/// frame counter.
pub struct GlobalMap {
    hyper: Hyperparameters,
    table: BlockTable,
    frame_counter: u64,
}

impl GlobalMap {
    pub fn new(hyper: Hyperparameters) -> Result<Self> {
        hyper.validate()?;
        let table = BlockTable::new(&hyper);
        Ok(Self {
            hyper,
            table,
            frame_counter: 0,
        })
    }

    pub fn hyper(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn table(&self) -> &BlockTable {
        &self.table
    }

    /// Number of frames integrated so far.
    pub fn frame_counter(&self) -> u64 {
        self.frame_counter
    }

    pub(crate) fn set_frame_counter(&mut self, t: u64) {
        self.frame_counter = t;
    }

    pub fn block_count(&self) -> usize {
        self.table.len()
    }

    pub fn component_count(&self) -> usize {
        self.table
            .handles()
            .iter()
            .map(|(_, h)| h.lock().components.len())
            .sum()
    }

    /// Copies of every block, sorted by coordinate.
    pub fn sorted_blocks(&self) -> Vec<BlockProcessor> {
        self.table
            .handles()
            .into_iter()
            .map(|(_, h)| h.lock().clone())
            .collect()
    }

    pub fn block(&self, coord: &BlockCoord) -> Option<BlockProcessor> {
        self.table.get(coord).map(|h| h.lock().clone())
    }

    pub fn insert_block(&self, block: BlockProcessor) {
        self.table.insert(block);
    }

    /// Component payload bytes: weight, mean, packed scatter and confidence,
    /// eight bytes each.
    pub fn parameter_bytes(&self) -> usize {
        self.component_count() * PARAMETERS_PER_COMPONENT * 8
    }
}

impl std::fmt::Debug for GlobalMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GlobalMap")
            .field("hyper", &self.hyper)
            .field("blocks", &self.block_count())
            .field("frame_counter", &self.frame_counter)
            .finish()
    }
}

/// 1 weight + 3 mean + 6 scatter + 1 confidence.
pub const PARAMETERS_PER_COMPONENT: usize = 11;
