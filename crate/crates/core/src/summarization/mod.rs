//! PAA/SAX summaries, the bit-interleaved sortable key, and the
//! lower-bounding distance used for pruning.

mod breakpoints;
mod key;
mod mindist;
mod sax;

pub use breakpoints::{inverse_normal_cdf, BreakpointTable};
pub use key::{invert_sum, restore_sum, InvSaxKey, MAX_KEY_BITS, MAX_KEY_BYTES};
pub(crate) use key::restore_symbols_into;
pub use mindist::{mindist, MindistTable};
pub use sax::{paa, sax, PaaWord, SaxWord};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::DataSeries;

/// Shape of the summaries: `segments` (w) PAA segments of a length-`length`
/// series, each quantized to `bits` (c) bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryConfig {
    pub segments: usize,
    pub bits: u8,
    pub length: usize,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        Self { segments: 16, bits: 8, length: crate::series::DEFAULT_LENGTH }
    }
}

impl SummaryConfig {
    pub fn new(segments: usize, bits: u8, length: usize) -> Result<Self> {
        let cfg = Self { segments, bits, length };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 {
            return Err(Error::Config("segment count must be at least 1".into()));
        }
        if !(1..=16).contains(&self.bits) {
            return Err(Error::Config(format!("bits per segment must be in 1..=16, got {}", self.bits)));
        }
        if self.length == 0 || !self.length.is_multiple_of(self.segments) {
            return Err(Error::Config(format!(
                "series length {} is not divisible by {} segments",
                self.length, self.segments
            )));
        }
        if self.key_bits() > MAX_KEY_BITS {
            return Err(Error::Config(format!(
                "key width {} bits exceeds the supported {} bits",
                self.key_bits(),
                MAX_KEY_BITS
            )));
        }
        Ok(())
    }

    pub fn key_bits(&self) -> usize {
        self.segments * self.bits as usize
    }

    pub fn key_bytes(&self) -> usize {
        self.key_bits().div_ceil(8)
    }

    pub fn cardinality(&self) -> usize {
        1usize << self.bits
    }

    pub fn segment_len(&self) -> usize {
        self.length / self.segments
    }
}

/// Everything needed to turn series into keys and bound distances.
#[derive(Debug, Clone)]
pub struct Summarizer {
    cfg: SummaryConfig,
    table: BreakpointTable,
}

impl Summarizer {
    pub fn new(cfg: SummaryConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, table: BreakpointTable::gaussian(cfg.bits)? })
    }

    pub fn config(&self) -> &SummaryConfig {
        &self.cfg
    }

    pub fn table(&self) -> &BreakpointTable {
        &self.table
    }

    pub fn paa(&self, series: &DataSeries) -> Result<PaaWord> {
        paa(series, &self.cfg)
    }

    pub fn word(&self, series: &DataSeries) -> Result<SaxWord> {
        Ok(sax(&self.paa(series)?, &self.table))
    }

    pub fn key(&self, series: &DataSeries) -> Result<InvSaxKey> {
        Ok(invert_sum(&self.word(series)?))
    }

    pub fn mindist_table(&self, query: &DataSeries) -> Result<MindistTable> {
        MindistTable::new(&self.paa(query)?, &self.table, self.cfg.length)
    }
}
