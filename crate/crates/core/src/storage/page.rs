use std::path::Path;

use crate::error::{Error, Result};
use crate::record::{RecordLayout, SortRecord};

pub const PAGE_HEADER_LEN: usize = 16;
/// `next` value of the last leaf.
pub const NO_NEXT: u64 = u64::MAX;

/// Leaf page: `count u32 | crc32c u32 | next u64 | capacity × record`.
///
/// The checksum covers the whole page with the crc field zeroed.
#[derive(Debug, Clone, Copy)]
pub struct PageCodec {
    pub layout: RecordLayout,
    pub capacity: usize,
}

impl PageCodec {
    pub fn new(layout: RecordLayout, capacity: usize) -> Self {
        Self { layout, capacity }
    }

    pub fn page_len(&self) -> usize {
        PAGE_HEADER_LEN + self.capacity * self.layout.width()
    }

    pub fn encode(&self, records: &[SortRecord], next: u64, out: &mut Vec<u8>) -> Result<()> {
        assert!(records.len() <= self.capacity);
        out.clear();
        out.resize(self.page_len(), 0);
        out[0..4].copy_from_slice(&(records.len() as u32).to_le_bytes());
        out[8..16].copy_from_slice(&next.to_le_bytes());
        let w = self.layout.width();
        for (i, r) in records.iter().enumerate() {
            let at = PAGE_HEADER_LEN + i * w;
            self.layout.encode(r, &mut out[at..at + w])?;
        }
        let crc = crc32c::crc32c(out);
        out[4..8].copy_from_slice(&crc.to_le_bytes());
        Ok(())
    }

    /// Checks the checksum and returns `(count, next)`.
    pub fn verify(&self, page: &[u8], path: &Path, page_no: u64) -> Result<(usize, u64)> {
        let corrupt = || Error::CorruptPage { path: path.to_path_buf(), page: page_no };
        if page.len() != self.page_len() {
            return Err(corrupt());
        }
        let stored = u32::from_le_bytes(page[4..8].try_into().unwrap());
        let mut crc = crc32c::crc32c(&page[..4]);
        crc = crc32c::crc32c_append(crc, &[0; 4]);
        crc = crc32c::crc32c_append(crc, &page[8..]);
        if crc != stored {
            return Err(corrupt());
        }
        let count = u32::from_le_bytes(page[0..4].try_into().unwrap()) as usize;
        if count > self.capacity {
            return Err(corrupt());
        }
        Ok((count, u64::from_le_bytes(page[8..16].try_into().unwrap())))
    }

    pub fn record_bytes<'p>(&self, page: &'p [u8], slot: usize) -> &'p [u8] {
        let w = self.layout.width();
        &page[PAGE_HEADER_LEN + slot * w..PAGE_HEADER_LEN + (slot + 1) * w]
    }

    pub fn decode(&self, page: &[u8], path: &Path, page_no: u64) -> Result<(Vec<SortRecord>, u64)> {
        let (count, next) = self.verify(page, path, page_no)?;
        let recs = (0..count).map(|i| self.layout.decode(self.record_bytes(page, i))).collect::<Result<_>>()?;
        Ok((recs, next))
    }
}
