//! Instrumented file access. Every byte of raw, run and index files goes
//! through [`BlockWriter`] or a [`Cursor`], which count block transfers.

mod block;
mod page;
mod raw;
mod stats;

pub use block::{BlockFile, BlockWriter, Cursor, IoContext, DEFAULT_BLOCK_BYTES};
pub use page::{PageCodec, NO_NEXT, PAGE_HEADER_LEN};
pub use raw::{write_raw_file, RawFile, RawHeader, RawScan, RawWriter, RAW_HEADER_LEN, RAW_MAGIC, RAW_VERSION};
pub use stats::{IoSnapshot, IoStats};
