use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::IoStats;
use crate::error::{Error, Result};

/// Block size plus the shared counters. Cloning shares the counters.
///
/// A block holds `block_records` raw series of `series_len` f32 samples;
/// every file, whatever it stores, is accounted in blocks of that byte size.
#[derive(Debug, Clone)]
pub struct IoContext {
    stats: Arc<IoStats>,
    block_records: u64,
    block_bytes: u64,
}

pub const DEFAULT_BLOCK_BYTES: u64 = 4 << 20;

impl IoContext {
    pub fn new(block_records: u64, series_len: usize) -> Result<Self> {
        if block_records == 0 || series_len == 0 {
            return Err(Error::Config("block size must be at least one record".into()));
        }
        Ok(Self {
            stats: Arc::new(IoStats::new()),
            block_records,
            block_bytes: block_records * series_len as u64 * 4,
        })
    }

    /// 4 MiB blocks.
    pub fn with_default_blocks(series_len: usize) -> Self {
        let records = (DEFAULT_BLOCK_BYTES / (series_len as u64 * 4)).max(1);
        Self::new(records, series_len).expect("non-zero")
    }

    pub fn stats(&self) -> &Arc<IoStats> {
        &self.stats
    }

    pub fn block_records(&self) -> u64 {
        self.block_records
    }

    pub fn block_bytes(&self) -> u64 {
        self.block_bytes
    }
}

/// Per-handle state: which block was touched last.
#[derive(Debug, Default, Clone, Copy)]
struct BlockTracker {
    last: Option<u64>,
}

impl BlockTracker {
    /// Returns (transfers, seeks) for touching bytes `[offset, offset+len)`.
    fn touch(&mut self, offset: u64, len: u64, block_bytes: u64) -> (u64, u64) {
        if len == 0 {
            return (0, 0);
        }
        let first = offset / block_bytes;
        let last = (offset + len - 1) / block_bytes;
        let mut transfers = 0;
        let mut seeks = 0;
        for b in first..=last {
            if self.last == Some(b) {
                continue;
            }
            if let Some(prev) = self.last {
                if b != prev + 1 {
                    seeks += 1;
                }
            }
            transfers += 1;
            self.last = Some(b);
        }
        (transfers, seeks)
    }
}

/// Read-only file shared across readers; each reader takes a [`Cursor`].
#[derive(Debug)]
pub struct BlockFile {
    file: File,
    path: PathBuf,
    len: u64,
    ctx: IoContext,
}

impl BlockFile {
    pub fn open(path: impl AsRef<Path>, ctx: &IoContext) -> Result<Arc<Self>> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, None, e))?;
        let len = file.metadata().map_err(|e| Error::io(&path, None, e))?.len();
        Ok(Arc::new(Self { file, path, len, ctx: ctx.clone() }))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn ctx(&self) -> &IoContext {
        &self.ctx
    }

    pub fn cursor(self: &Arc<Self>) -> Cursor {
        Cursor { file: Arc::clone(self), tracker: BlockTracker::default(), buf: Vec::new(), buf_start: 0 }
    }
}

const READ_AHEAD: usize = 64 << 10;

/// One logical handle over a [`BlockFile`]. Block transfers and seeks are
/// counted per cursor on the logical byte ranges requested.
pub struct Cursor {
    file: Arc<BlockFile>,
    tracker: BlockTracker,
    buf: Vec<u8>,
    buf_start: u64,
}

impl Cursor {
    pub fn read_at(&mut self, offset: u64, out: &mut [u8]) -> Result<()> {
        let len = out.len() as u64;
        if offset.checked_add(len).is_none_or(|end| end > self.file.len) {
            return Err(Error::OutOfBounds { path: self.file.path.clone(), offset });
        }
        let (t, s) = self.tracker.touch(offset, len, self.file.ctx.block_bytes);
        let stats = self.file.ctx.stats();
        stats.add_read(t);
        for _ in 0..s {
            stats.add_seek();
        }

        let buf_end = self.buf_start + self.buf.len() as u64;
        if offset < self.buf_start || offset + len > buf_end {
            let want = (len as usize).max(READ_AHEAD).min((self.file.len - offset) as usize);
            self.buf.resize(want, 0);
            self.file
                .file
                .read_exact_at(&mut self.buf, offset)
                .map_err(|e| Error::io(&self.file.path, Some(offset), e))?;
            self.buf_start = offset;
        }
        let at = (offset - self.buf_start) as usize;
        out.copy_from_slice(&self.buf[at..at + out.len()]);
        Ok(())
    }
}

/// Buffered writer that counts block transfers on every byte it emits,
/// including back-filled regions.
pub struct BlockWriter {
    out: BufWriter<File>,
    path: PathBuf,
    pos: u64,
    tracker: BlockTracker,
    ctx: IoContext,
}

impl BlockWriter {
    pub fn create(path: impl AsRef<Path>, ctx: &IoContext) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, None, e))?;
        Ok(Self { out: BufWriter::with_capacity(1 << 20, file), path, pos: 0, tracker: BlockTracker::default(), ctx: ctx.clone() })
    }

    /// Opens an existing file positioned at its end.
    pub fn append(path: impl AsRef<Path>, ctx: &IoContext) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().read(true).write(true).open(&path).map_err(|e| Error::io(&path, None, e))?;
        let pos = file.seek(SeekFrom::End(0)).map_err(|e| Error::io(&path, None, e))?;
        Ok(Self { out: BufWriter::with_capacity(1 << 20, file), path, pos, tracker: BlockTracker::default(), ctx: ctx.clone() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    fn account(&mut self, offset: u64, len: u64) {
        let (t, s) = self.tracker.touch(offset, len, self.ctx.block_bytes);
        self.ctx.stats().add_written(t);
        for _ in 0..s {
            self.ctx.stats().add_seek();
        }
    }

    pub fn write(&mut self, bytes: &[u8]) -> Result<()> {
        self.account(self.pos, bytes.len() as u64);
        self.out.write_all(bytes).map_err(|e| Error::io(&self.path, Some(self.pos), e))?;
        self.pos += bytes.len() as u64;
        Ok(())
    }

    /// Extends the file with `len` zero bytes.
    pub fn reserve(&mut self, len: u64) -> Result<()> {
        let zeros = vec![0u8; 64 << 10];
        let mut left = len;
        while left > 0 {
            let n = left.min(zeros.len() as u64) as usize;
            self.write(&zeros[..n])?;
            left -= n as u64;
        }
        Ok(())
    }

    /// Overwrites bytes already written at `offset`, then returns to the end.
    pub fn write_at(&mut self, offset: u64, bytes: &[u8]) -> Result<()> {
        if offset + bytes.len() as u64 > self.pos {
            return Err(Error::OutOfBounds { path: self.path.clone(), offset });
        }
        self.account(offset, bytes.len() as u64);
        let path = self.path.clone();
        let io = |e| Error::io(&path, Some(offset), e);
        self.out.flush().map_err(io)?;
        let file = self.out.get_mut();
        file.seek(SeekFrom::Start(offset)).map_err(io)?;
        file.write_all(bytes).map_err(io)?;
        file.seek(SeekFrom::Start(self.pos)).map_err(io)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, None, e))
    }

    /// Flushes and syncs; the file is sealed afterwards.
    pub fn finish(mut self) -> Result<u64> {
        self.flush()?;
        self.out.get_ref().sync_data().map_err(|e| Error::io(&self.path, None, e))?;
        Ok(self.pos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracker_counts_transfers_and_seeks() {
        let mut t = BlockTracker::default();
        assert_eq!(t.touch(0, 10, 100), (1, 0));
        assert_eq!(t.touch(10, 10, 100), (0, 0));
        assert_eq!(t.touch(95, 10, 100), (1, 0));
        assert_eq!(t.touch(500, 1, 100), (1, 1));
        assert_eq!(t.touch(0, 300, 100), (3, 1));
        assert_eq!(t.touch(0, 0, 100), (0, 0));
    }

    #[test]
    fn writer_and_cursor_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = IoContext::new(1, 4).unwrap(); // 16-byte blocks
        let path = dir.path().join("f");
        let mut w = BlockWriter::create(&path, &ctx).unwrap();
        w.reserve(8).unwrap();
        w.write(&[7u8; 40]).unwrap();
        w.write_at(0, &[1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
        assert_eq!(w.finish().unwrap(), 48);
        let s = ctx.stats().snapshot();
        assert_eq!(s.blocks_written, 4);
        assert_eq!(s.random_seeks, 1);

        let f = BlockFile::open(&path, &ctx).unwrap();
        let mut c = f.cursor();
        let mut head = [0u8; 8];
        c.read_at(0, &mut head).unwrap();
        assert_eq!(head, [1, 2, 3, 4, 5, 6, 7, 8]);
        let mut rest = [0u8; 40];
        c.read_at(8, &mut rest).unwrap();
        assert_eq!(rest, [7u8; 40]);
        assert_eq!(ctx.stats().snapshot().blocks_read, 3);
        assert!(matches!(c.read_at(45, &mut [0u8; 8]), Err(Error::OutOfBounds { .. })));
    }
}
