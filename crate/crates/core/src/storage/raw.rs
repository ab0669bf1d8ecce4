use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{BlockFile, BlockWriter, Cursor, IoContext};
use crate::error::{Error, Result};
use crate::series::DataSeries;

pub const RAW_MAGIC: &[u8; 4] = b"CCNT";
pub const RAW_VERSION: u32 = 1;
pub const RAW_HEADER_LEN: u64 = 24;
const FLAG_TIMESTAMPS: u32 = 1;

/// `magic | version u32 | n u32 | flags u32 | count u64`, little-endian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawHeader {
    pub length: usize,
    pub timestamps: bool,
    pub count: u64,
}

impl RawHeader {
    pub fn record_width(&self) -> u64 {
        self.length as u64 * 4 + if self.timestamps { 8 } else { 0 }
    }

    pub fn encode(&self) -> [u8; RAW_HEADER_LEN as usize] {
        let mut out = [0u8; RAW_HEADER_LEN as usize];
        out[0..4].copy_from_slice(RAW_MAGIC);
        out[4..8].copy_from_slice(&RAW_VERSION.to_le_bytes());
        out[8..12].copy_from_slice(&(self.length as u32).to_le_bytes());
        out[12..16].copy_from_slice(&(if self.timestamps { FLAG_TIMESTAMPS } else { 0 }).to_le_bytes());
        out[16..24].copy_from_slice(&self.count.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::CorruptHeader { path: path.to_path_buf(), reason: reason.into() };
        if bytes.len() < RAW_HEADER_LEN as usize {
            return Err(bad("file shorter than header"));
        }
        if &bytes[0..4] != RAW_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != RAW_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let length = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let flags = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
        if flags & !FLAG_TIMESTAMPS != 0 {
            return Err(bad(&format!("unknown flags {flags:#x}")));
        }
        if length < 2 {
            return Err(bad("series length below 2"));
        }
        let count = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        Ok(Self { length, timestamps: flags & FLAG_TIMESTAMPS != 0, count })
    }
}

/// Sealed raw dataset, opened for reading.
///
/// Records without stored timestamps get their 1-based position as timestamp.
#[derive(Debug)]
pub struct RawFile {
    file: Arc<BlockFile>,
    header: RawHeader,
}

impl RawFile {
    pub fn open(path: impl AsRef<Path>, ctx: &IoContext) -> Result<Self> {
        let file = BlockFile::open(path, ctx)?;
        let mut buf = [0u8; RAW_HEADER_LEN as usize];
        if file.len() < RAW_HEADER_LEN {
            return Err(Error::CorruptHeader { path: file.path().to_path_buf(), reason: "file shorter than header".into() });
        }
        file.cursor().read_at(0, &mut buf)?;
        let header = RawHeader::decode(&buf, file.path())?;
        let need = RAW_HEADER_LEN + header.count * header.record_width();
        if file.len() < need {
            return Err(Error::CorruptHeader {
                path: file.path().to_path_buf(),
                reason: format!("header claims {} records but file holds {} bytes", header.count, file.len()),
            });
        }
        Ok(Self { file, header })
    }

    pub fn header(&self) -> &RawHeader {
        &self.header
    }

    pub fn path(&self) -> &Path {
        self.file.path()
    }

    pub fn len(&self) -> u64 {
        self.header.count
    }

    pub fn is_empty(&self) -> bool {
        self.header.count == 0
    }

    pub fn series_len(&self) -> usize {
        self.header.length
    }

    pub fn ctx(&self) -> &IoContext {
        self.file.ctx()
    }

    pub fn offset_of(&self, index: u64) -> u64 {
        RAW_HEADER_LEN + index * self.header.record_width()
    }

    pub fn index_of(&self, offset: u64) -> u64 {
        (offset - RAW_HEADER_LEN) / self.header.record_width()
    }

    pub fn cursor(&self) -> Cursor {
        self.file.cursor()
    }

    /// Reads the record starting at `offset`.
    pub fn fetch_series(&self, cursor: &mut Cursor, offset: u64) -> Result<DataSeries> {
        let width = self.header.record_width();
        if offset < RAW_HEADER_LEN
            || !(offset - RAW_HEADER_LEN).is_multiple_of(width)
            || offset >= RAW_HEADER_LEN + self.header.count * width
        {
            return Err(Error::OutOfBounds { path: self.path().to_path_buf(), offset });
        }
        let mut buf = vec![0u8; width as usize];
        cursor.read_at(offset, &mut buf)?;
        self.ctx().stats().add_fetched(1);
        let (timestamp, body) = if self.header.timestamps {
            (u64::from_le_bytes(buf[0..8].try_into().unwrap()), &buf[8..])
        } else {
            (self.index_of(offset) + 1, &buf[..])
        };
        let values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        Ok(DataSeries::with_timestamp(values, timestamp))
    }

    /// Sequential scan yielding `(offset, series)` in file order.
    pub fn scan(&self) -> RawScan<'_> {
        RawScan { raw: self, cursor: self.cursor(), next: 0 }
    }
}

pub struct RawScan<'a> {
    raw: &'a RawFile,
    cursor: Cursor,
    next: u64,
}

impl Iterator for RawScan<'_> {
    type Item = Result<(u64, DataSeries)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.raw.header.count {
            return None;
        }
        let off = self.raw.offset_of(self.next);
        self.next += 1;
        Some(self.raw.fetch_series(&mut self.cursor, off).map(|s| (off, s)))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.raw.header.count - self.next) as usize;
        (left, Some(left))
    }
}

/// Append-only writer for raw datasets. The header count is rewritten on
/// every [`RawWriter::sync`] and on [`RawWriter::finish`].
pub struct RawWriter {
    out: BlockWriter,
    header: RawHeader,
    synced_count: u64,
    scratch: Vec<u8>,
}

impl RawWriter {
    pub fn create(path: impl AsRef<Path>, length: usize, timestamps: bool, ctx: &IoContext) -> Result<Self> {
        if length < 2 {
            return Err(Error::Config("series length must be at least 2".into()));
        }
        let header = RawHeader { length, timestamps, count: 0 };
        let mut out = BlockWriter::create(path, ctx)?;
        out.write(&header.encode())?;
        Ok(Self { out, header, synced_count: 0, scratch: Vec::new() })
    }

    /// Reopens a sealed file for appending.
    pub fn append_to(path: impl AsRef<Path>, ctx: &IoContext) -> Result<Self> {
        let header = *RawFile::open(path.as_ref(), ctx)?.header();
        let out = BlockWriter::append(path.as_ref(), ctx)?;
        let expected = RAW_HEADER_LEN + header.count * header.record_width();
        if out.position() != expected {
            return Err(Error::CorruptHeader {
                path: path.as_ref().to_path_buf(),
                reason: format!("trailing bytes: file is {} bytes, header implies {expected}", out.position()),
            });
        }
        Ok(Self { out, synced_count: header.count, header, scratch: Vec::new() })
    }

    /// Like [`RawWriter::append_to`], but first drops records appended after
    /// the last header update.
    pub fn recover(path: impl AsRef<Path>, ctx: &IoContext) -> Result<Self> {
        let path = path.as_ref();
        let header = *RawFile::open(path, ctx)?.header();
        let expected = RAW_HEADER_LEN + header.count * header.record_width();
        let file = std::fs::OpenOptions::new().write(true).open(path).map_err(|e| Error::io(path, None, e))?;
        file.set_len(expected).map_err(|e| Error::io(path, None, e))?;
        drop(file);
        Self::append_to(path, ctx)
    }

    pub fn path(&self) -> PathBuf {
        self.out.path().to_path_buf()
    }

    pub fn count(&self) -> u64 {
        self.header.count
    }

    pub fn header(&self) -> &RawHeader {
        &self.header
    }

    /// Appends `s` and returns its record offset.
    pub fn append_series(&mut self, s: &DataSeries) -> Result<u64> {
        if s.len() != self.header.length {
            return Err(Error::LengthMismatch { expected: self.header.length, actual: s.len() });
        }
        let offset = self.out.position();
        self.scratch.clear();
        if self.header.timestamps {
            self.scratch.extend_from_slice(&s.timestamp.to_le_bytes());
        }
        for v in &s.values {
            self.scratch.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        self.out.write(&self.scratch)?;
        self.header.count += 1;
        Ok(offset)
    }

    /// Makes everything appended so far visible to readers.
    pub fn sync(&mut self) -> Result<()> {
        if self.synced_count != self.header.count {
            self.out.write_at(0, &self.header.encode())?;
            self.synced_count = self.header.count;
        }
        self.out.flush()
    }

    pub fn finish(mut self) -> Result<RawHeader> {
        self.sync()?;
        self.out.finish()?;
        Ok(self.header)
    }
}

/// Writes `series` to a new raw file.
pub fn write_raw_file(
    path: impl AsRef<Path>,
    length: usize,
    timestamps: bool,
    series: impl IntoIterator<Item = DataSeries>,
    ctx: &IoContext,
) -> Result<RawHeader> {
    let mut w = RawWriter::create(path, length, timestamps, ctx)?;
    for s in series {
        w.append_series(&s)?;
    }
    w.finish()
}
