//! Memory-budgeted external sort of index entries: sorted run generation
//! followed by a k-way merge, cascaded when runs outnumber merge buffers.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::record::{RecordLayout, SortRecord};
use crate::storage::{BlockFile, BlockWriter, Cursor, IoContext};

pub const RUN_MAGIC: &[u8; 4] = b"CRUN";
pub const RUN_HEADER_LEN: u64 = 16;

/// Main-memory budget, in records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryBudget {
    pub max_records: usize,
}

impl MemoryBudget {
    pub fn new(max_records: usize) -> Result<Self> {
        if max_records < 2 {
            return Err(Error::Config(format!("memory budget must hold at least 2 records, got {max_records}")));
        }
        Ok(Self { max_records })
    }

    /// Block buffers available while merging; never fewer than three
    /// (two inputs and one output).
    pub fn merge_buffers(&self, ctx: &IoContext) -> usize {
        ((self.max_records as u64 / ctx.block_records()) as usize).max(3)
    }
}

/// Sealed sorted run: `magic | width u32 | count u64 | records`.
#[derive(Debug, Clone)]
pub struct RunFile {
    pub path: PathBuf,
    pub count: u64,
    pub layout: RecordLayout,
}

impl RunFile {
    pub fn reader(&self, ctx: &IoContext) -> Result<RunReader> {
        RunReader::open(&self.path, self.layout, ctx)
    }

    pub fn remove(&self) -> Result<()> {
        std::fs::remove_file(&self.path).map_err(|e| Error::io(&self.path, None, e))
    }
}

pub struct RunWriter {
    out: BlockWriter,
    layout: RecordLayout,
    count: u64,
    buf: Vec<u8>,
}

impl RunWriter {
    pub fn create(path: impl AsRef<Path>, layout: RecordLayout, ctx: &IoContext) -> Result<Self> {
        let mut out = BlockWriter::create(path, ctx)?;
        out.write(&Self::header(layout.width(), 0))?;
        Ok(Self { out, layout, count: 0, buf: vec![0; layout.width()] })
    }

    fn header(width: usize, count: u64) -> [u8; RUN_HEADER_LEN as usize] {
        let mut h = [0u8; RUN_HEADER_LEN as usize];
        h[0..4].copy_from_slice(RUN_MAGIC);
        h[4..8].copy_from_slice(&(width as u32).to_le_bytes());
        h[8..16].copy_from_slice(&count.to_le_bytes());
        h
    }

    pub fn push(&mut self, rec: &SortRecord) -> Result<()> {
        self.layout.encode(rec, &mut self.buf)?;
        self.out.write(&self.buf)?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<RunFile> {
        self.out.write_at(0, &Self::header(self.layout.width(), self.count))?;
        let path = self.out.path().to_path_buf();
        self.out.finish()?;
        Ok(RunFile { path, count: self.count, layout: self.layout })
    }
}

/// Sequential reader over one run.
pub struct RunReader {
    cursor: Cursor,
    layout: RecordLayout,
    path: PathBuf,
    next: u64,
    count: u64,
    buf: Vec<u8>,
}

impl RunReader {
    pub fn open(path: &Path, layout: RecordLayout, ctx: &IoContext) -> Result<Self> {
        let file = BlockFile::open(path, ctx)?;
        let corrupt = |reason: String| Error::CorruptRun { path: path.to_path_buf(), reason };
        if file.len() < RUN_HEADER_LEN {
            return Err(corrupt("shorter than header".into()));
        }
        let mut cursor = file.cursor();
        let mut h = [0u8; RUN_HEADER_LEN as usize];
        cursor.read_at(0, &mut h)?;
        if &h[0..4] != RUN_MAGIC {
            return Err(corrupt("bad magic".into()));
        }
        let width = u32::from_le_bytes(h[4..8].try_into().unwrap()) as usize;
        if width != layout.width() {
            return Err(corrupt(format!("record width {width}, expected {}", layout.width())));
        }
        let count = u64::from_le_bytes(h[8..16].try_into().unwrap());
        if file.len() != RUN_HEADER_LEN + count * width as u64 {
            return Err(corrupt(format!("{} bytes cannot hold {count} records", file.len())));
        }
        Ok(Self { cursor, layout, path: path.to_path_buf(), next: 0, count, buf: vec![0; width] })
    }

    pub fn count(&self) -> u64 {
        self.count
    }
}

impl Iterator for RunReader {
    type Item = Result<SortRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.count {
            return None;
        }
        let off = RUN_HEADER_LEN + self.next * self.buf.len() as u64;
        self.next += 1;
        let res = self.cursor.read_at(off, &mut self.buf).and_then(|_| {
            self.layout.decode(&self.buf).map_err(|_| Error::CorruptRun {
                path: self.path.clone(),
                reason: format!("undecodable record at offset {off}"),
            })
        });
        Some(res)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.count - self.next) as usize;
        (left, Some(left))
    }
}

/// Merges sorted record streams into one sorted stream. Equal records are
/// emitted in input order.
pub struct KWayMerge<I: Iterator<Item = Result<SortRecord>>> {
    inputs: Vec<I>,
    heap: BinaryHeap<Reverse<(SortRecord, usize)>>,
    pending_err: Option<Error>,
    started: bool,
}

impl<I: Iterator<Item = Result<SortRecord>>> KWayMerge<I> {
    pub fn new(inputs: Vec<I>) -> Self {
        let heap = BinaryHeap::with_capacity(inputs.len());
        Self { inputs, heap, pending_err: None, started: false }
    }

    fn pull(&mut self, i: usize) {
        match self.inputs[i].next() {
            Some(Ok(r)) => self.heap.push(Reverse((r, i))),
            Some(Err(e)) => self.pending_err = Some(e),
            None => {}
        }
    }
}

impl<I: Iterator<Item = Result<SortRecord>>> Iterator for KWayMerge<I> {
    type Item = Result<SortRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if !self.started {
            self.started = true;
            for i in 0..self.inputs.len() {
                self.pull(i);
            }
        }
        if let Some(e) = self.pending_err.take() {
            return Some(Err(e));
        }
        let Reverse((rec, i)) = self.heap.pop()?;
        self.pull(i);
        Some(Ok(rec))
    }
}

/// Creates uniquely named scratch files inside one directory.
#[derive(Debug)]
pub struct RunNamer {
    dir: PathBuf,
    prefix: String,
    next: usize,
}

impl RunNamer {
    pub fn new(dir: impl Into<PathBuf>, prefix: &str) -> Self {
        Self { dir: dir.into(), prefix: prefix.to_string(), next: 0 }
    }

    pub fn next_path(&mut self) -> PathBuf {
        let p = self.dir.join(format!("{}-{:05}.run", self.prefix, self.next));
        self.next += 1;
        p
    }
}

/// Splits `input` into sorted runs of at most `budget.max_records` records.
pub fn make_runs(
    input: impl IntoIterator<Item = Result<SortRecord>>,
    layout: RecordLayout,
    budget: MemoryBudget,
    namer: &mut RunNamer,
    ctx: &IoContext,
) -> Result<Vec<RunFile>> {
    let mut runs = Vec::new();
    let mut chunk: Vec<SortRecord> = Vec::with_capacity(budget.max_records.min(1 << 20));
    let mut flush = |chunk: &mut Vec<SortRecord>, runs: &mut Vec<RunFile>| -> Result<()> {
        chunk.sort_unstable();
        let mut w = RunWriter::create(namer.next_path(), layout, ctx)?;
        for r in chunk.iter() {
            w.push(r)?;
        }
        runs.push(w.finish()?);
        chunk.clear();
        Ok(())
    };
    for rec in input {
        chunk.push(rec?);
        if chunk.len() == budget.max_records {
            flush(&mut chunk, &mut runs)?;
        }
    }
    if !chunk.is_empty() {
        flush(&mut chunk, &mut runs)?;
    }
    Ok(runs)
}

/// Outcome of [`merge_runs`]: the stream plus the bookkeeping needed to
/// remove scratch files once the consumer has committed its output.
pub struct MergedRuns {
    pub stream: KWayMerge<RunReader>,
    pub count: u64,
    pub passes: usize,
    /// Every run file created or consumed; remove after committing.
    pub scratch: Vec<RunFile>,
}

impl MergedRuns {
    pub fn cleanup(self) -> Result<()> {
        drop(self.stream);
        for r in &self.scratch {
            if r.path.exists() {
                r.remove()?;
            }
        }
        Ok(())
    }
}

/// Merges sorted runs. Uses a single pass when `runs + 1` fits in the merge
/// buffers, otherwise first merges groups of `buffers - 1` runs into new runs.
pub fn merge_runs(runs: Vec<RunFile>, budget: MemoryBudget, namer: &mut RunNamer, ctx: &IoContext) -> Result<MergedRuns> {
    let buffers = budget.merge_buffers(ctx);
    let fan_in = buffers - 1;
    let count = runs.iter().map(|r| r.count).sum();
    let mut scratch = runs.clone();
    let mut current = runs;
    let mut passes = 1;
    while current.len() > fan_in {
        let mut next = Vec::with_capacity(current.len().div_ceil(fan_in));
        for group in current.chunks(fan_in) {
            let layout = group[0].layout;
            let readers = group.iter().map(|r| r.reader(ctx)).collect::<Result<Vec<_>>>()?;
            let mut w = RunWriter::create(namer.next_path(), layout, ctx)?;
            for rec in KWayMerge::new(readers) {
                w.push(&rec?)?;
            }
            let run = w.finish()?;
            scratch.push(run.clone());
            next.push(run);
        }
        current = next;
        passes += 1;
    }
    let readers = current.iter().map(|r| r.reader(ctx)).collect::<Result<Vec<_>>>()?;
    Ok(MergedRuns { stream: KWayMerge::new(readers), count, passes, scratch })
}

/// Full external sort in a scratch directory.
pub fn external_sort(
    input: impl IntoIterator<Item = Result<SortRecord>>,
    layout: RecordLayout,
    budget: MemoryBudget,
    work_dir: &Path,
    ctx: &IoContext,
) -> Result<MergedRuns> {
    let mut namer = RunNamer::new(work_dir, "sort");
    let runs = make_runs(input, layout, budget, &mut namer, ctx)?;
    merge_runs(runs, budget, &mut namer, ctx)
}
