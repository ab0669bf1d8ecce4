//! Bulk-loaded, balanced, median-split tree over sortable keys.
//!
//! File layout (`CTRE`): a 128-byte header, the fence-key levels, the leaf
//! pages in key order and the summary snapshot. Header and fences are
//! back-filled once the leaves are written; the fence region's size is known
//! up front from the record count.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::extsort::{external_sort, MemoryBudget};
use crate::record::{Payload, RecordLayout, SortRecord};
use crate::search::{sims, Answer, Best, Neighbor, SearchStats, Snapshot, WindowFilter};
use crate::series::{squared_distance, DataSeries, Query};
use crate::storage::{BlockFile, BlockWriter, Cursor, IoContext, PageCodec, RawFile, NO_NEXT, PAGE_HEADER_LEN};
use crate::summarization::{InvSaxKey, MindistTable, Summarizer, SummaryConfig};

pub const TREE_MAGIC: &[u8; 4] = b"CTRE";
const TREE_VERSION: u32 = 1;
pub const TREE_HEADER_LEN: u64 = 128;

/// Build parameters shared by trees and LSM runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub summary: SummaryConfig,
    /// Leaf capacity L in records.
    pub leaf_size: usize,
    /// Target fill factor f in (0, 1].
    pub fill: f64,
    pub materialized: bool,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { summary: SummaryConfig::default(), leaf_size: 2000, fill: 0.97, materialized: false }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        self.summary.validate()?;
        if self.leaf_size == 0 {
            return Err(Error::Config("leaf size must be at least 1".into()));
        }
        if !(self.fill > 0.0 && self.fill <= 1.0) {
            return Err(Error::Config(format!("fill factor must be in (0, 1], got {}", self.fill)));
        }
        Ok(())
    }

    /// Records per leaf, ⌈f·L⌉.
    pub fn per_leaf(&self) -> usize {
        ((self.fill * self.leaf_size as f64 - 1e-9).ceil() as usize).clamp(1, self.leaf_size)
    }

    pub fn fanout(&self) -> usize {
        self.per_leaf().max(2)
    }

    pub fn layout(&self) -> RecordLayout {
        if self.materialized {
            RecordLayout::inline(self.summary.key_bits(), self.summary.length)
        } else {
            RecordLayout::offsets(self.summary.key_bits())
        }
    }

    pub fn codec(&self) -> PageCodec {
        PageCodec::new(self.layout(), self.leaf_size)
    }
}

/// Sizes of the fence levels, leaf level first.
pub fn fence_level_sizes(leaf_count: u64, fanout: usize) -> Vec<u64> {
    let mut sizes = Vec::new();
    if leaf_count == 0 {
        return sizes;
    }
    let mut n = leaf_count;
    sizes.push(n);
    while n > 1 {
        n = n.div_ceil(fanout as u64);
        sizes.push(n);
    }
    sizes
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeHeader {
    pub params: TreeParams,
    pub count: u64,
    pub per_leaf: u32,
    pub leaf_count: u64,
    pub fence_offset: u64,
    pub fence_len: u64,
    pub leaf_offset: u64,
    pub page_len: u64,
    pub snapshot_offset: u64,
    pub min_ts: u64,
    pub max_ts: u64,
    pub fanout: u32,
    pub fence_crc: u32,
    pub snapshot_crc: u32,
    /// crc32c over the first 124 header bytes; doubles as the file checksum.
    pub checksum: u32,
}

impl TreeHeader {
    fn encode(&self) -> [u8; TREE_HEADER_LEN as usize] {
        let mut h = [0u8; TREE_HEADER_LEN as usize];
        let p = &self.params;
        h[0..4].copy_from_slice(TREE_MAGIC);
        h[4..8].copy_from_slice(&TREE_VERSION.to_le_bytes());
        h[8..12].copy_from_slice(&(p.summary.segments as u32).to_le_bytes());
        h[12..16].copy_from_slice(&(p.summary.bits as u32).to_le_bytes());
        h[16..20].copy_from_slice(&(p.summary.length as u32).to_le_bytes());
        h[20..24].copy_from_slice(&(p.leaf_size as u32).to_le_bytes());
        h[24..32].copy_from_slice(&p.fill.to_le_bytes());
        h[32..40].copy_from_slice(&self.count.to_le_bytes());
        h[40..44].copy_from_slice(&(p.materialized as u32).to_le_bytes());
        h[44..48].copy_from_slice(&self.per_leaf.to_le_bytes());
        h[48..56].copy_from_slice(&self.leaf_count.to_le_bytes());
        h[56..64].copy_from_slice(&self.fence_offset.to_le_bytes());
        h[64..72].copy_from_slice(&self.fence_len.to_le_bytes());
        h[72..80].copy_from_slice(&self.leaf_offset.to_le_bytes());
        h[80..88].copy_from_slice(&self.page_len.to_le_bytes());
        h[88..96].copy_from_slice(&self.snapshot_offset.to_le_bytes());
        h[96..104].copy_from_slice(&self.min_ts.to_le_bytes());
        h[104..112].copy_from_slice(&self.max_ts.to_le_bytes());
        h[112..116].copy_from_slice(&self.fanout.to_le_bytes());
        h[116..120].copy_from_slice(&self.fence_crc.to_le_bytes());
        h[120..124].copy_from_slice(&self.snapshot_crc.to_le_bytes());
        let crc = crc32c::crc32c(&h[..124]);
        h[124..128].copy_from_slice(&crc.to_le_bytes());
        h
    }

    fn decode(h: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::CorruptHeader { path: path.to_path_buf(), reason: reason.into() };
        if &h[0..4] != TREE_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(h[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(h[o..o + 8].try_into().unwrap());
        if u32_at(4) != TREE_VERSION {
            return Err(bad("unsupported version"));
        }
        let checksum = u32_at(124);
        if crc32c::crc32c(&h[..124]) != checksum {
            return Err(bad("header checksum mismatch"));
        }
        let params = TreeParams {
            summary: SummaryConfig { segments: u32_at(8) as usize, bits: u32_at(12) as u8, length: u32_at(16) as usize },
            leaf_size: u32_at(20) as usize,
            fill: f64::from_le_bytes(h[24..32].try_into().unwrap()),
            materialized: u32_at(40) != 0,
        };
        params.validate().map_err(|e| bad(&e.to_string()))?;
        Ok(Self {
            params,
            count: u64_at(32),
            per_leaf: u32_at(44),
            leaf_count: u64_at(48),
            fence_offset: u64_at(56),
            fence_len: u64_at(64),
            leaf_offset: u64_at(72),
            page_len: u64_at(80),
            snapshot_offset: u64_at(88),
            min_ts: u64_at(96),
            max_ts: u64_at(104),
            fanout: u32_at(112),
            fence_crc: u32_at(116),
            snapshot_crc: u32_at(120),
            checksum,
        })
    }
}

fn snapshot_entry_len(params: &TreeParams) -> usize {
    params.summary.key_bytes() + 16
}

/// Streams key-sorted records into a tree file.
pub struct TreeBuilder {
    out: BlockWriter,
    params: TreeParams,
    codec: PageCodec,
    count: u64,
    per_leaf: usize,
    leaf_count: u64,
    fence_offset: u64,
    fence_len: u64,
    leaf_offset: u64,
    pushed: u64,
    page: Vec<SortRecord>,
    pages_written: u64,
    leaf_mins: Vec<InvSaxKey>,
    snapshot: Vec<u8>,
    last: Option<SortRecord>,
    min_ts: u64,
    max_ts: u64,
    buf: Vec<u8>,
}

impl TreeBuilder {
    pub fn create(path: impl AsRef<Path>, params: TreeParams, count: u64, ctx: &IoContext) -> Result<Self> {
        params.validate()?;
        let per_leaf = params.per_leaf();
        let leaf_count = count.div_ceil(per_leaf as u64);
        let kb = params.summary.key_bytes() as u64;
        let fence_len = fence_level_sizes(leaf_count, params.fanout()).iter().sum::<u64>() * kb;
        let mut out = BlockWriter::create(path, ctx)?;
        out.reserve(TREE_HEADER_LEN + fence_len)?;
        Ok(Self {
            out,
            params,
            codec: params.codec(),
            count,
            per_leaf,
            leaf_count,
            fence_offset: TREE_HEADER_LEN,
            fence_len,
            leaf_offset: TREE_HEADER_LEN + fence_len,
            pushed: 0,
            page: Vec::with_capacity(per_leaf),
            pages_written: 0,
            leaf_mins: Vec::with_capacity(leaf_count as usize),
            snapshot: Vec::with_capacity(count as usize * snapshot_entry_len(&params)),
            last: None,
            min_ts: u64::MAX,
            max_ts: 0,
            buf: Vec::new(),
        })
    }

    pub fn push(&mut self, rec: SortRecord) -> Result<()> {
        if self.pushed >= self.count {
            return Err(Error::ShapeMismatch(format!("more than the announced {} records", self.count)));
        }
        if let Some(prev) = &self.last {
            if rec < *prev {
                return Err(Error::OutOfOrderInput(self.pushed));
            }
        }
        let locator = match (&rec.payload, self.params.materialized) {
            (Payload::Offset(o), false) => *o,
            (Payload::Inline(_), true) => self.pushed,
            _ => return Err(Error::ShapeMismatch("payload kind does not match index mode".into())),
        };
        self.snapshot.extend_from_slice(rec.key.as_bytes());
        self.snapshot.extend_from_slice(&rec.timestamp.to_le_bytes());
        self.snapshot.extend_from_slice(&locator.to_le_bytes());
        self.min_ts = self.min_ts.min(rec.timestamp);
        self.max_ts = self.max_ts.max(rec.timestamp);
        self.pushed += 1;
        self.last = Some(rec.clone());
        self.page.push(rec);
        if self.page.len() == self.per_leaf || self.pushed == self.count {
            self.write_page()?;
        }
        Ok(())
    }

    fn write_page(&mut self) -> Result<()> {
        let next = if self.pages_written + 1 < self.leaf_count { self.pages_written + 1 } else { NO_NEXT };
        self.leaf_mins.push(self.page[0].key);
        self.codec.encode(&self.page, next, &mut self.buf)?;
        self.out.write(&self.buf)?;
        self.pages_written += 1;
        self.page.clear();
        Ok(())
    }

    pub fn finish(mut self) -> Result<TreeHeader> {
        if self.pushed != self.count {
            return Err(Error::ShapeMismatch(format!("announced {} records, received {}", self.count, self.pushed)));
        }
        let snapshot_offset = self.out.position();
        let snapshot_crc = crc32c::crc32c(&self.snapshot);
        let snap = std::mem::take(&mut self.snapshot);
        self.out.write(&snap)?;

        let fanout = self.params.fanout();
        let mut fences: Vec<u8> = Vec::with_capacity(self.fence_len as usize);
        let mut level = self.leaf_mins.clone();
        while !level.is_empty() {
            for k in &level {
                fences.extend_from_slice(k.as_bytes());
            }
            if level.len() == 1 {
                break;
            }
            level = level.chunks(fanout).map(|c| c[0]).collect();
        }
        debug_assert_eq!(fences.len() as u64, self.fence_len);
        let fence_crc = crc32c::crc32c(&fences);
        if !fences.is_empty() {
            self.out.write_at(self.fence_offset, &fences)?;
        }
        let header = TreeHeader {
            params: self.params,
            count: self.count,
            per_leaf: self.per_leaf as u32,
            leaf_count: self.leaf_count,
            fence_offset: self.fence_offset,
            fence_len: self.fence_len,
            leaf_offset: self.leaf_offset,
            page_len: self.codec.page_len() as u64,
            snapshot_offset,
            min_ts: if self.count == 0 { 0 } else { self.min_ts },
            max_ts: self.max_ts,
            fanout: fanout as u32,
            fence_crc,
            snapshot_crc,
            checksum: 0,
        };
        let bytes = header.encode();
        self.out.write_at(0, &bytes)?;
        self.out.finish()?;
        Ok(TreeHeader { checksum: u32::from_le_bytes(bytes[124..128].try_into().unwrap()), ..header })
    }
}

/// Builds a tree file from records already in key order.
pub fn build_tree_from_sorted(
    path: impl AsRef<Path>,
    params: TreeParams,
    count: u64,
    records: impl IntoIterator<Item = Result<SortRecord>>,
    ctx: &IoContext,
) -> Result<TreeHeader> {
    let mut b = TreeBuilder::create(path, params, count, ctx)?;
    for r in records {
        b.push(r?)?;
    }
    b.finish()
}

/// Index entries of a raw file, in file order.
pub fn raw_records<'a>(
    raw: &'a RawFile,
    summarizer: &'a Summarizer,
    materialized: bool,
) -> impl Iterator<Item = Result<SortRecord>> + 'a {
    raw.scan().map(move |r| {
        let (offset, s) = r?;
        let key = summarizer.key(&s)?;
        let payload = if materialized { Payload::inline(&s) } else { Payload::Offset(offset) };
        Ok(SortRecord { key, timestamp: s.timestamp, payload })
    })
}

/// Sorts a raw file externally and bulk-loads a tree from it.
pub fn build_tree(
    raw: Arc<RawFile>,
    path: impl AsRef<Path>,
    params: TreeParams,
    budget: MemoryBudget,
    work_dir: &Path,
    ctx: &IoContext,
) -> Result<TreeIndex> {
    params.validate()?;
    if raw.series_len() != params.summary.length {
        return Err(Error::ConfigMismatch(format!(
            "dataset holds series of length {}, configuration expects {}",
            raw.series_len(),
            params.summary.length
        )));
    }
    let summarizer = Summarizer::new(params.summary)?;
    let merged = external_sort(raw_records(&raw, &summarizer, params.materialized), params.layout(), budget, work_dir, ctx)?;
    let count = merged.count;
    let mut stream = merged.stream;
    let header = build_tree_from_sorted(path.as_ref(), params, count, stream.by_ref(), ctx);
    let merged = crate::extsort::MergedRuns { stream, count, passes: merged.passes, scratch: merged.scratch };
    header?;
    merged.cleanup()?;
    TreeIndex::open(path, if params.materialized { None } else { Some(raw) }, ctx)
}

/// A sealed tree opened for queries.
#[derive(Debug)]
pub struct TreeIndex {
    file: Arc<BlockFile>,
    header: TreeHeader,
    codec: PageCodec,
    fences: Vec<Vec<InvSaxKey>>,
    snapshot: Snapshot,
    summarizer: Summarizer,
    raw: Option<Arc<RawFile>>,
    snapshot_rebuilt: bool,
}

impl TreeIndex {
    pub fn open(path: impl AsRef<Path>, raw: Option<Arc<RawFile>>, ctx: &IoContext) -> Result<Self> {
        let file = BlockFile::open(path.as_ref(), ctx)?;
        let path = file.path().to_path_buf();
        if file.len() < TREE_HEADER_LEN {
            return Err(Error::CorruptHeader { path, reason: "file shorter than header".into() });
        }
        let mut cur = file.cursor();
        let mut h = [0u8; TREE_HEADER_LEN as usize];
        cur.read_at(0, &mut h)?;
        let header = TreeHeader::decode(&h, &path)?;
        let params = header.params;
        if params.materialized == raw.is_some() {
            return Err(Error::ConfigMismatch(if params.materialized {
                "materialized index does not take a raw file".into()
            } else {
                "non-materialized index needs its raw file".into()
            }));
        }
        if let Some(r) = &raw {
            if r.series_len() != params.summary.length {
                return Err(Error::ConfigMismatch(format!(
                    "raw file holds series of length {}, index expects {}",
                    r.series_len(),
                    params.summary.length
                )));
            }
        }
        let kb = params.summary.key_bytes();

        let mut fence_bytes = vec![0u8; header.fence_len as usize];
        cur.read_at(header.fence_offset, &mut fence_bytes)?;
        if crc32c::crc32c(&fence_bytes) != header.fence_crc {
            return Err(Error::CorruptHeader { path, reason: "fence checksum mismatch".into() });
        }
        let mut fences = Vec::new();
        let mut at = 0;
        for size in fence_level_sizes(header.leaf_count, header.fanout as usize) {
            let mut level = Vec::with_capacity(size as usize);
            for _ in 0..size {
                level.push(InvSaxKey::from_bytes(&fence_bytes[at..at + kb], params.summary.key_bits())?);
                at += kb;
            }
            fences.push(level);
        }

        let entry = snapshot_entry_len(&params);
        let mut snap_bytes = vec![0u8; header.count as usize * entry];
        cur.read_at(header.snapshot_offset, &mut snap_bytes)?;
        let mut snapshot = Snapshot::new(params.summary.segments);
        let snapshot_rebuilt = crc32c::crc32c(&snap_bytes) != header.snapshot_crc;
        if !snapshot_rebuilt {
            for e in snap_bytes.chunks_exact(entry) {
                let key = InvSaxKey::from_bytes(&e[..kb], params.summary.key_bits())?;
                let ts = u64::from_le_bytes(e[kb..kb + 8].try_into().unwrap());
                let loc = u64::from_le_bytes(e[kb + 8..kb + 16].try_into().unwrap());
                snapshot.push(&key, &params.summary, ts, loc)?;
            }
        }
        let mut idx = Self {
            codec: params.codec(),
            summarizer: Summarizer::new(params.summary)?,
            file,
            header,
            fences,
            snapshot,
            raw,
            snapshot_rebuilt,
        };
        if snapshot_rebuilt {
            // leaves carry their own checksums, so the summaries can be recovered from them
            let mut snapshot = Snapshot::new(params.summary.segments);
            for (pos, rec) in idx.records().enumerate() {
                let rec = rec?;
                let loc = rec.payload.offset().unwrap_or(pos as u64);
                snapshot.push(&rec.key, &params.summary, rec.timestamp, loc)?;
            }
            if snapshot.len() as u64 != idx.header.count {
                return Err(Error::CorruptHeader { path: idx.file.path().to_path_buf(), reason: "leaf scan lost records".into() });
            }
            idx.snapshot = snapshot;
        }
        Ok(idx)
    }

    /// Whether `open` had to rebuild the summary snapshot from the leaves.
    pub fn snapshot_rebuilt(&self) -> bool {
        self.snapshot_rebuilt
    }

    pub fn header(&self) -> &TreeHeader {
        &self.header
    }

    pub fn params(&self) -> &TreeParams {
        &self.header.params
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

    pub fn leaf_count(&self) -> u64 {
        self.header.leaf_count
    }

    pub fn snapshot(&self) -> &Snapshot {
        &self.snapshot
    }

    pub fn summarizer(&self) -> &Summarizer {
        &self.summarizer
    }

    pub fn raw(&self) -> Option<&Arc<RawFile>> {
        self.raw.as_ref()
    }

    /// Number of fence levels above the leaves; every leaf sits this deep.
    pub fn depth(&self) -> usize {
        self.fences.len()
    }

    pub fn fence_levels(&self) -> &[Vec<InvSaxKey>] {
        &self.fences
    }

    pub fn cursor(&self) -> Cursor {
        self.file.cursor()
    }

    /// Leaf `i`'s records and the next-leaf link.
    pub fn read_leaf(&self, cursor: &mut Cursor, i: u64) -> Result<(Vec<SortRecord>, u64)> {
        let mut page = vec![0u8; self.header.page_len as usize];
        cursor.read_at(self.header.leaf_offset + i * self.header.page_len, &mut page)?;
        self.codec.decode(&page, self.file.path(), i)
    }

    /// All records in key order, following next-leaf links.
    pub fn records(&self) -> LeafScan<'_> {
        LeafScan { tree: self, cursor: self.cursor(), next: if self.header.leaf_count == 0 { NO_NEXT } else { 0 }, page: Vec::new().into_iter() }
    }

    /// Entry counts of all leaves, in order.
    pub fn leaf_fill(&self) -> Result<Vec<usize>> {
        let mut cur = self.cursor();
        (0..self.header.leaf_count).map(|i| Ok(self.read_leaf(&mut cur, i)?.0.len())).collect()
    }

    /// Leaf reached by descending the fences for `key`, plus the number of
    /// levels traversed.
    pub fn descend(&self, key: &InvSaxKey) -> (u64, usize) {
        let fanout = self.header.fanout as usize;
        let mut node = 0usize;
        let mut steps = 0;
        for level in (0..self.fences.len().saturating_sub(1)).rev() {
            let keys = &self.fences[level];
            let lo = node * fanout;
            let hi = ((node + 1) * fanout).min(keys.len());
            let within = keys[lo..hi].partition_point(|k| k <= key);
            node = lo + within.saturating_sub(1);
            steps += 1;
        }
        (node as u64, steps)
    }

    /// Position at which `key` would be inserted among all records.
    pub fn locate(&self, cursor: &mut Cursor, key: &InvSaxKey) -> Result<usize> {
        if self.header.count == 0 {
            return Ok(0);
        }
        let (leaf, _) = self.descend(key);
        let (recs, _) = self.read_leaf(cursor, leaf)?;
        let within = recs.partition_point(|r| r.key < *key);
        Ok(leaf as usize * self.header.per_leaf as usize + within)
    }

    pub(crate) fn fetcher(&self) -> Fetcher<'_> {
        Fetcher { tree: self, leaf: self.cursor(), raw: self.raw.as_ref().map(|r| r.cursor()), buf: Vec::new() }
    }

    pub fn mindist_table(&self, query: &DataSeries) -> Result<MindistTable> {
        self.summarizer.mindist_table(query)
    }

    fn check_query(&self, query: &DataSeries) -> Result<()> {
        if query.len() != self.header.params.summary.length {
            return Err(Error::ConfigMismatch(format!(
                "query length {} but index holds series of length {}",
                query.len(),
                self.header.params.summary.length
            )));
        }
        Ok(())
    }

    /// Evaluates the records at `positions`, tightening `best`.
    fn evaluate(
        &self,
        fetcher: &mut Fetcher<'_>,
        query: &DataSeries,
        positions: impl IntoIterator<Item = usize>,
        filter: WindowFilter,
        best: &mut Best,
        stats: &mut SearchStats,
    ) -> Result<bool> {
        let mut found = false;
        for p in positions {
            let series = fetcher.fetch(p)?;
            stats.records_fetched += 1;
            if !filter.admits(series.timestamp) {
                continue;
            }
            found = true;
            stats.visited_records += 1;
            let distance = squared_distance(&query.values, &series.values).sqrt();
            best.offer(Neighbor { distance, timestamp: series.timestamp, locator: self.snapshot.locators()[p], series });
        }
        Ok(found)
    }

    /// Approximate search: evaluates `radius` leaves' worth of records
    /// centered at the query key's insertion position.
    ///
    /// With [`WindowFilter::Before`] the span counts in-window records only;
    /// with [`WindowFilter::After`] it grows leaf by leaf on both sides until
    /// an in-window record is seen.
    pub fn approx_into(
        &self,
        query: &DataSeries,
        radius: usize,
        filter: WindowFilter,
        best: &mut Best,
        stats: &mut SearchStats,
    ) -> Result<()> {
        self.check_query(query)?;
        if radius == 0 {
            return Err(Error::Config("radius must be at least 1".into()));
        }
        let n = self.header.count as usize;
        if n == 0 {
            return Ok(());
        }
        let key = self.summarizer.key(query)?;
        let mut fetcher = self.fetcher();
        let pos = self.locate(&mut fetcher.leaf, &key)?;
        let per_leaf = self.header.per_leaf as usize;
        let span = radius.saturating_mul(per_leaf);
        match filter {
            WindowFilter::None => {
                let (lo, hi) = centered(pos, span, n);
                self.evaluate(&mut fetcher, query, lo..hi, filter, best, stats)?;
            }
            WindowFilter::Before { .. } => {
                let admitted = self.snapshot.admitted(filter).unwrap_or_default();
                let rank = admitted.partition_point(|p| *p < pos);
                let (lo, hi) = centered(rank, span, admitted.len());
                self.evaluate(&mut fetcher, query, admitted[lo..hi].iter().copied(), filter, best, stats)?;
            }
            WindowFilter::After { .. } => {
                let (mut lo, mut hi) = centered(pos, span, n);
                let mut found = self.evaluate(&mut fetcher, query, lo..hi, filter, best, stats)?;
                while !found && best.current.is_none() && (lo > 0 || hi < n) {
                    let new_lo = lo.saturating_sub(per_leaf);
                    let new_hi = (hi + per_leaf).min(n);
                    found |= self.evaluate(&mut fetcher, query, new_lo..lo, filter, best, stats)?;
                    found |= self.evaluate(&mut fetcher, query, hi..new_hi, filter, best, stats)?;
                    lo = new_lo;
                    hi = new_hi;
                }
            }
        }
        Ok(())
    }

    /// Scan of in-memory summarizations, carrying `best` in and out.
    pub fn sims_into(&self, query: &DataSeries, filter: WindowFilter, best: &mut Best, stats: &mut SearchStats) -> Result<()> {
        self.check_query(query)?;
        if self.header.count == 0 {
            return Ok(());
        }
        let table = self.mindist_table(query)?;
        let mut fetcher = self.fetcher();
        sims(&self.snapshot, &table, query, filter, best, stats, |i| fetcher.fetch(i))
    }

    /// Most recent timestamp stored.
    pub fn now(&self) -> u64 {
        self.header.max_ts
    }

    pub fn approx_search(&self, q: &Query, radius: usize) -> Result<Answer> {
        let filter = WindowFilter::before(self.now(), q.window);
        let mut best = Best::default();
        let mut stats = SearchStats { runs_touched: 1, ..Default::default() };
        self.approx_into(&q.series, radius, filter, &mut best, &mut stats)?;
        finish(best, stats, self.is_empty(), q.window)
    }

    /// Exact search: approximate seed, then the summary scan. A window on
    /// the query is applied from the in-memory timestamps.
    pub fn exact_search(&self, q: &Query, radius: usize) -> Result<Answer> {
        let filter = WindowFilter::before(self.now(), q.window);
        let mut best = Best::default();
        let mut stats = SearchStats { runs_touched: 1, ..Default::default() };
        self.approx_into(&q.series, radius, filter, &mut best, &mut stats)?;
        self.sims_into(&q.series, filter, &mut best, &mut stats)?;
        finish(best, stats, self.is_empty(), q.window)
    }

    /// Post-processing window query: full exact search with the timestamp
    /// checked only after each record is fetched.
    pub fn window_query_pp(&self, q: &Query, radius: usize, window: u64) -> Result<Answer> {
        if window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        let filter = WindowFilter::after(self.now(), Some(window));
        let mut best = Best::default();
        let mut stats = SearchStats { runs_touched: 1, ..Default::default() };
        self.approx_into(&q.series, radius, filter, &mut best, &mut stats)?;
        self.sims_into(&q.series, filter, &mut best, &mut stats)?;
        finish(best, stats, self.is_empty(), Some(window))
    }
}

pub(crate) fn finish(best: Best, stats: SearchStats, empty: bool, window: Option<u64>) -> Result<Answer> {
    match best.current {
        Some(neighbor) => Ok(Answer { neighbor, stats }),
        None if empty => Err(Error::EmptyIndex),
        None => Err(window.map_or(Error::EmptyIndex, Error::EmptyWindow)),
    }
}

/// `[lo, hi)` of length `min(span, n)` centered on `pos`, clamped to `[0, n)`.
pub fn centered(pos: usize, span: usize, n: usize) -> (usize, usize) {
    if span >= n {
        return (0, n);
    }
    let lo = pos.saturating_sub(span / 2).min(n - span);
    (lo, lo + span)
}

/// Reads records by position (materialized) or by raw offset.
pub(crate) struct Fetcher<'a> {
    tree: &'a TreeIndex,
    leaf: Cursor,
    raw: Option<Cursor>,
    buf: Vec<u8>,
}

impl Fetcher<'_> {
    pub(crate) fn fetch(&mut self, position: usize) -> Result<DataSeries> {
        let t = self.tree;
        match (&t.raw, &mut self.raw) {
            (Some(raw), Some(cur)) => raw.fetch_series(cur, t.snapshot.locators()[position]),
            _ => {
                let per_leaf = t.header.per_leaf as u64;
                let (page, slot) = (position as u64 / per_leaf, position as u64 % per_leaf);
                let width = t.codec.layout.width();
                let off = t.header.leaf_offset + page * t.header.page_len + PAGE_HEADER_LEN as u64 + slot * width as u64;
                self.buf.resize(width, 0);
                self.leaf.read_at(off, &mut self.buf)?;
                t.file.ctx().stats().add_fetched(1);
                let rec = t.codec.layout.decode(&self.buf)?;
                rec.payload.series(rec.timestamp).ok_or_else(|| Error::CorruptPage { path: t.path().to_path_buf(), page })
            }
        }
    }
}

pub struct LeafScan<'a> {
    tree: &'a TreeIndex,
    cursor: Cursor,
    next: u64,
    page: std::vec::IntoIter<SortRecord>,
}

impl Iterator for LeafScan<'_> {
    type Item = Result<SortRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(r) = self.page.next() {
                return Some(Ok(r));
            }
            if self.next == NO_NEXT {
                return None;
            }
            match self.tree.read_leaf(&mut self.cursor, self.next) {
                Ok((recs, next)) => {
                    self.page = recs.into_iter();
                    self.next = next;
                }
                Err(e) => {
                    self.next = NO_NEXT;
                    return Some(Err(e));
                }
            }
        }
    }
}

/// Paths of the files that make up one tree build.
#[derive(Debug, Clone)]
pub struct TreeFiles {
    pub index: PathBuf,
    pub raw: Option<PathBuf>,
}
