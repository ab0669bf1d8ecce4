//! Bottom-up prefix-split trie over sorted keys.
//!
//! Nodes are binary: a node's prefix is the first `prefix_len` bits of the
//! interleaved key, which is the same as a per-segment prefix of
//! `prefix_len / w` or `prefix_len / w + 1` bits. The skeleton is built from
//! the sorted key stream along its rightmost spine, compacted, and then the
//! leaves are written in one sequential pass.
//!
//! File layout (`CTRI`): a 128-byte header, the node table in breadth-first
//! order, the leaf pages in key order and the summary snapshot.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::extsort::{external_sort, MemoryBudget, RunWriter};
use crate::record::{Payload, RecordLayout, SortRecord};
use crate::search::{sims, Answer, Best, Neighbor, SearchStats, Snapshot, WindowFilter};
use crate::series::{squared_distance, DataSeries, Query};
use crate::storage::{BlockFile, BlockWriter, Cursor, IoContext, PageCodec, RawFile, NO_NEXT, PAGE_HEADER_LEN};
use crate::summarization::{InvSaxKey, Summarizer, SummaryConfig};
use crate::tree::{finish, raw_records};

pub const TRIE_MAGIC: &[u8; 4] = b"CTRI";
const TRIE_VERSION: u32 = 1;
pub const TRIE_HEADER_LEN: u64 = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrieParams {
    pub summary: SummaryConfig,
    pub leaf_size: usize,
    pub materialized: bool,
}

impl Default for TrieParams {
    fn default() -> Self {
        Self { summary: SummaryConfig::default(), leaf_size: 2000, materialized: false }
    }
}

impl TrieParams {
    pub fn validate(&self) -> Result<()> {
        self.summary.validate()?;
        if self.leaf_size == 0 {
            return Err(Error::Config("leaf size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> RecordLayout {
        if self.materialized {
            RecordLayout::inline(self.summary.key_bits(), self.summary.length)
        } else {
            RecordLayout::offsets(self.summary.key_bits())
        }
    }
}

/// Per-segment prefix of the first `prefix_len` bits of `key`: for each
/// segment, how many leading bits are fixed and their value.
pub fn per_segment_mask(key: &InvSaxKey, prefix_len: usize, segments: usize) -> Vec<(u8, u16)> {
    let mut mask = vec![(0u8, 0u16); segments];
    for p in 0..prefix_len {
        let m = &mut mask[p % segments];
        m.0 += 1;
        m.1 = (m.1 << 1) | key.bit(p) as u16;
    }
    mask
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonNode {
    pub prefix_len: u16,
    /// First key below this node; its leading `prefix_len` bits are the
    /// node's prefix.
    pub key: InvSaxKey,
    pub children: Vec<u32>,
    pub count: u64,
    pub leaf: bool,
}

/// In-memory trie shape, built from a sorted key stream. Holds counts, not
/// entries.
#[derive(Debug, Clone, Default)]
pub struct TrieSkeleton {
    nodes: Vec<SkeletonNode>,
    root: Option<u32>,
    spine: Vec<u32>,
    pushed: u64,
    counted: bool,
}

impl TrieSkeleton {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[SkeletonNode] {
        &self.nodes
    }

    pub fn node(&self, id: u32) -> &SkeletonNode {
        &self.nodes[id as usize]
    }

    pub fn root(&self) -> Option<u32> {
        self.root
    }

    /// Adds the next key of a sorted stream.
    pub fn push(&mut self, key: InvSaxKey) -> Result<()> {
        if let Some(&last) = self.spine.last() {
            let prev = self.nodes[last as usize].key;
            if key == prev {
                self.nodes[last as usize].count += 1;
                self.pushed += 1;
                return Ok(());
            }
            if key < prev {
                return Err(Error::OutOfOrderInput(self.pushed));
            }
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(SkeletonNode { prefix_len: key.width() as u16, key, children: Vec::new(), count: 1, leaf: true });
        self.create_up_tree(id);
        self.pushed += 1;
        self.counted = false;
        Ok(())
    }

    /// Links a new leaf below the deepest spine node whose prefix it shares.
    fn create_up_tree(&mut self, new: u32) {
        let Some(&prev) = self.spine.last() else {
            self.root = Some(new);
            self.spine.push(new);
            return;
        };
        let key = self.nodes[new as usize].key;
        let lcp = key.common_prefix_len(&self.nodes[prev as usize].key) as u16;
        let mut popped = None;
        while let Some(&top) = self.spine.last() {
            if self.nodes[top as usize].prefix_len <= lcp {
                break;
            }
            popped = self.spine.pop();
        }
        match (self.spine.last().copied(), popped) {
            (Some(top), _) if self.nodes[top as usize].prefix_len == lcp => {
                self.nodes[top as usize].children.push(new);
            }
            (parent, Some(popped)) => {
                let inner = self.nodes.len() as u32;
                let first = self.nodes[popped as usize].key;
                self.nodes.push(SkeletonNode { prefix_len: lcp, key: first, children: vec![popped, new], count: 0, leaf: false });
                match parent {
                    Some(p) => *self.nodes[p as usize].children.last_mut().unwrap() = inner,
                    None => self.root = Some(inner),
                }
                self.spine.push(inner);
            }
            (Some(_), None) => unreachable!("spine top prefix exceeds the common prefix"),
            (None, None) => unreachable!("empty spine after a previous key"),
        }
        self.spine.push(new);
    }

    /// Recomputes subtree counts from the leaves up.
    fn count(&mut self) {
        if self.counted {
            return;
        }
        for id in self.post_order() {
            let n = &self.nodes[id as usize];
            if !n.leaf {
                let c = n.children.iter().map(|c| self.nodes[*c as usize].count).sum();
                self.nodes[id as usize].count = c;
            }
        }
        self.counted = true;
    }

    fn post_order(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack: Vec<(u32, bool)> = self.root.into_iter().map(|r| (r, false)).collect();
        while let Some((id, expanded)) = stack.pop() {
            let n = &self.nodes[id as usize];
            if expanded || n.leaf {
                out.push(id);
            } else {
                stack.push((id, true));
                for c in n.children.iter().rev() {
                    stack.push((*c, false));
                }
            }
        }
        out
    }

    /// One bottom-up scan folding all-leaf children into their parent when
    /// their entries fit in one leaf. Returns the number of merges.
    pub fn compact_pass(&mut self, leaf_size: usize) -> usize {
        self.count();
        let mut merges = 0;
        for id in self.post_order() {
            let n = &self.nodes[id as usize];
            if n.leaf || n.count > leaf_size as u64 {
                continue;
            }
            if n.children.iter().all(|c| self.nodes[*c as usize].leaf) {
                let n = &mut self.nodes[id as usize];
                n.leaf = true;
                n.children.clear();
                merges += 1;
            }
        }
        merges
    }

    /// Repeats [`Self::compact_pass`] until a pass merges nothing; returns
    /// the merges of every pass, the final zero included.
    pub fn compact(&mut self, leaf_size: usize) -> Vec<usize> {
        let mut passes = Vec::new();
        loop {
            let m = self.compact_pass(leaf_size);
            passes.push(m);
            if m == 0 {
                return passes;
            }
        }
    }

    /// Reachable leaves in key order.
    pub fn leaves(&self) -> Vec<u32> {
        self.post_order().into_iter().filter(|id| self.nodes[*id as usize].leaf).collect()
    }

    /// Reachable nodes in breadth-first order.
    pub fn bfs(&self) -> Vec<u32> {
        let mut out: Vec<u32> = self.root.into_iter().collect();
        let mut i = 0;
        while i < out.len() {
            let n = &self.nodes[out[i] as usize];
            if !n.leaf {
                out.extend(&n.children);
            }
            i += 1;
        }
        out
    }

    pub fn total(&mut self) -> u64 {
        self.count();
        self.root.map_or(0, |r| self.nodes[r as usize].count)
    }
}

/// One node of the on-disk table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrieNode {
    pub prefix_len: u16,
    pub leaf: bool,
    pub first_child: u32,
    pub child_count: u32,
    pub count: u64,
    pub first_page: u64,
    pub page_count: u32,
    pub key: InvSaxKey,
}

impl TrieNode {
    const FIXED: usize = 32;

    fn encoded_len(key_bytes: usize) -> usize {
        Self::FIXED + key_bytes
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.prefix_len.to_le_bytes());
        out.push(self.leaf as u8);
        out.push(0);
        out.extend_from_slice(&self.first_child.to_le_bytes());
        out.extend_from_slice(&self.child_count.to_le_bytes());
        out.extend_from_slice(&self.count.to_le_bytes());
        out.extend_from_slice(&self.first_page.to_le_bytes());
        out.extend_from_slice(&self.page_count.to_le_bytes());
        out.extend_from_slice(self.key.as_bytes());
    }

    fn decode(b: &[u8], key_bits: usize) -> Result<Self> {
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        Ok(Self {
            prefix_len: u16::from_le_bytes([b[0], b[1]]),
            leaf: b[2] != 0,
            first_child: u32_at(4),
            child_count: u32_at(8),
            count: u64_at(12),
            first_page: u64_at(20),
            page_count: u32_at(28),
            key: InvSaxKey::from_bytes(&b[Self::FIXED..], key_bits)?,
        })
    }

    pub fn mask(&self, segments: usize) -> Vec<(u8, u16)> {
        per_segment_mask(&self.key, self.prefix_len as usize, segments)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrieHeader {
    pub params: TrieParams,
    pub count: u64,
    pub node_count: u64,
    pub node_offset: u64,
    pub leaf_offset: u64,
    pub page_len: u64,
    pub page_count: u64,
    pub snapshot_offset: u64,
    pub min_ts: u64,
    pub max_ts: u64,
    pub node_crc: u32,
    pub snapshot_crc: u32,
}

impl TrieHeader {
    fn encode(&self) -> [u8; TRIE_HEADER_LEN as usize] {
        let mut h = [0u8; TRIE_HEADER_LEN as usize];
        let p = &self.params;
        h[0..4].copy_from_slice(TRIE_MAGIC);
        h[4..8].copy_from_slice(&TRIE_VERSION.to_le_bytes());
        h[8..12].copy_from_slice(&(p.summary.segments as u32).to_le_bytes());
        h[12..16].copy_from_slice(&(p.summary.bits as u32).to_le_bytes());
        h[16..20].copy_from_slice(&(p.summary.length as u32).to_le_bytes());
        h[20..24].copy_from_slice(&(p.leaf_size as u32).to_le_bytes());
        h[24..32].copy_from_slice(&self.count.to_le_bytes());
        h[32..36].copy_from_slice(&(p.materialized as u32).to_le_bytes());
        h[40..48].copy_from_slice(&self.node_count.to_le_bytes());
        h[48..56].copy_from_slice(&self.node_offset.to_le_bytes());
        h[56..64].copy_from_slice(&self.leaf_offset.to_le_bytes());
        h[64..72].copy_from_slice(&self.page_len.to_le_bytes());
        h[72..80].copy_from_slice(&self.page_count.to_le_bytes());
        h[80..88].copy_from_slice(&self.snapshot_offset.to_le_bytes());
        h[88..96].copy_from_slice(&self.min_ts.to_le_bytes());
        h[96..104].copy_from_slice(&self.max_ts.to_le_bytes());
        h[104..108].copy_from_slice(&self.node_crc.to_le_bytes());
        h[108..112].copy_from_slice(&self.snapshot_crc.to_le_bytes());
        let crc = crc32c::crc32c(&h[..124]);
        h[124..128].copy_from_slice(&crc.to_le_bytes());
        h
    }

    fn decode(h: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::CorruptHeader { path: path.to_path_buf(), reason: reason.into() };
        if &h[0..4] != TRIE_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(h[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(h[o..o + 8].try_into().unwrap());
        if u32_at(4) != TRIE_VERSION {
            return Err(bad("unsupported version"));
        }
        if crc32c::crc32c(&h[..124]) != u32_at(124) {
            return Err(bad("header checksum mismatch"));
        }
        let params = TrieParams {
            summary: SummaryConfig { segments: u32_at(8) as usize, bits: u32_at(12) as u8, length: u32_at(16) as usize },
            leaf_size: u32_at(20) as usize,
            materialized: u32_at(32) != 0,
        };
        params.validate().map_err(|e| bad(&e.to_string()))?;
        Ok(Self {
            params,
            count: u64_at(24),
            node_count: u64_at(40),
            node_offset: u64_at(48),
            leaf_offset: u64_at(56),
            page_len: u64_at(64),
            page_count: u64_at(72),
            snapshot_offset: u64_at(80),
            min_ts: u64_at(88),
            max_ts: u64_at(96),
            node_crc: u32_at(104),
            snapshot_crc: u32_at(108),
        })
    }
}

/// Writes a trie file from a compacted skeleton and the sorted records
/// whose keys built it.
pub fn write_trie(
    path: impl AsRef<Path>,
    params: TrieParams,
    skeleton: &mut TrieSkeleton,
    records: impl IntoIterator<Item = Result<SortRecord>>,
    ctx: &IoContext,
) -> Result<TrieHeader> {
    params.validate()?;
    let count = skeleton.total();
    let l = params.leaf_size as u64;
    let kb = params.summary.key_bytes();

    // page assignment follows key order
    let leaves = skeleton.leaves();
    let mut first_page = vec![0u64; skeleton.nodes().len()];
    let mut pages = 0u64;
    for &id in &leaves {
        first_page[id as usize] = pages;
        pages += skeleton.node(id).count.div_ceil(l);
    }

    let order = skeleton.bfs();
    let mut index_of = vec![u32::MAX; skeleton.nodes().len()];
    for (i, id) in order.iter().enumerate() {
        index_of[*id as usize] = i as u32;
    }
    let mut table = Vec::with_capacity(order.len() * TrieNode::encoded_len(kb));
    for &id in &order {
        let n = skeleton.node(id);
        TrieNode {
            prefix_len: n.prefix_len,
            leaf: n.leaf,
            first_child: if n.leaf { 0 } else { index_of[n.children[0] as usize] },
            child_count: if n.leaf { 0 } else { n.children.len() as u32 },
            count: n.count,
            first_page: if n.leaf { first_page[id as usize] } else { 0 },
            page_count: if n.leaf { n.count.div_ceil(l) as u32 } else { 0 },
            key: n.key,
        }
        .encode(&mut table);
    }

    let mut out = BlockWriter::create(path, ctx)?;
    out.reserve(TRIE_HEADER_LEN)?;
    out.write(&table)?;
    let leaf_offset = out.position();

    let codec = PageCodec::new(params.layout(), params.leaf_size);
    let mut records = records.into_iter();
    let mut snapshot = Vec::with_capacity(count as usize * (kb + 16));
    let (mut min_ts, mut max_ts) = (u64::MAX, 0);
    let mut page = Vec::with_capacity(params.leaf_size);
    let mut buf = Vec::new();
    let mut written = 0u64;
    let mut position = 0u64;
    for &id in &leaves {
        let mut left = skeleton.node(id).count;
        while left > 0 {
            let take = left.min(l);
            page.clear();
            for _ in 0..take {
                let rec = records.next().ok_or_else(|| Error::ShapeMismatch("sorted input ended early".into()))??;
                let locator = match &rec.payload {
                    Payload::Offset(o) if !params.materialized => *o,
                    Payload::Inline(_) if params.materialized => position,
                    _ => return Err(Error::ShapeMismatch("payload kind does not match index mode".into())),
                };
                snapshot.extend_from_slice(rec.key.as_bytes());
                snapshot.extend_from_slice(&rec.timestamp.to_le_bytes());
                snapshot.extend_from_slice(&locator.to_le_bytes());
                min_ts = min_ts.min(rec.timestamp);
                max_ts = max_ts.max(rec.timestamp);
                position += 1;
                page.push(rec);
            }
            let next = if written + 1 < pages { written + 1 } else { NO_NEXT };
            codec.encode(&page, next, &mut buf)?;
            out.write(&buf)?;
            written += 1;
            left -= take;
        }
    }
    if records.next().is_some() {
        return Err(Error::ShapeMismatch("sorted input longer than the skeleton".into()));
    }
    let snapshot_offset = out.position();
    out.write(&snapshot)?;
    let header = TrieHeader {
        params,
        count,
        node_count: order.len() as u64,
        node_offset: TRIE_HEADER_LEN,
        leaf_offset,
        page_len: codec.page_len() as u64,
        page_count: pages,
        snapshot_offset,
        min_ts: if count == 0 { 0 } else { min_ts },
        max_ts,
        node_crc: crc32c::crc32c(&table),
        snapshot_crc: crc32c::crc32c(&snapshot),
    };
    out.write_at(0, &header.encode())?;
    out.finish()?;
    Ok(header)
}

/// Sorts a raw file, builds the skeleton while spooling the sorted stream to
/// a scratch run, compacts, and writes the leaves in one sequential pass.
pub fn build_trie(
    raw: Arc<RawFile>,
    path: impl AsRef<Path>,
    params: TrieParams,
    budget: MemoryBudget,
    work_dir: &Path,
    ctx: &IoContext,
) -> Result<TrieIndex> {
    params.validate()?;
    if raw.series_len() != params.summary.length {
        return Err(Error::ConfigMismatch(format!(
            "dataset holds series of length {}, configuration expects {}",
            raw.series_len(),
            params.summary.length
        )));
    }
    let summarizer = Summarizer::new(params.summary)?;
    let layout = params.layout();
    let mut merged = external_sort(raw_records(&raw, &summarizer, params.materialized), layout, budget, work_dir, ctx)?;
    let mut skeleton = TrieSkeleton::new();
    let mut spool = RunWriter::create(work_dir.join("trie-sorted.run"), layout, ctx)?;
    for rec in merged.stream.by_ref() {
        let rec = rec?;
        skeleton.push(rec.key)?;
        spool.push(&rec)?;
    }
    let sorted = spool.finish()?;
    merged.cleanup()?;
    skeleton.compact(params.leaf_size);
    write_trie(path.as_ref(), params, &mut skeleton, sorted.reader(ctx)?, ctx)?;
    sorted.remove()?;
    TrieIndex::open(path, if params.materialized { None } else { Some(raw) }, ctx)
}

#[derive(Debug)]
pub struct TrieIndex {
    file: Arc<BlockFile>,
    header: TrieHeader,
    codec: PageCodec,
    nodes: Vec<TrieNode>,
    /// Global position of the first record of every page, plus the total.
    page_starts: Vec<u64>,
    snapshot: Snapshot,
    summarizer: Summarizer,
    raw: Option<Arc<RawFile>>,
}

impl TrieIndex {
    pub fn open(path: impl AsRef<Path>, raw: Option<Arc<RawFile>>, ctx: &IoContext) -> Result<Self> {
        let file = BlockFile::open(path.as_ref(), ctx)?;
        let path = file.path().to_path_buf();
        if file.len() < TRIE_HEADER_LEN {
            return Err(Error::CorruptHeader { path, reason: "file shorter than header".into() });
        }
        let mut cur = file.cursor();
        let mut h = [0u8; TRIE_HEADER_LEN as usize];
        cur.read_at(0, &mut h)?;
        let header = TrieHeader::decode(&h, &path)?;
        let params = header.params;
        if params.materialized == raw.is_some() {
            return Err(Error::ConfigMismatch(if params.materialized {
                "materialized index does not take a raw file".into()
            } else {
                "non-materialized index needs its raw file".into()
            }));
        }
        let kb = params.summary.key_bytes();
        let kbits = params.summary.key_bits();

        let entry = TrieNode::encoded_len(kb);
        let mut table = vec![0u8; header.node_count as usize * entry];
        cur.read_at(header.node_offset, &mut table)?;
        if crc32c::crc32c(&table) != header.node_crc {
            return Err(Error::CorruptHeader { path, reason: "node table checksum mismatch".into() });
        }
        let nodes = table.chunks_exact(entry).map(|b| TrieNode::decode(b, kbits)).collect::<Result<Vec<_>>>()?;

        let mut leaves: Vec<&TrieNode> = nodes.iter().filter(|n| n.leaf).collect();
        leaves.sort_by_key(|n| n.first_page);
        let mut page_starts = Vec::with_capacity(header.page_count as usize + 1);
        let mut pos = 0u64;
        for n in leaves {
            let mut left = n.count;
            while left > 0 {
                page_starts.push(pos);
                let take = left.min(params.leaf_size as u64);
                pos += take;
                left -= take;
            }
        }
        page_starts.push(pos);
        if pos != header.count || page_starts.len() as u64 != header.page_count + 1 {
            return Err(Error::CorruptHeader { path, reason: "node counts disagree with header".into() });
        }

        let sentry = kb + 16;
        let mut snap = vec![0u8; header.count as usize * sentry];
        cur.read_at(header.snapshot_offset, &mut snap)?;
        if crc32c::crc32c(&snap) != header.snapshot_crc {
            return Err(Error::CorruptHeader { path, reason: "snapshot checksum mismatch".into() });
        }
        let mut snapshot = Snapshot::new(params.summary.segments);
        for e in snap.chunks_exact(sentry) {
            let key = InvSaxKey::from_bytes(&e[..kb], kbits)?;
            let ts = u64::from_le_bytes(e[kb..kb + 8].try_into().unwrap());
            let loc = u64::from_le_bytes(e[kb + 8..].try_into().unwrap());
            snapshot.push(&key, &params.summary, ts, loc)?;
        }
        Ok(Self {
            codec: PageCodec::new(params.layout(), params.leaf_size),
            summarizer: Summarizer::new(params.summary)?,
            file,
            header,
            nodes,
            page_starts,
            snapshot,
            raw,
        })
    }

    pub fn header(&self) -> &TrieHeader {
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

    /// Breadth-first node table; index 0 is the root.
    pub fn nodes(&self) -> &[TrieNode] {
        &self.nodes
    }

    pub fn children(&self, i: usize) -> &[TrieNode] {
        let n = &self.nodes[i];
        &self.nodes[n.first_child as usize..(n.first_child + n.child_count) as usize]
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.leaf).count()
    }

    pub fn page_count(&self) -> u64 {
        self.header.page_count
    }

    /// Entries over page capacity.
    pub fn utilization(&self) -> f64 {
        if self.header.page_count == 0 {
            return 0.0;
        }
        self.header.count as f64 / (self.header.page_count * self.header.params.leaf_size as u64) as f64
    }

    pub fn snapshot(&self) -> &Snapshot {
        &self.snapshot
    }

    pub fn cursor(&self) -> Cursor {
        self.file.cursor()
    }

    pub fn read_page(&self, cursor: &mut Cursor, page: u64) -> Result<(Vec<SortRecord>, u64)> {
        let mut bytes = vec![0u8; self.header.page_len as usize];
        cursor.read_at(self.header.leaf_offset + page * self.header.page_len, &mut bytes)?;
        self.codec.decode(&bytes, self.file.path(), page)
    }

    /// All records in key order, page by page.
    pub fn records(&self) -> impl Iterator<Item = Result<SortRecord>> + '_ {
        let mut cur = self.cursor();
        (0..self.header.page_count).flat_map(move |p| match self.read_page(&mut cur, p) {
            Ok((recs, _)) => recs.into_iter().map(Ok).collect::<Vec<_>>(),
            Err(e) => vec![Err(e)],
        })
    }

    /// Leaf reached by following the query key's bit at every node's prefix
    /// length.
    pub fn descend(&self, key: &InvSaxKey) -> usize {
        let mut i = 0;
        while !self.nodes[i].leaf {
            let n = &self.nodes[i];
            let bit = (n.prefix_len as usize) < key.width() && key.bit(n.prefix_len as usize);
            let children = n.first_child as usize..(n.first_child + n.child_count) as usize;
            i = children
                .clone()
                .find(|c| self.nodes[*c].key.bit(n.prefix_len as usize) == bit)
                .unwrap_or(if bit { children.end - 1 } else { children.start });
        }
        i
    }

    fn fetch(&self, leaf: &mut Cursor, raw: &mut Option<Cursor>, position: usize) -> Result<DataSeries> {
        if let (Some(r), Some(c)) = (&self.raw, raw.as_mut()) {
            return r.fetch_series(c, self.snapshot.locators()[position]);
        }
        let p = position as u64;
        let page = self.page_starts.partition_point(|s| *s <= p) as u64 - 1;
        let slot = p - self.page_starts[page as usize];
        let width = self.codec.layout.width();
        let off = self.header.leaf_offset + page * self.header.page_len + PAGE_HEADER_LEN as u64 + slot * width as u64;
        let mut buf = vec![0u8; width];
        leaf.read_at(off, &mut buf)?;
        self.file.ctx().stats().add_fetched(1);
        let rec = self.codec.layout.decode(&buf)?;
        rec.payload.series(rec.timestamp).ok_or_else(|| Error::CorruptPage { path: self.path().to_path_buf(), page })
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

    /// Evaluates every record of the leaf the query key descends to.
    pub fn approx_into(&self, query: &DataSeries, filter: WindowFilter, best: &mut Best, stats: &mut SearchStats) -> Result<()> {
        self.check_query(query)?;
        if self.is_empty() {
            return Ok(());
        }
        let key = self.summarizer.key(query)?;
        let leaf = &self.nodes[self.descend(&key)];
        let mut leaf_cur = self.cursor();
        let mut raw_cur = self.raw.as_ref().map(|r| r.cursor());
        let start = self.page_starts[leaf.first_page as usize] as usize;
        for pos in start..start + leaf.count as usize {
            if matches!(filter, WindowFilter::Before { .. }) && !filter.admits(self.snapshot.timestamps()[pos]) {
                continue;
            }
            let series = self.fetch(&mut leaf_cur, &mut raw_cur, pos)?;
            stats.records_fetched += 1;
            if !filter.admits(series.timestamp) {
                continue;
            }
            stats.visited_records += 1;
            let distance = squared_distance(&query.values, &series.values).sqrt();
            best.offer(Neighbor { distance, timestamp: series.timestamp, locator: self.snapshot.locators()[pos], series });
        }
        Ok(())
    }

    pub fn approx_search(&self, q: &Query) -> Result<Answer> {
        let filter = WindowFilter::before(self.header.max_ts, q.window);
        let mut best = Best::default();
        let mut stats = SearchStats { runs_touched: 1, ..Default::default() };
        self.approx_into(&q.series, filter, &mut best, &mut stats)?;
        finish(best, stats, self.is_empty(), q.window)
    }

    /// Approximate seed followed by the shared summary scan.
    pub fn exact_search(&self, q: &Query) -> Result<Answer> {
        let filter = WindowFilter::before(self.header.max_ts, q.window);
        let mut best = Best::default();
        let mut stats = SearchStats { runs_touched: 1, ..Default::default() };
        self.approx_into(&q.series, filter, &mut best, &mut stats)?;
        if !self.is_empty() {
            let table = self.summarizer.mindist_table(&q.series)?;
            let mut leaf_cur = self.cursor();
            let mut raw_cur = self.raw.as_ref().map(|r| r.cursor());
            sims(&self.snapshot, &table, &q.series, filter, &mut best, &mut stats, |i| self.fetch(&mut leaf_cur, &mut raw_cur, i))?;
        }
        finish(best, stats, self.is_empty(), q.window)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::linear_scan;
    use crate::series::RandomWalk;
    use crate::storage::write_raw_file;
    use crate::summarization::{invert_sum, SaxWord};
    use proptest::prelude::*;

    fn key(symbols: &[u16], bits: u8) -> InvSaxKey {
        invert_sum(&SaxWord::new(symbols.to_vec(), bits).unwrap())
    }

    fn skeleton_of(keys: &[InvSaxKey]) -> TrieSkeleton {
        let mut s = TrieSkeleton::new();
        for k in keys {
            s.push(*k).unwrap();
        }
        s
    }

    #[test]
    fn single_key_is_root_leaf() {
        let mut s = skeleton_of(&[key(&[1, 2], 3)]);
        s.compact(4);
        let root = s.node(s.root().unwrap());
        assert!(root.leaf);
        assert_eq!(root.count, 1);
    }

    #[test]
    fn equal_words_share_a_node() {
        let k = key(&[5, 1], 3);
        let mut s = skeleton_of(&[k, k]);
        assert_eq!(s.total(), 2);
        assert_eq!(s.leaves().len(), 1);
    }

    #[test]
    fn last_bit_difference_gives_one_parent() {
        let a = InvSaxKey::from_u128(0b100100, 6);
        let b = InvSaxKey::from_u128(0b100101, 6);
        let s = skeleton_of(&[a, b]);
        let root = s.node(s.root().unwrap());
        assert!(!root.leaf);
        assert_eq!(root.prefix_len, 5);
        assert_eq!(root.children.len(), 2);
    }

    #[test]
    fn out_of_order_rejected() {
        let mut s = skeleton_of(&[InvSaxKey::from_u128(5, 6)]);
        assert!(matches!(s.push(InvSaxKey::from_u128(4, 6)), Err(Error::OutOfOrderInput(1))));
    }

    #[test]
    fn joins_under_common_starred_prefix() {
        let a = key(&[0b00, 0b01, 0b10, 0b11], 2);
        let b = key(&[0b01, 0b00, 0b11, 0b10], 2);
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        let s = skeleton_of(&[a, b]);
        let root = s.node(s.root().unwrap());
        assert_eq!(root.prefix_len, 4);
        assert_eq!(per_segment_mask(&root.key, 4, 4), vec![(1, 0), (1, 0), (1, 1), (1, 1)]);
    }

    #[test]
    fn four_series_example_pairs_become_sibling_leaves() {
        let (c, e, f, g) = (0b010, 0b100, 0b101, 0b110);
        let keys = [key(&[e, c], 3), key(&[f, c], 3), key(&[e, e], 3), key(&[g, e], 3)];
        let mut s = skeleton_of(&keys);
        assert_eq!(s.compact(2), vec![2, 0]);
        let root = s.node(s.root().unwrap()).clone();
        assert_eq!(root.prefix_len, 1);
        let kids: Vec<_> = root.children.iter().map(|c| s.node(*c).clone()).collect();
        assert!(kids.iter().all(|k| k.leaf && k.count == 2));
        assert_eq!(kids[0].key, keys[0]);
        assert_eq!(kids[1].key, keys[2]);
        assert_eq!(kids[0].prefix_len, 4);
        assert_eq!(kids[1].prefix_len, 2);
    }

    #[test]
    fn siblings_over_capacity_stay_apart() {
        let a = InvSaxKey::from_u128(0b000, 3);
        let b = InvSaxKey::from_u128(0b001, 3);
        let mut s = skeleton_of(&[a, a, b]);
        assert_eq!(s.compact(2), vec![0]);
        assert_eq!(s.leaves().len(), 2);
        assert_eq!(s.compact(3), vec![1, 0]);
    }

    fn sorted_keys(n: usize, seed: u64) -> Vec<InvSaxKey> {
        let sm = Summarizer::new(SummaryConfig::new(4, 3, 16).unwrap()).unwrap();
        let mut keys: Vec<_> = RandomWalk::new(n, 16, seed).unwrap().map(|s| sm.key(&s).unwrap()).collect();
        keys.sort();
        keys
    }

    fn subtree_keys(s: &TrieSkeleton, id: u32, keys: &[InvSaxKey], at: &mut usize, out: &mut Vec<(u32, Vec<InvSaxKey>)>) -> Vec<InvSaxKey> {
        let n = s.node(id);
        let mine: Vec<InvSaxKey> = if n.leaf {
            let v = keys[*at..*at + n.count as usize].to_vec();
            *at += n.count as usize;
            v
        } else {
            n.children.iter().flat_map(|c| subtree_keys(s, *c, keys, at, out)).collect()
        };
        out.push((id, mine.clone()));
        mine
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn structure_invariants(n in 1usize..400, seed in 0u64..1000, leaf in 1usize..12) {
            let keys = sorted_keys(n, seed);
            let mut s = skeleton_of(&keys);
            let distinct = { let mut d = keys.clone(); d.dedup(); d.len() };
            prop_assert_eq!(s.leaves().len(), distinct);

            // before compaction each parent's prefix is the LCP of its subtree
            let mut groups = Vec::new();
            subtree_keys(&s, s.root().unwrap(), &keys, &mut 0, &mut groups);
            for (id, ks) in &groups {
                let node = s.node(*id);
                if !node.leaf {
                    let lcp = ks.iter().map(|k| k.common_prefix_len(&ks[0])).min().unwrap();
                    prop_assert_eq!(node.prefix_len as usize, lcp);
                }
            }

            let passes = s.compact(leaf);
            prop_assert_eq!(*passes.last().unwrap(), 0);
            prop_assert_eq!(s.compact_pass(leaf), 0);
            prop_assert_eq!(s.total(), n as u64);

            let mut groups = Vec::new();
            subtree_keys(&s, s.root().unwrap(), &keys, &mut 0, &mut groups);
            for (id, ks) in &groups {
                let node = s.node(*id);
                prop_assert_eq!(ks.len() as u64, node.count);
                for k in ks {
                    prop_assert!(k.starts_with(&node.key, node.prefix_len as usize));
                }
            }
            // an internal node with only leaf children must be over capacity
            for id in s.bfs() {
                let node = s.node(id);
                if !node.leaf && node.children.iter().all(|c| s.node(*c).leaf) {
                    prop_assert!(node.count > leaf as u64);
                }
            }
        }
    }

    fn build(count: usize, leaf: usize, materialized: bool, seed: u64) -> (tempfile::TempDir, Vec<DataSeries>, TrieIndex) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SummaryConfig::new(8, 4, 64).unwrap();
        let ctx = IoContext::new(64, 64).unwrap();
        let data: Vec<_> = RandomWalk::new(count, 64, seed).unwrap().collect();
        let raw_path = dir.path().join("d.raw");
        write_raw_file(&raw_path, 64, true, data.clone(), &ctx).unwrap();
        let raw = Arc::new(RawFile::open(&raw_path, &ctx).unwrap());
        let params = TrieParams { summary: cfg, leaf_size: leaf, materialized };
        let t = build_trie(raw, dir.path().join("t.ctri"), params, MemoryBudget::new(500).unwrap(), dir.path(), &ctx).unwrap();
        (dir, data, t)
    }

    #[test]
    fn one_series_index() {
        let (_d, data, t) = build(1, 4, false, 1);
        assert_eq!(t.nodes().len(), 1);
        assert!(t.nodes()[0].leaf);
        let a = t.exact_search(&Query::new(data[0].clone())).unwrap();
        assert_eq!(a.neighbor.distance, 0.0);
    }

    #[test]
    fn leaves_match_sorted_order_and_masks_hold() {
        let (_d, data, t) = build(3000, 50, false, 2);
        let recs: Vec<_> = t.records().map(|r| r.unwrap()).collect();
        assert_eq!(recs.len(), data.len());
        assert!(recs.windows(2).all(|w| w[0] <= w[1]));
        for (i, n) in t.nodes().iter().enumerate() {
            if n.leaf {
                assert!(n.count <= 50 || n.page_count > 1);
                let start = t.page_starts[n.first_page as usize] as usize;
                for r in &recs[start..start + n.count as usize] {
                    assert!(r.key.starts_with(&n.key, n.prefix_len as usize));
                }
            } else {
                let kids = t.children(i);
                assert_eq!(kids.iter().map(|k| k.count).sum::<u64>(), n.count);
            }
        }
        // every entry reachable exactly once
        let mut offs: Vec<_> = recs.iter().map(|r| r.payload.offset().unwrap()).collect();
        offs.sort();
        offs.dedup();
        assert_eq!(offs.len(), 3000);
        // pages are laid out contiguously in key order
        let pages: Vec<_> = {
            let mut v: Vec<_> = t.nodes().iter().filter(|n| n.leaf).map(|n| (n.first_page, n.page_count)).collect();
            v.sort();
            v
        };
        let mut expect = 0;
        for (first, count) in pages {
            assert_eq!(first, expect);
            expect += count as u64;
        }
        assert_eq!(expect, t.page_count());
    }

    #[test]
    fn exact_and_approx_against_oracle() {
        for mat in [false, true] {
            let (_d, data, t) = build(2000, 40, mat, 3);
            for s in data.iter().step_by(211) {
                assert_eq!(t.approx_search(&Query::new(s.clone())).unwrap().neighbor.distance, 0.0);
            }
            for q in RandomWalk::new(15, 64, 77).unwrap() {
                let (_, d) = linear_scan(&q, &data, 0).unwrap();
                let exact = t.exact_search(&Query::new(q.clone())).unwrap();
                let approx = t.approx_search(&Query::new(q.clone())).unwrap();
                assert!((exact.neighbor.distance - d).abs() <= 1e-6);
                assert!(approx.neighbor.distance >= d - 1e-9);
            }
        }
    }

    #[test]
    fn utilization_below_one() {
        let (_d, _data, t) = build(2000, 40, false, 4);
        let u = t.utilization();
        assert!(u > 0.0 && u < 1.0, "{u}");
    }
}
