//! Acceptance suite: nine end-to-end checks, one PASS/FAIL line each.
//! Runs without the libtest harness so every line is always printed.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zsax::bench::{run_workload, BenchMode, QueryKind, WorkloadSpec};
use zsax::extsort::MemoryBudget;
use zsax::search::linear_scan;
use zsax::series::{euclidean_distance, DataSeries, Query, RandomWalk};
use zsax::storage::{write_raw_file, IoContext, RawFile};
use zsax::summarization::{invert_sum, mindist, restore_sum, SaxWord, Summarizer, SummaryConfig};
use zsax::tree::{build_tree, TreeIndex, TreeParams};
use zsax::trie::{build_trie, TrieParams};
use zsax::{LsmIndex, LsmLayout, LsmParams};

type Check = Result<(bool, String), Box<dyn std::error::Error + Send + Sync>>;

struct Desk {
    data: Vec<DataSeries>,
    queries: Vec<DataSeries>,
}

fn desk() -> Desk {
    Desk {
        data: RandomWalk::new(10_000, 256, 11).unwrap().collect(),
        queries: RandomWalk::new(100, 256, 12).unwrap().collect(),
    }
}

fn write_raw(path: &Path, data: &[DataSeries], ctx: &IoContext) {
    write_raw_file(path, 256, true, data.iter().cloned(), ctx).unwrap();
}

fn exactness(d: &Desk) -> Check {
    let dir = tempfile::tempdir()?;
    let ctx = IoContext::with_default_blocks(256);
    let raw_path = dir.path().join("data.raw");
    write_raw(&raw_path, &d.data, &ctx);
    let raw = Arc::new(RawFile::open(&raw_path, &ctx)?);
    let budget = MemoryBudget::new(100_000)?;
    let tree = build_tree(raw.clone(), dir.path().join("t.ctre"), TreeParams::default(), budget, dir.path(), &ctx)?;
    let trie = build_trie(raw, dir.path().join("t.ctri"), TrieParams::default(), budget, dir.path(), &ctx)?;

    let half = dir.path().join("half.raw");
    write_raw(&half, &d.data[..5000], &ctx);
    let mut lsm = LsmIndex::bulk_load(dir.path().join("lsm"), &half, LsmParams::default(), budget, &ctx)?;
    for s in &d.data[5000..] {
        lsm.insert(s.clone())?;
    }

    let mut worst = 0.0f64;
    for q in &d.queries {
        let (_, oracle) = linear_scan(q, &d.data, 0).unwrap();
        let qq = Query::new(q.clone());
        for got in [
            tree.exact_search(&qq, 1)?.neighbor.distance,
            trie.exact_search(&qq)?.neighbor.distance,
            lsm.exact_search(&qq, 1)?.neighbor.distance,
        ] {
            worst = worst.max((got - oracle).abs());
        }
    }
    Ok((worst <= 1e-6, format!("max |index - linear scan| = {worst:.3e} over 100 queries x 3 indexes, lsm runs = {}", lsm.run_count())))
}

fn lower_bound(_: &Desk) -> Check {
    let sm = Summarizer::new(SummaryConfig::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let queries = RandomWalk::new(100_000, 256, 22)?;
    let others = RandomWalk::new(100_000, 256, 23)?;
    let (mut violations, mut tight) = (0u64, 0f64);
    for (i, (q, s)) in queries.zip(others).enumerate() {
        // every other pair is a noisy copy of the query, so the bound is exercised near zero too
        let s = if i % 2 == 0 {
            s
        } else {
            DataSeries::new(q.values.iter().map(|v| v + rng.random_range(-0.3..0.3)).collect())
        };
        let bound = mindist(&sm.paa(&q)?, &sm.word(&s)?, sm.table(), 256)?;
        let ed = euclidean_distance(&q, &s)?;
        if bound > ed + 1e-9 {
            violations += 1;
        }
        if ed > 0.0 {
            tight = tight.max(bound / ed);
        }
    }
    Ok((violations == 0, format!("{violations} violations in 100000 pairs, max mindist/ED = {tight:.3}")))
}

fn sortable_keys(_: &Desk) -> Check {
    let mut exhaustive = 0u64;
    let mut failures = 0u64;
    for w in 1..=16usize {
        for c in 1..=16u8 {
            if w * c as usize > 16 {
                continue;
            }
            let cfg = SummaryConfig { segments: w, bits: c, length: w };
            for v in 0u32..(1 << (w * c as usize)) {
                let symbols: Vec<u16> = (0..w).map(|j| ((v >> (j * c as usize)) & ((1 << c) - 1)) as u16).collect();
                let word = SaxWord::new(symbols, c)?;
                if restore_sum(&invert_sum(&word), &cfg)? != word {
                    failures += 1;
                }
                exhaustive += 1;
            }
        }
    }
    let cfg = SummaryConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..1_000_000 {
        let word = SaxWord::new((0..16).map(|_| rng.random_range(0..256u16)).collect(), 8)?;
        if restore_sum(&invert_sum(&word), &cfg)? != word {
            failures += 1;
        }
    }
    let (c, e, f, g) = (0b010, 0b100, 0b101, 0b110);
    let mut named: Vec<(&str, _)> = [("ge", [g, e]), ("ee", [e, e]), ("ec", [e, c]), ("fc", [f, c])]
        .into_iter()
        .map(|(n, s)| (n, invert_sum(&SaxWord::new(s.to_vec(), 3).unwrap())))
        .collect();
    named.sort_by_key(|(_, k)| *k);
    let order: Vec<&str> = named.iter().map(|(n, _)| *n).collect();
    let ok = failures == 0 && order == ["ec", "fc", "ee", "ge"];
    Ok((ok, format!("{failures} roundtrip failures ({exhaustive} exhaustive + 1000000 random words); example order {order:?}")))
}

fn cost_and_fill(_: &Desk) -> (Check, Check) {
    let run = || -> Result<(String, bool, String, bool), Box<dyn std::error::Error + Send + Sync>> {
        let dir = tempfile::tempdir()?;
        let n = 100_000u64;
        let ctx = IoContext::new(1000, 256)?;
        let raw_path = dir.path().join("data.raw");
        write_raw_file(&raw_path, 256, true, RandomWalk::new(n as usize, 256, 41)?, &ctx)?;
        let raw = Arc::new(RawFile::open(&raw_path, &ctx)?);
        let budget = MemoryBudget::new(20_000)?;
        let before = ctx.stats().snapshot();
        let tree = build_tree(raw.clone(), dir.path().join("t.ctre"), TreeParams::default(), budget, dir.path(), &ctx)?;
        let io = ctx.stats().snapshot().since(&before);
        let bound = 8 * n.div_ceil(1000);
        let cost = format!(
            "{} transfers ({} read + {} written) for N=100000, B=1000; bound {bound}",
            io.transfers(),
            io.blocks_read,
            io.blocks_written
        );

        let fill = tree.leaf_fill()?;
        let need = (0.97f64 * 2000.0).ceil() as usize;
        let full = fill[..fill.len() - 1].iter().all(|c| *c >= need);
        let tree_util = n as f64 / (fill.len() * 2000) as f64;
        let trie = build_trie(raw, dir.path().join("t.ctri"), TrieParams::default(), budget, dir.path(), &ctx)?;
        let trie_util = trie.utilization();
        let fill_line = format!(
            "tree: {} leaves, min non-final fill {} (need {need}), utilization {:.3}; trie: {} leaves over {} pages, utilization {:.3}",
            fill.len(),
            fill[..fill.len() - 1].iter().min().unwrap(),
            tree_util,
            trie.leaf_count(),
            trie.page_count(),
            trie_util
        );
        Ok((cost, io.transfers() <= bound, fill_line, full && trie_util < tree_util))
    };
    match run() {
        Ok((cost, cost_ok, fill, fill_ok)) => (Ok((cost_ok, cost)), Ok((fill_ok, fill))),
        Err(e) => {
            let msg = e.to_string();
            (Err(msg.clone().into()), Err(msg.into()))
        }
    }
}

fn lsm_structure(_: &Desk) -> Check {
    let dir = tempfile::tempdir()?;
    let ctx = IoContext::new(128, 64)?;
    let params = LsmParams {
        tree: TreeParams { summary: SummaryConfig::new(16, 8, 64)?, ..TreeParams::default() },
        buffer_records: 128,
        layout: LsmLayout::Leveled { ratio: 2 },
    };
    let mut lsm = LsmIndex::create(dir.path().join("lsm"), params, &ctx)?;
    let mut worst_runs_ok = true;
    for s in RandomWalk::new(1 << 14, 64, 51)? {
        lsm.insert(s)?;
        if lsm.buffered() == 0 {
            let flushes = lsm.len() / 128;
            let bound = (flushes as f64).log2().ceil() as usize + 1;
            worst_runs_ok &= lsm.run_count() <= bound;
        }
    }
    let runs = lsm.run_count();
    let merges = lsm.max_merge_count();
    let ok = worst_runs_ok && runs <= 8 && merges <= 7;
    Ok((ok, format!("N=16384, M=128: {runs} runs (bound 8), max merges per entry {merges} (bound 7), bound held at every flush: {worst_runs_ok}")))
}

fn window_spec(kind: QueryKind) -> WorkloadSpec {
    WorkloadSpec {
        initial_count: 10_000,
        insert_batch_size: 1_000,
        batches: 10,
        queries: 100,
        query_kind: kind,
        window: if kind == QueryKind::Window { Some(1000) } else { None },
        buffer_records: 1000,
        block_records: 1000,
        memory_records: 100_000,
        seed: 61,
        ..WorkloadSpec::default()
    }
}

fn windows(_: &Desk) -> Check {
    let spec = window_spec(QueryKind::Window);
    let mut reports = Vec::new();
    for mode in [BenchMode::Lsm, BenchMode::Tp, BenchMode::Tree] {
        let dir = tempfile::tempdir()?;
        reports.push(run_workload(&spec, mode, dir.path())?);
    }
    let (btp, tp, pp) = (&reports[0], &reports[1], &reports[2]);
    let mut same = true;
    let mut ordered = true;
    for ((a, b), c) in btp.queries.iter().zip(&tp.queries).zip(&pp.queries) {
        same &= a.distance == b.distance && b.distance == c.distance && a.timestamp == b.timestamp && b.timestamp == c.timestamp;
        ordered &= a.records_fetched <= b.records_fetched && b.records_fetched <= c.records_fetched;
    }
    let mismatches = btp.oracle_mismatches + tp.oracle_mismatches + pp.oracle_mismatches;
    let ok = same && ordered && mismatches == 0 && btp.queries.len() == 100;
    Ok((
        ok,
        format!(
            "identical answers: {same}, oracle mismatches: {mismatches}, btp<=tp<=pp on every query: {ordered}; mean fetched btp {:.0} / tp {:.0} / pp {:.0}",
            btp.mean_records_fetched, tp.mean_records_fetched, pp.mean_records_fetched
        ),
    ))
}

fn approx_trend(d: &Desk) -> Check {
    let dir = tempfile::tempdir()?;
    let ctx = IoContext::with_default_blocks(256);
    let raw_path = dir.path().join("data.raw");
    write_raw(&raw_path, &d.data, &ctx);
    let raw = Arc::new(RawFile::open(&raw_path, &ctx)?);
    let params = TreeParams { leaf_size: 200, ..TreeParams::default() };
    let tree: TreeIndex = build_tree(raw, dir.path().join("t.ctre"), params, MemoryBudget::new(100_000)?, dir.path(), &ctx)?;
    let (mut r1, mut r10, mut wins) = (0.0, 0.0, 0);
    for q in &d.queries {
        let q = Query::new(q.clone());
        let a = tree.approx_search(&q, 1)?.neighbor.distance;
        let b = tree.approx_search(&q, 10)?.neighbor.distance;
        r1 += a;
        r10 += b;
        wins += (b < a) as u32;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let mut zero = true;
    for _ in 0..100 {
        let s = &d.data[rng.random_range(0..d.data.len())];
        zero &= tree.approx_search(&Query::new(s.clone()), 1)?.neighbor.distance == 0.0;
    }
    let (m1, m10) = (r1 / 100.0, r10 / 100.0);
    Ok((m10 <= m1 && zero, format!("mean distance radius 1 = {m1:.4}, radius 10 = {m10:.4} (strictly better on {wins}/100); indexed queries at distance 0: {zero}")))
}

fn insertion_path(_: &Desk) -> Check {
    let spec = window_spec(QueryKind::Exact);
    let lsm = run_workload(&spec, BenchMode::Lsm, tempfile::tempdir()?.path())?;
    let tree = run_workload(&spec, BenchMode::Tree, tempfile::tempdir()?.path())?;
    let (a, b) = (lsm.insert_io.blocks_written, tree.insert_io.blocks_written);
    let ok = a < b && lsm.oracle_mismatches == 0 && lsm.queries.len() == 100;
    Ok((ok, format!("blocks written during inserts: lsm {a}, tree rebuilds {b}; lsm oracle mismatches {}", lsm.oracle_mismatches)))
}

fn main() {
    let start = Instant::now();
    let d = desk();
    let names = [
        "exactness",
        "lower-bound soundness",
        "sortable-key correctness",
        "construction cost",
        "fill factor",
        "lsm structure",
        "windowed correctness",
        "approximate quality",
        "insertion path",
    ];
    let mut results: Vec<Option<Check>> = (0..9).map(|_| None).collect();
    std::thread::scope(|s| {
        let d = &d;
        let h1 = s.spawn(move || exactness(d));
        let h2 = s.spawn(move || lower_bound(d));
        let h3 = s.spawn(move || sortable_keys(d));
        let h45 = s.spawn(move || cost_and_fill(d));
        let h6 = s.spawn(move || lsm_structure(d));
        let h7 = s.spawn(move || windows(d));
        let h8 = s.spawn(move || approx_trend(d));
        let h9 = s.spawn(move || insertion_path(d));
        let join = |h: std::thread::ScopedJoinHandle<'_, Check>| h.join().unwrap_or_else(|_| Err("panicked".into()));
        results[0] = Some(join(h1));
        results[1] = Some(join(h2));
        results[2] = Some(join(h3));
        let (c4, c5) = h45.join().unwrap_or_else(|_| (Err("panicked".into()), Err("panicked".into())));
        results[3] = Some(c4);
        results[4] = Some(c5);
        results[5] = Some(join(h6));
        results[6] = Some(join(h7));
        results[7] = Some(join(h8));
        results[8] = Some(join(h9));
    });
    let mut failed = 0;
    for (i, (name, r)) in names.iter().zip(results).enumerate() {
        let (pass, detail) = match r.unwrap() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += !pass as u32;
        println!("criterion {} {name}: {} - {detail}", i + 1, if pass { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} of 9 passed in {:.1}s", 9 - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
