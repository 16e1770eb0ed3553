//! Phase one: distribute super-mers into temporary bin files.
//!
//! Every super-mer is appended to one of F bin files chosen purely from its
//! minimizer value, so all occurrences of any k-mer — which share a
//! minimizer by construction — land in the same bin and phase two can count
//! each bin in isolation. A human-readable stats file records the exact
//! geometry (k, m, F, ordering, normalization) plus per-bin totals so phase
//! two can size its tables and a split run can verify compatibility.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};

use crossbeam_channel::bounded;

use crate::error::{Error, Result};
use crate::minimizer::decompose_supermers;
use crate::ordering::{MinimizerOrdering, Strategy};
use crate::pipeline::{plan_workers, detected_cores, PipelineConfig};
use crate::seq::{packed_len, PackedSeq};
use crate::seqio::{open_reads, split_on_invalid, ReadBundle};

/// Longest super-mer a single record can carry (16-bit length field).
pub const MAX_SUPERMER_BASES: usize = u16::MAX as usize;

/// Records per batch handed from splitters to the bin writer.
const BATCH_RECORDS: usize = 256;

const STATS_MAGIC: &str = "merbin-stats 1";

/// Path of bin `index` under `workdir`.
pub fn bin_path(workdir: &Path, index: u32) -> PathBuf {
    workdir.join(format!("bin_{index:05}.bin"))
}

/// Path of the distribution stats file under `workdir`.
pub fn stats_path(workdir: &Path) -> PathBuf {
    workdir.join("bins.stats")
}

/// Best-effort removal of all bin files.
pub fn remove_bin_files(workdir: &Path, bin_count: u32) {
    for b in 0..bin_count {
        let _ = std::fs::remove_file(bin_path(workdir, b));
    }
}

/// Map a minimizer value onto a bin. A fixed multiply-shift mixer keeps the
/// map independent of the ordering strategy, deterministic across runs, and
/// close to uniform even though minimizer values are heavily skewed towards
/// small codes.
#[inline]
pub fn assign_bin(mmer_code: u32, bin_count: u32) -> u32 {
    let mixed = (mmer_code as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 32;
    (mixed % bin_count as u64) as u32
}

/// Append one super-mer record: length as 2 little-endian bytes, then the
/// packed bases (`ceil(len/4)` bytes, pad bits zero).
pub fn write_record<W: Write>(w: &mut W, seq: &PackedSeq) -> std::io::Result<()> {
    debug_assert!(seq.len() >= 1 && seq.len() <= MAX_SUPERMER_BASES);
    w.write_all(&(seq.len() as u16).to_le_bytes())?;
    w.write_all(seq.bytes())
}

/// Read back one record, `None` on clean end-of-stream. Truncated records
/// and nonzero pad bits surface as `InvalidData`/`UnexpectedEof` errors.
pub fn read_record<R: Read>(r: &mut R) -> std::io::Result<Option<PackedSeq>> {
    let mut first = [0u8; 1];
    loop {
        match r.read(&mut first) {
            Ok(0) => return Ok(None),
            Ok(_) => break,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    let mut second = [0u8; 1];
    r.read_exact(&mut second)?;
    let len = u16::from_le_bytes([first[0], second[0]]) as usize;
    if len == 0 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "zero-length super-mer record",
        ));
    }
    let mut payload = vec![0u8; packed_len(len)];
    r.read_exact(&mut payload)?;
    PackedSeq::from_raw(payload, len).map(Some).map_err(|_| {
        std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "nonzero pad bits in super-mer record",
        )
    })
}

/// Read a whole bin file into memory (tests and small-scale inspection).
pub fn read_bin(path: &Path) -> Result<Vec<PackedSeq>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = CountingReader::new(BufReader::new(file));
    let mut out = Vec::new();
    loop {
        match read_record(&mut reader) {
            Ok(Some(seq)) => out.push(seq),
            Ok(None) => return Ok(out),
            Err(e) => {
                return Err(Error::Corrupt {
                    path: path.to_path_buf(),
                    offset: reader.position(),
                    msg: e.to_string(),
                })
            }
        }
    }
}

/// Reader adapter tracking the byte offset, for error reporting.
pub struct CountingReader<R> {
    inner: R,
    pos: u64,
}

impl<R: Read> CountingReader<R> {
    pub fn new(inner: R) -> Self {
        CountingReader { inner, pos: 0 }
    }

    pub fn position(&self) -> u64 {
        self.pos
    }
}

impl<R: Read> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.pos += n as u64;
        Ok(n)
    }
}

/// Per-bin tallies collected while writing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BinStat {
    pub supermers: u64,
    pub kmers: u64,
}

/// Everything phase two needs to know about a finished phase one.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionStats {
    pub k: usize,
    pub m: u8,
    pub bin_count: u32,
    pub ordering: Strategy,
    pub normalize: bool,
    pub bins: Vec<BinStat>,
}

impl DistributionStats {
    pub fn total_supermers(&self) -> u64 {
        self.bins.iter().map(|b| b.supermers).sum()
    }

    pub fn total_kmers(&self) -> u64 {
        self.bins.iter().map(|b| b.kmers).sum()
    }

    /// Refuse to count bins that were written under a different geometry:
    /// a mismatched k, m, F, ordering, or normalization flag would silently
    /// produce wrong counts.
    pub fn check_matches(&self, cfg: &PipelineConfig) -> Result<()> {
        let mismatch = |field: &'static str, expected: String, found: String| {
            Err(Error::StatsMismatch {
                field,
                expected,
                found,
            })
        };
        if self.k != cfg.k {
            return mismatch("k", cfg.k.to_string(), self.k.to_string());
        }
        if self.m != cfg.m {
            return mismatch("m", cfg.m.to_string(), self.m.to_string());
        }
        if self.bin_count != cfg.bin_count {
            return mismatch("bins", cfg.bin_count.to_string(), self.bin_count.to_string());
        }
        if self.ordering != cfg.ordering {
            return mismatch("ordering", cfg.ordering.to_string(), self.ordering.to_string());
        }
        if self.normalize != cfg.normalize {
            return mismatch(
                "normalize",
                cfg.normalize.to_string(),
                self.normalize.to_string(),
            );
        }
        Ok(())
    }

    /// Write the stats file: a magic line, key=value headers, then one CSV
    /// row per bin.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        let mut body = || -> std::io::Result<()> {
            writeln!(w, "{STATS_MAGIC}")?;
            writeln!(w, "k={}", self.k)?;
            writeln!(w, "m={}", self.m)?;
            writeln!(w, "bins={}", self.bin_count)?;
            writeln!(w, "ordering={}", self.ordering)?;
            writeln!(w, "normalize={}", self.normalize)?;
            writeln!(w, "bin,supermers,kmers")?;
            for (idx, bin) in self.bins.iter().enumerate() {
                writeln!(w, "{idx},{},{}", bin.supermers, bin.kmers)?;
            }
            w.flush()
        };
        body().map_err(|e| Error::io(path, e))
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let mut next = |expect: &str| -> Result<(u64, String)> {
            match lines.next() {
                Some((idx, Ok(line))) => Ok((idx as u64 + 1, line)),
                Some((_, Err(e))) => Err(Error::io(path, e)),
                None => Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 0,
                    msg: format!("unexpected end of stats file, expected {expect}"),
                }),
            }
        };

        let (line_no, magic) = next("magic line")?;
        if magic != STATS_MAGIC {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("unsupported stats file (found {magic:?}, expected {STATS_MAGIC:?})"),
            });
        }
        let mut field = |name: &str| -> Result<String> {
            let (line_no, line) = next(name)?;
            line.strip_prefix(&format!("{name}="))
                .map(str::to_string)
                .ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    msg: format!("expected {name}=..., found {line:?}"),
                })
        };
        let parse_fail = |line: u64, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };

        let k: usize = field("k")?
            .parse()
            .map_err(|_| parse_fail(2, "invalid k".into()))?;
        let m: u8 = field("m")?
            .parse()
            .map_err(|_| parse_fail(3, "invalid m".into()))?;
        let bin_count: u32 = field("bins")?
            .parse()
            .map_err(|_| parse_fail(4, "invalid bin count".into()))?;
        let ordering: Strategy = field("ordering")?
            .parse()
            .map_err(|_| parse_fail(5, "invalid ordering tag".into()))?;
        let normalize: bool = field("normalize")?
            .parse()
            .map_err(|_| parse_fail(6, "invalid normalize flag".into()))?;

        let (line_no, header) = next("bin header")?;
        if header != "bin,supermers,kmers" {
            return Err(parse_fail(line_no, format!("bad bin header {header:?}")));
        }
        let mut bins = vec![BinStat::default(); bin_count as usize];
        for entry in bins.iter_mut() {
            let (line_no, row) = next("bin row")?;
            let fields: Vec<&str> = row.split(',').collect();
            let parsed = (|| -> Option<BinStat> {
                if fields.len() != 3 {
                    return None;
                }
                Some(BinStat {
                    supermers: fields[1].parse().ok()?,
                    kmers: fields[2].parse().ok()?,
                })
            })();
            *entry = parsed.ok_or_else(|| parse_fail(line_no, format!("bad bin row {row:?}")))?;
        }
        Ok(DistributionStats {
            k,
            m,
            bin_count,
            ordering,
            normalize,
            bins,
        })
    }
}

/// Append `seq` to `batch` for `bin`, splitting super-mers longer than the
/// 16-bit record limit into overlapping pieces that preserve every
/// k-window (consecutive pieces overlap in k-1 bases).
fn push_supermer(batch: &mut Vec<(u32, PackedSeq)>, bin: u32, seq: PackedSeq, k: usize) {
    if seq.len() <= MAX_SUPERMER_BASES {
        batch.push((bin, seq));
        return;
    }
    let mut start = 0usize;
    loop {
        let take = (seq.len() - start).min(MAX_SUPERMER_BASES);
        batch.push((bin, seq.slice(start, take)));
        if start + take == seq.len() {
            return;
        }
        start = start + take - (k - 1);
    }
}

/// Run phase one: stream reads from `inputs`, decompose into super-mers,
/// and distribute across `cfg.bin_count` bin files in `cfg.workdir`.
/// Returns the stats plus the number of base bytes read (for throughput
/// reporting). On error all bin files are removed.
/// Returns the per-bin stats and the total number of read bases streamed
/// (not file bytes: headers, quality lines, and compression don't count).
pub fn run_phase_one(
    cfg: &PipelineConfig,
    inputs: &[PathBuf],
    ordering: &MinimizerOrdering,
) -> Result<(DistributionStats, u64)> {
    std::fs::create_dir_all(&cfg.workdir).map_err(|e| Error::io(&cfg.workdir, e))?;
    let plan = plan_workers(cfg.threads, detected_cores(), inputs.len());

    // Create every bin up front: empty inputs must still leave F (empty)
    // bins behind, and the single writer below owns all handles.
    let mut writers = Vec::with_capacity(cfg.bin_count as usize);
    for b in 0..cfg.bin_count {
        let path = bin_path(&cfg.workdir, b);
        match File::create(&path) {
            Ok(f) => writers.push(BufWriter::new(f)),
            Err(e) => {
                remove_bin_files(&cfg.workdir, b);
                return Err(Error::io(path, e));
            }
        }
    }

    let next_file = AtomicUsize::new(0);
    let result = std::thread::scope(|scope| -> Result<(Vec<BinStat>, u64)> {
        let (bundle_tx, bundle_rx) = bounded::<ReadBundle>(cfg.queue_capacity);
        let (batch_tx, batch_rx) = bounded::<Vec<(u32, PackedSeq)>>(cfg.queue_capacity);

        let mut readers = Vec::new();
        for _ in 0..plan.p1_readers {
            let tx = bundle_tx.clone();
            let next_file = &next_file;
            readers.push(scope.spawn(move || -> Result<u64> {
                let mut bytes = 0u64;
                loop {
                    let idx = next_file.fetch_add(1, AtomicOrdering::Relaxed);
                    let Some(path) = inputs.get(idx) else {
                        return Ok(bytes);
                    };
                    let mut stream = open_reads(path, cfg.input_format)?;
                    while let Some(bundle) = stream.next_bundle(cfg.bundle_bytes)? {
                        bytes += bundle.total_bytes as u64;
                        if tx.send(bundle).is_err() {
                            return Ok(bytes);
                        }
                    }
                }
            }));
        }
        drop(bundle_tx);

        let mut splitters = Vec::new();
        for _ in 0..plan.p1_splitters {
            let rx = bundle_rx.clone();
            let tx = batch_tx.clone();
            splitters.push(scope.spawn(move || {
                let mut batch = Vec::with_capacity(BATCH_RECORDS);
                for bundle in rx.iter() {
                    for read in &bundle.reads {
                        for frag in split_on_invalid(read, cfg.k) {
                            for sm in
                                decompose_supermers(&frag.bases, cfg.k, ordering, cfg.normalize)
                            {
                                let bin = assign_bin(sm.minimizer.code(), cfg.bin_count);
                                push_supermer(&mut batch, bin, sm.seq, cfg.k);
                                if batch.len() >= BATCH_RECORDS {
                                    let full =
                                        std::mem::replace(&mut batch, Vec::with_capacity(BATCH_RECORDS));
                                    if tx.send(full).is_err() {
                                        return;
                                    }
                                }
                            }
                        }
                    }
                }
                if !batch.is_empty() {
                    let _ = tx.send(batch);
                }
            }));
        }
        drop(bundle_rx);
        drop(batch_tx);

        // This thread is the single bin writer. On write failure it keeps
        // draining (discarding) so splitters never block on a dead queue.
        let mut stats = vec![BinStat::default(); cfg.bin_count as usize];
        let mut failure: Option<Error> = None;
        for batch in batch_rx.iter() {
            if failure.is_some() {
                continue;
            }
            for (bin, seq) in batch {
                if let Err(e) = write_record(&mut writers[bin as usize], &seq) {
                    failure = Some(Error::io(bin_path(&cfg.workdir, bin), e));
                    break;
                }
                stats[bin as usize].supermers += 1;
                stats[bin as usize].kmers += (seq.len() - cfg.k + 1) as u64;
            }
        }

        let mut input_bytes = 0u64;
        for handle in readers {
            match handle.join().expect("reader worker panicked") {
                Ok(bytes) => input_bytes += bytes,
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
        }
        for handle in splitters {
            handle.join().expect("splitter worker panicked");
        }
        match failure {
            Some(e) => Err(e),
            None => Ok((stats, input_bytes)),
        }
    });

    let finish = result.and_then(|(stats, input_bytes)| {
        for (b, w) in writers.iter_mut().enumerate() {
            w.flush()
                .map_err(|e| Error::io(bin_path(&cfg.workdir, b as u32), e))?;
        }
        Ok((stats, input_bytes))
    });

    match finish {
        Ok((bins, input_bytes)) => Ok((
            DistributionStats {
                k: cfg.k,
                m: cfg.m,
                bin_count: cfg.bin_count,
                ordering: ordering.strategy(),
                normalize: cfg.normalize,
                bins,
            },
            input_bytes,
        )),
        Err(e) => {
            drop(writers);
            remove_bin_files(&cfg.workdir, cfg.bin_count);
            Err(e)
        }
    }
}
