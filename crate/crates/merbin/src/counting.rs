//! Phase two: count each bin with bounded-probe open addressing.
//!
//! Per bin, super-mer records stream through splitter workers that roll out
//! k-mers (canonical when normalization is on) and route each to one of H
//! hasher workers by a hash of the k-mer itself — so a given k-mer is only
//! ever touched by one worker and tables need no locks. Insertion uses
//! double hashing with at most `theta` trials of `W` consecutive slots
//! each; k-mers that exhaust their trials go to a per-worker spill file and
//! are recounted exactly after the bin finishes, in fresh tables of doubled
//! capacity. Counts are therefore exact for any capacity, theta, and W.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use crossbeam_channel::bounded;

use crate::distribution::{bin_path, read_record, write_record, CountingReader, DistributionStats};
use crate::error::{Error, Result};
use crate::kmer::Kmer;
use crate::output::ResultWriter;
use crate::pipeline::{detected_cores, plan_workers, PipelineConfig, WorkerPlan};
use crate::seq::{complement, PackedSeq};

/// Smallest table the sizing model will produce.
const MIN_CAPACITY: usize = 3;

/// K-mers per batch on the splitter→hasher queues.
const KMER_BATCH: usize = 1024;

/// Records per batch on the reader→splitter queue.
const RECORD_BATCH: usize = 256;

/// The double-hashing pair over the packed byte image of a k-mer:
/// h1 accumulates `31*h1 + byte`, h2 accumulates `37*h2 + (byte XOR 0xFF)`,
/// both modulo 2^32.
#[inline]
pub fn hash_pair(x: &Kmer) -> (u32, u32) {
    let mut h1: u32 = 0;
    let mut h2: u32 = 0;
    for i in 0..x.packed_bytes() {
        let byte = x.packed_byte(i);
        h1 = h1.wrapping_mul(31).wrapping_add(byte as u32);
        h2 = h2.wrapping_mul(37).wrapping_add((byte ^ 0xFF) as u32);
    }
    (h1, h2)
}

/// Probe value for `trial`: h1 + trial*h2 (mod 2^32). The slot index is
/// this value modulo the table capacity; trial t scans the window of W
/// consecutive slots starting there.
#[inline]
pub fn probe_hash(x: &Kmer, trial: u32) -> u32 {
    let (h1, h2) = hash_pair(x);
    h1.wrapping_add(trial.wrapping_mul(h2))
}

/// Route a k-mer to one of `workers` hasher workers. Deliberately a
/// different byte mixer (FNV-1a) than [`probe_hash`], so worker choice and
/// probe sequence stay uncorrelated.
#[inline]
pub fn partition_kmer(x: &Kmer, workers: u32) -> u32 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for i in 0..x.packed_bytes() {
        h ^= x.packed_byte(i) as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    (h % workers as u64) as u32
}

/// Outcome of one insertion attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    /// Key was present; its counter was incremented.
    Counted,
    /// Key claimed an empty slot with counter 1.
    Inserted,
    /// All theta trials failed; the key must go to the spill channel.
    Spilled,
}

#[derive(Clone, Copy)]
struct Slot {
    key: Kmer,
    /// 0 marks an empty slot; stored keys start at 1.
    count: u32,
}

/// Open-addressing count table with double hashing and windowed probing.
pub struct CountTable {
    slots: Vec<Slot>,
    capacity: usize,
    theta: u32,
    window: usize,
    occupied: usize,
    attempts: u64,
    first_trial_hits: u64,
}

impl CountTable {
    /// Bytes per slot, for sizing against the memory cap.
    pub const SLOT_BYTES: usize = std::mem::size_of::<Slot>();

    pub fn new(capacity: usize, theta: u32, window: usize) -> Self {
        assert!(capacity >= 1 && theta >= 1 && window >= 1);
        CountTable {
            slots: vec![
                Slot {
                    key: Kmer::default(),
                    count: 0
                };
                capacity
            ],
            capacity,
            theta,
            window: window.min(capacity),
            occupied: 0,
            attempts: 0,
            first_trial_hits: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn occupied(&self) -> usize {
        self.occupied
    }

    pub fn byte_size(&self) -> u64 {
        (self.capacity * Self::SLOT_BYTES) as u64
    }

    /// Fraction of insertions resolved on their first trial.
    pub fn first_trial_fraction(&self) -> f64 {
        if self.attempts == 0 {
            1.0
        } else {
            self.first_trial_hits as f64 / self.attempts as f64
        }
    }

    /// Insert one occurrence of `x`: increment its counter if present
    /// (saturating at 2^32-1), claim the first empty slot in a probe
    /// window otherwise, or report `Spilled` after theta trials. Inspects
    /// at most theta*W slots.
    pub fn insert(&mut self, x: &Kmer) -> InsertOutcome {
        self.attempts += 1;
        let (h1, h2) = hash_pair(x);
        let cap = self.capacity as u64;
        // An odd stride is never zero, and a prime capacity divides it only
        // for a vanishing fraction of keys, so the trial sequence
        // h1 + t*stride (mod capacity) almost always cycles the full table.
        let stride = ((h2 | 1) as u64) % cap;
        let mut base = (h1 as u64) % cap;
        for trial in 0..self.theta {
            for offset in 0..self.window {
                let idx = (base as usize + offset) % self.capacity;
                let slot = &mut self.slots[idx];
                if slot.count == 0 {
                    slot.key = *x;
                    slot.count = 1;
                    self.occupied += 1;
                    if trial == 0 {
                        self.first_trial_hits += 1;
                    }
                    return InsertOutcome::Inserted;
                }
                if slot.key == *x {
                    slot.count = slot.count.saturating_add(1);
                    if trial == 0 {
                        self.first_trial_hits += 1;
                    }
                    return InsertOutcome::Counted;
                }
            }
            base = (base + stride) % cap;
        }
        InsertOutcome::Spilled
    }

    /// Iterate the stored (key, count) pairs.
    pub fn entries(&self) -> impl Iterator<Item = (Kmer, u32)> + '_ {
        self.slots
            .iter()
            .filter(|s| s.count > 0)
            .map(|s| (s.key, s.count))
    }
}

/// Capacity estimation state, adapted as bins finish.
#[derive(Debug, Clone)]
pub struct SizingModel {
    /// Predicted distinct/total k-mer ratio, adjusted upward as observed.
    pub ratio: f64,
    pub load_factor_target: f64,
    pub memory_cap_bytes: u64,
}

/// Initial distinct/total prediction for short-read data.
pub const DEFAULT_RATIO: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CapacityEstimate {
    pub capacity: usize,
    /// True when the memory cap, not the k-mer count, decided the size.
    pub clamped: bool,
}

impl SizingModel {
    pub fn new(memory_cap_bytes: u64) -> Self {
        SizingModel {
            ratio: DEFAULT_RATIO,
            load_factor_target: 0.75,
            memory_cap_bytes,
        }
    }

    /// Slots for a bin of `kmers_in_bin` total k-mers:
    /// `kmers * ratio / load_factor_target`, rounded up to a prime, clamped
    /// so `concurrent_tables` such tables fit in the memory cap.
    pub fn estimate_capacity(
        &self,
        kmers_in_bin: u64,
        concurrent_tables: usize,
    ) -> Result<CapacityEstimate> {
        let per_table_budget =
            self.memory_cap_bytes / (CountTable::SLOT_BYTES as u64 * concurrent_tables as u64);
        if per_table_budget < MIN_CAPACITY as u64 {
            return Err(Error::Config(format!(
                "memory cap {} too small for even one {}-slot table across {} workers",
                self.memory_cap_bytes, MIN_CAPACITY, concurrent_tables
            )));
        }
        let desired = ((kmers_in_bin as f64 * self.ratio / self.load_factor_target).ceil()
            as u64)
            .max(MIN_CAPACITY as u64);
        let clamped = desired > per_table_budget;
        let target = desired.min(per_table_budget);
        let mut capacity = next_prime(target);
        if capacity > per_table_budget {
            capacity = prev_prime(per_table_budget);
        }
        Ok(CapacityEstimate {
            capacity: capacity as usize,
            clamped,
        })
    }

    /// Fold a finished bin's observation into the ratio: running maximum
    /// with a 1.1 safety margin, capped at 1.0. Empty bins carry no signal.
    pub fn update_ratio(&mut self, distinct: u64, total: u64) {
        if total == 0 {
            return;
        }
        let observed = distinct as f64 / total as f64;
        self.ratio = self.ratio.max(observed * 1.1).min(1.0);
    }
}

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n % 2 == 0 {
        return n == 2;
    }
    let mut d = 3;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 2;
    }
    true
}

pub(crate) fn next_prime(n: u64) -> u64 {
    let mut c = n.max(2);
    while !is_prime(c) {
        c += 1;
    }
    c
}

pub(crate) fn prev_prime(n: u64) -> u64 {
    assert!(n >= 2);
    let mut c = n;
    while !is_prime(c) {
        c -= 1;
    }
    c
}

/// Append-only overflow file for k-mers that exhausted their probe trials.
/// Records reuse the super-mer container with length = k. The file is
/// created lazily so the common no-spill case touches no disk.
pub struct SpillWriter {
    path: PathBuf,
    sink: Option<BufWriter<File>>,
    spilled: u64,
}

impl SpillWriter {
    pub fn new(path: PathBuf) -> Self {
        SpillWriter {
            path,
            sink: None,
            spilled: 0,
        }
    }

    pub fn spilled(&self) -> u64 {
        self.spilled
    }

    pub fn write(&mut self, x: &Kmer) -> Result<()> {
        if self.sink.is_none() {
            let file = File::create(&self.path).map_err(|e| Error::io(&self.path, e))?;
            self.sink = Some(BufWriter::new(file));
        }
        let sink = self.sink.as_mut().expect("spill sink created above");
        write_record(sink, &x.to_packed_seq()).map_err(|e| Error::io(&self.path, e))?;
        self.spilled += 1;
        Ok(())
    }

    /// Flush and return the path if anything was spilled.
    pub fn finish(mut self) -> Result<Option<(PathBuf, u64)>> {
        match self.sink.take() {
            None => Ok(None),
            Some(mut sink) => {
                use std::io::Write;
                sink.flush().map_err(|e| Error::io(&self.path, e))?;
                Ok(Some((self.path, self.spilled)))
            }
        }
    }
}

fn read_spill(path: &Path, k: usize) -> Result<Vec<Kmer>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = CountingReader::new(BufReader::new(file));
    let mut out = Vec::new();
    loop {
        match read_record(&mut reader) {
            Ok(Some(seq)) => {
                if seq.len() != k {
                    return Err(Error::Corrupt {
                        path: path.to_path_buf(),
                        offset: reader.position(),
                        msg: format!("spilled record of {} bases, expected k = {k}", seq.len()),
                    });
                }
                out.push(Kmer::from_window(&seq, 0, k));
            }
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

/// Count the spilled k-mers of one worker exactly.
///
/// Each pass uses a fresh table of (at least) doubled capacity. A key that
/// lands in a table keeps all its later occurrences (the probe path is a
/// pure function of the key), and a key that spills once spills for the
/// whole pass (slots never empty), so every pass cleanly partitions keys
/// into "fully counted here" and "retry next pass" — pass results
/// concatenate without merging. If the memory cap blocks further growth,
/// the remainder is counted by sort-and-run-length instead.
pub fn process_spill(
    path: &Path,
    k: usize,
    base_capacity: usize,
    theta: u32,
    window: usize,
    per_table_budget: u64,
) -> Result<Vec<(Kmer, u32)>> {
    let mut pending = read_spill(path, k)?;
    let mut results = Vec::new();
    let mut capacity = next_prime(2 * base_capacity as u64).max(MIN_CAPACITY as u64);
    while !pending.is_empty() {
        if capacity * CountTable::SLOT_BYTES as u64 > per_table_budget {
            // No room to grow: fall back to exact sort-and-run-length.
            pending.sort_unstable();
            let mut run_key = pending[0];
            let mut run_count: u32 = 0;
            for key in pending.drain(..) {
                if key == run_key {
                    run_count = run_count.saturating_add(1);
                } else {
                    results.push((run_key, run_count));
                    run_key = key;
                    run_count = 1;
                }
            }
            results.push((run_key, run_count));
            break;
        }
        let mut table = CountTable::new(capacity as usize, theta, window);
        let mut respill = Vec::new();
        for key in pending.drain(..) {
            if table.insert(&key) == InsertOutcome::Spilled {
                respill.push(key);
            }
        }
        results.extend(table.entries());
        pending = respill;
        capacity = next_prime(2 * capacity);
    }
    Ok(results)
}

/// Aggregate figures from a completed phase two.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhaseTwoTotals {
    /// Entries written to the output (count ≥ l).
    pub distinct_written: u64,
    /// Distinct k-mers seen, before the minimum-count filter.
    pub distinct_total: u64,
    /// Total k-mer occurrences counted (equals the window count).
    pub total_kmers: u64,
    /// Insertions that took the emergency spill path.
    pub spill_events: u64,
    /// Largest sum of table bytes live at once.
    pub peak_table_bytes: u64,
    /// Bins whose table capacity was limited by the memory cap.
    pub clamped_bins: u64,
}

struct BinOutcome {
    distinct: u64,
    total: u64,
    spilled: u64,
    table_bytes: u64,
}

/// Count every bin left by phase one and stream filtered results to
/// `cfg.output`. Bins are deleted as they complete unless `cfg.keep_bins`.
pub fn run_phase_two(cfg: &PipelineConfig, stats: &DistributionStats) -> Result<PhaseTwoTotals> {
    stats.check_matches(cfg)?;
    let plan = plan_workers(cfg.threads, detected_cores(), 1);
    let output = cfg.output.as_ref().expect("validated by caller");
    let csv_path = cfg
        .csv_histogram
        .then(|| append_extension(output, "csv"));
    let writer = ResultWriter::create(output, csv_path)?;

    let mut model = SizingModel::new(cfg.memory_cap_bytes);
    let mut totals = PhaseTwoTotals::default();

    // One writer thread spans all bins; hashers send filtered batches.
    let (result_tx, result_rx) = bounded::<Vec<(Kmer, u32)>>(cfg.queue_capacity);
    std::thread::scope(|scope| -> Result<PhaseTwoTotals> {
        let writer_handle = scope.spawn(move || -> Result<u64> {
            let mut writer = writer;
            let mut failure: Option<Error> = None;
            for batch in result_rx.iter() {
                if failure.is_some() {
                    continue; // drain so hashers never block
                }
                if let Err(e) = writer.write_batch(&batch) {
                    failure = Some(e);
                }
            }
            match failure {
                Some(e) => Err(e),
                None => writer.finish(),
            }
        });

        let bins_result = (|| -> Result<()> {
            for bin in 0..cfg.bin_count {
                let path = bin_path(&cfg.workdir, bin);
                let estimate = match cfg.force_capacity {
                    Some(capacity) => CapacityEstimate {
                        capacity,
                        clamped: false,
                    },
                    None => model.estimate_capacity(
                        stats.bins[bin as usize].kmers.div_ceil(plan.p2_hashers as u64),
                        plan.p2_hashers,
                    )?,
                };
                let outcome = process_bin(cfg, bin, &path, &plan, estimate.capacity, &result_tx)?;
                totals.distinct_total += outcome.distinct;
                totals.total_kmers += outcome.total;
                totals.spill_events += outcome.spilled;
                totals.peak_table_bytes = totals.peak_table_bytes.max(outcome.table_bytes);
                totals.clamped_bins += estimate.clamped as u64;
                model.update_ratio(outcome.distinct, outcome.total);
                if !cfg.keep_bins {
                    std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
                }
            }
            Ok(())
        })();
        drop(result_tx);
        let written = writer_handle.join().expect("result writer panicked");
        bins_result?;
        totals.distinct_written = written?;
        Ok(totals)
    })
}

fn append_extension(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Count one bin: reader → splitters → H hashers, all scoped to this call.
fn process_bin(
    cfg: &PipelineConfig,
    bin: u32,
    path: &Path,
    plan: &WorkerPlan,
    capacity: usize,
    result_tx: &crossbeam_channel::Sender<Vec<(Kmer, u32)>>,
) -> Result<BinOutcome> {
    let hashers = plan.p2_hashers;
    let per_table_budget =
        cfg.memory_cap_bytes / (CountTable::SLOT_BYTES as u64 * hashers as u64).max(1);

    let outcome = std::thread::scope(|scope| -> Result<BinOutcome> {
        let (record_tx, record_rx) = bounded::<Vec<PackedSeq>>(cfg.queue_capacity);
        let (kmer_txs, kmer_rxs): (Vec<_>, Vec<_>) = (0..hashers)
            .map(|_| bounded::<Vec<Kmer>>(cfg.queue_capacity))
            .unzip();

        let reader = scope.spawn(move || -> Result<()> {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let mut r = CountingReader::new(BufReader::new(file));
            let mut batch = Vec::with_capacity(RECORD_BATCH);
            loop {
                match read_record(&mut r) {
                    Ok(Some(seq)) => {
                        if seq.len() < cfg.k {
                            return Err(Error::Corrupt {
                                path: path.to_path_buf(),
                                offset: r.position(),
                                msg: format!(
                                    "super-mer of {} bases shorter than k = {}",
                                    seq.len(),
                                    cfg.k
                                ),
                            });
                        }
                        batch.push(seq);
                        if batch.len() >= RECORD_BATCH {
                            let full =
                                std::mem::replace(&mut batch, Vec::with_capacity(RECORD_BATCH));
                            if record_tx.send(full).is_err() {
                                return Ok(());
                            }
                        }
                    }
                    Ok(None) => {
                        if !batch.is_empty() {
                            let _ = record_tx.send(batch);
                        }
                        return Ok(());
                    }
                    Err(e) => {
                        return Err(Error::Corrupt {
                            path: path.to_path_buf(),
                            offset: r.position(),
                            msg: e.to_string(),
                        })
                    }
                }
            }
        });

        let mut splitters = Vec::new();
        for _ in 0..plan.p2_splitters {
            let rx = record_rx.clone();
            let txs = kmer_txs.clone();
            splitters.push(scope.spawn(move || {
                let mut bufs: Vec<Vec<Kmer>> =
                    (0..hashers).map(|_| Vec::with_capacity(KMER_BATCH)).collect();
                for batch in rx.iter() {
                    for seq in batch {
                        emit_kmers(&seq, cfg.k, cfg.normalize, &mut bufs, &txs);
                    }
                }
                for (buf, tx) in bufs.into_iter().zip(&txs) {
                    if !buf.is_empty() {
                        let _ = tx.send(buf);
                    }
                }
            }));
        }
        drop(record_rx);
        drop(kmer_txs);

        let mut hasher_handles = Vec::new();
        for (h, rx) in kmer_rxs.into_iter().enumerate() {
            let spill_path = cfg.workdir.join(format!("spill_{bin:05}_{h}.tmp"));
            let result_tx = result_tx.clone();
            hasher_handles.push(scope.spawn(move || -> Result<BinOutcome> {
                let mut table = CountTable::new(capacity, cfg.theta, cfg.window);
                let mut spill = SpillWriter::new(spill_path);
                let mut total = 0u64;
                let mut failure: Option<Error> = None;
                for batch in rx.iter() {
                    if failure.is_some() {
                        continue; // drain so splitters never block
                    }
                    for key in batch {
                        total += 1;
                        if table.insert(&key) == InsertOutcome::Spilled {
                            if let Err(e) = spill.write(&key) {
                                failure = Some(e);
                                break;
                            }
                        }
                    }
                }
                if let Some(e) = failure {
                    return Err(e);
                }

                let spilled = spill.spilled();
                let mut spill_results = Vec::new();
                if let Some((spill_file, _)) = spill.finish()? {
                    spill_results = process_spill(
                        &spill_file,
                        cfg.k,
                        capacity,
                        cfg.theta,
                        cfg.window,
                        per_table_budget,
                    )?;
                    std::fs::remove_file(&spill_file)
                        .map_err(|e| Error::io(&spill_file, e))?;
                }

                let mut distinct = 0u64;
                let mut out = Vec::with_capacity(KMER_BATCH);
                for (key, count) in table.entries().chain(spill_results) {
                    distinct += 1;
                    if count >= cfg.min_count {
                        out.push((key, count));
                        if out.len() >= KMER_BATCH {
                            let full = std::mem::replace(&mut out, Vec::with_capacity(KMER_BATCH));
                            if result_tx.send(full).is_err() {
                                break;
                            }
                        }
                    }
                }
                if !out.is_empty() {
                    let _ = result_tx.send(out);
                }
                Ok(BinOutcome {
                    distinct,
                    total,
                    spilled,
                    table_bytes: table.byte_size(),
                })
            }));
        }

        let reader_result = reader.join().expect("bin reader panicked");
        for s in splitters {
            s.join().expect("bin splitter panicked");
        }
        let mut agg = BinOutcome {
            distinct: 0,
            total: 0,
            spilled: 0,
            table_bytes: 0,
        };
        let mut failure: Option<Error> = reader_result.err();
        for h in hasher_handles {
            match h.join().expect("hasher worker panicked") {
                Ok(o) => {
                    agg.distinct += o.distinct;
                    agg.total += o.total;
                    agg.spilled += o.spilled;
                    agg.table_bytes += o.table_bytes;
                }
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
        }
        match failure {
            Some(e) => Err(e),
            None => Ok(agg),
        }
    });
    outcome
}

/// Roll the k-windows of one super-mer, canonicalizing when `normalize` is
/// set, and push each k-mer to its partition's buffer (flushing full
/// buffers onto the hasher queues).
fn emit_kmers(
    seq: &PackedSeq,
    k: usize,
    normalize: bool,
    bufs: &mut [Vec<Kmer>],
    txs: &[crossbeam_channel::Sender<Vec<Kmer>>],
) {
    let workers = bufs.len() as u32;
    let mut fwd = Kmer::from_window(seq, 0, k);
    let mut rc = if normalize {
        fwd.reverse_complement()
    } else {
        Kmer::default()
    };
    let last = seq.len() - k;
    for w in 0..=last {
        let key = if normalize { fwd.min(rc) } else { fwd };
        let h = partition_kmer(&key, workers) as usize;
        bufs[h].push(key);
        if bufs[h].len() >= KMER_BATCH {
            let full = std::mem::replace(&mut bufs[h], Vec::with_capacity(KMER_BATCH));
            if txs[h].send(full).is_err() {
                return;
            }
        }
        if w < last {
            let c = seq.get(w + k);
            fwd.roll_back(c);
            if normalize {
                rc.roll_front(complement(c));
            }
        }
    }
}
