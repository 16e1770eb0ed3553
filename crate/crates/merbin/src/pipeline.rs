//! Two-phase driver: configuration, worker planning, and the end-to-end
//! run.
//!
//! All stage-to-stage communication uses bounded blocking channels, so the
//! stage graph (readers → splitters → writer, and per bin reader →
//! splitters → hashers → writer) is acyclic and deadlock-free for any
//! queue capacity ≥ 1; back-pressure simply stalls producers while a slow
//! consumer catches up. A phase boundary is a full barrier, and the stats
//! file written between the phases lets each phase run in a separate
//! process invocation.

use std::path::PathBuf;
use std::time::Instant;

use crate::counting::{self, PhaseTwoTotals};
use crate::distribution::{self, DistributionStats};
use crate::error::{Error, Result};
use crate::kmer::{MAX_K, MIN_K};
use crate::ordering::{FrequencyTable, MinimizerOrdering, Strategy, MAX_M};
use crate::seqio::{self, InputFormat};

/// Which part of the two-phase run to execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhaseMode {
    /// Distribute then count (the normal run).
    #[default]
    Full,
    /// Phase one only: leave bins and the stats file in the working
    /// directory.
    DistributeOnly,
    /// Phase two only: consume bins and stats from a previous
    /// `DistributeOnly` run.
    CountOnly,
}

/// Everything a run needs. Construct with [`PipelineConfig::new`], adjust
/// fields, then hand to [`run`].
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// k-mer length, 8..=479.
    pub k: usize,
    /// Minimizer length, 1 ≤ m < k.
    pub m: u8,
    /// Number of temporary bin files (F).
    pub bin_count: u32,
    /// Minimum count for a k-mer to be written (l).
    pub min_count: u32,
    /// Maximum probe trials per insertion before spilling.
    pub theta: u32,
    /// Slots scanned per probe trial (W).
    pub window: usize,
    /// Cap on bytes held in count tables at any time.
    pub memory_cap_bytes: u64,
    /// Worker override (-t); `None` uses the detected core count.
    pub threads: Option<usize>,
    pub ordering: Strategy,
    /// Count canonical k-mers (min of k-mer and reverse complement).
    pub normalize: bool,
    pub mode: PhaseMode,
    /// Keep bins and the stats file after a successful run.
    pub keep_bins: bool,
    /// Keep just the stats file after a successful run.
    pub keep_stats: bool,
    /// Also write a sorted CSV histogram next to the binary output.
    pub csv_histogram: bool,
    pub verbose: bool,

    /// Sequence file, list file, or `None` for `CountOnly`.
    pub input: Option<PathBuf>,
    pub input_format: InputFormat,
    /// Directory for bins, stats, and spill files.
    pub workdir: PathBuf,
    /// Binary result path; `None` only for `DistributeOnly`.
    pub output: Option<PathBuf>,

    /// Bytes of reads per bundle handed to phase-one splitters.
    pub bundle_bytes: usize,
    /// Items per bounded stage queue.
    pub queue_capacity: usize,
    /// Positions sampled for dfp frequency estimation.
    pub sample_budget: u64,
    /// Test/tuning hook: fixed table capacity instead of the estimate.
    pub force_capacity: Option<usize>,
}

impl PipelineConfig {
    pub fn new(k: usize, workdir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            k,
            m: 7,
            bin_count: 512,
            min_count: 1,
            theta: 64,
            window: 1,
            memory_cap_bytes: 1 << 30,
            threads: None,
            ordering: Strategy::Kmc2,
            normalize: true,
            mode: PhaseMode::Full,
            keep_bins: false,
            keep_stats: false,
            csv_histogram: false,
            verbose: false,
            input: None,
            input_format: InputFormat::Auto,
            workdir: workdir.into(),
            output: None,
            bundle_bytes: 4 << 20,
            queue_capacity: 8,
            sample_budget: 1_000_000,
            force_capacity: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < MIN_K || self.k > MAX_K {
            return Err(Error::Usage(format!(
                "k = {} outside supported range {MIN_K}..{MAX_K}",
                self.k
            )));
        }
        if self.m == 0 || self.m as usize >= self.k {
            return Err(Error::Usage(format!(
                "minimizer length m = {} must satisfy 1 <= m < k = {}",
                self.m, self.k
            )));
        }
        if self.m > MAX_M {
            return Err(Error::Usage(format!(
                "minimizer length m = {} exceeds maximum {MAX_M}",
                self.m
            )));
        }
        if self.bin_count == 0 {
            return Err(Error::Usage("bin count must be at least 1".into()));
        }
        if self.min_count == 0 {
            return Err(Error::Usage("minimum count must be at least 1".into()));
        }
        if self.theta == 0 || self.window == 0 {
            return Err(Error::Usage("theta and window must be at least 1".into()));
        }
        if self.queue_capacity == 0 || self.bundle_bytes == 0 {
            return Err(Error::Usage(
                "queue capacity and bundle size must be at least 1".into(),
            ));
        }
        if self.force_capacity == Some(0) {
            return Err(Error::Usage("forced capacity must be at least 1".into()));
        }
        if self.mode != PhaseMode::CountOnly && self.input.is_none() {
            return Err(Error::Usage("no input path given".into()));
        }
        if self.mode != PhaseMode::DistributeOnly && self.output.is_none() {
            return Err(Error::Usage("no output path given".into()));
        }
        Ok(())
    }
}

/// Worker counts per stage, derived from the core budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkerPlan {
    /// Phase one file readers (one per input file, capped at 2).
    pub p1_readers: usize,
    pub p1_splitters: usize,
    /// Phase two super-mer splitters.
    pub p2_splitters: usize,
    /// Phase two hasher workers (H), each owning one count table.
    pub p2_hashers: usize,
}

/// Deterministic worker allocation. Each phase additionally runs exactly
/// one writer; reader and writer stages are I/O bound, so compute workers
/// get `cores - 2` of the budget.
pub fn plan_workers(threads: Option<usize>, detected_cores: usize, input_files: usize) -> WorkerPlan {
    let cores = threads.unwrap_or(detected_cores).max(1);
    let p2_splitters = (cores / 2).saturating_sub(1).max(1);
    WorkerPlan {
        p1_readers: input_files.clamp(1, 2),
        p1_splitters: cores.saturating_sub(2).max(1),
        p2_splitters,
        p2_hashers: cores.saturating_sub(p2_splitters + 2).max(1),
    }
}

pub fn detected_cores() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// Telemetry from a completed run.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub phase_one: Option<PhaseOneReport>,
    pub phase_two: Option<PhaseTwoReport>,
}

#[derive(Debug, Clone)]
pub struct PhaseOneReport {
    pub seconds: f64,
    /// Size of the input files on disk (compressed size for gzip inputs).
    pub input_bytes: u64,
    /// Read bases streamed out of the parsers.
    pub bases: u64,
    pub supermers: u64,
    pub kmers: u64,
    pub bins: u32,
}

#[derive(Debug, Clone)]
pub struct PhaseTwoReport {
    pub seconds: f64,
    pub totals: PhaseTwoTotals,
}

impl RunReport {
    /// Human-readable summary, one line per fact.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if let Some(p1) = &self.phase_one {
            let mb = p1.input_bytes as f64 / 1e6;
            out.push_str(&format!(
                "phase one: {:.2}s, {:.1} MB input ({:.1} MB/s), {:.1} M bases, \
                 {} super-mers, {} k-mers, {} bins\n",
                p1.seconds,
                mb,
                mb / p1.seconds.max(1e-9),
                p1.bases as f64 / 1e6,
                p1.supermers,
                p1.kmers,
                p1.bins,
            ));
        }
        if let Some(p2) = &self.phase_two {
            let t = &p2.totals;
            out.push_str(&format!(
                "phase two: {:.2}s, {} distinct k-mers written, {} total k-mers ({:.1} M/s), \
                 {} spilled, peak table memory {:.1} MB{}\n",
                p2.seconds,
                t.distinct_written,
                t.total_kmers,
                t.total_kmers as f64 / 1e6 / p2.seconds.max(1e-9),
                t.spill_events,
                t.peak_table_bytes as f64 / 1e6,
                if t.clamped_bins > 0 {
                    format!(" ({} bins memory-clamped)", t.clamped_bins)
                } else {
                    String::new()
                },
            ));
        }
        if out.is_empty() {
            out.push_str("nothing to do\n");
        }
        out
    }
}

/// Build the minimizer ordering for this run, sampling m-mer frequencies
/// from the input files when the strategy needs them.
fn build_ordering(cfg: &PipelineConfig, inputs: &[PathBuf]) -> Result<MinimizerOrdering> {
    let freq = if cfg.ordering.needs_frequencies() {
        let mut table = FrequencyTable::new(cfg.m)?;
        'files: for path in inputs {
            let mut stream = seqio::open_reads(path, cfg.input_format)?;
            while let Some(read) = stream.next_read()? {
                if !table.observe(&read, cfg.sample_budget) {
                    break 'files;
                }
            }
        }
        Some(table)
    } else {
        None
    };
    MinimizerOrdering::build(cfg.ordering, cfg.m, freq.as_ref())
}

/// Execute the configured phases and report timings and totals.
pub fn run(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let mut report = RunReport::default();

    let stats: DistributionStats = if cfg.mode == PhaseMode::CountOnly {
        let stats = DistributionStats::read_from(&distribution::stats_path(&cfg.workdir))?;
        stats.check_matches(cfg)?;
        stats
    } else {
        let inputs = seqio::resolve_inputs(
            cfg.input.as_ref().expect("validated"),
            cfg.input_format,
        )?;
        let input_bytes = inputs
            .iter()
            .map(|p| std::fs::metadata(p).map(|m| m.len()).unwrap_or(0))
            .sum();
        let ordering = build_ordering(cfg, &inputs)?;
        let start = Instant::now();
        let (stats, bases) = distribution::run_phase_one(cfg, &inputs, &ordering)?;
        stats.write_to(&distribution::stats_path(&cfg.workdir))?;
        report.phase_one = Some(PhaseOneReport {
            seconds: start.elapsed().as_secs_f64(),
            input_bytes,
            bases,
            supermers: stats.total_supermers(),
            kmers: stats.total_kmers(),
            bins: cfg.bin_count,
        });
        stats
    };

    if cfg.mode == PhaseMode::DistributeOnly {
        return Ok(report);
    }

    let start = Instant::now();
    let totals = counting::run_phase_two(cfg, &stats)?;
    report.phase_two = Some(PhaseTwoReport {
        seconds: start.elapsed().as_secs_f64(),
        totals,
    });

    if !cfg.keep_bins && !cfg.keep_stats {
        let stats_file = distribution::stats_path(&cfg.workdir);
        if stats_file.exists() {
            std::fs::remove_file(&stats_file).map_err(|e| Error::io(&stats_file, e))?;
        }
    }
    Ok(report)
}
