//! Command-line front end.
//!
//! Maps the short-flag interface onto a [`PipelineConfig`], and adds two
//! standalone modes: a system check (`-s`) and an ordering evaluation
//! subcommand (`eval-ordering`). Positional arity depends on the execution
//! mode: a full run takes `INPUT WORKDIR OUTPUT`, `-x 1` takes
//! `INPUT WORKDIR` (an output here is an error), and `-x 2` takes
//! `WORKDIR OUTPUT`.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::kmer::MAX_K;
use crate::ordering::{
    evaluate_ordering, sample_frequencies, MinimizerOrdering, Strategy, MAX_M,
};
use crate::pipeline::{self, PhaseMode, PipelineConfig};
use crate::seqio::{self, InputFormat};

/// Minimizer length used when `-m` is not given.
pub const DEFAULT_M: u8 = 7;

/// Bytes written and read back by the system-check disk probe.
pub const PROBE_BYTES: u64 = 64 << 20;

#[derive(Parser, Debug)]
#[command(
    name = "merbin",
    about = "Two-phase disk-based k-mer counter",
    disable_version_flag = true
)]
struct Cli {
    #[command(subcommand)]
    subcommand: Option<Sub>,

    #[command(flatten)]
    count: CountArgs,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Measure how minimizer orderings split reads into super-mers;
    /// prints one CSV row per strategy.
    EvalOrdering(EvalArgs),
}

#[derive(Args, Debug)]
struct CountArgs {
    /// Length of the k-mers to be counted (8 to 479)
    #[arg(short = 'k', value_name = "LENGTH", default_value_t = 28)]
    k: usize,

    /// Length of minimizers [default: auto = 7]
    #[arg(short = 'm', value_name = "LENGTH")]
    m: Option<u8>,

    /// Maximal main memory to use, in MB or GB (e.g. 4096MB, 4GB)
    /// [default: auto = 75% of physical memory]
    #[arg(short = 'e', value_name = "SIZE")]
    memory: Option<String>,

    /// Number of temporary bin files
    #[arg(short = 'f', value_name = "NUMBER", default_value_t = 512)]
    bin_count: u32,

    /// Maximal number of parallel threads [default: auto = detected cores]
    #[arg(short = 't', value_name = "NUMBER")]
    threads: Option<usize>,

    /// Minimal occurrence count for a k-mer to be written
    #[arg(short = 'l', value_name = "COUNT", default_value_t = 3)]
    min_count: u32,

    /// Enable additional output
    #[arg(short = 'i')]
    verbose: bool,

    /// Enable GPU mode (accepted for compatibility; counting stays on CPU)
    #[arg(short = 'g')]
    gpu: bool,

    /// Show version number
    #[arg(short = 'v', long = "version")]
    version: bool,

    /// Disable normalization: a k-mer and its reverse complement are
    /// counted separately
    #[arg(short = 'd')]
    no_normalize: bool,

    /// Perform a system check and display information about this system
    #[arg(short = 's')]
    system_check: bool,

    /// Execution control: 1 = stop after phase one (keep bins and stats,
    /// no OUTPUT allowed), 2 = phase two only (needs bins and stats),
    /// b = keep the stats file, h = also write a CSV histogram
    #[arg(short = 'x', value_name = "MODE", action = ArgAction::Append)]
    exec: Vec<ExecOpt>,

    /// Minimizer ordering strategy: lex, cgat, roberts, kmc2,
    /// random[:seed], dfp[:pivot]
    #[arg(long, value_name = "STRATEGY", default_value = "kmc2")]
    ordering: Strategy,

    /// Force the input interpretation instead of sniffing it
    #[arg(long, value_name = "FORMAT", default_value = "auto")]
    input_format: InputFormat,

    /// Maximal probe trials per table insertion before spilling
    #[arg(long, value_name = "TRIALS", default_value_t = 64)]
    theta: u32,

    /// Slots scanned per probe trial
    #[arg(long, value_name = "SLOTS", default_value_t = 1)]
    window: usize,

    /// Positions sampled when estimating m-mer frequencies for dfp
    #[arg(long, value_name = "POSITIONS", default_value_t = 1_000_000)]
    sample_budget: u64,

    /// INPUT WORKDIR OUTPUT (see -x for reduced forms)
    #[arg(value_name = "PATH")]
    positionals: Vec<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ExecOpt {
    /// Stop after phase one
    #[value(name = "1")]
    PhaseOneOnly,
    /// Run phase two only
    #[value(name = "2")]
    PhaseTwoOnly,
    /// Keep the stats file
    #[value(name = "b")]
    KeepStats,
    /// Write a CSV histogram next to the output
    #[value(name = "h")]
    Histogram,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Length of the k-mers to decompose reads into (2 to 479)
    #[arg(short = 'k', value_name = "LENGTH", default_value_t = 28)]
    pub k: usize,

    /// Length of minimizers [default: auto = min(7, k-1)]
    #[arg(short = 'm', value_name = "LENGTH")]
    pub m: Option<u8>,

    /// Evaluate k-mers without normalization
    #[arg(short = 'd')]
    pub no_normalize: bool,

    /// Strategy to evaluate; repeat for several
    /// [default: lex cgat roberts kmc2 random:42 dfp:0.5]
    #[arg(long = "ordering", value_name = "STRATEGY")]
    pub orderings: Vec<Strategy>,

    /// Positions sampled when estimating m-mer frequencies for dfp
    #[arg(long, value_name = "POSITIONS", default_value_t = 1_000_000)]
    pub sample_budget: u64,

    /// Force the input interpretation instead of sniffing it
    #[arg(long, value_name = "FORMAT", default_value = "auto")]
    pub input_format: InputFormat,

    /// Sequence file (or list file) to evaluate; loaded fully into memory
    #[arg(value_name = "INPUT")]
    pub input: PathBuf,
}

/// A fully validated invocation, ready to execute.
#[derive(Debug)]
pub enum CliInvocation {
    /// `-v`: print the version and exit.
    Version,
    /// `-s`: probe the system and report.
    SystemCheck { dir: PathBuf },
    /// Count k-mers with the given configuration.
    Count {
        config: Box<PipelineConfig>,
        gpu_requested: bool,
    },
    /// `eval-ordering`: compare partitioning strategies.
    EvalOrdering(EvalArgs),
}

impl Cli {
    fn into_invocation(self) -> Result<CliInvocation> {
        if let Some(Sub::EvalOrdering(args)) = self.subcommand {
            validate_eval(&args)?;
            return Ok(CliInvocation::EvalOrdering(args));
        }
        let a = self.count;
        if a.version {
            return Ok(CliInvocation::Version);
        }
        if a.system_check {
            let dir = a
                .positionals
                .into_iter()
                .next()
                .unwrap_or_else(|| PathBuf::from("."));
            return Ok(CliInvocation::SystemCheck { dir });
        }

        let phase_one_only = a.exec.contains(&ExecOpt::PhaseOneOnly);
        let phase_two_only = a.exec.contains(&ExecOpt::PhaseTwoOnly);
        if phase_one_only && phase_two_only {
            return Err(Error::Usage(
                "-x 1 and -x 2 are mutually exclusive".into(),
            ));
        }

        let n = a.positionals.len();
        let mut pos = a.positionals.into_iter();
        let (mode, input, workdir, output) = if phase_one_only {
            if n > 2 {
                return Err(Error::Usage(
                    "-x 1 stops after phase one: no output allowed (expected INPUT WORKDIR)"
                        .into(),
                ));
            }
            if n < 2 {
                return Err(Error::Usage("-x 1 expects INPUT WORKDIR".into()));
            }
            let input = pos.next();
            let workdir = pos.next().expect("length checked");
            (PhaseMode::DistributeOnly, input, workdir, None)
        } else if phase_two_only {
            if n != 2 {
                return Err(Error::Usage("-x 2 expects WORKDIR OUTPUT".into()));
            }
            let workdir = pos.next().expect("length checked");
            (PhaseMode::CountOnly, None, workdir, pos.next())
        } else {
            if n != 3 {
                return Err(Error::Usage("expected INPUT WORKDIR OUTPUT".into()));
            }
            let input = pos.next();
            let workdir = pos.next().expect("length checked");
            (PhaseMode::Full, input, workdir, pos.next())
        };

        let mut cfg = PipelineConfig::new(a.k, workdir);
        cfg.m = a.m.unwrap_or(DEFAULT_M);
        cfg.bin_count = a.bin_count;
        cfg.min_count = a.min_count;
        cfg.theta = a.theta;
        cfg.window = a.window;
        cfg.memory_cap_bytes = match &a.memory {
            Some(text) => parse_memory_size(text)?,
            None => auto_memory_cap(),
        };
        cfg.threads = a.threads;
        cfg.ordering = a.ordering;
        cfg.normalize = !a.no_normalize;
        cfg.mode = mode;
        cfg.keep_bins = phase_one_only;
        cfg.keep_stats = a.exec.contains(&ExecOpt::KeepStats);
        cfg.csv_histogram = a.exec.contains(&ExecOpt::Histogram);
        cfg.verbose = a.verbose;
        cfg.input = input;
        cfg.input_format = a.input_format;
        cfg.output = output;
        cfg.sample_budget = a.sample_budget;
        cfg.validate()?;
        Ok(CliInvocation::Count {
            config: Box::new(cfg),
            gpu_requested: a.gpu,
        })
    }
}

fn validate_eval(args: &EvalArgs) -> Result<()> {
    if args.k < 2 || args.k > MAX_K {
        return Err(Error::Usage(format!(
            "k = {} outside evaluable range 2..{MAX_K}",
            args.k
        )));
    }
    let m = eval_m(args);
    if m == 0 || m as usize >= args.k || m > MAX_M {
        return Err(Error::Usage(format!(
            "minimizer length m = {m} must satisfy 1 <= m < k and m <= {MAX_M}"
        )));
    }
    Ok(())
}

fn eval_m(args: &EvalArgs) -> u8 {
    args.m
        .unwrap_or_else(|| (DEFAULT_M as usize).min(args.k - 1) as u8)
}

/// Parse a command line into an executable invocation. Pure in argv; any
/// failure is a usage error (exit code 1).
pub fn parse_args<I, T>(argv: I) -> Result<CliInvocation>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| Error::Usage(e.to_string()))?;
    cli.into_invocation()
}

/// Parse `text` as a memory size: a number with optional MB or GB suffix
/// (case-insensitive, binary units); a bare number means MB.
pub fn parse_memory_size(text: &str) -> Result<u64> {
    let lower = text.trim().to_ascii_lowercase();
    let (digits, unit) = if let Some(d) = lower.strip_suffix("gb") {
        (d, 1u64 << 30)
    } else if let Some(d) = lower.strip_suffix("mb") {
        (d, 1 << 20)
    } else {
        (lower.as_str(), 1 << 20)
    };
    let value: u64 = digits.trim().parse().map_err(|_| {
        Error::Usage(format!(
            "cannot parse memory size {text:?} (use e.g. 4096MB or 4GB)"
        ))
    })?;
    if value == 0 {
        return Err(Error::Usage("memory size must be positive".into()));
    }
    value
        .checked_mul(unit)
        .ok_or_else(|| Error::Usage(format!("memory size {text:?} overflows")))
}

/// Total physical memory, from /proc/meminfo.
pub fn detected_memory_bytes() -> Option<u64> {
    let text = std::fs::read_to_string("/proc/meminfo").ok()?;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("MemTotal:") {
            let kb: u64 = rest.trim().strip_suffix("kB")?.trim().parse().ok()?;
            return Some(kb * 1024);
        }
    }
    None
}

/// The `-e auto` policy: 75% of physical memory, or 4 GB when the total
/// cannot be determined.
fn auto_memory_cap() -> u64 {
    detected_memory_bytes()
        .map(|total| total / 4 * 3)
        .unwrap_or(4 << 30)
}

/// Free bytes available to unprivileged users on `path`'s filesystem.
fn free_space(path: &Path) -> Option<u64> {
    use std::os::unix::ffi::OsStrExt;
    let c = std::ffi::CString::new(path.as_os_str().as_bytes()).ok()?;
    let mut st: libc::statvfs = unsafe { std::mem::zeroed() };
    if unsafe { libc::statvfs(c.as_ptr(), &mut st) } == 0 {
        Some(st.f_bavail as u64 * st.f_frsize as u64)
    } else {
        None
    }
}

/// What the `-s` system check found.
#[derive(Debug, Clone)]
pub struct SystemReport {
    pub dir: PathBuf,
    pub cores: usize,
    pub memory_total_bytes: Option<u64>,
    pub free_bytes_before: Option<u64>,
    /// Free space while the probe file was on disk.
    pub free_bytes_during: Option<u64>,
    pub write_mb_per_s: Option<f64>,
    pub read_mb_per_s: Option<f64>,
    pub probe_error: Option<String>,
}

impl SystemReport {
    pub fn render(&self) -> String {
        fn gb(bytes: u64) -> String {
            format!("{:.1} GB", bytes as f64 / (1u64 << 30) as f64)
        }
        let mut out = String::from("system check\n");
        out.push_str(&format!("  cores: {}\n", self.cores));
        out.push_str(&format!(
            "  total memory: {}\n",
            self.memory_total_bytes
                .map(gb)
                .unwrap_or_else(|| "unknown".into())
        ));
        out.push_str(&format!("  working dir: {}\n", self.dir.display()));
        if let Some(free) = self.free_bytes_before {
            out.push_str(&format!("  free space: {}\n", gb(free)));
        }
        if let Some(free) = self.free_bytes_during {
            out.push_str(&format!("  free space during probe: {}\n", gb(free)));
        }
        match &self.probe_error {
            Some(e) => out.push_str(&format!("  disk probe failed: {e}\n")),
            None => {
                if let (Some(w), Some(r)) = (self.write_mb_per_s, self.read_mb_per_s) {
                    out.push_str(&format!(
                        "  sequential write: {w:.1} MB/s\n  sequential read: {r:.1} MB/s\n"
                    ));
                }
            }
        }
        out
    }
}

/// Probe the machine: core count, memory, free space, and a sequential
/// disk write/read of [`PROBE_BYTES`] in `dir`. The probe file is always
/// removed; failures are reported in the result, never returned.
pub fn system_check(dir: &Path) -> SystemReport {
    let mut report = SystemReport {
        dir: dir.to_path_buf(),
        cores: pipeline::detected_cores(),
        memory_total_bytes: detected_memory_bytes(),
        free_bytes_before: free_space(dir),
        free_bytes_during: None,
        write_mb_per_s: None,
        read_mb_per_s: None,
        probe_error: None,
    };
    let probe_path = dir.join("merbin_probe.tmp");
    match run_disk_probe(&probe_path, dir) {
        Ok((free_during, write_rate, read_rate)) => {
            report.free_bytes_during = free_during;
            report.write_mb_per_s = Some(write_rate);
            report.read_mb_per_s = Some(read_rate);
        }
        Err(e) => report.probe_error = Some(e.to_string()),
    }
    let _ = std::fs::remove_file(&probe_path);
    report
}

fn run_disk_probe(path: &Path, dir: &Path) -> Result<(Option<u64>, f64, f64)> {
    const CHUNK: usize = 1 << 20;
    let mut chunk = vec![0u8; CHUNK];
    // Cheap xorshift fill so the probe measures real bytes, not a
    // compressible pattern.
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    for byte in &mut chunk {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        *byte = state as u8;
    }

    let started = Instant::now();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for _ in 0..(PROBE_BYTES as usize / CHUNK) {
        file.write_all(&chunk).map_err(|e| Error::io(path, e))?;
    }
    file.sync_all().map_err(|e| Error::io(path, e))?;
    drop(file);
    let write_secs = started.elapsed().as_secs_f64();

    let free_during = free_space(dir);

    let started = Instant::now();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut total = 0u64;
    loop {
        let n = file.read(&mut chunk).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        total += n as u64;
    }
    let read_secs = started.elapsed().as_secs_f64();
    if total != PROBE_BYTES {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            offset: total,
            msg: format!("probe read back {total} bytes, wrote {PROBE_BYTES}"),
        });
    }

    let mb = PROBE_BYTES as f64 / 1e6;
    Ok((free_during, mb / write_secs.max(1e-9), mb / read_secs.max(1e-9)))
}

/// Run the `eval-ordering` subcommand and return its CSV text.
pub fn run_eval_ordering(args: &EvalArgs) -> Result<String> {
    let m = eval_m(args);
    let canonical = !args.no_normalize;
    let strategies: Vec<Strategy> = if args.orderings.is_empty() {
        vec![
            Strategy::Lex,
            Strategy::Cgat,
            Strategy::Roberts,
            Strategy::Kmc2,
            Strategy::Random { seed: 42 },
            Strategy::Dfp { pivot: 0.5 },
        ]
    } else {
        args.orderings.clone()
    };

    let mut reads: Vec<Vec<u8>> = Vec::new();
    for path in seqio::resolve_inputs(&args.input, args.input_format)? {
        let mut stream = seqio::open_reads(&path, args.input_format)?;
        while let Some(read) = stream.next_read()? {
            reads.push(read);
        }
    }

    let freq = if strategies.iter().any(Strategy::needs_frequencies) {
        Some(sample_frequencies(reads.iter(), m, args.sample_budget)?)
    } else {
        None
    };

    let mut out = String::from("strategy,m,k,total_supermers,max_distinct_kmers_per_minimizer\n");
    for strategy in strategies {
        let ord = MinimizerOrdering::build(strategy, m, freq.as_ref())?;
        let metrics = evaluate_ordering(reads.iter(), args.k, &ord, canonical);
        out.push_str(&format!(
            "{strategy},{m},{},{},{}\n",
            args.k, metrics.total_supermers, metrics.max_distinct_kmers_per_minimizer
        ));
    }
    Ok(out)
}

fn describe_config(cfg: &PipelineConfig) -> String {
    format!(
        "config: k={} m={} bins={} min-count={} ordering={} normalization={} \
         theta={} window={} memory-cap={}MB threads={}\n",
        cfg.k,
        cfg.m,
        cfg.bin_count,
        cfg.min_count,
        cfg.ordering,
        if cfg.normalize { "on" } else { "off" },
        cfg.theta,
        cfg.window,
        cfg.memory_cap_bytes >> 20,
        cfg.threads
            .map(|t| t.to_string())
            .unwrap_or_else(|| format!("auto({})", pipeline::detected_cores())),
    )
}

fn fail(e: &Error) -> i32 {
    eprintln!("merbin: {e}");
    e.exit_code()
}

/// Execute a parsed invocation; returns the process exit code.
pub fn dispatch(invocation: CliInvocation) -> i32 {
    match invocation {
        CliInvocation::Version => {
            println!("merbin {}", env!("CARGO_PKG_VERSION"));
            0
        }
        CliInvocation::SystemCheck { dir } => {
            print!("{}", system_check(&dir).render());
            0
        }
        CliInvocation::EvalOrdering(args) => match run_eval_ordering(&args) {
            Ok(csv) => {
                print!("{csv}");
                0
            }
            Err(e) => fail(&e),
        },
        CliInvocation::Count {
            config,
            gpu_requested,
        } => {
            if gpu_requested {
                println!("GPU mode unsupported in this build");
            }
            if config.verbose {
                print!("{}", describe_config(&config));
            }
            match pipeline::run(&config) {
                Ok(report) => {
                    print!("{}", report.render());
                    0
                }
                Err(e) => fail(&e),
            }
        }
    }
}

/// Entry point for the `merbin` binary: parse `std::env::args_os`,
/// dispatch, and return the exit code. Help output exits 0; parse errors
/// exit 1.
pub fn run_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.into_invocation() {
        Ok(invocation) => dispatch(invocation),
        Err(e) => fail(&e),
    }
}
