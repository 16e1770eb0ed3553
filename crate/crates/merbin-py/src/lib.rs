//! Python bindings for the merbin k-mer counting engine.
//!
//! The module mirrors the layers of the core crate: raw 2-bit packing
//! (`encode`/`decode`), minimizer machinery (`decompose`, `minimizer`,
//! [`MinimizerRanking`]), the hash and partition functions used by the
//! counting tables, the output record format, and the full two-phase
//! pipeline (`count`, `count_file`, `eval_ordering`).
//!
//! Build with plain `cargo build -p merbin-py` and rename the produced
//! `libmerbin_py.so` to `merbin_py.so` somewhere on `sys.path`; see
//! `python/smoke_test.py` for a worked example.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use merbin::kmer::{MAX_K, MIN_K};
use merbin::minimizer::{decompose_supermers, Mmer};
use merbin::ordering::{MinimizerOrdering, Strategy, MAX_M};
use merbin::pipeline::PipelineConfig;
use merbin::seq::PackedSeq;
use merbin::Kmer;

/// Map core errors onto Python exceptions: I/O failures become
/// `OSError`, everything else (bad bases, bad parameters, corrupt
/// files) becomes `ValueError`.
fn to_py_err(err: merbin::Error) -> PyErr {
    match &err {
        merbin::Error::Io { .. } => PyOSError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

/// Parse a strategy name and materialize its rank table. Frequency-based
/// strategies are rejected here because they need a pass over the reads;
/// `count`, `count_file`, and `eval_ordering` accept them directly.
fn build_ordering(strategy: &str, m: u8) -> Result<MinimizerOrdering, merbin::Error> {
    let strategy: Strategy = strategy.parse()?;
    if strategy.needs_frequencies() {
        return Err(merbin::Error::Config(format!(
            "{strategy} ranks m-mers by sampled frequencies; use count(), count_file(), or \
             eval_ordering(), which sample the input first"
        )));
    }
    MinimizerOrdering::build(strategy, m, None)
}

fn check_k(k: usize) -> PyResult<()> {
    if k == 0 || k > MAX_K {
        return Err(PyValueError::new_err(format!(
            "k = {k} outside representable range 1..={MAX_K}"
        )));
    }
    Ok(())
}

/// Pack an ACGT sequence into 2-bit codes, four bases per byte with the
/// first base in the top bit pair and zeroed padding.
#[pyfunction]
fn encode(seq: &str) -> PyResult<Vec<u8>> {
    let packed = PackedSeq::encode(seq.as_bytes()).map_err(to_py_err)?;
    Ok(packed.bytes().to_vec())
}

/// Inverse of `encode`: unpack `length` bases from 2-bit packed bytes.
#[pyfunction]
fn decode(data: Vec<u8>, length: usize) -> PyResult<String> {
    let packed = PackedSeq::from_raw(data, length).map_err(to_py_err)?;
    Ok(packed.decode())
}

/// Reverse-complement an ACGT sequence of any length.
#[pyfunction]
fn reverse_complement(seq: &str) -> PyResult<String> {
    let packed = PackedSeq::encode(seq.as_bytes()).map_err(to_py_err)?;
    let codes: Vec<u8> = packed.codes().collect();
    let mut out = String::with_capacity(codes.len());
    for code in codes.into_iter().rev() {
        out.push(merbin::seq::base_ascii(merbin::seq::complement(code)) as char);
    }
    Ok(out)
}

/// The smaller of a sequence and its reverse complement. ASCII order over
/// `ACGT` coincides with 2-bit code order, so comparing the decoded
/// strings picks the same strand the packed comparison would.
#[pyfunction]
fn canonical(seq: &str) -> PyResult<String> {
    let fwd = PackedSeq::encode(seq.as_bytes()).map_err(to_py_err)?.decode();
    let rc = reverse_complement(&fwd)?;
    Ok(if rc < fwd { rc } else { fwd })
}

/// Split a read fragment into super-mers: maximal stretches of
/// consecutive k-windows that share a minimizer value.
#[pyfunction(signature = (seq, k, m, ordering = "kmc2", canonical = true))]
fn decompose(seq: &str, k: usize, m: u8, ordering: &str, canonical: bool) -> PyResult<Vec<String>> {
    check_k(k)?;
    if m as usize > k {
        return Err(PyValueError::new_err(format!(
            "minimizer length m = {m} exceeds k = {k}"
        )));
    }
    let ord = build_ordering(ordering, m).map_err(to_py_err)?;
    let fragment = PackedSeq::encode(seq.as_bytes()).map_err(to_py_err)?;
    Ok(decompose_supermers(&fragment, k, &ord, canonical)
        .iter()
        .map(|sm| sm.seq.decode())
        .collect())
}

/// Minimizer of a single k-window: returns `(mmer, position, reverse)`
/// where `position` is the window offset on the forward strand and
/// `reverse` is true when canonical mode picked the reverse-complement
/// m-mer at that offset.
#[pyfunction(signature = (window, m, ordering = "kmc2", canonical = true))]
fn minimizer(window: &str, m: u8, ordering: &str, canonical: bool) -> PyResult<(String, usize, bool)> {
    let kmer = Kmer::from_ascii(window.as_bytes()).map_err(to_py_err)?;
    if m as usize > kmer.k() {
        return Err(PyValueError::new_err(format!(
            "minimizer length m = {m} exceeds window length {}",
            kmer.k()
        )));
    }
    let ord = build_ordering(ordering, m).map_err(to_py_err)?;
    let hit = merbin::minimizer::minimizer(&kmer, &ord, canonical);
    Ok((hit.mmer.decode(), hit.position, hit.reverse))
}

/// First hash of the double-hashing pair for a k-mer's packed bytes.
#[pyfunction(signature = (kmer, trial = 0))]
fn probe_hash(kmer: &str, trial: u32) -> PyResult<u32> {
    let kmer = Kmer::from_ascii(kmer.as_bytes()).map_err(to_py_err)?;
    Ok(merbin::counting::probe_hash(&kmer, trial))
}

/// Both hashes `(h1, h2)` of the double-hashing pair.
#[pyfunction]
fn hash_pair(kmer: &str) -> PyResult<(u32, u32)> {
    let kmer = Kmer::from_ascii(kmer.as_bytes()).map_err(to_py_err)?;
    Ok(merbin::counting::hash_pair(&kmer))
}

/// Phase-one bin for a minimizer value.
#[pyfunction]
fn assign_bin(mmer: &str, bin_count: u32) -> PyResult<u32> {
    if bin_count == 0 {
        return Err(PyValueError::new_err("bin_count must be positive"));
    }
    let mmer = Mmer::from_ascii(mmer.as_bytes()).map_err(to_py_err)?;
    Ok(merbin::distribution::assign_bin(mmer.code(), bin_count))
}

/// Phase-two hasher index for a k-mer, using the partition hash that is
/// deliberately distinct from the probe hashes.
#[pyfunction]
fn partition_kmer(kmer: &str, workers: u32) -> PyResult<u32> {
    if workers == 0 {
        return Err(PyValueError::new_err("workers must be positive"));
    }
    let kmer = Kmer::from_ascii(kmer.as_bytes()).map_err(to_py_err)?;
    Ok(merbin::counting::partition_kmer(&kmer, workers))
}

/// One output record: the count (one byte below 255, else `0xFF` plus a
/// big-endian u32) followed by the 2-bit packed k-mer.
#[pyfunction]
fn encode_entry(kmer: &str, count: u32) -> PyResult<Vec<u8>> {
    let kmer = Kmer::from_ascii(kmer.as_bytes()).map_err(to_py_err)?;
    let mut out = Vec::new();
    merbin::output::encode_entry(&kmer, count, &mut out);
    Ok(out)
}

/// Decode a binary result file into `(kmer, count)` pairs sorted by
/// k-mer, so results are comparable across runs and thread counts.
#[pyfunction]
fn decode_output(path: PathBuf, k: usize) -> PyResult<Vec<(String, u32)>> {
    check_k(k)?;
    let mut entries = merbin::output::decode_file(&path, k).map_err(to_py_err)?;
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(entries
        .into_iter()
        .map(|(kmer, count)| (kmer.decode(), count))
        .collect())
}

/// Count k-mers in a list of read strings through the real two-phase
/// pipeline (scratch files live in a temporary directory). Returns
/// `(kmer, count)` pairs sorted by k-mer.
#[pyfunction(signature = (
    reads, k, m = None, min_count = 1, ordering = "kmc2", canonical = true,
    bins = 64, threads = None
))]
#[allow(clippy::too_many_arguments)]
fn count(
    reads: Vec<String>,
    k: usize,
    m: Option<u8>,
    min_count: u32,
    ordering: &str,
    canonical: bool,
    bins: u32,
    threads: Option<usize>,
) -> PyResult<Vec<(String, u32)>> {
    let dir = tempfile::tempdir().map_err(|e| PyOSError::new_err(e.to_string()))?;
    let input = dir.path().join("reads.fasta");
    let mut text = String::new();
    for (i, read) in reads.iter().enumerate() {
        writeln!(text, ">r{i}\n{read}").expect("string write cannot fail");
    }
    std::fs::write(&input, text).map_err(|e| PyOSError::new_err(e.to_string()))?;

    let workdir = dir.path().join("work");
    std::fs::create_dir(&workdir).map_err(|e| PyOSError::new_err(e.to_string()))?;
    let output = dir.path().join("counts.bin");

    let mut cfg = PipelineConfig::new(k, &workdir);
    if let Some(m) = m {
        cfg.m = m;
    }
    cfg.min_count = min_count;
    cfg.ordering = ordering.parse().map_err(to_py_err)?;
    cfg.normalize = canonical;
    cfg.bin_count = bins;
    cfg.threads = threads;
    cfg.input = Some(input);
    cfg.output = Some(output.clone());
    cfg.validate().map_err(to_py_err)?;
    merbin::pipeline::run(&cfg).map_err(to_py_err)?;

    let mut entries = merbin::output::decode_file(&output, k).map_err(to_py_err)?;
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(entries
        .into_iter()
        .map(|(kmer, count)| (kmer.decode(), count))
        .collect())
}

/// Count k-mers of a sequence file on disk, writing the binary result to
/// `output` (plus `output + ".csv"` when `csv` is set). Defaults mirror
/// the command-line tool: `min_count = 3`, 512 bins, kmc2 ordering.
/// Returns a dict of run totals; decode the file with `decode_output`.
#[pyfunction(signature = (
    input, workdir, output, k = 28, m = None, min_count = 3, ordering = "kmc2",
    canonical = true, bins = 512, threads = None, memory_bytes = None, csv = false
))]
#[allow(clippy::too_many_arguments)]
fn count_file(
    input: PathBuf,
    workdir: PathBuf,
    output: PathBuf,
    k: usize,
    m: Option<u8>,
    min_count: u32,
    ordering: &str,
    canonical: bool,
    bins: u32,
    threads: Option<usize>,
    memory_bytes: Option<u64>,
    csv: bool,
) -> PyResult<HashMap<String, u64>> {
    let mut cfg = PipelineConfig::new(k, workdir);
    if let Some(m) = m {
        cfg.m = m;
    }
    cfg.min_count = min_count;
    cfg.ordering = ordering.parse().map_err(to_py_err)?;
    cfg.normalize = canonical;
    cfg.bin_count = bins;
    cfg.threads = threads;
    if let Some(bytes) = memory_bytes {
        cfg.memory_cap_bytes = bytes;
    }
    cfg.csv_histogram = csv;
    cfg.input = Some(input);
    cfg.output = Some(output);
    cfg.validate().map_err(to_py_err)?;
    let report = merbin::pipeline::run(&cfg).map_err(to_py_err)?;

    let mut totals = HashMap::new();
    if let Some(p1) = &report.phase_one {
        totals.insert("input_bytes".to_string(), p1.input_bytes);
        totals.insert("bases".to_string(), p1.bases);
        totals.insert("supermers".to_string(), p1.supermers);
        totals.insert("kmers".to_string(), p1.kmers);
        totals.insert("bins".to_string(), p1.bins as u64);
    }
    if let Some(p2) = &report.phase_two {
        totals.insert("distinct_written".to_string(), p2.totals.distinct_written);
        totals.insert("distinct_total".to_string(), p2.totals.distinct_total);
        totals.insert("total_kmers".to_string(), p2.totals.total_kmers);
        totals.insert("spill_events".to_string(), p2.totals.spill_events);
        totals.insert("peak_table_bytes".to_string(), p2.totals.peak_table_bytes);
    }
    Ok(totals)
}

/// Compare minimizer orderings on a sequence file. Returns the same CSV
/// the `merbin eval-ordering` subcommand prints: one row per strategy
/// with the super-mer total and the largest distinct-k-mer load any
/// single minimizer carries.
#[pyfunction(signature = (
    input, k = 28, m = None, orderings = None, canonical = true,
    sample_budget = 1_000_000, input_format = "auto"
))]
fn eval_ordering(
    input: PathBuf,
    k: usize,
    m: Option<u8>,
    orderings: Option<Vec<String>>,
    canonical: bool,
    sample_budget: u64,
    input_format: &str,
) -> PyResult<String> {
    let orderings = orderings
        .unwrap_or_default()
        .iter()
        .map(|s| s.parse())
        .collect::<Result<Vec<Strategy>, _>>()
        .map_err(to_py_err)?;
    let args = merbin::cli::EvalArgs {
        k,
        m,
        no_normalize: !canonical,
        orderings,
        sample_budget,
        input_format: input_format.parse().map_err(to_py_err)?,
        input,
    };
    merbin::cli::run_eval_ordering(&args).map_err(to_py_err)
}

/// A materialized minimizer ranking: build the rank table once, then
/// query ranks, minimizers, and super-mer decompositions against it.
#[pyclass(frozen)]
struct MinimizerRanking {
    inner: MinimizerOrdering,
}

#[pymethods]
impl MinimizerRanking {
    #[new]
    fn new(ordering: &str, m: u8) -> PyResult<Self> {
        Ok(MinimizerRanking {
            inner: build_ordering(ordering, m).map_err(to_py_err)?,
        })
    }

    /// Minimizer length the table was built for.
    #[getter]
    fn m(&self) -> u8 {
        self.inner.m()
    }

    /// Strategy name, in the same notation the CLI accepts.
    #[getter]
    fn strategy(&self) -> String {
        self.inner.strategy().to_string()
    }

    /// True when every m-mer has a distinct rank.
    #[getter]
    fn is_bijective(&self) -> bool {
        self.inner.is_bijective()
    }

    /// Rank of one m-mer; lower ranks win minimizer comparisons.
    fn rank(&self, mmer: &str) -> PyResult<u32> {
        let mmer = Mmer::from_ascii(mmer.as_bytes()).map_err(to_py_err)?;
        if mmer.m() != self.inner.m() {
            return Err(PyValueError::new_err(format!(
                "m-mer length {} does not match table m = {}",
                mmer.m(),
                self.inner.m()
            )));
        }
        Ok(self.inner.rank(mmer.code()))
    }

    /// Minimizer of a single window; see the module-level `minimizer`.
    #[pyo3(signature = (window, canonical = true))]
    fn minimizer(&self, window: &str, canonical: bool) -> PyResult<(String, usize, bool)> {
        let kmer = Kmer::from_ascii(window.as_bytes()).map_err(to_py_err)?;
        if self.inner.m() as usize > kmer.k() {
            return Err(PyValueError::new_err(format!(
                "minimizer length m = {} exceeds window length {}",
                self.inner.m(),
                kmer.k()
            )));
        }
        let hit = merbin::minimizer::minimizer(&kmer, &self.inner, canonical);
        Ok((hit.mmer.decode(), hit.position, hit.reverse))
    }

    /// Super-mer decomposition as `(supermer, minimizer)` pairs.
    #[pyo3(signature = (seq, k, canonical = true))]
    fn decompose(&self, seq: &str, k: usize, canonical: bool) -> PyResult<Vec<(String, String)>> {
        check_k(k)?;
        if self.inner.m() as usize > k {
            return Err(PyValueError::new_err(format!(
                "minimizer length m = {} exceeds k = {k}",
                self.inner.m()
            )));
        }
        let fragment = PackedSeq::encode(seq.as_bytes()).map_err(to_py_err)?;
        Ok(decompose_supermers(&fragment, k, &self.inner, canonical)
            .iter()
            .map(|sm| (sm.seq.decode(), sm.minimizer.decode()))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "MinimizerRanking(ordering='{}', m={})",
            self.inner.strategy(),
            self.inner.m()
        )
    }
}

#[pymodule]
fn merbin_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("MIN_K", MIN_K)?;
    m.add("MAX_K", MAX_K)?;
    m.add("MAX_M", MAX_M)?;
    m.add_class::<MinimizerRanking>()?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(reverse_complement, m)?)?;
    m.add_function(wrap_pyfunction!(canonical, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(minimizer, m)?)?;
    m.add_function(wrap_pyfunction!(probe_hash, m)?)?;
    m.add_function(wrap_pyfunction!(hash_pair, m)?)?;
    m.add_function(wrap_pyfunction!(assign_bin, m)?)?;
    m.add_function(wrap_pyfunction!(partition_kmer, m)?)?;
    m.add_function(wrap_pyfunction!(encode_entry, m)?)?;
    m.add_function(wrap_pyfunction!(decode_output, m)?)?;
    m.add_function(wrap_pyfunction!(count, m)?)?;
    m.add_function(wrap_pyfunction!(count_file, m)?)?;
    m.add_function(wrap_pyfunction!(eval_ordering, m)?)?;
    Ok(())
}
