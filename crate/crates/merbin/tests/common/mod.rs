//! Helpers shared by the integration suites: corpus generators, a naive
//! string-based counting oracle, and output decoding.

// Each integration test target compiles its own copy of this module and
// uses a different subset of it.
#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use merbin::output;
use merbin::pipeline::PipelineConfig;

pub const BASES: [char; 4] = ['A', 'C', 'G', 'T'];

/// Seeded read generator: `count` reads with lengths in `min_len..=max_len`
/// and each position replaced by `N` with probability `n_fraction`.
pub fn random_reads(
    seed: u64,
    count: usize,
    min_len: usize,
    max_len: usize,
    n_fraction: f64,
) -> Vec<String> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let len = rng.random_range(min_len..=max_len);
            (0..len)
                .map(|_| {
                    if n_fraction > 0.0 && rng.random_bool(n_fraction) {
                        'N'
                    } else {
                        BASES[rng.random_range(0..4)]
                    }
                })
                .collect()
        })
        .collect()
}

/// Reads sampled from one random reference with strand flips, so k-mers
/// recur across reads and strands (a 20x-coverage-style corpus).
pub fn sampled_reads(
    seed: u64,
    reference_len: usize,
    count: usize,
    min_len: usize,
    max_len: usize,
) -> Vec<String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let reference: String = (0..reference_len)
        .map(|_| BASES[rng.random_range(0..4)])
        .collect();
    (0..count)
        .map(|_| {
            let len = rng.random_range(min_len..=max_len.min(reference_len));
            let start = rng.random_range(0..=reference_len - len);
            let read = &reference[start..start + len];
            if rng.random_bool(0.5) {
                rc(read)
            } else {
                read.to_string()
            }
        })
        .collect()
}

pub fn write_fasta(path: &Path, reads: &[String]) {
    let mut w = BufWriter::new(std::fs::File::create(path).unwrap());
    for (i, read) in reads.iter().enumerate() {
        writeln!(w, ">read{i}\n{read}").unwrap();
    }
    w.flush().unwrap();
}

pub fn write_fastq(path: &Path, reads: &[String]) {
    let mut w = BufWriter::new(std::fs::File::create(path).unwrap());
    for (i, read) in reads.iter().enumerate() {
        writeln!(w, "@read{i}\n{read}\n+\n{}", "I".repeat(read.len())).unwrap();
    }
    w.flush().unwrap();
}

/// Reverse complement of an ACGT string.
pub fn rc(s: &str) -> String {
    s.chars()
        .rev()
        .map(|c| match c {
            'A' => 'T',
            'C' => 'G',
            'G' => 'C',
            'T' => 'A',
            other => panic!("non-ACGT base {other:?}"),
        })
        .collect()
}

/// The smaller of a window and its reverse complement, by plain string
/// order (which equals 2-bit code order, since 'A'<'C'<'G'<'T' in ASCII).
pub fn canonical_string(s: &str) -> String {
    let r = rc(s);
    if r.as_str() < s {
        r
    } else {
        s.to_string()
    }
}

/// Sliding-window counting oracle: every k-long window of consecutive
/// ACGT bases (case folded, anything else splits the read), canonicalized
/// when `canonical` is set.
pub fn naive_counts(reads: &[String], k: usize, canonical: bool) -> HashMap<String, u32> {
    let mut counts = HashMap::new();
    for read in reads {
        let upper = read.to_ascii_uppercase();
        for run in upper.split(|c| !matches!(c, 'A' | 'C' | 'G' | 'T')) {
            if run.len() < k {
                continue;
            }
            for start in 0..=run.len() - k {
                let window = &run[start..start + k];
                let key = if canonical {
                    canonical_string(window)
                } else {
                    window.to_string()
                };
                *counts.entry(key).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// Keep only entries whose count reaches `min_count`.
pub fn filtered(counts: &HashMap<String, u32>, min_count: u32) -> HashMap<String, u32> {
    counts
        .iter()
        .filter(|&(_, &c)| c >= min_count)
        .map(|(s, &c)| (s.clone(), c))
        .collect()
}

/// Decode a binary result file into a text map.
pub fn decoded_map(path: &Path, k: usize) -> HashMap<String, u32> {
    let entries = output::decode_file(path, k).unwrap();
    let mut map = HashMap::with_capacity(entries.len());
    for (kmer, count) in entries {
        let prior = map.insert(kmer.decode(), count);
        assert!(prior.is_none(), "duplicate output entry for {}", kmer.decode());
    }
    map
}

/// A pipeline configuration with the defaults the oracle tests want:
/// count everything (l = 1) and leave nothing behind.
pub fn test_config(k: usize, workdir: &Path, input: &Path, output: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(k, workdir);
    cfg.min_count = 1;
    cfg.input = Some(input.to_path_buf());
    cfg.output = Some(output.to_path_buf());
    cfg
}

/// Pretty delta report for map mismatches, so failures name offenders.
pub fn assert_maps_equal(got: &HashMap<String, u32>, want: &HashMap<String, u32>, context: &str) {
    if got == want {
        return;
    }
    let mut missing: Vec<_> = want
        .iter()
        .filter(|(key, want_count)| got.get(*key) != Some(want_count))
        .take(5)
        .collect();
    missing.sort();
    let mut extra: Vec<_> = got
        .iter()
        .filter(|(key, _)| !want.contains_key(*key))
        .take(5)
        .collect();
    extra.sort();
    panic!(
        "{context}: maps differ ({} got vs {} want); first wrong-or-missing: {missing:?}; \
         first extra: {extra:?}",
        got.len(),
        want.len()
    );
}
