//! Total orderings on m-mers.
//!
//! The choice of minimizer ordering never affects count correctness — it
//! only shapes how super-mers fragment and how evenly bins fill. Each
//! strategy is materialized as a rank table over all 4^m m-mers so that
//! splitter workers pay one array lookup per window.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kmer::Kmer;
use crate::minimizer::decompose_supermers;
use crate::seq::base_code;
use crate::seqio::split_on_invalid;

/// Largest m for which rank tables are materialized (4^12 entries = 64 MiB).
pub const MAX_M: u8 = 12;

/// Which total order to put on m-mers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    /// Plain A < C < G < T lexicographic (identity ranks).
    Lex,
    /// Lexicographic under C < G < A < T.
    Cgat,
    /// Complement every second base, then order under C < A < T < G.
    Roberts,
    /// A < C < G < T with m-mers starting AAA or ACA demoted to the end.
    Kmc2,
    /// Seeded uniformly random permutation.
    Random { seed: u64 },
    /// Frequency-sorted, re-ranked by distance from the pivot 4^m * p.
    Dfp { pivot: f64 },
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Lex => write!(f, "lex"),
            Strategy::Cgat => write!(f, "cgat"),
            Strategy::Roberts => write!(f, "roberts"),
            Strategy::Kmc2 => write!(f, "kmc2"),
            Strategy::Random { seed } => write!(f, "random:{seed}"),
            Strategy::Dfp { pivot } => write!(f, "dfp:{pivot}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        match (name, arg) {
            ("lex", None) => Ok(Strategy::Lex),
            ("cgat", None) => Ok(Strategy::Cgat),
            ("roberts", None) => Ok(Strategy::Roberts),
            ("kmc2", None) => Ok(Strategy::Kmc2),
            ("random", None) => Ok(Strategy::Random { seed: 42 }),
            ("random", Some(a)) => a
                .parse()
                .map(|seed| Strategy::Random { seed })
                .map_err(|_| Error::Usage(format!("invalid random seed {a:?}"))),
            ("dfp", None) => Ok(Strategy::Dfp { pivot: 0.5 }),
            ("dfp", Some(a)) => {
                let pivot: f64 = a
                    .parse()
                    .map_err(|_| Error::Usage(format!("invalid dfp pivot {a:?}")))?;
                Ok(Strategy::Dfp { pivot })
            }
            _ => Err(Error::Usage(format!(
                "unknown ordering {s:?} (expected lex, cgat, roberts, kmc2, random[:seed], dfp[:pivot])"
            ))),
        }
    }
}

impl Strategy {
    /// True if building this strategy's table needs sampled m-mer
    /// frequencies.
    pub fn needs_frequencies(&self) -> bool {
        matches!(self, Strategy::Dfp { .. })
    }
}

/// A total order on all 4^m m-mers, materialized as a rank table.
///
/// `rank` is a bijection 0..4^m-1 -> 0..4^m-1; the m-mer with rank 0 is the
/// "smallest" and wins minimizer selection.
#[derive(Clone)]
pub struct MinimizerOrdering {
    m: u8,
    strategy: Strategy,
    ranks: Vec<u32>,
}

impl MinimizerOrdering {
    /// Build a table for `strategy`. `freq` is required for dfp and ignored
    /// otherwise.
    pub fn build(strategy: Strategy, m: u8, freq: Option<&FrequencyTable>) -> Result<Self> {
        match strategy {
            Strategy::Lex => Self::lex(m),
            Strategy::Cgat => Self::cgat(m),
            Strategy::Roberts => Self::roberts(m),
            Strategy::Kmc2 => Self::kmc2(m),
            Strategy::Random { seed } => Self::random(m, seed),
            Strategy::Dfp { pivot } => {
                let freq = freq.ok_or_else(|| {
                    Error::Config("dfp ordering requires sampled m-mer frequencies".into())
                })?;
                Self::dfp(freq, pivot)
            }
        }
    }

    /// Plain lexicographic order under A < C < G < T: rank = m-mer value.
    pub fn lex(m: u8) -> Result<Self> {
        let n = table_len(m)?;
        Ok(MinimizerOrdering {
            m,
            strategy: Strategy::Lex,
            ranks: (0..n as u32).collect(),
        })
    }

    /// Lexicographic under the alphabet C < G < A < T.
    pub fn cgat(m: u8) -> Result<Self> {
        let n = table_len(m)?;
        // Relabeling digits with a permutation of {0..3} is itself a
        // bijection on 0..4^m-1, so the remapped value is the rank.
        let map = [2u32, 0, 1, 3]; // A->2, C->0, G->1, T->3
        let ranks = (0..n as u32).map(|code| remap_digits(code, m, map)).collect();
        Ok(MinimizerOrdering {
            m,
            strategy: Strategy::Cgat,
            ranks,
        })
    }

    /// Complement bases at odd offsets (the second, fourth, ... base), then
    /// order under C < A < T < G. Designed to stop poly-A artifacts and
    /// alternating-purine repeats from dominating minimizer selection.
    pub fn roberts(m: u8) -> Result<Self> {
        let n = table_len(m)?;
        let map = [1u32, 0, 3, 2]; // C->0, A->1, T->2, G->3
        let ranks = (0..n as u32)
            .map(|code| {
                let mut out = 0u32;
                for j in 0..m as usize {
                    let shift = 2 * (m as usize - 1 - j);
                    let mut d = (code >> shift) & 3;
                    if j % 2 == 1 {
                        d ^= 3;
                    }
                    out |= map[d as usize] << shift;
                }
                out
            })
            .collect();
        Ok(MinimizerOrdering {
            m,
            strategy: Strategy::Roberts,
            ranks,
        })
    }

    /// A < C < G < T, except m-mers starting with AAA or ACA are demoted
    /// behind everything else (keeping lexicographic order within each
    /// group). Falls back to plain lexicographic for m < 3.
    pub fn kmc2(m: u8) -> Result<Self> {
        let n = table_len(m)?;
        if m < 3 {
            let mut ord = Self::lex(m)?;
            ord.strategy = Strategy::Kmc2;
            return Ok(ord);
        }
        let demoted = |code: u32| {
            let prefix = code >> (2 * (m as usize - 3));
            prefix == 0b00_00_00 || prefix == 0b00_01_00 // AAA or ACA
        };
        let mut ranks = vec![0u32; n];
        let mut next = 0u32;
        for code in 0..n as u32 {
            if !demoted(code) {
                ranks[code as usize] = next;
                next += 1;
            }
        }
        for code in 0..n as u32 {
            if demoted(code) {
                ranks[code as usize] = next;
                next += 1;
            }
        }
        Ok(MinimizerOrdering {
            m,
            strategy: Strategy::Kmc2,
            ranks,
        })
    }

    /// Uniformly random permutation from a seeded ChaCha8 stream.
    pub fn random(m: u8, seed: u64) -> Result<Self> {
        let n = table_len(m)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ranks: Vec<u32> = (0..n as u32).collect();
        ranks.shuffle(&mut rng);
        Ok(MinimizerOrdering {
            m,
            strategy: Strategy::Random { seed },
            ranks,
        })
    }

    /// Distance-from-pivot ordering over sampled frequencies.
    ///
    /// M-mers are first sorted ascending by sampled count (ties by A<C<G<T
    /// value), giving each an initial position. Final ranks sort ascending
    /// by |initial_position - 4^m * pivot|, ties going to the smaller
    /// initial position.
    pub fn dfp(freq: &FrequencyTable, pivot: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&pivot) {
            return Err(Error::Config(format!(
                "dfp pivot {pivot} outside [0, 1]"
            )));
        }
        let m = freq.m;
        let n = table_len(m)?;
        debug_assert_eq!(freq.counts.len(), n);

        let mut by_freq: Vec<u32> = (0..n as u32).collect();
        by_freq.sort_by_key(|&code| (freq.counts[code as usize], code));

        let pivot_pos = n as f64 * pivot;
        let mut order: Vec<(usize, u32)> = by_freq.into_iter().enumerate().collect();
        order.sort_by(|a, b| {
            let da = (a.0 as f64 - pivot_pos).abs();
            let db = (b.0 as f64 - pivot_pos).abs();
            da.total_cmp(&db).then(a.0.cmp(&b.0))
        });

        let mut ranks = vec![0u32; n];
        for (rank, (_pos, code)) in order.into_iter().enumerate() {
            ranks[code as usize] = rank as u32;
        }
        Ok(MinimizerOrdering {
            m,
            strategy: Strategy::Dfp { pivot },
            ranks,
        })
    }

    #[inline]
    pub fn m(&self) -> u8 {
        self.m
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    /// Rank of the m-mer with 2-bit value `code`.
    #[inline]
    pub fn rank(&self, code: u32) -> u32 {
        self.ranks[code as usize]
    }

    /// Exhaustively verify that the table is a permutation of 0..4^m-1.
    pub fn is_bijective(&self) -> bool {
        let mut seen = vec![false; self.ranks.len()];
        for &r in &self.ranks {
            match seen.get_mut(r as usize) {
                Some(slot) if !*slot => *slot = true,
                _ => return false,
            }
        }
        true
    }
}

fn table_len(m: u8) -> Result<usize> {
    if m == 0 || m > MAX_M {
        return Err(Error::Config(format!(
            "m = {m} outside supported range 1..={MAX_M}"
        )));
    }
    Ok(1usize << (2 * m as usize))
}

fn remap_digits(code: u32, m: u8, map: [u32; 4]) -> u32 {
    let mut out = 0;
    for j in 0..m as usize {
        let shift = 2 * (m as usize - 1 - j);
        out |= map[((code >> shift) & 3) as usize] << shift;
    }
    out
}

/// Sampled occurrence counts of every m-mer, feeding the dfp ordering.
#[derive(Clone)]
pub struct FrequencyTable {
    m: u8,
    counts: Vec<u64>,
    sampled: u64,
}

impl FrequencyTable {
    pub fn new(m: u8) -> Result<Self> {
        let n = table_len(m)?;
        Ok(FrequencyTable {
            m,
            counts: vec![0; n],
            sampled: 0,
        })
    }

    #[inline]
    pub fn m(&self) -> u8 {
        self.m
    }

    /// Total number of sampled positions.
    pub fn total(&self) -> u64 {
        self.sampled
    }

    pub fn count(&self, code: u32) -> u64 {
        self.counts[code as usize]
    }

    /// Tally the valid m-mer positions of `read` (maximal A/C/G/T runs, case
    /// folded) until `budget` total positions have been sampled. Returns
    /// false once the budget is exhausted.
    pub fn observe(&mut self, read: &[u8], budget: u64) -> bool {
        if self.sampled >= budget {
            return false;
        }
        let m = self.m as usize;
        let mask = table_len(self.m).unwrap() as u32 - 1;
        let mut code = 0u32;
        let mut run = 0usize;
        for &ch in read {
            match base_code(ch) {
                Some(c) => {
                    code = ((code << 2) | c as u32) & mask;
                    run += 1;
                    if run >= m {
                        self.counts[code as usize] += 1;
                        self.sampled += 1;
                        if self.sampled >= budget {
                            return false;
                        }
                    }
                }
                None => run = 0,
            }
        }
        true
    }
}

/// Count m-mer occurrences over the first `budget` valid positions of
/// `reads`.
pub fn sample_frequencies<I, R>(reads: I, m: u8, budget: u64) -> Result<FrequencyTable>
where
    I: IntoIterator<Item = R>,
    R: AsRef<[u8]>,
{
    let mut freq = FrequencyTable::new(m)?;
    for read in reads {
        if !freq.observe(read.as_ref(), budget) {
            break;
        }
    }
    Ok(freq)
}

/// Partitioning quality metrics for one ordering on one read set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrderingMetrics {
    /// Super-mers produced across all reads: fewer means less temporary I/O.
    pub total_supermers: u64,
    /// Maximum over minimizers of the number of distinct k-mers mapping to
    /// it: a proxy for the largest bin a single minimizer can force.
    pub max_distinct_kmers_per_minimizer: u64,
}

/// Decompose every read under `ord` and measure how the ordering spreads
/// k-mers over minimizers.
pub fn evaluate_ordering<I, R>(
    reads: I,
    k: usize,
    ord: &MinimizerOrdering,
    canonical_mode: bool,
) -> OrderingMetrics
where
    I: IntoIterator<Item = R>,
    R: AsRef<[u8]>,
{
    let mut total_supermers = 0u64;
    let mut per_minimizer: HashMap<u32, HashSet<Kmer>> = HashMap::new();
    for read in reads {
        for fragment in split_on_invalid(read.as_ref(), k) {
            for sm in decompose_supermers(&fragment.bases, k, ord, canonical_mode) {
                total_supermers += 1;
                let distinct = per_minimizer.entry(sm.minimizer.code()).or_default();
                for w in 0..=sm.seq.len() - k {
                    let mut kmer = Kmer::from_window(&sm.seq, w, k);
                    if canonical_mode {
                        kmer = kmer.canonical();
                    }
                    distinct.insert(kmer);
                }
            }
        }
    }
    let max_distinct = per_minimizer.values().map(|s| s.len() as u64).max();
    OrderingMetrics {
        total_supermers,
        max_distinct_kmers_per_minimizer: max_distinct.unwrap_or(0),
    }
}
