//! Minimizer selection and super-mer decomposition.
//!
//! A k-mer's minimizer is its smallest length-m substring under a chosen
//! ordering. Consecutive k-mers of a fragment usually share their minimizer,
//! so a fragment collapses into few "super-mers": maximal runs of k-windows
//! agreeing on one minimizer value. Distributing super-mers instead of raw
//! k-mers is what keeps the temporary files small — overlapping windows are
//! stored once.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::kmer::Kmer;
use crate::ordering::MinimizerOrdering;
use crate::seq::{self, PackedSeq};

/// An m-mer packed into one machine word: base j sits at bit offset
/// 2*(m-1-j), so the numeric value is also the A<C<G<T lexicographic rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Mmer {
    code: u32,
    m: u8,
}

impl Mmer {
    pub fn new(code: u32, m: u8) -> Self {
        debug_assert!(m >= 1 && (m as usize) <= 16 && (code as u64) < (1u64 << (2 * m as u32)));
        Mmer { code, m }
    }

    pub fn from_ascii(text: &[u8]) -> Result<Self> {
        if text.is_empty() || text.len() > 16 {
            return Err(Error::Config(format!(
                "m-mer length {} outside 1..=16",
                text.len()
            )));
        }
        let mut code = 0u32;
        for (pos, &ch) in text.iter().enumerate() {
            let c = seq::base_code(ch).ok_or(Error::InvalidBase {
                byte: ch as char,
                pos,
            })?;
            code = (code << 2) | c as u32;
        }
        Ok(Mmer {
            code,
            m: text.len() as u8,
        })
    }

    #[inline]
    pub fn code(&self) -> u32 {
        self.code
    }

    #[inline]
    pub fn m(&self) -> u8 {
        self.m
    }

    pub fn reverse_complement(&self) -> Self {
        let mut out = 0u32;
        for j in 0..self.m as usize {
            let d = (self.code >> (2 * j)) & 3;
            out = (out << 2) | (d ^ 3);
        }
        Mmer {
            code: out,
            m: self.m,
        }
    }

    pub fn decode(&self) -> String {
        (0..self.m as usize)
            .map(|j| {
                let d = (self.code >> (2 * (self.m as usize - 1 - j))) & 3;
                seq::base_ascii(d as u8) as char
            })
            .collect()
    }
}

impl std::fmt::Display for Mmer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.decode())
    }
}

/// Result of minimizer selection over one k-mer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MinimizerHit {
    pub mmer: Mmer,
    /// Start offset of the window on the forward strand.
    pub position: usize,
    /// True when canonical mode selected the reverse-complement m-mer of
    /// the window at `position`.
    pub reverse: bool,
}

/// A maximal run of consecutive k-windows sharing one minimizer value.
#[derive(Debug, Clone)]
pub struct SuperMer {
    pub seq: PackedSeq,
    pub minimizer: Mmer,
    pub minimizer_rank: u32,
}

impl SuperMer {
    /// Number of k-windows this super-mer carries.
    pub fn kmer_count(&self, k: usize) -> usize {
        self.seq.len() - k + 1
    }
}

/// Effective (rank, value) of the m-mer window: in canonical mode the
/// smaller-ranked of the forward window and its reverse complement.
#[inline]
fn effective(
    fwd: u32,
    rc: u32,
    ord: &MinimizerOrdering,
    canonical_mode: bool,
) -> (u32, u32) {
    let rank_fwd = ord.rank(fwd);
    if !canonical_mode {
        return (rank_fwd, fwd);
    }
    let rank_rc = ord.rank(rc);
    if rank_rc < rank_fwd {
        (rank_rc, rc)
    } else {
        (rank_fwd, fwd)
    }
}

/// The minimum-rank m-mer among the k-m+1 windows of `x` (both strands when
/// `canonical_mode` is set). Ties go to the leftmost forward position.
pub fn minimizer(x: &Kmer, ord: &MinimizerOrdering, canonical_mode: bool) -> MinimizerHit {
    let k = x.k();
    let m = ord.m() as usize;
    assert!(m <= k, "minimizer length {m} exceeds k-mer length {k}");
    let mask = ((1u64 << (2 * m)) - 1) as u32;
    let mut fwd = 0u32;
    let mut rc = 0u32;
    let mut best: Option<(u32, u32, usize, bool)> = None;
    for i in 0..k {
        let c = x.get(i) as u32;
        fwd = ((fwd << 2) | c) & mask;
        rc = (rc >> 2) | ((c ^ 3) << (2 * (m - 1)));
        if i + 1 < m {
            continue;
        }
        let pos = i + 1 - m;
        let (rank, code) = effective(fwd, rc, ord, canonical_mode);
        if best.map_or(true, |(r, ..)| rank < r) {
            best = Some((rank, code, pos, code != fwd));
        }
    }
    let (_, code, position, reverse) = best.expect("k >= m guarantees one window");
    MinimizerHit {
        mmer: Mmer::new(code, ord.m()),
        position,
        reverse,
    }
}

/// Split `fragment` into super-mers: maximal runs of consecutive k-windows
/// whose minimizer value agrees. Consecutive super-mers overlap in exactly
/// k-1 bases, and their k-windows together reproduce the fragment's windows
/// exactly. Fragments shorter than k yield an empty list.
pub fn decompose_supermers(
    fragment: &PackedSeq,
    k: usize,
    ord: &MinimizerOrdering,
    canonical_mode: bool,
) -> Vec<SuperMer> {
    let len = fragment.len();
    let m = ord.m() as usize;
    assert!(m <= k, "minimizer length {m} exceeds k {k}");
    if len < k {
        return Vec::new();
    }
    let mask = ((1u64 << (2 * m)) - 1) as u32;
    let mut out = Vec::new();

    // Monotone deque of (rank, value, m-mer position); front is the current
    // window minimizer. Popping only strictly larger ranks keeps the
    // leftmost among equals in front.
    let mut deque: VecDeque<(u32, u32, usize)> = VecDeque::new();
    let mut fwd = 0u32;
    let mut rc = 0u32;
    let mut run_start = 0usize;
    let mut run_rank = 0u32;
    let mut run_code = 0u32;

    for i in 0..len {
        let c = fragment.get(i) as u32;
        fwd = ((fwd << 2) | c) & mask;
        rc = (rc >> 2) | ((c ^ 3) << (2 * (m - 1)));
        if i + 1 < m {
            continue;
        }
        let pos = i + 1 - m;
        let (rank, code) = effective(fwd, rc, ord, canonical_mode);
        while deque.back().is_some_and(|&(r, ..)| r > rank) {
            deque.pop_back();
        }
        deque.push_back((rank, code, pos));

        // The k-window ending at base i is window w = i+1-k; it covers
        // m-mer positions w ..= w+k-m.
        if i + 1 < k {
            continue;
        }
        let w = i + 1 - k;
        while deque.front().is_some_and(|&(.., p)| p < w) {
            deque.pop_front();
        }
        let &(rank, code, _) = deque.front().expect("window always holds an m-mer");
        if w == 0 {
            (run_start, run_rank, run_code) = (0, rank, code);
        } else if code != run_code {
            out.push(make_supermer(
                fragment, run_start, w - 1, k, ord, run_rank, run_code,
            ));
            (run_start, run_rank, run_code) = (w, rank, code);
        }
    }
    out.push(make_supermer(
        fragment,
        run_start,
        len - k,
        k,
        ord,
        run_rank,
        run_code,
    ));
    out
}

fn make_supermer(
    fragment: &PackedSeq,
    first_window: usize,
    last_window: usize,
    k: usize,
    ord: &MinimizerOrdering,
    rank: u32,
    code: u32,
) -> SuperMer {
    SuperMer {
        seq: fragment.slice(first_window, last_window - first_window + k),
        minimizer: Mmer::new(code, ord.m()),
        minimizer_rank: rank,
    }
}
