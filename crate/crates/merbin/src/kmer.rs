//! Fixed-capacity k-mers with rolling updates.
//!
//! A [`Kmer`] stores up to 479 bases in fifteen 64-bit words. Bases are
//! packed big-endian (first base in the most significant bit pair of word
//! zero, unused low bits zero), so comparing the word arrays directly is the
//! same as comparing the decoded strings under A < C < G < T. That makes
//! canonicalization a plain `min` and lets count tables use derived ordering.

use std::fmt;

use crate::error::{Error, Result};
use crate::seq::{self, PackedSeq};

/// Smallest k accepted by the counting pipeline.
pub const MIN_K: usize = 8;
/// Largest supported k: 479 bases fit in 15 words with two bits to spare.
pub const MAX_K: usize = 479;
/// Words per k-mer: ceil(2 * 479 / 64).
pub const KMER_WORDS: usize = 15;

/// A k-mer of 1..=479 bases.
///
/// The pipeline only counts k in [`MIN_K`]..=[`MAX_K`]; shorter k-mers are
/// still representable because minimizer bookkeeping works on small windows.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Kmer {
    // Field order matters: derived comparison looks at the packed words
    // first, which is lexicographic base order for equal k.
    words: [u64; KMER_WORDS],
    k: u16,
}

impl Default for Kmer {
    /// Zero-length placeholder, used only for empty table slots; never a
    /// valid k-mer.
    fn default() -> Self {
        Kmer {
            words: [0; KMER_WORDS],
            k: 0,
        }
    }
}

impl Kmer {
    /// Build from 2-bit codes. Panics if empty or longer than [`MAX_K`].
    pub fn from_codes(codes: &[u8]) -> Self {
        assert!(
            !codes.is_empty() && codes.len() <= MAX_K,
            "k-mer length {} out of range",
            codes.len()
        );
        let mut words = [0u64; KMER_WORDS];
        for (j, &code) in codes.iter().enumerate() {
            debug_assert!(code < 4);
            words[j >> 5] |= (code as u64) << (62 - 2 * (j & 31));
        }
        Kmer {
            words,
            k: codes.len() as u16,
        }
    }

    /// Build from an ASCII string, mostly for tests and diagnostics.
    pub fn from_ascii(text: &[u8]) -> Result<Self> {
        let seq = PackedSeq::encode(text)?;
        if seq.is_empty() || seq.len() > MAX_K {
            return Err(Error::Config(format!(
                "k-mer length {} out of range 1..={MAX_K}",
                seq.len()
            )));
        }
        Ok(Self::from_window(&seq, 0, seq.len()))
    }

    /// Extract the window of `k` bases starting at `start`.
    pub fn from_window(seq: &PackedSeq, start: usize, k: usize) -> Self {
        assert!(k >= 1 && k <= MAX_K && start + k <= seq.len());
        let mut words = [0u64; KMER_WORDS];
        for j in 0..k {
            words[j >> 5] |= (seq.get(start + j) as u64) << (62 - 2 * (j & 31));
        }
        Kmer { words, k: k as u16 }
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k as usize
    }

    /// 2-bit code of the base at `i`.
    #[inline]
    pub fn get(&self, i: usize) -> u8 {
        debug_assert!(i < self.k());
        ((self.words[i >> 5] >> (62 - 2 * (i & 31))) & 3) as u8
    }

    /// Words actually used for this k.
    #[inline]
    fn used_words(&self) -> usize {
        (self.k() + 31) / 32
    }

    /// Mask keeping the used bit pairs of the last occupied word.
    #[inline]
    fn tail_mask(&self) -> u64 {
        let r = self.k() - 32 * (self.used_words() - 1);
        if r == 32 {
            !0
        } else {
            !0u64 << (64 - 2 * r)
        }
    }

    /// Shift every base one position left, dropping the first base and
    /// appending `code` at the end. This is the forward rolling step when
    /// sliding a k-window along a sequence.
    #[inline]
    pub fn roll_back(&mut self, code: u8) {
        debug_assert!(code < 4);
        let n = self.used_words();
        for i in 0..n - 1 {
            self.words[i] = (self.words[i] << 2) | (self.words[i + 1] >> 62);
        }
        self.words[n - 1] <<= 2;
        let j = self.k() - 1;
        self.words[j >> 5] |= (code as u64) << (62 - 2 * (j & 31));
    }

    /// Shift every base one position right, dropping the last base and
    /// prepending `code` at the front. Feeding the complement of each new
    /// base keeps a reverse-complement image rolling in lockstep with
    /// [`Kmer::roll_back`] on the forward strand.
    #[inline]
    pub fn roll_front(&mut self, code: u8) {
        debug_assert!(code < 4);
        let n = self.used_words();
        for i in (1..n).rev() {
            self.words[i] = (self.words[i] >> 2) | (self.words[i - 1] << 62);
        }
        self.words[0] = (self.words[0] >> 2) | ((code as u64) << 62);
        self.words[n - 1] &= self.tail_mask();
    }

    /// Reverse complement.
    pub fn reverse_complement(&self) -> Self {
        let k = self.k();
        let mut words = [0u64; KMER_WORDS];
        for j in 0..k {
            let code = (self.get(k - 1 - j) ^ 3) as u64;
            words[j >> 5] |= code << (62 - 2 * (j & 31));
        }
        Kmer { words, k: self.k }
    }

    /// The lexicographically smaller of this k-mer and its reverse
    /// complement.
    pub fn canonical(&self) -> Self {
        let rc = self.reverse_complement();
        if rc < *self {
            rc
        } else {
            *self
        }
    }

    /// Number of bytes in the packed image: ceil(k/4).
    #[inline]
    pub fn packed_bytes(&self) -> usize {
        seq::packed_len(self.k())
    }

    /// Byte `i` of the packed image (same layout as [`PackedSeq`]).
    #[inline]
    pub fn packed_byte(&self, i: usize) -> u8 {
        debug_assert!(i < self.packed_bytes());
        (self.words[i >> 3] >> (56 - 8 * (i & 7))) as u8
    }

    /// Write the packed byte image (same layout as [`PackedSeq`]) into
    /// `out`, which must hold [`Kmer::packed_bytes`] bytes.
    pub fn copy_packed(&self, out: &mut [u8]) {
        debug_assert_eq!(out.len(), self.packed_bytes());
        for (b, slot) in out.iter_mut().enumerate() {
            *slot = self.packed_byte(b);
        }
    }

    /// Packed image as an owned sequence.
    pub fn to_packed_seq(&self) -> PackedSeq {
        let mut bytes = vec![0u8; self.packed_bytes()];
        self.copy_packed(&mut bytes);
        PackedSeq::from_raw(bytes, self.k()).expect("k-mer image is always canonical")
    }

    /// Decode to an ASCII string.
    pub fn decode(&self) -> String {
        (0..self.k())
            .map(|i| seq::base_ascii(self.get(i)) as char)
            .collect()
    }
}

impl fmt::Display for Kmer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.decode())
    }
}

impl fmt::Debug for Kmer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Kmer({})", self.decode())
    }
}
