//! 2-bit packed nucleotide sequences.
//!
//! Bases are encoded A=00, C=01, G=10, T=11, four per byte with the first
//! base in the most significant bit pair. Pad bits past the end of the
//! sequence are always zero, so equal sequences have identical byte images.

use std::fmt;

use crate::error::{Error, Result};

/// ASCII letter for each 2-bit code.
pub const BASE_ASCII: [u8; 4] = [b'A', b'C', b'G', b'T'];

/// 2-bit code for an ASCII base, accepting upper and lower case.
/// Anything else (including N) is `None`.
#[inline]
pub fn base_code(ch: u8) -> Option<u8> {
    match ch {
        b'A' | b'a' => Some(0),
        b'C' | b'c' => Some(1),
        b'G' | b'g' => Some(2),
        b'T' | b't' => Some(3),
        _ => None,
    }
}

/// ASCII letter for a 2-bit code.
#[inline]
pub fn base_ascii(code: u8) -> u8 {
    BASE_ASCII[(code & 3) as usize]
}

/// Watson-Crick complement of a 2-bit code. The encoding was chosen so this
/// is a single XOR: A<->T and C<->G both flip all bits.
#[inline]
pub fn complement(code: u8) -> u8 {
    code ^ 3
}

/// Number of bytes needed to pack `bases` bases.
#[inline]
pub const fn packed_len(bases: usize) -> usize {
    bases.div_ceil(4)
}

/// A DNA sequence stored four bases per byte.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct PackedSeq {
    bytes: Vec<u8>,
    len: usize,
}

impl PackedSeq {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bases: usize) -> Self {
        PackedSeq {
            bytes: Vec::with_capacity(packed_len(bases)),
            len: 0,
        }
    }

    /// Encode an ASCII sequence. Fails with the position of the first
    /// character that is not one of `ACGTacgt`.
    pub fn encode(text: &[u8]) -> Result<Self> {
        let mut seq = PackedSeq::with_capacity(text.len());
        for (pos, &ch) in text.iter().enumerate() {
            match base_code(ch) {
                Some(code) => seq.push_code(code),
                None => {
                    return Err(Error::InvalidBase {
                        byte: ch as char,
                        pos,
                    })
                }
            }
        }
        Ok(seq)
    }

    /// Build a sequence from 2-bit codes (each must be < 4).
    pub fn from_codes(codes: &[u8]) -> Self {
        let mut seq = PackedSeq::with_capacity(codes.len());
        for &code in codes {
            debug_assert!(code < 4);
            seq.push_code(code);
        }
        seq
    }

    /// Reassemble a sequence from its packed byte image, validating that the
    /// byte count matches `len` and that all pad bits are zero. Used when
    /// reading packed records back from disk.
    pub fn from_raw(bytes: Vec<u8>, len: usize) -> Result<Self> {
        if bytes.len() != packed_len(len) {
            return Err(Error::Internal(format!(
                "packed length mismatch: {} bytes for {} bases",
                bytes.len(),
                len
            )));
        }
        let seq = PackedSeq { bytes, len };
        if let Some(&last) = seq.bytes.last() {
            if last & !seq.tail_mask() != 0 {
                return Err(Error::Internal(
                    "nonzero pad bits in packed sequence".into(),
                ));
            }
        }
        Ok(seq)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Packed byte image, `ceil(len/4)` bytes.
    #[inline]
    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// 2-bit code of the base at `i`.
    #[inline]
    pub fn get(&self, i: usize) -> u8 {
        debug_assert!(i < self.len);
        (self.bytes[i >> 2] >> (6 - 2 * (i & 3))) & 3
    }

    /// Append one 2-bit code.
    #[inline]
    pub fn push_code(&mut self, code: u8) {
        debug_assert!(code < 4);
        let shift = 6 - 2 * (self.len & 3);
        if self.len & 3 == 0 {
            self.bytes.push(code << shift);
        } else {
            *self.bytes.last_mut().unwrap() |= code << shift;
        }
        self.len += 1;
    }

    /// Copy of the subsequence of `count` bases starting at `start`.
    pub fn slice(&self, start: usize, count: usize) -> PackedSeq {
        assert!(start + count <= self.len, "slice out of bounds");
        let nbytes = packed_len(count);
        let mut bytes = Vec::with_capacity(nbytes);
        let byte0 = start >> 2;
        let shift = 2 * (start & 3);
        if shift == 0 {
            bytes.extend_from_slice(&self.bytes[byte0..byte0 + nbytes]);
        } else {
            for i in 0..nbytes {
                let hi = self.bytes[byte0 + i] << shift;
                let lo = self
                    .bytes
                    .get(byte0 + i + 1)
                    .map_or(0, |b| b >> (8 - shift));
                bytes.push(hi | lo);
            }
        }
        let mut out = PackedSeq { bytes, len: count };
        out.clear_tail();
        out
    }

    /// Iterator over the 2-bit codes.
    pub fn codes(&self) -> impl Iterator<Item = u8> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Decode to an ASCII string.
    pub fn decode(&self) -> String {
        self.codes().map(|c| base_ascii(c) as char).collect()
    }

    /// Mask that keeps the used bits of the final byte.
    fn tail_mask(&self) -> u8 {
        match self.len & 3 {
            0 => 0xFF,
            r => 0xFFu8 << (8 - 2 * r),
        }
    }

    fn clear_tail(&mut self) {
        let mask = self.tail_mask();
        if let Some(last) = self.bytes.last_mut() {
            *last &= mask;
        }
    }
}

impl fmt::Display for PackedSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.decode())
    }
}

impl fmt::Debug for PackedSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PackedSeq({})", self.decode())
    }
}
