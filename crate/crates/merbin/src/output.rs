//! Binary result encoding and the optional CSV histogram.
//!
//! The binary file is a headerless concatenation of entries: counts below
//! 255 take one byte; larger counts take the marker byte 0xFF followed by
//! the count as a 4-byte big-endian integer; either form is followed by the
//! k-mer packed four bases per byte with zero pad bits. Consumers must know
//! k out-of-band — the format records no metadata. Entry order is
//! unspecified (it reflects worker scheduling); the CSV histogram is sorted
//! by k-mer string so it diffs cleanly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kmer::Kmer;
use crate::seq::packed_len;

/// Marker byte introducing a 4-byte count.
const WIDE_COUNT_MARKER: u8 = 0xFF;

/// Encoded size of one entry: 1 or 5 count bytes plus ceil(k/4) k-mer
/// bytes.
pub fn entry_size(k: usize, count: u32) -> usize {
    let count_bytes = if count < WIDE_COUNT_MARKER as u32 { 1 } else { 5 };
    count_bytes + packed_len(k)
}

/// Append the encoded form of `(kmer, count)` to `out`.
pub fn encode_entry(kmer: &Kmer, count: u32, out: &mut Vec<u8>) {
    debug_assert!(count >= 1);
    if count < WIDE_COUNT_MARKER as u32 {
        out.push(count as u8);
    } else {
        out.push(WIDE_COUNT_MARKER);
        out.extend_from_slice(&count.to_be_bytes());
    }
    let start = out.len();
    out.resize(start + kmer.packed_bytes(), 0);
    kmer.copy_packed(&mut out[start..]);
}

/// Decode one entry at `*pos`, advancing `pos` past it. `path` is used only
/// for error context.
pub fn decode_entry(data: &[u8], pos: &mut usize, k: usize, path: &Path) -> Result<(Kmer, u32)> {
    let corrupt = |offset: usize, msg: &str| Error::Corrupt {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg: msg.into(),
    };
    let first = *data
        .get(*pos)
        .ok_or_else(|| corrupt(*pos, "truncated entry: missing count byte"))?;
    let mut at = *pos + 1;
    let count = if first == WIDE_COUNT_MARKER {
        let bytes = data
            .get(at..at + 4)
            .ok_or_else(|| corrupt(at, "truncated entry: missing 4-byte count"))?;
        at += 4;
        u32::from_be_bytes(bytes.try_into().expect("4-byte slice"))
    } else {
        first as u32
    };
    if count == 0 {
        return Err(corrupt(*pos, "entry with count 0"));
    }
    let nbytes = packed_len(k);
    let payload = data
        .get(at..at + nbytes)
        .ok_or_else(|| corrupt(at, "truncated entry: missing k-mer bytes"))?;
    let seq = crate::seq::PackedSeq::from_raw(payload.to_vec(), k)
        .map_err(|_| corrupt(at, "nonzero pad bits in k-mer image"))?;
    *pos = at + nbytes;
    Ok((Kmer::from_window(&seq, 0, k), count))
}

/// Decode a whole result file.
pub fn decode_file(path: &Path, k: usize) -> Result<Vec<(Kmer, u32)>> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let mut out = Vec::new();
    while pos < data.len() {
        out.push(decode_entry(&data, &mut pos, k, path)?);
    }
    Ok(out)
}

/// Write every entry with count ≥ `l` to `sink` in encoded form.
pub fn write_results<'a, W, I>(entries: I, l: u32, sink: &mut W) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a (Kmer, u32)>,
{
    let mut buf = Vec::new();
    for &(kmer, count) in entries {
        if count >= l {
            buf.clear();
            encode_entry(&kmer, count, &mut buf);
            sink.write_all(&buf)?;
        }
    }
    Ok(())
}

/// Write the same filtered set as [`write_results`] as "KMER,COUNT" lines,
/// sorted ascending by k-mer string.
pub fn emit_histogram_csv<'a, W, I>(entries: I, l: u32, sink: &mut W) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a (Kmer, u32)>,
{
    let mut rows: Vec<(String, u32)> = entries
        .into_iter()
        .filter(|(_, c)| *c >= l)
        .map(|&(kmer, count)| (kmer.decode(), count))
        .collect();
    rows.sort();
    for (text, count) in rows {
        writeln!(sink, "{text},{count}")?;
    }
    Ok(())
}

/// Streaming writer used by phase two: encodes batches as they arrive and,
/// when a CSV path is set, accumulates rows for the sorted histogram
/// written on [`ResultWriter::finish`].
pub struct ResultWriter {
    path: PathBuf,
    sink: BufWriter<File>,
    csv: Option<(PathBuf, Vec<(String, u32)>)>,
    entries_written: u64,
    buf: Vec<u8>,
}

impl ResultWriter {
    pub fn create(path: &Path, csv_path: Option<PathBuf>) -> Result<Self> {
        let sink = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        Ok(ResultWriter {
            path: path.to_path_buf(),
            sink,
            csv: csv_path.map(|p| (p, Vec::new())),
            entries_written: 0,
            buf: Vec::new(),
        })
    }

    /// Entries must already satisfy the minimum-count filter.
    pub fn write_batch(&mut self, entries: &[(Kmer, u32)]) -> Result<()> {
        for (kmer, count) in entries {
            self.buf.clear();
            encode_entry(kmer, *count, &mut self.buf);
            self.sink
                .write_all(&self.buf)
                .map_err(|e| Error::io(&self.path, e))?;
            self.entries_written += 1;
            if let Some((_, rows)) = &mut self.csv {
                rows.push((kmer.decode(), *count));
            }
        }
        Ok(())
    }

    /// Flush the binary file and write the sorted CSV, returning the number
    /// of entries written.
    pub fn finish(mut self) -> Result<u64> {
        self.sink.flush().map_err(|e| Error::io(&self.path, e))?;
        if let Some((csv_path, mut rows)) = self.csv.take() {
            rows.sort();
            let mut w =
                BufWriter::new(File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?);
            let mut body = || -> std::io::Result<()> {
                for (text, count) in &rows {
                    writeln!(w, "{text},{count}")?;
                }
                w.flush()
            };
            body().map_err(|e| Error::io(&csv_path, e))?;
        }
        Ok(self.entries_written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn encode(text: &str, count: u32) -> Vec<u8> {
        let mut out = Vec::new();
        encode_entry(&Kmer::from_ascii(text.as_bytes()).unwrap(), count, &mut out);
        out
    }

    #[test]
    fn narrow_count_fixture() {
        assert_eq!(encode("AACGTG", 67), vec![0x43, 0x06, 0xE0]);
    }

    #[test]
    fn wide_count_fixture() {
        assert_eq!(
            encode("TGGATC", 345),
            vec![0xFF, 0x00, 0x00, 0x01, 0x59, 0xE8, 0xD0]
        );
    }

    #[test]
    fn count_width_boundary() {
        // 254 is the largest single-byte count; 255 needs the marker form.
        assert_eq!(encode("AAAAAAAA", 254), vec![0xFE, 0x00, 0x00]);
        assert_eq!(
            encode("AAAAAAAA", 255),
            vec![0xFF, 0x00, 0x00, 0x00, 0xFF, 0x00, 0x00]
        );
        let path = Path::new("mem");
        let data = encode("AAAAAAAA", 255);
        let mut pos = 0;
        let (kmer, count) = decode_entry(&data, &mut pos, 8, path).unwrap();
        assert_eq!((kmer.decode().as_str(), count), ("AAAAAAAA", 255));
    }

    #[test]
    fn appendix_fixtures_roundtrip() {
        let path = Path::new("mem");
        for (text, count) in [("AACGTG", 67u32), ("TGGATC", 345)] {
            let data = encode(text, count);
            let mut pos = 0;
            let (kmer, got) = decode_entry(&data, &mut pos, 6, path).unwrap();
            assert_eq!(kmer.decode(), text);
            assert_eq!(got, count);
            assert_eq!(pos, data.len());
        }
    }

    #[test]
    fn truncated_stream_reports_offset() {
        let data = encode("AACGTG", 345);
        let mut pos = 0;
        let err = decode_entry(&data[..3], &mut pos, 6, Path::new("f")).unwrap_err();
        match err {
            Error::Corrupt { offset, .. } => assert_eq!(offset, 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn file_size_is_exactly_predictable() {
        let entries = vec![
            (Kmer::from_ascii(b"ACGTACGTA").unwrap(), 3u32),
            (Kmer::from_ascii(b"TTTTTTTTT").unwrap(), 255),
            (Kmer::from_ascii(b"GGGGGGGGG").unwrap(), 70_000),
        ];
        let mut sink = Vec::new();
        write_results(&entries, 1, &mut sink).unwrap();
        let expect: usize = entries.iter().map(|&(_, c)| entry_size(9, c)).sum();
        assert_eq!(sink.len(), expect);
        assert_eq!(expect, (1 + 3) + (5 + 3) + (5 + 3));
    }

    #[test]
    fn min_count_filter_applies_to_both_formats() {
        let entries = vec![
            (Kmer::from_ascii(b"ACCGACCG").unwrap(), 3u32),
            (Kmer::from_ascii(b"TTTTACGT").unwrap(), 1),
        ];
        let mut bin = Vec::new();
        write_results(&entries, 2, &mut bin).unwrap();
        assert_eq!(bin.len(), entry_size(8, 3));

        let mut csv = Vec::new();
        emit_histogram_csv(&entries, 2, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "ACCGACCG,3\n");

        let mut empty = Vec::new();
        write_results(&entries, 10, &mut empty).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn csv_is_sorted_by_kmer_string() {
        let entries = vec![
            (Kmer::from_ascii(b"TTTTACGT").unwrap(), 2u32),
            (Kmer::from_ascii(b"ACCGACCG").unwrap(), 3),
            (Kmer::from_ascii(b"CCCGACCG").unwrap(), 1),
        ];
        let mut csv = Vec::new();
        emit_histogram_csv(&entries, 1, &mut csv).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "ACCGACCG,3\nCCCGACCG,1\nTTTTACGT,2\n"
        );
    }

    proptest! {
        #[test]
        fn roundtrip_random_entries(
            codes in proptest::collection::vec(0u8..4, 8..480),
            count in prop_oneof![1u32..255, 255u32..=u32::MAX],
        ) {
            let kmer = Kmer::from_codes(&codes);
            let mut data = Vec::new();
            encode_entry(&kmer, count, &mut data);
            prop_assert_eq!(data.len(), entry_size(codes.len(), count));
            let mut pos = 0;
            let (back, c) = decode_entry(&data, &mut pos, codes.len(), Path::new("mem")).unwrap();
            prop_assert_eq!(back, kmer);
            prop_assert_eq!(c, count);
            prop_assert_eq!(pos, data.len());
        }
    }
}
