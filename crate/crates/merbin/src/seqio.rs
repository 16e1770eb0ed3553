//! Streaming ingestion of FASTA and FASTQ inputs.
//!
//! Inputs may be plain or gzip-compressed; a plain-text file whose first
//! line names an existing file is treated as a list of input paths, one per
//! line. Reads are normalized downstream by [`split_on_invalid`], which
//! case-folds and cuts at undetermined bases so only clean A/C/G/T
//! fragments reach the splitters.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;

use crate::error::{Error, Result};
use crate::seq::{base_code, PackedSeq};

const GZIP_MAGIC: [u8; 2] = [0x1F, 0x8B];

/// Requested input interpretation; `Auto` sniffs per file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputFormat {
    #[default]
    Auto,
    Fasta,
    Fastq,
    List,
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(InputFormat::Auto),
            "fasta" => Ok(InputFormat::Fasta),
            "fastq" => Ok(InputFormat::Fastq),
            "list" => Ok(InputFormat::List),
            _ => Err(Error::Usage(format!(
                "unknown input format {s:?} (expected auto, fasta, fastq or list)"
            ))),
        }
    }
}

/// Detected sequence container of a single file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectedFormat {
    Fasta,
    Fastq,
}

/// A batch of raw reads handed across the phase-one queue.
#[derive(Debug, Default)]
pub struct ReadBundle {
    pub reads: Vec<Vec<u8>>,
    pub total_bytes: usize,
}

/// A maximal run of valid bases inside one read.
#[derive(Debug, Clone)]
pub struct Fragment {
    pub bases: PackedSeq,
    /// Offset of the fragment within its read.
    pub offset: usize,
}

/// Expand `path` into the list of sequence files to process.
///
/// With `InputFormat::List` the file is always parsed as one path per line;
/// with `Auto` it is treated as a list only when it is plain text and its
/// first line names an existing file. List entries resolve relative to the
/// current directory first, then relative to the list file itself. Lists
/// are not expanded recursively.
pub fn resolve_inputs(path: &Path, format: InputFormat) -> Result<Vec<PathBuf>> {
    match format {
        InputFormat::List => read_path_list(path),
        InputFormat::Auto if looks_like_list(path)? => read_path_list(path),
        _ => Ok(vec![path.to_path_buf()]),
    }
}

fn looks_like_list(path: &Path) -> Result<bool> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 2];
    let n = file.read(&mut head).map_err(|e| Error::io(path, e))?;
    if n == 2 && head == GZIP_MAGIC {
        return Ok(false);
    }
    file.seek(SeekFrom::Start(0)).map_err(|e| Error::io(path, e))?;
    let mut first = String::new();
    BufReader::new(file)
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    let candidate = first.trim();
    if candidate.is_empty() || candidate.starts_with('>') || candidate.starts_with('@') {
        return Ok(false);
    }
    Ok(resolve_list_entry(path, candidate).is_some())
}

fn resolve_list_entry(list_path: &Path, entry: &str) -> Option<PathBuf> {
    let direct = PathBuf::from(entry);
    if direct.is_file() {
        return Some(direct);
    }
    let sibling = list_path.parent()?.join(entry);
    sibling.is_file().then_some(sibling)
}

fn read_path_list(path: &Path) -> Result<Vec<PathBuf>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let entry = line.trim();
        if entry.is_empty() {
            continue;
        }
        match resolve_list_entry(path, entry) {
            Some(p) => out.push(p),
            None => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: idx as u64 + 1,
                    msg: format!("listed input {entry:?} does not exist"),
                })
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "input list names no files".into(),
        });
    }
    Ok(out)
}

/// Streaming reader over the records of one FASTA/FASTQ file.
pub struct ReadStream {
    path: PathBuf,
    reader: Box<dyn BufRead + Send>,
    format: DetectedFormat,
    line: u64,
    pushback: Option<String>,
    pending_read: Option<Vec<u8>>,
}

/// Open one sequence file, transparently decompressing gzip (magic bytes
/// 1F 8B) and detecting FASTA ('>') versus FASTQ ('@') from the first
/// record unless `format` pins it.
pub fn open_reads(path: &Path, format: InputFormat) -> Result<ReadStream> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 2];
    let n = file.read(&mut head).map_err(|e| Error::io(path, e))?;
    file.seek(SeekFrom::Start(0)).map_err(|e| Error::io(path, e))?;
    let reader: Box<dyn BufRead + Send> = if n == 2 && head == GZIP_MAGIC {
        Box::new(BufReader::new(MultiGzDecoder::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    let mut stream = ReadStream {
        path: path.to_path_buf(),
        reader,
        format: DetectedFormat::Fasta,
        line: 0,
        pushback: None,
        pending_read: None,
    };
    stream.format = match format {
        InputFormat::Fasta => DetectedFormat::Fasta,
        InputFormat::Fastq => DetectedFormat::Fastq,
        InputFormat::Auto => stream.sniff_format()?,
        InputFormat::List => {
            return Err(Error::Usage(format!(
                "{}: file lists must be expanded before opening",
                path.display()
            )))
        }
    };
    Ok(stream)
}

impl ReadStream {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn format(&self) -> DetectedFormat {
        self.format
    }

    fn sniff_format(&mut self) -> Result<DetectedFormat> {
        loop {
            match self.take_line()? {
                None => return Ok(DetectedFormat::Fasta), // empty file: format moot
                Some(l) if l.trim().is_empty() => continue,
                Some(l) => {
                    let detected = if l.starts_with('>') {
                        DetectedFormat::Fasta
                    } else if l.starts_with('@') {
                        DetectedFormat::Fastq
                    } else {
                        return Err(self.parse_err(
                            "cannot detect format: first record starts with neither '>' nor '@'",
                        ));
                    };
                    self.pushback = Some(l);
                    return Ok(detected);
                }
            }
        }
    }

    fn take_line(&mut self) -> Result<Option<String>> {
        if let Some(l) = self.pushback.take() {
            return Ok(Some(l));
        }
        let mut buf = String::new();
        let n = self
            .reader
            .read_line(&mut buf)
            .map_err(|e| Error::io(&self.path, e))?;
        if n == 0 {
            return Ok(None);
        }
        self.line += 1;
        while buf.ends_with('\n') || buf.ends_with('\r') {
            buf.pop();
        }
        Ok(Some(buf))
    }

    fn peek_line(&mut self) -> Result<Option<&str>> {
        if self.pushback.is_none() {
            self.pushback = self.take_line()?;
        }
        Ok(self.pushback.as_deref())
    }

    fn parse_err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line: self.line,
            msg: msg.into(),
        }
    }

    /// Next read's base letters, or `None` at end of stream. Empty records
    /// are skipped; malformed records fail with file and line number.
    pub fn next_read(&mut self) -> Result<Option<Vec<u8>>> {
        loop {
            let read = match self.format {
                DetectedFormat::Fasta => self.next_fasta()?,
                DetectedFormat::Fastq => self.next_fastq()?,
            };
            match read {
                None => return Ok(None),
                Some(r) if r.is_empty() => continue,
                Some(r) => return Ok(Some(r)),
            }
        }
    }

    fn next_fasta(&mut self) -> Result<Option<Vec<u8>>> {
        loop {
            match self.take_line()? {
                None => return Ok(None),
                Some(l) if l.trim().is_empty() => continue,
                Some(l) if l.starts_with('>') => break,
                Some(_) => {
                    return Err(self.parse_err("expected FASTA header line starting with '>'"))
                }
            }
        }
        let mut bases = Vec::new();
        loop {
            match self.peek_line()? {
                None => break,
                Some(l) if l.starts_with('>') => break,
                Some(_) => {
                    let l = self.take_line()?.expect("peeked line");
                    bases.extend(l.trim().as_bytes());
                }
            }
        }
        Ok(Some(bases))
    }

    fn next_fastq(&mut self) -> Result<Option<Vec<u8>>> {
        let header = loop {
            match self.take_line()? {
                None => return Ok(None),
                Some(l) if l.trim().is_empty() => continue,
                Some(l) => break l,
            }
        };
        if !header.starts_with('@') {
            return Err(self.parse_err("expected FASTQ header line starting with '@'"));
        }
        let bases = self
            .take_line()?
            .ok_or_else(|| self.parse_err("truncated FASTQ record: missing sequence line"))?;
        let plus = self
            .take_line()?
            .ok_or_else(|| self.parse_err("truncated FASTQ record: missing '+' line"))?;
        if !plus.starts_with('+') {
            return Err(self.parse_err("expected FASTQ separator line starting with '+'"));
        }
        let qual = self
            .take_line()?
            .ok_or_else(|| self.parse_err("truncated FASTQ record: missing quality line"))?;
        if qual.len() != bases.len() {
            return Err(self.parse_err(format!(
                "quality length {} does not match sequence length {}",
                qual.len(),
                bases.len()
            )));
        }
        Ok(Some(bases.into_bytes()))
    }

    /// Collect reads until `capacity` bytes are reached (a single read
    /// larger than the capacity still forms its own bundle). Returns `None`
    /// at end of stream.
    pub fn next_bundle(&mut self, capacity: usize) -> Result<Option<ReadBundle>> {
        let mut bundle = ReadBundle::default();
        loop {
            let read = match self.pending_read.take() {
                Some(r) => r,
                None => match self.next_read()? {
                    Some(r) => r,
                    None => break,
                },
            };
            if !bundle.reads.is_empty() && bundle.total_bytes + read.len() > capacity {
                self.pending_read = Some(read);
                break;
            }
            bundle.total_bytes += read.len();
            bundle.reads.push(read);
            if bundle.total_bytes >= capacity {
                break;
            }
        }
        if bundle.reads.is_empty() {
            Ok(None)
        } else {
            Ok(Some(bundle))
        }
    }
}

/// Cut `read` at every character outside {A,C,G,T,a,c,g,t} and drop pieces
/// shorter than `k`: every window containing an undetermined base is thereby
/// excluded, and nothing else.
pub fn split_on_invalid(read: &[u8], k: usize) -> Vec<Fragment> {
    assert!(k >= 1);
    let mut out = Vec::new();
    let mut cur = PackedSeq::new();
    let mut start = 0usize;
    for (i, &ch) in read.iter().enumerate() {
        match base_code(ch) {
            Some(code) => {
                if cur.is_empty() {
                    start = i;
                }
                cur.push_code(code);
            }
            None => {
                if cur.len() >= k {
                    out.push(Fragment {
                        bases: std::mem::take(&mut cur),
                        offset: start,
                    });
                } else {
                    cur = PackedSeq::new();
                }
            }
        }
    }
    if cur.len() >= k {
        out.push(Fragment {
            bases: cur,
            offset: start,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &tempfile::TempDir, name: &str, content: &[u8]) -> PathBuf {
        let path = dir.path().join(name);
        std::fs::write(&path, content).unwrap();
        path
    }

    fn collect_reads(path: &Path, format: InputFormat) -> Vec<String> {
        let mut stream = open_reads(path, format).unwrap();
        let mut out = Vec::new();
        while let Some(r) = stream.next_read().unwrap() {
            out.push(String::from_utf8(r).unwrap());
        }
        out
    }

    #[test]
    fn fastq_four_line_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "r.fastq", b"@r1\nACGT\n+\nIIII\n@r2\nGGCC\n+r2\n!!!!\n");
        assert_eq!(collect_reads(&path, InputFormat::Auto), vec!["ACGT", "GGCC"]);
    }

    #[test]
    fn fastq_quality_line_starting_with_at_is_not_a_header() {
        // '@' is a legal quality character; the 4-line lockstep must not
        // mistake it for the next record.
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "r.fastq", b"@r1\nACGT\n+\n@@@@\n@r2\nTTTT\n+\nIIII\n");
        assert_eq!(collect_reads(&path, InputFormat::Auto), vec!["ACGT", "TTTT"]);
    }

    #[test]
    fn fastq_mismatched_quality_length_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "r.fastq", b"@r1\nACGT\n+\nIII\n");
        let mut stream = open_reads(&path, InputFormat::Auto).unwrap();
        let err = stream.next_read().unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
    }

    #[test]
    fn fasta_multi_line_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "r.fasta", b">chr1 test\nACGT\nGGTT\nAA\n>chr2\nTTT\n");
        assert_eq!(
            collect_reads(&path, InputFormat::Auto),
            vec!["ACGTGGTTAA", "TTT"]
        );
    }

    #[test]
    fn gzip_fasta_matches_plain() {
        let dir = tempfile::tempdir().unwrap();
        let content = b">r1\nACGTACGT\n>r2\nTTGGCCAA\n";
        let plain = write_file(&dir, "r.fasta", content);
        let gz_path = dir.path().join("r.fasta.gz");
        let mut enc = flate2::write::GzEncoder::new(
            std::fs::File::create(&gz_path).unwrap(),
            flate2::Compression::default(),
        );
        enc.write_all(content).unwrap();
        enc.finish().unwrap();
        assert_eq!(
            collect_reads(&plain, InputFormat::Auto),
            collect_reads(&gz_path, InputFormat::Auto)
        );
    }

    #[test]
    fn empty_file_is_end_of_stream() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "empty.fa", b"");
        let mut stream = open_reads(&path, InputFormat::Auto).unwrap();
        assert!(stream.next_read().unwrap().is_none());
        assert!(stream.next_bundle(1024).unwrap().is_none());
    }

    #[test]
    fn unknown_leading_character_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "weird.txt", b"ACGT all by itself\n");
        assert!(open_reads(&path, InputFormat::Auto).is_err());
    }

    #[test]
    fn list_file_expansion() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_file(&dir, "a.fasta", b">x\nACGT\n");
        let b = write_file(&dir, "b.fasta", b">y\nGGTT\n");
        let list = write_file(
            &dir,
            "inputs.txt",
            format!("{}\nb.fasta\n\n", a.display()).as_bytes(),
        );
        let resolved = resolve_inputs(&list, InputFormat::Auto).unwrap();
        assert_eq!(resolved, vec![a.clone(), b.clone()]);
        // A FASTA file must not be mistaken for a list.
        assert_eq!(resolve_inputs(&a, InputFormat::Auto).unwrap(), vec![a]);
    }

    #[test]
    fn list_with_missing_entry_fails() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_file(&dir, "a.fasta", b">x\nACGT\n");
        let list = write_file(
            &dir,
            "inputs.txt",
            format!("{}\nno-such-file.fa\n", a.display()).as_bytes(),
        );
        assert!(matches!(
            resolve_inputs(&list, InputFormat::List),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn bundle_capacity_one_yields_one_read_each() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "r.fasta", b">a\nACGT\n>b\nGG\n>c\nTTTT\n");
        let mut stream = open_reads(&path, InputFormat::Auto).unwrap();
        let mut sizes = Vec::new();
        while let Some(bundle) = stream.next_bundle(1).unwrap() {
            sizes.push(bundle.reads.len());
        }
        assert_eq!(sizes, vec![1, 1, 1]);
    }

    #[test]
    fn bundles_concatenate_to_full_read_list() {
        let dir = tempfile::tempdir().unwrap();
        let mut content = Vec::new();
        for i in 0..37 {
            content.extend(format!(">r{i}\n{}\n", "ACGT".repeat(i % 7 + 1)).into_bytes());
        }
        let path = write_file(&dir, "r.fasta", &content);
        let whole = collect_reads(&path, InputFormat::Auto);

        let mut stream = open_reads(&path, InputFormat::Auto).unwrap();
        let mut bundled = Vec::new();
        let mut byte_total = 0;
        while let Some(bundle) = stream.next_bundle(64).unwrap() {
            byte_total += bundle.total_bytes;
            bundled.extend(bundle.reads.into_iter().map(|r| String::from_utf8(r).unwrap()));
        }
        assert_eq!(bundled, whole);
        assert_eq!(byte_total, whole.iter().map(|r| r.len()).sum::<usize>());
    }

    #[test]
    fn split_on_invalid_fixtures() {
        let frags = split_on_invalid(b"ACGTNACGT", 4);
        assert_eq!(frags.len(), 2);
        assert_eq!(frags[0].bases.decode(), "ACGT");
        assert_eq!(frags[0].offset, 0);
        assert_eq!(frags[1].bases.decode(), "ACGT");
        assert_eq!(frags[1].offset, 5);

        assert!(split_on_invalid(b"ACGNT", 4).is_empty());
        assert!(split_on_invalid(b"", 4).is_empty());
    }

    #[test]
    fn split_folds_case_and_cuts_iupac_codes() {
        let frags = split_on_invalid(b"acgtRgggg", 4);
        assert_eq!(frags.len(), 2);
        assert_eq!(frags[0].bases.decode(), "ACGT");
        assert_eq!(frags[1].bases.decode(), "GGGG");
    }

    #[test]
    fn split_windows_match_naive_skip_counter() {
        // Window totals from fragments must equal a direct count that skips
        // windows containing an undetermined base.
        let mut state = 0x2545F4914F6CDD1Du64;
        let mut rng = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        let k = 7;
        for _ in 0..200 {
            let len = 30 + (rng() % 200) as usize;
            let read: Vec<u8> = (0..len)
                .map(|_| {
                    if rng() % 50 == 0 {
                        b'N'
                    } else {
                        b"ACGT"[(rng() % 4) as usize]
                    }
                })
                .collect();
            let from_fragments: usize = split_on_invalid(&read, k)
                .iter()
                .map(|f| f.bases.len() - k + 1)
                .sum();
            let naive = read
                .windows(k)
                .filter(|w| w.iter().all(|&c| base_code(c).is_some()))
                .count();
            assert_eq!(from_fragments, naive);
        }
    }
}
