//! Document model and sharded JSON-lines corpus I/O.
//!
//! A corpus on disk is a directory of shards (`shard-00000.jsonl`, optionally
//! gzip-compressed with a `.gz` suffix) plus a `manifest.json` recording the
//! per-shard document counts, sizes and XXH64 checksums of the raw shard
//! bytes. Readers stream line by line, so memory is bounded by the largest
//! single document.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::{Checksum, CHECKSUM_ALGORITHM};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// One corpus unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, source: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            source: source.into(),
            url: None,
            meta: BTreeMap::new(),
        }
    }
}

/// Source tag given to JSON-lines records without a `source` field.
pub const UNKNOWN_SOURCE: &str = "unknown";

#[derive(Deserialize)]
struct RawDocument {
    id: Option<String>,
    text: Option<String>,
    source: Option<String>,
    url: Option<String>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// One JSON object per line.
    Jsonl,
    /// One document per non-empty line; ids are `<file name>:<line>`.
    Plain,
}

impl CorpusFormat {
    /// Guess from the file name, ignoring a trailing `.gz`.
    pub fn from_path(path: &Path) -> CorpusFormat {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let name = name.strip_suffix(".gz").unwrap_or(name);
        if name.ends_with(".txt") {
            CorpusFormat::Plain
        } else {
            CorpusFormat::Jsonl
        }
    }
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Streaming reader over a single corpus file.
pub struct CorpusReader {
    path: PathBuf,
    format: CorpusFormat,
    reader: Box<dyn BufRead + Send>,
    line_no: u64,
    offset: u64,
    buf: Vec<u8>,
    stem: String,
    done: bool,
}

/// Open one file as a stream of documents.
pub fn read_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<CorpusReader> {
    let path = path.as_ref().to_path_buf();
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let reader: Box<dyn BufRead + Send> = if is_gz(&path) {
        Box::new(BufReader::new(MultiGzDecoder::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    let stem = path
        .file_name()
        .and_then(|n| n.to_str())
        .map(|n| n.strip_suffix(".gz").unwrap_or(n).to_string())
        .unwrap_or_default();
    Ok(CorpusReader {
        path,
        format,
        reader,
        line_no: 0,
        offset: 0,
        buf: Vec::new(),
        stem,
        done: false,
    })
}

impl CorpusReader {
    fn next_line(&mut self) -> Option<Result<(u64, String)>> {
        loop {
            self.buf.clear();
            let n = match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(n) => n,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            if n == 0 {
                return None;
            }
            self.line_no += 1;
            let start = self.offset;
            self.offset += n as u64;
            let mut bytes = &self.buf[..];
            if bytes.last() == Some(&b'\n') {
                bytes = &bytes[..bytes.len() - 1];
            }
            if bytes.last() == Some(&b'\r') {
                bytes = &bytes[..bytes.len() - 1];
            }
            let line = match std::str::from_utf8(bytes) {
                Ok(s) => s,
                Err(e) => {
                    return Some(Err(Error::InvalidUtf8 {
                        path: self.path.clone(),
                        offset: start + e.valid_up_to() as u64,
                    }))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(Ok((self.line_no, line.to_string())));
        }
    }

    fn parse_jsonl(&self, line_no: u64, line: &str) -> Result<Document> {
        let raw: RawDocument = serde_json::from_str(line).map_err(|e| Error::Malformed {
            path: self.path.clone(),
            line: line_no,
            message: e.to_string(),
        })?;
        let missing = |field| Error::MissingField {
            path: self.path.clone(),
            field,
            line: line_no,
        };
        let id = raw.id.ok_or_else(|| missing("id"))?;
        let text = raw.text.ok_or_else(|| missing("text"))?;
        if id.is_empty() {
            return Err(Error::Malformed {
                path: self.path.clone(),
                line: line_no,
                message: "empty id".into(),
            });
        }
        let source = match raw.source {
            Some(s) if !s.is_empty() => s,
            _ => UNKNOWN_SOURCE.to_string(),
        };
        Ok(Document {
            id,
            text,
            source,
            url: raw.url,
            meta: raw.meta,
        })
    }
}

impl Iterator for CorpusReader {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = match self.next_line()? {
            Ok((line_no, line)) => match self.format {
                CorpusFormat::Jsonl => self.parse_jsonl(line_no, &line),
                CorpusFormat::Plain => Ok(Document::new(
                    format!("{}:{}", self.stem, line_no),
                    line,
                    "plain",
                )),
            },
            Err(e) => Err(e),
        };
        if item.is_err() {
            self.done = true;
        }
        Some(item)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardEntry {
    /// File name relative to the manifest directory.
    pub path: String,
    pub documents: u64,
    pub bytes: u64,
    /// Hex-encoded checksum of the raw (possibly compressed) shard bytes.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub version: u32,
    pub checksum_algorithm: String,
    pub shards: Vec<ShardEntry>,
    pub total_documents: u64,
    pub total_bytes: u64,
}

impl ShardManifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<ShardManifest> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Recompute every shard checksum and compare against the manifest.
    pub fn verify(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mut docs = 0;
        let mut bytes = 0;
        for shard in &self.shards {
            let path = dir.join(&shard.path);
            let mut file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            let mut sum = Checksum::new();
            let mut buf = [0u8; 64 * 1024];
            loop {
                let n = file.read(&mut buf).map_err(|e| Error::io(&path, e))?;
                if n == 0 {
                    break;
                }
                sum.update(&buf[..n]);
            }
            let expected = u64::from_str_radix(&shard.checksum, 16)
                .map_err(|_| Error::Invariant(format!("bad checksum string {}", shard.checksum)))?;
            if sum.finish() != expected {
                return Err(Error::ChecksumMismatch {
                    path,
                    expected,
                    actual: sum.finish(),
                });
            }
            docs += shard.documents;
            bytes += shard.bytes;
        }
        if docs != self.total_documents || bytes != self.total_bytes {
            return Err(Error::Invariant("manifest totals do not match shards".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WriteOptions {
    pub shard_size: usize,
    pub compress: bool,
}

impl Default for WriteOptions {
    fn default() -> Self {
        WriteOptions {
            shard_size: 10_000,
            compress: false,
        }
    }
}

struct HashingWriter<W> {
    inner: W,
    sum: Checksum,
    bytes: u64,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.sum.update(&buf[..n]);
        self.bytes += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

enum ShardSink {
    Plain(HashingWriter<BufWriter<File>>),
    Gz(GzEncoder<HashingWriter<BufWriter<File>>>),
}

impl ShardSink {
    fn writer(&mut self) -> &mut dyn Write {
        match self {
            ShardSink::Plain(w) => w,
            ShardSink::Gz(w) => w,
        }
    }

    fn finish(self) -> io::Result<(u64, u64)> {
        let mut inner = match self {
            ShardSink::Plain(w) => w,
            ShardSink::Gz(w) => w.finish()?,
        };
        inner.flush()?;
        Ok((inner.bytes, inner.sum.finish()))
    }
}

struct OpenShard {
    name: String,
    path: PathBuf,
    sink: ShardSink,
    documents: u64,
}

/// Write documents into shards of at most `shard_size` documents.
pub fn write_corpus(
    docs: impl IntoIterator<Item = Document>,
    dir: impl AsRef<Path>,
    opts: WriteOptions,
) -> Result<ShardManifest> {
    try_write_corpus(docs.into_iter().map(Ok), dir, opts)
}

/// Like [`write_corpus`] but stops at the first upstream error.
pub fn try_write_corpus(
    docs: impl IntoIterator<Item = Result<Document>>,
    dir: impl AsRef<Path>,
    opts: WriteOptions,
) -> Result<ShardManifest> {
    if opts.shard_size == 0 {
        return Err(Error::invalid("shard_size must be positive"));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut shards = Vec::new();
    let mut current: Option<OpenShard> = None;
    let mut line = Vec::new();

    for doc in docs {
        let doc = doc?;
        if current.as_ref().is_some_and(|s| s.documents as usize >= opts.shard_size) {
            shards.push(close_shard(current.take().unwrap())?);
        }
        if current.is_none() {
            current = Some(open_shard(dir, shards.len(), opts.compress)?);
        }
        let shard = current.as_mut().unwrap();
        line.clear();
        serde_json::to_writer(&mut line, &doc)?;
        line.push(b'\n');
        shard
            .sink
            .writer()
            .write_all(&line)
            .map_err(|e| Error::io(&shard.path, e))?;
        shard.documents += 1;
    }
    if let Some(shard) = current.take() {
        shards.push(close_shard(shard)?);
    }

    let manifest = ShardManifest {
        version: MANIFEST_VERSION,
        checksum_algorithm: CHECKSUM_ALGORITHM.to_string(),
        total_documents: shards.iter().map(|s| s.documents).sum(),
        total_bytes: shards.iter().map(|s| s.bytes).sum(),
        shards,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn open_shard(dir: &Path, index: usize, compress: bool) -> Result<OpenShard> {
    let name = if compress {
        format!("shard-{index:05}.jsonl.gz")
    } else {
        format!("shard-{index:05}.jsonl")
    };
    let path = dir.join(&name);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let inner = HashingWriter {
        inner: BufWriter::new(file),
        sum: Checksum::new(),
        bytes: 0,
    };
    let sink = if compress {
        // GzEncoder leaves mtime at zero, so output is reproducible.
        ShardSink::Gz(GzEncoder::new(inner, Compression::default()))
    } else {
        ShardSink::Plain(inner)
    };
    Ok(OpenShard {
        name,
        path,
        sink,
        documents: 0,
    })
}

fn close_shard(shard: OpenShard) -> Result<ShardEntry> {
    let (bytes, checksum) = shard.sink.finish().map_err(|e| Error::io(&shard.path, e))?;
    Ok(ShardEntry {
        path: shard.name,
        documents: shard.documents,
        bytes,
        checksum: format!("{checksum:016x}"),
    })
}

/// Stream every document under `path`.
///
/// A directory with a manifest is read shard by shard in manifest order; a
/// directory without one yields every `*.jsonl`, `*.jsonl.gz`, `*.txt` file in
/// name order; a file is read according to its extension.
pub fn open_documents(path: impl AsRef<Path>) -> Result<Box<dyn Iterator<Item = Result<Document>> + Send>> {
    let path = path.as_ref();
    let files: Vec<PathBuf> = if path.is_dir() {
        if path.join(MANIFEST_FILE).exists() {
            let manifest = ShardManifest::load(path)?;
            manifest.shards.iter().map(|s| path.join(&s.path)).collect()
        } else {
            let mut files: Vec<PathBuf> = fs::read_dir(path)
                .map_err(|e| Error::io(path, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                    let name = name.strip_suffix(".gz").unwrap_or(name);
                    p.is_file() && (name.ends_with(".jsonl") || name.ends_with(".txt"))
                })
                .collect();
            files.sort();
            files
        }
    } else {
        vec![path.to_path_buf()]
    };
    let mut readers = Vec::with_capacity(files.len());
    for f in files {
        let format = CorpusFormat::from_path(&f);
        readers.push(read_corpus(&f, format)?);
    }
    Ok(Box::new(readers.into_iter().flatten()))
}

/// Read everything under `path` into memory.
pub fn load_documents(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    open_documents(path)?.collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Kept,
    Rejected,
}

/// Result of running one stage on one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub doc_id: String,
    pub stage: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub reason: String,
    #[serde(default)]
    pub scores: BTreeMap<String, f64>,
}

impl FilterOutcome {
    pub fn kept(doc_id: impl Into<String>, stage: impl Into<String>) -> Self {
        FilterOutcome {
            doc_id: doc_id.into(),
            stage: stage.into(),
            verdict: Verdict::Kept,
            reason: String::new(),
            scores: BTreeMap::new(),
        }
    }

    pub fn rejected(doc_id: impl Into<String>, stage: impl Into<String>, reason: impl Into<String>) -> Self {
        let reason = reason.into();
        assert!(!reason.is_empty(), "rejections carry a reason");
        FilterOutcome {
            doc_id: doc_id.into(),
            stage: stage.into(),
            verdict: Verdict::Rejected,
            reason,
            scores: BTreeMap::new(),
        }
    }

    /// Attach a score; non-finite values are not recorded.
    pub fn with_score(mut self, name: &str, value: f64) -> Self {
        if value.is_finite() {
            self.scores.insert(name.to_string(), value);
        }
        self
    }

    pub fn is_kept(&self) -> bool {
        self.verdict == Verdict::Kept
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub kept: u64,
    pub rejected: BTreeMap<String, u64>,
}

impl StageCounts {
    pub fn total(&self) -> u64 {
        self.kept + self.rejected.values().sum::<u64>()
    }

    pub fn rejected_total(&self) -> u64 {
        self.rejected.values().sum()
    }
}

/// Per-stage kept/rejected-by-reason counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub stages: BTreeMap<String, StageCounts>,
}

impl StageReport {
    pub fn add(&mut self, outcome: &FilterOutcome) {
        let counts = self.stages.entry(outcome.stage.clone()).or_default();
        match outcome.verdict {
            Verdict::Kept => counts.kept += 1,
            Verdict::Rejected => *counts.rejected.entry(outcome.reason.clone()).or_default() += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.stages.values().map(StageCounts::total).sum()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_vec_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

pub fn stage_report<'a>(outcomes: impl IntoIterator<Item = &'a FilterOutcome>) -> StageReport {
    let mut report = StageReport::default();
    for o in outcomes {
        report.add(o);
    }
    report
}

/// Write outcomes as JSON lines.
pub fn write_outcomes<'a>(
    outcomes: impl IntoIterator<Item = &'a FilterOutcome>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for o in outcomes {
        serde_json::to_writer(&mut w, o)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
