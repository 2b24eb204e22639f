//! Persistence for the artifacts the pipeline passes between stages.
//!
//! Binary formats are little-endian and open with a four-byte magic plus a
//! `u32` format version:
//!
//! * `OHFV` — feature matrix: `n`, `d` as `u32`, then `n*d` values as `f32`,
//!   row-major.
//! * `OHSL` — hash model: `d`, `b` as `u32`, projection as `f64` row-major,
//!   then the bias vector.
//! * `OHSM` — similarity model: dimensions, kind and norm-exponent bytes,
//!   aggressiveness, update count, the `U` and `V` factors, then the target
//!   codebook state so a reloaded model keeps learning exactly where it
//!   stopped.
//! * `OHDB` — code database: packed code words, record ids, and an
//!   offset-indexed label table.
//!
//! Writers emit a canonical byte stream (fixed field order, no timestamps),
//! so write → read → write reproduces a file byte for byte. Text inputs (CSV
//! features, label lists) report failures with one-based line numbers;
//! binary readers report the byte offset that stopped them.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use nalgebra::{DMatrix, DVector};

use crate::code::BinaryCode;
use crate::error::{Error, Result};
use crate::eval::CheckpointRecord;
use crate::hash::HashModel;
use crate::learner::{NormExponent, SimilarityKind, SimilarityModel};
use crate::search::CodeDatabase;
use crate::target::TargetCodebook;

const MAGIC_FEATURES: &[u8; 4] = b"OHFV";
const MAGIC_HASH: &[u8; 4] = b"OHSL";
const MAGIC_SIMILARITY: &[u8; 4] = b"OHSM";
const MAGIC_DATABASE: &[u8; 4] = b"OHDB";
const FORMAT_VERSION: u32 = 1;

fn format_err(path: &Path, offset: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        offset: offset as u64,
        detail: detail.into(),
    }
}

fn parse_err(path: &Path, line: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        detail: detail.into(),
    }
}

/// Narrows a size to the `u32` the headers store.
fn header_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value)
        .map_err(|_| Error::InvalidConfig(format!("{what} {value} exceeds the format limit")))
}

/// Byte-slice reader that remembers where it is for error reporting.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Reader { buf, pos: 0, path }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len().saturating_sub(self.pos) < n {
            return Err(format_err(
                self.path,
                self.pos,
                format!("unexpected end of file while reading {what}"),
            ));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn magic(&mut self, expected: &[u8; 4], format_name: &str) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(format_err(
                self.path,
                0,
                format!("not a {format_name} file (bad magic)"),
            ));
        }
        let version = self.u32("format version")?;
        if version != FORMAT_VERSION {
            return Err(format_err(
                self.path,
                4,
                format!("unsupported {format_name} version {version}"),
            ));
        }
        Ok(())
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    /// Reads a `u32` header field that counts something.
    fn count(&mut self, what: &str) -> Result<usize> {
        Ok(self.u32(what)? as usize)
    }

    fn checked_len(&self, a: usize, b: usize, what: &str) -> Result<usize> {
        a.checked_mul(b)
            .ok_or_else(|| format_err(self.path, self.pos, format!("{what} size overflows")))
    }

    fn f64_block(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(self.checked_len(n, 8, what)?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn f32_block(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(self.checked_len(n, 4, what)?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn u64_block(&mut self, n: usize, what: &str) -> Result<Vec<u64>> {
        let bytes = self.take(self.checked_len(n, 8, what)?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn u32_block(&mut self, n: usize, what: &str) -> Result<Vec<u32>> {
        let bytes = self.take(self.checked_len(n, 4, what)?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(format_err(
                self.path,
                self.pos,
                format!("{} trailing bytes past end of payload", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Hash model (OHSL)
// ---------------------------------------------------------------------------

pub fn write_hash_model(path: impl AsRef<Path>, model: &HashModel) -> Result<()> {
    let path = path.as_ref();
    let d = model.input_dim();
    let b = model.bits();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC_HASH)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(header_u32(d, "input dimension")?)?;
    w.write_u32::<LittleEndian>(header_u32(b, "bit count")?)?;
    for r in 0..d {
        for c in 0..b {
            w.write_f64::<LittleEndian>(model.projection()[(r, c)])?;
        }
    }
    for i in 0..b {
        w.write_f64::<LittleEndian>(model.bias()[i])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_hash_model(path: impl AsRef<Path>) -> Result<HashModel> {
    let path = path.as_ref();
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf, path);
    r.magic(MAGIC_HASH, "hash model")?;
    let d = r.count("input dimension")?;
    let b = r.count("bit count")?;
    let cells = r.checked_len(d, b, "projection")?;
    let projection = r.f64_block(cells, "projection")?;
    let bias = r.f64_block(b, "bias")?;
    r.finish()?;
    HashModel::from_parts(
        DMatrix::from_row_slice(d, b, &projection),
        DVector::from_vec(bias),
    )
}

// ---------------------------------------------------------------------------
// Similarity model + codebook (OHSM)
// ---------------------------------------------------------------------------

pub fn write_similarity_model(
    path: impl AsRef<Path>,
    model: &SimilarityModel,
    codebook: &TargetCodebook,
) -> Result<()> {
    let path = path.as_ref();
    let (l, d, b) = (model.rows(), model.query_dim(), model.code_bits());
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC_SIMILARITY)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(header_u32(l, "row count")?)?;
    w.write_u32::<LittleEndian>(header_u32(d, "query dimension")?)?;
    w.write_u32::<LittleEndian>(header_u32(b, "bit count")?)?;
    w.write_u8(match model.kind() {
        SimilarityKind::Asymmetric => 0,
        SimilarityKind::Symmetric => 1,
    })?;
    w.write_u8(match model.norm_exponent() {
        NormExponent::One => 1,
        NormExponent::Two => 2,
    })?;
    w.write_f64::<LittleEndian>(model.aggressiveness())?;
    w.write_u64::<LittleEndian>(model.update_count())?;
    for r in 0..l {
        for c in 0..d {
            w.write_f64::<LittleEndian>(model.u()[(r, c)])?;
        }
    }
    for r in 0..l {
        for c in 0..b {
            w.write_f64::<LittleEndian>(model.v()[(r, c)])?;
        }
    }
    w.write_u32::<LittleEndian>(header_u32(codebook.len(), "code length")?)?;
    w.write_u32::<LittleEndian>(header_u32(codebook.order(), "Hadamard order")?)?;
    w.write_u64::<LittleEndian>(codebook.seed())?;
    w.write_u32::<LittleEndian>(codebook.attempt())?;
    w.write_u32::<LittleEndian>(header_u32(codebook.cursor(), "cursor")?)?;
    w.write_u32::<LittleEndian>(header_u32(codebook.num_classes(), "class count")?)?;
    for &col in codebook.columns() {
        w.write_u32::<LittleEndian>(col)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_similarity_model(
    path: impl AsRef<Path>,
) -> Result<(SimilarityModel, TargetCodebook)> {
    let path = path.as_ref();
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf, path);
    r.magic(MAGIC_SIMILARITY, "similarity model")?;
    let l = r.count("row count")?;
    let d = r.count("query dimension")?;
    let b = r.count("bit count")?;
    let kind = match r.u8("similarity kind")? {
        0 => SimilarityKind::Asymmetric,
        1 => SimilarityKind::Symmetric,
        k => {
            return Err(format_err(
                path,
                r.pos - 1,
                format!("unknown similarity kind {k}"),
            ))
        }
    };
    let exponent = match r.u8("norm exponent")? {
        1 => NormExponent::One,
        2 => NormExponent::Two,
        e => {
            return Err(format_err(path, r.pos - 1, format!("unknown norm exponent {e}")))
        }
    };
    let c = r.f64("aggressiveness")?;
    let update_count = r.u64("update count")?;
    let u_cells = r.checked_len(l, d, "U factor")?;
    let u = r.f64_block(u_cells, "U factor")?;
    let v_cells = r.checked_len(l, b, "V factor")?;
    let v = r.f64_block(v_cells, "V factor")?;
    let code_len = r.count("code length")?;
    let order = r.count("Hadamard order")?;
    let seed = r.u64("codebook seed")?;
    let attempt = r.u32("assignment attempt")?;
    let cursor = r.count("cursor")?;
    let num_classes = r.count("class count")?;
    let columns = r.u32_block(num_classes, "codebook columns")?;
    r.finish()?;

    let model = SimilarityModel::from_parts(
        DMatrix::from_row_slice(l, d, &u),
        DMatrix::from_row_slice(l, b, &v),
        c,
        update_count,
        kind,
        exponent,
    )?;
    let codebook = TargetCodebook::from_saved(code_len, order, seed, attempt, cursor, columns)?;
    if codebook.len() != model.rows() {
        return Err(Error::Incompatible(format!(
            "model has {} rows but codebook codes are {} bits",
            model.rows(),
            codebook.len()
        )));
    }
    Ok((model, codebook))
}

// ---------------------------------------------------------------------------
// Code database (OHDB)
// ---------------------------------------------------------------------------

pub fn write_database(path: impl AsRef<Path>, db: &CodeDatabase) -> Result<()> {
    let path = path.as_ref();
    let n = db.len();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC_DATABASE)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(header_u32(n, "record count")?)?;
    w.write_u32::<LittleEndian>(header_u32(db.bits(), "bit count")?)?;
    w.write_u32::<LittleEndian>(header_u32(
        BinaryCode::words_for(db.bits()),
        "words per code",
    )?)?;
    for &word in db.all_words() {
        w.write_u64::<LittleEndian>(word)?;
    }
    for &id in db.all_ids() {
        w.write_u32::<LittleEndian>(id)?;
    }
    let mut offset = 0usize;
    w.write_u32::<LittleEndian>(0)?;
    for pos in 0..n {
        offset += db.labels(pos).len();
        w.write_u32::<LittleEndian>(header_u32(offset, "label table offset")?)?;
    }
    for pos in 0..n {
        for &label in db.labels(pos) {
            w.write_u32::<LittleEndian>(label)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_database(path: impl AsRef<Path>) -> Result<CodeDatabase> {
    let path = path.as_ref();
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf, path);
    r.magic(MAGIC_DATABASE, "code database")?;
    let n = r.count("record count")?;
    let bits = r.count("bit count")?;
    let wpc = r.count("words per code")?;
    if wpc != BinaryCode::words_for(bits) {
        return Err(format_err(
            path,
            r.pos - 4,
            format!("{wpc} words per code disagrees with {bits}-bit codes"),
        ));
    }
    let word_count = r.checked_len(n, wpc, "code section")?;
    let words = r.u64_block(word_count, "code words")?;
    let ids = r.u32_block(n, "record ids")?;
    let offsets = r.u32_block(n + 1, "label offsets")?;
    if offsets.first() != Some(&0) {
        return Err(format_err(path, r.pos, "label offsets must start at 0"));
    }
    if offsets.windows(2).any(|w| w[1] < w[0]) {
        return Err(format_err(path, r.pos, "label offsets must be non-decreasing"));
    }
    let flat = r.u32_block(offsets[n] as usize, "label lists")?;
    r.finish()?;
    let labels = offsets
        .windows(2)
        .map(|w| flat[w[0] as usize..w[1] as usize].to_vec())
        .collect();
    CodeDatabase::from_parts(bits, words, ids, labels)
}

// ---------------------------------------------------------------------------
// Feature matrices (OHFV binary, CSV text)
// ---------------------------------------------------------------------------

pub fn write_features_ohfv(path: impl AsRef<Path>, features: &[DVector<f64>]) -> Result<()> {
    let path = path.as_ref();
    let dim = features.first().map_or(0, |x| x.len());
    if let Some(bad) = features.iter().find(|x| x.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC_FEATURES)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(header_u32(features.len(), "record count")?)?;
    w.write_u32::<LittleEndian>(header_u32(dim, "dimension")?)?;
    for x in features {
        for &v in x.iter() {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_features_ohfv(path: impl AsRef<Path>) -> Result<Vec<DVector<f64>>> {
    let path = path.as_ref();
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf, path);
    r.magic(MAGIC_FEATURES, "feature")?;
    let n = r.count("record count")?;
    let d = r.count("dimension")?;
    let cells = r.checked_len(n, d, "feature payload")?;
    let values = r.f32_block(cells, "feature values")?;
    r.finish()?;
    Ok(values
        .chunks_exact(d.max(1))
        .map(|row| DVector::from_iterator(d, row.iter().map(|&v| v as f64)))
        .take(n)
        .collect())
}

/// Reads CSV feature rows (headerless, one record per line).
pub fn read_features_csv(path: impl AsRef<Path>) -> Result<Vec<DVector<f64>>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => parse_err(path, 0, format!("{other:?}")),
        })?;
    let mut rows: Vec<DVector<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line()) as usize;
        let mut row = Vec::with_capacity(record.len());
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, line, format!("not a number: {field:?}")))?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    path,
                    line,
                    format!("row has {} fields, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(DVector::from_vec(row));
    }
    Ok(rows)
}

/// Reads a feature file, accepting either the binary format or CSV; the
/// binary magic decides.
pub fn read_features(path: impl AsRef<Path>) -> Result<Vec<DVector<f64>>> {
    let path = path.as_ref();
    let mut head = [0u8; 4];
    let mut got = 0;
    let mut f = File::open(path)?;
    while got < 4 {
        let k = f.read(&mut head[got..])?;
        if k == 0 {
            break;
        }
        got += k;
    }
    drop(f);
    if got == 4 && &head == MAGIC_FEATURES {
        read_features_ohfv(path)
    } else {
        read_features_csv(path)
    }
}

// ---------------------------------------------------------------------------
// Label lists
// ---------------------------------------------------------------------------

/// Writes one line per record: comma-separated class ids, empty line for an
/// unlabeled record.
pub fn write_labels(path: impl AsRef<Path>, labels: &[Vec<u32>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for set in labels {
        let line: Vec<String> = set.iter().map(|l| l.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<Vec<u32>>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut labels = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            labels.push(Vec::new());
            continue;
        }
        let mut set = Vec::new();
        for field in line.split(',') {
            let id: u32 = field.trim().parse().map_err(|_| {
                parse_err(path, i + 1, format!("not a class id: {:?}", field.trim()))
            })?;
            set.push(id);
        }
        labels.push(set);
    }
    Ok(labels)
}

// ---------------------------------------------------------------------------
// Evaluation timelines
// ---------------------------------------------------------------------------

pub fn write_timeline_jsonl(path: impl AsRef<Path>, records: &[CheckpointRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for record in records {
        let line = serde_json::to_string(record).map_err(std::io::Error::other)?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_timeline_jsonl(path: impl AsRef<Path>) -> Result<Vec<CheckpointRecord>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records
            .push(serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?);
    }
    Ok(records)
}

pub fn write_timeline_tsv(path: impl AsRef<Path>, records: &[CheckpointRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "checkpoint\tchunk\tmap\tcum_learn_ms\tper_chunk_ms")?;
    for r in records {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            r.checkpoint, r.chunk_index, r.map, r.cum_learn_ms, r.per_chunk_ms
        )?;
    }
    w.flush()?;
    Ok(())
}
