//! Binary and CSV file formats.
//!
//! Binary files are little-endian: a four-byte magic, a `u32` version, a
//! fixed header, then the payload. Every loader checks the total length
//! against the header before decoding and validates the decoded value.
//! CSV floats are written with 17 significant digits, enough to restore
//! every `f64` exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::mining::{NegativeFrequencyMatrix, SkipReport, TripletSet};
use crate::model::{Dense, ModelParams};
use crate::train::LossHistory;
use crate::types::{EmbeddingSet, ExtremePolicy, Triplet};

pub const DATASET_MAGIC: [u8; 4] = *b"TMDS";
pub const MODEL_MAGIC: [u8; 4] = *b"TMMP";
pub const TRIPLETS_MAGIC: [u8; 4] = *b"TMTS";
pub const MATRIX_MAGIC: [u8; 4] = *b"TMMX";
pub const VERSION: u32 = 1;

/// 17 significant digits in scientific notation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

/// Cursor over a binary file with offset-carrying errors.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(format_err(
                self.buf.len(),
                format!("truncated: expected at least {} bytes, found {}", self.pos + n, self.buf.len()),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn header(&mut self, magic: [u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(format_err(
                0,
                format!(
                    "bad magic: expected {:?}, found {:?}",
                    String::from_utf8_lossy(&magic),
                    String::from_utf8_lossy(got)
                ),
            ));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(format_err(4, format!("unsupported version {version}, expected {VERSION}")));
        }
        Ok(())
    }

    /// Checks that the file is exactly `total` bytes long.
    fn expect_len(&self, total: Option<usize>) -> Result<()> {
        let actual = self.buf.len();
        match total {
            Some(t) if t == actual => Ok(()),
            Some(t) if t > actual => Err(format_err(
                actual,
                format!("truncated payload: expected {t} bytes, found {actual}"),
            )),
            Some(t) => Err(format_err(t, format!("trailing data: expected {t} bytes, found {actual}"))),
            None => Err(format_err(self.pos, "header sizes overflow")),
        }
    }
}

fn to_usize(x: u64, offset: usize) -> Result<usize> {
    usize::try_from(x).map_err(|_| format_err(offset, format!("size {x} does not fit in memory")))
}

fn invalid(offset: usize, e: Error) -> Error {
    match e {
        Error::Usage(m) => format_err(offset, m),
        other => other,
    }
}

// ---------------------------------------------------------------- dataset

/// Encodes `set` as a `TMDS` file: header `N u64, d u32, c u32`, then the
/// row-major `f64` vectors and `N` `u32` labels.
pub fn encode_dataset(set: &EmbeddingSet) -> Vec<u8> {
    let (n, d) = (set.len(), set.dim());
    let mut out = Vec::with_capacity(24 + 8 * n * d + 4 * n);
    out.extend_from_slice(&DATASET_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(set.class_count() as u32).to_le_bytes());
    for x in set.vectors() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for &y in set.labels() {
        out.extend_from_slice(&(y as u32).to_le_bytes());
    }
    out
}

pub fn decode_dataset(buf: &[u8]) -> Result<EmbeddingSet> {
    let mut r = Reader::new(buf);
    r.header(DATASET_MAGIC)?;
    let n = to_usize(r.u64()?, 8)?;
    let d = r.u32()? as usize;
    let c = r.u32()? as usize;
    let header = r.pos;
    let total = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(8))
        .and_then(|x| x.checked_add(n.checked_mul(4)?))
        .and_then(|x| x.checked_add(header));
    r.expect_len(total)?;
    let values = r.f64s(n * d)?;
    let label_start = r.pos;
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = r.u32()? as usize;
        if y >= c {
            return Err(format_err(label_start + 4 * i, format!("label {y} of row {i} is not below class count {c}")));
        }
        labels.push(y);
    }
    let vectors = Array2::from_shape_vec((n, d), values).expect("shape");
    EmbeddingSet::new(vectors, labels, c).map_err(|e| invalid(header, e))
}

pub fn save_dataset(path: impl AsRef<Path>, set: &EmbeddingSet) -> Result<()> {
    write_file(path.as_ref(), &encode_dataset(set))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    decode_dataset(&read_file(path.as_ref())?)
}

// ------------------------------------------------------------------ model

/// Encodes `params` as a `TMMP` file: trunk layer count `u32`, classifier
/// flag `u32`, `(in, out)` as `u32` pairs per layer (classifier last), then
/// per layer the row-major `out x in` weights followed by the bias.
pub fn encode_model(params: &ModelParams) -> Vec<u8> {
    let layers: Vec<&Dense> = params.layers.iter().chain(&params.classifier).collect();
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    out.extend_from_slice(&u32::from(params.classifier.is_some()).to_le_bytes());
    for l in &layers {
        out.extend_from_slice(&(l.input_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(l.output_dim() as u32).to_le_bytes());
    }
    for t in params.tensors() {
        for x in t {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_model(buf: &[u8]) -> Result<ModelParams> {
    let mut r = Reader::new(buf);
    r.header(MODEL_MAGIC)?;
    let trunk = r.u32()? as usize;
    let flag_at = r.pos;
    let has_classifier = match r.u32()? {
        0 => false,
        1 => true,
        f => return Err(format_err(flag_at, format!("classifier flag must be 0 or 1, found {f}"))),
    };
    if trunk == 0 {
        return Err(format_err(8, "model has no layers"));
    }
    let count = trunk + usize::from(has_classifier);
    let mut dims = Vec::with_capacity(count);
    for _ in 0..count {
        dims.push((r.u32()? as usize, r.u32()? as usize));
    }
    let header = r.pos;
    let total = dims
        .iter()
        .try_fold(header, |acc, &(i, o)| acc.checked_add(o.checked_mul(i)?.checked_add(o)?.checked_mul(8)?));
    r.expect_len(total)?;
    let mut dense = dims
        .into_iter()
        .map(|(i, o)| {
            let w = r.f64s(i * o)?;
            let b = r.f64s(o)?;
            Ok(Dense {
                weights: Array2::from_shape_vec((o, i), w).expect("shape"),
                bias: Array1::from(b),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let classifier = if has_classifier { dense.pop() } else { None };
    let params = ModelParams { layers: dense, classifier };
    params.validate().map_err(|e| invalid(header, e))?;
    Ok(params)
}

pub fn save_model(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    write_file(path.as_ref(), &encode_model(params))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    decode_model(&read_file(path.as_ref())?)
}

// --------------------------------------------------------------- triplets

fn policy_code(p: ExtremePolicy) -> u32 {
    ExtremePolicy::ALL.iter().position(|&q| q == p).expect("listed") as u32
}

fn policy_from_code(code: u32, offset: usize) -> Result<ExtremePolicy> {
    ExtremePolicy::ALL
        .get(code as usize)
        .copied()
        .ok_or_else(|| format_err(offset, format!("unknown policy code {code}")))
}

/// Encodes `triplets` as a `TMTS` file: source policy `u32`, seed `u64`,
/// count `u64`, then per triplet three `u64` indices and a `u32` policy.
/// Policy codes follow [`ExtremePolicy::ALL`].
pub fn encode_triplets(triplets: &TripletSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + 28 * triplets.len());
    out.extend_from_slice(&TRIPLETS_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&policy_code(triplets.source_policy).to_le_bytes());
    out.extend_from_slice(&triplets.seed.to_le_bytes());
    out.extend_from_slice(&(triplets.len() as u64).to_le_bytes());
    for t in &triplets.triplets {
        for i in [t.anchor, t.positive, t.negative] {
            out.extend_from_slice(&(i as u64).to_le_bytes());
        }
        out.extend_from_slice(&policy_code(t.policy).to_le_bytes());
    }
    out
}

/// Decodes a `TMTS` file and validates every triplet against `labels`.
pub fn decode_triplets(buf: &[u8], labels: &[usize]) -> Result<TripletSet> {
    let mut r = Reader::new(buf);
    r.header(TRIPLETS_MAGIC)?;
    let source_policy = policy_from_code(r.u32()?, 8)?;
    let seed = r.u64()?;
    let count = to_usize(r.u64()?, 20)?;
    let total = count.checked_mul(28).and_then(|x| x.checked_add(r.pos));
    r.expect_len(total)?;
    let mut triplets = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.pos;
        let anchor = to_usize(r.u64()?, at)?;
        let positive = to_usize(r.u64()?, at + 8)?;
        let negative = to_usize(r.u64()?, at + 16)?;
        let policy = policy_from_code(r.u32()?, at + 24)?;
        let t = Triplet { anchor, positive, negative, policy };
        t.validate(labels).map_err(|e| invalid(at, e))?;
        triplets.push(t);
    }
    Ok(TripletSet { triplets, source_policy, seed })
}

pub fn save_triplets(path: impl AsRef<Path>, triplets: &TripletSet) -> Result<()> {
    write_file(path.as_ref(), &encode_triplets(triplets))
}

pub fn load_triplets(path: impl AsRef<Path>, labels: &[usize]) -> Result<TripletSet> {
    decode_triplets(&read_file(path.as_ref())?, labels)
}

// ----------------------------------------------------------------- matrix

/// Encodes a dense matrix as a `TMMX` file: rows `u64`, cols `u64`, then
/// row-major `f64` values.
pub fn encode_matrix(m: &Array2<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * m.len());
    out.extend_from_slice(&MATRIX_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for x in m {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_matrix(buf: &[u8]) -> Result<Array2<f64>> {
    let mut r = Reader::new(buf);
    r.header(MATRIX_MAGIC)?;
    let rows = to_usize(r.u64()?, 8)?;
    let cols = to_usize(r.u64()?, 16)?;
    let total = rows
        .checked_mul(cols)
        .and_then(|x| x.checked_mul(8))
        .and_then(|x| x.checked_add(r.pos));
    r.expect_len(total)?;
    Ok(Array2::from_shape_vec((rows, cols), r.f64s(rows * cols)?).expect("shape"))
}

pub fn save_matrix(path: impl AsRef<Path>, m: &Array2<f64>) -> Result<()> {
    write_file(path.as_ref(), &encode_matrix(m))
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    decode_matrix(&read_file(path.as_ref())?)
}

// -------------------------------------------------------------------- csv

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Csv {
            line: 0,
            message: format!("{kind:?}"),
        },
    }
}

fn write_records<I, R>(path: &Path, header: &[String], records: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for rec in records {
        w.write_record(rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parsed CSV rows with their 1-based line numbers.
struct CsvRows {
    rows: Vec<(u64, csv::StringRecord)>,
}

fn read_records(path: &Path, expected_header: &[String]) -> Result<CsvRows> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(f);
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(expected_header.iter().map(String::as_str)) {
        return Err(Error::Csv {
            line: 1,
            message: format!("expected header {:?}, found {:?}", expected_header.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Csv { line, message: e.to_string() }
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec));
    }
    Ok(CsvRows { rows })
}

fn parse_field<T: std::str::FromStr>(line: u64, rec: &csv::StringRecord, col: usize, name: &str) -> Result<T> {
    let raw = rec.get(col).unwrap_or("");
    raw.trim().parse().map_err(|_| Error::Csv {
        line,
        message: format!("column {name}: cannot parse {raw:?}"),
    })
}

fn csv_invalid(line: u64, e: Error) -> Error {
    match e {
        Error::Usage(message) => Error::Csv { line, message },
        other => other,
    }
}

fn dataset_header(d: usize) -> Vec<String> {
    std::iter::once("label".to_string())
        .chain((0..d).map(|j| format!("f{j}")))
        .collect()
}

/// Writes `label,f0,...,f{d-1}`.
pub fn save_dataset_csv(path: impl AsRef<Path>, set: &EmbeddingSet) -> Result<()> {
    let rows = (0..set.len()).map(|i| {
        std::iter::once(set.label(i).to_string()).chain(set.row(i).iter().map(|&x| fmt_f64(x))).collect::<Vec<_>>()
    });
    write_records(path.as_ref(), &dataset_header(set.dim()), rows)
}

/// Reads `label,f0,...`; the class count is the largest label plus one.
pub fn load_dataset_csv(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let header_len = csv::ReaderBuilder::new()
        .from_reader(f)
        .headers()
        .map_err(|e| csv_err(path, e))?
        .len();
    let d = header_len.saturating_sub(1);
    let CsvRows { rows } = read_records(path, &dataset_header(d))?;
    if rows.is_empty() {
        return Err(Error::Csv { line: 2, message: "no data rows".into() });
    }
    let mut values = Vec::with_capacity(rows.len() * d);
    let mut labels = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        labels.push(parse_field::<usize>(*line, rec, 0, "label")?);
        for j in 0..d {
            values.push(parse_field::<f64>(*line, rec, j + 1, &format!("f{j}"))?);
        }
    }
    let c = labels.iter().max().map_or(0, |m| m + 1);
    let vectors = Array2::from_shape_vec((rows.len(), d), values).expect("shape");
    EmbeddingSet::new(vectors, labels, c).map_err(|e| csv_invalid(2, e))
}

const TRIPLET_HEADER: [&str; 4] = ["anchor", "positive", "negative", "policy"];

/// Writes `anchor,positive,negative,policy`.
pub fn save_triplets_csv(path: impl AsRef<Path>, triplets: &TripletSet) -> Result<()> {
    let header: Vec<String> = TRIPLET_HEADER.iter().map(|s| s.to_string()).collect();
    let rows = triplets.triplets.iter().map(|t| {
        [t.anchor.to_string(), t.positive.to_string(), t.negative.to_string(), t.policy.name().to_string()]
    });
    write_records(path.as_ref(), &header, rows)
}

/// Reads a triplet CSV and validates every row against `labels`. The file
/// does not carry the mining policy or seed: the source policy is the
/// common per-row policy when all rows agree and ASSORTED otherwise, and
/// the seed is `seed`.
pub fn load_triplets_csv(path: impl AsRef<Path>, labels: &[usize], seed: u64) -> Result<TripletSet> {
    let header: Vec<String> = TRIPLET_HEADER.iter().map(|s| s.to_string()).collect();
    let CsvRows { rows } = read_records(path.as_ref(), &header)?;
    let mut triplets = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        let t = Triplet {
            anchor: parse_field(*line, rec, 0, "anchor")?,
            positive: parse_field(*line, rec, 1, "positive")?,
            negative: parse_field(*line, rec, 2, "negative")?,
            policy: parse_field(*line, rec, 3, "policy")?,
        };
        t.validate(labels).map_err(|e| csv_invalid(*line, e))?;
        triplets.push(t);
    }
    let source_policy = match triplets.first() {
        Some(first) if triplets.iter().all(|t| t.policy == first.policy) => first.policy,
        _ => ExtremePolicy::Assorted,
    };
    Ok(TripletSet { triplets, source_policy, seed })
}

fn matrix_header(cols: usize) -> Vec<String> {
    (0..cols).map(|j| format!("c{j}")).collect()
}

/// Writes a header `c0,...` and one line per row.
pub fn save_matrix_csv(path: impl AsRef<Path>, m: &Array2<f64>) -> Result<()> {
    let rows = m.rows().into_iter().map(|r| r.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>());
    write_records(path.as_ref(), &matrix_header(m.ncols()), rows)
}

pub fn load_matrix_csv(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let cols = csv::ReaderBuilder::new()
        .from_reader(f)
        .headers()
        .map_err(|e| csv_err(path, e))?
        .len();
    let CsvRows { rows } = read_records(path, &matrix_header(cols))?;
    let mut values = Vec::with_capacity(rows.len() * cols);
    for (line, rec) in &rows {
        for j in 0..cols {
            values.push(parse_field::<f64>(*line, rec, j, &format!("c{j}"))?);
        }
    }
    Ok(Array2::from_shape_vec((rows.len(), cols), values).expect("shape"))
}

/// Writes the anchor-class by negative-class counts with a leading
/// `anchor_class` column.
pub fn save_frequency_csv(path: impl AsRef<Path>, m: &NegativeFrequencyMatrix) -> Result<()> {
    let header: Vec<String> = std::iter::once("anchor_class".to_string())
        .chain((0..m.class_count()).map(|j| format!("neg{j}")))
        .collect();
    let rows = m
        .counts
        .iter()
        .enumerate()
        .map(|(i, row)| std::iter::once(i.to_string()).chain(row.iter().map(u64::to_string)).collect::<Vec<_>>());
    write_records(path.as_ref(), &header, rows)
}

/// Writes `metric,k,value` rows: one `recall` row per rank, then
/// `nn_accuracy` and `queries`.
pub fn save_eval_csv(path: impl AsRef<Path>, report: &EvalReport) -> Result<()> {
    let header = ["metric", "k", "value"].map(String::from);
    let mut rows: Vec<[String; 3]> = report
        .recall_at
        .iter()
        .map(|(k, v)| ["recall".into(), k.to_string(), fmt_f64(*v)])
        .collect();
    rows.push(["nn_accuracy".into(), "1".into(), fmt_f64(report.nn_accuracy)]);
    rows.push(["queries".into(), String::new(), report.query_count.to_string()]);
    write_records(path.as_ref(), &header, rows)
}

/// Writes `epoch,batch,loss`.
pub fn save_history_csv(path: impl AsRef<Path>, history: &LossHistory) -> Result<()> {
    let header = ["epoch", "batch", "loss"].map(String::from);
    let rows = history
        .entries
        .iter()
        .map(|e| [e.epoch.to_string(), e.batch.to_string(), fmt_f64(e.loss)]);
    write_records(path.as_ref(), &header, rows)
}

/// Writes `anchor,reason` for every skipped anchor.
pub fn save_skips_csv(path: impl AsRef<Path>, skips: &SkipReport) -> Result<()> {
    let header = ["anchor", "reason"].map(String::from);
    let rows = skips.skipped.iter().map(|(a, r)| [a.to_string(), r.name().to_string()]);
    write_records(path.as_ref(), &header, rows)
}

/// Writes any byte buffer, mapping failures to [`Error::Io`].
pub fn write_bytes(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
