//! Matrix, label and model files, standardization and synthetic data.
//!
//! In memory, data matrices hold one sample per column (N×K). On disk they
//! hold one sample per row.
//!
//! Binary matrix layout (`NTB1`), all integers and floats little-endian:
//!
//! ```text
//! "NTB1" | rows: u64 | cols: u64 | rows·cols f64, row-major
//! ```
//!
//! Model layout (`NTM1`):
//!
//! ```text
//! "NTM1" | M: u64 | N: u64 | C_d: u64 | C_s: u64 | identity: u8
//!        | A: M·N f64 row-major | τ_1..τ_Cd | ν_1..ν_Cs
//!        | len: u64 | hyperparameters as UTF-8 JSON
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_finite, Error, Result};
use crate::learning::{HyperParams, TransformModel};
use crate::measures::{column, DiscriminationParams};
use crate::metrics::Partition;

const MATRIX_MAGIC: &[u8; 4] = b"NTB1";
const MODEL_MAGIC: &[u8; 4] = b"NTM1";
const SYNTH_MAX_DRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Binary,
}

impl MatrixFormat {
    /// `.csv` files are CSV; anything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => MatrixFormat::Csv,
            _ => MatrixFormat::Binary,
        }
    }
}

fn from_sample_rows(rows: usize, cols: usize, values: &[f64]) -> DMatrix<f64> {
    // Row-major K×N on disk is column-major N×K in memory.
    DMatrix::from_column_slice(cols, rows, values)
}

fn check_nonempty(x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::Data("matrix is empty".into()));
    }
    Ok(())
}

/// Reads a data matrix; the result is N×K.
pub fn load_matrix(path: &Path, format: MatrixFormat) -> Result<DMatrix<f64>> {
    let x = match format {
        MatrixFormat::Csv => read_csv(path)?,
        MatrixFormat::Binary => read_ntb1(&fs::read(path)?)?,
    };
    check_nonempty(&x)?;
    check_finite("data matrix", x.as_slice())?;
    Ok(x)
}

fn read_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Data(format!("{}: line {line}: {e}", path.display()))
        })?;
        let line = record.position().map_or(rows as u64 + 1, |p| p.line());
        if *width.get_or_insert(record.len()) != record.len() {
            return Err(Error::Data(format!(
                "{}: line {line}: expected {} fields, found {}",
                path.display(),
                width.unwrap_or(0),
                record.len()
            )));
        }
        for field in &record {
            let v: f64 = field.parse().map_err(|_| {
                Error::Data(format!(
                    "{}: line {line}: not a number: {field:?}",
                    path.display()
                ))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    Ok(from_sample_rows(rows, width.unwrap_or(0), &values))
}

/// Little-endian reader over a byte buffer that reports offsets on failure.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Data(format!(
                "truncated file at offset {}: expected {n} bytes of {what}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let found = self.take(4, "magic")?;
        if found != magic {
            return Err(Error::Data(format!(
                "bad magic at offset 0: expected {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(found)
            )));
        }
        Ok(())
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let offset = self.pos;
        let v = self.u64(what)?;
        usize::try_from(v)
            .map_err(|_| Error::Data(format!("{what} {v} at offset {offset} is too large")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::Data(format!("{what} size overflows at offset {}", self.pos)))?;
        let b = self.take(bytes, what)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Data(format!(
                "{} trailing bytes at offset {}",
                self.bytes.len() - self.pos,
                self.pos
            )));
        }
        Ok(())
    }
}

fn read_ntb1(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let mut cur = Cursor::new(bytes);
    cur.magic(MATRIX_MAGIC)?;
    let rows = cur.count("row count")?;
    let cols = cur.count("column count")?;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Data("matrix size overflows at offset 4".into()))?;
    let values = cur.f64s(n, "matrix values")?;
    cur.finish()?;
    Ok(from_sample_rows(rows, cols, &values))
}

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Writes an N×K matrix as K sample rows.
pub fn save_matrix(x: &DMatrix<f64>, path: &Path, format: MatrixFormat) -> Result<()> {
    check_nonempty(x)?;
    match format {
        MatrixFormat::Binary => {
            let mut out = Vec::with_capacity(20 + 8 * x.len());
            out.extend_from_slice(MATRIX_MAGIC);
            put_u64(&mut out, x.ncols());
            put_u64(&mut out, x.nrows());
            put_f64s(&mut out, x.as_slice());
            fs::write(path, out)?;
        }
        MatrixFormat::Csv => {
            let mut w = BufWriter::new(fs::File::create(path)?);
            for i in 0..x.ncols() {
                let line: Vec<String> = column(x, i).iter().map(|v| format!("{v:?}")).collect();
                writeln!(w, "{}", line.join(","))?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Reads one integer label per line; blank lines are skipped.
pub fn load_labels(path: &Path) -> Result<Partition> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut labels = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        labels.push(t.parse().map_err(|_| {
            Error::Data(format!(
                "{}: line {}: not a label: {t:?}",
                path.display(),
                i + 1
            ))
        })?);
    }
    Partition::new(labels)
}

pub fn save_labels(labels: &[usize], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for l in labels {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

/// Shifts each sample to zero mean and scales it to unit population
/// variance.
pub fn standardize(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_nonempty(x)?;
    let n = x.nrows() as f64;
    let mut out = x.clone();
    for (i, mut col) in out.column_iter_mut().enumerate() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let scale = col.amax();
        let std = var.sqrt();
        if !(std > 1e-12 * scale) {
            return Err(Error::Data(format!("sample {i} has zero variance")));
        }
        col.apply(|v| *v = (*v - mean) / std);
    }
    Ok(out)
}

/// Draws `c` Gaussian clusters in `n` dimensions. Centroids are
/// `10·N(0, I)` and are redrawn until every pair is at least `10·spread`
/// apart; points are `centroid + spread·N(0, I)`. Samples are grouped by
/// cluster and labelled `1..=c`.
pub fn synth_clusters(
    c: usize,
    n: usize,
    per_cluster: usize,
    spread: f64,
    seed: u64,
) -> Result<(DMatrix<f64>, Partition)> {
    if c == 0 || n == 0 || per_cluster == 0 {
        return Err(Error::Config(
            "clusters, dimension and cluster size must be positive".into(),
        ));
    }
    if !(spread.is_finite() && spread > 0.0) {
        return Err(Error::Config(format!(
            "spread must be positive, got {spread}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = None;
    for _ in 0..SYNTH_MAX_DRAWS {
        let draw = DMatrix::from_fn(n, c, |_, _| 10.0 * rng.sample::<f64, _>(StandardNormal));
        let separated = (0..c)
            .all(|i| (i + 1..c).all(|j| (draw.column(i) - draw.column(j)).norm() >= 10.0 * spread));
        if separated {
            centroids = Some(draw);
            break;
        }
    }
    let centroids = centroids.ok_or_else(|| {
        Error::Config(format!(
            "no centroid draw met the separation {} in {SYNTH_MAX_DRAWS} tries",
            10.0 * spread
        ))
    })?;
    let mut x = DMatrix::zeros(n, c * per_cluster);
    let mut labels = Vec::with_capacity(c * per_cluster);
    for k in 0..c {
        for p in 0..per_cluster {
            let j = k * per_cluster + p;
            for r in 0..n {
                x[(r, j)] = centroids[(r, k)] + spread * rng.sample::<f64, _>(StandardNormal);
            }
            labels.push(k + 1);
        }
    }
    Ok((x, Partition::new(labels)?))
}

/// A model plus the hyperparameters it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: TransformModel,
    pub hyper: HyperParams,
}

pub fn encode_model(model: &TransformModel, hyper: &HyperParams) -> Result<Vec<u8>> {
    model.validate()?;
    let (m, n) = (model.output_dim(), model.input_dim());
    let params = &model.params;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    for v in [m, n, params.n_dissimilar(), params.n_similar()] {
        put_u64(&mut out, v);
    }
    out.push(model.identity_mode as u8);
    put_f64s(&mut out, model.a.transpose().as_slice());
    for v in params.taus.iter().chain(&params.nus) {
        put_f64s(&mut out, v);
    }
    let json = serde_json::to_vec(hyper).map_err(|e| Error::Data(e.to_string()))?;
    put_u64(&mut out, json.len());
    out.extend_from_slice(&json);
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelFile> {
    let mut cur = Cursor::new(bytes);
    cur.magic(MODEL_MAGIC)?;
    let m = cur.count("M")?;
    let n = cur.count("N")?;
    let c_d = cur.count("C_d")?;
    let c_s = cur.count("C_s")?;
    if m == 0 || n == 0 || c_d == 0 || c_s == 0 {
        return Err(Error::Data(format!(
            "zero dimension in model header (M={m}, N={n}, C_d={c_d}, C_s={c_s})"
        )));
    }
    let flag_at = cur.pos;
    let identity_mode = match cur.take(1, "identity flag")?[0] {
        0 => false,
        1 => true,
        b => {
            return Err(Error::Data(format!(
                "identity flag {b} at offset {flag_at}"
            )))
        }
    };
    if identity_mode && m != n {
        return Err(Error::Data(format!("identity model with M={m} != N={n}")));
    }
    let a_len = m
        .checked_mul(n)
        .ok_or_else(|| Error::Data("map size overflows".into()))?;
    let a = DMatrix::from_row_slice(m, n, &cur.f64s(a_len, "linear map")?);
    let mut vectors = |count: usize, what: &str| -> Result<Vec<Vec<f64>>> {
        (0..count).map(|_| cur.f64s(m, what)).collect()
    };
    let taus = vectors(c_d, "dissimilarity vectors")?;
    let nus = vectors(c_s, "similarity vectors")?;
    let json_len = cur.count("config length")?;
    let json_at = cur.pos;
    let json = cur.take(json_len, "config")?;
    cur.finish()?;
    let hyper: HyperParams = serde_json::from_slice(json)
        .map_err(|e| Error::Data(format!("config at offset {json_at}: {e}")))?;
    let model = TransformModel {
        a,
        params: DiscriminationParams::new(taus, nus)?,
        identity_mode,
    };
    model
        .validate()
        .map_err(|e| Error::Data(format!("invalid model: {e}")))?;
    Ok(ModelFile { model, hyper })
}

pub fn save_model(model: &TransformModel, hyper: &HyperParams, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model, hyper)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    decode_model(&fs::read(path)?)
}
