//! Reading samples, covariances and models; writing matrices and models back out.

use std::fmt::Write as _;
use std::path::Path;

use clap::ValueEnum;
use lvgm::gaussian::sample_covariance;
use lvgm::linalg::Matrix;
use lvgm::synth::SyntheticModel;
use lvgm::SampleCovariance;

use crate::error::{CliError, CliResult};

/// Sample size recorded for a model file read without `--n-samples`: the model's covariance is
/// a population quantity, so only default threshold rates (which shrink like `1/√n`) see it.
pub const POPULATION_N: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    /// One observation per row, comma separated
    CsvSamples,
    /// MatrixMarket coordinate file holding a covariance matrix
    MtxCovariance,
    /// Model document written by `generate`
    ModelJson,
}

#[derive(Debug, Clone, Default)]
pub struct ReadOptions {
    /// Skip one header line in CSV input.
    pub header: bool,
    /// Mean-center samples and divide by `n - 1`.
    pub center: bool,
    /// Sample size attached to covariance or model input; see [`POPULATION_N`].
    pub n_samples: Option<usize>,
}

#[derive(Debug, Clone)]
pub enum Input {
    Covariance(SampleCovariance),
    Model(SyntheticModel),
}

impl Input {
    /// The covariance to fit: the input itself, or a model's population covariance.
    pub fn covariance(&self, opts: &ReadOptions) -> CliResult<SampleCovariance> {
        match self {
            Input::Covariance(s) => Ok(s.clone()),
            Input::Model(m) => Ok(SampleCovariance::new(m.cov_o.clone(), opts.n_samples.unwrap_or(POPULATION_N))?),
        }
    }

    pub fn model(&self) -> Option<&SyntheticModel> {
        match self {
            Input::Model(m) => Some(m),
            Input::Covariance(_) => None,
        }
    }
}

pub fn read_input(path: &Path, format: InputFormat, opts: &ReadOptions) -> CliResult<Input> {
    match format {
        InputFormat::CsvSamples => {
            let x = read_csv_samples(path, opts.header)?;
            Ok(Input::Covariance(sample_covariance(&x, opts.center)?))
        }
        InputFormat::MtxCovariance => {
            let m = read_matrix_market(path)?;
            let n = opts.n_samples.unwrap_or(m.nrows() + 1);
            Ok(Input::Covariance(SampleCovariance::new(m, n)?))
        }
        InputFormat::ModelJson => Ok(Input::Model(read_model(path)?)),
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_model(path: &Path) -> CliResult<SyntheticModel> {
    Ok(SyntheticModel::from_json(&read_text(path)?)?)
}

/// `n × p` sample matrix. Parse errors report the line and the 1-based field index.
pub fn read_csv_samples(path: &Path, header: bool) -> CliResult<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            other => CliError::Usage(format!("{}: {other:?}", path.display())),
        })?;
    let mut rows: Vec<f64> = Vec::new();
    let mut width = None;
    let mut n = 0;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        for (k, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|e| CliError::Parse {
                path: path.display().to_string(),
                line,
                column: k + 1,
                message: format!("'{field}': {e}"),
            })?;
            rows.push(v);
        }
        width.get_or_insert(record.len());
        n += 1;
    }
    let p = width.ok_or(lvgm::Error::NoSamples)?;
    Ok(Matrix::from_row_slice(n, p, &rows))
}

/// Coordinate-format MatrixMarket, `real` or `integer`, `symmetric` or `general`. Asymmetric
/// input is symmetrized downstream with a warning.
pub fn read_matrix_market(path: &Path) -> CliResult<Matrix> {
    parse_matrix_market(&read_text(path)?, &path.display().to_string())
}

pub fn parse_matrix_market(text: &str, source: &str) -> CliResult<Matrix> {
    let err = |line: usize, column: usize, message: String| CliError::Parse {
        path: source.to_string(),
        line: line as u64,
        column,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l));
    let (_, banner) = lines.next().ok_or_else(|| err(1, 1, "empty file".into()))?;
    let head: Vec<String> = banner.split_whitespace().map(str::to_ascii_lowercase).collect();
    if head.len() != 5 || head[0] != "%%matrixmarket" || head[1] != "matrix" || head[2] != "coordinate" {
        return Err(err(1, 1, "expected '%%MatrixMarket matrix coordinate <field> <symmetry>'".into()));
    }
    if head[3] != "real" && head[3] != "integer" {
        return Err(err(1, 1, format!("unsupported field '{}'", head[3])));
    }
    let symmetric = match head[4].as_str() {
        "symmetric" => true,
        "general" => false,
        other => return Err(err(1, 1, format!("unsupported symmetry '{other}'"))),
    };

    let mut body = lines.filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('%'));
    let tokens = |line: &str| -> Vec<(usize, String)> {
        let mut out = Vec::new();
        let mut start = None;
        for (k, c) in line.char_indices().chain(std::iter::once((line.len(), ' '))) {
            match (c.is_whitespace(), start) {
                (false, None) => start = Some(k),
                (true, Some(s)) => {
                    out.push((s + 1, line[s..k].to_string()));
                    start = None;
                }
                _ => {}
            }
        }
        out
    };
    let (size_no, size_line) = body.next().ok_or_else(|| err(2, 1, "missing size line".into()))?;
    let size = tokens(size_line);
    if size.len() != 3 {
        return Err(err(size_no, 1, "size line must be 'rows cols entries'".into()));
    }
    let mut dims = [0usize; 3];
    for (d, (col, tok)) in dims.iter_mut().zip(&size) {
        *d = tok.parse().map_err(|e| err(size_no, *col, format!("'{tok}': {e}")))?;
    }
    let [rows, cols, nnz] = dims;
    if rows != cols {
        return Err(err(size_no, 1, format!("covariance must be square, got {rows}x{cols}")));
    }

    let mut m = Matrix::zeros(rows, cols);
    let mut seen = 0;
    for (no, line) in body {
        let t = tokens(line);
        if t.len() != 3 {
            return Err(err(no, 1, "entry must be 'row col value'".into()));
        }
        let index = |(col, tok): &(usize, String)| -> CliResult<usize> {
            let v: usize = tok.parse().map_err(|e| err(no, *col, format!("'{tok}': {e}")))?;
            if v == 0 || v > rows {
                return Err(err(no, *col, format!("index {v} outside 1..={rows}")));
            }
            Ok(v - 1)
        };
        let (i, j) = (index(&t[0])?, index(&t[1])?);
        let v: f64 = t[2].1.parse().map_err(|e| err(no, t[2].0, format!("'{}': {e}", t[2].1)))?;
        m[(i, j)] = v;
        if symmetric {
            m[(j, i)] = v;
        }
        seen += 1;
    }
    if seen != nnz {
        return Err(err(size_no, 1, format!("size line promises {nnz} entries, found {seen}")));
    }
    Ok(m)
}

/// Lower triangle of a symmetric matrix in coordinate form; values keep full precision.
pub fn format_matrix_market(m: &Matrix) -> String {
    let p = m.nrows();
    let entries: Vec<(usize, usize, f64)> = (0..p)
        .flat_map(|j| (j..p).map(move |i| (i, j)))
        .map(|(i, j)| (i, j, m[(i, j)]))
        .filter(|e| e.2 != 0.0)
        .collect();
    let mut out = String::from("%%MatrixMarket matrix coordinate real symmetric\n");
    writeln!(out, "{p} {p} {}", entries.len()).unwrap();
    for (i, j, v) in entries {
        writeln!(out, "{} {} {v:?}", i + 1, j + 1).unwrap();
    }
    out
}

pub fn format_csv_samples(x: &Matrix) -> String {
    let mut out = String::new();
    for row in x.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}
