//! LIBSVM text datasets: parsing, serialisation, row normalisation and
//! seeded synthetic data.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::math::SparseVector;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<SparseVector>,
    pub labels: Vec<f64>,
    pub dim: usize,
    pub source: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Widen the feature space, e.g. so a train and a test file agree.
    pub fn with_dim(mut self, dim: usize) -> Result<Self> {
        if dim < self.dim {
            return Err(invalid(format!("cannot shrink dimension from {} to {dim}", self.dim)));
        }
        for row in &mut self.rows {
            row.widen(dim)?;
        }
        self.dim = dim;
        Ok(self)
    }
}

fn parse_error(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

type RawRow = (f64, Vec<usize>, Vec<f64>);

fn parse_line(text: &str, line: usize) -> Result<Option<RawRow>> {
    let text = text.trim();
    if text.is_empty() || text.starts_with('#') {
        return Ok(None);
    }
    let mut tokens = text.split_whitespace();
    let label_tok = tokens.next().unwrap_or_default();
    let label: f64 = label_tok.parse().map_err(|_| parse_error(line, format!("bad label `{label_tok}`")))?;
    if !label.is_finite() {
        return Err(parse_error(line, format!("non-finite label `{label_tok}`")));
    }
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for tok in tokens {
        let (idx, val) = tok.split_once(':').ok_or_else(|| parse_error(line, format!("malformed token `{tok}`")))?;
        let idx: i64 = idx.parse().map_err(|_| parse_error(line, format!("bad index in `{tok}`")))?;
        if idx <= 0 {
            return Err(parse_error(line, format!("index must be >= 1 in `{tok}`")));
        }
        let val: f64 = val.parse().map_err(|_| parse_error(line, format!("bad value in `{tok}`")))?;
        if !val.is_finite() {
            return Err(parse_error(line, format!("non-finite value in `{tok}`")));
        }
        let idx = (idx - 1) as usize;
        match indices.last() {
            Some(&prev) if prev == idx => return Err(parse_error(line, format!("duplicate index {}", idx + 1))),
            Some(&prev) if prev > idx => {
                return Err(parse_error(line, format!("index {} after {} is not increasing", idx + 1, prev + 1)))
            }
            _ => {}
        }
        indices.push(idx);
        values.push(val);
    }
    Ok(Some((label, indices, values)))
}

/// Parse `<label> <idx>:<val> ...` lines with 1-based indices. Blank lines
/// and lines starting with `#` are skipped; CRLF endings are accepted.
pub fn parse_libsvm<R: BufRead>(reader: R, source: &str) -> Result<Dataset> {
    let mut raw = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        if let Some(row) = parse_line(&line?, i + 1)? {
            raw.push(row);
        }
    }
    if raw.is_empty() {
        return Err(invalid(format!("{source}: no data rows")));
    }
    let dim = raw.iter().filter_map(|(_, idx, _)| idx.last()).map(|&i| i + 1).max().unwrap_or(0);
    let mut rows = Vec::with_capacity(raw.len());
    let mut labels = Vec::with_capacity(raw.len());
    for (label, idx, val) in raw {
        rows.push(SparseVector::new(idx, val, dim)?);
        labels.push(label);
    }
    Ok(Dataset { rows, labels, dim, source: source.to_string() })
}

pub fn parse_libsvm_str(text: &str) -> Result<Dataset> {
    parse_libsvm(text.as_bytes(), "<string>")
}

/// Read a dataset from a file, or from standard input when `path` is `-`.
pub fn load_libsvm(path: &Path) -> Result<Dataset> {
    if path.as_os_str() == "-" {
        return parse_libsvm(io::stdin().lock(), "<stdin>");
    }
    let file = File::open(path)?;
    parse_libsvm(BufReader::new(file), &path.display().to_string())
}

/// Shortest representation that parses back to the same `f64`.
pub fn serialize_libsvm(ds: &Dataset) -> String {
    let mut out = String::new();
    for (row, label) in ds.rows.iter().zip(&ds.labels) {
        let _ = write!(out, "{label}");
        for (i, v) in row.indices().iter().zip(row.values()) {
            let _ = write!(out, " {}:{v}", i + 1);
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowNorm {
    None,
    UnitL2,
}

pub fn normalize_rows(ds: &Dataset, mode: RowNorm) -> Dataset {
    let mut out = ds.clone();
    if mode == RowNorm::UnitL2 {
        for row in &mut out.rows {
            let norm = row.norm_sq().sqrt();
            if norm > 0.0 {
                row.scale_values(1.0 / norm);
            }
        }
    }
    out
}

/// `n` Gaussian rows in `dim` dimensions with uniformly random `±1` labels;
/// each row is shifted by `separability · y · w` along a random unit
/// direction `w`, so the classes overlap like `N(±s, 1)` along `w`.
pub fn synthesize_dataset(n: usize, dim: usize, separability: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || dim == 0 {
        return Err(invalid("synthetic dataset needs n >= 1 and dim >= 1"));
    }
    if !separability.is_finite() {
        return Err(Error::NonFinite("separability"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    w.iter_mut().for_each(|x| *x /= norm);

    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let row: Vec<f64> = w.iter().map(|wi| rng.sample::<f64, _>(StandardNormal) + separability * y * wi).collect();
        rows.push(SparseVector::from_dense(&row));
        labels.push(y);
    }
    Ok(Dataset { rows, labels, dim, source: "synthetic".to_string() })
}

/// Sparse 0/1 rows in the style of the small LIBSVM benchmarks: feature `j`
/// appears with probability proportional to `(j + 1)^-0.8`, scaled so a row
/// has about `nnz` active features. Labels are the sign of a planted linear
/// score plus Gaussian noise of relative size `noise`.
pub fn synthesize_sparse_binary(n: usize, dim: usize, nnz: f64, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || dim == 0 || !(nnz > 0.0) || !(noise >= 0.0) {
        return Err(invalid("sparse synthetic dataset needs n, dim, nnz > 0 and noise >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..dim).map(|j| ((j + 1) as f64).powf(-0.8)).collect();
    let total: f64 = weights.iter().sum();
    let probs: Vec<f64> = weights.iter().map(|w| (w * nnz / total).min(1.0)).collect();
    let planted: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();

    let mut rows = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for _ in 0..n {
        let active: Vec<usize> = (0..dim).filter(|&j| rng.random_bool(probs[j])).collect();
        scores.push(active.iter().map(|&j| planted[j]).sum::<f64>());
        let ones = vec![1.0; active.len()];
        rows.push(SparseVector::new(active, ones, dim)?);
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    let spread = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64).sqrt().max(f64::MIN_POSITIVE);
    let labels = scores
        .iter()
        .map(|s| {
            let noisy = s - mean + noise * spread * rng.sample::<f64, _>(StandardNormal);
            if noisy >= 0.0 { 1.0 } else { -1.0 }
        })
        .collect();
    Ok(Dataset { rows, labels, dim, source: "synthetic".to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::DenseVector;
    use crate::problems::{LabelTarget, LogRegProblem, Objective};

    #[test]
    fn parses_basic_lines() {
        let ds = parse_libsvm_str("+1 1:0.5 3:2\n-1\n").unwrap();
        assert_eq!(ds.labels, vec![1.0, -1.0]);
        assert_eq!(ds.rows[0].indices(), &[0, 2]);
        assert_eq!(ds.rows[0].values(), &[0.5, 2.0]);
        assert_eq!(ds.rows[1].nnz(), 0);
        assert_eq!(ds.dim, 3);
    }

    #[test]
    fn skips_comments_blank_lines_and_crlf() {
        let lf = parse_libsvm_str("# header\n\n1 2:1.5\n0 1:-1 4:3e-2\n").unwrap();
        let crlf = parse_libsvm_str("# header\r\n\r\n1 2:1.5\r\n0 1:-1 4:3e-2\r\n").unwrap();
        assert_eq!(lf.rows, crlf.rows);
        assert_eq!(lf.labels, crlf.labels);
        assert_eq!(lf.dim, 4);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("1 1:1\n1 2:x\n", 2),
            ("1 1:1\n\n1 0:1\n", 3),
            ("1 3:1 2:1\n", 1),
            ("1 2:1 2:1\n", 1),
            ("one 1:1\n", 1),
            ("1 1:1 junk\n", 1),
            ("# c\n1 1:nan\n", 2),
            ("1 -3:1\n", 1),
        ];
        for (text, expected) in cases {
            match parse_libsvm_str(text) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, expected, "{text:?}"),
                other => panic!("{text:?} gave {other:?}"),
            }
        }
        assert!(parse_libsvm_str("# only a comment\n").is_err());
    }

    #[test]
    fn round_trip_is_exact() {
        for seed in 0..3 {
            let ds = synthesize_dataset(40, 7, 1.3, seed).unwrap();
            let text = serialize_libsvm(&ds);
            let back = parse_libsvm_str(&text).unwrap();
            assert_eq!(back.rows, ds.rows);
            assert_eq!(back.labels, ds.labels);
            assert_eq!(serialize_libsvm(&back), text);
        }
    }

    #[test]
    fn dimension_override() {
        let ds = parse_libsvm_str("1 2:1\n").unwrap();
        assert!(ds.clone().with_dim(1).is_err());
        let wide = ds.with_dim(10).unwrap();
        assert!(wide.rows.iter().all(|r| r.dim() == 10));
    }

    #[test]
    fn unit_rows() {
        let ds = parse_libsvm_str("1 1:3 2:4\n-1\n").unwrap();
        let n = normalize_rows(&ds, RowNorm::UnitL2);
        assert!((n.rows[0].values()[0] - 0.6).abs() < 1e-15);
        assert!((n.rows[0].values()[1] - 0.8).abs() < 1e-15);
        assert_eq!(n.rows[1].nnz(), 0);
        assert_eq!(normalize_rows(&ds, RowNorm::None), ds);

        let ds = synthesize_dataset(200, 5, 1.0, 4).unwrap();
        let once = normalize_rows(&ds, RowNorm::UnitL2);
        let max_norm = once.rows.iter().map(|r| r.norm_sq().sqrt()).fold(0.0, f64::max);
        assert!((max_norm - 1.0).abs() < 1e-15);
        let twice = normalize_rows(&once, RowNorm::UnitL2);
        for (a, b) in once.rows.iter().zip(&twice.rows) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() <= 1e-15);
            }
        }
    }

    fn accuracy(ds: &Dataset, x: &[f64]) -> f64 {
        let hits = ds.rows.iter().zip(&ds.labels).filter(|(r, &y)| r.dot_dense(x) * y > 0.0).count();
        hits as f64 / ds.len() as f64
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = synthesize_dataset(50, 4, 2.0, 9).unwrap();
        let b = synthesize_dataset(50, 4, 2.0, 9).unwrap();
        assert_eq!(serialize_libsvm(&a), serialize_libsvm(&b));
        assert_ne!(serialize_libsvm(&a), serialize_libsvm(&synthesize_dataset(50, 4, 2.0, 10).unwrap()));
    }

    #[test]
    fn unseparable_labels_are_coin_flips() {
        let ds = synthesize_dataset(10_000, 5, 0.0, 3).unwrap();
        let fit = train(&ds, 300);
        assert!((accuracy(&ds, &fit) - 0.5).abs() <= 0.03);
    }

    #[test]
    fn separable_data_is_learned() {
        let ds = synthesize_dataset(1000, 10, 10.0, 5).unwrap();
        assert!(accuracy(&ds, &train(&ds, 500)) >= 0.99);
    }

    #[test]
    fn sparse_binary_shape() {
        let ds = synthesize_sparse_binary(2000, 120, 14.0, 0.3, 1).unwrap();
        let mean_nnz = ds.rows.iter().map(|r| r.nnz()).sum::<usize>() as f64 / 2000.0;
        assert!((mean_nnz - 14.0).abs() < 1.0, "{mean_nnz}");
        assert!(ds.rows.iter().all(|r| r.values().iter().all(|&v| v == 1.0)));
        let pos = ds.labels.iter().filter(|&&y| y > 0.0).count();
        assert!(pos > 600 && pos < 1400);
        assert_eq!(ds, synthesize_sparse_binary(2000, 120, 14.0, 0.3, 1).unwrap());
    }

    fn train(ds: &Dataset, steps: usize) -> Vec<f64> {
        let p = LogRegProblem::from_dataset(ds, LabelTarget::Binary, 0.0).unwrap();
        let mut x = DenseVector::zeros(ds.dim);
        for _ in 0..steps {
            let (_, g) = p.full_value_grad(&x).unwrap();
            x = DenseVector::new(x.iter().zip(g.iter()).map(|(a, b)| a - 0.5 * b).collect()).unwrap();
        }
        x.into_vec()
    }
}
