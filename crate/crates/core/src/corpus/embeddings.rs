use std::fmt::Write as _;

use ndarray::Array2;

use super::CorpusError;

/// Text matrix format: a `dim n` header line, then `n` rows of `dim` numbers.
pub fn write_embeddings(matrix: &Array2<f64>) -> String {
    let (n, dim) = matrix.dim();
    let mut out = String::new();
    writeln!(out, "{dim} {n}").unwrap();
    for row in matrix.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", cells.join(" ")).unwrap();
    }
    out
}

pub fn parse_embeddings(text: &str) -> Result<Array2<f64>, CorpusError> {
    let bad = |m: String| CorpusError::Format(m);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("missing header".into()))?;
    let mut parts = header.split_whitespace();
    let parse_dim = |s: Option<&str>, what: &str| -> Result<usize, CorpusError> {
        s.ok_or_else(|| bad(format!("header lacks {what}")))?
            .parse::<usize>()
            .map_err(|e| bad(format!("bad {what} in header: {e}")))
    };
    let dim = parse_dim(parts.next(), "dim")?;
    let n = parse_dim(parts.next(), "row count")?;
    if parts.next().is_some() {
        return Err(bad("trailing fields in header".into()));
    }
    let total = dim
        .checked_mul(n)
        .filter(|&t| t <= 1 << 28)
        .ok_or_else(|| bad(format!("matrix {n}x{dim} is too large")))?;
    let mut values = Vec::with_capacity(total.min(1 << 20));
    for r in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| bad(format!("expected {n} rows, found {r}")))?;
        let before = values.len();
        for cell in line.split_whitespace() {
            let v: f64 = cell
                .parse()
                .map_err(|e| bad(format!("row {r}: bad number {cell:?}: {e}")))?;
            if !v.is_finite() {
                return Err(bad(format!("row {r}: non-finite value")));
            }
            values.push(v);
        }
        if values.len() - before != dim {
            return Err(bad(format!(
                "row {r} has {} values, expected {dim}",
                values.len() - before
            )));
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(bad("trailing rows after matrix".into()));
    }
    Array2::from_shape_vec((n, dim), values).map_err(|e| bad(e.to_string()))
}
