use ndarray::Array2;

use crate::numerics::{Graph, NumericsError, Scalar, Var};

/// Fixed sinusoidal table: `sin(t / 10000^(2i/d))` in even columns,
/// `cos(...)` in odd ones.
pub fn sinusoidal_positions(n: usize, d: usize) -> Result<Array2<f64>, NumericsError> {
    if d % 2 != 0 {
        return Err(NumericsError::Invalid(format!(
            "sinusoidal positions need an even width, got {d}"
        )));
    }
    Ok(Array2::from_shape_fn((n, d), |(t, c)| {
        let i = (c / 2) as f64;
        let angle = t as f64 / 10000f64.powf(2.0 * i / d as f64);
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}

/// `g * emb + pos` with a per-position scale `g = 1 + relu([emb; pos] . w)`.
///
/// `gate` is a `2d x 1` column without bias.
pub fn gate_and_add<F: Scalar>(
    g: &mut Graph<F>,
    emb: Var,
    pos: Var,
    gate: Var,
) -> Result<Var, NumericsError> {
    let both = g.concat_cols(&[emb, pos])?;
    let score = g.matmul(both, gate)?;
    let score = g.relu(score)?;
    let scale = g.add_scalar(score, F::one())?;
    let scaled = g.mul_col(emb, scale)?;
    g.add(scaled, pos)
}
