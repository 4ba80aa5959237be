use num_traits::Float;

use super::NumericsError;

/// `log(sum(exp(xs)))` with a max shift, so no intermediate exponent overflows.
///
/// Returns `-inf` when every input is `-inf`.
pub fn logsumexp<F: Float>(xs: &[F]) -> Result<F, NumericsError> {
    if xs.is_empty() {
        return Err(NumericsError::EmptyReduction);
    }
    Ok(logsumexp_iter(xs.iter().copied()))
}

/// Same reduction over an iterator. An empty iterator yields `-inf`.
pub fn logsumexp_iter<F: Float, I>(xs: I) -> F
where
    I: IntoIterator<Item = F> + Clone,
{
    let max = xs
        .clone()
        .into_iter()
        .fold(F::neg_infinity(), |m, x| if x > m { x } else { m });
    if max == F::neg_infinity() {
        return max;
    }
    if max == F::infinity() {
        return max;
    }
    let sum = xs
        .into_iter()
        .fold(F::zero(), |acc, x| acc + (x - max).exp());
    max + sum.ln()
}

/// `log(exp(a) + exp(b))`.
#[inline]
pub fn log_add<F: Float>(a: F, b: F) -> F {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == F::neg_infinity() {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}
