//! Semi-Markov recursions shared by the plain lattice and the differentiable
//! marginal. `entry(i, l)` is the log-probability of the segment of length `l`
//! starting at `i`; callers only ask for `1 <= l <= min(k, n - i)`.

use num_traits::Float;

/// `alpha[0] = 0`, `alpha[i] = logsumexp_l(alpha[i - l] + entry(i - l, l))`.
pub(crate) fn forward_alphas<F: Float>(n: usize, k: usize, entry: impl Fn(usize, usize) -> F) -> Vec<F> {
    let mut alpha = vec![F::neg_infinity(); n + 1];
    alpha[0] = F::zero();
    let mut terms = Vec::with_capacity(k);
    for i in 1..=n {
        terms.clear();
        for l in 1..=k.min(i) {
            terms.push(alpha[i - l] + entry(i - l, l));
        }
        alpha[i] = lse(&terms);
    }
    alpha
}

/// `beta[n] = 0`, `beta[i] = logsumexp_l(entry(i, l) + beta[i + l])`.
pub(crate) fn backward_betas<F: Float>(n: usize, k: usize, entry: impl Fn(usize, usize) -> F) -> Vec<F> {
    let mut beta = vec![F::neg_infinity(); n + 1];
    beta[n] = F::zero();
    let mut terms = Vec::with_capacity(k);
    for i in (0..n).rev() {
        terms.clear();
        for l in 1..=k.min(n - i) {
            terms.push(entry(i, l) + beta[i + l]);
        }
        beta[i] = lse(&terms);
    }
    beta
}

/// Best path score and segment lengths. At equal scores the shorter final
/// segment wins, so `l` only replaces the incumbent when strictly better.
pub(crate) fn viterbi_path<F: Float>(n: usize, k: usize, entry: impl Fn(usize, usize) -> F) -> (Vec<usize>, F) {
    let mut best = vec![F::neg_infinity(); n + 1];
    let mut back = vec![0usize; n + 1];
    best[0] = F::zero();
    for i in 1..=n {
        for l in 1..=k.min(i) {
            let score = best[i - l] + entry(i - l, l);
            if back[i] == 0 || score > best[i] {
                best[i] = score;
                back[i] = l;
            }
        }
    }
    let mut lengths = Vec::new();
    let mut i = n;
    while i > 0 {
        lengths.push(back[i]);
        i -= back[i];
    }
    lengths.reverse();
    (lengths, best[n])
}

fn lse<F: Float>(xs: &[F]) -> F {
    let max = xs.iter().fold(F::neg_infinity(), |m, &x| if x > m { x } else { m });
    if max == F::neg_infinity() || max == F::infinity() {
        return max;
    }
    max + xs.iter().fold(F::zero(), |acc, &x| acc + (x - max).exp()).ln()
}
