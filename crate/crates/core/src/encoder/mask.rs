use ndarray::Array2;

use crate::numerics::Scalar;

/// Additive attention mask over `n` positions: rows are queries, columns keys.
/// Each entry is either `0` (open) or `-inf` (blocked).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    n: usize,
    blocked: Vec<bool>,
}

impl AttentionMask {
    pub fn open(n: usize) -> Self {
        AttentionMask {
            n,
            blocked: vec![false; n * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn is_blocked(&self, i: usize, j: usize) -> bool {
        self.blocked[i * self.n + j]
    }

    pub fn set_blocked(&mut self, i: usize, j: usize, blocked: bool) {
        self.blocked[i * self.n + j] = blocked;
    }

    /// Entry value, `0.0` or `f64::NEG_INFINITY`.
    pub fn value(&self, i: usize, j: usize) -> f64 {
        if self.is_blocked(i, j) {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    }

    /// True when every query row can attend to at least one key.
    pub fn rows_are_open(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).any(|j| !self.is_blocked(i, j)))
    }

    pub fn to_additive<F: Scalar>(&self) -> Array2<F> {
        Array2::from_shape_fn((self.n, self.n), |(i, j)| F::of(self.value(i, j)))
    }
}

/// Span mask: query `i` may not see keys `j` with `0 < j - i <= max_len`.
pub fn build_segmental_mask(n: usize, max_len: usize) -> AttentionMask {
    let mut m = AttentionMask::open(n);
    for i in 0..n {
        for j in i + 1..n.min(i + max_len + 1) {
            m.set_blocked(i, j, true);
        }
    }
    m
}

/// Causal mask: query `i` may not see keys `j > i`.
pub fn build_directional_mask(n: usize) -> AttentionMask {
    let mut m = AttentionMask::open(n);
    for i in 0..n {
        for j in i + 1..n {
            m.set_blocked(i, j, true);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    const NINF: f64 = f64::NEG_INFINITY;

    fn rows(m: &AttentionMask) -> Vec<Vec<f64>> {
        (0..m.size())
            .map(|i| (0..m.size()).map(|j| m.value(i, j)).collect())
            .collect()
    }

    #[test]
    fn segmental_n4_k3() {
        let m = build_segmental_mask(4, 3);
        let r = rows(&m);
        assert_eq!(r[0], vec![0.0, NINF, NINF, NINF]);
        assert_eq!(r[1], vec![0.0, 0.0, NINF, NINF]);
        assert_eq!(r[3], vec![0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn segmental_with_large_k_is_strict_upper() {
        let m = build_segmental_mask(6, 9);
        assert_eq!(m, build_directional_mask(6));
    }

    #[test]
    fn single_position() {
        assert_eq!(rows(&build_segmental_mask(1, 3)), vec![vec![0.0]]);
        assert_eq!(rows(&build_directional_mask(1)), vec![vec![0.0]]);
    }

    #[test]
    fn directional_n2() {
        assert_eq!(rows(&build_directional_mask(2)), vec![vec![0.0, NINF], vec![0.0, 0.0]]);
        let m = build_directional_mask(5);
        assert!((0..5).all(|j| !m.is_blocked(4, j)));
    }

    #[test]
    fn directional_differs_from_span_mask_with_k1() {
        let a = build_directional_mask(4);
        let b = build_segmental_mask(4, 1);
        let differing: Vec<(usize, usize)> = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .filter(|&(i, j)| a.is_blocked(i, j) != b.is_blocked(i, j))
            .collect();
        assert_eq!(differing, vec![(0, 2), (0, 3), (1, 3)]);
    }

    #[test]
    fn closed_form_predicates() {
        for n in 1..=20 {
            let d = build_directional_mask(n);
            assert!(d.rows_are_open());
            for k in 1..=8 {
                let m = build_segmental_mask(n, k);
                assert!(m.rows_are_open());
                for i in 0..n {
                    for j in 0..n {
                        let diff = j as isize - i as isize;
                        assert_eq!(m.is_blocked(i, j), diff > 0 && diff <= k as isize);
                        assert_eq!(d.is_blocked(i, j), j > i);
                    }
                }
            }
        }
    }
}
