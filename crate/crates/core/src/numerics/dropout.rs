use rand_chacha::ChaCha8Rng;

use super::{Graph, NumericsError, Scalar, Var};

/// Whether a forward pass samples dropout masks, and from which generator.
#[derive(Debug)]
pub enum Dropout<'a> {
    /// Evaluation: every dropout site is the identity.
    Off,
    On(&'a mut ChaCha8Rng),
}

impl Dropout<'_> {
    pub fn is_on(&self) -> bool {
        matches!(self, Dropout::On(_))
    }

    pub fn apply<F: Scalar>(&mut self, g: &mut Graph<F>, x: Var, p: f64) -> Result<Var, NumericsError> {
        match self {
            Dropout::Off => Ok(x),
            Dropout::On(rng) => g.dropout(x, p, *rng),
        }
    }
}
