use super::{Graph, NumericsError, Scalar, Tensor, Var};

/// Compares reverse-mode gradients of a scalar function against central
/// differences, over a single input tensor.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`.
pub fn grad_check<F, Fun>(f: Fun, x: &Tensor<F>, eps: F) -> Result<F, NumericsError>
where
    F: Scalar,
    Fun: Fn(&mut Graph<F>, Var) -> Result<Var, NumericsError>,
{
    grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(x), eps)
}

/// [`grad_check`] over several input tensors at once (e.g. every model parameter).
pub fn grad_check_many<F, Fun>(f: Fun, inputs: &[Tensor<F>], eps: F) -> Result<F, NumericsError>
where
    F: Scalar,
    Fun: Fn(&mut Graph<F>, &[Var]) -> Result<Var, NumericsError>,
{
    let eval = |values: &[Tensor<F>]| -> Result<F, NumericsError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|v| g.param(v.clone())).collect();
        let out = f(&mut g, &vars)?;
        let y = g.scalar(out);
        if !y.is_finite() {
            return Err(NumericsError::NonFinite(y.as_f64()));
        }
        Ok(y)
    };

    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|v| graph.param(v.clone())).collect();
    let out = f(&mut graph, &vars)?;
    let y = graph.scalar(out);
    if !y.is_finite() {
        return Err(NumericsError::NonFinite(y.as_f64()));
    }
    let grads = graph.backward(out);

    let mut worst = F::zero();
    let mut probe: Vec<Tensor<F>> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(inputs[k].dim());
        let analytic = grads.get(*var).unwrap_or(&zeros);
        for idx in 0..inputs[k].len() {
            let (r, c) = (idx / inputs[k].ncols(), idx % inputs[k].ncols());
            let orig = inputs[k][[r, c]];
            probe[k][[r, c]] = orig + eps;
            let plus = eval(&probe)?;
            probe[k][[r, c]] = orig - eps;
            let minus = eval(&probe)?;
            probe[k][[r, c]] = orig;
            let numeric = (plus - minus) / (eps + eps);
            let a = analytic[[r, c]];
            let err = (a - numeric).abs() / a.abs().max(F::one());
            if err > worst || err.is_nan() {
                worst = err;
            }
        }
    }
    Ok(worst)
}
