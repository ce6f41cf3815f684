use super::{Graph, Tensor, TensorError, Var};
use crate::scalar::Scalar;

/// Compares reverse-mode gradients of a scalar function of one tensor against
/// central finite differences. Returns
/// `max_i |analytic_i − fd_i| / max(1, |analytic_i|)`.
pub fn grad_check<T, E, F>(f: F, x: &Tensor<T>, h: T) -> Result<T, E>
where
    T: Scalar,
    E: From<TensorError>,
    F: Fn(&mut Graph<T>, Var) -> Result<Var, E>,
{
    grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(x), h)
}

/// [`grad_check`] over several inputs at once; the error is the maximum over
/// every coordinate of every input.
pub fn grad_check_many<T, E, F>(f: F, inputs: &[Tensor<T>], h: T) -> Result<T, E>
where
    T: Scalar,
    E: From<TensorError>,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var, E>,
{
    let hv = h.to_f64_lossless();
    let min_step = if T::BYTES <= 4 { 1e-4 } else { 1e-8 };
    if !(min_step..=1e-2).contains(&hv) {
        return Err(TensorError::BadStep(hv).into());
    }

    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.param(t.clone())).collect();
    let loss = f(&mut graph, &vars)?;
    if !graph.shape(loss).is_empty() {
        return Err(TensorError::NotScalar(graph.shape(loss).to_vec()).into());
    }
    // A loss that does not depend on the inputs has an exactly zero gradient.
    let analytic: Vec<Vec<T>> = if graph.requires_grad(loss) {
        graph.backward(loss)?;
        vars.iter()
            .map(|&v| graph.grad(v).map(<[T]>::to_vec).unwrap_or_default())
            .collect()
    } else {
        inputs.iter().map(|t| vec![T::zero(); t.numel()]).collect()
    };

    let eval = |perturbed: &[Tensor<T>]| -> Result<T, E> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item()?)
    };

    let two_h = h + h;
    let mut worst = T::zero();
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (t, grads) in analytic.iter().enumerate() {
        for i in 0..inputs[t].numel() {
            let orig = inputs[t].data()[i];
            work[t].data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work[t].data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work[t].data_mut()[i] = orig;
            let fd = (plus - minus) / two_h;
            let a = grads[i];
            let rel = (a - fd).abs() / T::one().max(a.abs());
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
