use super::{Graph, Tensor, TensorError, Var};

/// Compares reverse-mode gradients of `f` against central finite differences.
///
/// `f` receives a fresh graph and one leaf per entry of `params` and must
/// return a scalar loss. Returns the largest component-wise relative error,
/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn gradient_check<F>(f: F, params: &mut [Tensor], epsilon: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(TensorError::contract(
            "gradient_check",
            format!("epsilon {epsilon} outside [1e-6, 1e-3]"),
        ));
    }
    let eval = |params: &[Tensor]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| g.param(p)).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p)).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).expect("after backward")).collect();

    let mut worst: f64 = 0.0;
    for pi in 0..params.len() {
        for j in 0..params[pi].numel() {
            let orig = params[pi].data()[j];
            params[pi].data_mut()[j] = orig + epsilon;
            let up = eval(params)?;
            params[pi].data_mut()[j] = orig - epsilon;
            let down = eval(params)?;
            params[pi].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic[pi][j];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
