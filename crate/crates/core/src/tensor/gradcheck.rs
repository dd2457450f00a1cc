use thiserror::Error;

use super::{Graph, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// max over coordinates of |autodiff − central| / max(1, |central|)
    pub max_rel_error: f64,
    /// (parameter index, flat coordinate) where the maximum occurred
    pub worst: (usize, usize),
    pub coordinates: usize,
}

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("step size must be positive, got {0}")]
    BadStep(f64),
    #[error("function failed at the unperturbed point: {0}")]
    Base(TensorError),
    #[error("non-finite evaluation perturbing parameter {param}, coordinate {index}: {source}")]
    NonFinite {
        param: usize,
        index: usize,
        source: TensorError,
    },
}

/// Compares autodiff gradients of a scalar function against central
/// differences, one coordinate at a time.
///
/// `f` is re-run on a fresh graph for every perturbation, so it must be
/// deterministic in its parameters.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<GradCheckReport, GradCheckError>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>, TensorError>,
{
    if !(eps > 0.0) {
        return Err(GradCheckError::BadStep(eps));
    }
    let analytic: Vec<Tensor> = {
        let g = Graph::new();
        let vars: Vec<Var<'_>> = params.iter().map(|p| g.param(p.clone())).collect();
        let root = f(&g, &vars).map_err(GradCheckError::Base)?;
        let grads = g.backward(root).map_err(GradCheckError::Base)?;
        vars.iter().map(|&v| grads.get(v)).collect()
    };

    let eval = |values: &[Tensor]| -> Result<f64, TensorError> {
        let g = Graph::new();
        let vars: Vec<Var<'_>> = values.iter().map(|p| g.constant(p.clone())).collect();
        Ok(f(&g, &vars)?.item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for (p, grad) in analytic.iter().enumerate() {
        for i in 0..work[p].len() {
            let orig = work[p].data()[i];
            let wrap = |source| GradCheckError::NonFinite { param: p, index: i, source };
            work[p].data_mut()[i] = orig + eps;
            let up = eval(&work).map_err(wrap)?;
            work[p].data_mut()[i] = orig - eps;
            let down = eval(&work).map_err(wrap)?;
            work[p].data_mut()[i] = orig;
            let central = (up - down) / (2.0 * eps);
            if !central.is_finite() {
                return Err(wrap(TensorError::NonFinite { op: "central difference", index: i }));
            }
            let err = (grad.data()[i] - central).abs() / central.abs().max(1.0);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (p, i);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}
