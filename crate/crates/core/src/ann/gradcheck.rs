use ndarray::{Array1, ArrayView1, ArrayView2};

use super::{AnnError, NetworkModel};

const FD_STEP: f64 = 1e-5;
const MAGNITUDE_FLOOR: f64 = 1e-8;

fn check_shapes(model: &NetworkModel, inputs: &ArrayView2<'_, f64>, targets: &ArrayView1<'_, f64>) -> Result<(), AnnError> {
    if inputs.ncols() != model.architecture.input_dim {
        return Err(AnnError::DimensionMismatch {
            expected: model.architecture.input_dim,
            got: inputs.ncols(),
        });
    }
    if inputs.nrows() != targets.len() {
        return Err(AnnError::LengthMismatch {
            inputs: inputs.nrows(),
            targets: targets.len(),
        });
    }
    Ok(())
}

/// Mean squared error and its backpropagated gradient, flattened in
/// [`NetworkModel::parameters`] order.
pub fn loss_and_gradient(
    model: &NetworkModel,
    inputs: ArrayView2<'_, f64>,
    targets: ArrayView1<'_, f64>,
) -> Result<(f64, Vec<f64>), AnnError> {
    check_shapes(model, &inputs, &targets)?;
    let y: Array1<f64> = targets.to_owned();
    let (out, cache) = model.forward_cached(inputs);
    let loss = (&out - &y).mapv(|e| e * e).mean().unwrap_or(0.0);
    let grads = model.backward(&cache, &out, &y, 0);
    let mut flat = Vec::with_capacity(model.architecture.n_parameters());
    for g in &grads {
        flat.extend(g.weights.iter());
        flat.extend(g.bias.iter());
    }
    Ok((loss, flat))
}

/// Central differences of the mean squared error with step `step`.
pub fn numeric_gradient(
    model: &NetworkModel,
    inputs: ArrayView2<'_, f64>,
    targets: ArrayView1<'_, f64>,
    step: f64,
) -> Result<Vec<f64>, AnnError> {
    check_shapes(model, &inputs, &targets)?;
    let base = model.parameters();
    let mut probe = model.clone();
    let mut params = base.clone();
    let loss = |m: &NetworkModel| (&m.forward(inputs) - &targets).mapv(|e| e * e).mean().unwrap_or(0.0);
    let mut out = Vec::with_capacity(base.len());
    for k in 0..base.len() {
        params[k] = base[k] + step;
        probe.set_parameters(&params)?;
        let up = loss(&probe);
        params[k] = base[k] - step;
        probe.set_parameters(&params)?;
        let down = loss(&probe);
        params[k] = base[k];
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Largest `|a - n| / max(|a|, |n|)` over entries where `|a| + |n|` exceeds
/// 1e-8. Returns 0 when no entry qualifies.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .filter(|(a, n)| a.abs() + n.abs() > MAGNITUDE_FLOOR)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()))
        .fold(0.0, f64::max)
}

/// Compare backpropagation against central finite differences.
pub fn gradient_check(model: &NetworkModel, inputs: ArrayView2<'_, f64>, targets: ArrayView1<'_, f64>) -> Result<f64, AnnError> {
    let (_, analytic) = loss_and_gradient(model, inputs, targets)?;
    let numeric = numeric_gradient(model, inputs, targets, FD_STEP)?;
    Ok(max_relative_error(&analytic, &numeric))
}
