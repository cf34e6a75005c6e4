use super::{Tape, Tensor, TensorError, Var};

fn eval_scalar<F>(f: &F, x: &Tensor) -> Result<f64, TensorError>
where
    F: for<'t> Fn(&mut Tape<'t>, Var) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), false);
    let out = f(&mut tape, v)?;
    let t = tape.value(out);
    if !t.is_scalar_like() {
        return Err(TensorError::NotScalar { shape: t.shape().to_vec() });
    }
    Ok(t.item())
}

/// Central-difference gradient of a scalar function of one tensor.
pub fn central_difference<F>(f: F, x: &Tensor, eps: f64) -> Result<Tensor, TensorError>
where
    F: for<'t> Fn(&mut Tape<'t>, Var) -> Result<Var, TensorError>,
{
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    Ok(grad)
}

/// Largest relative disagreement between the tape gradient of `f` at `x`
/// and its central-difference estimate:
/// `max_i |a_i − c_i| / max(|a_i|, |c_i|, 1e-8)`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64, TensorError>
where
    F: for<'t> Fn(&mut Tape<'t>, Var) -> Result<Var, TensorError>,
{
    if !(eps > 1e-8 && eps < 1e-3) {
        return Err(TensorError::invalid("grad_check", format!("eps {eps} outside (1e-8, 1e-3)")));
    }
    if !x.is_finite() {
        return Err(TensorError::NonFinite { op: "grad_check" });
    }
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), true);
    let out = f(&mut tape, v)?;
    let grads = tape.backward(out)?;
    let analytic = grads.get_or_zeros(v, x);
    let numeric = central_difference(&f, x, eps)?;
    Ok(analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, c)| (a - c).abs() / a.abs().max(c.abs()).max(1e-8))
        .fold(0.0, f64::max))
}
