use super::{Tensor, TensorError};

fn check_finite(op: &'static str, grads: &[Tensor]) -> Result<(), TensorError> {
    match grads.iter().position(|g| !g.is_finite()) {
        None => Ok(()),
        Some(param) => Err(TensorError::NonFiniteGradient { op, param }),
    }
}

fn check_shapes(op: &'static str, params: &[Tensor], grads: &[Tensor]) -> Result<(), TensorError> {
    if params.len() != grads.len() {
        return Err(TensorError::invalid(op, format!("{} params, {} grads", params.len(), grads.len())));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(TensorError::shape(op, p.shape(), g.shape()));
        }
    }
    Ok(())
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let c = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(c);
        }
    }
    norm
}

/// RMSProp: `v ← ρv + (1−ρ)g²`, `θ ← θ − lr·g / (√v + ε)`.
#[derive(Clone, Debug)]
pub struct Rmsprop {
    pub decay: f64,
    pub eps: f64,
    sq: Vec<Tensor>,
}

impl Rmsprop {
    pub fn new(params: &[Tensor], decay: f64, eps: f64) -> Self {
        Self {
            decay,
            eps,
            sq: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<(), TensorError> {
        check_shapes("rmsprop", params, grads)?;
        check_finite("rmsprop", grads)?;
        for ((p, g), s) in params.iter_mut().zip(grads).zip(&mut self.sq) {
            for ((pv, gv), sv) in p.data_mut().iter_mut().zip(g.data()).zip(s.data_mut()) {
                *sv = self.decay * *sv + (1.0 - self.decay) * gv * gv;
                *pv -= lr * gv / (sv.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &[Tensor], lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), TensorError> {
        check_shapes("adam", params, grads)?;
        check_finite("adam", grads)?;
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pv, gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                *pv -= self.lr * (*mv / c1) / ((*vv / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
