use crate::error::{Error, Result};
use crate::layers::ParamStore;
use crate::tensor::Real;

/// Moment buffers for bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct AdamState<T: Real = f32> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = params.ids().map(|id| vec![T::zero(); params.value(id).len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One in-place Adam update from the gradients held in `params`.
pub fn adam_step<T: Real>(params: &mut ParamStore<T>, state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "optimizer tracks {} parameters, store has {}",
            state.m.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::from_f64(state.beta1), T::from_f64(state.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - state.beta1), T::from_f64(1.0 - state.beta2));
    let c1 = T::from_f64(1.0 / (1.0 - state.beta1.powi(t)));
    let c2 = T::from_f64(1.0 / (1.0 - state.beta2.powi(t)));
    let lr = T::from_f64(lr);
    let eps = T::from_f64(state.eps);
    let (ms, vs) = (&mut state.m, &mut state.v);
    params.update_with(|i, values, grad| {
        for (((p, &g), m), v) in values.iter_mut().zip(grad).zip(ms[i].iter_mut()).zip(vs[i].iter_mut()) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = *m * c1;
            let v_hat = *v * c2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    })
}
