use serde::{Deserialize, Serialize};

use super::{NeuralError, ParamStore, Result, Tensor};

/// Adam moments and step count for one [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(learning_rate: f64, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Self { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(state: &mut OptimizerState, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(NeuralError::Shape(format!("{} gradients, {} moments for {} parameters", grads.len(), state.m.len(), params.len())));
    }
    for (i, id) in params.ids().enumerate() {
        if grads[i].shape() != params.get(id).shape() || state.m[i].shape() != params.get(id).shape() {
            return Err(NeuralError::Shape(format!("gradient for `{}` has shape {:?}", params.name(id), grads[i].shape())));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for (i, id) in ids.into_iter().enumerate() {
        let p = params.get_mut(id).data_mut();
        let (m, v, g) = (state.m[i].data_mut(), state.v[i].data_mut(), grads[i].data());
        for k in 0..p.len() {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
            let mhat = m[k] / c1;
            let vhat = v[k] / c2;
            p[k] -= state.learning_rate * mhat / (vhat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(p: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Tensor::scalar(p));
        s
    }

    #[test]
    fn zero_gradients_leave_parameters() {
        let mut s = scalar_store(0.7);
        let mut st = OptimizerState::new(0.1, &s);
        adam_step(&mut st, &mut s, &[Tensor::scalar(0.0)]).unwrap();
        assert_eq!(s.tensors()[0].item(), 0.7);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = scalar_store(0.0);
        let mut st = OptimizerState::new(0.1, &s);
        adam_step(&mut st, &mut s, &[Tensor::scalar(1.0)]).unwrap();
        // m̂ = 1, v̂ = 1, so the move is lr / (1 + ε).
        assert!((s.tensors()[0].item() + 0.1).abs() < 1e-8);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let target = 1.7;
        let mut s = scalar_store(-2.0);
        let mut st = OptimizerState::new(0.05, &s);
        let mut steps = 0;
        while (s.tensors()[0].item() - target).abs() >= 1e-3 && steps < 500 {
            let g = 2.0 * (s.tensors()[0].item() - target);
            adam_step(&mut st, &mut s, &[Tensor::scalar(g)]).unwrap();
            steps += 1;
        }
        assert!(steps < 500, "not converged: {}", s.tensors()[0].item());
    }

    #[test]
    fn shape_mismatch() {
        let mut s = scalar_store(0.0);
        let mut st = OptimizerState::new(0.1, &s);
        assert!(adam_step(&mut st, &mut s, &[Tensor::zeros(1, 2)]).is_err());
        assert!(adam_step(&mut st, &mut s, &[]).is_err());
        assert_eq!(st.step, 0);
    }
}
