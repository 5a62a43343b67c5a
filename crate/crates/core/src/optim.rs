//! Adam with bias correction.

use crate::nn::ParamSet;
use crate::tensor::{Scalar, Tensor, TensorError};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// First moments, one per parameter in [`ParamSet`] order.
    pub m: Vec<Tensor<T>>,
    /// Second moments, one per parameter in [`ParamSet`] order.
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One Adam update. Parameters whose gradient is `None` are skipped
/// entirely, moments included.
pub fn adam_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &[Option<Tensor<T>>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<(), TensorError> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(TensorError::InvalidArgument {
            op: "adam_step",
            detail: format!(
                "{} parameters, {} gradients, {} moment pairs",
                params.len(),
                grads.len(),
                state.m.len().min(state.v.len())
            ),
        });
    }
    for (id, g) in params.ids().zip(grads) {
        let i = id.index();
        let shape = params.get(id).shape();
        if state.m[i].shape() != shape || state.v[i].shape() != shape {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step (moments)",
                lhs: shape,
                rhs: state.m[i].shape(),
            });
        }
        if let Some(g) = g {
            if g.shape() != shape {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step (gradient)",
                    lhs: shape,
                    rhs: g.shape(),
                });
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (id, g) in params.ids().zip(grads) {
        let Some(g) = g else { continue };
        let i = id.index();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = params.get_mut(id).data_mut();
        for k in 0..p.len() {
            let gk = g.data()[k].as_f64();
            let mk = b1 * m[k].as_f64() + (1.0 - b1) * gk;
            let vk = b2 * v[k].as_f64() + (1.0 - b2) * gk * gk;
            m[k] = T::of_f64(mk);
            v[k] = T::of_f64(vk);
            let update = lr * (mk / c1) / ((vk / c2).sqrt() + state.eps);
            p[k] = T::of_f64(p[k].as_f64() - update);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(values: &[f64]) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.add("w", Tensor::from_f64([1, 1, 1, values.len()], values).unwrap());
        p
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        let mut params = one_param(&[1.0, -2.0, 0.5]);
        let mut state = AdamState::new(&params);
        let g = [0.3, -1e-3, 4.0];
        let grads = vec![Some(Tensor::from_f64([1, 1, 1, 3], &g).unwrap())];
        let lr = 5e-4;
        adam_step(&mut params, &grads, &mut state, lr).unwrap();
        let start = [1.0, -2.0, 0.5];
        for k in 0..3 {
            // m̂ = g and v̂ = g² after one step
            let m_hat = (0.1 * g[k]) / 0.1;
            let v_hat = (0.001 * g[k] * g[k]) / (1.0 - 0.999);
            let want = start[k] - lr * m_hat / (v_hat.sqrt() + 1e-8);
            let got = params.get(params.find("w").unwrap()).data()[k];
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut params = one_param(&[1.0, 2.0]);
        let before = params.clone();
        let mut state = AdamState::new(&params);
        let zero = vec![Some(Tensor::zeros([1, 1, 1, 2]))];
        adam_step(&mut params, &zero, &mut state, 1e-3).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn missing_gradient_skips_parameter_and_moments() {
        let mut params = one_param(&[1.0, 2.0]);
        let mut state = AdamState::new(&params);
        let g = vec![Some(Tensor::from_f64([1, 1, 1, 2], &[1.0, 1.0]).unwrap())];
        adam_step(&mut params, &g, &mut state, 1e-3).unwrap();
        let (p, m) = (params.clone(), state.m.clone());
        adam_step(&mut params, &[None], &mut state, 1e-3).unwrap();
        assert_eq!(params, p);
        assert_eq!(state.m, m);
    }

    #[test]
    fn zero_learning_rate_is_exact_identity() {
        let mut params = ParamSet::<f32>::new();
        params.add("w", Tensor::from_vec([1, 1, 1, 3], vec![0.1, -3.7, 1e-9]).unwrap());
        let before = params.clone();
        let mut state = AdamState::new(&params);
        let g = vec![Some(Tensor::from_vec([1, 1, 1, 3], vec![5.0, -0.2, 1.0]).unwrap())];
        for _ in 0..3 {
            adam_step(&mut params, &g, &mut state, 0.0).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn rejects_mismatched_gradients() {
        let mut params = one_param(&[1.0, 2.0]);
        let mut state = AdamState::new(&params);
        let bad = vec![Some(Tensor::zeros([1, 1, 1, 3]))];
        assert!(adam_step(&mut params, &bad, &mut state, 1e-3).is_err());
        assert!(adam_step(&mut params, &[], &mut state, 1e-3).is_err());
        assert_eq!(state.step, 0);
    }
}
