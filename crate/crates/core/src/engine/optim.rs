use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// `params − eta · grads`; inputs are left untouched.
pub fn sgd_step<T: Real>(params: &ParamSet<T>, grads: &ParamSet<T>, eta: T) -> Result<ParamSet<T>> {
    if eta < T::zero() {
        return Err(Error::Config(format!("learning rate must be >= 0, got {eta}")));
    }
    let mut out = params.clone();
    out.axpy(-eta, grads)?;
    Ok(out)
}

/// Adam moment accumulators for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step_count: u64,
    pub first_moment: ParamSet<T>,
    pub second_moment: ParamSet<T>,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Real> AdamState<T> {
    /// Fresh state with the usual defaults (0.9, 0.999, 1e-8).
    pub fn new(like: &ParamSet<T>) -> Self {
        Self::with_betas(like, T::of(0.9), T::of(0.999), T::of(1e-8))
    }

    pub fn with_betas(like: &ParamSet<T>, beta1: T, beta2: T, epsilon: T) -> Self {
        Self {
            step_count: 0,
            first_moment: like.zeros_like(),
            second_moment: like.zeros_like(),
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn reset(&mut self) {
        self.step_count = 0;
        self.first_moment = self.first_moment.zeros_like();
        self.second_moment = self.second_moment.zeros_like();
    }
}

/// One bias-corrected Adam update. Returns the new parameters and state.
pub fn adam_step<T: Real>(
    params: &ParamSet<T>,
    grads: &ParamSet<T>,
    state: &AdamState<T>,
    eta: T,
) -> Result<(ParamSet<T>, AdamState<T>)> {
    params.check_compatible(grads, "adam grads")?;
    params.check_compatible(&state.first_moment, "adam state")?;
    let mut next = state.clone();
    next.step_count += 1;
    let t = next.step_count as i32;
    let bc1 = T::one() - state.beta1.powi(t);
    let bc2 = T::one() - state.beta2.powi(t);
    let mut out = params.clone();
    let moments = next
        .first_moment
        .iter_mut()
        .zip(next.second_moment.iter_mut());
    for (((_, p), (_, g)), ((_, m), (_, v))) in out.iter_mut().zip(grads.iter()).zip(moments) {
        let p = p.data_mut();
        let (m, v) = (m.data_mut(), v.data_mut());
        for (k, &gk) in g.data().iter().enumerate() {
            m[k] = state.beta1 * m[k] + (T::one() - state.beta1) * gk;
            v[k] = state.beta2 * v[k] + (T::one() - state.beta2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= eta * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok((out, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Tensor;

    fn scalar(name: &str, v: f64) -> ParamSet<f64> {
        ParamSet::new().with(name, Tensor::scalar(v)).unwrap()
    }

    #[test]
    fn sgd_cases() {
        let p = scalar("w", 1.0);
        let g = scalar("w", 2.0);
        assert_eq!(sgd_step(&p, &g, 0.0).unwrap(), p);
        assert_eq!(sgd_step(&p, &g, 0.5).unwrap().flatten(), vec![0.0]);
        let twice = sgd_step(&sgd_step(&p, &g, 0.25).unwrap(), &g, 0.25).unwrap();
        assert_eq!(twice, sgd_step(&p, &g, 0.5).unwrap());
        assert!(sgd_step(&p, &scalar("v", 1.0), 0.1).is_err());
        assert!(sgd_step(&p, &g, -0.1).is_err());
    }

    #[test]
    fn adam_zero_grad_is_noop() {
        let p = scalar("w", 0.7);
        let st = AdamState::new(&p);
        let (q, st2) = adam_step(&p, &p.zeros_like(), &st, 0.1).unwrap();
        assert_eq!(q, p);
        assert_eq!(st2.step_count, 1);
    }

    #[test]
    fn adam_first_step_closed_form() {
        let p = scalar("w", 0.0);
        let g = scalar("w", 1.0);
        let (q, _) = adam_step(&p, &g, &AdamState::new(&p), 0.1).unwrap();
        assert!((q.flatten()[0] + 0.1).abs() <= 1e-9);
        let g = scalar("w", -3.0);
        let (q, _) = adam_step(&p, &g, &AdamState::new(&p), 0.1).unwrap();
        assert!(q.flatten()[0] > 0.0);
    }

    #[test]
    fn adam_shape_mismatch() {
        let p = scalar("w", 0.0);
        assert!(adam_step(&p, &scalar("b", 1.0), &AdamState::new(&p), 0.1).is_err());
    }
}
