use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_input, uniform_tensor, ForecastModel};
use crate::engine::{dot, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// `F(x) = wᵀx + b` with parameters `weight: [D]` and `bias: [1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearModel {
    pub input_dim: usize,
}

impl LinearModel {
    pub fn new(input_dim: usize) -> Self {
        Self { input_dim }
    }
}

impl<T: Real> ForecastModel<T> for LinearModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn init(&self, seed: u64) -> ParamSet<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (self.input_dim.max(1) as f64).sqrt();
        ParamSet::new()
            .with("weight", uniform_tensor(&mut rng, &[self.input_dim], bound))
            .and_then(|p| p.with("bias", uniform_tensor(&mut rng, &[1], bound)))
            .expect("fresh names")
    }

    fn predict(&self, params: &ParamSet<T>, x: &Tensor<T>) -> Result<Vec<T>> {
        check_input(x, self.input_dim)?;
        let w = params.get("weight")?;
        if w.len() != self.input_dim {
            return Err(Error::dims("linear weight", w.shape(), &[self.input_dim]));
        }
        let b = params.get("bias")?.data()[0];
        Ok((0..x.rows()).map(|i| dot(w.data(), x.row(i)) + b).collect())
    }

    fn backward(
        &self,
        params: &ParamSet<T>,
        x: &Tensor<T>,
        upstream: &[T],
    ) -> Result<(ParamSet<T>, Tensor<T>)> {
        check_input(x, self.input_dim)?;
        if upstream.len() != x.rows() {
            return Err(Error::dims("linear upstream", &[x.rows()], &[upstream.len()]));
        }
        let w = params.get("weight")?.data();
        let mut dw = vec![T::zero(); self.input_dim];
        let mut db = T::zero();
        let mut dx = Tensor::zeros(x.shape());
        for (i, &g) in upstream.iter().enumerate() {
            for (j, &xj) in x.row(i).iter().enumerate() {
                dw[j] += g * xj;
            }
            db += g;
            for (d, &wj) in dx.row_mut(i).iter_mut().zip(w) {
                *d = g * wj;
            }
        }
        let grads = ParamSet::new()
            .with("weight", Tensor::vector(dw))?
            .with("bias", Tensor::scalar(db))?;
        Ok((grads, dx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(w: Vec<f64>, b: f64) -> ParamSet<f64> {
        ParamSet::new()
            .with("weight", Tensor::vector(w))
            .unwrap()
            .with("bias", Tensor::scalar(b))
            .unwrap()
    }

    #[test]
    fn predict_cases() {
        let m = LinearModel::new(2);
        let x = Tensor::from_rows(&[vec![2.0, 5.0], vec![-1.0, 3.0]]).unwrap();
        assert_eq!(m.predict(&params(vec![0.0, 0.0], 0.0), &x).unwrap(), vec![0.0, 0.0]);
        let x = Tensor::from_rows(&[vec![2.0, 5.0]]).unwrap();
        assert_eq!(m.predict(&params(vec![1.0, 0.0], 1.0), &x).unwrap(), vec![3.0]);
        let bad = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(m.predict(&params(vec![1.0, 0.0], 1.0), &bad).is_err());
    }

    #[test]
    fn scalar_loss_and_grads() {
        let m = LinearModel::new(1);
        let x = Tensor::from_rows(&[vec![1.0]]).unwrap();
        let (loss, g) = m.loss_and_grads(&params(vec![0.0], 0.0), &x, &[2.0]).unwrap();
        assert_eq!(loss, 4.0);
        assert_eq!(g.get("weight").unwrap().data(), &[-4.0]);
        assert_eq!(g.get("bias").unwrap().data(), &[-4.0]);
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let m = LinearModel::new(2);
        let p = params(vec![0.5, -1.0], 0.25);
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0]]).unwrap();
        let y = m.predict(&p, &x).unwrap();
        let (loss, g) = m.loss_and_grads(&p, &x, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn empty_batch_rejected() {
        let m = LinearModel::new(1);
        let x = Tensor::<f64>::zeros(&[0, 1]);
        assert!(matches!(
            m.loss_and_grads(&params(vec![0.0], 0.0), &x, &[]),
            Err(Error::EmptyBatch(_))
        ));
    }
}
