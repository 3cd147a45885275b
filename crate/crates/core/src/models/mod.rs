//! Differentiable forecast models `F(x; θ)` shared by every learning method.

mod linear;
mod mlp;

pub use linear::LinearModel;
pub use mlp::MlpModel;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{mse, mse_backward, DifferentiableMap, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub trait ForecastModel<T: Real>: Send + Sync {
    fn input_dim(&self) -> usize;

    /// Seeded initialization, uniform in `±1/√fan_in`.
    fn init(&self, seed: u64) -> ParamSet<T>;

    /// One prediction per row of `x: [S × D]`.
    fn predict(&self, params: &ParamSet<T>, x: &Tensor<T>) -> Result<Vec<T>>;

    /// Vector-Jacobian product of `predict` for `upstream: [S]`; returns
    /// parameter gradients and the gradient wrt `x`.
    fn backward(
        &self,
        params: &ParamSet<T>,
        x: &Tensor<T>,
        upstream: &[T],
    ) -> Result<(ParamSet<T>, Tensor<T>)>;

    fn loss_and_grads(&self, params: &ParamSet<T>, x: &Tensor<T>, y: &[T]) -> Result<(T, ParamSet<T>)> {
        let (loss, grads, _) = self.loss_and_full_grads(params, x, y)?;
        Ok((loss, grads))
    }

    /// MSE loss with gradients wrt both parameters and inputs.
    fn loss_and_full_grads(
        &self,
        params: &ParamSet<T>,
        x: &Tensor<T>,
        y: &[T],
    ) -> Result<(T, ParamSet<T>, Tensor<T>)> {
        if y.is_empty() || x.rows() == 0 {
            return Err(Error::EmptyBatch("loss_and_grads".into()));
        }
        if x.rows() != y.len() {
            return Err(Error::dims("features/labels", x.shape(), &[y.len()]));
        }
        let pred = self.predict(params, x)?;
        let loss = mse(&pred, y)?;
        let upstream = mse_backward(&pred, y)?;
        let (grads, dx) = self.backward(params, x, &upstream)?;
        Ok((loss, grads, dx))
    }
}

pub(crate) fn check_input<T: Real>(x: &Tensor<T>, dim: usize) -> Result<()> {
    if x.shape().len() != 2 || x.cols() != dim {
        return Err(Error::dims("model input", x.shape(), &[x.rows(), dim]));
    }
    Ok(())
}

pub(crate) fn uniform_tensor<T: Real>(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(-bound..=bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// Backbone selection used by configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backbone {
    Linear(LinearModel),
    Mlp(MlpModel),
}

impl<T: Real> ForecastModel<T> for Backbone {
    fn input_dim(&self) -> usize {
        match self {
            Backbone::Linear(m) => ForecastModel::<T>::input_dim(m),
            Backbone::Mlp(m) => ForecastModel::<T>::input_dim(m),
        }
    }

    fn init(&self, seed: u64) -> ParamSet<T> {
        match self {
            Backbone::Linear(m) => m.init(seed),
            Backbone::Mlp(m) => m.init(seed),
        }
    }

    fn predict(&self, params: &ParamSet<T>, x: &Tensor<T>) -> Result<Vec<T>> {
        match self {
            Backbone::Linear(m) => m.predict(params, x),
            Backbone::Mlp(m) => m.predict(params, x),
        }
    }

    fn backward(
        &self,
        params: &ParamSet<T>,
        x: &Tensor<T>,
        upstream: &[T],
    ) -> Result<(ParamSet<T>, Tensor<T>)> {
        match self {
            Backbone::Linear(m) => m.backward(params, x, upstream),
            Backbone::Mlp(m) => m.backward(params, x, upstream),
        }
    }
}

/// Exposes a forecast model as a [`DifferentiableMap`] over a feature batch.
pub struct ModelMap<'a, M: ?Sized>(pub &'a M);

impl<T: Real, M: ForecastModel<T> + ?Sized> DifferentiableMap<T> for ModelMap<'_, M> {
    fn forward(&self, params: &ParamSet<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(Tensor::vector(self.0.predict(params, input)?))
    }

    fn backward(
        &self,
        params: &ParamSet<T>,
        input: &Tensor<T>,
        upstream: &Tensor<T>,
    ) -> Result<(ParamSet<T>, Tensor<T>)> {
        self.0.backward(params, input, upstream.data())
    }
}

/// The MSE training loss as a scalar [`DifferentiableMap`] with fixed labels.
pub struct LossMap<'a, M: ?Sized, T> {
    pub model: &'a M,
    pub labels: &'a [T],
}

impl<T: Real, M: ForecastModel<T> + ?Sized> DifferentiableMap<T> for LossMap<'_, M, T> {
    fn forward(&self, params: &ParamSet<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        let pred = self.model.predict(params, input)?;
        Ok(Tensor::scalar(mse(&pred, self.labels)?))
    }

    fn backward(
        &self,
        params: &ParamSet<T>,
        input: &Tensor<T>,
        upstream: &Tensor<T>,
    ) -> Result<(ParamSet<T>, Tensor<T>)> {
        let (_, mut g, mut dx) = self.model.loss_and_full_grads(params, input, self.labels)?;
        let u = upstream.data()[0];
        g.scale(u);
        dx.data_mut().iter_mut().for_each(|v| *v *= u);
        Ok((g, dx))
    }
}
