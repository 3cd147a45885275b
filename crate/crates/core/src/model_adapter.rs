//! Model adapter: slow weights `φ` and the one-step lower-level fine-tune.

use crate::engine::{sgd_step, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::models::ForecastModel;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelAdapter<T> {
    /// Meta-initialization shared by every task.
    pub phi: ParamSet<T>,
    pub eta_theta: T,
    /// Number of plain gradient steps in the inner update.
    pub inner_steps: usize,
}

impl<T: Real> ModelAdapter<T> {
    pub fn new(phi: ParamSet<T>, eta_theta: T) -> Result<Self> {
        if !(eta_theta >= T::zero()) {
            return Err(Error::Config(format!("eta_theta must be >= 0, got {eta_theta}")));
        }
        Ok(Self {
            phi,
            eta_theta,
            inner_steps: 1,
        })
    }

    pub fn with_inner_steps(mut self, steps: usize) -> Self {
        self.inner_steps = steps;
        self
    }

    /// `θ = φ − η_θ ∇_φ L_train` on the (adapted) incremental data. Returns
    /// the task weights and the training loss evaluated at `φ`; `φ` itself
    /// is not modified.
    pub fn lower_level_update<M: ForecastModel<T> + ?Sized>(
        &self,
        model: &M,
        x: &Tensor<T>,
        y: &[T],
    ) -> Result<(ParamSet<T>, T)> {
        fine_tune(model, &self.phi, x, y, self.eta_theta, self.inner_steps)
    }
}

/// `steps` plain gradient steps from `start`; returns the final weights and
/// the loss before the first step.
pub fn fine_tune<T: Real, M: ForecastModel<T> + ?Sized>(
    model: &M,
    start: &ParamSet<T>,
    x: &Tensor<T>,
    y: &[T],
    eta: T,
    steps: usize,
) -> Result<(ParamSet<T>, T)> {
    if y.is_empty() {
        return Err(Error::EmptyBatch("lower_level_update".into()));
    }
    let (first_loss, grads) = model.loss_and_grads(start, x, y)?;
    if steps == 0 {
        return Ok((start.clone(), first_loss));
    }
    let mut theta = sgd_step(start, &grads, eta)?;
    for _ in 1..steps {
        let (_, g) = model.loss_and_grads(&theta, x, y)?;
        theta = sgd_step(&theta, &g, eta)?;
    }
    Ok((theta, first_loss))
}
