//! Upper-level optimization of the data adapter `ψ` and the slow weights
//! `φ` from the realized test loss, under the first-order approximation.

use serde::{Deserialize, Serialize};

use crate::adapter::DataAdapter;
use crate::engine::{adam_step, mse, mse_backward, AdamState, DifferentiableMap, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::model_adapter::ModelAdapter;
use crate::models::ForecastModel;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegMode {
    /// `L_test = L_mse + α·L_reg`.
    #[default]
    Fixed,
    /// Label-head regularizer weighted by `(L_test(φ) − L_test(θ)) / 2σ²`.
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaOptConfig {
    pub alpha: f64,
    pub eta_phi: f64,
    pub eta_psi: f64,
    pub reg_mode: RegMode,
    pub sigma: f64,
}

impl Default for MetaOptConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            eta_phi: 0.001,
            eta_psi: 0.01,
            reg_mode: RegMode::Fixed,
            sigma: 1.0,
        }
    }
}

impl MetaOptConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("eta_phi", self.eta_phi), ("eta_psi", self.eta_psi)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("meta.{name} must be a finite value >= 0")));
            }
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config("meta.sigma must be > 0".into()));
        }
        Ok(())
    }
}

/// Which parts of the data adapter take part in adaptation and learning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterUsage {
    pub features: bool,
    pub labels: bool,
}

impl AdapterUsage {
    pub const FULL: Self = Self { features: true, labels: true };
    pub const NONE: Self = Self { features: false, labels: false };

    pub fn any(self) -> bool {
        self.features || self.labels
    }
}

/// Data adapter together with its parameters and active components.
#[derive(Clone, Copy)]
pub struct AdapterRef<'a, T> {
    pub adapter: &'a DataAdapter<T>,
    pub psi: &'a ParamSet<T>,
    pub usage: AdapterUsage,
}

impl<T: Real> AdapterRef<'_, T> {
    /// `G` on every row, or the input unchanged when feature adaptation is off.
    pub fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.usage.features {
            self.adapter.adapt_features(self.psi, x)
        } else {
            Ok(x.clone())
        }
    }

    pub fn labels(&self, z: &Tensor<T>, y: &[T]) -> Result<Vec<T>> {
        if self.usage.labels {
            self.adapter.adapt_labels(self.psi, z, y)
        } else {
            Ok(y.to_vec())
        }
    }

    pub fn invert(&self, z: &Tensor<T>, ycheck: &[T]) -> Result<Vec<T>> {
        if self.usage.labels {
            self.adapter.invert_predictions(self.psi, z, ycheck)
        } else {
            Ok(ycheck.to_vec())
        }
    }
}

/// Components of the upper-level loss for one task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetaLossBreakdown<T> {
    pub l_mse: T,
    pub l_reg: T,
    pub l_test: T,
    /// Test loss of the un-adapted slow weights (adaptive mode only).
    pub l_test_at_phi: Option<T>,
}

/// A completed task as seen by the upper level: incremental data and the
/// test window with its revealed labels.
#[derive(Clone, Copy)]
pub struct TaskData<'a, T> {
    pub train_x: &'a Tensor<T>,
    pub train_y: &'a [T],
    pub test_x: &'a Tensor<T>,
    pub test_y: &'a [T],
}

#[derive(Debug, Clone)]
pub struct MetaGradients<T> {
    pub l_mse: T,
    pub l_reg: T,
    /// `∇_θ L_mse` at `θ`; applied to `φ` under the first-order approximation.
    pub theta: ParamSet<T>,
    /// `∇_ψ L_mse` with `θ` frozen (absent without an adapter).
    pub psi_mse: Option<ParamSet<T>>,
    /// `∇_ψ L_reg`.
    pub psi_reg: Option<ParamSet<T>>,
}

/// Test-window predictions `H⁻¹(G(x), F(G(x); θ))`.
pub fn predict_adapted<T: Real, M: ForecastModel<T> + ?Sized>(
    da: Option<AdapterRef<'_, T>>,
    model: &M,
    theta: &ParamSet<T>,
    x: &Tensor<T>,
) -> Result<Vec<T>> {
    match da {
        Some(da) => {
            let z = da.features(x)?;
            let ycheck = model.predict(theta, &z)?;
            da.invert(&z, &ycheck)
        }
        None => model.predict(theta, x),
    }
}

/// `L_reg = mean (H(G(x), y) − y)²` over the incremental data.
fn reg_loss<T: Real>(da: AdapterRef<'_, T>, x: &Tensor<T>, y: &[T]) -> Result<T> {
    if !da.usage.labels {
        return Ok(T::zero());
    }
    let z = da.features(x)?;
    let adapted = da.labels(&z, y)?;
    mse(&adapted, y)
}

/// Upper-level loss components for parameters `θ`.
pub fn test_loss<T: Real, M: ForecastModel<T> + ?Sized>(
    da: Option<AdapterRef<'_, T>>,
    model: &M,
    theta: &ParamSet<T>,
    task: TaskData<'_, T>,
    alpha: T,
) -> Result<MetaLossBreakdown<T>> {
    if task.test_y.is_empty() {
        return Err(Error::EmptyBatch("test_loss".into()));
    }
    let pred = predict_adapted(da, model, theta, task.test_x)?;
    let l_mse = mse(&pred, task.test_y)?;
    let l_reg = match da {
        Some(da) => reg_loss(da, task.train_x, task.train_y)?,
        None => T::zero(),
    };
    Ok(MetaLossBreakdown {
        l_mse,
        l_reg,
        l_test: l_mse + alpha * l_reg,
        l_test_at_phi: None,
    })
}

/// First-order gradients of `L_mse` (wrt `θ` and `ψ`) and of `L_reg` (wrt `ψ`).
/// No derivative flows through `θ`'s dependence on `ψ` or `φ`.
pub fn meta_gradients<T: Real, M: ForecastModel<T> + ?Sized>(
    da: Option<AdapterRef<'_, T>>,
    model: &M,
    theta: &ParamSet<T>,
    task: TaskData<'_, T>,
) -> Result<MetaGradients<T>> {
    let n = task.test_y.len();
    if n == 0 {
        return Err(Error::EmptyBatch("meta_gradients".into()));
    }
    let Some(da) = da.filter(|d| d.usage.any()) else {
        let (l_mse, theta_grads) = model.loss_and_grads(theta, task.test_x, task.test_y)?;
        let psi_zero = da.map(|d| d.psi.zeros_like());
        return Ok(MetaGradients {
            l_mse,
            l_reg: T::zero(),
            theta: theta_grads,
            psi_mse: psi_zero.clone(),
            psi_reg: psi_zero,
        });
    };
    let usage = da.usage;

    // L_mse path: x → G → F(·; θ) → H⁻¹.
    let mut acc = da.adapter.accumulator(da.psi)?;
    let x = task.test_x;
    let mut z = Tensor::zeros(x.shape());
    for i in 0..x.rows() {
        if usage.features {
            z.row_mut(i).copy_from_slice(&acc.adapt_feature(x.row(i)));
        } else {
            z.row_mut(i).copy_from_slice(x.row(i));
        }
    }
    let ycheck = model.predict(theta, &z)?;
    let yhat: Vec<T> = if usage.labels {
        (0..n).map(|i| acc.invert(z.row(i), ycheck[i])).collect()
    } else {
        ycheck.clone()
    };
    let l_mse = mse(&yhat, task.test_y)?;
    let dyhat = mse_backward(&yhat, task.test_y)?;
    let mut dz = Tensor::zeros(z.shape());
    let mut dycheck = dyhat.clone();
    if usage.labels {
        for i in 0..n {
            let (dzi, dyc) = acc.invert_backward(z.row(i), ycheck[i], dyhat[i]);
            dz.row_mut(i).copy_from_slice(&dzi);
            dycheck[i] = dyc;
        }
    }
    let (theta_grads, dz_model) = model.backward(theta, &z, &dycheck)?;
    if usage.features {
        dz.axpy(T::one(), &dz_model)?;
        for i in 0..n {
            acc.feature_backward(x.row(i), dz.row(i));
        }
    }
    let psi_mse = acc.finish();

    // L_reg path: x → G → H(·, y).
    let mut acc = da.adapter.accumulator(da.psi)?;
    let mut l_reg = T::zero();
    let m = task.train_y.len();
    if usage.labels && m > 0 {
        let scale = T::of(2.0) / T::of(m as f64);
        for i in 0..m {
            let xi = task.train_x.row(i);
            let zi = if usage.features { acc.adapt_feature(xi) } else { xi.to_vec() };
            let y = task.train_y[i];
            let r = acc.adapt_label(&zi, y) - y;
            l_reg += r * r;
            let dzi = acc.label_backward(&zi, y, scale * r);
            if usage.features {
                acc.feature_backward(xi, &dzi);
            }
        }
        l_reg /= T::of(m as f64);
    }
    let psi_reg = acc.finish();

    Ok(MetaGradients {
        l_mse,
        l_reg,
        theta: theta_grads,
        psi_mse: Some(psi_mse),
        psi_reg: Some(psi_reg),
    })
}

/// `(L_test(φ) − L_test(θ)) / 2σ²`.
pub fn adaptive_coefficient<T: Real>(loss_at_phi: T, loss_at_theta: T, sigma: T) -> T {
    (loss_at_phi - loss_at_theta) / (T::of(2.0) * sigma * sigma)
}

/// Combines the `ψ` gradient for the configured regularization mode and
/// zeroes components that are not in use.
pub fn combine_psi_gradient<T: Real>(
    adapter: &DataAdapter<T>,
    config: &MetaOptConfig,
    grads: &MetaGradients<T>,
    usage: AdapterUsage,
    adaptive_coef: Option<T>,
) -> Result<ParamSet<T>> {
    let (Some(mse_g), Some(reg_g)) = (&grads.psi_mse, &grads.psi_reg) else {
        return Err(Error::Config("data adapter gradients requested without an adapter".into()));
    };
    let mut total = mse_g.clone();
    match config.reg_mode {
        RegMode::Fixed => total.axpy(T::of(config.alpha), reg_g)?,
        RegMode::Adaptive => {
            let coef = adaptive_coef.ok_or_else(|| {
                Error::Config("adaptive regularization requires the test loss at phi".into())
            })?;
            let mut label_part = reg_g.clone();
            for (name, t) in label_part.iter_mut() {
                if !name.starts_with("label.") {
                    t.data_mut().iter_mut().for_each(|v| *v = T::zero());
                }
            }
            total.axpy(coef, &label_part)?;
        }
    }
    for (name, t) in total.iter_mut() {
        if !adapter.is_trainable(name, usage.features, usage.labels) {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
    Ok(total)
}

/// Adam step on `ψ` followed by the `γ` invertibility projection.
pub fn update_data_adapter<T: Real>(
    config: &MetaOptConfig,
    adapter: &DataAdapter<T>,
    psi: &ParamSet<T>,
    gradient: &ParamSet<T>,
    state: &mut AdamState<T>,
) -> Result<ParamSet<T>> {
    let (mut next, st) = adam_step(psi, gradient, state, T::of(config.eta_psi))?;
    adapter.project_gammas(&mut next)?;
    *state = st;
    Ok(next)
}

/// First-order MAML step: `φ ← Adam(φ, ∇_θ L_test(θ))`.
pub fn update_model_adapter<T: Real>(
    config: &MetaOptConfig,
    ma: &mut ModelAdapter<T>,
    theta_grads: &ParamSet<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    let (phi, st) = adam_step(&ma.phi, theta_grads, state, T::of(config.eta_phi))?;
    ma.phi = phi;
    *state = st;
    Ok(())
}

/// `ψ ↦ L_mse + α·L_reg` with `θ` frozen, as a scalar map for gradient checks.
pub struct FixedObjectiveMap<'a, T, M: ?Sized> {
    pub adapter: &'a DataAdapter<T>,
    pub usage: AdapterUsage,
    pub model: &'a M,
    pub theta: &'a ParamSet<T>,
    pub task: TaskData<'a, T>,
    pub alpha: T,
}

impl<T: Real, M: ForecastModel<T> + ?Sized> DifferentiableMap<T> for FixedObjectiveMap<'_, T, M> {
    fn forward(&self, psi: &ParamSet<T>, _input: &Tensor<T>) -> Result<Tensor<T>> {
        let da = AdapterRef { adapter: self.adapter, psi, usage: self.usage };
        let b = test_loss(Some(da), self.model, self.theta, self.task, self.alpha)?;
        Ok(Tensor::scalar(b.l_test))
    }

    fn backward(&self, psi: &ParamSet<T>, _input: &Tensor<T>, upstream: &Tensor<T>) -> Result<(ParamSet<T>, Tensor<T>)> {
        let da = AdapterRef { adapter: self.adapter, psi, usage: self.usage };
        let g = meta_gradients(Some(da), self.model, self.theta, self.task)?;
        let cfg = MetaOptConfig { alpha: self.alpha.as_f64(), ..MetaOptConfig::default() };
        let mut total = combine_psi_gradient(self.adapter, &cfg, &g, self.usage, None)?;
        total.scale(upstream.data()[0]);
        Ok((total, Tensor::zeros(&[0])))
    }
}
