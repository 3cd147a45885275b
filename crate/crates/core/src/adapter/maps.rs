//! [`DifferentiableMap`] views of the adapter, used for gradient verification.

use super::DataAdapter;
use crate::engine::{DifferentiableMap, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

fn split_last<T: Real>(input: &Tensor<T>, dim: usize) -> Result<(&[T], T)> {
    if input.len() != dim + 1 {
        return Err(Error::dims("adapter map input", input.shape(), &[dim + 1]));
    }
    Ok((&input.data()[..dim], input.data()[dim]))
}

/// `x: [d] ↦ s(x): [N]`.
pub struct FeatureGateMap<'a, T>(pub &'a DataAdapter<T>);

impl<T: Real> DifferentiableMap<T> for FeatureGateMap<'_, T> {
    fn forward(&self, psi: &ParamSet<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(Tensor::vector(self.0.gate_scores(psi, input.data())?))
    }

    fn backward(&self, psi: &ParamSet<T>, input: &Tensor<T>, up: &Tensor<T>) -> Result<(ParamSet<T>, Tensor<T>)> {
        let (g, dx) = self.0.gate_scores_backward(psi, input.data(), up.data())?;
        Ok((g, Tensor::vector(dx)))
    }
}

/// `x: [D] ↦ G(x): [D]`.
pub struct FeatureAdapterMap<'a, T>(pub &'a DataAdapter<T>);

impl<T: Real> DifferentiableMap<T> for FeatureAdapterMap<'_, T> {
    fn forward(&self, psi: &ParamSet<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(Tensor::vector(self.0.adapt_feature(psi, input.data())?))
    }

    fn backward(&self, psi: &ParamSet<T>, input: &Tensor<T>, up: &Tensor<T>) -> Result<(ParamSet<T>, Tensor<T>)> {
        let (g, dx) = self.0.adapt_feature_backward(psi, input.data(), up.data())?;
        Ok((g, Tensor::vector(dx)))
    }
}

/// `z: [D] ↦ s′(z): [N]`.
pub struct LabelGateMap<'a, T>(pub &'a DataAdapter<T>);

impl<T: Real> DifferentiableMap<T> for LabelGateMap<'_, T> {
    fn forward(&self, psi: &ParamSet<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(Tensor::vector(self.0.label_gate_scores(psi, input.data())?))
    }

    fn backward(&self, psi: &ParamSet<T>, input: &Tensor<T>, up: &Tensor<T>) -> Result<(ParamSet<T>, Tensor<T>)> {
        let (g, dz) = self.0.label_gate_backward(psi, input.data(), up.data())?;
        Ok((g, Tensor::vector(dz)))
    }
}

/// `[z, y] ↦ H(z, y)`.
pub struct LabelAdapterMap<'a, T>(pub &'a DataAdapter<T>);

impl<T: Real> DifferentiableMap<T> for LabelAdapterMap<'_, T> {
    fn forward(&self, psi: &ParamSet<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (z, y) = split_last(input, self.0.feature_dim())?;
        Ok(Tensor::scalar(self.0.adapt_label(psi, z, y)?))
    }

    fn backward(&self, psi: &ParamSet<T>, input: &Tensor<T>, up: &Tensor<T>) -> Result<(ParamSet<T>, Tensor<T>)> {
        let (z, y) = split_last(input, self.0.feature_dim())?;
        let mut acc = self.0.accumulator(psi)?;
        let mut dz = acc.label_backward(z, y, up.data()[0]);
        // ∂H/∂y = Σ s′ᵢ γᵢ
        let s = self.0.label_gate_scores(psi, z)?;
        let gamma = psi.get(super::LABEL_GAMMA)?.data();
        let dy: T = s.iter().zip(gamma).map(|(&a, &b)| a * b).sum::<T>() * up.data()[0];
        dz.push(dy);
        Ok((acc.finish(), Tensor::vector(dz)))
    }
}

/// `[z, y̌] ↦ H⁻¹(z, y̌)`.
pub struct InversionMap<'a, T>(pub &'a DataAdapter<T>);

impl<T: Real> DifferentiableMap<T> for InversionMap<'_, T> {
    fn forward(&self, psi: &ParamSet<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (z, yc) = split_last(input, self.0.feature_dim())?;
        Ok(Tensor::scalar(self.0.invert_prediction(psi, z, yc)?))
    }

    fn backward(&self, psi: &ParamSet<T>, input: &Tensor<T>, up: &Tensor<T>) -> Result<(ParamSet<T>, Tensor<T>)> {
        let (z, yc) = split_last(input, self.0.feature_dim())?;
        let mut acc = self.0.accumulator(psi)?;
        let (mut dz, dy) = acc.invert_backward(z, yc, up.data()[0]);
        dz.push(dy);
        Ok((acc.finish(), Tensor::vector(dz)))
    }
}

/// Whole adapter path on one sample:
/// `x ↦ [G(x), H(G(x), y), H⁻¹(G(x), y̌)]` for fixed `y`, `y̌`.
pub struct FullAdapterMap<'a, T> {
    pub adapter: &'a DataAdapter<T>,
    pub label: T,
    pub prediction: T,
}

impl<T: Real> DifferentiableMap<T> for FullAdapterMap<'_, T> {
    fn forward(&self, psi: &ParamSet<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut z = self.adapter.adapt_feature(psi, input.data())?;
        let h = self.adapter.adapt_label(psi, &z, self.label)?;
        let inv = self.adapter.invert_prediction(psi, &z, self.prediction)?;
        z.push(h);
        z.push(inv);
        Ok(Tensor::vector(z))
    }

    fn backward(&self, psi: &ParamSet<T>, input: &Tensor<T>, up: &Tensor<T>) -> Result<(ParamSet<T>, Tensor<T>)> {
        let d = self.adapter.feature_dim();
        let x = input.data();
        let mut acc = self.adapter.accumulator(psi)?;
        let z = acc.adapt_feature(x);
        let mut dz = up.data()[..d].to_vec();
        let dz_h = acc.label_backward(&z, self.label, up.data()[d]);
        let (dz_inv, _) = acc.invert_backward(&z, self.prediction, up.data()[d + 1]);
        for k in 0..d {
            dz[k] += dz_h[k] + dz_inv[k];
        }
        let psi_grads_partial = acc.finish();
        // Backprop dz through G with a fresh accumulator, then merge.
        let (g_feat, dx) = self.adapter.adapt_feature_backward(psi, x, &dz)?;
        let mut total = psi_grads_partial;
        total.axpy(T::one(), &g_feat)?;
        Ok((total, Tensor::vector(dx)))
    }
}
