use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_input, uniform_tensor, ForecastModel};
use crate::engine::{affine_into, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Fully connected network `[D, h₁, …, 1]` with tanh hidden activations and
/// a linear output unit. Parameters are `layer{l}.weight: [out × in]` and
/// `layer{l}.bias: [out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpModel {
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
}

fn default_hidden() -> Vec<usize> {
    vec![32]
}

impl MlpModel {
    pub fn new(input_dim: usize, hidden: Vec<usize>) -> Self {
        Self { input_dim, hidden }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(self.input_dim);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(1);
        sizes
    }

    pub fn num_params(&self) -> usize {
        self.layer_sizes().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layers<'a, T: Real>(&self, params: &'a ParamSet<T>) -> Result<Vec<(&'a [T], &'a [T])>> {
        let sizes = self.layer_sizes();
        let mut out = Vec::with_capacity(sizes.len() - 1);
        for (l, w) in sizes.windows(2).enumerate() {
            let weight = params.get(&format!("layer{l}.weight"))?;
            let bias = params.get(&format!("layer{l}.bias"))?;
            if weight.shape() != [w[1], w[0]] || bias.len() != w[1] {
                return Err(Error::dims(format!("mlp layer {l}"), weight.shape(), &[w[1], w[0]]));
            }
            out.push((weight.data(), bias.data()));
        }
        Ok(out)
    }

    /// Activations per layer for one input row (index 0 is the input).
    fn activations<T: Real>(&self, layers: &[(&[T], &[T])], x: &[T]) -> Vec<Vec<T>> {
        let sizes = self.layer_sizes();
        let last = layers.len() - 1;
        let mut acts = Vec::with_capacity(layers.len() + 1);
        acts.push(x.to_vec());
        for (l, (w, b)) in layers.iter().enumerate() {
            let mut z = vec![T::zero(); sizes[l + 1]];
            affine_into(w, b, &acts[l], sizes[l], &mut z);
            if l != last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }
}

impl<T: Real> ForecastModel<T> for MlpModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn init(&self, seed: u64) -> ParamSet<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (l, w) in self.layer_sizes().windows(2).enumerate() {
            let bound = 1.0 / (w[0].max(1) as f64).sqrt();
            params
                .insert(format!("layer{l}.weight"), uniform_tensor(&mut rng, &[w[1], w[0]], bound))
                .expect("fresh name");
            params
                .insert(format!("layer{l}.bias"), uniform_tensor(&mut rng, &[w[1]], bound))
                .expect("fresh name");
        }
        params
    }

    fn predict(&self, params: &ParamSet<T>, x: &Tensor<T>) -> Result<Vec<T>> {
        check_input(x, self.input_dim)?;
        let layers = self.layers(params)?;
        Ok((0..x.rows())
            .map(|i| self.activations(&layers, x.row(i)).last().expect("output layer")[0])
            .collect())
    }

    fn backward(
        &self,
        params: &ParamSet<T>,
        x: &Tensor<T>,
        upstream: &[T],
    ) -> Result<(ParamSet<T>, Tensor<T>)> {
        check_input(x, self.input_dim)?;
        if upstream.len() != x.rows() {
            return Err(Error::dims("mlp upstream", &[x.rows()], &[upstream.len()]));
        }
        let layers = self.layers(params)?;
        let sizes = self.layer_sizes();
        let mut grads = params.zeros_like();
        let mut dx = Tensor::zeros(x.shape());
        let last = layers.len() - 1;
        for (i, &g) in upstream.iter().enumerate() {
            let acts = self.activations(&layers, x.row(i));
            // delta holds ∂/∂z for the current layer's pre-activation.
            let mut delta = vec![g];
            for l in (0..layers.len()).rev() {
                if l != last {
                    for (d, &a) in delta.iter_mut().zip(&acts[l + 1]) {
                        *d *= T::one() - a * a;
                    }
                }
                let (n_in, input) = (sizes[l], &acts[l]);
                {
                    let gw = grads.get_mut(&format!("layer{l}.weight"))?.data_mut();
                    for (o, &d) in delta.iter().enumerate() {
                        for (j, &a) in input.iter().enumerate() {
                            gw[o * n_in + j] += d * a;
                        }
                    }
                }
                {
                    let gb = grads.get_mut(&format!("layer{l}.bias"))?.data_mut();
                    for (b, &d) in gb.iter_mut().zip(&delta) {
                        *b += d;
                    }
                }
                let w = layers[l].0;
                let mut prev = vec![T::zero(); n_in];
                for (o, &d) in delta.iter().enumerate() {
                    for (j, p) in prev.iter_mut().enumerate() {
                        *p += w[o * n_in + j] * d;
                    }
                }
                delta = prev;
            }
            dx.row_mut(i).copy_from_slice(&delta);
        }
        Ok((grads, dx))
    }
}
