use super::ops::{affine, affine_backward};
use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::Result;
use crate::scalar::Real;

/// A map with an analytic vector-Jacobian product.
pub trait DifferentiableMap<T: Real> {
    fn forward(&self, params: &ParamSet<T>, input: &Tensor<T>) -> Result<Tensor<T>>;

    /// Returns gradients of `upstream · forward(params, input)` wrt params and input.
    fn backward(
        &self,
        params: &ParamSet<T>,
        input: &Tensor<T>,
        upstream: &Tensor<T>,
    ) -> Result<(ParamSet<T>, Tensor<T>)>;
}

/// Fixed, non-symmetric projection weights used to scalarize vector outputs.
fn probe_weights<T: Real>(n: usize) -> Vec<T> {
    (0..n)
        .map(|k| T::of(0.5 + ((k as f64 + 1.0) * 0.618_033_988_749_895).fract()))
        .collect()
}

/// Worst coordinate error of one parameter tensor, relative to the largest
/// numeric gradient in that tensor.
fn group_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let e = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0f64, |m, v| if v.is_nan() || m.is_nan() { f64::NAN } else { m.max(v) })
        / scale;
    if e.is_nan() || numeric.iter().any(|v| !v.is_finite()) {
        f64::INFINITY
    } else {
        e
    }
}

/// Central-difference gradient check over every parameter and input
/// coordinate. Errors are measured per parameter tensor (and for the
/// input as a whole) against that tensor's largest numeric gradient; the
/// maximum over tensors is returned. Non-finite outputs report `+∞`.
pub fn finite_difference_check<T: Real, M: DifferentiableMap<T> + ?Sized>(
    map: &M,
    params: &ParamSet<T>,
    input: &Tensor<T>,
    eps: T,
) -> f64 {
    check_inner(map, params, input, eps).unwrap_or(f64::INFINITY)
}

fn check_inner<T: Real, M: DifferentiableMap<T> + ?Sized>(
    map: &M,
    params: &ParamSet<T>,
    input: &Tensor<T>,
    eps: T,
) -> Result<f64> {
    let out = map.forward(params, input)?;
    if !out.is_finite() {
        return Ok(f64::INFINITY);
    }
    let weights = probe_weights::<T>(out.len());
    let upstream = Tensor::new(out.shape().to_vec(), weights.clone())?;
    let (pgrad, igrad) = map.backward(params, input, &upstream)?;
    // Differences are taken per output before weighting to limit cancellation.
    let weighted_diff = |plus: &Tensor<T>, minus: &Tensor<T>| -> f64 {
        plus.data()
            .iter()
            .zip(minus.data())
            .zip(&weights)
            .map(|((&p, &m), &w)| (p - m).as_f64() * w.as_f64())
            .sum()
    };
    let two_eps = 2.0 * eps.as_f64();
    let mut worst: f64 = 0.0;

    pgrad.check_compatible(params, "gradient check")?;
    let base = params.flatten();
    let analytic: Vec<f64> = pgrad.flatten().iter().map(|v| v.as_f64()).collect();
    let mut numeric = Vec::with_capacity(base.len());
    let mut probe = params.clone();
    for (k, &v) in base.iter().enumerate() {
        probe.set_flat(k, v + eps);
        let plus = map.forward(&probe, input)?;
        probe.set_flat(k, v - eps);
        let minus = map.forward(&probe, input)?;
        probe.set_flat(k, v);
        numeric.push(weighted_diff(&plus, &minus) / two_eps);
    }
    let mut offset = 0;
    for (_, t) in params.iter() {
        let range = offset..offset + t.len();
        worst = worst.max(group_error(&analytic[range.clone()], &numeric[range]));
        offset += t.len();
    }

    if igrad.len() == input.len() {
        let mut x = input.clone();
        let mut numeric = Vec::with_capacity(input.len());
        for k in 0..input.len() {
            let v = input.data()[k];
            x.data_mut()[k] = v + eps;
            let plus = map.forward(params, &x)?;
            x.data_mut()[k] = v - eps;
            let minus = map.forward(params, &x)?;
            x.data_mut()[k] = v;
            numeric.push(weighted_diff(&plus, &minus) / two_eps);
        }
        let analytic: Vec<f64> = igrad.data().iter().map(|v| v.as_f64()).collect();
        worst = worst.max(group_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// `W x + b` with parameters `weight` and `bias`.
#[derive(Debug, Clone, Copy, Default)]
pub struct AffineMap;

impl<T: Real> DifferentiableMap<T> for AffineMap {
    fn forward(&self, params: &ParamSet<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        affine(params.get("weight")?, params.get("bias")?, input)
    }

    fn backward(
        &self,
        params: &ParamSet<T>,
        input: &Tensor<T>,
        upstream: &Tensor<T>,
    ) -> Result<(ParamSet<T>, Tensor<T>)> {
        let g = affine_backward(params.get("weight")?, params.get("bias")?, input, upstream)?;
        let grads = ParamSet::new().with("weight", g.weight)?.with("bias", g.bias)?;
        Ok((grads, g.input))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct ConstantMap;

    impl DifferentiableMap<f64> for ConstantMap {
        fn forward(&self, _: &ParamSet<f64>, _: &Tensor<f64>) -> Result<Tensor<f64>> {
            Ok(Tensor::vector(vec![4.0, -2.0]))
        }
        fn backward(
            &self,
            params: &ParamSet<f64>,
            input: &Tensor<f64>,
            _: &Tensor<f64>,
        ) -> Result<(ParamSet<f64>, Tensor<f64>)> {
            Ok((params.zeros_like(), Tensor::zeros(input.shape())))
        }
    }

    struct NanMap;

    impl DifferentiableMap<f64> for NanMap {
        fn forward(&self, _: &ParamSet<f64>, _: &Tensor<f64>) -> Result<Tensor<f64>> {
            Ok(Tensor::vector(vec![f64::NAN]))
        }
        fn backward(
            &self,
            params: &ParamSet<f64>,
            input: &Tensor<f64>,
            _: &Tensor<f64>,
        ) -> Result<(ParamSet<f64>, Tensor<f64>)> {
            Ok((params.zeros_like(), Tensor::zeros(input.shape())))
        }
    }

    fn params() -> ParamSet<f64> {
        ParamSet::new()
            .with("weight", Tensor::matrix(2, 3, vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4]).unwrap())
            .unwrap()
            .with("bias", Tensor::vector(vec![0.5, -0.25]))
            .unwrap()
    }

    #[test]
    fn affine_passes() {
        let x = Tensor::vector(vec![0.9, -0.3, 1.7]);
        assert!(finite_difference_check(&AffineMap, &params(), &x, 1e-6) <= 1e-5);
    }

    #[test]
    fn constant_map_is_exact() {
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]);
        assert_eq!(finite_difference_check(&ConstantMap, &params(), &x, 1e-6), 0.0);
    }

    #[test]
    fn nan_output_reports_infinity() {
        let x = Tensor::vector(vec![1.0]);
        assert_eq!(finite_difference_check(&NanMap, &params(), &x, 1e-6), f64::INFINITY);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        struct Broken;
        impl DifferentiableMap<f64> for Broken {
            fn forward(&self, p: &ParamSet<f64>, x: &Tensor<f64>) -> Result<Tensor<f64>> {
                AffineMap.forward(p, x)
            }
            fn backward(
                &self,
                p: &ParamSet<f64>,
                x: &Tensor<f64>,
                u: &Tensor<f64>,
            ) -> Result<(ParamSet<f64>, Tensor<f64>)> {
                let (mut g, dx) = AffineMap.backward(p, x, u)?;
                g.scale(1.01);
                Ok((g, dx))
            }
        }
        let x = Tensor::vector(vec![0.9, -0.3, 1.7]);
        assert!(finite_difference_check(&Broken, &params(), &x, 1e-6) > 1e-3);
    }
}
