//! Differentiable primitives with hand-written backward passes.

use super::tensor::{dot, norm, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// `W x + b` for `W: [m × n]`, `b: [m]`, `x: [n]`.
pub fn affine<T: Real>(w: &Tensor<T>, b: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = check_affine(w, b, x)?;
    let mut out = vec![T::zero(); m];
    affine_into(w.data(), b.data(), x.data(), n, &mut out);
    Ok(Tensor::vector(out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub input: Tensor<T>,
}

pub fn affine_backward<T: Real>(
    w: &Tensor<T>,
    b: &Tensor<T>,
    x: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<AffineGrads<T>> {
    let (m, n) = check_affine(w, b, x)?;
    if upstream.len() != m {
        return Err(Error::dims("affine upstream", &[m], upstream.shape()));
    }
    let g = upstream.data();
    let mut dw = vec![T::zero(); m * n];
    let mut dx = vec![T::zero(); n];
    for i in 0..m {
        for j in 0..n {
            dw[i * n + j] = g[i] * x.data()[j];
            dx[j] += w.data()[i * n + j] * g[i];
        }
    }
    Ok(AffineGrads {
        weight: Tensor::matrix(m, n, dw)?,
        bias: Tensor::vector(g.to_vec()),
        input: Tensor::vector(dx),
    })
}

fn check_affine<T: Real>(w: &Tensor<T>, b: &Tensor<T>, x: &Tensor<T>) -> Result<(usize, usize)> {
    if w.shape().len() != 2 {
        return Err(Error::dims("affine weight rank", w.shape(), &[0, 0]));
    }
    let (m, n) = (w.shape()[0], w.shape()[1]);
    if x.len() != n {
        return Err(Error::dims("affine weight/input", w.shape(), x.shape()));
    }
    if b.len() != m {
        return Err(Error::dims("affine weight/bias", w.shape(), b.shape()));
    }
    Ok((m, n))
}

/// Slice kernel: `out = W x + b` with `W` row-major `[out.len() × n]`.
pub(crate) fn affine_into<T: Real>(w: &[T], b: &[T], x: &[T], n: usize, out: &mut [T]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(&w[i * n..(i + 1) * n], x) + b[i];
    }
}

/// Cosine similarity with zero-norm inputs mapped to 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine<T> {
    pub value: T,
    /// Set when either input had zero norm.
    pub degenerate: bool,
}

pub fn cosine_similarity<T: Real>(a: &[T], b: &[T]) -> Result<Cosine<T>> {
    if a.len() != b.len() {
        return Err(Error::dims("cosine_similarity", &[a.len()], &[b.len()]));
    }
    Ok(cosine(a, b))
}

pub(crate) fn cosine<T: Real>(a: &[T], b: &[T]) -> Cosine<T> {
    let (na, nb) = (norm(a), norm(b));
    if na == T::zero() || nb == T::zero() {
        return Cosine {
            value: T::zero(),
            degenerate: true,
        };
    }
    let c = dot(a, b) / (na * nb);
    Cosine {
        value: c.max(-T::one()).min(T::one()),
        degenerate: false,
    }
}

/// Accumulates `upstream * ∂cos/∂a` into `da` and `upstream * ∂cos/∂b` into `db`.
pub(crate) fn cosine_backward_into<T: Real>(
    a: &[T],
    b: &[T],
    upstream: T,
    da: &mut [T],
    db: &mut [T],
) {
    let (na, nb) = (norm(a), norm(b));
    if na == T::zero() || nb == T::zero() {
        return;
    }
    let inv = T::one() / (na * nb);
    let c = dot(a, b) * inv;
    let (ca, cb) = (c / (na * na), c / (nb * nb));
    for k in 0..a.len() {
        da[k] += upstream * (b[k] * inv - ca * a[k]);
        db[k] += upstream * (a[k] * inv - cb * b[k]);
    }
}

pub fn cosine_backward<T: Real>(a: &[T], b: &[T], upstream: T) -> Result<(Vec<T>, Vec<T>)> {
    if a.len() != b.len() {
        return Err(Error::dims("cosine_backward", &[a.len()], &[b.len()]));
    }
    let mut da = vec![T::zero(); a.len()];
    let mut db = vec![T::zero(); b.len()];
    cosine_backward_into(a, b, upstream, &mut da, &mut db);
    Ok((da, db))
}

/// Softmax of `logits / tau`, max-shifted.
pub fn softmax_temp<T: Real>(logits: &[T], tau: T) -> Result<Vec<T>> {
    if !(tau > T::zero()) {
        return Err(Error::Config(format!("softmax temperature must be > 0, got {tau}")));
    }
    if logits.is_empty() {
        return Err(Error::EmptyBatch("softmax_temp".into()));
    }
    Ok(softmax_unchecked(logits, tau))
}

pub(crate) fn softmax_unchecked<T: Real>(logits: &[T], tau: T) -> Vec<T> {
    let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut out: Vec<T> = logits.iter().map(|&l| ((l - max) / tau).exp()).collect();
    let total: T = out.iter().copied().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// Gradient wrt logits given softmax output `s` and upstream `g`.
pub fn softmax_temp_backward<T: Real>(s: &[T], upstream: &[T], tau: T) -> Vec<T> {
    let inner = dot(s, upstream);
    s.iter()
        .zip(upstream)
        .map(|(&si, &gi)| si * (gi - inner) / tau)
        .collect()
}

/// Mean squared error.
pub fn mse<T: Real>(pred: &[T], target: &[T]) -> Result<T> {
    check_mse(pred, target)?;
    let n = T::of(pred.len() as f64);
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<T>()
        / n)
}

/// `∂ mse / ∂ pred = (2/n)(pred − target)`.
pub fn mse_backward<T: Real>(pred: &[T], target: &[T]) -> Result<Vec<T>> {
    check_mse(pred, target)?;
    let scale = T::of(2.0) / T::of(pred.len() as f64);
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| scale * (p - t))
        .collect())
}

fn check_mse<T>(pred: &[T], target: &[T]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::EmptyBatch("mse".into()));
    }
    if pred.len() != target.len() {
        return Err(Error::dims("mse", &[pred.len()], &[target.len()]));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_identity_and_scalar() {
        let w = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::zeros(&[2]);
        let x = Tensor::vector(vec![3.0, -1.0]);
        assert_eq!(affine(&w, &b, &x).unwrap().data(), &[3.0, -1.0]);

        let w = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        let b = Tensor::vector(vec![1.0]);
        let x = Tensor::vector(vec![3.0]);
        assert_eq!(affine(&w, &b, &x).unwrap().data(), &[7.0]);
        let g = affine_backward(&w, &b, &x, &Tensor::vector(vec![1.0])).unwrap();
        assert_eq!(g.weight.data(), &[3.0]);
        assert_eq!(g.bias.data(), &[1.0]);
        assert_eq!(g.input.data(), &[2.0]);
    }

    #[test]
    fn affine_shape_error_names_both_shapes() {
        let w = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2]);
        let x = Tensor::zeros(&[4]);
        let msg = affine(&w, &b, &x).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4]"), "{msg}");
    }

    #[test]
    fn cosine_cases() {
        let c = |a: &[f64], b: &[f64]| cosine_similarity(a, b).unwrap().value;
        assert!((c(&[1.0, 2.0], &[1.0, 2.0]) - 1.0).abs() < 1e-15);
        assert_eq!(c(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(c(&[1.0, 0.0], &[-1.0, 0.0]), -1.0);
        let z = cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(z.value, 0.0);
        assert!(z.degenerate);
    }

    #[test]
    fn softmax_cases() {
        let s = softmax_temp(&[0.4f64, 0.4, 0.4], 10.0).unwrap();
        for v in &s {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let e = std::f64::consts::E;
        let s = softmax_temp(&[1.0, 0.0], 1.0).unwrap();
        assert!((s[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((s[0] - 0.731_058_578_630_004_9).abs() < 1e-15);
        let s = softmax_temp(&[1.0f64, 0.0], 1000.0).unwrap();
        assert!((s[0] - 0.5).abs() < 1e-3 && (s[1] - 0.5).abs() < 1e-3);
        assert!(softmax_temp(&[1.0], 0.0).is_err());
        assert!(softmax_temp(&[1.0], -1.0).is_err());
    }

    #[test]
    fn softmax_survives_large_logits() {
        let s = softmax_temp(&[1000.0f64, -1000.0, 999.0], 0.01).unwrap();
        assert!(s.iter().all(|v| v.is_finite()));
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse(&[0.3, 0.2], &[0.3, 0.2]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(mse_backward(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), vec![1.0, 1.0]);
        assert!(matches!(mse::<f64>(&[], &[]), Err(Error::EmptyBatch(_))));
    }

    #[test]
    fn works_in_single_precision() {
        let s = softmax_temp(&[1.0f32, 0.0], 1.0).unwrap();
        assert!((s[0] - 0.731_058_6).abs() < 1e-6);
        assert_eq!(mse(&[1.0f32, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
    }
}
