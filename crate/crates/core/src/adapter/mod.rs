//! Data adapter: prototype-gated multi-head feature adaptation `G`, label
//! adaptation `H` and its inverse `H⁻¹`.
//!
//! The adapter itself only holds geometry; its learnable parameters live in
//! a [`ParamSet`] (`psi`) so they can share optimizer and checkpoint code
//! with the forecast model. Entries:
//!
//! | name                | shape       |
//! |---------------------|-------------|
//! | `feature.weight`    | `[N, d, d]` |
//! | `feature.bias`      | `[N, d]`    |
//! | `feature.prototype` | `[N, d]`    |
//! | `label.gamma`       | `[N]`       |
//! | `label.beta`        | `[N]`       |
//! | `label.projection`  | `[v, D]`    (separate label gate only) |
//! | `label.prototype`   | `[N, v]`    (separate label gate only) |
//!
//! In flat layout `d = D`; in time-series layout the feature vector is
//! `L` steps of `d` indicators and the heads are shared across steps.

mod maps;

pub use maps::{FeatureAdapterMap, FeatureGateMap, FullAdapterMap, InversionMap, LabelAdapterMap, LabelGateMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{
    affine_into, cosine, cosine_backward_into, dot, softmax_temp_backward, softmax_unchecked,
    ParamSet, Tensor,
};
use crate::error::{Error, Result};
use crate::models::uniform_tensor;
use crate::scalar::Real;

pub const FEATURE_WEIGHT: &str = "feature.weight";
pub const FEATURE_BIAS: &str = "feature.bias";
pub const FEATURE_PROTOTYPE: &str = "feature.prototype";
pub const LABEL_GAMMA: &str = "label.gamma";
pub const LABEL_BETA: &str = "label.beta";
pub const LABEL_PROJECTION: &str = "label.projection";
pub const LABEL_PROTOTYPE: &str = "label.prototype";

/// Where label-head confidence scores come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelGate {
    /// Reuse the feature prototypes (averaged over time steps).
    Shared,
    /// Low-dimensional projection with dedicated label prototypes.
    #[default]
    Separate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Layout {
    #[default]
    Flat,
    /// `D = steps · d`, heads shared over steps.
    TimeSeries { steps: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterConfig {
    pub heads: usize,
    pub temperature: f64,
    pub gamma_min: f64,
    pub label_gate: LabelGate,
    pub layout: Layout,
    pub proj_dim: usize,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            heads: 8,
            temperature: 10.0,
            gamma_min: 1e-3,
            label_gate: LabelGate::Separate,
            layout: Layout::Flat,
            proj_dim: 16,
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 {
            return Err(Error::Config("adapter.heads must be >= 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("adapter.temperature must be > 0".into()));
        }
        if !(self.gamma_min > 0.0) {
            return Err(Error::Config("adapter.gamma_min must be > 0".into()));
        }
        if self.proj_dim == 0 {
            return Err(Error::Config("adapter.proj_dim must be >= 1".into()));
        }
        if let Layout::TimeSeries { steps } = self.layout {
            if steps == 0 {
                return Err(Error::Config("adapter.layout.steps must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Geometry and hyperparameters of the data adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct DataAdapter<T> {
    heads: usize,
    steps: usize,
    step_dim: usize,
    proj_dim: usize,
    tau: T,
    gamma_min: T,
    label_gate: LabelGate,
}

/// Borrowed, shape-checked view of `psi`.
struct View<'a, T> {
    w: &'a [T],
    b: &'a [T],
    p: &'a [T],
    gamma: &'a [T],
    beta: &'a [T],
    proj: &'a [T],
    lp: &'a [T],
}

/// Gradient accumulator with the same layout as [`View`].
struct Grads<T> {
    w: Vec<T>,
    b: Vec<T>,
    p: Vec<T>,
    gamma: Vec<T>,
    beta: Vec<T>,
    proj: Vec<T>,
    lp: Vec<T>,
}

impl<T: Real> DataAdapter<T> {
    pub fn new(config: &AdapterConfig, feature_dim: usize) -> Result<Self> {
        config.validate()?;
        let steps = match config.layout {
            Layout::Flat => 1,
            Layout::TimeSeries { steps } => steps,
        };
        if feature_dim == 0 || !feature_dim.is_multiple_of(steps) {
            return Err(Error::Config(format!(
                "feature dimension {feature_dim} is not divisible into {steps} steps"
            )));
        }
        Ok(Self {
            heads: config.heads,
            steps,
            step_dim: feature_dim / steps,
            proj_dim: config.proj_dim,
            tau: T::of(config.temperature),
            gamma_min: T::of(config.gamma_min),
            label_gate: config.label_gate,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn feature_dim(&self) -> usize {
        self.steps * self.step_dim
    }

    pub fn step_dim(&self) -> usize {
        self.step_dim
    }

    pub fn temperature(&self) -> T {
        self.tau
    }

    pub fn gamma_min(&self) -> T {
        self.gamma_min
    }

    pub fn label_gate(&self) -> LabelGate {
        self.label_gate
    }

    /// Identity initialization: `W = 0`, `b = 0`, `γ = 1`, `β = 0`; prototypes
    /// and projection drawn small-random from `seed`.
    pub fn init(&self, seed: u64) -> ParamSet<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d) = (self.heads, self.step_dim);
        let mut psi = ParamSet::new();
        let mut put = |name: &str, t: Tensor<T>| psi.insert(name, t).expect("fresh name");
        put(FEATURE_WEIGHT, Tensor::zeros(&[n, d, d]));
        put(FEATURE_BIAS, Tensor::zeros(&[n, d]));
        put(FEATURE_PROTOTYPE, uniform_tensor(&mut rng, &[n, d], 1.0 / (d as f64).sqrt()));
        put(LABEL_GAMMA, Tensor::filled(&[n], T::one()));
        put(LABEL_BETA, Tensor::zeros(&[n]));
        if self.label_gate == LabelGate::Separate {
            let dim = self.feature_dim();
            let v = self.proj_dim;
            put(LABEL_PROJECTION, uniform_tensor(&mut rng, &[v, dim], 1.0 / (dim as f64).sqrt()));
            put(LABEL_PROTOTYPE, uniform_tensor(&mut rng, &[n, v], 1.0 / (v as f64).sqrt()));
        }
        psi
    }

    fn expected_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (n, d) = (self.heads, self.step_dim);
        let mut shapes = vec![
            (FEATURE_WEIGHT, vec![n, d, d]),
            (FEATURE_BIAS, vec![n, d]),
            (FEATURE_PROTOTYPE, vec![n, d]),
            (LABEL_GAMMA, vec![n]),
            (LABEL_BETA, vec![n]),
        ];
        if self.label_gate == LabelGate::Separate {
            shapes.push((LABEL_PROJECTION, vec![self.proj_dim, self.feature_dim()]));
            shapes.push((LABEL_PROTOTYPE, vec![n, self.proj_dim]));
        }
        shapes
    }

    fn view<'a>(&self, psi: &'a ParamSet<T>) -> Result<View<'a, T>> {
        for (name, shape) in self.expected_shapes() {
            let t = psi.get(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::dims(format!("adapter `{name}`"), t.shape(), &shape));
            }
        }
        let get = |name| psi.get(name).map(Tensor::data);
        let (proj, lp): (&[T], &[T]) = match self.label_gate {
            LabelGate::Separate => (get(LABEL_PROJECTION)?, get(LABEL_PROTOTYPE)?),
            LabelGate::Shared => (&[], &[]),
        };
        Ok(View {
            w: get(FEATURE_WEIGHT)?,
            b: get(FEATURE_BIAS)?,
            p: get(FEATURE_PROTOTYPE)?,
            gamma: get(LABEL_GAMMA)?,
            beta: get(LABEL_BETA)?,
            proj,
            lp,
        })
    }

    fn grads_for(view: &View<'_, T>) -> Grads<T> {
        let z = |s: &[T]| vec![T::zero(); s.len()];
        Grads {
            w: z(view.w),
            b: z(view.b),
            p: z(view.p),
            gamma: z(view.gamma),
            beta: z(view.beta),
            proj: z(view.proj),
            lp: z(view.lp),
        }
    }

    fn to_param_set(&self, g: Grads<T>) -> ParamSet<T> {
        let mut out = ParamSet::new();
        let shapes = self.expected_shapes();
        let data = [g.w, g.b, g.p, g.gamma, g.beta, g.proj, g.lp];
        for ((name, shape), values) in shapes.into_iter().zip(data) {
            out.insert(name, Tensor::new(shape, values).expect("accumulator shape"))
                .expect("fresh name");
        }
        out
    }

    fn check_dim(&self, x: &[T], what: &str) -> Result<()> {
        if x.len() != self.feature_dim() {
            return Err(Error::dims(what, &[x.len()], &[self.feature_dim()]));
        }
        Ok(())
    }

    fn gate_step(&self, prototypes: &[T], x: &[T], width: usize) -> Vec<T> {
        let logits: Vec<T> = prototypes
            .chunks_exact(width)
            .map(|p| cosine(p, x).value)
            .collect();
        softmax_unchecked(&logits, self.tau)
    }

    fn gate_step_backward(
        &self,
        prototypes: &[T],
        x: &[T],
        width: usize,
        ds: &[T],
        dprot: &mut [T],
        dx: &mut [T],
    ) {
        let s = self.gate_step(prototypes, x, width);
        let dlogits = softmax_temp_backward(&s, ds, self.tau);
        for (i, (p, dp)) in prototypes
            .chunks_exact(width)
            .zip(dprot.chunks_exact_mut(width))
            .enumerate()
        {
            cosine_backward_into(p, x, dlogits[i], dp, dx);
        }
    }

    // ---- feature gate -------------------------------------------------

    /// Feature-head confidence scores for one step vector `x: [d]`.
    pub fn gate_scores(&self, psi: &ParamSet<T>, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.step_dim {
            return Err(Error::dims("gate_scores input", &[x.len()], &[self.step_dim]));
        }
        let v = self.view(psi)?;
        Ok(self.gate_step(v.p, x, self.step_dim))
    }

    fn gate_scores_backward(&self, psi: &ParamSet<T>, x: &[T], ds: &[T]) -> Result<(ParamSet<T>, Vec<T>)> {
        let v = self.view(psi)?;
        let mut g = Self::grads_for(&v);
        let mut dx = vec![T::zero(); x.len()];
        self.gate_step_backward(v.p, x, self.step_dim, ds, &mut g.p, &mut dx);
        Ok((self.to_param_set(g), dx))
    }

    // ---- feature adaptation G ----------------------------------------

    fn adapt_feature_view(&self, v: &View<'_, T>, x: &[T], out: &mut [T]) {
        let d = self.step_dim;
        let mut h = vec![T::zero(); d];
        for (xj, oj) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            oj.copy_from_slice(xj);
            let s = self.gate_step(v.p, xj, d);
            for (i, &si) in s.iter().enumerate() {
                affine_into(&v.w[i * d * d..(i + 1) * d * d], &v.b[i * d..(i + 1) * d], xj, d, &mut h);
                for (o, &hk) in oj.iter_mut().zip(&h) {
                    *o += si * hk;
                }
            }
        }
    }

    fn adapt_feature_backward_view(&self, v: &View<'_, T>, x: &[T], up: &[T], g: &mut Grads<T>, dx: &mut [T]) {
        let d = self.step_dim;
        let n = self.heads;
        let mut h = vec![T::zero(); d];
        for (j, (xj, gj)) in x.chunks_exact(d).zip(up.chunks_exact(d)).enumerate() {
            let dxj = &mut dx[j * d..(j + 1) * d];
            for (a, &b) in dxj.iter_mut().zip(gj) {
                *a += b;
            }
            let s = self.gate_step(v.p, xj, d);
            let mut ds = vec![T::zero(); n];
            for i in 0..n {
                let w = &v.w[i * d * d..(i + 1) * d * d];
                affine_into(w, &v.b[i * d..(i + 1) * d], xj, d, &mut h);
                ds[i] = dot(gj, &h);
                let si = s[i];
                let gw = &mut g.w[i * d * d..(i + 1) * d * d];
                for r in 0..d {
                    let sg = si * gj[r];
                    g.b[i * d + r] += sg;
                    for c in 0..d {
                        gw[r * d + c] += sg * xj[c];
                        dxj[c] += sg * w[r * d + c];
                    }
                }
            }
            self.gate_step_backward(v.p, xj, d, &ds, &mut g.p, dxj);
        }
    }

    /// `x̃ = x + Σᵢ sᵢ(x)(Wᵢx + bᵢ)`, applied per step.
    pub fn adapt_feature(&self, psi: &ParamSet<T>, x: &[T]) -> Result<Vec<T>> {
        self.check_dim(x, "adapt_feature input")?;
        let v = self.view(psi)?;
        let mut out = vec![T::zero(); x.len()];
        self.adapt_feature_view(&v, x, &mut out);
        Ok(out)
    }

    /// Applies `G` to every row of `x: [S × D]`.
    pub fn adapt_features(&self, psi: &ParamSet<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.cols() != self.feature_dim() {
            return Err(Error::dims("adapt_features", x.shape(), &[x.rows(), self.feature_dim()]));
        }
        let v = self.view(psi)?;
        let mut out = Tensor::zeros(x.shape());
        for i in 0..x.rows() {
            self.adapt_feature_view(&v, x.row(i), out.row_mut(i));
        }
        Ok(out)
    }

    pub fn adapt_feature_backward(&self, psi: &ParamSet<T>, x: &[T], upstream: &[T]) -> Result<(ParamSet<T>, Vec<T>)> {
        self.check_dim(x, "adapt_feature input")?;
        self.check_dim(upstream, "adapt_feature upstream")?;
        let v = self.view(psi)?;
        let mut g = Self::grads_for(&v);
        let mut dx = vec![T::zero(); x.len()];
        self.adapt_feature_backward_view(&v, x, upstream, &mut g, &mut dx);
        Ok((self.to_param_set(g), dx))
    }

    // ---- label gate ---------------------------------------------------

    fn label_gate_view(&self, v: &View<'_, T>, z: &[T]) -> Vec<T> {
        match self.label_gate {
            LabelGate::Separate => {
                let dim = self.feature_dim();
                let mut proj = vec![T::zero(); self.proj_dim];
                for (r, o) in proj.iter_mut().enumerate() {
                    *o = dot(&v.proj[r * dim..(r + 1) * dim], z);
                }
                self.gate_step(v.lp, &proj, self.proj_dim)
            }
            LabelGate::Shared => {
                let d = self.step_dim;
                let mut acc = vec![T::zero(); self.heads];
                for zj in z.chunks_exact(d) {
                    for (a, s) in acc.iter_mut().zip(self.gate_step(v.p, zj, d)) {
                        *a += s;
                    }
                }
                let inv = T::one() / T::of(self.steps as f64);
                acc.iter_mut().for_each(|a| *a *= inv);
                acc
            }
        }
    }

    fn label_gate_backward_view(&self, v: &View<'_, T>, z: &[T], ds: &[T], g: &mut Grads<T>, dz: &mut [T]) {
        match self.label_gate {
            LabelGate::Separate => {
                let dim = self.feature_dim();
                let vd = self.proj_dim;
                let mut proj = vec![T::zero(); vd];
                for (r, o) in proj.iter_mut().enumerate() {
                    *o = dot(&v.proj[r * dim..(r + 1) * dim], z);
                }
                let mut dproj = vec![T::zero(); vd];
                self.gate_step_backward(v.lp, &proj, vd, ds, &mut g.lp, &mut dproj);
                for (r, &dv) in dproj.iter().enumerate() {
                    let row = &v.proj[r * dim..(r + 1) * dim];
                    let grow = &mut g.proj[r * dim..(r + 1) * dim];
                    for c in 0..dim {
                        grow[c] += dv * z[c];
                        dz[c] += dv * row[c];
                    }
                }
            }
            LabelGate::Shared => {
                let d = self.step_dim;
                let inv = T::one() / T::of(self.steps as f64);
                let dsj: Vec<T> = ds.iter().map(|&s| s * inv).collect();
                for (zj, dzj) in z.chunks_exact(d).zip(dz.chunks_exact_mut(d)) {
                    self.gate_step_backward(v.p, zj, d, &dsj, &mut g.p, dzj);
                }
            }
        }
    }

    /// Label-head confidence scores for gate input `z: [D]`.
    pub fn label_gate_scores(&self, psi: &ParamSet<T>, z: &[T]) -> Result<Vec<T>> {
        self.check_dim(z, "label gate input")?;
        let v = self.view(psi)?;
        Ok(self.label_gate_view(&v, z))
    }

    fn label_gate_backward(&self, psi: &ParamSet<T>, z: &[T], ds: &[T]) -> Result<(ParamSet<T>, Vec<T>)> {
        let v = self.view(psi)?;
        let mut g = Self::grads_for(&v);
        let mut dz = vec![T::zero(); z.len()];
        self.label_gate_backward_view(&v, z, ds, &mut g, &mut dz);
        Ok((self.to_param_set(g), dz))
    }

    // ---- label adaptation H and inverse --------------------------------

    fn adapt_label_view(&self, v: &View<'_, T>, z: &[T], y: T) -> T {
        let s = self.label_gate_view(v, z);
        s.iter()
            .zip(v.gamma.iter().zip(v.beta))
            .map(|(&si, (&g, &b))| si * (g * y + b))
            .sum()
    }

    /// Accumulates gradients of `upstream · H(z, y)`; returns `∂/∂y`.
    fn adapt_label_backward_view(&self, v: &View<'_, T>, z: &[T], y: T, up: T, g: &mut Grads<T>, dz: &mut [T]) -> T {
        let s = self.label_gate_view(v, z);
        let mut ds = vec![T::zero(); self.heads];
        let mut dy = T::zero();
        for i in 0..self.heads {
            g.gamma[i] += up * s[i] * y;
            g.beta[i] += up * s[i];
            ds[i] = up * (v.gamma[i] * y + v.beta[i]);
            dy += up * s[i] * v.gamma[i];
        }
        self.label_gate_backward_view(v, z, &ds, g, dz);
        dy
    }

    fn check_gammas(&self, v: &View<'_, T>) -> Result<()> {
        if let Some(g) = v.gamma.iter().find(|g| !(g.abs() >= self.gamma_min)) {
            return Err(Error::Param(format!(
                "label head scale {g} violates |gamma| >= {}",
                self.gamma_min
            )));
        }
        Ok(())
    }

    fn invert_view(&self, v: &View<'_, T>, z: &[T], ycheck: T) -> T {
        let s = self.label_gate_view(v, z);
        s.iter()
            .zip(v.gamma.iter().zip(v.beta))
            .map(|(&si, (&g, &b))| si * (ycheck - b) / g)
            .sum()
    }

    fn invert_backward_view(&self, v: &View<'_, T>, z: &[T], ycheck: T, up: T, g: &mut Grads<T>, dz: &mut [T]) -> T {
        let s = self.label_gate_view(v, z);
        let mut ds = vec![T::zero(); self.heads];
        let mut dy = T::zero();
        for i in 0..self.heads {
            let (gam, bet) = (v.gamma[i], v.beta[i]);
            g.beta[i] -= up * s[i] / gam;
            g.gamma[i] -= up * s[i] * (ycheck - bet) / (gam * gam);
            ds[i] = up * (ycheck - bet) / gam;
            dy += up * s[i] / gam;
        }
        self.label_gate_backward_view(v, z, &ds, g, dz);
        dy
    }

    /// `ỹ = Σᵢ s′ᵢ(z)(γᵢ y + βᵢ)`.
    pub fn adapt_label(&self, psi: &ParamSet<T>, z: &[T], y: T) -> Result<T> {
        self.check_dim(z, "adapt_label gate input")?;
        let v = self.view(psi)?;
        self.check_gammas(&v)?;
        Ok(self.adapt_label_view(&v, z, y))
    }

    /// `ŷ = Σᵢ s′ᵢ(z)(y̌ − βᵢ)/γᵢ`.
    pub fn invert_prediction(&self, psi: &ParamSet<T>, z: &[T], ycheck: T) -> Result<T> {
        self.check_dim(z, "invert_prediction gate input")?;
        let v = self.view(psi)?;
        self.check_gammas(&v)?;
        Ok(self.invert_view(&v, z, ycheck))
    }

    /// Applies `H` row-wise with gate inputs `z: [S × D]`.
    pub fn adapt_labels(&self, psi: &ParamSet<T>, z: &Tensor<T>, y: &[T]) -> Result<Vec<T>> {
        self.check_batch(z, y.len())?;
        let v = self.view(psi)?;
        self.check_gammas(&v)?;
        Ok(y.iter().enumerate().map(|(i, &yi)| self.adapt_label_view(&v, z.row(i), yi)).collect())
    }

    /// Applies `H⁻¹` row-wise with gate inputs `z: [S × D]`.
    pub fn invert_predictions(&self, psi: &ParamSet<T>, z: &Tensor<T>, ycheck: &[T]) -> Result<Vec<T>> {
        self.check_batch(z, ycheck.len())?;
        let v = self.view(psi)?;
        self.check_gammas(&v)?;
        Ok(ycheck.iter().enumerate().map(|(i, &yi)| self.invert_view(&v, z.row(i), yi)).collect())
    }

    fn check_batch(&self, z: &Tensor<T>, n: usize) -> Result<()> {
        if z.cols() != self.feature_dim() || z.rows() != n {
            return Err(Error::dims("adapter batch", z.shape(), &[n, self.feature_dim()]));
        }
        Ok(())
    }

    /// Projects every `γᵢ` to `sign(γᵢ)·max(|γᵢ|, γ_min)`; zero maps to `+γ_min`.
    pub fn project_gammas(&self, psi: &mut ParamSet<T>) -> Result<()> {
        let gmin = self.gamma_min;
        for g in psi.get_mut(LABEL_GAMMA)?.data_mut() {
            if g.abs() < gmin || g.is_nan() {
                *g = if *g < T::zero() { -gmin } else { gmin };
            }
        }
        Ok(())
    }

    /// Validates shapes, finiteness and the invertibility guard.
    pub fn validate(&self, psi: &ParamSet<T>) -> Result<()> {
        let v = self.view(psi)?;
        self.check_gammas(&v)?;
        if !psi.is_finite() {
            return Err(Error::Param("adapter parameters contain non-finite values".into()));
        }
        Ok(())
    }

    /// Whether entry `name` of `psi` is learned when only the components in
    /// `usage` are active. Feature prototypes also drive the label gate in
    /// shared mode.
    pub fn is_trainable(&self, name: &str, features: bool, labels: bool) -> bool {
        if name == FEATURE_PROTOTYPE {
            features || (labels && self.label_gate == LabelGate::Shared)
        } else if name.starts_with("label.") {
            labels
        } else {
            features
        }
    }

    // ---- meta-objective support ---------------------------------------

    /// Gradients of `Σ_rows up_x[r]·G(x_r) + up_h[r]·H(G(x_r), y_r)` style
    /// objectives are built from these three primitives, which share one
    /// accumulator across a batch.
    pub(crate) fn accumulator<'a>(&'a self, psi: &'a ParamSet<T>) -> Result<GradAccumulator<'a, T>> {
        let view = self.view(psi)?;
        self.check_gammas(&view)?;
        let grads = Self::grads_for(&view);
        Ok(GradAccumulator { adapter: self, view, grads })
    }
}

/// Batch gradient accumulator over one `psi`.
pub(crate) struct GradAccumulator<'a, T> {
    adapter: &'a DataAdapter<T>,
    view: View<'a, T>,
    grads: Grads<T>,
}

impl<T: Real> GradAccumulator<'_, T> {
    pub fn adapt_feature(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); x.len()];
        self.adapter.adapt_feature_view(&self.view, x, &mut out);
        out
    }

    pub fn adapt_label(&self, z: &[T], y: T) -> T {
        self.adapter.adapt_label_view(&self.view, z, y)
    }

    pub fn invert(&self, z: &[T], ycheck: T) -> T {
        self.adapter.invert_view(&self.view, z, ycheck)
    }

    /// Backprop `up · G(x)`; returns nothing, gradients accumulate.
    pub fn feature_backward(&mut self, x: &[T], up: &[T]) {
        let mut dx = vec![T::zero(); x.len()];
        self.adapter.adapt_feature_backward_view(&self.view, x, up, &mut self.grads, &mut dx);
    }

    /// Backprop `up · H(z, y)`; returns `∂/∂z`.
    pub fn label_backward(&mut self, z: &[T], y: T, up: T) -> Vec<T> {
        let mut dz = vec![T::zero(); z.len()];
        self.adapter.adapt_label_backward_view(&self.view, z, y, up, &mut self.grads, &mut dz);
        dz
    }

    /// Backprop `up · H⁻¹(z, y̌)`; returns `(∂/∂z, ∂/∂y̌)`.
    pub fn invert_backward(&mut self, z: &[T], ycheck: T, up: T) -> (Vec<T>, T) {
        let mut dz = vec![T::zero(); z.len()];
        let dy = self.adapter.invert_backward_view(&self.view, z, ycheck, up, &mut self.grads, &mut dz);
        (dz, dy)
    }

    pub fn finish(self) -> ParamSet<T> {
        self.adapter.to_param_set(self.grads)
    }
}

#[cfg(test)]
mod tests;
