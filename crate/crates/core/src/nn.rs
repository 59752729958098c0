//! Multilayer perceptron ansatz.
//!
//! The network is `y = W_out σ(... σ(W_1 x + b_1) ...)` with a bias-free
//! output layer. Spatial derivatives are carried forward as one tangent
//! channel per differentiated input coordinate; parameter gradients of any
//! scalar built from values and spatial gradients come from a reverse sweep
//! over that forward-mode computation.

use std::any::Any;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    /// Value, first and second derivative at `z`.
    #[inline(always)]
    pub fn eval3(self, z: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                let d1 = 1.0 - t * t;
                (t, d1, -2.0 * t * d1)
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                let d1 = s * (1.0 - s);
                (s, d1, d1 * (1.0 - 2.0 * s))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Spatial dimensions plus parameter dimensions.
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        output_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_widths,
            output_dim,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.is_empty() {
            return Err(Error::InvalidArgument("MLP needs at least one hidden layer".into()));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::InvalidArgument("all layer widths must be >= 1".into()));
        }
        Ok(())
    }

    /// `[input, hidden..., output]`
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden_widths.len() + 2);
        sizes.push(self.input_dim);
        sizes.extend_from_slice(&self.hidden_widths);
        sizes.push(self.output_dim);
        sizes
    }

    pub fn param_count(&self) -> usize {
        let sizes = self.layer_sizes();
        let hidden: usize = sizes
            .windows(2)
            .take(self.hidden_widths.len())
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        hidden + sizes[sizes.len() - 2] * self.output_dim
    }
}

/// Flattened trainable parameters, layer-major: `W_1, b_1, ..., W_k, b_k, W_out`,
/// each weight matrix stored row-major as `[fan_out × fan_in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
    }
}

/// Batched values and spatial gradients of a trial function, plus whatever the
/// producer needs to pull cotangents back to the parameters.
pub struct EvalBundle {
    /// `[batch × output_dim]`
    pub values: Array2<f64>,
    /// `[batch × output_dim × grad_dim]`
    pub spatial_grads: Array3<f64>,
    pub(crate) tape: Option<Box<dyn Any + Send + Sync>>,
}

impl std::fmt::Debug for EvalBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EvalBundle")
            .field("values", &self.values)
            .field("spatial_grads", &self.spatial_grads)
            .field("has_tape", &self.tape.is_some())
            .finish()
    }
}

impl EvalBundle {
    /// A bundle without pullback information (derived or analytic samples).
    pub fn detached(values: Array2<f64>, spatial_grads: Array3<f64>) -> Self {
        Self {
            values,
            spatial_grads,
            tape: None,
        }
    }

    pub fn n_points(&self) -> usize {
        self.values.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn grad_dim(&self) -> usize {
        self.spatial_grads.shape()[2]
    }

    pub(crate) fn tape<T: 'static>(&self) -> Result<&T> {
        self.tape
            .as_ref()
            .and_then(|t| t.downcast_ref::<T>())
            .ok_or_else(|| Error::Shape("bundle was not produced by this trial function".into()))
    }
}

struct MlpTape {
    spec: MlpSpec,
    params: Vec<f64>,
    grad_dim: usize,
    stride: usize,
    data: Vec<f64>,
    inputs: Vec<f64>,
}

/// Offsets of each layer's weights and biases inside a [`ParamVector`].
struct Layout {
    sizes: Vec<usize>,
    w_off: Vec<usize>,
    b_off: Vec<usize>,
    out_off: usize,
}

impl Layout {
    fn new(spec: &MlpSpec) -> Self {
        let sizes = spec.layer_sizes();
        let n_hidden = spec.hidden_widths.len();
        let mut w_off = Vec::with_capacity(n_hidden);
        let mut b_off = Vec::with_capacity(n_hidden);
        let mut off = 0;
        for l in 0..n_hidden {
            w_off.push(off);
            off += sizes[l] * sizes[l + 1];
            b_off.push(off);
            off += sizes[l + 1];
        }
        Self {
            sizes,
            w_off,
            b_off,
            out_off: off,
        }
    }

    fn n_hidden(&self) -> usize {
        self.w_off.len()
    }

    /// Per-layer tape block: h, σ', σ'', dz (w·g), dh (w·g).
    fn block_len(width: usize, g: usize) -> usize {
        3 * width + 2 * width * g
    }

    fn tape_offsets(&self, g: usize) -> (Vec<usize>, usize) {
        let mut offs = Vec::with_capacity(self.n_hidden());
        let mut off = 0;
        for l in 0..self.n_hidden() {
            offs.push(off);
            off += Self::block_len(self.sizes[l + 1], g);
        }
        (offs, off)
    }
}

fn check_params(spec: &MlpSpec, params: &ParamVector) -> Result<()> {
    spec.validate()?;
    if params.len() != spec.param_count() {
        return Err(Error::Shape(format!(
            "parameter vector has {} entries, spec needs {}",
            params.len(),
            spec.param_count()
        )));
    }
    Ok(())
}

fn check_points(spec: &MlpSpec, points: &ArrayView2<f64>) -> Result<()> {
    if points.ncols() != spec.input_dim {
        return Err(Error::Shape(format!(
            "points have {} columns, network expects {}",
            points.ncols(),
            spec.input_dim
        )));
    }
    Ok(())
}

/// Xavier-uniform weights, zero biases.
pub fn init_xavier(spec: &MlpSpec, seed: u64) -> ParamVector {
    let layout = Layout::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = vec![0.0; spec.param_count()];
    let sizes = &layout.sizes;
    let mut fill = |p: &mut [f64], bound: f64| {
        for v in p {
            *v = rng.gen_range(-bound..bound);
        }
    };
    let xavier = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
    for l in 0..layout.n_hidden() {
        let w = layout.w_off[l];
        fill(&mut p[w..w + sizes[l] * sizes[l + 1]], xavier(sizes[l], sizes[l + 1]));
    }
    let last = sizes[sizes.len() - 2];
    let out = layout.out_off;
    fill(&mut p[out..out + last * spec.output_dim], xavier(last, spec.output_dim));
    ParamVector(p)
}

/// Draws `count` coefficients from `N(0, sigma²)`.
pub fn normal_coefficients(count: usize, sigma: f64, seed: u64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| normal.sample(&mut rng)).collect())
}

/// Normal draws for the output layer's coefficients.
pub fn init_final_layer_normal(spec: &MlpSpec, sigma: f64, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    let last = *spec.hidden_widths.last().unwrap();
    normal_coefficients(last * spec.output_dim, sigma, seed)
}

/// Plain evaluation, `[batch × output_dim]`.
pub fn forward(spec: &MlpSpec, params: &ParamVector, points: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_params(spec, params)?;
    check_points(spec, &points)?;
    let layout = Layout::new(spec);
    let p = params.as_slice();
    let max_w = *spec.hidden_widths.iter().max().unwrap();
    let mut cur = vec![0.0; max_w.max(spec.input_dim)];
    let mut next = vec![0.0; max_w];
    let mut out = Array2::zeros((points.nrows(), spec.output_dim));
    for (i, x) in points.outer_iter().enumerate() {
        let mut prev_len = spec.input_dim;
        for (k, xv) in x.iter().enumerate() {
            cur[k] = *xv;
        }
        for l in 0..layout.n_hidden() {
            let (fan_in, width) = (layout.sizes[l], layout.sizes[l + 1]);
            let w = &p[layout.w_off[l]..layout.w_off[l] + fan_in * width];
            let b = &p[layout.b_off[l]..layout.b_off[l] + width];
            for r in 0..width {
                let row = &w[r * fan_in..(r + 1) * fan_in];
                let z = b[r] + dot(row, &cur[..prev_len]);
                next[r] = spec.activation.eval3(z).0;
            }
            std::mem::swap(&mut cur, &mut next);
            prev_len = width;
        }
        for o in 0..spec.output_dim {
            let row = &p[layout.out_off + o * prev_len..layout.out_off + (o + 1) * prev_len];
            out[[i, o]] = dot(row, &cur[..prev_len]);
        }
    }
    Ok(out)
}

/// Values and the exact Jacobian with respect to every input.
pub fn forward_with_spatial_grad(
    spec: &MlpSpec,
    params: &ParamVector,
    points: ArrayView2<f64>,
) -> Result<EvalBundle> {
    forward_with_grad_dims(spec, params, points, spec.input_dim)
}

/// Values and the Jacobian with respect to the leading `grad_dims` inputs.
/// Trailing inputs (e.g. a stochastic parameter) are not differentiated.
pub fn forward_with_grad_dims(
    spec: &MlpSpec,
    params: &ParamVector,
    points: ArrayView2<f64>,
    grad_dims: usize,
) -> Result<EvalBundle> {
    check_params(spec, params)?;
    check_points(spec, &points)?;
    if grad_dims > spec.input_dim {
        return Err(Error::Shape(format!(
            "cannot differentiate {grad_dims} of {} inputs",
            spec.input_dim
        )));
    }
    let layout = Layout::new(spec);
    let g = grad_dims;
    let m = spec.output_dim;
    let n = points.nrows();
    let (offs, stride) = layout.tape_offsets(g);
    let p = params.as_slice();
    let act = spec.activation;

    let mut data = vec![0.0; n * stride];
    let mut inputs = Vec::with_capacity(n * spec.input_dim);
    let mut values = vec![0.0; n * m];
    let mut grads = vec![0.0; n * m * g];

    for (i, x) in points.outer_iter().enumerate() {
        let x = x.to_vec();
        inputs.extend_from_slice(&x);
        let tape = &mut data[i * stride..(i + 1) * stride];
        for l in 0..layout.n_hidden() {
            let (fan_in, width) = (layout.sizes[l], layout.sizes[l + 1]);
            let w = &p[layout.w_off[l]..layout.w_off[l] + fan_in * width];
            let b = &p[layout.b_off[l]..layout.b_off[l] + width];
            let (done, rest) = tape.split_at_mut(offs[l]);
            let block = &mut rest[..Layout::block_len(width, g)];
            let (h, rest) = block.split_at_mut(width);
            let (s1, rest) = rest.split_at_mut(width);
            let (s2, rest) = rest.split_at_mut(width);
            let (dz, dh) = rest.split_at_mut(width * g);
            if l == 0 {
                for r in 0..width {
                    let row = &w[r * fan_in..(r + 1) * fan_in];
                    let (f, f1, f2) = act.eval3(b[r] + dot(row, &x));
                    h[r] = f;
                    s1[r] = f1;
                    s2[r] = f2;
                    for j in 0..g {
                        dz[r * g + j] = row[j];
                        dh[r * g + j] = f1 * row[j];
                    }
                }
            } else {
                let prev = &done[offs[l - 1]..];
                let prev_h = &prev[..fan_in];
                let prev_dh = &prev[3 * fan_in + fan_in * g..3 * fan_in + 2 * fan_in * g];
                for r in 0..width {
                    let row = &w[r * fan_in..(r + 1) * fan_in];
                    let (f, f1, f2) = act.eval3(b[r] + dot(row, prev_h));
                    h[r] = f;
                    s1[r] = f1;
                    s2[r] = f2;
                    let dzr = &mut dz[r * g..(r + 1) * g];
                    dzr.fill(0.0);
                    for (c, &wc) in row.iter().enumerate() {
                        let src = &prev_dh[c * g..(c + 1) * g];
                        for j in 0..g {
                            dzr[j] += wc * src[j];
                        }
                    }
                    for j in 0..g {
                        dh[r * g + j] = f1 * dzr[j];
                    }
                }
            }
        }
        let last = layout.n_hidden() - 1;
        let width = layout.sizes[last + 1];
        let blk = &tape[offs[last]..];
        let h = &blk[..width];
        let dh = &blk[3 * width + width * g..3 * width + 2 * width * g];
        for o in 0..m {
            let row = &p[layout.out_off + o * width..layout.out_off + (o + 1) * width];
            values[i * m + o] = dot(row, h);
            let dy = &mut grads[(i * m + o) * g..(i * m + o + 1) * g];
            for (c, &wc) in row.iter().enumerate() {
                let src = &dh[c * g..(c + 1) * g];
                for j in 0..g {
                    dy[j] += wc * src[j];
                }
            }
        }
    }

    Ok(EvalBundle {
        values: Array2::from_shape_vec((n, m), values).expect("shape"),
        spatial_grads: Array3::from_shape_vec((n, m, g), grads).expect("shape"),
        tape: Some(Box::new(MlpTape {
            spec: spec.clone(),
            params: params.0.clone(),
            grad_dim: g,
            stride,
            data,
            inputs,
        })),
    })
}

/// Vector–Jacobian product: `Σ_i (∂values_i/∂θ)ᵀ c_i + Σ_i (∂grads_i/∂θ)ᵀ ĉ_i`.
pub fn param_pullback(
    bundle: &EvalBundle,
    cot_values: ArrayView2<f64>,
    cot_spatial: ArrayView3<f64>,
) -> Result<ParamVector> {
    let tape: &MlpTape = bundle.tape()?;
    if cot_values.dim() != bundle.values.dim() || cot_spatial.dim() != bundle.spatial_grads.dim() {
        return Err(Error::Shape(format!(
            "cotangent shapes {:?}/{:?} do not match bundle {:?}/{:?}",
            cot_values.dim(),
            cot_spatial.dim(),
            bundle.values.dim(),
            bundle.spatial_grads.dim()
        )));
    }
    let spec = &tape.spec;
    let layout = Layout::new(spec);
    let g = tape.grad_dim;
    let m = spec.output_dim;
    let (offs, _) = layout.tape_offsets(g);
    let p = &tape.params;
    let mut grad = vec![0.0; p.len()];
    let max_w = *spec.hidden_widths.iter().max().unwrap();
    let mut hbar = vec![0.0; max_w];
    let mut dhbar = vec![0.0; max_w * g];
    let mut zbar = vec![0.0; max_w];
    let mut dzbar = vec![0.0; max_w * g];

    let cv = cot_values.as_standard_layout();
    let cg = cot_spatial.as_standard_layout();
    let cv = cv.as_slice().unwrap();
    let cg = cg.as_slice().unwrap();

    for i in 0..bundle.n_points() {
        let ybar = &cv[i * m..(i + 1) * m];
        let dybar = &cg[i * m * g..(i + 1) * m * g];
        if ybar.iter().all(|v| *v == 0.0) && dybar.iter().all(|v| *v == 0.0) {
            continue;
        }
        let tape_i = &tape.data[i * tape.stride..(i + 1) * tape.stride];

        // Output layer.
        let last = layout.n_hidden() - 1;
        let width = layout.sizes[last + 1];
        let blk = &tape_i[offs[last]..];
        let h = &blk[..width];
        let dh = &blk[3 * width + width * g..3 * width + 2 * width * g];
        hbar[..width].fill(0.0);
        dhbar[..width * g].fill(0.0);
        for o in 0..m {
            let row = &p[layout.out_off + o * width..layout.out_off + (o + 1) * width];
            let grow = &mut grad[layout.out_off + o * width..layout.out_off + (o + 1) * width];
            let yb = ybar[o];
            let dyb = &dybar[o * g..(o + 1) * g];
            for c in 0..width {
                let dhc = &dh[c * g..(c + 1) * g];
                grow[c] += yb * h[c] + dot(dyb, dhc);
                hbar[c] += row[c] * yb;
                let dst = &mut dhbar[c * g..(c + 1) * g];
                for j in 0..g {
                    dst[j] += row[c] * dyb[j];
                }
            }
        }

        for l in (0..layout.n_hidden()).rev() {
            let (fan_in, width) = (layout.sizes[l], layout.sizes[l + 1]);
            let blk = &tape_i[offs[l]..];
            let s1 = &blk[width..2 * width];
            let s2 = &blk[2 * width..3 * width];
            let dz = &blk[3 * width..3 * width + width * g];
            for r in 0..width {
                let dhb = &dhbar[r * g..(r + 1) * g];
                let dzr = &dz[r * g..(r + 1) * g];
                zbar[r] = hbar[r] * s1[r] + s2[r] * dot(dhb, dzr);
                for j in 0..g {
                    dzbar[r * g + j] = dhb[j] * s1[r];
                }
            }
            let w_off = layout.w_off[l];
            let b_off = layout.b_off[l];
            for r in 0..width {
                grad[b_off + r] += zbar[r];
            }
            if l == 0 {
                let x = &tape.inputs[i * fan_in..(i + 1) * fan_in];
                for r in 0..width {
                    let grow = &mut grad[w_off + r * fan_in..w_off + (r + 1) * fan_in];
                    for c in 0..fan_in {
                        grow[c] += zbar[r] * x[c];
                    }
                    for j in 0..g {
                        grow[j] += dzbar[r * g + j];
                    }
                }
            } else {
                let prev = &tape_i[offs[l - 1]..];
                let prev_h = &prev[..fan_in];
                let prev_dh = &prev[3 * fan_in + fan_in * g..3 * fan_in + 2 * fan_in * g];
                let w = &p[w_off..w_off + fan_in * width];
                for r in 0..width {
                    let grow = &mut grad[w_off + r * fan_in..w_off + (r + 1) * fan_in];
                    let dzb = &dzbar[r * g..(r + 1) * g];
                    for c in 0..fan_in {
                        grow[c] += zbar[r] * prev_h[c] + dot(dzb, &prev_dh[c * g..(c + 1) * g]);
                    }
                }
                hbar[..fan_in].fill(0.0);
                dhbar[..fan_in * g].fill(0.0);
                for r in 0..width {
                    let row = &w[r * fan_in..(r + 1) * fan_in];
                    let zb = zbar[r];
                    let dzb = &dzbar[r * g..(r + 1) * g];
                    for c in 0..fan_in {
                        hbar[c] += row[c] * zb;
                        let dst = &mut dhbar[c * g..(c + 1) * g];
                        for j in 0..g {
                            dst[j] += row[c] * dzb[j];
                        }
                    }
                }
            }
        }
    }
    Ok(ParamVector(grad))
}

#[inline(always)]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
