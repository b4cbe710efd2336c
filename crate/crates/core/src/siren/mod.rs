//! Sine-activated MLP with exact input gradients and exact parameter
//! gradients of losses on both the value and the input gradient.
//!
//! Every hidden layer computes `h = sin(omega0 * (W s + b))`; the output
//! layer is linear. Input gradients are carried forward as three tangent
//! streams stacked under the value rows, so one matrix product per layer
//! serves all four. The backward sweep differentiates that stacked forward
//! pass, which yields `d/dtheta` of both `chi(x)` and `grad_x chi(x)`.

mod adam;
mod checkpoint;
mod tape;

use ndarray::{Array1, Array2};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::geom::{Point3, Vec3};
use crate::{Error, Real, Result};

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tape::{LayerGrads, Tape};

pub const DEFAULT_OMEGA0: f64 = 30.0;
pub const DEFAULT_HIDDEN: usize = 256;
/// Weight matrices, counting the linear output layer.
pub const DEFAULT_LAYERS: usize = 5;
/// Rows per forward/backward block. Fixed so that reductions do not depend
/// on the thread count.
pub const CHUNK: usize = 128;
/// Blocks whose gradients are held at once before being folded in order.
const GROUP: usize = 32;

/// Layer widths `[3, hidden, ..., hidden, 1]` for `layers` weight matrices.
pub fn architecture(layers: usize, hidden: usize) -> Vec<usize> {
    let mut dims = vec![3];
    dims.extend(std::iter::repeat_n(hidden, layers.saturating_sub(1)));
    dims.push(1);
    dims
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    /// `out x in`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Layer<T> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            weight: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.nrows()
    }
}

/// Value and input gradient at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualEval<T> {
    pub value: T,
    pub grad: Vec3<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SirenField<T> {
    layers: Vec<Layer<T>>,
    omega0: T,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 3 {
        return Err(Error::invalid(format!("need at least one hidden layer, got dims {dims:?}")));
    }
    if dims[0] != 3 || *dims.last().unwrap() != 1 {
        return Err(Error::invalid(format!("dims must run from 3 to 1, got {dims:?}")));
    }
    if dims.contains(&0) {
        return Err(Error::invalid(format!("zero-width layer in {dims:?}")));
    }
    Ok(())
}

impl<T: Real> SirenField<T> {
    /// Sine-network initialization: first-layer weights `U(-1/fan_in, 1/fan_in)`,
    /// later weights `U(-sqrt(6/fan_in)/omega0, sqrt(6/fan_in)/omega0)`,
    /// biases `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`. Zero biases would make
    /// the initial network odd in `x`, pinning `f(0)` to 0. Values are drawn
    /// in `f64` so `f32` and `f64` fields built from one seed agree up to
    /// rounding.
    pub fn init(dims: &[usize], omega0: f64, seed: u64) -> Result<Self> {
        let mut field = Self::zeros(dims, omega0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, layer) in field.layers.iter_mut().enumerate() {
            let fan_in = layer.fan_in() as f64;
            let bound = if l == 0 { 1.0 / fan_in } else { (6.0 / fan_in).sqrt() / omega0 };
            layer.weight.iter_mut().for_each(|w| *w = T::of(rng.random_range(-bound..bound)));
            let bias_bound = 1.0 / fan_in.sqrt();
            layer.bias.iter_mut().for_each(|b| *b = T::of(rng.random_range(-bias_bound..bias_bound)));
        }
        Ok(field)
    }

    pub fn zeros(dims: &[usize], omega0: f64) -> Result<Self> {
        check_dims(dims)?;
        if !(omega0 > 0.0 && omega0.is_finite()) {
            return Err(Error::invalid(format!("omega0 must be positive, got {omega0}")));
        }
        Ok(SirenField {
            layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            omega0: T::of(omega0),
        })
    }

    pub fn from_layers(layers: Vec<Layer<T>>, omega0: f64) -> Result<Self> {
        let mut dims = vec![layers.first().map_or(0, Layer::fan_in)];
        for (l, layer) in layers.iter().enumerate() {
            if layer.fan_in() != dims[l] || layer.bias.len() != layer.fan_out() {
                return Err(Error::invalid(format!("layer {l} shape does not chain")));
            }
            dims.push(layer.fan_out());
        }
        let mut field = Self::zeros(&dims, omega0)?;
        field.layers = layers;
        Ok(field)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn omega0(&self) -> T {
        self.omega0
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].fan_in()];
        d.extend(self.layers.iter().map(Layer::fan_out));
        d
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Flat parameters: per layer, the weights row-major then the biases.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = it.next().unwrap());
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> SirenField<U> {
        SirenField {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.mapv(|v| U::of(v.to_f64_lossless())),
                    bias: l.bias.mapv(|v| U::of(v.to_f64_lossless())),
                })
                .collect(),
            omega0: U::of(self.omega0.to_f64_lossless()),
        }
    }

    /// Record a forward pass over `xs`; `dual` also tracks input gradients.
    pub fn forward(&self, xs: &[Point3<T>], dual: bool) -> Tape<T> {
        Tape::record(self, xs, dual)
    }

    pub fn eval(&self, x: Point3<T>) -> T {
        self.forward(&[x], false).values()[0]
    }

    pub fn eval_dual(&self, x: Point3<T>) -> DualEval<T> {
        let t = self.forward(&[x], true);
        DualEval {
            value: t.values()[0],
            grad: t.grads()[0],
        }
    }

    pub fn eval_batch(&self, xs: &[Point3<T>]) -> Vec<T> {
        xs.par_chunks(CHUNK)
            .flat_map_iter(|c| self.forward(c, false).values().to_vec())
            .collect()
    }

    pub fn eval_dual_batch(&self, xs: &[Point3<T>]) -> Vec<DualEval<T>> {
        xs.par_chunks(CHUNK)
            .flat_map_iter(|c| {
                let t = self.forward(c, true);
                t.values()
                    .iter()
                    .zip(t.grads())
                    .map(|(&value, &grad)| DualEval { value, grad })
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// `sum_i dvalue_i * d chi(x_i)/d theta + dgrad_i . d grad_x chi(x_i)/d theta`
    /// as a flat `f64` vector in [`params`](Self::params) order.
    pub fn backward_batch(&self, xs: &[Point3<T>], dvalue: &[T], dgrad: &[Vec3<T>]) -> Result<Vec<f64>> {
        self.backward_batch_chunked(xs, dvalue, dgrad, CHUNK)
    }

    /// [`backward_batch`](Self::backward_batch) with an explicit block size.
    /// Block gradients are summed in `f64` in block order, so `chunk = 1`
    /// equals the ordered sum of single-point calls exactly.
    pub fn backward_batch_chunked(
        &self,
        xs: &[Point3<T>],
        dvalue: &[T],
        dgrad: &[Vec3<T>],
        chunk: usize,
    ) -> Result<Vec<f64>> {
        if dvalue.len() != xs.len() || dgrad.len() != xs.len() {
            return Err(Error::invalid(format!(
                "backward_batch got {} points, {} value and {} gradient cotangents",
                xs.len(),
                dvalue.len(),
                dgrad.len()
            )));
        }
        let chunk = chunk.max(1);
        let dual = dgrad.iter().any(|g| *g != Vec3::zero());
        let mut acc = vec![0.0; self.num_params()];
        let blocks: Vec<usize> = (0..xs.len()).step_by(chunk).collect();
        for group in blocks.chunks(GROUP) {
            let grads: Vec<LayerGrads<T>> = group
                .par_iter()
                .map(|&start| {
                    let end = (start + chunk).min(xs.len());
                    let tape = self.forward(&xs[start..end], dual);
                    tape.backward(self, &dvalue[start..end], dual.then(|| &dgrad[start..end]))
                })
                .collect();
            for g in &grads {
                g.add_to(&mut acc);
            }
        }
        Ok(acc)
    }

    /// Apply one Adam step with a flat gradient.
    pub fn adam_step(&mut self, state: &mut AdamState, grad: &[f64]) -> Result<()> {
        let mut p = self.params();
        state.step(&mut p, grad)?;
        self.set_params(&p)
    }
}

#[cfg(test)]
mod tests;
