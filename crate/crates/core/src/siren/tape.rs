use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use super::SirenField;
use crate::geom::{Point3, Vec3};
use crate::Real;

/// Activations of one sine layer.
#[derive(Clone, Debug)]
struct SineCache<T> {
    /// `[h; dh/dx; dh/dy; dh/dz]` (or just `h` without tangents), rows x out.
    out: Array2<T>,
    cos: Array2<T>,
    /// Pre-activation tangents `[da/dx; da/dy; da/dz]`, `3B x out`.
    adot: Option<Array2<T>>,
}

/// A recorded forward pass over a block of points, ready for a backward sweep.
#[derive(Clone, Debug)]
pub struct Tape<T> {
    n: usize,
    input: Array2<T>,
    sine: Vec<SineCache<T>>,
    values: Vec<T>,
    grads: Vec<Vec3<T>>,
}

/// Parameter gradient of one block, per layer.
#[derive(Clone, Debug)]
pub struct LayerGrads<T> {
    pub layers: Vec<(Array2<T>, Array1<T>)>,
}

impl<T: Real> LayerGrads<T> {
    /// Add into a flat `f64` accumulator laid out like `SirenField::params`.
    pub fn add_to(&self, acc: &mut [f64]) {
        let mut it = acc.iter_mut();
        for (w, b) in &self.layers {
            for v in w.iter().chain(b.iter()) {
                *it.next().expect("accumulator too short") += v.to_f64_lossless();
            }
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let n = self.layers.iter().map(|(w, b)| w.len() + b.len()).sum();
        let mut acc = vec![0.0; n];
        self.add_to(&mut acc);
        acc
    }
}

impl<T: Real> Tape<T> {
    pub(super) fn record(field: &SirenField<T>, xs: &[Point3<T>], dual: bool) -> Self {
        let n = xs.len();
        let omega = field.omega0;
        let input = Array2::from_shape_fn((n, 3), |(i, j)| xs[i][j]);
        let layers = field.layers();
        let (hidden, last) = layers.split_at(layers.len() - 1);
        let mut sine: Vec<SineCache<T>> = Vec::with_capacity(hidden.len());
        for (l, layer) in hidden.iter().enumerate() {
            let width = layer.fan_out();
            let (z_val, adot) = if l == 0 {
                let z = input.dot(&layer.weight.t());
                // the input tangents are the unit axes, so da/dx_j = omega * W[:, j]
                let adot = dual.then(|| {
                    Array2::from_shape_fn((3 * n, width), |(r, o)| omega * layer.weight[[o, r / n]])
                });
                (z, adot)
            } else {
                let z = sine[l - 1].out.dot(&layer.weight.t());
                if dual {
                    let z_val = z.slice(s![..n, ..]).to_owned();
                    let adot = z.slice(s![n.., ..]).mapv(|v| v * omega);
                    (z_val, Some(adot))
                } else {
                    (z, None)
                }
            };
            let mut a = z_val;
            Zip::from(a.rows_mut()).for_each(|mut row| {
                Zip::from(&mut row).and(&layer.bias).for_each(|v, &b| *v = omega * (*v + b));
            });
            let cos = a.mapv(T::cos);
            let rows = if dual { 4 * n } else { n };
            let mut out = Array2::zeros((rows, width));
            Zip::from(out.slice_mut(s![..n, ..])).and(&a).for_each(|o, &v| *o = v.sin());
            if let Some(adot) = &adot {
                for j in 0..3 {
                    Zip::from(out.slice_mut(s![(j + 1) * n..(j + 2) * n, ..]))
                        .and(&cos)
                        .and(adot.slice(s![j * n..(j + 1) * n, ..]))
                        .for_each(|o, &c, &d| *o = c * d);
                }
            }
            sine.push(SineCache { out, cos, adot });
        }
        let out_layer = &last[0];
        let y = sine.last().expect("at least one sine layer").out.dot(&out_layer.weight.t());
        let b = out_layer.bias[0];
        let values = (0..n).map(|i| y[[i, 0]] + b).collect();
        let grads = if dual {
            (0..n)
                .map(|i| Vec3::new(y[[n + i, 0]], y[[2 * n + i, 0]], y[[3 * n + i, 0]]))
                .collect()
        } else {
            Vec::new()
        };
        Tape {
            n,
            input,
            sine,
            values,
            grads,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_dual(&self) -> bool {
        self.sine.first().is_some_and(|c| c.adot.is_some())
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Input gradients; empty unless the tape was recorded with tangents.
    pub fn grads(&self) -> &[Vec3<T>] {
        &self.grads
    }

    /// Parameter gradient of `sum_i dvalue_i chi(x_i) + dgrad_i . grad chi(x_i)`.
    /// `dgrad` is ignored on a value-only tape and may be `None` on a dual one.
    pub fn backward(&self, field: &SirenField<T>, dvalue: &[T], dgrad: Option<&[Vec3<T>]>) -> LayerGrads<T> {
        let n = self.n;
        let omega = field.omega0;
        let dual = self.is_dual();
        let layers = field.layers();
        let rows = if dual { 4 * n } else { n };

        let mut c = Array2::<T>::zeros((rows, 1));
        for i in 0..n {
            c[[i, 0]] = dvalue[i];
        }
        if dual {
            if let Some(dg) = dgrad {
                for i in 0..n {
                    for j in 0..3 {
                        c[[(j + 1) * n + i, 0]] = dg[i][j];
                    }
                }
            }
        }
        let out_layer = layers.last().unwrap();
        let s_last = &self.sine.last().unwrap().out;
        let mut grads = vec![(Array2::zeros((0, 0)), Array1::zeros(0)); layers.len()];
        let last = layers.len() - 1;
        grads[last] = (
            c.t().dot(s_last),
            Array1::from_elem(1, dvalue.iter().copied().sum::<T>()),
        );
        // cotangent of the stacked input of the current layer
        let mut g = c.dot(&out_layer.weight);

        for l in (0..self.sine.len()).rev() {
            let cache = &self.sine[l];
            let sin = cache.out.slice(s![..n, ..]);
            let mut zbar = Array2::<T>::zeros((rows, cache.cos.ncols()));
            {
                let (mut a, mut adot_bar) = zbar.view_mut().split_at(Axis(0), n);
                Zip::from(&mut a)
                    .and(&cache.cos)
                    .and(g.slice(s![..n, ..]))
                    .for_each(|a, &c, &h| *a = c * h);
                if let Some(adot) = &cache.adot {
                    for j in 0..3 {
                        let hj = g.slice(s![(j + 1) * n..(j + 2) * n, ..]);
                        let aj = adot.slice(s![j * n..(j + 1) * n, ..]);
                        Zip::from(&mut a)
                            .and(&sin)
                            .and(&aj)
                            .and(&hj)
                            .for_each(|a, &s, &d, &h| *a -= s * d * h);
                        Zip::from(adot_bar.slice_mut(s![j * n..(j + 1) * n, ..]))
                            .and(&cache.cos)
                            .and(&hj)
                            .for_each(|o, &c, &h| *o = c * h);
                    }
                }
            }
            zbar.mapv_inplace(|v| v * omega);
            let db = zbar.slice(s![..n, ..]).sum_axis(Axis(0));
            let dw = if l == 0 {
                let mut dw = zbar.slice(s![..n, ..]).t().dot(&self.input);
                if dual {
                    for j in 0..3 {
                        let col = zbar.slice(s![(j + 1) * n..(j + 2) * n, ..]).sum_axis(Axis(0));
                        let mut target = dw.column_mut(j);
                        target += &col;
                    }
                }
                dw
            } else {
                let s_in: ArrayView2<T> = self.sine[l - 1].out.view();
                let dw = zbar.t().dot(&s_in);
                g = zbar.dot(&layers[l].weight);
                dw
            };
            grads[l] = (dw, db);
        }
        LayerGrads { layers: grads }
    }
}
