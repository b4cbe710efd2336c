//! Loss terms, their cotangents, and the fused per-step gradient.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainMode};
use crate::geom::{Point3, Vec3};
use crate::siren::{LayerGrads, SirenField, CHUNK};
use crate::{Error, Real, Result};

/// Value of one loss term with the cotangents that feed `backward_batch`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerm<T> {
    pub value: f64,
    pub dvalue: Vec<T>,
    pub dgrad: Vec<Vec3<T>>,
}

impl<T: Real> LossTerm<T> {
    fn zeros(n: usize) -> Self {
        LossTerm {
            value: 0.0,
            dvalue: vec![T::zero(); n],
            dgrad: vec![Vec3::zero(); n],
        }
    }
}

/// Unweighted loss terms. In the signed-distance modes `lg` holds the
/// eikonal term, `le` the off-surface penalty and `align` the normal
/// alignment term; `align` is zero in the indicator modes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TermValues {
    pub lg: f64,
    pub ls: f64,
    pub le: f64,
    pub align: f64,
}

impl TermValues {
    pub fn total(&self, cfg: &TrainConfig) -> f64 {
        let w = &cfg.weights;
        let le = if cfg.mode.uses_free_space() { w.le * self.le } else { 0.0 };
        w.lg * self.lg + w.ls * self.ls + le + cfg.alignment_weight * self.align
    }

    fn add(&mut self, o: &TermValues) {
        self.lg += o.lg;
        self.ls += o.ls;
        self.le += o.le;
        self.align += o.align;
    }
}

/// Surface-level target `c` and free-space target `e` of the indicator.
pub fn indicator_levels(centered: bool) -> (f64, f64) {
    if centered {
        (0.0, -0.5)
    } else {
        (0.5, 0.0)
    }
}

fn squared_residual(v: f64, target: f64, n: f64) -> (f64, f64) {
    let r = v - target;
    (r * r, 2.0 * r / n)
}

fn gradient_residual(g: Vec3<f64>, target: Vec3<f64>, n: f64) -> (f64, Vec3<f64>) {
    let d = g - target;
    (d.norm_squared(), d * (2.0 / n))
}

fn eikonal(g: Vec3<f64>, n: f64) -> (f64, Vec3<f64>) {
    let len = g.norm();
    let r = len - 1.0;
    let d = if len > 0.0 { g * (2.0 * r / (len * n)) } else { Vec3::zero() };
    (r * r, d)
}

fn alignment(g: Vec3<f64>, target: Vec3<f64>, n: f64) -> (f64, Vec3<f64>) {
    (1.0 - g.dot(target), target * (-1.0 / n))
}

/// `exp(-alpha |v|)`, or `exp(+alpha |v|)` when `literal` is set.
fn off_surface(v: f64, alpha: f64, literal: bool, n: f64) -> (f64, f64) {
    let a = if literal { -alpha } else { alpha };
    let e = (-a * v.abs()).exp();
    let sign = if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
    (e, -a * sign * e / n)
}

fn cast3<T: Real>(v: Vec3<f64>) -> Vec3<T> {
    v.cast()
}

/// Mean of `||grad chi(p) - V(p)||^2`.
pub fn loss_gradient_term<T: Real>(
    field: &SirenField<T>,
    points: &[Point3<T>],
    targets: &[Option<Vec3<T>>],
) -> Result<LossTerm<T>> {
    if points.len() != targets.len() {
        return Err(Error::invalid("one gradient target per point required"));
    }
    if let Some(i) = targets.iter().position(Option::is_none) {
        return Err(Error::invalid(format!("gradient target {i} is undefined; filter before calling")));
    }
    let n = points.len() as f64;
    let mut term = LossTerm::zeros(points.len());
    for (i, d) in field.eval_dual_batch(points).iter().enumerate() {
        let (v, c) = gradient_residual(d.grad.cast(), targets[i].unwrap().cast(), n);
        term.value += v / n;
        term.dgrad[i] = cast3(c);
    }
    Ok(term)
}

/// Mean of `(chi(p) - c)^2`, `c` the surface level.
pub fn loss_surface_term<T: Real>(field: &SirenField<T>, points: &[Point3<T>], centered: bool) -> LossTerm<T> {
    value_term(field, points, indicator_levels(centered).0)
}

/// Mean of `(chi(q) - e)^2`, `e` the free-space level.
pub fn loss_empty_term<T: Real>(field: &SirenField<T>, points: &[Point3<T>], centered: bool) -> LossTerm<T> {
    value_term(field, points, indicator_levels(centered).1)
}

fn value_term<T: Real>(field: &SirenField<T>, points: &[Point3<T>], target: f64) -> LossTerm<T> {
    let n = points.len() as f64;
    let mut term = LossTerm::zeros(points.len());
    for (i, v) in field.eval_batch(points).iter().enumerate() {
        let (l, c) = squared_residual(v.to_f64_lossless(), target, n);
        term.value += l / n;
        term.dvalue[i] = T::of(c);
    }
    term
}

/// Signed-distance objective as one weighted term:
/// `ls * mean chi(p)^2 + lg * mean (|grad|-1)^2 + align * mean (1 - grad . V)`
/// over the surface set, plus `le * mean exp(-alpha |chi(q)|)` over the
/// off-surface set in the high-off-surface mode. Cotangents of the surface
/// set come first, then those of the off-surface set.
pub fn loss_sdf_terms<T: Real>(
    field: &SirenField<T>,
    surface: &[Point3<T>],
    targets: &[Vec3<T>],
    off_surface_points: &[Point3<T>],
    cfg: &TrainConfig,
) -> Result<(TermValues, LossTerm<T>)> {
    if !cfg.mode.is_sdf() {
        return Err(Error::invalid(format!("loss_sdf_terms called in {:?} mode", cfg.mode)));
    }
    if surface.len() != targets.len() {
        return Err(Error::invalid("one normal target per surface point required"));
    }
    let w = &cfg.weights;
    let n = surface.len() as f64;
    let mut terms = TermValues::default();
    let mut out = LossTerm::zeros(surface.len() + off_surface_points.len());
    for (i, d) in field.eval_dual_batch(surface).iter().enumerate() {
        let g = d.grad.cast::<f64>();
        let (s, sc) = squared_residual(d.value.to_f64_lossless(), 0.0, n);
        let (e, ec) = eikonal(g, n);
        let (a, ac) = alignment(g, targets[i].cast(), n);
        terms.ls += s / n;
        terms.lg += e / n;
        terms.align += a / n;
        out.dvalue[i] = T::of(w.ls * sc);
        out.dgrad[i] = cast3(ec * w.lg + ac * cfg.alignment_weight);
    }
    if cfg.mode == TrainMode::SdfHighOffSurface {
        let m = off_surface_points.len() as f64;
        for (i, v) in field.eval_batch(off_surface_points).iter().enumerate() {
            let (p, pc) = off_surface(v.to_f64_lossless(), cfg.off_surface_alpha, cfg.literal_off_surface_sign, m);
            terms.le += p / m;
            out.dvalue[surface.len() + i] = T::of(w.le * pc);
        }
    }
    out.value = terms.total(cfg);
    Ok((terms, out))
}

/// Points of one optimizer step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepBatch<T> {
    pub surface: Vec<Point3<T>>,
    /// Vector-field targets at the surface points.
    pub surface_targets: Vec<Vec3<T>>,
    /// Jittered near-surface points with defined targets.
    pub near: Vec<Point3<T>>,
    pub near_targets: Vec<Vec3<T>>,
    pub empty: Vec<Point3<T>>,
}

#[derive(Clone, Copy)]
enum Stream {
    Surface,
    Near,
    Empty,
}

struct Denominators {
    gradient: f64,
    surface: f64,
    empty: f64,
}

fn chunk_terms<T: Real>(
    field: &SirenField<T>,
    batch: &StepBatch<T>,
    cfg: &TrainConfig,
    den: &Denominators,
    stream: Stream,
    start: usize,
    with_grad: bool,
) -> (TermValues, Option<LayerGrads<T>>) {
    let w = &cfg.weights;
    let sdf = cfg.mode.is_sdf();
    let (c_level, e_level) = indicator_levels(cfg.centered);
    let mut t = TermValues::default();
    let (points, targets) = match stream {
        Stream::Surface => (&batch.surface, Some(&batch.surface_targets)),
        Stream::Near => (&batch.near, Some(&batch.near_targets)),
        Stream::Empty => (&batch.empty, None),
    };
    let end = (start + CHUNK).min(points.len());
    let xs = &points[start..end];
    let dual = targets.is_some();
    let tape = field.forward(xs, dual);
    let mut dv = vec![T::zero(); xs.len()];
    let mut dg = vec![Vec3::zero(); if dual { xs.len() } else { 0 }];
    for i in 0..xs.len() {
        let v = tape.values()[i].to_f64_lossless();
        if let Some(targets) = targets {
            let g = tape.grads()[i].cast::<f64>();
            let target = targets[start + i].cast::<f64>();
            let ng = den.gradient;
            let grad_cot = if sdf {
                let (e, ec) = eikonal(g, ng);
                let (a, ac) = alignment(g, target, ng);
                t.lg += e / ng;
                t.align += a / ng;
                ec * w.lg + ac * cfg.alignment_weight
            } else {
                let (l, lc) = gradient_residual(g, target, ng);
                t.lg += l / ng;
                lc * w.lg
            };
            dg[i] = cast3(grad_cot);
            if let Stream::Surface = stream {
                let ns = den.surface;
                let (l, lc) = squared_residual(v, if sdf { 0.0 } else { c_level }, ns);
                t.ls += l / ns;
                dv[i] = T::of(w.ls * lc);
            }
        } else {
            let ne = den.empty;
            let (l, lc) = if sdf {
                off_surface(v, cfg.off_surface_alpha, cfg.literal_off_surface_sign, ne)
            } else {
                squared_residual(v, e_level, ne)
            };
            t.le += l / ne;
            dv[i] = T::of(w.le * lc);
        }
    }
    let grads = with_grad.then(|| tape.backward(field, &dv, dual.then_some(&dg[..])));
    (t, grads)
}

fn run_step<T: Real>(
    field: &SirenField<T>,
    batch: &StepBatch<T>,
    cfg: &TrainConfig,
    with_grad: bool,
) -> Result<(TermValues, Option<Vec<f64>>)> {
    if batch.surface.len() != batch.surface_targets.len() || batch.near.len() != batch.near_targets.len() {
        return Err(Error::invalid("step batch targets do not match points"));
    }
    let den = Denominators {
        gradient: (batch.surface.len() + batch.near.len()) as f64,
        surface: batch.surface.len() as f64,
        empty: batch.empty.len() as f64,
    };
    let mut work: Vec<(Stream, usize)> = Vec::new();
    work.extend((0..batch.surface.len()).step_by(CHUNK).map(|s| (Stream::Surface, s)));
    work.extend((0..batch.near.len()).step_by(CHUNK).map(|s| (Stream::Near, s)));
    if cfg.mode.uses_free_space() {
        work.extend((0..batch.empty.len()).step_by(CHUNK).map(|s| (Stream::Empty, s)));
    }
    let mut terms = TermValues::default();
    let mut acc = with_grad.then(|| vec![0.0; field.num_params()]);
    for group in work.chunks(32) {
        let parts: Vec<_> = group
            .par_iter()
            .map(|&(stream, start)| chunk_terms(field, batch, cfg, &den, stream, start, with_grad))
            .collect();
        for (t, g) in parts {
            terms.add(&t);
            if let (Some(acc), Some(g)) = (acc.as_mut(), g) {
                g.add_to(acc);
            }
        }
    }
    Ok((terms, acc))
}

/// Loss terms of one step and the parameter gradient of their weighted sum.
pub fn batch_loss_and_gradient<T: Real>(
    field: &SirenField<T>,
    batch: &StepBatch<T>,
    cfg: &TrainConfig,
) -> Result<(TermValues, Vec<f64>)> {
    run_step(field, batch, cfg, true).map(|(t, g)| (t, g.unwrap()))
}

/// Loss terms of one step without the backward sweep.
pub fn batch_loss<T: Real>(field: &SirenField<T>, batch: &StepBatch<T>, cfg: &TrainConfig) -> Result<TermValues> {
    run_step(field, batch, cfg, false).map(|(t, _)| t)
}
