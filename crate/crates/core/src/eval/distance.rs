use rayon::prelude::*;

use crate::geom::VoxelGrid;
use crate::{Error, Result};

/// Lower envelope of parabolas `(q - i)² + f[i]` over the finite entries of `f`.
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let sites: Vec<usize> = (0..f.len()).filter(|&i| f[i].is_finite()).collect();
    if sites.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let key = |i: usize| f[i] + (i * i) as f64;
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    v.push(sites[0]);
    z.push(f64::NEG_INFINITY);
    z.push(f64::INFINITY);
    for &q in &sites[1..] {
        loop {
            let p = *v.last().unwrap();
            let s = (key(q) - key(p)) / (2.0 * (q as f64 - p as f64));
            if s <= z[v.len() - 1] {
                v.pop();
                z.pop();
                if v.is_empty() {
                    break;
                }
            } else {
                *z.last_mut().unwrap() = s;
                break;
            }
        }
        if v.is_empty() {
            z.clear();
            z.push(f64::NEG_INFINITY);
        }
        v.push(q);
        z.push(f64::INFINITY);
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Apply `edt_1d` to every line of `data` along `axis`.
fn pass(data: &mut [f64], res: [usize; 3], axis: usize) {
    let stride = [1, res[0], res[0] * res[1]];
    let (ua, va) = ((axis + 1) % 3, (axis + 2) % 3);
    let n = res[axis];
    let lines: Vec<(usize, Vec<f64>)> = (0..res[ua] * res[va])
        .into_par_iter()
        .map(|l| {
            let base = (l % res[ua]) * stride[ua] + (l / res[ua]) * stride[va];
            let f: Vec<f64> = (0..n).map(|i| data[base + i * stride[axis]]).collect();
            let mut out = vec![0.0; n];
            edt_1d(&f, &mut out);
            (base, out)
        })
        .collect();
    for (base, out) in lines {
        for (i, v) in out.into_iter().enumerate() {
            data[base + i * stride[axis]] = v;
        }
    }
}

/// Exact Euclidean distance, in voxels, from each voxel center to the
/// nearest occupied voxel center.
pub fn distance_transform(grid: &VoxelGrid<bool>) -> Result<VoxelGrid<f64>> {
    if !grid.data.iter().any(|&b| b) {
        return Err(Error::UndefinedDistanceField);
    }
    let mut d: Vec<f64> = grid
        .data
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    for axis in 0..3 {
        pass(&mut d, grid.resolution, axis);
    }
    Ok(VoxelGrid {
        resolution: grid.resolution,
        origin: grid.origin,
        spacing: grid.spacing,
        data: d.into_iter().map(f64::sqrt).collect(),
    })
}

/// Per-voxel RMS difference of the two distance transforms.
pub fn l2_distance_fields(a: &VoxelGrid<bool>, b: &VoxelGrid<bool>) -> Result<f64> {
    if a.resolution != b.resolution {
        return Err(Error::invalid(format!(
            "distance fields need equal resolutions, got {:?} and {:?}",
            a.resolution, b.resolution
        )));
    }
    let da = distance_transform(a)?;
    let db = distance_transform(b)?;
    let sum: f64 = da.data.iter().zip(&db.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / da.len() as f64).sqrt())
}
