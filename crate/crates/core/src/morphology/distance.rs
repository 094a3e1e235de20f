use super::BinaryMask;
use crate::error::{Error, Result};
use crate::volume::linear_index;

const FAR: f64 = 1e20;

/// Lower envelope of parabolas along one line (Felzenszwalb & Huttenlocher).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let cross = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    for q in 1..n {
        let mut s = cross(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = cross(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance (voxel units) from every voxel to the
/// nearest set voxel of `features`. Voxels are at `f64::INFINITY` when
/// `features` is empty.
pub fn squared_distance_transform(features: &BinaryMask) -> Vec<f64> {
    let dims = features.dims();
    if features.is_empty() {
        return vec![f64::INFINITY; features.bits().len()];
    }
    let mut d: Vec<f64> = features.bits().iter().map(|&b| if b { 0.0 } else { FAR }).collect();
    let longest = dims.iter().copied().max().unwrap_or(1);
    let mut line = vec![0.0; longest];
    let mut res = vec![0.0; longest];
    let mut v = vec![0usize; longest];
    let mut z = vec![0.0; longest + 1];
    for axis in 0..3 {
        let n = dims[axis];
        let [a, b] = match axis {
            0 => [1, 2],
            1 => [0, 2],
            _ => [0, 1],
        };
        for j in 0..dims[b] {
            for i in 0..dims[a] {
                let at = |t: usize| {
                    let mut p = [0; 3];
                    p[axis] = t;
                    p[a] = i;
                    p[b] = j;
                    linear_index(dims, p)
                };
                for t in 0..n {
                    line[t] = d[at(t)];
                }
                edt_1d(&line[..n], &mut res[..n], &mut v, &mut z);
                for t in 0..n {
                    d[at(t)] = res[t].min(FAR);
                }
            }
        }
    }
    d
}

/// Smallest Euclidean distance between a voxel of `a` and a voxel of `b`.
pub fn min_distance(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::EmptyMask("first operand of min_distance"));
    }
    if b.is_empty() {
        return Err(Error::EmptyMask("second operand of min_distance"));
    }
    let dt = squared_distance_transform(b);
    let best = a
        .bits()
        .iter()
        .zip(&dt)
        .filter(|(&set, _)| set)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    Ok(best.sqrt())
}
