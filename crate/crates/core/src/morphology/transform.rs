use super::BinaryMask;
use crate::error::{Error, Result};
use crate::volume::linear_index;

/// Mean voxel coordinate of the set voxels.
pub fn centroid(mask: &BinaryMask) -> Result<[f64; 3]> {
    let mut sum = [0.0f64; 3];
    let mut n = 0usize;
    for p in mask.voxels() {
        for a in 0..3 {
            sum[a] += p[a] as f64;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask("centroid"));
    }
    Ok(sum.map(|s| s / n as f64))
}

/// Round to nearest, exact halves going to the lower integer.
fn round_half_down(v: f64) -> f64 {
    (v - 0.5).ceil()
}

/// Per-axis source index of each output coordinate under the inverse of
/// `p -> center + factors * (p - center)`; `None` when it leaves the grid.
pub(crate) fn source_maps(dims: [usize; 3], factors: [f64; 3], center: [f64; 3]) -> [Vec<Option<usize>>; 3] {
    std::array::from_fn(|a| {
        (0..dims[a])
            .map(|p| {
                let q = round_half_down(center[a] + (p as f64 - center[a]) / factors[a]);
                (q >= 0.0 && q < dims[a] as f64).then_some(q as usize)
            })
            .collect()
    })
}

/// Resample `mask` under `p -> center + factors * (p - center)`.
///
/// Output voxel `p` takes the value of the source voxel nearest to
/// `center + (p - center) / factors`; sources outside the grid are unset.
pub fn scale_mask(mask: &BinaryMask, factors: [f64; 3], center: [f64; 3]) -> Result<BinaryMask> {
    if factors.iter().any(|&f| !(f > 0.0 && f <= 4.0)) {
        return Err(Error::InvalidArgument(format!("scale factors {factors:?} outside (0, 4]")));
    }
    if factors == [1.0; 3] {
        return Ok(mask.clone());
    }
    let dims = mask.dims();
    let maps = source_maps(dims, factors, center);
    let mut out = BinaryMask::empty(dims);
    let src = mask.bits();
    let dst = out.bits_mut();
    for (z, sz) in maps[2].iter().enumerate() {
        let Some(sz) = *sz else { continue };
        for (y, sy) in maps[1].iter().enumerate() {
            let Some(sy) = *sy else { continue };
            let row = linear_index(dims, [0, sy, sz]);
            let out_row = linear_index(dims, [0, y, z]);
            for (x, sx) in maps[0].iter().enumerate() {
                if let Some(sx) = *sx {
                    dst[out_row + x] = src[row + sx];
                }
            }
        }
    }
    Ok(out)
}
