use super::{
    linear_index, voxel_count, CropRecord, IntensityRange, IntensityVolume, LabelVolume,
    VolumeGeometry,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResizeMode {
    Nearest,
    Trilinear,
}

/// Inclusive bounding box of non-background voxels.
fn foreground_bbox(labels: &LabelVolume) -> Option<([usize; 3], [usize; 3])> {
    let dims = labels.dims();
    let bg = labels.vocabulary().background();
    let mut lo = dims;
    let mut hi = [0usize; 3];
    let mut any = false;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            let row = linear_index(dims, [0, y, z]);
            for (x, &v) in labels.voxels()[row..row + dims[0]].iter().enumerate() {
                if v != bg {
                    any = true;
                    for (axis, c) in [x, y, z].into_iter().enumerate() {
                        lo[axis] = lo[axis].min(c);
                        hi[axis] = hi[axis].max(c);
                    }
                }
            }
        }
    }
    any.then_some((lo, hi))
}

fn crop_grid<T: Copy>(data: &[T], dims: [usize; 3], offset: [usize; 3], size: [usize; 3]) -> Vec<T> {
    let mut out = Vec::with_capacity(voxel_count(size));
    for z in 0..size[2] {
        for y in 0..size[1] {
            let start = linear_index(dims, [offset[0], offset[1] + y, offset[2] + z]);
            out.extend_from_slice(&data[start..start + size[0]]);
        }
    }
    out
}

fn pad_grid<T: Copy>(
    data: &[T],
    size: [usize; 3],
    offset: [usize; 3],
    full: [usize; 3],
    fill: T,
) -> Vec<T> {
    let mut out = vec![fill; voxel_count(full)];
    for z in 0..size[2] {
        for y in 0..size[1] {
            let src = linear_index(size, [0, y, z]);
            let dst = linear_index(full, [offset[0], offset[1] + y, offset[2] + z]);
            out[dst..dst + size[0]].copy_from_slice(&data[src..src + size[0]]);
        }
    }
    out
}

fn crop_record(labels: &LabelVolume, margin: usize) -> Result<CropRecord> {
    let dims = labels.dims();
    let (lo, hi) = foreground_bbox(labels).ok_or(Error::EmptyForeground)?;
    let offset: [usize; 3] = std::array::from_fn(|a| lo[a].saturating_sub(margin));
    let end: [usize; 3] = std::array::from_fn(|a| (hi[a] + margin + 1).min(dims[a]));
    let cropped_dims = std::array::from_fn(|a| end[a] - offset[a]);
    Ok(CropRecord {
        original_dims: dims,
        offset,
        cropped_dims,
        target_dims: cropped_dims,
        intensity_range: None,
    })
}

fn apply_label_crop(labels: &LabelVolume, record: &CropRecord) -> LabelVolume {
    let voxels = crop_grid(labels.voxels(), labels.dims(), record.offset, record.cropped_dims);
    let offset = record.offset.map(|o| o as f64);
    LabelVolume::from_parts_unchecked(
        labels.geometry().reframed(offset, record.cropped_dims),
        voxels,
        labels.vocabulary().clone(),
    )
}

/// Crop to the tight box of non-background voxels grown by `margin`
/// (clamped to the grid).
pub fn crop_to_foreground(labels: &LabelVolume, margin: usize) -> Result<(LabelVolume, CropRecord)> {
    let record = crop_record(labels, margin)?;
    Ok((apply_label_crop(labels, &record), record))
}

/// Crop an image/label pair with the box computed from the labels.
pub fn crop_pair(
    labels: &LabelVolume,
    image: &IntensityVolume,
    margin: usize,
) -> Result<(LabelVolume, IntensityVolume, CropRecord)> {
    if labels.dims() != image.dims() {
        return Err(Error::DimsMismatch {
            expected: labels.dims(),
            actual: image.dims(),
        });
    }
    let record = crop_record(labels, margin)?;
    let voxels = crop_grid(image.voxels(), image.dims(), record.offset, record.cropped_dims);
    let geometry = image.geometry().reframed(record.offset.map(|o| o as f64), record.cropped_dims);
    let image = IntensityVolume::from_parts_unchecked(geometry, voxels);
    Ok((apply_label_crop(labels, &record), image, record))
}

/// Source index of output voxel `i` under voxel-center alignment, ties to
/// the lower index. Exact integer arithmetic:
/// `ceil(((2i + 1) * src - 2 * dst) / (2 * dst))`.
fn nearest_source(i: usize, src: usize, dst: usize) -> usize {
    let num = (2 * i as i64 + 1) * src as i64 - 2 * dst as i64;
    let den = 2 * dst as i64;
    let idx = if num <= 0 { -((-num) / den) } else { (num + den - 1) / den };
    idx.clamp(0, src as i64 - 1) as usize
}

fn resample_nearest<T: Copy>(data: &[T], src: [usize; 3], dst: [usize; 3]) -> Vec<T> {
    let maps: [Vec<usize>; 3] =
        std::array::from_fn(|a| (0..dst[a]).map(|i| nearest_source(i, src[a], dst[a])).collect());
    let mut out = Vec::with_capacity(voxel_count(dst));
    for &sz in &maps[2] {
        for &sy in &maps[1] {
            let row = linear_index(src, [0, sy, sz]);
            out.extend(maps[0].iter().map(|&sx| data[row + sx]));
        }
    }
    out
}

struct LinearTap {
    lo: usize,
    hi: usize,
    w: f64,
}

fn linear_taps(src: usize, dst: usize) -> Vec<LinearTap> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            LinearTap { lo, hi, w: s - lo as f64 }
        })
        .collect()
}

fn resample_trilinear(data: &[f64], src: [usize; 3], dst: [usize; 3]) -> Vec<f64> {
    let [tx, ty, tz] = [0, 1, 2].map(|a| linear_taps(src[a], dst[a]));
    let at = |x, y, z| data[linear_index(src, [x, y, z])];
    let mut out = Vec::with_capacity(voxel_count(dst));
    for cz in &tz {
        for cy in &ty {
            for cx in &tx {
                let mut acc = 0.0;
                for (z, wz) in [(cz.lo, 1.0 - cz.w), (cz.hi, cz.w)] {
                    for (y, wy) in [(cy.lo, 1.0 - cy.w), (cy.hi, cy.w)] {
                        let wzy = wz * wy;
                        if wzy == 0.0 {
                            continue;
                        }
                        acc += wzy * ((1.0 - cx.w) * at(cx.lo, y, z) + cx.w * at(cx.hi, y, z));
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

fn check_target(target: [usize; 3]) -> Result<()> {
    if target.contains(&0) {
        return Err(Error::InvalidArgument(format!("resize target {target:?} has a zero axis")));
    }
    Ok(())
}

/// Resample labels to `target` dims. Only nearest-neighbour is allowed, so
/// no new codes appear.
pub fn resize_labels(labels: &LabelVolume, target: [usize; 3], mode: ResizeMode) -> Result<LabelVolume> {
    if mode != ResizeMode::Nearest {
        return Err(Error::InterpolationMode);
    }
    check_target(target)?;
    let voxels = resample_nearest(labels.voxels(), labels.dims(), target);
    Ok(LabelVolume::from_parts_unchecked(
        labels.geometry().resized(target),
        voxels,
        labels.vocabulary().clone(),
    ))
}

pub fn resize_intensity(
    image: &IntensityVolume,
    target: [usize; 3],
    mode: ResizeMode,
) -> Result<IntensityVolume> {
    check_target(target)?;
    let voxels = match mode {
        ResizeMode::Nearest => resample_nearest(image.voxels(), image.dims(), target),
        ResizeMode::Trilinear => resample_trilinear(image.voxels(), image.dims(), target),
    };
    Ok(IntensityVolume::from_parts_unchecked(image.geometry().resized(target), voxels))
}

/// Linear map of `[min, max]` onto `[-1, 1]`. A constant image maps to -1.
pub fn normalize_intensity(image: &IntensityVolume) -> (IntensityVolume, IntensityRange) {
    let (min, max) = image.range();
    let range = IntensityRange { min, max };
    let span = max - min;
    let voxels = image
        .voxels()
        .iter()
        .map(|&v| if span > 0.0 { 2.0 * (v - min) / span - 1.0 } else { -1.0 })
        .collect();
    (IntensityVolume::from_parts_unchecked(image.geometry().clone(), voxels), range)
}

pub fn denormalize_intensity(image: &IntensityVolume, range: IntensityRange) -> IntensityVolume {
    let span = range.max - range.min;
    let voxels = image.voxels().iter().map(|&v| (v + 1.0) * 0.5 * span + range.min).collect();
    IntensityVolume::from_parts_unchecked(image.geometry().clone(), voxels)
}

fn check_revert_dims(dims: [usize; 3], record: &CropRecord) -> Result<()> {
    if dims != record.target_dims {
        return Err(Error::DimsMismatch {
            expected: record.target_dims,
            actual: dims,
        });
    }
    Ok(())
}

fn original_geometry(resized: &VolumeGeometry, record: &CropRecord) -> VolumeGeometry {
    resized
        .resized(record.cropped_dims)
        .reframed(record.offset.map(|o| -(o as f64)), record.original_dims)
}

/// Undo resize and crop: nearest-neighbour back to the cropped dims, then
/// pad with background at the recorded offset.
pub fn revert_labels(labels: &LabelVolume, record: &CropRecord) -> Result<LabelVolume> {
    check_revert_dims(labels.dims(), record)?;
    let small = resample_nearest(labels.voxels(), labels.dims(), record.cropped_dims);
    let bg = labels.vocabulary().background();
    let voxels = pad_grid(&small, record.cropped_dims, record.offset, record.original_dims, bg);
    Ok(LabelVolume::from_parts_unchecked(
        original_geometry(labels.geometry(), record),
        voxels,
        labels.vocabulary().clone(),
    ))
}

/// Undo resize and crop for an image: trilinear back to the cropped dims,
/// then pad with the recorded minimum (the image minimum when the record
/// has no intensity range).
pub fn revert_intensity(image: &IntensityVolume, record: &CropRecord) -> Result<IntensityVolume> {
    check_revert_dims(image.dims(), record)?;
    let small = resample_trilinear(image.voxels(), image.dims(), record.cropped_dims);
    let fill = record.intensity_range.map_or_else(|| image.range().0, |r| r.min);
    let voxels = pad_grid(&small, record.cropped_dims, record.offset, record.original_dims, fill);
    Ok(IntensityVolume::from_parts_unchecked(original_geometry(image.geometry(), record), voxels))
}
