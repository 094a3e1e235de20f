//! Binary 3D morphology: dilation, erosion, opening/closing, connected
//! components, centroids, anisotropic scaling and Euclidean distances.
//!
//! Voxels outside the grid are always treated as unset.

mod components;
mod distance;
mod transform;

use serde::{Deserialize, Serialize};

pub use components::{connected_components, Component, Connectivity};
pub use distance::{min_distance, squared_distance_transform};
pub use transform::{centroid, scale_mask};
pub(crate) use transform::source_maps;

use crate::error::{Error, Result};
use crate::volume::{linear_index, voxel_coords, voxel_count};

/// Boolean voxel grid, x-fastest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    dims: [usize; 3],
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(dims: [usize; 3]) -> Self {
        Self {
            dims,
            bits: vec![false; voxel_count(dims)],
        }
    }

    pub fn full(dims: [usize; 3]) -> Self {
        Self {
            dims,
            bits: vec![true; voxel_count(dims)],
        }
    }

    pub fn from_bits(dims: [usize; 3], bits: Vec<bool>) -> Result<Self> {
        if bits.len() != voxel_count(dims) {
            return Err(Error::Geometry(format!("{} bits for dims {dims:?}", bits.len())));
        }
        Ok(Self { dims, bits })
    }

    pub fn from_voxels(dims: [usize; 3], voxels: impl IntoIterator<Item = [usize; 3]>) -> Self {
        let mut m = Self::empty(dims);
        for p in voxels {
            m.set(p, true);
        }
        m
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn get(&self, p: [usize; 3]) -> bool {
        self.bits[linear_index(self.dims, p)]
    }

    pub fn set(&mut self, p: [usize; 3], value: bool) {
        let i = linear_index(self.dims, p);
        self.bits[i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.contains(&true)
    }

    /// Coordinates of set voxels in storage order.
    pub fn voxels(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let dims = self.dims;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| voxel_coords(dims, i))
    }

    fn zip_with(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Self {
        assert_eq!(self.dims, other.dims, "mask dims differ");
        Self {
            dims: self.dims,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn complement(&self) -> Self {
        Self {
            dims: self.dims,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn intersects(&self, other: &Self) -> bool {
        self.bits.iter().zip(&other.bits).any(|(&a, &b)| a && b)
    }

    /// Inclusive bounding box of set voxels.
    pub fn bounding_box(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = self.dims;
        let mut hi = [0; 3];
        let mut any = false;
        for p in self.voxels() {
            any = true;
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        any.then_some((lo, hi))
    }

    /// The `size` box starting at `lo`.
    pub fn sub_box(&self, lo: [usize; 3], size: [usize; 3]) -> Self {
        assert!((0..3).all(|a| lo[a] + size[a] <= self.dims[a]), "box outside grid");
        let mut out = Self::empty(size);
        for z in 0..size[2] {
            for y in 0..size[1] {
                let src = linear_index(self.dims, [lo[0], y + lo[1], z + lo[2]]);
                let dst = linear_index(size, [0, y, z]);
                out.bits[dst..dst + size[0]].copy_from_slice(&self.bits[src..src + size[0]]);
            }
        }
        out
    }

    /// Place this mask at `lo` inside an empty grid of `dims`.
    pub fn embedded(&self, dims: [usize; 3], lo: [usize; 3]) -> Self {
        assert!((0..3).all(|a| lo[a] + self.dims[a] <= dims[a]), "box outside grid");
        let mut out = Self::empty(dims);
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                let src = linear_index(self.dims, [0, y, z]);
                let dst = linear_index(dims, [lo[0], y + lo[1], z + lo[2]]);
                out.bits[dst..dst + self.dims[0]].copy_from_slice(&self.bits[src..src + self.dims[0]]);
            }
        }
        out
    }

    fn padded(&self, pad: [usize; 3]) -> Self {
        self.embedded(std::array::from_fn(|a| self.dims[a] + 2 * pad[a]), pad)
    }

    fn unpadded(&self, pad: [usize; 3]) -> Self {
        self.sub_box(pad, std::array::from_fn(|a| self.dims[a] - 2 * pad[a]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Neighborhood {
    /// Face neighbours only (6 in 3D).
    Face,
    /// Face, edge and corner neighbours (26 in 3D).
    Full,
}

/// Unit structuring element restricted to the enabled axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuringElement {
    pub neighborhood: Neighborhood,
    pub axes: [bool; 3],
}

impl StructuringElement {
    pub fn new(neighborhood: Neighborhood, axes: [bool; 3]) -> Result<Self> {
        if !axes.contains(&true) {
            return Err(Error::InvalidArgument("structuring element needs an enabled axis".into()));
        }
        Ok(Self { neighborhood, axes })
    }

    /// 6-neighbourhood.
    pub fn face6() -> Self {
        Self {
            neighborhood: Neighborhood::Face,
            axes: [true; 3],
        }
    }

    /// 26-neighbourhood.
    pub fn full26() -> Self {
        Self {
            neighborhood: Neighborhood::Full,
            axes: [true; 3],
        }
    }

    /// 4-neighbourhood in the x-y plane.
    pub fn in_plane_xy() -> Self {
        Self {
            neighborhood: Neighborhood::Face,
            axes: [true, true, false],
        }
    }

    /// Neighbour offsets, origin excluded.
    pub fn offsets(&self) -> Vec<[isize; 3]> {
        let range = |a: usize| if self.axes[a] { -1..=1 } else { 0..=0 };
        let mut out = Vec::new();
        for dz in range(2) {
            for dy in range(1) {
                for dx in range(0) {
                    let nonzero = [dx, dy, dz].iter().filter(|&&d| d != 0).count();
                    let keep = match self.neighborhood {
                        Neighborhood::Face => nonzero == 1,
                        Neighborhood::Full => nonzero >= 1,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }

    fn reach(&self) -> [usize; 3] {
        self.axes.map(usize::from)
    }
}

/// Index range of `c` such that `c + d` stays inside `0..n`.
fn shifted_range(n: usize, d: isize) -> std::ops::Range<usize> {
    if d >= 0 {
        0..n.saturating_sub(d as usize)
    } else {
        (-d) as usize..n
    }
}

/// For each voxel `p` with `p + offset` in the grid, apply
/// `f(&mut dst[p], src[p + offset])`; returns nothing for voxels whose
/// neighbour falls outside, which callers handle.
fn for_each_shifted(
    dims: [usize; 3],
    src: &[bool],
    dst: &mut [bool],
    offset: [isize; 3],
    f: impl Fn(&mut bool, bool),
) {
    let xr = shifted_range(dims[0], offset[0]);
    for z in shifted_range(dims[2], offset[2]) {
        let nz = (z as isize + offset[2]) as usize;
        for y in shifted_range(dims[1], offset[1]) {
            let ny = (y as isize + offset[1]) as usize;
            let d0 = linear_index(dims, [0, y, z]);
            let s0 = linear_index(dims, [0, ny, nz]);
            for x in xr.clone() {
                let nx = (x as isize + offset[0]) as usize;
                f(&mut dst[d0 + x], src[s0 + nx]);
            }
        }
    }
}

fn dilate_step(mask: &BinaryMask, offsets: &[[isize; 3]]) -> BinaryMask {
    let mut out = mask.clone();
    for &o in offsets {
        // p is set if its neighbour p - o (i.e. the source shifted by o) is set.
        let back = [-o[0], -o[1], -o[2]];
        for_each_shifted(mask.dims, &mask.bits, &mut out.bits, back, |d, s| *d |= s);
    }
    out
}

fn erode_step(mask: &BinaryMask, offsets: &[[isize; 3]]) -> BinaryMask {
    let dims = mask.dims;
    let mut out = mask.clone();
    for &o in offsets {
        for_each_shifted(dims, &mask.bits, &mut out.bits, o, |d, s| *d &= s);
        // Neighbours outside the grid are unset.
        for axis in 0..3 {
            if o[axis] == 0 {
                continue;
            }
            let edge = if o[axis] > 0 { dims[axis] - 1 } else { 0 };
            clear_plane(&mut out, axis, edge);
        }
    }
    out
}

fn clear_plane(mask: &mut BinaryMask, axis: usize, at: usize) {
    let dims = mask.dims;
    let [a, b] = match axis {
        0 => [1, 2],
        1 => [0, 2],
        _ => [0, 1],
    };
    for j in 0..dims[b] {
        for i in 0..dims[a] {
            let mut p = [0; 3];
            p[axis] = at;
            p[a] = i;
            p[b] = j;
            mask.bits[linear_index(dims, p)] = false;
        }
    }
}

/// Iterated single-step dilation. `iterations == 0` is the identity.
pub fn dilate(mask: &BinaryMask, element: StructuringElement, iterations: usize) -> BinaryMask {
    let offsets = element.offsets();
    let mut out = mask.clone();
    for _ in 0..iterations {
        out = dilate_step(&out, &offsets);
    }
    out
}

/// Dilation where each step may only claim voxels inside `allowed`.
pub fn dilate_within(
    mask: &BinaryMask,
    element: StructuringElement,
    iterations: usize,
    allowed: &BinaryMask,
) -> BinaryMask {
    let offsets = element.offsets();
    let mut out = mask.clone();
    for _ in 0..iterations {
        let grown = dilate_step(&out, &offsets).intersection(allowed).union(&out);
        if grown == out {
            break;
        }
        out = grown;
    }
    out
}

/// Iterated erosion; voxels next to the grid border (along enabled axes)
/// are removed by the first step.
pub fn erode(mask: &BinaryMask, element: StructuringElement, iterations: usize) -> BinaryMask {
    let offsets = element.offsets();
    let mut out = mask.clone();
    for _ in 0..iterations {
        out = erode_step(&out, &offsets);
    }
    out
}

/// Closing computed on a grid padded by the element's reach, so it is
/// extensive even for masks touching the border.
pub fn close(mask: &BinaryMask, element: StructuringElement, iterations: usize) -> BinaryMask {
    if iterations == 0 {
        return mask.clone();
    }
    let reach = element.reach().map(|r| r * iterations);
    let padded = mask.padded(reach);
    erode(&dilate(&padded, element, iterations), element, iterations).unpadded(reach)
}

pub fn open(mask: &BinaryMask, element: StructuringElement, iterations: usize) -> BinaryMask {
    dilate(&erode(mask, element, iterations), element, iterations)
}

/// Closing then opening, one iteration each, face-connected element.
/// Fills one-voxel pits and removes one-voxel spikes.
pub fn smooth_mask(mask: &BinaryMask) -> BinaryMask {
    let e = StructuringElement::face6();
    open(&close(mask, e, 1), e, 1)
}
