use std::collections::{BTreeMap, HashSet};

use crate::morphology::{connected_components, Connectivity, StructuringElement};
use crate::volume::{linear_index, voxel_coords, LabelVolume};

pub const DEFAULT_MIN_COMPONENT_SIZE: usize = 20;

/// Most frequent accepted code among the voxels 26-adjacent to `region`
/// (each shell voxel counted once); ties go to the smallest code.
pub fn modal_label(
    voxels: &[u16],
    dims: [usize; 3],
    region: &[usize],
    accept: impl Fn(u16) -> bool,
) -> Option<u16> {
    let inside: HashSet<usize> = region.iter().copied().collect();
    let offsets = StructuringElement::full26().offsets();
    let mut shell = HashSet::new();
    let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
    for &i in region {
        let p = voxel_coords(dims, i);
        for o in &offsets {
            let q: [isize; 3] = std::array::from_fn(|a| p[a] as isize + o[a]);
            if (0..3).any(|a| q[a] < 0 || q[a] as usize >= dims[a]) {
                continue;
            }
            let j = linear_index(dims, q.map(|c| c as usize));
            if inside.contains(&j) || !shell.insert(j) {
                continue;
            }
            if accept(voxels[j]) {
                *counts.entry(voxels[j]).or_insert(0) += 1;
            }
        }
    }
    // BTreeMap iterates codes ascending, so `max_by` keeping the first
    // maximum needs reversed comparison on ties.
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(code, _)| code)
}

/// Reassign every connected component of a non-background code with fewer
/// than `min_size` voxels to the most frequent label in its 26-neighbour
/// shell.
///
/// Single pass over a snapshot: components and shell labels are both read
/// from the input, so the result does not depend on processing order. A
/// component whose shell is entirely background becomes background.
pub fn clean_small_components(
    labels: &LabelVolume,
    min_size: usize,
    connectivity: Connectivity,
) -> LabelVolume {
    let dims = labels.dims();
    let snapshot = labels.voxels();
    let bg = labels.vocabulary().background();
    let mut out = snapshot.to_vec();
    for code in labels.codes_present() {
        if code == bg {
            continue;
        }
        let mask = labels.mask_of_code(code);
        for comp in connected_components(&mask, connectivity) {
            if comp.size() >= min_size {
                continue;
            }
            if let Some(modal) = modal_label(snapshot, dims, &comp.voxels, |_| true) {
                for &i in &comp.voxels {
                    out[i] = modal;
                }
            }
        }
    }
    labels.with_voxels(out).expect("reassigned codes come from the same volume")
}
