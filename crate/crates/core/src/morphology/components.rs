use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{BinaryMask, StructuringElement};
use crate::volume::{linear_index, voxel_coords};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "6")]
    Six,
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    pub fn element(self) -> StructuringElement {
        match self {
            Connectivity::Six => StructuringElement::face6(),
            Connectivity::TwentySix => StructuringElement::full26(),
        }
    }

    pub fn from_count(n: u32) -> Option<Self> {
        match n {
            6 => Some(Connectivity::Six),
            26 => Some(Connectivity::TwentySix),
            _ => None,
        }
    }
}

/// One maximal connected set of voxels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    /// Linear indices, ascending.
    pub voxels: Vec<usize>,
    /// Lexicographically smallest `(x, y, z)` voxel.
    pub min_voxel: [usize; 3],
}

impl Component {
    pub fn size(&self) -> usize {
        self.voxels.len()
    }

    pub fn to_mask(&self, dims: [usize; 3]) -> BinaryMask {
        let mut m = BinaryMask::empty(dims);
        for &i in &self.voxels {
            m.bits_mut()[i] = true;
        }
        m
    }
}

/// Connected components ordered by size (descending), then by smallest
/// voxel.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<Component> {
    let dims = mask.dims();
    let offsets = connectivity.element().offsets();
    let bits = mask.bits();
    let mut visited = vec![false; bits.len()];
    let mut queue = VecDeque::new();
    let mut out = Vec::new();
    for seed in 0..bits.len() {
        if !bits[seed] || visited[seed] {
            continue;
        }
        visited[seed] = true;
        queue.push_back(seed);
        let mut voxels = Vec::new();
        while let Some(i) = queue.pop_front() {
            voxels.push(i);
            let p = voxel_coords(dims, i);
            for o in &offsets {
                let q: [isize; 3] = std::array::from_fn(|a| p[a] as isize + o[a]);
                if (0..3).any(|a| q[a] < 0 || q[a] as usize >= dims[a]) {
                    continue;
                }
                let j = linear_index(dims, q.map(|c| c as usize));
                if bits[j] && !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
        voxels.sort_unstable();
        let min_voxel = voxels
            .iter()
            .map(|&i| voxel_coords(dims, i))
            .min()
            .expect("component is non-empty");
        out.push(Component { voxels, min_voxel });
    }
    out.sort_by(|a, b| b.size().cmp(&a.size()).then(a.min_voxel.cmp(&b.min_voxel)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::voxel_count;
    use rand::{Rng, SeedableRng};

    /// Union-find over all set voxels, independent of the BFS above.
    fn union_find_labels(mask: &BinaryMask, conn: Connectivity) -> Vec<usize> {
        let dims = mask.dims();
        let n = voxel_count(dims);
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut Vec<usize>, mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for i in 0..n {
            if !mask.bits()[i] {
                continue;
            }
            let a = voxel_coords(dims, i);
            for j in 0..n {
                if j <= i || !mask.bits()[j] {
                    continue;
                }
                let b = voxel_coords(dims, j);
                let d: Vec<usize> = (0..3).map(|k| a[k].abs_diff(b[k])).collect();
                let adjacent = match conn {
                    Connectivity::Six => d.iter().sum::<usize>() == 1,
                    Connectivity::TwentySix => d.iter().all(|&x| x <= 1),
                };
                if adjacent {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    parent[ri] = rj;
                }
            }
        }
        (0..n).map(|i| find(&mut parent, i)).collect()
    }

    #[test]
    fn simple_cases() {
        let m = BinaryMask::from_voxels([5, 5, 5], [[0, 0, 0], [3, 3, 3]]);
        let c = connected_components(&m, Connectivity::Six);
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|c| c.size() == 1));
        assert_eq!(c[0].min_voxel, [0, 0, 0]);
        assert!(connected_components(&BinaryMask::empty([3, 3, 3]), Connectivity::Six).is_empty());
        let diag = BinaryMask::from_voxels([3, 3, 3], [[0, 0, 0], [1, 1, 1]]);
        assert_eq!(connected_components(&diag, Connectivity::Six).len(), 2);
        assert_eq!(connected_components(&diag, Connectivity::TwentySix).len(), 1);
    }

    #[test]
    fn matches_union_find_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..12 {
            let dims = [7, 6, 5];
            let bits = (0..voxel_count(dims)).map(|_| rng.random_bool(0.3)).collect();
            let mask = BinaryMask::from_bits(dims, bits).unwrap();
            for conn in [Connectivity::Six, Connectivity::TwentySix] {
                let comps = connected_components(&mask, conn);
                let roots = union_find_labels(&mask, conn);
                let total: usize = comps.iter().map(Component::size).sum();
                assert_eq!(total, mask.count());
                let mut seen = vec![false; voxel_count(dims)];
                for c in &comps {
                    let root = roots[c.voxels[0]];
                    for &v in &c.voxels {
                        assert!(!seen[v], "components overlap");
                        seen[v] = true;
                        assert_eq!(roots[v], root);
                    }
                    // Maximal: every voxel with this root is in the component.
                    let expected = (0..roots.len()).filter(|&i| mask.bits()[i] && roots[i] == root).count();
                    assert_eq!(expected, c.size());
                }
                for w in comps.windows(2) {
                    assert!(w[0].size() > w[1].size() || (w[0].size() == w[1].size() && w[0].min_voxel < w[1].min_voxel));
                }
            }
        }
    }
}
