//! Procedural label and intensity phantoms built from ellipsoids.
//!
//! Coordinates are normalised so the grid spans [-1, 1] on every axis;
//! y runs posterior (−) to anterior (+) and z inferior (−) to superior (+).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::morphology::squared_distance_transform;
use crate::volume::{voxel_coords, IntensityVolume, LabelVolume, Role, Vocabulary, VolumeGeometry};

#[derive(Clone, Copy, Debug)]
struct Ellipsoid {
    centre: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    fn new(centre: [f64; 3], radii: [f64; 3]) -> Self {
        Self { centre, radii }
    }

    /// Squared normalised radius of `u`; inside when ≤ 1.
    fn level(&self, u: [f64; 3]) -> f64 {
        (0..3).map(|a| ((u[a] - self.centre[a]) / self.radii[a]).powi(2)).sum()
    }

    fn contains(&self, u: [f64; 3]) -> bool {
        self.level(u) <= 1.0
    }

    fn jittered(self, rng: &mut ChaCha8Rng, amount: f64) -> Self {
        let mut j = |v: f64, scale: f64| v + scale * amount * (2.0 * rng.random::<f64>() - 1.0);
        Self {
            centre: self.centre.map(|c| j(c, 0.5)),
            radii: self.radii.map(|r| j(r, r)),
        }
    }

    fn mirrored(self) -> Self {
        Self {
            centre: [-self.centre[0], self.centre[1], self.centre[2]],
            radii: self.radii,
        }
    }
}

fn normalised(dims: [usize; 3], p: [usize; 3]) -> [f64; 3] {
    std::array::from_fn(|a| {
        let half = (dims[a] as f64 - 1.0) / 2.0;
        if half == 0.0 {
            0.0
        } else {
            (p[a] as f64 - half) / half
        }
    })
}

/// Minimum distance (voxels) kept between lateral ventricles and any
/// structure other than white matter.
pub const VENTRICLE_CLEARANCE: f64 = 2.0;

/// A FeTA-labelled brain: external CSF and cortex shells around white
/// matter, two lateral ventricles, two deep gray matter nuclei, a
/// brainstem with a cerebellum behind it and a small 4th ventricle between
/// them. `seed` jitters every ellipsoid by a few percent; the lateral
/// ventricles are kept at least [`VENTRICLE_CLEARANCE`] voxels from every
/// non-white-matter structure.
pub fn brain_phantom(dims: [usize; 3], seed: u64) -> LabelVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = 0.04;
    let brain = Ellipsoid::new([0.0, 0.0, 0.0], [0.80, 0.88, 0.80]).jittered(&mut rng, jitter);
    let shell = |e: Ellipsoid, k: f64| Ellipsoid::new(e.centre, e.radii.map(|r| r * k));
    let cortex = shell(brain, 0.92);
    let white = shell(brain, 0.80);
    let vent_l = Ellipsoid::new([-0.20, 0.05, 0.15], [0.09, 0.32, 0.12]).jittered(&mut rng, jitter);
    let vent_r = vent_l.mirrored().jittered(&mut rng, jitter / 2.0);
    let deep_l = Ellipsoid::new([-0.20, 0.08, -0.16], [0.10, 0.16, 0.08]).jittered(&mut rng, jitter);
    let deep_r = deep_l.mirrored().jittered(&mut rng, jitter / 2.0);
    let stem = Ellipsoid::new([0.0, -0.12, -0.48], [0.12, 0.12, 0.30]).jittered(&mut rng, jitter);
    let cerebellum = Ellipsoid::new([0.0, -0.44, -0.46], [0.36, 0.22, 0.20]).jittered(&mut rng, jitter);
    let fourth = Ellipsoid::new([0.0, -0.26, -0.42], [0.05, 0.04, 0.06]);

    let n = dims.iter().product::<usize>();
    let mut voxels = vec![0u16; n];
    for (i, v) in voxels.iter_mut().enumerate() {
        let u = normalised(dims, voxel_coords(dims, i));
        *v = if !brain.contains(u) {
            0
        } else if fourth.contains(u) {
            4
        } else if stem.contains(u) {
            7
        } else if cerebellum.contains(u) {
            5
        } else if !cortex.contains(u) {
            1
        } else if !white.contains(u) {
            2
        } else if vent_l.contains(u) || vent_r.contains(u) {
            4
        } else if deep_l.contains(u) || deep_r.contains(u) {
            6
        } else {
            3
        };
    }
    enforce_ventricle_clearance(dims, &mut voxels, &fourth);
    LabelVolume::new(VolumeGeometry::unit(dims).expect("positive dims"), voxels, Vocabulary::feta())
        .expect("phantom codes are FeTA codes")
}

/// Turn lateral-ventricle voxels closer than the clearance to a non-WM
/// structure into white matter.
fn enforce_ventricle_clearance(dims: [usize; 3], voxels: &mut [u16], fourth: &Ellipsoid) {
    let other = crate::morphology::BinaryMask::from_bits(
        dims,
        voxels.iter().map(|&c| c != 3 && c != 4).collect(),
    )
    .expect("sizes match");
    let d2 = squared_distance_transform(&other);
    let limit = VENTRICLE_CLEARANCE * VENTRICLE_CLEARANCE;
    for (i, v) in voxels.iter_mut().enumerate() {
        if *v == 4 && d2[i] < limit && !fourth.contains(normalised(dims, voxel_coords(dims, i))) {
            *v = 3;
        }
    }
}

/// Concentric spheres: white matter core, cortex, then external CSF,
/// with background outside radius `radius` (voxels).
pub fn sphere_brain(dims: [usize; 3], radius: f64) -> LabelVolume {
    let c: [f64; 3] = dims.map(|d| (d as f64 - 1.0) / 2.0);
    let voxels = (0..dims.iter().product::<usize>())
        .map(|i| {
            let p = voxel_coords(dims, i);
            let d = (0..3).map(|a| (p[a] as f64 - c[a]).powi(2)).sum::<f64>().sqrt();
            if d <= 0.6 * radius {
                3
            } else if d <= 0.85 * radius {
                2
            } else if d <= radius {
                1
            } else {
                0
            }
        })
        .collect();
    LabelVolume::new(VolumeGeometry::unit(dims).expect("positive dims"), voxels, Vocabulary::feta())
        .expect("phantom codes are FeTA codes")
}

/// T2-like image for `labels`: a per-tissue mean plus Gaussian noise of
/// standard deviation `noise`, on the same geometry.
pub fn intensity_phantom(labels: &LabelVolume, noise: f64, seed: u64) -> IntensityVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = labels.vocabulary();
    let voxels = labels
        .voxels()
        .iter()
        .map(|&c| {
            let mean = match vocab.role(c) {
                Some(Role::Background) | None => 0.0,
                Some(r) if r.is_ventricle() => 900.0,
                Some(Role::ExternalCsf | Role::Fluid) => 1000.0,
                Some(Role::GrayMatter | Role::Cortex | Role::DeepGrayMatter) => 450.0,
                Some(Role::Cerebellum) => 400.0,
                Some(Role::Brainstem) => 350.0,
                Some(_) => 600.0,
            };
            let z: f64 = rng.sample(StandardNormal);
            mean + noise * z
        })
        .collect();
    IntensityVolume::new(labels.geometry().clone(), voxels).expect("finite intensities")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::extract_fourth_ventricle;
    use crate::morphology::min_distance;

    #[test]
    fn phantom_has_every_structure() {
        let l = brain_phantom([64, 64, 64], 1);
        for code in 0..8 {
            assert!(l.count(code) > 0, "code {code} missing");
        }
        assert_eq!(l, brain_phantom([64, 64, 64], 1));
        assert_ne!(l, brain_phantom([64, 64, 64], 2));
    }

    #[test]
    fn lateral_ventricles_have_clearance() {
        let l = brain_phantom([64, 64, 64], 3);
        let fourth = extract_fourth_ventricle(&l).unwrap();
        assert!(!fourth.is_empty());
        let lateral = l.mask_of_code(4).difference(&fourth);
        let other = l.mask_of(&[0, 1, 2, 5, 6, 7]);
        assert!(min_distance(&lateral, &other).unwrap() >= VENTRICLE_CLEARANCE);
    }

    #[test]
    fn cerebellum_touches_brainstem() {
        let l = brain_phantom([64, 64, 64], 4);
        let c = l.mask_of_code(5);
        let b = l.mask_of_code(7);
        assert!(min_distance(&c, &b).unwrap() <= 3f64.sqrt());
    }
}
