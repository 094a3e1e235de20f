use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::BinaryMask;
use crate::volume::{voxel_coords, LabelVolume, Role, Vocabulary};

const MAX_ITERATIONS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];
}

/// Codes involved in a hemisphere split. The unsided codes stay in the
/// vocabulary so a split volume can be merged back.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HemisphereCodes {
    pub white_matter: u16,
    pub ventricles: u16,
    pub white_matter_left: u16,
    pub white_matter_right: u16,
    pub ventricles_left: u16,
    pub ventricles_right: u16,
}

impl HemisphereCodes {
    /// Sided codes already present in `vocabulary`, if it carries exactly
    /// one code per sided role and one unsided WM and ventricle code.
    pub fn from_vocabulary(vocabulary: &Vocabulary) -> Option<Self> {
        let one = |role| {
            let codes = vocabulary.codes(role);
            (codes.len() == 1).then(|| codes[0])
        };
        Some(Self {
            white_matter: one(Role::WhiteMatter)?,
            ventricles: one(Role::Ventricles)?,
            white_matter_left: one(Role::WhiteMatterLeft)?,
            white_matter_right: one(Role::WhiteMatterRight)?,
            ventricles_left: one(Role::VentriclesLeft)?,
            ventricles_right: one(Role::VentriclesRight)?,
        })
    }

    pub fn white_matter(&self, side: Side) -> u16 {
        match side {
            Side::Left => self.white_matter_left,
            Side::Right => self.white_matter_right,
        }
    }

    pub fn ventricles(&self, side: Side) -> u16 {
        match side {
            Side::Left => self.ventricles_left,
            Side::Right => self.ventricles_right,
        }
    }
}

/// Per-side masks produced by [`split_hemispheres`].
#[derive(Clone, Debug)]
pub struct HemisphereSplit {
    pub codes: HemisphereCodes,
    /// Rotation about z (degrees) applied before clustering.
    pub rotation_degrees: Option<f64>,
    pub white_matter: [BinaryMask; 2],
    pub ventricles: [BinaryMask; 2],
    pub iterations: usize,
}

impl HemisphereSplit {
    pub fn white_matter(&self, side: Side) -> &BinaryMask {
        &self.white_matter[side as usize]
    }

    pub fn ventricles(&self, side: Side) -> &BinaryMask {
        &self.ventricles[side as usize]
    }
}

pub fn has_hemisphere_codes(labels: &LabelVolume) -> bool {
    HemisphereCodes::from_vocabulary(labels.vocabulary()).is_some()
}

fn single_code(vocabulary: &Vocabulary, role: Role) -> Result<u16> {
    match vocabulary.codes(role).as_slice() {
        [] => Err(Error::MissingRole(role.to_string())),
        [code] => Ok(*code),
        codes => Err(Error::Vocabulary(format!("role `{role}` has several codes {codes:?}"))),
    }
}

fn cluster_stats(points: &[[f64; 3]], assign: &[u8]) -> Result<[[f64; 3]; 2]> {
    let mut sums = [[0.0f64; 3]; 2];
    let mut counts = [0usize; 2];
    for (p, &k) in points.iter().zip(assign) {
        counts[k as usize] += 1;
        for a in 0..3 {
            sums[k as usize][a] += p[a];
        }
    }
    if counts.contains(&0) {
        return Err(Error::DegenerateClustering(format!("cluster sizes {counts:?}")));
    }
    Ok(std::array::from_fn(|k| std::array::from_fn(|a| sums[k][a] / counts[k] as f64)))
}

/// Two-means clustering of points by Lloyd's algorithm. Returns the
/// cluster of each point (0 has the lower mean first coordinate) and the
/// number of reassignment passes run.
fn two_means(points: &[[f64; 3]]) -> Result<(Vec<u8>, usize)> {
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[0]), hi.max(p[0])));
    let mid = 0.5 * (lo + hi);
    let mut assign: Vec<u8> = points.iter().map(|p| u8::from(p[0] > mid)).collect();
    let d2 = |p: &[f64; 3], c: &[f64; 3]| (0..3).map(|a| (p[a] - c[a]).powi(2)).sum::<f64>();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        let centres = cluster_stats(points, &assign)?;
        iterations += 1;
        let mut changed = false;
        for (p, k) in points.iter().zip(assign.iter_mut()) {
            let next = u8::from(d2(p, &centres[1]) < d2(p, &centres[0]));
            changed |= next != *k;
            *k = next;
        }
        if !changed {
            break;
        }
    }
    let centres = cluster_stats(points, &assign)?;
    if centres[0][0] > centres[1][0] {
        assign.iter_mut().for_each(|k| *k = 1 - *k);
    }
    Ok((assign, iterations))
}

/// Split white matter and ventricles into left and right sub-codes.
///
/// Clustering runs once on the union of both roles so they share one
/// midline. Coordinates are voxel indices; when `rotation_degrees` is given
/// they are first rotated about the z axis through the grid centre, which
/// aligns an oblique anterior-posterior axis with y. The cluster with the
/// lower mean x (in the rotated frame) is labelled left.
pub fn split_hemispheres(
    labels: &LabelVolume,
    rotation_degrees: Option<f64>,
) -> Result<(LabelVolume, HemisphereSplit)> {
    let vocabulary = labels.vocabulary();
    if has_hemisphere_codes(labels) {
        return Err(Error::InvalidArgument("volume is already hemisphere-split".into()));
    }
    let wm = single_code(vocabulary, Role::WhiteMatter)?;
    let vent = single_code(vocabulary, Role::Ventricles)?;
    if labels.count(wm) == 0 {
        return Err(Error::MissingRole(Role::WhiteMatter.to_string()));
    }
    if labels.count(vent) == 0 {
        return Err(Error::MissingRole(Role::Ventricles.to_string()));
    }

    let dims = labels.dims();
    let centre: [f64; 3] = std::array::from_fn(|a| (dims[a] as f64 - 1.0) / 2.0);
    let (sin, cos) = rotation_degrees.unwrap_or(0.0).to_radians().sin_cos();
    let mut indices = Vec::new();
    let mut points = Vec::new();
    for (i, &c) in labels.voxels().iter().enumerate() {
        if c == wm || c == vent {
            let p = voxel_coords(dims, i);
            let (x, y) = (p[0] as f64 - centre[0], p[1] as f64 - centre[1]);
            indices.push(i);
            points.push([cos * x + sin * y, -sin * x + cos * y, p[2] as f64]);
        }
    }
    let (assign, iterations) = two_means(&points)?;

    let first = vocabulary.next_free_code();
    let codes = HemisphereCodes {
        white_matter: wm,
        ventricles: vent,
        white_matter_left: first,
        white_matter_right: first + 1,
        ventricles_left: first + 2,
        ventricles_right: first + 3,
    };
    let mut out = labels.clone();
    {
        let v = out.vocabulary_mut();
        v.insert(codes.white_matter_left, Role::WhiteMatterLeft)?;
        v.insert(codes.white_matter_right, Role::WhiteMatterRight)?;
        v.insert(codes.ventricles_left, Role::VentriclesLeft)?;
        v.insert(codes.ventricles_right, Role::VentriclesRight)?;
    }
    let mut wm_masks = [BinaryMask::empty(dims), BinaryMask::empty(dims)];
    let mut vent_masks = [BinaryMask::empty(dims), BinaryMask::empty(dims)];
    let voxels = out.voxels_mut();
    for (&i, &k) in indices.iter().zip(&assign) {
        let side = if k == 0 { Side::Left } else { Side::Right };
        if voxels[i] == wm {
            voxels[i] = codes.white_matter(side);
            wm_masks[k as usize].bits_mut()[i] = true;
        } else {
            voxels[i] = codes.ventricles(side);
            vent_masks[k as usize].bits_mut()[i] = true;
        }
    }
    let split = HemisphereSplit {
        codes,
        rotation_degrees,
        white_matter: wm_masks,
        ventricles: vent_masks,
        iterations,
    };
    Ok((out, split))
}

/// Map sided sub-codes back to their unsided codes and drop them from the
/// vocabulary.
pub fn merge_hemispheres(labels: &LabelVolume) -> Result<LabelVolume> {
    let codes = HemisphereCodes::from_vocabulary(labels.vocabulary())
        .ok_or_else(|| Error::InvalidArgument("volume has no hemisphere sub-codes".into()))?;
    let mut out = labels.clone();
    for c in out.voxels_mut() {
        if *c == codes.white_matter_left || *c == codes.white_matter_right {
            *c = codes.white_matter;
        } else if *c == codes.ventricles_left || *c == codes.ventricles_right {
            *c = codes.ventricles;
        }
    }
    let v = out.vocabulary_mut();
    for code in [
        codes.white_matter_left,
        codes.white_matter_right,
        codes.ventricles_left,
        codes.ventricles_right,
    ] {
        v.remove(code);
    }
    Ok(out)
}
