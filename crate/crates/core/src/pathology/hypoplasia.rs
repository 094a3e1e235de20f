use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ConstraintCheck;
use crate::config::PathologyConfig;
use crate::error::{Error, Result};
use crate::labels::{extract_fourth_ventricle, modal_label};
use crate::morphology::{
    centroid, connected_components, dilate, dilate_within, scale_mask, squared_distance_transform, BinaryMask,
    Connectivity, StructuringElement,
};
use crate::volume::{voxel_coords, LabelVolume, Role};

/// Steps tried when nudging a detached cerebellum back onto the brainstem.
const MAX_REATTACH_STEPS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HypoplasiaMode {
    /// Cerebellum only, shrunk in all three axes.
    Cerebellar,
    /// Brainstem, 4th ventricle and cerebellum shrunk in-plane, then the
    /// cerebellum rounded and shrunk again in all three axes.
    Pontocerebellar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypoplasiaReport {
    pub mode: HypoplasiaMode,
    pub severity: f64,
    pub factor: f64,
    /// Centroid of brainstem ∪ 4th ventricle ∪ cerebellum (pontocerebellar).
    pub complex_centre: Option<[f64; 3]>,
    pub attachment: Option<[f64; 3]>,
    /// In-plane dilation steps restoring the cerebellum's rounded shape.
    pub restore_iterations: usize,
    /// Total shift applied to keep the cerebellum attached.
    pub shift: [isize; 3],
    pub brainstem_before: usize,
    pub brainstem_after: usize,
    pub cerebellum_before: usize,
    pub cerebellum_after: usize,
    pub fourth_ventricle_before: usize,
    pub fourth_ventricle_after: usize,
    pub vacated: usize,
    pub checks: Vec<ConstraintCheck>,
}

fn touching(a: &BinaryMask, b: &BinaryMask) -> BinaryMask {
    a.intersection(&dilate(b, StructuringElement::full26(), 1))
}

fn adjacent(a: &BinaryMask, b: &BinaryMask) -> bool {
    !a.is_empty() && !b.is_empty() && !touching(a, b).is_empty()
}

/// Centroid of the cerebellum voxels 26-adjacent to the brainstem; when
/// they do not touch, the cerebellum voxel closest to the brainstem.
pub fn attachment_point(cerebellum: &BinaryMask, brainstem: &BinaryMask) -> Result<[f64; 3]> {
    let contact = touching(cerebellum, brainstem);
    if !contact.is_empty() {
        return centroid(&contact);
    }
    if cerebellum.is_empty() {
        return Err(Error::EmptyMask("cerebellum"));
    }
    if brainstem.is_empty() {
        return Err(Error::EmptyMask("brainstem"));
    }
    let dt = squared_distance_transform(brainstem);
    let (best, _) = cerebellum
        .bits()
        .iter()
        .zip(&dt)
        .enumerate()
        .filter(|(_, (&set, _))| set)
        .fold((0usize, f64::INFINITY), |acc, (i, (_, &d))| if d < acc.1 { (i, d) } else { acc });
    Ok(voxel_coords(cerebellum.dims(), best).map(|c| c as f64))
}

fn shifted(mask: &BinaryMask, d: [isize; 3]) -> BinaryMask {
    let dims = mask.dims();
    BinaryMask::from_voxels(
        dims,
        mask.voxels().filter_map(|p| {
            let q: [isize; 3] = std::array::from_fn(|a| p[a] as isize + d[a]);
            (0..3)
                .all(|a| q[a] >= 0 && (q[a] as usize) < dims[a])
                .then(|| q.map(|c| c as usize))
        }),
    )
}

/// Move `mask` in unit steps toward `target` until it touches it, keeping
/// only voxels inside `allowed`. Returns the moved mask and total shift.
fn reattach(mask: &BinaryMask, target: &BinaryMask, allowed: &BinaryMask) -> Result<(BinaryMask, [isize; 3])> {
    if mask.is_empty() || adjacent(mask, target) {
        return Ok((mask.clone(), [0; 3]));
    }
    let from = centroid(mask)?;
    let to = centroid(target)?;
    let diff: [f64; 3] = std::array::from_fn(|a| to[a] - from[a]);
    let largest = diff.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let step: [isize; 3] = diff.map(|d| if d.abs() >= 0.5 * largest && d != 0.0 { d.signum() as isize } else { 0 });
    let mut total = [0isize; 3];
    for _ in 0..MAX_REATTACH_STEPS {
        for a in 0..3 {
            total[a] += step[a];
        }
        let moved = shifted(mask, total).intersection(allowed);
        if adjacent(&moved, target) {
            return Ok((moved, total));
        }
    }
    Ok((mask.clone(), [0; 3]))
}

/// Most frequent code among `voxels` restricted to `mask` (lowest on ties).
fn dominant_code(voxels: &[u16], mask: &BinaryMask) -> Option<u16> {
    let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
    for (&v, &m) in voxels.iter().zip(mask.bits()) {
        if m {
            *counts.entry(v).or_default() += 1;
        }
    }
    counts.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(c, _)| c)
}

/// Radius of the disc with the area of the mask's x-y footprint.
fn in_plane_radius(mask: &BinaryMask) -> f64 {
    let dims = mask.dims();
    let mut footprint = vec![false; dims[0] * dims[1]];
    for p in mask.voxels() {
        footprint[p[0] + dims[0] * p[1]] = true;
    }
    let area = footprint.iter().filter(|&&b| b).count() as f64;
    (area / std::f64::consts::PI).sqrt()
}

/// Shrink posterior-fossa structures.
///
/// With factor `f` from the configured shrink cap and `severity`:
/// * cerebellar mode scales the cerebellum by `f` on every axis about its
///   attachment point to the brainstem; the brainstem is untouched.
/// * pontocerebellar mode scales brainstem, 4th ventricle and cerebellum by
///   `f` in x and y about the centroid of their union, dilates the
///   cerebellum in-plane by `round((1 - f) * r)` steps (`r` the radius of
///   its x-y footprint) within the original complex, then scales it by `f`
///   on every axis about the new attachment point.
///
/// Shrunk structures stay inside their original footprint. If the
/// cerebellum touched the brainstem before, it is shifted back into
/// contact when shrinking separated them. Vacated voxels take the most
/// frequent neighbouring label other than brainstem, cerebellum and
/// ventricles, or external CSF when there is none.
pub fn synthesize_hypoplasia(
    labels: &LabelVolume,
    severity: f64,
    mode: HypoplasiaMode,
    cfg: &PathologyConfig,
) -> Result<(LabelVolume, HypoplasiaReport)> {
    if !(0.0..=1.0).contains(&severity) {
        return Err(Error::Severity(severity));
    }
    let vocab = labels.vocabulary();
    let code = |role: Role| vocab.code(role).ok_or_else(|| Error::MissingRole(role.to_string()));
    let b_code = code(Role::Brainstem)?;
    let c_code = code(Role::Cerebellum)?;
    let brainstem = labels.mask_of(&vocab.codes(Role::Brainstem));
    let cerebellum = labels.mask_of(&vocab.codes(Role::Cerebellum));
    if brainstem.is_empty() {
        return Err(Error::MissingRole(Role::Brainstem.to_string()));
    }
    if cerebellum.is_empty() {
        return Err(Error::MissingRole(Role::Cerebellum.to_string()));
    }
    let fourth = extract_fourth_ventricle(labels)?;
    let factor = cfg.hypoplasia_factor(severity);
    let was_attached = adjacent(&cerebellum, &brainstem);

    let mut report = HypoplasiaReport {
        mode,
        severity,
        factor,
        complex_centre: None,
        attachment: None,
        restore_iterations: 0,
        shift: [0; 3],
        brainstem_before: brainstem.count(),
        brainstem_after: brainstem.count(),
        cerebellum_before: cerebellum.count(),
        cerebellum_after: cerebellum.count(),
        fourth_ventricle_before: fourth.count(),
        fourth_ventricle_after: fourth.count(),
        vacated: 0,
        checks: Vec::new(),
    };
    if severity == 0.0 {
        return Ok((labels.clone(), report));
    }

    let complex = brainstem.union(&fourth).union(&cerebellum);
    let (new_brainstem, new_fourth, new_cerebellum) = match mode {
        HypoplasiaMode::Cerebellar => {
            let a = attachment_point(&cerebellum, &brainstem)?;
            report.attachment = Some(a);
            let shrunk = scale_mask(&cerebellum, [factor; 3], a)?.intersection(&cerebellum);
            let allowed = cerebellum.union(&fourth);
            let c = if was_attached {
                let (c, shift) = reattach(&shrunk, &brainstem, &allowed)?;
                report.shift = shift;
                c
            } else {
                shrunk
            };
            (brainstem.clone(), fourth.clone(), c)
        }
        HypoplasiaMode::Pontocerebellar => {
            let centre = centroid(&complex)?;
            report.complex_centre = Some(centre);
            let in_plane = [factor, factor, 1.0];
            let b1 = scale_mask(&brainstem, in_plane, centre)?.intersection(&complex);
            let v1 = scale_mask(&fourth, in_plane, centre)?.intersection(&complex).difference(&b1);
            let room = complex.difference(&b1).difference(&v1);
            let c1 = scale_mask(&cerebellum, in_plane, centre)?.intersection(&room);
            let r = ((1.0 - factor) * in_plane_radius(&cerebellum)).round() as usize;
            report.restore_iterations = r;
            let c2 = dilate_within(&c1, StructuringElement::in_plane_xy(), r, &room);
            let c3 = if c2.is_empty() {
                c2
            } else {
                let a = attachment_point(&c2, &b1)?;
                report.attachment = Some(a);
                scale_mask(&c2, [factor; 3], a)?.intersection(&c2)
            };
            let c = if was_attached {
                let (c, shift) = reattach(&c3, &b1, &room)?;
                report.shift = shift;
                c
            } else {
                c3
            };
            (b1, v1, c)
        }
    };

    let dims = labels.dims();
    let fourth_code = dominant_code(labels.voxels(), &fourth);
    let mut out = labels.clone();
    let touched = match mode {
        HypoplasiaMode::Cerebellar => cerebellum.clone(),
        HypoplasiaMode::Pontocerebellar => complex.clone(),
    };
    let kept = new_brainstem.union(&new_fourth).union(&new_cerebellum);
    let vacated = touched.difference(&kept);
    {
        let v = out.voxels_mut();
        for (i, &t) in touched.bits().iter().enumerate() {
            if !t {
                continue;
            }
            if new_brainstem.bits()[i] {
                v[i] = b_code;
            } else if new_fourth.bits()[i] {
                v[i] = fourth_code.unwrap_or(v[i]);
            } else if new_cerebellum.bits()[i] {
                v[i] = c_code;
            }
        }
        // Cerebellum shifted outside its old footprint (cerebellar mode).
        for (i, &c) in new_cerebellum.bits().iter().enumerate() {
            if c && !touched.bits()[i] {
                v[i] = c_code;
            }
        }
    }
    let excluded: Vec<u16> = vocab
        .codes_where(|r| matches!(r, Role::Brainstem | Role::Cerebellum | Role::Background) || r.is_ventricle());
    let fallback = vocab.code(Role::ExternalCsf).unwrap_or_else(|| vocab.background());
    let snapshot = out.voxels().to_vec();
    for comp in connected_components(&vacated, Connectivity::TwentySix) {
        let fill = modal_label(&snapshot, dims, &comp.voxels, |c| !excluded.contains(&c)).unwrap_or(fallback);
        let v = out.voxels_mut();
        for &i in &comp.voxels {
            v[i] = fill;
        }
    }

    let out_brainstem = out.mask_of(&vocab.codes(Role::Brainstem));
    let out_cerebellum = out.mask_of(&vocab.codes(Role::Cerebellum));
    report.brainstem_after = out_brainstem.count();
    report.cerebellum_after = out_cerebellum.count();
    report.fourth_ventricle_after = new_fourth.count();
    report.vacated = vacated.count();
    if was_attached {
        report.checks.push(ConstraintCheck::new(
            "cerebellum attached to brainstem",
            adjacent(&out_cerebellum, &out_brainstem),
            format!("shift {:?}", report.shift),
        ));
    }
    if mode == HypoplasiaMode::Cerebellar {
        report.checks.push(ConstraintCheck::new(
            "brainstem unchanged",
            out_brainstem == brainstem,
            "brainstem mask compared bit by bit",
        ));
    }
    Ok((out, report))
}
