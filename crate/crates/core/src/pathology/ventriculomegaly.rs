use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ConstraintCheck, PathologyPlan, Symmetry};
use crate::config::PathologyConfig;
use crate::error::{Error, Result};
use crate::labels::{HemisphereCodes, Side};
use crate::morphology::{dilate_within, smooth_mask, squared_distance_transform, BinaryMask};
use crate::volume::{linear_index, LabelVolume, Role};

/// Random stream of the plan seed reserved for apply-time draws.
pub(crate) const APPLY_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HemisphereGrowth {
    pub side: Side,
    pub white_matter_before: usize,
    pub ventricles_before: usize,
    pub ventricles_after: usize,
    /// Largest ventricle volume allowed by the budget.
    pub budget: f64,
    pub max_iterations: usize,
    pub iterations: usize,
    /// Iterations asked for by the plan before clamping to the maximum.
    pub requested_iterations: Option<usize>,
    /// Smallest distance from a claimed voxel to another structure
    /// (infinite when nothing was claimed).
    pub min_clearance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VentriculomegalyReport {
    pub severity: f64,
    pub symmetry: Symmetry,
    pub hemispheres: Vec<HemisphereGrowth>,
    pub checks: Vec<ConstraintCheck>,
}

/// Inclusive box of `mask` grown by `margin`, clamped to the grid, as
/// (origin, size).
fn margin_box(mask: &BinaryMask, margin: usize) -> Option<([usize; 3], [usize; 3])> {
    let dims = mask.dims();
    let (lo, hi) = mask.bounding_box()?;
    let lo: [usize; 3] = std::array::from_fn(|a| lo[a].saturating_sub(margin));
    let size = std::array::from_fn(|a| (hi[a] + margin).min(dims[a] - 1) + 1 - lo[a]);
    Some((lo, size))
}

struct Hemisphere {
    origin: [usize; 3],
    ventricles: BinaryMask,
    allowed: BinaryMask,
    region: BinaryMask,
    white_matter: usize,
    budget: f64,
    max_iterations: usize,
}

impl Hemisphere {
    /// Ventricles after `k` confined dilation steps, smoothed, cut back to
    /// the allowed region and never smaller than the input.
    fn grow(&self, dilated: &BinaryMask) -> BinaryMask {
        smooth_mask(dilated).intersection(&self.allowed).union(&self.ventricles)
    }

    fn grown(&self, k: usize, cfg: &PathologyConfig) -> BinaryMask {
        if k == 0 {
            return self.ventricles.clone();
        }
        self.grow(&dilate_within(&self.ventricles, cfg.vm_element, k, &self.region))
    }
}

fn prepare(
    labels: &LabelVolume,
    codes: &HemisphereCodes,
    side: Side,
    clearance_sq: &[f64],
    cfg: &PathologyConfig,
) -> Result<Hemisphere> {
    let dims = labels.dims();
    let wm_code = codes.white_matter(side);
    let vent_code = codes.ventricles(side);
    let wm = labels.mask_of_code(wm_code);
    let vent = labels.mask_of_code(vent_code);
    if vent.is_empty() {
        return Err(Error::MissingRole(format!("{} ({side:?})", Role::Ventricles)));
    }
    let (origin, size) = margin_box(&wm.union(&vent), 2).expect("ventricles are non-empty");
    let wm_box = wm.sub_box(origin, size);
    let ventricles = vent.sub_box(origin, size);
    let mut allowed = wm_box.clone();
    let limit = cfg.vm_clearance * cfg.vm_clearance;
    for z in 0..size[2] {
        for y in 0..size[1] {
            for x in 0..size[0] {
                let i = linear_index(size, [x, y, z]);
                if allowed.bits()[i] {
                    let g = linear_index(dims, [x + origin[0], y + origin[1], z + origin[2]]);
                    allowed.bits_mut()[i] = clearance_sq[g] >= limit;
                }
            }
        }
    }
    let region = allowed.union(&ventricles);
    let white_matter = wm.count();
    let budget = cfg.vm_budget * white_matter as f64;

    let mut h = Hemisphere {
        origin,
        ventricles,
        allowed,
        region,
        white_matter,
        budget,
        max_iterations: 0,
    };
    let mut dilated = h.ventricles.clone();
    for k in 1..=cfg.vm_max_iterations {
        let next = dilate_within(&dilated, cfg.vm_element, 1, &h.region);
        if next == dilated {
            break;
        }
        dilated = next;
        if h.grow(&dilated).count() as f64 > budget {
            break;
        }
        h.max_iterations = k;
    }
    Ok(h)
}

/// Enlarge the lateral ventricles of a hemisphere-split volume.
///
/// Per hemisphere, ventricles dilate into that hemisphere's white matter
/// only, never claiming a voxel closer than the configured clearance to any
/// other structure (background included). The number of steps is capped so
/// the ventricle volume stays within the budget fraction of the
/// hemisphere's white matter; the plan severity selects a fraction of that
/// cap. Each dilated mask is smoothed and cut back to the allowed region.
pub fn synthesize_ventriculomegaly(
    labels: &LabelVolume,
    plan: &PathologyPlan,
    cfg: &PathologyConfig,
) -> Result<(LabelVolume, VentriculomegalyReport)> {
    let codes = HemisphereCodes::from_vocabulary(labels.vocabulary())
        .ok_or_else(|| Error::MissingRole("white-matter-left/right and ventricles-left/right".into()))?;
    let severity = plan.severities.ventriculomegaly;
    if !(0.0..=1.0).contains(&severity) {
        return Err(Error::Severity(severity));
    }
    let other = labels.mask_of(
        &labels
            .vocabulary()
            .codes_where(|r| !r.is_white_matter() && !r.is_ventricle()),
    );
    let clearance_sq = squared_distance_transform(&other);

    let hemispheres = [
        prepare(labels, &codes, Side::Left, &clearance_sq, cfg)?,
        prepare(labels, &codes, Side::Right, &clearance_sq, cfg)?,
    ];
    let k_max = [hemispheres[0].max_iterations, hemispheres[1].max_iterations];
    let chosen: [usize; 2] = match plan.vm_symmetry {
        Symmetry::Symmetric => {
            let k = (severity * k_max[0].min(k_max[1]) as f64).round() as usize;
            [k, k]
        }
        Symmetry::Asymmetric => {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            rng.set_stream(APPLY_STREAM);
            let u: [f64; 2] = [rng.random(), rng.random()];
            std::array::from_fn(|s| (severity * u[s] * k_max[s] as f64).round() as usize)
        }
    };
    let iterations: [usize; 2] = match plan.vm_iterations {
        Some(req) => std::array::from_fn(|s| req[s].min(k_max[s])),
        None => chosen,
    };

    let dims = labels.dims();
    let limit = cfg.vm_clearance * cfg.vm_clearance;
    let mut out = labels.clone();
    let mut report = VentriculomegalyReport {
        severity,
        symmetry: plan.vm_symmetry,
        hemispheres: Vec::new(),
        checks: Vec::new(),
    };
    for (s, side) in Side::BOTH.into_iter().enumerate() {
        let h = &hemispheres[s];
        let grown = h.grown(iterations[s], cfg);
        let size = grown.dims();
        let vent_code = codes.ventricles(side);
        let wm_code = codes.white_matter(side);
        let mut min_sq = f64::INFINITY;
        let mut claimed_outside_wm = 0usize;
        let voxels = out.voxels_mut();
        for (i, (&g, &v)) in grown.bits().iter().zip(h.ventricles.bits()).enumerate() {
            if g && !v {
                let p = crate::volume::voxel_coords(size, i);
                let gi = linear_index(dims, std::array::from_fn(|a| p[a] + h.origin[a]));
                if voxels[gi] != wm_code {
                    claimed_outside_wm += 1;
                }
                voxels[gi] = vent_code;
                min_sq = min_sq.min(clearance_sq[gi]);
            }
        }
        let after = grown.count();
        let before = h.ventricles.count();
        report.checks.push(ConstraintCheck::new(
            format!("ventricle budget ({side:?})"),
            after as f64 <= h.budget || after == before,
            format!("{after} ventricle voxels, budget {:.1}", h.budget),
        ));
        report.checks.push(ConstraintCheck::new(
            format!("ventricle clearance ({side:?})"),
            min_sq >= limit,
            format!("closest claimed voxel at {:.3} voxels", min_sq.sqrt()),
        ));
        report.checks.push(ConstraintCheck::new(
            format!("claims only white matter ({side:?})"),
            claimed_outside_wm == 0,
            format!("{claimed_outside_wm} claimed voxels were not white matter"),
        ));
        report.hemispheres.push(HemisphereGrowth {
            side,
            white_matter_before: h.white_matter,
            ventricles_before: before,
            ventricles_after: after,
            budget: h.budget,
            max_iterations: h.max_iterations,
            iterations: iterations[s],
            requested_iterations: plan.vm_iterations.map(|r| r[s]),
            min_clearance: min_sq.sqrt(),
        });
    }
    Ok((out, report))
}
