use serde::{Deserialize, Serialize};

use super::ConstraintCheck;
use crate::config::PathologyConfig;
use crate::error::{Error, Result};
use crate::morphology::{centroid, source_maps};
use crate::volume::{linear_index, LabelVolume, Role};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicrocephalyReport {
    pub severity: f64,
    pub factor: f64,
    pub centre: [f64; 3],
    pub brain_voxels: usize,
    pub csf_code: u16,
    pub csf_before: usize,
    pub csf_after: usize,
    pub checks: Vec<ConstraintCheck>,
}

/// Shrink every label uniformly toward the centroid of the non-background
/// voxels by `1 - max_shrink * severity`, filling the freed space inside
/// the original brain with external CSF.
///
/// Each brain voxel takes the label of its inverse-mapped (nearest) source
/// voxel; sources that are background or off-grid become CSF. The set of
/// non-background voxels is unchanged.
pub fn synthesize_microcephaly(
    labels: &LabelVolume,
    severity: f64,
    cfg: &PathologyConfig,
) -> Result<(LabelVolume, MicrocephalyReport)> {
    if !(0.0..=1.0).contains(&severity) {
        return Err(Error::Severity(severity));
    }
    let csf = labels
        .vocabulary()
        .code(Role::ExternalCsf)
        .ok_or_else(|| Error::MissingRole(Role::ExternalCsf.to_string()))?;
    let brain = labels.foreground();
    let centre = centroid(&brain)?;
    let factor = cfg.microcephaly_factor(severity);
    let bg = labels.vocabulary().background();
    let dims = labels.dims();
    let csf_before = labels.count(csf);

    let mut out = labels.clone();
    if factor != 1.0 {
        let maps = source_maps(dims, [factor; 3], centre);
        let src = labels.voxels();
        let dst = out.voxels_mut();
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let i = linear_index(dims, [x, y, z]);
                    if src[i] == bg {
                        continue;
                    }
                    let source = match (maps[0][x], maps[1][y], maps[2][z]) {
                        (Some(sx), Some(sy), Some(sz)) => src[linear_index(dims, [sx, sy, sz])],
                        _ => bg,
                    };
                    dst[i] = if source == bg { csf } else { source };
                }
            }
        }
    }

    let preserved = out.foreground() == brain;
    let before = labels.histogram();
    let after = out.histogram();
    let grew: Vec<u16> = after
        .iter()
        .filter(|&(&c, &n)| c != csf && n > before.get(&c).copied().unwrap_or(0))
        .map(|(&c, _)| c)
        .collect();
    let report = MicrocephalyReport {
        severity,
        factor,
        centre,
        brain_voxels: brain.count(),
        csf_code: csf,
        csf_before,
        csf_after: out.count(csf),
        checks: vec![
            ConstraintCheck::new("brain union preserved", preserved, "non-background voxel set compared bit by bit"),
            ConstraintCheck::new(
                "label volumes non-increasing",
                grew.is_empty(),
                format!("labels that grew: {grew:?}"),
            ),
        ],
    };
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{voxel_coords, voxel_count, Vocabulary, VolumeGeometry};

    fn sphere_brain(dims: [usize; 3], r: f64) -> LabelVolume {
        let c: [f64; 3] = dims.map(|d| (d as f64 - 1.0) / 2.0);
        let v = (0..voxel_count(dims))
            .map(|i| {
                let p = voxel_coords(dims, i);
                let d = (0..3).map(|a| (p[a] as f64 - c[a]).powi(2)).sum::<f64>().sqrt();
                if d <= r * 0.6 {
                    3
                } else if d <= r * 0.85 {
                    2
                } else if d <= r {
                    1
                } else {
                    0
                }
            })
            .collect();
        LabelVolume::new(VolumeGeometry::unit(dims).unwrap(), v, Vocabulary::feta()).unwrap()
    }

    #[test]
    fn severity_zero_is_identity() {
        let l = sphere_brain([24, 24, 24], 10.0);
        let (out, report) = synthesize_microcephaly(&l, 0.0, &PathologyConfig::default()).unwrap();
        assert_eq!(out, l);
        assert!(report.checks.iter().all(|c| c.passed));
    }

    #[test]
    fn full_severity_shrinks_by_the_cube() {
        let l = sphere_brain([48, 48, 48], 20.0);
        let (out, report) = synthesize_microcephaly(&l, 1.0, &PathologyConfig::default()).unwrap();
        assert_eq!(out.foreground(), l.foreground());
        let non_csf = |v: &LabelVolume| v.voxels().iter().filter(|&&c| c > 1).count() as f64;
        let ratio = non_csf(&out) / non_csf(&l);
        assert!((ratio / 0.9f64.powi(3) - 1.0).abs() < 0.10, "{ratio}");
        assert!(report.checks.iter().all(|c| c.passed));
        assert!(report.csf_after > report.csf_before);
    }

    #[test]
    fn requires_csf_role_and_valid_severity() {
        let l = sphere_brain([12, 12, 12], 4.0).with_vocabulary(Vocabulary::four_class()).unwrap();
        assert!(matches!(
            synthesize_microcephaly(&l, 0.5, &PathologyConfig::default()),
            Err(Error::MissingRole(_))
        ));
        let l = sphere_brain([12, 12, 12], 4.0);
        assert!(synthesize_microcephaly(&l, -0.1, &PathologyConfig::default()).is_err());
    }
}
