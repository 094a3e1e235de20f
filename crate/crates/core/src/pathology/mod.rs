//! Pathology plans and the label-morphology synthesizers that realise them.

mod hypoplasia;
mod microcephaly;
mod plan;
mod ventriculomegaly;

pub use hypoplasia::{attachment_point, synthesize_hypoplasia, HypoplasiaMode, HypoplasiaReport};
pub use microcephaly::{synthesize_microcephaly, MicrocephalyReport};
pub use plan::{Pathology, PathologyPlan, PlanOverride, Severities, Symmetry};
pub use ventriculomegaly::{synthesize_ventriculomegaly, HemisphereGrowth, VentriculomegalyReport};

use serde::{Deserialize, Serialize};

use crate::config::PathologyConfig;
use crate::error::{Error, Result};
use crate::labels::{has_hemisphere_codes, merge_hemispheres, split_hemispheres};
use crate::volume::LabelVolume;

/// Outcome of one constraint verified on a synthesized volume.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl ConstraintCheck {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub rotation_degrees: Option<f64>,
    pub kmeans_iterations: usize,
    pub left_voxels: usize,
    pub right_voxels: usize,
}

/// Parameters and checks of every step of [`apply_plan`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub plan: PathologyPlan,
    pub microcephaly: Option<MicrocephalyReport>,
    pub hypoplasia: Option<HypoplasiaReport>,
    pub hemisphere_split: Option<SplitSummary>,
    pub ventriculomegaly: Option<VentriculomegalyReport>,
}

impl SynthesisReport {
    pub fn checks(&self) -> Vec<&ConstraintCheck> {
        let mut out = Vec::new();
        if let Some(r) = &self.microcephaly {
            out.extend(&r.checks);
        }
        if let Some(r) = &self.hypoplasia {
            out.extend(&r.checks);
        }
        if let Some(r) = &self.ventriculomegaly {
            out.extend(&r.checks);
        }
        out
    }

    pub fn all_passed(&self) -> bool {
        self.checks().iter().all(|c| c.passed)
    }
}

/// Apply microcephaly, then hypoplasia, then ventriculomegaly, each to the
/// previous output, so the ventricle budget is measured on the final white
/// matter. Volumes without hemisphere sub-codes are split for the
/// ventriculomegaly step and merged back afterwards.
///
/// A failed constraint check is reported as [`Error::Constraint`].
pub fn apply_plan(
    labels: &LabelVolume,
    plan: &PathologyPlan,
    cfg: &PathologyConfig,
) -> Result<(LabelVolume, SynthesisReport)> {
    plan.validate()?;
    let mut report = SynthesisReport {
        plan: plan.clone(),
        microcephaly: None,
        hypoplasia: None,
        hemisphere_split: None,
        ventriculomegaly: None,
    };
    let mut current = labels.clone();
    if plan.microcephaly {
        let (next, r) = synthesize_microcephaly(&current, plan.severities.microcephaly, cfg)?;
        current = next;
        report.microcephaly = Some(r);
    }
    let hypoplasia = if plan.pontocerebellar_hypoplasia {
        Some((HypoplasiaMode::Pontocerebellar, plan.severities.pontocerebellar_hypoplasia))
    } else if plan.cerebellar_hypoplasia {
        Some((HypoplasiaMode::Cerebellar, plan.severities.cerebellar_hypoplasia))
    } else {
        None
    };
    if let Some((mode, severity)) = hypoplasia {
        let (next, r) = synthesize_hypoplasia(&current, severity, mode, cfg)?;
        current = next;
        report.hypoplasia = Some(r);
    }
    if plan.ventriculomegaly {
        if has_hemisphere_codes(&current) {
            let (next, r) = synthesize_ventriculomegaly(&current, plan, cfg)?;
            current = next;
            report.ventriculomegaly = Some(r);
        } else {
            let (split, s) = split_hemispheres(&current, cfg.hemisphere_rotation)?;
            report.hemisphere_split = Some(SplitSummary {
                rotation_degrees: s.rotation_degrees,
                kmeans_iterations: s.iterations,
                left_voxels: s.white_matter[0].count() + s.ventricles[0].count(),
                right_voxels: s.white_matter[1].count() + s.ventricles[1].count(),
            });
            let (grown, r) = synthesize_ventriculomegaly(&split, plan, cfg)?;
            current = merge_hemispheres(&grown)?;
            report.ventriculomegaly = Some(r);
        }
    }
    let failed: Vec<String> = report
        .checks()
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect();
    if !failed.is_empty() {
        return Err(Error::Constraint(failed.join("; ")));
    }
    Ok((current, report))
}
