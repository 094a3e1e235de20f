//! Dataset-facing label transformations: 4-class remapping, small
//! component cleanup, hemisphere splitting and 4th-ventricle extraction.

mod classmap;
mod cleanup;
mod hemisphere;

pub use classmap::{remap_classes, ClassMap};
pub use cleanup::{clean_small_components, modal_label, DEFAULT_MIN_COMPONENT_SIZE};
pub use hemisphere::{
    has_hemisphere_codes, merge_hemispheres, split_hemispheres, HemisphereCodes, HemisphereSplit,
    Side,
};

use crate::error::{Error, Result};
use crate::morphology::{dilate, BinaryMask, StructuringElement};
use crate::volume::{LabelVolume, Role};

/// In-plane reach used to locate the 4th ventricle next to the posterior
/// fossa structures.
pub const FOURTH_VENTRICLE_REACH: usize = 4;

pub(crate) fn require_role(labels: &LabelVolume, role: Role) -> Result<()> {
    if labels.has_role(role) {
        Ok(())
    } else {
        Err(Error::MissingRole(role.to_string()))
    }
}

/// Ventricle voxels (any side) with any role.
pub(crate) fn ventricle_mask(labels: &LabelVolume) -> BinaryMask {
    labels.mask_of(&labels.vocabulary().codes_where(Role::is_ventricle))
}

/// Ventricle voxels within [`FOURTH_VENTRICLE_REACH`] in-plane dilation
/// steps of brainstem or cerebellum.
pub fn extract_fourth_ventricle(labels: &LabelVolume) -> Result<BinaryMask> {
    require_role(labels, Role::Brainstem)?;
    require_role(labels, Role::Cerebellum)?;
    let fossa = labels.role_mask(Role::Brainstem).union(&labels.role_mask(Role::Cerebellum));
    let reach = dilate(&fossa, StructuringElement::in_plane_xy(), FOURTH_VENTRICLE_REACH);
    Ok(ventricle_mask(labels).intersection(&reach))
}
