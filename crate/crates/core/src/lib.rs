//! Label-volume toolkit for simulating fetal and neonatal brain pathology.
//!
//! Healthy segmentation label maps are turned into pathological ones
//! (ventriculomegaly, cerebellar and pontocerebellar hypoplasia,
//! microcephaly/atrophy), prepared for a label-conditioned diffusion model,
//! and the resulting segmentations and rater scores are evaluated.
//!
//! Voxel grids are stored as flat vectors with `x` varying fastest, the
//! same order NIfTI uses on disk.

pub mod config;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod labels;
pub mod morphology;
pub mod pathology;
pub mod phantom;
pub mod pipeline;
pub mod volume;

pub use error::{Error, Result};
pub use morphology::{BinaryMask, StructuringElement};
pub use volume::{CropRecord, IntensityVolume, LabelVolume, Role, VolumeGeometry, Vocabulary};
