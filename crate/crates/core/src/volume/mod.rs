//! Volume types, NIfTI I/O and the geometry operations shared by every
//! other module (crop, resize, intensity normalization, revert).

mod nifti;
mod ops;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::BinaryMask;

pub use ops::{
    crop_pair, crop_to_foreground, denormalize_intensity, normalize_intensity, resize_intensity,
    resize_labels, revert_intensity, revert_labels, ResizeMode,
};

/// Linear index of voxel `(x, y, z)` in an x-fastest grid.
#[inline]
pub fn linear_index(dims: [usize; 3], [x, y, z]: [usize; 3]) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

/// Inverse of [`linear_index`].
#[inline]
pub fn voxel_coords(dims: [usize; 3], index: usize) -> [usize; 3] {
    let x = index % dims[0];
    let rest = index / dims[0];
    [x, rest % dims[1], rest / dims[1]]
}

pub(crate) fn voxel_count(dims: [usize; 3]) -> usize {
    dims[0] * dims[1] * dims[2]
}

pub type Affine = [[f64; 4]; 4];

fn diagonal_affine(spacing: [f64; 3]) -> Affine {
    let mut a = [[0.0; 4]; 4];
    for axis in 0..3 {
        a[axis][axis] = spacing[axis];
    }
    a[3][3] = 1.0;
    a
}

fn det3(a: &Affine) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Grid size, voxel spacing (mm) and the voxel-to-world affine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeGeometry {
    dims: [usize; 3],
    spacing: [f64; 3],
    affine: Affine,
}

impl VolumeGeometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], affine: Affine) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Geometry(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Geometry(format!("spacing must be positive, got {spacing:?}")));
        }
        if affine.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Geometry("affine has non-finite entries".into()));
        }
        let det = det3(&affine);
        if det == 0.0 || !det.is_finite() {
            return Err(Error::Geometry("affine rotation/scale block is singular".into()));
        }
        Ok(Self {
            dims,
            spacing,
            affine,
        })
    }

    /// Axis-aligned geometry with the origin at voxel `(0, 0, 0)`.
    pub fn with_spacing(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::new(dims, spacing, diagonal_affine(spacing))
    }

    /// Unit spacing, identity affine.
    pub fn unit(dims: [usize; 3]) -> Result<Self> {
        Self::with_spacing(dims, [1.0; 3])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn affine(&self) -> &Affine {
        &self.affine
    }

    pub fn voxel_count(&self) -> usize {
        voxel_count(self.dims)
    }

    /// World position (mm) of a continuous voxel coordinate.
    pub fn voxel_to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let a = &self.affine;
        let mut out = [0.0; 3];
        for (row, o) in out.iter_mut().enumerate() {
            *o = a[row][0] * p[0] + a[row][1] * p[1] + a[row][2] * p[2] + a[row][3];
        }
        out
    }

    /// Grid of size `dims` whose voxel `(0, 0, 0)` sits at voxel `offset` of
    /// this grid; world positions of shared voxels do not move.
    pub(crate) fn reframed(&self, offset: [f64; 3], dims: [usize; 3]) -> Self {
        let origin = self.voxel_to_world(offset);
        let mut affine = self.affine;
        for row in 0..3 {
            affine[row][3] = origin[row];
        }
        Self {
            dims,
            spacing: self.spacing,
            affine,
        }
    }

    /// Geometry of a voxel-center aligned resampling to `target`.
    pub(crate) fn resized(&self, target: [usize; 3]) -> Self {
        let ratio: [f64; 3] = std::array::from_fn(|a| self.dims[a] as f64 / target[a] as f64);
        // New voxel i sits at old continuous coordinate (i + 0.5) * r - 0.5.
        let origin = self.voxel_to_world(std::array::from_fn(|a| 0.5 * ratio[a] - 0.5));
        let mut affine = self.affine;
        for row in 0..3 {
            for col in 0..3 {
                affine[row][col] *= ratio[col];
            }
            affine[row][3] = origin[row];
        }
        Self {
            dims: target,
            spacing: std::array::from_fn(|a| self.spacing[a] * ratio[a]),
            affine,
        }
    }
}

/// Semantic role of a label code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Background,
    ExternalCsf,
    GrayMatter,
    WhiteMatter,
    Ventricles,
    Cerebellum,
    DeepGrayMatter,
    Brainstem,
    WhiteMatterLeft,
    WhiteMatterRight,
    VentriclesLeft,
    VentriclesRight,
    Fluid,
    Cortex,
    Misc,
}

impl Role {
    pub const ALL: [Role; 15] = [
        Role::Background,
        Role::ExternalCsf,
        Role::GrayMatter,
        Role::WhiteMatter,
        Role::Ventricles,
        Role::Cerebellum,
        Role::DeepGrayMatter,
        Role::Brainstem,
        Role::WhiteMatterLeft,
        Role::WhiteMatterRight,
        Role::VentriclesLeft,
        Role::VentriclesRight,
        Role::Fluid,
        Role::Cortex,
        Role::Misc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Background => "background",
            Role::ExternalCsf => "external-csf",
            Role::GrayMatter => "gray-matter",
            Role::WhiteMatter => "white-matter",
            Role::Ventricles => "ventricles",
            Role::Cerebellum => "cerebellum",
            Role::DeepGrayMatter => "deep-gray-matter",
            Role::Brainstem => "brainstem",
            Role::WhiteMatterLeft => "white-matter-left",
            Role::WhiteMatterRight => "white-matter-right",
            Role::VentriclesLeft => "ventricles-left",
            Role::VentriclesRight => "ventricles-right",
            Role::Fluid => "fluid",
            Role::Cortex => "cortex",
            Role::Misc => "misc",
        }
    }

    pub fn is_white_matter(self) -> bool {
        matches!(self, Role::WhiteMatter | Role::WhiteMatterLeft | Role::WhiteMatterRight)
    }

    pub fn is_ventricle(self) -> bool {
        matches!(self, Role::Ventricles | Role::VentriclesLeft | Role::VentriclesRight)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Vocabulary(format!("unknown role `{s}`")))
    }
}

/// Map from label code to semantic role. Exactly one code is background.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<u16, Role>", into = "BTreeMap<u16, Role>")]
pub struct Vocabulary(BTreeMap<u16, Role>);

impl TryFrom<BTreeMap<u16, Role>> for Vocabulary {
    type Error = Error;

    fn try_from(map: BTreeMap<u16, Role>) -> Result<Self> {
        Vocabulary::new(map)
    }
}

impl From<Vocabulary> for BTreeMap<u16, Role> {
    fn from(v: Vocabulary) -> Self {
        v.0
    }
}

impl Vocabulary {
    pub fn new(map: BTreeMap<u16, Role>) -> Result<Self> {
        let backgrounds = map.values().filter(|&&r| r == Role::Background).count();
        if backgrounds != 1 {
            return Err(Error::Vocabulary(format!(
                "exactly one background code required, found {backgrounds}"
            )));
        }
        Ok(Self(map))
    }

    /// The 7-tissue FeTA convention: 0 background, 1 external CSF, 2 gray
    /// matter, 3 white matter, 4 ventricles, 5 cerebellum, 6 deep gray
    /// matter, 7 brainstem.
    pub fn feta() -> Self {
        Self(BTreeMap::from([
            (0, Role::Background),
            (1, Role::ExternalCsf),
            (2, Role::GrayMatter),
            (3, Role::WhiteMatter),
            (4, Role::Ventricles),
            (5, Role::Cerebellum),
            (6, Role::DeepGrayMatter),
            (7, Role::Brainstem),
        ]))
    }

    /// The four diffusion-conditioning classes.
    pub fn four_class() -> Self {
        Self(BTreeMap::from([
            (0, Role::Background),
            (1, Role::Fluid),
            (2, Role::Cortex),
            (3, Role::Misc),
        ]))
    }

    pub fn role(&self, code: u16) -> Option<Role> {
        self.0.get(&code).copied()
    }

    pub fn contains(&self, code: u16) -> bool {
        self.0.contains_key(&code)
    }

    /// All codes carrying `role`, ascending.
    pub fn codes(&self, role: Role) -> Vec<u16> {
        self.0.iter().filter(|(_, &r)| r == role).map(|(&c, _)| c).collect()
    }

    /// Codes whose role satisfies `pred`.
    pub fn codes_where(&self, pred: impl Fn(Role) -> bool) -> Vec<u16> {
        self.0.iter().filter(|(_, &r)| pred(r)).map(|(&c, _)| c).collect()
    }

    /// Lowest code carrying `role`.
    pub fn code(&self, role: Role) -> Option<u16> {
        self.0.iter().find(|(_, &r)| r == role).map(|(&c, _)| c)
    }

    pub fn background(&self) -> u16 {
        self.code(Role::Background).expect("vocabulary invariant: one background code")
    }

    pub fn iter(&self) -> impl Iterator<Item = (u16, Role)> + '_ {
        self.0.iter().map(|(&c, &r)| (c, r))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Smallest code above every existing one.
    pub fn next_free_code(&self) -> u16 {
        self.0.keys().next_back().map_or(0, |c| c + 1)
    }

    pub(crate) fn insert(&mut self, code: u16, role: Role) -> Result<()> {
        if role == Role::Background && self.0.get(&code) != Some(&Role::Background) {
            return Err(Error::Vocabulary("cannot add a second background code".into()));
        }
        self.0.insert(code, role);
        Ok(())
    }

    pub(crate) fn remove(&mut self, code: u16) {
        if self.0.get(&code) != Some(&Role::Background) {
            self.0.remove(&code);
        }
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Integer label grid with geometry and a code vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    geometry: VolumeGeometry,
    voxels: Vec<u16>,
    vocabulary: Vocabulary,
}

impl LabelVolume {
    pub fn new(geometry: VolumeGeometry, voxels: Vec<u16>, vocabulary: Vocabulary) -> Result<Self> {
        if voxels.len() != geometry.voxel_count() {
            return Err(Error::Geometry(format!(
                "{} voxels for dims {:?}",
                voxels.len(),
                geometry.dims()
            )));
        }
        let mut seen = BTreeSet::new();
        for &v in &voxels {
            if seen.insert(v) && !vocabulary.contains(v) {
                return Err(Error::Vocabulary(format!("voxel code {v} is not in the vocabulary")));
            }
        }
        Ok(Self {
            geometry,
            voxels,
            vocabulary,
        })
    }

    /// All-background volume.
    pub fn background(geometry: VolumeGeometry, vocabulary: Vocabulary) -> Self {
        let bg = vocabulary.background();
        let n = geometry.voxel_count();
        Self {
            geometry,
            voxels: vec![bg; n],
            vocabulary,
        }
    }

    pub(crate) fn from_parts_unchecked(
        geometry: VolumeGeometry,
        voxels: Vec<u16>,
        vocabulary: Vocabulary,
    ) -> Self {
        debug_assert_eq!(voxels.len(), geometry.voxel_count());
        Self {
            geometry,
            voxels,
            vocabulary,
        }
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn voxels(&self) -> &[u16] {
        &self.voxels
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn into_voxels(self) -> Vec<u16> {
        self.voxels
    }

    pub fn get(&self, xyz: [usize; 3]) -> u16 {
        self.voxels[linear_index(self.dims(), xyz)]
    }

    pub(crate) fn voxels_mut(&mut self) -> &mut [u16] {
        &mut self.voxels
    }

    pub(crate) fn vocabulary_mut(&mut self) -> &mut Vocabulary {
        &mut self.vocabulary
    }

    /// Same geometry and vocabulary, new voxels.
    pub fn with_voxels(&self, voxels: Vec<u16>) -> Result<Self> {
        Self::new(self.geometry.clone(), voxels, self.vocabulary.clone())
    }

    /// Replace the vocabulary, checking every voxel code is still covered.
    pub fn with_vocabulary(self, vocabulary: Vocabulary) -> Result<Self> {
        Self::new(self.geometry, self.voxels, vocabulary)
    }

    pub fn mask_of(&self, codes: &[u16]) -> BinaryMask {
        let bits = self.voxels.iter().map(|v| codes.contains(v)).collect();
        BinaryMask::from_bits(self.dims(), bits).expect("dims match voxel count")
    }

    pub fn mask_of_code(&self, code: u16) -> BinaryMask {
        self.mask_of(&[code])
    }

    /// Voxels whose code carries `role`.
    pub fn role_mask(&self, role: Role) -> BinaryMask {
        self.mask_of(&self.vocabulary.codes(role))
    }

    /// Non-background voxels.
    pub fn foreground(&self) -> BinaryMask {
        let bg = self.vocabulary.background();
        let bits = self.voxels.iter().map(|&v| v != bg).collect();
        BinaryMask::from_bits(self.dims(), bits).expect("dims match voxel count")
    }

    pub fn count(&self, code: u16) -> usize {
        self.voxels.iter().filter(|&&v| v == code).count()
    }

    /// Number of voxels per code present in the grid.
    pub fn histogram(&self) -> BTreeMap<u16, usize> {
        let mut h = BTreeMap::new();
        for &v in &self.voxels {
            *h.entry(v).or_insert(0) += 1;
        }
        h
    }

    pub fn codes_present(&self) -> BTreeSet<u16> {
        self.voxels.iter().copied().collect()
    }

    /// Whether any voxel carries `role`.
    pub fn has_role(&self, role: Role) -> bool {
        let codes = self.vocabulary.codes(role);
        !codes.is_empty() && self.voxels.iter().any(|v| codes.contains(v))
    }

    pub fn read(path: impl AsRef<Path>, vocabulary: Option<&Vocabulary>) -> Result<Self> {
        read_label_volume(path.as_ref(), vocabulary)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        nifti::write_labels(path.as_ref(), &self.geometry, &self.voxels)
    }
}

/// Finite real-valued grid with geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityVolume {
    geometry: VolumeGeometry,
    voxels: Vec<f64>,
}

impl IntensityVolume {
    pub fn new(geometry: VolumeGeometry, voxels: Vec<f64>) -> Result<Self> {
        if voxels.len() != geometry.voxel_count() {
            return Err(Error::Geometry(format!(
                "{} voxels for dims {:?}",
                voxels.len(),
                geometry.dims()
            )));
        }
        if let Some(bad) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite intensity at voxel {bad}")));
        }
        Ok(Self { geometry, voxels })
    }

    pub(crate) fn from_parts_unchecked(geometry: VolumeGeometry, voxels: Vec<f64>) -> Self {
        debug_assert_eq!(voxels.len(), geometry.voxel_count());
        Self { geometry, voxels }
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn voxels(&self) -> &[f64] {
        &self.voxels
    }

    pub fn into_voxels(self) -> Vec<f64> {
        self.voxels
    }

    pub fn get(&self, xyz: [usize; 3]) -> f64 {
        self.voxels[linear_index(self.dims(), xyz)]
    }

    /// `(min, max)` of the voxel values.
    pub fn range(&self) -> (f64, f64) {
        self.voxels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        read_intensity_volume(path.as_ref())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        nifti::write_intensity(path.as_ref(), &self.geometry, &self.voxels)
    }
}

/// What a file should be decoded as.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VolumeKind {
    Label,
    Intensity,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Volume {
    Label(LabelVolume),
    Intensity(IntensityVolume),
}

/// Read a NIfTI-1 file (`.nii` or gzip-compressed `.nii.gz`).
///
/// Label vocabularies come from `vocabulary` when given, else from a
/// `<name>.labels.json` sidecar next to the file, else the FeTA convention.
pub fn read_volume(path: &Path, kind: VolumeKind, vocabulary: Option<&Vocabulary>) -> Result<Volume> {
    match kind {
        VolumeKind::Label => read_label_volume(path, vocabulary).map(Volume::Label),
        VolumeKind::Intensity => read_intensity_volume(path).map(Volume::Intensity),
    }
}

pub fn write_volume(volume: &Volume, path: &Path) -> Result<()> {
    match volume {
        Volume::Label(v) => v.write(path),
        Volume::Intensity(v) => v.write(path),
    }
}

/// `scan.nii.gz` → `scan`.
pub fn volume_stem(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    for ext in [".nii.gz", ".nii"] {
        if let Some(stem) = name.strip_suffix(ext) {
            return stem.to_string();
        }
    }
    name
}

/// Path of the vocabulary sidecar belonging to a volume file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_file_name(format!("{}.labels.json", volume_stem(path)))
}

fn read_label_volume(path: &Path, vocabulary: Option<&Vocabulary>) -> Result<LabelVolume> {
    let raw = nifti::read(path)?;
    let mut voxels = Vec::with_capacity(raw.data.len());
    for (i, &v) in raw.data.iter().enumerate() {
        if v.fract() != 0.0 || !(0.0..=f64::from(u16::MAX)).contains(&v) {
            return Err(Error::LabelType(format!(
                "{}: voxel {i} has value {v}",
                path.display()
            )));
        }
        voxels.push(v as u16);
    }
    let vocabulary = match vocabulary {
        Some(v) => v.clone(),
        None => {
            let sidecar = sidecar_path(path);
            if sidecar.exists() {
                Vocabulary::read_json(&sidecar)?
            } else {
                Vocabulary::feta()
            }
        }
    };
    LabelVolume::new(raw.geometry, voxels, vocabulary)
}

fn read_intensity_volume(path: &Path) -> Result<IntensityVolume> {
    let raw = nifti::read(path)?;
    IntensityVolume::new(raw.geometry, raw.data)
}

/// Original range of an intensity image, kept for denormalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityRange {
    pub min: f64,
    pub max: f64,
}

/// Everything needed to undo crop + resize (+ normalization).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropRecord {
    pub original_dims: [usize; 3],
    pub offset: [usize; 3],
    pub cropped_dims: [usize; 3],
    /// Dims after resizing; equals `cropped_dims` until a resize is recorded.
    pub target_dims: [usize; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity_range: Option<IntensityRange>,
}

impl CropRecord {
    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
