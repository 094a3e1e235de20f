use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{LabelVolume, Role, Vocabulary};

/// Role → diffusion class (0 background, 1 fluid, 2 cortex, 3 misc).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<Role, u8>", into = "BTreeMap<Role, u8>")]
pub struct ClassMap(BTreeMap<Role, u8>);

impl TryFrom<BTreeMap<Role, u8>> for ClassMap {
    type Error = Error;

    fn try_from(map: BTreeMap<Role, u8>) -> Result<Self> {
        ClassMap::new(map)
    }
}

impl From<ClassMap> for BTreeMap<Role, u8> {
    fn from(m: ClassMap) -> Self {
        m.0
    }
}

impl Default for ClassMap {
    /// External CSF and ventricles are fluid, gray matter is cortex, the
    /// remaining tissues are miscellaneous.
    fn default() -> Self {
        use Role::*;
        let map = Role::ALL
            .into_iter()
            .map(|r| {
                let class = match r {
                    Background => 0,
                    ExternalCsf | Ventricles | VentriclesLeft | VentriclesRight | Fluid => 1,
                    GrayMatter | Cortex => 2,
                    WhiteMatter | WhiteMatterLeft | WhiteMatterRight | Cerebellum | DeepGrayMatter
                    | Brainstem | Misc => 3,
                };
                (r, class)
            })
            .collect();
        Self(map)
    }
}

impl ClassMap {
    pub fn new(map: BTreeMap<Role, u8>) -> Result<Self> {
        if let Some((role, class)) = map.iter().find(|(_, &c)| c > 3) {
            return Err(Error::InvalidArgument(format!("role {role} mapped to class {class} > 3")));
        }
        Ok(Self(map))
    }

    pub fn class(&self, role: Role) -> Option<u8> {
        self.0.get(&role).copied()
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Replace every voxel code by the class of its role.
pub fn remap_classes(labels: &LabelVolume, map: &ClassMap) -> Result<LabelVolume> {
    let vocab = labels.vocabulary();
    let mut lut: BTreeMap<u16, u16> = BTreeMap::new();
    for code in labels.codes_present() {
        let role = vocab.role(code).ok_or(Error::UnmappedCode(code))?;
        let class = map.class(role).ok_or(Error::UnmappedCode(code))?;
        lut.insert(code, u16::from(class));
    }
    let voxels = labels.voxels().iter().map(|v| lut[v]).collect();
    labels.with_voxels(voxels)?.with_vocabulary(Vocabulary::four_class())
}
