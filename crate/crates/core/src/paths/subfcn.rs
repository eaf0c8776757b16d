use crate::arch::{ArchSpec, Family, GateTensor, ParamSet, ParamSetKind};
use crate::error::{Error, Result};

/// A subset `J` of the skippable blocks of a RES network. Bit `j` set
/// means middle block `j + 1` is traversed instead of skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SubFcnMask {
    pub mask: u32,
}

impl SubFcnMask {
    pub fn size(&self) -> usize {
        self.mask.count_ones() as usize
    }

    /// Indices of the traversed blocks, including the first and last.
    pub fn blocks(&self, arch: &ArchSpec) -> Vec<usize> {
        let skips = res_dims(arch).0;
        let mut b = vec![0];
        b.extend(
            (0..skips)
                .filter(|j| self.mask >> j & 1 == 1)
                .map(|j| j + 1),
        );
        b.push(skips + 1);
        b
    }

    /// Global weight-layer ids along the sub-FCN.
    pub fn layers(&self, arch: &ArchSpec) -> Vec<usize> {
        let block_depth = res_dims(arch).1;
        self.blocks(arch)
            .into_iter()
            .flat_map(|b| (0..block_depth).map(move |t| b * block_depth + t))
            .collect()
    }

    /// `(|J| + 2) * d_blk`.
    pub fn depth(&self, arch: &ArchSpec) -> usize {
        (self.size() + 2) * res_dims(arch).1
    }

    /// The equivalent FC architecture.
    pub fn fc_arch(&self, arch: &ArchSpec) -> ArchSpec {
        ArchSpec {
            family: Family::Fc {
                depth: self.depth(arch),
                width: arch.width(),
            },
            ..arch.clone()
        }
    }

    /// Gates of the RES network restricted to the sub-FCN's layers.
    pub fn gates(&self, arch: &ArchSpec, gates: &GateTensor) -> Result<GateTensor> {
        let layers = self.layers(arch);
        let hidden = layers[..layers.len() - 1]
            .iter()
            .map(|&l| gates.hidden_layer(l).values.clone())
            .collect();
        GateTensor::from_hidden(&self.fc_arch(arch), gates.mode, hidden)
    }

    /// Weights of the RES network restricted to the sub-FCN's layers.
    pub fn params(&self, arch: &ArchSpec, params: &ParamSet) -> Result<ParamSet> {
        let tensors = self
            .layers(arch)
            .iter()
            .map(|&l| params.layer(l).clone())
            .collect();
        ParamSet::from_tensors(&self.fc_arch(arch), ParamSetKind::Standard, tensors)
    }
}

fn res_dims(arch: &ArchSpec) -> (usize, usize) {
    match arch.family {
        Family::Res {
            skips, block_depth, ..
        } => (skips, block_depth),
        _ => (0, arch.depth()),
    }
}

/// All `2^b` sub-FCNs of a RES network, in increasing mask order.
pub fn enumerate_subfcns(arch: &ArchSpec) -> Result<Vec<SubFcnMask>> {
    let Family::Res { skips, .. } = arch.family else {
        return Err(Error::invalid("sub-FCNs are defined for RES architectures"));
    };
    if skips >= 32 {
        return Err(Error::invalid("at most 31 skippable blocks"));
    }
    Ok((0..1u32 << skips).map(|mask| SubFcnMask { mask }).collect())
}
