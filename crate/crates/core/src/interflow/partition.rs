use crate::error::{Error, Result};

/// Layer that closes the first stage of the VGG-style backbones: the last of
/// the 256-channel layers, right before the width jumps to 512.
pub const FIRST_STAGE_END: usize = 7;

/// Stage boundaries as 1-based indices of the last conv layer of each stage.
/// One prediction branch is tapped at each boundary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StagePartition {
    boundaries: Vec<usize>,
}

impl StagePartition {
    pub fn new(boundaries: Vec<usize>, depth: usize) -> Result<Self> {
        if boundaries.is_empty() {
            return Err(Error::invalid("a partition needs at least one stage"));
        }
        if boundaries[0] == 0 || boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "stage boundaries must be strictly increasing and >= 1, got {boundaries:?}"
            )));
        }
        if *boundaries.last().expect("non-empty") != depth {
            return Err(Error::invalid(format!(
                "last stage boundary must equal the depth {depth}, got {boundaries:?}"
            )));
        }
        Ok(StagePartition { boundaries })
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn branches(&self) -> usize {
        self.boundaries.len()
    }

    pub fn depth(&self) -> usize {
        *self.boundaries.last().expect("non-empty")
    }
}

/// Stage split of the 13-layer VGG backbone for 4 or 7 branches.
pub fn stage_partition(depth: usize, branches: usize) -> Result<StagePartition> {
    if depth != 13 {
        return Err(Error::invalid(format!(
            "the VGG stage split is defined for depth 13, got {depth}; pass explicit boundaries"
        )));
    }
    let boundaries = match branches {
        4 => vec![7, 10, 12, 13],
        7 => (7..=13).collect(),
        n => return Err(Error::invalid(format!("depth 13 supports 4 or 7 branches, got {n}"))),
    };
    StagePartition::new(boundaries, depth)
}

/// Partition for the extra-deep plain stacks: the first stage ends at layer 7
/// and the remaining boundaries are spread evenly over the later layers, the
/// last one at `depth`.
pub fn deep_partition(depth: usize, branches: usize) -> Result<StagePartition> {
    if branches < 2 {
        return Err(Error::invalid(format!("deep backbones need >= 2 branches, got {branches}")));
    }
    if depth < FIRST_STAGE_END + 1 || branches > depth - (FIRST_STAGE_END - 1) {
        return Err(Error::invalid(format!(
            "{branches} branches do not fit a depth-{depth} backbone (at most depth - 6)"
        )));
    }
    let span = depth - FIRST_STAGE_END;
    let rest = branches - 1;
    let mut boundaries = vec![FIRST_STAGE_END];
    boundaries.extend((1..=rest).map(|k| FIRST_STAGE_END + k * span / rest));
    StagePartition::new(boundaries, depth)
}

/// Evenly spaced boundaries `⌈k·depth/n⌉`, for shallow reduced backbones.
pub fn even_partition(depth: usize, branches: usize) -> Result<StagePartition> {
    if branches == 0 || branches > depth {
        return Err(Error::invalid(format!(
            "{branches} branches do not fit a depth-{depth} backbone"
        )));
    }
    let boundaries = (1..=branches).map(|k| (k * depth).div_ceil(branches)).collect();
    StagePartition::new(boundaries, depth)
}
