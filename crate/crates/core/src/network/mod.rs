//! The fixed fusion architecture: input normalisation, stem, two FusedMBConv
//! blocks, six MBConv+SE blocks, a 1x1 softplus head and a border crop.

mod model;
mod spec;

pub use crate::tensor::se::Squeeze;
pub use model::{count_parameters, ModelState, Tape, HEAD_BIAS, HEAD_WEIGHT};
pub(crate) use spec::hex;
pub use spec::{
    ArchitectureSpec, BlockKind, BlockSpec, BORDER_MARGIN, CHIP_SIZE, CORE_SIZE, FUSED_BLOCKS,
    INPUT_CHANNELS, MBCONV_BLOCKS,
};
