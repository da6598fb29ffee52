//! Footprint gridding, chip sampling, spatial splits and the synthetic world.

pub mod blocks;
pub mod chips;
pub mod footprint;
pub mod raster;
pub mod synth;

pub use blocks::{block_id, split_of, Split, BLOCK_SIZE_DEG, TEST_FRACTION};
pub use chips::{
    accept_window, compute_norm_constants, encode_coordinates, fill_window, read_chips,
    sample_chips, write_chips, Chip, NormConstants, SampleConfig, SplitConfig, CHIP_PIXELS,
    LAYER_NAMES, MAX_CHIPS_PER_BLOCK, MIN_VALID_TARGETS, SAR_LAYERS,
};
pub use footprint::{grid_footprints, read_footprints, write_footprints, FootprintRecord};
pub use raster::{sidecar_path, Raster, RasterGeometry, RasterSidecar, PIXEL_SIZE_DEG};
pub use synth::{value_noise, SynthOutput, SyntheticWorld, TRUTH_RANGE};
