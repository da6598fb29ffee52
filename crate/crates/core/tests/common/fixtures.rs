//! Small synthetic worlds, chip sets and models shared by the integration tests.

use wsci_fusion::data::{
    compute_norm_constants, sample_chips, Chip, SampleConfig, Split, SplitConfig, SynthOutput,
    SyntheticWorld, PIXEL_SIZE_DEG,
};
use wsci_fusion::{ArchitectureSpec, Model32, RngStream};

pub const SPLIT: SplitConfig = SplitConfig {
    seed: 3,
    test_fraction: 0.2,
};

pub fn world(seed: u64, extent: usize) -> SynthOutput {
    SyntheticWorld {
        seed,
        width: extent,
        height: extent,
        ..Default::default()
    }
    .generate(1)
    .unwrap()
}

/// Chips on a `stride` grid with blocks of `block_px` cells.
pub fn chips(w: &SynthOutput, stride: usize, block_px: f64) -> Vec<Chip> {
    let cfg = SampleConfig {
        quarter: 1,
        stride,
        block_size_deg: block_px * PIXEL_SIZE_DEG,
        seed: 1,
        ..Default::default()
    };
    sample_chips(&w.inputs, &w.target, &cfg).unwrap()
}

pub fn train_split(chips: &[Chip]) -> Vec<&Chip> {
    SPLIT.select(chips, Split::Train)
}

/// Model with input normalisation fitted to `chips`.
pub fn model(spec: &ArchitectureSpec, seed: u64, chips: &[&Chip]) -> Model32 {
    let mut m = Model32::build(spec, &mut RngStream::new(seed, 0)).unwrap();
    let norm = compute_norm_constants(chips.iter().copied()).unwrap();
    m.set_normalization(norm.mean, norm.std).unwrap();
    m
}
