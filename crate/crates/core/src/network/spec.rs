use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::activation::Activation;
use crate::tensor::se::Squeeze;

/// Number of input layers: 7 radar/terrain layers plus 3 coordinate layers.
pub const INPUT_CHANNELS: usize = 10;
/// Chip edge in pixels (1 km at 25 m).
pub const CHIP_SIZE: usize = 40;
/// Pixels removed from each side of the prediction.
pub const BORDER_MARGIN: usize = 4;
/// Edge of the predicted core.
pub const CORE_SIZE: usize = CHIP_SIZE - 2 * BORDER_MARGIN;

pub const FUSED_BLOCKS: usize = 2;
pub const MBCONV_BLOCKS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Fused,
    Mbconv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub width: usize,
    pub expansion: usize,
    pub kernel: usize,
    /// Squeeze width as a fraction of the block's input width (MBConv only).
    pub se_ratio: f64,
}

impl BlockSpec {
    pub fn fused(width: usize, expansion: usize) -> Self {
        Self {
            kind: BlockKind::Fused,
            width,
            expansion,
            kernel: 3,
            se_ratio: 0.0,
        }
    }

    pub fn mbconv(width: usize, expansion: usize, se_ratio: f64) -> Self {
        Self {
            kind: BlockKind::Mbconv,
            width,
            expansion,
            kernel: 3,
            se_ratio,
        }
    }

    pub fn squeeze_width(&self, input_width: usize) -> usize {
        ((input_width as f64 * self.se_ratio).floor() as usize).max(1)
    }
}

/// Everything needed to rebuild the network's parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub input_channels: usize,
    pub input_size: usize,
    pub stem_width: usize,
    pub stem_kernel: usize,
    pub blocks: Vec<BlockSpec>,
    pub dropout_rate: f64,
    pub head_channels: usize,
    pub border_margin: usize,
    /// Activation inside blocks; the head always uses softplus.
    pub activation: Activation,
    pub squeeze: Squeeze,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Target value of the mean channel at initialisation.
    pub head_mean_init: f64,
    /// Target value of the variance channel at initialisation.
    pub head_var_init: f64,
    /// Fixed per-channel input normalisation.
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
}

impl Default for ArchitectureSpec {
    /// Stem 24, two fused blocks at 24 (expansion 4), six MBConv blocks at 40
    /// (expansion 4, SE ratio 0.25), 1x1 head to two channels.
    fn default() -> Self {
        Self::with_widths(24, 24, 40, 4)
    }
}

impl ArchitectureSpec {
    pub fn with_widths(stem: usize, fused: usize, mbconv: usize, expansion: usize) -> Self {
        let mut blocks = vec![BlockSpec::fused(fused, expansion); FUSED_BLOCKS];
        blocks.extend(std::iter::repeat_n(
            BlockSpec::mbconv(mbconv, expansion, 0.25),
            MBCONV_BLOCKS,
        ));
        Self {
            input_channels: INPUT_CHANNELS,
            input_size: CHIP_SIZE,
            stem_width: stem,
            stem_kernel: 3,
            blocks,
            dropout_rate: 0.2,
            head_channels: 2,
            border_margin: BORDER_MARGIN,
            activation: Activation::Silu,
            squeeze: Squeeze::Global,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            head_mean_init: 9.0,
            head_var_init: 1.0,
            norm_mean: vec![0.0; INPUT_CHANNELS],
            norm_std: vec![1.0; INPUT_CHANNELS],
        }
    }

    /// Default layout with every width halved.
    pub fn desk() -> Self {
        Self::with_widths(12, 12, 20, 4)
    }

    /// Widths of at most 8, for end-to-end gradient checks.
    pub fn tiny() -> Self {
        Self::with_widths(4, 4, 6, 2)
    }

    pub fn with_squeeze(mut self, squeeze: Squeeze) -> Self {
        self.squeeze = squeeze;
        self
    }

    pub fn output_size(&self) -> usize {
        self.input_size - 2 * self.border_margin
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArchitecture(m));
        let kinds: Vec<BlockKind> = self.blocks.iter().map(|b| b.kind).collect();
        let fused = kinds.iter().take_while(|k| **k == BlockKind::Fused).count();
        if fused != FUSED_BLOCKS
            || kinds.len() != FUSED_BLOCKS + MBCONV_BLOCKS
            || kinds[fused..].iter().any(|k| *k != BlockKind::Mbconv)
        {
            return bad(format!(
                "expected {FUSED_BLOCKS} fused blocks followed by {MBCONV_BLOCKS} mbconv blocks, got {kinds:?}"
            ));
        }
        if self.input_channels == 0 || self.stem_width == 0 || self.head_channels != 2 {
            return bad(
                "input channels, stem width must be positive and head must have 2 channels".into(),
            );
        }
        for k in std::iter::once(self.stem_kernel).chain(self.blocks.iter().map(|b| b.kernel)) {
            if k % 2 == 0 {
                return bad(format!("kernel extent {k} is not odd"));
            }
        }
        if self.blocks.iter().any(|b| b.width == 0 || b.expansion == 0) {
            return bad("block widths and expansions must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        if 2 * self.border_margin >= self.input_size {
            return bad("border margin leaves no output".into());
        }
        if self.norm_mean.len() != self.input_channels || self.norm_std.len() != self.input_channels
        {
            return bad("normalisation constants must have one entry per input channel".into());
        }
        if self.norm_std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return bad("normalisation std must be positive".into());
        }
        if !(self.head_mean_init > 0.0 && self.head_var_init > 0.0) {
            return bad("head initial targets must be positive".into());
        }
        Ok(())
    }

    /// Radius (in pixels) of the input neighbourhood that can influence one
    /// output pixel, or `None` if a global squeeze couples every pixel.
    pub fn receptive_field_radius(&self) -> Option<usize> {
        let squeeze_radius = match self.squeeze {
            Squeeze::Global => return None,
            Squeeze::Local { radius } => radius,
        };
        let mut r = self.stem_kernel / 2;
        for b in &self.blocks {
            r += b.kernel / 2;
            if b.kind == BlockKind::Mbconv {
                r += squeeze_radius;
            }
        }
        Some(r)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serialises");
        hex(&Sha256::digest(&json))
    }

    /// Name of the first top-level field whose value differs from `other`.
    pub fn first_difference(&self, other: &ArchitectureSpec) -> Option<String> {
        let a = serde_json::to_value(self).expect("spec serialises");
        let b = serde_json::to_value(other).expect("spec serialises");
        let (a, b) = (a.as_object()?, b.as_object()?);
        for (k, v) in a {
            if b.get(k) != Some(v) {
                return Some(k.clone());
            }
        }
        b.keys().find(|k| !a.contains_key(*k)).cloned()
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
