//! Spatial blocks and the train/test split.

use serde::{Deserialize, Serialize};

use crate::rng::splitmix;

/// 80 km in degrees of latitude.
pub const BLOCK_SIZE_DEG: f64 = 80_000.0 / 111_320.0;

pub const TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Id of the square block containing `(lon, lat)`: the signed block column
/// and row packed into the high and low 32 bits.
pub fn block_id(lon: f64, lat: f64, block_size: f64) -> u64 {
    let bx = (lon / block_size).floor() as i64 as i32 as u32;
    let by = (lat / block_size).floor() as i64 as i32 as u32;
    (u64::from(bx) << 32) | u64::from(by)
}

/// Deterministic split of a block under `seed`.
pub fn split_of(block: u64, seed: u64, test_fraction: f64) -> Split {
    let h = splitmix(block ^ splitmix(seed ^ 0x5B11_7B10_C4ED_0001));
    let u = (h >> 11) as f64 / (1u64 << 53) as f64;
    if u < test_fraction {
        Split::Test
    } else {
        Split::Train
    }
}
