//! Moran's I spatial (cross-)correlation on rasters with nodata holes.
//!
//! `I = (n / S0) * sum_ij s_ij (a_i - mean_a)(b_j - mean_b) / sqrt(SS_a * SS_b)`
//! where `s_ij = (w_ij + w_ji) / 2`. Symmetrising the weights leaves the
//! auto-correlation unchanged and makes the cross statistic exactly symmetric
//! in its two fields even when rows are standardised.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::pairwise_sum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weights {
    /// Edge neighbours (4).
    Rook,
    /// Edge and corner neighbours (8).
    #[default]
    Queen,
}

impl Weights {
    pub fn offsets(self) -> &'static [(isize, isize)] {
        const ROOK: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
        const QUEEN: [(isize, isize); 8] = [
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ];
        match self {
            Weights::Rook => &ROOK,
            Weights::Queen => &QUEEN,
        }
    }
}

/// Row-major grid of `f64` with NaN as nodata.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "grid {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }
}

pub fn morans_i(a: &Grid, b: &Grid, weights: Weights, row_standardized: bool) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::InvalidArgument("moran: grids differ in size".into()));
    }
    let (w, h) = (a.width, a.height);
    let valid: Vec<bool> = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let idx: Vec<usize> = (0..w * h).filter(|&i| valid[i]).collect();
    if idx.len() < 2 {
        return Err(Error::InvalidArgument(
            "moran: fewer than two valid cells".into(),
        ));
    }
    let n = idx.len() as f64;
    let av: Vec<f64> = idx.iter().map(|&i| a.data[i]).collect();
    let bv: Vec<f64> = idx.iter().map(|&i| b.data[i]).collect();
    let ma = pairwise_sum(&av) / n;
    let mb = pairwise_sum(&bv) / n;
    let ssa = pairwise_sum(&av.iter().map(|x| (x - ma) * (x - ma)).collect::<Vec<_>>());
    let ssb = pairwise_sum(&bv.iter().map(|y| (y - mb) * (y - mb)).collect::<Vec<_>>());
    if !(ssa > 0.0 && ssb > 0.0) {
        return Err(Error::DegenerateField);
    }

    let offsets = weights.offsets();
    let neighbours = |i: usize| {
        let (r, c) = ((i / w) as isize, (i % w) as isize);
        offsets.iter().filter_map(move |&(dr, dc)| {
            let (rr, cc) = (r + dr, c + dc);
            (rr >= 0 && cc >= 0 && rr < h as isize && cc < w as isize)
                .then(|| rr as usize * w + cc as usize)
        })
    };
    let degree: Vec<usize> = (0..w * h)
        .map(|i| {
            if valid[i] {
                neighbours(i).filter(|&j| valid[j]).count()
            } else {
                0
            }
        })
        .collect();
    let weight = |i: usize| {
        if row_standardized {
            1.0 / degree[i] as f64
        } else {
            1.0
        }
    };

    let mut s0_terms = Vec::new();
    let mut num_terms = Vec::new();
    for &i in &idx {
        for j in neighbours(i).filter(|&j| valid[j] && j > i) {
            let s = 0.5 * (weight(i) + weight(j));
            let (dai, dbi) = (a.data[i] - ma, b.data[i] - mb);
            let (daj, dbj) = (a.data[j] - ma, b.data[j] - mb);
            // Both orientations of the pair carry weight s.
            s0_terms.push(2.0 * s);
            num_terms.push(s * (dai * dbj + daj * dbi));
        }
    }
    let s0 = pairwise_sum(&s0_terms);
    if s0 <= 0.0 {
        return Err(Error::InvalidArgument(
            "moran: no neighbouring valid cells".into(),
        ));
    }
    Ok(n / s0 * pairwise_sum(&num_terms) / (ssa * ssb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(n: usize) -> Grid {
        Grid::new(
            n,
            n,
            (0..n * n).map(|i| ((i / n + i % n) % 2) as f64).collect(),
        )
        .unwrap()
    }

    #[test]
    fn checkerboard_rook_is_minus_one() {
        let g = checkerboard(8);
        let i = morans_i(&g, &g, Weights::Rook, true).unwrap();
        assert!((i + 1.0).abs() < 1e-12, "{i}");
        let i = morans_i(&g, &g, Weights::Rook, false).unwrap();
        assert!((i + 1.0).abs() < 1e-12, "{i}");
    }

    #[test]
    fn constant_field_is_degenerate() {
        let g = Grid::new(3, 3, vec![2.0; 9]).unwrap();
        assert!(matches!(
            morans_i(&g, &g, Weights::Queen, true),
            Err(Error::DegenerateField)
        ));
    }

    #[test]
    fn smooth_gradient_is_positive() {
        let g = Grid::new(10, 10, (0..100).map(|i| (i % 10) as f64).collect()).unwrap();
        assert!(morans_i(&g, &g, Weights::Queen, true).unwrap() > 0.5);
    }
}
