//! Brute-force reference implementations, written for clarity rather than
//! speed, with plain left-to-right sums.

use wsci_fusion::metrics::{Grid, Weights};
use wsci_fusion::RngStream;

/// Moran's I from a dense n x n weight matrix over all cells.
pub fn moran_brute(a: &Grid, b: &Grid, weights: Weights, row_standardized: bool) -> f64 {
    let (w, h) = (a.width, a.height);
    let cells = w * h;
    let valid: Vec<bool> = (0..cells)
        .map(|i| a.data[i].is_finite() && b.data[i].is_finite())
        .collect();
    let n = valid.iter().filter(|v| **v).count() as f64;
    let mut ma = 0.0;
    let mut mb = 0.0;
    for i in 0..cells {
        if valid[i] {
            ma += a.data[i];
            mb += b.data[i];
        }
    }
    ma /= n;
    mb /= n;
    let adjacent = |i: usize, j: usize| {
        let (ri, ci) = ((i / w) as isize, (i % w) as isize);
        let (rj, cj) = ((j / w) as isize, (j % w) as isize);
        let (dr, dc) = ((ri - rj).abs(), (ci - cj).abs());
        match weights {
            Weights::Rook => dr + dc == 1,
            Weights::Queen => dr.max(dc) == 1,
        }
    };
    let mut raw = vec![vec![0.0; cells]; cells];
    for i in 0..cells {
        for j in 0..cells {
            if valid[i] && valid[j] && adjacent(i, j) {
                raw[i][j] = 1.0;
            }
        }
        let deg: f64 = raw[i].iter().sum();
        if row_standardized && deg > 0.0 {
            for v in raw[i].iter_mut() {
                *v /= deg;
            }
        }
    }
    let mut s0 = 0.0;
    let mut num = 0.0;
    for i in 0..cells {
        for j in 0..cells {
            let s = 0.5 * (raw[i][j] + raw[j][i]);
            if s == 0.0 {
                continue;
            }
            s0 += s;
            num += s * (a.data[i] - ma) * (b.data[j] - mb);
        }
    }
    let mut ssa = 0.0;
    let mut ssb = 0.0;
    for i in 0..cells {
        if valid[i] {
            ssa += (a.data[i] - ma).powi(2);
            ssb += (b.data[i] - mb).powi(2);
        }
    }
    n / s0 * num / (ssa * ssb).sqrt()
}

/// Random grid with roughly `holes` of its cells set to NaN.
pub fn holey_grid(size: usize, holes: f64, rng: &mut RngStream) -> Grid {
    let data = (0..size * size)
        .map(|_| {
            let u = rng.next_uniform();
            if u < holes {
                f64::NAN
            } else {
                rng.next_uniform() * 10.0 - 3.0
            }
        })
        .collect();
    Grid::new(size, size, data).unwrap()
}

/// Per-pixel loop over `pred` (B x 2 x H x W) and `target` (B x 1 x H x W).
pub fn masked_loss_brute(pred: &[f64], target: &[f64], batch: usize, hw: usize) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for b in 0..batch {
        for i in 0..hw {
            let mu = target[b * hw + i];
            if !(mu.is_finite() && mu > 0.0) {
                continue;
            }
            let y = pred[b * 2 * hw + i];
            let s2 = pred[b * 2 * hw + hw + i];
            sum += 0.5 * (2.0 * std::f64::consts::PI * s2).ln() + (y - mu).powi(2) / (2.0 * s2);
            n += 1;
        }
    }
    sum / n as f64
}

/// Welford streaming accumulation of (r2, rmse, bias).
pub fn accuracy_streaming(pred: &[f64], obs: &[f64]) -> (f64, f64, f64) {
    let (mut n, mut mean_o, mut m2_o, mut sum_d, mut sum_d2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (p, o) in pred.iter().zip(obs) {
        n += 1.0;
        let delta = o - mean_o;
        mean_o += delta / n;
        m2_o += delta * (o - mean_o);
        sum_d += p - o;
        sum_d2 += (p - o).powi(2);
    }
    (1.0 - sum_d2 / m2_o, (sum_d2 / n).sqrt(), sum_d / n)
}

/// Standard normal draws by Box-Muller.
pub fn normals(count: usize, rng: &mut RngStream) -> Vec<f64> {
    (0..count)
        .map(|_| {
            let u1 = rng.next_uniform().max(1e-300);
            let u2 = rng.next_uniform();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}
