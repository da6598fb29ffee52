//! Seeded synthetic world: a latent structural-complexity field with dense
//! ground truth, pseudo-SAR layers derived from it, and sparse footprints
//! sampled from the truth.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::chips::{LAYER_NAMES, SAR_LAYERS};
use crate::data::footprint::FootprintRecord;
use crate::data::raster::{Raster, RasterGeometry, PIXEL_SIZE_DEG};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Lower and upper end of the truth range.
pub const TRUTH_RANGE: (f64, f64) = (6.0, 12.0);

/// Area of one 25 m cell in km^2.
const CELL_AREA_KM2: f64 = 0.025 * 0.025;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticWorld {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Upper-left corner in degrees.
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub pixel_size: f64,
    /// Footprints per km^2 per quarter; 80 samples 5% of the cells.
    pub density_per_km2: f64,
    /// Lattice spacing of the coarsest noise octave, in pixels.
    pub feature_scale: f64,
    /// Weight of the terrain field in the latent field.
    pub dem_coupling: f64,
    /// Additive white noise std of the HH, HV, VV and VH layers.
    pub noise: [f64; 4],
    /// Amplitude of additive smooth noise on the same layers. Unlike white
    /// noise it cannot be averaged away over neighbouring pixels.
    pub texture: [f64; 4],
    /// Lattice spacing of the smooth noise, in pixels.
    pub texture_scale: f64,
    /// Only the HH layer responds to the latent field.
    pub hh_only: bool,
}

impl Default for SyntheticWorld {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 512,
            height: 512,
            origin_lon: 10.0,
            origin_lat: 50.0,
            pixel_size: PIXEL_SIZE_DEG,
            density_per_km2: 80.0,
            feature_scale: 48.0,
            dem_coupling: 0.35,
            noise: [0.05, 0.06, 0.08, 0.12],
            texture: [0.3, 0.36, 0.48, 0.72],
            texture_scale: 6.0,
            hh_only: false,
        }
    }
}

/// Everything one quarter of the world produces.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    /// The seven SAR-like layers.
    pub inputs: Raster,
    /// Dense latent field.
    pub truth: Raster,
    /// Truth where a footprint landed, NaN elsewhere.
    pub target: Raster,
    pub footprints: Vec<FootprintRecord>,
}

impl SyntheticWorld {
    pub fn geometry(&self) -> Result<RasterGeometry> {
        RasterGeometry::new(
            self.width,
            self.height,
            self.origin_lon,
            self.origin_lat,
            self.pixel_size,
        )
    }

    /// Probability that a cell is observed in one quarter.
    pub fn sample_fraction(&self) -> f64 {
        (self.density_per_km2 * CELL_AREA_KM2).clamp(0.0, 1.0)
    }

    fn validate(&self) -> Result<()> {
        let negative = self.noise.iter().chain(&self.texture).any(|s| !(*s >= 0.0));
        if !(self.feature_scale >= 2.0)
            || !(self.texture_scale >= 1.0)
            || !(self.density_per_km2 >= 0.0)
            || negative
        {
            return Err(Error::InvalidArgument(
                "synthetic world: scale >= 2, texture scale >= 1, density and noise >= 0 required"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Latent field before rescaling plus the terrain field, both quarter independent.
    fn latent(&self) -> (Vec<f64>, Vec<f64>) {
        let root = RngStream::new(self.seed, 0x5EED_F1E1D);
        let mut latent = vec![0.0; self.width * self.height];
        let mut amp = 1.0;
        let mut scale = self.feature_scale;
        for octave in 0..3u64 {
            let field = value_noise(self.width, self.height, scale, &root.derive(&[1, octave]));
            for (l, f) in latent.iter_mut().zip(field) {
                *l += amp * f;
            }
            amp *= 0.5;
            scale *= 0.5;
        }
        let dem = value_noise(
            self.width,
            self.height,
            self.feature_scale * 2.0,
            &root.derive(&[2]),
        );
        for (l, d) in latent.iter_mut().zip(&dem) {
            *l += self.dem_coupling * d;
        }
        let (lo, hi) = latent
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        let span = (hi - lo).max(1e-12);
        let (t0, t1) = TRUTH_RANGE;
        for l in latent.iter_mut() {
            *l = t0 + (t1 - t0) * (*l - lo) / span;
        }
        (latent, dem)
    }

    pub fn generate(&self, quarter: i32) -> Result<SynthOutput> {
        self.validate()?;
        let geometry = self.geometry()?;
        let n = geometry.cells();
        let (latent, dem) = self.latent();
        let root = RngStream::new(self.seed, 0x5EED_F1E1D);
        let q = quarter as u32 as u64;

        let noise = |layer: u64, sd: f64| -> Vec<f64> {
            let mut g = root.derive(&[3, layer, q]).generator(0);
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut g);
                    sd * z
                })
                .collect::<Vec<f64>>()
        };
        let response = |layer: usize, l: f64| -> f64 {
            let x = l - TRUTH_RANGE.0;
            match layer {
                0 => (x / 3.0).tanh(),
                1 => 0.8 * (x / 4.0).tanh(),
                2 => 0.5 * (1.0 - (-x / 2.0).exp()),
                _ => 0.6 * (1.0 - (-x / 1.5).exp()),
            }
        };
        let mut bands: Vec<(String, Vec<f32>)> = Vec::with_capacity(SAR_LAYERS);
        for layer in 0..4 {
            let eps = noise(layer as u64, self.noise[layer]);
            let texture = value_noise(
                self.width,
                self.height,
                self.texture_scale,
                &root.derive(&[7, layer as u64, q]),
            );
            let carries_signal = layer == 0 || !self.hh_only;
            let values = latent
                .iter()
                .zip(&eps)
                .zip(&texture)
                .map(|((&l, &e), &t)| {
                    let s = if carries_signal {
                        response(layer, l)
                    } else {
                        0.5 * response(layer, TRUTH_RANGE.0 + 3.0)
                    };
                    (s + e + self.texture[layer] * t) as f32
                })
                .collect();
            bands.push((LAYER_NAMES[layer].into(), values));
        }
        // L-band incidence is an annual mosaic; C-band changes every quarter.
        let inc_palsar = value_noise(
            self.width,
            self.height,
            self.feature_scale * 4.0,
            &root.derive(&[4]),
        );
        bands.push((
            LAYER_NAMES[4].into(),
            inc_palsar.iter().map(|v| (34.0 + 6.0 * v) as f32).collect(),
        ));
        let inc_s1 = value_noise(
            self.width,
            self.height,
            self.feature_scale * 4.0,
            &root.derive(&[5, q]),
        );
        bands.push((
            LAYER_NAMES[5].into(),
            inc_s1.iter().map(|v| (38.0 + 4.0 * v) as f32).collect(),
        ));
        bands.push((
            LAYER_NAMES[6].into(),
            dem.iter().map(|v| (400.0 + 300.0 * v) as f32).collect(),
        ));
        let inputs = Raster::from_bands(geometry, bands)?;

        let truth_values: Vec<f32> = latent.iter().map(|&v| v as f32).collect();
        let rho = self.sample_fraction();
        let mask = root.derive(&[6, q]);
        let mut target = vec![f32::NAN; n];
        let mut footprints = Vec::new();
        for (i, t) in target.iter_mut().enumerate() {
            if mask.uniform_at(i as u64) < rho {
                *t = truth_values[i];
                let (lon, lat) = geometry.center_of(i / self.width, i % self.width);
                footprints.push(FootprintRecord {
                    lon,
                    lat,
                    quarter,
                    wsci: truth_values[i] as f64,
                    valid: true,
                });
            }
        }
        Ok(SynthOutput {
            inputs,
            truth: Raster::from_bands(geometry, vec![("wsci".into(), truth_values)])?,
            target: Raster::from_bands(geometry, vec![("wsci".into(), target)])?,
            footprints,
        })
    }
}

/// Smooth noise in `[-1, 1]`: uniform values on a lattice of the given
/// spacing, blended with a quintic fade.
pub fn value_noise(width: usize, height: usize, spacing: f64, rng: &RngStream) -> Vec<f64> {
    let gw = (width as f64 / spacing).ceil() as usize + 2;
    let gh = (height as f64 / spacing).ceil() as usize + 2;
    let mut lattice = vec![0.0; gw * gh];
    let mut r = rng.clone();
    r.fill_uniform(&mut lattice);
    lattice.iter_mut().for_each(|v| *v = 2.0 * *v - 1.0);
    let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
    let mut out = Vec::with_capacity(width * height);
    for row in 0..height {
        let y = (row as f64 + 0.5) / spacing;
        let (y0, ty) = (y.floor() as usize, fade(y.fract()));
        for col in 0..width {
            let x = (col as f64 + 0.5) / spacing;
            let (x0, tx) = (x.floor() as usize, fade(x.fract()));
            let v = |gy: usize, gx: usize| lattice[gy * gw + gx];
            let top = v(y0, x0) * (1.0 - tx) + v(y0, x0 + 1) * tx;
            let bottom = v(y0 + 1, x0) * (1.0 - tx) + v(y0 + 1, x0 + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}
