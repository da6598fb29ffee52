//! Validation protocols: sparse held-out accuracy, calibration and
//! dense-truth site analysis with spatial correlation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    block_id, Chip, Raster, RasterGeometry, Split, SplitConfig, SyntheticWorld, CHIP_PIXELS,
};
use crate::error::{Error, Result};
use crate::inference::{run_tiles, tile_jobs, EnsembleConfig};
use crate::metrics::{
    accuracy, coverage, coverage_by_bin, is_valid_target, morans_i, pearson, total_std, z_scores,
    BinCoverage, EvalReport, Grid, R2Kind, Weights,
};
use crate::network::{ModelState, CHIP_SIZE, INPUT_CHANNELS};
use crate::rng::RngStream;
use crate::tensor::{Mode, Tensor};

/// Strata smaller than this are merged into `OTHER`.
pub const MIN_STRATUM_PIXELS: usize = 100;
pub const OTHER: &str = "other";
pub const MORAN_WEIGHTS: Weights = Weights::Queen;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub chip_id: u64,
    pub category: String,
    pub pred: f64,
    pub obs: f64,
    pub sigma_data: f64,
    pub sigma_model: f64,
    pub sigma_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRun {
    pub checkpoint_hash: String,
    pub rows: Vec<ValidationRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SparseConfig {
    /// Monte Carlo dropout passes per chip.
    pub mc_passes: usize,
    pub seed: u64,
    pub split: SplitConfig,
}

impl Default for SparseConfig {
    fn default() -> Self {
        Self {
            mc_passes: 5,
            seed: 0,
            split: SplitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    pub stratum: String,
    pub n: usize,
    pub r2: Option<f64>,
    pub rmse: f64,
    pub bias: f64,
    pub coverage_1sd: f64,
    pub coverage_2sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseValidation {
    pub report: EvalReport,
    pub strata: Vec<StratumReport>,
    pub run: ValidationRun,
}

/// Accuracy and coverage over a set of rows.
pub fn eval_report(rows: &[ValidationRow]) -> Result<EvalReport> {
    let pred: Vec<f64> = rows.iter().map(|r| r.pred).collect();
    let obs: Vec<f64> = rows.iter().map(|r| r.obs).collect();
    let sig: Vec<f64> = rows.iter().map(|r| r.sigma_total).collect();
    let a = accuracy(&pred, &obs, R2Kind::Determination)?;
    let c = coverage(&z_scores(&pred, &obs, &sig)?, &[1.0, 2.0]);
    Ok(EvalReport {
        r2: a.r2,
        rmse: a.rmse,
        bias: a.bias,
        n: a.n,
        coverage_1sd: c[0],
        coverage_2sd: c[1],
    })
}

/// Per-category reports; categories under `MIN_STRATUM_PIXELS` rows are pooled
/// into `OTHER`.
pub fn stratify(rows: &[ValidationRow]) -> Result<Vec<StratumReport>> {
    let mut groups: BTreeMap<&str, Vec<ValidationRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry(r.category.as_str())
            .or_default()
            .push(r.clone());
    }
    let mut kept: BTreeMap<String, Vec<ValidationRow>> = BTreeMap::new();
    for (k, v) in groups {
        let key = if v.len() < MIN_STRATUM_PIXELS {
            OTHER
        } else {
            k
        };
        kept.entry(key.to_string()).or_default().extend(v);
    }
    kept.into_iter()
        .map(|(stratum, v)| {
            let e = eval_report(&v)?;
            Ok(StratumReport {
                stratum,
                n: e.n,
                r2: e.r2,
                rmse: e.rmse,
                bias: e.bias,
                coverage_1sd: e.coverage_1sd,
                coverage_2sd: e.coverage_2sd,
            })
        })
        .collect()
}

/// Per-pixel ensemble over `passes` dropout draws on one chip:
/// `(mean, sigma_data, sigma_model)` on the cropped output grid.
pub fn predict_chip(
    model: &ModelState<f32>,
    chip: &Chip,
    passes: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if passes < 2 {
        return Err(Error::InvalidArgument(
            "chip ensembles need at least two passes".into(),
        ));
    }
    let x = Tensor::from_vec(
        [1, INPUT_CHANNELS, CHIP_SIZE, CHIP_SIZE],
        chip.input.clone(),
    )?;
    let root = RngStream::new(seed, 0xE7A1_0000).derive(&[chip.id]);
    let mut means = Vec::with_capacity(passes);
    let mut vars = Vec::with_capacity(passes);
    for p in 0..passes {
        let y = model.forward(&x, Mode::Mc, &mut root.derive(&[p as u64]))?;
        means.push(y.plane_slice(0, 0).to_vec());
        vars.push(y.plane_slice(0, 1).to_vec());
    }
    let n = means[0].len();
    let k = passes as f64;
    let mut mean = vec![0.0; n];
    let mut sd = vec![0.0; n];
    let mut sm = vec![0.0; n];
    for i in 0..n {
        let m = means.iter().map(|v| v[i] as f64).sum::<f64>() / k;
        let ss = means.iter().map(|v| (v[i] as f64 - m).powi(2)).sum::<f64>();
        mean[i] = m;
        sd[i] = (vars.iter().map(|v| v[i] as f64).sum::<f64>() / k).sqrt();
        sm[i] = (ss / (k - 1.0)).sqrt();
    }
    Ok((mean, sd, sm))
}

/// Ensemble-predicts each test chip and compares at its valid target pixels.
/// Training-split chips are refused.
pub fn validate_sparse(
    model: &ModelState<f32>,
    checkpoint_hash: &str,
    chips: &[&Chip],
    cfg: &SparseConfig,
    category: impl Fn(&Chip) -> String + Sync,
) -> Result<SparseValidation> {
    if let Some(c) = chips.iter().find(|c| cfg.split.split(c) != Split::Test) {
        return Err(Error::InvalidArgument(format!(
            "chip {} belongs to the training split",
            c.id
        )));
    }
    let m = model.spec().border_margin;
    let out = model.spec().output_size();
    let per_chip: Vec<Result<Vec<ValidationRow>>> = chips
        .par_iter()
        .map(|chip| {
            debug_assert_eq!(chip.target.len(), CHIP_PIXELS);
            let (mean, sd, sm) = predict_chip(model, chip, cfg.mc_passes, cfg.seed)?;
            let cat = category(chip);
            let mut rows = Vec::new();
            for r in 0..out {
                for c in 0..out {
                    let obs = chip.target[(r + m) * CHIP_SIZE + c + m] as f64;
                    let i = r * out + c;
                    if !is_valid_target(obs) {
                        continue;
                    }
                    rows.push(ValidationRow {
                        chip_id: chip.id,
                        category: cat.clone(),
                        pred: mean[i],
                        obs,
                        sigma_data: sd[i],
                        sigma_model: sm[i],
                        sigma_total: total_std(sd[i], sm[i]),
                    });
                }
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_chip {
        rows.extend(r?);
    }
    if rows.is_empty() {
        return Err(Error::NoValidPixels);
    }
    Ok(SparseValidation {
        report: eval_report(&rows)?,
        strata: stratify(&rows)?,
        run: ValidationRun {
            checkpoint_hash: checkpoint_hash.to_string(),
            rows,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub n: usize,
    pub coverage_1sd: f64,
    pub coverage_2sd: f64,
    /// Pearson r between `|pred - obs|` and `sigma_total`.
    pub residual_sigma_r: Option<f64>,
    pub bins: Vec<BinCoverage>,
}

pub fn calibration_report(run: &ValidationRun, edges: &[f64]) -> Result<CalibrationReport> {
    let pred: Vec<f64> = run.rows.iter().map(|r| r.pred).collect();
    let obs: Vec<f64> = run.rows.iter().map(|r| r.obs).collect();
    let sig: Vec<f64> = run.rows.iter().map(|r| r.sigma_total).collect();
    let z = z_scores(&pred, &obs, &sig)?;
    let c = coverage(&z, &[1.0, 2.0]);
    let resid: Vec<f64> = pred.iter().zip(&obs).map(|(p, o)| (p - o).abs()).collect();
    Ok(CalibrationReport {
        n: run.rows.len(),
        coverage_1sd: c[0],
        coverage_2sd: c[1],
        residual_sigma_r: pearson(&resid, &sig),
        bins: coverage_by_bin(&z, &obs, edges)?,
    })
}

/// A rectangular validation site in raster cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub id: String,
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Square sites of `size` cells tiling the raster; partial sites at the
/// right and bottom edges are dropped.
pub fn grid_sites(geometry: &RasterGeometry, size: usize) -> Vec<Site> {
    let mut sites = Vec::new();
    if size == 0 {
        return sites;
    }
    for row0 in (0..geometry.height / size).map(|i| i * size) {
        for col0 in (0..geometry.width / size).map(|i| i * size) {
            sites.push(Site {
                id: format!("r{row0}c{col0}"),
                row0,
                col0,
                rows: size,
                cols: size,
            });
        }
    }
    sites
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteReport {
    pub site: String,
    pub n: usize,
    pub r2: Option<f64>,
    pub rmse: f64,
    pub bias: f64,
    /// Cross Moran's I between prediction and truth.
    pub cross_moran: Option<f64>,
    /// Moran's I of the residuals.
    pub residual_moran: Option<f64>,
    pub truth_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelAccuracy {
    pub n: usize,
    pub r2: Option<f64>,
    pub rmse: f64,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseValidation {
    /// Neighbourhood used for Moran's I.
    pub weights: Weights,
    pub overall: PixelAccuracy,
    /// Pixels that carried a sparse observation.
    pub observed: Option<PixelAccuracy>,
    /// Pixels that never did.
    pub unobserved: Option<PixelAccuracy>,
    pub sites: Vec<SiteReport>,
}

fn pixel_accuracy(pred: &[f64], obs: &[f64]) -> Result<PixelAccuracy> {
    let a = accuracy(pred, obs, R2Kind::Determination)?;
    Ok(PixelAccuracy {
        n: a.n,
        r2: a.r2,
        rmse: a.rmse,
        bias: a.bias,
    })
}

fn moran_or_none(a: &Grid, b: &Grid) -> Result<Option<f64>> {
    match morans_i(a, b, MORAN_WEIGHTS, true) {
        Ok(v) => Ok(Some(v)),
        Err(Error::DegenerateField | Error::InvalidArgument(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Pixel mask of one split, assigning each cell by the block of its centre.
pub fn split_mask(
    geometry: &RasterGeometry,
    block_size_deg: f64,
    split: &SplitConfig,
    which: Split,
) -> Vec<bool> {
    let mut mask = vec![false; geometry.cells()];
    for r in 0..geometry.height {
        for c in 0..geometry.width {
            let (lon, lat) = geometry.center_of(r, c);
            let b = block_id(lon, lat, block_size_deg);
            mask[r * geometry.width + c] =
                crate::data::split_of(b, split.seed, split.test_fraction) == which;
        }
    }
    mask
}

/// Compares the mean band of a mosaic against dense truth. `target` marks
/// observed pixels; `mask`, when given, restricts the overall and
/// observed/unobserved summaries (sites always use every pixel they contain).
pub fn dense_reports(
    mean: &Raster,
    truth: &Raster,
    target: &Raster,
    sites: &[Site],
    mask: Option<&[bool]>,
) -> Result<DenseValidation> {
    let g = mean.geometry;
    if truth.geometry != g || target.geometry != g {
        return Err(Error::InvalidArgument(
            "mosaic, truth and target are not aligned".into(),
        ));
    }
    let (p, t, o) = (mean.band(0), truth.band(0), target.band(0));
    let mut all = (Vec::new(), Vec::new());
    let mut seen = (Vec::new(), Vec::new());
    let mut unseen = (Vec::new(), Vec::new());
    for i in 0..g.cells() {
        if !(p[i].is_finite() && t[i].is_finite()) || mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let (pv, tv) = (p[i] as f64, t[i] as f64);
        all.0.push(pv);
        all.1.push(tv);
        let bucket = if is_valid_target(o[i] as f64) {
            &mut seen
        } else {
            &mut unseen
        };
        bucket.0.push(pv);
        bucket.1.push(tv);
    }
    if all.0.is_empty() {
        return Err(Error::InvalidArgument(
            "no pixels with both prediction and truth".into(),
        ));
    }
    let optional = |v: &(Vec<f64>, Vec<f64>)| {
        if v.0.is_empty() {
            Ok(None)
        } else {
            pixel_accuracy(&v.0, &v.1).map(Some)
        }
    };
    let mut reports = Vec::with_capacity(sites.len());
    for s in sites {
        if s.row0 + s.rows > g.height || s.col0 + s.cols > g.width {
            return Err(Error::InvalidArgument(format!(
                "site {} extends beyond the raster",
                s.id
            )));
        }
        let (mut pg, mut tg, mut rg) = (Vec::new(), Vec::new(), Vec::new());
        let (mut pv, mut tv) = (Vec::new(), Vec::new());
        for r in s.row0..s.row0 + s.rows {
            for c in s.col0..s.col0 + s.cols {
                let i = r * g.width + c;
                let ok = p[i].is_finite() && t[i].is_finite();
                let (a, b) = if ok {
                    (p[i] as f64, t[i] as f64)
                } else {
                    (f64::NAN, f64::NAN)
                };
                pg.push(a);
                tg.push(b);
                rg.push(a - b);
                if ok {
                    pv.push(a);
                    tv.push(b);
                }
            }
        }
        if pv.len() < 2 {
            continue;
        }
        let acc = pixel_accuracy(&pv, &tv)?;
        let mt = tv.iter().sum::<f64>() / tv.len() as f64;
        let truth_std = (tv.iter().map(|v| (v - mt).powi(2)).sum::<f64>() / tv.len() as f64).sqrt();
        let (pg, tg, rg) = (
            Grid::new(s.cols, s.rows, pg)?,
            Grid::new(s.cols, s.rows, tg)?,
            Grid::new(s.cols, s.rows, rg)?,
        );
        reports.push(SiteReport {
            site: s.id.clone(),
            n: acc.n,
            r2: acc.r2,
            rmse: acc.rmse,
            bias: acc.bias,
            cross_moran: moran_or_none(&pg, &tg)?,
            residual_moran: moran_or_none(&rg, &rg)?,
            truth_std,
        });
    }
    Ok(DenseValidation {
        weights: MORAN_WEIGHTS,
        overall: pixel_accuracy(&all.0, &all.1)?,
        observed: optional(&seen)?,
        unobserved: optional(&unseen)?,
        sites: reports,
    })
}

/// Generates `world`, mosaics it with the ensemble and compares against its
/// dense truth. Returns the report and the mosaic.
#[allow(clippy::too_many_arguments)]
pub fn validate_dense(
    model: &ModelState<f32>,
    world: &SyntheticWorld,
    quarter: i32,
    ensemble: &EnsembleConfig,
    tile_size: usize,
    workers: usize,
    sites: &[Site],
    mask: Option<&[bool]>,
) -> Result<(DenseValidation, Raster)> {
    let w = world.generate(quarter)?;
    let jobs = tile_jobs(&w.inputs.geometry, tile_size);
    let (mosaic, _) = run_tiles(model, &w.inputs, &jobs, ensemble, workers)?;
    let report = dense_reports(&mosaic, &w.truth, &w.target, sites, mask)?;
    Ok((report, mosaic))
}
